//! Desk-scale GAN inpainting: a dilated generative ResNet trained against a
//! two-headed patch/global discriminator, on a small self-contained
//! reverse-mode autodiff engine.

pub mod blocks;
pub mod init;
pub mod networks;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tensor;
