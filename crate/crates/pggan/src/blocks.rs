//! Layer blocks the networks are assembled from: residual variants (with
//! the dilated conv first, second, or absent), strided downsampling, and the
//! two upsampling flavours (resize-then-conv vs transposed conv), plus the
//! receptive-field recurrence.

use crate::init;
use crate::params::{Exec, ParamError, ParamStore, RoutingGroup};
use crate::scalar::Scalar;
use crate::tensor::{Activation, ResizeMode, Shape, TensorError, TensorId};
use rand_chacha::ChaCha8Rng;

#[derive(thiserror::Error, Debug)]
pub enum BlockError {
    #[error("residual type-a contains only standard convolutions; dilation {0} is invalid")]
    TypeADilated(usize),
    #[error("{what} must be >= {min}, got {got}")]
    BadParameter {
        what: &'static str,
        min: usize,
        got: usize,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// One primitive layer inside a block.
#[derive(Clone, Debug)]
pub enum LayerSpec {
    Conv {
        name: String,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
    },
    TConv {
        name: String,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Resize {
        mode: ResizeMode,
        scale: usize,
    },
    Norm {
        name: String,
        channels: usize,
    },
    Act(Activation),
    Dense {
        name: String,
        in_features: usize,
        out_features: usize,
    },
}

impl LayerSpec {
    /// Create and initialize this layer's parameters.
    pub fn declare_params<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        group: RoutingGroup,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), ParamError> {
        match self {
            LayerSpec::Conv {
                name,
                in_ch,
                out_ch,
                kernel,
                ..
            } => {
                let fan_in = in_ch * kernel * kernel;
                store.insert(
                    format!("{name}.weight"),
                    group,
                    init::fan_in_uniform(Shape::new(*out_ch, *in_ch, *kernel, *kernel), fan_in, rng),
                )?;
                store.insert(
                    format!("{name}.bias"),
                    group,
                    init::zeros(Shape::new(1, *out_ch, 1, 1)),
                )?;
            }
            LayerSpec::TConv {
                name,
                in_ch,
                out_ch,
                kernel,
                ..
            } => {
                let fan_in = in_ch * kernel * kernel;
                store.insert(
                    format!("{name}.weight"),
                    group,
                    init::fan_in_uniform(Shape::new(*in_ch, *out_ch, *kernel, *kernel), fan_in, rng),
                )?;
                store.insert(
                    format!("{name}.bias"),
                    group,
                    init::zeros(Shape::new(1, *out_ch, 1, 1)),
                )?;
            }
            LayerSpec::Norm { name, channels } => {
                store.insert(format!("{name}.gain"), group, init::ones(Shape::new(1, *channels, 1, 1)))?;
                store.insert(
                    format!("{name}.shift"),
                    group,
                    init::zeros(Shape::new(1, *channels, 1, 1)),
                )?;
            }
            LayerSpec::Dense {
                name,
                in_features,
                out_features,
            } => {
                store.insert(
                    format!("{name}.weight"),
                    group,
                    init::fan_in_uniform(
                        Shape::new(*out_features, *in_features, 1, 1),
                        *in_features,
                        rng,
                    ),
                )?;
                store.insert(
                    format!("{name}.bias"),
                    group,
                    init::zeros(Shape::new(1, *out_features, 1, 1)),
                )?;
            }
            LayerSpec::Resize { .. } | LayerSpec::Act(_) => {}
        }
        Ok(())
    }

    pub fn forward<S: Scalar>(
        &self,
        exec: &mut Exec<'_, S>,
        input: TensorId,
    ) -> Result<TensorId, BlockError> {
        Ok(match self {
            LayerSpec::Conv {
                name,
                stride,
                padding,
                dilation,
                ..
            } => {
                let w = exec.param(&format!("{name}.weight"))?;
                let b = exec.param(&format!("{name}.bias"))?;
                exec.tape.conv2d(input, w, Some(b), *stride, *padding, *dilation)?
            }
            LayerSpec::TConv {
                name,
                stride,
                padding,
                ..
            } => {
                let w = exec.param(&format!("{name}.weight"))?;
                let b = exec.param(&format!("{name}.bias"))?;
                exec.tape.transposed_conv2d(input, w, Some(b), *stride, *padding)?
            }
            LayerSpec::Resize { mode, scale } => exec.tape.resize(input, *scale, *mode)?,
            LayerSpec::Norm { name, .. } => {
                let g = exec.param(&format!("{name}.gain"))?;
                let s = exec.param(&format!("{name}.shift"))?;
                exec.tape.instance_norm(input, g, s, NORM_EPS)?
            }
            LayerSpec::Act(kind) => exec.tape.pointwise(input, *kind),
            LayerSpec::Dense { name, .. } => {
                let w = exec.param(&format!("{name}.weight"))?;
                let b = exec.param(&format!("{name}.bias"))?;
                exec.tape.dense(input, w, b)?
            }
        })
    }

    /// Number of learnable scalars.
    pub fn param_count(&self) -> usize {
        match self {
            LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                ..
            }
            | LayerSpec::TConv {
                in_ch,
                out_ch,
                kernel,
                ..
            } => out_ch * in_ch * kernel * kernel + out_ch,
            LayerSpec::Norm { channels, .. } => 2 * channels,
            LayerSpec::Dense {
                in_features,
                out_features,
                ..
            } => out_features * in_features + out_features,
            _ => 0,
        }
    }

    /// (kernel, stride, dilation) if this layer is a convolution.
    pub fn conv_descriptor(&self) -> Option<(usize, usize, usize)> {
        match self {
            LayerSpec::Conv {
                kernel,
                stride,
                dilation,
                ..
            } => Some((*kernel, *stride, *dilation)),
            _ => None,
        }
    }
}

pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BlockKind {
    ResidualA,
    ResidualB,
    ResidualC,
    Downsample,
    UpsampleIConv,
    UpsampleTConv,
}

impl BlockKind {
    pub fn label(&self) -> &'static str {
        match self {
            BlockKind::ResidualA => "residual_a",
            BlockKind::ResidualB => "residual_b",
            BlockKind::ResidualC => "residual_c",
            BlockKind::Downsample => "downsample",
            BlockKind::UpsampleIConv => "upsample_iconv",
            BlockKind::UpsampleTConv => "upsample_tconv",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ResidualKind {
    A,
    B,
    C,
}

/// A block: an ordered layer list, plus skip-add and post-activation for the
/// residual kinds.
#[derive(Clone, Debug)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub channels_in: usize,
    pub channels_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub layers: Vec<LayerSpec>,
    pub post_activation: Option<Activation>,
}

impl BlockSpec {
    pub fn declare_params<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        group: RoutingGroup,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), ParamError> {
        for layer in &self.layers {
            layer.declare_params(store, group, rng)?;
        }
        Ok(())
    }

    pub fn forward<S: Scalar>(
        &self,
        exec: &mut Exec<'_, S>,
        input: TensorId,
    ) -> Result<TensorId, BlockError> {
        let mut h = input;
        for layer in &self.layers {
            h = layer.forward(exec, h)?;
        }
        let residual = matches!(
            self.kind,
            BlockKind::ResidualA | BlockKind::ResidualB | BlockKind::ResidualC
        );
        if residual {
            h = exec.tape.add(h, input)?;
        }
        if let Some(act) = self.post_activation {
            h = exec.tape.pointwise(h, act);
        }
        Ok(h)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn conv_descriptors(&self) -> Vec<(usize, usize, usize)> {
        self.layers.iter().filter_map(|l| l.conv_descriptor()).collect()
    }
}

/// Residual block: branch `conv -> norm -> act -> conv -> norm`, skip added,
/// then the activation. Type `b` dilates the first conv, type `c` the second;
/// padding keeps spatial dims unchanged.
pub fn build_residual_block(
    kind: ResidualKind,
    channels: usize,
    dilation: usize,
    name: &str,
) -> Result<BlockSpec, BlockError> {
    if dilation < 1 {
        return Err(BlockError::BadParameter {
            what: "dilation",
            min: 1,
            got: dilation,
        });
    }
    if kind == ResidualKind::A && dilation > 1 {
        return Err(BlockError::TypeADilated(dilation));
    }
    let k = 3usize;
    let (d1, d2) = match kind {
        ResidualKind::A => (1, 1),
        ResidualKind::B => (dilation, 1),
        ResidualKind::C => (1, dilation),
    };
    // zero padding solved from the shape formula: p = d(k-1)/2 keeps H,W
    let pad = |d: usize| d * (k - 1) / 2;
    let layers = vec![
        LayerSpec::Conv {
            name: format!("{name}/conv1"),
            in_ch: channels,
            out_ch: channels,
            kernel: k,
            stride: 1,
            padding: pad(d1),
            dilation: d1,
        },
        LayerSpec::Norm {
            name: format!("{name}/norm1"),
            channels,
        },
        LayerSpec::Act(Activation::Relu),
        LayerSpec::Conv {
            name: format!("{name}/conv2"),
            in_ch: channels,
            out_ch: channels,
            kernel: k,
            stride: 1,
            padding: pad(d2),
            dilation: d2,
        },
        LayerSpec::Norm {
            name: format!("{name}/norm2"),
            channels,
        },
    ];
    Ok(BlockSpec {
        kind: match kind {
            ResidualKind::A => BlockKind::ResidualA,
            ResidualKind::B => BlockKind::ResidualB,
            ResidualKind::C => BlockKind::ResidualC,
        },
        channels_in: channels,
        channels_out: channels,
        kernel: k,
        stride: 1,
        dilation,
        layers,
        post_activation: Some(Activation::Relu),
    })
}

/// Strided conv + norm + activation. `kernel` is 3 inside the stack and 7
/// for the entry conv (stride 1).
pub fn build_downsample(
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    act: Activation,
    with_norm: bool,
    name: &str,
) -> BlockSpec {
    let mut layers = vec![LayerSpec::Conv {
        name: format!("{name}/conv"),
        in_ch,
        out_ch,
        kernel,
        stride,
        padding: (kernel - 1) / 2,
        dilation: 1,
    }];
    if with_norm {
        layers.push(LayerSpec::Norm {
            name: format!("{name}/norm"),
            channels: out_ch,
        });
    }
    layers.push(LayerSpec::Act(act));
    BlockSpec {
        kind: BlockKind::Downsample,
        channels_in: in_ch,
        channels_out: out_ch,
        kernel,
        stride,
        dilation: 1,
        layers,
        post_activation: None,
    }
}

/// Interpolated convolution: nearest-neighbour resize then a 3x3 conv.
pub fn build_upsample_iconv(in_ch: usize, out_ch: usize, name: &str) -> BlockSpec {
    let layers = vec![
        LayerSpec::Resize {
            mode: ResizeMode::Nearest,
            scale: 2,
        },
        LayerSpec::Conv {
            name: format!("{name}/conv"),
            in_ch,
            out_ch,
            kernel: 3,
            stride: 1,
            padding: 1,
            dilation: 1,
        },
        LayerSpec::Norm {
            name: format!("{name}/norm"),
            channels: out_ch,
        },
        LayerSpec::Act(Activation::Relu),
    ];
    BlockSpec {
        kind: BlockKind::UpsampleIConv,
        channels_in: in_ch,
        channels_out: out_ch,
        kernel: 3,
        stride: 2,
        dilation: 1,
        layers,
        post_activation: None,
    }
}

/// Transposed-convolution upsampling. Kernel 4 doubles the extent exactly;
/// kernel 3 produces the uneven window overlaps behind checkerboard
/// artifacts and is kept for the upsampling comparison.
pub fn build_upsample_tconv(in_ch: usize, out_ch: usize, kernel: usize, name: &str) -> BlockSpec {
    let padding = if kernel % 2 == 0 { (kernel - 2) / 2 } else { 0 };
    let layers = vec![
        LayerSpec::TConv {
            name: format!("{name}/tconv"),
            in_ch,
            out_ch,
            kernel,
            stride: 2,
            padding,
        },
        LayerSpec::Norm {
            name: format!("{name}/norm"),
            channels: out_ch,
        },
        LayerSpec::Act(Activation::Relu),
    ];
    BlockSpec {
        kind: BlockKind::UpsampleTConv,
        channels_in: in_ch,
        channels_out: out_ch,
        kernel,
        stride: 2,
        dilation: 1,
        layers,
        post_activation: None,
    }
}

/// Dilation grows by a factor of two per residual block, starting from one.
pub fn dilation_schedule(num_residual_blocks: usize) -> Vec<usize> {
    (0..num_residual_blocks).map(|i| 1usize << i).collect()
}

#[derive(Clone, Copy, Debug)]
pub struct RfStep {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub rf: usize,
    pub jump: usize,
}

/// Running receptive field per layer and the final extent in input pixels.
#[derive(Clone, Debug)]
pub struct ReceptiveFieldTrace {
    pub steps: Vec<RfStep>,
}

impl ReceptiveFieldTrace {
    pub fn final_rf(&self) -> usize {
        self.steps.last().map(|s| s.rf).unwrap_or(1)
    }
}

/// rf_k = rf_{k-1} + (effective_kernel - 1) * jump_{k-1}, jump_k = jump * stride,
/// effective_kernel = d*(k-1) + 1.
pub fn receptive_field(layers: &[(usize, usize, usize)]) -> ReceptiveFieldTrace {
    let mut rf = 1usize;
    let mut jump = 1usize;
    let mut steps = Vec::with_capacity(layers.len());
    for &(kernel, stride, dilation) in layers {
        let effective = dilation * (kernel - 1) + 1;
        rf += (effective - 1) * jump;
        jump *= stride;
        steps.push(RfStep {
            kernel,
            stride,
            dilation,
            rf,
            jump,
        });
    }
    ReceptiveFieldTrace { steps }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type_a_has_two_standard_convs() {
        let block = build_residual_block(ResidualKind::A, 8, 1, "generator/res0").unwrap();
        let convs = block.conv_descriptors();
        assert_eq!(convs, vec![(3, 1, 1), (3, 1, 1)]);
    }

    #[test]
    fn type_a_rejects_dilation() {
        let err = build_residual_block(ResidualKind::A, 8, 2, "generator/res0").unwrap_err();
        assert!(matches!(err, BlockError::TypeADilated(2)));
    }

    #[test]
    fn type_b_dilates_first_conv_type_c_second() {
        let b = build_residual_block(ResidualKind::B, 8, 4, "generator/res0").unwrap();
        assert_eq!(b.conv_descriptors(), vec![(3, 1, 4), (3, 1, 1)]);
        let c = build_residual_block(ResidualKind::C, 8, 4, "generator/res0").unwrap();
        assert_eq!(c.conv_descriptors(), vec![(3, 1, 1), (3, 1, 4)]);
        // padding of the dilated conv solved from d(k-1)/2
        match &b.layers[0] {
            LayerSpec::Conv { padding, .. } => assert_eq!(*padding, 4),
            other => panic!("unexpected first layer {other:?}"),
        }
    }

    #[test]
    fn dilation_schedule_doubles_from_one() {
        assert_eq!(dilation_schedule(4), vec![1, 2, 4, 8]);
        assert_eq!(dilation_schedule(1), vec![1]);
        assert_eq!(dilation_schedule(6), vec![1, 2, 4, 8, 16, 32]);
    }

    #[test]
    fn receptive_field_recurrence() {
        assert_eq!(receptive_field(&[(3, 1, 1)]).final_rf(), 3);
        assert_eq!(receptive_field(&[(3, 1, 1), (3, 1, 1)]).final_rf(), 5);
        assert_eq!(receptive_field(&[(3, 1, 2)]).final_rf(), 5);
        assert_eq!(receptive_field(&[(3, 1, 8)]).final_rf(), 17);
        // stacking behind stride: [3x3 s2] then [3x3 s1 d2]
        let trace = receptive_field(&[(3, 2, 1), (3, 1, 2)]);
        assert_eq!(trace.final_rf(), 11);
        assert_eq!(trace.steps[0].jump, 2);
    }

    #[test]
    fn dilated_stack_beats_plain_stack() {
        let sched = dilation_schedule(4);
        let dilated: Vec<(usize, usize, usize)> = sched
            .iter()
            .flat_map(|&d| [(3, 1, d), (3, 1, 1)])
            .collect();
        let plain: Vec<(usize, usize, usize)> = (0..4).flat_map(|_| [(3, 1, 1), (3, 1, 1)]).collect();
        assert!(
            receptive_field(&dilated).final_rf() > receptive_field(&plain).final_rf(),
            "dilated {} vs plain {}",
            receptive_field(&dilated).final_rf(),
            receptive_field(&plain).final_rf()
        );
    }
}
