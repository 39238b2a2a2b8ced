//! Network assembly: the generative ResNet (plain or dilated) and the three
//! discriminator topologies — a whole-image critic, a patch critic ending in
//! fully connected layers, and the two-headed combination that shares its
//! first trunk layers between both.

use crate::blocks::{
    build_downsample, build_residual_block, build_upsample_iconv, build_upsample_tconv,
    dilation_schedule, receptive_field, BlockError, BlockSpec, LayerSpec, ReceptiveFieldTrace,
    ResidualKind,
};
use crate::init;
use crate::params::{Exec, ParamError, ParamStore, RoutingGroup};
use crate::scalar::Scalar;
use crate::tensor::{Activation, Tape, TensorData, TensorId};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

#[derive(thiserror::Error, Debug)]
pub enum NetError {
    #[error("input contract violated at block {index}: {message}")]
    Contract { index: usize, message: String },
    #[error("block {index} ({label}) failed: {source}")]
    Block {
        index: usize,
        label: String,
        #[source]
        source: BlockError,
    },
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("network config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum GeneratorVariant {
    Res,
    Dres,
}

impl GeneratorVariant {
    pub fn label(&self) -> &'static str {
        match self {
            GeneratorVariant::Res => "res",
            GeneratorVariant::Dres => "dres",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "res" => Some(GeneratorVariant::Res),
            "dres" => Some(GeneratorVariant::Dres),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum UpsampleMode {
    IConv,
    TConv,
}

impl UpsampleMode {
    pub fn label(&self) -> &'static str {
        match self {
            UpsampleMode::IConv => "iconv",
            UpsampleMode::TConv => "tconv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "iconv" => Some(UpsampleMode::IConv),
            "tconv" => Some(UpsampleMode::TConv),
            _ => None,
        }
    }
}

/// Completion network: entry conv, strided encoder, residual stack, mirrored
/// decoder, tanh output in [-1, 1]. Fully convolutional, so any input whose
/// extent divides by 2^(number of downsample blocks) keeps its shape.
#[derive(Clone, Debug)]
pub struct GeneratorSpec {
    pub variant: GeneratorVariant,
    pub in_channels: usize,
    pub base_channels: usize,
    pub num_residual: usize,
    pub upsample: UpsampleMode,
    pub entry: BlockSpec,
    pub downs: Vec<BlockSpec>,
    pub residuals: Vec<BlockSpec>,
    pub ups: Vec<BlockSpec>,
    pub exit: Vec<LayerSpec>,
}

/// Three subsampling stages for the plain ResNet; two when dilation already
/// widens the receptive field.
pub fn build_generator(
    variant: GeneratorVariant,
    in_channels: usize,
    base_channels: usize,
    num_residual: usize,
    upsample: UpsampleMode,
) -> Result<GeneratorSpec, NetError> {
    if in_channels < 1 || base_channels < 1 || num_residual < 1 {
        return Err(NetError::Config(
            "channels and residual count must be >= 1".into(),
        ));
    }
    let num_down = match variant {
        GeneratorVariant::Res => 3,
        GeneratorVariant::Dres => 2,
    };
    let entry = build_downsample(
        in_channels,
        base_channels,
        7,
        1,
        Activation::Relu,
        true,
        "generator/entry",
    );
    let mut downs = Vec::new();
    let mut ch = base_channels;
    for i in 0..num_down {
        downs.push(build_downsample(
            ch,
            ch * 2,
            3,
            2,
            Activation::Relu,
            true,
            &format!("generator/down{i}"),
        ));
        ch *= 2;
    }
    let mut residuals = Vec::new();
    match variant {
        GeneratorVariant::Res => {
            for i in 0..num_residual {
                residuals.push(
                    build_residual_block(ResidualKind::A, ch, 1, &format!("generator/res{i}"))
                        .map_err(|source| NetError::Block {
                            index: 1 + num_down + i,
                            label: "residual_a".into(),
                            source,
                        })?,
                );
            }
        }
        GeneratorVariant::Dres => {
            for (i, d) in dilation_schedule(num_residual).into_iter().enumerate() {
                residuals.push(
                    build_residual_block(ResidualKind::B, ch, d, &format!("generator/res{i}"))
                        .map_err(|source| NetError::Block {
                            index: 1 + num_down + i,
                            label: "residual_b".into(),
                            source,
                        })?,
                );
            }
        }
    }
    let mut ups = Vec::new();
    for i in 0..num_down {
        let block = match upsample {
            UpsampleMode::IConv => {
                build_upsample_iconv(ch, ch / 2, &format!("generator/up{i}"))
            }
            UpsampleMode::TConv => {
                build_upsample_tconv(ch, ch / 2, 4, &format!("generator/up{i}"))
            }
        };
        ups.push(block);
        ch /= 2;
    }
    debug_assert_eq!(ch, base_channels);
    let exit = vec![
        LayerSpec::Conv {
            name: "generator/exit/conv".into(),
            in_ch: base_channels,
            out_ch: in_channels,
            kernel: 7,
            stride: 1,
            padding: 3,
            dilation: 1,
        },
        LayerSpec::Act(Activation::Tanh),
    ];
    Ok(GeneratorSpec {
        variant,
        in_channels,
        base_channels,
        num_residual,
        upsample,
        entry,
        downs,
        residuals,
        ups,
        exit,
    })
}

impl GeneratorSpec {
    pub fn downsample_factor(&self) -> usize {
        1 << self.downs.len()
    }

    pub fn declare_params<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        seed: u64,
    ) -> Result<(), ParamError> {
        let mut rng = ChaCha8Rng::seed_from_u64(init::derive_seed(seed, "generator"));
        let g = RoutingGroup::Generator;
        self.entry.declare_params(store, g, &mut rng)?;
        for b in &self.downs {
            b.declare_params(store, g, &mut rng)?;
        }
        for b in &self.residuals {
            b.declare_params(store, g, &mut rng)?;
        }
        for b in &self.ups {
            b.declare_params(store, g, &mut rng)?;
        }
        for l in &self.exit {
            l.declare_params(store, g, &mut rng)?;
        }
        Ok(())
    }

    pub fn blocks(&self) -> impl Iterator<Item = &BlockSpec> {
        std::iter::once(&self.entry)
            .chain(&self.downs)
            .chain(&self.residuals)
            .chain(&self.ups)
    }

    pub fn forward<S: Scalar>(
        &self,
        exec: &mut Exec<'_, S>,
        input: TensorId,
    ) -> Result<TensorId, NetError> {
        let shape = exec.tape.shape(input);
        if shape.c != self.in_channels {
            return Err(NetError::Contract {
                index: 0,
                message: format!(
                    "expected {} input channels, got {}",
                    self.in_channels, shape.c
                ),
            });
        }
        let f = self.downsample_factor();
        if shape.h == 0 || shape.w == 0 || shape.h % f != 0 || shape.w % f != 0 {
            return Err(NetError::Contract {
                index: 0,
                message: format!(
                    "spatial extent {}x{} must be a positive multiple of {f}",
                    shape.h, shape.w
                ),
            });
        }
        let mut h = input;
        for (index, block) in self.blocks().enumerate() {
            h = block.forward(exec, h).map_err(|source| NetError::Block {
                index,
                label: block.kind.label().into(),
                source,
            })?;
        }
        let exit_index = 1 + self.downs.len() + self.residuals.len() + self.ups.len();
        for l in &self.exit {
            h = l.forward(exec, h).map_err(|source| NetError::Block {
                index: exit_index,
                label: "exit".into(),
                source,
            })?;
        }
        Ok(h)
    }

    /// Convolution descriptors of the encoder-plus-residual path, the part
    /// whose receptive field governs how far context can travel.
    pub fn encoder_rf_layers(&self) -> Vec<(usize, usize, usize)> {
        let mut layers = self.entry.conv_descriptors();
        for b in &self.downs {
            layers.extend(b.conv_descriptors());
        }
        for b in &self.residuals {
            layers.extend(b.conv_descriptors());
        }
        layers
    }

    pub fn receptive_field(&self) -> ReceptiveFieldTrace {
        receptive_field(&self.encoder_rf_layers())
    }

    pub fn param_count(&self) -> usize {
        self.blocks().map(|b| b.param_count()).sum::<usize>()
            + self.exit.iter().map(|l| l.param_count()).sum::<usize>()
    }

    /// Stable description of the architecture, hashed into checkpoints.
    pub fn arch_signature(&self) -> String {
        format!(
            "generator:{}:in{}:base{}:res{}:up{}",
            self.variant.label(),
            self.in_channels,
            self.base_channels,
            self.num_residual,
            self.upsample.label()
        )
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DiscriminatorKind {
    Global,
    Patch,
    Pggan,
}

impl DiscriminatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            DiscriminatorKind::Global => "global",
            DiscriminatorKind::Patch => "patch",
            DiscriminatorKind::Pggan => "pggan",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "global" => Some(DiscriminatorKind::Global),
            "patch" => Some(DiscriminatorKind::Patch),
            "pggan" => Some(DiscriminatorKind::Pggan),
            _ => None,
        }
    }
}

pub const TRUNK_DEPTH: usize = 3;
const CHANNEL_CAP_FACTOR: usize = 8;

/// Whole-image decision path: remaining trunk convs, two more strided convs,
/// then a fully connected layer to one sigmoid score.
#[derive(Clone, Debug)]
pub struct GlobalPath {
    pub trunk_tail: Vec<BlockSpec>,
    pub convs: Vec<BlockSpec>,
    pub fc: LayerSpec,
}

/// Patch-grading path: remaining trunk convs, a conv down to the 1-channel
/// patch map, then fully connected layers tying the patches together into
/// one sigmoid score.
#[derive(Clone, Debug)]
pub struct PatchPath {
    pub trunk_tail: Vec<BlockSpec>,
    pub map_conv: LayerSpec,
    pub fc1: LayerSpec,
    pub fc2: LayerSpec,
}

/// Discriminator: `shared_trunk` is referenced by every head; each
/// head's remaining layers belong to that head alone.
#[derive(Clone, Debug)]
pub struct DiscriminatorSpec {
    pub kind: DiscriminatorKind,
    pub in_channels: usize,
    pub base_channels: usize,
    pub image_size: usize,
    pub shared_depth: usize,
    pub shared_trunk: Vec<BlockSpec>,
    pub global_path: Option<GlobalPath>,
    pub patch_path: Option<PatchPath>,
}

/// Scores are sigmoid outputs in (0, 1). The pre-FC patch map is exposed for
/// inspection.
#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorOutput {
    pub global_score: Option<TensorId>,
    pub patch_score: Option<TensorId>,
    pub patch_map: Option<TensorId>,
}

fn trunk_channels(base: usize, stage: usize) -> usize {
    (base << stage).min(base * CHANNEL_CAP_FACTOR)
}

fn trunk_conv(in_ch: usize, out_ch: usize, first: bool, name: &str) -> BlockSpec {
    // first conv runs on raw pixels: no normalization there
    build_downsample(in_ch, out_ch, 3, 2, Activation::LeakyRelu(0.2), !first, name)
}

fn build_global_path(
    prefix: &str,
    in_channels: usize,
    base: usize,
    image_size: usize,
    tail_range: std::ops::Range<usize>,
) -> GlobalPath {
    let mut trunk_tail = Vec::new();
    for i in tail_range {
        let cin = if i == 0 {
            in_channels
        } else {
            trunk_channels(base, i - 1)
        };
        trunk_tail.push(trunk_conv(
            cin,
            trunk_channels(base, i),
            i == 0,
            &format!("{prefix}/trunk{i}"),
        ));
    }
    let trunk_out = trunk_channels(base, TRUNK_DEPTH - 1);
    let mut convs = Vec::new();
    let mut ch = trunk_out;
    for j in 0..2 {
        let out = trunk_channels(base, TRUNK_DEPTH + j);
        // head layers stay normalization-free
        convs.push(build_downsample(
            ch,
            out,
            3,
            2,
            Activation::LeakyRelu(0.2),
            false,
            &format!("{prefix}/conv{j}"),
        ));
        ch = out;
    }
    let side = image_size >> (TRUNK_DEPTH + 2);
    GlobalPath {
        trunk_tail,
        convs,
        fc: LayerSpec::Dense {
            name: format!("{prefix}/fc"),
            in_features: ch * side * side,
            out_features: 1,
        },
    }
}

fn build_patch_path(
    prefix: &str,
    in_channels: usize,
    base: usize,
    image_size: usize,
    tail_range: std::ops::Range<usize>,
) -> PatchPath {
    let mut trunk_tail = Vec::new();
    for i in tail_range {
        let cin = if i == 0 {
            in_channels
        } else {
            trunk_channels(base, i - 1)
        };
        trunk_tail.push(trunk_conv(
            cin,
            trunk_channels(base, i),
            i == 0,
            &format!("{prefix}/trunk{i}"),
        ));
    }
    let trunk_out = trunk_channels(base, TRUNK_DEPTH - 1);
    let map_side = image_size >> (TRUNK_DEPTH + 1);
    PatchPath {
        trunk_tail,
        map_conv: LayerSpec::Conv {
            name: format!("{prefix}/map_conv"),
            in_ch: trunk_out,
            out_ch: 1,
            kernel: 3,
            stride: 2,
            padding: 1,
            dilation: 1,
        },
        fc1: LayerSpec::Dense {
            name: format!("{prefix}/fc1"),
            in_features: map_side * map_side,
            out_features: 64,
        },
        fc2: LayerSpec::Dense {
            name: format!("{prefix}/fc2"),
            in_features: 64,
            out_features: 1,
        },
    }
}

/// `shared_depth` counts how many of the three trunk convs both heads
/// reference; 0 degenerates into two fully independent discriminators.
pub fn build_discriminator(
    kind: DiscriminatorKind,
    in_channels: usize,
    base_channels: usize,
    image_size: usize,
    shared_depth: usize,
) -> Result<DiscriminatorSpec, NetError> {
    if in_channels < 1 || base_channels < 1 {
        return Err(NetError::Config("channels must be >= 1".into()));
    }
    let min_size = 1 << (TRUNK_DEPTH + 2);
    if image_size < min_size || image_size % min_size != 0 {
        return Err(NetError::Config(format!(
            "image size {image_size} must be a positive multiple of {min_size}"
        )));
    }
    let (shared_depth, want_global, want_patch) = match kind {
        DiscriminatorKind::Global => (0, true, false),
        DiscriminatorKind::Patch => (0, false, true),
        DiscriminatorKind::Pggan => {
            if shared_depth > TRUNK_DEPTH {
                return Err(NetError::Config(format!(
                    "shared depth {shared_depth} exceeds trunk depth {TRUNK_DEPTH}"
                )));
            }
            (shared_depth, true, true)
        }
    };
    let mut shared_trunk = Vec::new();
    for i in 0..shared_depth {
        let cin = if i == 0 {
            in_channels
        } else {
            trunk_channels(base_channels, i - 1)
        };
        shared_trunk.push(trunk_conv(
            cin,
            trunk_channels(base_channels, i),
            i == 0,
            &format!("shared/trunk{i}"),
        ));
    }
    let tail = shared_depth..TRUNK_DEPTH;
    let global_path = want_global.then(|| {
        build_global_path(
            "global_head",
            in_channels,
            base_channels,
            image_size,
            tail.clone(),
        )
    });
    let patch_path = want_patch.then(|| {
        build_patch_path("patch_head", in_channels, base_channels, image_size, tail)
    });
    Ok(DiscriminatorSpec {
        kind,
        in_channels,
        base_channels,
        image_size,
        shared_depth,
        shared_trunk,
        global_path,
        patch_path,
    })
}

impl DiscriminatorSpec {
    pub fn declare_params<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        seed: u64,
    ) -> Result<(), ParamError> {
        let mut rng = ChaCha8Rng::seed_from_u64(init::derive_seed(seed, "discriminator"));
        for b in &self.shared_trunk {
            b.declare_params(store, RoutingGroup::SharedTrunk, &mut rng)?;
        }
        if let Some(g) = &self.global_path {
            for b in g.trunk_tail.iter().chain(&g.convs) {
                b.declare_params(store, RoutingGroup::GlobalHead, &mut rng)?;
            }
            g.fc.declare_params(store, RoutingGroup::GlobalHead, &mut rng)?;
        }
        if let Some(p) = &self.patch_path {
            for b in &p.trunk_tail {
                b.declare_params(store, RoutingGroup::PatchHead, &mut rng)?;
            }
            for l in [&p.map_conv, &p.fc1, &p.fc2] {
                l.declare_params(store, RoutingGroup::PatchHead, &mut rng)?;
            }
        }
        Ok(())
    }

    pub fn forward<S: Scalar>(
        &self,
        exec: &mut Exec<'_, S>,
        input: TensorId,
    ) -> Result<DiscriminatorOutput, NetError> {
        let shape = exec.tape.shape(input);
        if shape.c != self.in_channels || shape.h != self.image_size || shape.w != self.image_size
        {
            return Err(NetError::Contract {
                index: 0,
                message: format!(
                    "expected [N,{},{},{}], got {}",
                    self.in_channels, self.image_size, self.image_size, shape
                ),
            });
        }
        let mut h = input;
        for (index, block) in self.shared_trunk.iter().enumerate() {
            h = block.forward(exec, h).map_err(|source| NetError::Block {
                index,
                label: "shared_trunk".into(),
                source,
            })?;
        }
        let trunk_out = h;

        let mut output = DiscriminatorOutput {
            global_score: None,
            patch_score: None,
            patch_map: None,
        };
        let wrap = |index: usize, label: &str| {
            let label = label.to_string();
            move |source: BlockError| NetError::Block {
                index,
                label,
                source,
            }
        };
        if let Some(path) = &self.global_path {
            let mut g = trunk_out;
            let mut index = self.shared_trunk.len();
            for block in path.trunk_tail.iter().chain(&path.convs) {
                g = block.forward(exec, g).map_err(wrap(index, "global_head"))?;
                index += 1;
            }
            let logits = path.fc.forward(exec, g).map_err(wrap(index, "global_fc"))?;
            output.global_score = Some(exec.tape.pointwise(logits, Activation::Sigmoid));
        }
        if let Some(path) = &self.patch_path {
            let mut p = trunk_out;
            let mut index = self.shared_trunk.len();
            for block in &path.trunk_tail {
                p = block.forward(exec, p).map_err(wrap(index, "patch_head"))?;
                index += 1;
            }
            let map = path.map_conv.forward(exec, p).map_err(wrap(index, "patch_map"))?;
            output.patch_map = Some(map);
            let h1 = path.fc1.forward(exec, map).map_err(wrap(index + 1, "patch_fc1"))?;
            let a1 = exec.tape.pointwise(h1, Activation::LeakyRelu(0.2));
            let logits = path.fc2.forward(exec, a1).map_err(wrap(index + 2, "patch_fc2"))?;
            output.patch_score = Some(exec.tape.pointwise(logits, Activation::Sigmoid));
        }
        Ok(output)
    }

    /// Layer-shape signature of the global decision path (ignores parameter
    /// names and sharing), for structural comparisons between kinds.
    pub fn global_structure(&self) -> Option<Vec<String>> {
        let path = self.global_path.as_ref()?;
        let mut sig = Vec::new();
        for b in self
            .shared_trunk
            .iter()
            .chain(&path.trunk_tail)
            .chain(&path.convs)
        {
            sig.extend(block_signature(b));
        }
        sig.push(layer_signature(&path.fc));
        sig.push("sigmoid".into());
        Some(sig)
    }

    pub fn patch_structure(&self) -> Option<Vec<String>> {
        let path = self.patch_path.as_ref()?;
        let mut sig = Vec::new();
        for b in self.shared_trunk.iter().chain(&path.trunk_tail) {
            sig.extend(block_signature(b));
        }
        sig.push(layer_signature(&path.map_conv));
        sig.push(layer_signature(&path.fc1));
        sig.push("leaky_relu(0.2)".into());
        sig.push(layer_signature(&path.fc2));
        sig.push("sigmoid".into());
        Some(sig)
    }

    pub fn arch_signature(&self) -> String {
        format!(
            "discriminator:{}:in{}:base{}:size{}:shared{}",
            self.kind.label(),
            self.in_channels,
            self.base_channels,
            self.image_size,
            self.shared_depth
        )
    }

    /// Receptive field of the conv stack up to the patch map.
    pub fn patch_rf(&self) -> Option<ReceptiveFieldTrace> {
        let path = self.patch_path.as_ref()?;
        let mut layers = Vec::new();
        for b in self.shared_trunk.iter().chain(&path.trunk_tail) {
            layers.extend(b.conv_descriptors());
        }
        layers.extend(path.map_conv.conv_descriptor());
        Some(receptive_field(&layers))
    }
}

fn layer_signature(l: &LayerSpec) -> String {
    match l {
        LayerSpec::Conv {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            dilation,
            ..
        } => format!("conv {in_ch}->{out_ch} k{kernel} s{stride} p{padding} d{dilation}"),
        LayerSpec::TConv {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            ..
        } => format!("tconv {in_ch}->{out_ch} k{kernel} s{stride} p{padding}"),
        LayerSpec::Resize { mode, scale } => format!("resize {mode:?} x{scale}"),
        LayerSpec::Norm { channels, .. } => format!("inorm {channels}"),
        LayerSpec::Act(a) => a.label(),
        LayerSpec::Dense {
            in_features,
            out_features,
            ..
        } => format!("dense {in_features}->{out_features}"),
    }
}

fn block_signature(b: &BlockSpec) -> Vec<String> {
    b.layers.iter().map(layer_signature).collect()
}

/// Run a generator on raw data with gradients off.
pub fn run_generator<S: Scalar>(
    spec: &GeneratorSpec,
    store: &ParamStore<S>,
    x: &TensorData<S>,
) -> Result<TensorData<S>, NetError> {
    let mut tape = Tape::inference();
    let input = tape.leaf(x.clone(), false);
    let mut exec = Exec::new(&mut tape, store);
    let out = spec.forward(&mut exec, input)?;
    Ok(tape.data(out).clone())
}

/// Human-readable block table, parameter totals per routing group, and the
/// receptive-field traces.
pub fn describe<S: Scalar>(
    gen: &GeneratorSpec,
    disc: Option<&DiscriminatorSpec>,
    store: &ParamStore<S>,
    image_size: usize,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "generator ({})", gen.arch_signature());
    let _ = writeln!(
        out,
        "  {:<4} {:<16} {:>10} {:>12} {:>10} {:>9}",
        "idx", "block", "channels", "k/s/d", "out", "params"
    );
    let mut side = image_size;
    let mut rows = vec![];
    rows.push((gen.entry.clone(), side));
    for b in &gen.downs {
        side /= 2;
        rows.push((b.clone(), side));
    }
    for b in &gen.residuals {
        rows.push((b.clone(), side));
    }
    for b in &gen.ups {
        side *= 2;
        rows.push((b.clone(), side));
    }
    for (i, (b, s)) in rows.iter().enumerate() {
        let _ = writeln!(
            out,
            "  {:<4} {:<16} {:>10} {:>12} {:>10} {:>9}",
            i,
            b.kind.label(),
            format!("{}->{}", b.channels_in, b.channels_out),
            format!("{}/{}/{}", b.kernel, b.stride, b.dilation),
            format!("{s}x{s}"),
            b.param_count()
        );
    }
    let _ = writeln!(
        out,
        "  {:<4} {:<16} {:>10} {:>12} {:>10} {:>9}",
        rows.len(),
        "exit+tanh",
        format!("{}->{}", gen.base_channels, gen.in_channels),
        "7/1/1",
        format!("{image_size}x{image_size}"),
        gen.exit.iter().map(|l| l.param_count()).sum::<usize>()
    );
    if gen.variant == GeneratorVariant::Dres {
        let _ = writeln!(
            out,
            "  dilation schedule: {:?}",
            dilation_schedule(gen.num_residual)
        );
    }
    let trace = gen.receptive_field();
    let _ = writeln!(
        out,
        "  receptive field (encoder+residual path): {} px",
        trace.final_rf()
    );
    let _ = writeln!(out, "  total params: {}", gen.param_count());

    if let Some(d) = disc {
        let _ = writeln!(out, "discriminator ({})", d.arch_signature());
        for (label, blocks) in [("shared trunk", &d.shared_trunk)] {
            for b in blocks.iter() {
                let _ = writeln!(
                    out,
                    "  [{label}] conv {}->{} k{} s{} ({} params)",
                    b.channels_in,
                    b.channels_out,
                    b.kernel,
                    b.stride,
                    b.param_count()
                );
            }
        }
        if let Some(g) = &d.global_path {
            for b in g.trunk_tail.iter().chain(&g.convs) {
                let _ = writeln!(
                    out,
                    "  [global head] conv {}->{} k{} s{} ({} params)",
                    b.channels_in,
                    b.channels_out,
                    b.kernel,
                    b.stride,
                    b.param_count()
                );
            }
            let _ = writeln!(out, "  [global head] {} + sigmoid", layer_signature(&g.fc));
        }
        if let Some(p) = &d.patch_path {
            for b in &p.trunk_tail {
                let _ = writeln!(
                    out,
                    "  [patch head] conv {}->{} k{} s{} ({} params)",
                    b.channels_in,
                    b.channels_out,
                    b.kernel,
                    b.stride,
                    b.param_count()
                );
            }
            let _ = writeln!(
                out,
                "  [patch head] {} -> patch map {0}x{0} px",
                layer_signature(&p.map_conv),
            );
            let _ = writeln!(
                out,
                "  [patch head] {} ; {} + sigmoid",
                layer_signature(&p.fc1),
                layer_signature(&p.fc2)
            );
        }
        if let Some(rf) = d.patch_rf() {
            let _ = writeln!(out, "  patch-path receptive field: {} px", rf.final_rf());
        }
    }

    let _ = writeln!(out, "routing groups:");
    for g in RoutingGroup::ALL {
        let count = store.group(g).count();
        if count > 0 {
            let _ = writeln!(
                out,
                "  {:<12} {:>4} tensors {:>9} scalars",
                g.tag(),
                count,
                store.numel_group(g)
            );
        }
    }
    out
}
