//! The two-stream network: a 2D residual pose backbone over skeleton maps,
//! a (2+1)D residual backbone over infrared clips, and an MLP head over the
//! concatenated features.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::conv::ConvSpec;
use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{BatchNorm, Builder, Conv, Conv2Plus1d, ConvRank, Linear, Mode};
use crate::params::ParamStore;
use crate::real::Real;
use crate::rng::{derive_seed, rng_for, stream};
use crate::tensor::Tensor;

const BASE_WIDTHS: [usize; 4] = [64, 128, 256, 512];

/// Which input streams feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Streams {
    Fusion,
    PoseOnly,
    IrOnly,
}

impl Streams {
    pub fn uses_pose(self) -> bool {
        matches!(self, Streams::Fusion | Streams::PoseOnly)
    }

    pub fn uses_ir(self) -> bool {
        matches!(self, Streams::Fusion | Streams::IrOnly)
    }

    pub fn name(self) -> &'static str {
        match self {
            Streams::Fusion => "fusion",
            Streams::PoseOnly => "pose_only",
            Streams::IrOnly => "ir_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fusion" => Ok(Streams::Fusion),
            "pose_only" | "pose" => Ok(Streams::PoseOnly),
            "ir_only" | "ir" => Ok(Streams::IrOnly),
            other => Err(Error::InvalidArgument(format!("unknown mode `{other}`"))),
        }
    }
}

/// How the two feature vectors are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    /// Concatenate `[i; s]` and classify with one MLP.
    Concat,
    /// Separate heads per stream; logits mixed with two learned scalars.
    LogitAverage,
}

/// Normalization placed before each MLP layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadNorm {
    BatchNorm,
    Dropout(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub class_count: usize,
    pub width_multiplier: f64,
    pub clip_length: usize,
    pub map_size: usize,
    pub clip_size: usize,
    pub pose_stages: [usize; 4],
    pub ir_stages: [usize; 4],
    pub mlp_hidden: [usize; 2],
    pub head_norm: HeadNorm,
    pub fusion: FusionKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            class_count: 60,
            width_multiplier: 1.0,
            clip_length: 20,
            map_size: 224,
            clip_size: 112,
            pose_stages: [2; 4],
            ir_stages: [2; 4],
            mlp_hidden: [256, 128],
            head_norm: HeadNorm::BatchNorm,
            fusion: FusionKind::Concat,
        }
    }
}

impl ModelConfig {
    /// Small configuration for quick experiments.
    pub fn toy(class_count: usize, width_multiplier: f64, clip_length: usize) -> Self {
        ModelConfig { class_count, width_multiplier, clip_length, ..Self::default() }
    }

    pub fn stage_widths(&self) -> [usize; 4] {
        BASE_WIDTHS.map(|w| (libm::round(w as f64 * self.width_multiplier) as usize).max(1))
    }

    pub fn pose_feature_dim(&self) -> usize {
        self.stage_widths()[3]
    }

    pub fn ir_feature_dim(&self) -> usize {
        self.stage_widths()[3]
    }

    /// Input width of the classification MLP for a given stream selection.
    pub fn head_input_dim(&self, streams: Streams) -> usize {
        match (streams, self.fusion) {
            (Streams::Fusion, FusionKind::Concat) => self.ir_feature_dim() + self.pose_feature_dim(),
            (Streams::PoseOnly, _) => self.pose_feature_dim(),
            (Streams::IrOnly, _) | (Streams::Fusion, FusionKind::LogitAverage) => self.ir_feature_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.class_count < 2 {
            return bad(format!("class_count must be >= 2, got {}", self.class_count));
        }
        if !(self.width_multiplier > 0.0) || !self.width_multiplier.is_finite() {
            return bad(format!("width_multiplier must be positive, got {}", self.width_multiplier));
        }
        if self.clip_length == 0 || self.map_size < 8 || self.clip_size < 8 {
            return bad(format!(
                "clip_length {} / map_size {} / clip_size {} too small",
                self.clip_length, self.map_size, self.clip_size
            ));
        }
        if self.pose_stages.iter().chain(&self.ir_stages).any(|&d| d == 0) || self.mlp_hidden.contains(&0) {
            return bad("stage depths and hidden widths must be >= 1".into());
        }
        if let HeadNorm::Dropout(p) = self.head_norm {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("dropout probability {p} outside [0, 1)"));
            }
        }
        Ok(())
    }
}

// ------------------------------------------------------------- pose stream

#[derive(Debug, Clone)]
struct Shortcut {
    conv: Conv,
    bn: BatchNorm,
}

#[derive(Debug, Clone)]
struct BasicBlock2d {
    conv1: Conv,
    bn1: BatchNorm,
    conv2: Conv,
    bn2: BatchNorm,
    shortcut: Option<Shortcut>,
}

impl BasicBlock2d {
    fn new<S: Real>(b: &mut Builder<'_, S>, c_in: usize, c_out: usize, stride: usize) -> Result<Self> {
        let conv1 = Conv::new(&mut b.sub("conv1"), ConvSpec::spatial(c_in, c_out, 3, stride, 1), ConvRank::Planar, false)?;
        let bn1 = BatchNorm::new(&mut b.sub("bn1"), c_out)?;
        let conv2 = Conv::new(&mut b.sub("conv2"), ConvSpec::spatial(c_out, c_out, 3, 1, 1), ConvRank::Planar, false)?;
        let bn2 = BatchNorm::new(&mut b.sub("bn2"), c_out)?;
        let shortcut = if stride != 1 || c_in != c_out {
            let mut d = b.sub("downsample");
            Some(Shortcut {
                conv: Conv::new(&mut d.sub("conv"), ConvSpec::spatial(c_in, c_out, 1, stride, 0), ConvRank::Planar, false)?,
                bn: BatchNorm::new(&mut d.sub("bn"), c_out)?,
            })
        } else {
            None
        };
        Ok(BasicBlock2d { conv1, bn1, conv2, bn2, shortcut })
    }

    fn forward<S: Real>(&self, g: &mut Graph<'_, S>, x: Var, mode: Mode) -> Result<Var> {
        let h = self.conv1.forward(g, x)?;
        let h = self.bn1.forward(g, h, mode)?;
        let h = g.relu(h);
        let h = self.conv2.forward(g, h)?;
        let h = self.bn2.forward(g, h, mode)?;
        let skip = match &self.shortcut {
            Some(s) => {
                let d = s.conv.forward(g, x)?;
                s.bn.forward(g, d, mode)?
            }
            None => x,
        };
        let sum = g.add(h, skip)?;
        Ok(g.relu(sum))
    }
}

/// 18-layer 2D residual network: 7×7/2 stem, 3×3/2 max-pool, four stages of
/// basic blocks, global average pooling.
#[derive(Debug, Clone)]
pub struct PoseBackbone {
    input_size: usize,
    stem: Conv,
    stem_bn: BatchNorm,
    blocks: Vec<BasicBlock2d>,
    pub feature_dim: usize,
}

impl PoseBackbone {
    pub fn new<S: Real>(b: &mut Builder<'_, S>, config: &ModelConfig) -> Result<Self> {
        let widths = config.stage_widths();
        let stem = Conv::new(&mut b.sub("stem.conv"), ConvSpec::spatial(3, widths[0], 7, 2, 3), ConvRank::Planar, false)?;
        let stem_bn = BatchNorm::new(&mut b.sub("stem.bn"), widths[0])?;
        let mut blocks = Vec::new();
        let mut c_in = widths[0];
        for (stage, (&width, &depth)) in widths.iter().zip(&config.pose_stages).enumerate() {
            for i in 0..depth {
                let stride = if stage > 0 && i == 0 { 2 } else { 1 };
                blocks.push(BasicBlock2d::new(&mut b.sub(&format!("layer{}.{i}", stage + 1)), c_in, width, stride)?);
                c_in = width;
            }
        }
        Ok(PoseBackbone { input_size: config.map_size, stem, stem_bn, blocks, feature_dim: c_in })
    }

    /// `[N, 3, H, W]` skeleton maps to `[N, feature_dim]`.
    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, x: Var, mode: Mode) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 4 || s[1] != 3 || s[2] != self.input_size || s[3] != self.input_size {
            return Err(shape_err("pose_forward", format!("expected [N,3,{0},{0}], got {s:?}", self.input_size)));
        }
        let h = self.stem.forward(g, x)?;
        let h = self.stem_bn.forward(g, h, mode)?;
        let h = g.relu(h);
        let mut h = g.max_pool2d(h, 3, 2, 1)?;
        for block in &self.blocks {
            h = block.forward(g, h, mode)?;
        }
        g.global_avg_pool(h)
    }
}

// --------------------------------------------------------------- IR stream

#[derive(Debug, Clone)]
struct BasicBlock3d {
    conv1: Conv2Plus1d,
    bn1: BatchNorm,
    conv2: Conv2Plus1d,
    bn2: BatchNorm,
    shortcut: Option<Shortcut>,
}

impl BasicBlock3d {
    fn new<S: Real>(b: &mut Builder<'_, S>, c_in: usize, c_out: usize, stride: usize) -> Result<Self> {
        let spec1 = ConvSpec::new(c_in, c_out, 3, 3).with_stride([stride; 3]).with_padding([1; 3]);
        let spec2 = ConvSpec::new(c_out, c_out, 3, 3).with_padding([1; 3]);
        let conv1 = Conv2Plus1d::new(&mut b.sub("conv1"), spec1, None, true, false)?;
        let bn1 = BatchNorm::new(&mut b.sub("bn1"), c_out)?;
        let conv2 = Conv2Plus1d::new(&mut b.sub("conv2"), spec2, None, true, false)?;
        let bn2 = BatchNorm::new(&mut b.sub("bn2"), c_out)?;
        let shortcut = if stride != 1 || c_in != c_out {
            let mut d = b.sub("downsample");
            let spec = ConvSpec::new(c_in, c_out, 1, 1).with_stride([stride; 3]);
            Some(Shortcut {
                conv: Conv::new(&mut d.sub("conv"), spec, ConvRank::Volumetric, false)?,
                bn: BatchNorm::new(&mut d.sub("bn"), c_out)?,
            })
        } else {
            None
        };
        Ok(BasicBlock3d { conv1, bn1, conv2, bn2, shortcut })
    }

    fn forward<S: Real>(&self, g: &mut Graph<'_, S>, x: Var, mode: Mode) -> Result<Var> {
        let h = self.conv1.forward(g, x, mode)?;
        let h = self.bn1.forward(g, h, mode)?;
        let h = g.relu(h);
        let h = self.conv2.forward(g, h, mode)?;
        let h = self.bn2.forward(g, h, mode)?;
        let skip = match &self.shortcut {
            Some(s) => {
                let d = s.conv.forward(g, x)?;
                s.bn.forward(g, d, mode)?
            }
            None => x,
        };
        let sum = g.add(h, skip)?;
        Ok(g.relu(sum))
    }
}

/// 18-layer R(2+1)D network: every 3D convolution of the residual topology
/// is a [`Conv2Plus1d`] with parameter-parity mid channels.
#[derive(Debug, Clone)]
pub struct IrBackbone {
    clip_length: usize,
    input_size: usize,
    stem: Conv2Plus1d,
    stem_bn: BatchNorm,
    blocks: Vec<BasicBlock3d>,
    pub feature_dim: usize,
}

impl IrBackbone {
    pub fn new<S: Real>(b: &mut Builder<'_, S>, config: &ModelConfig) -> Result<Self> {
        let widths = config.stage_widths();
        let stem_spec = ConvSpec::new(3, widths[0], 3, 7).with_stride([1, 2, 2]).with_padding([1, 3, 3]);
        let stem = Conv2Plus1d::new(&mut b.sub("stem.conv"), stem_spec, None, true, false)?;
        let stem_bn = BatchNorm::new(&mut b.sub("stem.bn"), widths[0])?;
        let mut blocks = Vec::new();
        let mut c_in = widths[0];
        for (stage, (&width, &depth)) in widths.iter().zip(&config.ir_stages).enumerate() {
            for i in 0..depth {
                let stride = if stage > 0 && i == 0 { 2 } else { 1 };
                blocks.push(BasicBlock3d::new(&mut b.sub(&format!("layer{}.{i}", stage + 1)), c_in, width, stride)?);
                c_in = width;
            }
        }
        Ok(IrBackbone {
            clip_length: config.clip_length,
            input_size: config.clip_size,
            stem,
            stem_bn,
            blocks,
            feature_dim: c_in,
        })
    }

    /// `[N, 3, T, H, W]` clips to `[N, feature_dim]`.
    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, x: Var, mode: Mode) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 5 || s[1] != 3 {
            return Err(shape_err("ir_forward", format!("expected [N,3,T,H,W], got {s:?}")));
        }
        if s[2] != self.clip_length {
            return Err(shape_err("ir_forward", format!("clip length {} but the network expects T={}", s[2], self.clip_length)));
        }
        if s[3] != self.input_size || s[4] != self.input_size {
            return Err(shape_err("ir_forward", format!("frames {}x{}, expected {2}x{2}", s[3], s[4], self.input_size)));
        }
        let h = self.stem.forward(g, x, mode)?;
        let h = self.stem_bn.forward(g, h, mode)?;
        let mut h = g.relu(h);
        for block in &self.blocks {
            h = block.forward(g, h, mode)?;
        }
        g.global_avg_pool(h)
    }

    /// Every factorized convolution in network order.
    pub fn factorized_blocks(&self) -> Vec<&Conv2Plus1d> {
        let mut out = alloc::vec![&self.stem];
        for b in &self.blocks {
            out.push(&b.conv1);
            out.push(&b.conv2);
        }
        out
    }
}

// -------------------------------------------------------------------- head

#[derive(Debug, Clone)]
struct HeadLayer {
    norm: Option<BatchNorm>,
    linear: Linear,
}

/// Three layers, each preceded by batch norm (or dropout), ReLU between.
#[derive(Debug, Clone)]
pub struct MlpHead {
    layers: Vec<HeadLayer>,
    dropout: Option<f64>,
    pub input_dim: usize,
}

impl MlpHead {
    pub fn new<S: Real>(b: &mut Builder<'_, S>, input_dim: usize, config: &ModelConfig) -> Result<Self> {
        let dims = [input_dim, config.mlp_hidden[0], config.mlp_hidden[1], config.class_count];
        let dropout = match config.head_norm {
            HeadNorm::BatchNorm => None,
            HeadNorm::Dropout(p) => Some(p),
        };
        let mut layers = Vec::new();
        for i in 0..3 {
            let norm = if dropout.is_none() { Some(BatchNorm::new(&mut b.sub(&format!("bn{i}")), dims[i])?) } else { None };
            let linear = Linear::new(&mut b.sub(&format!("fc{i}")), dims[i], dims[i + 1])?;
            layers.push(HeadLayer { norm, linear });
        }
        Ok(MlpHead { layers, dropout, input_dim })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = alloc::vec![self.input_dim];
        d.extend(self.layers.iter().map(|l| l.linear.out_features));
        d
    }

    /// Logits `[N, C]` (the terminal softmax is applied by the caller).
    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, x: Var, mode: Mode, dropout_seed: u64) -> Result<Var> {
        if g.shape(x).len() != 2 || g.shape(x)[1] != self.input_dim {
            return Err(shape_err("mlp_head", format!("expected [N,{}], got {:?}", self.input_dim, g.shape(x))));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some(bn) = &layer.norm {
                h = bn.forward(g, h, mode)?;
            }
            if let (Some(p), Mode::Train) = (self.dropout, mode) {
                h = g.dropout(h, p, derive_seed(dropout_seed, i as u64))?;
            }
            h = layer.linear.forward(g, h)?;
            if i != last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}

// ------------------------------------------------------------------ network

/// Batch of network inputs; a stream may be absent when unused.
#[derive(Debug, Clone, Default)]
pub struct Inputs<S> {
    /// `[N, 3, map_size, map_size]`.
    pub maps: Option<Tensor<S>>,
    /// `[N, 3, T, clip_size, clip_size]`.
    pub clips: Option<Tensor<S>>,
}

#[derive(Debug, Clone)]
pub struct FusionNetwork<S> {
    pub config: ModelConfig,
    pub streams: Streams,
    pub pose: Option<PoseBackbone>,
    pub ir: Option<IrBackbone>,
    pub head: MlpHead,
    /// Second head and mixing scalars of the logit-average variant.
    pose_head: Option<MlpHead>,
    mix: Option<(crate::ParamId, crate::ParamId)>,
    params: ParamStore<S>,
}

impl<S: Real> FusionNetwork<S> {
    /// Randomly initialised network; the same seed gives identical weights.
    pub fn new(config: &ModelConfig, streams: Streams, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = rng_for(derive_seed(seed, stream::INIT));
        let mut b = Builder::new(&mut params, &mut rng);
        let pose = if streams.uses_pose() { Some(PoseBackbone::new(&mut b.sub("pose"), config)?) } else { None };
        let ir = if streams.uses_ir() { Some(IrBackbone::new(&mut b.sub("ir"), config)?) } else { None };
        let split = streams == Streams::Fusion && config.fusion == FusionKind::LogitAverage;
        let head = MlpHead::new(&mut b.sub("head"), config.head_input_dim(streams), config)?;
        let (pose_head, mix) = if split {
            let ph = MlpHead::new(&mut b.sub("pose_head"), config.pose_feature_dim(), config)?;
            let half = Tensor::scalar(S::of(0.5));
            let a = b.add("mix.ir", crate::ParamKind::Trainable, half.clone())?;
            let c = b.add("mix.pose", crate::ParamKind::Trainable, half)?;
            (Some(ph), Some((a, c)))
        } else {
            (None, None)
        };
        Ok(FusionNetwork { config: config.clone(), streams, pose, ir, head, pose_head, mix, params })
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn graph(&self) -> Graph<'_, S> {
        Graph::with_params(&self.params)
    }

    /// Pose features `s`.
    pub fn pose_forward(&self, g: &mut Graph<'_, S>, maps: Var, mode: Mode) -> Result<Var> {
        self.pose.as_ref().ok_or_else(|| Error::InvalidArgument("network has no pose stream".into()))?.forward(g, maps, mode)
    }

    /// IR features `i`.
    pub fn ir_forward(&self, g: &mut Graph<'_, S>, clips: Var, mode: Mode) -> Result<Var> {
        self.ir.as_ref().ok_or_else(|| Error::InvalidArgument("network has no IR stream".into()))?.forward(g, clips, mode)
    }

    /// Logits from whichever feature vectors the stream selection uses.
    pub fn fuse_and_classify(
        &self,
        g: &mut Graph<'_, S>,
        ir_features: Option<Var>,
        pose_features: Option<Var>,
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<Var> {
        let missing = |what: &str| Error::InvalidArgument(format!("{} features required for {}", what, self.streams.name()));
        match self.streams {
            Streams::PoseOnly => self.head.forward(g, pose_features.ok_or_else(|| missing("pose"))?, mode, dropout_seed),
            Streams::IrOnly => self.head.forward(g, ir_features.ok_or_else(|| missing("IR"))?, mode, dropout_seed),
            Streams::Fusion => {
                let i = ir_features.ok_or_else(|| missing("IR"))?;
                let s = pose_features.ok_or_else(|| missing("pose"))?;
                if g.shape(i)[0] != g.shape(s)[0] {
                    return Err(shape_err("fuse", format!("batch {} vs {}", g.shape(i)[0], g.shape(s)[0])));
                }
                match (&self.pose_head, self.mix) {
                    (Some(pose_head), Some((wi, ws))) => {
                        let li = self.head.forward(g, i, mode, dropout_seed)?;
                        let ls = pose_head.forward(g, s, mode, derive_seed(dropout_seed, 99))?;
                        let (wi, ws) = (g.param(wi)?, g.param(ws)?);
                        let li = g.scale_by(li, wi)?;
                        let ls = g.scale_by(ls, ws)?;
                        g.add(li, ls)
                    }
                    _ => {
                        let joined = g.concat(&[i, s])?;
                        self.head.forward(g, joined, mode, dropout_seed)
                    }
                }
            }
        }
    }

    /// Full forward to logits.
    pub fn logits(&self, g: &mut Graph<'_, S>, inputs: &Inputs<S>, mode: Mode, dropout_seed: u64) -> Result<Var> {
        let take = |t: &Option<Tensor<S>>, what: &str| {
            t.clone().ok_or_else(|| Error::InvalidArgument(format!("{what} input required for {}", self.streams.name())))
        };
        let s = if self.streams.uses_pose() {
            let x = g.constant(take(&inputs.maps, "skeleton map")?);
            Some(self.pose_forward(g, x, mode)?)
        } else {
            None
        };
        let i = if self.streams.uses_ir() {
            let x = g.constant(take(&inputs.clips, "IR clip")?);
            Some(self.ir_forward(g, x, mode)?)
        } else {
            None
        };
        self.fuse_and_classify(g, i, s, mode, dropout_seed)
    }

    /// Class probabilities in evaluation mode.
    pub fn predict(&self, inputs: &Inputs<S>) -> Result<Tensor<S>> {
        let mut g = self.graph();
        let logits = self.logits(&mut g, inputs, Mode::Eval, 0)?;
        let probs = g.softmax(logits)?;
        Ok(g.tensor(probs))
    }
}
