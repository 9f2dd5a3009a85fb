//! Parameterised layers. Each layer owns only [`ParamId`]s; tensors live in a
//! [`ParamStore`] under the layer's dotted path.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::conv::{mid_channels, ConvSpec};
use crate::error::Result;
use crate::graph::{Graph, NormMode, Var};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Registers parameters under a dotted prefix with seeded initialisation.
pub struct Builder<'a, S> {
    store: &'a mut ParamStore<S>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, S: Real> Builder<'a, S> {
    pub fn new(store: &'a mut ParamStore<S>, rng: &'a mut ChaCha8Rng) -> Self {
        Builder { store, rng, prefix: String::new() }
    }

    pub fn sub(&mut self, name: &str) -> Builder<'_, S> {
        let prefix = self.path(name);
        Builder { store: &mut *self.store, rng: &mut *self.rng, prefix }
    }

    pub fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            String::from(name)
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn add(&mut self, name: &str, kind: ParamKind, tensor: Tensor<S>) -> Result<ParamId> {
        let path = self.path(name);
        self.store.insert(&path, kind, tensor)
    }

    fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let dist = Normal::new(0.0, std).expect("positive std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| S::of(dist.sample(&mut *self.rng))).collect();
        self.add(name, ParamKind::Trainable, Tensor::from_vec(shape, data)?)
    }

    fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| S::of(self.rng.random_range(-bound..=bound))).collect();
        self.add(name, ParamKind::Trainable, Tensor::from_vec(shape, data)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvRank {
    /// `[N, C, H, W]`, weight `[C', C, d, d]`.
    Planar,
    /// `[N, C, T, H, W]`, weight `[C', C, t, d, d]`.
    Volumetric,
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub spec: ConvSpec,
    pub rank: ConvRank,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv {
    /// Kaiming-normal (fan-out) weights; bias initialised to zero when present.
    pub fn new<S: Real>(b: &mut Builder<'_, S>, spec: ConvSpec, rank: ConvRank, bias: bool) -> Result<Self> {
        spec.validate()?;
        let shape: Vec<usize> = match rank {
            ConvRank::Planar => {
                if spec.kernel_time != 1 {
                    return Err(crate::Error::InvalidArgument(format!("planar conv with kernel_time {}", spec.kernel_time)));
                }
                alloc::vec![spec.out_channels, spec.in_channels, spec.kernel_space, spec.kernel_space]
            }
            ConvRank::Volumetric => spec.weight_shape().to_vec(),
        };
        let fan_out = spec.out_channels * spec.kernel_time * spec.kernel_space * spec.kernel_space;
        let weight = b.normal("weight", &shape, libm::sqrt(2.0 / fan_out as f64))?;
        let bias = if bias {
            Some(b.add("bias", ParamKind::Trainable, Tensor::zeros(&[spec.out_channels]))?)
        } else {
            None
        };
        Ok(Conv { spec, rank, weight, bias })
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        let w = g.param(self.weight)?;
        let bias = self.bias.map(|b| g.param(b)).transpose()?;
        match self.rank {
            ConvRank::Planar => g.conv2d(x, w, bias, &self.spec),
            ConvRank::Volumetric => g.conv3d(x, w, bias, &self.spec),
        }
    }

    pub fn param_count(&self) -> usize {
        self.spec.weight_count() + self.bias.map(|_| self.spec.out_channels).unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<S: Real>(b: &mut Builder<'_, S>, channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            channels,
            gamma: b.add("gamma", ParamKind::Trainable, Tensor::full(&[channels], S::one()))?,
            beta: b.add("beta", ParamKind::Trainable, Tensor::zeros(&[channels]))?,
            running_mean: b.add("running_mean", ParamKind::Buffer, Tensor::zeros(&[channels]))?,
            running_var: b.add("running_var", ParamKind::Buffer, Tensor::full(&[channels], S::one()))?,
        })
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, x: Var, mode: Mode) -> Result<Var> {
        let gamma = g.param(self.gamma)?;
        let beta = g.param(self.beta)?;
        let running = (self.running_mean, self.running_var);
        let norm = match mode {
            Mode::Train => NormMode::Batch { momentum: BN_MOMENTUM, running: Some(running) },
            Mode::Eval => NormMode::Frozen { running },
        };
        g.batch_norm(x, gamma, beta, norm, BN_EPS)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<S: Real>(b: &mut Builder<'_, S>, in_features: usize, out_features: usize) -> Result<Self> {
        let bound = 1.0 / libm::sqrt(in_features as f64);
        Ok(Linear {
            in_features,
            out_features,
            weight: b.uniform("weight", &[out_features, in_features], bound)?,
            bias: b.uniform("bias", &[out_features], bound)?,
        })
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        let w = g.param(self.weight)?;
        let bias = g.param(self.bias)?;
        g.linear(x, w, Some(bias))
    }
}

/// Factorized (2+1)D convolution: a `1×d×d` spatial convolution into
/// `mid_channels` maps, an optional batch norm, ReLU, then a `t×1×1`
/// temporal convolution. Output extents match the full `t×d×d` convolution
/// with the same strides and paddings.
#[derive(Debug, Clone)]
pub struct Conv2Plus1d {
    pub full: ConvSpec,
    pub mid_channels: usize,
    pub spatial: Conv,
    pub mid_norm: Option<BatchNorm>,
    pub temporal: Conv,
}

impl Conv2Plus1d {
    /// `mid_override` replaces the parameter-parity channel count.
    pub fn new<S: Real>(
        b: &mut Builder<'_, S>,
        full: ConvSpec,
        mid_override: Option<usize>,
        mid_norm: bool,
        bias: bool,
    ) -> Result<Self> {
        full.validate()?;
        let mid = mid_override
            .unwrap_or_else(|| mid_channels(full.in_channels, full.out_channels, full.kernel_time, full.kernel_space));
        let spatial_spec = ConvSpec {
            in_channels: full.in_channels,
            out_channels: mid,
            kernel_time: 1,
            kernel_space: full.kernel_space,
            stride: [1, full.stride[1], full.stride[2]],
            padding: [0, full.padding[1], full.padding[2]],
        };
        let temporal_spec = ConvSpec {
            in_channels: mid,
            out_channels: full.out_channels,
            kernel_time: full.kernel_time,
            kernel_space: 1,
            stride: [full.stride[0], 1, 1],
            padding: [full.padding[0], 0, 0],
        };
        let spatial = Conv::new(&mut b.sub("spatial"), spatial_spec, ConvRank::Volumetric, bias)?;
        let mid_norm = if mid_norm { Some(BatchNorm::new(&mut b.sub("mid_bn"), mid)?) } else { None };
        let temporal = Conv::new(&mut b.sub("temporal"), temporal_spec, ConvRank::Volumetric, bias)?;
        Ok(Conv2Plus1d { full, mid_channels: mid, spatial, mid_norm, temporal })
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, x: Var, mode: Mode) -> Result<Var> {
        let mut h = self.spatial.forward(g, x)?;
        if let Some(bn) = &self.mid_norm {
            h = bn.forward(g, h, mode)?;
        }
        let h = g.relu(h);
        self.temporal.forward(g, h)
    }

    /// Convolution weights only (norm and bias excluded), comparable to
    /// [`crate::conv::full_3d_params`].
    pub fn weight_count(&self) -> usize {
        self.spatial.spec.weight_count() + self.temporal.spec.weight_count()
    }
}
