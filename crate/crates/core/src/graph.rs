//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in creation order, which is already a
//! topological order, so the backward pass is a single reverse sweep that
//! visits each node once. Parameters are read in place from a borrowed
//! [`ParamStore`]; batch-norm running statistics computed in training mode are
//! queued as updates and applied by the caller once the graph is dropped.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{conv_backward, conv_forward, ConvGeometry, ConvSpec};
use crate::error::{shape_err, Error, Result};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::real::{gemm, Mat, Real};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-norm statistics source.
#[derive(Debug, Clone, Copy)]
pub enum NormMode {
    /// Normalize with batch statistics and queue a running-statistics update.
    Batch { momentum: f64, running: Option<(ParamId, ParamId)> },
    /// Normalize with frozen running statistics read from the store.
    Frozen { running: (ParamId, ParamId) },
}

enum Op<S> {
    Leaf,
    Param(ParamId),
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeometry },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    ScaleBy(Var, Var),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    MaxPool { x: Var, argmax: Vec<usize> },
    GlobalAvgPool(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<S>, inv_std: Vec<S>, batch_stats: bool },
    Linear { x: Var, w: Var, b: Option<Var> },
    Concat(Vec<Var>),
    Softmax(Var),
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<S> },
    Dropout { x: Var, mask: Vec<S> },
    Reshape(Var),
}

struct Node<S> {
    shape: Vec<usize>,
    value: Vec<S>,
    op: Op<S>,
    requires_grad: bool,
}

pub struct Graph<'s, S: Real> {
    store: Option<&'s ParamStore<S>>,
    nodes: Vec<Node<S>>,
    param_nodes: Vec<Option<Var>>,
    stat_updates: Vec<(ParamId, Vec<S>)>,
}

impl<S: Real> Default for Graph<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'s, S: Real> Graph<'s, S> {
    /// A graph without parameter storage; all tensors enter as inputs.
    pub fn new() -> Self {
        Graph { store: None, nodes: Vec::new(), param_nodes: Vec::new(), stat_updates: Vec::new() }
    }

    pub fn with_params(store: &'s ParamStore<S>) -> Self {
        Graph { store: Some(store), nodes: Vec::new(), param_nodes: vec![None; store.len()], stat_updates: Vec::new() }
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<S>, op: Op<S>) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || shape.iter().product::<usize>() == value.len());
        let requires_grad = self.derive_requires(&op);
        self.nodes.push(Node { shape, value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn derive_requires(&self, op: &Op<S>) -> bool {
        let r = |v: &Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf => true,
            Op::Param(id) => self.store.map(|s| s.entry(*id).kind == ParamKind::Trainable).unwrap_or(false),
            Op::Conv { x, w, b, .. } => r(x) || r(w) || b.as_ref().is_some_and(r),
            Op::Linear { x, w, b } => r(x) || r(w) || b.as_ref().is_some_and(r),
            Op::BatchNorm { x, gamma, beta, .. } => r(x) || r(gamma) || r(beta),
            Op::Add(a, b) | Op::Mul(a, b) | Op::ScaleBy(a, b) => r(a) || r(b),
            Op::Concat(parts) => parts.iter().any(r),
            Op::Scale(x, _)
            | Op::Relu(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Reshape(x)
            | Op::GlobalAvgPool(x)
            | Op::Softmax(x)
            | Op::MaxPool { x, .. }
            | Op::Dropout { x, .. } => r(x),
            Op::SoftmaxCrossEntropy { logits, .. } => r(logits),
        }
    }

    fn store(&self) -> Result<&'s ParamStore<S>> {
        self.store.ok_or_else(|| Error::InvalidArgument("graph has no parameter store".into()))
    }

    /// Differentiable input leaf; its gradient is available from [`Gradients::wrt`].
    pub fn input(&mut self, tensor: Tensor<S>) -> Var {
        let shape = tensor.shape().to_vec();
        self.push(shape, tensor.into_data(), Op::Leaf)
    }

    /// Input leaf that never receives a gradient (network inputs).
    pub fn constant(&mut self, tensor: Tensor<S>) -> Var {
        let v = self.input(tensor);
        self.nodes[v.0].requires_grad = false;
        v
    }

    /// Parameter leaf; repeated calls with the same id return the same node.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        let store = self.store()?;
        if let Some(v) = self.param_nodes.get(id.0).copied().flatten() {
            return Ok(v);
        }
        if id.0 >= store.len() {
            return Err(Error::UnknownParam(format!("#{}", id.0)));
        }
        let shape = store.get(id).shape().to_vec();
        let v = self.push(shape, Vec::new(), Op::Param(id));
        self.param_nodes[id.0] = Some(v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &[S] {
        match self.nodes[v.0].op {
            Op::Param(id) => self.store.expect("param node without store").get(id).data(),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<S> {
        Tensor::from_vec(self.shape(v), self.value(v).to_vec()).expect("node shape invariant")
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Running-statistics updates queued by training-mode batch norms.
    pub fn stat_updates(&self) -> &[(ParamId, Vec<S>)] {
        &self.stat_updates
    }

    pub fn into_stat_updates(self) -> Vec<(ParamId, Vec<S>)> {
        self.stat_updates
    }

    // ---------------------------------------------------------------- ops

    /// 3D cross-correlation on `[N, C, T, H, W]` with weight `[C', C, kt, d, d]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        let geom = ConvGeometry::resolve(spec, self.shape(x))?;
        self.conv_common(x, w, b, spec, geom, None)
    }

    /// 2D cross-correlation on `[N, C, H, W]` with weight `[C', C, d, d]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(shape_err("conv2d", format!("expected [N,C,H,W], got {s:?}")));
        }
        if spec.kernel_time != 1 || spec.stride[0] != 1 || spec.padding[0] != 0 {
            return Err(Error::InvalidArgument(format!("conv2d needs a purely spatial spec: {spec:?}")));
        }
        let geom = ConvGeometry::resolve(spec, &[s[0], s[1], 1, s[2], s[3]])?;
        let out_shape = vec![geom.batch, geom.c_out, geom.output[1], geom.output[2]];
        self.conv_common(x, w, b, spec, geom, Some(out_shape))
    }

    fn conv_common(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: &ConvSpec,
        geom: ConvGeometry,
        out_shape: Option<Vec<usize>>,
    ) -> Result<Var> {
        let wshape = self.shape(w);
        let expected = spec.weight_count();
        let ok = wshape.iter().product::<usize>() == expected
            && wshape.first() == Some(&spec.out_channels)
            && wshape.get(1) == Some(&spec.in_channels);
        if !ok {
            return Err(shape_err("conv", format!("weight shape {wshape:?} does not match {:?}", spec.weight_shape())));
        }
        if let Some(b) = b {
            if self.shape(b) != [spec.out_channels] {
                return Err(shape_err("conv", format!("bias shape {:?}, expected [{}]", self.shape(b), spec.out_channels)));
            }
        }
        let out = conv_forward(&geom, self.value(x), self.value(w), b.map(|b| self.value(b)));
        let shape = out_shape.unwrap_or_else(|| geom.output_shape());
        Ok(self.push(shape, out, Op::Conv { x, w, b, geom }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: S) -> Var {
        let out = self.value(x).iter().map(|&v| v * factor).collect();
        self.push(self.shape(x).to_vec(), out, Op::Scale(x, factor))
    }

    /// Multiply every element of `x` by the single element of `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(shape_err("scale_by", format!("scale must hold one element, shape {:?}", self.shape(s))));
        }
        let f = self.value(s)[0];
        let out = self.value(x).iter().map(|&v| v * f).collect();
        Ok(self.push(self.shape(x).to_vec(), out, Op::ScaleBy(x, s)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| if v > S::zero() { v } else { S::zero() }).collect();
        self.push(self.shape(x).to_vec(), out, Op::Relu(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().fold(S::zero(), |a, &v| a + v);
        self.push(vec![1], vec![total], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = S::of(self.value(x).len() as f64);
        let total = self.value(x).iter().fold(S::zero(), |a, &v| a + v);
        self.push(vec![1], vec![total / n], Op::Mean(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(shape_err("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        let out = self.value(x).to_vec();
        Ok(self.push(shape.to_vec(), out, Op::Reshape(x)))
    }

    /// Max pooling over the last two axes with `-inf` padding.
    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 3 || kernel == 0 || stride == 0 {
            return Err(shape_err("max_pool2d", format!("input {shape:?}, kernel {kernel}, stride {stride}")));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if h + 2 * padding < kernel || w + 2 * padding < kernel || padding * 2 > kernel {
            return Err(shape_err("max_pool2d", format!("input {h}x{w} too small for kernel {kernel}")));
        }
        let ho = (h + 2 * padding - kernel) / stride + 1;
        let wo = (w + 2 * padding - kernel) / stride + 1;
        let planes: usize = shape[..shape.len() - 2].iter().product();
        let xv = self.value(x);
        let mut out = Vec::with_capacity(planes * ho * wo);
        let mut argmax = Vec::with_capacity(planes * ho * wo);
        for p in 0..planes {
            let base = p * h * w;
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = S::neg_infinity();
                    let mut best_i = usize::MAX;
                    for kh in 0..kernel {
                        let ih = (oh * stride + kh) as isize - padding as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for kw in 0..kernel {
                            let iw = (ow * stride + kw) as isize - padding as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            let idx = base + ih as usize * w + iw as usize;
                            if best_i == usize::MAX || xv[idx] > best {
                                best = xv[idx];
                                best_i = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_i);
                }
            }
        }
        let mut oshape = shape[..shape.len() - 2].to_vec();
        oshape.extend_from_slice(&[ho, wo]);
        Ok(self.push(oshape, out, Op::MaxPool { x, argmax }))
    }

    /// Average over every axis after the channel axis: `[N, C, ...] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 3 {
            return Err(shape_err("global_avg_pool", format!("expected [N,C,...], got {shape:?}")));
        }
        let plane: usize = shape[2..].iter().product();
        let inv = S::one() / S::of(plane as f64);
        let out = self.value(x).chunks_exact(plane).map(|c| c.iter().fold(S::zero(), |a, &v| a + v) * inv).collect();
        Ok(self.push(vec![shape[0], shape[1]], out, Op::GlobalAvgPool(x)))
    }

    /// Per-channel batch normalization of `[N, C, ...]`.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, mode: NormMode, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(shape_err("batch_norm", format!("expected [N,C,...], got {shape:?}")));
        }
        let (n, c) = (shape[0], shape[1]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err("batch_norm", format!("affine params must be [{c}]")));
        }
        let sp: usize = shape[2..].iter().product();
        let count = n * sp;
        let xv = self.value(x);
        let (mean, var, batch_stats) = match mode {
            NormMode::Batch { momentum, running } => {
                if n < 2 {
                    return Err(Error::BatchTooSmall(n));
                }
                let mut mean = vec![0.0f64; c];
                let mut var = vec![0.0f64; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for b in 0..n {
                        s += xv[(b * c + ch) * sp..(b * c + ch + 1) * sp].iter().map(|v| v.as_f64()).sum::<f64>();
                    }
                    let m = s / count as f64;
                    let mut q = 0.0;
                    for b in 0..n {
                        q += xv[(b * c + ch) * sp..(b * c + ch + 1) * sp]
                            .iter()
                            .map(|v| {
                                let d = v.as_f64() - m;
                                d * d
                            })
                            .sum::<f64>();
                    }
                    mean[ch] = m;
                    var[ch] = q / count as f64;
                }
                if let Some((rm, rv)) = running {
                    let store = self.store()?;
                    let unbiased = count as f64 / (count as f64 - 1.0).max(1.0);
                    let new_mean = store
                        .get(rm)
                        .data()
                        .iter()
                        .zip(&mean)
                        .map(|(&r, &m)| S::of((1.0 - momentum) * r.as_f64() + momentum * m))
                        .collect();
                    let new_var = store
                        .get(rv)
                        .data()
                        .iter()
                        .zip(&var)
                        .map(|(&r, &v)| S::of((1.0 - momentum) * r.as_f64() + momentum * v * unbiased))
                        .collect();
                    self.stat_updates.push((rm, new_mean));
                    self.stat_updates.push((rv, new_var));
                }
                (mean, var, true)
            }
            NormMode::Frozen { running: (rm, rv) } => {
                let store = self.store()?;
                let mean: Vec<f64> = store.get(rm).data().iter().map(|v| v.as_f64()).collect();
                let var: Vec<f64> = store.get(rv).data().iter().map(|v| v.as_f64()).collect();
                if mean.len() != c || var.len() != c {
                    return Err(shape_err("batch_norm", format!("running statistics must be [{c}]")));
                }
                (mean, var, false)
            }
        };
        let inv_std: Vec<S> = var.iter().map(|&v| S::of(1.0 / libm::sqrt(v + eps))).collect();
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![S::zero(); xv.len()];
        let mut out = vec![S::zero(); xv.len()];
        for b in 0..n {
            for ch in 0..c {
                let m = S::of(mean[ch]);
                let range = (b * c + ch) * sp..(b * c + ch + 1) * sp;
                for i in range {
                    let h = (xv[i] - m) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gv[ch] * h + bv[ch];
                }
            }
        }
        Ok(self.push(shape, out, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats }))
    }

    /// `x [N, in] · wᵀ [in, out] + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err("linear", format!("input {xs:?}, weight {ws:?}")));
        }
        let (n, fin, fout) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.shape(b) != [fout] {
                return Err(shape_err("linear", format!("bias {:?}, expected [{fout}]", self.shape(b))));
            }
        }
        let mut out = match b {
            Some(b) => {
                let bv = self.value(b);
                let mut o = Vec::with_capacity(n * fout);
                for _ in 0..n {
                    o.extend_from_slice(bv);
                }
                o
            }
            None => vec![S::zero(); n * fout],
        };
        gemm(Mat::new(self.value(x), n, fin), Mat::new(self.value(w), fout, fin).t(), S::one(), &mut out);
        Ok(self.push(vec![n, fout], out, Op::Linear { x, w, b }))
    }

    /// Concatenate `[N, d_i]` tensors along the feature axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat"))?;
        let n = self.shape(first)[0];
        let mut width = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != n {
                return Err(shape_err("concat", format!("part {s:?} incompatible with batch {n}")));
            }
            width += s[1];
        }
        let mut out = Vec::with_capacity(n * width);
        for row in 0..n {
            for &p in parts {
                let d = self.shape(p)[1];
                out.extend_from_slice(&self.value(p)[row * d..(row + 1) * d]);
            }
        }
        Ok(self.push(vec![n, width], out, Op::Concat(parts.to_vec())))
    }

    /// Row-wise softmax of `[N, C]`.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(shape_err("softmax", format!("expected [N,C], got {s:?}")));
        }
        let out = softmax_rows(self.value(x), s[1]);
        Ok(self.push(s, out, Op::Softmax(x)))
    }

    /// Mean cross-entropy of `logits [N, C]` against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(shape_err("softmax_cross_entropy", format!("logits {s:?}, {} labels", labels.len())));
        }
        let c = s[1];
        if let Some(&label) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
        let lv = self.value(logits);
        let mut loss = 0.0f64;
        for (row, &label) in labels.iter().enumerate() {
            let r = &lv[row * c..(row + 1) * c];
            let max = r.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
            let lse = max + libm::log(r.iter().map(|v| libm::exp(v.as_f64() - max)).sum::<f64>());
            loss += lse - r[label].as_f64();
        }
        let probs = softmax_rows(lv, c);
        let value = S::of(loss / labels.len() as f64);
        Ok(self.push(vec![1], vec![value], Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec(), probs }))
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by `1/(1-p)`.
    pub fn dropout(&mut self, x: Var, p: f64, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout probability {p} outside [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = S::of(1.0 / (1.0 - p));
        let mask: Vec<S> =
            (0..self.value(x).len()).map(|_| if rng.random::<f64>() < p { S::zero() } else { keep }).collect();
        let out = self.value(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        Ok(self.push(self.shape(x).to_vec(), out, Op::Dropout { x, mask }))
    }

    // ----------------------------------------------------------- backward

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);
        let mut leaves = Vec::new();
        let mut params: Vec<Option<Vec<S>>> = self.store.map(|s| (0..s.len()).map(|_| None).collect()).unwrap_or_default();

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => leaves.push((Var(idx), dy)),
                Op::Param(id) => params[id.0] = Some(dy),
                Op::Conv { x, w, b, geom } => {
                    let want = [self.needs(*x), self.needs(*w), b.map(|b| self.needs(b)).unwrap_or(false)];
                    let g = conv_backward(geom, self.value(*x), self.value(*w), &dy, want);
                    if let Some(dx) = g.input {
                        accumulate(&mut grads, *x, dx);
                    }
                    if let Some(dw) = g.weight {
                        accumulate(&mut grads, *w, dw);
                    }
                    if let (Some(b), Some(db)) = (b, g.bias) {
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, dy.clone());
                    accumulate(&mut grads, *a, dy);
                }
                Op::Mul(a, b) => {
                    let da = dy.iter().zip(self.value(*b)).map(|(&g, &v)| g * v).collect();
                    let db = dy.iter().zip(self.value(*a)).map(|(&g, &v)| g * v).collect();
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(x, f) => accumulate(&mut grads, *x, dy.iter().map(|&g| g * *f).collect()),
                Op::ScaleBy(x, s) => {
                    let f = self.value(*s)[0];
                    let ds = dy.iter().zip(self.value(*x)).fold(S::zero(), |a, (&g, &v)| a + g * v);
                    accumulate(&mut grads, *x, dy.iter().map(|&g| g * f).collect());
                    accumulate(&mut grads, *s, vec![ds]);
                }
                Op::Relu(x) => {
                    let dx = dy.iter().zip(&node.value).map(|(&g, &y)| if y > S::zero() { g } else { S::zero() }).collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sum(x) => accumulate(&mut grads, *x, vec![dy[0]; self.value(*x).len()]),
                Op::Mean(x) => {
                    let n = self.value(*x).len();
                    accumulate(&mut grads, *x, vec![dy[0] / S::of(n as f64); n]);
                }
                Op::Reshape(x) => accumulate(&mut grads, *x, dy),
                Op::MaxPool { x, argmax } => {
                    let mut dx = vec![S::zero(); self.value(*x).len()];
                    for (&i, &g) in argmax.iter().zip(&dy) {
                        dx[i] += g;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::GlobalAvgPool(x) => {
                    let len = self.value(*x).len();
                    let plane = len / dy.len();
                    let inv = S::one() / S::of(plane as f64);
                    let mut dx = Vec::with_capacity(len);
                    for &g in &dy {
                        dx.extend(core::iter::repeat_n(g * inv, plane));
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                    let (n, c) = (node.shape[0], node.shape[1]);
                    let sp: usize = node.shape[2..].iter().product();
                    let count = (n * sp) as f64;
                    let gv = self.value(*gamma);
                    let mut dgamma = vec![0.0f64; c];
                    let mut dbeta = vec![0.0f64; c];
                    for b in 0..n {
                        for ch in 0..c {
                            for i in (b * c + ch) * sp..(b * c + ch + 1) * sp {
                                dgamma[ch] += (dy[i] * xhat[i]).as_f64();
                                dbeta[ch] += dy[i].as_f64();
                            }
                        }
                    }
                    let mut dx = vec![S::zero(); dy.len()];
                    for b in 0..n {
                        for ch in 0..c {
                            let g = gv[ch];
                            let is = inv_std[ch];
                            for i in (b * c + ch) * sp..(b * c + ch + 1) * sp {
                                dx[i] = if *batch_stats {
                                    // sum(dxhat) = gamma*dbeta and sum(dxhat*xhat) = gamma*dgamma
                                    let dxh = (dy[i] * g).as_f64();
                                    let v = dxh - g.as_f64() * dbeta[ch] / count - xhat[i].as_f64() * g.as_f64() * dgamma[ch] / count;
                                    S::of(v * is.as_f64())
                                } else {
                                    dy[i] * g * is
                                };
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, dgamma.into_iter().map(S::of).collect());
                    accumulate(&mut grads, *beta, dbeta.into_iter().map(S::of).collect());
                }
                Op::Linear { x, w, b } => {
                    let (n, fout) = (node.shape[0], node.shape[1]);
                    let fin = self.shape(*x)[1];
                    if self.needs(*x) {
                        let mut dx = vec![S::zero(); n * fin];
                        gemm(Mat::new(&dy, n, fout), Mat::new(self.value(*w), fout, fin), S::zero(), &mut dx);
                        accumulate(&mut grads, *x, dx);
                    }
                    if self.needs(*w) {
                        let mut dw = vec![S::zero(); fout * fin];
                        gemm(Mat::new(&dy, n, fout).t(), Mat::new(self.value(*x), n, fin), S::zero(), &mut dw);
                        accumulate(&mut grads, *w, dw);
                    }
                    if let Some(b) = b {
                        let mut db = vec![S::zero(); fout];
                        for row in dy.chunks_exact(fout) {
                            for (d, &g) in db.iter_mut().zip(row) {
                                *d += g;
                            }
                        }
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Concat(parts) => {
                    let (n, width) = (node.shape[0], node.shape[1]);
                    let mut offset = 0;
                    for &p in parts {
                        let d = self.shape(p)[1];
                        let mut dp = Vec::with_capacity(n * d);
                        for row in 0..n {
                            dp.extend_from_slice(&dy[row * width + offset..row * width + offset + d]);
                        }
                        offset += d;
                        accumulate(&mut grads, p, dp);
                    }
                }
                Op::Softmax(x) => {
                    let c = node.shape[1];
                    let mut dx = vec![S::zero(); dy.len()];
                    for ((drow, yrow), grow) in dx.chunks_exact_mut(c).zip(node.value.chunks_exact(c)).zip(dy.chunks_exact(c)) {
                        let dot = yrow.iter().zip(grow).fold(S::zero(), |a, (&y, &g)| a + y * g);
                        for ((d, &y), &g) in drow.iter_mut().zip(yrow).zip(grow) {
                            *d = y * (g - dot);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                    let c = self.shape(*logits)[1];
                    let scale = dy[0] / S::of(labels.len() as f64);
                    let mut dx: Vec<S> = probs.iter().map(|&p| p * scale).collect();
                    for (row, &label) in labels.iter().enumerate() {
                        dx[row * c + label] -= scale;
                    }
                    accumulate(&mut grads, *logits, dx);
                }
                Op::Dropout { x, mask } => {
                    accumulate(&mut grads, *x, dy.iter().zip(mask).map(|(&g, &m)| g * m).collect());
                }
            }
        }

        if let Some(store) = self.store {
            for (id, entry) in store.entries() {
                if entry.kind == ParamKind::Trainable && params[id.0].is_none() {
                    params[id.0] = Some(vec![S::zero(); entry.tensor.len()]);
                }
            }
        }
        Ok(Gradients { params, leaves })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }
}

fn accumulate<S: Real>(grads: &mut [Option<Vec<S>>], v: Var, contribution: Vec<S>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

pub(crate) fn softmax_rows<S: Real>(values: &[S], c: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(values.len());
    for row in values.chunks_exact(c) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let exps: Vec<f64> = row.iter().map(|v| libm::exp(v.as_f64() - max)).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|&e| S::of(e / total)));
    }
    out
}

/// Gradients produced by [`Graph::backward`].
///
/// Every trainable parameter of the store has an entry; parameters the loss
/// does not reach hold zeros.
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    params: Vec<Option<Vec<S>>>,
    leaves: Vec<(Var, Vec<S>)>,
}

impl<S: Real> Gradients<S> {
    pub fn param(&self, id: ParamId) -> Option<&[S]> {
        self.params.get(id.0).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to an input leaf.
    pub fn wrt(&self, v: Var) -> Option<&[S]> {
        self.leaves.iter().find(|(l, _)| *l == v).map(|(_, g)| g.as_slice())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Vec<S>)> {
        self.params.iter_mut().enumerate().filter_map(|(i, g)| g.as_mut().map(|g| (ParamId(i), g)))
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[S])> {
        self.params.iter().enumerate().filter_map(|(i, g)| g.as_deref().map(|g| (ParamId(i), g)))
    }

    /// Global L2 norm over every parameter gradient, accumulated in f64.
    pub fn global_norm(&self) -> f64 {
        libm::sqrt(self.params().flat_map(|(_, g)| g.iter()).map(|v| v.as_f64() * v.as_f64()).sum::<f64>())
    }

    /// Build gradients directly, e.g. for optimizer tests.
    pub fn from_params(params: Vec<Option<Vec<S>>>) -> Self {
        Gradients { params, leaves: Vec::new() }
    }
}

impl<S: Real> ParamStore<S> {
    /// Apply queued running-statistics updates.
    pub fn apply_stat_updates(&mut self, updates: Vec<(ParamId, Vec<S>)>) {
        for (id, values) in updates {
            self.get_mut(id).data_mut().copy_from_slice(&values);
        }
    }
}
