//! Central finite-difference oracle for graph gradients.
//!
//! The loss is `sum(out ⊙ r)` for a fixed random projection `r`. Every
//! numeric derivative rebuilds the whole graph from perturbed inputs, so the
//! oracle shares nothing with the backward pass beyond the forward kernels.

#![allow(dead_code)]

use fusion_core::{Graph, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

#[derive(Debug, Clone, Copy)]
pub struct Report {
    pub max_rel_err: f64,
    pub checked: usize,
}

fn projected_loss<F>(store: Option<&ParamStore<f64>>, build: &F, inputs: &[Tensor<f64>], proj: &mut Option<Vec<f64>>, seed: u64) -> (f64, Vec<Vec<f64>>)
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Var,
{
    let mut g = match store {
        Some(s) => Graph::with_params(s),
        None => Graph::new(),
    };
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, &vars);
    let shape = g.shape(out).to_vec();
    let r = proj.get_or_insert_with(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..shape.iter().product::<usize>()).map(|_| rng.random_range(-1.0..1.0)).collect()
    });
    let rv = g.input(Tensor::from_vec(&shape, r.clone()).unwrap());
    let prod = g.mul(out, rv).unwrap();
    let loss = g.sum(prod);
    let value = g.value(loss)[0];
    let grads = g.backward(loss).unwrap();
    let analytic = vars.iter().map(|&v| grads.wrt(v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; g.value(v).len()])).collect();
    (value, analytic)
}

/// Compare analytic and numeric gradients on up to `per_input` coordinates
/// of every input. Relative error is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn check<F>(build: F, inputs: Vec<Tensor<f64>>, per_input: usize, seed: u64) -> Report
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Var,
{
    check_with_store(None, build, inputs, per_input, seed)
}

/// Same as [`check`], but the graph can read parameters and buffers from `store`.
/// Only the explicit inputs are perturbed.
pub fn check_with_store<F>(store: Option<&ParamStore<f64>>, build: F, inputs: Vec<Tensor<f64>>, per_input: usize, seed: u64) -> Report
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Var,
{
    let mut proj = None;
    let (_, analytic) = projected_loss(store, &build, &inputs, &mut proj, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let mut max_rel_err: f64 = 0.0;
    let mut checked = 0;
    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        let coords: Vec<usize> = if n <= per_input { (0..n).collect() } else { (0..per_input).map(|_| rng.random_range(0..n)).collect() };
        for c in coords {
            let mut plus = inputs.clone();
            plus[i].data_mut()[c] += STEP;
            let mut minus = inputs.clone();
            minus[i].data_mut()[c] -= STEP;
            let lp = projected_loss(store, &build, &plus, &mut proj, seed).0;
            let lm = projected_loss(store, &build, &minus, &mut proj, seed).0;
            let numeric = (lp - lm) / (2.0 * STEP);
            let a = analytic[i][c];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            max_rel_err = max_rel_err.max(rel);
            checked += 1;
        }
    }
    Report { max_rel_err, checked }
}
