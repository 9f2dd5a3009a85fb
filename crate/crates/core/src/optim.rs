//! Global-norm gradient clipping and Adam.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::Gradients;
use crate::params::{ParamKind, ParamStore};
use crate::real::Real;

pub const DEFAULT_CLIP_NORM: f64 = 10.0;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipReport {
    pub norm: f64,
    pub scale: f64,
}

/// Rescale all gradients so their global L2 norm is at most `max_norm`.
pub fn clip_gradients<S: Real>(grads: &mut Gradients<S>, max_norm: f64) -> ClipReport {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        let s = S::of(scale);
        for (_, g) in grads.params_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
        ClipReport { norm, scale }
    } else {
        ClipReport { norm, scale: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: DEFAULT_LEARNING_RATE, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam moments for every trainable tensor of a store, indexed by parameter id.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<Vec<S>>,
    pub second_moment: Vec<Vec<S>>,
}

impl<S: Real> AdamState<S> {
    pub fn new<T: Real>(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<S>> = store
            .entries()
            .map(|(_, e)| if e.kind == ParamKind::Trainable { vec![S::zero(); e.tensor.len()] } else { Vec::new() })
            .collect();
        AdamState { config, step_count: 0, first_moment: zeros.clone(), second_moment: zeros }
    }

    /// One bias-corrected Adam update of every trainable parameter.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &Gradients<S>) -> Result<()> {
        if self.first_moment.len() != store.len() {
            return Err(Error::Shape {
                op: "adam_step",
                detail: format!("state tracks {} tensors, store holds {}", self.first_moment.len(), store.len()),
            });
        }
        for (id, g) in grads.params() {
            if store.entry(id).kind != ParamKind::Trainable || self.first_moment[id.0].len() != g.len() {
                return Err(Error::Shape {
                    op: "adam_step",
                    detail: format!("gradient for `{}` has {} elements", store.entry(id).name, g.len()),
                });
            }
        }
        self.step_count += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let t = self.step_count as f64;
        let bc1 = 1.0 - libm::pow(beta1, t);
        let bc2 = 1.0 - libm::pow(beta2, t);
        let (b1, b2) = (S::of(beta1), S::of(beta2));
        let (ob1, ob2) = (S::of(1.0 - beta1), S::of(1.0 - beta2));
        let step = S::of(learning_rate / bc1);
        let inv_bc2 = S::of(1.0 / bc2);
        let eps = S::of(epsilon);
        for (id, g) in grads.params() {
            let m = &mut self.first_moment[id.0];
            let v = &mut self.second_moment[id.0];
            let p = store.get_mut(id).data_mut();
            for i in 0..g.len() {
                m[i] = b1 * m[i] + ob1 * g[i];
                v[i] = b2 * v[i] + ob2 * g[i] * g[i];
                p[i] -= step * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
