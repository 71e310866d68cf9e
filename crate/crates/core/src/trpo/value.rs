//! Value baseline: regression on normalized Monte-Carlo returns and the
//! advantages derived from it.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::batch::{standardize, Batch};
use super::update::{chunks, network_outputs};
use crate::env::ObservationSet;
use crate::numkit::Matrix;
use crate::policy::{PolicyNet, ValueNormalization};
use crate::{Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Descends along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Mean and standard deviation of `returns`, with the previous scale kept when
/// the returns are constant.
pub fn return_statistics(returns: &[f64], previous: ValueNormalization) -> ValueNormalization {
    if returns.is_empty() {
        return previous;
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let std = (returns.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n).sqrt();
    ValueNormalization {
        mean,
        scale: if std > 1e-8 { std } else { previous.scale },
    }
}

/// Switches the value normalization to `new` while leaving the predicted
/// returns unchanged, by rescaling the output layer.
pub fn renormalize(net: &PolicyNet, params: &mut [f64], old: ValueNormalization, new: ValueNormalization) {
    let last = net.trunk().layers().len() - 1;
    let layout = net.layout();
    let (Some(w), Some(b)) = (
        layout.block(&format!("trunk.w{last}")),
        layout.block(&format!("trunk.b{last}")),
    ) else {
        return;
    };
    let ratio = old.scale / new.scale;
    for p in &mut params[w.range()] {
        *p *= ratio;
    }
    for p in &mut params[b.range()] {
        *p = (old.scale * *p + old.mean - new.mean) / new.scale;
    }
}

/// Predicted returns `mean + scale * V(o)`.
pub fn predict_returns(
    net: &PolicyNet,
    params: &[f64],
    norm: ValueNormalization,
    obs: &[&ObservationSet<f64>],
) -> Result<Vec<f64>> {
    let out = network_outputs(net, params, obs)?;
    Ok(out.as_slice().iter().map(|v| norm.mean + norm.scale * v).collect())
}

fn normalized_mse(net: &PolicyNet, params: &[f64], obs: &[&ObservationSet<f64>], targets: &[f64]) -> Result<f64> {
    let out = network_outputs(net, params, obs)?;
    let sse: f64 = out.as_slice().iter().zip(targets).map(|(p, y)| (p - y).powi(2)).sum();
    Ok(sse / targets.len().max(1) as f64)
}

fn mse_gradient(
    net: &PolicyNet,
    params: &[f64],
    obs: &[&ObservationSet<f64>],
    targets: &[f64],
) -> Result<Vec<f64>> {
    let scale = 2.0 / obs.len() as f64;
    let parts = chunks(obs.len())
        .into_par_iter()
        .map(|r| {
            let trace = net.forward_batch(params, &obs[r.clone()])?;
            let d: Vec<f64> = r
                .clone()
                .enumerate()
                .map(|(row, i)| scale * (trace.output().row(row)[0] - targets[i]))
                .collect();
            let d_out = Matrix::from_vec(r.len(), 1, d)?;
            let mut g = vec![0.0; net.num_params()];
            net.backward(params, &trace, &d_out, None, &mut g);
            Ok(g)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let mut g = vec![0.0; net.num_params()];
    for p in parts {
        for (a, b) in g.iter_mut().zip(p) {
            *a += b;
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueFit {
    /// Mean squared error on the normalized targets before and after fitting.
    pub loss_before: f64,
    pub loss_after: f64,
}

/// Regresses the value network on `returns` with shuffled mini-batch Adam
/// steps. Targets are `(G - mean) / scale` under `norm`.
#[allow(clippy::too_many_arguments)]
pub fn fit_value<R: Rng + ?Sized>(
    net: &PolicyNet,
    params: &mut [f64],
    norm: ValueNormalization,
    obs: &[&ObservationSet<f64>],
    returns: &[f64],
    epochs: usize,
    minibatch: usize,
    opt: &mut Adam,
    rng: &mut R,
) -> Result<ValueFit> {
    if obs.len() != returns.len() {
        return Err(Error::shape("fit_value returns", obs.len(), returns.len()));
    }
    let targets: Vec<f64> = returns.iter().map(|g| (g - norm.mean) / norm.scale).collect();
    let loss_before = normalized_mse(net, params, obs, &targets)?;
    if epochs == 0 || obs.is_empty() {
        return Ok(ValueFit {
            loss_before,
            loss_after: loss_before,
        });
    }
    let mut order: Vec<usize> = (0..obs.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for idx in order.chunks(minibatch.max(1)) {
            let mb_obs: Vec<&ObservationSet<f64>> = idx.iter().map(|&i| obs[i]).collect();
            let mb_y: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
            let g = mse_gradient(net, params, &mb_obs, &mb_y)?;
            opt.step(params, &g);
        }
    }
    let loss_after = normalized_mse(net, params, obs, &targets)?;
    if !loss_after.is_finite() {
        return Err(Error::NonFinite("value loss"));
    }
    Ok(ValueFit {
        loss_before,
        loss_after,
    })
}

/// `A = G - V(o)`, standardized over the batch.
pub fn compute_advantages(
    net: &PolicyNet,
    params: &[f64],
    norm: ValueNormalization,
    batch: &mut Batch,
) -> Result<()> {
    if batch.returns.len() != batch.len() {
        return Err(Error::shape("returns", batch.len(), batch.returns.len()));
    }
    let values = predict_returns(net, params, norm, &batch.observations())?;
    let mut adv: Vec<f64> = batch.returns.iter().zip(&values).map(|(g, v)| g - v).collect();
    standardize(&mut adv);
    batch.advantages = adv;
    Ok(())
}
