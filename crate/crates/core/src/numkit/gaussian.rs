use rand::Rng;
use rand_distr::StandardNormal;

use super::ensure_finite;
use crate::{Error, Result, Scalar};

/// Gaussian with diagonal covariance, parametrised by mean and log standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian<T> {
    pub mean: Vec<T>,
    pub log_std: Vec<T>,
}

impl<T: Scalar> DiagGaussian<T> {
    pub fn new(mean: Vec<T>, log_std: Vec<T>) -> Result<Self> {
        if mean.len() != log_std.len() {
            return Err(Error::shape("DiagGaussian", mean.len(), log_std.len()));
        }
        ensure_finite(&log_std, "log_std")?;
        Ok(DiagGaussian { mean, log_std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<T> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn log_prob(&self, action: &[T]) -> Result<T> {
        gaussian_logprob(self, action)
    }

    /// `KL(self || other)`.
    pub fn kl(&self, other: &DiagGaussian<T>) -> Result<T> {
        gaussian_kl(self, other)
    }

    /// Gradient of `log_prob(action)` with respect to mean and log-std.
    pub fn log_prob_grad(&self, action: &[T]) -> (Vec<T>, Vec<T>) {
        let mut d_mean = Vec::with_capacity(self.dim());
        let mut d_log_std = Vec::with_capacity(self.dim());
        for ((&m, &l), &a) in self.mean.iter().zip(&self.log_std).zip(action) {
            let var = (l + l).exp();
            let diff = a - m;
            d_mean.push(diff / var);
            d_log_std.push(diff * diff / var - T::one());
        }
        (d_mean, d_log_std)
    }

    /// Gradient of `KL(old || self)` with respect to this distribution's mean and log-std.
    pub fn kl_grad_from(&self, old: &DiagGaussian<T>) -> (Vec<T>, Vec<T>) {
        let mut d_mean = Vec::with_capacity(self.dim());
        let mut d_log_std = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let var_new = (self.log_std[k] + self.log_std[k]).exp();
            let var_old = (old.log_std[k] + old.log_std[k]).exp();
            let diff = self.mean[k] - old.mean[k];
            d_mean.push(diff / var_new);
            d_log_std.push(T::one() - (var_old + diff * diff) / var_new);
        }
        (d_mean, d_log_std)
    }

    /// `mean + std * z` with `z` standard normal.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(&m, &l)| {
                let z: f64 = rng.sample(StandardNormal);
                m + l.exp() * T::lit(z)
            })
            .collect()
    }
}

pub fn gaussian_logprob<T: Scalar>(d: &DiagGaussian<T>, action: &[T]) -> Result<T> {
    if action.len() != d.dim() {
        return Err(Error::shape("gaussian_logprob", d.dim(), action.len()));
    }
    let half_ln_2pi = T::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
    let mut acc = T::zero();
    for ((&m, &l), &a) in d.mean.iter().zip(&d.log_std).zip(action) {
        let z = (a - m) / l.exp();
        acc -= T::lit(0.5) * z * z + l + half_ln_2pi;
    }
    Ok(acc)
}

pub fn gaussian_kl<T: Scalar>(old: &DiagGaussian<T>, new: &DiagGaussian<T>) -> Result<T> {
    if old.dim() != new.dim() {
        return Err(Error::shape("gaussian_kl", old.dim(), new.dim()));
    }
    let half = T::lit(0.5);
    let mut acc = T::zero();
    for k in 0..old.dim() {
        let var_old = (old.log_std[k] + old.log_std[k]).exp();
        let var_new = (new.log_std[k] + new.log_std[k]).exp();
        let diff = old.mean[k] - new.mean[k];
        acc += new.log_std[k] - old.log_std[k] + (var_old + diff * diff) / (var_new + var_new)
            - half;
    }
    Ok(acc)
}
