//! Small dense numerical core: row-major matrices, multilayer perceptrons with
//! hand-written backward and forward-tangent passes, diagonal Gaussian
//! distributions, flat parameter plumbing and a conjugate-gradient solver.

mod cg;
mod flat;
mod gaussian;
mod matrix;
mod mlp;

pub use cg::{conjugate_gradient, CgOutcome};
pub use flat::{flatten, unflatten, FlatParams, ParamBlock, ParamLayout};
pub use gaussian::{gaussian_kl, gaussian_logprob, DiagGaussian};
pub use matrix::Matrix;
pub use mlp::{
    mlp_backward, mlp_forward, mlp_forward_batch, mlp_gradient, mlp_jvp, Activation, Layer,
    MlpSpec, MlpTrace,
};

use crate::{Error, Result, Scalar};

pub(crate) fn ensure_finite<T: Scalar>(values: &[T], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}
