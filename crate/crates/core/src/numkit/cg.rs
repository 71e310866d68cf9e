use super::{axpy, dot, ensure_finite};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone)]
pub struct CgOutcome<T> {
    pub x: Vec<T>,
    /// Euclidean norm of `b - A x` tracked by the recurrence.
    pub residual: T,
    pub iterations: usize,
}

/// Solves `A x = b` for a symmetric positive-definite operator given only
/// through its action `apply_a`, starting from `x = 0`.
pub fn conjugate_gradient<T, F>(
    mut apply_a: F,
    b: &[T],
    max_iters: usize,
    residual_tol: T,
) -> Result<CgOutcome<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> Vec<T>,
{
    let n = b.len();
    let mut x = vec![T::zero(); n];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    while iterations < max_iters && rr.sqrt() > residual_tol {
        let ap = apply_a(&p);
        if ap.len() != n {
            return Err(Error::shape("conjugate_gradient operator", n, ap.len()));
        }
        ensure_finite(&ap, "conjugate gradient operator output")?;
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            return Err(Error::NonFinite("conjugate gradient curvature (operator not positive definite)"));
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_next = dot(&r, &r);
        if !rr_next.is_finite() {
            return Err(Error::NonFinite("conjugate gradient residual"));
        }
        let beta = rr_next / rr;
        for (pi, &ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_next;
        iterations += 1;
    }
    Ok(CgOutcome {
        x,
        residual: rr.sqrt(),
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_converges_in_one_iteration() {
        let b = vec![1.0, -2.0, 3.5];
        let out = conjugate_gradient(|v: &[f64]| v.to_vec(), &b, 10, 1e-12).unwrap();
        assert_eq!(out.iterations, 1);
        for (x, y) in out.x.iter().zip(&b) {
            assert_relative_eq!(x, y, max_relative = 1e-15);
        }
    }

    #[test]
    fn diagonal_system() {
        let out =
            conjugate_gradient(|v: &[f64]| vec![v[0], 2.0 * v[1]], &[1.0, 2.0], 10, 1e-12).unwrap();
        assert_relative_eq!(out.x[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(out.x[1], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn random_spd_matches_dense_cholesky() {
        let n = 50;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let m = nalgebra::DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let a = m.transpose() * &m + nalgebra::DMatrix::<f64>::identity(n, n);
        let b = nalgebra::DVector::<f64>::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let direct = a.clone().cholesky().unwrap().solve(&b);
        let out = conjugate_gradient(
            |v: &[f64]| (&a * nalgebra::DVector::from_column_slice(v)).as_slice().to_vec(),
            b.as_slice(),
            4 * n,
            1e-12,
        )
        .unwrap();
        assert!(out.residual <= 1e-8);
        for i in 0..n {
            assert!((out.x[i] - direct[i]).abs() < 1e-8, "{i}");
        }
    }

    #[test]
    fn indefinite_operator_is_reported() {
        let res = conjugate_gradient(|v: &[f64]| vec![-v[0], v[1]], &[1.0, 1.0], 5, 1e-12);
        assert!(res.is_err());
        let res = conjugate_gradient(|_: &[f64]| vec![f64::NAN, 0.0], &[1.0, 1.0], 5, 1e-12);
        assert!(matches!(res, Err(Error::NonFinite(_))));
    }
}
