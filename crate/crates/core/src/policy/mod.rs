//! Set encoders and the policy/value network assemblies built on them.

mod checkpoint;
mod encoder;
mod features;
mod net;

pub use checkpoint::{Checkpoint, ValueNormalization, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoder::{
    concat_features, embed_mean, feature_map_histogram, feature_map_rbf, moment_features,
    pool_max, pool_softmax, Embedding, EmbeddingSpec, EncoderTrace, Moment, SetBatch, SetEncoder,
};
pub use features::{FeatureSpec, ScaledObservation};
pub use net::{PolicyNet, PolicySpec, PolicyTrace};

use rand::Rng;

use crate::env::{Action, ActionBounds};
use crate::numkit::DiagGaussian;

/// Draws `mean + std * z` and clamps it to the action bounds.
pub fn sample_action<R: Rng + ?Sized>(d: &DiagGaussian<f64>, bounds: ActionBounds, rng: &mut R) -> Action {
    let a = d.sample(rng);
    Action::new(a[0], a[1]).clamped(bounds)
}

/// The clamped distribution mean.
pub fn greedy_action(d: &DiagGaussian<f64>, bounds: ActionBounds) -> Action {
    Action::new(d.mean[0], d.mean[1]).clamped(bounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const WIDE: ActionBounds = ActionBounds {
        linear: 100.0,
        angular: 100.0,
    };

    #[test]
    fn vanishing_std_returns_clamped_mean() {
        let d = DiagGaussian::new(vec![2.0, -0.1], vec![-60.0, -60.0]).unwrap();
        let b = ActionBounds {
            linear: 0.5,
            angular: 1.0,
        };
        let a = sample_action(&d, b, &mut ChaCha8Rng::seed_from_u64(0));
        assert!((a.linear - 0.5).abs() < 1e-12);
        assert!((a.angular + 0.1).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_action() {
        let d = DiagGaussian::new(vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        let a = sample_action(&d, WIDE, &mut ChaCha8Rng::seed_from_u64(4));
        let b = sample_action(&d, WIDE, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_mean_within_three_standard_errors() {
        let d = DiagGaussian::new(vec![0.3, -1.2], vec![0.5f64.ln(), 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut sum = [0.0, 0.0];
        for _ in 0..n {
            let a = sample_action(&d, WIDE, &mut rng);
            sum[0] += a.linear;
            sum[1] += a.angular;
        }
        let std = d.std();
        for k in 0..2 {
            let m = sum[k] / n as f64;
            assert!((m - d.mean[k]).abs() < 3.0 * std[k] / (n as f64).sqrt(), "dim {k}: {m}");
        }
    }
}
