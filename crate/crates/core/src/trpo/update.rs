//! Surrogate objective, KL constraint, their gradients, Fisher-vector products
//! and the constrained natural-gradient step.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::batch::Batch;
use super::config::TrainerConfig;
use crate::env::ObservationSet;
use crate::numkit::{conjugate_gradient, dot, Matrix};
use crate::policy::{PolicyNet, PolicyTrace};
use crate::{Error, Result};

/// Observations per forward pass; also the unit of parallel work.
pub(crate) const CHUNK: usize = 512;

pub(crate) fn chunks(n: usize) -> Vec<Range<usize>> {
    (0..n.div_ceil(CHUNK))
        .map(|c| c * CHUNK..((c + 1) * CHUNK).min(n))
        .collect()
}

/// Network outputs for every observation, computed chunk by chunk.
pub fn network_outputs(net: &PolicyNet, params: &[f64], obs: &[&ObservationSet<f64>]) -> Result<Matrix<f64>> {
    let parts = chunks(obs.len())
        .into_par_iter()
        .map(|r| net.forward_batch(params, &obs[r]).map(|t| t.output().clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(obs.len() * net.outputs());
    for p in parts {
        data.extend_from_slice(p.as_slice());
    }
    Matrix::from_vec(obs.len(), net.outputs(), data)
}

fn sum_gradients(parts: Vec<Vec<f64>>, n: usize) -> Vec<f64> {
    let mut g = vec![0.0; n];
    for p in parts {
        for (a, b) in g.iter_mut().zip(p) {
            *a += b;
        }
    }
    g
}

fn log_prob(mean: &[f64], log_std: &[f64], action: &[f64; 2]) -> f64 {
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((&m, &l), &a)| {
            let z = (a - m) / l.exp();
            -(0.5 * z * z + l + half_ln_2pi)
        })
        .sum()
}

fn check_advantages(batch: &Batch) -> Result<()> {
    if batch.advantages.len() != batch.len() {
        return Err(Error::shape("advantages", batch.len(), batch.advantages.len()));
    }
    if batch.is_empty() {
        return Err(Error::config("empty batch"));
    }
    Ok(())
}

fn surrogate_from_outputs(means: &Matrix<f64>, log_std: &[f64], batch: &Batch) -> Result<f64> {
    let mut acc = 0.0;
    for (i, t) in batch.transitions.iter().enumerate() {
        let ratio = (log_prob(means.row(i), log_std, &t.action) - t.log_prob).exp();
        if !ratio.is_finite() {
            return Err(Error::NonFinite("importance ratio"));
        }
        acc += ratio * batch.advantages[i];
    }
    Ok(acc / batch.len() as f64)
}

fn kl_from_outputs(old: &Matrix<f64>, old_log_std: &[f64], new: &Matrix<f64>, new_log_std: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..old.rows() {
        for k in 0..old.cols() {
            let var_old = (2.0 * old_log_std[k]).exp();
            let var_new = (2.0 * new_log_std[k]).exp();
            let diff = new.row(i)[k] - old.row(i)[k];
            acc += new_log_std[k] - old_log_std[k] + (var_old + diff * diff) / (2.0 * var_new) - 0.5;
        }
    }
    acc / old.rows().max(1) as f64
}

/// `mean_i exp(log pi(a_i | o_i) - log pi_old(a_i | o_i)) * A_i`.
pub fn surrogate_loss(net: &PolicyNet, params: &[f64], batch: &Batch) -> Result<f64> {
    check_advantages(batch)?;
    let means = network_outputs(net, params, &batch.observations())?;
    surrogate_from_outputs(&means, net.log_std(params), batch)
}

/// Batch mean of `KL(pi_old(.|o) || pi(.|o))`.
pub fn mean_kl(net: &PolicyNet, old_params: &[f64], params: &[f64], batch: &Batch) -> Result<f64> {
    let obs = batch.observations();
    let old = network_outputs(net, old_params, &obs)?;
    let new = network_outputs(net, params, &obs)?;
    Ok(kl_from_outputs(&old, net.log_std(old_params), &new, net.log_std(params)))
}

/// Gradient of [`surrogate_loss`] with respect to the policy parameters.
pub fn surrogate_gradient(net: &PolicyNet, params: &[f64], batch: &Batch) -> Result<Vec<f64>> {
    check_advantages(batch)?;
    let obs = batch.observations();
    let log_std = net.log_std(params);
    let inv_var: Vec<f64> = log_std.iter().map(|l| (-2.0 * l).exp()).collect();
    let scale = 1.0 / batch.len() as f64;
    let parts = chunks(batch.len())
        .into_par_iter()
        .map(|r| {
            let trace = net.forward_batch(params, &obs[r.clone()])?;
            let mut d_out = Matrix::zeros(r.len(), net.outputs());
            let mut d_ls = vec![0.0; net.outputs()];
            for (row, i) in r.enumerate() {
                let t = &batch.transitions[i];
                let mean = trace.output().row(row);
                let ratio = (log_prob(mean, log_std, &t.action) - t.log_prob).exp();
                if !ratio.is_finite() {
                    return Err(Error::NonFinite("importance ratio"));
                }
                let w = ratio * batch.advantages[i] * scale;
                for k in 0..net.outputs() {
                    let diff = t.action[k] - mean[k];
                    d_out.row_mut(row)[k] = w * diff * inv_var[k];
                    d_ls[k] += w * (diff * diff * inv_var[k] - 1.0);
                }
            }
            let mut g = vec![0.0; net.num_params()];
            net.backward(params, &trace, &d_out, Some(&d_ls), &mut g);
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sum_gradients(parts, net.num_params()))
}

/// Gradient of [`mean_kl`] with respect to `params` (the new policy).
pub fn mean_kl_gradient(net: &PolicyNet, old_params: &[f64], params: &[f64], batch: &Batch) -> Result<Vec<f64>> {
    let obs = batch.observations();
    let old = network_outputs(net, old_params, &obs)?;
    let old_var: Vec<f64> = net.log_std(old_params).iter().map(|l| (2.0 * l).exp()).collect();
    let inv_var: Vec<f64> = net.log_std(params).iter().map(|l| (-2.0 * l).exp()).collect();
    let scale = 1.0 / batch.len().max(1) as f64;
    let parts = chunks(batch.len())
        .into_par_iter()
        .map(|r| {
            let trace = net.forward_batch(params, &obs[r.clone()])?;
            let mut d_out = Matrix::zeros(r.len(), net.outputs());
            let mut d_ls = vec![0.0; net.outputs()];
            for (row, i) in r.enumerate() {
                for k in 0..net.outputs() {
                    let diff = trace.output().row(row)[k] - old.row(i)[k];
                    d_out.row_mut(row)[k] = diff * inv_var[k] * scale;
                    d_ls[k] += (1.0 - (old_var[k] + diff * diff) * inv_var[k]) * scale;
                }
            }
            let mut g = vec![0.0; net.num_params()];
            net.backward(params, &trace, &d_out, Some(&d_ls), &mut g);
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sum_gradients(parts, net.num_params()))
}

/// Hessian of the mean KL at `params` (old = new), applied to vectors, plus
/// damping. For a Gaussian with state-independent log std this is
/// `J^T diag(1/sigma^2) J / B` on the network part and `2 I` on the log std.
pub struct FisherOperator<'a> {
    net: &'a PolicyNet,
    params: &'a [f64],
    traces: Vec<PolicyTrace<f64>>,
    inv_var: Vec<f64>,
    count: usize,
    damping: f64,
}

impl<'a> FisherOperator<'a> {
    pub fn new(
        net: &'a PolicyNet,
        params: &'a [f64],
        obs: &[&ObservationSet<f64>],
        damping: f64,
    ) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::config("Fisher operator needs at least one observation"));
        }
        let traces = chunks(obs.len())
            .into_par_iter()
            .map(|r| net.forward_batch(params, &obs[r]))
            .collect::<Result<Vec<_>>>()?;
        let inv_var = net.log_std(params).iter().map(|l| (-2.0 * l).exp()).collect();
        Ok(FisherOperator {
            net,
            params,
            traces,
            inv_var,
            count: obs.len(),
            damping,
        })
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let net = self.net;
        let scale = 1.0 / self.count as f64;
        let parts: Vec<Vec<f64>> = self
            .traces
            .par_iter()
            .map(|trace| {
                let mut u = net.jvp(self.params, trace, v);
                for r in 0..u.rows() {
                    for (x, iv) in u.row_mut(r).iter_mut().zip(&self.inv_var) {
                        *x *= iv * scale;
                    }
                }
                let mut g = vec![0.0; net.num_params()];
                net.backward(self.params, trace, &u, None, &mut g);
                g
            })
            .collect();
        let mut out = sum_gradients(parts, net.num_params());
        for i in net.log_std_range() {
            out[i] += 2.0 * v[i];
        }
        for (o, x) in out.iter_mut().zip(v) {
            *o += self.damping * x;
        }
        out
    }
}

/// `F v + damping v` over the whole batch.
pub fn fisher_vector_product(
    net: &PolicyNet,
    params: &[f64],
    batch: &Batch,
    v: &[f64],
    damping: f64,
) -> Result<Vec<f64>> {
    if v.len() != net.num_params() {
        return Err(Error::shape("fisher_vector_product", net.num_params(), v.len()));
    }
    let op = FisherOperator::new(net, params, &batch.observations(), damping)?;
    let out = op.apply(v);
    if !out.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("Fisher-vector product"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateStatus {
    Accepted,
    ZeroGradient,
    CgFailure,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub status: UpdateStatus,
    /// Mean KL between the old and the returned policy.
    pub mean_kl: f64,
    /// Surrogate at the returned parameters minus surrogate at the old ones.
    pub surrogate_improvement: f64,
    /// First-order prediction `g . step` of the full step's improvement.
    pub expected_improvement: f64,
    /// Fraction of the full step that was accepted.
    pub step_fraction: f64,
    pub backtracks: usize,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    pub gradient_norm: f64,
}

impl UpdateStats {
    fn unchanged(status: UpdateStatus) -> Self {
        UpdateStats {
            status,
            mean_kl: 0.0,
            surrogate_improvement: 0.0,
            expected_improvement: 0.0,
            step_fraction: 0.0,
            backtracks: 0,
            cg_iterations: 0,
            cg_residual: 0.0,
            gradient_norm: 0.0,
        }
    }

    pub fn accepted(&self) -> bool {
        self.status == UpdateStatus::Accepted
    }
}

/// Natural-gradient step under the KL bound. Returns the new parameters,
/// which equal `params` unless a step is accepted.
pub fn trpo_update(
    net: &PolicyNet,
    params: &[f64],
    batch: &Batch,
    config: &TrainerConfig,
) -> Result<(Vec<f64>, UpdateStats)> {
    check_advantages(batch)?;
    let obs = batch.observations();
    let g = surrogate_gradient(net, params, batch)?;
    let g_norm = dot(&g, &g).sqrt();
    if !g_norm.is_finite() {
        return Err(Error::NonFinite("policy gradient"));
    }
    if g_norm == 0.0 {
        return Ok((params.to_vec(), UpdateStats::unchanged(UpdateStatus::ZeroGradient)));
    }

    let fisher_obs: Vec<&ObservationSet<f64>> = obs.iter().step_by(config.fisher_stride).copied().collect();
    let op = FisherOperator::new(net, params, &fisher_obs, config.cg_damping)?;
    let cg = match conjugate_gradient(|v| op.apply(v), &g, config.cg_iters, 1e-10) {
        Ok(cg) => cg,
        Err(e) => {
            log::warn!("conjugate gradient failed, skipping update: {e}");
            let mut s = UpdateStats::unchanged(UpdateStatus::CgFailure);
            s.gradient_norm = g_norm;
            return Ok((params.to_vec(), s));
        }
    };
    let shs = dot(&cg.x, &op.apply(&cg.x));
    if !(shs > 0.0 && shs.is_finite()) {
        log::warn!("non-positive curvature along the search direction, skipping update");
        let mut s = UpdateStats::unchanged(UpdateStatus::CgFailure);
        s.gradient_norm = g_norm;
        s.cg_iterations = cg.iterations;
        s.cg_residual = cg.residual;
        return Ok((params.to_vec(), s));
    }
    let beta = (2.0 * config.max_kl / shs).sqrt();
    let full: Vec<f64> = cg.x.iter().map(|s| beta * s).collect();
    let expected = dot(&g, &full);

    let log_std_old = net.log_std(params);
    let old_means = network_outputs(net, params, &obs)?;
    let surr_old = surrogate_from_outputs(&old_means, log_std_old, batch)?;

    let mut stats = UpdateStats {
        status: UpdateStatus::Rejected,
        mean_kl: 0.0,
        surrogate_improvement: 0.0,
        expected_improvement: expected,
        step_fraction: 0.0,
        backtracks: 0,
        cg_iterations: cg.iterations,
        cg_residual: cg.residual,
        gradient_norm: g_norm,
    };
    let mut frac = 1.0;
    for j in 0..config.backtrack_steps {
        let candidate: Vec<f64> = params.iter().zip(&full).map(|(p, s)| p + frac * s).collect();
        let trial = network_outputs(net, &candidate, &obs)
            .and_then(|means| {
                let surr = surrogate_from_outputs(&means, net.log_std(&candidate), batch)?;
                let kl = kl_from_outputs(&old_means, log_std_old, &means, net.log_std(&candidate));
                Ok((surr, kl))
            });
        if let Ok((surr, kl)) = trial {
            let improvement = surr - surr_old;
            if kl.is_finite() && improvement.is_finite() && improvement > 0.0 && kl <= config.max_kl {
                stats.status = UpdateStatus::Accepted;
                stats.mean_kl = kl;
                stats.surrogate_improvement = improvement;
                stats.step_fraction = frac;
                stats.backtracks = j;
                return Ok((candidate, stats));
            }
        }
        frac *= config.backtrack_factor;
    }
    stats.backtracks = config.backtrack_steps;
    log::debug!("line search rejected every step");
    Ok((params.to_vec(), stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{TaskConfig, WorldConfig};
    use crate::policy::{EmbeddingSpec, FeatureSpec, Moment, PolicySpec};
    use crate::trpo::batch::{collect_rollouts, standardize};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fixture(embedding: EmbeddingSpec, agents: usize, steps: usize) -> (PolicyNet, Vec<f64>, Batch) {
        let task = TaskConfig::rendezvous(agents);
        let world = WorldConfig::default();
        let net = PolicyNet::new(PolicySpec::policy(FeatureSpec::for_task(&task, &world), embedding)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params: Vec<f64> = net.init_params(&mut rng);
        // move away from the near-zero initial head so every block carries signal
        for p in params.iter_mut() {
            *p += rng.random_range(-0.05..0.05);
        }
        let config = TrainerConfig {
            workers: 2,
            steps_per_worker: steps,
            ..TrainerConfig::default()
        };
        let mut batch = collect_rollouts(&task, &world, &net, &params, &config, 3).unwrap();
        let mut adv: Vec<f64> = (0..batch.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        standardize(&mut adv);
        batch.advantages = adv;
        (net, params, batch)
    }

    fn perturbed(params: &[f64], seed: u64, eps: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        params.iter().map(|p| p + rng.random_range(-eps..eps)).collect()
    }

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = dot(b, b).sqrt().max(1e-12);
        diff / scale
    }

    #[test]
    fn surrogate_at_old_params_is_mean_advantage() {
        let (net, params, mut batch) = fixture(EmbeddingSpec::NnMean { hidden: vec![8] }, 3, 6);
        let mean_adv = batch.advantages.iter().sum::<f64>() / batch.len() as f64;
        assert!((surrogate_loss(&net, &params, &batch).unwrap() - mean_adv).abs() < 1e-12);
        let other = perturbed(&params, 1, 0.05);
        let l1 = surrogate_loss(&net, &other, &batch).unwrap();
        for a in batch.advantages.iter_mut() {
            *a *= 2.0;
        }
        let l2 = surrogate_loss(&net, &other, &batch).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12 * l1.abs().max(1.0));
    }

    #[test]
    fn surrogate_hand_computed() {
        let (net, params, mut batch) = fixture(EmbeddingSpec::NnMean { hidden: vec![4] }, 3, 1);
        batch.advantages = vec![1.0, -2.0, 0.5, 0.0, 3.0, -1.0];
        let other = perturbed(&params, 2, 0.1);
        let log_std = net.log_std(&other);
        let mut expected = 0.0;
        for (t, a) in batch.transitions.iter().zip(&batch.advantages) {
            let mean = net.forward(&other, &t.observation).unwrap();
            let mut lp = 0.0;
            for k in 0..2 {
                let sd = log_std[k].exp();
                let z = (t.action[k] - mean[k]) / sd;
                lp += -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
            }
            expected += (lp - t.log_prob).exp() * a;
        }
        expected /= 6.0;
        assert!((surrogate_loss(&net, &other, &batch).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn kl_properties() {
        let (net, params, batch) = fixture(EmbeddingSpec::NnMean { hidden: vec![8] }, 3, 6);
        assert_eq!(mean_kl(&net, &params, &params, &batch).unwrap(), 0.0);
        for s in 0..5 {
            assert!(mean_kl(&net, &params, &perturbed(&params, s, 0.1), &batch).unwrap() >= 0.0);
        }
        // shift only the output bias: KL = sum_k delta_k^2 / (2 sigma_k^2)
        let last = net.trunk().layers().len() - 1;
        let bias = net.layout().block(&format!("trunk.b{last}")).unwrap().range();
        let mut shifted = params.clone();
        let delta = [0.03, -0.07];
        for (k, i) in bias.enumerate() {
            shifted[i] += delta[k];
        }
        let var: Vec<f64> = net.log_std(&params).iter().map(|l| (2.0 * l).exp()).collect();
        let expected = delta[0] * delta[0] / (2.0 * var[0]) + delta[1] * delta[1] / (2.0 * var[1]);
        assert!((mean_kl(&net, &params, &shifted, &batch).unwrap() - expected).abs() < 1e-12);
    }

    fn check_surrogate_gradient(embedding: EmbeddingSpec) {
        let (net, params, batch) = fixture(embedding, 3, 4);
        let theta = perturbed(&params, 9, 0.02);
        let g = surrogate_gradient(&net, &theta, &batch).unwrap();
        let eps = 1e-6;
        let fd: Vec<f64> = (0..theta.len())
            .map(|i| {
                let mut p = theta.clone();
                p[i] += eps;
                let up = surrogate_loss(&net, &p, &batch).unwrap();
                p[i] -= 2.0 * eps;
                let down = surrogate_loss(&net, &p, &batch).unwrap();
                (up - down) / (2.0 * eps)
            })
            .collect();
        assert!(rel_err(&g, &fd) < 1e-4, "{}", rel_err(&g, &fd));
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        check_surrogate_gradient(EmbeddingSpec::NnMean { hidden: vec![6] });
        check_surrogate_gradient(EmbeddingSpec::Moments {
            orders: vec![Moment::Mean, Moment::Std],
        });
    }

    #[test]
    fn fvp_matches_finite_difference_of_kl_gradient() {
        let (net, params, batch) = fixture(EmbeddingSpec::NnMean { hidden: vec![6] }, 4, 5);
        let v = random_vec(net.num_params(), 3);
        let fv = fisher_vector_product(&net, &params, &batch, &v, 0.0).unwrap();
        let eps = 1e-5;
        let plus: Vec<f64> = params.iter().zip(&v).map(|(p, d)| p + eps * d).collect();
        let minus: Vec<f64> = params.iter().zip(&v).map(|(p, d)| p - eps * d).collect();
        let gp = mean_kl_gradient(&net, &params, &plus, &batch).unwrap();
        let gm = mean_kl_gradient(&net, &params, &minus, &batch).unwrap();
        let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        assert!(rel_err(&fv, &fd) < 1e-3, "{}", rel_err(&fv, &fd));
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let (net, params, batch) = fixture(EmbeddingSpec::NnMean { hidden: vec![4] }, 3, 3);
        let theta = perturbed(&params, 4, 0.05);
        let g = mean_kl_gradient(&net, &params, &theta, &batch).unwrap();
        let eps = 1e-6;
        let fd: Vec<f64> = (0..theta.len())
            .map(|i| {
                let mut p = theta.clone();
                p[i] += eps;
                let up = mean_kl(&net, &params, &p, &batch).unwrap();
                p[i] -= 2.0 * eps;
                let down = mean_kl(&net, &params, &p, &batch).unwrap();
                (up - down) / (2.0 * eps)
            })
            .collect();
        assert!(rel_err(&g, &fd) < 1e-4);
    }

    #[test]
    fn fvp_linear_symmetric_positive() {
        let (net, params, batch) = fixture(EmbeddingSpec::NnMean { hidden: vec![6] }, 3, 4);
        let n = net.num_params();
        assert!(fisher_vector_product(&net, &params, &batch, &vec![0.0; n], 0.1)
            .unwrap()
            .iter()
            .all(|x| *x == 0.0));
        let u = random_vec(n, 1);
        let v = random_vec(n, 2);
        let fu = fisher_vector_product(&net, &params, &batch, &u, 0.1).unwrap();
        let fv = fisher_vector_product(&net, &params, &batch, &v, 0.1).unwrap();
        assert!((dot(&u, &fv) - dot(&v, &fu)).abs() < 1e-6);
        assert!(dot(&u, &fu) > 0.0);
        assert!(fisher_vector_product(&net, &params, &batch, &u[1..], 0.1).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]

        #[test]
        fn fvp_is_symmetric(seed in 0u64..10_000) {
            let (net, params, batch) = fixture(EmbeddingSpec::Softmax { alpha: 1.0, hidden: vec![5] }, 3, 3);
            let n = net.num_params();
            let u = random_vec(n, seed);
            let v = random_vec(n, seed + 1);
            let fu = fisher_vector_product(&net, &params, &batch, &u, 0.0).unwrap();
            let fv = fisher_vector_product(&net, &params, &batch, &v, 0.0).unwrap();
            proptest::prop_assert!((dot(&u, &fv) - dot(&v, &fu)).abs() < 1e-6);
        }
    }

    #[test]
    fn update_respects_trust_region() {
        let (net, params, batch) = fixture(EmbeddingSpec::NnMean { hidden: vec![8] }, 4, 16);
        let config = TrainerConfig::default();
        let (new, stats) = trpo_update(&net, &params, &batch, &config).unwrap();
        assert!(stats.accepted(), "{stats:?}");
        let kl = mean_kl(&net, &params, &new, &batch).unwrap();
        assert!((kl - stats.mean_kl).abs() < 1e-12);
        assert!(kl <= 1.5 * config.max_kl);
        let gain = surrogate_loss(&net, &new, &batch).unwrap() - surrogate_loss(&net, &params, &batch).unwrap();
        assert!(gain > 0.0);
    }

    #[test]
    fn zero_advantages_leave_params_unchanged() {
        let (net, params, mut batch) = fixture(EmbeddingSpec::NnMean { hidden: vec![8] }, 3, 4);
        batch.advantages = vec![0.0; batch.len()];
        let (new, stats) = trpo_update(&net, &params, &batch, &TrainerConfig::default()).unwrap();
        assert_eq!(stats.status, UpdateStatus::ZeroGradient);
        assert_eq!(new, params);
    }

    #[test]
    fn gradient_ignores_agent_labels_and_order() {
        let (net, params, batch) = fixture(EmbeddingSpec::NnMean { hidden: vec![8] }, 4, 8);
        let g = surrogate_gradient(&net, &params, &batch).unwrap();
        let mut shuffled = batch.clone();
        let n = shuffled.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        shuffled.transitions = order.iter().map(|&i| batch.transitions[i].clone()).collect();
        shuffled.advantages = order.iter().map(|&i| batch.advantages[i]).collect();
        for t in shuffled.transitions.iter_mut() {
            t.agent = (t.agent + 1) % 4;
        }
        let h = surrogate_gradient(&net, &params, &shuffled).unwrap();
        for (a, b) in g.iter().zip(&h) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
