use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{EmbeddingSpec, EncoderTrace, SetBatch, SetEncoder};
use super::features::FeatureSpec;
use crate::env::ObservationSet;
use crate::numkit::{
    mlp_backward, mlp_forward_batch, mlp_jvp, Activation, DiagGaussian, Matrix, MlpSpec,
    MlpTrace, ParamLayout,
};
use crate::{Error, Result, Scalar};

fn default_trunk() -> Vec<usize> {
    vec![64]
}

fn default_log_std() -> f64 {
    0.6f64.ln()
}

/// Shape of a policy (Gaussian head) or value network (scalar head).
///
/// Both embed the neighbour set, optionally embed the evader set with a second
/// encoder, concatenate the embeddings with the local features and one
/// empty-set indicator per set, and feed the result through a RELU trunk
/// followed by a linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub features: FeatureSpec,
    pub embedding: EmbeddingSpec,
    /// Encoder for the evader set; defaults to `embedding` when the feature
    /// spec has one.
    #[serde(default)]
    pub evader_embedding: Option<EmbeddingSpec>,
    #[serde(default = "default_trunk")]
    pub trunk: Vec<usize>,
    pub outputs: usize,
    /// Whether the network carries a state-independent log standard deviation.
    pub gaussian: bool,
    #[serde(default = "default_log_std")]
    pub log_std_init: f64,
}

impl PolicySpec {
    pub fn policy(features: FeatureSpec, embedding: EmbeddingSpec) -> Self {
        PolicySpec {
            features,
            embedding,
            evader_embedding: None,
            trunk: default_trunk(),
            outputs: 2,
            gaussian: true,
            log_std_init: default_log_std(),
        }
    }

    pub fn value(features: FeatureSpec, embedding: EmbeddingSpec) -> Self {
        PolicySpec {
            outputs: 1,
            gaussian: false,
            ..Self::policy(features, embedding)
        }
    }
}

/// Cached forward pass over a batch of observations.
#[derive(Debug, Clone)]
pub struct PolicyTrace<T> {
    neighbors: EncoderTrace<T>,
    evaders: Option<EncoderTrace<T>>,
    trunk: MlpTrace<T>,
}

impl<T: Scalar> PolicyTrace<T> {
    /// Network outputs, one row per observation (action means for a policy).
    pub fn output(&self) -> &Matrix<T> {
        self.trunk.output()
    }

    pub fn len(&self) -> usize {
        self.output().rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn embedding(&self) -> &Matrix<T> {
        &self.neighbors.output
    }
}

/// Assembled network with its parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    spec: PolicySpec,
    encoder: SetEncoder,
    evader_encoder: Option<SetEncoder>,
    trunk: MlpSpec,
    layout: ParamLayout,
    enc_range: Range<usize>,
    evader_range: Range<usize>,
    trunk_range: Range<usize>,
    log_std_range: Range<usize>,
}

impl PolicyNet {
    pub fn new(spec: PolicySpec) -> Result<Self> {
        spec.features.validate()?;
        if spec.outputs == 0 {
            return Err(Error::config("network needs at least one output"));
        }
        if spec.trunk.contains(&0) {
            return Err(Error::config("trunk layer sizes must be positive"));
        }
        if !spec.log_std_init.is_finite() {
            return Err(Error::config("log_std_init must be finite"));
        }
        let f = &spec.features;
        let encoder = SetEncoder::new(
            &spec.embedding,
            f.neighbor_dim(),
            f.planar_ranges(f.neighbor_range),
        )?;
        let evader_encoder = if f.has_evader_set() {
            let e = spec.evader_embedding.as_ref().unwrap_or(&spec.embedding);
            Some(SetEncoder::new(e, f.evader_dim(), f.planar_ranges(f.evader_range))?)
        } else {
            None
        };
        let indicators = 1 + usize::from(evader_encoder.is_some());
        let trunk_in = encoder.output_dim()
            + evader_encoder.as_ref().map_or(0, |e| e.output_dim())
            + f.local_dim()
            + indicators;
        let trunk = MlpSpec::with_hidden(trunk_in, &spec.trunk, Activation::Relu, Some(spec.outputs))?;

        let mut layout = ParamLayout::new();
        let enc_start = layout.extend_prefixed("embed", &encoder.layout());
        let enc_range = enc_start..enc_start + encoder.num_params();
        let evader_range = match &evader_encoder {
            Some(e) => {
                let s = layout.extend_prefixed("evader_embed", &e.layout());
                s..s + e.num_params()
            }
            None => layout.len()..layout.len(),
        };
        let t = layout.extend_prefixed("trunk", &trunk.layout());
        let trunk_range = t..t + trunk.num_params();
        let log_std_range = if spec.gaussian {
            let s = layout.push("log_std", 1, spec.outputs);
            s..s + spec.outputs
        } else {
            layout.len()..layout.len()
        };
        Ok(PolicyNet {
            spec,
            encoder,
            evader_encoder,
            trunk,
            layout,
            enc_range,
            evader_range,
            trunk_range,
            log_std_range,
        })
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    pub fn encoder(&self) -> &SetEncoder {
        &self.encoder
    }

    pub fn evader_encoder(&self) -> Option<&SetEncoder> {
        self.evader_encoder.as_ref()
    }

    pub fn trunk(&self) -> &MlpSpec {
        &self.trunk
    }

    pub fn outputs(&self) -> usize {
        self.spec.outputs
    }

    pub fn embedding_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn encoder_params<'a, T>(&self, params: &'a [T]) -> &'a [T] {
        &params[self.enc_range.clone()]
    }

    pub fn trunk_params<'a, T>(&self, params: &'a [T]) -> &'a [T] {
        &params[self.trunk_range.clone()]
    }

    pub fn log_std_range(&self) -> Range<usize> {
        self.log_std_range.clone()
    }

    /// Fresh parameters: uniform fan-in/fan-out weights, zero biases, the head
    /// of a Gaussian policy shrunk by 0.01 and log std at `log_std_init`.
    pub fn init_params<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let mut p = vec![T::zero(); self.num_params()];
        self.encoder.init(rng, &mut p[self.enc_range.clone()]);
        if let Some(e) = &self.evader_encoder {
            e.init(rng, &mut p[self.evader_range.clone()]);
        }
        let head_scale = if self.spec.gaussian { 0.01 } else { 1.0 };
        self.trunk.init(rng, &mut p[self.trunk_range.clone()], head_scale);
        for v in &mut p[self.log_std_range.clone()] {
            *v = T::lit(self.spec.log_std_init);
        }
        p
    }

    fn check_params<T>(&self, params: &[T]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::shape("network parameters", self.num_params(), params.len()));
        }
        Ok(())
    }

    pub fn forward_batch<T: Scalar>(
        &self,
        params: &[T],
        obs: &[&ObservationSet<T>],
    ) -> Result<PolicyTrace<T>> {
        self.check_params(params)?;
        let f = &self.spec.features;
        let scaled = obs.iter().map(|o| f.scale(o)).collect::<Result<Vec<_>>>()?;

        let batch = SetBatch::from_sets(f.neighbor_dim(), scaled.iter().map(|s| &s.neighbors))?;
        let neighbors = self.encoder.forward(&params[self.enc_range.clone()], &batch)?;
        let evaders = match &self.evader_encoder {
            Some(e) => {
                let batch = SetBatch::from_sets(f.evader_dim(), scaled.iter().map(|s| &s.evaders))?;
                Some(e.forward(&params[self.evader_range.clone()], &batch)?)
            }
            None => None,
        };

        let mut input = Matrix::zeros(obs.len(), self.trunk.input_len());
        for (b, s) in scaled.iter().enumerate() {
            let row = input.row_mut(b);
            let mut at = 0;
            let mut put = |vals: &[T]| {
                row[at..at + vals.len()].copy_from_slice(vals);
                at += vals.len();
            };
            put(neighbors.output.row(b));
            if let Some(e) = &evaders {
                put(e.output.row(b));
            }
            put(&s.local);
            put(&[if neighbors.empty[b] { T::one() } else { T::zero() }]);
            if let Some(e) = &evaders {
                put(&[if e.empty[b] { T::one() } else { T::zero() }]);
            }
        }
        let trunk = mlp_forward_batch(&self.trunk, &params[self.trunk_range.clone()], &input)?;
        if !trunk.output().as_slice().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network output"));
        }
        Ok(PolicyTrace {
            neighbors,
            evaders,
            trunk,
        })
    }

    /// Output for a single observation.
    pub fn forward<T: Scalar>(&self, params: &[T], obs: &ObservationSet<T>) -> Result<Vec<T>> {
        Ok(self.forward_batch(params, &[obs])?.output().row(0).to_vec())
    }

    pub fn log_std<'a, T>(&self, params: &'a [T]) -> &'a [T] {
        &params[self.log_std_range.clone()]
    }

    pub fn distribution<T: Scalar>(
        &self,
        params: &[T],
        obs: &ObservationSet<T>,
    ) -> Result<DiagGaussian<T>> {
        if !self.spec.gaussian {
            return Err(Error::config("value network has no action distribution"));
        }
        DiagGaussian::new(self.forward(params, obs)?, self.log_std(params).to_vec())
    }

    /// Accumulates the gradient of `sum(d_out . output) + d_log_std . log_std`
    /// into `grad`.
    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        trace: &PolicyTrace<T>,
        d_out: &Matrix<T>,
        d_log_std: Option<&[T]>,
        grad: &mut [T],
    ) {
        debug_assert_eq!(grad.len(), self.num_params());
        let d_in = mlp_backward(
            &self.trunk,
            &params[self.trunk_range.clone()],
            &trace.trunk,
            d_out,
            &mut grad[self.trunk_range.clone()],
        );
        let d_enc = self.encoder.output_dim();
        if self.encoder.num_params() > 0 {
            let up = column_block(&d_in, 0, d_enc);
            self.encoder.backward(
                &params[self.enc_range.clone()],
                &trace.neighbors,
                &up,
                &mut grad[self.enc_range.clone()],
            );
        }
        if let (Some(e), Some(t)) = (&self.evader_encoder, &trace.evaders) {
            if e.num_params() > 0 {
                let up = column_block(&d_in, d_enc, e.output_dim());
                e.backward(
                    &params[self.evader_range.clone()],
                    t,
                    &up,
                    &mut grad[self.evader_range.clone()],
                );
            }
        }
        if let Some(d) = d_log_std {
            for (g, v) in grad[self.log_std_range.clone()].iter_mut().zip(d) {
                *g += *v;
            }
        }
    }

    /// Directional derivative of the outputs along a parameter tangent (the
    /// log-std part of the tangent is ignored).
    pub fn jvp<T: Scalar>(&self, params: &[T], trace: &PolicyTrace<T>, tangent: &[T]) -> Matrix<T> {
        let rows = trace.len();
        let mut input_t = Matrix::zeros(rows, self.trunk.input_len());
        let d_enc = self.encoder.output_dim();
        if self.encoder.num_params() > 0 {
            let t = self.encoder.jvp(
                &params[self.enc_range.clone()],
                &trace.neighbors,
                &tangent[self.enc_range.clone()],
            );
            for r in 0..rows {
                input_t.row_mut(r)[..d_enc].copy_from_slice(t.row(r));
            }
        }
        if let (Some(e), Some(et)) = (&self.evader_encoder, &trace.evaders) {
            if e.num_params() > 0 {
                let t = e.jvp(
                    &params[self.evader_range.clone()],
                    et,
                    &tangent[self.evader_range.clone()],
                );
                for r in 0..rows {
                    input_t.row_mut(r)[d_enc..d_enc + e.output_dim()].copy_from_slice(t.row(r));
                }
            }
        }
        mlp_jvp(
            &self.trunk,
            &params[self.trunk_range.clone()],
            &trace.trunk,
            &tangent[self.trunk_range.clone()],
            Some(&input_t),
        )
    }
}

fn column_block<T: Scalar>(m: &Matrix<T>, start: usize, len: usize) -> Matrix<T> {
    let mut out = Matrix::zeros(m.rows(), len);
    for r in 0..m.rows() {
        out.row_mut(r).copy_from_slice(&m.row(r)[start..start + len]);
    }
    out
}
