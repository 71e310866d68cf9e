use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::numkit::{mlp_backward, mlp_forward_batch, mlp_jvp, Activation, Matrix, MlpSpec, MlpTrace, ParamLayout};
use crate::{Error, Result, Scalar};

/// Empirical statistic used by the moment encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Moment {
    Mean,
    Std,
    Skew,
    /// Excess kurtosis (zero for a Gaussian).
    Kurtosis,
}

fn default_hidden() -> Vec<usize> {
    vec![64]
}

fn default_bins() -> usize {
    8
}

fn default_alpha() -> f64 {
    1.0
}

fn default_orders() -> Vec<Moment> {
    vec![Moment::Mean, Moment::Std, Moment::Skew, Moment::Kurtosis]
}

/// How a variable-size observation set is turned into a fixed-size vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingSpec {
    /// RELU feature network followed by the mean over the set.
    NnMean {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
    },
    /// One-hot (distance, bearing) histogram, averaged over the set.
    Histogram {
        #[serde(default = "default_bins")]
        bins: usize,
        #[serde(default)]
        raw_sum: bool,
    },
    /// Gaussian radial basis functions on a regular (distance, bearing) grid.
    Rbf {
        #[serde(default = "default_bins")]
        centers: usize,
        #[serde(default)]
        raw_sum: bool,
    },
    /// Feature network followed by per-dimension softmax-weighted pooling.
    Softmax {
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
    },
    /// Feature network followed by per-dimension max pooling.
    Max {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
    },
    /// Distance-sorted, zero-padded concatenation fed through a dense layer.
    Concat {
        max_neighbors: usize,
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
    },
    /// Per-feature empirical moments.
    Moments {
        #[serde(default = "default_orders")]
        orders: Vec<Moment>,
    },
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        EmbeddingSpec::NnMean {
            hidden: default_hidden(),
        }
    }
}

impl EmbeddingSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EmbeddingSpec::NnMean { .. } => "nn_mean",
            EmbeddingSpec::Histogram { .. } => "histogram",
            EmbeddingSpec::Rbf { .. } => "rbf",
            EmbeddingSpec::Softmax { .. } => "softmax",
            EmbeddingSpec::Max { .. } => "max",
            EmbeddingSpec::Concat { .. } => "concat",
            EmbeddingSpec::Moments { .. } => "moments",
        }
    }

    /// Encoder of the given kind with default settings. Concatenation is sized for
    /// `max_neighbors` neighbours.
    pub fn with_defaults(name: &str, max_neighbors: usize) -> Option<Self> {
        Some(match name {
            "nn_mean" | "nn-mean" => EmbeddingSpec::default(),
            "histogram" | "hist" => EmbeddingSpec::Histogram {
                bins: default_bins(),
                raw_sum: false,
            },
            "rbf" => EmbeddingSpec::Rbf {
                centers: default_bins(),
                raw_sum: false,
            },
            "softmax" => EmbeddingSpec::Softmax {
                alpha: default_alpha(),
                hidden: default_hidden(),
            },
            "max" => EmbeddingSpec::Max {
                hidden: default_hidden(),
            },
            "concat" => EmbeddingSpec::Concat {
                max_neighbors,
                hidden: default_hidden(),
            },
            "moments" => EmbeddingSpec::Moments {
                orders: default_orders(),
            },
            _ => return None,
        })
    }

    pub fn is_concat(&self) -> bool {
        matches!(self, EmbeddingSpec::Concat { .. })
    }

    pub fn violations(&self, input_dim: usize) -> Vec<String> {
        let mut v = Vec::new();
        let name = self.name();
        let check_hidden = |hidden: &[usize], v: &mut Vec<String>| {
            if hidden.is_empty() || hidden.contains(&0) {
                v.push(format!("{name} embedding needs non-empty, positive hidden sizes"));
            }
        };
        match self {
            EmbeddingSpec::NnMean { hidden } | EmbeddingSpec::Max { hidden } => {
                check_hidden(hidden, &mut v)
            }
            EmbeddingSpec::Softmax { alpha, hidden } => {
                check_hidden(hidden, &mut v);
                if !alpha.is_finite() {
                    v.push(format!("softmax alpha must be finite (got {alpha})"));
                }
            }
            EmbeddingSpec::Concat {
                max_neighbors,
                hidden,
            } => {
                check_hidden(hidden, &mut v);
                if *max_neighbors == 0 {
                    v.push("concat embedding needs max_neighbors >= 1".into());
                }
            }
            EmbeddingSpec::Histogram { bins: n, .. } | EmbeddingSpec::Rbf { centers: n, .. } => {
                if *n == 0 {
                    v.push(format!("{name} embedding needs at least one bin per feature"));
                }
                if input_dim != 2 {
                    v.push(format!(
                        "{name} embedding is only defined for the 2-feature basic set (got {input_dim} features)"
                    ));
                }
            }
            EmbeddingSpec::Moments { orders } => {
                if orders.is_empty() {
                    v.push("moments embedding needs at least one order".into());
                }
                for (i, o) in orders.iter().enumerate() {
                    if orders[..i].contains(o) {
                        v.push(format!("moments order {o:?} listed twice"));
                    }
                }
            }
        }
        v
    }
}

/// Fixed-size set representation plus the empty-set indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T> {
    pub values: Vec<T>,
    pub empty: bool,
}

/// Arithmetic mean of the rows; the empty set maps to zeros with `empty` set.
pub fn embed_mean<T: Scalar>(set: &Matrix<T>) -> Embedding<T> {
    let mut values = vec![T::zero(); set.cols()];
    mean_rows(set, 0..set.rows(), &mut values);
    Embedding {
        values,
        empty: set.is_empty(),
    }
}

/// Per-dimension softmax-weighted average `sum_j w_j phi_j` with weights
/// proportional to `exp(alpha phi_j)`.
pub fn pool_softmax<T: Scalar>(set: &Matrix<T>, alpha: f64) -> Embedding<T> {
    let mut values = vec![T::zero(); set.cols()];
    let mut weights = Matrix::zeros(set.rows(), set.cols());
    softmax_rows(set, 0..set.rows(), T::lit(alpha), &mut values, &mut weights);
    Embedding {
        values,
        empty: set.is_empty(),
    }
}

pub fn pool_max<T: Scalar>(set: &Matrix<T>) -> Embedding<T> {
    let mut values = vec![T::zero(); set.cols()];
    let mut argmax = vec![0; set.cols()];
    max_rows(set, 0..set.rows(), &mut values, &mut argmax);
    Embedding {
        values,
        empty: set.is_empty(),
    }
}

/// One-hot `(distance bin, bearing bin)` cell, flattened as `d * bins + b`.
///
/// Bins are right-closed: a value on the edge between two bins goes to the
/// lower one. Values outside a range fall into its first or last bin.
pub fn feature_map_histogram<T: Scalar>(o: &[T], ranges: [(f64, f64); 2], bins: usize) -> Vec<T> {
    let mut out = vec![T::zero(); bins * bins];
    out[histogram_cell(o, ranges, bins)] = T::one();
    out
}

fn histogram_cell<T: Scalar>(o: &[T], ranges: [(f64, f64); 2], bins: usize) -> usize {
    let d = bin_index(o[0].to_f64_lossy(), ranges[0], bins);
    let b = bin_index(o[1].to_f64_lossy(), ranges[1], bins);
    d * bins + b
}

fn bin_index(x: f64, (lo, hi): (f64, f64), bins: usize) -> usize {
    for k in 0..bins - 1 {
        if x <= lo + (hi - lo) * (k + 1) as f64 / bins as f64 {
            return k;
        }
    }
    bins - 1
}

/// Gaussian activations `exp(-0.5 sum_f ((o_f - mu_f) / sigma_f)^2)` over a
/// `centers x centers` grid placed at bin centres, `sigma_f` the bin width.
pub fn feature_map_rbf<T: Scalar>(o: &[T], ranges: [(f64, f64); 2], centers: usize) -> Vec<T> {
    let mut out = vec![T::zero(); centers * centers];
    rbf_into(o, ranges, centers, &mut out);
    out
}

fn rbf_into<T: Scalar>(o: &[T], ranges: [(f64, f64); 2], centers: usize, out: &mut [T]) {
    let axis = |f: usize| -> Vec<T> {
        let (lo, hi) = ranges[f];
        let w = (hi - lo) / centers as f64;
        (0..centers)
            .map(|k| {
                let z = (o[f] - T::lit(lo + w * (k as f64 + 0.5))) / T::lit(w);
                z * z
            })
            .collect()
    };
    let (zd, zb) = (axis(0), axis(1));
    let half = T::lit(0.5);
    for i in 0..centers {
        for j in 0..centers {
            out[i * centers + j] = (-half * (zd[i] + zb[j])).exp();
        }
    }
}

/// Rows sorted by ascending first column (remaining columns break ties),
/// truncated to `max_neighbors` and zero padded, then concatenated.
pub fn concat_features<T: Scalar>(set: &Matrix<T>, max_neighbors: usize) -> Vec<T> {
    let mut out = vec![T::zero(); max_neighbors * set.cols()];
    concat_into(set, 0..set.rows(), max_neighbors, &mut out);
    out
}

fn concat_into<T: Scalar>(
    set: &Matrix<T>,
    rows: std::ops::Range<usize>,
    max_neighbors: usize,
    out: &mut [T],
) {
    let mut order: Vec<usize> = rows.collect();
    order.sort_by(|&a, &b| lexicographic(set.row(a), set.row(b)));
    let d = set.cols();
    for (slot, &r) in order.iter().take(max_neighbors).enumerate() {
        out[slot * d..(slot + 1) * d].copy_from_slice(set.row(r));
    }
}

fn lexicographic<T: Scalar>(a: &[T], b: &[T]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

/// Selected population moments of every column, grouped by column.
///
/// Statistics that need more samples than available (2 for std, 3 for skew,
/// 4 for kurtosis) are 0, as are skew and kurtosis when the std is below 1e-12.
pub fn moment_features<T: Scalar>(set: &Matrix<T>, orders: &[Moment]) -> Embedding<T> {
    let mut values = vec![T::zero(); set.cols() * orders.len()];
    moments_into(set, 0..set.rows(), orders, &mut values);
    Embedding {
        values,
        empty: set.is_empty(),
    }
}

fn moments_into<T: Scalar>(
    set: &Matrix<T>,
    rows: std::ops::Range<usize>,
    orders: &[Moment],
    out: &mut [T],
) {
    let n = rows.len();
    if n == 0 {
        out.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let nf = T::lit(n as f64);
    for c in 0..set.cols() {
        let mean = rows.clone().map(|r| set.row(r)[c]).sum::<T>() / nf;
        let (mut m2, mut m3, mut m4) = (T::zero(), T::zero(), T::zero());
        for r in rows.clone() {
            let dv = set.row(r)[c] - mean;
            let d2 = dv * dv;
            m2 += d2;
            m3 += d2 * dv;
            m4 += d2 * d2;
        }
        let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
        let std = m2.sqrt();
        let tiny = std < T::lit(1e-12);
        for (k, o) in orders.iter().enumerate() {
            out[c * orders.len() + k] = match o {
                Moment::Mean => mean,
                Moment::Std if n >= 2 => std,
                Moment::Skew if n >= 3 && !tiny => m3 / (std * std * std),
                Moment::Kurtosis if n >= 4 && !tiny => m4 / (m2 * m2) - T::lit(3.0),
                _ => T::zero(),
            };
        }
    }
}

fn mean_rows<T: Scalar>(feat: &Matrix<T>, rows: std::ops::Range<usize>, out: &mut [T]) {
    sum_rows(feat, rows.clone(), out);
    if !rows.is_empty() {
        let n = T::lit(rows.len() as f64);
        out.iter_mut().for_each(|v| *v /= n);
    }
}

fn sum_rows<T: Scalar>(feat: &Matrix<T>, rows: std::ops::Range<usize>, out: &mut [T]) {
    out.iter_mut().for_each(|v| *v = T::zero());
    for r in rows {
        for (o, x) in out.iter_mut().zip(feat.row(r)) {
            *o += *x;
        }
    }
}

/// Writes pooled values into `out` and the per-element weights into the
/// matching rows of `weights`.
fn softmax_rows<T: Scalar>(
    feat: &Matrix<T>,
    rows: std::ops::Range<usize>,
    alpha: T,
    out: &mut [T],
    weights: &mut Matrix<T>,
) {
    for (k, o) in out.iter_mut().enumerate() {
        *o = T::zero();
        if rows.is_empty() {
            continue;
        }
        let m = rows
            .clone()
            .map(|r| alpha * feat.row(r)[k])
            .fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for r in rows.clone() {
            let e = (alpha * feat.row(r)[k] - m).exp();
            weights.row_mut(r)[k] = e;
            z += e;
        }
        for r in rows.clone() {
            let w = weights.row(r)[k] / z;
            weights.row_mut(r)[k] = w;
            *o += w * feat.row(r)[k];
        }
    }
}

/// Per-dimension maximum; `argmax` receives the winning row (first on ties).
fn max_rows<T: Scalar>(
    feat: &Matrix<T>,
    rows: std::ops::Range<usize>,
    out: &mut [T],
    argmax: &mut [usize],
) {
    for k in 0..out.len() {
        out[k] = T::zero();
        let mut best: Option<(usize, T)> = None;
        for r in rows.clone() {
            let v = feat.row(r)[k];
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((r, v));
            }
        }
        if let Some((r, v)) = best {
            out[k] = v;
            argmax[k] = r;
        }
    }
}

/// Several observation sets stacked row-wise; set `b` owns rows
/// `offsets[b]..offsets[b + 1]`.
#[derive(Debug, Clone)]
pub struct SetBatch<T> {
    pub rows: Matrix<T>,
    pub offsets: Vec<usize>,
}

impl<T: Scalar> SetBatch<T> {
    pub fn from_sets<'a, I>(cols: usize, sets: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Matrix<T>>,
    {
        let mut data = Vec::new();
        let mut offsets = vec![0];
        let mut total = 0;
        for s in sets {
            if !s.is_empty() {
                if s.cols() != cols {
                    return Err(Error::shape("observation set", cols, s.cols()));
                }
                data.extend_from_slice(s.as_slice());
            }
            total += s.rows();
            offsets.push(total);
        }
        Ok(SetBatch {
            rows: Matrix::from_vec(total, cols, data)?,
            offsets,
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn range(&self, b: usize) -> std::ops::Range<usize> {
        self.offsets[b]..self.offsets[b + 1]
    }
}

#[derive(Debug, Clone)]
enum PoolCache<T> {
    None,
    Softmax(Matrix<T>),
    Max(Vec<usize>),
}

/// Cached forward pass of a [`SetEncoder`] over a [`SetBatch`].
#[derive(Debug, Clone)]
pub struct EncoderTrace<T> {
    /// One embedding per set.
    pub output: Matrix<T>,
    /// Which sets were empty.
    pub empty: Vec<bool>,
    offsets: Vec<usize>,
    mlp: Option<MlpTrace<T>>,
    pool: PoolCache<T>,
}

/// A permutation-invariant (or, for concat, canonically ordered) set encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SetEncoder {
    spec: EmbeddingSpec,
    input_dim: usize,
    ranges: [(f64, f64); 2],
    mlp: Option<MlpSpec>,
}

impl SetEncoder {
    /// `ranges` are the (distance, bearing) input ranges used by the histogram
    /// and RBF encoders and ignored otherwise.
    pub fn new(spec: &EmbeddingSpec, input_dim: usize, ranges: [(f64, f64); 2]) -> Result<Self> {
        let v = spec.violations(input_dim);
        if !v.is_empty() {
            return Err(Error::Config(v));
        }
        if input_dim == 0 {
            return Err(Error::config("set encoder input dimension must be positive"));
        }
        let mlp = match spec {
            EmbeddingSpec::NnMean { hidden }
            | EmbeddingSpec::Softmax { hidden, .. }
            | EmbeddingSpec::Max { hidden } => {
                Some(MlpSpec::with_hidden(input_dim, hidden, Activation::Relu, None)?)
            }
            EmbeddingSpec::Concat {
                max_neighbors,
                hidden,
            } => Some(MlpSpec::with_hidden(
                input_dim * max_neighbors,
                hidden,
                Activation::Relu,
                None,
            )?),
            _ => None,
        };
        Ok(SetEncoder {
            spec: spec.clone(),
            input_dim,
            ranges,
            mlp,
        })
    }

    pub fn spec(&self) -> &EmbeddingSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        match &self.spec {
            EmbeddingSpec::Histogram { bins: n, .. } | EmbeddingSpec::Rbf { centers: n, .. } => {
                n * n
            }
            EmbeddingSpec::Moments { orders } => self.input_dim * orders.len(),
            _ => self.mlp.as_ref().map_or(0, |m| m.output_len()),
        }
    }

    pub fn num_params(&self) -> usize {
        self.mlp.as_ref().map_or(0, |m| m.num_params())
    }

    pub fn layout(&self) -> ParamLayout {
        self.mlp.as_ref().map_or_else(ParamLayout::new, |m| m.layout())
    }

    pub fn feature_network(&self) -> Option<&MlpSpec> {
        self.mlp.as_ref()
    }

    pub fn init<T: Scalar, R: rand::Rng + ?Sized>(&self, rng: &mut R, params: &mut [T]) {
        if let Some(m) = &self.mlp {
            m.init(rng, params, 1.0);
        }
    }

    fn check_params<T>(&self, params: &[T]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::shape("encoder parameters", self.num_params(), params.len()));
        }
        Ok(())
    }

    /// Embeds a single set.
    pub fn embed<T: Scalar>(&self, params: &[T], set: &Matrix<T>) -> Result<Embedding<T>> {
        let batch = SetBatch::from_sets(self.input_dim, [set])?;
        let trace = self.forward(params, &batch)?;
        Ok(Embedding {
            values: trace.output.row(0).to_vec(),
            empty: trace.empty[0],
        })
    }

    pub fn forward<T: Scalar>(&self, params: &[T], batch: &SetBatch<T>) -> Result<EncoderTrace<T>> {
        self.check_params(params)?;
        if batch.rows.cols() != self.input_dim {
            return Err(Error::shape("encoder input", self.input_dim, batch.rows.cols()));
        }
        let sets = batch.len();
        let dim = self.output_dim();
        let empty: Vec<bool> = (0..sets).map(|b| batch.range(b).is_empty()).collect();
        let mut output = Matrix::zeros(sets, dim);
        let mut pool = PoolCache::None;
        let mut mlp_trace = None;
        match &self.spec {
            EmbeddingSpec::NnMean { .. }
            | EmbeddingSpec::Softmax { .. }
            | EmbeddingSpec::Max { .. } => {
                let mlp = self.mlp.as_ref().expect("feature network");
                let trace = mlp_forward_batch(mlp, params, &batch.rows)?;
                let feat = trace.output();
                match &self.spec {
                    EmbeddingSpec::Softmax { alpha, .. } => {
                        let mut weights = Matrix::zeros(feat.rows(), dim);
                        let a = T::lit(*alpha);
                        for b in 0..sets {
                            softmax_rows(feat, batch.range(b), a, output.row_mut(b), &mut weights);
                        }
                        pool = PoolCache::Softmax(weights);
                    }
                    EmbeddingSpec::Max { .. } => {
                        let mut argmax = vec![0; sets * dim];
                        for b in 0..sets {
                            max_rows(
                                feat,
                                batch.range(b),
                                output.row_mut(b),
                                &mut argmax[b * dim..(b + 1) * dim],
                            );
                        }
                        pool = PoolCache::Max(argmax);
                    }
                    _ => {
                        for b in 0..sets {
                            mean_rows(feat, batch.range(b), output.row_mut(b));
                        }
                    }
                }
                mlp_trace = Some(trace);
            }
            EmbeddingSpec::Concat { max_neighbors, .. } => {
                let mlp = self.mlp.as_ref().expect("feature network");
                let mut padded = Matrix::zeros(sets, mlp.input_len());
                for b in 0..sets {
                    concat_into(&batch.rows, batch.range(b), *max_neighbors, padded.row_mut(b));
                }
                let trace = mlp_forward_batch(mlp, params, &padded)?;
                for b in 0..sets {
                    if !empty[b] {
                        output.row_mut(b).copy_from_slice(trace.output().row(b));
                    }
                }
                mlp_trace = Some(trace);
            }
            EmbeddingSpec::Histogram { bins, raw_sum } => {
                for b in 0..sets {
                    let out = output.row_mut(b);
                    for r in batch.range(b) {
                        out[histogram_cell(batch.rows.row(r), self.ranges, *bins)] += T::one();
                    }
                    if !raw_sum && !empty[b] {
                        let n = T::lit(batch.range(b).len() as f64);
                        out.iter_mut().for_each(|v| *v /= n);
                    }
                }
            }
            EmbeddingSpec::Rbf { centers, raw_sum } => {
                let mut feat = Matrix::zeros(batch.rows.rows(), dim);
                for r in 0..batch.rows.rows() {
                    rbf_into(batch.rows.row(r), self.ranges, *centers, feat.row_mut(r));
                }
                for b in 0..sets {
                    if *raw_sum {
                        sum_rows(&feat, batch.range(b), output.row_mut(b));
                    } else {
                        mean_rows(&feat, batch.range(b), output.row_mut(b));
                    }
                }
            }
            EmbeddingSpec::Moments { orders } => {
                for b in 0..sets {
                    moments_into(&batch.rows, batch.range(b), orders, output.row_mut(b));
                }
            }
        }
        Ok(EncoderTrace {
            output,
            empty,
            offsets: batch.offsets.clone(),
            mlp: mlp_trace,
            pool,
        })
    }

    /// Maps a gradient with respect to the set embeddings onto the rows of
    /// the feature network output.
    fn pool_adjoint<T: Scalar>(&self, trace: &EncoderTrace<T>, upstream: &Matrix<T>) -> Matrix<T> {
        let mlp = trace.mlp.as_ref().expect("feature network trace");
        let feat = mlp.output();
        let dim = feat.cols();
        let sets = trace.empty.len();
        let range = |b: usize| trace.offsets[b]..trace.offsets[b + 1];
        if self.spec.is_concat() {
            let mut d = upstream.clone();
            for b in 0..sets {
                if trace.empty[b] {
                    d.row_mut(b).iter_mut().for_each(|v| *v = T::zero());
                }
            }
            return d;
        }
        let mut d = Matrix::zeros(feat.rows(), dim);
        for b in 0..sets {
            let up = upstream.row(b);
            match &trace.pool {
                PoolCache::Softmax(w) => {
                    let alpha = match &self.spec {
                        EmbeddingSpec::Softmax { alpha, .. } => T::lit(*alpha),
                        _ => unreachable!(),
                    };
                    let psi = trace.output.row(b);
                    for r in range(b) {
                        let (fr, wr) = (feat.row(r), w.row(r));
                        let dr = d.row_mut(r);
                        for k in 0..dim {
                            dr[k] = up[k] * wr[k] * (T::one() + alpha * (fr[k] - psi[k]));
                        }
                    }
                }
                PoolCache::Max(argmax) => {
                    if !trace.empty[b] {
                        for k in 0..dim {
                            d.row_mut(argmax[b * dim + k])[k] += up[k];
                        }
                    }
                }
                PoolCache::None => {
                    let n = range(b).len();
                    if n > 0 {
                        let inv = T::one() / T::lit(n as f64);
                        for r in range(b) {
                            for (dv, u) in d.row_mut(r).iter_mut().zip(up) {
                                *dv = *u * inv;
                            }
                        }
                    }
                }
            }
        }
        d
    }

    /// Accumulates `d(sum upstream . output)/d params` into `grad`.
    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        trace: &EncoderTrace<T>,
        upstream: &Matrix<T>,
        grad: &mut [T],
    ) {
        if let (Some(mlp), Some(mt)) = (&self.mlp, &trace.mlp) {
            let d = self.pool_adjoint(trace, upstream);
            mlp_backward(mlp, params, mt, &d, grad);
        }
    }

    /// Directional derivative of the set embeddings along a parameter tangent.
    pub fn jvp<T: Scalar>(&self, params: &[T], trace: &EncoderTrace<T>, tangent: &[T]) -> Matrix<T> {
        let sets = trace.empty.len();
        let dim = self.output_dim();
        let mut out = Matrix::zeros(sets, dim);
        let (Some(mlp), Some(mt)) = (&self.mlp, &trace.mlp) else {
            return out;
        };
        let df = mlp_jvp(mlp, params, mt, tangent, None);
        if self.spec.is_concat() {
            for b in 0..sets {
                if !trace.empty[b] {
                    out.row_mut(b).copy_from_slice(df.row(b));
                }
            }
            return out;
        }
        let feat = mt.output();
        for b in 0..sets {
            let range = trace.offsets[b]..trace.offsets[b + 1];
            if range.is_empty() {
                continue;
            }
            let o = out.row_mut(b);
            match &trace.pool {
                PoolCache::Softmax(w) => {
                    let alpha = match &self.spec {
                        EmbeddingSpec::Softmax { alpha, .. } => T::lit(*alpha),
                        _ => unreachable!(),
                    };
                    let psi = trace.output.row(b);
                    for r in range {
                        let (fr, wr, dr) = (feat.row(r), w.row(r), df.row(r));
                        for k in 0..dim {
                            o[k] += wr[k] * (T::one() + alpha * (fr[k] - psi[k])) * dr[k];
                        }
                    }
                }
                PoolCache::Max(argmax) => {
                    for k in 0..dim {
                        o[k] = df.row(argmax[b * dim + k])[k];
                    }
                }
                PoolCache::None => mean_rows(&df, range, o),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::mlp_forward;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const PLANAR: [(f64, f64); 2] = [(0.0, 8.0), (-PI, PI)];

    #[test]
    fn named_defaults_cover_every_kind() {
        for name in ["nn_mean", "histogram", "rbf", "softmax", "max", "concat", "moments"] {
            let spec = EmbeddingSpec::with_defaults(name, 7).unwrap();
            assert_eq!(spec.name(), name);
        }
        assert_eq!(EmbeddingSpec::with_defaults("hist", 1).unwrap().name(), "histogram");
        assert!(EmbeddingSpec::with_defaults("sum", 1).is_none());
    }

    fn random_set(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
        let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn encoder_with_params(spec: EmbeddingSpec, dim: usize, seed: u64) -> (SetEncoder, Vec<f64>) {
        let enc = SetEncoder::new(&spec, dim, PLANAR).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; enc.num_params()];
        enc.init(&mut rng, &mut p);
        for v in &mut p {
            *v += rng.random_range(-0.1..0.1);
        }
        (enc, p)
    }

    fn all_specs() -> Vec<EmbeddingSpec> {
        vec![
            EmbeddingSpec::NnMean { hidden: vec![16] },
            EmbeddingSpec::Histogram { bins: 8, raw_sum: false },
            EmbeddingSpec::Rbf { centers: 8, raw_sum: false },
            EmbeddingSpec::Softmax { alpha: 2.0, hidden: vec![16] },
            EmbeddingSpec::Max { hidden: vec![16] },
            EmbeddingSpec::Concat { max_neighbors: 4, hidden: vec![16] },
            EmbeddingSpec::Moments { orders: default_orders() },
        ]
    }

    #[test]
    fn histogram_one_hot_index() {
        // bin width 1 on [0, 8]; bearing bin width pi/4 on (-pi, pi]
        let o = [3.5, PI / 4.0 + 0.1];
        let h = feature_map_histogram(&o, PLANAR, 8);
        assert_eq!(h.iter().sum::<f64>(), 1.0);
        assert_eq!(h[3 * 8 + 5], 1.0);
    }

    #[test]
    fn histogram_clips_and_breaks_ties_low() {
        let h = feature_map_histogram(&[50.0, 0.0], PLANAR, 8);
        assert_eq!(h.iter().position(|&v| v == 1.0).unwrap() / 8, 7);
        // the edge between distance bins 2 and 3 is 0 + 8 * 3 / 8
        let edge = 0.0 + (8.0 - 0.0) * 3.0 / 8.0;
        let h = feature_map_histogram(&[edge, 0.0], PLANAR, 8);
        assert_eq!(h.iter().position(|&v| v == 1.0).unwrap() / 8, 2);
        let h = feature_map_histogram(&[edge + 1e-12, 0.0], PLANAR, 8);
        assert_eq!(h.iter().position(|&v| v == 1.0).unwrap() / 8, 3);
        // bearing exactly pi lands in the last bin, exactly at -pi in the first
        assert_eq!(bin_index(PI, PLANAR[1], 8), 7);
        assert_eq!(bin_index(-PI, PLANAR[1], 8), 0);
    }

    #[test]
    fn rbf_peak_and_offset() {
        // centres at 0.5, 1.5, ... for distance; (-pi + pi/8) + k pi/4 for bearing
        let mu_b = -PI + PI / 8.0 + 2.0 * PI / 4.0;
        let r = feature_map_rbf(&[2.5, mu_b], PLANAR, 8);
        assert!((r[2 * 8 + 2] - 1.0).abs() < 1e-15);
        let r = feature_map_rbf(&[2.5 + 1.0, mu_b], PLANAR, 8);
        assert!((r[2 * 8 + 2] - (-0.5f64).exp()).abs() < 1e-12);
        assert!(r.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn mean_of_identical_vectors() {
        let row = [0.3f64, -1.7, 4.0];
        for n in 1..6 {
            let m = Matrix::<f64>::from_rows(3, &vec![row; n]).unwrap();
            let e = embed_mean(&m);
            for (a, b) in e.values.iter().zip(&row) {
                assert!((a - b).abs() < 1e-15);
            }
            assert!(!e.empty);
        }
        let e = embed_mean(&Matrix::<f64>::empty(3));
        assert_eq!(e.values, vec![0.0; 3]);
        assert!(e.empty);
    }

    #[test]
    fn softmax_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_set(&mut rng, 7, 4);
        let s = pool_softmax(&m, 0.0);
        for (a, b) in s.values.iter().zip(embed_mean(&m).values) {
            assert!((a - b).abs() < 1e-9);
        }
        let two = Matrix::<f64>::from_rows(1, &[[0.0], [1.0]]).unwrap();
        assert!((pool_softmax(&two, 50.0).values[0] - 1.0).abs() < 1e-9);
        let single = Matrix::from_rows(2, &[[0.4, -9.0]]).unwrap();
        for alpha in [0.0, 1.0, 100.0] {
            assert_eq!(pool_softmax(&single, alpha).values, vec![0.4, -9.0]);
        }
    }

    #[test]
    fn max_pool_example() {
        let m = Matrix::from_rows(2, &[[1.0, -2.0], [0.0, 5.0]]).unwrap();
        assert_eq!(pool_max(&m).values, vec![1.0, 5.0]);
    }

    #[test]
    fn concat_pads_and_truncates() {
        let m = Matrix::from_rows(2, &[[3.0, 0.1], [1.0, 0.2]]).unwrap();
        assert_eq!(concat_features(&m, 4), vec![1.0, 0.2, 3.0, 0.1, 0.0, 0.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let five = random_set(&mut rng, 5, 2);
        let out = concat_features(&five, 4);
        // brute force: the dropped row is the one with the largest first column
        let far = (0..5)
            .max_by(|&a, &b| five.row(a)[0].total_cmp(&five.row(b)[0]))
            .unwrap();
        let kept: Vec<usize> = (0..5).filter(|&r| r != far).collect();
        for r in kept {
            assert!(out.chunks(2).any(|c| c == five.row(r)));
        }
        assert!(!out.chunks(2).any(|c| c == five.row(far)));
        for w in out.chunks(2).collect::<Vec<_>>().windows(2) {
            assert!(w[0][0] <= w[1][0]);
        }
    }

    #[test]
    fn moments_conventions() {
        let same = Matrix::from_rows(1, &[[2.5]; 6]).unwrap();
        assert_eq!(moment_features(&same, &default_orders()).values, vec![2.5, 0.0, 0.0, 0.0]);
        let pm = Matrix::from_rows(1, &[[-1.0], [1.0]]).unwrap();
        let v = moment_features(&pm, &[Moment::Mean, Moment::Std]).values;
        assert_eq!(v, vec![0.0, 1.0]);
        let sym = Matrix::<f64>::from_rows(1, &[[-3.0], [-1.0], [0.0], [1.0], [3.0]]).unwrap();
        assert!(moment_features(&sym, &[Moment::Skew]).values[0].abs() < 1e-15);
        // two-point symmetric distribution has excess kurtosis -2
        let two = Matrix::<f64>::from_rows(1, &[[-1.0], [1.0], [-1.0], [1.0]]).unwrap();
        assert!((moment_features(&two, &[Moment::Kurtosis]).values[0] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn nn_mean_matches_mlp_then_mean() {
        let (enc, p) = encoder_with_params(EmbeddingSpec::NnMean { hidden: vec![8] }, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let set = random_set(&mut rng, 5, 3);
        let e = enc.embed(&p, &set).unwrap();
        let mlp = enc.feature_network().unwrap();
        let mut expected = vec![0.0; 8];
        for r in set.iter_rows() {
            for (x, y) in expected.iter_mut().zip(mlp_forward(mlp, &p, r).unwrap()) {
                *x += y / 5.0;
            }
        }
        for (a, b) in e.values.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn histogram_and_rbf_reject_extended_features() {
        for spec in [
            EmbeddingSpec::Histogram { bins: 8, raw_sum: false },
            EmbeddingSpec::Rbf { centers: 8, raw_sum: false },
        ] {
            assert!(matches!(SetEncoder::new(&spec, 3, PLANAR), Err(Error::Config(_))));
        }
    }

    #[test]
    fn spec_parses_from_toml() {
        let s: EmbeddingSpec = toml::from_str("kind = \"softmax\"\nalpha = 3.0").unwrap();
        assert_eq!(s, EmbeddingSpec::Softmax { alpha: 3.0, hidden: vec![64] });
        let s: EmbeddingSpec = toml::from_str("kind = \"concat\"\nmax_neighbors = 9").unwrap();
        assert!(s.is_concat());
        assert!(toml::from_str::<EmbeddingSpec>("kind = \"max\"\nbogus = 1").is_err());
    }

    fn fd_check(spec: EmbeddingSpec, seed: u64) {
        let (enc, p) = encoder_with_params(spec, 2, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let sets: Vec<Matrix<f64>> = (0..4).map(|b| random_set(&mut rng, b * 2, 2)).collect();
        let batch = SetBatch::from_sets(2, &sets).unwrap();
        let trace = enc.forward(&p, &batch).unwrap();
        let up = random_set(&mut rng, 4, enc.output_dim());
        let mut grad = vec![0.0; p.len()];
        enc.backward(&p, &trace, &up, &mut grad);
        let tangent: Vec<f64> = (0..p.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let jv = enc.jvp(&p, &trace, &tangent);
        let f = |q: &[f64]| -> f64 {
            let t = enc.forward(q, &batch).unwrap();
            t.output.as_slice().iter().zip(up.as_slice()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for i in 0..p.len() {
            let (mut a, mut b) = (p.clone(), p.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-6 + 1e-4 * fd.abs(), "param {i}: {fd} vs {}", grad[i]);
        }
        let (mut a, mut b) = (p.clone(), p.clone());
        for i in 0..p.len() {
            a[i] += h * tangent[i];
            b[i] -= h * tangent[i];
        }
        let (ta, tb) = (enc.forward(&a, &batch).unwrap(), enc.forward(&b, &batch).unwrap());
        for k in 0..jv.as_slice().len() {
            let fd = (ta.output.as_slice()[k] - tb.output.as_slice()[k]) / (2.0 * h);
            assert!((fd - jv.as_slice()[k]).abs() <= 1e-6 + 1e-4 * fd.abs());
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        fd_check(EmbeddingSpec::NnMean { hidden: vec![6, 5] }, 1);
        fd_check(EmbeddingSpec::Softmax { alpha: 1.5, hidden: vec![6] }, 2);
        fd_check(EmbeddingSpec::Max { hidden: vec![6] }, 3);
        fd_check(EmbeddingSpec::Concat { max_neighbors: 3, hidden: vec![6] }, 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn permutation_and_size_invariance(seed in 0u64..10_000, rows in 0usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let set = random_set(&mut rng, rows, 2);
            let mut perm: Vec<usize> = (0..rows).collect();
            for i in (1..rows).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let permuted = set.select_rows(&perm);
            for spec in all_specs() {
                let (enc, p) = encoder_with_params(spec.clone(), 2, seed);
                let a = enc.embed(&p, &set).unwrap();
                let b = enc.embed(&p, &permuted).unwrap();
                prop_assert_eq!(a.values.len(), enc.output_dim());
                prop_assert_eq!(a.empty, rows == 0);
                for (x, y) in a.values.iter().zip(&b.values) {
                    prop_assert!((x - y).abs() < 1e-9, "{}: {} vs {}", spec.name(), x, y);
                }
            }
        }

        #[test]
        fn width_is_constant_in_set_size(seed in 0u64..10_000, rows in 0usize..=64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let set = random_set(&mut rng, rows, 2);
            for spec in all_specs() {
                let (enc, p) = encoder_with_params(spec, 2, seed);
                prop_assert_eq!(enc.embed(&p, &set).unwrap().values.len(), enc.output_dim());
            }
        }

        #[test]
        fn max_pool_ignores_duplicates(seed in 0u64..10_000, rows in 1usize..12, copies in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let set = random_set(&mut rng, rows, 3);
            let order: Vec<usize> = (0..rows * copies).map(|_| rng.random_range(0..rows)).chain(0..rows).collect();
            prop_assert_eq!(pool_max(&set.select_rows(&order)).values, pool_max(&set).values);
        }

        #[test]
        fn softmax_approaches_max(seed in 0u64..10_000, rows in 1usize..10) {
            // distinct values with gaps of at least 0.1 per dimension
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cols = 3;
            let mut data = vec![0.0; rows * cols];
            for c in 0..cols {
                let mut vals: Vec<f64> = (0..rows).map(|k| 0.1 * k as f64 + rng.random_range(0.0..0.02)).collect();
                vals.shuffle(&mut rng);
                for (r, v) in vals.into_iter().enumerate() {
                    data[r * cols + c] = v - 0.3;
                }
            }
            let set = Matrix::from_vec(rows, cols, data).unwrap();
            let soft = pool_softmax(&set, 1e3).values;
            for (a, b) in soft.iter().zip(pool_max(&set).values) {
                prop_assert!((a - b).abs() < 1e-6, "{} vs {}", a, b);
            }
        }

        #[test]
        fn histogram_mass_is_one(seed in 0u64..10_000, rows in 1usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let set = random_set(&mut rng, rows, 2);
            for r in 0..rows {
                let h = feature_map_histogram(set.row(r), PLANAR, 5);
                prop_assert_eq!(h.iter().sum::<f64>(), 1.0);
            }
            let (enc, p) = encoder_with_params(EmbeddingSpec::Histogram { bins: 5, raw_sum: false }, 2, seed);
            let total: f64 = enc.embed(&p, &set).unwrap().values.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
