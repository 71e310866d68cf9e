use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ensure_finite, Matrix, ParamLayout};
use crate::{Error, Result, Scalar};

/// Elementwise non-linearity applied after an affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Elu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Identity => z,
            Activation::Relu => {
                if z > T::zero() {
                    z
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Elu => {
                if z > T::zero() {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Sigmoid => T::one() / (T::one() + (-z).exp()),
        }
    }

    /// Derivative at pre-activation `z` whose activation is `a`.
    #[inline]
    pub fn derivative<T: Scalar>(self, z: T, a: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - a * a,
            Activation::Elu => {
                if z > T::zero() {
                    T::one()
                } else {
                    a + T::one()
                }
            }
            Activation::Sigmoid => a * (T::one() - a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub size: usize,
    pub activation: Activation,
}

/// Fully connected feed-forward network shape.
///
/// Layer `k` owns a weight block `w{k}` (`size x fan_in`, row-major) followed by a
/// bias block `b{k}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    input: usize,
    layers: Vec<Layer>,
}

impl MlpSpec {
    pub fn new(input: usize, layers: Vec<Layer>) -> Result<Self> {
        if input == 0 {
            return Err(Error::config("MLP input size must be positive"));
        }
        if layers.is_empty() {
            return Err(Error::config("MLP needs at least one layer"));
        }
        if layers.iter().any(|l| l.size == 0) {
            return Err(Error::config("MLP layer sizes must be positive"));
        }
        Ok(MlpSpec { input, layers })
    }

    /// Hidden layers sharing one activation, optionally followed by a linear output layer.
    pub fn with_hidden(
        input: usize,
        hidden: &[usize],
        activation: Activation,
        output: Option<usize>,
    ) -> Result<Self> {
        let mut layers: Vec<Layer> = hidden
            .iter()
            .map(|&size| Layer { size, activation })
            .collect();
        if let Some(size) = output {
            layers.push(Layer {
                size,
                activation: Activation::Identity,
            });
        }
        Self::new(input, layers)
    }

    #[inline]
    pub fn input_len(&self) -> usize {
        self.input
    }

    #[inline]
    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, |l| l.size)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    fn fan_in(&self, k: usize) -> usize {
        if k == 0 {
            self.input
        } else {
            self.layers[k - 1].size
        }
    }

    pub fn num_params(&self) -> usize {
        (0..self.layers.len())
            .map(|k| (self.fan_in(k) + 1) * self.layers[k].size)
            .sum()
    }

    pub fn layout(&self) -> ParamLayout {
        let mut l = ParamLayout::new();
        for k in 0..self.layers.len() {
            l.push(format!("w{k}"), self.layers[k].size, self.fan_in(k));
            l.push(format!("b{k}"), 1, self.layers[k].size);
        }
        l
    }

    /// Offsets of `(weights, bias)` for layer `k`.
    fn offsets(&self, k: usize) -> (usize, usize) {
        let mut off = 0;
        for j in 0..k {
            off += (self.fan_in(j) + 1) * self.layers[j].size;
        }
        (off, off + self.fan_in(k) * self.layers[k].size)
    }

    /// Uniform fan-in/fan-out initialisation with zero biases; the last layer's
    /// weights are multiplied by `last_layer_scale`.
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        params: &mut [T],
        last_layer_scale: f64,
    ) {
        assert_eq!(params.len(), self.num_params());
        let last = self.layers.len() - 1;
        for k in 0..self.layers.len() {
            let (w, b) = self.offsets(k);
            let fan_in = self.fan_in(k);
            let fan_out = self.layers[k].size;
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let scale = if k == last { last_layer_scale } else { 1.0 };
            for p in &mut params[w..b] {
                *p = T::lit(rng.random_range(-limit..limit) * scale);
            }
            for p in &mut params[b..b + fan_out] {
                *p = T::zero();
            }
        }
    }

    fn check_params<T>(&self, params: &[T]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::shape("MLP parameters", self.num_params(), params.len()));
        }
        Ok(())
    }
}

/// Pre- and post-activations of every layer for a batch of inputs.
#[derive(Debug, Clone)]
pub struct MlpTrace<T> {
    pub input: Matrix<T>,
    pub pre: Vec<Matrix<T>>,
    pub post: Vec<Matrix<T>>,
}

impl<T: Scalar> MlpTrace<T> {
    pub fn output(&self) -> &Matrix<T> {
        self.post.last().expect("MLP has at least one layer")
    }

    fn layer_input(&self, k: usize) -> &Matrix<T> {
        if k == 0 {
            &self.input
        } else {
            &self.post[k - 1]
        }
    }
}

/// Runs the network on every row of `input`.
pub fn mlp_forward_batch<T: Scalar>(
    spec: &MlpSpec,
    params: &[T],
    input: &Matrix<T>,
) -> Result<MlpTrace<T>> {
    spec.check_params(params)?;
    if input.cols() != spec.input {
        return Err(Error::shape("MLP input", spec.input, input.cols()));
    }
    let rows = input.rows();
    let mut pre = Vec::with_capacity(spec.layers.len());
    let mut post: Vec<Matrix<T>> = Vec::with_capacity(spec.layers.len());
    for (k, layer) in spec.layers.iter().enumerate() {
        let x = if k == 0 { input } else { &post[k - 1] };
        let fan_in = x.cols();
        let (w_off, b_off) = spec.offsets(k);
        let w = &params[w_off..b_off];
        let b = &params[b_off..b_off + layer.size];
        let mut z = Matrix::zeros(rows, layer.size);
        let mut a = Matrix::zeros(rows, layer.size);
        for r in 0..rows {
            let xr = x.row(r);
            let zr = z.row_mut(r);
            for o in 0..layer.size {
                let wo = &w[o * fan_in..(o + 1) * fan_in];
                zr[o] = b[o] + super::dot(wo, xr);
            }
            let ar = a.row_mut(r);
            for o in 0..layer.size {
                ar[o] = layer.activation.apply(zr[o]);
            }
        }
        pre.push(z);
        post.push(a);
    }
    Ok(MlpTrace {
        input: input.clone(),
        pre,
        post,
    })
}

/// Forward pass for a single input vector.
pub fn mlp_forward<T: Scalar>(spec: &MlpSpec, params: &[T], input: &[T]) -> Result<Vec<T>> {
    ensure_finite(input, "MLP input")?;
    let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
    let trace = mlp_forward_batch(spec, params, &x)?;
    Ok(trace.output().row(0).to_vec())
}

/// Reverse pass: accumulates `d(sum upstream . output)/d params` into `grad` and
/// returns the gradient with respect to the inputs.
pub fn mlp_backward<T: Scalar>(
    spec: &MlpSpec,
    params: &[T],
    trace: &MlpTrace<T>,
    upstream: &Matrix<T>,
    grad: &mut [T],
) -> Matrix<T> {
    debug_assert_eq!(grad.len(), spec.num_params());
    let rows = trace.input.rows();
    let mut delta = upstream.clone();
    for k in (0..spec.layers.len()).rev() {
        let layer = spec.layers[k];
        let z = &trace.pre[k];
        let a = &trace.post[k];
        for r in 0..rows {
            let (zr, ar) = (z.row(r), a.row(r));
            for (o, d) in delta.row_mut(r).iter_mut().enumerate() {
                *d *= layer.activation.derivative(zr[o], ar[o]);
            }
        }
        let x = trace.layer_input(k);
        let fan_in = x.cols();
        let (w_off, b_off) = spec.offsets(k);
        let w = &params[w_off..b_off];
        let mut dx = Matrix::zeros(rows, fan_in);
        {
            let (gw, gb) = grad[w_off..b_off + layer.size].split_at_mut(b_off - w_off);
            for r in 0..rows {
                let xr = x.row(r);
                let dr = delta.row(r);
                let dxr = dx.row_mut(r);
                for o in 0..layer.size {
                    let d = dr[o];
                    if d == T::zero() {
                        continue;
                    }
                    gb[o] += d;
                    let gwo = &mut gw[o * fan_in..(o + 1) * fan_in];
                    super::axpy(d, xr, gwo);
                    super::axpy(d, &w[o * fan_in..(o + 1) * fan_in], dxr);
                }
            }
        }
        delta = dx;
    }
    delta
}

/// Gradient of `upstream . mlp(input)` with respect to the parameters.
pub fn mlp_gradient<T: Scalar>(
    spec: &MlpSpec,
    params: &[T],
    input: &[T],
    upstream: &[T],
) -> Result<Vec<T>> {
    if upstream.len() != spec.output_len() {
        return Err(Error::shape("MLP upstream", spec.output_len(), upstream.len()));
    }
    let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
    let trace = mlp_forward_batch(spec, params, &x)?;
    let mut grad = vec![T::zero(); spec.num_params()];
    let up = Matrix::from_vec(1, upstream.len(), upstream.to_vec())?;
    mlp_backward(spec, params, &trace, &up, &mut grad);
    Ok(grad)
}

/// Forward-mode directional derivative of the outputs along a parameter
/// tangent (and optionally an input tangent).
pub fn mlp_jvp<T: Scalar>(
    spec: &MlpSpec,
    params: &[T],
    trace: &MlpTrace<T>,
    param_tangent: &[T],
    input_tangent: Option<&Matrix<T>>,
) -> Matrix<T> {
    debug_assert_eq!(param_tangent.len(), spec.num_params());
    let rows = trace.input.rows();
    let mut tangent: Option<Matrix<T>> = input_tangent.cloned();
    for (k, layer) in spec.layers.iter().enumerate() {
        let x = trace.layer_input(k);
        let fan_in = x.cols();
        let (w_off, b_off) = spec.offsets(k);
        let w = &params[w_off..b_off];
        let dw = &param_tangent[w_off..b_off];
        let db = &param_tangent[b_off..b_off + layer.size];
        let mut out = Matrix::zeros(rows, layer.size);
        for r in 0..rows {
            let xr = x.row(r);
            let tr = tangent.as_ref().map(|t| t.row(r));
            let zr = trace.pre[k].row(r);
            let ar = trace.post[k].row(r);
            let or = out.row_mut(r);
            for o in 0..layer.size {
                let mut dz = db[o] + super::dot(&dw[o * fan_in..(o + 1) * fan_in], xr);
                if let Some(tr) = tr {
                    dz += super::dot(&w[o * fan_in..(o + 1) * fan_in], tr);
                }
                or[o] = layer.activation.derivative(zr[o], ar[o]) * dz;
            }
        }
        tangent = Some(out);
    }
    tangent.expect("MLP has at least one layer")
}
