//! Fixed-topology feed-forward networks with a hand-derived backward pass.
//!
//! Parameters live in one flat buffer, layer by layer: the `out × in` weight
//! matrix (row-major) followed by the `out` biases. Gradients and optimizer
//! moments reuse the same layout, so updates are plain slice arithmetic.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{gemm_ab, gemm_abt, gemm_atb_acc, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    Softmax,
}

impl Activation {
    pub(crate) fn apply_row(self, row: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => row.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => row.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Sigmoid => row.iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::Softmax => softmax_in_place(row),
        }
    }

    /// Maps the gradient w.r.t. the activation output `y` to the gradient
    /// w.r.t. the pre-activation, in place.
    fn backprop_row(self, y: &[f64], dy: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => {
                for (d, &v) in dy.iter_mut().zip(y) {
                    if v <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for (d, &v) in dy.iter_mut().zip(y) {
                    *d *= 1.0 - v * v;
                }
            }
            Activation::Sigmoid => {
                for (d, &v) in dy.iter_mut().zip(y) {
                    *d *= v * (1.0 - v);
                }
            }
            Activation::Softmax => {
                let dot: f64 = dy.iter().zip(y).map(|(d, v)| d * v).sum();
                for (d, &v) in dy.iter_mut().zip(y) {
                    *d = v * (*d - dot);
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut out = z.to_vec();
    softmax_in_place(&mut out);
    out
}

/// `log softmax(z)` computed without forming the probabilities.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerShape {
    pub fn new(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            activation,
        }
    }

    fn num_params(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// Dense network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    shapes: Vec<LayerShape>,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

/// Gradient of a scalar loss w.r.t. every parameter of a [`Network`], same flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    data: Vec<f64>,
}

/// Post-activation values of every layer from a batched forward pass.
/// `acts[0]` is the input and `acts[k + 1]` the output of layer `k`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    acts: Vec<Matrix>,
}

impl ForwardCache {
    pub fn input(&self) -> &Matrix {
        &self.acts[0]
    }

    pub fn output(&self) -> &Matrix {
        self.acts.last().expect("cache holds at least the input")
    }

    /// Output of hidden/final layer `k`.
    pub fn layer_output(&self, k: usize) -> &Matrix {
        &self.acts[k + 1]
    }
}

impl Network {
    /// Zero-initialized network; fails unless adjacent layer sizes chain.
    pub fn zeros(shapes: Vec<LayerShape>) -> Result<Self> {
        if shapes.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        for (k, s) in shapes.iter().enumerate() {
            if s.inputs == 0 || s.outputs == 0 {
                return Err(Error::config(format!("layer {k} has a zero dimension")));
            }
        }
        for (k, w) in shapes.windows(2).enumerate() {
            if w[0].outputs != w[1].inputs {
                return Err(Error::config(format!(
                    "layer {k} outputs {} but layer {} expects {}",
                    w[0].outputs,
                    k + 1,
                    w[1].inputs
                )));
            }
        }
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut total = 0;
        for s in &shapes {
            offsets.push(total);
            total += s.num_params();
        }
        Ok(Self {
            shapes,
            offsets,
            params: vec![0.0; total],
        })
    }

    /// Builds `input → hidden… → output` with glorot-uniform weights and zero biases.
    pub fn mlp<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        hidden_activation: Activation,
        output: usize,
        output_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut shapes = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for &h in hidden {
            shapes.push(LayerShape::new(prev, h, hidden_activation));
            prev = h;
        }
        shapes.push(LayerShape::new(prev, output, output_activation));
        let mut net = Self::zeros(shapes)?;
        net.init_glorot(rng);
        Ok(net)
    }

    /// Builds a network from explicit `(weights, bias, activation)` triples;
    /// weights are row-major `out × in`.
    pub fn from_layers(layers: Vec<(Vec<f64>, Vec<f64>, Activation)>) -> Result<Self> {
        let mut shapes = Vec::with_capacity(layers.len());
        for (k, (w, b, act)) in layers.iter().enumerate() {
            let out = b.len();
            if out == 0 || w.len() % out != 0 {
                return Err(Error::config(format!("layer {k}: weight/bias sizes disagree")));
            }
            shapes.push(LayerShape::new(w.len() / out, out, *act));
        }
        let mut net = Self::zeros(shapes)?;
        for (k, (w, b, _)) in layers.into_iter().enumerate() {
            net.weights_mut(k).copy_from_slice(&w);
            net.bias_mut(k).copy_from_slice(&b);
        }
        Ok(net)
    }

    /// Uniform in ±√(6/(fan_in+fan_out)) for weights, zero biases.
    pub fn init_glorot<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for k in 0..self.shapes.len() {
            let s = self.shapes[k];
            let limit = (6.0 / (s.inputs + s.outputs) as f64).sqrt();
            for w in self.weights_mut(k) {
                *w = rng.random_range(-limit..limit);
            }
            self.bias_mut(k).fill(0.0);
        }
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn input_dim(&self) -> usize {
        self.shapes[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.shapes.last().expect("nonempty").outputs
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn weights(&self, k: usize) -> &[f64] {
        let s = self.shapes[k];
        let o = self.offsets[k];
        &self.params[o..o + s.inputs * s.outputs]
    }

    pub fn weights_mut(&mut self, k: usize) -> &mut [f64] {
        let s = self.shapes[k];
        let o = self.offsets[k];
        &mut self.params[o..o + s.inputs * s.outputs]
    }

    pub fn bias(&self, k: usize) -> &[f64] {
        let s = self.shapes[k];
        let o = self.offsets[k] + s.inputs * s.outputs;
        &self.params[o..o + s.outputs]
    }

    pub fn bias_mut(&mut self, k: usize) -> &mut [f64] {
        let s = self.shapes[k];
        let o = self.offsets[k] + s.inputs * s.outputs;
        &mut self.params[o..o + s.outputs]
    }

    /// True when both networks have identical layer shapes.
    pub fn same_shape(&self, other: &Network) -> bool {
        self.shapes == other.shapes
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::config(format!(
                "input has {cols} features, network expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn layer_forward(&self, k: usize, x: &Matrix) -> Matrix {
        let s = self.shapes[k];
        let mut z = Matrix::zeros(x.rows(), s.outputs);
        gemm_abt(
            x.rows(),
            s.inputs,
            s.outputs,
            x.as_slice(),
            self.weights(k),
            z.as_mut_slice(),
        );
        let b = self.bias(k);
        for i in 0..z.rows() {
            let row = z.row_mut(i);
            for (v, bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
            s.activation.apply_row(row);
        }
        z
    }

    /// Batched forward pass keeping every layer's activations for [`Network::backward`].
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(x.cols())?;
        let mut acts = Vec::with_capacity(self.shapes.len() + 1);
        acts.push(x.clone());
        for k in 0..self.shapes.len() {
            let next = self.layer_forward(k, &acts[k]);
            acts.push(next);
        }
        let out = acts.last().expect("nonempty").clone();
        Ok((out, ForwardCache { acts }))
    }

    /// Batched forward pass without a cache.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x.cols())?;
        let mut cur = self.layer_forward(0, x);
        for k in 1..self.shapes.len() {
            cur = self.layer_forward(k, &cur);
        }
        Ok(cur)
    }

    /// Runs layers `start..` on `x`, which must already be the input of layer `start`.
    pub fn predict_tail(&self, start: usize, x: &Matrix) -> Result<Matrix> {
        if start >= self.shapes.len() {
            return Ok(x.clone());
        }
        if x.cols() != self.shapes[start].inputs {
            return Err(Error::config("tail input width mismatch"));
        }
        let mut cur = self.layer_forward(start, x);
        for k in start + 1..self.shapes.len() {
            cur = self.layer_forward(k, &cur);
        }
        Ok(cur)
    }

    /// Forward pass for one input vector using plain dot products.
    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        let mut cur = x.to_vec();
        for k in 0..self.shapes.len() {
            let s = self.shapes[k];
            let w = self.weights(k);
            let b = self.bias(k);
            let mut next: Vec<f64> = (0..s.outputs)
                .map(|o| dot(&w[o * s.inputs..(o + 1) * s.inputs], &cur) + b[o])
                .collect();
            s.activation.apply_row(&mut next);
            cur = next;
        }
        Ok(cur)
    }

    /// Backward pass. `d_out` holds the loss gradient w.r.t. each output row;
    /// parameter gradients are summed over the batch.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Matrix) -> Result<(ParamGrads, Matrix)> {
        let mut grads = ParamGrads::zeros_like(self);
        let d_in = self.backward_impl(cache, d_out, Some(&mut grads))?;
        Ok((grads, d_in))
    }

    /// Like [`Network::backward`] but adds into an existing gradient buffer.
    pub fn backward_acc(
        &self,
        cache: &ForwardCache,
        d_out: &Matrix,
        grads: &mut ParamGrads,
    ) -> Result<Matrix> {
        if grads.data.len() != self.params.len() {
            return Err(Error::config("gradient buffer does not match network"));
        }
        self.backward_impl(cache, d_out, Some(grads))
    }

    /// Gradient w.r.t. the input only; parameter gradients are not formed.
    pub fn input_gradient(&self, cache: &ForwardCache, d_out: &Matrix) -> Result<Matrix> {
        self.backward_impl(cache, d_out, None)
    }

    fn check_cache(&self, cache: &ForwardCache, d_out: &Matrix) -> Result<()> {
        let stale = || Error::config("stale forward cache: shapes do not match network");
        if cache.acts.len() != self.shapes.len() + 1 {
            return Err(stale());
        }
        let rows = cache.acts[0].rows();
        if cache.acts[0].cols() != self.input_dim() {
            return Err(stale());
        }
        for (k, s) in self.shapes.iter().enumerate() {
            let a = &cache.acts[k + 1];
            if a.cols() != s.outputs || a.rows() != rows {
                return Err(stale());
            }
        }
        if d_out.rows() != rows || d_out.cols() != self.output_dim() {
            return Err(Error::config(format!(
                "output gradient is {}x{}, expected {}x{}",
                d_out.rows(),
                d_out.cols(),
                rows,
                self.output_dim()
            )));
        }
        Ok(())
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        d_out: &Matrix,
        mut grads: Option<&mut ParamGrads>,
    ) -> Result<Matrix> {
        self.check_cache(cache, d_out)?;
        let rows = d_out.rows();
        let mut delta = d_out.clone();
        for k in (0..self.shapes.len()).rev() {
            let s = self.shapes[k];
            let y = &cache.acts[k + 1];
            for i in 0..rows {
                s.activation.backprop_row(y.row(i), delta.row_mut(i));
            }
            let x = &cache.acts[k];
            if let Some(g) = grads.as_deref_mut() {
                let o = self.offsets[k];
                let (gw, rest) = g.data[o..].split_at_mut(s.inputs * s.outputs);
                gemm_atb_acc(s.outputs, rows, s.inputs, delta.as_slice(), x.as_slice(), gw);
                let gb = &mut rest[..s.outputs];
                for i in 0..rows {
                    for (acc, d) in gb.iter_mut().zip(delta.row(i)) {
                        *acc += d;
                    }
                }
            }
            let mut d_prev = Matrix::zeros(rows, s.inputs);
            gemm_ab(
                rows,
                s.outputs,
                s.inputs,
                delta.as_slice(),
                self.weights(k),
                d_prev.as_mut_slice(),
            );
            delta = d_prev;
        }
        Ok(delta)
    }
}

impl ParamGrads {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            data: vec![0.0; net.num_params()],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|g| *g *= c);
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Single-vector forward pass returning the output and the activation cache.
pub fn dense_forward(net: &Network, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    let (out, cache) = net.forward(&Matrix::row_vector(x))?;
    Ok((out.into_vec(), cache))
}

/// Single-vector backward pass: parameter gradients and the input gradient.
pub fn dense_backward(
    net: &Network,
    cache: &ForwardCache,
    d_output: &[f64],
) -> Result<(ParamGrads, Vec<f64>)> {
    let (g, d_in) = net.backward(cache, &Matrix::row_vector(d_output))?;
    Ok((g, d_in.into_vec()))
}
