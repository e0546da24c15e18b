//! Dense multilayer perceptrons with hand-written backpropagation and Adam.
//!
//! A network is a stack of affine layers `z = W x + b` followed by an
//! element-wise activation. Hidden layers use a leaky rectifier; the output
//! layer is either the identity or `tanh`.
//!
//! Batched inputs are row-major matrices of shape `(batch, features)`.
//! Layer weights have shape `(out, in)`.

use ndarray::{Array, Array1, Array2, ArrayView2, Dimension, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::{seeded, Error, Result, Rng};

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Largest double below one. `tanh` rounds to exactly 1.0 past |z| ~ 19.
const TANH_BOUND: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    LeakyRelu,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh().clamp(-TANH_BOUND, TANH_BOUND),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
        }
    }

    /// Multiplies `delta` by the derivative, read off the outputs `y`
    /// (LeakyReLU keeps the sign of its input, so `y` suffices), and returns
    /// the column sums of the result (the bias gradient).
    fn scale_by_derivative(self, delta: &mut Array2<f64>, y: &Array2<f64>) -> Array1<f64> {
        let mut db = Array1::zeros(delta.ncols());
        match self {
            Activation::Identity => for_rows(delta, y, &mut db, |_| 1.0),
            Activation::Tanh => for_rows(delta, y, &mut db, |y| 1.0 - y * y),
            Activation::LeakyRelu => for_rows(delta, y, &mut db, |y| if y > 0.0 { 1.0 } else { LEAKY_SLOPE }),
        }
        db
    }

    /// `z <- act(z + bias)` row by row.
    fn add_bias_and_apply(self, z: &mut Array2<f64>, bias: &Array1<f64>) {
        match self {
            Activation::Identity => map_rows(z, bias, |v| v),
            Activation::Tanh => map_rows(z, bias, |v| v.tanh().clamp(-TANH_BOUND, TANH_BOUND)),
            Activation::LeakyRelu => map_rows(z, bias, |v| if v > 0.0 { v } else { LEAKY_SLOPE * v }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Shape `(out, in)`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Dense feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<Layer>,
    hidden: Activation,
    output: Activation,
}

/// Intermediate values of a batched forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }
}

/// Per-layer parameter gradients, shaped like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            w.mapv_inplace(|v| v * factor);
            b.mapv_inplace(|v| v * factor);
        }
    }

    /// Flattened in the same order as [`Mlp::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    /// Index of the first layer holding a non-finite entry.
    pub fn first_non_finite_layer(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|(w, b)| w.iter().chain(b.iter()).any(|v| !v.is_finite()))
    }
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Backprop {
    pub params: Gradients,
    /// Gradient with respect to the network input, shape `(batch, in)`.
    pub input: Array2<f64>,
}

impl Mlp {
    /// Randomly initialized network with leaky-rectifier hidden layers.
    ///
    /// Weights and biases of each layer are drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new(sizes: &[usize], output: Activation, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        Self::with_rng(sizes, output, &mut rng)
    }

    pub fn with_rng(sizes: &[usize], output: Activation, rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(sizes, output)?;
        for layer in &mut net.layers {
            let limit = 1.0 / (layer.in_dim() as f64).sqrt();
            layer
                .weights
                .mapv_inplace(|_| rng.random_range(-limit..limit));
            layer.bias.mapv_inplace(|_| rng.random_range(-limit..limit));
        }
        Ok(net)
    }

    /// Network with every parameter set to zero.
    pub fn zeros(sizes: &[usize], output: Activation) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidNetwork(format!(
                "need at least input and output sizes, got {sizes:?}"
            )));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidNetwork(format!(
                "layer sizes must be positive, got {sizes:?}"
            )));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weights: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            layers,
            hidden: Activation::LeakyRelu,
            output,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn activation_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    fn layer_forward(&self, i: usize, x: ArrayView2<f64>) -> Array2<f64> {
        let layer = &self.layers[i];
        let mut z = x.dot(&layer.weights.t());
        self.activation_for(i).add_bias_and_apply(&mut z, &layer.bias);
        z
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "mlp input",
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        let mut x = Array1::from(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let act = self.activation_for(i);
            let mut z = layer.weights.dot(&x);
            z += &layer.bias;
            z.mapv_inplace(|v| act.apply(v));
            x = z;
        }
        Ok(x.to_vec())
    }

    /// Batched forward pass, `input` has shape `(batch, in)`.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(input)?;
        let mut x = self.layer_forward(0, input);
        for i in 1..self.layers.len() {
            x = self.layer_forward(i, x.view());
        }
        Ok(x)
    }

    /// Forward pass that records what [`Mlp::backward_tape`] needs.
    pub fn forward_tape(&self, input: ArrayView2<f64>) -> Result<Tape> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.to_owned();
        for i in 0..self.layers.len() {
            let y = self.layer_forward(i, x.view());
            inputs.push(x);
            x = y;
        }
        Ok(Tape { inputs, output: x })
    }

    /// Gradients of `sum(output * upstream)` with respect to every parameter
    /// and to the input.
    pub fn backward(&self, input: ArrayView2<f64>, upstream: ArrayView2<f64>) -> Result<Backprop> {
        let tape = self.forward_tape(input)?;
        self.backward_tape(&tape, upstream)
    }

    pub fn backward_tape(&self, tape: &Tape, upstream: ArrayView2<f64>) -> Result<Backprop> {
        let (params, input) = self.backprop(tape, upstream, true, true)?;
        Ok(Backprop {
            params: params.expect("requested"),
            input: input.expect("requested"),
        })
    }

    /// Parameter gradients only; skips the input-gradient product.
    pub fn param_gradients(&self, tape: &Tape, upstream: ArrayView2<f64>) -> Result<Gradients> {
        Ok(self.backprop(tape, upstream, true, false)?.0.expect("requested"))
    }

    /// Input gradient only; skips every weight-gradient product.
    pub fn input_gradient(&self, tape: &Tape, upstream: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.backprop(tape, upstream, false, true)?.1.expect("requested"))
    }

    fn backprop(
        &self,
        tape: &Tape,
        upstream: ArrayView2<f64>,
        want_params: bool,
        want_input: bool,
    ) -> Result<(Option<Gradients>, Option<Array2<f64>>)> {
        if upstream.dim() != tape.output.dim() {
            return Err(Error::DimensionMismatch {
                context: "mlp upstream gradient",
                expected: tape.output.len(),
                actual: upstream.len(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        for i in (0..self.layers.len()).rev() {
            let y = if i + 1 == self.layers.len() {
                &tape.output
            } else {
                &tape.inputs[i + 1]
            };
            let db = self.activation_for(i).scale_by_derivative(&mut delta, y);
            if want_params {
                grads.push((delta.t().dot(&tape.inputs[i]), db));
            }
            if i > 0 || want_input {
                delta = delta.dot(&self.layers[i].weights);
            }
        }
        grads.reverse();
        let params = want_params.then_some(Gradients { layers: grads });
        Ok((params, want_input.then_some(delta)))
    }

    fn check_input(&self, input: ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "mlp batch input",
                expected: self.input_dim(),
                actual: input.ncols(),
            });
        }
        Ok(())
    }

    /// All parameters, layer by layer: weights (row-major) then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weights.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "mlp parameter vector",
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        if let Some(pos) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {pos}")));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    /// Polyak averaging: `self <- tau * source + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) {
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            Zip::from(&mut dst.weights)
                .and(&src.weights)
                .for_each(|d, &s| *d = tau * s + (1.0 - tau) * *d);
            Zip::from(&mut dst.bias)
                .and(&src.bias)
                .for_each(|d, &s| *d = tau * s + (1.0 - tau) * *d);
        }
    }

    pub fn snapshot(&self) -> MlpSnapshot {
        MlpSnapshot {
            sizes: self.sizes.clone(),
            hidden: self.hidden,
            output: self.output,
            weights: self
                .layers
                .iter()
                .map(|l| l.weights.iter().copied().collect())
                .collect(),
            biases: self.layers.iter().map(|l| l.bias.to_vec()).collect(),
        }
    }

    pub fn from_snapshot(snapshot: &MlpSnapshot) -> Result<Self> {
        let mut net = Self::zeros(&snapshot.sizes, snapshot.output)?;
        net.hidden = snapshot.hidden;
        if snapshot.weights.len() != net.layers.len() || snapshot.biases.len() != net.layers.len()
        {
            return Err(Error::Snapshot("layer count does not match sizes".into()));
        }
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let (w, b) = (&snapshot.weights[i], &snapshot.biases[i]);
            if w.len() != layer.weights.len() || b.len() != layer.bias.len() {
                return Err(Error::Snapshot(format!("layer {i} has the wrong shape")));
            }
            if w.iter().chain(b).any(|v| !v.is_finite()) {
                return Err(Error::Snapshot(format!("layer {i} holds non-finite values")));
            }
            layer.weights = Array2::from_shape_vec(layer.weights.raw_dim(), w.clone())
                .map_err(|e| Error::Snapshot(e.to_string()))?;
            layer.bias = Array1::from(b.clone());
        }
        Ok(net)
    }
}

fn map_rows(z: &mut Array2<f64>, bias: &Array1<f64>, f: impl Fn(f64) -> f64) {
    let bias = bias.as_slice().expect("contiguous bias");
    for mut row in z.rows_mut() {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v = f(*v + b);
        }
    }
}

fn for_rows(delta: &mut Array2<f64>, y: &Array2<f64>, db: &mut Array1<f64>, deriv: impl Fn(f64) -> f64) {
    let db = db.as_slice_mut().expect("fresh array");
    for (mut d_row, y_row) in delta.rows_mut().into_iter().zip(y.rows()) {
        for ((d, &y), acc) in d_row.iter_mut().zip(y_row.iter()).zip(db.iter_mut()) {
            *d *= deriv(y);
            *acc += *d;
        }
    }
}

/// Serializable parameter record: layer sizes header plus row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSnapshot {
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Gradients,
    second: Gradients,
}

impl Adam {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Gradients::zeros_like(net),
            second: Gradients::zeros_like(net),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &Gradients {
        &self.first
    }

    pub fn second_moment(&self) -> &Gradients {
        &self.second
    }

    /// Applies one update. On error the network and moments are left untouched.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != net.layers.len() {
            return Err(Error::DimensionMismatch {
                context: "adam gradient layers",
                expected: net.layers.len(),
                actual: grads.layers.len(),
            });
        }
        for (i, ((gw, gb), l)) in grads.layers.iter().zip(&net.layers).enumerate() {
            if gw.dim() != l.weights.dim() || gb.len() != l.bias.len() {
                return Err(Error::DimensionMismatch {
                    context: "adam gradient shape",
                    expected: l.weights.len() + l.bias.len(),
                    actual: gw.len() + gb.len(),
                });
            }
            if gw.iter().chain(gb.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of layer {i}")));
            }
        }

        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = (self.step + 1) as f64;
        let c1 = 1.0 - beta1.powf(t);
        let c2 = 1.0 - beta2.powf(t);

        let mut first = self.first.clone();
        let mut second = self.second.clone();
        let mut layers = net.layers.clone();
        for (i, layer) in layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[i];
            let (mw, mb) = &mut first.layers[i];
            let (vw, vb) = &mut second.layers[i];
            let coeffs = (beta1, beta2, c1, c2, learning_rate, epsilon);
            adam_update(&mut layer.weights, gw, mw, vw, coeffs);
            adam_update(&mut layer.bias, gb, mb, vb, coeffs);
            if layer
                .weights
                .iter()
                .chain(layer.bias.iter())
                .any(|v| !v.is_finite())
            {
                return Err(Error::NonFinite(format!("parameters of layer {i} after update")));
            }
        }
        net.layers = layers;
        self.first = first;
        self.second = second;
        self.step += 1;
        Ok(())
    }
}

type AdamCoefficients = (f64, f64, f64, f64, f64, f64);

fn adam_update<D: Dimension>(
    params: &mut Array<f64, D>,
    grads: &Array<f64, D>,
    m: &mut Array<f64, D>,
    v: &mut Array<f64, D>,
    (b1, b2, c1, c2, lr, eps): AdamCoefficients,
) {
    Zip::from(params)
        .and(grads)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        });
}

/// Stacks row vectors into a `(rows, cols)` matrix.
pub fn stack_rows<'a, I>(rows: I, cols: usize) -> Array2<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        debug_assert_eq!(r.len(), cols);
        data.extend_from_slice(r);
        n += 1;
    }
    Array2::from_shape_vec((n, cols), data).expect("row lengths match cols")
}

/// Stacks `(state, action)` pairs into one `(rows, state_dim + action_dim)` matrix.
pub fn concat_rows<'a, I>(pairs: I, state_dim: usize, action_dim: usize) -> Array2<f64>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    let mut data = Vec::new();
    let mut n = 0;
    for (s, a) in pairs {
        debug_assert_eq!(s.len(), state_dim);
        debug_assert_eq!(a.len(), action_dim);
        data.extend_from_slice(s);
        data.extend_from_slice(a);
        n += 1;
    }
    Array2::from_shape_vec((n, state_dim + action_dim), data).expect("row lengths match")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn scalar_loss(net: &Mlp, x: &Array2<f64>, up: &Array2<f64>) -> f64 {
        (net.forward_batch(x.view()).unwrap() * up).sum()
    }

    /// Central finite differences of `sum(output * upstream)`.
    fn finite_difference(net: &Mlp, x: &Array2<f64>, up: &Array2<f64>, h: f64) -> Vec<f64> {
        let base = net.params();
        let mut probe = net.clone();
        (0..base.len())
            .map(|i| {
                let mut p = base.clone();
                p[i] = base[i] + h;
                probe.set_params(&p).unwrap();
                let plus = scalar_loss(&probe, x, up);
                p[i] = base[i] - h;
                probe.set_params(&p).unwrap();
                let minus = scalar_loss(&probe, x, up);
                (plus - minus) / (2.0 * h)
            })
            .collect()
    }

    /// Smallest |pre-activation| over hidden units; finite differences are
    /// meaningless within a step size of the LeakyReLU kink.
    fn kink_margin(net: &Mlp, x: &Array2<f64>) -> f64 {
        let mut margin = f64::INFINITY;
        let mut h = x.clone();
        let hidden = net.layers().len() - 1;
        for layer in &net.layers()[..hidden] {
            let z = h.dot(&layer.weights.t()) + &layer.bias;
            margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
            h = z.mapv(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v });
        }
        margin
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 4, 2], Activation::Identity).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn hand_evaluated_composition() {
        let mut net = Mlp::zeros(&[1, 1, 1], Activation::Tanh).unwrap();
        net.set_params(&[1.0, 0.0, 1.0, 0.0]).unwrap();
        let out = net.forward(&[2.0]).unwrap();
        assert!((out[0] - 2.0f64.tanh()).abs() < 1e-15);
        assert!((out[0] - 0.96403).abs() < 1e-5);
        // negative input goes through the leaky side
        let out = net.forward(&[-2.0]).unwrap();
        assert!((out[0] - (-0.02f64).tanh()).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = Mlp::new(&[3, 4, 1], Activation::Tanh, 0).unwrap();
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, actual: 1, .. })
        ));
        let x = Array2::zeros((2, 5));
        assert!(net.forward_batch(x.view()).is_err());
    }

    #[test]
    fn batch_forward_matches_single() {
        let net = Mlp::new(&[3, 8, 8, 2], Activation::Identity, 7).unwrap();
        let x = array![[0.1, -0.4, 2.0], [1.5, 0.0, -0.3]];
        let batch = net.forward_batch(x.view()).unwrap();
        for r in 0..2 {
            let single = net.forward(x.row(r).as_slice().unwrap()).unwrap();
            for c in 0..2 {
                assert!((batch[[r, c]] - single[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = Mlp::new(&[2, 5, 1], Activation::Tanh, 3).unwrap();
        let x = array![[0.3, -0.2]];
        let bp = net.backward(x.view(), Array2::zeros((1, 1)).view()).unwrap();
        assert!(bp.params.flatten().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn duplicated_input_doubles_gradient() {
        let net = Mlp::new(&[2, 5, 1], Activation::Tanh, 3).unwrap();
        let one = array![[0.3, -0.2]];
        let two = array![[0.3, -0.2], [0.3, -0.2]];
        let g1 = net.backward(one.view(), Array2::ones((1, 1)).view()).unwrap();
        let g2 = net.backward(two.view(), Array2::ones((2, 1)).view()).unwrap();
        for (a, b) in g1.params.flatten().iter().zip(g2.params.flatten()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_parameter_gradient_matches_finite_difference() {
        let mut net = Mlp::zeros(&[1, 1], Activation::Tanh).unwrap();
        net.set_params(&[0.7, 0.0]).unwrap();
        let x = array![[1.3]];
        let up = array![[1.0]];
        let bp = net.backward(x.view(), up.view()).unwrap();
        let fd = finite_difference(&net, &x, &up, 1e-5);
        assert!(rel_err(bp.params.flatten()[0], fd[0]) < 1e-4);
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let net = Mlp::new(&[3, 6, 2], Activation::Tanh, 11).unwrap();
        let x = array![[0.2, -0.5, 0.9]];
        let up = array![[0.4, -1.1]];
        let bp = net.backward(x.view(), up.view()).unwrap();
        for j in 0..3 {
            let mut xp = x.clone();
            xp[[0, j]] += 1e-5;
            let mut xm = x.clone();
            xm[[0, j]] -= 1e-5;
            let fd = (scalar_loss(&net, &xp, &up) - scalar_loss(&net, &xm, &up)) / 2e-5;
            assert!(rel_err(bp.input[[0, j]], fd) < 1e-5, "input {j}");
        }
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut net = Mlp::new(&[2, 3, 1], Activation::Identity, 5).unwrap();
        let before = net.params();
        let mut grads = Gradients::zeros_like(&net);
        for (w, b) in &mut grads.layers {
            w.mapv_inplace(|_| -0.37);
            b.mapv_inplace(|_| 2.5);
        }
        let mut adam = Adam::new(&net, AdamConfig::default());
        adam.step(&mut net, &grads).unwrap();
        let g = grads.flatten();
        for ((a, b), g) in net.params().iter().zip(&before).zip(&g) {
            let delta = a - b;
            assert!((delta + 3e-4 * g.signum()).abs() < 1e-9, "delta {delta}");
        }
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_fresh_parameters_unchanged() {
        let mut net = Mlp::new(&[2, 3, 1], Activation::Identity, 5).unwrap();
        let before = net.params();
        let mut adam = Adam::new(&net, AdamConfig::default());
        let zero = Gradients::zeros_like(&net);
        adam.step(&mut net, &zero).unwrap();
        assert_eq!(net.params(), before);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let mut net = Mlp::new(&[2, 3, 1], Activation::Identity, 5).unwrap();
        let mut grads = Gradients::zeros_like(&net);
        grads.layers[0].0.fill(1.0);
        let mut adam = Adam::new(&net, AdamConfig::default());
        adam.step(&mut net, &grads).unwrap();
        let m1 = adam.first_moment().layers[0].0[[0, 0]];
        let zero = Gradients::zeros_like(&net);
        adam.step(&mut net, &zero).unwrap();
        let m2 = adam.first_moment().layers[0].0[[0, 0]];
        assert!((m2 - 0.9 * m1).abs() < 1e-15);
        assert_eq!(adam.steps(), 2);
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut net = Mlp::new(&[2, 3, 1], Activation::Identity, 5).unwrap();
        let before = net.clone();
        let mut grads = Gradients::zeros_like(&net);
        grads.layers[1].1[0] = f64::NAN;
        let mut adam = Adam::new(&net, AdamConfig::default());
        let err = adam.step(&mut net, &grads).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
        assert_eq!(net, before);
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn identical_seeds_give_identical_training() {
        let run = || {
            let mut net = Mlp::new(&[3, 8, 1], Activation::Tanh, 42).unwrap();
            let mut adam = Adam::new(&net, AdamConfig::default());
            let x = array![[0.1, 0.2, 0.3], [-0.5, 0.4, 0.0]];
            let up = array![[1.0], [-0.5]];
            for _ in 0..100 {
                let g = net.backward(x.view(), up.view()).unwrap();
                adam.step(&mut net, &g.params).unwrap();
            }
            net.params()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn snapshot_round_trip() {
        let net = Mlp::new(&[4, 6, 6, 1], Activation::Tanh, 9).unwrap();
        let json = serde_json::to_string(&net.snapshot()).unwrap();
        let back: MlpSnapshot = serde_json::from_str(&json).unwrap();
        assert_eq!(Mlp::from_snapshot(&back).unwrap(), net);
    }

    #[test]
    fn snapshot_rejects_bad_shape() {
        let mut snap = Mlp::new(&[2, 3, 1], Activation::Tanh, 1).unwrap().snapshot();
        snap.weights[0].pop();
        assert!(Mlp::from_snapshot(&snap).is_err());
    }

    #[test]
    fn soft_update_closes_the_gap() {
        let source = Mlp::new(&[2, 4, 1], Activation::Identity, 1).unwrap();
        let mut target = Mlp::new(&[2, 4, 1], Activation::Identity, 2).unwrap();
        let gap = |t: &Mlp| {
            t.params()
                .iter()
                .zip(source.params())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        };
        let before = gap(&target);
        target.soft_update_from(&source, 0.005);
        assert!(gap(&target) < before);
    }

    fn arb_net() -> impl Strategy<Value = (Vec<usize>, u64)> {
        (1usize..=3, proptest::collection::vec(1usize..=8, 4), any::<u64>()).prop_map(
            |(hidden, widths, seed)| {
                let mut sizes = vec![widths[0]];
                sizes.extend(&widths[1..=hidden]);
                sizes.push(widths[3].min(3));
                (sizes, seed)
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn analytic_gradients_match_finite_differences((sizes, seed) in arb_net(), tanh in any::<bool>()) {
            let out = if tanh { Activation::Tanh } else { Activation::Identity };
            let net = Mlp::new(&sizes, out, seed).unwrap();
            let mut rng = seeded(seed ^ 0xabc);
            let x = Array2::from_shape_fn((3, sizes[0]), |_| rng.random_range(-2.0..2.0));
            let up = Array2::from_shape_fn((3, net.output_dim()), |_| rng.random_range(-1.0..1.0));
            prop_assume!(kink_margin(&net, &x) > 1e-3);
            let analytic = net.backward(x.view(), up.view()).unwrap().params.flatten();
            let numeric = finite_difference(&net, &x, &up, 1e-5);
            let errs: Vec<f64> = analytic.iter().zip(&numeric).map(|(&a, &n)| rel_err(a, n)).collect();
            let good = errs.iter().filter(|&&e| e < 1e-4).count();
            prop_assert!(good as f64 >= 0.95 * errs.len() as f64, "{good}/{}", errs.len());
            prop_assert!(errs.iter().cloned().fold(0.0, f64::max) < 1e-3);
        }

        #[test]
        fn tanh_head_stays_inside_unit_interval(seed in any::<u64>(), scale in -1e6f64..1e6) {
            let net = Mlp::new(&[2, 8, 8, 1], Activation::Tanh, seed).unwrap();
            let y = net.forward(&[scale, -scale * 0.5]).unwrap()[0];
            prop_assert!(y > -1.0 && y < 1.0);
            let y = net.forward(&[scale * 1e-6, 0.1]).unwrap()[0];
            prop_assert!(y > -1.0 && y < 1.0);
        }
    }
}
