//! Dense feed-forward networks with exact analytic gradients.
//!
//! Every actor and critic in the system is an [`Mlp`]: a chain of affine
//! layers with ReLU between them and an identity or tanh head. Inputs are
//! row-major batches (`batch × input_dim`).
//!
//! Gradients returned by [`Mlp::backward`] are the exact derivatives of the
//! scalar `Σ_b Σ_k g[b,k] · out[b,k]` where `g` is the upstream gradient.
//! Losses in this crate are batch means, so callers fold the `1/batch`
//! factor into `g`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Width of each hidden layer unless configured otherwise.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Tanh,
}

/// Affine map `y = x·Wᵀ + b` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(input_dim: usize, output_dim: usize) -> Self {
        Self { weights: Array2::zeros((output_dim, input_dim)), bias: Array1::zeros(output_dim) }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn same_shape(&self, other: &DenseLayer) -> bool {
        self.weights.dim() == other.weights.dim() && self.bias.len() == other.bias.len()
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Per-layer parameter gradients, shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseLayer>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self { layers: net.layers.iter().map(|l| DenseLayer::zeros(l.input_dim(), l.output_dim())).collect() }
    }

    pub fn l2_norm(&self) -> f64 {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter())).map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            layer.weights *= factor;
            layer.bias *= factor;
        }
    }

    /// Rescales so the global L2 norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let norm = self.l2_norm();
        if norm > max_norm && norm.is_finite() {
            self.scale(max_norm / norm);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(DenseLayer::is_finite)
    }
}

/// Activations recorded by [`Mlp::forward`] for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[k]` is the input fed to layer `k`.
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }

    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

/// Adam moments for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<DenseLayer>,
    pub second_moment: Vec<DenseLayer>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(net: &Mlp) -> Self {
        let zeros = Gradients::zeros_like(net).layers;
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Multi-layer perceptron: ReLU hidden layers, identity or tanh output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    output_activation: OutputActivation,
}

impl Mlp {
    /// Two hidden layers of 64 units, Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        output_dim: usize,
        output_activation: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        Self::with_hidden(input_dim, &DEFAULT_HIDDEN, output_dim, output_activation, rng)
    }

    pub fn with_hidden<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        output_activation: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input_dim);
        widths.extend_from_slice(hidden);
        widths.push(output_dim);
        if let Some(pos) = widths.iter().position(|&w| w == 0) {
            return Err(Error::InvalidDimension(format!("layer width {pos} is zero in {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                DenseLayer {
                    weights: Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(rng)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { layers, output_activation })
    }

    /// Assembles a network from explicit layers, checking that widths chain.
    pub fn from_layers(layers: Vec<DenseLayer>, output_activation: OutputActivation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidDimension("network needs at least one layer".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.input_dim() == 0 || layer.output_dim() == 0 {
                return Err(Error::InvalidDimension(format!("layer {k} has a zero dimension")));
            }
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {k}: bias length {} vs {} outputs",
                    layer.bias.len(),
                    layer.output_dim()
                )));
            }
            if k > 0 && layers[k - 1].output_dim() != layer.input_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {k} expects {} inputs but layer {} emits {}",
                    layer.input_dim(),
                    k - 1,
                    layers[k - 1].output_dim()
                )));
            }
        }
        Ok(Self { layers, output_activation })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Mutable access to parameters. Shapes must not be changed.
    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    /// Σ over layers of `out·in + out`.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(DenseLayer::is_finite)
    }

    pub fn same_architecture(&self, other: &Mlp) -> bool {
        self.output_activation == other.output_activation
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.same_shape(b))
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input width {} but network expects {}",
                input.ncols(),
                self.input_dim()
            )));
        }
        if !input.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }

    /// Evaluates the network, keeping what the backward pass needs.
    pub fn forward(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = input.to_owned();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weights.t());
            z += &layer.bias;
            if k < last {
                z.mapv_inplace(|v| v.max(0.0));
            } else if self.output_activation == OutputActivation::Tanh {
                z.mapv_inplace(f64::tanh);
            }
            inputs.push(std::mem::replace(&mut current, z));
        }
        let cache = ForwardCache { inputs, output: current.clone() };
        Ok((current, cache))
    }

    /// Forward pass without recording a cache.
    pub fn predict(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&input)?;
        let last = self.layers.len() - 1;
        let mut current = input.dot(&self.layers[0].weights.t());
        for (k, layer) in self.layers.iter().enumerate() {
            if k > 0 {
                current = current.dot(&layer.weights.t());
            }
            current += &layer.bias;
            if k < last {
                current.mapv_inplace(|v| v.max(0.0));
            } else if self.output_activation == OutputActivation::Tanh {
                current.mapv_inplace(f64::tanh);
            }
        }
        Ok(current)
    }

    fn check_cache(&self, cache: &ForwardCache, output_grad: &ArrayView2<f64>) -> Result<()> {
        let stale = cache.inputs.len() != self.layers.len()
            || cache
                .inputs
                .iter()
                .zip(&self.layers)
                .any(|(x, l)| x.ncols() != l.input_dim() || x.nrows() != cache.batch_size())
            || cache.output.ncols() != self.output_dim();
        if stale {
            return Err(Error::ShapeMismatch("forward cache does not match this network".into()));
        }
        if output_grad.dim() != cache.output.dim() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?} vs network output {:?}",
                output_grad.dim(),
                cache.output.dim()
            )));
        }
        Ok(())
    }

    fn output_delta(&self, cache: &ForwardCache, output_grad: ArrayView2<f64>) -> Array2<f64> {
        match self.output_activation {
            OutputActivation::Identity => output_grad.to_owned(),
            OutputActivation::Tanh => {
                let mut delta = output_grad.to_owned();
                Zip::from(&mut delta).and(&cache.output).for_each(|d, &y| *d *= 1.0 - y * y);
                delta
            }
        }
    }

    /// Parameter gradients and the gradient with respect to the input batch.
    pub fn backward(&self, cache: &ForwardCache, output_grad: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>)> {
        let (grads, input_grad) = self.backward_impl(cache, output_grad, true)?;
        Ok((grads, input_grad.expect("requested")))
    }

    /// Parameter gradients only; skips the product that would propagate the
    /// gradient into the input batch.
    pub fn param_gradients(&self, cache: &ForwardCache, output_grad: ArrayView2<f64>) -> Result<Gradients> {
        Ok(self.backward_impl(cache, output_grad, false)?.0)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<f64>,
        want_input_grad: bool,
    ) -> Result<(Gradients, Option<Array2<f64>>)> {
        self.check_cache(cache, &output_grad)?;
        let mut delta = self.output_delta(cache, output_grad);
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut input_grad = None;
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &cache.inputs[k];
            grads.push(DenseLayer { weights: delta.t().dot(input), bias: delta.sum_axis(Axis(0)) });
            if k == 0 {
                if want_input_grad {
                    input_grad = Some(delta.dot(&layer.weights));
                }
                break;
            }
            let mut upstream = delta.dot(&layer.weights);
            // ReLU passes gradient only where the activation was positive.
            Zip::from(&mut upstream).and(input).for_each(|g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
            delta = upstream;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, input_grad))
    }

    /// Gradient with respect to the input only; skips parameter gradients.
    pub fn input_gradient(&self, cache: &ForwardCache, output_grad: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_cache(cache, &output_grad)?;
        let mut delta = self.output_delta(cache, output_grad);
        for k in (0..self.layers.len()).rev() {
            let mut upstream = delta.dot(&self.layers[k].weights);
            if k > 0 {
                Zip::from(&mut upstream).and(&cache.inputs[k]).for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            delta = upstream;
        }
        Ok(delta)
    }

    /// One Adam step with bias correction. Rejects non-finite gradients
    /// without touching parameters or moments.
    pub fn adam_step(&mut self, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {lr}")));
        }
        let shapes_match = grads.layers.len() == self.layers.len()
            && state.first_moment.len() == self.layers.len()
            && state.second_moment.len() == self.layers.len()
            && self.layers.iter().enumerate().all(|(k, l)| {
                l.same_shape(&grads.layers[k])
                    && l.same_shape(&state.first_moment[k])
                    && l.same_shape(&state.second_moment[k])
            });
        if !shapes_match {
            return Err(Error::ShapeMismatch("gradients or optimizer state do not match network".into()));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradients".into()));
        }

        state.step_count += 1;
        let t = state.step_count as i32;
        let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
        let correction1 = 1.0 - b1.powi(t);
        let correction2 = 1.0 - b2.powi(t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: &f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (k, layer) in self.layers.iter_mut().enumerate() {
            let (m, v, g) = (&mut state.first_moment[k], &mut state.second_moment[k], &grads.layers[k]);
            Zip::from(&mut layer.weights).and(&mut m.weights).and(&mut v.weights).and(&g.weights).for_each(update);
            Zip::from(&mut layer.bias).and(&mut m.bias).and(&mut v.bias).and(&g.bias).for_each(update);
        }
        Ok(())
    }

    /// Polyak update of `self` (the target) toward `source`:
    /// `θ̄ ← τ·θ + (1−τ)·θ̄`.
    pub fn soft_update(&mut self, source: &Mlp, tau: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidConfig(format!("tau must lie in [0, 1], got {tau}")));
        }
        if !self.same_architecture(source) {
            return Err(Error::ShapeMismatch("soft update between different architectures".into()));
        }
        let blend = |t: &mut f64, &s: &f64| *t = tau * s + (1.0 - tau) * *t;
        for (target, src) in self.layers.iter_mut().zip(&source.layers) {
            Zip::from(&mut target.weights).and(&src.weights).for_each(blend);
            Zip::from(&mut target.bias).and(&src.bias).for_each(blend);
        }
        Ok(())
    }
}
