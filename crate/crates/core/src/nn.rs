//! Dense feed-forward networks with manual backpropagation.
//!
//! Supports the layer set the actor and critic need: fully connected layers
//! with leaky-ReLU, ReLU or linear activations, and batch normalization.
//! Batches are row-major `(batch, features)` matrices.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Negative-half slope of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;
pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPSILON: f64 = 1e-5;

const CHECKPOINT_MAGIC: &str = "trafficgrad-mlp";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("dimension mismatch: expected width {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("stale forward cache: {0}")]
    StaleCache(String),
    #[error("network shapes differ")]
    ShapeMismatch,
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    LeakyRelu,
    Relu,
    Linear,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu if x < 0.0 => LEAKY_SLOPE * x,
            Activation::Relu if x <= 0.0 => 0.0,
            _ => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu if x < 0.0 => LEAKY_SLOPE,
            Activation::Relu if x <= 0.0 => 0.0,
            _ => 1.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::LeakyRelu => "leaky_relu",
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "leaky_relu" => Some(Activation::LeakyRelu),
            "relu" => Some(Activation::Relu),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Dense { units: usize, activation: Activation },
    BatchNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `(fan_in, units)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
    grad_weight: Array2<f64>,
    grad_bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    grad_gamma: Array1<f64>,
    grad_beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    BatchNorm(BatchNorm),
}

impl Layer {
    fn output_dim(&self) -> usize {
        match self {
            Layer::Dense(d) => d.bias.len(),
            Layer::BatchNorm(b) => b.gamma.len(),
        }
    }

    fn params_mut(&mut self) -> Vec<(&mut [f64], &[f64])> {
        match self {
            Layer::Dense(d) => vec![
                (d.weight.as_slice_mut().unwrap(), d.grad_weight.as_slice().unwrap()),
                (d.bias.as_slice_mut().unwrap(), d.grad_bias.as_slice().unwrap()),
            ],
            Layer::BatchNorm(b) => vec![
                (b.gamma.as_slice_mut().unwrap(), b.grad_gamma.as_slice().unwrap()),
                (b.beta.as_slice_mut().unwrap(), b.grad_beta.as_slice().unwrap()),
            ],
        }
    }

    fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Dense(d) => vec![d.weight.as_slice().unwrap(), d.bias.as_slice().unwrap()],
            Layer::BatchNorm(b) => vec![b.gamma.as_slice().unwrap(), b.beta.as_slice().unwrap()],
        }
    }

    fn grads(&self) -> Vec<&[f64]> {
        match self {
            Layer::Dense(d) => vec![d.grad_weight.as_slice().unwrap(), d.grad_bias.as_slice().unwrap()],
            Layer::BatchNorm(b) => vec![b.grad_gamma.as_slice().unwrap(), b.grad_beta.as_slice().unwrap()],
        }
    }

    fn grads_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Dense(d) => vec![
                d.grad_weight.as_slice_mut().unwrap(),
                d.grad_bias.as_slice_mut().unwrap(),
            ],
            Layer::BatchNorm(b) => vec![
                b.grad_gamma.as_slice_mut().unwrap(),
                b.grad_beta.as_slice_mut().unwrap(),
            ],
        }
    }

    /// Parameters plus non-trainable state that target networks also track.
    fn state_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Dense(d) => vec![d.weight.as_slice_mut().unwrap(), d.bias.as_slice_mut().unwrap()],
            Layer::BatchNorm(b) => vec![
                b.gamma.as_slice_mut().unwrap(),
                b.beta.as_slice_mut().unwrap(),
                b.running_mean.as_slice_mut().unwrap(),
                b.running_var.as_slice_mut().unwrap(),
            ],
        }
    }

    fn state(&self) -> Vec<&[f64]> {
        match self {
            Layer::Dense(d) => vec![d.weight.as_slice().unwrap(), d.bias.as_slice().unwrap()],
            Layer::BatchNorm(b) => vec![
                b.gamma.as_slice().unwrap(),
                b.beta.as_slice().unwrap(),
                b.running_mean.as_slice().unwrap(),
                b.running_var.as_slice().unwrap(),
            ],
        }
    }
}

/// Global and per-layer L2 norms of the gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub global_norm: f64,
    pub layer_norms: Vec<f64>,
}

#[derive(Debug, Clone)]
enum LayerCache {
    Dense { input: Array2<f64>, pre: Array2<f64> },
    BatchNorm { normalized: Array2<f64>, inv_std: Array1<f64> },
}

/// Activations recorded by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    layers: Vec<LayerCache>,
}

/// He-normal weights `N(0, sqrt(2 / fan_in))` and zero biases.
pub fn he_init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> (Array2<f64>, Array1<f64>) {
    assert!(fan_in >= 1, "fan_in must be positive");
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
    let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(rng));
    (weight, Array1::zeros(fan_out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    input_dim: usize,
    layers: Vec<Layer>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, specs: &[LayerSpec], rng: &mut R) -> Mlp {
        let mut layers = Vec::with_capacity(specs.len());
        let mut width = input_dim;
        for spec in specs {
            let layer = match *spec {
                LayerSpec::Dense { units, activation } => {
                    let (weight, bias) = he_init(width, units, rng);
                    width = units;
                    Layer::Dense(Dense {
                        grad_weight: Array2::zeros(weight.raw_dim()),
                        grad_bias: Array1::zeros(units),
                        weight,
                        bias,
                        activation,
                    })
                }
                LayerSpec::BatchNorm => Layer::BatchNorm(BatchNorm {
                    gamma: Array1::ones(width),
                    beta: Array1::zeros(width),
                    running_mean: Array1::zeros(width),
                    running_var: Array1::ones(width),
                    momentum: BN_MOMENTUM,
                    epsilon: BN_EPSILON,
                    grad_gamma: Array1::zeros(width),
                    grad_beta: Array1::zeros(width),
                }),
            };
            layers.push(layer);
        }
        Mlp { input_dim, layers }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, Layer::output_dim)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<(), NnError> {
        if x.ncols() != self.input_dim {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim,
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Forward pass. Train mode uses batch statistics, updates the running
    /// statistics and returns the cache needed by [`Mlp::backward`].
    pub fn forward(
        &mut self,
        x: &Array2<f64>,
        mode: Mode,
    ) -> Result<(Array2<f64>, Option<ForwardCache>), NnError> {
        match mode {
            Mode::Eval => Ok((self.predict(x)?, None)),
            Mode::Train => self.forward_train(x).map(|(y, c)| (y, Some(c))),
        }
    }

    /// Eval-mode forward pass.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Dense(d) => {
                    let mut z = h.dot(&d.weight) + &d.bias;
                    z.mapv_inplace(|v| d.activation.apply(v));
                    z
                }
                Layer::BatchNorm(b) => {
                    let inv_std = b.running_var.mapv(|v| 1.0 / (v + b.epsilon).sqrt());
                    (h - &b.running_mean) * &inv_std * &b.gamma + &b.beta
                }
            };
        }
        Ok(h)
    }

    pub fn forward_train(&mut self, x: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache), NnError> {
        self.check_input(x)?;
        let batch = x.nrows();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = match layer {
                Layer::Dense(d) => {
                    let pre = h.dot(&d.weight) + &d.bias;
                    let out = pre.mapv(|v| d.activation.apply(v));
                    caches.push(LayerCache::Dense { input: h, pre });
                    out
                }
                Layer::BatchNorm(b) => {
                    let mean = h.mean_axis(Axis(0)).expect("non-empty batch");
                    let centered = &h - &mean;
                    let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
                    let inv_std = var.mapv(|v| 1.0 / (v + b.epsilon).sqrt());
                    let normalized = centered * &inv_std;
                    let out = &normalized * &b.gamma + &b.beta;
                    let m = b.momentum;
                    b.running_mean = &b.running_mean * m + &mean * (1.0 - m);
                    b.running_var = &b.running_var * m + &var * (1.0 - m);
                    caches.push(LayerCache::BatchNorm { normalized, inv_std });
                    out
                }
            };
        }
        Ok((h, ForwardCache { batch, layers: caches }))
    }

    /// Back-propagates `grad_out` (∂loss/∂output), overwriting the gradient
    /// buffers, and returns ∂loss/∂input together with the gradient norms.
    pub fn backward(
        &mut self,
        cache: &ForwardCache,
        grad_out: &Array2<f64>,
    ) -> Result<(Array2<f64>, GradReport), NnError> {
        if cache.layers.len() != self.layers.len() {
            return Err(NnError::StaleCache("layer count differs".into()));
        }
        if grad_out.nrows() != cache.batch || grad_out.ncols() != self.output_dim() {
            return Err(NnError::StaleCache(format!(
                "gradient shape {:?} does not match cached batch {} × {}",
                grad_out.dim(),
                cache.batch,
                self.output_dim()
            )));
        }
        let mut g = grad_out.clone();
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers).rev() {
            g = match (layer, lc) {
                (Layer::Dense(d), LayerCache::Dense { input, pre }) => {
                    if input.ncols() != d.weight.nrows() || pre.ncols() != d.weight.ncols() {
                        return Err(NnError::StaleCache("dense layer shape changed".into()));
                    }
                    let act = d.activation;
                    let dz = g * &pre.mapv(|v| act.derivative(v));
                    d.grad_weight.assign(&input.t().dot(&dz));
                    d.grad_bias = dz.sum_axis(Axis(0));
                    dz.dot(&d.weight.t())
                }
                (Layer::BatchNorm(b), LayerCache::BatchNorm { normalized, inv_std }) => {
                    if normalized.ncols() != b.gamma.len() {
                        return Err(NnError::StaleCache("batch-norm width changed".into()));
                    }
                    let n = cache.batch as f64;
                    b.grad_gamma = (&g * normalized).sum_axis(Axis(0));
                    b.grad_beta = g.sum_axis(Axis(0));
                    let dxhat = g * &b.gamma;
                    let sum_dxhat = dxhat.sum_axis(Axis(0));
                    let sum_dxhat_xhat = (&dxhat * normalized).sum_axis(Axis(0));
                    ((dxhat * n - &sum_dxhat) - normalized * &sum_dxhat_xhat) * &(inv_std / n)
                }
                _ => return Err(NnError::StaleCache("layer kinds differ".into())),
            };
        }
        Ok((g, self.grad_report()))
    }

    pub fn grad_report(&self) -> GradReport {
        let layer_norms: Vec<f64> = self
            .layers
            .iter()
            .map(|l| l.grads().iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let global_norm = layer_norms.iter().map(|n| n * n).sum::<f64>().sqrt();
        GradReport {
            global_norm,
            layer_norms,
        }
    }

    /// Rescales all gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        assert!(max_norm > 0.0, "max_norm must be positive");
        let norm = self.grad_report().global_norm;
        if norm > max_norm {
            let scale = max_norm / norm;
            for layer in &mut self.layers {
                for g in layer.grads_mut() {
                    g.iter_mut().for_each(|v| *v *= scale);
                }
            }
        }
        norm
    }

    /// θ ← θ − lr·∇θ.
    pub fn sgd_step(&mut self, learning_rate: f64) {
        for layer in &mut self.layers {
            for (p, g) in layer.params_mut() {
                for (p, g) in p.iter_mut().zip(g) {
                    *p -= learning_rate * g;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            for g in layer.grads_mut() {
                g.fill(0.0);
            }
        }
    }

    /// θ ← τ·θ_online + (1 − τ)·θ, including batch-norm running statistics.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) -> Result<(), NnError> {
        if !self.same_shape(online) {
            return Err(NnError::ShapeMismatch);
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            for (t, o) in t.state_mut().into_iter().zip(o.state()) {
                for (t, o) in t.iter_mut().zip(o) {
                    *t = tau * o + (1.0 - tau) * *t;
                }
            }
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.input_dim == other.input_dim
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| match (a, b) {
                (Layer::Dense(a), Layer::Dense(b)) => {
                    a.weight.dim() == b.weight.dim() && a.activation == b.activation
                }
                (Layer::BatchNorm(a), Layer::BatchNorm(b)) => a.gamma.len() == b.gamma.len(),
                _ => false,
            })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(Layer::params).map(<[f64]>::len).sum()
    }

    /// Trainable parameters, flattened layer by layer in row-major order.
    pub fn params_flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(Layer::params).flatten().copied().collect()
    }

    pub fn grads_flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(Layer::grads).flatten().copied().collect()
    }

    pub fn set_params_flat(&mut self, values: &[f64]) -> Result<(), NnError> {
        if values.len() != self.param_count() {
            return Err(NnError::DimensionMismatch {
                expected: self.param_count(),
                got: values.len(),
            });
        }
        let mut it = values.iter();
        for layer in &mut self.layers {
            for (p, _) in layer.params_mut() {
                for v in p.iter_mut() {
                    *v = *it.next().expect("length checked");
                }
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .flat_map(Layer::state)
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Text checkpoint: shapes followed by row-major values. Floats are
    /// written in shortest round-trip form, so loading is exact.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}").unwrap();
        writeln!(out, "input {}", self.input_dim).unwrap();
        writeln!(out, "layers {}", self.layers.len()).unwrap();
        let line = |out: &mut String, name: &str, vals: &[f64]| {
            out.push_str(name);
            for v in vals {
                write!(out, " {v:?}").unwrap();
            }
            out.push('\n');
        };
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => {
                    let (i, o) = d.weight.dim();
                    writeln!(out, "dense {i} {o} {}", d.activation.name()).unwrap();
                    line(&mut out, "weight", d.weight.as_slice().unwrap());
                    line(&mut out, "bias", d.bias.as_slice().unwrap());
                }
                Layer::BatchNorm(b) => {
                    writeln!(out, "batchnorm {} {:?} {:?}", b.gamma.len(), b.momentum, b.epsilon).unwrap();
                    line(&mut out, "gamma", b.gamma.as_slice().unwrap());
                    line(&mut out, "beta", b.beta.as_slice().unwrap());
                    line(&mut out, "running_mean", b.running_mean.as_slice().unwrap());
                    line(&mut out, "running_var", b.running_var.as_slice().unwrap());
                }
            }
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Mlp, NnError> {
        let bad = |m: &str| NnError::Checkpoint(m.to_string());
        let mut lines = text.lines();
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(&format!("missing {what}")));
        let header: Vec<&str> = next("header")?.split_whitespace().collect();
        if header != [CHECKPOINT_MAGIC, &CHECKPOINT_VERSION.to_string()] {
            return Err(bad("unsupported header"));
        }
        let field = |line: &str, key: &str| -> Result<usize, NnError> {
            line.strip_prefix(key)
                .and_then(|r| r.trim().parse().ok())
                .ok_or_else(|| bad(&format!("expected `{key} <n>`")))
        };
        let input_dim = field(next("input")?, "input")?;
        let n_layers = field(next("layers")?, "layers")?;
        let values = |line: &str, key: &str, n: usize| -> Result<Vec<f64>, NnError> {
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(bad(&format!("expected `{key}` row")));
            }
            let v: Vec<f64> = parts
                .map(|p| p.parse::<f64>().map_err(|_| bad(&format!("bad number {p}"))))
                .collect::<Result<_, _>>()?;
            if v.len() != n {
                return Err(bad(&format!("`{key}` has {} values, expected {n}", v.len())));
            }
            Ok(v)
        };
        let mut layers = Vec::with_capacity(n_layers);
        let mut width = input_dim;
        for _ in 0..n_layers {
            let head: Vec<&str> = next("layer header")?.split_whitespace().collect();
            match head.as_slice() {
                ["dense", i, o, act] => {
                    let (i, o): (usize, usize) = (
                        i.parse().map_err(|_| bad("dense fan-in"))?,
                        o.parse().map_err(|_| bad("dense units"))?,
                    );
                    if i != width {
                        return Err(bad("layer widths do not chain"));
                    }
                    let activation = Activation::parse(act).ok_or_else(|| bad("activation"))?;
                    let weight = Array2::from_shape_vec((i, o), values(next("weight")?, "weight", i * o)?)
                        .map_err(|e| bad(&e.to_string()))?;
                    let bias = Array1::from(values(next("bias")?, "bias", o)?);
                    layers.push(Layer::Dense(Dense {
                        grad_weight: Array2::zeros((i, o)),
                        grad_bias: Array1::zeros(o),
                        weight,
                        bias,
                        activation,
                    }));
                    width = o;
                }
                ["batchnorm", n, momentum, epsilon] => {
                    let n: usize = n.parse().map_err(|_| bad("batchnorm width"))?;
                    if n != width {
                        return Err(bad("layer widths do not chain"));
                    }
                    let gamma = Array1::from(values(next("gamma")?, "gamma", n)?);
                    let beta = Array1::from(values(next("beta")?, "beta", n)?);
                    let running_mean = Array1::from(values(next("running_mean")?, "running_mean", n)?);
                    let running_var = Array1::from(values(next("running_var")?, "running_var", n)?);
                    if running_var.iter().any(|v| !(*v > 0.0)) {
                        return Err(bad("running variance must be positive"));
                    }
                    layers.push(Layer::BatchNorm(BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                        momentum: momentum.parse().map_err(|_| bad("momentum"))?,
                        epsilon: epsilon.parse().map_err(|_| bad("epsilon"))?,
                        grad_gamma: Array1::zeros(n),
                        grad_beta: Array1::zeros(n),
                    }));
                }
                _ => return Err(bad("unknown layer kind")),
            }
        }
        Ok(Mlp { input_dim, layers })
    }
}
