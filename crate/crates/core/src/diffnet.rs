//! Dense feed-forward networks with hand-written reverse-mode gradients and
//! an Adam optimizer.
//!
//! Batches are row-major matrices with one example per row. Layer products
//! go through `matrixmultiply`'s `dgemm`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use thiserror::Error;

use crate::math;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("shape mismatch: expected {expected} columns, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("layer {layer} expects {expected} inputs but the previous layer yields {got}")]
    Chain { layer: usize, expected: usize, got: usize },
    #[error("forward cache does not belong to this network state")]
    StaleCache,
    #[error("network has no layers")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Linear => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Linear),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => math::sigmoid(z),
            Activation::Linear => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = math::sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn row_vector(v: &[f64]) -> Self {
        Matrix {
            rows: 1,
            cols: v.len(),
            data: v.to_vec(),
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }
}

/// `c = alpha * a * op(b) + beta * c`, where `op(b)` is `b` or `bᵀ`.
fn gemm(alpha: f64, a: &Matrix, b: &Matrix, b_transposed: bool, beta: f64, c: &mut Matrix) {
    let (k, n) = if b_transposed {
        (b.cols, b.rows)
    } else {
        (b.rows, b.cols)
    };
    debug_assert_eq!(a.cols, k);
    debug_assert_eq!((c.rows, c.cols), (a.rows, n));
    let (rsb, csb) = if b_transposed {
        (1, b.cols as isize)
    } else {
        (b.cols as isize, 1)
    };
    if a.rows == 0 || n == 0 {
        return;
    }
    // SAFETY: strides describe the row-major buffers owned by `a`, `b`, `c`,
    // whose lengths were checked against the stated shapes.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.cols as isize,
            1,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

/// `c = alpha * aᵀ * b + beta * c`.
fn gemm_at(alpha: f64, a: &Matrix, b: &Matrix, beta: f64, c: &mut Matrix) {
    debug_assert_eq!(a.rows, b.rows);
    debug_assert_eq!((c.rows, c.cols), (a.cols, b.cols));
    if a.rows == 0 {
        if beta != 1.0 {
            c.data.iter_mut().for_each(|v| *v *= beta);
        }
        return;
    }
    // SAFETY: as in `gemm`; `a` is read transposed through swapped strides.
    unsafe {
        matrixmultiply::dgemm(
            a.cols,
            a.rows,
            b.cols,
            alpha,
            a.data.as_ptr(),
            1,
            a.cols as isize,
            b.data.as_ptr(),
            b.cols as isize,
            1,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

/// Fully connected layer `y = act(W x + b)` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        DenseLayer {
            weights: Matrix::zeros(output, input),
            bias: vec![0.0; output],
            activation,
        }
    }

    /// He-uniform for ReLU layers, Xavier-uniform otherwise; zero biases.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = match activation {
            Activation::Relu => math::sqrt(6.0 / input as f64),
            Activation::Sigmoid | Activation::Linear => math::sqrt(6.0 / (input + output) as f64),
        };
        let data = (0..input * output).map(|_| rng.random_range(-limit..=limit)).collect();
        DenseLayer {
            weights: Matrix::from_vec(output, input, data),
            bias: vec![0.0; output],
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows
    }

    fn preactivation(&self, x: &Matrix) -> Matrix {
        let mut z = Matrix::zeros(x.rows, self.output_dim());
        for r in 0..x.rows {
            z.row_mut(r).copy_from_slice(&self.bias);
        }
        gemm(1.0, x, &self.weights, true, 1.0, &mut z);
        z
    }
}

/// Layer shape and activation, as recorded in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<DenseLayer>,
    version: u64,
}

/// Networks compare by parameters only.
impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl Network {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self, NetError> {
        if layers.is_empty() {
            return Err(NetError::Empty);
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(NetError::Chain {
                    layer: i + 1,
                    expected: pair[1].input_dim(),
                    got: pair[0].output_dim(),
                });
            }
        }
        Ok(Network { layers, version: 0 })
    }

    /// Randomly initialized network with the given shapes.
    pub fn init<R: Rng + ?Sized>(shapes: &[LayerShape], rng: &mut R) -> Result<Self, NetError> {
        Self::from_layers(
            shapes
                .iter()
                .map(|s| DenseLayer::init(s.input, s.output, s.activation, rng))
                .collect(),
        )
    }

    pub fn zeros(shapes: &[LayerShape]) -> Result<Self, NetError> {
        Self::from_layers(
            shapes
                .iter()
                .map(|s| DenseLayer::zeros(s.input, s.output, s.activation))
                .collect(),
        )
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Mutable access to the layers; invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        self.version = self.version.wrapping_add(1);
        &mut self.layers
    }

    pub fn shapes(&self) -> Vec<LayerShape> {
        self.layers
            .iter()
            .map(|l| LayerShape {
                input: l.input_dim(),
                output: l.output_dim(),
                activation: l.activation,
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.data.len() + l.bias.len()).sum()
    }

    /// Single-example forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache), NetError> {
        let (y, cache) = self.forward_batch(&Matrix::row_vector(x))?;
        Ok((y.data, cache))
    }

    /// Batched forward pass keeping everything needed by [`Network::backward`].
    pub fn forward_batch(&self, x: &Matrix) -> Result<(Matrix, ForwardCache), NetError> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for layer in &self.layers {
            let z = layer.preactivation(&current);
            let mut a = z.clone();
            a.data.iter_mut().for_each(|v| *v = layer.activation.apply(*v));
            inputs.push(current);
            pre.push(z);
            current = a;
        }
        Ok((
            current,
            ForwardCache {
                inputs,
                pre,
                version: self.version,
            },
        ))
    }

    /// Batched forward pass without a cache.
    pub fn predict_batch(&self, x: &Matrix) -> Result<Matrix, NetError> {
        self.check_input(x)?;
        let mut current = x.clone();
        for layer in &self.layers {
            let mut z = layer.preactivation(&current);
            z.data.iter_mut().for_each(|v| *v = layer.activation.apply(*v));
            current = z;
        }
        Ok(current)
    }

    fn check_input(&self, x: &Matrix) -> Result<(), NetError> {
        if x.cols != self.input_dim() {
            return Err(NetError::Shape {
                expected: self.input_dim(),
                got: x.cols,
            });
        }
        Ok(())
    }

    /// Reverse-mode pass: given `dL/dy` for every row of the cached batch,
    /// returns parameter gradients summed over rows and `dL/dx`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Matrix) -> Result<(GradientTape, Matrix), NetError> {
        let mut tape = GradientTape::zeros_like(self);
        let d_in = self.backward_accumulate(cache, d_out, &mut tape)?;
        Ok((tape, d_in))
    }

    /// Like [`Network::backward`], but adds the parameter gradients to `tape`.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        d_out: &Matrix,
        tape: &mut GradientTape,
    ) -> Result<Matrix, NetError> {
        if cache.version != self.version || cache.inputs.len() != self.layers.len() {
            return Err(NetError::StaleCache);
        }
        if d_out.cols != self.output_dim() || d_out.rows != cache.inputs[0].rows {
            return Err(NetError::Shape {
                expected: self.output_dim(),
                got: d_out.cols,
            });
        }
        if tape.layers.len() != self.layers.len()
            || tape
                .layers
                .iter()
                .zip(&self.layers)
                .any(|(g, l)| g.weights.rows != l.output_dim() || g.weights.cols != l.input_dim())
        {
            return Err(NetError::Shape {
                expected: self.parameter_count(),
                got: tape.flatten().len(),
            });
        }
        let mut delta = d_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre[i];
            for (d, &zv) in delta.data.iter_mut().zip(z.data.iter()) {
                *d *= layer.activation.derivative(zv);
            }
            let grad = &mut tape.layers[i];
            gemm_at(1.0, &delta, &cache.inputs[i], 1.0, &mut grad.weights);
            for r in 0..delta.rows {
                for (b, d) in grad.bias.iter_mut().zip(delta.row(r)) {
                    *b += d;
                }
            }
            let mut d_in = Matrix::zeros(delta.rows, layer.input_dim());
            gemm(1.0, &delta, &layer.weights, false, 0.0, &mut d_in);
            delta = d_in;
        }
        Ok(delta)
    }
}

/// Per-layer inputs and pre-activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    version: u64,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |m| m.rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Gradient buffers mirroring a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub layers: Vec<LayerGradient>,
}

impl GradientTape {
    pub fn zeros_like(net: &Network) -> Self {
        GradientTape {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: Matrix::zeros(l.output_dim(), l.input_dim()),
                    bias: vec![0.0; l.output_dim()],
                })
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.weights.data.iter_mut().for_each(|v| *v = 0.0);
            l.bias.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn add_assign(&mut self, other: &GradientTape) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights
                .data
                .iter_mut()
                .zip(&b.weights.data)
                .for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.data.iter_mut().for_each(|v| *v *= s);
            l.bias.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.data.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// All gradient entries, weights before biases, layer by layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights.data);
            out.extend_from_slice(&l.bias);
        }
        out
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coefficient of an L2 penalty added to the weight gradients (biases
    /// are not decayed).
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment buffers and step counter of an Adam optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: GradientTape,
    pub second: GradientTape,
}

impl AdamState {
    pub fn new(net: &Network, config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            first: GradientTape::zeros_like(net),
            second: GradientTape::zeros_like(net),
        }
    }
}

/// One bias-corrected Adam update of `net` from `grad`.
pub fn adam_step(net: &mut Network, grad: &GradientTape, state: &mut AdamState) {
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - math::powi(beta1, t);
    let c2 = 1.0 - math::powi(beta2, t);

    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (math::sqrt(v_hat) + eps);
    };

    for (i, layer) in net.layers_mut().iter_mut().enumerate() {
        let g = &grad.layers[i];
        let (m, v) = (&mut state.first.layers[i], &mut state.second.layers[i]);
        for j in 0..layer.weights.data.len() {
            let p = &mut layer.weights.data[j];
            let gj = g.weights.data[j] + weight_decay * *p;
            update(p, gj, &mut m.weights.data[j], &mut v.weights.data[j]);
        }
        for j in 0..layer.bias.len() {
            update(&mut layer.bias[j], g.bias[j], &mut m.bias[j], &mut v.bias[j]);
        }
    }
}

/// Learning-rate decay factor per step.
pub const LR_DECAY: f64 = 0.8;
/// Number of decay steps after which the rate stays constant.
pub const LR_DECAY_STEPS: u32 = 10;

/// `lr0 · 0.8^min(⌊epoch / n_decay⌋, 10)`.
pub fn lr_schedule(epoch: usize, lr0: f64, n_decay: usize) -> f64 {
    let steps = (epoch / n_decay.max(1)).min(LR_DECAY_STEPS as usize);
    lr0 * math::powi(LR_DECAY, steps as i32)
}
