//! Small exactly-differentiable models.
//!
//! Every model implements [`Objective`]: a per-example loss with an analytic
//! gradient. Batch gradients, mean losses and Hessian-vector products are
//! derived from those two primitives. The ridge penalty belongs to the batch
//! objective only, so per-example gradients stay pure data gradients.
//!
//! Batch reductions always sum left to right in index order, which keeps the
//! results bit-identical no matter how callers thread their work.

use std::ops::{Deref, DerefMut, Range};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::digest::digest_f64s;
use crate::error::{Error, Result};

/// A labeled training point.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: usize,
    pub task_id: usize,
    /// Set when the label was deliberately corrupted.
    pub noise_flag: bool,
}

impl Example {
    pub fn new(id: u64, features: Vec<f64>, label: usize) -> Self {
        Example {
            id,
            features,
            label,
            task_id: 0,
            noise_flag: false,
        }
    }
}

/// Flat parameter (or gradient, or direction) vector.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.0 {
            *a *= alpha;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn digest(&self) -> u64 {
        digest_f64s(&self.0)
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A differentiable per-example loss over a flat parameter vector.
pub trait Objective: Sync {
    fn num_params(&self) -> usize;

    /// Deterministic starting point for training.
    fn initial_params(&self, seed: u64) -> ParamVector;

    /// Data loss of one example (no regularizer).
    fn loss(&self, params: &ParamVector, example: &Example) -> Result<f64>;

    /// Adds `weight * d loss / d params` into `out` and returns the loss.
    fn accumulate_grad(
        &self,
        params: &ParamVector,
        example: &Example,
        weight: f64,
        out: &mut [f64],
    ) -> Result<f64>;

    fn l2_lambda(&self) -> f64 {
        0.0
    }

    /// Parameter ranges covered by the ridge penalty.
    fn penalized(&self) -> Vec<Range<usize>> {
        Vec::new()
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: self.num_params(),
                found: params.len(),
            });
        }
        Ok(())
    }

    fn grad_example(&self, params: &ParamVector, example: &Example) -> Result<ParamVector> {
        self.check_params(params)?;
        let mut g = ParamVector::zeros(self.num_params());
        self.accumulate_grad(params, example, 1.0, &mut g)?;
        Ok(g)
    }

    /// `(lambda / 2) * ||w||^2` over the penalized ranges.
    fn regularizer(&self, params: &ParamVector) -> f64 {
        let lambda = self.l2_lambda();
        if lambda == 0.0 {
            return 0.0;
        }
        let sq: f64 = self
            .penalized()
            .into_iter()
            .map(|r| params[r].iter().map(|w| w * w).sum::<f64>())
            .sum();
        0.5 * lambda * sq
    }

    fn add_regularizer_grad(&self, params: &ParamVector, out: &mut [f64]) {
        let lambda = self.l2_lambda();
        if lambda == 0.0 {
            return;
        }
        for r in self.penalized() {
            for i in r {
                out[i] += lambda * params[i];
            }
        }
    }

    /// Gradient of the batch objective over `data[indices]`, with optional
    /// per-example loss weights indexed like `data`. Returns the gradient and
    /// the batch objective value.
    fn batch_objective_grad(
        &self,
        params: &ParamVector,
        data: &[Example],
        indices: &[usize],
        weights: Option<&[f64]>,
    ) -> Result<(ParamVector, f64)> {
        self.check_params(params)?;
        if indices.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let scale = 1.0 / indices.len() as f64;
        let mut g = ParamVector::zeros(self.num_params());
        let mut loss = 0.0;
        for &i in indices {
            let w = weights.map_or(1.0, |w| w[i]);
            loss += w * self.accumulate_grad(params, &data[i], w * scale, &mut g)?;
        }
        self.add_regularizer_grad(params, &mut g);
        Ok((g, loss * scale + self.regularizer(params)))
    }

    /// Mean per-example gradient plus the ridge term, applied once.
    fn grad_batch(&self, params: &ParamVector, batch: &[Example]) -> Result<ParamVector> {
        let idx: Vec<usize> = (0..batch.len()).collect();
        Ok(self.batch_objective_grad(params, batch, &idx, None)?.0)
    }

    /// Mean data loss, no regularizer.
    fn mean_loss(&self, params: &ParamVector, data: &[Example]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut total = 0.0;
        for ex in data {
            total += self.loss(params, ex)?;
        }
        Ok(total / data.len() as f64)
    }

    /// Gradient of the mean data loss, no regularizer.
    fn mean_grad(&self, params: &ParamVector, data: &[Example]) -> Result<ParamVector> {
        self.check_params(params)?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let scale = 1.0 / data.len() as f64;
        let mut g = ParamVector::zeros(self.num_params());
        for ex in data {
            self.accumulate_grad(params, ex, scale, &mut g)?;
        }
        Ok(g)
    }

    /// Hessian-vector product of the batch objective over `data[indices]`,
    /// by central differences of the batch gradient along `u`.
    fn hvp_indexed(
        &self,
        params: &ParamVector,
        data: &[Example],
        indices: &[usize],
        u: &ParamVector,
    ) -> Result<ParamVector> {
        self.check_params(params)?;
        if u.len() != params.len() {
            return Err(Error::DimensionMismatch {
                what: "hvp direction",
                expected: params.len(),
                found: u.len(),
            });
        }
        let u_norm = u.norm();
        if u_norm == 0.0 {
            return Ok(ParamVector::zeros(params.len()));
        }
        let h = f64::EPSILON.cbrt() * (1.0 + params.norm()) / u_norm.max(f64::MIN_POSITIVE);
        let mut plus = params.clone();
        plus.axpy(h, u);
        let mut minus = params.clone();
        minus.axpy(-h, u);
        let (g_plus, _) = self.batch_objective_grad(&plus, data, indices, None)?;
        let (g_minus, _) = self.batch_objective_grad(&minus, data, indices, None)?;
        let inv = 1.0 / (2.0 * h);
        let out = ParamVector::from_vec(
            g_plus
                .iter()
                .zip(g_minus.iter())
                .map(|(a, b)| (a - b) * inv)
                .collect(),
        );
        if !out.is_finite() {
            return Err(Error::NonFinite {
                step: 0,
                context: "Hessian-vector product".into(),
            });
        }
        Ok(out)
    }

    fn hvp(&self, params: &ParamVector, batch: &[Example], u: &ParamVector) -> Result<ParamVector> {
        let idx: Vec<usize> = (0..batch.len()).collect();
        self.hvp_indexed(params, batch, &idx, u)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    Identity,
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidSpec(format!("unknown activation {other:?}"))),
        }
    }
}

/// Dense classifier with softmax cross-entropy. An empty `hidden` list gives
/// multinomial logistic regression.
///
/// Parameters are laid out layer by layer: the row-major `(out, in)` weight
/// matrix followed by the `out` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub activation: Activation,
    pub l2_lambda: f64,
}

/// Mean loss and top-1 accuracy over a dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub mean_loss: f64,
    pub accuracy: f64,
}

impl ModelSpec {
    pub fn linear(input_dim: usize, classes: usize) -> Self {
        ModelSpec {
            input_dim,
            hidden: Vec::new(),
            classes,
            activation: Activation::Identity,
            l2_lambda: 0.0,
        }
    }

    pub fn mlp(input_dim: usize, hidden: Vec<usize>, classes: usize, activation: Activation) -> Self {
        ModelSpec {
            input_dim,
            hidden,
            classes,
            activation,
            l2_lambda: 0.0,
        }
    }

    pub fn with_l2(mut self, lambda: f64) -> Self {
        self.l2_lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidSpec("all layer widths must be positive".into()));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::InvalidSpec("l2_lambda must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden);
        widths.push(self.classes);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Vec::with_capacity(self.num_params());
        for (fan_in, fan_out) in self.layer_dims() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                p.push(rng.random_range(-bound..bound));
            }
            p.extend(std::iter::repeat_n(0.0, fan_out));
        }
        ParamVector(p)
    }

    fn check_example(&self, example: &Example) -> Result<()> {
        if example.features.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                what: "example features",
                expected: self.input_dim,
                found: example.features.len(),
            });
        }
        if example.label >= self.classes {
            return Err(Error::DimensionMismatch {
                what: "example label",
                expected: self.classes,
                found: example.label,
            });
        }
        Ok(())
    }

    /// Pre-activations of every layer; the last entry holds the logits.
    fn forward(&self, params: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let dims = self.layer_dims();
        let last = dims.len() - 1;
        let mut pre = Vec::with_capacity(dims.len());
        let mut offset = 0;
        let mut input: Vec<f64> = x.to_vec();
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = &params[offset..offset + fan_in * fan_out];
            let b = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let z: Vec<f64> = (0..fan_out)
                .map(|o| dot(&w[o * fan_in..(o + 1) * fan_in], &input) + b[o])
                .collect();
            if l < last {
                input = z.iter().map(|&v| self.activation.apply(v)).collect();
            }
            pre.push(z);
        }
        pre
    }

    pub fn logits(&self, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                what: "example features",
                expected: self.input_dim,
                found: x.len(),
            });
        }
        Ok(self.forward(params, x).pop().unwrap_or_default())
    }

    /// Argmax class; ties go to the lowest index.
    pub fn predict(&self, params: &ParamVector, x: &[f64]) -> Result<usize> {
        let z = self.logits(params, x)?;
        let mut best = 0;
        for (c, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = c;
            }
        }
        Ok(best)
    }

    pub fn evaluate(&self, params: &ParamVector, data: &[Example]) -> Result<Evaluation> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut total = 0.0;
        let mut correct = 0usize;
        for ex in data {
            total += self.loss(params, ex)?;
            if self.predict(params, &ex.features)? == ex.label {
                correct += 1;
            }
        }
        let n = data.len() as f64;
        Ok(Evaluation {
            mean_loss: total / n,
            accuracy: correct as f64 / n,
        })
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl Objective for ModelSpec {
    fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    fn initial_params(&self, seed: u64) -> ParamVector {
        self.init_params(seed)
    }

    fn loss(&self, params: &ParamVector, example: &Example) -> Result<f64> {
        self.check_params(params)?;
        self.check_example(example)?;
        let pre = self.forward(params, &example.features);
        let z = &pre[pre.len() - 1];
        Ok(log_sum_exp(z) - z[example.label])
    }

    fn accumulate_grad(
        &self,
        params: &ParamVector,
        example: &Example,
        weight: f64,
        out: &mut [f64],
    ) -> Result<f64> {
        self.check_params(params)?;
        self.check_example(example)?;
        let dims = self.layer_dims();
        let pre = self.forward(params, &example.features);
        let logits = &pre[pre.len() - 1];
        let lse = log_sum_exp(logits);
        let loss = lse - logits[example.label];

        // d loss / d logits = softmax - one_hot
        let mut delta: Vec<f64> = logits.iter().map(|&v| (v - lse).exp()).collect();
        delta[example.label] -= 1.0;

        let mut offsets = Vec::with_capacity(dims.len());
        let mut acc = 0;
        for &(i, o) in &dims {
            offsets.push(acc);
            acc += i * o + o;
        }

        for l in (0..dims.len()).rev() {
            let (fan_in, fan_out) = dims[l];
            let off = offsets[l];
            let input: Vec<f64> = if l == 0 {
                example.features.clone()
            } else {
                pre[l - 1].iter().map(|&v| self.activation.apply(v)).collect()
            };
            for o in 0..fan_out {
                let d = weight * delta[o];
                let row = &mut out[off + o * fan_in..off + (o + 1) * fan_in];
                for (g, &a) in row.iter_mut().zip(&input) {
                    *g += d * a;
                }
                out[off + fan_in * fan_out + o] += d;
            }
            if l > 0 {
                let w = &params[off..off + fan_in * fan_out];
                delta = (0..fan_in)
                    .map(|j| {
                        let back: f64 = (0..fan_out).map(|o| w[o * fan_in + j] * delta[o]).sum();
                        back * self.activation.derivative(pre[l - 1][j])
                    })
                    .collect();
            }
        }
        Ok(loss)
    }

    fn l2_lambda(&self) -> f64 {
        self.l2_lambda
    }

    fn penalized(&self) -> Vec<Range<usize>> {
        let mut ranges = Vec::new();
        let mut off = 0;
        for (i, o) in self.layer_dims() {
            ranges.push(off..off + i * o);
            off += i * o + o;
        }
        ranges
    }
}

/// Quadratic test objective `l(z, theta) = 1/2 (theta - x)^T A (theta - x)`
/// where `x` is the example's feature vector. With `A = 1` in one dimension
/// this is the mean-estimation loss `1/2 (theta - y)^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticModel {
    dim: usize,
    /// Row-major symmetric matrix.
    a: Vec<f64>,
}

impl QuadraticModel {
    pub fn new(dim: usize, a: Vec<f64>) -> Result<Self> {
        if a.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                what: "quadratic matrix",
                expected: dim * dim,
                found: a.len(),
            });
        }
        Ok(QuadraticModel { dim, a })
    }

    /// One-dimensional `1/2 (theta - y)^2`.
    pub fn scalar() -> Self {
        QuadraticModel { dim: 1, a: vec![1.0] }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut a = vec![0.0; n * n];
        for (i, &d) in diag.iter().enumerate() {
            a[i * n + i] = d;
        }
        QuadraticModel { dim: n, a }
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    /// `A u`
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| dot(&self.a[i * self.dim..(i + 1) * self.dim], u))
            .collect()
    }

    /// Example whose target point is `target`.
    pub fn example(id: u64, target: Vec<f64>) -> Example {
        Example::new(id, target, 0)
    }

    fn residual(&self, params: &ParamVector, example: &Example) -> Result<Vec<f64>> {
        self.check_params(params)?;
        if example.features.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "example features",
                expected: self.dim,
                found: example.features.len(),
            });
        }
        Ok(params.iter().zip(&example.features).map(|(t, x)| t - x).collect())
    }
}

impl Objective for QuadraticModel {
    fn num_params(&self) -> usize {
        self.dim
    }

    fn initial_params(&self, _seed: u64) -> ParamVector {
        ParamVector::zeros(self.dim)
    }

    fn loss(&self, params: &ParamVector, example: &Example) -> Result<f64> {
        let r = self.residual(params, example)?;
        Ok(0.5 * dot(&r, &self.apply(&r)))
    }

    fn accumulate_grad(
        &self,
        params: &ParamVector,
        example: &Example,
        weight: f64,
        out: &mut [f64],
    ) -> Result<f64> {
        let r = self.residual(params, example)?;
        let ar = self.apply(&r);
        for (g, v) in out.iter_mut().zip(&ar) {
            *g += weight * v;
        }
        Ok(0.5 * dot(&r, &ar))
    }
}
