//! Dense numeric substrate: parameters with gradient buffers, activations,
//! softmax/cross-entropy, SGD with global-norm clipping, and a
//! central-difference gradient checker.
//!
//! Everything here is f64. Matrices are row-major; vectors are plain
//! `Vec<f64>`/`&[f64]`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A trainable tensor: value plus a same-shaped gradient accumulator.
///
/// A matrix has `rows x cols`; a vector is stored as `rows x 1`.
#[derive(Debug, Clone)]
pub struct Parameter {
    name: String,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    grad: Vec<f64>,
}

impl Parameter {
    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Parameter {
            name: name.into(),
            rows,
            cols,
            value: vec![0.0; rows * cols],
            grad: vec![0.0; rows * cols],
        }
    }

    /// Uniform(-scale, scale) initialization.
    pub fn uniform(
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let value = (0..rows * cols)
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        Parameter {
            name: name.into(),
            rows,
            cols,
            value,
            grad: vec![0.0; rows * cols],
        }
    }

    pub fn from_values(
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        value: Vec<f64>,
    ) -> Result<Self> {
        if value.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                context: "Parameter::from_values".into(),
                expected: format!("{} values", rows * cols),
                got: format!("{}", value.len()),
            });
        }
        let grad = vec![0.0; value.len()];
        Ok(Parameter {
            name: name.into(),
            rows,
            cols,
            value,
            grad,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn value(&self) -> &[f64] {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut [f64] {
        &mut self.value
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.value[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.value[i * self.cols..(i + 1) * self.cols]
    }

    /// y = M x, with M `rows x cols` and |x| = cols.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols, "{}: matvec input size", self.name);
        let mut y = vec![0.0; self.rows];
        for (i, yi) in y.iter_mut().enumerate() {
            let row = &self.value[i * self.cols..(i + 1) * self.cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *yi = acc;
        }
        y
    }

    /// x = Mᵀ y, with |y| = rows; used to push gradients back through matvec.
    pub fn matvec_transpose(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows, "{}: matvec_transpose input", self.name);
        let mut x = vec![0.0; self.cols];
        for (i, yi) in y.iter().enumerate() {
            let row = &self.value[i * self.cols..(i + 1) * self.cols];
            for (xj, a) in x.iter_mut().zip(row) {
                *xj += a * yi;
            }
        }
        x
    }

    /// grad += dy xᵀ (outer product), the matvec weight gradient.
    pub fn accumulate_outer(&mut self, dy: &[f64], x: &[f64]) {
        debug_assert_eq!(dy.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for (i, dyi) in dy.iter().enumerate() {
            let grow = &mut self.grad[i * self.cols..(i + 1) * self.cols];
            for (g, xj) in grow.iter_mut().zip(x) {
                *g += dyi * xj;
            }
        }
    }

    /// grad += d, for bias vectors (cols == 1).
    pub fn accumulate(&mut self, d: &[f64]) {
        debug_assert_eq!(d.len(), self.grad.len());
        for (g, di) in self.grad.iter_mut().zip(d) {
            *g += di;
        }
    }

    pub fn accumulate_row(&mut self, i: usize, d: &[f64]) {
        debug_assert_eq!(d.len(), self.cols);
        let grow = &mut self.grad[i * self.cols..(i + 1) * self.cols];
        for (g, di) in grow.iter_mut().zip(d) {
            *g += di;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.value.iter().all(|v| v.is_finite())
    }
}

/// Anything that exposes its trainable parameters to the optimizer and the
/// gradient checker.
pub trait ParamModel {
    fn params_mut(&mut self) -> Vec<&mut Parameter>;
}

impl ParamModel for Parameter {
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![self]
    }
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

/// Elementwise logistic function; saturates cleanly for large |x|.
pub fn sigmoid(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect()
}

pub fn tanh_vec(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.tanh()).collect()
}

/// Numerically stable softmax (max-subtraction).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::EmptyInput("softmax of empty vector".into()));
    }
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Stable log-softmax, for beam scoring.
pub fn log_softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::EmptyInput("log_softmax of empty vector".into()));
    }
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln() + m;
    Ok(v.iter().map(|&x| x - lse).collect())
}

/// Floor applied inside the log so that a zero probability yields a large
/// finite loss instead of infinity.
pub const CROSS_ENTROPY_FLOOR: f64 = 1e-12;

/// -log(probs[target] + floor). `probs` must be a probability vector.
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<f64> {
    if target >= probs.len() {
        return Err(Error::IdOutOfRange {
            id: target,
            vocab_size: probs.len(),
            position: 0,
        });
    }
    Ok(-(probs[target] + CROSS_ENTROPY_FLOOR).ln())
}

/// a ⊕ b, a's entries first.
pub fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

pub fn add_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn add_assign(a: &mut [f64], b: &[f64]) {
    debug_assert_eq!(a.len(), b.len());
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

pub fn scale_vec(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|x| x * c).collect()
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

/// Plain SGD with global-norm gradient clipping.
#[derive(Debug, Clone, Copy)]
pub struct Sgd {
    pub lr: f64,
    pub clip: f64,
}

impl Sgd {
    pub fn new(lr: f64, clip: f64) -> Self {
        Sgd { lr, clip }
    }

    /// Clips the global gradient norm, applies `value -= lr * grad`, and
    /// zeroes all gradients.
    pub fn step(&self, params: &mut [&mut Parameter]) {
        clip_grads(params, self.clip);
        if self.lr != 0.0 {
            for p in params.iter_mut() {
                let lr = self.lr;
                let (value, grad) = (&mut p.value, &p.grad);
                for (v, g) in value.iter_mut().zip(grad) {
                    *v -= lr * g;
                }
            }
        }
        for p in params.iter_mut() {
            p.zero_grad();
        }
    }
}

pub fn global_grad_norm(params: &[&mut Parameter]) -> f64 {
    params
        .iter()
        .map(|p| p.grad.iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Scales all gradients so the global norm is at most `max_norm`.
/// Returns the scale factor applied (1.0 when no clipping happened).
pub fn clip_grads(params: &mut [&mut Parameter], max_norm: f64) -> f64 {
    let norm = global_grad_norm(params);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for p in params.iter_mut() {
            for g in p.grad.iter_mut() {
                *g *= scale;
            }
        }
        scale
    } else {
        1.0
    }
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Entries where analytic and numeric agree within this absolute bound
    /// pass outright. Central differences on an O(1) loss carry ~1e-11 of
    /// f64 cancellation noise, so a pure relative test would flag healthy
    /// near-zero gradients.
    pub abs_tol: f64,
    /// Above this many total entries, only a random sample is checked.
    pub sample_threshold: usize,
    pub sample_rate: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            tol: 1e-4,
            abs_tol: 1e-8,
            sample_threshold: 10_000,
            sample_rate: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub total_entries: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

/// Compares analytic gradients against central differences.
///
/// `loss` must compute the scalar loss and accumulate gradients into the
/// model's parameters. It is re-invoked for each perturbed evaluation; the
/// gradients it accumulates there are discarded.
pub fn grad_check<M, F>(model: &mut M, mut loss: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    M: ParamModel,
    F: FnMut(&mut M) -> Result<f64>,
{
    for p in model.params_mut() {
        p.zero_grad();
    }
    let base = loss(model)?;
    if !base.is_finite() {
        return Err(Error::NonFiniteLoss {
            context: "grad_check base evaluation".into(),
        });
    }

    let (names, analytic): (Vec<String>, Vec<Vec<f64>>) = {
        let params = model.params_mut();
        (
            params.iter().map(|p| p.name.clone()).collect(),
            params.iter().map(|p| p.grad.clone()).collect(),
        )
    };

    let mut entries: Vec<(usize, usize)> = Vec::new();
    for (pi, g) in analytic.iter().enumerate() {
        for ei in 0..g.len() {
            entries.push((pi, ei));
        }
    }
    let total_entries = entries.len();
    if total_entries > cfg.sample_threshold {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let keep = ((total_entries as f64 * cfg.sample_rate).ceil() as usize).max(1);
        let mut sampled = Vec::with_capacity(keep);
        for _ in 0..keep {
            sampled.push(entries[rng.gen_range(0..total_entries)]);
        }
        entries = sampled;
    }

    let mut report = GradCheckReport {
        checked: entries.len(),
        total_entries,
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        tol: cfg.tol,
    };

    for (pi, ei) in entries {
        model.params_mut()[pi].value_mut()[ei] += cfg.eps;
        let lp = loss(model)?;
        model.params_mut()[pi].value_mut()[ei] -= 2.0 * cfg.eps;
        let lm = loss(model)?;
        model.params_mut()[pi].value_mut()[ei] += cfg.eps;
        if !lp.is_finite() || !lm.is_finite() {
            return Err(Error::NonFiniteLoss {
                context: format!("grad_check perturbation of {}[{}]", names[pi], ei),
            });
        }
        let numeric = (lp - lm) / (2.0 * cfg.eps);
        let exact = analytic[pi][ei];
        if (exact - numeric).abs() <= cfg.abs_tol {
            continue;
        }
        let rel = (exact - numeric).abs() / (exact.abs() + numeric.abs()).max(1e-8);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_param = names[pi].clone();
            report.worst_index = ei;
        }
    }

    for p in model.params_mut() {
        p.zero_grad();
    }
    Ok(report)
}
