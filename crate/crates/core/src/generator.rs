//! Fully connected one-shot generator `x = g(s, theta)` with sigmoid outputs,
//! reverse-mode gradients and (optionally sensitivity-weighted) training.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"TDTO";
pub const MODEL_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::Tanh => 1,
            Activation::Sigmoid => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Sigmoid),
            _ => Err(Error::Format(format!("unknown activation code {c}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "sigmoid" => Some(Activation::Sigmoid),
            _ => None,
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => sigmoid(v),
        }
    }

    fn apply_layer(self, v: f64, output: bool) -> f64 {
        if output {
            sigmoid(v.clamp(-OUTPUT_CLAMP, OUTPUT_CLAMP))
        } else {
            self.apply(v)
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

/// Pre-activations beyond this would round the output sigmoid to exactly 0 or 1.
const OUTPUT_CLAMP: f64 = 36.0;

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Layer widths from input to output plus the hidden activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    sizes: Vec<usize>,
    hidden: Activation,
}

impl Architecture {
    pub fn new(sizes: Vec<usize>, hidden: Activation) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidParameter("architecture needs at least input and output layers".into()));
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidParameter(format!("layer {i} has zero width")));
        }
        Ok(Self { sizes, hidden })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn hidden(&self) -> Activation {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    arch: Architecture,
    seed: u64,
    /// `weights[l]` maps layer `l` to `l + 1`, shape `(out, in)`.
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Glorot-uniform weights and zero biases, deterministic in `seed`.
pub fn init(arch: &Architecture, seed: u64) -> GeneratorParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in arch.sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-limit..limit)));
        biases.push(Array1::zeros(fan_out));
    }
    GeneratorParams { arch: arch.clone(), seed, weights, biases }
}

impl GeneratorParams {
    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn zeroed(arch: &Architecture) -> Self {
        let mut p = init(arch, 0);
        p.weights.iter_mut().for_each(|w| w.fill(0.0));
        p
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    /// All parameters, layer by layer: weights row-major then biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch { expected: self.param_count(), actual: flat.len() });
        }
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().for_each(|v| *v = it.next().unwrap());
            b.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.arch.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.arch.input_dim(), actual: input.len() });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("generator input".into()));
        }
        Ok(())
    }

    /// One design, every entry strictly inside `(0, 1)` for finite weights.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut a = Array1::from(input.to_vec());
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.dot(&a) + b;
            let hidden = self.arch.hidden;
            z.mapv_inplace(|v| hidden.apply_layer(v, l == last));
            a = z;
        }
        Ok(a.to_vec())
    }

    /// Activations of every layer for a batch (rows are samples).
    fn forward_batch(&self, inputs: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut acts = vec![inputs.clone()];
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts[l].dot(&w.t());
            z += &b.view().insert_axis(Axis(0));
            let hidden = self.arch.hidden;
            z.mapv_inplace(|v| hidden.apply_layer(v, l == last));
            acts.push(z);
        }
        acts
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// `TDTO`, version byte, activation byte, layer count (u32), widths (u64),
    /// seed (u64), then per layer the row-major weights and the biases, all
    /// little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.param_count());
        out.extend_from_slice(MODEL_MAGIC);
        out.push(MODEL_VERSION);
        out.push(self.arch.hidden.code());
        out.extend_from_slice(&(self.arch.sizes.len() as u32).to_le_bytes());
        for &s in &self.arch.sizes {
            out.extend_from_slice(&(s as u64).to_le_bytes());
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        for v in self.to_flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = crate::io::ByteReader::new(bytes);
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::Format("bad magic, not a model file".into()));
        }
        let version = r.u8()?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let hidden = Activation::from_code(r.u8()?)?;
        let n_layers = r.u32()? as usize;
        if n_layers > 64 {
            return Err(Error::Format(format!("implausible layer count {n_layers}")));
        }
        let sizes = (0..n_layers).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let arch = Architecture::new(sizes, hidden).map_err(|e| Error::Format(e.to_string()))?;
        let seed = r.u64()?;
        let expected = arch.param_count();
        if r.remaining() != 8 * expected {
            return Err(Error::Format(format!(
                "parameter block has {} bytes, expected {}",
                r.remaining(),
                8 * expected
            )));
        }
        let flat = (0..expected).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let mut p = init(&arch, seed);
        p.set_flat(&flat)?;
        p.seed = seed;
        Ok(p)
    }
}

/// Per-element loss weights from the compliance sensitivity at an optimum:
/// min-max normalized magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityWeights(pub Vec<f64>);

impl SensitivityWeights {
    /// `None` when the sensitivity is constant (normalization undefined).
    pub fn from_sensitivity(grad: &[f64]) -> Option<Self> {
        let mag: Vec<f64> = grad.iter().map(|g| g.abs()).collect();
        let lo = mag.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = mag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) || !hi.is_finite() {
            return None;
        }
        Some(Self(mag.iter().map(|m| (m - lo) / (hi - lo)).collect()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl Optimizer {
    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(Optimizer::Sgd),
            "adam" => Some(Optimizer::Adam),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    /// Learning rate multiplied by this factor after every epoch.
    pub lr_decay: f64,
    pub epochs: usize,
    /// Datasets smaller than this are trained full-batch.
    pub batch_size: usize,
    /// Stop once the mean per-element loss drops below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            learning_rate: 2e-3,
            lr_decay: 1.0,
            epochs: 600,
            batch_size: 256,
            tolerance: 1e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidParameter("learning rate must be positive and decay in (0, 1]".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("epochs and batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs_run: usize,
    /// Samples whose weights were degenerate and replaced by identity.
    pub identity_fallbacks: usize,
}

/// Training pairs with optional per-sample weights.
pub struct TrainingSet<'a> {
    pub inputs: &'a [Vec<f64>],
    pub targets: &'a [Vec<f64>],
    /// One entry per sample; `None` entries use identity weighting.
    pub weights: Option<&'a [Option<SensitivityWeights>]>,
}

struct Batch {
    x: Array2<f64>,
    t: Array2<f64>,
    w: Option<Array2<f64>>,
}

fn make_batch(set: &TrainingSet<'_>, idx: &[usize], n_out: usize) -> Batch {
    let n_in = set.inputs[0].len();
    let x = Array2::from_shape_fn((idx.len(), n_in), |(r, c)| set.inputs[idx[r]][c]);
    let t = Array2::from_shape_fn((idx.len(), n_out), |(r, c)| set.targets[idx[r]][c]);
    let w = set.weights.map(|ws| {
        Array2::from_shape_fn((idx.len(), n_out), |(r, c)| ws[idx[r]].as_ref().map_or(1.0, |w| w.0[c]))
    });
    Batch { x, t, w }
}

/// Mean over samples of `sum_e lambda_e (g_e - x_e)^2`, with gradients.
fn loss_and_grad(p: &GeneratorParams, batch: &Batch, want_grad: bool) -> (f64, Vec<Array2<f64>>, Vec<Array1<f64>>) {
    let acts = p.forward_batch(&batch.x);
    let out = acts.last().unwrap();
    let b = batch.x.nrows() as f64;
    let mut diff = out - &batch.t;
    let weighted = match &batch.w {
        Some(w) => &diff * w,
        None => diff.clone(),
    };
    let loss = (&weighted * &diff).sum() / b;
    if !want_grad {
        return (loss, Vec::new(), Vec::new());
    }
    // dL/dz at the sigmoid output
    diff = weighted * (2.0 / b);
    diff.zip_mut_with(out, |d, &o| *d *= o * (1.0 - o));
    let n_layers = p.weights.len();
    let mut gw = vec![Array2::zeros((0, 0)); n_layers];
    let mut gb = vec![Array1::zeros(0); n_layers];
    let mut delta = diff;
    for l in (0..n_layers).rev() {
        gw[l] = delta.t().dot(&acts[l]);
        gb[l] = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut prev = delta.dot(&p.weights[l]);
            let hidden = p.arch.hidden;
            prev.zip_mut_with(&acts[l], |d, &a| *d *= hidden.derivative_from_output(a));
            delta = prev;
        }
    }
    (loss, gw, gb)
}

fn validate_set(p: &GeneratorParams, set: &TrainingSet<'_>) -> Result<()> {
    if set.inputs.is_empty() {
        return Err(Error::InvalidParameter("empty training set".into()));
    }
    if set.inputs.len() != set.targets.len() {
        return Err(Error::DimensionMismatch { expected: set.inputs.len(), actual: set.targets.len() });
    }
    if let Some(w) = set.weights {
        if w.len() != set.inputs.len() {
            return Err(Error::DimensionMismatch { expected: set.inputs.len(), actual: w.len() });
        }
    }
    for (i, t) in set.inputs.iter().zip(set.targets) {
        p.check_input(i)?;
        if t.len() != p.arch.output_dim() {
            return Err(Error::DimensionMismatch { expected: p.arch.output_dim(), actual: t.len() });
        }
    }
    Ok(())
}

/// Training loss (mean over samples).
pub fn loss(p: &GeneratorParams, set: &TrainingSet<'_>) -> Result<f64> {
    validate_set(p, set)?;
    let idx: Vec<usize> = (0..set.inputs.len()).collect();
    Ok(loss_and_grad(p, &make_batch(set, &idx, p.arch.output_dim()), false).0)
}

/// Loss and its gradient, flattened like [`GeneratorParams::to_flat`].
pub fn loss_gradient(p: &GeneratorParams, set: &TrainingSet<'_>) -> Result<(f64, Vec<f64>)> {
    validate_set(p, set)?;
    let idx: Vec<usize> = (0..set.inputs.len()).collect();
    let (l, gw, gb) = loss_and_grad(p, &make_batch(set, &idx, p.arch.output_dim()), true);
    let mut flat = Vec::with_capacity(p.param_count());
    for (w, b) in gw.iter().zip(&gb) {
        flat.extend(w.iter());
        flat.extend(b.iter());
    }
    Ok((l, flat))
}

/// Minimizes the (weighted) squared error starting from `theta0`. Returns the
/// best parameters seen, so the loss never ends above the starting loss.
pub fn train(theta0: &GeneratorParams, set: &TrainingSet<'_>, config: &TrainConfig) -> Result<(GeneratorParams, TrainReport)> {
    config.validate()?;
    validate_set(theta0, set)?;
    let n = set.inputs.len();
    let n_out = theta0.arch.output_dim();
    let identity_fallbacks = set.weights.map_or(0, |w| w.iter().filter(|w| w.is_none()).count());
    if identity_fallbacks > 0 {
        log::warn!("{identity_fallbacks} sample(s) have degenerate sensitivity weights; using identity");
    }
    let all: Vec<usize> = (0..n).collect();
    let full = make_batch(set, &all, n_out);
    let full_batch = n < config.batch_size;

    let mut p = theta0.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut m_w: Vec<Array2<f64>> = p.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect();
    let mut v_w = m_w.clone();
    let mut m_b: Vec<Array1<f64>> = p.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect();
    let mut v_b = m_b.clone();
    let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
    let mut step = 0i32;
    let mut lr = config.learning_rate;

    let initial_loss = loss_and_grad(&p, &full, false).0;
    let mut best = (initial_loss, p.clone());
    let mut epochs_run = 0;
    let mut order = all.clone();
    for _ in 0..config.epochs {
        if best.0 / n_out as f64 <= config.tolerance {
            break;
        }
        epochs_run += 1;
        let batches: Vec<Vec<usize>> = if full_batch {
            vec![all.clone()]
        } else {
            order.shuffle(&mut rng);
            order.chunks(config.batch_size).map(|c| c.to_vec()).collect()
        };
        for idx in batches {
            let batch = if full_batch { None } else { Some(make_batch(set, &idx, n_out)) };
            let (_, gw, gb) = loss_and_grad(&p, batch.as_ref().unwrap_or(&full), true);
            step += 1;
            match config.optimizer {
                Optimizer::Sgd => {
                    for l in 0..p.weights.len() {
                        p.weights[l].scaled_add(-lr, &gw[l]);
                        p.biases[l].scaled_add(-lr, &gb[l]);
                    }
                }
                Optimizer::Adam => {
                    let c1 = 1.0 - f64::powi(beta1, step);
                    let c2 = 1.0 - f64::powi(beta2, step);
                    for l in 0..p.weights.len() {
                        adam_update(&mut p.weights[l], &gw[l], &mut m_w[l], &mut v_w[l], lr, beta1, beta2, eps, c1, c2);
                        adam_update(&mut p.biases[l], &gb[l], &mut m_b[l], &mut v_b[l], lr, beta1, beta2, eps, c1, c2);
                    }
                }
            }
        }
        let current = loss_and_grad(&p, &full, false).0;
        if !current.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        if current < best.0 {
            best = (current, p.clone());
        }
        lr *= config.lr_decay;
    }
    let report = TrainReport { initial_loss, final_loss: best.0, epochs_run, identity_fallbacks };
    Ok((best.1, report))
}

#[allow(clippy::too_many_arguments)]
fn adam_update<D: ndarray::Dimension>(
    param: &mut ndarray::Array<f64, D>,
    grad: &ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    c1: f64,
    c2: f64,
) {
    ndarray::Zip::from(param).and(grad).and(m).and(v).for_each(|p, &g, m, v| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    });
}
