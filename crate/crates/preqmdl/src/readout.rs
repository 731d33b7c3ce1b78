//! Readout heads over fixed feature vectors: linear probes and small ReLU
//! MLPs with softmax cross-entropy, hand-derived gradients, AdamW updates,
//! and a parameter EMA used for prediction.
//!
//! Parameters are stored as one flat vector, layer by layer, each layer as a
//! row-major (out x in) weight block followed by its bias block. Gradients
//! use the same layout.

use crate::error::{Error, Result};
use crate::math::lse_unchecked;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Shape of one readout head: `hidden_layers = 0` is a linear probe,
/// 1 through 7 are ReLU MLPs of the given width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadoutArchitecture {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub input_dim: usize,
    pub n_classes: usize,
}

impl ReadoutArchitecture {
    pub fn new(
        hidden_layers: usize,
        hidden_width: usize,
        input_dim: usize,
        n_classes: usize,
    ) -> Result<Self> {
        if hidden_layers > 7 {
            return Err(Error::InvalidArgument(format!(
                "{hidden_layers} hidden layers, supported depth is 0 through 7"
            )));
        }
        if hidden_width == 0 || input_dim == 0 {
            return Err(Error::InvalidArgument("width and input dim must be >= 1".into()));
        }
        if n_classes < 2 {
            return Err(Error::InvalidArgument("readout needs at least 2 classes".into()));
        }
        Ok(Self { hidden_layers, hidden_width, input_dim, n_classes })
    }

    /// Linear probe over `input_dim` features.
    pub fn linear(input_dim: usize, n_classes: usize) -> Result<Self> {
        Self::new(0, input_dim.max(1), input_dim, n_classes)
    }

    /// (fan_in, fan_out) per layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_dim;
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, self.hidden_width));
            fan_in = self.hidden_width;
        }
        dims.push((fan_in, self.n_classes));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| o * i + o).sum()
    }

    /// Short name like `linear`, `mlp1`, `mlp2`.
    pub fn short_name(&self) -> String {
        if self.hidden_layers == 0 {
            "linear".to_string()
        } else {
            format!("mlp{}", self.hidden_layers)
        }
    }
}

/// Per-expert training settings. `ADAM_BETA2` and `ADAM_EPSILON` are fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub ema_step_size: f64,
    pub label_smoothing: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 0.0,
            beta1: 0.9,
            ema_step_size: 0.1,
            label_smoothing: 0.1,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!("weight decay {}", self.weight_decay)));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::InvalidArgument(format!("beta1 {} outside [0, 1)", self.beta1)));
        }
        if !(self.ema_step_size > 0.0 && self.ema_step_size <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "ema step size {} outside (0, 1]",
                self.ema_step_size
            )));
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return Err(Error::InvalidArgument(format!(
                "label smoothing {} outside [0, 0.5)",
                self.label_smoothing
            )));
        }
        Ok(())
    }
}

/// One expert: parameters, their EMA shadow used for prediction, and
/// first/second moment accumulators for the AdamW update.
#[derive(Debug, Clone)]
pub struct ExpertState {
    arch: ReadoutArchitecture,
    hyper: Hyperparameters,
    parameters: Vec<f64>,
    ema_parameters: Vec<f64>,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
    diverged: bool,
}

impl ExpertState {
    /// Initializes hidden weights fan-in uniform, the final layer and all
    /// biases to zero (so the first prediction is uniform), from the given
    /// RNG stream.
    pub fn init(
        arch: ReadoutArchitecture,
        hyper: Hyperparameters,
        rng: &mut ChaCha12Rng,
    ) -> Result<Self> {
        hyper.validate()?;
        let dims = arch.layer_dims();
        let n_layers = dims.len();
        let mut parameters = Vec::with_capacity(arch.param_count());
        for (layer, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let last = layer == n_layers - 1;
            let scale = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_out * fan_in {
                parameters.push(if last { 0.0 } else { rng.gen_range(-scale..scale) });
            }
            parameters.extend(std::iter::repeat(0.0).take(fan_out));
        }
        let n = parameters.len();
        Ok(Self {
            arch,
            hyper,
            ema_parameters: parameters.clone(),
            parameters,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step_count: 0,
            diverged: false,
        })
    }

    /// Initializes from a global seed, giving expert `index` its own RNG
    /// stream (stream `1 + index`; stream 0 belongs to the replay sampler).
    pub fn init_seeded(
        arch: ReadoutArchitecture,
        hyper: Hyperparameters,
        global_seed: u64,
        index: usize,
    ) -> Result<Self> {
        let mut rng = ChaCha12Rng::seed_from_u64(global_seed);
        rng.set_stream(1 + index as u64);
        Self::init(arch, hyper, &mut rng)
    }

    pub fn arch(&self) -> &ReadoutArchitecture {
        &self.arch
    }

    pub fn hyper(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn parameters(&self) -> &[f64] {
        &self.parameters
    }

    pub fn ema_parameters(&self) -> &[f64] {
        &self.ema_parameters
    }

    pub fn set_parameter(&mut self, index: usize, value: f64) {
        self.parameters[index] = value;
    }

    pub fn steps_taken(&self) -> u64 {
        self.step_count
    }

    /// True once any parameter has gone non-finite; sticky.
    pub fn is_diverged(&mut self) -> bool {
        if !self.diverged && self.parameters.iter().any(|p| !p.is_finite()) {
            self.diverged = true;
        }
        self.diverged
    }

    /// Log-softmax output for one feature vector; prediction normally uses
    /// the EMA shadow (`use_ema`), training gradients the raw parameters.
    pub fn predict_log_probs(&self, feature: &[f64], use_ema: bool) -> Result<Vec<f64>> {
        if feature.len() != self.arch.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "feature of length {} for input dim {}",
                feature.len(),
                self.arch.input_dim
            )));
        }
        let params = if use_ema { &self.ema_parameters } else { &self.parameters };
        if params.iter().any(|p| p.is_nan()) {
            return Err(Error::DivergedExpert);
        }
        let trace = forward(&self.arch, params, feature);
        let logits = &trace.logits;
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("logits in forward pass".into()));
        }
        let lse = lse_unchecked(logits);
        Ok(logits.iter().map(|l| l - lse).collect())
    }

    /// Mean cross-entropy over the batch against label-smoothed targets
    /// (`1 - eps` on the true class, `eps/(C-1)` elsewhere), with the exact
    /// gradient in flat parameter layout. Raw parameters; weight decay is
    /// the optimizer's job, not part of this loss.
    pub fn loss_and_gradient(
        &self,
        features: &[Vec<f64>],
        labels: &[u32],
        label_smoothing: f64,
    ) -> Result<(f64, Vec<f64>)> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "batch of {} features and {} labels",
                features.len(),
                labels.len()
            )));
        }
        if !(0.0..0.5).contains(&label_smoothing) {
            return Err(Error::InvalidArgument(format!(
                "label smoothing {label_smoothing} outside [0, 0.5)"
            )));
        }
        let arch = &self.arch;
        let c = arch.n_classes;
        let off_target = label_smoothing / (c - 1) as f64;
        let on_target = 1.0 - label_smoothing;
        let dims = arch.layer_dims();
        let offsets = layer_offsets(&dims);
        let mut grad = vec![0.0; self.parameters.len()];
        let mut total_loss = 0.0;
        for (feature, &label) in features.iter().zip(labels) {
            if feature.len() != arch.input_dim {
                return Err(Error::DimensionMismatch(format!(
                    "feature of length {} for input dim {}",
                    feature.len(),
                    arch.input_dim
                )));
            }
            if label as usize >= c {
                return Err(Error::InvalidArgument(format!(
                    "label {label} out of range for {c} classes"
                )));
            }
            let trace = forward(arch, &self.parameters, feature);
            let lse = lse_unchecked(&trace.logits);
            if !lse.is_finite() {
                return Err(Error::NonFinite("logits in forward pass".into()));
            }
            // delta = softmax - smoothed target; loss = -sum target * logp
            let mut delta = Vec::with_capacity(c);
            for (i, &logit) in trace.logits.iter().enumerate() {
                let logp = logit - lse;
                let target = if i == label as usize { on_target } else { off_target };
                total_loss -= target * logp;
                delta.push(logp.exp() - target);
            }
            backward(arch, &self.parameters, &dims, &offsets, feature, &trace, delta, &mut grad);
        }
        let inv_b = 1.0 / features.len() as f64;
        for g in &mut grad {
            *g *= inv_b;
        }
        Ok((total_loss * inv_b, grad))
    }

    /// One AdamW step (bias-corrected moments, decoupled weight decay),
    /// then one EMA update of the prediction shadow.
    pub fn sgd_step(&mut self, gradient: &[f64]) {
        assert_eq!(gradient.len(), self.parameters.len(), "gradient shape mismatch");
        self.step_count += 1;
        let t = self.step_count as i32;
        let h = &self.hyper;
        let bc1 = 1.0 - h.beta1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for i in 0..self.parameters.len() {
            let g = gradient[i];
            self.first_moment[i] = h.beta1 * self.first_moment[i] + (1.0 - h.beta1) * g;
            self.second_moment[i] = ADAM_BETA2 * self.second_moment[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.first_moment[i] / bc1;
            let v_hat = self.second_moment[i] / bc2;
            self.parameters[i] -= h.learning_rate
                * (m_hat / (v_hat.sqrt() + ADAM_EPSILON) + h.weight_decay * self.parameters[i]);
        }
        let step = h.ema_step_size;
        for (e, &p) in self.ema_parameters.iter_mut().zip(&self.parameters) {
            *e = (1.0 - step) * *e + step * p;
        }
    }
}

struct ForwardTrace {
    /// Post-rectifier activations per hidden layer.
    hidden: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn layer_offsets(dims: &[(usize, usize)]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(dims.len());
    let mut pos = 0;
    for &(fan_in, fan_out) in dims {
        offsets.push(pos);
        pos += fan_out * fan_in + fan_out;
    }
    offsets
}

fn forward(arch: &ReadoutArchitecture, params: &[f64], feature: &[f64]) -> ForwardTrace {
    let dims = arch.layer_dims();
    let offsets = layer_offsets(&dims);
    let n_layers = dims.len();
    let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(arch.hidden_layers);
    let mut logits = Vec::new();
    let mut input: &[f64] = feature;
    for (layer, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let base = offsets[layer];
        let bias_base = base + fan_out * fan_in;
        let mut out = Vec::with_capacity(fan_out);
        for r in 0..fan_out {
            let row = base + r * fan_in;
            let mut acc = params[bias_base + r];
            for (c, &x) in input.iter().enumerate() {
                acc += params[row + c] * x;
            }
            out.push(acc);
        }
        if layer == n_layers - 1 {
            logits = out;
        } else {
            for v in &mut out {
                *v = v.max(0.0);
            }
            hidden.push(out);
            input = hidden.last().unwrap();
        }
    }
    ForwardTrace { hidden, logits }
}

/// Accumulates (adds) the gradient of one example into `grad`, given the
/// output-layer delta = softmax - target.
#[allow(clippy::too_many_arguments)]
fn backward(
    arch: &ReadoutArchitecture,
    params: &[f64],
    dims: &[(usize, usize)],
    offsets: &[usize],
    feature: &[f64],
    trace: &ForwardTrace,
    mut delta: Vec<f64>,
    grad: &mut [f64],
) {
    for layer in (0..dims.len()).rev() {
        let (fan_in, fan_out) = dims[layer];
        let base = offsets[layer];
        let bias_base = base + fan_out * fan_in;
        let input: &[f64] = if layer == 0 { feature } else { &trace.hidden[layer - 1] };
        for (r, &d) in delta.iter().enumerate() {
            let row = base + r * fan_in;
            for (c, &x) in input.iter().enumerate() {
                grad[row + c] += d * x;
            }
            grad[bias_base + r] += d;
        }
        if layer == 0 {
            break;
        }
        // rectifier gate: post-activation > 0 iff the unit was active
        let mut prev = vec![0.0; fan_in];
        for (c, p) in prev.iter_mut().enumerate() {
            if input[c] > 0.0 {
                let mut acc = 0.0;
                for (r, &d) in delta.iter().enumerate() {
                    acc += params[base + r * fan_in + c] * d;
                }
                *p = acc;
            }
        }
        delta = prev;
        let _ = arch;
    }
}
