//! Stage 1 of the pipeline: one pass over the data sequence, recording every
//! expert's next-step log-loss before that example is trained on, then
//! updating all experts on a mini-batch of the new example plus replay
//! draws from the seen prefix.
//!
//! The same step driver also powers the fully online variant that feeds
//! each loss row straight into the switching forward recursion, so the
//! staged and online paths are equivalent by construction.

use crate::error::{Error, Result};
use crate::readout::{ExpertState, Hyperparameters, ReadoutArchitecture};
use crate::switching::{CodelengthResult, ForwardState, SwitchingStrategy};
use crate::types::{FeatureSequence, LossMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

/// Replay cursors over the seen prefix. In the default mode every draw
/// jumps to a uniformly random seen position, so draws are independent and
/// uniform; the sequential mode instead walks each cursor forward in data
/// order and restarts it at a uniform position on reaching the frontier.
pub struct ReplayStreamSet {
    cursors: Vec<usize>,
    next_stream: usize,
    rng: ChaCha12Rng,
    sequential: bool,
}

impl ReplayStreamSet {
    /// Builds `n_streams` cursors; the sampler owns RNG stream 0 of the
    /// global seed (experts use streams `1 + k`).
    pub fn new(n_streams: usize, global_seed: u64, sequential: bool) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(global_seed);
        rng.set_stream(0);
        Self { cursors: vec![0; n_streams], next_stream: 0, rng, sequential }
    }

    pub fn n_streams(&self) -> usize {
        self.cursors.len()
    }

    pub fn cursors(&self) -> &[usize] {
        &self.cursors
    }

    /// Indices for the step that introduces `new_index`: the new example
    /// first, then up to `batch_size - 1` replay draws from the prefix
    /// `0..new_index`, visiting streams round-robin. With no streams or an
    /// empty prefix the batch is just the new example.
    pub fn assemble_batch(&mut self, new_index: usize, batch_size: usize) -> Vec<usize> {
        let frontier = new_index;
        let mut batch = Vec::with_capacity(batch_size.max(1));
        batch.push(new_index);
        if self.cursors.is_empty() || frontier == 0 {
            return batch;
        }
        let n_draws = batch_size.saturating_sub(1).min(frontier);
        for _ in 0..n_draws {
            let s = self.next_stream;
            self.next_stream = (self.next_stream + 1) % self.cursors.len();
            if !self.sequential || self.cursors[s] >= frontier {
                self.cursors[s] = self.rng.gen_range(0..frontier);
            }
            batch.push(self.cursors[s]);
            self.cursors[s] += 1;
        }
        batch
    }
}

/// Stage-1 settings. Loss recording happens at every step unconditionally.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub batch_size: usize,
    pub n_streams: usize,
    pub seed: u64,
    /// Walk replay cursors in data order instead of jumping uniformly at
    /// every draw. Off by default: the in-order walk is not uniform over
    /// the prefix, and uniform replay is the documented setting.
    pub sequential_replay: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self { batch_size: 32, n_streams: 30, seed: 0, sequential_replay: false }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One expert in the pool: a named architecture and its training settings.
#[derive(Debug, Clone)]
pub struct ExpertSpec {
    pub name: String,
    pub arch: ReadoutArchitecture,
    pub hyper: Hyperparameters,
}

impl ExpertSpec {
    /// Names the expert after its architecture and learning rate.
    pub fn new(arch: ReadoutArchitecture, hyper: Hyperparameters) -> Self {
        let name = format!("{}:lr={}", arch.short_name(), hyper.learning_rate);
        Self { name, arch, hyper }
    }

    pub fn named(name: impl Into<String>, arch: ReadoutArchitecture, hyper: Hyperparameters) -> Self {
        Self { name: name.into(), arch, hyper }
    }
}

/// Loss matrix plus which experts diverged during the run.
pub struct Stage1Output {
    pub losses: LossMatrix,
    pub diverged_experts: Vec<usize>,
}

/// Fully online run: switching codelength computed step by step while the
/// experts train, plus the same artifacts stage 1 would have produced.
pub struct OnlineRunOutput {
    pub result: CodelengthResult,
    pub losses: LossMatrix,
    pub diverged_experts: Vec<usize>,
}

struct TrackedExpert {
    state: ExpertState,
    diverged: bool,
}

/// Shared per-step engine: records the loss row for the incoming example
/// from EMA parameters, then trains every live expert once on the batch.
struct StepDriver<'a> {
    data: &'a FeatureSequence,
    experts: Vec<TrackedExpert>,
    label_smoothings: Vec<f64>,
    replay: ReplayStreamSet,
    batch_size: usize,
    uniform_loss: f64,
}

impl<'a> StepDriver<'a> {
    fn new(data: &'a FeatureSequence, pool: &[ExpertSpec], config: &TrainerConfig) -> Result<Self> {
        config.validate()?;
        if pool.is_empty() {
            return Err(Error::InvalidArgument("expert pool is empty".into()));
        }
        let violations = crate::types::validate_feature_sequence(data);
        if !violations.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "invalid feature sequence: {}",
                violations.join("; ")
            )));
        }
        let mut experts = Vec::with_capacity(pool.len());
        let mut label_smoothings = Vec::with_capacity(pool.len());
        for (k, spec) in pool.iter().enumerate() {
            if spec.arch.input_dim != data.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "expert {} expects input dim {}, data has {}",
                    spec.name,
                    spec.arch.input_dim,
                    data.dim()
                )));
            }
            if spec.arch.n_classes != data.n_classes() as usize {
                return Err(Error::DimensionMismatch(format!(
                    "expert {} expects {} classes, data has {}",
                    spec.name,
                    spec.arch.n_classes,
                    data.n_classes()
                )));
            }
            let state =
                ExpertState::init_seeded(spec.arch.clone(), spec.hyper.clone(), config.seed, k)?;
            experts.push(TrackedExpert { state, diverged: false });
            label_smoothings.push(spec.hyper.label_smoothing);
        }
        Ok(Self {
            data,
            experts,
            label_smoothings,
            replay: ReplayStreamSet::new(config.n_streams, config.seed, config.sequential_replay),
            batch_size: config.batch_size,
            uniform_loss: (data.n_classes() as f64).ln(),
        })
    }

    fn widened_feature(&self, index: usize) -> Vec<f64> {
        self.data.feature(index).iter().map(|&v| v as f64).collect()
    }

    /// Records and returns the loss row for example `t`, then performs one
    /// training update per live expert. Diverged experts fall back to the
    /// uniform loss and stop training.
    fn step(&mut self, t: usize) -> Vec<f64> {
        let feature = self.widened_feature(t);
        let label = self.data.label(t);
        let uniform = self.uniform_loss;
        let mut row = vec![0.0; self.experts.len()];
        for (expert, slot) in self.experts.iter_mut().zip(row.iter_mut()) {
            *slot = if expert.diverged {
                uniform
            } else {
                match expert.state.predict_log_probs(&feature, true) {
                    Ok(logp) => -logp[label],
                    Err(_) => {
                        expert.diverged = true;
                        uniform
                    }
                }
            };
        }
        let batch = self.replay.assemble_batch(t, self.batch_size);
        let features: Vec<Vec<f64>> = batch.iter().map(|&i| self.widened_feature(i)).collect();
        let labels: Vec<u32> = batch.iter().map(|&i| self.data.label(i) as u32).collect();
        let smoothings = &self.label_smoothings;
        self.experts
            .par_iter_mut()
            .zip(smoothings.par_iter())
            .for_each(|(expert, &eps)| {
                if expert.diverged {
                    return;
                }
                match expert.state.loss_and_gradient(&features, &labels, eps) {
                    Ok((_, grad)) => {
                        expert.state.sgd_step(&grad);
                        if expert.state.is_diverged() {
                            expert.diverged = true;
                        }
                    }
                    Err(_) => expert.diverged = true,
                }
            });
        row
    }

    fn diverged_indices(&self) -> Vec<usize> {
        self.experts
            .iter()
            .enumerate()
            .filter(|(_, e)| e.diverged)
            .map(|(k, _)| k)
            .collect()
    }
}

/// Runs stage 1 and returns the loss matrix together with the indices of
/// any experts that diverged along the way. Bit-reproducible per seed.
pub fn run_stage1_full(
    data: &FeatureSequence,
    pool: &[ExpertSpec],
    config: &TrainerConfig,
) -> Result<Stage1Output> {
    let mut driver = StepDriver::new(data, pool, config)?;
    let n = data.len();
    let k = pool.len();
    let mut losses = Vec::with_capacity(n * k);
    for t in 0..n {
        losses.extend_from_slice(&driver.step(t));
    }
    let names = pool.iter().map(|s| s.name.clone()).collect();
    Ok(Stage1Output {
        losses: LossMatrix::new(losses, k, names)?,
        diverged_experts: driver.diverged_indices(),
    })
}

/// Stage 1 without the divergence report.
pub fn run_stage1(
    data: &FeatureSequence,
    pool: &[ExpertSpec],
    config: &TrainerConfig,
) -> Result<LossMatrix> {
    Ok(run_stage1_full(data, pool, config)?.losses)
}

/// Fully online run: each loss row is consumed by the switching forward
/// recursion the moment it is recorded. Produces the same loss matrix as
/// [`run_stage1`] and the same codelength as running the switching pass on
/// that matrix afterwards.
pub fn run_online(
    data: &FeatureSequence,
    pool: &[ExpertSpec],
    config: &TrainerConfig,
    strategy: &SwitchingStrategy,
) -> Result<OnlineRunOutput> {
    if strategy.n_experts() != pool.len() {
        return Err(Error::DimensionMismatch(format!(
            "strategy over {} experts for a pool of {}",
            strategy.n_experts(),
            pool.len()
        )));
    }
    let mut driver = StepDriver::new(data, pool, config)?;
    let mut forward = ForwardState::new(strategy);
    let n = data.len();
    let k = pool.len();
    let mut losses = Vec::with_capacity(n * k);
    let mut posteriors = Vec::with_capacity(n * k);
    let mut marginals = Vec::with_capacity(n);
    for t in 0..n {
        let row = driver.step(t);
        let step = forward.step(&row)?;
        posteriors.extend_from_slice(&step.posterior);
        marginals.push(step.marginal_loss);
        losses.extend(row);
    }
    let names = pool.iter().map(|s| s.name.clone()).collect();
    Ok(OnlineRunOutput {
        result: CodelengthResult {
            total_nats: forward.total_nats(),
            trace: crate::switching::PosteriorTrace::from_parts(n, k, posteriors, marginals),
            strategy: strategy.descriptor(),
        },
        losses: LossMatrix::new(losses, k, names)?,
        diverged_experts: driver.diverged_indices(),
    })
}
