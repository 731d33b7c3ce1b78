//! Exact HMM forward inference over expert-sequence priors.
//!
//! An expert-sequence prior treats the identity of the active expert as a
//! latent Markov chain. Running the forward algorithm in log space over the
//! per-step loss matrix yields the total switching codelength
//!
//! ```text
//!   total = -log sum_{xi_1..xi_N} p(xi_1..xi_N) * prod_t exp(-L_t[xi_t])
//! ```
//!
//! together with the filtered posterior `p(xi_t = k | D_<t)` over experts.
//! The recursion per step t is: mix the joint mass through the transition
//! kernel (t = 1 consumes the initial prior instead), normalize to read off
//! the posterior, then multiply in the evidence `exp(-L_t[k])`.

use crate::error::{Error, Result};
use crate::math::{log_sum_exp, lse_unchecked};
use crate::types::{LogProbVector, LossMatrix};

/// The transition-prior family placed over expert sequences.
#[derive(Debug, Clone, PartialEq)]
pub enum StrategyKind {
    /// Switch rate decays as `alpha_t = min(1, (m-1)/t)`; `m-1` is the
    /// expected number of switch points.
    FixedShareDecreasing { m: u64 },
    /// Constant switch rate `alpha` in `[0, 1]`.
    FixedShareConstant { alpha: f64 },
    /// No switching after the first step; reduces to a Bayesian mixture.
    BayesianMixture,
    /// The active expert is redrawn from the target weights at every step.
    ElementwiseMixture,
    /// Stable/unstable two-chain prior: the unstable chain redraws with
    /// probability `kappa/t`, half of each redraw landing in an absorbing
    /// stable copy of the chosen expert.
    SwitchDistribution { kappa: f64 },
}

/// A complete expert-sequence prior: transition family, expert count,
/// initial distribution, and switch-target weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingStrategy {
    kind: StrategyKind,
    n_experts: usize,
    initial_log_prior: LogProbVector,
    switch_target_weights: Vec<f64>,
}

impl SwitchingStrategy {
    /// Builds a strategy with uniform initial prior and uniform switch
    /// targets over `n_experts` experts.
    pub fn new(kind: StrategyKind, n_experts: usize) -> Result<Self> {
        if n_experts == 0 {
            return Err(Error::InvalidArgument("strategy needs at least one expert".into()));
        }
        match kind {
            StrategyKind::FixedShareDecreasing { m } if m < 1 => {
                return Err(Error::InvalidArgument("fixed share needs m >= 1".into()));
            }
            StrategyKind::FixedShareConstant { alpha } if !(0.0..=1.0).contains(&alpha) => {
                return Err(Error::InvalidArgument(format!(
                    "fixed share rate alpha = {alpha} outside [0, 1]"
                )));
            }
            StrategyKind::SwitchDistribution { kappa } if !(kappa > 0.0 && kappa < 1.0) => {
                return Err(Error::InvalidArgument(format!(
                    "switch distribution rate kappa = {kappa} outside (0, 1)"
                )));
            }
            _ => {}
        }
        Ok(Self {
            kind,
            n_experts,
            initial_log_prior: LogProbVector::uniform(n_experts),
            switch_target_weights: vec![1.0 / n_experts as f64; n_experts],
        })
    }

    pub fn with_initial_log_prior(mut self, prior: LogProbVector) -> Result<Self> {
        if prior.len() != self.n_experts {
            return Err(Error::DimensionMismatch(format!(
                "prior over {} experts for a strategy with {}",
                prior.len(),
                self.n_experts
            )));
        }
        self.initial_log_prior = prior;
        Ok(self)
    }

    pub fn with_switch_target_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.n_experts {
            return Err(Error::DimensionMismatch(format!(
                "{} switch-target weights for {} experts",
                weights.len(),
                self.n_experts
            )));
        }
        validate_weights(&weights, 1e-12)?;
        self.switch_target_weights = weights;
        Ok(self)
    }

    pub fn kind(&self) -> &StrategyKind {
        &self.kind
    }

    pub fn n_experts(&self) -> usize {
        self.n_experts
    }

    pub fn initial_log_prior(&self) -> &LogProbVector {
        &self.initial_log_prior
    }

    pub fn switch_target_weights(&self) -> &[f64] {
        &self.switch_target_weights
    }

    /// Compact text form, also accepted by [`SwitchingStrategy::parse`].
    pub fn descriptor(&self) -> String {
        match &self.kind {
            StrategyKind::FixedShareDecreasing { m } => format!("fixed-share-dec:m={m}"),
            StrategyKind::FixedShareConstant { alpha } => {
                format!("fixed-share-const:alpha={alpha}")
            }
            StrategyKind::BayesianMixture => "bayes".to_string(),
            StrategyKind::ElementwiseMixture => "elementwise".to_string(),
            StrategyKind::SwitchDistribution { kappa } => format!("switch:kappa={kappa}"),
        }
    }

    /// Parses a strategy descriptor: `fixed-share-dec:m=INT`,
    /// `fixed-share-const:alpha=FLOAT`, `bayes`, `elementwise`, or
    /// `switch:kappa=FLOAT`.
    pub fn parse(text: &str, n_experts: usize) -> Result<Self> {
        let text = text.trim();
        let kind = match text {
            "bayes" => StrategyKind::BayesianMixture,
            "elementwise" => StrategyKind::ElementwiseMixture,
            _ => {
                let (head, arg) = text.split_once(':').ok_or_else(|| {
                    Error::InvalidArgument(format!("unknown switching strategy '{text}'"))
                })?;
                let (key, value) = arg.split_once('=').ok_or_else(|| {
                    Error::InvalidArgument(format!("strategy argument '{arg}' is not key=value"))
                })?;
                match (head, key) {
                    ("fixed-share-dec", "m") => StrategyKind::FixedShareDecreasing {
                        m: value.parse().map_err(|_| {
                            Error::InvalidArgument(format!("m = '{value}' is not an integer"))
                        })?,
                    },
                    ("fixed-share-const", "alpha") => StrategyKind::FixedShareConstant {
                        alpha: value.parse().map_err(|_| {
                            Error::InvalidArgument(format!("alpha = '{value}' is not a number"))
                        })?,
                    },
                    ("switch", "kappa") => StrategyKind::SwitchDistribution {
                        kappa: value.parse().map_err(|_| {
                            Error::InvalidArgument(format!("kappa = '{value}' is not a number"))
                        })?,
                    },
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "unknown switching strategy '{text}'"
                        )))
                    }
                }
            }
        };
        Self::new(kind, n_experts)
    }
}

fn validate_weights(weights: &[f64], tol: f64) -> Result<()> {
    let mut sum = 0.0;
    for &w in weights {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidArgument(format!("invalid weight {w}")));
        }
        sum += w;
    }
    if (sum - 1.0).abs() > tol {
        return Err(Error::InvalidArgument(format!("weights sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Filtered switching posterior `p(xi_t = k | D_<t)` per step, plus the
/// per-step marginal losses whose sum telescopes to the total codelength.
#[derive(Debug, Clone)]
pub struct PosteriorTrace {
    n_steps: usize,
    n_experts: usize,
    posteriors: Vec<f64>,
    per_step_marginal_loss: Vec<f64>,
}

impl PosteriorTrace {
    pub(crate) fn from_parts(
        n_steps: usize,
        n_experts: usize,
        posteriors: Vec<f64>,
        per_step_marginal_loss: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(posteriors.len(), n_steps * n_experts);
        debug_assert_eq!(per_step_marginal_loss.len(), n_steps);
        Self { n_steps, n_experts, posteriors, per_step_marginal_loss }
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_experts(&self) -> usize {
        self.n_experts
    }

    /// Posterior row for 0-based step index `t`; sums to 1.
    pub fn row(&self, t: usize) -> &[f64] {
        &self.posteriors[t * self.n_experts..(t + 1) * self.n_experts]
    }

    /// `-log sum_k p(xi_t = k | D_<t) exp(-L_t[k])` per step, in nats.
    pub fn per_step_marginal_loss(&self) -> &[f64] {
        &self.per_step_marginal_loss
    }

    /// Mean posterior mass per expert over all steps.
    pub fn time_averaged(&self) -> Vec<f64> {
        let mut avg = vec![0.0; self.n_experts];
        for t in 0..self.n_steps {
            for (a, &p) in avg.iter_mut().zip(self.row(t)) {
                *a += p;
            }
        }
        for a in &mut avg {
            *a /= self.n_steps as f64;
        }
        avg
    }

    /// The expert that most often has the highest posterior; ties break
    /// toward the lower expert index at both levels.
    pub fn most_frequent_argmax(&self) -> usize {
        let mut counts = vec![0usize; self.n_experts];
        for t in 0..self.n_steps {
            let row = self.row(t);
            let mut best = 0;
            for k in 1..self.n_experts {
                if row[k] > row[best] {
                    best = k;
                }
            }
            counts[best] += 1;
        }
        let mut best = 0;
        for k in 1..self.n_experts {
            if counts[k] > counts[best] {
                best = k;
            }
        }
        best
    }
}

/// Total switching codelength with its posterior trace.
#[derive(Debug, Clone)]
pub struct CodelengthResult {
    pub total_nats: f64,
    pub trace: PosteriorTrace,
    /// Strategy descriptor string.
    pub strategy: String,
}

/// One step of the forward recursion: the posterior over experts before the
/// loss update, and the marginal loss paid at this step.
#[derive(Debug, Clone)]
pub struct ForwardStep {
    pub posterior: Vec<f64>,
    pub marginal_loss: f64,
}

/// Incremental forward recursion over the expert-sequence prior.
///
/// Feed loss rows one step at a time with [`ForwardState::step`]; at any
/// point [`ForwardState::total_nats`] is the codelength of the consumed
/// prefix. The fixed-share, Bayesian-mixture, and elementwise kinds run on K
/// states; the switch distribution runs on an augmented 2K-state chain
/// (unstable block then stable block) whose posterior is marginalized back
/// to the K experts.
pub struct ForwardState {
    strategy: SwitchingStrategy,
    n_states: usize,
    s: Vec<f64>,
    trans: Vec<f64>,
    scratch: Vec<f64>,
    next: Vec<f64>,
    t: u64,
}

impl ForwardState {
    pub fn new(strategy: &SwitchingStrategy) -> Self {
        let k = strategy.n_experts;
        let augmented = matches!(strategy.kind, StrategyKind::SwitchDistribution { .. });
        let n_states = if augmented { 2 * k } else { k };
        let s = if augmented {
            // equal chain split, experts distributed by the target weights
            let mut s = Vec::with_capacity(2 * k);
            for block in 0..2 {
                let _ = block;
                for &w in &strategy.switch_target_weights {
                    s.push((0.5 * w).ln());
                }
            }
            s
        } else {
            strategy.initial_log_prior.values().to_vec()
        };
        Self {
            strategy: strategy.clone(),
            n_states,
            s,
            trans: vec![0.0; n_states * n_states],
            scratch: vec![0.0; n_states],
            next: vec![0.0; n_states],
            t: 0,
        }
    }

    pub fn steps_consumed(&self) -> u64 {
        self.t
    }

    /// Advances one step: mixes the joint mass through the step-`t`
    /// transition kernel (skipped at t = 1, where the initial prior is the
    /// predictive distribution), reads off the posterior, then multiplies in
    /// the evidence `exp(-loss)` per expert.
    pub fn step(&mut self, loss_row: &[f64]) -> Result<ForwardStep> {
        let k = self.strategy.n_experts;
        if loss_row.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "loss row of length {} for {} experts",
                loss_row.len(),
                k
            )));
        }
        self.t += 1;
        for (i, &loss) in loss_row.iter().enumerate() {
            if loss.is_nan() {
                return Err(Error::NonFinite(format!(
                    "loss at step {} expert {}",
                    self.t, i
                )));
            }
        }
        if self.t >= 2 {
            fill_transition(&self.strategy, self.t, self.n_states, &mut self.trans);
            for target in 0..self.n_states {
                for source in 0..self.n_states {
                    self.scratch[source] = self.trans[source * self.n_states + target] + self.s[source];
                }
                self.next[target] = lse_unchecked(&self.scratch);
            }
            self.s.copy_from_slice(&self.next);
        }
        let mass = lse_unchecked(&self.s);
        let mut posterior = vec![0.0; k];
        for state in 0..self.n_states {
            posterior[state % k] += (self.s[state] - mass).exp();
        }
        for state in 0..self.n_states {
            self.scratch[state] = self.s[state] - mass - loss_row[state % k];
        }
        let marginal_loss = -lse_unchecked(&self.scratch);
        for state in 0..self.n_states {
            self.s[state] -= loss_row[state % k];
        }
        Ok(ForwardStep { posterior, marginal_loss })
    }

    /// Codelength in nats of the prefix consumed so far.
    pub fn total_nats(&self) -> f64 {
        -lse_unchecked(&self.s)
    }
}

/// Writes the step-`t` transition kernel into `trans` (row = source state,
/// column = target state), row-major over `n_states` states.
fn fill_transition(strategy: &SwitchingStrategy, t: u64, n_states: usize, trans: &mut [f64]) {
    let k = strategy.n_experts;
    let w = &strategy.switch_target_weights;
    match strategy.kind {
        StrategyKind::FixedShareDecreasing { m } => {
            let alpha = (((m - 1) as f64) / t as f64).min(1.0);
            fill_fixed_share(alpha, w, k, trans);
        }
        StrategyKind::FixedShareConstant { alpha } => fill_fixed_share(alpha, w, k, trans),
        StrategyKind::BayesianMixture => fill_fixed_share(0.0, w, k, trans),
        StrategyKind::ElementwiseMixture => {
            for source in 0..k {
                for target in 0..k {
                    trans[source * k + target] = w[target].ln();
                }
            }
        }
        StrategyKind::SwitchDistribution { kappa } => {
            let tau = kappa / t as f64;
            // unstable block first (states 0..k), stable block second
            for source in 0..k {
                for target in 0..k {
                    let fresh = tau * 0.5 * w[target];
                    let stay = if source == target { 1.0 - tau } else { 0.0 };
                    trans[source * n_states + target] = (stay + fresh).ln();
                    trans[source * n_states + k + target] = fresh.ln();
                }
            }
            for source in 0..k {
                let row = (k + source) * n_states;
                for target in 0..n_states {
                    trans[row + target] =
                        if target == k + source { 0.0 } else { f64::NEG_INFINITY };
                }
            }
        }
    }
}

fn fill_fixed_share(alpha: f64, w: &[f64], k: usize, trans: &mut [f64]) {
    for source in 0..k {
        for target in 0..k {
            let p = if source == target {
                (1.0 - alpha) + alpha * w[target]
            } else {
                alpha * w[target]
            };
            trans[source * k + target] = p.ln();
        }
    }
}

/// Log transition matrix `log p(xi_t | xi_{t-1})` at data index `t >= 2`,
/// row-major with row = source expert. The switch distribution has no K x K
/// representation (its kernel acts on the augmented stable/unstable chain)
/// and is rejected here.
pub fn transition_log_probs(strategy: &SwitchingStrategy, t: u64) -> Result<Vec<f64>> {
    if t < 2 {
        return Err(Error::InvalidArgument(
            "transition is defined for t >= 2; t = 1 uses the initial prior".into(),
        ));
    }
    if matches!(strategy.kind, StrategyKind::SwitchDistribution { .. }) {
        return Err(Error::InvalidArgument(
            "switch distribution transitions act on the augmented 2K-state chain".into(),
        ));
    }
    let k = strategy.n_experts;
    let mut trans = vec![0.0; k * k];
    fill_transition(strategy, t, k, &mut trans);
    Ok(trans)
}

/// Runs the forward recursion over a full loss matrix and returns the total
/// codelength with its posterior trace.
pub fn forward_codelength(
    losses: &LossMatrix,
    strategy: &SwitchingStrategy,
) -> Result<CodelengthResult> {
    if losses.n_experts() != strategy.n_experts {
        return Err(Error::DimensionMismatch(format!(
            "loss matrix with {} experts under a strategy with {}",
            losses.n_experts(),
            strategy.n_experts
        )));
    }
    let n = losses.n_steps();
    let k = losses.n_experts();
    let mut state = ForwardState::new(strategy);
    let mut posteriors = Vec::with_capacity(n * k);
    let mut marginals = Vec::with_capacity(n);
    for t in 0..n {
        let step = state.step(losses.row(t))?;
        posteriors.extend_from_slice(&step.posterior);
        marginals.push(step.marginal_loss);
    }
    Ok(CodelengthResult {
        total_nats: state.total_nats(),
        trace: PosteriorTrace {
            n_steps: n,
            n_experts: k,
            posteriors,
            per_step_marginal_loss: marginals,
        },
        strategy: strategy.descriptor(),
    })
}

/// Direct mixture form `-log sum_k exp(log prior_k - sum_t L_t[k])`,
/// an algebraic shortcut that must agree with the forward recursion under
/// the Bayesian-mixture strategy.
pub fn bayesian_mixture_codelength(losses: &LossMatrix, prior: &LogProbVector) -> Result<f64> {
    if prior.len() != losses.n_experts() {
        return Err(Error::DimensionMismatch(format!(
            "prior over {} experts for a loss matrix with {}",
            prior.len(),
            losses.n_experts()
        )));
    }
    let mut acc: Vec<f64> = prior.values().to_vec();
    for t in 0..losses.n_steps() {
        for (a, &loss) in acc.iter_mut().zip(losses.row(t)) {
            *a -= loss;
        }
    }
    Ok(-log_sum_exp(&acc)?)
}

/// Per-step mixture form `sum_t -log sum_k w_k exp(-L_t[k])`, the
/// no-memory prior where the active expert is redrawn every step.
pub fn elementwise_mixture_codelength(losses: &LossMatrix, weights: &[f64]) -> Result<f64> {
    if weights.len() != losses.n_experts() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for a loss matrix with {} experts",
            weights.len(),
            losses.n_experts()
        )));
    }
    validate_weights(weights, 1e-12)?;
    let log_w: Vec<f64> = weights.iter().map(|&w| w.ln()).collect();
    let mut scratch = vec![0.0; weights.len()];
    let mut total = 0.0;
    for t in 0..losses.n_steps() {
        let row = losses.row(t);
        for (i, s) in scratch.iter_mut().enumerate() {
            *s = log_w[i] - row[i];
        }
        total -= lse_unchecked(&scratch);
    }
    Ok(total)
}

/// Codelength under the stable/unstable switch distribution with uniform
/// target weights; a thin wrapper over the augmented-chain forward pass.
pub fn switch_distribution_codelength(losses: &LossMatrix, kappa: f64) -> Result<f64> {
    let strategy = SwitchingStrategy::new(
        StrategyKind::SwitchDistribution { kappa },
        losses.n_experts(),
    )?;
    Ok(forward_codelength(losses, &strategy)?.total_nats)
}

/// Cumulative regret `R_t = sum_{s<=t} (marginal_s - comparator_s)` against
/// a per-step comparator loss sequence.
pub fn regret_vs_comparator(
    result: &CodelengthResult,
    comparator_per_step_loss: &[f64],
) -> Result<Vec<f64>> {
    let marginals = result.trace.per_step_marginal_loss();
    if marginals.len() != comparator_per_step_loss.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} marginal losses against {} comparator losses",
            marginals.len(),
            comparator_per_step_loss.len()
        )));
    }
    let mut out = Vec::with_capacity(marginals.len());
    let mut acc = 0.0;
    for (m, c) in marginals.iter().zip(comparator_per_step_loss) {
        acc += m - c;
        out.push(acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_losses(n: usize, k: usize, seed: u64) -> LossMatrix {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let losses: Vec<f64> = (0..n * k).map(|_| rng.gen_range(0.0..4.0)).collect();
        let names = (0..k).map(|i| format!("e{i}")).collect();
        LossMatrix::new(losses, k, names).unwrap()
    }

    #[test]
    fn fixed_share_m2_k2_t2_matches_hand_values() {
        let s = SwitchingStrategy::new(StrategyKind::FixedShareDecreasing { m: 2 }, 2).unwrap();
        let trans = transition_log_probs(&s, 2).unwrap();
        // alpha_2 = 1/2: stay 3/4, switch 1/4
        assert!((trans[0] - 0.75f64.ln()).abs() < 1e-12);
        assert!((trans[1] - 0.25f64.ln()).abs() < 1e-12);
        assert!((trans[2] - 0.25f64.ln()).abs() < 1e-12);
        assert!((trans[3] - 0.75f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fixed_share_m1_is_the_identity_transition() {
        let s = SwitchingStrategy::new(StrategyKind::FixedShareDecreasing { m: 1 }, 3).unwrap();
        let trans = transition_log_probs(&s, 5).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 0.0 } else { f64::NEG_INFINITY };
                assert_eq!(trans[i * 3 + j], expected);
            }
        }
    }

    #[test]
    fn fixed_share_clamps_alpha_to_one() {
        let s = SwitchingStrategy::new(StrategyKind::FixedShareDecreasing { m: 11 }, 3).unwrap();
        let trans = transition_log_probs(&s, 2).unwrap();
        for &v in &trans {
            assert!((v - (1.0f64 / 3.0).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn elementwise_rows_equal_log_weights() {
        let s = SwitchingStrategy::new(StrategyKind::ElementwiseMixture, 2)
            .unwrap()
            .with_switch_target_weights(vec![0.25, 0.75])
            .unwrap();
        let trans = transition_log_probs(&s, 7).unwrap();
        for row in 0..2 {
            assert!((trans[row * 2] - 0.25f64.ln()).abs() < 1e-12);
            assert!((trans[row * 2 + 1] - 0.75f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn transition_rows_are_normalized() {
        let kinds = [
            StrategyKind::FixedShareDecreasing { m: 4 },
            StrategyKind::FixedShareConstant { alpha: 0.3 },
            StrategyKind::BayesianMixture,
            StrategyKind::ElementwiseMixture,
        ];
        for kind in kinds {
            let s = SwitchingStrategy::new(kind, 4).unwrap();
            for t in [2, 3, 17, 1000] {
                let trans = transition_log_probs(&s, t).unwrap();
                for row in trans.chunks(4) {
                    assert!(log_sum_exp(row).unwrap().abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn transition_rejects_t_below_two_and_augmented_kind() {
        let s = SwitchingStrategy::new(StrategyKind::BayesianMixture, 2).unwrap();
        assert!(transition_log_probs(&s, 1).is_err());
        let s = SwitchingStrategy::new(StrategyKind::SwitchDistribution { kappa: 0.5 }, 2).unwrap();
        assert!(transition_log_probs(&s, 2).is_err());
    }

    #[test]
    fn strategy_parameter_ranges_are_enforced() {
        assert!(SwitchingStrategy::new(StrategyKind::FixedShareConstant { alpha: 1.5 }, 2).is_err());
        assert!(SwitchingStrategy::new(StrategyKind::SwitchDistribution { kappa: 1.0 }, 2).is_err());
        assert!(SwitchingStrategy::new(StrategyKind::SwitchDistribution { kappa: 0.0 }, 2).is_err());
        assert!(SwitchingStrategy::new(StrategyKind::BayesianMixture, 0).is_err());
    }

    #[test]
    fn single_expert_codelength_is_the_loss_sum() {
        let losses = LossMatrix::new(vec![0.7, 0.2, 0.5], 1, vec!["only".into()]).unwrap();
        let s = SwitchingStrategy::new(StrategyKind::BayesianMixture, 1).unwrap();
        let result = forward_codelength(&losses, &s).unwrap();
        assert!((result.total_nats - 1.4).abs() < 1e-12);
        for t in 0..3 {
            assert_eq!(result.trace.row(t), &[1.0]);
        }
        assert_eq!(result.trace.per_step_marginal_loss(), &[0.7, 0.2, 0.5]);
    }

    #[test]
    fn bayesian_mixture_is_dominated_by_best_expert_plus_prior_cost() {
        let n = 50;
        let mut losses = Vec::new();
        for _ in 0..n {
            losses.push(0.3);
            losses.push(0.4);
        }
        let m = LossMatrix::new(losses, 2, vec!["a".into(), "b".into()]).unwrap();
        let s = SwitchingStrategy::new(StrategyKind::BayesianMixture, 2).unwrap();
        let total = forward_codelength(&m, &s).unwrap().total_nats;
        let best = m.expert_total(0);
        assert!(total <= best + 2.0f64.ln() + 1e-12);
        assert!(total >= best - 1e-12);
    }

    #[test]
    fn fixed_share_m1_equals_bayesian_mixture() {
        for seed in 0..20 {
            let m = random_losses(7, 3, seed);
            let fs = SwitchingStrategy::new(StrategyKind::FixedShareDecreasing { m: 1 }, 3).unwrap();
            let bm = SwitchingStrategy::new(StrategyKind::BayesianMixture, 3).unwrap();
            let a = forward_codelength(&m, &fs).unwrap().total_nats;
            let b = forward_codelength(&m, &bm).unwrap().total_nats;
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn direct_bayesian_mixture_agrees_with_forward() {
        for seed in 0..20 {
            let m = random_losses(9, 3, 100 + seed);
            let s = SwitchingStrategy::new(StrategyKind::BayesianMixture, 3).unwrap();
            let forward = forward_codelength(&m, &s).unwrap().total_nats;
            let direct = bayesian_mixture_codelength(&m, &LogProbVector::uniform(3)).unwrap();
            assert!((forward - direct).abs() < 1e-9, "forward {forward} direct {direct}");
        }
    }

    #[test]
    fn direct_elementwise_mixture_agrees_with_forward() {
        for seed in 0..20 {
            let m = random_losses(9, 3, 200 + seed);
            let s = SwitchingStrategy::new(StrategyKind::ElementwiseMixture, 3).unwrap();
            let forward = forward_codelength(&m, &s).unwrap().total_nats;
            let direct =
                elementwise_mixture_codelength(&m, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
            assert!((forward - direct).abs() < 1e-9, "forward {forward} direct {direct}");
        }
    }

    #[test]
    fn identical_experts_collapse_to_single_expert_total() {
        let mut losses = Vec::new();
        for t in 0..6 {
            let v = 0.2 + 0.1 * t as f64;
            losses.push(v);
            losses.push(v);
        }
        let m = LossMatrix::new(losses, 2, vec!["a".into(), "b".into()]).unwrap();
        let single = m.expert_total(0);
        let bayes = bayesian_mixture_codelength(&m, &LogProbVector::uniform(2)).unwrap();
        let elem = elementwise_mixture_codelength(&m, &[0.5, 0.5]).unwrap();
        assert!((bayes - single).abs() < 1e-12);
        assert!((elem - single).abs() < 1e-12);
    }

    #[test]
    fn switch_distribution_single_expert_ignores_kappa() {
        let losses = LossMatrix::new(vec![0.7, 0.2, 0.5], 1, vec!["only".into()]).unwrap();
        for kappa in [0.1, 0.5, 0.9] {
            let total = switch_distribution_codelength(&losses, kappa).unwrap();
            assert!((total - 1.4).abs() < 1e-12, "kappa {kappa} total {total}");
        }
    }

    #[test]
    fn posterior_rows_sum_to_one_and_marginals_telescope() {
        let kinds = [
            StrategyKind::FixedShareDecreasing { m: 3 },
            StrategyKind::FixedShareConstant { alpha: 0.2 },
            StrategyKind::BayesianMixture,
            StrategyKind::ElementwiseMixture,
            StrategyKind::SwitchDistribution { kappa: 0.5 },
        ];
        for (i, kind) in kinds.into_iter().enumerate() {
            let m = random_losses(40, 3, 300 + i as u64);
            let s = SwitchingStrategy::new(kind, 3).unwrap();
            let result = forward_codelength(&m, &s).unwrap();
            for t in 0..m.n_steps() {
                let sum: f64 = result.trace.row(t).iter().sum();
                assert!((sum - 1.0).abs() < 1e-9, "row {t} sums to {sum}");
            }
            let marginal_sum: f64 = result.trace.per_step_marginal_loss().iter().sum();
            let rel = (marginal_sum - result.total_nats).abs() / result.total_nats.abs().max(1.0);
            assert!(rel < 1e-6, "marginal sum {marginal_sum} total {}", result.total_nats);
        }
    }

    #[test]
    fn regret_against_own_marginals_is_zero() {
        let m = random_losses(10, 2, 400);
        let s = SwitchingStrategy::new(StrategyKind::FixedShareDecreasing { m: 2 }, 2).unwrap();
        let result = forward_codelength(&m, &s).unwrap();
        let marginals = result.trace.per_step_marginal_loss().to_vec();
        let regret = regret_vs_comparator(&result, &marginals).unwrap();
        for r in regret {
            assert!(r.abs() < 1e-12);
        }
    }

    #[test]
    fn regret_against_worse_comparator_declines_linearly() {
        let m = random_losses(10, 2, 401);
        let s = SwitchingStrategy::new(StrategyKind::BayesianMixture, 2).unwrap();
        let result = forward_codelength(&m, &s).unwrap();
        let comparator: Vec<f64> =
            result.trace.per_step_marginal_loss().iter().map(|l| l + 0.1).collect();
        let regret = regret_vs_comparator(&result, &comparator).unwrap();
        for (t, r) in regret.iter().enumerate() {
            assert!((r - (-0.1 * (t + 1) as f64)).abs() < 1e-9);
        }
    }

    #[test]
    fn regret_prefix_sums_match_hand_computation() {
        let marginals = [0.5, 0.2, 0.9, 0.1, 0.4];
        let comparator = [0.3, 0.3, 0.3, 0.3, 0.3];
        // prefix sums of (marginal - comparator), computed by hand
        let expected = [0.2, 0.1, 0.7, 0.5, 0.6];
        let result = CodelengthResult {
            total_nats: marginals.iter().sum(),
            trace: PosteriorTrace {
                n_steps: 5,
                n_experts: 1,
                posteriors: vec![1.0; 5],
                per_step_marginal_loss: marginals.to_vec(),
            },
            strategy: "bayes".into(),
        };
        let regret = regret_vs_comparator(&result, &comparator).unwrap();
        for (got, want) in regret.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let m = random_losses(4, 2, 402);
        let s = SwitchingStrategy::new(StrategyKind::BayesianMixture, 3).unwrap();
        assert!(forward_codelength(&m, &s).is_err());
        let s2 = SwitchingStrategy::new(StrategyKind::BayesianMixture, 2).unwrap();
        let result = forward_codelength(&m, &s2).unwrap();
        assert!(regret_vs_comparator(&result, &[0.0; 3]).is_err());
    }

    #[test]
    fn descriptor_round_trips_through_parse() {
        let cases = [
            "fixed-share-dec:m=11",
            "fixed-share-const:alpha=0.3",
            "bayes",
            "elementwise",
            "switch:kappa=0.5",
        ];
        for text in cases {
            let s = SwitchingStrategy::parse(text, 4).unwrap();
            assert_eq!(s.descriptor(), text);
        }
        assert!(SwitchingStrategy::parse("nonsense", 2).is_err());
        assert!(SwitchingStrategy::parse("fixed-share-dec:m=x", 2).is_err());
    }

    #[test]
    fn most_frequent_argmax_breaks_ties_low() {
        let trace = PosteriorTrace {
            n_steps: 4,
            n_experts: 2,
            posteriors: vec![0.5, 0.5, 0.9, 0.1, 0.1, 0.9, 0.5, 0.5],
            per_step_marginal_loss: vec![0.0; 4],
        };
        // argmaxes: 0 (tie), 0, 1, 0 (tie) -> expert 0
        assert_eq!(trace.most_frequent_argmax(), 0);
    }
}
