//! Closed-form plug-in experts (Bernoulli, categorical, Gaussian with known
//! variance, and pinned distributions), a hindsight dynamic program over
//! switch-budgeted expert paths, and a synthetic harness that measures the
//! regret of a switching strategy against the hindsight path and fits its
//! growth rate in log N.

use crate::error::{Error, Result};
use crate::switching::{ForwardState, SwitchingStrategy};
use crate::types::LossMatrix;
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Model family of one closed-form expert.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Bernoulli,
    Categorical { n_symbols: u32 },
    GaussianKnownVar { variance: f64 },
    /// A pinned distribution over symbols: no parameters, its own best fit.
    Fixed { probs: Vec<f64> },
}

/// One observation: a symbol for the discrete families, a real for the
/// Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation {
    Symbol(u32),
    Real(f64),
}

/// A plug-in expert: predicts from smoothed sufficient statistics of
/// everything observed so far, then absorbs the new observation.
#[derive(Debug, Clone)]
pub struct ExpFamExpert {
    family: Family,
    gamma: f64,
    counts: Vec<u64>,
    sum: f64,
    t: u64,
}

impl ExpFamExpert {
    /// `gamma` is the pseudo-count for the discrete families (0.5 gives the
    /// classic add-half estimator); it is unused by the Gaussian and pinned
    /// families.
    pub fn new(family: Family, gamma: f64) -> Result<Self> {
        let n_counts = match &family {
            Family::Bernoulli => {
                if !(gamma > 0.0 && gamma.is_finite()) {
                    return Err(Error::InvalidArgument(format!("pseudo-count {gamma} must be > 0")));
                }
                2
            }
            Family::Categorical { n_symbols } => {
                if *n_symbols < 2 {
                    return Err(Error::InvalidArgument("categorical needs >= 2 symbols".into()));
                }
                if !(gamma > 0.0 && gamma.is_finite()) {
                    return Err(Error::InvalidArgument(format!("pseudo-count {gamma} must be > 0")));
                }
                *n_symbols as usize
            }
            Family::GaussianKnownVar { variance } => {
                if !(*variance > 0.0 && variance.is_finite()) {
                    return Err(Error::InvalidArgument(format!("variance {variance} must be > 0")));
                }
                0
            }
            Family::Fixed { probs } => {
                if probs.len() < 2 {
                    return Err(Error::InvalidArgument("pinned distribution needs >= 2 symbols".into()));
                }
                let mut total = 0.0;
                for &p in probs {
                    if !(p.is_finite() && p >= 0.0) {
                        return Err(Error::InvalidArgument(format!("invalid probability {p}")));
                    }
                    total += p;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "pinned probabilities sum to {total}, expected 1"
                    )));
                }
                probs.len()
            }
        };
        Ok(Self { family, gamma, counts: vec![0; n_counts], sum: 0.0, t: 0 })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn observations_seen(&self) -> u64 {
        self.t
    }

    /// Alphabet size for the discrete families, none for the Gaussian.
    pub fn n_symbols(&self) -> Option<u32> {
        match &self.family {
            Family::Bernoulli => Some(2),
            Family::Categorical { n_symbols } => Some(*n_symbols),
            Family::Fixed { probs } => Some(probs.len() as u32),
            Family::GaussianKnownVar { .. } => None,
        }
    }

    /// Log-probability (or log-density) of `x` under the current plug-in
    /// estimate: `(count_x + gamma) / (t + C gamma)` for the discrete
    /// families, a normal density with mean `(sum + 0) / (t + 1)` for the
    /// Gaussian, and the pinned value for the fixed family.
    pub fn predictive_log_prob(&self, x: Observation) -> Result<f64> {
        match (&self.family, x) {
            (Family::Bernoulli | Family::Categorical { .. }, Observation::Symbol(s)) => {
                let c = self.counts.len();
                if s as usize >= c {
                    return Err(Error::InvalidArgument(format!(
                        "symbol {s} out of range for {c} symbols"
                    )));
                }
                let num = self.counts[s as usize] as f64 + self.gamma;
                let den = self.t as f64 + c as f64 * self.gamma;
                Ok((num / den).ln())
            }
            (Family::Fixed { probs }, Observation::Symbol(s)) => {
                let c = probs.len();
                if s as usize >= c {
                    return Err(Error::InvalidArgument(format!(
                        "symbol {s} out of range for {c} symbols"
                    )));
                }
                let p = probs[s as usize];
                if p == 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "symbol {s} has zero pinned probability"
                    )));
                }
                Ok(p.ln())
            }
            (Family::GaussianKnownVar { variance }, Observation::Real(v)) => {
                if !v.is_finite() {
                    return Err(Error::NonFinite("observation".into()));
                }
                let mean = self.sum / (self.t as f64 + 1.0);
                Ok(gaussian_log_density(v, mean, *variance))
            }
            _ => Err(Error::InvalidArgument(
                "observation type does not match the expert's family".into(),
            )),
        }
    }

    /// Absorbs one observation into the sufficient statistics.
    pub fn observe(&mut self, x: Observation) -> Result<()> {
        match (&self.family, x) {
            (
                Family::Bernoulli | Family::Categorical { .. } | Family::Fixed { .. },
                Observation::Symbol(s),
            ) => {
                if s as usize >= self.counts.len() {
                    return Err(Error::InvalidArgument(format!(
                        "symbol {s} out of range for {} symbols",
                        self.counts.len()
                    )));
                }
                self.counts[s as usize] += 1;
            }
            (Family::GaussianKnownVar { .. }, Observation::Real(v)) => {
                if !v.is_finite() {
                    return Err(Error::NonFinite("observation".into()));
                }
                self.sum += v;
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "observation type does not match the expert's family".into(),
                ))
            }
        }
        self.t += 1;
        Ok(())
    }

    /// Batch maximum-likelihood fit of this expert's family to `data`
    /// (unsmoothed counts for the discrete families, plain mean for the
    /// Gaussian; the pinned family is its own fit).
    pub fn batch_ml_fit(&self, data: &[Observation]) -> Result<FittedModel> {
        match &self.family {
            Family::Bernoulli | Family::Categorical { .. } => {
                let c = self.counts.len();
                let mut counts = vec![0u64; c];
                for &x in data {
                    match x {
                        Observation::Symbol(s) if (s as usize) < c => counts[s as usize] += 1,
                        _ => {
                            return Err(Error::InvalidArgument(
                                "data does not match the expert's alphabet".into(),
                            ))
                        }
                    }
                }
                let n = data.len() as f64;
                let log_probs =
                    counts.iter().map(|&k| if n == 0.0 { 0.0 } else { (k as f64 / n).ln() }).collect();
                Ok(FittedModel::Discrete { log_probs })
            }
            Family::Fixed { probs } => Ok(FittedModel::Discrete {
                log_probs: probs.iter().map(|&p| p.ln()).collect(),
            }),
            Family::GaussianKnownVar { variance } => {
                let mut sum = 0.0;
                for &x in data {
                    match x {
                        Observation::Real(v) => sum += v,
                        _ => {
                            return Err(Error::InvalidArgument(
                                "data does not match the expert's family".into(),
                            ))
                        }
                    }
                }
                let mean = if data.is_empty() { 0.0 } else { sum / data.len() as f64 };
                Ok(FittedModel::Gaussian { mean, variance: *variance })
            }
        }
    }
}

/// A family member with its parameters resolved by a batch fit.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Discrete { log_probs: Vec<f64> },
    Gaussian { mean: f64, variance: f64 },
}

impl FittedModel {
    /// Log-probability of `x`; minus infinity for a symbol the fit assigns
    /// zero mass (such a symbol cannot occur in the fitting data).
    pub fn log_prob(&self, x: Observation) -> f64 {
        match (self, x) {
            (FittedModel::Discrete { log_probs }, Observation::Symbol(s)) => {
                log_probs.get(s as usize).copied().unwrap_or(f64::NEG_INFINITY)
            }
            (FittedModel::Gaussian { mean, variance }, Observation::Real(v)) => {
                gaussian_log_density(v, *mean, *variance)
            }
            _ => f64::NEG_INFINITY,
        }
    }
}

fn gaussian_log_density(x: f64, mean: f64, variance: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * variance).ln() - (x - mean).powi(2) / (2.0 * variance)
}

/// Minimum-cost expert path through an arbitrary loss matrix with at most
/// `max_switches` expert changes. Ties prefer the lower expert index, then
/// the path with fewer switches.
pub fn hindsight_best_on_losses(
    losses: &LossMatrix,
    max_switches: usize,
) -> Result<(f64, Vec<usize>)> {
    hindsight_dp(losses.losses_flat(), losses.n_steps(), losses.n_experts(), max_switches)
}

/// Cheapest expert path for `data` when every expert is refit by batch
/// maximum likelihood on the whole sequence, with at most `max_switches`
/// changes of expert.
pub fn hindsight_best_codelength(
    data: &[Observation],
    experts: &[ExpFamExpert],
    max_switches: usize,
) -> Result<(f64, Vec<usize>)> {
    if experts.is_empty() {
        return Err(Error::InvalidArgument("no experts".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty data sequence".into()));
    }
    let fits: Vec<FittedModel> =
        experts.iter().map(|e| e.batch_ml_fit(data)).collect::<Result<_>>()?;
    let k = experts.len();
    let mut losses = Vec::with_capacity(data.len() * k);
    for &x in data {
        for fit in &fits {
            losses.push(-fit.log_prob(x));
        }
    }
    hindsight_dp(&losses, data.len(), k, max_switches)
}

/// Switch-budgeted shortest path over a raw step-major loss buffer, which
/// may contain infinities (a pinned expert evaluated on a symbol it
/// excludes). `dp[j][e]` is the cheapest prefix ending at expert `e` with
/// exactly `j` switches; candidate order is stay first, then switching in
/// from ascending source index, kept only on strict improvement.
fn hindsight_dp(
    losses: &[f64],
    n: usize,
    k: usize,
    max_switches: usize,
) -> Result<(f64, Vec<usize>)> {
    if n == 0 {
        return Err(Error::InvalidArgument("empty loss matrix".into()));
    }
    let layers = max_switches + 1;
    if (n as u128) * (k as u128) * (layers as u128) > 200_000_000 {
        return Err(Error::InvalidArgument(format!(
            "hindsight program of size {n} x {k} x {layers} is infeasible"
        )));
    }
    let mut dp = vec![f64::INFINITY; layers * k];
    let mut next = vec![f64::INFINITY; layers * k];
    let mut back = vec![0u32; n * layers * k];
    for e in 0..k {
        dp[e] = losses[e];
    }
    for t in 1..n {
        let row = &losses[t * k..(t + 1) * k];
        next.fill(f64::INFINITY);
        for j in 0..layers {
            for e in 0..k {
                let mut best = dp[j * k + e];
                let mut choice = 0u32;
                if j >= 1 {
                    for source in 0..k {
                        if source == e {
                            continue;
                        }
                        let cand = dp[(j - 1) * k + source];
                        if cand < best {
                            best = cand;
                            choice = 1 + source as u32;
                        }
                    }
                }
                next[j * k + e] = best + row[e];
                back[(t * layers + j) * k + e] = choice;
            }
        }
        std::mem::swap(&mut dp, &mut next);
    }
    let mut best_cost = f64::INFINITY;
    let mut best_e = 0;
    let mut best_j = 0;
    for e in 0..k {
        for j in 0..layers {
            let cand = dp[j * k + e];
            if cand < best_cost {
                best_cost = cand;
                best_e = e;
                best_j = j;
            }
        }
    }
    let mut path = vec![0usize; n];
    let (mut e, mut j) = (best_e, best_j);
    for t in (0..n).rev() {
        path[t] = e;
        if t > 0 {
            let choice = back[(t * layers + j) * k + e];
            if choice > 0 {
                e = (choice - 1) as usize;
                j -= 1;
            }
        }
    }
    Ok((best_cost, path))
}

/// One stationary stretch of the synthetic source: emission probabilities
/// holding through step `end` (1-based, inclusive).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SegmentSpec {
    pub end: u64,
    pub probs: Vec<f64>,
}

/// Piecewise-stationary symbol source.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PiecewiseSource {
    pub n_symbols: u32,
    pub segments: Vec<SegmentSpec>,
}

impl PiecewiseSource {
    pub fn validate(&self, horizon: u64) -> Result<()> {
        if self.n_symbols < 2 {
            return Err(Error::InvalidArgument("source needs >= 2 symbols".into()));
        }
        if self.segments.is_empty() {
            return Err(Error::InvalidArgument("source needs >= 1 segment".into()));
        }
        let mut prev_end = 0;
        for seg in &self.segments {
            if seg.end <= prev_end || seg.end > horizon {
                return Err(Error::InvalidArgument(format!(
                    "segment boundary {} must be strictly increasing and within [1, {horizon}]",
                    seg.end
                )));
            }
            prev_end = seg.end;
            if seg.probs.len() != self.n_symbols as usize {
                return Err(Error::DimensionMismatch(format!(
                    "segment has {} probabilities for {} symbols",
                    seg.probs.len(),
                    self.n_symbols
                )));
            }
            let mut total = 0.0;
            for &p in &seg.probs {
                if !(p.is_finite() && p >= 0.0) {
                    return Err(Error::InvalidArgument(format!("invalid probability {p}")));
                }
                total += p;
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "segment probabilities sum to {total}, expected 1"
                )));
            }
        }
        if prev_end != horizon {
            return Err(Error::InvalidArgument(format!(
                "last segment ends at {prev_end}, horizon is {horizon}"
            )));
        }
        Ok(())
    }

    /// True when every segment puts all its mass on one symbol.
    pub fn is_deterministic(&self) -> bool {
        self.segments.iter().all(|s| s.probs.iter().any(|&p| p == 1.0))
    }

    pub fn sample(&self, horizon: u64, rng: &mut ChaCha12Rng) -> Vec<u32> {
        let mut out = Vec::with_capacity(horizon as usize);
        for seg in &self.segments {
            let dist = WeightedIndex::new(&seg.probs).expect("validated weights");
            while (out.len() as u64) < seg.end.min(horizon) {
                out.push(dist.sample(rng) as u32);
            }
        }
        out
    }
}

/// Expert description inside an experiment file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ExpFamSpec {
    Bernoulli { gamma: f64 },
    Categorical { n_symbols: u32, gamma: f64 },
    Fixed { probs: Vec<f64> },
}

impl ExpFamSpec {
    pub fn build(&self) -> Result<ExpFamExpert> {
        match self {
            ExpFamSpec::Bernoulli { gamma } => ExpFamExpert::new(Family::Bernoulli, *gamma),
            ExpFamSpec::Categorical { n_symbols, gamma } => {
                ExpFamExpert::new(Family::Categorical { n_symbols: *n_symbols }, *gamma)
            }
            ExpFamSpec::Fixed { probs } => {
                ExpFamExpert::new(Family::Fixed { probs: probs.clone() }, 1.0)
            }
        }
    }

    /// Short human-readable label, used as the expert name in reports.
    pub fn describe(&self) -> String {
        match self {
            ExpFamSpec::Bernoulli { gamma } => format!("bernoulli:gamma={gamma}"),
            ExpFamSpec::Categorical { n_symbols, gamma } => {
                format!("categorical:C={n_symbols},gamma={gamma}")
            }
            ExpFamSpec::Fixed { probs } => {
                let cells: Vec<String> = probs.iter().map(|p| p.to_string()).collect();
                format!("fixed:[{}]", cells.join(","))
            }
        }
    }
}

/// A complete synthetic regret experiment: source, horizon, switching
/// strategy (by descriptor), expert pool, and trial count.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RegretExperiment {
    pub source: PiecewiseSource,
    pub horizon: u64,
    pub strategy: String,
    pub experts: Vec<ExpFamSpec>,
    pub n_trials: u64,
    pub seed: u64,
    /// Switch budget of the hindsight comparator. Defaults to `m - 1` for
    /// the decreasing fixed-share strategy, else to one fewer than the
    /// number of source segments.
    #[serde(default)]
    pub max_comparator_switches: Option<u64>,
}

impl RegretExperiment {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials < 1 {
            return Err(Error::InvalidArgument("n_trials must be >= 1".into()));
        }
        if self.horizon < 2 {
            return Err(Error::InvalidArgument("horizon must be >= 2".into()));
        }
        self.source.validate(self.horizon)?;
        if self.experts.is_empty() {
            return Err(Error::InvalidArgument("experiment needs >= 1 expert".into()));
        }
        for spec in &self.experts {
            let expert = spec.build()?;
            if let Some(c) = expert.n_symbols() {
                if c != self.source.n_symbols {
                    return Err(Error::DimensionMismatch(format!(
                        "expert over {c} symbols for a source with {}",
                        self.source.n_symbols
                    )));
                }
            }
        }
        SwitchingStrategy::parse(&self.strategy, self.experts.len())?;
        Ok(())
    }

    fn comparator_switches(&self, strategy: &SwitchingStrategy) -> usize {
        if let Some(m) = self.max_comparator_switches {
            return m as usize;
        }
        match strategy.kind() {
            crate::switching::StrategyKind::FixedShareDecreasing { m } => (*m as usize).saturating_sub(1),
            _ => self.source.segments.len() - 1,
        }
    }
}

/// Trial-averaged regret against the hindsight path on a logarithmic grid
/// of horizons, with a least-squares slope in ln N over the final decade.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegretCurve {
    pub horizons: Vec<u64>,
    pub mean_regret: Vec<f64>,
    pub std_error: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
    pub constant_regret: bool,
}

/// Evaluation horizons: twelve points per decade from 100 (or the horizon,
/// if smaller) up to and including the horizon.
pub fn log_grid(horizon: u64) -> Vec<u64> {
    let start = horizon.min(100).max(1);
    let mut grid = Vec::new();
    let log_start = (start as f64).log10();
    let mut i = 0;
    loop {
        let value = 10f64.powf(log_start + i as f64 / 12.0).round() as u64;
        if value >= horizon {
            break;
        }
        if grid.last() != Some(&value) {
            grid.push(value);
        }
        i += 1;
    }
    if grid.last() != Some(&horizon) {
        grid.push(horizon);
    }
    grid
}

pub fn run_regret_experiment(exp: &RegretExperiment) -> Result<RegretCurve> {
    exp.validate()?;
    let strategy = SwitchingStrategy::parse(&exp.strategy, exp.experts.len())?;
    let max_switches = exp.comparator_switches(&strategy);
    let grid = log_grid(exp.horizon);
    let n_grid = grid.len();
    let mut per_trial = vec![0.0f64; exp.n_trials as usize * n_grid];
    for trial in 0..exp.n_trials {
        let mut rng = ChaCha12Rng::seed_from_u64(exp.seed);
        rng.set_stream(trial);
        let data = exp.source.sample(exp.horizon, &mut rng);
        let observations: Vec<Observation> =
            data.iter().map(|&s| Observation::Symbol(s)).collect();
        let mut experts: Vec<ExpFamExpert> =
            exp.experts.iter().map(|s| s.build()).collect::<Result<_>>()?;
        let mut forward = ForwardState::new(&strategy);
        let mut row = vec![0.0; experts.len()];
        let mut next_grid = 0;
        for (t, &x) in observations.iter().enumerate() {
            for (slot, expert) in row.iter_mut().zip(&experts) {
                *slot = -expert.predictive_log_prob(x)?;
            }
            forward.step(&row)?;
            for expert in &mut experts {
                expert.observe(x)?;
            }
            while next_grid < n_grid && grid[next_grid] == (t + 1) as u64 {
                let prefix = &observations[..=t];
                let (hindsight, _) = hindsight_best_codelength(prefix, &experts, max_switches)?;
                per_trial[trial as usize * n_grid + next_grid] = forward.total_nats() - hindsight;
                next_grid += 1;
            }
        }
    }
    let n_trials = exp.n_trials as usize;
    let mut mean_regret = Vec::with_capacity(n_grid);
    let mut std_error = Vec::with_capacity(n_grid);
    for g in 0..n_grid {
        let mut sum = 0.0;
        for trial in 0..n_trials {
            sum += per_trial[trial * n_grid + g];
        }
        let mean = sum / n_trials as f64;
        mean_regret.push(mean);
        let sem = if n_trials > 1 {
            let ss: f64 =
                (0..n_trials).map(|t| (per_trial[t * n_grid + g] - mean).powi(2)).sum();
            (ss / (n_trials - 1) as f64).sqrt() / (n_trials as f64).sqrt()
        } else {
            0.0
        };
        std_error.push(sem);
    }
    let decade_floor = exp.horizon as f64 / 10.0;
    let fit_points: Vec<(f64, f64)> = grid
        .iter()
        .zip(&mean_regret)
        .filter(|(&h, _)| h as f64 >= decade_floor)
        .map(|(&h, &r)| ((h as f64).ln(), r))
        .collect();
    let (slope, intercept, slope_std_error) = least_squares_line(&fit_points);
    Ok(RegretCurve {
        horizons: grid,
        mean_regret,
        std_error,
        slope,
        intercept,
        slope_std_error,
        constant_regret: exp.source.is_deterministic(),
    })
}

/// Ordinary least squares y = a x + b; returns (a, b, standard error of a).
fn least_squares_line(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len();
    if n < 2 {
        let b = points.first().map(|&(_, y)| y).unwrap_or(0.0);
        return (0.0, b, 0.0);
    }
    let nf = n as f64;
    let mean_x = points.iter().map(|&(x, _)| x).sum::<f64>() / nf;
    let mean_y = points.iter().map(|&(_, y)| y).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|&(x, _)| (x - mean_x).powi(2)).sum();
    let sxy: f64 = points.iter().map(|&(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let se = if n > 2 {
        let ssr: f64 = points
            .iter()
            .map(|&(x, y)| (y - slope * x - intercept).powi(2))
            .sum();
        (ssr / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, intercept, se)
}

/// Prequential plug-in codelength of a symbol sequence under one expert.
pub fn prequential_codelength(expert: &mut ExpFamExpert, data: &[Observation]) -> Result<f64> {
    let mut total = 0.0;
    for &x in data {
        total -= expert.predictive_log_prob(x)?;
        expert.observe(x)?;
    }
    Ok(total)
}
