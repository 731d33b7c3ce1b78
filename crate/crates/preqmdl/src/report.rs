//! Structured run reports: codelength sections per switching strategy,
//! posterior digests, regret curves, and rank summaries, serialized as JSON
//! with optional delimited exports for plotting.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::expfam::RegretCurve;
use crate::ranking::{significance_matrix, RankSummary, ScoreTable};
use crate::switching::{CodelengthResult, PosteriorTrace};

/// Posterior-trace digest: per-expert time-averaged posterior mass and the
/// expert that most often holds the largest posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub time_averaged: Vec<f64>,
    pub most_frequent_argmax: usize,
    pub most_frequent_argmax_name: String,
}

/// Codelength of one switching strategy on one loss matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySection {
    pub strategy: String,
    pub total_nats: f64,
    pub per_example_nats: f64,
    pub posterior: PosteriorSummary,
}

impl StrategySection {
    pub fn from_result(result: &CodelengthResult, expert_names: &[String]) -> Self {
        let argmax = result.trace.most_frequent_argmax();
        let name = expert_names
            .get(argmax)
            .cloned()
            .unwrap_or_else(|| format!("expert-{argmax}"));
        Self {
            strategy: result.strategy.clone(),
            total_nats: result.total_nats,
            per_example_nats: result.total_nats / result.trace.n_steps() as f64,
            posterior: PosteriorSummary {
                time_averaged: result.trace.time_averaged(),
                most_frequent_argmax: argmax,
                most_frequent_argmax_name: name,
            },
        }
    }
}

/// Top-level run report. Stage-2 runs fill `strategies` (one section per
/// strategy when sweeping); synthetic regret runs fill `regret_curves`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub n_examples: u64,
    pub expert_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strategies: Vec<StrategySection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub regret_curves: Vec<RegretCurve>,
    /// Echo of the resolved configuration the run used.
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diverged_experts: Vec<usize>,
}

impl Report {
    /// Returns the list of internal inconsistencies; an empty list means the
    /// report is well formed. The only nontrivial check is that each
    /// section's per-example value matches total / N to 1e-12.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        if self.n_examples == 0 {
            violations.push("report covers zero examples".to_string());
        }
        for section in &self.strategies {
            let expected = section.total_nats / self.n_examples as f64;
            if (section.per_example_nats - expected).abs() > 1e-12 {
                violations.push(format!(
                    "strategy {}: per-example nats {} != total/N {}",
                    section.strategy, section.per_example_nats, expected
                ));
            }
            if section.posterior.time_averaged.len() != self.expert_names.len() {
                violations.push(format!(
                    "strategy {}: posterior summary covers {} experts, run has {}",
                    section.strategy,
                    section.posterior.time_averaged.len(),
                    self.expert_names.len()
                ));
            }
        }
        violations
    }
}

/// Average ranks with the Nemenyi critical difference and pairwise
/// significance decisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub representation_names: Vec<String>,
    pub dataset_names: Vec<String>,
    pub average_ranks: Vec<f64>,
    /// Representation indices from best (lowest) average rank to worst.
    pub order: Vec<usize>,
    pub critical_difference: f64,
    pub q_value: f64,
    pub confidence: f64,
    pub significant: Vec<Vec<bool>>,
}

impl RankReport {
    pub fn new(table: &ScoreTable, summary: &RankSummary) -> Self {
        Self {
            representation_names: table.representation_names.clone(),
            dataset_names: table.dataset_names.clone(),
            average_ranks: summary.average_ranks.clone(),
            order: summary.order(),
            critical_difference: summary.critical_difference,
            q_value: summary.q_value,
            confidence: summary.confidence,
            significant: significance_matrix(summary),
        }
    }
}

/// Serializes a value as pretty JSON to a file.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(fs::write(path, text)?)
}

/// Writes the full posterior trace as tab-separated text: one row per step
/// with the marginal loss and the posterior over experts.
pub fn write_posterior_trace(
    path: &Path,
    trace: &PosteriorTrace,
    expert_names: &[String],
) -> Result<()> {
    let mut out = String::from("step\tmarginal_nats");
    for name in expert_names {
        out.push('\t');
        out.push_str(name);
    }
    out.push('\n');
    for t in 0..trace.n_steps() {
        out.push_str(&format!("{}\t{}", t + 1, trace.per_step_marginal_loss()[t]));
        for &p in trace.row(t) {
            out.push_str(&format!("\t{p}"));
        }
        out.push('\n');
    }
    Ok(fs::write(path, out)?)
}

/// Writes a regret curve as tab-separated text: horizon, mean regret, and
/// standard error per grid point.
pub fn write_regret_curve(path: &Path, curve: &RegretCurve) -> Result<()> {
    let mut out = String::from("horizon\tmean_regret\tstd_error\n");
    for i in 0..curve.horizons.len() {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            curve.horizons[i], curve.mean_regret[i], curve.std_error[i]
        ));
    }
    Ok(fs::write(path, out)?)
}
