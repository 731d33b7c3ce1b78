//! Shared domain types: feature sequences, loss matrices, and normalized
//! log-probability vectors.

use crate::error::{Error, Result};
use crate::math::log_sum_exp;

/// An ordered dataset of feature vectors with class labels.
///
/// Features are stored flat and row-major (`n * dim` entries); the
/// presentation order is part of the data, since prequential codelengths
/// depend on it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    features: Vec<f32>,
    labels: Vec<u32>,
    dim: usize,
    n_classes: u32,
    pub name: String,
}

impl FeatureSequence {
    /// Builds a sequence from flat row-major features and labels. Only the
    /// structural layout is checked here; value-level problems (NaN features,
    /// out-of-range labels) are reported by [`FeatureSequence::validate`].
    pub fn new(
        features: Vec<f32>,
        labels: Vec<u32>,
        dim: usize,
        n_classes: u32,
        name: impl Into<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be >= 1".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} feature values do not form {} rows of dimension {}",
                features.len(),
                labels.len(),
                dim
            )));
        }
        Ok(Self { features, labels, dim, n_classes, name: name.into() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> u32 {
        self.n_classes
    }

    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn features_flat(&self) -> &[f32] {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Returns the complete list of invariant violations: empty sequence,
    /// out-of-range labels, non-finite features. An empty list means the
    /// sequence is well formed.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        if self.labels.is_empty() {
            violations.push("sequence is empty (N must be >= 1)".to_string());
        }
        if self.n_classes == 0 {
            violations.push("n_classes must be >= 1".to_string());
        }
        for (i, &label) in self.labels.iter().enumerate() {
            if label >= self.n_classes {
                violations.push(format!(
                    "label {} at position {} is outside [0, {})",
                    label, i, self.n_classes
                ));
            }
        }
        for (idx, &v) in self.features.iter().enumerate() {
            if !v.is_finite() {
                violations.push(format!(
                    "non-finite feature at position ({}, {})",
                    idx / self.dim,
                    idx % self.dim
                ));
            }
        }
        violations
    }
}

/// Returns the complete list of invariant violations for a sequence.
pub fn validate_feature_sequence(seq: &FeatureSequence) -> Vec<String> {
    seq.validate()
}

/// An `N x K` matrix of next-step log-losses in nats, step-major: row `t`
/// holds the loss `-log p_k(y_t | x_t)` of every expert `k` before training
/// on example `t`. This is the interface between the training stage and the
/// switching stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMatrix {
    losses: Vec<f64>,
    n_steps: usize,
    n_experts: usize,
    expert_names: Vec<String>,
}

impl LossMatrix {
    /// Builds a matrix from flat step-major losses. Every entry must be
    /// finite and non-negative (a negative log-probability of a categorical
    /// prediction).
    pub fn new(losses: Vec<f64>, n_experts: usize, expert_names: Vec<String>) -> Result<Self> {
        if n_experts == 0 {
            return Err(Error::InvalidArgument("loss matrix needs K >= 1 experts".into()));
        }
        if losses.is_empty() || losses.len() % n_experts != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} losses do not form rows of {} experts",
                losses.len(),
                n_experts
            )));
        }
        if expert_names.len() != n_experts {
            return Err(Error::DimensionMismatch(format!(
                "{} expert names for {} experts",
                expert_names.len(),
                n_experts
            )));
        }
        for (idx, &loss) in losses.iter().enumerate() {
            if !loss.is_finite() || loss < 0.0 {
                return Err(Error::NonFinite(format!(
                    "loss {} at step {} expert {}",
                    loss,
                    idx / n_experts + 1,
                    idx % n_experts
                )));
            }
        }
        let n_steps = losses.len() / n_experts;
        Ok(Self { losses, n_steps, n_experts, expert_names })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_experts(&self) -> usize {
        self.n_experts
    }

    /// Loss row for 0-based step index `t`.
    pub fn row(&self, t: usize) -> &[f64] {
        &self.losses[t * self.n_experts..(t + 1) * self.n_experts]
    }

    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.losses[t * self.n_experts + k]
    }

    pub fn expert_names(&self) -> &[String] {
        &self.expert_names
    }

    pub fn losses_flat(&self) -> &[f64] {
        &self.losses
    }

    /// Total loss of a single expert, summed left to right over steps.
    pub fn expert_total(&self, k: usize) -> f64 {
        let mut sum = 0.0;
        for t in 0..self.n_steps {
            sum += self.get(t, k);
        }
        sum
    }
}

/// A vector of log-probabilities normalized so that its log-sum-exp is zero
/// (within 1e-9). Used for initial priors and mixture weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbVector(Vec<f64>);

impl LogProbVector {
    /// Accepts values whose log-sum-exp is already zero within 1e-9.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let lse = log_sum_exp(&values)?;
        if lse.abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "log-probability vector is not normalized (log-sum-exp = {lse})"
            )));
        }
        Ok(Self(values))
    }

    /// Builds a normalized vector from linear-space weights (non-negative,
    /// summing to 1 within 1e-9).
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyVector);
        }
        let mut sum = 0.0;
        for &w in weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidArgument(format!("invalid weight {w}")));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self(weights.iter().map(|&w| w.ln()).collect()))
    }

    pub fn uniform(k: usize) -> Self {
        let v = -( k as f64).ln();
        Self(vec![v; k.max(1)])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_sequence() -> FeatureSequence {
        FeatureSequence::new(
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            vec![0, 1, 2],
            2,
            3,
            "toy",
        )
        .unwrap()
    }

    #[test]
    fn well_formed_sequence_has_no_violations() {
        assert!(toy_sequence().validate().is_empty());
    }

    #[test]
    fn label_one_past_range_is_reported_with_its_index() {
        let seq =
            FeatureSequence::new(vec![0.0, 1.0, 2.0, 3.0], vec![0, 3], 2, 3, "bad").unwrap();
        let violations = seq.validate();
        assert_eq!(violations.len(), 1);
        assert!(violations[0].contains("label 3"));
        assert!(violations[0].contains("position 1"));
    }

    #[test]
    fn nan_feature_is_reported_with_coordinates() {
        let mut features = vec![0.0f32; 18];
        features[2 * 6 + 5] = f32::NAN;
        let seq = FeatureSequence::new(features, vec![0, 0, 0], 6, 2, "nan").unwrap();
        let violations = seq.validate();
        assert_eq!(violations.len(), 1);
        assert!(violations[0].contains("(2, 5)"), "{}", violations[0]);
    }

    #[test]
    fn structural_mismatch_is_a_construction_error() {
        assert!(FeatureSequence::new(vec![0.0; 5], vec![0, 1], 2, 2, "x").is_err());
    }

    #[test]
    fn loss_matrix_rejects_negative_and_non_finite_entries() {
        let names = vec!["a".to_string()];
        assert!(LossMatrix::new(vec![0.5, -0.1], 1, names.clone()).is_err());
        assert!(LossMatrix::new(vec![0.5, f64::NAN], 1, names.clone()).is_err());
        assert!(LossMatrix::new(vec![0.5, f64::INFINITY], 1, names).is_err());
    }

    #[test]
    fn loss_matrix_row_access_is_step_major() {
        let m = LossMatrix::new(
            vec![1.0, 2.0, 3.0, 4.0],
            2,
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        assert_eq!(m.n_steps(), 2);
        assert_eq!(m.row(0), &[1.0, 2.0]);
        assert_eq!(m.row(1), &[3.0, 4.0]);
        assert_eq!(m.expert_total(1), 6.0);
    }

    #[test]
    fn nan_loss_error_names_step_and_expert() {
        let err = LossMatrix::new(
            vec![0.1, 0.2, f64::NAN, 0.3],
            2,
            vec!["a".into(), "b".into()],
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("step 2") && msg.contains("expert 0"), "{msg}");
    }

    #[test]
    fn uniform_log_prob_vector_is_normalized() {
        let v = LogProbVector::uniform(4);
        assert!(log_sum_exp(v.values()).unwrap().abs() < 1e-12);
        assert!((v.values()[0] - (0.25f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn unnormalized_vector_is_rejected() {
        assert!(LogProbVector::normalized(vec![0.0, 0.0]).is_err());
        assert!(LogProbVector::from_weights(&[0.3, 0.3]).is_err());
        assert!(LogProbVector::from_weights(&[0.5, 0.5]).is_ok());
    }
}
