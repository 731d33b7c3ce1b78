//! Cross-dataset aggregation: average ranks of representations over
//! datasets (ties get mid-ranks) and the Nemenyi critical-difference test
//! on those average ranks.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Whether smaller scores are better (codelengths) or larger ones
/// (accuracies).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Lower,
    Higher,
}

/// A datasets-by-representations score matrix.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    scores: Vec<f64>,
    n_datasets: usize,
    n_representations: usize,
    pub orientation: Orientation,
    pub dataset_names: Vec<String>,
    pub representation_names: Vec<String>,
}

impl ScoreTable {
    pub fn new(
        scores: Vec<f64>,
        orientation: Orientation,
        dataset_names: Vec<String>,
        representation_names: Vec<String>,
    ) -> Result<Self> {
        let d = dataset_names.len();
        let r = representation_names.len();
        if d < 1 {
            return Err(Error::InvalidArgument("score table needs >= 1 dataset".into()));
        }
        if r < 2 {
            return Err(Error::InvalidArgument("score table needs >= 2 representations".into()));
        }
        if scores.len() != d * r {
            return Err(Error::DimensionMismatch(format!(
                "{} scores do not fill {d} x {r}",
                scores.len()
            )));
        }
        for (i, &s) in scores.iter().enumerate() {
            if s.is_nan() {
                return Err(Error::NonFinite(format!(
                    "score at dataset {} representation {}",
                    i / r,
                    i % r
                )));
            }
        }
        Ok(Self {
            scores,
            n_datasets: d,
            n_representations: r,
            orientation,
            dataset_names,
            representation_names,
        })
    }

    pub fn n_datasets(&self) -> usize {
        self.n_datasets
    }

    pub fn n_representations(&self) -> usize {
        self.n_representations
    }

    pub fn row(&self, dataset: usize) -> &[f64] {
        &self.scores[dataset * self.n_representations..(dataset + 1) * self.n_representations]
    }
}

/// Mid-ranks of one score row: rank 1 is best under the orientation, tied
/// values share the average of the positions they span.
fn mid_ranks(row: &[f64], orientation: Orientation) -> Vec<f64> {
    let r = row.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| {
        let cmp = row[a].partial_cmp(&row[b]).expect("scores are not NaN");
        match orientation {
            Orientation::Lower => cmp,
            Orientation::Higher => cmp.reverse(),
        }
    });
    let mut ranks = vec![0.0; r];
    let mut start = 0;
    while start < r {
        let mut end = start + 1;
        while end < r && row[order[end]] == row[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end share their average rank
        let shared = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = shared;
        }
        start = end;
    }
    ranks
}

/// Column means of the per-dataset mid-ranks.
pub fn average_rank(table: &ScoreTable) -> Vec<f64> {
    let r = table.n_representations;
    let mut avg = vec![0.0; r];
    for d in 0..table.n_datasets {
        for (a, rank) in avg.iter_mut().zip(mid_ranks(table.row(d), table.orientation)) {
            *a += rank;
        }
    }
    for a in &mut avg {
        *a /= table.n_datasets as f64;
    }
    avg
}

/// `q * sqrt(r (r + 1) / (6 n))` for `r` methods compared over `n`
/// datasets.
pub fn nemenyi_critical_difference(r: usize, n: usize, q_value: f64) -> Result<f64> {
    if r < 2 {
        return Err(Error::InvalidArgument("critical difference needs >= 2 methods".into()));
    }
    if n < 1 {
        return Err(Error::InvalidArgument("critical difference needs >= 1 dataset".into()));
    }
    if !(q_value > 0.0 && q_value.is_finite()) {
        return Err(Error::InvalidArgument(format!("q value {q_value} must be > 0")));
    }
    Ok(q_value * ((r * (r + 1)) as f64 / (6 * n) as f64).sqrt())
}

/// Default studentized-range constant: the two-tailed value at confidence
/// 0.10 used throughout the rank comparisons here.
pub const DEFAULT_Q_VALUE: f64 = 3.12;
pub const DEFAULT_CONFIDENCE: f64 = 0.10;

/// Average ranks with their critical difference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankSummary {
    pub average_ranks: Vec<f64>,
    pub critical_difference: f64,
    pub confidence: f64,
    pub q_value: f64,
}

impl RankSummary {
    /// Representation indices sorted best (lowest average rank) first; ties
    /// keep the lower index first.
    pub fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.average_ranks.len()).collect();
        idx.sort_by(|&a, &b| {
            self.average_ranks[a]
                .partial_cmp(&self.average_ranks[b])
                .expect("ranks are finite")
                .then(a.cmp(&b))
        });
        idx
    }
}

pub fn summarize_ranks(table: &ScoreTable, q_value: f64, confidence: f64) -> Result<RankSummary> {
    let average_ranks = average_rank(table);
    let critical_difference =
        nemenyi_critical_difference(table.n_representations, table.n_datasets, q_value)?;
    Ok(RankSummary { average_ranks, critical_difference, confidence, q_value })
}

/// Pairwise test: entry (i, j) is true iff the average ranks of i and j
/// differ by at least the critical difference. Symmetric, false diagonal.
pub fn significance_matrix(summary: &RankSummary) -> Vec<Vec<bool>> {
    let r = summary.average_ranks.len();
    let mut out = vec![vec![false; r]; r];
    for i in 0..r {
        for j in 0..r {
            if i != j {
                let diff = (summary.average_ranks[i] - summary.average_ranks[j]).abs();
                out[i][j] = diff >= summary.critical_difference;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn table(scores: Vec<f64>, d: usize, r: usize, orientation: Orientation) -> ScoreTable {
        let datasets = (0..d).map(|i| format!("d{i}")).collect();
        let reps = (0..r).map(|i| format!("r{i}")).collect();
        ScoreTable::new(scores, orientation, datasets, reps).unwrap()
    }

    #[test]
    fn two_scores_rank_one_and_two() {
        let t = table(vec![1.0, 2.0], 1, 2, Orientation::Lower);
        assert_eq!(average_rank(&t), vec![1.0, 2.0]);
        let t = table(vec![1.0, 2.0], 1, 2, Orientation::Higher);
        assert_eq!(average_rank(&t), vec![2.0, 1.0]);
    }

    #[test]
    fn full_ties_give_the_midpoint_rank_everywhere() {
        let t = table(vec![0.5; 12], 3, 4, Orientation::Lower);
        for rank in average_rank(&t) {
            assert_eq!(rank, 2.5);
        }
    }

    #[test]
    fn partial_tie_shares_the_average_position() {
        let t = table(vec![1.0, 2.0, 1.0], 1, 3, Orientation::Lower);
        assert_eq!(average_rank(&t), vec![1.5, 3.0, 1.5]);
    }

    #[test]
    fn rank_sums_per_dataset_are_conserved_under_ties() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..50 {
            let r = rng.gen_range(2..7);
            let row: Vec<f64> = (0..r).map(|_| f64::from(rng.gen_range(0..4))).collect();
            let ranks = mid_ranks(&row, Orientation::Lower);
            let sum: f64 = ranks.iter().sum();
            assert!((sum - (r * (r + 1)) as f64 / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ranks_are_invariant_under_monotone_transforms() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let scores: Vec<f64> = (0..20).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let t = table(scores.clone(), 4, 5, Orientation::Lower);
        let transformed = table(scores.iter().map(|&s| s.exp()).collect(), 4, 5, Orientation::Lower);
        assert_eq!(average_rank(&t), average_rank(&transformed));
    }

    #[test]
    fn critical_difference_matches_frozen_values() {
        // checked against 50-digit mpmath
        let cases = [
            (6, 19, 1.8937681734406780618),
            (12, 19, 3.6497613476413553176),
            (2, 6, 1.2737346662472526111),
        ];
        for (r, n, expected) in cases {
            let got = nemenyi_critical_difference(r, n, 3.12).unwrap();
            assert!((got - expected).abs() < 1e-12, "r={r} n={n} got {got}");
        }
    }

    #[test]
    fn significance_respects_the_critical_difference() {
        let summary = RankSummary {
            average_ranks: vec![1.89, 2.53, 4.42],
            critical_difference: 1.8937681734406781,
            confidence: 0.10,
            q_value: 3.12,
        };
        let sig = significance_matrix(&summary);
        assert!(!sig[0][1], "0.64 gap is below the critical difference");
        assert!(sig[0][2], "2.53 gap is above the critical difference");
        for i in 0..3 {
            assert!(!sig[i][i]);
            for j in 0..3 {
                assert_eq!(sig[i][j], sig[j][i]);
            }
        }
    }

    #[test]
    fn identical_ranks_are_never_significant() {
        let summary = RankSummary {
            average_ranks: vec![2.0, 2.0, 2.0],
            critical_difference: 0.5,
            confidence: 0.10,
            q_value: 3.12,
        };
        let sig = significance_matrix(&summary);
        assert!(sig.iter().flatten().all(|&b| !b));
    }

    #[test]
    fn summary_order_sorts_by_average_rank() {
        let t = table(vec![0.3, 0.1, 0.2, 0.6, 0.4, 0.5], 2, 3, Orientation::Lower);
        let summary = summarize_ranks(&t, DEFAULT_Q_VALUE, DEFAULT_CONFIDENCE).unwrap();
        assert_eq!(summary.average_ranks, vec![3.0, 1.0, 2.0]);
        assert_eq!(summary.order(), vec![1, 2, 0]);
    }

    #[test]
    fn malformed_tables_are_rejected() {
        assert!(ScoreTable::new(
            vec![1.0, f64::NAN],
            Orientation::Lower,
            vec!["d".into()],
            vec!["a".into(), "b".into()],
        )
        .is_err());
        assert!(ScoreTable::new(
            vec![1.0],
            Orientation::Lower,
            vec!["d".into()],
            vec!["a".into()],
        )
        .is_err());
        assert!(ScoreTable::new(
            vec![1.0, 2.0, 3.0],
            Orientation::Lower,
            vec!["d".into()],
            vec!["a".into(), "b".into()],
        )
        .is_err());
        assert!(nemenyi_critical_difference(1, 19, 3.12).is_err());
        assert!(nemenyi_critical_difference(6, 0, 3.12).is_err());
        assert!(nemenyi_critical_difference(6, 19, 0.0).is_err());
    }
}
