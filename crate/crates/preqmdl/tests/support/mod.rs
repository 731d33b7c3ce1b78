//! Shared fixtures and independent oracles for the integration tests.

#![allow(dead_code)]

use preqmdl::switching::{StrategyKind, SwitchingStrategy};
use preqmdl::types::{FeatureSequence, LossMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Hand-rolled two-pass max-subtract log-sum-exp, kept separate from the
/// library's so the enumeration route stays independent.
pub fn lse2(values: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        if v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for &v in values {
        sum += (v - max).exp();
    }
    max + sum.ln()
}

/// Codelength by exhaustive enumeration over every expert path (state path
/// for the augmented stable/unstable chain), with the transition
/// probabilities recomputed here from their closed forms.
pub fn enumerated_codelength(losses: &LossMatrix, strategy: &SwitchingStrategy) -> f64 {
    let n = losses.n_steps();
    let k = losses.n_experts();
    let w: Vec<f64> = strategy.switch_target_weights().to_vec();
    let plain_init = strategy.initial_log_prior().values().to_vec();
    type Step = Box<dyn Fn(u64, usize, usize) -> f64>;
    let (n_states, init_log, step_log): (usize, Vec<f64>, Step) = match *strategy.kind() {
        StrategyKind::FixedShareDecreasing { m } => {
            let w = w.clone();
            (
                k,
                plain_init,
                Box::new(move |t, from, to| {
                    let alpha = ((m as f64 - 1.0) / t as f64).min(1.0);
                    let p = if from == to { 1.0 - alpha + alpha * w[to] } else { alpha * w[to] };
                    p.ln()
                }),
            )
        }
        StrategyKind::FixedShareConstant { alpha } => {
            let w = w.clone();
            (
                k,
                plain_init,
                Box::new(move |_t, from, to| {
                    let p = if from == to { 1.0 - alpha + alpha * w[to] } else { alpha * w[to] };
                    p.ln()
                }),
            )
        }
        StrategyKind::BayesianMixture => (
            k,
            plain_init,
            Box::new(|_t, from, to| if from == to { 0.0 } else { f64::NEG_INFINITY }),
        ),
        StrategyKind::ElementwiseMixture => {
            let w = w.clone();
            (k, plain_init, Box::new(move |_t, _from, to| w[to].ln()))
        }
        StrategyKind::SwitchDistribution { kappa } => {
            let init: Vec<f64> = (0..2 * k).map(|s| (0.5 * w[s % k]).ln()).collect();
            let w = w.clone();
            (
                2 * k,
                init,
                Box::new(move |t, from, to| {
                    if from >= k {
                        return if to == from { 0.0 } else { f64::NEG_INFINITY };
                    }
                    let tau = kappa / t as f64;
                    let fresh = tau * 0.5 * w[to % k];
                    let p = if to == from { 1.0 - tau + fresh } else { fresh };
                    p.ln()
                }),
            )
        }
    };

    let mut terms: Vec<f64> = Vec::new();
    let mut path = vec![0usize; n];
    loop {
        let mut logw = init_log[path[0]];
        for t in 1..n {
            if logw == f64::NEG_INFINITY {
                break;
            }
            logw += step_log((t + 1) as u64, path[t - 1], path[t]);
        }
        if logw > f64::NEG_INFINITY {
            for (t, &state) in path.iter().enumerate() {
                logw -= losses.get(t, state % k);
            }
            terms.push(logw);
        }
        let mut pos = 0;
        loop {
            path[pos] += 1;
            if path[pos] < n_states {
                break;
            }
            path[pos] = 0;
            pos += 1;
            if pos == n {
                return -lse2(&terms);
            }
        }
    }
}

/// Random loss matrix with entries uniform in [0, 3).
pub fn random_loss_matrix(rng: &mut ChaCha12Rng, n: usize, k: usize) -> LossMatrix {
    let losses: Vec<f64> = (0..n * k).map(|_| rng.gen::<f64>() * 3.0).collect();
    let names = (0..k).map(|i| format!("e{i}")).collect();
    LossMatrix::new(losses, k, names).unwrap()
}

/// Synthetic classification stream: class means drawn once from a standard
/// normal, rows are the label's mean plus `noise`-scaled normal jitter,
/// labels drawn uniformly per step.
pub fn gaussian_mixture_sequence(
    n: usize,
    dim: usize,
    n_classes: u32,
    noise: f64,
    seed: u64,
    name: &str,
) -> FeatureSequence {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let c = n_classes as usize;
    let means: Vec<f64> = (0..c * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.gen_range(0..n_classes);
        labels.push(y);
        let mean = &means[y as usize * dim..(y as usize + 1) * dim];
        for &mu in mean {
            let jitter: f64 = rng.sample(StandardNormal);
            features.push((mu + noise * jitter) as f32);
        }
    }
    FeatureSequence::new(features, labels, dim, n_classes, name).unwrap()
}

/// Two-regime loss matrix: expert 0 is good for the first half and bad
/// after, expert 1 mirrored.
pub fn two_regime_matrix(n: usize, good: f64, bad: f64) -> LossMatrix {
    let mut losses = Vec::with_capacity(2 * n);
    for t in 0..n {
        if t < n / 2 {
            losses.push(good);
            losses.push(bad);
        } else {
            losses.push(bad);
            losses.push(good);
        }
    }
    LossMatrix::new(losses, 2, vec!["first-half".into(), "second-half".into()]).unwrap()
}
