//! Error metrics and paired comparisons across seeds.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::{Error, Result};

/// Mean absolute error over `(prediction, target)` pairs.
pub fn mae(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("mae of an empty list".into()));
    }
    Ok(pairs.iter().map(|(p, y)| (p - y).abs()).sum::<f64>() / pairs.len() as f64)
}

/// One-sided exact sign test that `wins` out of `n` untied pairs is more
/// than chance: `P(X ≥ wins)` for `X ~ Binomial(n, 1/2)`.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    assert!(wins <= n, "wins {wins} exceeds pairs {n}");
    if wins == 0 || n == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, n as u64).expect("valid binomial parameters");
    b.sf(wins as u64 - 1)
}

/// Per-seed paired errors of a candidate against a baseline (lower is better).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub candidate: String,
    pub baseline: String,
    pub seeds: Vec<u64>,
    pub candidate_mae: Vec<f64>,
    pub baseline_mae: Vec<f64>,
    /// Seeds where the candidate is strictly better.
    pub wins: usize,
    pub ties: usize,
    /// One-sided sign-test p-value that the candidate is better; ties dropped.
    pub p_value: f64,
    pub candidate_mean: f64,
    pub baseline_mean: f64,
    /// `(baseline_mean − candidate_mean) / baseline_mean`.
    pub relative_improvement: f64,
}

impl PairedComparison {
    pub fn new(
        candidate: &str,
        baseline: &str,
        seeds: &[u64],
        candidate_mae: &[f64],
        baseline_mae: &[f64],
    ) -> Result<Self> {
        if candidate_mae.len() != seeds.len() || baseline_mae.len() != seeds.len() || seeds.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "paired comparison needs one value per seed: {} seeds, {} and {} values",
                seeds.len(),
                candidate_mae.len(),
                baseline_mae.len()
            )));
        }
        let wins = candidate_mae.iter().zip(baseline_mae).filter(|(c, b)| c < b).count();
        let ties = candidate_mae.iter().zip(baseline_mae).filter(|(c, b)| c == b).count();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (cm, bm) = (mean(candidate_mae), mean(baseline_mae));
        Ok(PairedComparison {
            candidate: candidate.to_string(),
            baseline: baseline.to_string(),
            seeds: seeds.to_vec(),
            candidate_mae: candidate_mae.to_vec(),
            baseline_mae: baseline_mae.to_vec(),
            wins,
            ties,
            p_value: sign_test_p(wins, seeds.len() - ties),
            candidate_mean: cm,
            baseline_mean: bm,
            relative_improvement: (bm - cm) / bm,
        })
    }
}
