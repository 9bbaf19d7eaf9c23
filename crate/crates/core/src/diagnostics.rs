//! Stationarity check through backward/forward exchangeability.
//!
//! Under a stationary onset process the backward time of a case is uniform on
//! its total duration, so `(bwd, fwd)` is exchangeable within each complete
//! pair. The test statistic is the absolute paired t-statistic of `bwd - fwd`;
//! its null distribution comes from flipping the sign of each difference
//! independently with probability 1/2.
//!
//! Only uncensored records enter. Residual censoring removes long forward
//! times preferentially, so with heavy censoring the complete pairs are no
//! longer exchangeable and the test over-rejects; it is calibrated for data
//! without (or with negligible) censoring.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PrevalentRecord;
use crate::rng::stream_rng;

pub const MIN_EVENTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_pairs: usize,
    pub n_permutations: usize,
    pub seed: u64,
}

/// `|mean(d)| / (sd(d) / sqrt(n))` from the sum and sum of squares of `d`;
/// 0 when every difference is zero.
fn t_statistic(sum: f64, sumsq: f64, n: usize) -> f64 {
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sumsq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    if var == 0.0 {
        return if mean == 0.0 { 0.0 } else { f64::INFINITY };
    }
    mean.abs() / (var / nf).sqrt()
}

/// Sign-flip permutation test on the uncensored records.
pub fn exchangeability_test(records: &[PrevalentRecord], n_permutations: usize, seed: u64) -> Result<DiagnosticResult> {
    let mut diffs: Vec<f64> = records.iter().filter(|r| r.event).map(|r| r.bwd - r.fwd_obs).collect();
    // canonical order: flips then do not depend on how records are labeled
    diffs.sort_by(f64::total_cmp);
    let n = diffs.len();
    if n < MIN_EVENTS {
        return Err(Error::TooFewEvents { found: n, required: MIN_EVENTS });
    }
    if n_permutations == 0 {
        return Err(Error::Invalid("need at least one permutation".into()));
    }
    // squares are sign-invariant, so only the sum changes under flips
    let sumsq: f64 = diffs.iter().map(|d| d * d).sum();
    let observed = t_statistic(diffs.iter().sum(), sumsq, n);

    let exceed = (0..n_permutations)
        .into_par_iter()
        .filter(|&k| {
            let mut rng = stream_rng(seed, k as u64);
            let mut sum = 0.0;
            let mut bits = 0u64;
            for (i, d) in diffs.iter().enumerate() {
                if i % 64 == 0 {
                    bits = rng.random();
                }
                sum += if bits & 1 == 1 { -d } else { *d };
                bits >>= 1;
            }
            t_statistic(sum, sumsq, n) >= observed
        })
        .count();

    Ok(DiagnosticResult {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (1 + n_permutations) as f64,
        n_pairs: n,
        n_permutations,
        seed,
    })
}
