//! Percentile-bootstrap confidence intervals for `lambda` and `lambda_z`.
//!
//! A replicate resamples the screened cohort: the number of cases is drawn as
//! `Binomial(s, n/s)` and the cases themselves with replacement from the
//! observed records. Replicate `i` uses stream `i` of the master seed, and
//! replicates are assembled in index order, so results do not depend on the
//! number of worker threads.
//!
//! Replicates with no cases, or with every case censored, are degenerate; more
//! than [`MAX_DEGENERATE_FRACTION`] of them refuses the interval. Replicates
//! whose strict fit has an undefined tail are refitted with the
//! tail-at-max-censored policy and kept; they are counted separately.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::incidence::category_indices;
use crate::model::{AgeDistribution, PrevalentRecord, ScreeningFrame};
use crate::npmle::{npmle_lb_em, EmOptions, NpmleFit, TailPolicy};
use crate::rng::stream_rng;
use crate::stats::percentile_interval;
use crate::incidence::denom_integral;

/// Fraction of degenerate replicates above which the interval is refused.
pub const MAX_DEGENERATE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// `"overall"` or the category name.
    pub label: String,
    /// Replicate estimates in replicate order, per person-year.
    pub estimates: Vec<f64>,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
    pub b: usize,
    pub seed: u64,
    /// Replicates without usable data: no cases, or no uncensored case.
    pub degenerate_count: usize,
    /// Replicates whose strict fit had an undefined tail and were refitted
    /// with the tail-at-max-censored fallback. They are kept and counted here.
    #[serde(default)]
    pub fallback_count: usize,
}

impl BootstrapResult {
    fn from_replicates(label: String, reps: Vec<Replicate>, opts: &BootstrapOptions) -> Result<Self> {
        let degenerate = reps.iter().filter(|r| r.kind == Kind::Degenerate).count();
        let fallback = reps.iter().filter(|r| r.kind == Kind::Fallback).count();
        let estimates: Vec<f64> = reps.into_iter().map(|r| r.value).collect();
        if degenerate as f64 > MAX_DEGENERATE_FRACTION * estimates.len() as f64 {
            return Err(Error::TooFewValidReplicates { degenerate, replicates: estimates.len() });
        }
        let mut sorted = estimates.clone();
        sorted.sort_by(f64::total_cmp);
        let (ci_lower, ci_upper) = percentile_interval(&sorted, opts.level);
        Ok(Self {
            label,
            estimates,
            ci_lower,
            ci_upper,
            level: opts.level,
            b: opts.b,
            seed: opts.seed,
            degenerate_count: degenerate,
            fallback_count: fallback,
        })
    }

    /// Percentile interval at another level from the same replicates.
    pub fn interval_at(&self, level: f64) -> (f64, f64) {
        let mut sorted = self.estimates.clone();
        sorted.sort_by(f64::total_cmp);
        percentile_interval(&sorted, level)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub b: usize,
    pub level: f64,
    pub seed: u64,
    pub em: EmOptions,
}

impl BootstrapOptions {
    pub fn new(b: usize, level: f64, seed: u64) -> Self {
        let em = EmOptions { record_trace: false, ..EmOptions::default() };
        Self { b, level, seed, em }
    }
}

/// Which rates to bootstrap.
#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    /// With an override, each replicate's prevalence is the override scaled by `n*/n`.
    Overall { prevalence_override: Option<f64> },
    ByCategory { age: AgeDistribution, tau_star: Option<f64> },
}

pub fn resample_frame<R: Rng + ?Sized>(frame: &ScreeningFrame, rng: &mut R) -> ScreeningFrame {
    let n = frame.records.len();
    if n == 0 || frame.s == 0 {
        return ScreeningFrame::new(frame.s, Vec::new());
    }
    let p = (n as f64 / frame.s as f64).min(1.0);
    let n_star = Binomial::new(frame.s, p).expect("p in [0, 1]").sample(rng) as usize;
    let records = (0..n_star).map(|_| frame.records[rng.random_range(0..n)].clone()).collect();
    ScreeningFrame::new(frame.s, records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Valid,
    Fallback,
    Degenerate,
}

#[derive(Debug, Clone, Copy)]
struct Replicate {
    value: f64,
    kind: Kind,
}

impl Replicate {
    fn degenerate(value: f64) -> Self {
        Self { value, kind: Kind::Degenerate }
    }
}

/// Duration fit for a replicate, refitting with the tail-at-max-censored
/// policy when the configured one leaves the tail undefined. `None` when no
/// record is uncensored.
fn replicate_fit(records: &[PrevalentRecord], em: &EmOptions) -> Option<(NpmleFit, Kind)> {
    match npmle_lb_em(records, em) {
        Ok(fit) => Some((fit, Kind::Valid)),
        Err(Error::UndefinedTail { .. }) => {
            let fallback = em.with_policy(TailPolicy::TailAtMaxCensored);
            let fit = npmle_lb_em(records, &fallback).expect("fallback fit succeeds with events");
            Some((fit, Kind::Fallback))
        }
        Err(_) => None,
    }
}

/// All records censored: the fallback collapses to one atom at the largest total.
fn all_censored_mu(records: &[PrevalentRecord]) -> f64 {
    records.iter().map(PrevalentRecord::total_time).fold(0.0, f64::max)
}

/// Bootstrap `lambda` (one result) or every `lambda_z` (one result per category).
pub fn bootstrap_lambda(frame: &ScreeningFrame, opts: &BootstrapOptions, estimator: &Estimator) -> Result<Vec<BootstrapResult>> {
    if opts.b < 100 {
        return Err(Error::Invalid(format!("need at least 100 bootstrap replicates, got {}", opts.b)));
    }
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::Invalid(format!("confidence level must lie in (0, 1), got {}", opts.level)));
    }
    match estimator {
        Estimator::Overall { prevalence_override } => {
            bootstrap_overall(frame, opts, *prevalence_override).map(|r| vec![r])
        }
        Estimator::ByCategory { age, tau_star } => bootstrap_by_category(frame, opts, age, *tau_star),
    }
}

fn bootstrap_overall(frame: &ScreeningFrame, opts: &BootstrapOptions, prevalence_override: Option<f64>) -> Result<BootstrapResult> {
    let n = frame.records.len() as f64;
    let replicates: Vec<Replicate> = (0..opts.b)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(opts.seed, i as u64);
            let rep = resample_frame(frame, &mut rng);
            if rep.records.is_empty() {
                return Replicate::degenerate(0.0);
            }
            let n_star = rep.records.len() as f64;
            let p = match prevalence_override {
                Some(p) => p * n_star / n,
                None => n_star / rep.s as f64,
            };
            match replicate_fit(&rep.records, &opts.em) {
                Some((fit, kind)) => Replicate { value: p / fit.mu_hat, kind },
                None => Replicate::degenerate(p / all_censored_mu(&rep.records)),
            }
        })
        .collect();
    BootstrapResult::from_replicates("overall".into(), replicates, opts)
}

fn bootstrap_by_category(
    frame: &ScreeningFrame,
    opts: &BootstrapOptions,
    age: &AgeDistribution,
    tau_star: Option<f64>,
) -> Result<Vec<BootstrapResult>> {
    let idx = category_indices(&frame.records, age)?;
    let tagged: Vec<PrevalentRecord> = frame
        .records
        .iter()
        .zip(&idx)
        .map(|(r, z)| PrevalentRecord { age_cat: Some(z.to_string()), ..r.clone() })
        .collect();
    let tagged = ScreeningFrame::new(frame.s, tagged);
    let n_cat = age.categories().len();
    if !age.is_constant() {
        let t = tau_star.ok_or_else(|| Error::Invalid("a time-varying age distribution needs tau_star".into()))?;
        age.check_coverage(t)?;
    }

    let replicates: Vec<Vec<Replicate>> = (0..opts.b)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(opts.seed, i as u64);
            let rep = resample_frame(&tagged, &mut rng);
            (0..n_cat)
                .map(|z| {
                    let key = z.to_string();
                    let subset: Vec<PrevalentRecord> =
                        rep.records.iter().filter(|r| r.age_cat.as_deref() == Some(key.as_str())).cloned().collect();
                    if subset.is_empty() {
                        return Replicate::degenerate(0.0);
                    }
                    let p_joint = subset.len() as f64 / rep.s as f64;
                    let Some((fit, kind)) = replicate_fit(&subset, &opts.em) else {
                        let mu = all_censored_mu(&subset);
                        let value = if age.is_constant() { p_joint / (mu * age.constant_probs()[z]) } else { 0.0 };
                        return Replicate::degenerate(value);
                    };
                    let value = if age.is_constant() {
                        p_joint / (fit.mu_hat * age.constant_probs()[z])
                    } else {
                        match denom_integral(&fit.curve, age, tau_star.unwrap(), z) {
                            Ok(d) if d > 0.0 => p_joint / d,
                            _ => return Replicate::degenerate(0.0),
                        }
                    };
                    Replicate { value, kind }
                })
                .collect()
        })
        .collect();

    (0..n_cat)
        .map(|z| {
            let column = replicates.iter().map(|r| r[z]).collect();
            BootstrapResult::from_replicates(age.categories()[z].clone(), column, opts)
        })
        .collect()
}
