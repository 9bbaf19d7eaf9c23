//! Nonparametric MLE of the disease-duration distribution from length-biased,
//! right-censored prevalent cases.
//!
//! The duration factor of the likelihood is, in terms of the length-biased
//! masses `q` on the distinct uncensored totals `t_1 < ... < t_J`,
//!
//! ```text
//! l(q) = sum_{uncensored i} log(q_j(i) / t_j(i)) + sum_{censored i} log(sum_{t_j >= v_i} q_j / t_j)
//! ```
//!
//! and is maximized by an EM fixed point. The unbiased masses are
//! `p_j ∝ q_j / t_j` and the mean duration is `1 / sum_j q_j / t_j`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LBMasses, PrevalentRecord, SurvivalCurve};

/// What to do when the largest observed total is censored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailPolicy {
    /// Refuse: the survivor function is undefined past the largest censored total.
    #[default]
    Strict,
    /// Put the residual mass on an atom at the largest censored total. Biased.
    TailAtMaxCensored,
}

impl fmt::Display for TailPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TailPolicy::Strict => "strict",
            TailPolicy::TailAtMaxCensored => "tail-at-max-censored",
        })
    }
}

impl FromStr for TailPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(TailPolicy::Strict),
            "tail-at-max-censored" => Ok(TailPolicy::TailAtMaxCensored),
            other => Err(Error::Invalid(format!("unknown tail policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    /// Stop once the largest change in any mass drops below this.
    pub tol: f64,
    pub max_iter: usize,
    pub tail_policy: TailPolicy,
    /// Keep the log-likelihood after every iteration in [`NpmleFit::trace`].
    pub record_trace: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 100_000, tail_policy: TailPolicy::Strict, record_trace: true }
    }
}

impl EmOptions {
    pub fn with_policy(mut self, tail_policy: TailPolicy) -> Self {
        self.tail_policy = tail_policy;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpmleFit {
    pub lb: LBMasses,
    pub curve: SurvivalCurve,
    pub mu_hat: f64,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Mass of `curve` sitting on the artificial tail atom (0 unless the
    /// tail-at-max-censored fallback was used).
    pub tail_deficit: f64,
    pub biased_tail: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<f64>,
}

/// Records reduced to sufficient statistics on the sorted support.
struct Reduced {
    support: Vec<f64>,
    /// Uncensored multiplicity at each support point.
    events: Vec<f64>,
    /// Number of censored records whose risk set starts at each support index.
    censored_from: Vec<f64>,
    n: f64,
}

impl Reduced {
    fn build(records: &[PrevalentRecord], tail_atom: Option<f64>) -> Self {
        let mut totals: Vec<f64> =
            records.iter().filter(|r| r.event).map(PrevalentRecord::total_time).collect();
        totals.sort_by(f64::total_cmp);

        let mut support: Vec<f64> = Vec::new();
        let mut events: Vec<f64> = Vec::new();
        for t in totals {
            if support.last() == Some(&t) {
                *events.last_mut().unwrap() += 1.0;
            } else {
                support.push(t);
                events.push(1.0);
            }
        }
        if let Some(t) = tail_atom {
            support.push(t);
            events.push(0.0);
        }

        let mut censored_from = vec![0.0; support.len()];
        for r in records.iter().filter(|r| !r.event) {
            let v = r.total_time();
            let k = support.partition_point(|&t| t < v);
            censored_from[k] += 1.0;
        }
        Self { support, events, censored_from, n: records.len() as f64 }
    }

    /// Suffix sums of `q_j / t_j`, accumulated from the largest support point down.
    fn suffix(&self, q: &[f64], rates: &mut [f64], suffix: &mut [f64]) {
        let mut acc = 0.0;
        for j in (0..q.len()).rev() {
            rates[j] = q[j] / self.support[j];
            acc += rates[j];
            suffix[j] = acc;
        }
    }

    fn loglik(&self, rates: &[f64], suffix: &[f64]) -> f64 {
        let mut ll = 0.0;
        for j in 0..rates.len() {
            if self.events[j] > 0.0 {
                ll += self.events[j] * rates[j].ln();
            }
            if self.censored_from[j] > 0.0 {
                ll += self.censored_from[j] * suffix[j].ln();
            }
        }
        ll
    }
}

/// Fit the length-biased NPMLE by EM and unbias it.
pub fn npmle_lb_em(records: &[PrevalentRecord], opts: &EmOptions) -> Result<NpmleFit> {
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::Invalid("tol must be positive and max_iter at least 1".into()));
    }
    let max_event = records
        .iter()
        .filter(|r| r.event)
        .map(PrevalentRecord::total_time)
        .max_by(f64::total_cmp)
        .ok_or(Error::NoEvents)?;
    let max_censored = records
        .iter()
        .filter(|r| !r.event)
        .map(PrevalentRecord::total_time)
        .max_by(f64::total_cmp);

    let tail_atom = match max_censored {
        Some(v) if v > max_event => match opts.tail_policy {
            TailPolicy::Strict => {
                return Err(Error::UndefinedTail { largest_censored: v, policy: opts.tail_policy })
            }
            TailPolicy::TailAtMaxCensored => Some(v),
        },
        _ => None,
    };

    let data = Reduced::build(records, tail_atom);
    let m = data.support.len();

    let n_events: f64 = data.events.iter().sum();
    let mut q: Vec<f64> = match tail_atom {
        None => data.events.iter().map(|d| d / n_events).collect(),
        Some(_) => {
            // the tail atom needs positive starting mass or EM never moves it
            let tail_count = data.censored_from[m - 1];
            let total = n_events + tail_count;
            let mut q: Vec<f64> = data.events.iter().map(|d| d / total).collect();
            q[m - 1] = tail_count / total;
            q
        }
    };

    let mut rates = vec![0.0; m];
    let mut suffix = vec![0.0; m];
    let mut trace = Vec::new();
    if opts.record_trace {
        data.suffix(&q, &mut rates, &mut suffix);
        trace.push(data.loglik(&rates, &suffix));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        data.suffix(&q, &mut rates, &mut suffix);
        // E-step weight on atom j summed over censored records: r_j * sum_{k <= j} c_k / suffix_k
        let mut redistributed = 0.0;
        let mut delta: f64 = 0.0;
        for j in 0..m {
            if data.censored_from[j] > 0.0 {
                redistributed += data.censored_from[j] / suffix[j];
            }
            let next = (data.events[j] + rates[j] * redistributed) / data.n;
            delta = delta.max((next - q[j]).abs());
            q[j] = next;
        }
        if opts.record_trace {
            data.suffix(&q, &mut rates, &mut suffix);
            trace.push(data.loglik(&rates, &suffix));
        }
        if delta < opts.tol {
            converged = true;
            break;
        }
    }

    data.suffix(&q, &mut rates, &mut suffix);
    let loglik = data.loglik(&rates, &suffix);
    let lb = LBMasses { support: data.support, q };
    let mu_hat = 1.0 / suffix[0];
    let curve = lb.to_curve()?;
    let tail_deficit = match tail_atom {
        Some(_) => *curve.mass().last().unwrap(),
        None => 0.0,
    };
    Ok(NpmleFit {
        lb,
        curve,
        mu_hat,
        loglik,
        iterations,
        converged,
        tail_deficit,
        biased_tail: tail_atom.is_some(),
        trace,
    })
}

/// Duration-factor log-likelihood of `q` for `records`.
///
/// Returns `-inf` when some censored total lies beyond every atom carrying mass.
pub fn loglik_lb(q: &LBMasses, records: &[PrevalentRecord]) -> Result<f64> {
    let support = &q.support;
    let mut suffix = vec![0.0; support.len() + 1];
    for j in (0..support.len()).rev() {
        suffix[j] = suffix[j + 1] + q.q[j] / support[j];
    }
    let mut ll = 0.0;
    for r in records {
        let t = r.total_time();
        if r.event {
            let j = support
                .binary_search_by(|s| s.total_cmp(&t))
                .map_err(|_| Error::SupportMismatch { total: t })?;
            ll += (q.q[j] / support[j]).ln();
        } else {
            let k = support.partition_point(|&s| s < t);
            ll += suffix[k].ln();
        }
    }
    Ok(ll)
}

/// Product-limit estimate for left-truncated, right-censored data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductLimit {
    pub curve: SurvivalCurve,
    /// Event times where every subject at risk failed before the last event
    /// time; the zero factor there was skipped.
    pub empty_risk_set_at: Vec<f64>,
}

/// Conditional estimator with truncation time `bwd` and endpoint `bwd + fwd_obs`;
/// risk set at `u` is `{j : bwd_j <= u <= total_j}`.
pub fn wang_product_limit(records: &[PrevalentRecord]) -> Result<ProductLimit> {
    let mut entries: Vec<f64> = records.iter().map(|r| r.bwd).collect();
    let mut exits: Vec<f64> = records.iter().map(PrevalentRecord::total_time).collect();
    let mut event_times: Vec<f64> =
        records.iter().filter(|r| r.event).map(PrevalentRecord::total_time).collect();
    if event_times.is_empty() {
        return Err(Error::NoEvents);
    }
    entries.sort_by(f64::total_cmp);
    exits.sort_by(f64::total_cmp);
    event_times.sort_by(f64::total_cmp);

    let last_event = *event_times.last().unwrap();
    let mut support = Vec::new();
    let mut mass = Vec::new();
    let mut empty_risk_set_at = Vec::new();
    let mut surv = 1.0;
    let mut i = 0;
    while i < event_times.len() {
        let u = event_times[i];
        let mut d = 0usize;
        while i < event_times.len() && event_times[i] == u {
            d += 1;
            i += 1;
        }
        // every exit < u also entered before u
        let at_risk = entries.partition_point(|&b| b <= u) - exits.partition_point(|&e| e < u);
        if d == at_risk && u < last_event {
            empty_risk_set_at.push(u);
            continue;
        }
        let next = surv * (1.0 - d as f64 / at_risk as f64);
        support.push(u);
        mass.push(surv - next);
        surv = next;
    }
    let complete = surv == 0.0;
    Ok(ProductLimit { curve: SurvivalCurve::new(support, mass, complete)?, empty_risk_set_at })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(total: f64, event: bool) -> PrevalentRecord {
        PrevalentRecord::new(total / 2.0, total / 2.0, event)
    }

    fn fit(records: &[PrevalentRecord]) -> NpmleFit {
        npmle_lb_em(records, &EmOptions::default()).unwrap()
    }

    #[test]
    fn single_point_mass() {
        let f = fit(&[PrevalentRecord::new(1.0, 1.0, true)]);
        assert_eq!(f.lb.support, vec![2.0]);
        assert_eq!(f.lb.q, vec![1.0]);
        assert_eq!(f.curve.mass(), &[1.0]);
        assert_eq!(f.mu_hat, 2.0);
        assert!(f.converged);
    }

    #[test]
    fn uncensored_gives_harmonic_mean() {
        let f = fit(&[rec(1.0, true), rec(3.0, true)]);
        assert!((f.curve.mass()[0] - 0.75).abs() < 1e-15);
        assert!((f.curve.mass()[1] - 0.25).abs() < 1e-15);
        assert!((f.mu_hat - 1.5).abs() < 1e-15);
    }

    #[test]
    fn ties_are_aggregated() {
        let f = fit(&[rec(2.0, true), rec(2.0, true), rec(4.0, true)]);
        assert_eq!(f.lb.support, vec![2.0, 4.0]);
        assert!((f.lb.q[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn censoring_tied_with_top_event_is_fine() {
        let f = fit(&[rec(1.0, true), rec(3.0, true), rec(3.0, false)]);
        assert!(!f.biased_tail);
        assert!(f.lb.q[1] > 0.5);
    }

    #[test]
    fn all_censored_is_no_events() {
        let err = npmle_lb_em(&[rec(1.0, false)], &EmOptions::default()).unwrap_err();
        assert_eq!(err, Error::NoEvents);
    }

    #[test]
    fn censored_maximum_strict_and_fallback() {
        let recs = [rec(1.0, true), rec(2.0, true), rec(5.0, false)];
        let err = npmle_lb_em(&recs, &EmOptions::default()).unwrap_err();
        assert_eq!(err, Error::UndefinedTail { largest_censored: 5.0, policy: TailPolicy::Strict });

        let opts = EmOptions::default().with_policy(TailPolicy::TailAtMaxCensored);
        let f = npmle_lb_em(&recs, &opts).unwrap();
        assert!(f.biased_tail);
        assert_eq!(*f.lb.support.last().unwrap(), 5.0);
        assert!(f.tail_deficit > 0.0);
        assert!((f.lb.q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // censored record only has the tail atom at risk: q_tail = 1/3 exactly at the fixed point
        assert!((f.lb.q[2] - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn nonconvergence_is_flagged_not_an_error() {
        let recs = [rec(1.0, true), rec(3.0, true), rec(2.0, false), rec(0.5, false)];
        let opts = EmOptions { max_iter: 1, ..EmOptions::default() };
        let f = npmle_lb_em(&recs, &opts).unwrap();
        assert_eq!(f.iterations, 1);
        assert!(!f.converged);
    }

    #[test]
    fn bad_options_rejected() {
        let opts = EmOptions { tol: 0.0, ..EmOptions::default() };
        assert!(npmle_lb_em(&[rec(1.0, true)], &opts).is_err());
    }

    #[test]
    fn loglik_examples() {
        let q = LBMasses::new(vec![2.0], vec![1.0]).unwrap();
        assert_eq!(loglik_lb(&q, &[rec(2.0, true)]).unwrap(), (0.5f64).ln());
        let q = LBMasses::new(vec![1.0, 3.0], vec![0.5, 0.5]).unwrap();
        assert_eq!(loglik_lb(&q, &[rec(2.0, false)]).unwrap(), (0.5f64 / 3.0).ln());
        assert_eq!(
            loglik_lb(&q, &[rec(2.5, true)]).unwrap_err(),
            Error::SupportMismatch { total: 2.5 }
        );
        assert_eq!(loglik_lb(&q, &[rec(4.0, false)]).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn fit_loglik_matches_loglik_lb() {
        let recs = [rec(1.0, true), rec(3.0, true), rec(2.0, false), rec(0.5, false), rec(3.0, true)];
        let f = fit(&recs);
        let direct = loglik_lb(&f.lb, &recs).unwrap();
        assert!((f.loglik - direct).abs() < 1e-12);
        assert!((f.trace.last().unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn wang_two_events() {
        let recs = [PrevalentRecord::new(1.0, 1.0, true), PrevalentRecord::new(0.5, 2.5, true)];
        let pl = wang_product_limit(&recs).unwrap();
        let c = &pl.curve;
        assert_eq!(c.survival(1.99), 1.0);
        assert_eq!(c.survival(2.0), 0.5);
        assert_eq!(c.survival(2.99), 0.5);
        assert_eq!(c.survival(3.0), 0.0);
        assert!(c.complete_tail());
        assert!(pl.empty_risk_set_at.is_empty());
    }

    #[test]
    fn wang_single_event_and_no_events() {
        let pl = wang_product_limit(&[PrevalentRecord::new(0.0, 5.0, true)]).unwrap();
        assert_eq!(pl.curve.support(), &[5.0]);
        assert_eq!(pl.curve.mass(), &[1.0]);
        assert_eq!(wang_product_limit(&[rec(1.0, false)]).unwrap_err(), Error::NoEvents);
    }

    #[test]
    fn wang_empty_risk_set_is_skipped() {
        // subject 2 enters at 3, after subject 1 has failed at 2
        let recs = [PrevalentRecord::new(1.0, 1.0, true), PrevalentRecord::new(3.0, 1.0, true)];
        let pl = wang_product_limit(&recs).unwrap();
        assert_eq!(pl.empty_risk_set_at, vec![2.0]);
        assert_eq!(pl.curve.support(), &[4.0]);
    }

    #[test]
    fn wang_censored_last_leaves_tail_undefined() {
        let recs = [PrevalentRecord::new(0.0, 1.0, true), PrevalentRecord::new(0.0, 2.0, false)];
        let pl = wang_product_limit(&recs).unwrap();
        assert!(!pl.curve.complete_tail());
        assert_eq!(pl.curve.tail_deficit(), 0.5);
        assert!(pl.curve.survival_at(3.0).lower_bound);
    }

    #[test]
    fn policy_parses() {
        assert_eq!("strict".parse::<TailPolicy>().unwrap(), TailPolicy::Strict);
        assert_eq!(
            "tail-at-max-censored".parse::<TailPolicy>().unwrap(),
            TailPolicy::TailAtMaxCensored
        );
        assert!("lenient".parse::<TailPolicy>().is_err());
        assert_eq!(TailPolicy::TailAtMaxCensored.to_string(), "tail-at-max-censored");
    }
}
