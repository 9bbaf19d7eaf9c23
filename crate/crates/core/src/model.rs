//! Domain types for prevalent-cohort follow-up data.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MASS_TOL: f64 = 1e-9;

/// One prevalent case followed from recruitment.
///
/// `bwd` is the time from onset to recruitment, `fwd_obs` the observed residual
/// time (failure or censoring, whichever came first) and `event` is true when
/// the failure was observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalentRecord {
    pub bwd: f64,
    pub fwd_obs: f64,
    pub event: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_cat: Option<String>,
}

impl PrevalentRecord {
    pub fn new(bwd: f64, fwd_obs: f64, event: bool) -> Self {
        Self { bwd, fwd_obs, event, age_cat: None }
    }

    pub fn with_category(mut self, cat: impl Into<String>) -> Self {
        self.age_cat = Some(cat.into());
        self
    }

    /// Length-biased lifetime when `event`, informative censoring time otherwise.
    #[inline]
    pub fn total_time(&self) -> f64 {
        self.bwd + self.fwd_obs
    }
}

#[inline]
pub fn total_time(record: &PrevalentRecord) -> f64 {
    record.total_time()
}

/// The screened sample: `s` subjects screened, of which `records` were prevalent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningFrame {
    pub s: u64,
    pub records: Vec<PrevalentRecord>,
}

impl ScreeningFrame {
    pub fn new(s: u64, records: Vec<PrevalentRecord>) -> Self {
        Self { s, records }
    }

    pub fn n(&self) -> u64 {
        self.records.len() as u64
    }
}

/// A broken invariant. `record` is `None` for frame-level rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub record: Option<usize>,
    pub rule: &'static str,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.record {
            Some(i) => write!(f, "record {}: {}", i, self.rule),
            None => write!(f, "frame: {}", self.rule),
        }
    }
}

pub fn validate_frame(frame: &ScreeningFrame) -> Vec<Violation> {
    let mut out = Vec::new();
    if frame.s == 0 {
        out.push(Violation { record: None, rule: "s > 0" });
    }
    if frame.n() > frame.s {
        out.push(Violation { record: None, rule: "n <= s" });
    }
    for (i, r) in frame.records.iter().enumerate() {
        let mut push = |rule| out.push(Violation { record: Some(i), rule });
        if !r.bwd.is_finite() || !r.fwd_obs.is_finite() {
            push("finite durations");
            continue;
        }
        if r.bwd < 0.0 {
            push("bwd >= 0");
        }
        if r.fwd_obs < 0.0 {
            push("fwd_obs >= 0");
        }
        if r.total_time() <= 0.0 {
            push("bwd+fwd_obs > 0");
        }
    }
    out
}

/// Value of a survivor function at a point.
///
/// `lower_bound` is set past the last support point of a curve whose tail is
/// undefined: the true value is at least `prob`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalPoint {
    pub prob: f64,
    pub lower_bound: bool,
}

/// Discrete survivor function with right-continuous steps at `support`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    support: Vec<f64>,
    mass: Vec<f64>,
    complete_tail: bool,
}

impl SurvivalCurve {
    pub fn new(support: Vec<f64>, mass: Vec<f64>, complete_tail: bool) -> Result<Self> {
        if support.len() != mass.len() || support.is_empty() {
            return Err(Error::Invalid("support and mass must be non-empty and equally long".into()));
        }
        if support[0] <= 0.0 || support.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("support must be strictly increasing and positive".into()));
        }
        if mass.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::Invalid("masses must be positive".into()));
        }
        let total: f64 = mass.iter().sum();
        if complete_tail && (total - 1.0).abs() > MASS_TOL {
            return Err(Error::Invalid(format!("masses sum to {total}, expected 1")));
        }
        if !complete_tail && total > 1.0 + MASS_TOL {
            return Err(Error::Invalid(format!("masses sum to {total} > 1")));
        }
        Ok(Self { support, mass, complete_tail })
    }

    pub fn point_mass(t: f64) -> Result<Self> {
        Self::new(vec![t], vec![1.0], true)
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn complete_tail(&self) -> bool {
        self.complete_tail
    }

    pub fn max_support(&self) -> f64 {
        *self.support.last().expect("non-empty support")
    }

    /// Probability not attributed to any support point.
    pub fn tail_deficit(&self) -> f64 {
        if self.complete_tail {
            0.0
        } else {
            (1.0 - self.mass.iter().sum::<f64>()).max(0.0)
        }
    }

    /// `S(x) = P(X > x)`.
    pub fn survival(&self, x: f64) -> f64 {
        let first_above = self.support.partition_point(|&t| t <= x);
        let above: f64 = self.mass[first_above..].iter().rev().sum();
        above + self.tail_deficit()
    }

    pub fn survival_at(&self, x: f64) -> SurvivalPoint {
        SurvivalPoint {
            prob: self.survival(x),
            lower_bound: !self.complete_tail && x >= self.max_support(),
        }
    }

    /// `mu = sum_j mass_j t_j`, the integral of `S`.
    pub fn mean_duration(&self) -> Result<f64> {
        if !self.complete_tail {
            return Err(Error::UndefinedTail {
                largest_censored: self.max_support(),
                policy: crate::npmle::TailPolicy::Strict,
            });
        }
        Ok(self.support.iter().zip(&self.mass).map(|(t, m)| t * m).sum())
    }
}

/// Discrete length-biased distribution `F_LB` on observed totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LBMasses {
    pub support: Vec<f64>,
    pub q: Vec<f64>,
}

impl LBMasses {
    pub fn new(support: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if support.len() != q.len() || support.is_empty() {
            return Err(Error::Invalid("support and q must be non-empty and equally long".into()));
        }
        if support[0] <= 0.0 || support.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("support must be strictly increasing and positive".into()));
        }
        if q.iter().any(|v| !(*v >= 0.0)) || (q.iter().sum::<f64>() - 1.0).abs() > MASS_TOL {
            return Err(Error::Invalid("q must be a probability vector".into()));
        }
        Ok(Self { support, q })
    }

    /// `sum_j q_j / t_j`, i.e. `1 / mu`.
    pub fn inverse_mean(&self) -> f64 {
        self.support.iter().zip(&self.q).rev().map(|(t, q)| q / t).sum()
    }

    pub fn mean(&self) -> f64 {
        1.0 / self.inverse_mean()
    }

    /// Unbias: `p_j = (q_j / t_j) / sum_k (q_k / t_k)`. Zero-mass atoms are dropped.
    pub fn to_curve(&self) -> Result<SurvivalCurve> {
        let mu = self.mean();
        let (support, mass): (Vec<f64>, Vec<f64>) = self
            .support
            .iter()
            .zip(&self.q)
            .filter(|(_, q)| **q > 0.0)
            .map(|(t, q)| (*t, q / t * mu))
            .unzip();
        SurvivalCurve::new(support, mass, true)
    }
}

/// One calendar interval `[start, end)` of the population age distribution,
/// measured on the same clock as the recruitment time `tau_star` (onsets at
/// `t` in `[0, tau_star]`). `end` may be infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeSegment {
    pub start: f64,
    pub end: f64,
    pub probs: Vec<f64>,
}

/// Population category probabilities `P(A_t = z)`, piecewise constant in `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeDistribution {
    categories: Vec<String>,
    segments: Vec<AgeSegment>,
}

impl AgeDistribution {
    pub fn new(categories: Vec<String>, mut segments: Vec<AgeSegment>) -> Result<Self> {
        if categories.is_empty() || segments.is_empty() {
            return Err(Error::Invalid("age distribution needs categories and segments".into()));
        }
        for (i, c) in categories.iter().enumerate() {
            if categories[..i].contains(c) {
                return Err(Error::Invalid(format!("duplicate category {c:?}")));
            }
        }
        segments.sort_by(|a, b| a.start.total_cmp(&b.start));
        for seg in &segments {
            if seg.probs.len() != categories.len() {
                return Err(Error::Invalid("segment probability vector has wrong length".into()));
            }
            if !(seg.start >= 0.0) || !(seg.end > seg.start) {
                return Err(Error::Invalid(format!("bad segment [{}, {})", seg.start, seg.end)));
            }
            if seg.probs.iter().any(|p| !(0.0..=1.0).contains(p))
                || (seg.probs.iter().sum::<f64>() - 1.0).abs() > 1e-6
            {
                return Err(Error::Invalid("segment probabilities must sum to 1".into()));
            }
        }
        if segments.windows(2).any(|w| w[1].start < w[0].end) {
            return Err(Error::Invalid("age segments overlap".into()));
        }
        Ok(Self { categories, segments })
    }

    /// Time-constant distribution.
    pub fn constant(categories: Vec<String>, probs: Vec<f64>) -> Result<Self> {
        Self::new(categories, vec![AgeSegment { start: 0.0, end: f64::INFINITY, probs }])
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn segments(&self) -> &[AgeSegment] {
        &self.segments
    }

    pub fn is_constant(&self) -> bool {
        self.segments.len() == 1
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }

    /// Probabilities of the first segment, used for the constant case.
    pub fn constant_probs(&self) -> &[f64] {
        &self.segments[0].probs
    }

    /// Fails with the first uncovered interval inside `[0, tau_star]`.
    pub fn check_coverage(&self, tau_star: f64) -> Result<()> {
        let mut covered = 0.0;
        for seg in &self.segments {
            if covered >= tau_star {
                break;
            }
            if seg.start > covered {
                return Err(Error::CoverageGap { from: covered, to: seg.start.min(tau_star) });
            }
            covered = covered.max(seg.end);
        }
        if covered < tau_star {
            return Err(Error::CoverageGap { from: covered, to: tau_star });
        }
        Ok(())
    }
}
