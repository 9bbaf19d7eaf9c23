//! Prevalence, overall incidence `lambda = P / mu`, and age-specific incidence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_frame, AgeDistribution, PrevalentRecord, ScreeningFrame, SurvivalCurve};
use crate::npmle::{npmle_lb_em, EmOptions, NpmleFit};

/// Warnings attached to an estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EstimateFlag {
    /// Tail mass was placed at the largest censored total; `mu` is biased.
    BiasedTail { category: Option<String> },
    NonConvergence { category: Option<String>, iterations: usize },
    /// No cases in this category; its rate is reported as 0.
    EmptyCategory { category: String },
    PrevalenceOverride { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryEstimate {
    pub category: String,
    pub lambda: f64,
    /// `None` for categories without cases.
    pub mu: Option<f64>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidenceEstimate {
    /// Per person-year.
    pub lambda: f64,
    pub prevalence: f64,
    /// Years.
    pub mu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_category: Option<Vec<CategoryEstimate>>,
    #[serde(default)]
    pub flags: Vec<EstimateFlag>,
}

impl IncidenceEstimate {
    /// Estimate from summary statistics alone.
    pub fn from_summary(prevalence: f64, mu: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&prevalence) {
            return Err(Error::InvalidPrevalence(prevalence));
        }
        Ok(Self {
            lambda: lambda_hat(prevalence, mu)?,
            prevalence,
            mu,
            per_category: None,
            flags: Vec::new(),
        })
    }
}

/// `n / s`, or `override_p` when an externally standardized prevalence is supplied.
pub fn prevalence_hat(n: u64, s: u64, override_p: Option<f64>) -> Result<f64> {
    if s == 0 || n > s {
        return Err(Error::InvalidCounts { n, s });
    }
    match override_p {
        Some(p) if !(p > 0.0 && p < 1.0) => Err(Error::InvalidPrevalence(p)),
        Some(p) => Ok(p),
        None => Ok(n as f64 / s as f64),
    }
}

pub fn lambda_hat(p_hat: f64, mu_hat: f64) -> Result<f64> {
    if !(mu_hat > 0.0) {
        return Err(Error::ZeroDuration(mu_hat));
    }
    Ok(p_hat / mu_hat)
}

/// Difference between `p_hat/mu_hat - p/mu` and its linearized decomposition
/// `[mu (p_hat - p) - p (mu_hat - mu)] / (mu_hat mu)`. Zero up to round-off.
pub fn decomposition_residual(p_hat: f64, mu_hat: f64, p: f64, mu: f64) -> f64 {
    let direct = p_hat / mu_hat - p / mu;
    let decomposed = (mu * (p_hat - p) - p * (mu_hat - mu)) / (mu_hat * mu);
    direct - decomposed
}

/// Age-specific rates under a time-constant population age distribution:
/// `lambda_z = (n_z / s) / (mu_z * pi_z)`.
pub fn lambda_age_const(counts: &[u64], s: u64, mu: &[f64], pi: &[f64]) -> Result<Vec<f64>> {
    if counts.len() != mu.len() || counts.len() != pi.len() {
        return Err(Error::Invalid("counts, durations and probabilities differ in length".into()));
    }
    let n: u64 = counts.iter().sum();
    if s == 0 || n > s {
        return Err(Error::InvalidCounts { n, s });
    }
    counts
        .iter()
        .zip(mu)
        .zip(pi)
        .enumerate()
        .map(|(z, ((&n_z, &mu_z), &pi_z))| {
            if n_z == 0 {
                return Ok(0.0);
            }
            if !(mu_z > 0.0) {
                return Err(Error::ZeroDuration(mu_z));
            }
            if !(pi_z > 0.0) {
                return Err(Error::ZeroAgeProbability { category: z });
            }
            Ok((n_z as f64 / s as f64) / (mu_z * pi_z))
        })
        .collect()
}

/// `int_0^tau_star S_z(tau_star - t) P(A_t = z) dt` for category index `z`.
///
/// Both factors are step functions, so the integral is the finite sum
/// `sum_j p_j * W(max(0, tau_star - t_j))` with `W(a) = int_a^tau_star P(A_t = z) dt`.
pub fn denom_integral(curve: &SurvivalCurve, age: &AgeDistribution, tau_star: f64, z: usize) -> Result<f64> {
    if !(tau_star > 0.0) {
        return Err(Error::Invalid(format!("tau_star must be positive, got {tau_star}")));
    }
    if z >= age.categories().len() {
        return Err(Error::Invalid(format!("category index {z} out of range")));
    }
    if !curve.complete_tail() {
        return Err(Error::UndefinedTail {
            largest_censored: curve.max_support(),
            policy: crate::npmle::TailPolicy::Strict,
        });
    }
    age.check_coverage(tau_star)?;
    let weight_from = |a: f64| -> f64 {
        age.segments()
            .iter()
            .map(|seg| {
                let lo = seg.start.max(a);
                let hi = seg.end.min(tau_star);
                if hi > lo {
                    (hi - lo) * seg.probs[z]
                } else {
                    0.0
                }
            })
            .sum()
    };
    Ok(curve
        .support()
        .iter()
        .zip(curve.mass())
        .map(|(t, p)| p * weight_from((tau_star - t).max(0.0)))
        .sum())
}

pub fn lambda_age_tv(p_joint: f64, denom: f64) -> Result<f64> {
    if !(denom > 0.0) {
        return Err(Error::ZeroDenominator(denom));
    }
    Ok(p_joint / denom)
}

fn check_frame(frame: &ScreeningFrame) -> Result<()> {
    let violations = validate_frame(frame);
    if violations.is_empty() {
        return Ok(());
    }
    let msg: Vec<String> = violations.iter().map(ToString::to_string).collect();
    Err(Error::Invalid(msg.join("; ")))
}

fn fit_flags(fit: &NpmleFit, category: Option<&str>, flags: &mut Vec<EstimateFlag>) {
    let category = category.map(str::to_owned);
    if fit.biased_tail {
        flags.push(EstimateFlag::BiasedTail { category: category.clone() });
    }
    if !fit.converged {
        flags.push(EstimateFlag::NonConvergence { category, iterations: fit.iterations });
    }
}

/// Overall `lambda` for a screened frame, with the underlying duration fit.
pub fn estimate_overall(
    frame: &ScreeningFrame,
    prevalence_override: Option<f64>,
    em: &EmOptions,
) -> Result<(IncidenceEstimate, NpmleFit)> {
    check_frame(frame)?;
    let prevalence = prevalence_hat(frame.n(), frame.s, prevalence_override)?;
    let fit = npmle_lb_em(&frame.records, em)?;
    let mut flags = Vec::new();
    if let Some(value) = prevalence_override {
        flags.push(EstimateFlag::PrevalenceOverride { value });
    }
    fit_flags(&fit, None, &mut flags);
    let estimate = IncidenceEstimate {
        lambda: lambda_hat(prevalence, fit.mu_hat)?,
        prevalence,
        mu: fit.mu_hat,
        per_category: None,
        flags,
    };
    Ok((estimate, fit))
}

/// Output of [`estimate_by_category`].
#[derive(Debug, Clone)]
pub struct CategoryAnalysis {
    pub estimate: IncidenceEstimate,
    pub overall_fit: NpmleFit,
    /// In category order; `None` for categories without cases.
    pub category_fits: Vec<Option<NpmleFit>>,
}

/// Index of each record's category in `age`.
pub fn category_indices(records: &[PrevalentRecord], age: &AgeDistribution) -> Result<Vec<usize>> {
    records
        .iter()
        .map(|r| {
            let cat = r.age_cat.as_deref().ok_or_else(|| Error::MissingAgeCategory(String::new()))?;
            age.category_index(cat).ok_or_else(|| Error::MissingAgeCategory(cat.to_owned()))
        })
        .collect()
}

/// Age-specific rates. A single-segment `age` uses the constant-distribution
/// formula; multiple segments use the time-varying denominator and need `tau_star`.
pub fn estimate_by_category(
    frame: &ScreeningFrame,
    age: &AgeDistribution,
    tau_star: Option<f64>,
    em: &EmOptions,
) -> Result<CategoryAnalysis> {
    check_frame(frame)?;
    let idx = category_indices(&frame.records, age)?;
    if !age.is_constant() {
        match tau_star {
            Some(t) => age.check_coverage(t)?,
            None => {
                return Err(Error::Invalid(
                    "a time-varying age distribution needs the recruitment time tau_star".into(),
                ))
            }
        }
    }
    let prevalence = prevalence_hat(frame.n(), frame.s, None)?;
    let overall_fit = npmle_lb_em(&frame.records, em)?;

    let n_cat = age.categories().len();
    let category_fits: Vec<Option<NpmleFit>> = (0..n_cat)
        .into_par_iter()
        .map(|z| {
            let subset: Vec<PrevalentRecord> = frame
                .records
                .iter()
                .zip(&idx)
                .filter(|(_, &c)| c == z)
                .map(|(r, _)| r.clone())
                .collect();
            if subset.is_empty() {
                Ok(None)
            } else {
                npmle_lb_em(&subset, em).map(Some)
            }
        })
        .collect::<Result<_>>()?;

    let mut flags = Vec::new();
    fit_flags(&overall_fit, None, &mut flags);
    let mut per_category = Vec::with_capacity(n_cat);
    for (z, fit) in category_fits.iter().enumerate() {
        let name = &age.categories()[z];
        let count = idx.iter().filter(|&&c| c == z).count() as u64;
        let Some(fit) = fit else {
            flags.push(EstimateFlag::EmptyCategory { category: name.clone() });
            per_category.push(CategoryEstimate { category: name.clone(), lambda: 0.0, mu: None, count });
            continue;
        };
        fit_flags(fit, Some(name), &mut flags);
        let p_joint = count as f64 / frame.s as f64;
        let lambda = if age.is_constant() {
            lambda_age_const(&[count], frame.s, &[fit.mu_hat], &[age.constant_probs()[z]])?[0]
        } else {
            let denom = denom_integral(&fit.curve, age, tau_star.unwrap(), z)?;
            lambda_age_tv(p_joint, denom)?
        };
        per_category.push(CategoryEstimate { category: name.clone(), lambda, mu: Some(fit.mu_hat), count });
    }

    let estimate = IncidenceEstimate {
        lambda: lambda_hat(prevalence, overall_fit.mu_hat)?,
        prevalence,
        mu: overall_fit.mu_hat,
        per_category: Some(per_category),
        flags,
    };
    Ok(CategoryAnalysis { estimate, overall_fit, category_fits })
}
