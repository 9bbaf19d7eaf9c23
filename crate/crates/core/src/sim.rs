//! Synthetic prevalent cohorts under a stationary (or ramped) onset process.
//!
//! Two generators produce the same data law when incidence is stationary:
//!
//! - [`sim_window`] plays out calendar time: onsets arrive as a Poisson process
//!   on `[0, tau_star]` and survive to recruitment with probability
//!   `S(tau_star - t)`,
//! - [`sim_equilibrium`] samples the limit directly: each screened subject is
//!   a case with probability `P = lambda * mu`, its total duration is
//!   length-biased and its backward time is uniform on that total.
//!
//! Residual censoring is drawn independently of the recurrence times.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Poisson, Weibull};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::error::{Error, Result};
use crate::model::{AgeDistribution, AgeSegment, PrevalentRecord, ScreeningFrame};
use crate::rng::stream_rng;

/// Upper quantile the window must exceed for the two generators to agree.
const WINDOW_QUANTILE: f64 = 0.9999;

/// Duration distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum DistSpec {
    Exponential { mean: f64 },
    Weibull { shape: f64, scale: f64 },
    Gamma { shape: f64, scale: f64 },
    Discrete { points: Vec<f64>, probs: Vec<f64> },
}

impl DistSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            DistSpec::Exponential { mean } => *mean > 0.0 && mean.is_finite(),
            DistSpec::Weibull { shape, scale } | DistSpec::Gamma { shape, scale } => {
                *shape > 0.0 && *scale > 0.0 && shape.is_finite() && scale.is_finite()
            }
            DistSpec::Discrete { points, probs } => {
                !points.is_empty()
                    && points.len() == probs.len()
                    && points.iter().all(|p| *p > 0.0 && p.is_finite())
                    && probs.iter().all(|p| *p >= 0.0)
                    && (probs.iter().sum::<f64>() - 1.0).abs() < 1e-9
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(format!("invalid distribution {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            DistSpec::Exponential { mean } => *mean,
            DistSpec::Weibull { shape, scale } => scale * statrs::function::gamma::gamma(1.0 + 1.0 / shape),
            DistSpec::Gamma { shape, scale } => shape * scale,
            DistSpec::Discrete { points, probs } => points.iter().zip(probs).map(|(t, p)| t * p).sum(),
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            DistSpec::Exponential { mean } => 2.0 * mean * mean,
            DistSpec::Weibull { shape, scale } => scale * scale * statrs::function::gamma::gamma(1.0 + 2.0 / shape),
            DistSpec::Gamma { shape, scale } => shape * (shape + 1.0) * scale * scale,
            DistSpec::Discrete { points, probs } => points.iter().zip(probs).map(|(t, p)| t * t * p).sum(),
        }
    }

    /// `P(X > x)`.
    pub fn survival(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 1.0;
        }
        match self {
            DistSpec::Exponential { mean } => (-x / mean).exp(),
            DistSpec::Weibull { shape, scale } => (-(x / scale).powf(*shape)).exp(),
            DistSpec::Gamma { shape, scale } => statrs::distribution::Gamma::new(*shape, 1.0 / scale)
                .map(|g| g.sf(x))
                .unwrap_or(f64::NAN),
            DistSpec::Discrete { points, probs } => {
                points.iter().zip(probs).filter(|(t, _)| **t > x).map(|(_, p)| p).sum()
            }
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        match self {
            DistSpec::Exponential { mean } => -mean * (1.0 - p).ln(),
            DistSpec::Weibull { shape, scale } => scale * (-(1.0 - p).ln()).powf(1.0 / shape),
            DistSpec::Gamma { shape, scale } => statrs::distribution::Gamma::new(*shape, 1.0 / scale)
                .map(|g| g.inverse_cdf(p))
                .unwrap_or(f64::NAN),
            DistSpec::Discrete { points, .. } => points.iter().copied().fold(0.0, f64::max),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DistSpec::Exponential { mean } => Exp::new(1.0 / mean).unwrap().sample(rng),
            DistSpec::Weibull { shape, scale } => Weibull::new(*scale, *shape).unwrap().sample(rng),
            DistSpec::Gamma { shape, scale } => Gamma::new(*shape, *scale).unwrap().sample(rng),
            DistSpec::Discrete { points, probs } => points[pick(probs.iter().copied(), rng)],
        }
    }
}

/// Index drawn proportionally to non-negative `weights`.
fn pick<R: Rng + ?Sized>(weights: impl Iterator<Item = f64> + Clone, rng: &mut R) -> usize {
    let total: f64 = weights.clone().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (j, w) in weights.enumerate() {
        if w > 0.0 {
            last = j;
            if u < w {
                return j;
            }
            u -= w;
        }
    }
    last
}

/// Draw from the length-biased version of `spec` (density `x f(x) / mu`).
pub fn length_biased_draw<R: Rng + ?Sized>(spec: &DistSpec, rng: &mut R) -> Result<f64> {
    if !spec.mean().is_finite() {
        return Err(Error::InfiniteMoment);
    }
    Ok(match spec {
        DistSpec::Exponential { mean } => Gamma::new(2.0, *mean).unwrap().sample(rng),
        // (X / scale)^shape is Exp(1); size-biasing shifts it to Gamma(1 + 1/shape, 1)
        DistSpec::Weibull { shape, scale } => {
            scale * Gamma::new(1.0 + 1.0 / shape, 1.0).unwrap().sample(rng).powf(1.0 / shape)
        }
        DistSpec::Gamma { shape, scale } => Gamma::new(shape + 1.0, *scale).unwrap().sample(rng),
        DistSpec::Discrete { points, probs } => {
            points[pick(points.iter().zip(probs).map(|(t, p)| t * p), rng)]
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    #[default]
    Window,
    Equilibrium,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySim {
    pub label: String,
    /// Onset rate per person-year among the population in this category.
    pub lambda: f64,
    pub survival: DistSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeSimConfig {
    pub categories: Vec<CategorySim>,
    pub segments: Vec<AgeSegment>,
}

impl AgeSimConfig {
    pub fn distribution(&self) -> Result<AgeDistribution> {
        let names = self.categories.iter().map(|c| c.label.clone()).collect();
        AgeDistribution::new(names, self.segments.clone()).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }
}

/// Simulation parameters. Loaded from TOML by [`SimConfig::from_toml`]:
///
/// ```toml
/// s = 20000
/// lambda_true = 0.01
/// tau_star = 60.0
/// seed = 7
/// generator = "equilibrium"   # or "window" (default)
/// growth_rate = 0.0           # window only: intensity lambda * exp(g (t - tau_star))
///
/// [survival]
/// family = "exponential"
/// mean = 5.0
///
/// [censor]                    # optional; omitted means no censoring
/// family = "exponential"
/// mean = 11.67
/// ```
///
/// An optional `[age]` table with `[[age.categories]]` (`label`, `lambda`,
/// `survival`) and `[[age.segments]]` (`start`, `end`, `probs`) replaces
/// `lambda_true`/`survival` with per-category onset rates and durations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub s: u64,
    #[serde(default)]
    pub lambda_true: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survival: Option<DistSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub censor: Option<DistSpec>,
    pub tau_star: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub generator: Generator,
    #[serde(default)]
    pub growth_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<AgeSimConfig>,
}

impl SimConfig {
    /// Single-category config with exponential survival.
    pub fn exponential(s: u64, lambda_true: f64, mean: f64, tau_star: f64, seed: u64) -> Self {
        Self {
            s,
            lambda_true,
            survival: Some(DistSpec::Exponential { mean }),
            censor: None,
            tau_star,
            seed,
            generator: Generator::Window,
            growth_rate: 0.0,
            age: None,
        }
    }

    pub fn with_censor(mut self, censor: DistSpec) -> Self {
        self.censor = Some(censor);
        self
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn run(&self) -> Result<ScreeningFrame> {
        match self.generator {
            Generator::Window => sim_window(self),
            Generator::Equilibrium => sim_equilibrium(self),
        }
    }

    fn strata(&self) -> Result<Strata> {
        if let Some(c) = &self.censor {
            c.validate()?;
        }
        if self.s == 0 {
            return Err(Error::ConfigInvalid("s must be positive".into()));
        }
        if !(self.tau_star > 0.0) || !self.tau_star.is_finite() {
            return Err(Error::ConfigInvalid("tau_star must be positive".into()));
        }
        if !self.growth_rate.is_finite() {
            return Err(Error::ConfigInvalid("growth_rate must be finite".into()));
        }
        let strata = match &self.age {
            None => {
                let survival = self
                    .survival
                    .clone()
                    .ok_or_else(|| Error::ConfigInvalid("survival distribution missing".into()))?;
                Strata {
                    labels: vec![None],
                    lambdas: vec![self.lambda_true],
                    survivals: vec![survival],
                    age: AgeDistribution::constant(vec![String::new()], vec![1.0])?,
                }
            }
            Some(age) => Strata {
                labels: age.categories.iter().map(|c| Some(c.label.clone())).collect(),
                lambdas: age.categories.iter().map(|c| c.lambda).collect(),
                survivals: age.categories.iter().map(|c| c.survival.clone()).collect(),
                age: age.distribution()?,
            },
        };
        for (l, surv) in strata.lambdas.iter().zip(&strata.survivals) {
            surv.validate()?;
            if !(*l >= 0.0) || !l.is_finite() {
                return Err(Error::ConfigInvalid(format!("onset rate {l} must be non-negative")));
            }
        }
        Ok(strata)
    }

    /// True parameters implied by the config under stationarity.
    pub fn truth(&self) -> Result<SimTruth> {
        let strata = self.strata()?;
        let per_category: Vec<CategoryTruth> = (0..strata.lambdas.len())
            .map(|z| CategoryTruth {
                label: strata.labels[z].clone().unwrap_or_default(),
                lambda: strata.lambdas[z],
                mu: strata.survivals[z].mean(),
                prevalence: strata.joint_prevalence(z),
            })
            .collect();
        let prevalence: f64 = per_category.iter().map(|c| c.prevalence).sum();
        let (lambda, mu) = if self.age.is_none() {
            (self.lambda_true, Some(per_category[0].mu))
        } else {
            // population mean rate and the case-mix mean duration
            let pi = strata.age.constant_probs();
            let lambda: f64 = strata.lambdas.iter().zip(pi).map(|(l, p)| l * p).sum();
            let mu = (lambda > 0.0).then(|| prevalence / lambda);
            (lambda, mu)
        };
        Ok(SimTruth {
            lambda,
            mu,
            prevalence,
            per_category: if self.age.is_some() { per_category } else { Vec::new() },
            seed: self.seed,
            generator: self.generator,
            s: self.s,
            n_records: None,
            n_events: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryTruth {
    pub label: String,
    pub lambda: f64,
    pub mu: f64,
    /// `P(diseased, category)` under stationarity and the first age segment.
    pub prevalence: f64,
}

/// Sidecar written next to simulated data for oracle comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub lambda: f64,
    /// Mean duration of incident cases; `None` when nothing is incident.
    pub mu: Option<f64>,
    pub prevalence: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_category: Vec<CategoryTruth>,
    pub seed: u64,
    pub generator: Generator,
    pub s: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_records: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_events: Option<usize>,
}

struct Strata {
    labels: Vec<Option<String>>,
    lambdas: Vec<f64>,
    survivals: Vec<DistSpec>,
    age: AgeDistribution,
}

impl Strata {
    fn joint_prevalence(&self, z: usize) -> f64 {
        self.lambdas[z] * self.survivals[z].mean() * self.age.constant_probs()[z]
    }

    fn record(&self, z: usize, bwd: f64, fwd: f64, censor: f64) -> PrevalentRecord {
        let event = fwd <= censor;
        PrevalentRecord {
            bwd,
            fwd_obs: if event { fwd } else { censor },
            event,
            age_cat: self.labels[z].clone(),
        }
    }
}

fn draw_censor<R: Rng + ?Sized>(censor: &Option<DistSpec>, rng: &mut R) -> f64 {
    censor.as_ref().map_or(f64::INFINITY, |c| c.sample(rng))
}

/// Onset from density proportional to `exp(g (t - tau_star))` on `[a, b)`.
fn onset_time<R: Rng + ?Sized>(a: f64, b: f64, growth: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    if growth == 0.0 {
        a + u * (b - a)
    } else {
        a + (u * (growth * (b - a)).exp_m1()).ln_1p() / growth
    }
}

/// `int_a^b exp(g (t - tau_star)) dt`.
fn intensity_mass(a: f64, b: f64, growth: f64, tau_star: f64) -> f64 {
    if growth == 0.0 {
        b - a
    } else {
        (growth * (a - tau_star)).exp() * (growth * (b - a)).exp_m1() / growth
    }
}

/// Calendar-time construction: Poisson onsets over `[0, tau_star]`, kept when
/// still alive at recruitment.
pub fn sim_window(config: &SimConfig) -> Result<ScreeningFrame> {
    let strata = config.strata()?;
    let tau = config.tau_star;
    for surv in &strata.survivals {
        let q = surv.quantile(WINDOW_QUANTILE);
        if !(tau > q) {
            return Err(Error::ConfigInvalid(format!(
                "tau_star {tau} must exceed the {WINDOW_QUANTILE} quantile {q} of the survival distribution"
            )));
        }
    }
    if config.growth_rate == 0.0 {
        check_prevalence(&strata)?;
    }

    // (stratum, interval) blocks with their onset counts, drawn from stream 0
    let mut master = stream_rng(config.seed, 0);
    let mut onsets: Vec<(usize, f64, f64)> = Vec::new();
    for z in 0..strata.lambdas.len() {
        for seg in strata.age.segments() {
            let (a, b) = (seg.start.max(0.0), seg.end.min(tau));
            let weight = config.s as f64 * strata.lambdas[z] * seg.probs[z];
            if b <= a || weight <= 0.0 {
                continue;
            }
            let expected = weight * intensity_mass(a, b, config.growth_rate, tau);
            let m = Poisson::new(expected)
                .map_err(|e| Error::ConfigInvalid(format!("onset count: {e}")))?
                .sample(&mut master) as usize;
            onsets.extend(std::iter::repeat_n((z, a, b), m));
        }
    }

    let records: Vec<PrevalentRecord> = onsets
        .par_iter()
        .enumerate()
        .filter_map(|(k, &(z, a, b))| {
            let mut rng = stream_rng(config.seed, k as u64 + 1);
            let t = onset_time(a, b, config.growth_rate, &mut rng);
            let x = strata.survivals[z].sample(&mut rng);
            let bwd = tau - t;
            if x < bwd {
                return None;
            }
            let censor = draw_censor(&config.censor, &mut rng);
            Some(strata.record(z, bwd, x - bwd, censor))
        })
        .collect();
    Ok(ScreeningFrame::new(config.s, records))
}

fn check_prevalence(strata: &Strata) -> Result<f64> {
    let p: f64 = (0..strata.lambdas.len()).map(|z| strata.joint_prevalence(z)).sum();
    if !(p < 1.0) {
        return Err(Error::PrevalenceOutOfRange(p));
    }
    Ok(p)
}

/// Equilibrium construction: each screened subject is a case with probability
/// `P`, with a length-biased total and a uniform split into backward/forward time.
pub fn sim_equilibrium(config: &SimConfig) -> Result<ScreeningFrame> {
    let strata = config.strata()?;
    if config.growth_rate != 0.0 {
        return Err(Error::ConfigInvalid("the equilibrium generator requires growth_rate = 0".into()));
    }
    if !strata.age.is_constant() {
        return Err(Error::ConfigInvalid(
            "the equilibrium generator needs a time-constant age distribution; use the window generator".into(),
        ));
    }
    let p = check_prevalence(&strata)?;
    if !(p > 0.0) {
        return Err(Error::PrevalenceOutOfRange(p));
    }
    let joint: Vec<f64> = (0..strata.lambdas.len()).map(|z| strata.joint_prevalence(z)).collect();

    // screening outcomes from stream 0, case details from stream i + 1
    let mut screen = stream_rng(config.seed, 0);
    let mut cases: Vec<(u64, usize)> = Vec::new();
    for i in 0..config.s {
        let mut u: f64 = screen.random();
        for (z, pz) in joint.iter().enumerate() {
            if u < *pz {
                cases.push((i, z));
                break;
            }
            u -= pz;
        }
    }

    let records = cases
        .par_iter()
        .map(|&(i, z)| {
            let mut rng = stream_rng(config.seed, i + 1);
            let y = length_biased_draw(&strata.survivals[z], &mut rng)?;
            let bwd = y * rng.random::<f64>();
            let censor = draw_censor(&config.censor, &mut rng);
            Ok(strata.record(z, bwd, y - bwd, censor))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScreeningFrame::new(config.s, records))
}
