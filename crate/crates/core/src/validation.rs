//! Monte Carlo policy evaluation and distribution-free lower confidence
//! bounds on the expected profit.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact_dp::fixed_point;
use crate::model::Instance;
use crate::pricing::StageSolveConfig;
use crate::rng::{stream, Domain};
use crate::trainer::forward_sweep_in;
use crate::value::ValueFamily;

/// How the spread term of the Bernstein bound uses the sample deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BernsteinForm {
    /// `sqrt(2 sigma ln(2/alpha) / k)`.
    #[default]
    Verbatim,
    /// `sqrt(2 sigma^2 ln(2/alpha) / k)`, the classical empirical Bernstein term.
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub k_max: usize,
    pub alpha: f64,
    pub seed: u64,
    pub bernstein: BernsteinForm,
    pub stage: StageSolveConfig,
}

impl ValidationConfig {
    pub fn new(k_max: usize, alpha: f64, seed: u64) -> Self {
        Self {
            k_max,
            alpha,
            seed,
            bernstein: BernsteinForm::Verbatim,
            stage: StageSolveConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_max < 2 {
            return Err(Error::TooFewSamples {
                required: 2,
                got: self.k_max,
            });
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub samples: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation.
    pub sigma: f64,
    pub l_minus: f64,
    pub l_plus: f64,
    pub alpha: f64,
    pub bound_bernstein: f64,
    pub bound_dkw: f64,
    pub bound_best: f64,
}

impl ValidationReport {
    pub fn from_samples(samples: Vec<f64>, l_minus: f64, l_plus: f64, alpha: f64, form: BernsteinForm) -> Result<Self> {
        let bound_bernstein = bernstein_bound_with(&samples, l_minus, l_plus, alpha, form)?;
        let bound_dkw = dkw_bound(&samples, alpha)?;
        let (mean, sigma) = mean_and_sigma(&samples);
        Ok(Self {
            mean,
            sigma,
            l_minus,
            l_plus,
            alpha,
            bound_bernstein,
            bound_dkw,
            bound_best: best_bound(bound_bernstein, bound_dkw, l_minus),
            samples,
        })
    }

    pub fn k_max(&self) -> usize {
        self.samples.len()
    }
}

/// Profits of `k_max` independent horizons under the greedy policy of
/// `family`. Run `k` always uses the same random stream, so policies
/// compared with one seed face identical customers.
pub fn run_validation<F>(
    inst: &Instance,
    family: &F,
    k_max: usize,
    seed: u64,
    stage: &StageSolveConfig,
) -> Result<Vec<f64>>
where
    F: ValueFamily + ?Sized,
{
    run_validation_in(inst, inst, family, k_max, seed, stage)
}

/// As [`run_validation`], with charges computed from `policy` and customers
/// drawn from `world`.
pub fn run_validation_in<F>(
    world: &Instance,
    policy: &Instance,
    family: &F,
    k_max: usize,
    seed: u64,
    stage: &StageSolveConfig,
) -> Result<Vec<f64>>
where
    F: ValueFamily + ?Sized,
{
    if k_max < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            got: k_max,
        });
    }
    (0..k_max)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, Domain::Validation, k as u64);
            forward_sweep_in(world, policy, family, stage, &mut rng).map(|p| p.realized_profit)
        })
        .collect()
}

/// Validates `family` on `inst` with support `[0, V*(0)]`.
pub fn validate_policy<F>(inst: &Instance, family: &F, cfg: &ValidationConfig) -> Result<ValidationReport>
where
    F: ValueFamily + ?Sized,
{
    validate_policy_in(inst, inst, family, cfg)
}

/// Validates a policy priced with the `policy` model on the `world` model.
pub fn validate_policy_in<F>(
    world: &Instance,
    policy: &Instance,
    family: &F,
    cfg: &ValidationConfig,
) -> Result<ValidationReport>
where
    F: ValueFamily + ?Sized,
{
    cfg.validate()?;
    let samples = run_validation_in(world, policy, family, cfg.k_max, cfg.seed, &cfg.stage)?;
    let l_plus = fixed_point(world, &vec![0; world.n_slots]);
    ValidationReport::from_samples(samples, 0.0, l_plus, cfg.alpha, cfg.bernstein)
}

fn mean_and_sigma(samples: &[f64]) -> (f64, f64) {
    let k = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / k;
    let ss: f64 = samples.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (k - 1.0)).sqrt())
}

fn check_support(samples: &[f64], lower: f64, upper: f64) -> Result<()> {
    let slack = 1e-9 * (upper - lower).abs().max(1.0);
    for &value in samples {
        if !(value >= lower - slack && value <= upper + slack) {
            return Err(Error::SampleOutOfSupport { value, lower, upper });
        }
    }
    Ok(())
}

/// Bernstein-type lower bound with the deviation entering un-squared.
pub fn bernstein_bound(samples: &[f64], l_minus: f64, l_plus: f64, alpha: f64) -> Result<f64> {
    bernstein_bound_with(samples, l_minus, l_plus, alpha, BernsteinForm::Verbatim)
}

pub fn bernstein_bound_with(
    samples: &[f64],
    l_minus: f64,
    l_plus: f64,
    alpha: f64,
    form: BernsteinForm,
) -> Result<f64> {
    let k = samples.len();
    if k < 2 {
        return Err(Error::TooFewSamples { required: 2, got: k });
    }
    check_support(samples, l_minus, l_plus)?;
    let (mean, sigma) = mean_and_sigma(samples);
    let spread = match form {
        BernsteinForm::Verbatim => sigma,
        BernsteinForm::Variance => sigma * sigma,
    };
    let log_term = (2.0 / alpha).ln();
    let kf = k as f64;
    Ok(mean - (2.0 * spread * log_term / kf).sqrt() - 7.0 * (l_plus - l_minus) * log_term / (3.0 * (kf - 1.0)))
}

/// `int_0^inf 1 - min(1, F_K(l) + eps) dl` with the empirical CDF `F_K` and
/// `eps = sqrt(ln(1/alpha) / (2k))`, integrated exactly over the steps.
pub fn dkw_bound(samples: &[f64], alpha: f64) -> Result<f64> {
    let k = samples.len();
    if k == 0 {
        return Err(Error::TooFewSamples { required: 1, got: 0 });
    }
    check_support(samples, 0.0, f64::INFINITY)?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let kf = k as f64;
    let eps = ((1.0 / alpha).ln() / (2.0 * kf)).sqrt();
    let mut total = 0.0;
    let mut prev = 0.0;
    for (j, &s) in sorted.iter().enumerate() {
        let height = 1.0 - j as f64 / kf - eps;
        if height <= 0.0 {
            break;
        }
        total += (s.max(0.0) - prev) * height;
        prev = s.max(0.0);
    }
    Ok(total)
}

/// The larger bound, floored at the support minimum.
pub fn best_bound(bernstein: f64, dkw: f64, l_minus: f64) -> f64 {
    bernstein.max(dkw).max(l_minus)
}

/// One row of the validation report CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub scenario_id: String,
    pub algorithm: String,
    pub iteration: usize,
    pub k_max: usize,
    pub alpha: f64,
    pub mean: f64,
    pub sigma: f64,
    pub l_b: f64,
    pub l_d: f64,
    pub best: f64,
}

impl ReportRow {
    pub fn new(scenario_id: &str, algorithm: &str, iteration: usize, report: &ValidationReport) -> Self {
        Self {
            scenario_id: scenario_id.to_string(),
            algorithm: algorithm.to_string(),
            iteration,
            k_max: report.k_max(),
            alpha: report.alpha,
            mean: report.mean,
            sigma: report.sigma,
            l_b: report.bound_bernstein,
            l_d: report.bound_dkw,
            best: report.bound_best,
        }
    }
}

pub const REPORT_HEADER: &[&str] = &[
    "scenario_id",
    "algorithm",
    "iteration",
    "k_max",
    "alpha",
    "mean",
    "sigma",
    "l_b",
    "l_d",
    "best",
];

pub fn write_report_csv<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    crate::experiment::write_rows(REPORT_HEADER, rows, out)
}
