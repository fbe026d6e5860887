//! Benchmark instance generation: service-area cost geometry, horizon sizing
//! from demand factors, and the two model perturbations used to test
//! robustness (arrival rate and noisy choice parameters).

use std::fmt;
use std::io::Write;

use log::warn;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Instance, InstanceConfig, MnlParams};
use crate::rng::{stream, Domain};

const NOMINAL_JSON: &str = include_str!("../data/nominal.json");
const CORRUPTED_JSON: &str = include_str!("../data/corrupted_betas.json");

/// Largest value a corrupted price sensitivity may take.
pub const BETA_D_CEILING: f64 = -1e-6;

/// The demand factors of the full benchmark.
pub const DEMAND_FACTORS: [f64; 7] = [0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

/// Nominal 17-slot parameter set.
pub fn nominal_config() -> InstanceConfig {
    serde_json::from_str(NOMINAL_JSON).expect("bundled nominal parameters parse")
}

pub fn nominal_instance() -> Instance {
    Instance::from_config(&nominal_config()).expect("bundled nominal parameters are valid")
}

/// One published set of noise-corrupted choice parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptedBetas {
    pub variance: f64,
    pub beta_c: f64,
    pub beta_d: f64,
    pub beta_s: Vec<f64>,
}

impl CorruptedBetas {
    pub fn mnl(&self) -> Result<MnlParams> {
        MnlParams::new(self.beta_c, self.beta_d, self.beta_s.clone())
    }
}

/// Published corrupted parameter sets for variances 0.01, 0.1 and 1.
pub fn corrupted_betas() -> Vec<CorruptedBetas> {
    serde_json::from_str(CORRUPTED_JSON).expect("bundled corrupted parameters parse")
}

/// Service-area dimensions and the resulting per-order routing cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Geometry {
    pub width: f64,
    pub length: f64,
    pub var_cost: f64,
}

/// Area served by one truck per slot, given that a truck covers
/// `capacity` stops. `W = speed / (4 + capacity/6)`, `L = 2W`.
pub fn derive_geometry(capacity: u32, truck_speed: f64, cost_per_mile: f64) -> Result<Geometry> {
    if capacity == 0 {
        return Err(Error::Config("capacity must be at least 1".into()));
    }
    let cap = capacity as f64;
    let width = truck_speed / (4.0 + cap / 6.0);
    Ok(Geometry {
        width,
        length: 2.0 * width,
        var_cost: cost_per_mile * truck_speed / (24.0 + cap),
    })
}

/// Horizon with `phi * n * capacity / lambda` expected arrivals' worth of
/// periods, rounded half-up, at least one.
pub fn derive_horizon(phi: f64, n_slots: usize, capacity: u32, lambda: f64) -> usize {
    let raw = phi * n_slots as f64 * capacity as f64 / lambda;
    // the guard keeps exact halves from rounding down after division noise
    ((raw + 0.5 + 1e-9).floor() as usize).max(1)
}

/// Adds independent `N(0, variance)` draws to every choice parameter.
///
/// The draws depend only on `seed`. A price sensitivity pushed to zero or
/// above is clamped to [`BETA_D_CEILING`].
pub fn corrupt_betas(mnl: &MnlParams, variance: f64, seed: u64) -> Result<MnlParams> {
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(Error::Config(format!(
            "noise variance must be non-negative, got {variance}"
        )));
    }
    if variance == 0.0 {
        return Ok(mnl.clone());
    }
    let normal = Normal::new(0.0, variance.sqrt()).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = stream(seed, Domain::BetaNoise, 0);
    let beta_c = mnl.beta_c + normal.sample(&mut rng);
    let mut beta_d = mnl.beta_d + normal.sample(&mut rng);
    let beta_s = mnl.beta_s.iter().map(|b| b + normal.sample(&mut rng)).collect();
    if beta_d > BETA_D_CEILING {
        warn!("corrupted beta_d = {beta_d} is not negative; clamped to {BETA_D_CEILING}");
        beta_d = BETA_D_CEILING;
    }
    MnlParams::new(beta_c, beta_d, beta_s)
}

/// Keeps the first `n` slots of a parameter set.
pub fn restrict_slots(cfg: &InstanceConfig, n: usize) -> Result<InstanceConfig> {
    if n == 0 || n > cfg.beta_s.len() {
        return Err(Error::Config(format!(
            "cannot keep {n} slots out of {}",
            cfg.beta_s.len()
        )));
    }
    let mut out = cfg.clone();
    out.n_slots = n;
    out.beta_s.truncate(n);
    Ok(out)
}

/// Instance with `capacity` per slot and the horizon implied by `phi`,
/// keeping the slots, prices and choice parameters of `base`.
pub fn sized_instance(base: &InstanceConfig, capacity: u32, phi: f64) -> Result<Instance> {
    if !(phi > 0.0) || !phi.is_finite() {
        return Err(Error::Config(format!("demand factor must be positive, got {phi}")));
    }
    let mut cfg = base.clone();
    cfg.capacity = capacity;
    cfg.horizon = derive_horizon(phi, cfg.n_slots, capacity, cfg.arrival_rate);
    Instance::from_config(&cfg)
}

/// Two slots of capacity two over three periods; small enough for every
/// exact comparison.
pub fn tiny_instance() -> Instance {
    let mut cfg = restrict_slots(&nominal_config(), 2).expect("two slots exist");
    cfg.capacity = 2;
    cfg.horizon = 3;
    Instance::from_config(&cfg).expect("tiny instance is valid")
}

/// Four-slot instance for quick sweeps.
pub fn desk_instance(capacity: u32, phi: f64) -> Result<Instance> {
    sized_instance(&restrict_slots(&nominal_config(), 4)?, capacity, phi)
}

/// Model change applied only when validating.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    #[default]
    None,
    /// Customers arrive at this rate instead of the nominal one.
    Lambda { value: f64 },
    /// Choice parameters carry Gaussian noise of this variance.
    BetaNoise { variance: f64 },
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Perturbation::None => write!(f, "nominal"),
            Perturbation::Lambda { value } => write!(f, "lambda={value}"),
            Perturbation::BetaNoise { variance } => write!(f, "beta_noise={variance}"),
        }
    }
}

/// One cell of the benchmark grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSpec {
    pub id: String,
    /// Nominal parameters before capacity and horizon are applied.
    pub base: InstanceConfig,
    pub demand_factor: f64,
    pub capacity: u32,
    pub lambda_override: Option<f64>,
    pub beta_noise_variance: Option<f64>,
    pub noise_seed: u64,
}

impl ScenarioSpec {
    pub fn new(
        base: InstanceConfig,
        capacity: u32,
        demand_factor: f64,
        perturbation: Perturbation,
        noise_seed: u64,
    ) -> Result<Self> {
        if !(demand_factor > 0.0) || !demand_factor.is_finite() {
            return Err(Error::Config(format!(
                "demand factor must be positive, got {demand_factor}"
            )));
        }
        let (lambda_override, beta_noise_variance) = match perturbation {
            Perturbation::None => (None, None),
            Perturbation::Lambda { value } => (Some(value), None),
            Perturbation::BetaNoise { variance } => (None, Some(variance)),
        };
        Ok(Self {
            id: format!("n{}-c{}-phi{}-{}", base.n_slots, capacity, demand_factor, perturbation),
            base,
            demand_factor,
            capacity,
            lambda_override,
            beta_noise_variance,
            noise_seed,
        })
    }

    pub fn perturbation(&self) -> Perturbation {
        match (self.lambda_override, self.beta_noise_variance) {
            (Some(value), _) => Perturbation::Lambda { value },
            (None, Some(variance)) => Perturbation::BetaNoise { variance },
            (None, None) => Perturbation::None,
        }
    }

    pub fn is_perturbed(&self) -> bool {
        self.perturbation() != Perturbation::None
    }

    /// The nominal model, which every algorithm trains on.
    pub fn training_instance(&self) -> Result<Instance> {
        sized_instance(&self.base, self.capacity, self.demand_factor)
    }

    /// The model customers actually follow during validation. Horizon and
    /// cost stay those of the training instance.
    pub fn validation_instance(&self) -> Result<Instance> {
        let mut inst = self.training_instance()?;
        if let Some(lambda) = self.lambda_override {
            inst.arrival_rate = lambda;
        }
        if let Some(variance) = self.beta_noise_variance {
            inst.mnl = corrupt_betas(&inst.mnl, variance, self.noise_seed)?;
        }
        inst.validate()?;
        Ok(inst)
    }
}

/// Grid of benchmark cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Nominal parameters; the bundled 17-slot set when absent.
    #[serde(default)]
    pub base: Option<InstanceConfig>,
    /// Keep only the first `n_slots` slots of the base set.
    #[serde(default)]
    pub n_slots: Option<usize>,
    pub capacities: Vec<u32>,
    pub demand_factors: Vec<f64>,
    #[serde(default = "nominal_only")]
    pub perturbations: Vec<Perturbation>,
    /// Seed of the noise draws; the run's master seed when absent.
    #[serde(default)]
    pub noise_seed: Option<u64>,
}

fn nominal_only() -> Vec<Perturbation> {
    vec![Perturbation::None]
}

impl GridConfig {
    /// Four slots, capacities {2, 4, 6}, all seven demand factors.
    pub fn desk() -> Self {
        Self {
            base: None,
            n_slots: Some(4),
            capacities: vec![2, 4, 6],
            demand_factors: DEMAND_FACTORS.to_vec(),
            perturbations: nominal_only(),
            noise_seed: None,
        }
    }

    pub fn base_config(&self) -> Result<InstanceConfig> {
        let base = self.base.clone().unwrap_or_else(nominal_config);
        match self.n_slots {
            Some(n) => restrict_slots(&base, n),
            None => Ok(base),
        }
    }
}

/// Cartesian product capacities x demand factors x perturbations.
pub fn build_grid(cfg: &GridConfig) -> Result<Vec<ScenarioSpec>> {
    let base = cfg.base_config()?;
    let mut specs = Vec::with_capacity(cfg.capacities.len() * cfg.demand_factors.len() * cfg.perturbations.len());
    for &capacity in &cfg.capacities {
        for &phi in &cfg.demand_factors {
            for &p in &cfg.perturbations {
                let spec = ScenarioSpec::new(base.clone(), capacity, phi, p, cfg.noise_seed.unwrap_or(0))?;
                // fail early rather than inside a worker
                spec.validation_instance()?;
                specs.push(spec);
            }
        }
    }
    Ok(specs)
}

#[derive(Debug, Serialize)]
struct ManifestRow<'a> {
    id: &'a str,
    n_slots: usize,
    capacity: u32,
    demand_factor: f64,
    horizon: usize,
    var_cost: f64,
    lambda_train: f64,
    lambda_validate: f64,
    beta_noise_variance: Option<f64>,
    noise_seed: u64,
    train_fingerprint: String,
    validate_fingerprint: String,
}

pub fn write_grid_manifest<W: Write>(specs: &[ScenarioSpec], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for spec in specs {
        let train = spec.training_instance()?;
        let val = spec.validation_instance()?;
        w.serialize(ManifestRow {
            id: &spec.id,
            n_slots: train.n_slots,
            capacity: train.capacity,
            demand_factor: spec.demand_factor,
            horizon: train.horizon,
            var_cost: train.cost.var_cost_per_order,
            lambda_train: train.arrival_rate,
            lambda_validate: val.arrival_rate,
            beta_noise_variance: spec.beta_noise_variance,
            noise_seed: spec.noise_seed,
            train_fingerprint: train.fingerprint(),
            validate_fingerprint: val.fingerprint(),
        })?;
    }
    w.flush()?;
    Ok(())
}
