//! Run configuration files and the benchmark harness: train, validate every
//! checkpoint, keep the best one, and re-validate it on perturbed models.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Instance, InstanceConfig};
use crate::pricing::{PriceOracle, StageSolveConfig};
use crate::scenario::{build_grid, tiny_instance, GridConfig, Perturbation, ScenarioSpec};
use crate::trainer::{train, Algorithm, TrainConfig, TrainedModel};
use crate::validation::{
    validate_policy, validate_policy_in, BernsteinForm, ReportRow, ValidationConfig, ValidationReport,
};
use crate::vfa_affine::StepSizes;
use crate::vfa_gbdp::GbdpConfig;
use crate::vfa_nlsddp::{BiconcaveSolveConfig, InnerSolver, NlsddpConfig};

/// Fraction of the best bound used for the time-to-target column.
pub const TARGET_FRACTION: f64 = 0.95;

/// Inner maximisation used by the dual-cut backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerChoice {
    #[default]
    Local,
    ExhaustiveGrid,
    ExhaustiveNewton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub algorithm: Algorithm,
    pub i_max: usize,
    pub checkpoint_every: Option<usize>,
    pub stage: StageSolveConfig,
    pub affine_steps: StepSizes,
    pub nlsddp_inner: InnerChoice,
    pub grid_points: usize,
    pub biconcave: BiconcaveSolveConfig,
    pub gbdp: GbdpConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Gbdp,
            i_max: 50,
            checkpoint_every: None,
            stage: StageSolveConfig::default(),
            affine_steps: StepSizes::default(),
            nlsddp_inner: InnerChoice::Local,
            grid_points: 21,
            biconcave: BiconcaveSolveConfig::default(),
            gbdp: GbdpConfig::default(),
        }
    }
}

impl TrainSettings {
    pub fn train_config(&self, algorithm: Algorithm, seed: u64) -> TrainConfig {
        let inner = match self.nlsddp_inner {
            InnerChoice::Local => InnerSolver::Local,
            InnerChoice::ExhaustiveGrid => InnerSolver::Exhaustive(PriceOracle::Grid {
                points: self.grid_points,
            }),
            InnerChoice::ExhaustiveNewton => InnerSolver::Exhaustive(PriceOracle::Newton(self.stage)),
        };
        TrainConfig {
            algorithm,
            i_max: self.i_max,
            seed,
            checkpoint_every: self.checkpoint_every,
            stage: self.stage,
            affine_steps: self.affine_steps,
            nlsddp: NlsddpConfig {
                inner,
                biconcave: self.biconcave,
                stage: self.stage,
            },
            gbdp: self.gbdp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSettings {
    pub k_max: usize,
    pub alpha: f64,
    pub bernstein: BernsteinForm,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        Self {
            k_max: 100,
            alpha: 0.01,
            bernstein: BernsteinForm::Verbatim,
        }
    }
}

impl ValidationSettings {
    pub fn validation_config(&self, seed: u64, stage: StageSolveConfig) -> ValidationConfig {
        ValidationConfig {
            k_max: self.k_max,
            alpha: self.alpha,
            seed,
            bernstein: self.bernstein,
            stage,
        }
    }
}

fn all_algorithms() -> Vec<Algorithm> {
    Algorithm::ALL.to_vec()
}

/// Contents of a run configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Instance for `train`, `validate` and `oracle`; the tiny instance when absent.
    pub instance: Option<InstanceConfig>,
    pub seed: u64,
    pub train: TrainSettings,
    pub validation: ValidationSettings,
    /// Benchmark grid for `sweep`.
    pub grid: Option<GridConfig>,
    /// Algorithms compared by `sweep`.
    pub algorithms: Vec<Algorithm>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            instance: None,
            seed: 0,
            train: TrainSettings::default(),
            validation: ValidationSettings::default(),
            grid: None,
            algorithms: all_algorithms(),
        }
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn instance(&self) -> Result<Instance> {
        match &self.instance {
            Some(cfg) => Instance::from_config(cfg),
            None => Ok(tiny_instance()),
        }
    }

    /// The sweep grid, with noise drawn from the master seed unless pinned.
    pub fn grid(&self) -> GridConfig {
        let mut g = self.grid.clone().unwrap_or_else(GridConfig::desk);
        g.noise_seed.get_or_insert(self.seed);
        g
    }
}

/// A trained model with every checkpoint validated.
#[derive(Debug, Clone)]
pub struct AlgorithmRun {
    pub model: TrainedModel,
    /// `(iteration, report)` for every checkpoint, in order.
    pub series: Vec<(usize, ValidationReport)>,
    /// Index into `series` of the highest bound.
    pub best: usize,
}

impl AlgorithmRun {
    pub fn best_iteration(&self) -> usize {
        self.series[self.best].0
    }

    pub fn best_report(&self) -> &ValidationReport {
        &self.series[self.best].1
    }

    pub fn bounds(&self) -> Vec<f64> {
        self.series.iter().map(|(_, r)| r.bound_best).collect()
    }

    /// First checkpoint reaching `fraction` of the best bound.
    pub fn iterations_to(&self, fraction: f64) -> usize {
        self.series[index_reaching(&self.bounds(), fraction)].0
    }

    /// Training wall time up to and including `iteration`.
    pub fn seconds_until(&self, iteration: usize) -> f64 {
        self.model.wall_ms.iter().take(iteration).sum::<f64>() / 1e3
    }
}

/// Index of the largest value; the earliest on ties.
pub fn select_best(bounds: &[f64]) -> usize {
    let mut best = 0;
    for (i, &b) in bounds.iter().enumerate() {
        if b > bounds[best] {
            best = i;
        }
    }
    best
}

/// Index of the first value at least `fraction` times the maximum.
pub fn index_reaching(bounds: &[f64], fraction: f64) -> usize {
    let max = bounds[select_best(bounds)];
    bounds.iter().position(|&b| b >= fraction * max).unwrap_or(0)
}

/// Trains on `inst` and validates each checkpoint on it.
pub fn train_and_validate(inst: &Instance, tcfg: &TrainConfig, vcfg: &ValidationConfig) -> Result<AlgorithmRun> {
    let model = train(inst, tcfg)?;
    let series = model
        .checkpoints
        .iter()
        .map(|&it| validate_policy(inst, &model.snapshot(it), vcfg).map(|r| (it, r)))
        .collect::<Result<Vec<_>>>()?;
    let best = select_best(&series.iter().map(|(_, r)| r.bound_best).collect::<Vec<_>>());
    Ok(AlgorithmRun { model, series, best })
}

/// One line of the consolidated sweep results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub scenario_id: String,
    pub algorithm: Algorithm,
    pub n_slots: usize,
    pub capacity: u32,
    pub demand_factor: f64,
    pub perturbation: String,
    pub horizon: usize,
    pub train_fingerprint: String,
    pub validate_fingerprint: String,
    pub best_iteration: usize,
    pub iterations_to_95: usize,
    pub k_max: usize,
    pub alpha: f64,
    pub mean: f64,
    pub sigma: f64,
    pub l_b: f64,
    pub l_d: f64,
    pub best_bound: f64,
    pub nominal_best_bound: f64,
    /// `best_bound / nominal_best_bound - 1`.
    pub relative_change: f64,
}

/// Wall-clock figures, kept out of the reproducible outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub scenario_id: String,
    pub algorithm: Algorithm,
    pub train_seconds: f64,
    pub seconds_to_95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub scenario_id: String,
    pub algorithm: Algorithm,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    pub results: Vec<SweepRow>,
    /// Validation report of every nominal checkpoint.
    pub series: Vec<ReportRow>,
    pub timing: Vec<TimingRow>,
    pub failures: Vec<CellFailure>,
}

impl SweepOutput {
    pub fn write_results_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(RESULTS_HEADER, &self.results, out)
    }

    pub fn write_timing_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(TIMING_HEADER, &self.timing, out)
    }

    pub fn write_failures_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(FAILURES_HEADER, &self.failures, out)
    }
}

pub const RESULTS_HEADER: &[&str] = &[
    "scenario_id",
    "algorithm",
    "n_slots",
    "capacity",
    "demand_factor",
    "perturbation",
    "horizon",
    "train_fingerprint",
    "validate_fingerprint",
    "best_iteration",
    "iterations_to_95",
    "k_max",
    "alpha",
    "mean",
    "sigma",
    "l_b",
    "l_d",
    "best_bound",
    "nominal_best_bound",
    "relative_change",
];
pub const TIMING_HEADER: &[&str] = &["scenario_id", "algorithm", "train_seconds", "seconds_to_95"];
pub const FAILURES_HEADER: &[&str] = &["scenario_id", "algorithm", "error"];

/// Writes `header` even when there are no rows.
pub(crate) fn write_rows<T: Serialize, W: Write>(header: &[&str], rows: &[T], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Specs that share a training instance.
struct Cell {
    nominal_id: String,
    specs: Vec<ScenarioSpec>,
}

fn group_cells(specs: Vec<ScenarioSpec>) -> Result<Vec<Cell>> {
    let mut cells: Vec<Cell> = Vec::new();
    for spec in specs {
        let nominal = ScenarioSpec::new(
            spec.base.clone(),
            spec.capacity,
            spec.demand_factor,
            Perturbation::None,
            spec.noise_seed,
        )?;
        match cells.iter_mut().find(|c| c.nominal_id == nominal.id) {
            Some(c) => c.specs.push(spec),
            None => cells.push(Cell {
                nominal_id: nominal.id,
                specs: vec![spec],
            }),
        }
    }
    Ok(cells)
}

struct UnitOutput {
    results: Vec<SweepRow>,
    series: Vec<ReportRow>,
    timing: TimingRow,
}

fn run_unit(cell: &Cell, algorithm: Algorithm, cfg: &RunConfig) -> Result<UnitOutput> {
    let train_inst = cell.specs[0].training_instance()?;
    let tcfg = cfg.train.train_config(algorithm, cfg.seed);
    let vcfg = cfg.validation.validation_config(cfg.seed, cfg.train.stage);
    let run = train_and_validate(&train_inst, &tcfg, &vcfg)?;
    let best_iteration = run.best_iteration();
    let nominal = run.best_report().clone();
    let best_value = run.model.snapshot(best_iteration);
    let to_95 = run.iterations_to(TARGET_FRACTION);

    let mut results = Vec::with_capacity(cell.specs.len());
    for spec in &cell.specs {
        let world = spec.validation_instance()?;
        let report = if spec.is_perturbed() {
            validate_policy_in(&world, &train_inst, &best_value, &vcfg)?
        } else {
            nominal.clone()
        };
        results.push(SweepRow {
            scenario_id: spec.id.clone(),
            algorithm,
            n_slots: train_inst.n_slots,
            capacity: spec.capacity,
            demand_factor: spec.demand_factor,
            perturbation: spec.perturbation().to_string(),
            horizon: train_inst.horizon,
            train_fingerprint: train_inst.fingerprint(),
            validate_fingerprint: world.fingerprint(),
            best_iteration,
            iterations_to_95: to_95,
            k_max: report.k_max(),
            alpha: report.alpha,
            mean: report.mean,
            sigma: report.sigma,
            l_b: report.bound_bernstein,
            l_d: report.bound_dkw,
            best_bound: report.bound_best,
            nominal_best_bound: nominal.bound_best,
            relative_change: relative_change(report.bound_best, nominal.bound_best),
        });
    }
    let series = run
        .series
        .iter()
        .map(|(it, r)| ReportRow::new(&cell.nominal_id, algorithm.as_str(), *it, r))
        .collect();
    Ok(UnitOutput {
        results,
        series,
        timing: TimingRow {
            scenario_id: cell.nominal_id.clone(),
            algorithm,
            train_seconds: run.seconds_until(usize::MAX),
            seconds_to_95: run.seconds_until(to_95),
        },
    })
}

/// `value / reference - 1`, or 0 when the reference is not positive.
pub fn relative_change(value: f64, reference: f64) -> f64 {
    if reference > 0.0 {
        value / reference - 1.0
    } else {
        0.0
    }
}

/// Trains every algorithm on every grid cell and validates the best
/// checkpoint on each requested model. Cells run on the current rayon pool;
/// a failing cell is recorded and the rest carry on.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepOutput> {
    let specs = build_grid(&cfg.grid())?;
    if cfg.algorithms.is_empty() {
        return Err(Error::Config("no algorithms to sweep".into()));
    }
    cfg.validation.validation_config(cfg.seed, cfg.train.stage).validate()?;
    let cells = group_cells(specs)?;
    let units: Vec<(&Cell, Algorithm)> = cells
        .iter()
        .flat_map(|c| cfg.algorithms.iter().map(move |&a| (c, a)))
        .collect();
    let outputs: Vec<Result<UnitOutput>> = units
        .par_iter()
        .map(|&(cell, algorithm)| {
            log::info!("sweep: {} / {algorithm}", cell.nominal_id);
            run_unit(cell, algorithm, cfg)
        })
        .collect();
    let mut out = SweepOutput::default();
    for ((cell, algorithm), res) in units.iter().zip(outputs) {
        match res {
            Ok(u) => {
                out.results.extend(u.results);
                out.series.extend(u.series);
                out.timing.push(u.timing);
            }
            Err(e) => {
                log::error!("sweep cell {} / {algorithm} failed: {e}", cell.nominal_id);
                out.failures.push(CellFailure {
                    scenario_id: cell.nominal_id.clone(),
                    algorithm: *algorithm,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn serde_header<T: Serialize>(row: &T) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(row).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        text.lines().next().unwrap().to_string()
    }

    #[test]
    fn fixed_headers_match_the_row_types() {
        let timing = TimingRow {
            scenario_id: "a".into(),
            algorithm: Algorithm::Gbdp,
            train_seconds: 0.0,
            seconds_to_95: 0.0,
        };
        assert_eq!(serde_header(&timing), TIMING_HEADER.join(","));
        let failure = CellFailure {
            scenario_id: "a".into(),
            algorithm: Algorithm::Affine,
            error: "e".into(),
        };
        assert_eq!(serde_header(&failure), FAILURES_HEADER.join(","));
        let report = ValidationReport::from_samples(vec![1.0, 2.0], 0.0, 3.0, 0.1, Default::default()).unwrap();
        let row = ReportRow::new("a", "gbdp", 1, &report);
        assert_eq!(serde_header(&row), crate::validation::REPORT_HEADER.join(","));
    }

    #[test]
    fn best_and_target_indices() {
        let b = [1.0, 5.0, 3.0, 5.0, 4.9];
        assert_eq!(select_best(&b), 1);
        assert_eq!(index_reaching(&b, 0.95), 1);
        assert_eq!(index_reaching(&[0.0, 0.0], 0.95), 0);
        assert_eq!(index_reaching(&[96.0, 90.0, 100.0], 0.95), 0);
    }

    #[test]
    fn run_config_defaults_and_rejection() {
        let cfg = RunConfig::from_json_str("{}").unwrap();
        assert_eq!(cfg.algorithms, Algorithm::ALL.to_vec());
        assert_eq!(cfg.validation.k_max, 100);
        assert_eq!(cfg.validation.alpha, 0.01);
        assert_eq!(cfg.instance().unwrap(), tiny_instance());
        assert!(RunConfig::from_json_str(r#"{"sed": 1}"#).is_err());
        let cfg = RunConfig::from_json_str(r#"{"train": {"algorithm": "nlsddp", "nlsddp_inner": "exhaustive_grid"}}"#)
            .unwrap();
        let tcfg = cfg.train.train_config(Algorithm::Nlsddp, 3);
        assert_eq!(
            tcfg.nlsddp.inner,
            InnerSolver::Exhaustive(PriceOracle::Grid { points: 21 })
        );
    }

    #[test]
    fn sweep_row_counts() {
        let mut cfg = RunConfig::default();
        cfg.train.i_max = 2;
        cfg.validation.k_max = 10;
        let mut grid = GridConfig::desk();
        grid.n_slots = Some(2);
        grid.capacities = vec![1, 2];
        grid.demand_factors = vec![0.25, 0.5, 1.0];
        cfg.grid = Some(grid.clone());
        let out = run_sweep(&cfg).unwrap();
        assert!(out.failures.is_empty());
        assert_eq!(out.results.len(), 18);
        assert_eq!(out.timing.len(), 18);
        assert_eq!(out.series.len(), 18 * 2);

        grid.capacities = vec![1];
        grid.demand_factors = vec![1.0];
        grid.perturbations = vec![
            Perturbation::Lambda { value: 0.6 },
            Perturbation::BetaNoise { variance: 1.0 },
        ];
        cfg.grid = Some(grid);
        let out = run_sweep(&cfg).unwrap();
        assert_eq!(out.results.len(), 6);
        for r in &out.results {
            assert_ne!(r.train_fingerprint, r.validate_fingerprint);
            assert!((r.relative_change - relative_change(r.best_bound, r.nominal_best_bound)).abs() < 1e-15);
        }
    }
}
