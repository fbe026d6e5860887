//! `slotpricing` command-line driver.
//!
//! Exit codes: 0 success, 1 property failure or runtime error, 2 bad
//! configuration, 3 refused for exceeding the state-space budget.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use slotpricing::cuts::write_cuts_csv;
use slotpricing::exact_dp::DEFAULT_BUDGET;
use slotpricing::experiment::{run_sweep, train_and_validate, RunConfig};
use slotpricing::oracle::{run_oracle_suite, OracleOptions};
use slotpricing::scenario::{build_grid, derive_geometry, derive_horizon, write_grid_manifest};
use slotpricing::trainer::{train, Algorithm, TrainedModel};
use slotpricing::validation::{write_report_csv, ReportRow};
use slotpricing::value::ValueFn;
use slotpricing::vfa_affine::write_params_csv;
use slotpricing::Error;

mod plot;

#[derive(Parser, Debug)]
#[command(name = "slotpricing", version = env!("SLOTPRICING_DESCRIBE"), about = "Delivery slot pricing by approximate dynamic programming")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one algorithm and export its value function.
    Train(RunArgs),
    /// Train, then validate every checkpoint.
    Validate(RunArgs),
    /// Train and validate all algorithms on every cell of a scenario grid.
    Sweep(SweepArgs),
    /// Check the approximations against exact dynamic programming.
    Oracle(OracleArgs),
    /// Print the service-area geometry for a slot capacity.
    Geometry(GeometryArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    i_max: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    i_max: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    i_max: Option<usize>,
    /// Largest state count times horizon the suite will attempt.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
    /// Plant a plane below the exact value to exercise the failure path.
    #[arg(long)]
    inject_invalid_cut: bool,
}

#[derive(Args, Debug)]
struct GeometryArgs {
    #[arg(long)]
    capacity: u32,
    #[arg(long, default_value_t = 25.0)]
    truck_speed: f64,
    #[arg(long, default_value_t = 0.25)]
    cost_per_mile: f64,
    /// Also print the horizon for this demand factor.
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long, default_value_t = 17)]
    n_slots: usize,
    #[arg(long, default_value_t = 0.8)]
    lambda: f64,
}

/// Written next to every set of outputs. Timestamps live only here, so the
/// CSV files stay byte-identical across runs with the same seed.
#[derive(Serialize)]
struct RunManifest {
    schema_version: u32,
    command: String,
    config_path: Option<PathBuf>,
    seed: u64,
    version: &'static str,
    output_dir: PathBuf,
    started_unix_s: f64,
    finished_unix_s: f64,
    outputs: Vec<String>,
    failures: Vec<serde_json::Value>,
}

enum Failure {
    Property(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

type CmdResult = Result<(), Failure>;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidInstance(_) | Error::Json(_) => 2,
        Error::BudgetExceeded { .. } => 3,
        _ => 1,
    }
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, Failure> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn finish(
        self,
        command: &str,
        common: &Common,
        seed: u64,
        started: f64,
        failures: Vec<serde_json::Value>,
    ) -> CmdResult {
        let manifest = RunManifest {
            schema_version: 1,
            command: command.into(),
            config_path: common.config.clone(),
            seed,
            version: env!("SLOTPRICING_DESCRIBE"),
            output_dir: self.dir.clone(),
            started_unix_s: started,
            finished_unix_s: now(),
            outputs: self.files,
            failures,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(Error::from)?;
        fs::write(self.dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}

fn apply_overrides(
    cfg: &mut RunConfig,
    seed: Option<u64>,
    i_max: Option<usize>,
    k_max: Option<usize>,
    alpha: Option<f64>,
) {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(i) = i_max {
        cfg.train.i_max = i;
    }
    if let Some(k) = k_max {
        cfg.validation.k_max = k;
    }
    if let Some(a) = alpha {
        cfg.validation.alpha = a;
    }
}

fn export_model(outputs: &mut Outputs, model: &TrainedModel) -> CmdResult {
    model.write_metrics_csv(outputs.create("metrics.csv")?)?;
    model.write_timing_csv(outputs.create("timing.csv")?)?;
    match &model.final_value {
        ValueFn::Cuts(c) => write_cuts_csv(c, outputs.create("cuts.csv")?)?,
        ValueFn::Affine(_) => write_params_csv(&model.affine_history, outputs.create("params.csv")?)?,
        ValueFn::Exact(e) => e.write_csv(outputs.create("values.csv")?)?,
    }
    let mut w = csv_writer(outputs.create("checkpoints.csv")?);
    w.write_record(["iteration", "num_cuts_or_params"])
        .map_err(Error::from)?;
    for &it in &model.checkpoints {
        let size = model
            .metrics
            .get(it.wrapping_sub(1))
            .map_or(0, |m| m.num_cuts_or_params);
        w.write_record([it.to_string(), size.to_string()])
            .map_err(Error::from)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_writer<W: std::io::Write>(w: W) -> csv::Writer<W> {
    csv::Writer::from_writer(w)
}

fn cmd_train(args: RunArgs, validate: bool) -> CmdResult {
    let started = now();
    let mut cfg = load_config(args.common.config.as_deref())?;
    apply_overrides(&mut cfg, args.common.seed, args.i_max, args.k_max, args.alpha);
    let algorithm = args.algorithm.unwrap_or(cfg.train.algorithm);
    let inst = cfg.instance()?;
    let tcfg = cfg.train.train_config(algorithm, cfg.seed);
    tcfg.validate()?;
    let vcfg = cfg.validation.validation_config(cfg.seed, cfg.train.stage);
    if validate {
        vcfg.validate()?;
    }
    let mut outputs = Outputs::new(&args.common.out)?;
    let command = if validate { "validate" } else { "train" };
    if validate {
        let run = train_and_validate(&inst, &tcfg, &vcfg)?;
        export_model(&mut outputs, &run.model)?;
        let id = format!("instance-{}", inst.fingerprint());
        let rows: Vec<ReportRow> = run
            .series
            .iter()
            .map(|(it, r)| ReportRow::new(&id, algorithm.as_str(), *it, r))
            .collect();
        write_report_csv(&rows, outputs.create("report.csv")?)?;
        let best = run.best_report();
        println!(
            "{algorithm}: best checkpoint {} with bound {:.4} (mean {:.4}, k = {}, alpha = {})",
            run.best_iteration(),
            best.bound_best,
            best.mean,
            best.k_max(),
            best.alpha
        );
    } else {
        let model = train(&inst, &tcfg)?;
        export_model(&mut outputs, &model)?;
        if model.failed_updates > 0 {
            eprintln!("warning: {} updates were skipped", model.failed_updates);
        }
        println!(
            "{algorithm}: {} iterations, {} parameters",
            tcfg.i_max,
            model.final_value.size()
        );
    }
    outputs.finish(command, &args.common, cfg.seed, started, Vec::new())
}

fn cmd_sweep(args: SweepArgs) -> CmdResult {
    let started = now();
    let mut cfg = load_config(args.common.config.as_deref())?;
    apply_overrides(&mut cfg, args.common.seed, args.i_max, args.k_max, args.alpha);
    cfg.train
        .train_config(cfg.algorithms.first().copied().unwrap_or(Algorithm::Gbdp), cfg.seed)
        .validate()?;
    let specs = build_grid(&cfg.grid())?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = args.workers {
        if w == 0 {
            return Err(Error::Config("--workers must be at least 1".into()).into());
        }
        pool = pool.num_threads(w);
    }
    let pool = pool.build().map_err(|e| Error::Config(e.to_string()))?;
    let result = pool.install(|| run_sweep(&cfg))?;

    let mut outputs = Outputs::new(&args.common.out)?;
    write_grid_manifest(&specs, outputs.create("grid.csv")?)?;
    result.write_results_csv(outputs.create("results.csv")?)?;
    write_report_csv(&result.series, outputs.create("series.csv")?)?;
    result.write_timing_csv(outputs.create("timing.csv")?)?;
    result.write_failures_csv(outputs.create("failures.csv")?)?;
    fs::write(outputs.dir.join("plot_profit.py"), plot::PROFIT_SCRIPT)?;
    outputs.files.push("plot_profit.py".into());
    println!(
        "{} result rows, {} failed cells",
        result.results.len(),
        result.failures.len()
    );
    for f in &result.failures {
        eprintln!("failed: {} / {}: {}", f.scenario_id, f.algorithm, f.error);
    }
    let failures = result
        .failures
        .iter()
        .map(|f| serde_json::to_value(f).map_err(Error::from))
        .collect::<Result<Vec<_>, _>>()?;
    outputs.finish("sweep", &args.common, cfg.seed, started, failures)
}

fn cmd_oracle(args: OracleArgs) -> CmdResult {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let inst = cfg.instance()?;
    let opts = OracleOptions {
        i_max: args.i_max.unwrap_or(cfg.train.i_max),
        seed: cfg.seed,
        budget: args.budget,
        stage: cfg.train.stage,
        inject_invalid_cut: args.inject_invalid_cut,
        ..OracleOptions::default()
    };
    let checks = run_oracle_suite(&inst, &opts)?;
    let mut failed = Vec::new();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        if !c.passed {
            failed.push(c.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Property(format!(
            "{} of {} properties failed: {}",
            failed.len(),
            checks.len(),
            failed.join(", ")
        )))
    }
}

fn cmd_geometry(args: GeometryArgs) -> CmdResult {
    let g = derive_geometry(args.capacity, args.truck_speed, args.cost_per_mile)?;
    println!("capacity = {}", args.capacity);
    println!("width = {}", g.width);
    println!("length = {}", g.length);
    println!("var_cost = {}", g.var_cost);
    if let Some(phi) = args.phi {
        if !(phi > 0.0 && args.lambda > 0.0) || args.n_slots == 0 {
            return Err(Error::Config("phi, lambda and n_slots must be positive".into()).into());
        }
        println!(
            "horizon = {}",
            derive_horizon(phi, args.n_slots, args.capacity, args.lambda)
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, false),
        Command::Validate(a) => cmd_train(a, true),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Geometry(a) => cmd_geometry(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Property(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
