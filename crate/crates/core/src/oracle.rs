//! Properties checked against the exact dynamic program on an instance
//! small enough to enumerate.

use crate::cuts::{CutFamily, Hyperplane};
use crate::error::Result;
use crate::exact_dp::{
    bellman_apply, evaluate_policy, fixed_point, solve_exact_steps, ExactValueTable, DEFAULT_BUDGET,
};
use crate::model::{Instance, Price};
use crate::pricing::{PriceOracle, StageSolveConfig};
use crate::trainer::{train, Algorithm, TrainConfig};
use crate::value::{greedy_prices, ValueFamily, ValueFn};
use crate::vfa_nlsddp::InnerSolver;

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl PropertyCheck {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOptions {
    pub i_max: usize,
    pub seed: u64,
    pub budget: u64,
    /// Slack allowed below the exact value.
    pub tol: f64,
    pub stage: StageSolveConfig,
    /// Adds a plane below the exact value to the trained cut family, to
    /// show the upper-bound check can fail.
    pub inject_invalid_cut: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            i_max: 50,
            seed: 0,
            budget: DEFAULT_BUDGET,
            tol: 1e-6,
            stage: StageSolveConfig::default(),
            inject_invalid_cut: false,
        }
    }
}

/// States with room left in every slot.
pub fn interior_states(inst: &Instance) -> Vec<Vec<u32>> {
    inst.state_space()
        .iter()
        .filter(|x| x.iter().all(|&v| v < inst.capacity))
        .map(|x| x.into_inner())
        .collect()
}

/// Largest `|T V*(x) - V*(x)|` over interior states.
pub fn fixed_point_residual(inst: &Instance, oracle: &PriceOracle) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for x in interior_states(inst) {
        let (tv, _) = bellman_apply(inst, |y| fixed_point(inst, y), &x, oracle)?;
        worst = worst.max((tv - fixed_point(inst, &x)).abs());
    }
    Ok(worst)
}

/// Largest `|V_t(x) - (T V_{t+1})(x)|` recomputed from the table.
pub fn recursion_residual(inst: &Instance, table: &ExactValueTable, oracle: &PriceOracle) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for t in table.first_time()..=table.horizon() {
        for x in inst.state_space().iter() {
            let (tv, _) = bellman_apply(inst, |y| table.value(t + 1, y), &x, oracle)?;
            worst = worst.max((tv - table.value(t, &x)).abs());
        }
    }
    Ok(worst)
}

/// Smallest `Q_t(x) - V_t(x)` over all decision times and states.
pub fn min_gap<F: ValueFamily + ?Sized>(inst: &Instance, q: &F, exact: &ExactValueTable) -> f64 {
    let mut worst = f64::INFINITY;
    for t in 1..=inst.horizon {
        for x in inst.state_space().iter() {
            worst = worst.min(q.value(t, &x) - exact.value(t, &x));
        }
    }
    worst
}

/// Smallest `H(x) - V_t(x)` over every individual plane of the family.
pub fn min_plane_gap(inst: &Instance, family: &CutFamily, exact: &ExactValueTable) -> f64 {
    let mut worst = f64::INFINITY;
    for (t, plane) in family.planes() {
        if t > inst.horizon {
            continue;
        }
        for x in inst.state_space().iter() {
            worst = worst.min(plane.eval(&x) - exact.value(t, &x));
        }
    }
    worst
}

/// Largest difference between charge vectors chosen at interior states of
/// the same period.
pub fn interior_price_spread<F: ValueFamily + ?Sized>(inst: &Instance, q: &F, stage: &StageSolveConfig) -> Result<f64> {
    let states = interior_states(inst);
    let mut worst: f64 = 0.0;
    for t in 1..=inst.horizon {
        let mut reference: Option<Vec<Price>> = None;
        for x in &states {
            let prices = greedy_prices(inst, q, t, x, stage)?.prices.0;
            match &reference {
                None => reference = Some(prices),
                Some(r) => worst = worst.max(price_distance(r, &prices)),
            }
        }
    }
    Ok(worst)
}

fn price_distance(a: &[Price], b: &[Price]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| match (p, q) {
            (Price::Charge(u), Price::Charge(v)) => (u - v).abs(),
            (Price::Unavailable, Price::Unavailable) => 0.0,
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

fn cut_family(value: ValueFn) -> CutFamily {
    match value {
        ValueFn::Cuts(c) => c,
        _ => unreachable!("cut backends return cut families"),
    }
}

/// Runs every property and reports each outcome. Instances beyond the
/// budget are refused with [`Error::BudgetExceeded`] before any work.
pub fn run_oracle_suite(inst: &Instance, opts: &OracleOptions) -> Result<Vec<PropertyCheck>> {
    let newton = PriceOracle::Newton(opts.stage);
    let exact = solve_exact_steps(inst, inst.horizon, &newton, opts.budget)?;
    let grid_exact = solve_exact_steps(inst, inst.horizon, &PriceOracle::default(), opts.budget)?;
    let mut out = Vec::new();

    let r = fixed_point_residual(inst, &newton)?;
    out.push(PropertyCheck::new(
        "fixed_point_residual",
        r <= 1e-6,
        format!("max |TV* - V*| = {r:.3e}"),
    ));

    let r = recursion_residual(inst, &exact, &newton)?;
    out.push(PropertyCheck::new(
        "exact_recursion_residual",
        r <= 1e-9 + opts.stage.newton_tol,
        format!("max |V_t - TV_t+1| = {r:.3e}"),
    ));

    let margin = min_gap(inst, &ValueFn::Exact(exact.clone()), &grid_exact);
    out.push(PropertyCheck::new(
        "newton_dominates_grid",
        margin >= -opts.tol,
        format!("min V_newton - V_grid = {margin:.3e}"),
    ));

    let mut below_fp = f64::INFINITY;
    for t in 1..=inst.horizon {
        for x in inst.state_space().iter() {
            below_fp = below_fp.min(fixed_point(inst, &x) - exact.value(t, &x));
        }
    }
    out.push(PropertyCheck::new(
        "fixed_point_bounds_exact",
        below_fp >= -opts.tol,
        format!("min V* - V_t = {below_fp:.3e}"),
    ));

    let exact_fn = ValueFn::Exact(exact.clone());
    let policy = evaluate_policy(inst, &exact_fn, &opts.stage)?;
    let v0 = exact.value(1, &vec![0; inst.n_slots]);
    out.push(PropertyCheck::new(
        "exact_policy_attains_value",
        (policy - v0).abs() <= 1e-6 * v0.abs().max(1.0),
        format!("policy {policy:.9} vs V_1(0) {v0:.9}"),
    ));

    let mut gcfg = TrainConfig::new(Algorithm::Gbdp, opts.i_max, opts.seed);
    gcfg.stage = opts.stage;
    gcfg.gbdp.stage = opts.stage;
    let gbdp = train(inst, &gcfg)?;
    let mut worst = f64::INFINITY;
    for &it in &gbdp.checkpoints {
        let mut snap = cut_family(gbdp.snapshot(it));
        if opts.inject_invalid_cut {
            let below = exact.value(1, &vec![0; inst.n_slots]) - 1.0;
            snap.layer_mut(1).push(Hyperplane::new(vec![0.0; inst.n_slots], below));
        }
        worst = worst.min(min_gap(inst, &snap, &exact));
    }
    out.push(PropertyCheck::new(
        "gbdp_upper_bound",
        worst >= -opts.tol,
        format!(
            "min Q_t - V_t over {} checkpoints = {worst:.3e}",
            gbdp.checkpoints.len()
        ),
    ));

    let mut ncfg = TrainConfig::new(Algorithm::Nlsddp, opts.i_max, opts.seed);
    ncfg.stage = opts.stage;
    ncfg.nlsddp.inner = InnerSolver::Exhaustive(newton);
    ncfg.nlsddp.stage = opts.stage;
    let nlsddp = cut_family(train(inst, &ncfg)?.final_value);
    let worst = min_plane_gap(inst, &nlsddp, &exact);
    out.push(PropertyCheck::new(
        "nlsddp_exhaustive_cut_validity",
        worst >= -opts.tol,
        format!("min H - V_t over {} planes = {worst:.3e}", nlsddp.total_cuts()),
    ));

    let mut acfg = TrainConfig::new(Algorithm::Affine, opts.i_max, opts.seed);
    acfg.stage = opts.stage;
    let affine = train(inst, &acfg)?;
    let spread = interior_price_spread(inst, &affine.snapshot(0), &opts.stage)?.max(interior_price_spread(
        inst,
        &affine.final_value,
        &opts.stage,
    )?);
    out.push(PropertyCheck::new(
        "affine_feedforward",
        spread <= 1e-6,
        format!("max charge spread across interior states = {spread:.3e}"),
    ));
    Ok(out)
}
