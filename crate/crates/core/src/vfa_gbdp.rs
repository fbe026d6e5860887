//! Gradient-bounded dynamic programming: hyperplanes interpolating the
//! Bellman image on the simplex corner set `{x + 1_s} U {x}` whenever the
//! next-stage approximation is locally submodular, and a shifted supporting
//! plane otherwise.

use serde::{Deserialize, Serialize};

use crate::cuts::{CutVfa, Hyperplane};
use crate::error::Result;
use crate::model::Instance;
use crate::pricing::{bellman_value, solve_markup, PriceOracle, StageProblem, StageSolveConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdpConfig {
    pub stage: StageSolveConfig,
    /// Absolute tolerance for the supporting set and the submodularity test.
    pub tie_tol: f64,
    /// Drop planes that are nowhere minimal on the corners of the state box.
    pub dominance_filter: bool,
}

impl Default for GbdpConfig {
    fn default() -> Self {
        Self {
            stage: StageSolveConfig::default(),
            tie_tol: 1e-9,
            dominance_filter: false,
        }
    }
}

/// Which branch of the update produced the new plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GbdpCase {
    Interpolated,
    /// Shifted image of supporting plane `index` of the next-stage function.
    Supporting {
        index: usize,
    },
}

/// Points `x + 1_s + 1_s'` for `s, s'` in `{none} U S`, without duplicates.
fn corner_set(x: &[u32]) -> Vec<Vec<u32>> {
    let n = x.len();
    let mut out: Vec<Vec<u32>> = Vec::new();
    for s in 0..=n {
        for s2 in s..=n {
            let mut y = x.to_vec();
            if s > 0 {
                y[s - 1] += 1;
            }
            if s2 > 0 {
                y[s2 - 1] += 1;
            }
            out.push(y);
        }
    }
    out
}

/// Submodularity of `f` on the pairs of `Z(x)` that lie in the state space.
/// A pair whose join leaves the state space holds trivially since `f` is
/// `-inf` there.
pub fn is_submodular_on<F>(f: F, x: &[u32], capacity: u32, tol: f64) -> bool
where
    F: Fn(&[u32]) -> f64,
{
    let inside = |y: &[u32]| y.iter().all(|&v| v <= capacity);
    let z: Vec<Vec<u32>> = corner_set(x).into_iter().filter(|y| inside(y)).collect();
    let values: Vec<f64> = z.iter().map(|y| f(y)).collect();
    for i in 0..z.len() {
        for j in i + 1..z.len() {
            let join: Vec<u32> = z[i].iter().zip(&z[j]).map(|(a, b)| *a.max(b)).collect();
            if !inside(&join) {
                continue;
            }
            let meet: Vec<u32> = z[i].iter().zip(&z[j]).map(|(a, b)| *a.min(b)).collect();
            let lhs = f(&join) + f(&meet);
            let rhs = values[i] + values[j];
            if lhs > rhs + tol * rhs.abs().max(1.0) {
                return false;
            }
        }
    }
    true
}

pub fn submodularity_check(q: &CutVfa, x_sample: &[u32], capacity: u32) -> bool {
    is_submodular_on(|y| q.eval(y), x_sample, capacity, 1e-9)
}

/// Indices of the planes attaining the minimum at `x` within `tol`.
pub fn supporting_hyperplanes(q: &CutVfa, x: &[u32], tol: f64) -> Vec<usize> {
    q.supporting(x, tol)
}

/// Interpolating plane through `(y, (T q)(y))` for `y` in `{x} U {x + 1_s}`.
/// Coordinates whose successor leaves the state space get the fixed-point
/// slope `-(d_high + r)`.
pub fn interpolating_plane(
    inst: &Instance,
    q_next: &CutVfa,
    x: &[u32],
    stage: &StageSolveConfig,
) -> Result<Hyperplane> {
    let oracle = PriceOracle::Newton(*stage);
    let tq = |y: &[u32]| bellman_value(inst, |z| q_next.eval(z), y, &oracle).map(|(v, _)| v);
    let base = tq(x)?;
    let mut slope = Vec::with_capacity(inst.n_slots);
    let mut y = x.to_vec();
    for s in 0..inst.n_slots {
        if x[s] >= inst.capacity {
            slope.push(-inst.max_margin());
        } else {
            y[s] += 1;
            slope.push(tq(&y)? - base);
            y[s] -= 1;
        }
    }
    Ok(Hyperplane::through(x, base, slope))
}

/// `H + lambda f*` with `f*` the stage optimum for margins `r + a_s` and all
/// slots open: an affine majorant of `T H` on the whole state space.
pub fn shifted_plane(inst: &Instance, plane: &Hyperplane, stage: &StageSolveConfig) -> Hyperplane {
    let margins = plane.slope.iter().map(|a| Some(inst.revenue_per_order + a)).collect();
    let sol = solve_markup(&StageProblem::new(inst, margins), stage);
    Hyperplane::new(plane.slope.clone(), plane.intercept + sol.objective)
}

/// One update of layer `q_t` at `x_sample`; appends the new plane.
pub fn gbdp_update(
    inst: &Instance,
    q_t: &mut CutVfa,
    q_next: &CutVfa,
    x_sample: &[u32],
    iteration: usize,
    cfg: &GbdpConfig,
) -> Result<GbdpCase> {
    inst.check_state(x_sample)?;
    let (mut plane, case) = if submodularity_check(q_next, x_sample, inst.capacity) {
        (
            interpolating_plane(inst, q_next, x_sample, &cfg.stage)?,
            GbdpCase::Interpolated,
        )
    } else {
        // lowest index wins ties
        let mut best: Option<(usize, Hyperplane, f64)> = None;
        for j in supporting_hyperplanes(q_next, x_sample, cfg.tie_tol) {
            let single = &q_next.cuts()[j];
            let (v, _) = bellman_value(inst, |z| single.eval(z), x_sample, &PriceOracle::Newton(cfg.stage))?;
            if best.as_ref().is_none_or(|b| v < b.2) {
                best = Some((j, single.clone(), v));
            }
        }
        let (index, single, _) = best.expect("the supporting set is never empty");
        (shifted_plane(inst, &single, &cfg.stage), GbdpCase::Supporting { index })
    };
    plane.iteration = iteration;
    q_t.push(plane);
    if cfg.dominance_filter {
        dominance_filter(q_t, inst.n_slots, inst.capacity, cfg.tie_tol);
    }
    Ok(case)
}

/// Removes planes that are not minimal at any corner of `[0, capacity]^n`.
/// The first plane is always kept.
pub fn dominance_filter(q: &mut CutVfa, n: usize, capacity: u32, tol: f64) {
    let corners = 1usize << n.min(20);
    let mut keep = vec![false; q.len()];
    keep[0] = true;
    let mut x = vec![0u32; n];
    for mask in 0..corners {
        for (s, v) in x.iter_mut().enumerate() {
            *v = if mask >> s & 1 == 1 { capacity } else { 0 };
        }
        for j in q.supporting(&x, tol) {
            keep[j] = true;
        }
    }
    let kept: Vec<Hyperplane> = q
        .cuts()
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(c, _)| c.clone())
        .collect();
    *q = CutVfa::from_cuts(kept);
}
