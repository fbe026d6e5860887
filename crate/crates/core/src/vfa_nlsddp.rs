//! Lagrangian dual cuts for the hyperplane-min value function.
//!
//! For a sample `x` and multiplier `mu` the inner problem is
//!
//! ```text
//! v(mu) = max_{d, z} lambda sum_s P_s(d) (r + d_s + Q(z + 1_s))
//!                    + (1 - lambda sum_s P_s(d)) Q(z) + <mu, x - z>
//! ```
//!
//! and the cut is `H(y) = v* + <mu*, y - x>` with `(mu*, v*)` the best
//! multiplier found. Two inner solvers are offered: an exhaustive one that
//! enumerates every lattice state `z` (exact, small instances only) and a
//! local alternating ascent on the continuous relaxation in `(p, y)`.

use serde::{Deserialize, Serialize};

use crate::cuts::{as_real, CutVfa, Hyperplane};
use crate::error::{Error, Result};
use crate::model::{choice_probabilities, Instance, Price, PriceVector};
use crate::pricing::{bellman_value, solve_markup, solve_stage, PriceOracle, StageProblem, StageSolveConfig};

pub use crate::cuts::write_cuts_csv;

/// Smallest no-purchase probability used when inverting logit shares.
const MIN_P0: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiconcaveSolveConfig {
    /// Steepness of the softened capacity constraint.
    pub softening_alpha: f64,
    /// Coordinate sweeps of the multiplier search.
    pub outer_mu_iters: usize,
    /// Golden-section evaluations per coordinate and sweep.
    pub golden_iters: usize,
    /// Alternation rounds between the `y` and `p` blocks.
    pub inner_alt_iters: usize,
    /// Projected supergradient steps per `y` block.
    pub y_steps: usize,
    /// Half-width of the multiplier box; `None` means `2 (d_high + r)`.
    pub mu_box: Option<f64>,
    pub tol: f64,
    /// Reject cuts whose value at the sample falls below the Bellman target.
    pub strict: bool,
}

impl Default for BiconcaveSolveConfig {
    fn default() -> Self {
        Self {
            softening_alpha: 10.0,
            outer_mu_iters: 2,
            golden_iters: 30,
            inner_alt_iters: 2,
            y_steps: 25,
            mu_box: None,
            tol: 1e-6,
            strict: false,
        }
    }
}

impl BiconcaveSolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.softening_alpha > 0.0) {
            return Err(Error::Config("softening_alpha must be positive".into()));
        }
        if self.mu_box.is_some_and(|b| !(b >= 0.0)) {
            return Err(Error::Config("mu_box must be non-negative".into()));
        }
        Ok(())
    }

    pub fn mu_half_width(&self, inst: &Instance) -> f64 {
        self.mu_box.unwrap_or(2.0 * inst.max_margin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerSolver {
    /// Enumerate every lattice state with the given price oracle.
    Exhaustive(PriceOracle),
    /// Alternating ascent on the relaxation, started from the sample.
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlsddpConfig {
    pub inner: InnerSolver,
    pub biconcave: BiconcaveSolveConfig,
    pub stage: StageSolveConfig,
}

impl Default for NlsddpConfig {
    fn default() -> Self {
        Self {
            inner: InnerSolver::Local,
            biconcave: BiconcaveSolveConfig::default(),
            stage: StageSolveConfig::default(),
        }
    }
}

/// Result of one inner maximisation.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerMax {
    pub value: f64,
    /// Maximising relaxed state.
    pub y: Vec<f64>,
    pub prices: PriceVector,
    /// True only when the maximum is global.
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianCut {
    pub plane: Hyperplane,
    pub mu: Vec<f64>,
    pub v: f64,
    /// `(T Q_{t+1})(x_sample)` for reference.
    pub bellman_target: f64,
}

/// Inner maximisation context for a fixed sample and next-stage function.
pub struct InnerProblem<'a> {
    inst: &'a Instance,
    q_next: &'a CutVfa,
    x_sample: Vec<f64>,
    cfg: BiconcaveSolveConfig,
    kind: InnerKind,
}

enum InnerKind {
    /// `(z, (T Q)(z))` over the lattice.
    Exhaustive(Vec<(Vec<f64>, f64)>),
    Local {
        start_prices: PriceVector,
    },
}

impl<'a> InnerProblem<'a> {
    pub fn new(inst: &'a Instance, q_next: &'a CutVfa, x_sample: &[u32], cfg: &NlsddpConfig) -> Result<Self> {
        inst.check_state(x_sample)?;
        cfg.biconcave.validate()?;
        let q = |y: &[u32]| q_next.eval(y);
        let kind = match cfg.inner {
            InnerSolver::Exhaustive(oracle) => {
                let space = inst.state_space();
                if space.len() > crate::exact_dp::DEFAULT_BUDGET {
                    return Err(Error::BudgetExceeded {
                        required: space.len(),
                        budget: crate::exact_dp::DEFAULT_BUDGET,
                    });
                }
                let mut table = Vec::with_capacity(space.len() as usize);
                for z in space.iter() {
                    let (v, _) = bellman_value(inst, q, &z, &oracle)?;
                    table.push((as_real(&z), v));
                }
                InnerKind::Exhaustive(table)
            }
            InnerSolver::Local => {
                let sol = solve_stage(inst, q, x_sample, &cfg.stage)?;
                InnerKind::Local {
                    start_prices: sol.prices,
                }
            }
        };
        Ok(Self {
            inst,
            q_next,
            x_sample: as_real(x_sample),
            cfg: cfg.biconcave,
            kind,
        })
    }

    /// Approximate `max_{p, y}` of the relaxed inner objective at `mu`.
    pub fn solve(&self, mu: &[f64]) -> InnerMax {
        match &self.kind {
            InnerKind::Exhaustive(table) => {
                let mut best = (f64::NEG_INFINITY, 0);
                for (k, (z, tq)) in table.iter().enumerate() {
                    let v = tq + dot(mu, &self.x_sample) - dot(mu, z);
                    if v > best.0 {
                        best = (v, k);
                    }
                }
                InnerMax {
                    value: best.0,
                    y: table[best.1].0.clone(),
                    prices: PriceVector::unavailable(self.inst.n_slots),
                    certified: true,
                }
            }
            InnerKind::Local { start_prices } => self.local_ascent(mu, start_prices),
        }
    }

    /// Relaxed objective at `(y, d)`.
    pub fn objective(&self, mu: &[f64], y: &[f64], d: &[Price]) -> f64 {
        let inst = self.inst;
        let q0 = self.q_next.eval_real(y);
        let probs = choice_probabilities(&inst.mnl, d);
        let mut shifted = y.to_vec();
        let mut sales = 0.0;
        for s in 0..inst.n_slots {
            if let Some(c) = d[s].charge() {
                shifted[s] += 1.0;
                let q1 = self.q_next.eval_real(&shifted);
                shifted[s] -= 1.0;
                sales += probs[s + 1] * (inst.revenue_per_order + c + q1 - q0);
            }
        }
        q0 + inst.arrival_rate * sales + dot(mu, &self.x_sample) - dot(mu, y)
    }

    fn local_ascent(&self, mu: &[f64], start: &PriceVector) -> InnerMax {
        let mut y = self.x_sample.clone();
        let mut d = start.clone();
        let mut value = self.objective(mu, &y, &d);
        for _ in 0..self.cfg.inner_alt_iters {
            let y_new = self.y_block(mu, &y, &d);
            let v_y = self.objective(mu, &y_new, &d);
            if v_y >= value {
                y = y_new;
                value = v_y;
            }
            let d_new = self.p_block(&y, &d);
            let v_p = self.objective(mu, &y, &d_new);
            let improved = v_p > value + self.cfg.tol * value.abs().max(1.0);
            if v_p >= value {
                d = d_new;
                value = v_p;
            }
            if !improved {
                break;
            }
        }
        InnerMax {
            value,
            y,
            prices: d,
            certified: false,
        }
    }

    /// No-purchase probability under charges `d`.
    fn p0(&self, d: &[Price]) -> f64 {
        choice_probabilities(&self.inst.mnl, d)[0].max(MIN_P0)
    }

    /// Price caps implied by the softened capacity constraint
    /// `p_s >= p0 exp(u_s - b d_high) - exp(alpha (y_s - cap))`.
    fn soft_caps(&self, y: &[f64], p0: f64) -> Vec<f64> {
        let inst = self.inst;
        let b = -inst.mnl.beta_d;
        let cap = inst.capacity as f64;
        (0..inst.n_slots)
            .map(|s| {
                let slack = (self.cfg.softening_alpha * (y[s] - cap)).exp();
                let rhs = (-b * inst.price_high).exp() - slack * (-inst.mnl.base_utility(s)).exp() / p0;
                if rhs <= 0.0 {
                    f64::INFINITY
                } else {
                    (-rhs.ln() / b).max(inst.price_high)
                }
            })
            .collect()
    }

    /// Best charges for fixed `y`.
    fn p_block(&self, y: &[f64], d: &PriceVector) -> PriceVector {
        let inst = self.inst;
        let q0 = self.q_next.eval_real(y);
        let mut shifted = y.to_vec();
        let margins = (0..inst.n_slots)
            .map(|s| {
                shifted[s] += 1.0;
                let k = inst.revenue_per_order + self.q_next.eval_real(&shifted) - q0;
                shifted[s] -= 1.0;
                Some(k)
            })
            .collect();
        let caps = self.soft_caps(y, self.p0(d));
        let problem = StageProblem {
            mnl: &inst.mnl,
            arrival_rate: inst.arrival_rate,
            price_low: inst.price_low,
            price_caps: caps.clone(),
            margins,
            allow_closing: false,
        };
        let mut sol = solve_markup(&problem, &StageSolveConfig::default());
        // A slot priced beyond every reachable logit weight is closed.
        for (s, p) in sol.prices.0.iter_mut().enumerate() {
            if caps[s].is_infinite()
                && p.charge()
                    .is_some_and(|c| !(inst.mnl.weight(s, Price::Charge(c)) > 0.0))
            {
                *p = Price::Unavailable;
            }
        }
        sol.prices
    }

    /// Lower bounds on `y` that keep the charges `d` feasible for the
    /// softened constraint.
    fn y_floor(&self, d: &[Price]) -> Vec<f64> {
        let inst = self.inst;
        let b = -inst.mnl.beta_d;
        let cap = inst.capacity as f64;
        let p0 = self.p0(d);
        (0..inst.n_slots)
            .map(|s| {
                let u = inst.mnl.base_utility(s);
                let floor_share = (u - b * inst.price_high).exp();
                let share = match d[s] {
                    Price::Charge(c) => (u - b * c).exp(),
                    Price::Unavailable => 0.0,
                };
                let gap = p0 * (floor_share - share);
                if gap <= 0.0 {
                    0.0
                } else {
                    (cap + gap.ln() / self.cfg.softening_alpha).clamp(0.0, cap)
                }
            })
            .collect()
    }

    /// Projected supergradient ascent in `y` for fixed charges.
    fn y_block(&self, mu: &[f64], y: &[f64], d: &PriceVector) -> Vec<f64> {
        let inst = self.inst;
        let n = inst.n_slots;
        let cap = inst.capacity as f64;
        let probs = choice_probabilities(&inst.mnl, d);
        let stay = 1.0 - inst.arrival_rate * probs[1..].iter().sum::<f64>();
        let floor = self.y_floor(d);
        let g_value = |y: &[f64]| -> f64 {
            let mut total = stay * self.q_next.eval_real(y) - dot(mu, y);
            let mut shifted = y.to_vec();
            for s in 0..n {
                if probs[s + 1] > 0.0 {
                    shifted[s] += 1.0;
                    total += inst.arrival_rate * probs[s + 1] * self.q_next.eval_real(&shifted);
                    shifted[s] -= 1.0;
                }
            }
            total
        };
        let project = |y: &mut [f64]| {
            for s in 0..n {
                y[s] = y[s].clamp(floor[s], cap);
            }
        };
        let mut cur = y.to_vec();
        project(&mut cur);
        let mut best = (g_value(&cur), cur.clone());
        for k in 0..self.cfg.y_steps {
            let mut grad: Vec<f64> = mu.iter().map(|m| -m).collect();
            let cuts = self.q_next.cuts();
            let j = self.q_next.active_real(&cur);
            for s in 0..n {
                grad[s] += stay * cuts[j].slope[s];
            }
            let mut shifted = cur.clone();
            for s in 0..n {
                if probs[s + 1] > 0.0 {
                    shifted[s] += 1.0;
                    let js = self.q_next.active_real(&shifted);
                    shifted[s] -= 1.0;
                    for (g, a) in grad.iter_mut().zip(&cuts[js].slope) {
                        *g += inst.arrival_rate * probs[s + 1] * a;
                    }
                }
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm < 1e-12 {
                break;
            }
            let step = 0.5 * cap / ((k + 1) as f64).sqrt();
            for (c, g) in cur.iter_mut().zip(&grad) {
                *c += step * g / norm;
            }
            project(&mut cur);
            let v = g_value(&cur);
            if v > best.0 {
                best = (v, cur.clone());
            }
        }
        best.1
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inner maximum at a fixed multiplier.
pub fn biconcave_inner_max(
    inst: &Instance,
    q_next: &CutVfa,
    x_sample: &[u32],
    mu: &[f64],
    cfg: &NlsddpConfig,
) -> Result<InnerMax> {
    Ok(InnerProblem::new(inst, q_next, x_sample, cfg)?.solve(mu))
}

/// Coordinate-wise golden-section minimisation of `f` over the box
/// `[-half_width, half_width]^n`, starting from `start`. Returns the best
/// point seen and its value.
pub fn golden_box_min<F>(f: F, start: Vec<f64>, half_width: f64, sweeps: usize, golden_iters: usize) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x: Vec<f64> = start.iter().map(|v| v.clamp(-half_width, half_width)).collect();
    let mut best = f(&x);
    if half_width == 0.0 {
        return (x, best);
    }
    for _ in 0..sweeps {
        for j in 0..x.len() {
            let mut probe = x.clone();
            let mut eval = |v: f64| {
                probe[j] = v;
                f(&probe)
            };
            let (mut lo, mut hi) = (-half_width, half_width);
            let mut c = hi - INV_PHI * (hi - lo);
            let mut d = lo + INV_PHI * (hi - lo);
            let mut fc = eval(c);
            let mut fd = eval(d);
            for _ in 0..golden_iters {
                if fc <= fd {
                    hi = d;
                    d = c;
                    fd = fc;
                    c = hi - INV_PHI * (hi - lo);
                    fc = eval(c);
                } else {
                    lo = c;
                    c = d;
                    fc = fd;
                    d = lo + INV_PHI * (hi - lo);
                    fd = eval(d);
                }
            }
            let (arg, val) = if fc <= fd { (c, fc) } else { (d, fd) };
            if val < best {
                best = val;
                x[j] = arg;
            }
        }
    }
    (x, best)
}

/// `(mu*, v*)`: the multiplier search warm-started at the slope of the
/// next-stage plane active at the sample.
pub fn minimize_over_mu(
    inst: &Instance,
    q_next: &CutVfa,
    x_sample: &[u32],
    cfg: &NlsddpConfig,
) -> Result<(Vec<f64>, f64, bool)> {
    let problem = InnerProblem::new(inst, q_next, x_sample, cfg)?;
    let start = q_next.cuts()[q_next.active_real(&as_real(x_sample))].slope.clone();
    let b = &cfg.biconcave;
    let (mu, v) = golden_box_min(
        |mu| problem.solve(mu).value,
        start,
        b.mu_half_width(inst),
        b.outer_mu_iters,
        b.golden_iters,
    );
    let certified = matches!(cfg.inner, InnerSolver::Exhaustive(_));
    Ok((mu, v, certified))
}

/// The cut `H(y) = v* + <mu*, y - x_sample>`.
pub fn lagrangian_cut(inst: &Instance, q_next: &CutVfa, x_sample: &[u32], cfg: &NlsddpConfig) -> Result<LagrangianCut> {
    let (mu, v, certified) = minimize_over_mu(inst, q_next, x_sample, cfg)?;
    let (target, _) = bellman_value(inst, |y| q_next.eval(y), x_sample, &PriceOracle::Newton(cfg.stage))?;
    let mut plane = Hyperplane::through(x_sample, v, mu.clone());
    plane.certified = certified;
    Ok(LagrangianCut {
        plane,
        mu,
        v,
        bellman_target: target,
    })
}

/// Appends a Lagrangian cut at `x_sample` to `q_t`. Returns whether a cut was
/// added; in strict mode a cut below the Bellman target is rejected.
pub fn nlsddp_update(
    inst: &Instance,
    q_t: &mut CutVfa,
    q_next: &CutVfa,
    x_sample: &[u32],
    iteration: usize,
    cfg: &NlsddpConfig,
) -> Result<bool> {
    let cut = lagrangian_cut(inst, q_next, x_sample, cfg)?;
    if cfg.biconcave.strict && cut.v < cut.bellman_target - cfg.biconcave.tol {
        log::debug!(
            "rejecting cut at {:?}: value {} below target {}",
            x_sample,
            cut.v,
            cut.bellman_target
        );
        return Ok(false);
    }
    let mut plane = cut.plane;
    plane.iteration = iteration;
    q_t.push(plane);
    Ok(true)
}
