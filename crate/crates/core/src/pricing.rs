//! Single-stage pricing: given the next-stage value function and the
//! current state, find the profit-maximising admissible charge vector.
//!
//! Under multinomial logit demand every slot that is priced strictly inside
//! its box shares one common markup `M = d_s + r + dQ_s`, and at the optimum
//! `M = (1 + W) / b` with `W` the total logit weight and `b = -beta_d`.
//! Projecting each charge onto its box turns this into the scalar equation
//!
//! ```text
//! G(M) = (1 + W(M)) (M - 1/b) - sum_s w_s(M) m_s(M) = 0,
//! ```
//!
//! whose derivative is `1 + W(M) >= 1` and which is concave, so Newton's
//! method converges from any starting point. Slots whose best achievable
//! markup lies below the stage objective are closed afterwards.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{choice_probabilities, Instance, MnlParams, Price, PriceVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSolveConfig {
    /// Tolerance on the scalar markup residual.
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    pub grid_fallback_points: usize,
}

impl Default for StageSolveConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            max_newton_iters: 100,
            grid_fallback_points: 21,
        }
    }
}

/// How the maximisation over charges is carried out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriceOracle {
    Newton(StageSolveConfig),
    /// Exhaustive enumeration over `points` evenly spaced charges per slot
    /// plus `Unavailable`.
    Grid {
        points: usize,
    },
}

impl Default for PriceOracle {
    fn default() -> Self {
        PriceOracle::Grid { points: 21 }
    }
}

/// The stage problem `max_d lambda * sum_s P_s(d) (kappa_s + d_s)`.
#[derive(Debug, Clone)]
pub struct StageProblem<'a> {
    pub mnl: &'a MnlParams,
    pub arrival_rate: f64,
    pub price_low: f64,
    /// Upper charge per slot; may be infinite.
    pub price_caps: Vec<f64>,
    /// `r + dQ_s` per slot, `None` for a slot that cannot take an order.
    pub margins: Vec<Option<f64>>,
    /// Whether an open slot may be made unavailable.
    pub allow_closing: bool,
}

impl<'a> StageProblem<'a> {
    pub fn new(inst: &'a Instance, margins: Vec<Option<f64>>) -> Self {
        Self {
            mnl: &inst.mnl,
            arrival_rate: inst.arrival_rate,
            price_low: inst.price_low,
            price_caps: vec![inst.price_high; inst.n_slots],
            margins,
            allow_closing: true,
        }
    }

    /// Stage objective of an arbitrary charge vector. Blocked slots contribute
    /// nothing whatever their charge.
    pub fn objective(&self, d: &[Price]) -> f64 {
        let masked: Vec<Price> = d
            .iter()
            .zip(&self.margins)
            .map(|(&p, m)| if m.is_some() { p } else { Price::Unavailable })
            .collect();
        let probs = choice_probabilities(self.mnl, &masked);
        let mut total = 0.0;
        for (s, (&p, m)) in masked.iter().zip(&self.margins).enumerate() {
            if let (Price::Charge(c), Some(k)) = (p, m) {
                total += probs[s + 1] * (c + k);
            }
        }
        self.arrival_rate * total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSolution {
    pub prices: PriceVector,
    /// Objective excluding the constant `Q(x)`.
    pub objective: f64,
    /// False when the Newton solve failed and the result came from the
    /// grid fallback.
    pub converged: bool,
}

impl StageSolution {
    fn closed(n: usize) -> Self {
        Self {
            prices: PriceVector::unavailable(n),
            objective: 0.0,
            converged: true,
        }
    }
}

/// `Q(x + 1_s) - Q(x)` for each slot, `None` where slot `s` is already full.
pub fn value_differences<Q>(inst: &Instance, q: Q, x: &[u32]) -> Vec<Option<f64>>
where
    Q: Fn(&[u32]) -> f64,
{
    let base = q(x);
    let mut next = x.to_vec();
    (0..inst.n_slots)
        .map(|s| {
            if x[s] >= inst.capacity {
                None
            } else {
                next[s] += 1;
                let diff = q(&next) - base;
                next[s] -= 1;
                Some(diff)
            }
        })
        .collect()
}

/// Margins `r + dQ_s` from value differences.
pub fn margins_from_differences(inst: &Instance, diffs: &[Option<f64>]) -> Vec<Option<f64>> {
    diffs.iter().map(|d| d.map(|v| inst.revenue_per_order + v)).collect()
}

/// Profit-maximising charges at state `x` under the next-stage value `q`.
pub fn solve_stage<Q>(inst: &Instance, q: Q, x: &[u32], cfg: &StageSolveConfig) -> Result<StageSolution>
where
    Q: Fn(&[u32]) -> f64,
{
    inst.check_state(x)?;
    let diffs = value_differences(inst, q, x);
    let problem = StageProblem::new(inst, margins_from_differences(inst, &diffs));
    Ok(solve_markup(&problem, cfg))
}

/// Solves the stage problem with the requested oracle.
pub fn solve_with(problem: &StageProblem<'_>, oracle: &PriceOracle) -> StageSolution {
    match oracle {
        PriceOracle::Newton(cfg) => solve_markup(problem, cfg),
        PriceOracle::Grid { points } => solve_grid(problem, *points),
    }
}

/// `(T q)(x)` together with the maximising stage solution.
pub fn bellman_value<Q>(inst: &Instance, q: Q, x: &[u32], oracle: &PriceOracle) -> Result<(f64, StageSolution)>
where
    Q: Fn(&[u32]) -> f64,
{
    inst.check_state(x)?;
    let base = q(x);
    let diffs = value_differences(inst, &q, x);
    let problem = StageProblem::new(inst, margins_from_differences(inst, &diffs));
    let sol = solve_with(&problem, oracle);
    Ok((base + sol.objective, sol))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Lower,
    Free,
    Upper,
}

struct MarkupEval {
    residual: f64,
    slope: f64,
    /// Stage objective divided by the arrival rate.
    mean_margin: f64,
    pattern: Vec<Bound>,
}

fn eval_markup(problem: &StageProblem<'_>, open: &[bool], markup: f64, b: f64) -> MarkupEval {
    let mut weight = 0.0;
    let mut weighted_margin = 0.0;
    let mut pattern = Vec::with_capacity(open.len());
    for (s, &is_open) in open.iter().enumerate() {
        let Some(kappa) = problem.margins[s].filter(|_| is_open) else {
            pattern.push(Bound::Free);
            continue;
        };
        let raw = markup - kappa;
        let cap = problem.price_caps[s];
        let (price, bound) = if raw <= problem.price_low {
            (problem.price_low, Bound::Lower)
        } else if raw >= cap {
            (cap, Bound::Upper)
        } else {
            (raw, Bound::Free)
        };
        let w = (problem.mnl.base_utility(s) - b * price).exp();
        weight += w;
        weighted_margin += w * (price + kappa);
        pattern.push(bound);
    }
    MarkupEval {
        residual: (1.0 + weight) * (markup - 1.0 / b) - weighted_margin,
        slope: 1.0 + weight,
        mean_margin: weighted_margin / (1.0 + weight),
        pattern,
    }
}

fn prices_for(problem: &StageProblem<'_>, open: &[bool], markup: f64) -> PriceVector {
    PriceVector(
        open.iter()
            .enumerate()
            .map(|(s, &is_open)| match problem.margins[s].filter(|_| is_open) {
                Some(kappa) => Price::Charge((markup - kappa).clamp(problem.price_low, problem.price_caps[s])),
                None => Price::Unavailable,
            })
            .collect(),
    )
}

/// Newton root search on the projected common-markup equation; returns the
/// markup or `None` if the iteration did not settle.
fn newton_markup(problem: &StageProblem<'_>, open: &[bool], cfg: &StageSolveConfig) -> Option<(f64, f64)> {
    let b = -problem.mnl.beta_d;
    let mut markup = 1.0 / b;
    let mut previous: Option<Vec<Bound>> = None;
    for _ in 0..cfg.max_newton_iters {
        let ev = eval_markup(problem, open, markup, b);
        if !ev.residual.is_finite() {
            return None;
        }
        let settled = previous.as_ref() == Some(&ev.pattern);
        if ev.residual.abs() <= cfg.newton_tol && settled {
            return Some((markup, ev.mean_margin));
        }
        previous = Some(ev.pattern);
        markup -= ev.residual / ev.slope;
    }
    None
}

/// Markup-based Newton solver with slot closing; falls back to a scalar
/// grid scan over the markup when Newton fails.
pub fn solve_markup(problem: &StageProblem<'_>, cfg: &StageSolveConfig) -> StageSolution {
    let n = problem.margins.len();
    let mut open: Vec<bool> = problem.margins.iter().map(Option::is_some).collect();
    let mut converged = true;
    // Each pass can only close slots, so at most n + 1 passes.
    for _ in 0..=n {
        if !open.iter().any(|&o| o) {
            return StageSolution::closed(n);
        }
        let (markup, mean_margin) = match newton_markup(problem, &open, cfg) {
            Some(found) => found,
            None => {
                converged = false;
                log::warn!("stage Newton solve did not converge; using markup grid fallback");
                markup_grid(problem, &open, cfg.grid_fallback_points)
            }
        };
        let tol = 1e-12 * mean_margin.abs().max(1.0);
        let mut closed_any = false;
        for s in 0..n {
            let Some(kappa) = problem.margins[s].filter(|_| open[s]) else {
                continue;
            };
            let cap = problem.price_caps[s];
            if problem.allow_closing && cap.is_finite() && markup - kappa >= cap && cap + kappa < mean_margin - tol {
                open[s] = false;
                closed_any = true;
            }
        }
        if !closed_any {
            let prices = prices_for(problem, &open, markup);
            let objective = problem.arrival_rate * mean_margin;
            return StageSolution {
                prices,
                objective,
                converged,
            };
        }
    }
    unreachable!("slot closing terminates within n + 1 passes")
}

fn markup_grid(problem: &StageProblem<'_>, open: &[bool], points: usize) -> (f64, f64) {
    let b = -problem.mnl.beta_d;
    let kappas: Vec<f64> = problem
        .margins
        .iter()
        .zip(open)
        .filter_map(|(m, &o)| m.filter(|_| o))
        .collect();
    let lo = kappas
        .iter()
        .map(|k| problem.price_low + k)
        .fold(f64::INFINITY, f64::min);
    let hi = problem
        .price_caps
        .iter()
        .zip(&kappas)
        .map(|(c, k)| if c.is_finite() { c + k } else { k + 1.0 / b + 50.0 / b })
        .fold(f64::NEG_INFINITY, f64::max);
    let steps = points.max(2) * 50;
    let mut best = (lo, f64::NEG_INFINITY);
    for i in 0..=steps {
        let m = lo + (hi - lo) * i as f64 / steps as f64;
        let ev = eval_markup(problem, open, m, b);
        if ev.mean_margin > best.1 {
            best = (m, ev.mean_margin);
        }
    }
    best
}

/// Charge levels used by the grid oracle.
pub fn price_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2, "a price grid needs at least two points");
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

/// Exhaustive enumeration over `points` charges per open slot plus
/// `Unavailable`. Exponential in the number of open slots.
pub fn solve_grid(problem: &StageProblem<'_>, points: usize) -> StageSolution {
    let n = problem.margins.len();
    let open: Vec<usize> = (0..n).filter(|&s| problem.margins[s].is_some()).collect();
    if open.is_empty() {
        return StageSolution::closed(n);
    }
    let hi = problem.price_caps.iter().copied().fold(f64::INFINITY, f64::min);
    let mut levels: Vec<Price> = price_grid(problem.price_low, hi, points)
        .into_iter()
        .map(Price::Charge)
        .collect();
    if problem.allow_closing {
        levels.push(Price::Unavailable);
    }

    let mnl = problem.mnl;
    // Precompute weight and weighted margin of every (slot, level) pair.
    let table: Vec<Vec<(f64, f64)>> = open
        .iter()
        .map(|&s| {
            let kappa = problem.margins[s].unwrap();
            levels
                .iter()
                .map(|&p| match p {
                    Price::Charge(d) => {
                        let w = mnl.weight(s, p);
                        (w, w * (d + kappa))
                    }
                    Price::Unavailable => (0.0, 0.0),
                })
                .collect()
        })
        .collect();

    let radix = levels.len();
    let combos = radix.pow(open.len() as u32);
    let mut best = (f64::NEG_INFINITY, 0usize);
    let mut digits = vec![0usize; open.len()];
    for code in 0..combos {
        let mut rest = code;
        let mut w = 0.0;
        let mut wm = 0.0;
        for (k, digit) in digits.iter_mut().enumerate() {
            *digit = rest % radix;
            rest /= radix;
            let (a, c) = table[k][*digit];
            w += a;
            wm += c;
        }
        let value = wm / (1.0 + w);
        if value > best.0 {
            best = (value, code);
        }
    }
    let mut prices = PriceVector::unavailable(n);
    let mut rest = best.1;
    for &s in &open {
        prices.0[s] = levels[rest % radix];
        rest /= radix;
    }
    StageSolution {
        prices,
        objective: problem.arrival_rate * best.0,
        converged: true,
    }
}
