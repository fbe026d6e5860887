//! Exact backward induction on small instances and the analytic fixed point.
//!
//! This is the ground truth every approximation is checked against, so it
//! refuses instances whose state-time space exceeds a budget.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{choice_probabilities, Instance, PriceVector, StateSpace, StateVector};
use crate::pricing::{bellman_value, PriceOracle, StageSolveConfig};
use crate::value::{greedy_prices, ValueFamily};

pub const DEFAULT_BUDGET: u64 = 1_000_000;

/// `V_t(x)` for `t` in `first..=horizon + 1` over the whole state space.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactValueTable {
    space: StateSpace,
    horizon: usize,
    /// Earliest time step held in `layers`.
    first: usize,
    layers: Vec<Vec<f64>>,
}

impl ExactValueTable {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn first_time(&self) -> usize {
        self.first
    }

    pub fn space(&self) -> StateSpace {
        self.space
    }

    /// Total number of stored values.
    pub fn len(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer(&self, t: usize) -> &[f64] {
        &self.layers[t - self.first]
    }

    /// Value at `(t, x)`; `-inf` off the state space.
    pub fn value_checked(&self, t: usize, x: &[u32]) -> f64 {
        if self.space.contains(x) {
            self.layer(t)[self.space.index(x)]
        } else {
            f64::NEG_INFINITY
        }
    }

    fn n_slots(&self) -> usize {
        self.space.n_slots()
    }

    /// Writes `t, x_1..x_n, value` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.n_slots();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|s| format!("x_{s}")));
        header.push("value".into());
        w.write_record(&header)?;
        for (offset, layer) in self.layers.iter().enumerate() {
            let t = self.first + offset;
            for (idx, v) in layer.iter().enumerate() {
                let mut row = vec![t.to_string()];
                row.extend(self.space.state(idx).iter().map(|c| c.to_string()));
                row.push(format!("{v}"));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

impl ValueFamily for ExactValueTable {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn value(&self, t: usize, x: &[u32]) -> f64 {
        self.layer(t)[self.space.index(x)]
    }
}

/// `(d_high + r) <1, cap - x> - C(cap)`.
pub fn fixed_point(inst: &Instance, x: &[u32]) -> f64 {
    let full = inst.full_state();
    let headroom: f64 = x.iter().map(|&v| (inst.capacity - v.min(inst.capacity)) as f64).sum();
    inst.max_margin() * headroom - inst.cost.total(&full)
}

/// One Bellman step at `x` against `next_value`, which must be finite on
/// the state space. A full slot is closed and contributes nothing.
pub fn bellman_apply<Q>(inst: &Instance, next_value: Q, x: &[u32], oracle: &PriceOracle) -> Result<(f64, PriceVector)>
where
    Q: Fn(&[u32]) -> f64,
{
    let (value, sol) = bellman_value(inst, next_value, x, oracle)?;
    Ok((value, sol.prices))
}

/// Full backward induction from `V_{horizon+1} = -C`.
pub fn solve_exact(inst: &Instance, oracle: &PriceOracle) -> Result<ExactValueTable> {
    solve_exact_steps(inst, inst.horizon, oracle, DEFAULT_BUDGET)
}

/// Backward induction over the last `steps` decision epochs only; with
/// `steps == 0` the table holds just the terminal layer.
pub fn solve_exact_steps(inst: &Instance, steps: usize, oracle: &PriceOracle, budget: u64) -> Result<ExactValueTable> {
    assert!(steps <= inst.horizon, "cannot solve more steps than the horizon");
    let space = inst.state_space();
    let required = space.len().saturating_mul(steps.max(1) as u64);
    if required > budget || space.len() > usize::MAX as u64 / 2 {
        return Err(Error::BudgetExceeded { required, budget });
    }
    let states: Vec<StateVector> = space.iter().collect();
    let terminal: Vec<f64> = states.iter().map(|x| -inst.cost.total(x)).collect();
    let mut layers = vec![terminal];
    for _ in 0..steps {
        let next = layers.last().unwrap();
        let lookup = |y: &[u32]| next[space.index(y)];
        let layer: Result<Vec<f64>> = states
            .par_iter()
            .map(|x| bellman_apply(inst, lookup, x, oracle).map(|(v, _)| v))
            .collect();
        layers.push(layer?);
    }
    layers.reverse();
    Ok(ExactValueTable {
        space,
        horizon: inst.horizon,
        first: inst.horizon + 1 - steps,
        layers,
    })
}

/// Exact expected profit of the greedy policy induced by `family`, by
/// backward recursion over the policy's own transition law. Returns the
/// value at `(1, 0)`.
pub fn evaluate_policy<F: ValueFamily + ?Sized>(inst: &Instance, family: &F, cfg: &StageSolveConfig) -> Result<f64> {
    let space = inst.state_space();
    if space.len().saturating_mul(inst.horizon as u64) > DEFAULT_BUDGET {
        return Err(Error::BudgetExceeded {
            required: space.len().saturating_mul(inst.horizon as u64),
            budget: DEFAULT_BUDGET,
        });
    }
    let states: Vec<StateVector> = space.iter().collect();
    let mut next: Vec<f64> = states.iter().map(|x| -inst.cost.total(x)).collect();
    for t in (1..=inst.horizon).rev() {
        let layer: Result<Vec<f64>> = states
            .par_iter()
            .map(|x| {
                let sol = greedy_prices(inst, family, t, x, cfg)?;
                let probs = choice_probabilities(&inst.mnl, &sol.prices);
                let stay = next[space.index(x)];
                let mut value = stay;
                for s in 0..inst.n_slots {
                    if x[s] >= inst.capacity {
                        continue;
                    }
                    if let Some(d) = sol.prices[s].charge() {
                        let p = inst.arrival_rate * probs[s + 1];
                        let moved = next[space.index(&x.plus_unit(s))];
                        value += p * (inst.revenue_per_order + d + moved - stay);
                    }
                }
                Ok(value)
            })
            .collect();
        next = layer?;
    }
    Ok(next[space.index(&vec![0; inst.n_slots])])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CostModel, MnlParams};
    use crate::pricing::{price_grid, StageSolveConfig};

    fn tiny(horizon: usize, capacity: u32, n: usize) -> Instance {
        let betas = [-1.0305, -0.3591, 0.3107, 0.5922];
        let mnl = MnlParams::new(-2.5087, -0.0766, betas[..n].to_vec()).unwrap();
        Instance::new(
            horizon,
            capacity,
            0.8,
            34.53,
            (0.0, 10.0),
            mnl,
            CostModel::from_geometry(0.25, 25.0, capacity),
        )
        .unwrap()
    }

    #[test]
    fn fixed_point_values() {
        let inst = tiny(3, 2, 2);
        let full = inst.full_state();
        assert!((fixed_point(&inst, &full) + inst.cost.total(&full)).abs() < 1e-12);
        // gradient components are all -(d_high + r)
        let base = fixed_point(&inst, &[0, 1]);
        assert!((fixed_point(&inst, &[1, 1]) - base + inst.max_margin()).abs() < 1e-12);
        assert!((fixed_point(&inst, &[0, 2]) - base + inst.max_margin()).abs() < 1e-12);
    }

    #[test]
    fn zero_steps_is_terminal_layer() {
        let inst = tiny(3, 2, 2);
        let table = solve_exact_steps(&inst, 0, &PriceOracle::default(), DEFAULT_BUDGET).unwrap();
        assert_eq!(table.first_time(), 4);
        for x in inst.state_space().iter() {
            assert_eq!(table.value(4, &x), -inst.cost.total(&x));
        }
    }

    #[test]
    fn all_full_keeps_next_value() {
        let inst = tiny(3, 2, 2);
        let (v, d) = bellman_apply(&inst, |x| 7.0 - x[0] as f64, &[2, 2], &PriceOracle::default()).unwrap();
        assert_eq!(v, 5.0);
        assert_eq!(d, PriceVector::unavailable(2));
    }

    #[test]
    fn rejects_states_off_the_lattice() {
        let inst = tiny(3, 2, 2);
        assert!(bellman_apply(&inst, |_| 0.0, &[3, 0], &PriceOracle::default()).is_err());
    }

    #[test]
    fn one_slot_one_step_matches_hand_enumeration() {
        let inst = tiny(1, 1, 1);
        let table = solve_exact(&inst, &PriceOracle::Grid { points: 21 }).unwrap();
        // enumerate 21 charges plus closing by hand
        let c = inst.cost.var_cost_per_order;
        let mut best = 0.0f64; // closed slot: no sale, zero cost
        for d in price_grid(0.0, 10.0, 21) {
            let w = (-2.5087 - 1.0305 - 0.0766 * d).exp();
            let p = w / (1.0 + w);
            best = best.max(0.8 * p * (34.53 + d - c));
        }
        assert!((table.value(1, &[0]) - best).abs() < 1e-12);
        assert_eq!(table.value(1, &[1]), -c);
    }

    #[test]
    fn budget_refusal() {
        let inst = tiny(3, 2, 2);
        let err = solve_exact_steps(&inst, 3, &PriceOracle::default(), 10).unwrap_err();
        assert!(matches!(
            err,
            Error::BudgetExceeded {
                required: 27,
                budget: 10
            }
        ));
    }

    #[test]
    fn exact_policy_value_matches_table_under_its_own_greedy_policy() {
        let inst = tiny(3, 2, 2);
        let cfg = StageSolveConfig::default();
        let table = solve_exact(&inst, &PriceOracle::Newton(cfg)).unwrap();
        let v = evaluate_policy(&inst, &table, &cfg).unwrap();
        assert!((v - table.value(1, &[0, 0])).abs() < 1e-9);
    }

    #[test]
    fn csv_export_header() {
        let inst = tiny(1, 1, 2);
        let table = solve_exact(&inst, &PriceOracle::default()).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x_1,x_2,value\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 4);
    }

    #[test]
    fn checked_lookup_off_lattice() {
        let inst = tiny(1, 1, 2);
        let table = solve_exact(&inst, &PriceOracle::default()).unwrap();
        assert_eq!(table.value_checked(1, &[2, 0]), f64::NEG_INFINITY);
        assert!(table.value_checked(1, &[1, 0]).is_finite());
    }
}
