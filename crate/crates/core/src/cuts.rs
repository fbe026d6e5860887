//! Hyperplane-min value functions shared by the cut-based backends.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::model::{CostModel, Instance};

/// Affine function `<slope, x> + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hyperplane {
    pub slope: Vec<f64>,
    pub intercept: f64,
    /// Training iteration that produced the plane (0 for the initializer).
    pub iteration: usize,
    /// False when the plane came out of a solve that could not certify
    /// global optimality.
    pub certified: bool,
}

impl Hyperplane {
    pub fn new(slope: Vec<f64>, intercept: f64) -> Self {
        Self {
            slope,
            intercept,
            iteration: 0,
            certified: true,
        }
    }

    /// Plane through `(anchor, value)` with the given slope.
    pub fn through(anchor: &[u32], value: f64, slope: Vec<f64>) -> Self {
        let dot: f64 = slope.iter().zip(anchor).map(|(a, &x)| a * x as f64).sum();
        Self::new(slope, value - dot)
    }

    #[inline]
    pub fn eval(&self, x: &[u32]) -> f64 {
        self.intercept + self.slope.iter().zip(x).map(|(a, &v)| a * v as f64).sum::<f64>()
    }

    #[inline]
    pub fn eval_real(&self, y: &[f64]) -> f64 {
        self.intercept + self.slope.iter().zip(y).map(|(a, v)| a * v).sum::<f64>()
    }

    /// The fixed-point plane `(d_high + r) <1, cap - x> - C(cap)`.
    pub fn fixed_point(inst: &Instance) -> Self {
        let margin = inst.max_margin();
        let full = inst.full_state();
        let intercept = margin * full.total() as f64 - inst.cost.total(&full);
        Self::new(vec![-margin; inst.n_slots], intercept)
    }

    /// The terminal condition `-C(x)`, which is affine for a linear cost.
    pub fn terminal(cost: &CostModel, n: usize) -> Self {
        Self::new(vec![-cost.var_cost_per_order; n], -cost.fixed_cost)
    }
}

/// Pointwise minimum of a non-empty list of hyperplanes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutVfa {
    cuts: Vec<Hyperplane>,
}

impl CutVfa {
    pub fn new(first: Hyperplane) -> Self {
        Self { cuts: vec![first] }
    }

    pub fn from_cuts(cuts: Vec<Hyperplane>) -> Self {
        assert!(!cuts.is_empty(), "a cut value function needs at least one plane");
        Self { cuts }
    }

    pub fn cuts(&self) -> &[Hyperplane] {
        &self.cuts
    }

    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty()
    }

    pub fn push(&mut self, cut: Hyperplane) {
        self.cuts.push(cut);
    }

    /// Drops every plane created after `iteration`.
    pub fn truncate_to_iteration(&mut self, iteration: usize) {
        self.cuts.retain(|c| c.iteration <= iteration);
    }

    pub fn eval(&self, x: &[u32]) -> f64 {
        self.cuts.iter().map(|c| c.eval(x)).fold(f64::INFINITY, f64::min)
    }

    pub fn eval_real(&self, y: &[f64]) -> f64 {
        self.cuts.iter().map(|c| c.eval_real(y)).fold(f64::INFINITY, f64::min)
    }

    /// Index of a minimising plane at `y` (lowest index on ties).
    pub fn active_real(&self, y: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (j, c) in self.cuts.iter().enumerate() {
            let v = c.eval_real(y);
            if v < best.1 {
                best = (j, v);
            }
        }
        best.0
    }

    /// All planes attaining the minimum at `x` within `tol`.
    pub fn supporting(&self, x: &[u32], tol: f64) -> Vec<usize> {
        let values: Vec<f64> = self.cuts.iter().map(|c| c.eval(x)).collect();
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v <= min + tol)
            .map(|(j, _)| j)
            .collect()
    }
}

/// One [`CutVfa`] per time step `1..=horizon + 1`; the last layer holds the
/// terminal condition and is never refined.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutFamily {
    layers: Vec<CutVfa>,
}

impl CutFamily {
    /// Every decision layer starts at the fixed point, the terminal layer at `-C`.
    pub fn at_fixed_point(inst: &Instance) -> Self {
        let mut layers = vec![CutVfa::new(Hyperplane::fixed_point(inst)); inst.horizon];
        layers.push(CutVfa::new(Hyperplane::terminal(&inst.cost, inst.n_slots)));
        Self { layers }
    }

    pub fn horizon(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn layer(&self, t: usize) -> &CutVfa {
        &self.layers[t - 1]
    }

    pub fn layer_mut(&mut self, t: usize) -> &mut CutVfa {
        assert!(t <= self.horizon(), "the terminal layer is fixed");
        &mut self.layers[t - 1]
    }

    /// Layers `t` and `t + 1`, the second read-only.
    pub fn split_at(&mut self, t: usize) -> (&mut CutVfa, &CutVfa) {
        let (head, tail) = self.layers.split_at_mut(t);
        (&mut head[t - 1], &tail[0])
    }

    pub fn total_cuts(&self) -> usize {
        self.layers.iter().map(CutVfa::len).sum()
    }

    pub fn value(&self, t: usize, x: &[u32]) -> f64 {
        self.layer(t).eval(x)
    }

    /// Rows of `(t, plane)` for export.
    pub fn planes(&self) -> impl Iterator<Item = (usize, &Hyperplane)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, layer)| layer.cuts().iter().map(move |c| (i + 1, c)))
    }

    pub fn truncate_to_iteration(&mut self, iteration: usize) {
        for layer in &mut self.layers {
            layer.truncate_to_iteration(iteration);
        }
    }
}

/// Evaluates `q` at a lattice point given as signed coordinates, treating
/// anything outside `{0..=capacity}^n` as infeasible.
pub fn eval_on_lattice(q: &CutVfa, y: &[i64], capacity: u32) -> f64 {
    if y.iter().all(|&v| v >= 0 && v <= capacity as i64) {
        let x: Vec<u32> = y.iter().map(|&v| v as u32).collect();
        q.eval(&x)
    } else {
        f64::NEG_INFINITY
    }
}

pub(crate) fn as_real(x: &[u32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

/// Writes `t, a_1..a_n, b, iteration, certified` rows.
pub fn write_cuts_csv<W: Write>(family: &CutFamily, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = family.layer(1).cuts()[0].slope.len();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|s| format!("a_{s}")));
    header.extend(["b".to_string(), "iteration".into(), "certified".into()]);
    w.write_record(&header)?;
    for (t, c) in family.planes() {
        let mut rec = vec![t.to_string()];
        rec.extend(c.slope.iter().map(|a| format!("{a}")));
        rec.push(format!("{}", c.intercept));
        rec.push(c.iteration.to_string());
        rec.push(c.certified.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
