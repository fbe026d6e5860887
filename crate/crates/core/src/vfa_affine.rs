//! Affine value function approximation
//! `Q_t(x) = gamma0 + (horizon + 1 - t) theta - sum_s gamma_s x_s`
//! trained by stochastic gradient steps on the squared Bellman residual.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CostModel, Instance};

/// Direction of the slot-coefficient step.
///
/// `Q` depends on `gamma_s` through `-gamma_s x_s`, so descending on
/// `td_error^2 / 2` moves `gamma_s` by `+step * td_error * x_s`. The
/// `Printed` rule (the default) subtracts it, like the other two
/// coefficients. With the usual step sizes the descent direction drives the
/// slot coefficients up until the policy stops selling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaRule {
    Gradient,
    #[default]
    Printed,
}

/// Step sizes for `(gamma0, gamma_s, theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepSizes {
    pub gamma0: f64,
    pub gamma: f64,
    pub theta: f64,
    pub gamma_rule: GammaRule,
}

impl Default for StepSizes {
    fn default() -> Self {
        Self {
            gamma0: 1e-4,
            gamma: 2.5e-4,
            theta: 1.4e-4,
            gamma_rule: GammaRule::Printed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffineVfa {
    pub gamma0: f64,
    pub gamma: Vec<f64>,
    pub theta: f64,
    pub step_sizes: StepSizes,
    horizon: usize,
    /// The terminal layer always evaluates to `-C`.
    terminal: CostModel,
}

impl AffineVfa {
    pub fn new(
        gamma0: f64,
        gamma: Vec<f64>,
        theta: f64,
        step_sizes: StepSizes,
        horizon: usize,
        terminal: CostModel,
    ) -> Result<Self> {
        if !(step_sizes.gamma0 > 0.0 && step_sizes.gamma > 0.0 && step_sizes.theta > 0.0) {
            return Err(Error::Config("affine step sizes must be strictly positive".into()));
        }
        Ok(Self {
            gamma0,
            gamma,
            theta,
            step_sizes,
            horizon,
            terminal,
        })
    }

    /// Coefficients matching the fixed point: `gamma_s = d_high + r`,
    /// `theta = 0`.
    pub fn at_fixed_point(inst: &Instance, step_sizes: StepSizes) -> Self {
        let margin = inst.max_margin();
        let full = inst.full_state();
        let gamma0 = margin * full.total() as f64 - inst.cost.total(&full);
        Self::new(
            gamma0,
            vec![margin; inst.n_slots],
            0.0,
            step_sizes,
            inst.horizon,
            inst.cost.clone(),
        )
        .expect("default step sizes are positive")
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn value(&self, t: usize, x: &[u32]) -> f64 {
        evaluate_affine(self, t, x)
    }

    /// Row for the per-iteration parameter export.
    pub fn params_row(&self) -> Vec<f64> {
        let mut row = vec![self.gamma0, self.theta];
        row.extend(&self.gamma);
        row
    }
}

/// Time-to-go multiplier of `theta`.
fn time_to_go(horizon: usize, t: usize) -> f64 {
    (horizon + 1 - t) as f64
}

pub fn evaluate_affine(v: &AffineVfa, t: usize, x: &[u32]) -> f64 {
    assert!(
        t >= 1 && t <= v.horizon + 1,
        "time step {t} outside 1..={}",
        v.horizon + 1
    );
    if t == v.horizon + 1 {
        return -v.terminal.total(x);
    }
    let linear: f64 = v.gamma.iter().zip(x).map(|(g, &xs)| g * xs as f64).sum();
    v.gamma0 + time_to_go(v.horizon, t) * v.theta - linear
}

/// One step on `td_error^2 / 2` with the target held fixed, where
/// `td_error = Q_t(x) - (T Q_{t+1})(x)`.
pub fn affine_update(v: &AffineVfa, t: usize, x_sample: &[u32], td_error: f64) -> AffineVfa {
    assert!(t >= 1 && t <= v.horizon, "only decision layers are trainable");
    let mut out = v.clone();
    let a = v.step_sizes;
    out.gamma0 -= a.gamma0 * td_error;
    let sign = match a.gamma_rule {
        GammaRule::Gradient => 1.0,
        GammaRule::Printed => -1.0,
    };
    for (g, &xs) in out.gamma.iter_mut().zip(x_sample) {
        *g += sign * a.gamma * td_error * xs as f64;
    }
    out.theta -= a.theta * td_error * time_to_go(v.horizon, t);
    out
}

/// Writes `iteration, gamma0, theta, gamma_1..gamma_n` rows.
pub fn write_params_csv<W: Write>(rows: &[(usize, AffineVfa)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = rows.first().map_or(0, |(_, v)| v.gamma.len());
    let mut header = vec!["iteration".to_string(), "gamma0".into(), "theta".into()];
    header.extend((1..=n).map(|s| format!("gamma_{s}")));
    w.write_record(&header)?;
    for (i, v) in rows {
        let mut rec = vec![i.to_string()];
        rec.extend(v.params_row().iter().map(|p| format!("{p}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
