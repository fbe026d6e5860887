//! Time-indexed value functions and the greedy policy they induce.

use crate::cuts::CutFamily;
use crate::error::Result;
use crate::exact_dp::ExactValueTable;
use crate::model::Instance;
use crate::pricing::{solve_stage, StageSolution, StageSolveConfig};
use crate::vfa_affine::AffineVfa;

/// A value function for every time step `1..=horizon + 1`.
pub trait ValueFamily: Send + Sync {
    fn horizon(&self) -> usize;

    /// Value at time `t` of a state inside the state space.
    fn value(&self, t: usize, x: &[u32]) -> f64;
}

/// Any of the supported value-function representations.
#[derive(Debug, Clone)]
pub enum ValueFn {
    Exact(ExactValueTable),
    Affine(AffineVfa),
    Cuts(CutFamily),
}

impl ValueFamily for ValueFn {
    fn horizon(&self) -> usize {
        match self {
            ValueFn::Exact(v) => v.horizon(),
            ValueFn::Affine(v) => v.horizon(),
            ValueFn::Cuts(v) => v.horizon(),
        }
    }

    fn value(&self, t: usize, x: &[u32]) -> f64 {
        match self {
            ValueFn::Exact(v) => v.value(t, x),
            ValueFn::Affine(v) => v.value(t, x),
            ValueFn::Cuts(v) => v.value(t, x),
        }
    }
}

impl ValueFamily for CutFamily {
    fn horizon(&self) -> usize {
        CutFamily::horizon(self)
    }

    fn value(&self, t: usize, x: &[u32]) -> f64 {
        CutFamily::value(self, t, x)
    }
}

impl ValueFn {
    /// Number of stored planes or parameters.
    pub fn size(&self) -> usize {
        match self {
            ValueFn::Exact(v) => v.len(),
            ValueFn::Affine(v) => v.gamma.len() + 2,
            ValueFn::Cuts(v) => v.total_cuts(),
        }
    }
}

/// Greedy charges at `(t, x)`: the stage problem against `Q_{t+1}`.
pub fn greedy_prices<F: ValueFamily + ?Sized>(
    inst: &Instance,
    family: &F,
    t: usize,
    x: &[u32],
    cfg: &StageSolveConfig,
) -> Result<StageSolution> {
    solve_stage(inst, |y| family.value(t + 1, y), x, cfg)
}
