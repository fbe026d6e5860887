//! The sample-based training loop: a forward sweep under the greedy policy,
//! then a backward sweep refining `Q_t` at the sampled states.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cuts::CutFamily;
use crate::error::{Error, Result};
use crate::model::{sample_transition, Instance, PriceVector, StateVector, TransitionOutcome};
use crate::pricing::{bellman_value, PriceOracle, StageSolveConfig};
use crate::rng::{stream, Domain};
use crate::value::{greedy_prices, ValueFamily, ValueFn};
use crate::vfa_affine::{affine_update, AffineVfa, StepSizes};
use crate::vfa_gbdp::{gbdp_update, GbdpConfig};
use crate::vfa_nlsddp::{nlsddp_update, NlsddpConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Affine,
    Nlsddp,
    Gbdp,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Affine, Algorithm::Nlsddp, Algorithm::Gbdp];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Affine => "affine",
            Algorithm::Nlsddp => "nlsddp",
            Algorithm::Gbdp => "gbdp",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "affine" => Ok(Algorithm::Affine),
            "nlsddp" => Ok(Algorithm::Nlsddp),
            "gbdp" => Ok(Algorithm::Gbdp),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub i_max: usize,
    pub seed: u64,
    /// Iterations between retained snapshots; `None` picks the default cadence.
    pub checkpoint_every: Option<usize>,
    pub stage: StageSolveConfig,
    pub affine_steps: StepSizes,
    pub nlsddp: NlsddpConfig,
    pub gbdp: GbdpConfig,
}

impl TrainConfig {
    pub fn new(algorithm: Algorithm, i_max: usize, seed: u64) -> Self {
        Self {
            algorithm,
            i_max,
            seed,
            checkpoint_every: None,
            stage: StageSolveConfig::default(),
            affine_steps: StepSizes::default(),
            nlsddp: NlsddpConfig::default(),
            gbdp: GbdpConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.i_max == 0 {
            return Err(Error::Config("i_max must be at least 1".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be at least 1".into()));
        }
        if !(self.stage.newton_tol > 0.0) {
            return Err(Error::Config("newton_tol must be positive".into()));
        }
        self.nlsddp.biconcave.validate()
    }

    pub fn cadence(&self) -> usize {
        self.checkpoint_every
            .unwrap_or_else(|| default_checkpoint_every(self.i_max))
    }

    /// Iterations whose value function is retained: the first, every
    /// `cadence` after it, and the last.
    pub fn checkpoints(&self) -> Vec<usize> {
        let every = self.cadence();
        let mut out: Vec<usize> = (1..=self.i_max).step_by(every).collect();
        if out.last() != Some(&self.i_max) {
            out.push(self.i_max);
        }
        out
    }
}

/// Every iteration up to 100 iterations, otherwise `ceil(i_max / 100)`.
pub fn default_checkpoint_every(i_max: usize) -> usize {
    if i_max <= 100 {
        1
    } else {
        i_max.div_ceil(100)
    }
}

/// One simulated selling horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    /// `x_1 .. x_{horizon + 1}`.
    pub states: Vec<StateVector>,
    pub prices: Vec<PriceVector>,
    pub outcomes: Vec<TransitionOutcome>,
    pub realized_profit: f64,
}

/// The initial value functions: the fixed point on decision layers and
/// `-C` on the terminal layer.
pub fn initialize(inst: &Instance, algorithm: Algorithm, steps: StepSizes) -> ValueFn {
    match algorithm {
        Algorithm::Affine => ValueFn::Affine(AffineVfa::at_fixed_point(inst, steps)),
        Algorithm::Nlsddp | Algorithm::Gbdp => ValueFn::Cuts(CutFamily::at_fixed_point(inst)),
    }
}

/// Simulates one horizon from the empty state under the greedy policy.
pub fn forward_sweep<F, R>(inst: &Instance, family: &F, cfg: &StageSolveConfig, rng: &mut R) -> Result<SamplePath>
where
    F: ValueFamily + ?Sized,
    R: Rng + ?Sized,
{
    forward_sweep_in(inst, inst, family, cfg, rng)
}

/// Forward sweep where charges are set from the `policy` model while
/// customers behave according to `world`. Both must share slots, capacity
/// and horizon.
pub fn forward_sweep_in<F, R>(
    world: &Instance,
    policy: &Instance,
    family: &F,
    cfg: &StageSolveConfig,
    rng: &mut R,
) -> Result<SamplePath>
where
    F: ValueFamily + ?Sized,
    R: Rng + ?Sized,
{
    if world.n_slots != policy.n_slots || world.capacity != policy.capacity || world.horizon != policy.horizon {
        return Err(Error::Config("policy and world instances differ in shape".into()));
    }
    let inst = world;
    let mut x = StateVector::zeros(inst.n_slots);
    let mut states = Vec::with_capacity(inst.horizon + 1);
    let mut prices = Vec::with_capacity(inst.horizon);
    let mut outcomes = Vec::with_capacity(inst.horizon);
    let mut revenue = 0.0;
    states.push(x.clone());
    for t in 1..=inst.horizon {
        let sol = greedy_prices(policy, family, t, &x, cfg)?;
        let outcome = sample_transition(inst, &x, &sol.prices, rng)?;
        if let TransitionOutcome::Slot(s) = outcome {
            let charge = sol.prices[s].charge().expect("sampled slots are priced");
            revenue += inst.revenue_per_order + charge;
            x = x.plus_unit(s);
        }
        states.push(x.clone());
        prices.push(sol.prices);
        outcomes.push(outcome);
    }
    let realized_profit = revenue - inst.cost.total(&x);
    Ok(SamplePath {
        states,
        prices,
        outcomes,
        realized_profit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub realized_profit: f64,
    pub num_cuts_or_params: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub algorithm: Algorithm,
    pub final_value: ValueFn,
    pub checkpoints: Vec<usize>,
    pub metrics: Vec<IterationMetrics>,
    /// Wall-clock milliseconds per iteration; kept apart from the metrics so
    /// the latter are reproducible.
    pub wall_ms: Vec<f64>,
    /// Affine parameters after each iteration, starting with the initial
    /// ones (empty for cut backends).
    pub affine_history: Vec<(usize, AffineVfa)>,
    /// Number of backward-sweep updates skipped after a failure.
    pub failed_updates: usize,
}

impl TrainedModel {
    /// The value function as it stood after `iteration` (0 = initial).
    pub fn snapshot(&self, iteration: usize) -> ValueFn {
        match &self.final_value {
            ValueFn::Cuts(c) => {
                let mut c = c.clone();
                c.truncate_to_iteration(iteration);
                ValueFn::Cuts(c)
            }
            ValueFn::Affine(a) => ValueFn::Affine(
                self.affine_history
                    .get(iteration)
                    .map_or_else(|| a.clone(), |(_, v)| v.clone()),
            ),
            ValueFn::Exact(e) => ValueFn::Exact(e.clone()),
        }
    }

    pub fn write_metrics_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for m in &self.metrics {
            w.serialize(m)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_timing_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "wall_ms"])?;
        for (m, ms) in self.metrics.iter().zip(&self.wall_ms) {
            w.write_record([m.iteration.to_string(), format!("{ms:.3}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `i_max` forward/backward iterations.
pub fn train(inst: &Instance, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let mut value = initialize(inst, cfg.algorithm, cfg.affine_steps);
    let mut metrics = Vec::with_capacity(cfg.i_max);
    let mut wall_ms = Vec::with_capacity(cfg.i_max);
    let mut affine_history = Vec::new();
    if let ValueFn::Affine(a) = &value {
        affine_history.push((0, a.clone()));
    }
    let mut failed_updates = 0;
    for i in 1..=cfg.i_max {
        let started = Instant::now();
        let mut rng = stream(cfg.seed, Domain::Training, i as u64);
        let path = forward_sweep(inst, &value, &cfg.stage, &mut rng)?;
        for t in (2..=inst.horizon).rev() {
            let x_next = &path.states[t];
            if let Err(err) = backward_step(inst, &mut value, t, x_next, i, cfg) {
                failed_updates += 1;
                log::warn!("iteration {i}, t = {t}: update skipped ({err})");
            }
        }
        if let ValueFn::Affine(a) = &value {
            affine_history.push((i, a.clone()));
        }
        wall_ms.push(started.elapsed().as_secs_f64() * 1e3);
        metrics.push(IterationMetrics {
            iteration: i,
            realized_profit: path.realized_profit,
            num_cuts_or_params: value.size(),
        });
        log::debug!("{} iteration {i}: profit {:.3}", cfg.algorithm, path.realized_profit);
    }
    Ok(TrainedModel {
        algorithm: cfg.algorithm,
        final_value: value,
        checkpoints: cfg.checkpoints(),
        metrics,
        wall_ms,
        affine_history,
        failed_updates,
    })
}

/// Refines `Q_t` from `Q_{t+1}` at the sample `x_{t+1}`.
fn backward_step(
    inst: &Instance,
    value: &mut ValueFn,
    t: usize,
    x: &[u32],
    iteration: usize,
    cfg: &TrainConfig,
) -> Result<()> {
    match value {
        ValueFn::Affine(a) => {
            let oracle = PriceOracle::Newton(cfg.stage);
            let (target, _) = bellman_value(inst, |y| a.value(t + 1, y), x, &oracle)?;
            let td_error = a.value(t, x) - target;
            if !td_error.is_finite() {
                return Err(Error::Config(format!("non-finite temporal difference {td_error}")));
            }
            *a = affine_update(a, t, x, td_error);
        }
        ValueFn::Cuts(family) => {
            let (q_t, q_next) = family.split_at(t);
            match cfg.algorithm {
                Algorithm::Gbdp => {
                    gbdp_update(inst, q_t, q_next, x, iteration, &cfg.gbdp)?;
                }
                Algorithm::Nlsddp => {
                    nlsddp_update(inst, q_t, q_next, x, iteration, &cfg.nlsddp)?;
                }
                Algorithm::Affine => unreachable!("affine training uses affine parameters"),
            }
        }
        ValueFn::Exact(_) => return Err(Error::Config("an exact table is not trainable".into())),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CostModel, MnlParams, Price};

    fn tiny() -> Instance {
        let mnl = MnlParams::new(-2.5087, -0.0766, vec![-1.0305, -0.3591]).unwrap();
        Instance::new(
            3,
            2,
            0.8,
            34.53,
            (0.0, 10.0),
            mnl,
            CostModel::from_geometry(0.25, 25.0, 2),
        )
        .unwrap()
    }

    #[test]
    fn checkpoint_cadence() {
        assert_eq!(default_checkpoint_every(100), 1);
        assert_eq!(default_checkpoint_every(101), 2);
        assert_eq!(default_checkpoint_every(1000), 10);
        let mut cfg = TrainConfig::new(Algorithm::Gbdp, 7, 0);
        cfg.checkpoint_every = Some(3);
        assert_eq!(cfg.checkpoints(), vec![1, 4, 7]);
        cfg.i_max = 8;
        assert_eq!(cfg.checkpoints(), vec![1, 4, 7, 8]);
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.as_str().parse::<Algorithm>().unwrap(), a);
        }
        assert!("sddp".parse::<Algorithm>().is_err());
    }

    #[test]
    fn initial_values_agree_across_backends() {
        let inst = tiny();
        let fams: Vec<ValueFn> = Algorithm::ALL
            .iter()
            .map(|&a| initialize(&inst, a, StepSizes::default()))
            .collect();
        for t in 1..=inst.horizon + 1 {
            for x in inst.state_space().iter() {
                let v0 = fams[0].value(t, &x);
                for f in &fams[1..] {
                    assert!((f.value(t, &x) - v0).abs() < 1e-9);
                }
            }
        }
        let full = inst.full_state();
        assert!((fams[0].value(2, &full) + inst.cost.total(&full)).abs() < 1e-9);
    }

    #[test]
    fn forward_sweep_path_invariants() {
        let inst = tiny();
        let fam = initialize(&inst, Algorithm::Gbdp, StepSizes::default());
        let mut rng = stream(11, Domain::Training, 1);
        let path = forward_sweep(&inst, &fam, &StageSolveConfig::default(), &mut rng).unwrap();
        assert_eq!(path.states.len(), inst.horizon + 1);
        assert_eq!(path.states[0].total(), 0);
        let mut revenue = 0.0;
        for t in 0..inst.horizon {
            let step = path.states[t + 1].total() - path.states[t].total();
            assert!(step <= 1);
            for (s, p) in path.prices[t].iter().enumerate() {
                if path.states[t][s] < inst.capacity && t + 2 <= inst.horizon {
                    // the fixed point prices every open slot at the cap
                    assert_eq!(*p, Price::Charge(inst.price_high));
                }
            }
            if let TransitionOutcome::Slot(s) = path.outcomes[t] {
                revenue += inst.revenue_per_order + path.prices[t][s].charge().unwrap();
            }
        }
        let expected = revenue - inst.cost.total(&path.states[inst.horizon]);
        assert!((path.realized_profit - expected).abs() < 1e-12);
    }

    #[test]
    fn gbdp_adds_one_cut_per_backward_step() {
        let inst = tiny();
        let model = train(&inst, &TrainConfig::new(Algorithm::Gbdp, 1, 5)).unwrap();
        let ValueFn::Cuts(c) = &model.final_value else { panic!() };
        assert_eq!(c.layer(1).len(), 1);
        for t in 2..=inst.horizon {
            assert_eq!(c.layer(t).len(), 2);
        }
        assert_eq!(c.total_cuts(), inst.horizon + 1 + inst.horizon - 1);
    }

    #[test]
    fn training_is_reproducible() {
        let inst = tiny();
        for a in Algorithm::ALL {
            let cfg = TrainConfig::new(a, 5, 42);
            let m1 = train(&inst, &cfg).unwrap();
            let m2 = train(&inst, &cfg).unwrap();
            assert_eq!(m1.metrics, m2.metrics);
        }
    }

    #[test]
    fn snapshots_rewind_cut_families() {
        let inst = tiny();
        let model = train(&inst, &TrainConfig::new(Algorithm::Gbdp, 4, 3)).unwrap();
        let ValueFn::Cuts(c) = model.snapshot(2) else { panic!() };
        assert_eq!(c.total_cuts(), inst.horizon + 1 + 2 * (inst.horizon - 1));
    }

    #[test]
    fn rejects_zero_iterations() {
        assert!(train(&tiny(), &TrainConfig::new(Algorithm::Affine, 0, 1)).is_err());
    }
}
