//! Problem instance, state and price spaces, multinomial logit choice
//! probabilities and the stochastic order-arrival transition.

use std::fmt;
use std::ops::Deref;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Multinomial logit choice parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnlParams {
    pub beta_c: f64,
    /// Price sensitivity, strictly negative.
    pub beta_d: f64,
    /// Per-slot popularity.
    pub beta_s: Vec<f64>,
}

impl MnlParams {
    pub fn new(beta_c: f64, beta_d: f64, beta_s: Vec<f64>) -> Result<Self> {
        if !(beta_d < 0.0) {
            return Err(Error::InvalidInstance(format!(
                "price sensitivity beta_d must be negative, got {beta_d}"
            )));
        }
        if beta_s.is_empty() {
            return Err(Error::InvalidInstance("beta_s must not be empty".into()));
        }
        Ok(Self { beta_c, beta_d, beta_s })
    }

    pub fn n_slots(&self) -> usize {
        self.beta_s.len()
    }

    /// Utility offset `beta_c + beta_s` of slot `s` at zero price.
    #[inline]
    pub fn base_utility(&self, s: usize) -> f64 {
        self.beta_c + self.beta_s[s]
    }

    /// Unnormalised logit weight of slot `s`; zero for a closed slot.
    #[inline]
    pub fn weight(&self, s: usize, price: Price) -> f64 {
        match price {
            Price::Charge(d) => (self.base_utility(s) + self.beta_d * d).exp(),
            Price::Unavailable => 0.0,
        }
    }
}

/// Linear delivery cost `fixed_cost + var_cost_per_order * sum(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub cost_per_mile: f64,
    /// Average truck speed in mph.
    pub truck_speed: f64,
    pub var_cost_per_order: f64,
    pub fixed_cost: f64,
}

impl CostModel {
    /// Variable cost from the rectangular service-area model,
    /// `c_var = cost_per_mile * truck_speed / (24 + capacity)`.
    pub fn from_geometry(cost_per_mile: f64, truck_speed: f64, capacity: u32) -> Self {
        Self {
            cost_per_mile,
            truck_speed,
            var_cost_per_order: cost_per_mile * truck_speed / (24.0 + capacity as f64),
            fixed_cost: 0.0,
        }
    }

    pub fn total(&self, x: &[u32]) -> f64 {
        self.fixed_cost + self.var_cost_per_order * x.iter().map(|&v| v as f64).sum::<f64>()
    }
}

/// Delivery cost of the order vector `x`.
pub fn total_cost(cost: &CostModel, x: &[u32]) -> f64 {
    cost.total(x)
}

/// Full problem definition.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub n_slots: usize,
    pub horizon: usize,
    pub capacity: u32,
    pub arrival_rate: f64,
    pub revenue_per_order: f64,
    pub price_low: f64,
    pub price_high: f64,
    pub mnl: MnlParams,
    pub cost: CostModel,
}

/// Flat on-disk form of an [`Instance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    pub n_slots: usize,
    pub horizon: usize,
    pub capacity: u32,
    pub arrival_rate: f64,
    pub revenue_per_order: f64,
    pub price_low: f64,
    pub price_high: f64,
    pub beta_c: f64,
    pub beta_d: f64,
    pub beta_s: Vec<f64>,
    pub cost_per_mile: f64,
    pub truck_speed: f64,
}

impl Instance {
    pub fn new(
        horizon: usize,
        capacity: u32,
        arrival_rate: f64,
        revenue_per_order: f64,
        (price_low, price_high): (f64, f64),
        mnl: MnlParams,
        cost: CostModel,
    ) -> Result<Self> {
        let inst = Self {
            n_slots: mnl.n_slots(),
            horizon,
            capacity,
            arrival_rate,
            revenue_per_order,
            price_low,
            price_high,
            mnl,
            cost,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidInstance(msg));
        if self.n_slots == 0 {
            return fail("n_slots must be at least 1".into());
        }
        if self.mnl.beta_s.len() != self.n_slots {
            return fail(format!(
                "beta_s has {} entries but n_slots is {}",
                self.mnl.beta_s.len(),
                self.n_slots
            ));
        }
        if self.horizon == 0 {
            return fail("horizon must be at least 1".into());
        }
        if self.capacity == 0 {
            return fail("capacity must be at least 1".into());
        }
        if !(self.arrival_rate > 0.0 && self.arrival_rate <= 1.0) {
            return fail(format!("arrival_rate must lie in (0, 1], got {}", self.arrival_rate));
        }
        if !(self.price_low >= 0.0 && self.price_low < self.price_high) || !self.price_high.is_finite() {
            return fail(format!(
                "price range [{}, {}] must satisfy 0 <= low < high < inf",
                self.price_low, self.price_high
            ));
        }
        if !(self.mnl.beta_d < 0.0) {
            return fail(format!("beta_d must be negative, got {}", self.mnl.beta_d));
        }
        if self.cost.fixed_cost != 0.0 {
            return fail("fixed delivery cost must be zero".into());
        }
        if !(self.cost.var_cost_per_order >= 0.0) {
            return fail("variable cost per order must be non-negative".into());
        }
        Ok(())
    }

    pub fn from_config(cfg: &InstanceConfig) -> Result<Self> {
        let mnl = MnlParams::new(cfg.beta_c, cfg.beta_d, cfg.beta_s.clone())?;
        if mnl.n_slots() != cfg.n_slots {
            return Err(Error::InvalidInstance(format!(
                "beta_s has {} entries but n_slots is {}",
                mnl.n_slots(),
                cfg.n_slots
            )));
        }
        let cost = CostModel::from_geometry(cfg.cost_per_mile, cfg.truck_speed, cfg.capacity);
        Self::new(
            cfg.horizon,
            cfg.capacity,
            cfg.arrival_rate,
            cfg.revenue_per_order,
            (cfg.price_low, cfg.price_high),
            mnl,
            cost,
        )
    }

    pub fn to_config(&self) -> InstanceConfig {
        InstanceConfig {
            n_slots: self.n_slots,
            horizon: self.horizon,
            capacity: self.capacity,
            arrival_rate: self.arrival_rate,
            revenue_per_order: self.revenue_per_order,
            price_low: self.price_low,
            price_high: self.price_high,
            beta_c: self.mnl.beta_c,
            beta_d: self.mnl.beta_d,
            beta_s: self.mnl.beta_s.clone(),
            cost_per_mile: self.cost.cost_per_mile,
            truck_speed: self.cost.truck_speed,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: InstanceConfig = serde_json::from_str(text)?;
        Self::from_config(&cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_config()).expect("instance config serializes")
    }

    /// Stable content hash, used to tie report rows to the instance they ran on.
    ///
    /// Covers the derived cost model as well, since a variable cost may be
    /// set directly without going through the geometry formula.
    pub fn fingerprint(&self) -> String {
        let payload = serde_json::json!({
            "config": self.to_config(),
            "cost": self.cost,
        });
        let digest = Sha256::digest(payload.to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn state_space(&self) -> StateSpace {
        StateSpace::new(self.n_slots, self.capacity)
    }

    pub fn contains(&self, x: &[u32]) -> bool {
        x.len() == self.n_slots && x.iter().all(|&v| v <= self.capacity)
    }

    pub fn check_state(&self, x: &[u32]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::StateOutOfRange {
                state: x.to_vec(),
                capacity: self.capacity,
            })
        }
    }

    /// `d_high + r`, the magnitude of every fixed-point gradient component.
    pub fn max_margin(&self) -> f64 {
        self.price_high + self.revenue_per_order
    }

    pub fn full_state(&self) -> StateVector {
        StateVector::from(vec![self.capacity; self.n_slots])
    }
}

/// Order counts per slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateVector(Vec<u32>);

impl StateVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0; n])
    }

    /// `x + 1_s`.
    pub fn plus_unit(&self, s: usize) -> Self {
        let mut next = self.0.clone();
        next[s] += 1;
        Self(next)
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn into_inner(self) -> Vec<u32> {
        self.0
    }
}

impl From<Vec<u32>> for StateVector {
    fn from(v: Vec<u32>) -> Self {
        Self(v)
    }
}

impl Deref for StateVector {
    type Target = [u32];
    fn deref(&self) -> &[u32] {
        &self.0
    }
}

impl fmt::Display for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// Delivery charge of one slot. `Unavailable` closes the slot; its choice
/// probability is identically zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Price {
    Charge(f64),
    Unavailable,
}

impl Price {
    pub fn charge(self) -> Option<f64> {
        match self {
            Price::Charge(d) => Some(d),
            Price::Unavailable => None,
        }
    }

    pub fn is_available(self) -> bool {
        matches!(self, Price::Charge(_))
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Price::Charge(d) => write!(f, "{d}"),
            Price::Unavailable => write!(f, "inf"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceVector(pub Vec<Price>);

impl PriceVector {
    pub fn uniform(n: usize, price: Price) -> Self {
        Self(vec![price; n])
    }

    pub fn unavailable(n: usize) -> Self {
        Self::uniform(n, Price::Unavailable)
    }
}

impl Deref for PriceVector {
    type Target = [Price];
    fn deref(&self) -> &[Price] {
        &self.0
    }
}

/// Realisation of one booking-system arrival.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionOutcome {
    NoPurchase,
    Slot(usize),
}

/// Multinomial logit probabilities; index 0 is the no-purchase option,
/// index `s + 1` is slot `s`.
pub fn choice_probabilities(mnl: &MnlParams, d: &[Price]) -> Vec<f64> {
    let mut probs = Vec::with_capacity(d.len() + 1);
    probs.push(0.0);
    let mut total = 0.0;
    for (s, &price) in d.iter().enumerate() {
        let w = mnl.weight(s, price);
        total += w;
        probs.push(w);
    }
    let denom = 1.0 + total;
    probs[0] = 1.0 / denom;
    for p in probs.iter_mut().skip(1) {
        *p /= denom;
    }
    probs
}

/// Draw the next arrival outcome. Consumes exactly one uniform variate.
///
/// A full slot can never be booked, whatever its listed charge.
pub fn sample_transition<R: Rng + ?Sized>(
    inst: &Instance,
    x: &[u32],
    d: &[Price],
    rng: &mut R,
) -> Result<TransitionOutcome> {
    inst.check_state(x)?;
    let u: f64 = rng.random();
    let probs = choice_probabilities(&inst.mnl, d);
    let mut acc = 0.0;
    for s in 0..inst.n_slots {
        if x[s] >= inst.capacity {
            continue;
        }
        acc += inst.arrival_rate * probs[s + 1];
        if u < acc {
            return Ok(TransitionOutcome::Slot(s));
        }
    }
    Ok(TransitionOutcome::NoPurchase)
}

/// Enumeration of the lattice box `{0..=capacity}^n` with a mixed-radix index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateSpace {
    n: usize,
    capacity: u32,
}

impl StateSpace {
    pub fn new(n: usize, capacity: u32) -> Self {
        Self { n, capacity }
    }

    pub fn n_slots(&self) -> usize {
        self.n
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn contains(&self, x: &[u32]) -> bool {
        x.len() == self.n && x.iter().all(|&v| v <= self.capacity)
    }

    /// Number of states, saturating on overflow.
    pub fn len(&self) -> u64 {
        (self.capacity as u64 + 1).saturating_pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, x: &[u32]) -> usize {
        let radix = self.capacity as usize + 1;
        x.iter().rev().fold(0, |acc, &v| acc * radix + v as usize)
    }

    pub fn state(&self, mut idx: usize) -> StateVector {
        let radix = self.capacity as usize + 1;
        let mut x = vec![0u32; self.n];
        for v in x.iter_mut() {
            *v = (idx % radix) as u32;
            idx /= radix;
        }
        StateVector(x)
    }

    pub fn iter(&self) -> impl Iterator<Item = StateVector> + '_ {
        (0..self.len() as usize).map(move |i| self.state(i))
    }
}
