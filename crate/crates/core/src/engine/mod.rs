//! Dual-ascent market clearing.
//!
//! A data centre posts a price, every participant answers with its best
//! response, and the price moves in proportion to the demand-supply
//! mismatch:
//!
//! ```text
//! λ(k+1) = max(0, λ(k) + η · (D(k) − S(k)))
//! ```
//!
//! until two successive prices differ by at most `ε`. [`DualAscent`] holds
//! the price state machine on its own so the in-process engine and the
//! message-passing runtime in [`crate::sim`] drive the exact same arithmetic.

pub(crate) mod two_step;

use std::fmt;
use std::time::{Duration, Instant};

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::econ::{consumer_best_response, prosumer_best_response, ConsumerParams, ProsumerParams};
use crate::error::{MarketError, Result};
use crate::model::{AreaId, MarketLabel, PlayerId, Side};
use crate::scalar::{ordered_sum, Scalar};

pub use two_step::{
    choose_step2_plan, compose_two_step, run_1smc, run_2smc, select_step2_participants,
    outcome_welfare, step2_buyer_slot, step2_seller_slot, AreaSummary, Step2Participants, Step2Plan, Timing, TwoStepOutcome,
};

/// Price step size `η`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaMode<T> {
    /// Use [`default_step_size`] over the participants of each clearing.
    Auto,
    Fixed(T),
}

impl<T: Serialize> Serialize for EtaMode<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            EtaMode::Auto => serializer.serialize_str("auto"),
            EtaMode::Fixed(v) => v.serialize(serializer),
        }
    }
}

impl<'de, T: Scalar> Deserialize<'de> for EtaMode<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct EtaVisitor<T>(std::marker::PhantomData<T>);

        impl<T: Scalar> Visitor<'_> for EtaVisitor<T> {
            type Value = EtaMode<T>;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("\"auto\" or a positive number")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Self::Value, E> {
                if v == "auto" {
                    Ok(EtaMode::Auto)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Self::Value, E> {
                T::from_f64(v)
                    .map(EtaMode::Fixed)
                    .ok_or_else(|| E::invalid_value(de::Unexpected::Float(v), &self))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Self::Value, E> {
                self.visit_f64(v as f64)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Self::Value, E> {
                self.visit_f64(v as f64)
            }
        }

        deserializer.deserialize_any(EtaVisitor(std::marker::PhantomData))
    }
}

/// Which players take part in the inter-area clearing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step2Selection {
    /// Buyers of the single highest-price area, sellers of every other area.
    #[default]
    TopAreaBuys,
    /// Every player joins with its residual bounds.
    AllResidual,
}

/// How inter-area responses account for the intra-area position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step2Response {
    /// Maximize incremental surplus given the intra-area commitment.
    #[default]
    Coupled,
    /// Apply the full cost/utility curve to the increment alone.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct SolverConfig<T> {
    #[serde(default = "eta_auto")]
    pub eta: EtaMode<T>,
    #[serde(default = "default_epsilon")]
    pub epsilon: T,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "zero")]
    pub lambda_init: T,
    #[serde(default)]
    pub step2_selection: Step2Selection,
    #[serde(default)]
    pub step2_response: Step2Response,
}

fn eta_auto<T>() -> EtaMode<T> {
    EtaMode::Auto
}

fn default_epsilon<T: Scalar>() -> T {
    T::lit(1e-4)
}

fn default_max_iters() -> usize {
    10_000
}

fn zero<T: Scalar>() -> T {
    T::zero()
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        SolverConfig {
            eta: EtaMode::Auto,
            epsilon: default_epsilon(),
            max_iters: default_max_iters(),
            lambda_init: T::zero(),
            step2_selection: Step2Selection::default(),
            step2_response: Step2Response::default(),
        }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn with_epsilon(mut self, epsilon: T) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > T::zero()) {
            return Err(MarketError::InvalidScenario("solver epsilon must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(MarketError::InvalidScenario("solver max_iters must be at least 1".into()));
        }
        if !(self.lambda_init.is_finite() && self.lambda_init >= T::zero()) {
            return Err(MarketError::InvalidScenario(
                "solver lambda_init must be nonnegative".into(),
            ));
        }
        if let EtaMode::Fixed(eta) = self.eta {
            if !(eta.is_finite() && eta > T::zero()) {
                return Err(MarketError::InvalidScenario("solver eta must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One price update of the dual ascent, projected onto `λ ≥ 0`.
pub fn price_update<T: Scalar>(price: T, eta: T, supply: T, demand: T) -> T {
    (price + eta * (demand - supply)).max(T::zero())
}

/// `1 / (Σ 1/2μ + Σ 1/2a)`: the reciprocal of the largest possible slope of
/// aggregate excess supply, which keeps the price iteration monotone.
///
/// Curvatures are summed buyers first, then sellers, each in the given
/// order.
pub fn default_step_size<T: Scalar>(
    buyer_slopes: impl IntoIterator<Item = T>,
    seller_slopes: impl IntoIterator<Item = T>,
) -> Result<T> {
    let mut count = 0usize;
    let buyers = ordered_sum(buyer_slopes.into_iter().inspect(|_| count += 1));
    let sellers = ordered_sum(seller_slopes.into_iter().inspect(|_| count += 1));
    if count == 0 {
        return Err(MarketError::domain("step size needs at least one player"));
    }
    let total = buyers + sellers;
    if !(total > T::zero() && total.is_finite()) {
        return Err(MarketError::domain("aggregate response slope must be positive"));
    }
    Ok(T::one() / total)
}

/// A seller's view of one clearing: its parameters, what it already holds
/// from an earlier clearing, and the interval its new quantity may take.
#[derive(Debug, Clone, Copy)]
pub struct SellerSlot<'a, T> {
    pub params: &'a ProsumerParams<T>,
    pub committed: T,
    pub lo: T,
    pub hi: T,
}

#[derive(Debug, Clone, Copy)]
pub struct BuyerSlot<'a, T> {
    pub params: &'a ConsumerParams<T>,
    pub committed: T,
    pub lo: T,
    pub hi: T,
}

impl<'a, T: Scalar> SellerSlot<'a, T> {
    /// Nothing committed, full `[s_min, s_max]` range.
    pub fn fresh(params: &'a ProsumerParams<T>) -> Self {
        SellerSlot {
            params,
            committed: T::zero(),
            lo: params.s_min,
            hi: params.s_max,
        }
    }

    pub fn respond(&self, price: T) -> Result<T> {
        prosumer_best_response(self.params, price, self.committed, self.lo, self.hi)
    }
}

impl<'a, T: Scalar> BuyerSlot<'a, T> {
    pub fn fresh(params: &'a ConsumerParams<T>) -> Self {
        BuyerSlot {
            params,
            committed: T::zero(),
            lo: params.d_min,
            hi: params.d_max,
        }
    }

    pub fn respond(&self, price: T) -> Result<T> {
        consumer_best_response(self.params, price, self.committed, self.lo, self.hi)
    }
}

/// Resolves the configured step size for a participant set.
pub fn resolve_step_size<T: Scalar>(
    eta: EtaMode<T>,
    sellers: &[SellerSlot<'_, T>],
    buyers: &[BuyerSlot<'_, T>],
) -> Result<T> {
    match eta {
        EtaMode::Fixed(v) => Ok(v),
        EtaMode::Auto => default_step_size(
            buyers.iter().map(|b| b.params.slope()),
            sellers.iter().map(|s| s.params.slope()),
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint<T> {
    pub iteration: usize,
    pub price: T,
    pub supply: T,
    pub demand: T,
}

/// Quantity one participant cleared in one market.
#[derive(Debug, Clone, PartialEq)]
pub struct Trade<T> {
    pub player: PlayerId,
    pub side: Side,
    pub area: AreaId,
    pub quantity: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClearingOutcome<T> {
    pub market: MarketLabel,
    /// Final price: the last posted price, whose responses are in `trades`.
    pub price: T,
    /// Sellers first, then buyers, in participant order.
    pub trades: Vec<Trade<T>>,
    pub trajectory: Vec<TrajectoryPoint<T>>,
    /// Number of prices posted (rounds of the protocol).
    pub iterations: usize,
    pub converged: bool,
    /// `|λ(next) − λ(last)|` from the final stopping test.
    pub last_step: T,
    pub step_size: T,
    /// Set when the market had no sellers or no buyers and was not iterated.
    pub one_sided: bool,
    pub wall_time: Duration,
}

impl<T: Scalar> ClearingOutcome<T> {
    pub fn supply(&self) -> T {
        ordered_sum(self.trades.iter().filter(|t| t.side == Side::Seller).map(|t| t.quantity))
    }

    pub fn demand(&self) -> T {
        ordered_sum(self.trades.iter().filter(|t| t.side == Side::Buyer).map(|t| t.quantity))
    }

    /// Cleared energy, `min(supply, demand)`.
    pub fn traded(&self) -> T {
        self.supply().min(self.demand())
    }

    pub fn quantity_of(&self, player: &PlayerId) -> Option<T> {
        self.trades.iter().find(|t| &t.player == player).map(|t| t.quantity)
    }

    /// Zero-trade outcome for a market with no counterpart side.
    pub fn zero_trade(
        market: MarketLabel,
        sellers: &[SellerSlot<'_, T>],
        buyers: &[BuyerSlot<'_, T>],
        price: T,
    ) -> Self {
        Self::unclearable(
            market,
            trades_from(sellers, buyers, |_| T::zero(), |_| T::zero()),
            price,
        )
    }

    /// Outcome of a market that was never iterated; `trades` should carry
    /// zero quantities.
    pub fn unclearable(market: MarketLabel, trades: Vec<Trade<T>>, price: T) -> Self {
        ClearingOutcome {
            market,
            price,
            trades,
            trajectory: Vec::new(),
            iterations: 0,
            converged: true,
            last_step: T::zero(),
            step_size: T::zero(),
            one_sided: true,
            wall_time: Duration::ZERO,
        }
    }

    /// Same outcome with the wall-clock field zeroed, for equality checks.
    pub fn without_timing(&self) -> Self {
        ClearingOutcome {
            wall_time: Duration::ZERO,
            ..self.clone()
        }
    }
}

pub(crate) fn trades_from<T: Scalar>(
    sellers: &[SellerSlot<'_, T>],
    buyers: &[BuyerSlot<'_, T>],
    seller_q: impl Fn(usize) -> T,
    buyer_q: impl Fn(usize) -> T,
) -> Vec<Trade<T>> {
    let s = sellers.iter().enumerate().map(|(i, slot)| Trade {
        player: slot.params.id.clone(),
        side: Side::Seller,
        area: slot.params.area,
        quantity: seller_q(i),
    });
    let b = buyers.iter().enumerate().map(|(j, slot)| Trade {
        player: slot.params.id.clone(),
        side: Side::Buyer,
        area: slot.params.area,
        quantity: buyer_q(j),
    });
    s.chain(b).collect()
}

/// Price state of one data centre.
///
/// Call [`DualAscent::observe`] with the aggregates answered to the current
/// price; it either returns the next price to post or `None` once the
/// stopping rule fires or the iteration cap is reached.
#[derive(Debug, Clone)]
pub struct DualAscent<T> {
    price: T,
    eta: T,
    epsilon: T,
    max_iters: usize,
    trajectory: Vec<TrajectoryPoint<T>>,
    converged: bool,
    last_step: T,
}

impl<T: Scalar> DualAscent<T> {
    pub fn new(cfg: &SolverConfig<T>, eta: T) -> Self {
        DualAscent {
            price: cfg.lambda_init,
            eta,
            epsilon: cfg.epsilon,
            max_iters: cfg.max_iters,
            trajectory: Vec::new(),
            converged: false,
            last_step: T::infinity(),
        }
    }

    pub fn price(&self) -> T {
        self.price
    }

    /// Index of the price currently posted.
    pub fn iteration(&self) -> usize {
        self.trajectory.len()
    }

    pub fn observe(&mut self, supply: T, demand: T) -> Option<T> {
        self.trajectory.push(TrajectoryPoint {
            iteration: self.trajectory.len(),
            price: self.price,
            supply,
            demand,
        });
        let next = price_update(self.price, self.eta, supply, demand);
        self.last_step = (next - self.price).abs();
        if self.last_step <= self.epsilon {
            self.converged = true;
            return None;
        }
        if self.trajectory.len() >= self.max_iters {
            return None;
        }
        self.price = next;
        Some(next)
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn finish(
        self,
        market: MarketLabel,
        trades: Vec<Trade<T>>,
        wall_time: Duration,
    ) -> ClearingOutcome<T> {
        ClearingOutcome {
            market,
            price: self.price,
            trades,
            iterations: self.trajectory.len(),
            trajectory: self.trajectory,
            converged: self.converged,
            last_step: self.last_step,
            step_size: self.eta,
            one_sided: false,
            wall_time,
        }
    }
}

/// Clears one market by dual ascent.
///
/// Participants answer in the given order and aggregates are summed in
/// that order, so the result is a deterministic function of the inputs.
/// Hitting `max_iters` is not an error; the outcome is flagged
/// `converged = false`.
pub fn clear_market<T: Scalar>(
    market: MarketLabel,
    sellers: &[SellerSlot<'_, T>],
    buyers: &[BuyerSlot<'_, T>],
    cfg: &SolverConfig<T>,
) -> Result<ClearingOutcome<T>> {
    if sellers.is_empty() || buyers.is_empty() {
        return Err(MarketError::OneSidedMarket {
            market,
            sellers: sellers.len(),
            buyers: buyers.len(),
        });
    }
    cfg.validate()?;
    for s in sellers {
        if !(s.lo >= T::zero() && s.lo <= s.hi) {
            return Err(MarketError::domain(format!("seller {} has empty bounds", s.params.id)));
        }
    }
    for b in buyers {
        if !(b.lo >= T::zero() && b.lo <= b.hi) {
            return Err(MarketError::domain(format!("buyer {} has empty bounds", b.params.id)));
        }
    }
    let eta = resolve_step_size(cfg.eta, sellers, buyers)?;

    let start = Instant::now();
    let mut ascent = DualAscent::new(cfg, eta);
    let mut supply_q = vec![T::zero(); sellers.len()];
    let mut demand_q = vec![T::zero(); buyers.len()];
    loop {
        let price = ascent.price();
        for (q, slot) in supply_q.iter_mut().zip(sellers) {
            *q = slot.respond(price)?;
        }
        for (q, slot) in demand_q.iter_mut().zip(buyers) {
            *q = slot.respond(price)?;
        }
        let supply = ordered_sum(supply_q.iter().copied());
        let demand = ordered_sum(demand_q.iter().copied());
        if ascent.observe(supply, demand).is_none() {
            break;
        }
    }
    let wall_time = start.elapsed();
    let trades = trades_from(sellers, buyers, |i| supply_q[i], |j| demand_q[j]);
    Ok(ascent.finish(market, trades, wall_time))
}
