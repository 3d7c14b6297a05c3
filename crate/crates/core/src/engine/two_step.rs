//! Two-step clearing: every area clears on its own, then buyers of the
//! expensive area and sellers of the cheaper areas meet in an inter-area
//! market "C" with its own price.

use std::collections::HashMap;
use std::time::Duration;

use rayon::prelude::*;

use super::{clear_market, BuyerSlot, ClearingOutcome, SellerSlot, SolverConfig, Step2Response, Step2Selection, Trade};
use crate::econ::{cost_value, residual_capacity, social_welfare, utility_value, ConsumerParams, PlayerAllocation, ProsumerParams};
use crate::error::{MarketError, Result};
use crate::model::{AreaId, MarketLabel, PlayerId, Side};
use crate::scalar::{ordered_sum, Scalar};
use crate::scenario::Scenario;

/// What the inter-area coordinator learns about each area after step 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreaSummary<T> {
    pub area: AreaId,
    pub price: T,
    pub has_sellers: bool,
    pub has_buyers: bool,
}

impl<T> AreaSummary<T> {
    pub fn two_sided(&self) -> bool {
        self.has_sellers && self.has_buyers
    }
}

/// Area-level decision of who joins the inter-area market.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step2Plan {
    /// Data centre that runs the inter-area clearing.
    pub coordinator: AreaId,
    pub buyer_areas: Vec<AreaId>,
    pub seller_areas: Vec<AreaId>,
}

impl Step2Plan {
    pub fn invites(&self, area: AreaId, side: Side) -> bool {
        match side {
            Side::Buyer => self.buyer_areas.contains(&area),
            Side::Seller => self.seller_areas.contains(&area),
        }
    }
}

/// Picks the inter-area participants from step-1 area prices.
///
/// Returns `None` when step 2 is skipped: every area is two-sided and all
/// prices agree within `epsilon` (this covers single-area scenarios), or
/// the selection leaves one side empty.
///
/// Under [`Step2Selection::TopAreaBuys`] the buyers come from the highest
/// price area (ties go to the lowest area id) and the sellers from every
/// other two-sided area. Areas that were one-sided in step 1 contribute
/// whichever side they have under either rule; if that leaves no seller,
/// the top area sells instead.
pub fn choose_step2_plan<T: Scalar>(
    areas: &[AreaSummary<T>],
    rule: Step2Selection,
    epsilon: T,
) -> Option<Step2Plan> {
    let mut two_sided: Vec<&AreaSummary<T>> = areas.iter().filter(|a| a.two_sided()).collect();
    two_sided.sort_by_key(|a| a.area);
    let any_one_sided = areas.iter().any(|a| !a.two_sided());

    if !any_one_sided && !two_sided.is_empty() {
        let hi = two_sided.iter().map(|a| a.price).fold(T::neg_infinity(), T::max);
        let lo = two_sided.iter().map(|a| a.price).fold(T::infinity(), T::min);
        if hi - lo <= epsilon {
            return None;
        }
    }

    let top = two_sided
        .iter()
        .fold(None::<&AreaSummary<T>>, |best, a| match best {
            Some(b) if b.price >= a.price => Some(b),
            _ => Some(*a),
        })
        .map(|a| a.area);

    let mut buyer_areas = Vec::new();
    let mut seller_areas = Vec::new();
    let mut sorted: Vec<&AreaSummary<T>> = areas.iter().collect();
    sorted.sort_by_key(|a| a.area);
    for a in sorted {
        match rule {
            Step2Selection::TopAreaBuys => {
                if a.two_sided() {
                    if Some(a.area) == top {
                        buyer_areas.push(a.area);
                    } else {
                        seller_areas.push(a.area);
                    }
                } else if a.has_buyers {
                    buyer_areas.push(a.area);
                } else if a.has_sellers {
                    seller_areas.push(a.area);
                }
            }
            Step2Selection::AllResidual => {
                if a.has_buyers {
                    buyer_areas.push(a.area);
                }
                if a.has_sellers {
                    seller_areas.push(a.area);
                }
            }
        }
    }
    // Buyer-only areas next to a single two-sided area: that area is the only
    // possible supplier, whatever its price.
    if rule == Step2Selection::TopAreaBuys && seller_areas.is_empty() && buyer_areas.len() > 1 {
        if let Some(top) = top {
            buyer_areas.retain(|&a| a != top);
            seller_areas.push(top);
        }
    }
    if buyer_areas.is_empty() || seller_areas.is_empty() {
        return None;
    }
    let coordinator = top.unwrap_or_else(|| {
        *buyer_areas
            .iter()
            .chain(seller_areas.iter())
            .min()
            .expect("nonempty")
    });
    Some(Step2Plan {
        coordinator,
        buyer_areas,
        seller_areas,
    })
}

/// Inter-area participant slots, in scenario order.
#[derive(Debug, Clone)]
pub struct Step2Participants<'a, T> {
    pub sellers: Vec<SellerSlot<'a, T>>,
    pub buyers: Vec<BuyerSlot<'a, T>>,
}

/// Builds inter-area slots for the players a plan invites.
///
/// Each participant keeps its step-1 quantity. Its new quantity may take
/// any value in `[max(min − q_intra, 0), residual]`, so totals stay inside
/// the player's own bounds. In coupled mode the step-1 quantity is passed
/// as the commitment the response builds on.
pub fn select_step2_participants<'a, T: Scalar>(
    scenario: &'a Scenario<T>,
    step1: &[ClearingOutcome<T>],
    plan: &Step2Plan,
    response: Step2Response,
) -> Step2Participants<'a, T> {
    let intra = intra_quantities(step1);
    let held = |id: &PlayerId| intra.get(id).copied().unwrap_or_else(T::zero);
    let sellers = scenario
        .prosumers
        .iter()
        .filter(|p| plan.invites(p.area, Side::Seller))
        .map(|p| step2_seller_slot(p, held(&p.id), response))
        .collect();
    let buyers = scenario
        .consumers
        .iter()
        .filter(|c| plan.invites(c.area, Side::Buyer))
        .map(|c| step2_buyer_slot(c, held(&c.id), response))
        .collect();
    Step2Participants { sellers, buyers }
}

/// Inter-area slot of a seller holding `intra` from step 1.
pub fn step2_seller_slot<T: Scalar>(
    p: &ProsumerParams<T>,
    intra: T,
    response: Step2Response,
) -> SellerSlot<'_, T> {
    let hi = residual_capacity(p.s_max, intra);
    SellerSlot {
        params: p,
        committed: commitment(intra, response),
        lo: (p.s_min - intra).max(T::zero()).min(hi),
        hi,
    }
}

pub fn step2_buyer_slot<T: Scalar>(
    c: &ConsumerParams<T>,
    intra: T,
    response: Step2Response,
) -> BuyerSlot<'_, T> {
    let hi = residual_capacity(c.d_max, intra);
    BuyerSlot {
        params: c,
        committed: commitment(intra, response),
        lo: (c.d_min - intra).max(T::zero()).min(hi),
        hi,
    }
}

fn commitment<T: Scalar>(intra: T, response: Step2Response) -> T {
    match response {
        Step2Response::Coupled => intra,
        Step2Response::Literal => T::zero(),
    }
}

fn intra_quantities<T: Scalar>(step1: &[ClearingOutcome<T>]) -> HashMap<PlayerId, T> {
    step1
        .iter()
        .flat_map(|o| o.trades.iter())
        .map(|t| (t.player.clone(), t.quantity))
        .collect()
}

/// Step-1 slots of one area, in scenario order.
pub(crate) fn area_slots<T: Scalar>(
    scenario: &Scenario<T>,
    area: AreaId,
) -> (Vec<SellerSlot<'_, T>>, Vec<BuyerSlot<'_, T>>) {
    let sellers = scenario
        .prosumers
        .iter()
        .filter(|p| p.area == area)
        .map(SellerSlot::fresh)
        .collect();
    let buyers = scenario
        .consumers
        .iter()
        .filter(|c| c.area == area)
        .map(BuyerSlot::fresh)
        .collect();
    (sellers, buyers)
}

pub(crate) fn clear_area<T: Scalar>(
    scenario: &Scenario<T>,
    area: AreaId,
    cfg: &SolverConfig<T>,
) -> Result<ClearingOutcome<T>> {
    let (sellers, buyers) = area_slots(scenario, area);
    let label = MarketLabel::Area(area);
    if sellers.is_empty() || buyers.is_empty() {
        return Ok(ClearingOutcome::zero_trade(label, &sellers, &buyers, cfg.lambda_init));
    }
    clear_market(label, &sellers, &buyers, cfg)
}

/// A scenario with nobody on one side has nothing to clear in either step.
pub(crate) fn ensure_two_sided<T>(scenario: &Scenario<T>) -> Result<()> {
    if scenario.prosumers.is_empty() || scenario.consumers.is_empty() {
        let market = match scenario.areas.as_slice() {
            [only] => MarketLabel::Area(*only),
            _ => MarketLabel::Total,
        };
        return Err(MarketError::OneSidedMarket {
            market,
            sellers: scenario.prosumers.len(),
            buyers: scenario.consumers.len(),
        });
    }
    Ok(())
}

pub(crate) fn summarize<T: Scalar>(scenario: &Scenario<T>, step1: &[ClearingOutcome<T>]) -> Vec<AreaSummary<T>> {
    scenario
        .areas
        .iter()
        .zip(step1)
        .map(|(&area, o)| AreaSummary {
            area,
            price: o.price,
            has_sellers: scenario.prosumers.iter().any(|p| p.area == area),
            has_buyers: scenario.consumers.iter().any(|c| c.area == area),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timing {
    /// Longest single-area clearing in step 1.
    pub step1_max: Duration,
    pub step2: Duration,
    /// `step1_max + step2`: areas clear in parallel, then area C.
    pub composed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStepOutcome<T> {
    /// One outcome per area, in scenario area order.
    pub area_outcomes: Vec<ClearingOutcome<T>>,
    pub plan: Option<Step2Plan>,
    pub inter_outcome: Option<ClearingOutcome<T>>,
    /// Prosumers first, then consumers, in scenario order.
    pub allocations: Vec<PlayerAllocation<T>>,
    pub welfare: T,
    /// Total energy bought, `Σ d_total`.
    pub traded_energy: T,
    pub step1_welfare: T,
    pub step1_traded: T,
    pub timing: Timing,
}

impl<T: Scalar> TwoStepOutcome<T> {
    pub fn area_price(&self, area: AreaId) -> Option<T> {
        self.area_outcomes
            .iter()
            .find(|o| o.market == MarketLabel::Area(area))
            .map(|o| o.price)
    }

    pub fn inter_price(&self) -> Option<T> {
        self.inter_outcome.as_ref().map(|o| o.price)
    }

    pub fn converged(&self) -> bool {
        self.area_outcomes.iter().all(|o| o.converged)
            && self.inter_outcome.as_ref().is_none_or(|o| o.converged)
    }

    pub fn allocation_of(&self, player: &PlayerId) -> Option<&PlayerAllocation<T>> {
        self.allocations.iter().find(|a| &a.player == player)
    }

    pub fn without_timing(&self) -> Self {
        TwoStepOutcome {
            area_outcomes: self.area_outcomes.iter().map(|o| o.without_timing()).collect(),
            inter_outcome: self.inter_outcome.as_ref().map(|o| o.without_timing()),
            timing: Timing::default(),
            ..self.clone()
        }
    }
}

/// Combines step-1 and step-2 outcomes into per-player totals, welfare and
/// timing.
pub fn compose_two_step<T: Scalar>(
    scenario: &Scenario<T>,
    area_outcomes: Vec<ClearingOutcome<T>>,
    plan: Option<Step2Plan>,
    inter_outcome: Option<ClearingOutcome<T>>,
) -> Result<TwoStepOutcome<T>> {
    let intra = intra_quantities(&area_outcomes);
    let inter: HashMap<PlayerId, T> = inter_outcome
        .iter()
        .flat_map(|o| o.trades.iter())
        .map(|t| (t.player.clone(), t.quantity))
        .collect();
    let get = |m: &HashMap<PlayerId, T>, id: &PlayerId| m.get(id).copied().unwrap_or_else(T::zero);

    let mut allocations = Vec::with_capacity(scenario.prosumers.len() + scenario.consumers.len());
    for p in &scenario.prosumers {
        allocations.push(PlayerAllocation::new(
            p.id.clone(),
            Side::Seller,
            p.area,
            get(&intra, &p.id),
            get(&inter, &p.id),
        ));
    }
    for c in &scenario.consumers {
        allocations.push(PlayerAllocation::new(
            c.id.clone(),
            Side::Buyer,
            c.area,
            get(&intra, &c.id),
            get(&inter, &c.id),
        ));
    }

    let np = scenario.prosumers.len();
    for (p, a) in scenario.prosumers.iter().zip(&allocations[..np]) {
        if a.q_total < p.s_min {
            return Err(MarketError::UnmetMinimum {
                player: p.id.clone(),
                minimum: p.s_min.to_f64_lossy(),
            });
        }
    }
    for (c, a) in scenario.consumers.iter().zip(&allocations[np..]) {
        if a.q_total < c.d_min {
            return Err(MarketError::UnmetMinimum {
                player: c.id.clone(),
                minimum: c.d_min.to_f64_lossy(),
            });
        }
    }

    let welfare_of = |pick: fn(&PlayerAllocation<T>) -> T| -> Result<T> {
        let sellers: Vec<_> = scenario
            .prosumers
            .iter()
            .zip(&allocations[..np])
            .map(|(p, a)| (p, pick(a)))
            .collect();
        let buyers: Vec<_> = scenario
            .consumers
            .iter()
            .zip(&allocations[np..])
            .map(|(c, a)| (c, pick(a)))
            .collect();
        social_welfare(&buyers, &sellers)
    };
    let welfare = welfare_of(|a| a.q_total)?;
    // Step-1 positions may sit below a floor that step 2 tops up, so they
    // are valued without the bounds check.
    let step1_welfare = ordered_sum(
        scenario
            .consumers
            .iter()
            .zip(&allocations[np..])
            .map(|(c, a)| utility_value(c, a.q_intra))
            .collect::<Result<Vec<_>>>()?,
    ) - ordered_sum(
        scenario
            .prosumers
            .iter()
            .zip(&allocations[..np])
            .map(|(p, a)| cost_value(p, a.q_intra))
            .collect::<Result<Vec<_>>>()?,
    );
    let traded_energy = ordered_sum(allocations[np..].iter().map(|a| a.q_total));
    let step1_traded = ordered_sum(allocations[np..].iter().map(|a| a.q_intra));

    let step1_max = area_outcomes
        .iter()
        .map(|o| o.wall_time)
        .max()
        .unwrap_or_default();
    let step2 = inter_outcome.as_ref().map(|o| o.wall_time).unwrap_or_default();

    Ok(TwoStepOutcome {
        area_outcomes,
        plan,
        inter_outcome,
        allocations,
        welfare,
        traded_energy,
        step1_welfare,
        step1_traded,
        timing: Timing {
            step1_max,
            step2,
            composed: step1_max + step2,
        },
    })
}

/// Runs both clearing steps in process. Areas clear concurrently; results
/// are reduced in scenario area order.
pub fn run_2smc<T: Scalar>(scenario: &Scenario<T>, cfg: &SolverConfig<T>) -> Result<TwoStepOutcome<T>> {
    cfg.validate()?;
    ensure_two_sided(scenario)?;
    let area_outcomes = scenario
        .areas
        .par_iter()
        .map(|&area| clear_area(scenario, area, cfg))
        .collect::<Result<Vec<_>>>()?;

    let summary = summarize(scenario, &area_outcomes);
    let plan = choose_step2_plan(&summary, cfg.step2_selection, cfg.epsilon);
    let inter_outcome = match &plan {
        Some(plan) => {
            let parts = select_step2_participants(scenario, &area_outcomes, plan, cfg.step2_response);
            Some(clear_market(MarketLabel::Inter, &parts.sellers, &parts.buyers, cfg)?)
        }
        None => None,
    };
    compose_two_step(scenario, area_outcomes, plan, inter_outcome)
}

/// Clears every player of every area as one market with a single price.
pub fn run_1smc<T: Scalar>(scenario: &Scenario<T>, cfg: &SolverConfig<T>) -> Result<ClearingOutcome<T>> {
    let sellers: Vec<_> = scenario.prosumers.iter().map(SellerSlot::fresh).collect();
    let buyers: Vec<_> = scenario.consumers.iter().map(BuyerSlot::fresh).collect();
    clear_market(MarketLabel::Total, &sellers, &buyers, cfg)
}

/// Social welfare of a single-market outcome whose trades cover every
/// player of the scenario.
pub fn outcome_welfare<T: Scalar>(scenario: &Scenario<T>, trades: &[Trade<T>]) -> Result<T> {
    let q: HashMap<&PlayerId, T> = trades.iter().map(|t| (&t.player, t.quantity)).collect();
    let get = |id: &PlayerId| q.get(id).copied().unwrap_or_else(T::zero);
    let sellers: Vec<_> = scenario.prosumers.iter().map(|p| (p, get(&p.id))).collect();
    let buyers: Vec<_> = scenario.consumers.iter().map(|c| (c, get(&c.id))).collect();
    social_welfare(&buyers, &sellers)
}
