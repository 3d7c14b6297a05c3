//! Single-price equilibrium by bisection.
//!
//! Aggregate excess supply `E(λ) = Σ s_i(λ) − Σ d_j(λ)` is piecewise linear
//! and nondecreasing in `λ`, so the clearing price is bracketed by `0` and
//! the largest `ω` (no buyer demands anything above it) and bisection
//! converges to it without any step size or iteration tuning. This module
//! shares only the closed-form best responses with the dual-ascent engine.

use crate::engine::{BuyerSlot, SellerSlot};
use crate::error::{MarketError, Result};
use crate::model::MarketLabel;
use crate::scalar::{ordered_sum, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumResult<T> {
    pub price: T,
    /// `min(supply, demand)` at `price`.
    pub traded: T,
    /// Excess supply at `price`.
    pub residual: T,
    pub bracket_width: T,
    pub supply: T,
    pub demand: T,
}

pub fn aggregate_supply<T: Scalar>(sellers: &[SellerSlot<'_, T>], price: T) -> Result<T> {
    Ok(ordered_sum(
        sellers
            .iter()
            .map(|s| s.respond(price))
            .collect::<Result<Vec<_>>>()?,
    ))
}

pub fn aggregate_demand<T: Scalar>(buyers: &[BuyerSlot<'_, T>], price: T) -> Result<T> {
    Ok(ordered_sum(
        buyers
            .iter()
            .map(|b| b.respond(price))
            .collect::<Result<Vec<_>>>()?,
    ))
}

pub fn aggregate_excess<T: Scalar>(
    sellers: &[SellerSlot<'_, T>],
    buyers: &[BuyerSlot<'_, T>],
    price: T,
) -> Result<T> {
    Ok(aggregate_supply(sellers, price)? - aggregate_demand(buyers, price)?)
}

/// Bisects aggregate excess supply on `[0, max ω]`.
///
/// Returns price `0` when supply already covers demand at zero price.
/// Flat stretches of excess at zero may contain a whole interval of
/// clearing prices; the midpoint of the final bracket is returned and
/// `bracket_width` records how wide it was.
pub fn bisect_equilibrium<T: Scalar>(
    sellers: &[SellerSlot<'_, T>],
    buyers: &[BuyerSlot<'_, T>],
    tol_price: T,
) -> Result<EquilibriumResult<T>> {
    if sellers.is_empty() || buyers.is_empty() {
        return Err(MarketError::OneSidedMarket {
            market: MarketLabel::Total,
            sellers: sellers.len(),
            buyers: buyers.len(),
        });
    }
    // written to reject NaN as well
    if tol_price.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) {
        return Err(MarketError::domain("price tolerance must be positive"));
    }
    let at = |price: T| -> Result<EquilibriumResult<T>> {
        let supply = aggregate_supply(sellers, price)?;
        let demand = aggregate_demand(buyers, price)?;
        Ok(EquilibriumResult {
            price,
            traded: supply.min(demand),
            residual: supply - demand,
            bracket_width: T::zero(),
            supply,
            demand,
        })
    };

    let zero = at(T::zero())?;
    if zero.residual >= T::zero() {
        return Ok(zero);
    }

    let mut lo = T::zero();
    let mut hi = buyers
        .iter()
        .map(|b| b.params.omega)
        .fold(T::zero(), T::max);
    // Minimum-demand floors can keep excess negative even above max ω;
    // widen until the sign changes or the bracket stops growing.
    for _ in 0..64 {
        if aggregate_excess(sellers, buyers, hi)? >= T::zero() {
            break;
        }
        hi = hi * T::two() + T::one();
    }

    for _ in 0..256 {
        if hi - lo <= tol_price {
            break;
        }
        let mid = lo + (hi - lo) / T::two();
        if mid <= lo || mid >= hi {
            break;
        }
        if aggregate_excess(sellers, buyers, mid)? >= T::zero() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut out = at(lo + (hi - lo) / T::two())?;
    out.bracket_width = hi - lo;
    Ok(out)
}
