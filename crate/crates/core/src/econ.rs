//! Player economics: saturating quadratic utility for consumers, quadratic
//! generation cost for prosumers, surpluses, and closed-form best responses
//! to a posted price.
//!
//! Every function here is pure. Best responses accept a `committed`
//! quantity so the same closed form serves the first (intra-area) clearing,
//! where nothing is committed yet, and the coupled second (inter-area)
//! clearing, where the player already holds its intra-area position.

use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};
use crate::model::{AreaId, PlayerId, Side};
use crate::scalar::{clamp, ordered_sum, Scalar};

fn zero<T: Scalar>() -> T {
    T::zero()
}

/// A buying participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct ConsumerParams<T> {
    pub id: PlayerId,
    pub area: AreaId,
    /// Willingness to pay at zero consumption (currency/kWh).
    pub omega: T,
    /// Utility curvature (currency/kWh²).
    pub mu: T,
    #[serde(default = "zero")]
    pub d_min: T,
    pub d_max: T,
}

/// A selling participant with distributed generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct ProsumerParams<T> {
    pub id: PlayerId,
    pub area: AreaId,
    /// Quadratic cost coefficient (currency/kWh²).
    pub a: T,
    /// Linear cost coefficient (currency/kWh).
    pub b: T,
    /// Fixed cost (currency). Never moves a best response.
    #[serde(default = "zero")]
    pub gamma: T,
    #[serde(default = "zero")]
    pub s_min: T,
    pub s_max: T,
}

impl<T: Scalar> ConsumerParams<T> {
    pub fn new(id: impl Into<PlayerId>, area: u32, omega: T, mu: T, d_max: T) -> Self {
        ConsumerParams {
            id: id.into(),
            area: AreaId(area),
            omega,
            mu,
            d_min: T::zero(),
            d_max,
        }
    }

    /// Consumption at which utility saturates, `ω / 2μ`.
    pub fn knee(&self) -> T {
        self.omega / (T::two() * self.mu)
    }

    /// Response slope `1 / 2μ` of demand with respect to price.
    pub fn slope(&self) -> T {
        T::one() / (T::two() * self.mu)
    }

    pub fn marginal_utility(&self, d: T) -> T {
        self.omega - T::two() * self.mu * d
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| {
            Err(MarketError::InvalidScenario(format!(
                "consumer {}: {what}",
                self.id
            )))
        };
        if !(self.omega.is_finite() && self.omega > T::zero()) {
            return bad("omega must be positive");
        }
        if !(self.mu.is_finite() && self.mu > T::zero()) {
            return bad("mu must be positive");
        }
        if !(self.d_min >= T::zero() && self.d_min <= self.d_max && self.d_max.is_finite()) {
            return bad("bounds must satisfy 0 <= d_min <= d_max");
        }
        Ok(())
    }
}

impl<T: Scalar> ProsumerParams<T> {
    pub fn new(id: impl Into<PlayerId>, area: u32, a: T, b: T, s_max: T) -> Self {
        ProsumerParams {
            id: id.into(),
            area: AreaId(area),
            a,
            b,
            gamma: T::zero(),
            s_min: T::zero(),
            s_max,
        }
    }

    /// Response slope `1 / 2a` of supply with respect to price.
    pub fn slope(&self) -> T {
        T::one() / (T::two() * self.a)
    }

    pub fn marginal_cost(&self, s: T) -> T {
        self.b + T::two() * self.a * s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| {
            Err(MarketError::InvalidScenario(format!(
                "prosumer {}: {what}",
                self.id
            )))
        };
        if !(self.a.is_finite() && self.a > T::zero()) {
            return bad("a must be positive");
        }
        if !(self.b.is_finite() && self.b >= T::zero()) {
            return bad("b must be nonnegative");
        }
        if !(self.gamma.is_finite() && self.gamma >= T::zero()) {
            return bad("gamma must be nonnegative");
        }
        if !(self.s_min >= T::zero() && self.s_min <= self.s_max && self.s_max.is_finite()) {
            return bad("bounds must satisfy 0 <= s_min <= s_max");
        }
        Ok(())
    }
}

/// Intra-area, inter-area and total quantity of one player.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayerAllocation<T> {
    pub player: PlayerId,
    pub side: Side,
    pub area: AreaId,
    pub q_intra: T,
    pub q_inter: T,
    pub q_total: T,
}

impl<T: Scalar> PlayerAllocation<T> {
    pub fn new(player: PlayerId, side: Side, area: AreaId, q_intra: T, q_inter: T) -> Self {
        PlayerAllocation {
            player,
            side,
            area,
            q_intra,
            q_inter,
            q_total: q_intra + q_inter,
        }
    }
}

fn non_negative<T: Scalar>(q: T, what: &str) -> Result<()> {
    if q >= T::zero() {
        Ok(())
    } else {
        Err(MarketError::domain(format!("{what} must be nonnegative, got {q}")))
    }
}

pub fn utility_value<T: Scalar>(c: &ConsumerParams<T>, d: T) -> Result<T> {
    non_negative(d, "demand")?;
    if d < c.knee() {
        Ok(c.omega * d - c.mu * d * d)
    } else {
        Ok(c.omega * c.omega / (T::lit(4.0) * c.mu))
    }
}

pub fn cost_value<T: Scalar>(p: &ProsumerParams<T>, s: T) -> Result<T> {
    non_negative(s, "supply")?;
    Ok(p.a * s * s + p.b * s + p.gamma)
}

pub fn consumer_surplus<T: Scalar>(c: &ConsumerParams<T>, d: T, price: T) -> Result<T> {
    Ok(utility_value(c, d)? - price * d)
}

pub fn prosumer_surplus<T: Scalar>(p: &ProsumerParams<T>, s: T, price: T) -> Result<T> {
    Ok(price * s - cost_value(p, s)?)
}

fn check_interval<T: Scalar>(lo: T, hi: T) -> Result<()> {
    if lo >= T::zero() && lo <= hi {
        Ok(())
    } else {
        Err(MarketError::domain(format!(
            "response interval [{lo}, {hi}] is empty or negative"
        )))
    }
}

/// Incremental demand maximizing `U(committed + q) - price * q` over
/// `q ∈ [lo, hi]`.
///
/// At zero price every consumption past the knee is optimal; the clamp
/// returns the knee (or the cap) deterministically.
pub fn consumer_best_response<T: Scalar>(
    c: &ConsumerParams<T>,
    price: T,
    committed: T,
    lo: T,
    hi: T,
) -> Result<T> {
    check_interval(lo, hi)?;
    Ok(clamp((c.omega - price) / (T::two() * c.mu) - committed, lo, hi))
}

/// Incremental supply maximizing `price * q - [C(committed + q) - C(committed)]`
/// over `q ∈ [lo, hi]`.
pub fn prosumer_best_response<T: Scalar>(
    p: &ProsumerParams<T>,
    price: T,
    committed: T,
    lo: T,
    hi: T,
) -> Result<T> {
    check_interval(lo, hi)?;
    Ok(clamp((price - p.b) / (T::two() * p.a) - committed, lo, hi))
}

/// Largest increment `r` with `committed + r <= cap` in floating point, so a
/// player responding inside `[0, r]` can never overshoot its cap after the
/// two positions are added.
pub fn residual_capacity<T: Scalar>(cap: T, committed: T) -> T {
    let mut r = (cap - committed).max(T::zero());
    while committed + r > cap && r > T::zero() {
        let next = r - r * T::epsilon();
        r = if next < r { next } else { T::zero() };
    }
    r
}

/// Total utility minus total generation cost over all players.
pub fn social_welfare<T: Scalar>(
    consumers: &[(&ConsumerParams<T>, T)],
    prosumers: &[(&ProsumerParams<T>, T)],
) -> Result<T> {
    for (c, d) in consumers {
        if !(*d >= c.d_min && *d <= c.d_max) {
            return Err(MarketError::domain(format!(
                "consumer {} demand {d} outside [{}, {}]",
                c.id, c.d_min, c.d_max
            )));
        }
    }
    for (p, s) in prosumers {
        if !(*s >= p.s_min && *s <= p.s_max) {
            return Err(MarketError::domain(format!(
                "prosumer {} supply {s} outside [{}, {}]",
                p.id, p.s_min, p.s_max
            )));
        }
    }
    let utility = ordered_sum(
        consumers
            .iter()
            .map(|(c, d)| utility_value(c, *d))
            .collect::<Result<Vec<_>>>()?,
    );
    let cost = ordered_sum(
        prosumers
            .iter()
            .map(|(p, s)| cost_value(p, *s))
            .collect::<Result<Vec<_>>>()?,
    );
    Ok(utility - cost)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consumer1() -> ConsumerParams<f64> {
        ConsumerParams::new("C1", 1, 17.17, 0.0935, 91.79)
    }

    fn prosumer1() -> ProsumerParams<f64> {
        ProsumerParams::new("P1", 1, 0.0031, 8.71, 113.23)
    }

    fn prosumer2() -> ProsumerParams<f64> {
        ProsumerParams::new("P2", 1, 0.0074, 3.53, 179.1)
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn utility_examples() {
        let c = consumer1();
        assert!(close(utility_value(&c, 50.0).unwrap(), 624.75, 1e-9));
        assert_eq!(utility_value(&c, 0.0).unwrap(), 0.0);
        assert!(close(utility_value(&c, 120.0).unwrap(), 788.259_090_909, 1e-6));
        assert!(utility_value(&c, -1.0).is_err());
    }

    #[test]
    fn utility_continuous_at_knee() {
        let c = consumer1();
        let k = c.knee();
        let below = c.omega * k - c.mu * k * k;
        let sat = utility_value(&c, k).unwrap();
        assert!((below - sat).abs() <= 1e-12 * sat);
    }

    #[test]
    fn cost_examples() {
        assert!(close(cost_value(&prosumer1(), 100.0).unwrap(), 902.0, 1e-9));
        let mut p = prosumer1();
        p.gamma = 3.5;
        assert_eq!(cost_value(&p, 0.0).unwrap(), 3.5);
        // 0.0074 * 179.1^2 + 3.53 * 179.1
        assert!(close(cost_value(&prosumer2(), 179.1).unwrap(), 869.591_394, 1e-6));
        assert!(cost_value(&p, -0.1).is_err());
    }

    #[test]
    fn surplus_examples() {
        let c = consumer1();
        assert!(close(consumer_surplus(&c, 50.0, 7.0).unwrap(), 274.75, 1e-9));
        assert_eq!(consumer_surplus(&c, 0.0, 3.0).unwrap(), 0.0);
        assert_eq!(prosumer_surplus(&prosumer1(), 0.0, 11.0).unwrap(), 0.0);
        assert!(close(prosumer_surplus(&prosumer2(), 100.0, 7.0).unwrap(), 273.0, 1e-9));
    }

    #[test]
    fn best_response_examples() {
        let c = consumer1();
        assert_eq!(consumer_best_response(&c, 17.17, 0.0, 0.0, 91.79).unwrap(), 0.0);
        assert!(close(
            consumer_best_response(&c, 7.0, 0.0, 0.0, 91.79).unwrap(),
            54.385_026_737,
            1e-6
        ));
        assert_eq!(consumer_best_response(&c, 0.0, 0.0, 0.0, 91.79).unwrap(), 91.79);

        let p1 = prosumer1();
        assert_eq!(prosumer_best_response(&p1, 8.71, 0.0, 0.0, 113.23).unwrap(), 0.0);
        assert!(close(
            prosumer_best_response(&p1, 9.0, 0.0, 0.0, 113.23).unwrap(),
            46.774_193_548,
            1e-6
        ));
        assert_eq!(
            prosumer_best_response(&prosumer2(), 7.0, 0.0, 0.0, 179.1).unwrap(),
            179.1
        );
    }

    #[test]
    fn best_response_rejects_empty_interval() {
        assert!(consumer_best_response(&consumer1(), 1.0, 0.0, 2.0, 1.0).is_err());
        assert!(prosumer_best_response(&prosumer1(), 1.0, 0.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn coupled_response_subtracts_commitment() {
        let p1 = prosumer1();
        let free = prosumer_best_response(&p1, 9.0, 0.0, 0.0, 113.23).unwrap();
        let coupled = prosumer_best_response(&p1, 9.0, 20.0, 0.0, 93.23).unwrap();
        assert!(close(coupled, free - 20.0, 1e-12));
    }

    #[test]
    fn welfare_examples() {
        assert_eq!(social_welfare::<f64>(&[], &[]).unwrap(), 0.0);
        let c = consumer1();
        let p = prosumer1();
        let w = social_welfare(&[(&c, 50.0)], &[(&p, 50.0)]).unwrap();
        assert!(close(w, 181.5, 1e-9));
        assert!(social_welfare(&[(&c, 100.0)], &[]).is_err());
    }

    #[test]
    fn residual_never_overshoots() {
        for &(cap, k) in &[(1.0, 0.1), (179.1, 3.3e-7), (91.79, 54.385), (0.3, 0.1)] {
            let r = residual_capacity(cap, k);
            assert!(k + r <= cap);
            assert!(cap - (k + r) <= 4.0 * f64::EPSILON * cap);
        }
        assert_eq!(residual_capacity(5.0, 7.0), 0.0);
    }

    #[test]
    fn validation_names_player() {
        let mut c = consumer1();
        c.mu = 0.0;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("C1"), "{err}");
        let mut p = prosumer1();
        p.s_min = 200.0;
        assert!(p.validate().unwrap_err().to_string().contains("P1"));
    }

    #[test]
    fn works_in_single_precision() {
        let c = ConsumerParams::<f32>::new("C1", 1, 17.17, 0.0935, 91.79);
        let d = consumer_best_response(&c, 7.0, 0.0, 0.0, 91.79).unwrap();
        assert!((d - 54.385).abs() < 1e-3);
    }
}
