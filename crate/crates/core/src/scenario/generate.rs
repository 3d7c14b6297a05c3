//! Seeded synthetic populations for large-scale runs.
//!
//! The default parameter ranges are the envelope of the bundled 20-player
//! case study. They are a reconstruction for scaling experiments, not
//! published data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Scenario;
use crate::econ::{ConsumerParams, ProsumerParams};
use crate::engine::SolverConfig;
use crate::error::{MarketError, Result};
use crate::model::{AreaId, PlayerId};
use crate::scalar::Scalar;

/// How many players of one side to create.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Counts {
    /// Spread round-robin over the areas.
    Total(usize),
    /// Exact count per area, in area order.
    PerArea(Vec<usize>),
}

/// Closed intervals that each parameter is drawn from uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRanges {
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub omega: (f64, f64),
    pub mu: (f64, f64),
    pub s_max: (f64, f64),
    pub d_max: (f64, f64),
}

impl Default for ParamRanges {
    fn default() -> Self {
        ParamRanges {
            a: (0.001, 0.008),
            b: (2.0, 9.0),
            omega: (7.0, 20.0),
            mu: (0.04, 0.15),
            s_max: (30.0, 200.0),
            d_max: (30.0, 200.0),
        }
    }
}

impl ParamRanges {
    fn validate(&self) -> Result<()> {
        let check = |name: &str, (lo, hi): (f64, f64), positive: bool| {
            let ok = lo.is_finite() && hi.is_finite() && lo <= hi && if positive { lo > 0.0 } else { lo >= 0.0 };
            if ok {
                Ok(())
            } else {
                Err(MarketError::domain(format!("invalid range for {name}: [{lo}, {hi}]")))
            }
        };
        check("a", self.a, true)?;
        check("b", self.b, false)?;
        check("omega", self.omega, true)?;
        check("mu", self.mu, true)?;
        check("s_max", self.s_max, false)?;
        check("d_max", self.d_max, false)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec {
    pub num_areas: u32,
    pub sellers: Counts,
    pub buyers: Counts,
    pub ranges: ParamRanges,
    pub seed: u64,
}

impl PopulationSpec {
    pub fn new(num_areas: u32, sellers: usize, buyers: usize, seed: u64) -> Self {
        PopulationSpec {
            num_areas,
            sellers: Counts::Total(sellers),
            buyers: Counts::Total(buyers),
            ranges: ParamRanges::default(),
            seed,
        }
    }

    /// Area assignment of each player of one side.
    fn assign(&self, counts: &Counts) -> Result<Vec<AreaId>> {
        match counts {
            Counts::Total(n) => Ok((0..*n)
                .map(|i| AreaId(i as u32 % self.num_areas + 1))
                .collect()),
            Counts::PerArea(per) => {
                if per.len() != self.num_areas as usize {
                    return Err(MarketError::domain(format!(
                        "{} per-area counts for {} areas",
                        per.len(),
                        self.num_areas
                    )));
                }
                Ok(per
                    .iter()
                    .enumerate()
                    .flat_map(|(i, &n)| std::iter::repeat_n(AreaId(i as u32 + 1), n))
                    .collect())
            }
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws a scenario. The same spec always yields the same scenario.
pub fn generate_population<T: Scalar>(spec: &PopulationSpec) -> Result<Scenario<T>> {
    if spec.num_areas == 0 {
        return Err(MarketError::domain("population needs at least one area"));
    }
    spec.ranges.validate()?;
    let seller_areas = spec.assign(&spec.sellers)?;
    let buyer_areas = spec.assign(&spec.buyers)?;
    if seller_areas.is_empty() && buyer_areas.is_empty() {
        return Err(MarketError::domain("population has no players"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r = &spec.ranges;
    let prosumers = seller_areas
        .iter()
        .enumerate()
        .map(|(i, &area)| ProsumerParams {
            id: PlayerId(format!("P{}", i + 1)),
            area,
            a: T::lit(draw(&mut rng, r.a)),
            b: T::lit(draw(&mut rng, r.b)),
            gamma: T::zero(),
            s_min: T::zero(),
            s_max: T::lit(draw(&mut rng, r.s_max)),
        })
        .collect();
    let consumers = buyer_areas
        .iter()
        .enumerate()
        .map(|(j, &area)| ConsumerParams {
            id: PlayerId(format!("C{}", j + 1)),
            area,
            omega: T::lit(draw(&mut rng, r.omega)),
            mu: T::lit(draw(&mut rng, r.mu)),
            d_min: T::zero(),
            d_max: T::lit(draw(&mut rng, r.d_max)),
        })
        .collect();

    let scenario = Scenario {
        name: format!("generated-{}a-{}s-{}b-seed{}", spec.num_areas, seller_areas.len(), buyer_areas.len(), spec.seed),
        areas: (1..=spec.num_areas).map(AreaId).collect(),
        prosumers,
        consumers,
        solver: SolverConfig::default(),
    };
    scenario.validate()?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scenario() {
        let spec = PopulationSpec::new(10, 900, 1100, 42);
        let a = generate_population::<f64>(&spec).unwrap();
        let b = generate_population::<f64>(&spec).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.prosumers.len(), 900);
        assert_eq!(a.consumers.len(), 1100);
        let c = generate_population::<f64>(&PopulationSpec::new(10, 900, 1100, 43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn draws_stay_in_ranges() {
        let s = generate_population::<f64>(&PopulationSpec::new(3, 50, 50, 7)).unwrap();
        let r = ParamRanges::default();
        for p in &s.prosumers {
            assert!(p.a >= r.a.0 && p.a <= r.a.1);
            assert!(p.b >= r.b.0 && p.b <= r.b.1);
        }
        for c in &s.consumers {
            assert!(c.mu >= r.mu.0 && c.mu <= r.mu.1);
            assert!(c.omega >= r.omega.0 && c.omega <= r.omega.1);
        }
    }

    #[test]
    fn round_robin_assignment() {
        let s = generate_population::<f64>(&PopulationSpec::new(3, 9, 11, 1)).unwrap();
        assert_eq!(s.player_count(), 20);
        assert_eq!(s.prosumers[0].area, AreaId(1));
        assert_eq!(s.prosumers[4].area, AreaId(2));
        assert_eq!(s.consumers[10].area, AreaId(2));
    }

    #[test]
    fn empty_area_side_is_flagged() {
        let spec = PopulationSpec {
            sellers: Counts::PerArea(vec![3, 0, 2]),
            buyers: Counts::PerArea(vec![2, 2, 2]),
            ..PopulationSpec::new(3, 0, 0, 5)
        };
        let s = generate_population::<f64>(&spec).unwrap();
        assert_eq!(s.one_sided_areas(), vec![AreaId(2)]);
    }

    #[test]
    fn bad_ranges_are_rejected() {
        let mut spec = PopulationSpec::new(2, 4, 4, 1);
        spec.ranges.mu = (0.0, 0.1);
        assert!(generate_population::<f64>(&spec).is_err());
        spec.ranges = ParamRanges { a: (0.5, 0.1), ..ParamRanges::default() };
        assert!(generate_population::<f64>(&spec).is_err());
        assert!(generate_population::<f64>(&PopulationSpec::new(0, 4, 4, 1)).is_err());
    }
}
