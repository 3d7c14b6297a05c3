#![allow(dead_code)]

use feeder_market::engine::{BuyerSlot, SellerSlot};
use feeder_market::scenario::{generate_population, PopulationSpec};
use feeder_market::{bisect_equilibrium, Config, Consumer, EquilibriumResult, Market, Prosumer, TwoStep};

/// One seller `C(s) = 0.005 s² + 2 s`, one buyer `U(d) = 10 d − 0.005 d²`:
/// supply `100(λ − 2)` meets demand `100(10 − λ)` at `λ = 6`, 400 kWh.
pub fn toy() -> (Prosumer, Consumer) {
    (
        Prosumer::new("S", 1, 0.005, 2.0, 1000.0),
        Consumer::new("B", 1, 10.0, 0.005, 1000.0),
    )
}

pub fn toy_scenario(areas: u32) -> Market {
    let mut m = Market {
        name: "toy".into(),
        areas: (1..=areas).map(feeder_market::AreaId).collect(),
        prosumers: Vec::new(),
        consumers: Vec::new(),
        solver: Config::default(),
    };
    for a in 1..=areas {
        let (s, b) = toy();
        m.prosumers.push(Prosumer { id: format!("S{a}").into(), area: feeder_market::AreaId(a), ..s });
        m.consumers.push(Consumer { id: format!("B{a}").into(), area: feeder_market::AreaId(a), ..b });
    }
    m
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Single-area market with 1..=50 players per side.
pub fn random_market(seed: u64) -> Market {
    let h = splitmix(seed);
    let sellers = 1 + (h % 50) as usize;
    let buyers = 1 + ((h >> 16) % 50) as usize;
    generate_population(&PopulationSpec::new(1, sellers, buyers, seed)).unwrap()
}

/// 2..=5 areas with a handful of players each; some areas may end up
/// one-sided.
pub fn random_scenario(seed: u64) -> Market {
    let h = splitmix(seed ^ 0x5eed);
    let areas = 2 + (h % 4) as u32;
    let sellers = 1 + ((h >> 8) % (6 * areas as u64)) as usize;
    let buyers = 1 + ((h >> 24) % (6 * areas as u64)) as usize;
    generate_population(&PopulationSpec::new(areas, sellers, buyers, seed)).unwrap()
}

/// Single-price equilibrium over every player of the scenario.
pub fn global_oracle(m: &Market) -> EquilibriumResult<f64> {
    let sellers: Vec<_> = m.prosumers.iter().map(SellerSlot::fresh).collect();
    let buyers: Vec<_> = m.consumers.iter().map(BuyerSlot::fresh).collect();
    bisect_equilibrium(&sellers, &buyers, 1e-12).unwrap()
}

/// Social welfare when every player trades its best response to `price`.
pub fn welfare_at_price(m: &Market, price: f64) -> f64 {
    let sellers: Vec<_> = m
        .prosumers
        .iter()
        .map(|p| (p, SellerSlot::fresh(p).respond(price).unwrap()))
        .collect();
    let buyers: Vec<_> = m
        .consumers
        .iter()
        .map(|c| (c, BuyerSlot::fresh(c).respond(price).unwrap()))
        .collect();
    feeder_market::social_welfare(&buyers, &sellers).unwrap()
}

pub fn tight(eps: f64, max_iters: usize) -> Config {
    Config {
        epsilon: eps,
        max_iters,
        ..Config::default()
    }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

pub fn supply_of(o: &TwoStep) -> f64 {
    o.allocations
        .iter()
        .filter(|a| a.side == feeder_market::Side::Seller)
        .map(|a| a.q_total)
        .sum()
}
