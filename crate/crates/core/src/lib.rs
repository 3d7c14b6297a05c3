//! Price-based clearing of local energy markets on a distribution feeder.
//!
//! Prosumers (sellers) and consumers (buyers) are grouped into areas. The
//! two-step scheme clears every area on its own with a dual-ascent price
//! iteration, then lets the leftover capacity trade across areas in a
//! second market; the single-step scheme clears everyone at once. Both run
//! in-process ([`engine`]) or as a message-passing protocol between
//! per-player actors and per-area data centres ([`sim`]). [`oracle`] finds
//! the equilibrium price directly by bisection and is used to check the
//! iterative results.
//!
//! Everything is generic over the floating point type; the aliases at the
//! bottom of this file fix it to `f64` (or `f32`).

pub mod econ;
pub mod engine;
pub mod error;
pub mod model;
pub mod oracle;
pub mod scalar;
pub mod scenario;
pub mod sim;

pub use econ::{
    consumer_best_response, consumer_surplus, cost_value, prosumer_best_response, prosumer_surplus,
    residual_capacity, social_welfare, utility_value, ConsumerParams, PlayerAllocation, ProsumerParams,
};
pub use engine::{
    clear_market, run_1smc, run_2smc, ClearingOutcome, EtaMode, SolverConfig, Step2Response, Step2Selection,
    TwoStepOutcome,
};
pub use error::MarketError;
pub use model::{AreaId, MarketLabel, PlayerId, Side};
pub use oracle::{bisect_equilibrium, EquilibriumResult};
pub use scalar::Scalar;
pub use scenario::{load_scenario, Scenario, ScenarioError};
pub use sim::{message_trace, run_distributed, DistributedRun, SimConfig, SimError};

pub type Consumer = ConsumerParams<f64>;
pub type Prosumer = ProsumerParams<f64>;
pub type Allocation = PlayerAllocation<f64>;
pub type Config = SolverConfig<f64>;
pub type Outcome = ClearingOutcome<f64>;
pub type TwoStep = TwoStepOutcome<f64>;
pub type Market = Scenario<f64>;

pub type ConsumerF32 = ConsumerParams<f32>;
pub type ProsumerF32 = ProsumerParams<f32>;
pub type ConfigF32 = SolverConfig<f32>;
pub type OutcomeF32 = ClearingOutcome<f32>;
pub type TwoStepF32 = TwoStepOutcome<f32>;
pub type MarketF32 = Scenario<f32>;
