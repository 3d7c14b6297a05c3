//! Result files: `summary.json`, one `trajectory_<market>.csv` per
//! clearing and `allocations.csv`.
//!
//! Numbers are written in the shortest form that parses back to the exact
//! same value.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde_json::{json, Value};

use super::{Scenario, ScenarioError};
use crate::econ::{consumer_surplus, cost_value, prosumer_surplus, utility_value};
use crate::engine::{outcome_welfare, ClearingOutcome, TwoStepOutcome};
use crate::model::{MarketLabel, Side};
use crate::scalar::{ordered_sum, Scalar};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultFiles {
    pub summary: PathBuf,
    pub trajectories: Vec<PathBuf>,
    pub allocations: PathBuf,
}

fn num<T: Scalar>(v: T) -> f64 {
    v.to_f64_lossy()
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn write(path: &Path, text: &str) -> Result<(), ScenarioError> {
    fs::write(path, text).map_err(|e| ScenarioError::io(path, e))
}

fn trajectory_csv<T: Scalar>(o: &ClearingOutcome<T>) -> String {
    let mut s = String::from("iteration,lambda,supply,demand\n");
    for p in &o.trajectory {
        let _ = writeln!(s, "{},{},{},{}", p.iteration, num(p.price), num(p.supply), num(p.demand));
    }
    s
}

fn clearing_json<T: Scalar>(o: &ClearingOutcome<T>) -> Value {
    json!({
        "market": o.market.file_stem(),
        "price": num(o.price),
        "iterations": o.iterations,
        "converged": o.converged,
        "one_sided": o.one_sided,
        "step_size": num(o.step_size),
        "supply": num(o.supply()),
        "demand": num(o.demand()),
    })
}

fn prepare(dir: &Path) -> Result<(), ScenarioError> {
    fs::create_dir_all(dir).map_err(|e| ScenarioError::io(dir, e))
}

fn write_trajectories<'a, T: Scalar>(
    dir: &Path,
    outcomes: impl IntoIterator<Item = &'a ClearingOutcome<T>>,
) -> Result<Vec<PathBuf>, ScenarioError> {
    let mut paths = Vec::new();
    for o in outcomes {
        let path = dir.join(format!("trajectory_{}.csv", o.market.file_stem()));
        write(&path, &trajectory_csv(o))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Writes the outcome of a two-step clearing.
pub fn write_two_step_results<T: Scalar>(
    scenario: &Scenario<T>,
    outcome: &TwoStepOutcome<T>,
    dir: impl AsRef<Path>,
) -> Result<ResultFiles, ScenarioError> {
    let dir = dir.as_ref();
    prepare(dir)?;

    let area_price = |area| {
        outcome
            .area_outcomes
            .iter()
            .find(|o| o.market == MarketLabel::Area(area))
            .map(|o| o.price)
            .unwrap_or_else(T::zero)
    };
    let inter_price = outcome.inter_price().unwrap_or_else(T::zero);

    let mut alloc = String::from("player_id,side,area,q_intra,q_inter,q_total,surplus\n");
    for a in &outcome.allocations {
        let lam = area_price(a.area);
        let surplus = match a.side {
            Side::Seller => {
                let p = scenario.prosumers.iter().find(|p| p.id == a.player).expect("scenario player");
                lam * a.q_intra + inter_price * a.q_inter - cost_value(p, a.q_total).map_err(ScenarioError::Invalid)?
            }
            Side::Buyer => {
                let c = scenario.consumers.iter().find(|c| c.id == a.player).expect("scenario player");
                utility_value(c, a.q_total).map_err(ScenarioError::Invalid)? - lam * a.q_intra - inter_price * a.q_inter
            }
        };
        let _ = writeln!(
            alloc,
            "{},{},{},{},{},{},{}",
            a.player,
            a.side,
            a.area,
            num(a.q_intra),
            num(a.q_inter),
            num(a.q_total),
            num(surplus)
        );
    }

    let summary = json!({
        "mode": "2smc",
        "scenario": scenario.name,
        "converged": outcome.converged(),
        "areas": outcome.area_outcomes.iter().map(clearing_json).collect::<Vec<_>>(),
        "inter": outcome.inter_outcome.as_ref().map(clearing_json),
        "step2_buyer_areas": outcome.plan.as_ref().map(|p| p.buyer_areas.iter().map(|a| a.0).collect::<Vec<_>>()),
        "step2_seller_areas": outcome.plan.as_ref().map(|p| p.seller_areas.iter().map(|a| a.0).collect::<Vec<_>>()),
        "welfare": num(outcome.welfare),
        "traded_energy": num(outcome.traded_energy),
        "step1_welfare": num(outcome.step1_welfare),
        "step1_traded_energy": num(outcome.step1_traded),
        "timing": {
            "step1_max_s": secs(outcome.timing.step1_max),
            "step2_s": secs(outcome.timing.step2),
            "composed_s": secs(outcome.timing.composed),
        },
    });

    let summary_path = dir.join("summary.json");
    write(&summary_path, &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    let trajectories = write_trajectories(dir, outcome.area_outcomes.iter().chain(outcome.inter_outcome.iter()))?;
    let allocations = dir.join("allocations.csv");
    write(&allocations, &alloc)?;
    Ok(ResultFiles {
        summary: summary_path,
        trajectories,
        allocations,
    })
}

/// Writes the outcome of a single-market clearing over the whole scenario.
pub fn write_single_results<T: Scalar>(
    scenario: &Scenario<T>,
    outcome: &ClearingOutcome<T>,
    dir: impl AsRef<Path>,
) -> Result<ResultFiles, ScenarioError> {
    let dir = dir.as_ref();
    prepare(dir)?;
    let price = outcome.price;

    let mut alloc = String::from("player_id,side,area,q_intra,q_inter,q_total,surplus\n");
    for t in &outcome.trades {
        let surplus = match t.side {
            Side::Seller => {
                let p = scenario.prosumers.iter().find(|p| p.id == t.player).expect("scenario player");
                prosumer_surplus(p, t.quantity, price)
            }
            Side::Buyer => {
                let c = scenario.consumers.iter().find(|c| c.id == t.player).expect("scenario player");
                consumer_surplus(c, t.quantity, price)
            }
        }
        .map_err(ScenarioError::Invalid)?;
        let _ = writeln!(
            alloc,
            "{},{},{},{},0,{},{}",
            t.player,
            t.side,
            t.area,
            num(t.quantity),
            num(t.quantity),
            num(surplus)
        );
    }

    let welfare = outcome_welfare(scenario, &outcome.trades).map_err(ScenarioError::Invalid)?;
    let traded: T = ordered_sum(
        outcome.trades.iter().filter(|t| t.side == Side::Buyer).map(|t| t.quantity),
    );
    let summary = json!({
        "mode": "1smc",
        "scenario": scenario.name,
        "converged": outcome.converged,
        "total": clearing_json(outcome),
        "welfare": num(welfare),
        "traded_energy": num(traded),
        "timing": {
            "clearing_s": secs(outcome.wall_time),
        },
    });

    let summary_path = dir.join("summary.json");
    write(&summary_path, &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    let trajectories = write_trajectories(dir, [outcome])?;
    let allocations = dir.join("allocations.csv");
    write(&allocations, &alloc)?;
    Ok(ResultFiles {
        summary: summary_path,
        trajectories,
        allocations,
    })
}
