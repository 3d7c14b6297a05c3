//! Scenario files, synthetic populations and result files.

mod generate;
mod results;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::econ::{ConsumerParams, ProsumerParams};
use crate::engine::SolverConfig;
use crate::error::MarketError;
use crate::model::AreaId;
use crate::scalar::Scalar;

pub use generate::{generate_population, Counts, ParamRanges, PopulationSpec};
pub use results::{write_single_results, write_two_step_results, ResultFiles};

const REFERENCE_TABLE_JSON: &str = include_str!("../../data/reference.json");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] MarketError),
}

impl ScenarioError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ScenarioError::Io {
            path: path.to_owned(),
            source,
        }
    }
}

/// Complete input of a clearing run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct Scenario<T> {
    #[serde(default)]
    pub name: String,
    pub areas: Vec<AreaId>,
    pub prosumers: Vec<ProsumerParams<T>>,
    pub consumers: Vec<ConsumerParams<T>>,
    #[serde(default)]
    pub solver: SolverConfig<T>,
}

impl<T: Scalar + Serialize + DeserializeOwned> Scenario<T> {
    /// The bundled 20-player, 3-area case study.
    pub fn reference_table() -> Self {
        Self::from_json(REFERENCE_TABLE_JSON).expect("bundled scenario is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario<T> = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("scenario serializes");
        text.push('\n');
        text
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ScenarioError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| ScenarioError::io(path, e))
    }
}

impl<T: Scalar> Scenario<T> {
    pub fn validate(&self) -> Result<(), MarketError> {
        let invalid = |msg: String| Err(MarketError::InvalidScenario(msg));
        let mut areas = HashSet::new();
        for a in &self.areas {
            if !areas.insert(*a) {
                return invalid(format!("area {a} listed twice"));
            }
        }
        let mut ids = HashSet::new();
        for p in &self.prosumers {
            p.validate()?;
            if !areas.contains(&p.area) {
                return invalid(format!("prosumer {}: unknown area {}", p.id, p.area));
            }
            if !ids.insert(&p.id) {
                return invalid(format!("prosumer {}: duplicate player id", p.id));
            }
        }
        for c in &self.consumers {
            c.validate()?;
            if !areas.contains(&c.area) {
                return invalid(format!("consumer {}: unknown area {}", c.id, c.area));
            }
            if !ids.insert(&c.id) {
                return invalid(format!("consumer {}: duplicate player id", c.id));
            }
        }
        self.solver.validate()
    }

    pub fn player_count(&self) -> usize {
        self.prosumers.len() + self.consumers.len()
    }

    /// Areas with no sellers or no buyers; they clear at zero trade.
    pub fn one_sided_areas(&self) -> Vec<AreaId> {
        self.areas
            .iter()
            .copied()
            .filter(|&a| {
                !self.prosumers.iter().any(|p| p.area == a)
                    || !self.consumers.iter().any(|c| c.area == a)
            })
            .collect()
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario<T: Scalar + Serialize + DeserializeOwned>(
    path: impl AsRef<Path>,
) -> Result<Scenario<T>, ScenarioError> {
    Scenario::load(path)
}
