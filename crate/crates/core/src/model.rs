//! Identifiers shared across the crate.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlayerId(pub String);

impl PlayerId {
    pub fn new(id: impl Into<String>) -> Self {
        PlayerId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PlayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PlayerId {
    fn from(s: &str) -> Self {
        PlayerId(s.to_owned())
    }
}

impl From<String> for PlayerId {
    fn from(s: String) -> Self {
        PlayerId(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AreaId(pub u32);

impl fmt::Display for AreaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Seller,
    Buyer,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Seller => "seller",
            Side::Buyer => "buyer",
        })
    }
}

/// Which clearing a price or trajectory belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MarketLabel {
    /// Intra-area market of one feeder area.
    Area(AreaId),
    /// The inter-area market formed in the second step.
    Inter,
    /// A single market over every player.
    Total,
}

impl MarketLabel {
    /// Stem used in result file names, e.g. `area_2`, `inter`, `total`.
    pub fn file_stem(&self) -> String {
        match self {
            MarketLabel::Area(a) => format!("area_{}", a.0),
            MarketLabel::Inter => "inter".to_owned(),
            MarketLabel::Total => "total".to_owned(),
        }
    }
}

impl fmt::Display for MarketLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MarketLabel::Area(a) => write!(f, "area {a}"),
            MarketLabel::Inter => f.write_str("area C"),
            MarketLabel::Total => f.write_str("total"),
        }
    }
}
