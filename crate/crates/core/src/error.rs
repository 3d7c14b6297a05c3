use thiserror::Error;

use crate::model::{MarketLabel, PlayerId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("one-sided market {market}: {sellers} sellers, {buyers} buyers")]
    OneSidedMarket {
        market: MarketLabel,
        sellers: usize,
        buyers: usize,
    },

    #[error("player {player} cannot meet its minimum quantity {minimum}")]
    UnmetMinimum { player: PlayerId, minimum: f64 },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

impl MarketError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        MarketError::Domain(msg.into())
    }
}

pub type Result<T, E = MarketError> = std::result::Result<T, E>;
