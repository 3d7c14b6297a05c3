use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use crate::engine::Step2Plan;
use crate::model::{AreaId, MarketLabel, PlayerId, Side};
use crate::scalar::Scalar;

/// Everything that travels between actors.
///
/// Players only ever receive prices, area results and invitations; none of
/// these carry another player's parameters or quantities.
#[derive(Debug, Clone, PartialEq)]
pub enum Message<T> {
    /// Player registers with the data centre of `market` and reports the
    /// slope of its own response curve, used for the automatic step size.
    Join {
        market: MarketLabel,
        player: PlayerId,
        side: Side,
        rank: usize,
        slope: T,
    },
    PriceSignal {
        market: MarketLabel,
        iteration: usize,
        price: T,
    },
    QuantityReply {
        market: MarketLabel,
        player: PlayerId,
        iteration: usize,
        quantity: T,
    },
    /// End of the intra-area clearing, sent to the other data centres and
    /// to the area's own players.
    AreaResult {
        area: AreaId,
        price: T,
        converged: bool,
        has_sellers: bool,
        has_buyers: bool,
    },
    /// Asks a player to join the inter-area market run by `coordinator`.
    Step2Invite { coordinator: AreaId },
    Shutdown,
    Abort,
}

impl<T> Message<T> {
    pub fn variant(&self) -> &'static str {
        match self {
            Message::Join { .. } => "Join",
            Message::PriceSignal { .. } => "PriceSignal",
            Message::QuantityReply { .. } => "QuantityReply",
            Message::AreaResult { .. } => "AreaResult",
            Message::Step2Invite { .. } => "Step2Invite",
            Message::Shutdown => "Shutdown",
            Message::Abort => "Abort",
        }
    }

    /// Player whose private data the message carries, if any.
    pub fn player_data(&self) -> Option<&PlayerId> {
        match self {
            Message::Join { player, .. } | Message::QuantityReply { player, .. } => Some(player),
            _ => None,
        }
    }
}

impl<T: Scalar> Message<T> {
    fn payload(&self) -> String {
        match self {
            Message::Join {
                market,
                player,
                side,
                rank,
                slope,
            } => format!("{},{player},{side},{rank},{slope}", market.file_stem()),
            Message::PriceSignal {
                market,
                iteration,
                price,
            } => format!("{},{iteration},{price}", market.file_stem()),
            Message::QuantityReply {
                market,
                player,
                iteration,
                quantity,
            } => format!("{},{player},{iteration},{quantity}", market.file_stem()),
            Message::AreaResult {
                area,
                price,
                converged,
                has_sellers,
                has_buyers,
            } => format!("{area},{price},{converged},{has_sellers},{has_buyers}"),
            Message::Step2Invite { coordinator } => format!("{coordinator}"),
            Message::Shutdown | Message::Abort => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Endpoint {
    Centre(AreaId),
    Player(PlayerId),
    /// Every participant of a market.
    Participants(MarketLabel),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Centre(a) => write!(f, "centre:{a}"),
            Endpoint::Player(p) => write!(f, "player:{p}"),
            Endpoint::Participants(m) => write!(f, "all:{}", m.file_stem()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry<T> {
    /// Global order in which entries were logged.
    pub seq: u64,
    pub from: Endpoint,
    pub to: Endpoint,
    pub message: Message<T>,
}

/// Message log of a distributed run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace<T> {
    /// Per-market protocol log: one price broadcast followed by one reply
    /// per participant, for every round.
    pub markets: BTreeMap<MarketLabel, Vec<TraceEntry<T>>>,
    /// Registration, area results and invitations.
    pub control: Vec<TraceEntry<T>>,
    /// Inter-area selection the data centres agreed on.
    pub plan: Option<Step2Plan>,
}

impl<T: Scalar> Trace<T> {
    pub fn is_empty(&self) -> bool {
        self.markets.values().all(Vec::is_empty) && self.control.is_empty()
    }

    /// All entries ordered by `seq`.
    pub fn ordered(&self) -> Vec<&TraceEntry<T>> {
        let mut all: Vec<_> = self.markets.values().flatten().chain(&self.control).collect();
        all.sort_by_key(|e| e.seq);
        all
    }

    /// One line per message: `seq,market,from,to,variant,payload...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seq,market,from,to,variant,payload\n");
        let mut rows: Vec<(String, &TraceEntry<T>)> = self
            .markets
            .iter()
            .flat_map(|(m, log)| log.iter().map(move |e| (m.file_stem(), e)))
            .chain(self.control.iter().map(|e| ("control".to_owned(), e)))
            .collect();
        rows.sort_by_key(|(_, e)| e.seq);
        for (market, e) in rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.seq,
                market,
                e.from,
                e.to,
                e.message.variant(),
                e.message.payload()
            );
        }
        out
    }
}
