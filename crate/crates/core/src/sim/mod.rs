//! Round-synchronous message-passing simulation of the clearing protocol.
//!
//! Every data centre and every player is its own thread. Players hold only
//! their own parameters and talk only to the data centre of the market they
//! are in; data centres hold only public membership (who is in which area)
//! and the solver configuration. Each round is a barrier: a data centre
//! posts a price, waits for a reply from every participant, then updates
//! the price with the same [`DualAscent`](crate::engine::DualAscent) state
//! machine the in-process engine uses. Replies are summed in scenario order,
//! so the result is bit-identical to [`run_2smc`](crate::engine::run_2smc)
//! whatever order the threads run in.

mod actors;
mod message;

use std::collections::{BTreeMap, VecDeque};
use std::sync::mpsc::{channel, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use thiserror::Error;

use crate::engine::{compose_two_step, ClearingOutcome, SolverConfig, TwoStepOutcome};
use crate::error::MarketError;
use crate::model::{AreaId, MarketLabel, PlayerId, Side};
use crate::scalar::Scalar;
use crate::scenario::Scenario;

use actors::{DataCentre, Directory, Event, PlayerActor, PlayerRole, TraceSink};
pub use message::{Endpoint, Message, Trace, TraceEntry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error("{market}: no reply from {players:?} (round {iteration:?})")]
    MissingReply {
        market: MarketLabel,
        iteration: Option<usize>,
        players: Vec<PlayerId>,
    },
    #[error("{market}: stale reply from {player}, expected round {expected}, got {got}")]
    StaleReply {
        market: MarketLabel,
        player: PlayerId,
        expected: usize,
        got: usize,
    },
    #[error("message from unexpected player {0}")]
    Unexpected(PlayerId),
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
    #[error("actor channel closed")]
    Disconnected,
    #[error("run aborted")]
    Aborted,
    #[error("cannot spawn actor: {0}")]
    Spawn(String),
}

/// Test hook for lost messages. Disabled by default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaultPlan {
    /// Drop the reply of this player in this round (any market).
    pub drop_reply: Option<(PlayerId, usize)>,
}

impl FaultPlan {
    fn drops(&self, player: &PlayerId, iteration: usize) -> bool {
        matches!(&self.drop_reply, Some((p, k)) if p == player && *k == iteration)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub trace: bool,
    /// How long a data centre waits at a round barrier.
    pub reply_timeout: Duration,
    /// When set, players sleep a seeded random few microseconds before
    /// replying, to shake up thread interleaving.
    pub jitter_seed: Option<u64>,
    pub faults: FaultPlan,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            trace: false,
            reply_timeout: Duration::from_secs(30),
            jitter_seed: None,
            faults: FaultPlan::default(),
        }
    }
}

impl SimConfig {
    pub fn traced() -> Self {
        SimConfig {
            trace: true,
            ..SimConfig::default()
        }
    }

    fn control_timeout(&self) -> Duration {
        self.reply_timeout * 20
    }
}

/// Public membership: who is in which area. Ranks are positions in the
/// scenario's prosumer or consumer list.
#[derive(Debug, Clone)]
pub(crate) struct RosterEntry {
    pub player: PlayerId,
    pub side: Side,
    pub area: AreaId,
    pub rank: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Roster {
    pub sellers: Vec<RosterEntry>,
    pub buyers: Vec<RosterEntry>,
}

impl Roster {
    fn of<T>(scenario: &Scenario<T>) -> Self {
        Roster {
            sellers: scenario
                .prosumers
                .iter()
                .enumerate()
                .map(|(rank, p)| RosterEntry {
                    player: p.id.clone(),
                    side: Side::Seller,
                    area: p.area,
                    rank,
                })
                .collect(),
            buyers: scenario
                .consumers
                .iter()
                .enumerate()
                .map(|(rank, c)| RosterEntry {
                    player: c.id.clone(),
                    side: Side::Buyer,
                    area: c.area,
                    rank,
                })
                .collect(),
        }
    }

    /// Sellers then buyers of one area, in scenario order.
    pub fn in_area(&self, area: AreaId) -> impl Iterator<Item = &RosterEntry> {
        self.sellers
            .iter()
            .chain(&self.buyers)
            .filter(move |e| e.area == area)
    }
}

#[derive(Debug, Clone)]
pub struct DistributedRun<T> {
    pub outcome: TwoStepOutcome<T>,
    pub trace: Trace<T>,
}

/// Ordered message log of a completed run; empty when tracing was off.
pub fn message_trace<T>(run: &DistributedRun<T>) -> &Trace<T> {
    &run.trace
}

const ACTOR_STACK: usize = 256 * 1024;

/// Runs the two-step clearing as a protocol between actors.
pub fn run_distributed<T: Scalar>(
    scenario: &Scenario<T>,
    cfg: &SolverConfig<T>,
    sim: &SimConfig,
) -> Result<DistributedRun<T>, SimError> {
    cfg.validate()?;
    crate::engine::two_step::ensure_two_sided(scenario)?;
    let roster = Roster::of(scenario);

    let (centre_tx, centre_rx): (Vec<_>, Vec<_>) = scenario.areas.iter().map(|_| channel()).unzip();
    let (seller_tx, seller_rx): (Vec<_>, Vec<_>) = scenario.prosumers.iter().map(|_| channel()).unzip();
    let (buyer_tx, buyer_rx): (Vec<_>, Vec<_>) = scenario.consumers.iter().map(|_| channel()).unzip();
    let directory = Directory {
        areas: scenario.areas.clone(),
        centres: centre_tx,
        sellers: seller_tx,
        buyers: buyer_tx,
    };
    let trace_sink = TraceSink::new(sim.trace);
    let (event_tx, event_rx) = channel::<Event<T>>();

    let result = thread::scope(|s| {
        let mut spawned: Result<(), SimError> = Ok(());
        for (index, (&area, inbox)) in scenario.areas.iter().zip(centre_rx).enumerate() {
            let centre = DataCentre {
                index,
                area,
                inbox,
                directory: &directory,
                roster: &roster,
                cfg,
                sim,
                trace: &trace_sink,
                events: event_tx.clone(),
                pending: VecDeque::new(),
            };
            spawned = spawned.and_then(|_| spawn_actor(s, format!("centre-{area}"), move || centre.run()));
        }
        for (rank, (p, inbox)) in scenario.prosumers.iter().zip(seller_rx).enumerate() {
            let actor = PlayerActor {
                role: PlayerRole::Seller(p),
                rank,
                inbox,
                directory: &directory,
                cfg,
                sim,
            };
            spawned = spawned.and_then(|_| spawn_actor(s, format!("player-{}", p.id), move || actor.run()));
        }
        for (rank, (c, inbox)) in scenario.consumers.iter().zip(buyer_rx).enumerate() {
            let actor = PlayerActor {
                role: PlayerRole::Buyer(c),
                rank,
                inbox,
                directory: &directory,
                cfg,
                sim,
            };
            spawned = spawned.and_then(|_| spawn_actor(s, format!("player-{}", c.id), move || actor.run()));
        }
        drop(event_tx);

        let collected = spawned.and_then(|_| collect(&event_rx, scenario.areas.len(), sim));

        let stop = if collected.is_ok() { Message::Shutdown } else { Message::Abort };
        for tx in directory.centres.iter() {
            let _ = tx.send(Message::Abort);
        }
        for tx in directory.sellers.iter().chain(&directory.buyers) {
            let _ = tx.send(stop.clone());
        }
        collected
    })?;

    let (area_outcomes, area_logs, plan, inter) = result;
    let mut markets = BTreeMap::new();
    if sim.trace {
        for (o, log) in area_outcomes.iter().zip(area_logs) {
            markets.insert(o.market, log);
        }
        if let Some((_, log)) = &inter {
            markets.insert(MarketLabel::Inter, log.clone());
        }
    }
    let inter_outcome = inter.map(|(o, _)| o);
    let outcome = compose_two_step(scenario, area_outcomes, plan.clone(), inter_outcome)?;
    let mut control = trace_sink.control.into_inner().expect("trace lock");
    control.sort_by_key(|e| e.seq);
    Ok(DistributedRun {
        outcome,
        trace: Trace {
            markets,
            control,
            plan,
        },
    })
}

fn spawn_actor<'scope, F>(s: &'scope thread::Scope<'scope, '_>, name: String, f: F) -> Result<(), SimError>
where
    F: FnOnce() + Send + 'scope,
{
    thread::Builder::new()
        .name(name)
        .stack_size(ACTOR_STACK)
        .spawn_scoped(s, f)
        .map(|_| ())
        .map_err(|e| SimError::Spawn(e.to_string()))
}

type Collected<T> = (
    Vec<ClearingOutcome<T>>,
    Vec<Vec<TraceEntry<T>>>,
    Option<crate::engine::Step2Plan>,
    Option<(ClearingOutcome<T>, Vec<TraceEntry<T>>)>,
);

fn collect<T: Scalar>(
    events: &std::sync::mpsc::Receiver<Event<T>>,
    areas: usize,
    sim: &SimConfig,
) -> Result<Collected<T>, SimError> {
    let mut outcomes: Vec<Option<ClearingOutcome<T>>> = vec![None; areas];
    let mut logs: Vec<Vec<TraceEntry<T>>> = vec![Vec::new(); areas];
    let mut plan = None;
    let mut inter = None;
    loop {
        let done_areas = outcomes.iter().all(Option::is_some);
        let done = match &plan {
            Some(None) => done_areas,
            Some(Some(_)) => done_areas && inter.is_some(),
            None => false,
        };
        if done {
            break;
        }
        match events.recv_timeout(sim.control_timeout() * 2) {
            Ok(Event::AreaDone { index, outcome, log }) => {
                outcomes[index] = Some(outcome);
                logs[index] = log;
            }
            Ok(Event::PlanDecided { plan: p }) => plan = Some(p),
            Ok(Event::InterDone { outcome, log }) => inter = Some((outcome, log)),
            Ok(Event::Failed(e)) => return Err(e),
            Err(RecvTimeoutError::Timeout) => return Err(SimError::Timeout("actors")),
            Err(RecvTimeoutError::Disconnected) => return Err(SimError::Disconnected),
        }
    }
    Ok((
        outcomes.into_iter().map(Option::unwrap).collect(),
        logs,
        plan.flatten(),
        inter,
    ))
}
