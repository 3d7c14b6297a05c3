use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{Receiver, RecvTimeoutError, Sender};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::message::{Endpoint, Message, TraceEntry};
use super::{Roster, RosterEntry, SimConfig, SimError};
use crate::econ::{ConsumerParams, ProsumerParams};
use crate::engine::{
    choose_step2_plan, default_step_size, step2_buyer_slot, step2_seller_slot, AreaSummary,
    BuyerSlot, ClearingOutcome, DualAscent, EtaMode, SellerSlot, SolverConfig, Step2Plan, Trade,
};
use crate::model::{AreaId, MarketLabel, PlayerId, Side};
use crate::scalar::{ordered_sum, Scalar};

/// What actors report back to the runtime.
#[derive(Debug)]
pub(crate) enum Event<T> {
    AreaDone {
        index: usize,
        outcome: ClearingOutcome<T>,
        log: Vec<TraceEntry<T>>,
    },
    PlanDecided {
        plan: Option<Step2Plan>,
    },
    InterDone {
        outcome: ClearingOutcome<T>,
        log: Vec<TraceEntry<T>>,
    },
    Failed(SimError),
}

pub(crate) struct TraceSink<T> {
    pub enabled: bool,
    pub seq: AtomicU64,
    pub control: Mutex<Vec<TraceEntry<T>>>,
}

impl<T: Scalar> TraceSink<T> {
    pub fn new(enabled: bool) -> Self {
        TraceSink {
            enabled,
            seq: AtomicU64::new(0),
            control: Mutex::new(Vec::new()),
        }
    }

    fn entry(&self, from: Endpoint, to: Endpoint, message: &Message<T>) -> TraceEntry<T> {
        TraceEntry {
            seq: self.seq.fetch_add(1, Ordering::SeqCst),
            from,
            to,
            message: message.clone(),
        }
    }

    fn log_to(&self, log: &mut Vec<TraceEntry<T>>, from: Endpoint, to: Endpoint, message: &Message<T>) {
        if self.enabled {
            log.push(self.entry(from, to, message));
        }
    }

    fn control(&self, from: Endpoint, to: Endpoint, message: &Message<T>) {
        if self.enabled {
            let e = self.entry(from, to, message);
            self.control.lock().expect("trace lock").push(e);
        }
    }
}

/// Addresses of every actor. Area indices follow scenario area order.
pub(crate) struct Directory<T> {
    pub areas: Vec<AreaId>,
    pub centres: Vec<Sender<Message<T>>>,
    pub sellers: Vec<Sender<Message<T>>>,
    pub buyers: Vec<Sender<Message<T>>>,
}

impl<T> Directory<T> {
    fn centre(&self, area: AreaId) -> &Sender<Message<T>> {
        let i = self.areas.iter().position(|&a| a == area).expect("known area");
        &self.centres[i]
    }

    fn player(&self, entry: &RosterEntry) -> &Sender<Message<T>> {
        match entry.side {
            Side::Seller => &self.sellers[entry.rank],
            Side::Buyer => &self.buyers[entry.rank],
        }
    }
}

pub(crate) enum PlayerRole<'a, T> {
    Seller(&'a ProsumerParams<T>),
    Buyer(&'a ConsumerParams<T>),
}

enum Slot<'a, T> {
    Seller(SellerSlot<'a, T>),
    Buyer(BuyerSlot<'a, T>),
}

impl<T: Scalar> Slot<'_, T> {
    fn respond(&self, price: T) -> crate::error::Result<T> {
        match self {
            Slot::Seller(s) => s.respond(price),
            Slot::Buyer(b) => b.respond(price),
        }
    }
}

/// A smart meter: knows only its own parameters, answers prices with best
/// responses.
pub(crate) struct PlayerActor<'a, T> {
    pub role: PlayerRole<'a, T>,
    pub rank: usize,
    pub inbox: Receiver<Message<T>>,
    pub directory: &'a Directory<T>,
    pub cfg: &'a SolverConfig<T>,
    pub sim: &'a SimConfig,
}

impl<T: Scalar> PlayerActor<'_, T> {
    fn id(&self) -> &PlayerId {
        match self.role {
            PlayerRole::Seller(p) => &p.id,
            PlayerRole::Buyer(c) => &c.id,
        }
    }

    fn area(&self) -> AreaId {
        match self.role {
            PlayerRole::Seller(p) => p.area,
            PlayerRole::Buyer(c) => c.area,
        }
    }

    fn join(&self, market: MarketLabel, to: &Sender<Message<T>>) {
        let (side, slope) = match self.role {
            PlayerRole::Seller(p) => (Side::Seller, p.slope()),
            PlayerRole::Buyer(c) => (Side::Buyer, c.slope()),
        };
        let _ = to.send(Message::Join {
            market,
            player: self.id().clone(),
            side,
            rank: self.rank,
            slope,
        });
    }

    pub fn run(self) {
        let own_area = self.area();
        let mut slot = match self.role {
            PlayerRole::Seller(p) => Slot::Seller(SellerSlot::fresh(p)),
            PlayerRole::Buyer(c) => Slot::Buyer(BuyerSlot::fresh(c)),
        };
        let mut jitter = self.sim.jitter_seed.map(|seed| {
            let salt = (self.rank as u64) << 1 | matches!(self.role, PlayerRole::Buyer(_)) as u64;
            ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        });
        let mut inter_centre: Option<AreaId> = None;
        let mut last = T::zero();

        self.join(MarketLabel::Area(own_area), self.directory.centre(own_area));
        while let Ok(msg) = self.inbox.recv() {
            match msg {
                Message::PriceSignal {
                    market,
                    iteration,
                    price,
                } => {
                    let Ok(q) = slot.respond(price) else { return };
                    last = q;
                    if self.sim.faults.drops(self.id(), iteration) {
                        continue;
                    }
                    if let Some(rng) = jitter.as_mut() {
                        let micros = rng.random_range(0..50u64);
                        thread::sleep(Duration::from_micros(micros));
                    }
                    let centre = match market {
                        MarketLabel::Inter => inter_centre.unwrap_or(own_area),
                        _ => own_area,
                    };
                    let _ = self.directory.centre(centre).send(Message::QuantityReply {
                        market,
                        player: self.id().clone(),
                        iteration,
                        quantity: q,
                    });
                }
                Message::AreaResult { .. } => {
                    // The last answered price was the final one.
                }
                Message::Step2Invite { coordinator } => {
                    let response = self.cfg.step2_response;
                    slot = match self.role {
                        PlayerRole::Seller(p) => Slot::Seller(step2_seller_slot(p, last, response)),
                        PlayerRole::Buyer(c) => Slot::Buyer(step2_buyer_slot(c, last, response)),
                    };
                    inter_centre = Some(coordinator);
                    self.join(MarketLabel::Inter, self.directory.centre(coordinator));
                }
                Message::Shutdown | Message::Abort => return,
                Message::Join { .. } | Message::QuantityReply { .. } => {}
            }
        }
    }
}

/// Per-area coordinator: aggregates replies, posts prices, and when its
/// area has the highest price, runs the inter-area market too.
pub(crate) struct DataCentre<'a, T> {
    pub index: usize,
    pub area: AreaId,
    pub inbox: Receiver<Message<T>>,
    pub directory: &'a Directory<T>,
    pub roster: &'a Roster,
    pub cfg: &'a SolverConfig<T>,
    pub sim: &'a SimConfig,
    pub trace: &'a TraceSink<T>,
    pub events: Sender<Event<T>>,
    pub pending: VecDeque<Message<T>>,
}

struct Member<'r, T> {
    entry: &'r RosterEntry,
    slope: T,
    quantity: T,
}

impl<'a, T: Scalar> DataCentre<'a, T> {
    pub fn run(mut self) {
        if let Err(e) = self.protocol() {
            let _ = self.events.send(Event::Failed(e));
        }
    }

    fn me(&self) -> Endpoint {
        Endpoint::Centre(self.area)
    }

    /// Next message satisfying `want`; others are kept for later.
    fn recv_where(
        &mut self,
        timeout: Duration,
        mut want: impl FnMut(&Message<T>) -> bool,
    ) -> Result<Option<Message<T>>, SimError> {
        if let Some(pos) = self.pending.iter().position(&mut want) {
            return Ok(self.pending.remove(pos));
        }
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.inbox.recv_timeout(left) {
                Ok(Message::Abort) => return Err(SimError::Aborted),
                Ok(m) if want(&m) => return Ok(Some(m)),
                Ok(m) => self.pending.push_back(m),
                Err(RecvTimeoutError::Timeout) => return Ok(None),
                Err(RecvTimeoutError::Disconnected) => return Err(SimError::Disconnected),
            }
        }
    }

    fn protocol(&mut self) -> Result<(), SimError> {
        let label = MarketLabel::Area(self.area);
        let members: Vec<&RosterEntry> = self.roster.in_area(self.area).collect();
        let has_sellers = members.iter().any(|m| m.side == Side::Seller);
        let has_buyers = members.iter().any(|m| m.side == Side::Buyer);

        let mut joined = self.collect_joins(label, &members)?;
        let mut log = Vec::new();
        let outcome = if has_sellers && has_buyers {
            self.clear(label, &mut joined, &mut log)?
        } else {
            let trades = joined.iter().map(|m| trade(m.entry, T::zero())).collect();
            ClearingOutcome::unclearable(label, trades, self.cfg.lambda_init)
        };

        let result = Message::AreaResult {
            area: self.area,
            price: outcome.price,
            converged: outcome.converged,
            has_sellers,
            has_buyers,
        };
        for (i, centre) in self.directory.centres.iter().enumerate() {
            if i != self.index {
                self.trace
                    .control(self.me(), Endpoint::Centre(self.directory.areas[i]), &result);
                let _ = centre.send(result.clone());
            }
        }
        for m in &members {
            self.trace.control(self.me(), Endpoint::Player(m.player.clone()), &result);
            let _ = self.directory.player(m).send(result.clone());
        }
        let mut summaries = vec![None; self.directory.areas.len()];
        summaries[self.index] = Some(AreaSummary {
            area: self.area,
            price: outcome.price,
            has_sellers,
            has_buyers,
        });
        let _ = self.events.send(Event::AreaDone {
            index: self.index,
            outcome,
            log,
        });

        while summaries.iter().any(Option::is_none) {
            let msg = self
                .recv_where(self.sim.control_timeout(), |m| matches!(m, Message::AreaResult { .. }))?
                .ok_or(SimError::Timeout("area results"))?;
            if let Message::AreaResult {
                area,
                price,
                has_sellers,
                has_buyers,
                ..
            } = msg
            {
                let i = self.directory.areas.iter().position(|&a| a == area).expect("known area");
                summaries[i] = Some(AreaSummary {
                    area,
                    price,
                    has_sellers,
                    has_buyers,
                });
            }
        }
        let summaries: Vec<_> = summaries.into_iter().map(Option::unwrap).collect();
        let plan = choose_step2_plan(&summaries, self.cfg.step2_selection, self.cfg.epsilon);
        if self.index == 0 {
            let _ = self.events.send(Event::PlanDecided { plan: plan.clone() });
        }
        let Some(plan) = plan else { return Ok(()) };

        let invite = Message::Step2Invite {
            coordinator: plan.coordinator,
        };
        for m in members.iter().filter(|m| plan.invites(self.area, m.side)) {
            self.trace.control(self.me(), Endpoint::Player(m.player.clone()), &invite);
            let _ = self.directory.player(m).send(invite.clone());
        }

        if plan.coordinator == self.area {
            let participants: Vec<&RosterEntry> = self
                .roster
                .sellers
                .iter()
                .filter(|e| plan.invites(e.area, Side::Seller))
                .chain(self.roster.buyers.iter().filter(|e| plan.invites(e.area, Side::Buyer)))
                .collect();
            let mut joined = self.collect_joins(MarketLabel::Inter, &participants)?;
            let mut log = Vec::new();
            let outcome = self.clear(MarketLabel::Inter, &mut joined, &mut log)?;
            let _ = self.events.send(Event::InterDone { outcome, log });
        }
        Ok(())
    }

    /// Waits for every expected participant to register; returns them
    /// sellers first, then buyers, each in scenario order.
    fn collect_joins<'r>(
        &mut self,
        market: MarketLabel,
        expected: &[&'r RosterEntry],
    ) -> Result<Vec<Member<'r, T>>, SimError> {
        let mut slopes: Vec<Option<T>> = vec![None; expected.len()];
        let index: HashMap<(Side, usize), usize> = expected
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.side, e.rank), i))
            .collect();
        while slopes.iter().any(Option::is_none) {
            let msg = self
                .recv_where(self.sim.reply_timeout, |m| {
                    matches!(m, Message::Join { market: mk, .. } if *mk == market)
                })?;
            let Some(msg) = msg else {
                let missing = expected
                    .iter()
                    .zip(&slopes)
                    .filter(|(_, s)| s.is_none())
                    .map(|(e, _)| e.player.clone())
                    .collect();
                return Err(SimError::MissingReply {
                    market,
                    iteration: None,
                    players: missing,
                });
            };
            if let Message::Join {
                player, side, rank, slope, ..
            } = &msg
            {
                self.trace
                    .control(Endpoint::Player(player.clone()), self.me(), &msg);
                let i = *index
                    .get(&(*side, *rank))
                    .ok_or_else(|| SimError::Unexpected(player.clone()))?;
                slopes[i] = Some(*slope);
            }
        }
        let mut members: Vec<Member<'r, T>> = expected
            .iter()
            .zip(slopes)
            .map(|(e, s)| Member {
                entry: e,
                slope: s.expect("all joined"),
                quantity: T::zero(),
            })
            .collect();
        members.sort_by_key(|m| (m.entry.side == Side::Buyer, m.entry.rank));
        Ok(members)
    }

    fn step_size(&self, members: &[Member<'_, T>]) -> Result<T, SimError> {
        match self.cfg.eta {
            EtaMode::Fixed(v) => Ok(v),
            EtaMode::Auto => Ok(default_step_size(
                members.iter().filter(|m| m.entry.side == Side::Buyer).map(|m| m.slope),
                members.iter().filter(|m| m.entry.side == Side::Seller).map(|m| m.slope),
            )?),
        }
    }

    fn clear(
        &mut self,
        market: MarketLabel,
        members: &mut [Member<'_, T>],
        log: &mut Vec<TraceEntry<T>>,
    ) -> Result<ClearingOutcome<T>, SimError> {
        let eta = self.step_size(members)?;
        let index: HashMap<PlayerId, usize> = members
            .iter()
            .enumerate()
            .map(|(i, m)| (m.entry.player.clone(), i))
            .collect();
        let start = Instant::now();
        let mut ascent = DualAscent::new(self.cfg, eta);
        loop {
            let iteration = ascent.iteration();
            let signal = Message::PriceSignal {
                market,
                iteration,
                price: ascent.price(),
            };
            self.trace
                .log_to(log, self.me(), Endpoint::Participants(market), &signal);
            for m in members.iter() {
                let _ = self.directory.player(m.entry).send(signal.clone());
            }

            let mut answered = vec![false; members.len()];
            let mut left = members.len();
            while left > 0 {
                let msg = self.recv_where(self.sim.reply_timeout, |m| {
                    matches!(m, Message::QuantityReply { market: mk, .. } if *mk == market)
                })?;
                let Some(msg) = msg else {
                    let players = members
                        .iter()
                        .zip(&answered)
                        .filter(|(_, a)| !**a)
                        .map(|(m, _)| m.entry.player.clone())
                        .collect();
                    return Err(SimError::MissingReply {
                        market,
                        iteration: Some(iteration),
                        players,
                    });
                };
                let Message::QuantityReply {
                    player,
                    iteration: k,
                    quantity,
                    ..
                } = &msg
                else {
                    unreachable!()
                };
                if *k != iteration {
                    return Err(SimError::StaleReply {
                        market,
                        player: player.clone(),
                        expected: iteration,
                        got: *k,
                    });
                }
                let i = *index
                    .get(player)
                    .ok_or_else(|| SimError::Unexpected(player.clone()))?;
                if answered[i] {
                    return Err(SimError::StaleReply {
                        market,
                        player: player.clone(),
                        expected: iteration,
                        got: *k,
                    });
                }
                answered[i] = true;
                left -= 1;
                members[i].quantity = *quantity;
                self.trace
                    .log_to(log, Endpoint::Player(player.clone()), self.me(), &msg);
            }

            let supply = ordered_sum(
                members.iter().filter(|m| m.entry.side == Side::Seller).map(|m| m.quantity),
            );
            let demand = ordered_sum(
                members.iter().filter(|m| m.entry.side == Side::Buyer).map(|m| m.quantity),
            );
            if ascent.observe(supply, demand).is_none() {
                break;
            }
        }
        let wall = start.elapsed();
        let trades = members.iter().map(|m| trade(m.entry, m.quantity)).collect();
        Ok(ascent.finish(market, trades, wall))
    }
}

fn trade<T>(entry: &RosterEntry, quantity: T) -> Trade<T> {
    Trade {
        player: entry.player.clone(),
        side: entry.side,
        area: entry.area,
        quantity,
    }
}
