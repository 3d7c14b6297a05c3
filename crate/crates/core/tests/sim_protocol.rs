mod common;

use std::time::Duration;

use common::{random_scenario, toy_scenario};
use feeder_market::scenario::{generate_population, PopulationSpec};
use feeder_market::sim::{Endpoint, FaultPlan, Message};
use feeder_market::{message_trace, run_2smc, run_distributed, AreaId, Config, Market, MarketLabel, SimConfig, SimError};

#[test]
fn reference_table_matches_engine_bit_for_bit() {
    let m = Market::reference_table();
    let engine = run_2smc(&m, &m.solver).unwrap().without_timing();
    let sim = run_distributed(&m, &m.solver, &SimConfig::default()).unwrap();
    assert_eq!(sim.outcome.without_timing(), engine);
    assert!(message_trace(&sim).is_empty());
}

#[test]
fn random_scenarios_match_engine() {
    for seed in 0..12 {
        let m = random_scenario(seed);
        let engine = run_2smc(&m, &m.solver).unwrap().without_timing();
        let sim = run_distributed(&m, &m.solver, &SimConfig::default()).unwrap();
        assert_eq!(sim.outcome.without_timing(), engine, "seed {seed}");
    }
}

#[test]
fn schedule_jitter_does_not_change_results() {
    let m = Market::reference_table();
    let engine = run_2smc(&m, &m.solver).unwrap().without_timing();
    for seed in [1, 7, 99] {
        let sim = SimConfig {
            jitter_seed: Some(seed),
            ..SimConfig::traced()
        };
        let run = run_distributed(&m, &m.solver, &sim).unwrap();
        assert_eq!(run.outcome.without_timing(), engine);
    }
}

#[test]
fn trace_length_follows_round_count() {
    let m = Market::reference_table();
    let run = run_distributed(&m, &m.solver, &SimConfig::traced()).unwrap();
    let trace = message_trace(&run);
    for o in &run.outcome.area_outcomes {
        let MarketLabel::Area(area) = o.market else { unreachable!() };
        let n = m.prosumers.iter().filter(|p| p.area == area).count() + m.consumers.iter().filter(|c| c.area == area).count();
        assert_eq!(trace.markets[&o.market].len(), o.iterations * (1 + n), "{}", o.market);
    }
    let inter = run.outcome.inter_outcome.as_ref().unwrap();
    let n = inter.trades.len();
    assert_eq!(trace.markets[&MarketLabel::Inter].len(), inter.iterations * (1 + n));
    assert_eq!(trace.plan, run.outcome.plan);
}

#[test]
fn replies_answer_the_preceding_price() {
    let m = Market::reference_table();
    let run = run_distributed(&m, &m.solver, &SimConfig { jitter_seed: Some(3), ..SimConfig::traced() }).unwrap();
    for (market, log) in &message_trace(&run).markets {
        let mut round = None;
        let mut last_seq = 0;
        for e in log {
            assert!(e.seq >= last_seq, "per-market order is total");
            last_seq = e.seq;
            match &e.message {
                Message::PriceSignal { iteration, market: mk, .. } => {
                    assert_eq!(mk, market);
                    round = Some(*iteration);
                }
                Message::QuantityReply { iteration, .. } => assert_eq!(Some(*iteration), round),
                other => panic!("unexpected {} in market log", other.variant()),
            }
        }
    }
}

#[test]
fn players_never_receive_third_party_data() {
    let m = Market::reference_table();
    let run = run_distributed(&m, &m.solver, &SimConfig::traced()).unwrap();
    let all = message_trace(&run).ordered();
    let joins = all.iter().filter(|e| matches!(e.message, Message::Join { .. })).count();
    // one registration per player in step 1, one per step-2 participant
    assert_eq!(joins, 20 + run.outcome.inter_outcome.as_ref().unwrap().trades.len());
    assert!(all.iter().any(|e| matches!(e.message, Message::QuantityReply { .. })));
    for e in all {
        if let Some(owner) = e.message.player_data() {
            // private data only ever travels from its owner to a data centre
            assert_eq!(e.from, Endpoint::Player(owner.clone()));
            assert!(matches!(e.to, Endpoint::Centre(_)), "{:?}", e.to);
        }
        if let Endpoint::Player(_) | Endpoint::Participants(_) = e.to {
            assert!(e.message.player_data().is_none(), "{}", e.message.variant());
        }
    }
}

#[test]
fn trace_csv_has_one_line_per_message() {
    let m = toy_scenario(2);
    let run = run_distributed(&m, &m.solver, &SimConfig::traced()).unwrap();
    let trace = message_trace(&run);
    let csv = trace.to_csv();
    assert!(csv.starts_with("seq,market,from,to,variant,payload\n"));
    assert_eq!(csv.lines().count(), 1 + trace.ordered().len());
}

#[test]
fn lost_reply_names_the_player() {
    let m = Market::reference_table();
    let sim = SimConfig {
        reply_timeout: Duration::from_millis(300),
        faults: FaultPlan {
            drop_reply: Some(("C4".into(), 2)),
        },
        ..SimConfig::default()
    };
    match run_distributed(&m, &m.solver, &sim) {
        Err(SimError::MissingReply { players, iteration, .. }) => {
            assert_eq!(players, vec!["C4".into()]);
            assert_eq!(iteration, Some(2));
        }
        other => panic!("expected a missing reply, got {other:?}"),
    }
}

#[test]
fn toy_pair_converges_to_equilibrium() {
    let m = toy_scenario(1);
    let cfg = Config {
        epsilon: 1e-9,
        ..Config::default()
    };
    let run = run_distributed(&m, &cfg, &SimConfig::default()).unwrap();
    let area = &run.outcome.area_outcomes[0];
    assert!((area.price - 6.0).abs() < 1e-6);
    assert!((area.traded() - 400.0).abs() < 1e-3);
    assert!(run.outcome.inter_outcome.is_none());
}

#[test]
fn huge_epsilon_keeps_initial_price() {
    let m = Market::reference_table();
    let cfg = Config {
        epsilon: 1e9,
        lambda_init: 3.0,
        ..Config::default()
    };
    let run = run_distributed(&m, &cfg, &SimConfig::default()).unwrap();
    for o in &run.outcome.area_outcomes {
        assert_eq!(o.iterations, 1);
        assert_eq!(o.price, 3.0);
        assert!(o.converged);
    }
    // all areas stop at the same price, so nothing is left to trade
    assert!(run.outcome.plan.is_none());
}

#[test]
fn one_sided_scenario_is_rejected() {
    let mut m = toy_scenario(1);
    m.prosumers.clear();
    assert!(matches!(
        run_distributed(&m, &m.solver, &SimConfig::default()),
        Err(SimError::Market(_))
    ));
}

#[test]
fn one_sided_area_matches_engine() {
    let mut m = toy_scenario(3);
    m.consumers.retain(|c| c.area != AreaId(3));
    m.prosumers.retain(|p| p.area != AreaId(2));
    let engine = run_2smc(&m, &m.solver).unwrap().without_timing();
    let sim = run_distributed(&m, &m.solver, &SimConfig::default()).unwrap();
    assert_eq!(sim.outcome.without_timing(), engine);
}

#[test]
fn two_thousand_players_run_as_actors() {
    let m: Market = generate_population(&PopulationSpec::new(10, 900, 1100, 42)).unwrap();
    let cfg = Config::default().with_max_iters(20);
    let engine = run_2smc(&m, &cfg).unwrap().without_timing();
    let sim = run_distributed(&m, &cfg, &SimConfig::default()).unwrap();
    assert_eq!(sim.outcome.without_timing(), engine);
}
