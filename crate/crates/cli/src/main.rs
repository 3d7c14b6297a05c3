//! `feeder-market`: run, compare, generate and benchmark local market
//! clearings from the command line.
//!
//! Exit status: 0 when every clearing converged, 2 when one hit its
//! iteration cap (results are still written), 1 on any input error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use feeder_market::engine::outcome_welfare;
use feeder_market::scenario::{generate_population, write_single_results, write_two_step_results, PopulationSpec};
use feeder_market::{load_scenario, run_1smc, run_2smc, run_distributed, Market, Outcome, SimConfig, TwoStep};

#[derive(Parser)]
#[command(name = "feeder-market", version, about = "Price-based clearing of feeder-level energy markets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Clear every area, then trade leftovers across areas.
    #[value(name = "2smc")]
    TwoStep,
    /// One market and one price for everybody.
    #[value(name = "1smc")]
    Single,
}

#[derive(Subcommand)]
enum Command {
    /// Clear a scenario and write summary.json, trajectories and allocations.
    Run {
        /// Scenario file (JSON).
        #[arg(long)]
        scenario: PathBuf,
        /// Clearing mechanism.
        #[arg(long, value_enum, default_value = "2smc")]
        mode: Mode,
        /// Output directory; created if missing.
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Run the protocol with one thread per player and data centre.
        #[arg(long)]
        distributed: bool,
        /// Write the message log to trace.csv (needs --distributed).
        #[arg(long, requires = "distributed")]
        trace: bool,
        /// Seed for randomized reply delays in distributed mode.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run both modes and tabulate welfare, traded energy and time.
    Compare {
        /// Scenario file (JSON).
        #[arg(long)]
        scenario: PathBuf,
        /// Also write compare.csv and both result sets here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a synthetic population and save it as a scenario.
    Generate {
        /// Number of areas; players are spread round-robin over them.
        #[arg(long, default_value_t = 10)]
        areas: u32,
        /// Number of prosumers.
        #[arg(long)]
        sellers: usize,
        /// Number of consumers.
        #[arg(long)]
        buyers: usize,
        /// RNG seed; the same seed gives the same file.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Scenario file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Time both modes on generated populations of several sizes.
    Bench {
        /// Comma-separated player counts, e.g. 20,200,2000.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        sizes: Vec<usize>,
        /// RNG seed for the generated populations.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Directory for bench.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("warning: iteration cap reached before convergence");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Returns whether everything converged.
fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Run {
            scenario,
            mode,
            out,
            distributed,
            trace,
            seed,
        } => run(&scenario, mode, &out, distributed, trace, seed),
        Command::Compare { scenario, out } => compare(&scenario, out.as_deref()),
        Command::Generate {
            areas,
            sellers,
            buyers,
            seed,
            out,
        } => {
            if areas == 0 || sellers == 0 || buyers == 0 {
                bail!("--areas, --sellers and --buyers must all be positive");
            }
            let m: Market = generate_population(&PopulationSpec::new(areas, sellers, buyers, seed))?;
            m.save(&out)?;
            println!("wrote {} ({} players, {} areas)", out.display(), m.player_count(), areas);
            Ok(true)
        }
        Command::Bench { sizes, seed, out } => bench(&sizes, seed, out.as_deref()),
    }
}

fn load(path: &Path) -> Result<Market> {
    load_scenario(path).with_context(|| format!("loading {}", path.display()))
}

fn run(path: &Path, mode: Mode, out: &Path, distributed: bool, trace: bool, seed: Option<u64>) -> Result<bool> {
    let m = load(path)?;
    match mode {
        Mode::TwoStep => {
            let outcome = if distributed {
                let sim = SimConfig {
                    trace,
                    jitter_seed: seed,
                    ..SimConfig::default()
                };
                let run = run_distributed(&m, &m.solver, &sim)?;
                if trace {
                    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
                    let path = out.join("trace.csv");
                    fs::write(&path, run.trace.to_csv()).with_context(|| format!("writing {}", path.display()))?;
                }
                run.outcome
            } else {
                run_2smc(&m, &m.solver)?
            };
            write_two_step_results(&m, &outcome, out)?;
            print_two_step(&outcome);
            Ok(outcome.converged())
        }
        Mode::Single => {
            if distributed {
                bail!("--distributed runs the two-step protocol; use --mode 2smc");
            }
            let outcome = run_1smc(&m, &m.solver)?;
            write_single_results(&m, &outcome, out)?;
            let welfare = outcome_welfare(&m, &outcome.trades)?;
            println!(
                "λ_T = {:.6} ({} rounds), welfare {:.2}, traded {:.2} kWh",
                outcome.price,
                outcome.iterations,
                welfare,
                outcome.demand()
            );
            Ok(outcome.converged)
        }
    }
}

fn print_two_step(o: &TwoStep) {
    for a in &o.area_outcomes {
        let flag = if a.one_sided { " (one-sided)" } else { "" };
        println!("{}: λ = {:.6} ({} rounds){flag}", a.market, a.price, a.iterations);
    }
    match &o.inter_outcome {
        Some(c) => println!("inter: λ_C = {:.6} ({} rounds)", c.price, c.iterations),
        None => println!("inter: skipped"),
    }
    println!("welfare {:.2}, traded {:.2} kWh", o.welfare, o.traded_energy);
}

fn pct(new: f64, base: f64) -> String {
    if base == 0.0 {
        if new == 0.0 { "0.0%".into() } else { "n/a".into() }
    } else {
        format!("{:+.1}%", 100.0 * (new - base) / base.abs())
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

struct Both {
    two: TwoStep,
    one: Outcome,
    one_welfare: f64,
}

fn run_both(m: &Market) -> Result<Both> {
    let two = run_2smc(m, &m.solver)?;
    let one = run_1smc(m, &m.solver)?;
    let one_welfare = outcome_welfare(m, &one.trades)?;
    Ok(Both { two, one, one_welfare })
}

fn compare(path: &Path, out: Option<&Path>) -> Result<bool> {
    let m = load(path)?;
    let b = run_both(&m)?;
    let rows = [
        ("social welfare", b.one_welfare, b.two.welfare),
        ("traded energy (kWh)", b.one.demand(), b.two.traded_energy),
        ("time (ms)", ms(b.one.wall_time), ms(b.two.timing.composed)),
    ];
    println!("{:<22}{:>14}{:>14}{:>16}", "", "1SMC", "2SMC", "2SMC vs 1SMC");
    let mut csv = String::from("metric,1smc,2smc,delta_pct\n");
    for (name, one, two) in rows {
        println!("{name:<22}{one:>14.3}{two:>14.3}{:>16}", pct(two, one));
        let delta = if one == 0.0 { f64::NAN } else { 100.0 * (two - one) / one.abs() };
        let _ = writeln!(csv, "{},{one},{two},{delta}", name.split(' ').next().unwrap_or(name));
    }
    if let Some(dir) = out {
        write_single_results(&m, &b.one, dir.join("1smc"))?;
        write_two_step_results(&m, &b.two, dir.join("2smc"))?;
        let path = dir.join("compare.csv");
        fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(b.two.converged() && b.one.converged)
}

/// Sellers are 45% of the players (the 900/1100 split), at least one per side.
fn population(size: usize, seed: u64) -> Result<Market> {
    if size < 2 {
        bail!("bench sizes must be at least 2 (one seller and one buyer)");
    }
    let sellers = ((size as f64 * 0.45).round() as usize).clamp(1, size - 1);
    let areas = (size / 200).max(3) as u32;
    Ok(generate_population(&PopulationSpec::new(areas, sellers, size - sellers, seed))?)
}

fn bench(sizes: &[usize], seed: u64, out: Option<&Path>) -> Result<bool> {
    if sizes.is_empty() {
        bail!("--sizes needs at least one player count");
    }
    let header = "players,areas,t_1smc_ms,iters_1smc,t_per_iter_1smc_us,t_2smc_ms,welfare_1smc,welfare_2smc";
    let mut csv = format!("{header}\n");
    println!(
        "{:>8}{:>7}{:>12}{:>8}{:>12}{:>12}{:>14}{:>14}",
        "players", "areas", "1SMC ms", "rounds", "µs/round", "2SMC ms", "W 1SMC", "W 2SMC"
    );
    let mut converged = true;
    for &size in sizes {
        let m = population(size, seed)?;
        // best of three damps scheduler noise
        let mut best: Option<Both> = None;
        for _ in 0..3 {
            let b = run_both(&m)?;
            best = Some(match best {
                Some(prev) => Both {
                    two: if b.two.timing.composed < prev.two.timing.composed { b.two } else { prev.two },
                    one: if b.one.wall_time < prev.one.wall_time { b.one } else { prev.one },
                    one_welfare: b.one_welfare,
                },
                None => b,
            });
        }
        let b = best.expect("three runs");
        converged &= b.two.converged() && b.one.converged;
        let per_iter = b.one.wall_time.as_secs_f64() * 1e6 / b.one.iterations as f64;
        println!(
            "{:>8}{:>7}{:>12.3}{:>8}{:>12.3}{:>12.3}{:>14.2}{:>14.2}",
            size,
            m.areas.len(),
            ms(b.one.wall_time),
            b.one.iterations,
            per_iter,
            ms(b.two.timing.composed),
            b.one_welfare,
            b.two.welfare
        );
        let _ = writeln!(
            csv,
            "{size},{},{},{},{per_iter},{},{},{}",
            m.areas.len(),
            ms(b.one.wall_time),
            b.one.iterations,
            ms(b.two.timing.composed),
            b.one_welfare,
            b.two.welfare
        );
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("bench.csv");
        fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(converged)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bench_population_split() {
        let m = population(2000, 1).unwrap();
        assert_eq!((m.prosumers.len(), m.consumers.len(), m.areas.len()), (900, 1100, 10));
        let m = population(2, 1).unwrap();
        assert_eq!((m.prosumers.len(), m.consumers.len(), m.areas.len()), (1, 1, 3));
        assert!(population(1, 1).is_err());
    }

    #[test]
    fn percent_deltas() {
        assert_eq!(pct(110.0, 100.0), "+10.0%");
        assert_eq!(pct(-90.0, -100.0), "+10.0%");
        assert_eq!(pct(0.0, 0.0), "0.0%");
        assert_eq!(pct(1.0, 0.0), "n/a");
    }

    #[test]
    fn help_documents_every_flag() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        for sub in Cli::command().get_subcommands() {
            for arg in sub.get_arguments() {
                assert!(arg.get_help().is_some(), "{} --{}", sub.get_name(), arg.get_id());
            }
        }
    }
}
