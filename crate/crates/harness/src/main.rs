use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use chainsmr_harness::persist;
use chainsmr_harness::report::{metrics, report_ok};
use chainsmr_harness::sweep::{parse_seeds, sweep};
use chainsmr_sim::{AdversaryKind, ProtocolKind, Scenario};

#[derive(Parser)]
#[command(name = "chainsmr", about = "Chained BFT protocols under a deterministic simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute one scenario; write a report and persisted commit logs.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        protocol: Option<String>,
        #[arg(long)]
        adversary: Option<String>,
    },
    /// Run a scenario across many seeds and aggregate.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// Seed count ("100") or range ("5..20").
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        protocol: Option<String>,
        #[arg(long)]
        adversary: Option<String>,
    },
    /// Re-validate persisted commit logs in a directory.
    Check {
        #[arg(long)]
        out: PathBuf,
    },
    /// Reproduce a trace from (scenario, seed) and verify determinism.
    Replay {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        protocol: Option<String>,
        #[arg(long)]
        adversary: Option<String>,
    },
}

fn load_scenario(
    path: &PathBuf,
    protocol: &Option<String>,
    adversary: &Option<String>,
) -> Result<Scenario> {
    let body = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut scenario: Scenario = serde_json::from_str(&body).context("parsing scenario JSON")?;
    if let Some(p) = protocol {
        scenario.protocol = serde_json::from_value::<ProtocolKind>(serde_json::json!(p))
            .with_context(|| format!("unknown protocol {p}"))?;
    }
    if let Some(a) = adversary {
        scenario.adversary = serde_json::from_value::<AdversaryKind>(serde_json::json!(a))
            .with_context(|| format!("unknown adversary {a}"))?;
    }
    if let Ok(seed) = std::env::var("CHAINSMR_SEED") {
        scenario.seed = seed.parse().context("CHAINSMR_SEED must be an integer")?;
    }
    Ok(scenario)
}

fn liveness_window(s: &Scenario) -> u64 {
    (10 * s.tau).max(40 * s.delta)
}

fn main() -> ExitCode {
    match run_cli() {
        Ok(ok) => {
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run_cli() -> Result<bool> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run {
            scenario,
            out,
            protocol,
            adversary,
        } => {
            let s = load_scenario(&scenario, &protocol, &adversary)?;
            let trace = chainsmr_sim::run(&s)?;
            let report = metrics(&trace, liveness_window(&s));
            let body = serde_json::to_string_pretty(&report)?;
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("report.json"), &body)?;
                persist::write_logs(&trace, &dir)?;
            }
            println!("{body}");
            Ok(report_ok(&report))
        }
        Cmd::Sweep {
            scenario,
            seeds,
            out,
            protocol,
            adversary,
        } => {
            let s = load_scenario(&scenario, &protocol, &adversary)?;
            let seeds = parse_seeds(&seeds)?;
            let outcome = sweep(&s, &seeds, liveness_window(&s))?;
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("sweep.csv"), &outcome.csv)?;
                for (seed, report) in &outcome.reports {
                    fs::write(
                        dir.join(format!("report_{seed}.json")),
                        serde_json::to_string_pretty(report)?,
                    )?;
                }
            }
            print!("{}", outcome.csv);
            Ok(outcome.reports.iter().all(|(_, r)| report_ok(r)))
        }
        Cmd::Check { out } => {
            let count = persist::check_logs(&out)?;
            println!("checked {count} replica logs: consistent");
            Ok(true)
        }
        Cmd::Replay {
            scenario,
            out,
            protocol,
            adversary,
        } => {
            let s = load_scenario(&scenario, &protocol, &adversary)?;
            let first = chainsmr_sim::run(&s)?;
            let second = chainsmr_sim::run(&s)?;
            let (da, db) = (first.digest(), second.digest());
            println!("trace digest: {}", da.hex());
            if da != db {
                eprintln!("replay mismatch: {} vs {}", da.hex(), db.hex());
                return Ok(false);
            }
            let report = metrics(&first, liveness_window(&s));
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(
                    dir.join("report.json"),
                    serde_json::to_string_pretty(&report)?,
                )?;
                persist::write_logs(&first, &dir)?;
            }
            Ok(report_ok(&report))
        }
    }
}
