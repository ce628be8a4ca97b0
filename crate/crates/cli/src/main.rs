//! `ctxadapt`: run, validate and inspect simulated adaptation scenarios.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ctxadapt_core::adaptation::AdaptationMode;
use ctxadapt_core::scenario::{self, AppDescriptor, NetDescriptor, ScenarioError, ScenarioScript};
use ctxadapt_core::trace::{inspect, parse_trace, InspectQuery};

#[derive(Parser)]
#[command(name = "ctxadapt", version, about = "Context-aware adaptation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write its trace.
    Run {
        #[arg(long)]
        app: PathBuf,
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "M3")]
        mode: AdaptationMode,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Check an application against a network.
    Validate {
        #[arg(long)]
        app: PathBuf,
        #[arg(long)]
        net: PathBuf,
    },
    /// Summarize a trace.
    Inspect {
        #[arg(long)]
        trace: PathBuf,
        /// qos, events, commands or flows.
        #[arg(long)]
        query: InspectQuery,
    },
}

fn fail(e: ScenarioError) -> ExitCode {
    if let ScenarioError::Invalid(diags) = &e {
        for d in diags {
            eprintln!("{d}");
        }
    }
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { app, net, scenario: script, mode, seed, trace } => {
            let loaded = (|| {
                let app: AppDescriptor = scenario::load(&app)?;
                let net: NetDescriptor = scenario::load(&net)?;
                let script: ScenarioScript = scenario::load(&script)?;
                Ok::<_, ScenarioError>((app, net, script))
            })();
            let (app, net, script) = match loaded {
                Ok(v) => v,
                Err(e) => return fail(e),
            };
            let seed = seed.unwrap_or(script.seed);
            let out = match scenario::run(&app, &net, &script, mode, seed) {
                Ok(o) => o,
                Err(e) => return fail(e),
            };
            if let Err(e) = scenario::write_output(&out, &trace) {
                return fail(e);
            }
            if out.infeasible {
                eprintln!("error: run ended with no feasible deployment");
            }
            ExitCode::from(out.exit_code() as u8)
        }
        Command::Validate { app, net } => {
            let app: AppDescriptor = match scenario::load(&app) {
                Ok(v) => v,
                Err(e) => return fail(e),
            };
            let net: NetDescriptor = match scenario::load(&net) {
                Ok(v) => v,
                Err(e) => return fail(e),
            };
            let diags = scenario::validate(&app, &net);
            for d in &diags {
                println!("{d}");
            }
            if diags.is_empty() {
                println!("ok");
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::Inspect { trace, query } => {
            let text = match std::fs::read_to_string(&trace) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {}: {e}", trace.display());
                    return ExitCode::from(2);
                }
            };
            match parse_trace(&text) {
                Ok(lines) => {
                    print!("{}", inspect(&lines, query));
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {}: {e}", trace.display());
                    ExitCode::from(1)
                }
            }
        }
    }
}
