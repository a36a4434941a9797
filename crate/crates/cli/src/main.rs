use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use slq::{commands, exit, serve, CliError};
use slq_core::Preference;

/// Plans analytical queries on serverless functions along the cost/latency
/// Pareto frontier.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Search a logical plan for its cost/latency frontier.
    Plan {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pick one point off a frontier file.
    Select {
        #[arg(long)]
        frontier: PathBuf,
        /// knee, fastest, cheapest, cost-budget=<x> or latency-budget=<seconds>
        #[arg(long)]
        preference: Preference,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a selected plan under noise and compare with its prediction.
    Simulate {
        /// Selected-plan file written by `select`.
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        runs: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a frontier file over HTTP on the loopback interface.
    Serve {
        #[arg(long)]
        frontier: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ODYSSEY_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => exit::OK,
                _ => exit::USAGE,
            };
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Plan { plan, profile, out } => {
            let r = commands::plan(&plan, &profile, &out)?;
            println!(
                "{} frontier points (knee {}) written to {}",
                r.points,
                r.knee_index,
                out.display()
            );
            println!("planning time: {:.1} ms", r.wall_time.as_secs_f64() * 1e3);
            println!("pruned sizes per stage: {:?}", r.pruned_sizes);
        }
        Cmd::Select { frontier, preference, out } => {
            let doc = commands::select(&frontier, preference, &out)?;
            let p = &doc.selected;
            println!(
                "preference {}: point {} (cost {:.6}, latency {:.3} s) written to {}",
                doc.preference,
                doc.index,
                p.predicted_cost,
                p.predicted_latency_s,
                out.display()
            );
        }
        Cmd::Simulate { plan, profile, seed, runs, out } => {
            let r = commands::simulate(&plan, &profile, seed, runs, &out)?;
            let v = &r.validation;
            println!(
                "{runs} runs, seed {seed}: latency mean {:.3} s (predicted {:.3}), cost mean {:.6} (predicted {:.6}) written to {}",
                v.simulated_latency.mean,
                v.predicted_latency_s,
                v.simulated_cost.mean,
                v.predicted_cost,
                out.display()
            );
        }
        Cmd::Serve { frontier, profile, port } => {
            let state = serve::AppState::load(&frontier, &profile)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
            rt.block_on(serve::run(state, port))?;
        }
    }
    Ok(())
}
