use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tsch_sdn_sim::experiment::{run_experiment, stats_from_dir};
use tsch_sdn_sim::metrics::{self, SummaryRow};
use tsch_sdn_sim::network::build_base_schedule;
use tsch_sdn_sim::rpl::build_dag;
use tsch_sdn_sim::scenario::parse_scenario;
use tsch_sdn_sim::{NodeId, Scenario};

#[derive(Parser)]
#[command(
    name = "tsch-sdn-sim",
    version,
    about = "TSCH mesh simulator with an SDN control plane and track slicing"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario over one or more seeds and write results.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// A count `n` (seeds 1..=n) or a comma-separated list.
        #[arg(long, default_value = "10")]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute flow statistics from a result directory.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Print the best-effort slotframe grid of a scenario.
    ScheduleDump {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    if s.contains(',') {
        return s
            .split(',')
            .map(|t| t.trim().parse().map_err(|_| format!("bad seed `{t}`")))
            .collect();
    }
    let n: u64 = s.trim().parse().map_err(|_| format!("bad seed count `{s}`"))?;
    if n == 0 {
        return Err("seed count must be positive".into());
    }
    Ok((1..=n).collect())
}

fn load(path: &PathBuf) -> Result<Scenario, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_scenario(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn print_summary(rows: &[SummaryRow]) {
    println!(
        "{:<10} {:<16} {:>4} {:>14} {:>14}",
        "class", "metric", "n", "mean", "stddev"
    );
    for r in rows {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        println!(
            "{:<10} {:<16} {:>4} {:>14} {:>14}",
            r.class,
            r.metric,
            r.n,
            f(r.mean),
            f(r.stddev)
        );
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.cmd {
        Cmd::Simulate { scenario, seeds, out } => {
            let sc = load(&scenario)?;
            let seeds = parse_seeds(&seeds)?;
            let report = run_experiment(&sc, &seeds, Some(&out)).map_err(|e| e.to_string())?;
            println!(
                "mode {} | {} seeds | results in {}",
                sc.mode,
                seeds.len(),
                out.display()
            );
            print_summary(&report.summary);
        }
        Cmd::Stats { input } => {
            let (per_seed, summary) = stats_from_dir(&input).map_err(|e| e.to_string())?;
            for (seed, stats) in &per_seed {
                println!("seed {seed}");
                let mut buf = Vec::new();
                metrics::write_flow_stats(&mut buf, stats).map_err(|e| e.to_string())?;
                print!("{}", String::from_utf8_lossy(&buf));
            }
            print_summary(&summary);
        }
        Cmd::ScheduleDump { scenario } => {
            let sc = load(&scenario)?;
            let topo = sc.build_topology().map_err(|e| e.to_string())?;
            let dag = build_dag(&topo, NodeId::ROOT).map_err(|e| e.to_string())?;
            let sf = build_base_schedule(&dag, sc.tsch.slotframe_length, sc.tsch.channels, sc.tsch.shared_slots)
                .map_err(|e| e.to_string())?;
            print!("{}", sf.dump_grid());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
