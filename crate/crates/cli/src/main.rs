//! `atgen`: simulate, detect, attack and report on analog netlists.
//!
//! Exit codes: 0 success, 1 input or configuration error, 2 partial
//! numerical success (some sweep points or some corpus runs failed).

mod http;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use atgen_core::baseline::Pattern;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "atgen", version, about = "Closed-loop analog hardware Trojan insertion")]
struct Cli {
    /// Campaign seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Campaign configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Where results are written.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// DC-sweep a netlist and emit the trace as CSV.
    Simulate {
        netlist: PathBuf,
        #[arg(long, num_args = 4, value_names = ["SOURCE", "START", "STOP", "POINTS"])]
        sweep: Option<Vec<String>>,
    },
    /// Run the detector on a netlist and emit suspects as JSON lines.
    Detect {
        netlist: PathBuf,
        #[arg(long, num_args = 4, value_names = ["SOURCE", "START", "STOP", "POINTS"])]
        sweep: Option<Vec<String>>,
        /// Golden netlist enabling the reference-deviation rule.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Run insertion campaigns on one netlist or a whole manifest.
    Campaign {
        netlist: Option<PathBuf>,
        #[command(flatten)]
        target: TargetArgs,
        /// Worker threads for manifest runs (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Insert a static reference Trojan and score it.
    Baseline {
        netlist: Option<PathBuf>,
        /// a2-like or delta-like.
        #[arg(long)]
        pattern: Pattern,
        #[command(flatten)]
        target: TargetArgs,
    },
    /// Aggregate result bundles into tables.
    Report { results: PathBuf },
}

#[derive(clap::Args)]
struct TargetArgs {
    /// Benchmark manifest; runs every entry unless --entry is given.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Manifest entries to run.
    #[arg(long)]
    entry: Vec<String>,
    #[arg(long)]
    output_node: Option<String>,
    /// Circuit area in m^2 for the transistor-overhead metric.
    #[arg(long)]
    area: Option<f64>,
}

fn execute(cli: Cli) -> Result<u8> {
    let cfg = run::load_config(cli.config.as_deref(), cli.seed)?;
    let default_out = || cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("atgen-out"));
    match &cli.command {
        Command::Simulate { netlist, sweep } => {
            let spec = run::sweep_from_args(sweep.as_deref(), &cfg)?;
            run::simulate(netlist, &spec, &cfg, cli.out_dir.as_deref())
        }
        Command::Detect {
            netlist,
            sweep,
            reference,
        } => {
            let spec = run::sweep_from_args(sweep.as_deref(), &cfg)?;
            run::detect(netlist, &spec, reference.as_deref(), &cfg, cli.out_dir.as_deref())
        }
        Command::Campaign {
            netlist,
            target,
            threads,
        } => {
            let targets = resolve(netlist, target, &cfg)?;
            run::campaign(&targets, &cfg, &default_out(), *threads)
        }
        Command::Baseline {
            netlist,
            pattern,
            target,
        } => {
            let targets = resolve(netlist, target, &cfg)?;
            run::baseline(&targets, *pattern, &cfg, &default_out())
        }
        Command::Report { results } => run::report(results, cli.out_dir.as_deref()),
    }
}

fn resolve(netlist: &Option<PathBuf>, t: &TargetArgs, cfg: &atgen_core::CampaignConfig) -> Result<Vec<run::Target>> {
    run::targets(
        netlist.as_deref(),
        t.manifest.as_deref(),
        &t.entry,
        t.output_node.as_deref(),
        t.area,
        cfg,
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
