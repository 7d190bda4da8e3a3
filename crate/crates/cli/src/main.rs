use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use msp_core::baseline::EngineKind;
use msp_core::experiments::{
    cutoff_grid, run_accuracy_experiment, run_comparison, run_scaling_experiment, synapse_plateau, write_scaling,
};
use msp_core::sim::{run_simulation, RunConfig};

/// Structural-plasticity network simulator.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and write metrics.csv, timing.csv, network.csv and metrics.svg.
    Run(Common),
    /// Deviation of both expansions from the exact field for cutoffs (0..5)^3.
    Accuracy(Common),
    /// Connectivity-update time against the neuron count.
    Scaling(Common),
    /// The same run with each engine listed in `compare_engines`.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// direct, barnes_hut or fmm.
    #[arg(long)]
    engine: Option<EngineKind>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> msp_core::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.engine {
            cfg.engine = e;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> msp_core::Result<()> {
    match cli.command {
        Command::Run(c) => {
            let cfg = c.load()?;
            let out = run_simulation(&cfg)?;
            if let Some(last) = out.metrics.last() {
                println!(
                    "step {} calcium {:.4} synapses {} -> {}",
                    last.step,
                    last.calcium_mean,
                    last.synapses_total,
                    cfg.out_dir.display()
                );
            }
        }
        Command::Accuracy(c) => {
            let cfg = c.load()?;
            let report = run_accuracy_experiment(&cfg, &cutoff_grid(5))?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            let path = cfg.out_dir.join("accuracy.csv");
            report.write(&path)?;
            for r in report.rows.iter().filter(|r| r.cutoff.0 == [3, 3, 3]) {
                println!("{} (3,3,3): median {:.2e}% max {:.2e}%", r.method, r.summary.median, r.summary.max);
            }
            println!("-> {}", path.display());
        }
        Command::Scaling(c) => {
            let cfg = c.load()?;
            let rows = run_scaling_experiment(&cfg)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            let path = cfg.out_dir.join("scaling.csv");
            write_scaling(&path, &rows)?;
            for r in rows.iter().filter(|r| r.phase == "connectivity_update") {
                println!("n={} {}: {:.4}s, {:.2} calls/neuron", r.neurons, r.engine, r.min(), r.choose_calls / r.neurons as f64);
            }
            println!("-> {}", path.display());
        }
        Command::Compare(c) => {
            let cfg = c.load()?;
            for (engine, rows) in run_comparison(&cfg)? {
                if let (Some(last), Some(p)) = (rows.last(), synapse_plateau(&rows)) {
                    println!("{engine}: calcium {:.4} plateau synapses {:.1}", last.calcium_mean, p.level);
                }
            }
            println!("-> {}", cfg.out_dir.join("compare.csv").display());
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
