use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lma_core::harness::{run_selected, ExperimentConfig, Stage};

#[derive(Parser)]
#[command(name = "lma", version, about = "Partial Legendre transform pipeline and estimate diagnostics")]
struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Nodes per side; overrides `grid`.
    #[arg(long, global = true)]
    grid: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Check convexity and determinant bounds of the potential.
    Validate,
    /// Build the partial Legendre transform and the transformed problem.
    Transform,
    /// Solve the direct problem and write `u.gridtxt`.
    Solve,
    /// Solve both ways and compare after pulling back.
    ComparePaths,
    /// Weak maximum principle measurement.
    Maxprinciple,
    /// Level-set profile and energy chain.
    Degiorgi,
    /// Sobolev ratios over the trial family.
    Sobolev,
    /// Moser-Trudinger integral of a bump.
    Moser,
    /// Oscillation decay over nested sections.
    Holder,
    /// sup/inf ratios of homogeneous solutions.
    Harnack,
    /// Every stage.
    Pipeline,
}

impl Cmd {
    fn stages(self) -> Vec<Stage> {
        match self {
            Cmd::Validate => vec![Stage::Validate],
            Cmd::Transform => vec![Stage::Transform],
            Cmd::Solve => vec![Stage::Solve],
            Cmd::ComparePaths => vec![Stage::ComparePaths],
            Cmd::Maxprinciple => vec![Stage::MaxPrinciple],
            Cmd::Degiorgi => vec![Stage::DeGiorgi],
            Cmd::Sobolev => vec![Stage::Sobolev],
            Cmd::Moser => vec![Stage::Moser],
            Cmd::Holder => vec![Stage::Holder],
            Cmd::Harnack => vec![Stage::Harnack],
            Cmd::Pipeline => Stage::PIPELINE.to_vec(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => match ExperimentConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => ExperimentConfig::default(),
    };
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    if let Some(g) = cli.grid {
        cfg.grid = g;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if matches!(cli.cmd, Cmd::Harnack) && cfg.harnack_height.is_none() {
        cfg.harnack_height = Some(0.1);
    }
    match run_selected(&cfg, &cli.cmd.stages()) {
        Ok(rep) => {
            for s in &rep.stages {
                println!("{}: {}", s.name, if s.passed { "PASS" } else { "FAIL" });
            }
            println!("output: {}", cfg.out.display());
            if rep.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
