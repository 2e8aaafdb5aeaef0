use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isac_d2d::harness::{
    default_eta_grid, default_schemes, parse_eta_grid, parse_schemes, run_experiment, Command, ExperimentSpec, HarnessError,
};

#[derive(Parser)]
#[command(name = "isac", version, about = "Beamforming and D2D power control experiments for an ISAC cell")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Per-iteration objective traces on one channel draw.
    Run(Common),
    /// Mean sum rate per scheme over an SCNR-threshold grid.
    Sweep(Common),
    /// Beampatterns per scheme and threshold on one channel draw.
    Beampattern(Common),
    /// Raw per-trial table.
    Montecarlo(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration (dB/dBm values); defaults to the reference cell.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated schemes.
    #[arg(long)]
    schemes: Option<String>,
    /// `start:stop:step` or a comma list, dB.
    #[arg(long = "eta-grid")]
    eta_grid: Option<String>,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn build_spec(command: Command, args: Common) -> Result<ExperimentSpec, HarnessError> {
    let schemes = match &args.schemes {
        Some(s) => parse_schemes(s)?,
        None => default_schemes(command),
    };
    let eta_grid = match &args.eta_grid {
        Some(g) => parse_eta_grid(g)?,
        None if command == Command::Sweep => default_eta_grid(),
        None => Vec::new(),
    };
    Ok(ExperimentSpec {
        command,
        config_path: args.config,
        schemes,
        eta_grid,
        trials: args.trials,
        seed_base: args.seed,
        output_dir: Some(args.out),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Run(a) => (Command::Run, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
        Cmd::Beampattern(a) => (Command::Beampattern, a),
        Cmd::Montecarlo(a) => (Command::Montecarlo, a),
    };
    let outcome = build_spec(command, args).and_then(|spec| run_experiment(&spec).map(|r| (spec, r)));
    match outcome {
        Ok((spec, result)) => {
            let dir = spec.output_dir.as_deref().map(|d| d.display().to_string()).unwrap_or_default();
            for t in &result.tables {
                println!("wrote {dir}/{} ({} rows)", t.file_name, t.rows.len());
            }
            if let Some(summary) = &result.summary {
                for g in &summary.gains {
                    if let Some(v) = g.relative_gain {
                        println!("eta {:>5} dB  {} vs {}: {:+.2}%", g.eta_db, g.scheme, g.baseline, 100.0 * v);
                    }
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("isac: {e}");
            match e {
                HarnessError::Config(_) | HarnessError::Spec(_) => ExitCode::from(2),
                HarnessError::Infeasible { .. } => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
