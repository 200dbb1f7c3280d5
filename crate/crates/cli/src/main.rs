use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ssc_mpc::ocp::ControllerMode;
use ssc_mpc::Error;
use ssc_mpc_cli::{exit_code, parse_config_relative, run_experiment, ExperimentSpec};

/// Monte Carlo experiments with the scenario + stochastic MPC controller.
#[derive(Debug, Parser)]
#[command(name = "ssc-mpc", version)]
struct Args {
    /// Experiment file (`key = value` per line).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Controller: ssc, smpc_only or scmpc_only.
    #[arg(long)]
    mode: Option<String>,
    /// Runs per sweep point.
    #[arg(long)]
    runs: Option<usize>,
    /// Base seed for the per-run seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(args: &Args) -> Result<ExperimentSpec, Error> {
    let mut spec = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            parse_config_relative(&text, path.parent())?
        }
        None => ExperimentSpec::default(),
    };
    if let Some(m) = &args.mode {
        spec.mode = ControllerMode::parse(m).ok_or_else(|| Error::Config(format!("unknown mode {m:?}")))?;
    }
    if let Some(r) = args.runs {
        spec.runs = r;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(o) = &args.out {
        spec.out = o.clone();
    }
    spec.validate()?;
    Ok(spec)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            // help and version are not errors
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = load(&args).and_then(|spec| {
        let outcome = run_experiment(&spec)?;
        for row in &outcome.rows {
            let r = &row.report;
            println!(
                "{} beta_ta={} beta_ex={}: runs {} collisions {} mean J100 {:.1} infeasible {:.2} recovery failed {:.2}",
                row.mode.name(),
                row.beta_ta,
                row.beta_ex,
                r.runs,
                r.collisions,
                r.mean_j100,
                r.mean_infeasible_ocp_steps,
                r.mean_infeasible_rec_steps
            );
        }
        println!("wrote {}", outcome.report_path.display());
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
