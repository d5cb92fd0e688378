//! Command-line driver for tempered-posterior PAC-Bayes bound experiments.
//!
//! Subcommands: `sweep` (full λ × σ²_π bound sweep from a TOML config),
//! `corollary` (closed-form single-parameter curve), `validity`
//! (bound-vs-analytic-risk study on the synthetic oracle), and `synth-gen`
//! (synthetic dataset CSV generator).
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 data error,
//! 3 every sweep cell failed.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pacbayes::config::{ConfigError, SweepConfig, SynthGenConfig, ValidityConfig};
use pacbayes::data::write_csv;
use pacbayes::sweep::{
    default_corollary_grid, run_corollary_demo, run_sweep, run_synth_gen, run_validity_study,
    SweepError,
};
use pacbayes::util::{lin_space, log_space};

#[derive(Parser)]
#[command(
    name = "pacbayes",
    version,
    about = "Tempered-posterior PAC-Bayes bound experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the bound sweep described by a TOML config file.
    Sweep {
        /// Path to the sweep configuration (TOML).
        config: PathBuf,
    },
    /// Evaluate the closed-form tempered-bound curve on a λ grid.
    Corollary {
        /// Confidence level δ ∈ (0, 1].
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        /// Grid spec: `lin:LO:HI:N`, `log:LO:HI:N`, or a comma-separated
        /// list of temperatures. Default: 1000 linear points in (0, 0.5).
        #[arg(long)]
        grid: Option<String>,
        /// Output directory for corollary.csv and corollary_summary.json.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the bound-validity study described by a TOML config file.
    Validity {
        /// Path to the validity configuration (TOML).
        config: PathBuf,
    },
    /// Generate a synthetic regression dataset CSV.
    SynthGen {
        /// Path to the generator configuration (TOML).
        config: PathBuf,
    },
}

fn read_config(path: &Path) -> Result<String, SweepError> {
    fs::read_to_string(path).map_err(|e| {
        ConfigError::Invalid(format!("cannot read config {}: {e}", path.display())).into()
    })
}

/// Parses a grid spec: `lin:LO:HI:N`, `log:LO:HI:N`, or a comma list.
fn parse_grid(spec: &str) -> Result<Vec<f64>, ConfigError> {
    let bad = |msg: &str| ConfigError::Invalid(format!("bad grid spec `{spec}`: {msg}"));
    let spaced = |text: &str, log: bool| -> Result<Vec<f64>, ConfigError> {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected LO:HI:N"));
        }
        let lo: f64 = parts[0].parse().map_err(|_| bad("LO is not a number"))?;
        let hi: f64 = parts[1].parse().map_err(|_| bad("HI is not a number"))?;
        let n: usize = parts[2].parse().map_err(|_| bad("N is not an integer"))?;
        if !(lo.is_finite() && hi.is_finite() && hi > lo && n >= 2) {
            return Err(bad("need finite LO < HI and N ≥ 2"));
        }
        if log && lo <= 0.0 {
            return Err(bad("log grids need LO > 0"));
        }
        Ok(if log { log_space(lo, hi, n) } else { lin_space(lo, hi, n) })
    };
    if let Some(rest) = spec.strip_prefix("lin:") {
        return spaced(rest, false);
    }
    if let Some(rest) = spec.strip_prefix("log:") {
        return spaced(rest, true);
    }
    let values: Result<Vec<f64>, _> = spec.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let values = values.map_err(|_| bad("expected comma-separated numbers"))?;
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(bad("need at least one finite value"));
    }
    Ok(values)
}

fn run(cli: Cli) -> Result<(), SweepError> {
    match cli.command {
        Command::Sweep { config } => {
            let cfg = SweepConfig::from_toml(&read_config(&config)?)?;
            let outcome = run_sweep(&cfg)?;
            let dir = PathBuf::from(&cfg.output_dir);
            outcome.write_to(&dir)?;
            println!(
                "sweep: {} cells over {} seeds ({} failed); wrote {}, {}, {}",
                outcome.rows.len(),
                outcome.summary.n_seeds,
                outcome.summary.n_seeds_failed,
                dir.join("sweep.csv").display(),
                dir.join("summary.json").display(),
                dir.join("split_manifests.json").display(),
            );
            Ok(())
        }
        Command::Corollary { delta, grid, out } => {
            let grid = match grid {
                Some(spec) => parse_grid(&spec)?,
                None => default_corollary_grid(),
            };
            let outcome = run_corollary_demo(&grid, delta)?;
            outcome.write_to(&out)?;
            println!(
                "corollary: {} points ({} outside the domain); wrote {}, {}",
                outcome.summary.n_points,
                outcome.summary.n_domain_excluded,
                out.join("corollary.csv").display(),
                out.join("corollary_summary.json").display(),
            );
            Ok(())
        }
        Command::Validity { config } => {
            let cfg = ValidityConfig::from_toml(&read_config(&config)?)?;
            let outcome = run_validity_study(&cfg)?;
            let dir = PathBuf::from(&cfg.output_dir);
            outcome.write_to(&dir)?;
            println!(
                "validity: bound held in {}/{} trials (fraction {:.4}, nominal {:.4}); wrote {}, {}",
                outcome.summary.n_holds,
                outcome.summary.trials,
                outcome.summary.fraction,
                outcome.summary.nominal,
                dir.join("validity.csv").display(),
                dir.join("validity_summary.json").display(),
            );
            Ok(())
        }
        Command::SynthGen { config } => {
            let cfg = SynthGenConfig::from_toml(&read_config(&config)?)?;
            let outcome = run_synth_gen(&cfg)?;
            let path = PathBuf::from(&cfg.output);
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent).map_err(|e| {
                        SweepError::Eval(format!("cannot create {}: {e}", parent.display()))
                    })?;
                }
            }
            write_csv(&path, &outcome.samples, &outcome.feature_names, &outcome.target_name)?;
            println!(
                "synth-gen: {} samples with {} features; wrote {}",
                outcome.samples.len(),
                outcome.feature_names.len(),
                path.display(),
            );
            Ok(())
        }
    }
}

fn exit_code(err: &SweepError) -> u8 {
    match err {
        SweepError::Data(_) => 2,
        SweepError::AllCellsFailed(_) => 3,
        SweepError::Config(_) | SweepError::Report(_) | SweepError::Eval(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests print to stdout and succeed; real
            // usage errors are configuration errors under this tool's
            // exit-code contract.
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
