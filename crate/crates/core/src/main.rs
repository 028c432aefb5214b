use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dpfusion::fusion::{Algorithm, FusionWeights};
use dpfusion::harness::{self, ExperimentConfig, HarnessError};
use dpfusion::privacy::{PrivacyParams, SensitivityRule};

#[derive(Parser, Debug)]
#[command(name = "dpfusion", version, about = "Differentially private distributed fusion simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Option<Command>,
}

/// Flags that override values from the config file.
#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML or JSON experiment config. Defaults to the built-in tracking example.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    algorithm: Option<Algorithm>,
    #[arg(long, global = true)]
    runs: Option<usize>,
    #[arg(long, global = true)]
    horizon: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    eps: Option<f64>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[arg(long, global = true)]
    eps0: Option<f64>,
    /// Fusion weights, e.g. `0.4,0.6`.
    #[arg(long = "w", global = true)]
    weights: Option<FusionWeights>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Add the accuracy-loss trace column.
    #[arg(long, global = true)]
    with_delta_p: bool,
    /// `certified` or `unsquared`.
    #[arg(long, global = true)]
    sensitivity: Option<SensitivityRule>,
    /// Keep going when a step's privacy certificate fails.
    #[arg(long, global = true)]
    allow_uncertified: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo run of one algorithm (the default).
    Run,
    /// Time-averaged MSE for several weight vectors.
    CompareWeights {
        /// Weight vector; repeat for each column.
        #[arg(long = "set", required = true)]
        sets: Vec<FusionWeights>,
        /// Algorithms to compare, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "alg1,alg2")]
        algorithms: Vec<Algorithm>,
    },
    /// Time-averaged MSE over privacy settings. Without grids, uses the
    /// config's sweep list.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        eps0_grid: Vec<f64>,
        /// Values applied to both ε and δ.
        #[arg(long, value_delimiter = ',')]
        eps_delta_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "alg1,alg2")]
        algorithms: Vec<Algorithm>,
    },
    /// Check the model's rank and shape conditions.
    Validate,
}

fn resolve(c: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &c.config {
        Some(path) => harness::load_config(path)?,
        None => ExperimentConfig::tracking(),
    };
    if let Some(a) = c.algorithm {
        cfg.algorithm = a;
    }
    if let Some(n) = c.runs {
        cfg.n_runs = n;
    }
    if let Some(h) = c.horizon {
        cfg.horizon = h;
    }
    if let Some(s) = c.seed {
        cfg.master_seed = s;
    }
    if c.eps.is_some() || c.delta.is_some() || c.eps0.is_some() {
        let p = cfg.privacy;
        cfg.privacy = PrivacyParams::new(
            c.eps.unwrap_or(p.epsilon()),
            c.delta.unwrap_or(p.delta()),
            c.eps0.unwrap_or(p.eps0()),
        )?;
    }
    if let Some(w) = &c.weights {
        cfg.weights = w.clone();
    }
    if let Some(o) = &c.out {
        cfg.output = Some(o.clone());
    }
    if c.with_delta_p {
        cfg.with_delta_p = true;
    }
    if let Some(s) = c.sensitivity {
        cfg.sensitivity = s;
    }
    if c.allow_uncertified {
        cfg.enforce_certificate = false;
    }
    cfg.check()?;
    Ok(cfg)
}

fn output(cfg: &ExperimentConfig) -> Result<Box<dyn Write>, HarnessError> {
    Ok(match &cfg.output {
        Some(path) => Box::new(std::fs::File::create(path).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?),
        None => Box::new(io::stdout().lock()),
    })
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    let cfg = resolve(&cli.common)?;
    match cli.command.unwrap_or(Command::Run) {
        Command::Run => {
            let report = harness::run_experiment(&cfg)?;
            if cfg.output.is_none() {
                harness::write_csv(&report, io::stdout().lock())?;
            }
            let mut err = io::stderr().lock();
            let _ = writeln!(
                err,
                "{}: avg fused MSE {:.6e}, local {}",
                report.algorithm,
                report.avg_fused(),
                (0..report.n_sensors)
                    .map(|i| format!("{:.6e}", report.avg_local(i)))
                    .collect::<Vec<_>>()
                    .join(" ")
            );
            if let Some(d) = report.max_delta_achieved() {
                let _ = writeln!(err, "max achieved delta {d:.6e}");
            }
        }
        Command::CompareWeights { sets, algorithms } => {
            let table = harness::compare_weights(&cfg, &sets, &algorithms)?;
            eprint!("{}", table.render());
            harness::write_weight_csv(&table, output(&cfg)?)?;
        }
        Command::Sweep {
            eps0_grid,
            eps_delta_grid,
            algorithms,
        } => {
            let p = cfg.privacy;
            let mut variants = Vec::new();
            for &e0 in &eps0_grid {
                variants.push(PrivacyParams::new(p.epsilon(), p.delta(), e0)?);
            }
            for &e in &eps_delta_grid {
                variants.push(PrivacyParams::new(e, e, p.eps0())?);
            }
            if variants.is_empty() {
                variants = cfg.sweep.clone();
            }
            if variants.is_empty() {
                return Err(HarnessError::Config(
                    "sweep needs --eps0-grid, --eps-delta-grid or a sweep list in the config".into(),
                ));
            }
            let rows = harness::sweep(&cfg, &variants, &algorithms)?;
            harness::write_sweep_csv(&rows, output(&cfg)?)?;
        }
        Command::Validate => {
            let report = cfg.model.validate(cfg.horizon);
            if report.passed() {
                println!("model ok for {} steps", cfg.horizon);
            } else {
                for issue in &report.issues {
                    println!("{issue}");
                }
                return Err(HarnessError::Config("model validation failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
