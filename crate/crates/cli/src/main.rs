use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use volterra_cli::commands::{
    cmd_simulate, cmd_spectrum, format_gradient_table, print, run_gradient_check, DEFAULT_EPS,
};
use volterra_cli::config::RawConfig;
use volterra_cli::verify::run_verify;
use volterra_cli::CliError;

/// Volterra lattice laboratory: trajectories, spectra and identity checks.
#[derive(Parser, Debug)]
#[command(name = "volterra", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate a trajectory and write it as CSV or JSON lines.
    Simulate(Settings),
    /// Run the identity checks on seeded random states.
    Verify(Settings),
    /// Print the eigenvalues of L at both ends of a run.
    Spectrum(Settings),
    /// Compare finite differences of f with the closed-form gradient.
    GradientCheck(Settings),
}

/// Every setting can also come from the `--config` file; flags win.
#[derive(Args, Debug, Default)]
struct Settings {
    /// Flat `key = value` configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Number of lattice sites N.
    #[arg(long)]
    n: Option<String>,
    /// Explicit initial data, comma separated.
    #[arg(long, value_name = "A,B,...", allow_hyphen_values = true)]
    u0: Option<String>,
    /// Seed for log-uniform random initial data on [0.1, 10].
    #[arg(long)]
    seed: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    t0: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    t1: Option<String>,
    /// Fixed step (rk4) or initial step (adaptive45).
    #[arg(long)]
    h0: Option<String>,
    /// rk4 | adaptive45
    #[arg(long)]
    method: Option<String>,
    /// direct | lax | bracket
    #[arg(long)]
    form: Option<String>,
    /// Sign of the matrix forms, +1 or -1 (default: calibrated).
    #[arg(long, allow_hyphen_values = true)]
    sigma: Option<String>,
    #[arg(long)]
    tol_abs: Option<String>,
    #[arg(long)]
    tol_rel: Option<String>,
    /// Trajectory output file (default: standard output).
    #[arg(long, value_name = "PATH")]
    out: Option<String>,
    /// csv | jsonl
    #[arg(long)]
    format: Option<String>,
    /// Append the eigenvalues of L to every sample.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    spectra: Option<String>,
    /// Record every k-th accepted step.
    #[arg(long)]
    record_every: Option<String>,
    /// Worker threads for independent trials.
    #[arg(long)]
    jobs: Option<String>,
    /// Lattice sizes for verify and gradient-check, comma separated.
    #[arg(long)]
    n_list: Option<String>,
    /// Trials per size.
    #[arg(long)]
    trials: Option<String>,
    /// Finite-difference steps, comma separated.
    #[arg(long)]
    eps: Option<String>,
}

impl Settings {
    fn resolve(&self) -> Result<RawConfig, CliError> {
        let base = match &self.config {
            Some(path) => RawConfig::from_file(path)?,
            None => RawConfig::default(),
        };
        let mut flags = RawConfig::default();
        let given = [
            ("n", &self.n),
            ("u0", &self.u0),
            ("seed", &self.seed),
            ("t0", &self.t0),
            ("t1", &self.t1),
            ("h0", &self.h0),
            ("method", &self.method),
            ("form", &self.form),
            ("sigma", &self.sigma),
            ("tol_abs", &self.tol_abs),
            ("tol_rel", &self.tol_rel),
            ("out", &self.out),
            ("format", &self.format),
            ("spectra", &self.spectra),
            ("record_every", &self.record_every),
            ("jobs", &self.jobs),
            ("n_list", &self.n_list),
            ("trials", &self.trials),
            ("eps", &self.eps),
        ];
        for (key, value) in given {
            if let Some(v) = value {
                flags.set(key, v).map_err(|e| CliError::Config(format!("--{}: {e}", key.replace('_', "-"))))?;
            }
        }
        Ok(base.overlay(flags))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(settings) => {
            let config = settings.resolve()?.into_run()?;
            let summary = cmd_simulate(&config)?;
            if config.out_path.is_some() {
                print(&summary)
            } else {
                eprintln!("{summary}");
                Ok(())
            }
        }
        Command::Spectrum(settings) => print(&cmd_spectrum(&settings.resolve()?.into_run()?)?),
        Command::Verify(settings) => {
            let suite = settings.resolve()?.into_suite(&[2, 3, 5, 8], &DEFAULT_EPS)?;
            let report = run_verify(&suite)?;
            print(&report.to_string())?;
            if report.passed {
                Ok(())
            } else {
                Err(CliError::Verification("one or more checks failed".into()))
            }
        }
        Command::GradientCheck(settings) => {
            let suite = settings.resolve()?.into_suite(&[2], &DEFAULT_EPS)?;
            let trials = run_gradient_check(&suite)?;
            print(&format_gradient_table(&trials))?;
            if trials.iter().all(|t| t.passed) {
                Ok(())
            } else {
                Err(CliError::Verification("gradient check failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
