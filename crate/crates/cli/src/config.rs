//! Run configuration: flat `key = value` files layered under command-line flags.
//!
//! ```text
//! # two-site lattice
//! u0 = 1, 1
//! t1 = 5
//! method = rk4
//! h0 = 1e-3
//! ```
//!
//! Keys may be written with `-` or `_`. Everything after `#` is a comment.
//! Flags are applied on top of the file, so a flag always wins. For
//! trajectory runs `u0` and `seed` are alternatives: setting either on a
//! layer replaces both from the layers below, and one layer may not set both.
//! The randomized checks accept both (a fixed state with seeded directions).

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use volterra_core::integrate::{IntegratorConfig, Method, ABSOLUTE_TOLERANCE_FLOOR};
use volterra_core::lattice::{FlowForm, LatticeState, Sign, CALIBRATED_SIGN};
use volterra_core::rng::SplitMix64;

use crate::CliError;

/// Every key understood by config files, in `--flag` spelling order.
pub const KEYS: &[&str] = &[
    "n", "u0", "seed", "t0", "t1", "h0", "method", "form", "sigma", "tol_abs", "tol_rel", "out",
    "format", "spectra", "record_every", "jobs", "n_list", "trials", "eps",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    JsonLines,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "jsonl" | "json-lines" => Ok(OutputFormat::JsonLines),
            other => Err(format!("invalid format `{other}`, expected csv or jsonl")),
        }
    }
}

/// Where the initial lattice comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    Explicit(Vec<f64>),
    /// Log-uniform sites on `[0.1, 10]` drawn from `SplitMix64::new(seed)`.
    Seeded(u64),
}

/// Unvalidated settings; `None` means "not given on this layer".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    pub n: Option<usize>,
    pub u0: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub t0: Option<f64>,
    pub t1: Option<f64>,
    pub h0: Option<f64>,
    pub method: Option<Method>,
    pub form: Option<FlowForm>,
    pub sigma: Option<Sign>,
    pub tol_abs: Option<f64>,
    pub tol_rel: Option<f64>,
    pub out: Option<PathBuf>,
    pub format: Option<OutputFormat>,
    pub spectra: Option<bool>,
    pub record_every: Option<usize>,
    pub jobs: Option<usize>,
    pub n_list: Option<Vec<usize>>,
    pub trials: Option<usize>,
    pub eps: Option<Vec<f64>>,
}

fn parse_scalar<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| CliError::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError>
where
    T::Err: Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_scalar(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        other => Err(CliError::Config(format!("{key}: expected true or false, got `{other}`"))),
    }
}

impl RawConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        match key.as_str() {
            "n" => self.n = Some(parse_scalar(&key, v)?),
            "u0" => self.u0 = Some(parse_list(&key, v)?),
            "seed" => self.seed = Some(parse_scalar(&key, v)?),
            "t0" => self.t0 = Some(parse_scalar(&key, v)?),
            "t1" => self.t1 = Some(parse_scalar(&key, v)?),
            "h0" => self.h0 = Some(parse_scalar(&key, v)?),
            "method" => self.method = Some(parse_scalar(&key, v)?),
            "form" => self.form = Some(parse_scalar(&key, v)?),
            "sigma" => self.sigma = Some(parse_scalar(&key, v)?),
            "tol_abs" => self.tol_abs = Some(parse_scalar(&key, v)?),
            "tol_rel" => self.tol_rel = Some(parse_scalar(&key, v)?),
            "out" => self.out = Some(PathBuf::from(v)),
            "format" => self.format = Some(parse_scalar(&key, v)?),
            "spectra" => self.spectra = Some(parse_bool(&key, v)?),
            "record_every" => self.record_every = Some(parse_scalar(&key, v)?),
            "jobs" => self.jobs = Some(parse_scalar(&key, v)?),
            "n_list" => self.n_list = Some(parse_list(&key, v)?),
            "trials" => self.trials = Some(parse_scalar(&key, v)?),
            "eps" => self.eps = Some(parse_list(&key, v)?),
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses the text of a config file.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut raw = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            raw.set(key, value)
                .map_err(|e| CliError::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(raw)
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies `top` over `self`; values present in `top` win.
    pub fn overlay(mut self, top: RawConfig) -> Self {
        macro_rules! take {
            ($($field:ident),*) => { $( if top.$field.is_some() { self.$field = top.$field; } )* };
        }
        if top.u0.is_some() || top.seed.is_some() {
            self.u0 = top.u0;
            self.seed = top.seed;
        }
        take!(n, t0, t1, h0, method, form, sigma, tol_abs, tol_rel, out, format, spectra,
              record_every, jobs, n_list, trials, eps);
        self
    }

    fn integrator(&self) -> Result<IntegratorConfig, CliError> {
        let defaults = IntegratorConfig::default();
        let config = IntegratorConfig {
            method: self.method.unwrap_or(defaults.method),
            form: self.form.unwrap_or(defaults.form),
            sigma: self.sigma.unwrap_or(CALIBRATED_SIGN),
            t0: self.t0.unwrap_or(defaults.t0),
            t1: self.t1.unwrap_or(defaults.t1),
            h0: self.h0.unwrap_or(defaults.h0),
            tol_abs: self.tol_abs.unwrap_or(ABSOLUTE_TOLERANCE_FLOOR),
            tol_rel: self.tol_rel.unwrap_or(defaults.tol_rel),
            record_every: self.record_every.unwrap_or(1),
            guard_positivity: true,
        };
        config.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(config)
    }

    fn jobs(&self) -> Result<usize, CliError> {
        match self.jobs.unwrap_or(1) {
            0 => Err(CliError::Config("jobs must be at least 1".into())),
            j => Ok(j),
        }
    }

    pub fn into_run(self) -> Result<RunConfig, CliError> {
        let integrator = self.integrator()?;
        let jobs = self.jobs()?;
        let (n, initial) = match (&self.u0, self.seed) {
            (Some(u0), None) => {
                if let Some(n) = self.n.filter(|&n| n != u0.len()) {
                    return Err(CliError::Config(format!(
                        "n = {n} does not match the {} values of u0",
                        u0.len()
                    )));
                }
                (u0.len(), InitialData::Explicit(u0.clone()))
            }
            (None, Some(seed)) => {
                let n = self.n.ok_or_else(|| CliError::Config("seeded runs need n".into()))?;
                (n, InitialData::Seeded(seed))
            }
            _ => return Err(CliError::Config("give exactly one of u0 or seed".into())),
        };
        if n == 0 {
            return Err(CliError::Config("n must be at least 1".into()));
        }
        let run = RunConfig {
            integrator,
            n,
            initial,
            out_path: self.out,
            format: self.format.unwrap_or(OutputFormat::Csv),
            spectra: self.spectra.unwrap_or(false),
            jobs,
        };
        run.initial_state()?;
        Ok(run)
    }

    pub fn into_suite(self, default_n_list: &[usize], default_eps: &[f64]) -> Result<SuiteConfig, CliError> {
        let jobs = self.jobs()?;
        let trials = self.trials.unwrap_or(1);
        if trials == 0 {
            return Err(CliError::Config("trials must be at least 1".into()));
        }
        let u0 = match &self.u0 {
            Some(u) => Some(
                LatticeState::new(u.clone()).map_err(|e| CliError::Config(format!("u0: {e}")))?,
            ),
            None => None,
        };
        let n_list = match (&self.n_list, self.n, &u0) {
            (Some(list), _, _) => list.clone(),
            (None, Some(n), _) => vec![n],
            (None, None, Some(u)) => vec![u.sites()],
            (None, None, None) => default_n_list.to_vec(),
        };
        if n_list.is_empty() || n_list.contains(&0) {
            return Err(CliError::Config("sizes must be at least 1".into()));
        }
        if let Some(u) = &u0 {
            if n_list.iter().any(|&n| n != u.sites()) {
                return Err(CliError::Config("n does not match the length of u0".into()));
            }
        }
        let eps = self.eps.clone().unwrap_or_else(|| default_eps.to_vec());
        if eps.is_empty() || eps.iter().any(|&e| !(e > 0.0 && e <= 1e-2)) {
            return Err(CliError::Config("eps values must lie in (0, 1e-2]".into()));
        }
        Ok(SuiteConfig {
            n_list,
            trials,
            seed: self.seed.unwrap_or(0),
            u0,
            eps,
            jobs,
        })
    }
}

/// A validated trajectory run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub integrator: IntegratorConfig,
    pub n: usize,
    pub initial: InitialData,
    pub out_path: Option<PathBuf>,
    pub format: OutputFormat,
    pub spectra: bool,
    pub jobs: usize,
}

impl RunConfig {
    pub fn initial_state(&self) -> Result<LatticeState, CliError> {
        let state = match &self.initial {
            InitialData::Explicit(u) => LatticeState::new(u.clone()),
            InitialData::Seeded(seed) => LatticeState::random(self.n, &mut SplitMix64::new(*seed)),
        };
        state.map_err(|e| CliError::Config(format!("u0: {e}")))
    }
}

/// Settings of the randomized checks (`verify`, `gradient-check`).
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub n_list: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    /// Fixed state for every trial instead of random ones.
    pub u0: Option<LatticeState>,
    pub eps: Vec<f64>,
    pub jobs: usize,
}
