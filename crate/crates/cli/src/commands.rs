use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};

use volterra_core::geometry::{centered_difference, directional_derivative, GeometryError, OrbitContext};
use volterra_core::integrate::{integrate, invariant_report, TrajectoryRecord};
use volterra_core::lattice::{bracket_l2_k, LaxMatrix};
use volterra_core::linalg::DenseMatrix;
use volterra_core::rng::SplitMix64;

use crate::config::{RunConfig, SuiteConfig};
use crate::output::write_trajectory;
use crate::verify::draw_counted;
use crate::{run_indexed, CliError};

/// Accepted range of the observed finite-difference order.
pub const ORDER_RANGE: (f64, f64) = (1.8, 2.2);
/// Agreement required between the trace formula and the metric pairing.
pub const EXACT_TOLERANCE: f64 = 1e-11;
pub const DEFAULT_EPS: [f64; 3] = [1e-2, 1e-3, 1e-4];

pub fn run_trajectory(config: &RunConfig) -> Result<TrajectoryRecord, CliError> {
    Ok(integrate(&config.integrator, &config.initial_state()?)?)
}

/// Integrates, writes the trajectory (to `out_path`, or standard output) and
/// returns the invariant summary text.
pub fn cmd_simulate(config: &RunConfig) -> Result<String, CliError> {
    let record = run_trajectory(config)?;
    match &config.out_path {
        Some(path) => {
            let file = File::create(path)
                .map_err(|e| CliError::Config(format!("cannot create {}: {e}", path.display())))?;
            write_trajectory(&mut BufWriter::new(file), &record, config.format, config.spectra)?;
        }
        None => write_trajectory(&mut io::stdout().lock(), &record, config.format, config.spectra)?,
    }
    simulate_summary(&record)
}

pub fn simulate_summary(record: &TrajectoryRecord) -> Result<String, CliError> {
    let summary = invariant_report(record)?;
    let first = &record.samples[0];
    let last = record.last();
    let mut s = String::new();
    let c = &record.config;
    let _ = writeln!(s, "method {} form {} sigma {} t [{}, {}]", c.method, c.form, c.sigma, c.t0, c.t1);
    let _ = writeln!(
        s,
        "samples {}  steps accepted {} rejected {}",
        summary.samples, record.stats.accepted, record.stats.rejected
    );
    let _ = writeln!(s, "f: {:.12} -> {:.12}", first.f, last.f);
    let _ = writeln!(s, "max eigenvalue drift      {:.3e}", summary.max_eigenvalue_drift());
    for (k, d) in [2, 3, 4].iter().zip(summary.trace_drift) {
        let _ = writeln!(s, "tr L^{k} drift             {d:.3e}");
    }
    let _ = writeln!(s, "tr L^2 - 2 sum u residual {:.3e}", summary.trace_identity_residual);
    let _ = writeln!(s, "spectral symmetry         {:.3e}", summary.spectral_symmetry);
    let _ = write!(s, "monotonicity violations   {}", summary.monotonicity_violations);
    Ok(s)
}

/// Eigenvalues at both ends of the run and their drift.
pub fn cmd_spectrum(config: &RunConfig) -> Result<String, CliError> {
    let record = run_trajectory(config)?;
    let first = &record.samples[0];
    let last = record.last();
    let m = first.spectrum.len();
    let symmetry = |lam: &[f64]| (0..m).fold(0.0f64, |acc, i| acc.max((lam[i] + lam[m - 1 - i]).abs()));

    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>3} {:>24} {:>24} {:>10}",
        "i",
        format!("lambda(t={})", first.t),
        format!("lambda(t={})", last.t),
        "drift"
    );
    let mut worst = 0.0f64;
    for (i, (a, b)) in first.spectrum.iter().zip(&last.spectrum).enumerate() {
        let drift = (a - b).abs();
        worst = worst.max(drift);
        let _ = writeln!(s, "{:>3} {a:>24.16e} {b:>24.16e} {drift:>10.3e}", i + 1);
    }
    let _ = writeln!(s, "max drift {worst:.3e}");
    let _ = write!(
        s,
        "symmetry max |lambda_i + lambda_(N+2-i)|: {:.3e} at t0, {:.3e} at t1",
        symmetry(&first.spectrum),
        symmetry(&last.spectrum)
    );
    Ok(s)
}

/// One row of the gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientRow {
    pub eps: f64,
    /// Centered difference of `f` along `exp(-εT) L exp(εT)`.
    pub finite_difference: f64,
    /// `<[L², K], T>`.
    pub trace_formula: f64,
    /// `(grad f, [L, T])` in the normal metric.
    pub metric_pairing: f64,
}

impl GradientRow {
    pub fn fd_error(&self) -> f64 {
        (self.finite_difference - self.trace_formula).abs()
    }
}

pub fn gradient_row(ctx: &OrbitContext, t: &DenseMatrix, eps: f64) -> Result<GradientRow, CliError> {
    let err = |e: GeometryError| CliError::Verification(e.to_string());
    let l: &LaxMatrix = ctx.base();
    let finite_difference = centered_difference(l, t, eps).map_err(|e| err(e.into()))?;
    let trace_formula = directional_derivative(l, t).map_err(|e| err(e.into()))?;
    let v = ctx.tangent_of(t).map_err(err)?;
    let metric_pairing = ctx.normal_metric(&ctx.orbit_gradient(), &v).map_err(err)?;
    Ok(GradientRow {
        eps,
        finite_difference,
        trace_formula,
        metric_pairing,
    })
}

/// Least-squares slope of `log err` against `log eps`; `None` when an error
/// vanishes or fewer than two step sizes are given.
pub fn observed_order(rows: &[GradientRow]) -> Option<f64> {
    if rows.len() < 2 || rows.iter().any(|r| r.fd_error() <= 0.0) {
        return None;
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.eps.ln(), r.fd_error().ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientTrial {
    pub n: usize,
    pub rows: Vec<GradientRow>,
    pub order: Option<f64>,
    /// `|trace formula − metric pairing| / max(1, ‖[L², K]‖ ‖T‖)`.
    pub exact_residual: f64,
    pub redraws: usize,
    pub passed: bool,
}

fn gradient_trial(suite: &SuiteConfig, n: usize, index: usize) -> Result<GradientTrial, CliError> {
    let mut rng = SplitMix64::for_stream(suite.seed, index as u64);
    let (ctx, redraws) = match &suite.u0 {
        Some(s) => (OrbitContext::from_state(s).map_err(|e| CliError::Verification(e.to_string()))?, 0),
        None => {
            let (_, ctx, redraws) = draw_counted(&mut rng, n)?;
            (ctx, redraws)
        }
    };
    let t = rng.skew_matrix(n + 1);
    let rows = suite
        .eps
        .iter()
        .map(|&eps| gradient_row(&ctx, &t, eps))
        .collect::<Result<Vec<_>, _>>()?;
    let scale = (bracket_l2_k(ctx.dense()).frobenius_norm() * t.frobenius_norm()).max(1.0);
    let exact_residual = rows
        .iter()
        .fold(0.0f64, |m, r| m.max((r.trace_formula - r.metric_pairing).abs()))
        / scale;
    let order = observed_order(&rows);
    let negligible = rows.iter().all(|r| r.fd_error() <= 1e-13 * scale);
    let order_ok = match order {
        Some(p) => (ORDER_RANGE.0..=ORDER_RANGE.1).contains(&p) || negligible,
        None => negligible,
    };
    Ok(GradientTrial {
        n,
        rows,
        order,
        exact_residual,
        redraws,
        passed: order_ok && exact_residual <= EXACT_TOLERANCE,
    })
}

pub fn run_gradient_check(suite: &SuiteConfig) -> Result<Vec<GradientTrial>, CliError> {
    let sizes: Vec<usize> = suite
        .n_list
        .iter()
        .flat_map(|&n| std::iter::repeat_n(n, suite.trials))
        .collect();
    run_indexed(sizes.len(), suite.jobs, |i| gradient_trial(suite, sizes[i], i))
        .into_iter()
        .collect()
}

pub fn format_gradient_table(trials: &[GradientTrial]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>5} {:>3} {:>8} {:>24} {:>24} {:>24} {:>10}",
        "trial", "n", "eps", "finite-difference", "trace-formula", "metric-pairing", "fd-error"
    );
    for (i, trial) in trials.iter().enumerate() {
        for r in &trial.rows {
            let _ = writeln!(
                s,
                "{:>5} {:>3} {:>8.1e} {:>24.16e} {:>24.16e} {:>24.16e} {:>10.3e}",
                i + 1,
                trial.n,
                r.eps,
                r.finite_difference,
                r.trace_formula,
                r.metric_pairing,
                r.fd_error()
            );
        }
        let order = trial.order.map_or("n/a".to_string(), |p| format!("{p:.3}"));
        let _ = writeln!(
            s,
            "      order {order}  exact-column residual {:.3e}  redraws {}  {}",
            trial.exact_residual,
            trial.redraws,
            if trial.passed { "pass" } else { "FAIL" }
        );
    }
    let failed = trials.iter().filter(|t| !t.passed).count();
    let _ = write!(s, "overall: {}", if failed == 0 { "pass".to_string() } else { format!("FAIL ({failed} trials)") });
    s
}

/// Writes `text` and a trailing newline to standard output.
pub fn print(text: &str) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    writeln!(out, "{text}")?;
    Ok(())
}
