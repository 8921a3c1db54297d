//! Time integration of the lattice under any of its three forms, with a
//! positivity guard and monitoring of the conserved quantities.
//!
//! Matrix forms advance `u` through [`pushforward_rhs`], so the state never
//! leaves the tridiagonal shape. Spectra and `tr L^k` are evaluated at the
//! recorded samples only; the cheap closed form of `f` is checked for
//! monotonicity after every accepted step.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::lattice::{
    lax_from_state, objective_f, objective_from_state, pushforward_rhs, volterra_rhs_raw,
    FlowForm, LatticeError, LatticeState, Sign, CALIBRATED_SIGN,
};
use crate::linalg::{symmetric_eigen, trace_power, LinalgError};

/// Steps shorter than this fraction of `t1 - t0` abort an adaptive run.
pub const MIN_STEP_FRACTION: f64 = 1e-14;
/// Default absolute tolerance of the adaptive method. Sites decay
/// exponentially towards equilibria, so error control is effectively
/// relative; the floor only keeps the error scale positive.
pub const ABSOLUTE_TOLERANCE_FLOOR: f64 = 1e-20;
/// Powers `k` of the monitored traces `tr L^k`.
pub const TRACE_POWERS: [u32; 3] = [2, 3, 4];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrateError {
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite derivative near t = {t}")]
    NonFinite { t: f64 },
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("positivity violated at t = {t}: u_{} = {value}", index + 1)]
    Positivity { t: f64, index: usize, value: f64 },
    #[error("trajectory has no samples")]
    EmptyTrajectory,
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rk4,
    Adaptive45,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Rk4 => "rk4",
            Method::Adaptive45 => "adaptive45",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "rk4" => Ok(Method::Rk4),
            "adaptive45" => Ok(Method::Adaptive45),
            other => Err(format!("invalid method `{other}`, expected rk4 or adaptive45")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub method: Method,
    pub form: FlowForm,
    pub sigma: Sign,
    pub t0: f64,
    pub t1: f64,
    /// Fixed step for `rk4`, initial step for `adaptive45`.
    pub h0: f64,
    pub tol_abs: f64,
    pub tol_rel: f64,
    /// Record a sample every this many accepted steps (endpoints always).
    pub record_every: usize,
    pub guard_positivity: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::Rk4,
            form: FlowForm::Direct,
            sigma: CALIBRATED_SIGN,
            t0: 0.0,
            t1: 1.0,
            h0: 1e-3,
            tol_abs: ABSOLUTE_TOLERANCE_FLOOR,
            tol_rel: 1e-10,
            record_every: 1,
            guard_positivity: true,
        }
    }
}

impl IntegratorConfig {
    pub fn rk4(form: FlowForm, t1: f64, h: f64) -> Self {
        Self {
            form,
            t1,
            h0: h,
            ..Self::default()
        }
    }

    /// Adaptive run with relative tolerance `tol`.
    pub fn adaptive(form: FlowForm, t1: f64, tol: f64) -> Self {
        Self {
            method: Method::Adaptive45,
            form,
            t1,
            h0: 1e-3,
            tol_rel: tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), IntegrateError> {
        let bad = |msg: &str| Err(IntegrateError::InvalidConfig(msg.to_string()));
        if !(self.t0.is_finite() && self.t1.is_finite()) {
            return bad("t0 and t1 must be finite");
        }
        if self.t1 <= self.t0 {
            return bad("t1 must exceed t0");
        }
        if !(self.h0 > 0.0 && self.h0.is_finite()) {
            return bad("h0 must be positive");
        }
        if !(self.tol_abs > 0.0 && self.tol_rel > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1");
        }
        Ok(())
    }

    /// Direction in which `f` must move along this configuration's flow:
    /// the matrix forms are `σ·grad f`, the direct form is `σ*·grad f`.
    pub fn objective_direction(&self) -> f64 {
        match self.form {
            FlowForm::Direct => CALIBRATED_SIGN.value(),
            FlowForm::Lax | FlowForm::Bracket => self.sigma.value(),
        }
    }
}

/// Vector field of one flow form on raw state vectors.
///
/// The direct form accepts any real input; the matrix forms need `u > 0` and
/// report a [`IntegrateError::Positivity`] otherwise.
pub fn flow_field(
    form: FlowForm,
    sigma: Sign,
) -> impl Fn(&[f64]) -> Result<Vec<f64>, IntegrateError> {
    move |u: &[f64]| match form {
        FlowForm::Direct => {
            let mut out = vec![0.0; u.len()];
            volterra_rhs_raw(u, &mut out);
            Ok(out)
        }
        _ => {
            let s = LatticeState::new(u.to_vec()).map_err(|e| match e {
                LatticeError::NonPositive { index, value } => IntegrateError::Positivity {
                    t: f64::NAN,
                    index,
                    value,
                },
                other => other.into(),
            })?;
            Ok(pushforward_rhs(&s, form, sigma)?)
        }
    }
}

fn eval<F>(field: &F, u: &[f64]) -> Result<Vec<f64>, IntegrateError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, IntegrateError>,
{
    let d = field(u)?;
    if d.iter().all(|v| v.is_finite()) {
        Ok(d)
    } else {
        Err(IntegrateError::NonFinite { t: f64::NAN })
    }
}

/// `u + h Σ_j w_j k_j`.
fn combine(u: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = u.to_vec();
    for &(w, k) in terms {
        if w != 0.0 {
            for (o, kv) in out.iter_mut().zip(k) {
                *o += h * w * kv;
            }
        }
    }
    out
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<F>(field: &F, u: &[f64], h: f64) -> Result<Vec<f64>, IntegrateError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, IntegrateError>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(IntegrateError::InvalidConfig(format!("step must be positive, got {h}")));
    }
    let k1 = eval(field, u)?;
    let k2 = eval(field, &combine(u, h, &[(0.5, &k1)]))?;
    let k3 = eval(field, &combine(u, h, &[(0.5, &k2)]))?;
    let k4 = eval(field, &combine(u, h, &[(1.0, &k3)]))?;
    Ok(combine(
        u,
        h,
        &[(1.0 / 6.0, &k1), (1.0 / 3.0, &k2), (1.0 / 3.0, &k3), (1.0 / 6.0, &k4)],
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveStep {
    /// Fifth-order solution; meaningful only when `accepted`.
    pub state: Vec<f64>,
    pub h_next: f64,
    pub accepted: bool,
    /// Scaled max-norm error estimate; the step is accepted iff it is `≤ 1`.
    pub err_est: f64,
}

// Dormand–Prince 5(4) tableau.
const DP_A: [&[f64]; 6] = [
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];
const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

/// One embedded Dormand–Prince 4(5) step with local extrapolation.
pub fn adaptive45_step<F>(
    field: &F,
    u: &[f64],
    h: f64,
    tol_abs: f64,
    tol_rel: f64,
) -> Result<AdaptiveStep, IntegrateError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, IntegrateError>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(IntegrateError::InvalidConfig(format!("step must be positive, got {h}")));
    }
    let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
    k.push(eval(field, u)?);
    for row in DP_A {
        let terms: Vec<(f64, &[f64])> = row.iter().zip(&k).map(|(&w, kj)| (w, kj.as_slice())).collect();
        let stage = combine(u, h, &terms);
        k.push(eval(field, &stage)?);
    }
    // The last row of DP_A is the fifth-order weight vector (FSAL), so the
    // seventh stage is evaluated at the fifth-order solution.
    let terms: Vec<(f64, &[f64])> = DP_A[5].iter().zip(&k).map(|(&w, kj)| (w, kj.as_slice())).collect();
    let y5 = combine(u, h, &terms);
    let terms: Vec<(f64, &[f64])> = DP_B4.iter().zip(&k).map(|(&w, kj)| (w, kj.as_slice())).collect();
    let y4 = combine(u, h, &terms);

    let err_est = y5
        .iter()
        .zip(&y4)
        .zip(u)
        .map(|((a, b), u0)| {
            let scale = tol_abs + tol_rel * u0.abs().max(a.abs());
            (a - b).abs() / scale
        })
        .fold(0.0f64, f64::max);
    let accepted = err_est <= 1.0;
    let factor = if err_est == 0.0 {
        MAX_FACTOR
    } else {
        (SAFETY * err_est.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
    };
    Ok(AdaptiveStep {
        state: y5,
        h_next: h * factor,
        accepted,
        err_est,
    })
}

/// One recorded point of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub u: Vec<f64>,
    /// `tr(K L²)`.
    pub f: f64,
    /// Ascending eigenvalues of `L`.
    pub spectrum: Vec<f64>,
    /// `tr L^k` for `k` in [`TRACE_POWERS`].
    pub traces: [f64; 3],
    /// Max eigenvalue deviation from the first sample, sorted-order matching.
    pub spectrum_drift: f64,
    /// Deviation of each trace from the first sample.
    pub trace_drift: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    /// Accepted steps where `f` moved against the gradient-flow direction.
    pub monotonicity_violations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub config: IntegratorConfig,
    pub samples: Vec<Sample>,
    pub stats: StepStats,
}

impl TrajectoryRecord {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectories start with the initial sample")
    }

    pub fn sites(&self) -> usize {
        self.samples[0].u.len()
    }
}

fn make_sample(t: f64, u: &[f64], first: Option<&Sample>) -> Result<Sample, IntegrateError> {
    let state = LatticeState::new(u.to_vec())?;
    let lax = lax_from_state(&state);
    let dense = lax.densify();
    let spectrum = symmetric_eigen(&dense)?.eigenvalues;
    let traces = TRACE_POWERS.map(|k| trace_power(&dense, k));
    let (spectrum_drift, trace_drift) = match first {
        None => (0.0, [0.0; 3]),
        Some(s0) => (
            spectrum
                .iter()
                .zip(&s0.spectrum)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())),
            [0, 1, 2].map(|i| (traces[i] - s0.traces[i]).abs()),
        ),
    };
    Ok(Sample {
        t,
        u: u.to_vec(),
        f: objective_f(&lax),
        spectrum,
        traces,
        spectrum_drift,
        trace_drift,
    })
}

fn first_nonpositive(u: &[f64]) -> Option<(usize, f64)> {
    u.iter()
        .enumerate()
        .find(|(_, v)| v.is_nan() || **v <= 0.0)
        .map(|(i, v)| (i, *v))
}

/// Rounding allowance for comparing successive values of `f`.
fn objective_noise(u: &[f64]) -> f64 {
    8.0 * f64::EPSILON * objective_from_state(&u.iter().map(|v| v.abs()).collect::<Vec<_>>())
}

/// Integrates from `s0` over `[t0, t1]`.
///
/// A state with a non-positive site is never accepted. With
/// `guard_positivity` the adaptive method rejects such a step and halves
/// `h`; the fixed-step method, and either method without the guard, abort
/// with [`IntegrateError::Positivity`].
pub fn integrate(config: &IntegratorConfig, s0: &LatticeState) -> Result<TrajectoryRecord, IntegrateError> {
    config.validate()?;
    let field = flow_field(config.form, config.sigma);
    let span = config.t1 - config.t0;
    let h_min = MIN_STEP_FRACTION * span;
    let direction = config.objective_direction();

    let mut u = s0.u().to_vec();
    let mut t = config.t0;
    let first = make_sample(t, &u, None)?;
    let mut samples = vec![first];
    let mut stats = StepStats::default();
    let mut f_prev = objective_from_state(&u);

    // Fixed steps are placed at t0 + k·h0 to avoid accumulating round-off in t.
    let fixed_steps = (span / config.h0 - 1e-9).ceil().max(1.0) as usize;
    let mut h = config.h0.min(span);

    while t < config.t1 {
        let (next_u, next_t) = match config.method {
            Method::Rk4 => {
                let k = stats.accepted;
                let t_next = if k + 1 >= fixed_steps {
                    config.t1
                } else {
                    config.t0 + (k + 1) as f64 * config.h0
                };
                let step = rk4_step(&field, &u, t_next - t).map_err(|e| at_time(e, t))?;
                if let Some((index, value)) = first_nonpositive(&step) {
                    return Err(IntegrateError::Positivity { t: t_next, index, value });
                }
                (step, t_next)
            }
            Method::Adaptive45 => loop {
                let remaining = config.t1 - t;
                let last = remaining <= 1.01 * h;
                let h_try = if last { remaining } else { h };
                if h_try < h_min && !last {
                    return Err(IntegrateError::StepUnderflow { t, h: h_try });
                }
                let step = match adaptive45_step(&field, &u, h_try, config.tol_abs, config.tol_rel) {
                    Ok(step) => step,
                    Err(IntegrateError::Positivity { index, value, .. }) => {
                        if !config.guard_positivity {
                            return Err(IntegrateError::Positivity { t, index, value });
                        }
                        stats.rejected += 1;
                        h = h_try / 2.0;
                        continue;
                    }
                    Err(e) => return Err(at_time(e, t)),
                };
                if !step.accepted {
                    stats.rejected += 1;
                    h = step.h_next;
                    if h < h_min {
                        return Err(IntegrateError::StepUnderflow { t, h });
                    }
                    continue;
                }
                if let Some((index, value)) = first_nonpositive(&step.state) {
                    if !config.guard_positivity {
                        return Err(IntegrateError::Positivity { t: t + h_try, index, value });
                    }
                    stats.rejected += 1;
                    h = h_try / 2.0;
                    continue;
                }
                h = step.h_next;
                let t_next = if last { config.t1 } else { t + h_try };
                break (step.state, t_next);
            },
        };

        u = next_u;
        t = next_t;
        stats.accepted += 1;

        let f_now = objective_from_state(&u);
        if direction * (f_now - f_prev) < -objective_noise(&u) {
            stats.monotonicity_violations += 1;
        }
        f_prev = f_now;

        if stats.accepted % config.record_every == 0 || t >= config.t1 {
            let sample = make_sample(t, &u, Some(&samples[0]))?;
            samples.push(sample);
        }
    }

    Ok(TrajectoryRecord {
        config: config.clone(),
        samples,
        stats,
    })
}

fn at_time(e: IntegrateError, t: f64) -> IntegrateError {
    match e {
        IntegrateError::NonFinite { .. } => IntegrateError::NonFinite { t },
        IntegrateError::Positivity { index, value, .. } => IntegrateError::Positivity { t, index, value },
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvariantSummary {
    /// Max drift of each sorted eigenvalue.
    pub eigenvalue_drift: Vec<f64>,
    /// Max drift of `tr L^k` for `k` in [`TRACE_POWERS`].
    pub trace_drift: [f64; 3],
    /// Largest `|tr L² - 2 Σ u_n|` over the samples.
    pub trace_identity_residual: f64,
    /// Largest `|λ_i + λ_{N+2-i}|` over the samples.
    pub spectral_symmetry: f64,
    pub monotonicity_violations: usize,
    pub samples: usize,
}

impl InvariantSummary {
    pub fn max_eigenvalue_drift(&self) -> f64 {
        self.eigenvalue_drift.iter().fold(0.0, |m, v| m.max(*v))
    }

    pub fn max_trace_drift(&self) -> f64 {
        self.trace_drift.iter().fold(0.0, |m, v| m.max(*v))
    }
}

pub fn invariant_report(record: &TrajectoryRecord) -> Result<InvariantSummary, IntegrateError> {
    let first = record.samples.first().ok_or(IntegrateError::EmptyTrajectory)?;
    let m = first.spectrum.len();
    let mut eigenvalue_drift = vec![0.0f64; m];
    let mut trace_drift = [0.0f64; 3];
    let mut trace_identity_residual = 0.0f64;
    let mut spectral_symmetry = 0.0f64;
    let mut sample_violations = 0;
    let direction = record.config.objective_direction();

    for (idx, s) in record.samples.iter().enumerate() {
        for (d, (a, b)) in eigenvalue_drift.iter_mut().zip(s.spectrum.iter().zip(&first.spectrum)) {
            *d = d.max((a - b).abs());
        }
        for (d, (a, b)) in trace_drift.iter_mut().zip(s.traces.iter().zip(&first.traces)) {
            *d = d.max((a - b).abs());
        }
        let sum_u: f64 = s.u.iter().sum();
        trace_identity_residual = trace_identity_residual.max((s.traces[0] - 2.0 * sum_u).abs());
        for i in 0..m {
            spectral_symmetry = spectral_symmetry.max((s.spectrum[i] + s.spectrum[m - 1 - i]).abs());
        }
        if idx > 0 {
            let prev = &record.samples[idx - 1];
            if direction * (s.f - prev.f) < -objective_noise(&s.u) {
                sample_violations += 1;
            }
        }
    }

    Ok(InvariantSummary {
        eigenvalue_drift,
        trace_drift,
        trace_identity_residual,
        spectral_symmetry,
        monotonicity_violations: record.stats.monotonicity_violations.max(sample_violations),
        samples: record.samples.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub sigma: Sign,
    /// Max pointwise `|Δu|` between the direct and Lax trajectories with `σ = +1`.
    pub discrepancy_plus: f64,
    /// Same with `σ = -1`.
    pub discrepancy_minus: f64,
}

/// Window of the sign calibration run.
pub const CALIBRATION_T1: f64 = 0.1;
pub const CALIBRATION_STEP: f64 = 1e-3;

/// Picks the sign of the Lax form that reproduces the direct flow from `s0`,
/// by comparing RK4 trajectories over `[0, 0.1]`.
pub fn calibrate_sign_from(s0: &LatticeState) -> CalibrationReport {
    let direct = integrate(&IntegratorConfig::rk4(FlowForm::Direct, CALIBRATION_T1, CALIBRATION_STEP), s0);
    let discrepancy = |sigma: Sign| -> f64 {
        let config = IntegratorConfig {
            sigma,
            ..IntegratorConfig::rk4(FlowForm::Lax, CALIBRATION_T1, CALIBRATION_STEP)
        };
        match (&direct, integrate(&config, s0)) {
            (Ok(a), Ok(b)) => max_pointwise_difference(a, &b),
            _ => f64::INFINITY,
        }
    };
    let discrepancy_plus = discrepancy(Sign::Plus);
    let discrepancy_minus = discrepancy(Sign::Minus);
    let sigma = if discrepancy_minus <= discrepancy_plus {
        Sign::Minus
    } else {
        Sign::Plus
    };
    CalibrationReport {
        sigma,
        discrepancy_plus,
        discrepancy_minus,
    }
}

/// Calibration from the reference state `u = (1, 1)`.
pub fn calibrate_sign() -> CalibrationReport {
    calibrate_sign_from(&LatticeState::new(vec![1.0, 1.0]).expect("positive"))
}

/// Max `|Δu|` over samples paired by index; infinite when the records do not line up.
pub fn max_pointwise_difference(a: &TrajectoryRecord, b: &TrajectoryRecord) -> f64 {
    if a.samples.len() != b.samples.len() {
        return f64::INFINITY;
    }
    a.samples
        .iter()
        .zip(&b.samples)
        .flat_map(|(x, y)| x.u.iter().zip(&y.u).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}
