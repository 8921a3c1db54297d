//! The open Volterra lattice `du_n/dt = u_n (u_{n+1} - u_{n-1})`,
//! `u_0 = u_{N+1} = 0`, and its matrix forms.
//!
//! With `c_i = sqrt(u_i)` the state is encoded in the `(N+1)×(N+1)` symmetric
//! tridiagonal matrix `L` with zero diagonal and off-diagonal `c`. The same
//! flow is written three ways:
//!
//! * directly, via [`volterra_rhs`];
//! * as a Lax equation `L' = σ [L, A]` with the skew matrix [`build_a`];
//! * as a double bracket `L' = σ [L, [L², K]]` with `K = diag(1, 2, …)/4`.
//!
//! Since `A = [L², K]` the two matrix forms coincide. The relative sign `σ`
//! between the matrix forms and the direct ODE is [`CALIBRATED_SIGN`].

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::linalg::{commutator, DenseMatrix};
use crate::rng::SplitMix64;

/// Relative tolerance of the post-hoc tangency check in [`double_bracket_field`].
pub const TANGENCY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatticeError {
    #[error("lattice must have at least one site")]
    Empty,
    #[error("lattice variable {index} must be positive and finite, got {value}")]
    NonPositive { index: usize, value: f64 },
    #[error("double-bracket field leaves the tridiagonal form (residual {residual:e}, allowed {allowed:e})")]
    NotTangent { residual: f64, allowed: f64 },
}

/// Sign multiplying the matrix-form vector fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+1",
            Sign::Minus => "-1",
        })
    }
}

impl FromStr for Sign {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "+1" | "1" | "+" | "plus" => Ok(Sign::Plus),
            "-1" | "-" | "minus" => Ok(Sign::Minus),
            other => Err(format!("invalid sign `{other}`, expected +1 or -1")),
        }
    }
}

/// Sign `σ*` for which `σ* [L, A]` reproduces the direct Volterra flow.
///
/// Fixed by `integrate::calibrate_sign`, which integrates the direct and Lax
/// forms from `u = (1, 1)` over `[0, 0.1]` with both signs and keeps the one
/// with the smaller trajectory discrepancy (see the `calibration_selects_*`
/// tests in `integrate`). With this sign the direct flow is the descent flow
/// of `f`.
pub const CALIBRATED_SIGN: Sign = Sign::Minus;

/// Which of the three equivalent vector fields drives the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlowForm {
    Direct,
    Lax,
    Bracket,
}

impl fmt::Display for FlowForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlowForm::Direct => "direct",
            FlowForm::Lax => "lax",
            FlowForm::Bracket => "bracket",
        })
    }
}

impl FromStr for FlowForm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "direct" => Ok(FlowForm::Direct),
            "lax" => Ok(FlowForm::Lax),
            "bracket" => Ok(FlowForm::Bracket),
            other => Err(format!(
                "invalid form `{other}`, expected direct, lax or bracket"
            )),
        }
    }
}

fn check_positive(values: &[f64]) -> Result<(), LatticeError> {
    if values.is_empty() {
        return Err(LatticeError::Empty);
    }
    match values.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        Some(index) => Err(LatticeError::NonPositive {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// Lattice variables `u_1..u_N`, all positive. The boundary values are implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeState {
    u: Vec<f64>,
}

impl LatticeState {
    pub fn new(u: Vec<f64>) -> Result<Self, LatticeError> {
        check_positive(&u)?;
        Ok(Self { u })
    }

    /// Log-uniform sites on `[0.1, 10]`.
    pub fn random(n: usize, rng: &mut SplitMix64) -> Result<Self, LatticeError> {
        Self::new((0..n).map(|_| rng.log_uniform(0.1, 10.0)).collect())
    }

    pub fn sites(&self) -> usize {
        self.u.len()
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.u
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self, LatticeError> {
        Self::new(self.u.iter().map(|v| alpha * v).collect())
    }
}

/// Off-diagonal entries `c_1..c_N` of `L`, all positive.
#[derive(Debug, Clone, PartialEq)]
pub struct LaxMatrix {
    c: Vec<f64>,
}

impl LaxMatrix {
    pub fn new(c: Vec<f64>) -> Result<Self, LatticeError> {
        check_positive(&c)?;
        Ok(Self { c })
    }

    pub fn offdiag(&self) -> &[f64] {
        &self.c
    }

    /// Side of the dense matrix, `N + 1`.
    pub fn dim(&self) -> usize {
        self.c.len() + 1
    }

    pub fn densify(&self) -> DenseMatrix {
        let mut l = DenseMatrix::zeros(self.dim());
        for (i, &c) in self.c.iter().enumerate() {
            l[(i, i + 1)] = c;
            l[(i + 1, i)] = c;
        }
        l
    }
}

pub fn lax_from_state(s: &LatticeState) -> LaxMatrix {
    LaxMatrix {
        c: s.u.iter().map(|u| u.sqrt()).collect(),
    }
}

pub fn state_from_lax(l: &LaxMatrix) -> LatticeState {
    LatticeState {
        u: l.c.iter().map(|c| c * c).collect(),
    }
}

/// `u_n (u_{n+1} - u_{n-1})` for raw values, which need not be positive.
pub fn volterra_rhs_raw(u: &[f64], out: &mut [f64]) {
    let n = u.len();
    for i in 0..n {
        let prev = if i == 0 { 0.0 } else { u[i - 1] };
        let next = if i + 1 == n { 0.0 } else { u[i + 1] };
        out[i] = u[i] * (next - prev);
    }
}

pub fn volterra_rhs(s: &LatticeState) -> Vec<f64> {
    let mut out = vec![0.0; s.sites()];
    volterra_rhs_raw(&s.u, &mut out);
    out
}

/// `K = diag(1, 2, …, n) / 4`.
pub fn build_k(n: usize) -> DenseMatrix {
    let diag: Vec<f64> = (1..=n).map(|i| i as f64 / 4.0).collect();
    DenseMatrix::from_diagonal(&diag)
}

/// The skew Lax partner: `A_{i,i+2} = c_i c_{i+1} / 2 = -A_{i+2,i}`.
pub fn build_a(s: &LatticeState) -> DenseMatrix {
    let c: Vec<f64> = s.u.iter().map(|u| u.sqrt()).collect();
    let mut a = DenseMatrix::zeros(s.sites() + 1);
    for i in 0..c.len().saturating_sub(1) {
        let v = 0.5 * c[i] * c[i + 1];
        a[(i, i + 2)] = v;
        a[(i + 2, i)] = -v;
    }
    a
}

/// `f(L) = tr(K L²)`.
pub fn objective_f(l: &LaxMatrix) -> f64 {
    let dense = l.densify();
    let l2 = &dense * &dense;
    let k = build_k(l.dim());
    (&k * &l2).trace()
}

/// Closed form of `f` in lattice variables: `Σ_n (2n + 1) u_n / 4`.
///
/// Used for cheap per-step monotonicity checks and `df/dt` by the chain rule.
pub fn objective_from_state(u: &[f64]) -> f64 {
    objective_gradient_u(u.len())
        .iter()
        .zip(u)
        .map(|(g, u)| g * u)
        .sum()
}

/// `∂f/∂u_n = (2n + 1) / 4` for `n = 1..N`.
pub fn objective_gradient_u(n: usize) -> Vec<f64> {
    (1..=n).map(|i| (2 * i + 1) as f64 / 4.0).collect()
}

/// `[L², K]`.
pub fn bracket_l2_k(l: &DenseMatrix) -> DenseMatrix {
    let l2 = l * l;
    let k = build_k(l.dim());
    commutator(&l2, &k).expect("K is built with the side of L")
}

/// Largest entry of `field` that breaks the symmetric, zero-diagonal,
/// tridiagonal pattern.
pub fn tangency_residual(field: &DenseMatrix) -> f64 {
    let n = field.dim();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let v = if i.abs_diff(j) == 1 {
                field[(i, j)] - field[(j, i)]
            } else {
                field[(i, j)]
            };
            worst = worst.max(v.abs());
        }
    }
    worst
}

/// `[L, [L², K]]`, checked to be tangent to the tridiagonal form.
pub fn double_bracket_field(l: &LaxMatrix) -> Result<DenseMatrix, LatticeError> {
    let dense = l.densify();
    let field = commutator(&dense, &bracket_l2_k(&dense)).expect("same side");
    let residual = tangency_residual(&field);
    let allowed = TANGENCY_TOLERANCE * dense.frobenius_norm().powi(3);
    if residual > allowed {
        return Err(LatticeError::NotTangent { residual, allowed });
    }
    Ok(field)
}

/// `σ [L, A]`.
pub fn lax_rhs(l: &LaxMatrix, sigma: Sign) -> DenseMatrix {
    let dense = l.densify();
    let a = build_a(&state_from_lax(l));
    commutator(&dense, &a).expect("same side").scale(sigma.value())
}

/// `du/dt` under any of the three forms. Matrix forms read `dc_i/dt` off the
/// `(i, i+1)` entry of the field and return `du_i/dt = 2 c_i dc_i/dt`.
pub fn pushforward_rhs(
    s: &LatticeState,
    form: FlowForm,
    sigma: Sign,
) -> Result<Vec<f64>, LatticeError> {
    let field = match form {
        FlowForm::Direct => return Ok(volterra_rhs(s)),
        FlowForm::Lax => lax_rhs(&lax_from_state(s), sigma),
        FlowForm::Bracket => double_bracket_field(&lax_from_state(s))?.scale(sigma.value()),
    };
    Ok(s.u
        .iter()
        .enumerate()
        .map(|(i, u)| 2.0 * u.sqrt() * field[(i, i + 1)])
        .collect())
}

/// The matrix velocity `L'` induced by the direct ODE:
/// `dc_i/dt = c_i (u_{i+1} - u_{i-1}) / 2` placed symmetrically.
pub fn direct_lax_velocity(s: &LatticeState) -> DenseMatrix {
    let du = volterra_rhs(s);
    let mut v = DenseMatrix::zeros(s.sites() + 1);
    for (i, (&u, &d)) in s.u.iter().zip(&du).enumerate() {
        let dc = 0.5 * d / u.sqrt();
        v[(i, i + 1)] = dc;
        v[(i + 1, i)] = dc;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;

    fn state(u: &[f64]) -> LatticeState {
        LatticeState::new(u.to_vec()).unwrap()
    }

    #[test]
    fn state_validation() {
        assert_eq!(LatticeState::new(vec![]), Err(LatticeError::Empty));
        assert_eq!(
            LatticeState::new(vec![1.0, 0.0]),
            Err(LatticeError::NonPositive {
                index: 1,
                value: 0.0
            })
        );
        assert!(LatticeState::new(vec![-2.0]).is_err());
        assert!(LatticeState::new(vec![f64::NAN]).is_err());
        assert!(LaxMatrix::new(vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn lax_from_state_examples() {
        let l = lax_from_state(&state(&[1.0]));
        assert_eq!(l.offdiag(), &[1.0]);
        assert_eq!(
            l.densify(),
            DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
        );
        assert_eq!(lax_from_state(&state(&[4.0, 9.0])).offdiag(), &[2.0, 3.0]);
        let dense = lax_from_state(&state(&[1.0, 1.0])).densify();
        let expected = DenseMatrix::from_rows(&[
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        assert_eq!(dense, expected);
    }

    #[test]
    fn state_from_lax_examples() {
        let l = LaxMatrix::new(vec![2.0, 3.0]).unwrap();
        assert_eq!(state_from_lax(&l).u(), &[4.0, 9.0]);
        assert_eq!(state_from_lax(&LaxMatrix::new(vec![1.0]).unwrap()).u(), &[1.0]);

        let mut rng = SplitMix64::new(3);
        let s = LatticeState::random(10, &mut rng).unwrap();
        let back = state_from_lax(&lax_from_state(&s));
        for (a, b) in s.u().iter().zip(back.u()) {
            assert!(((a - b) / a).abs() <= 1e-15);
        }
    }

    #[test]
    fn volterra_rhs_examples() {
        assert_eq!(volterra_rhs(&state(&[5.0])), vec![0.0]);
        assert_eq!(volterra_rhs(&state(&[1.0, 1.0])), vec![1.0, -1.0]);
        assert_eq!(volterra_rhs(&state(&[1.0, 2.0, 3.0])), vec![2.0, 4.0, -6.0]);
    }

    #[test]
    fn k_examples() {
        assert_eq!(build_k(3).diagonal(), vec![0.25, 0.5, 0.75]);
        assert_eq!(build_k(2).diagonal(), vec![0.25, 0.5]);
        for n in 2..12 {
            let tr = build_k(n).trace();
            assert_eq!(tr, (n * (n + 1)) as f64 / 8.0);
        }
    }

    #[test]
    fn a_examples() {
        let a = build_a(&state(&[1.0, 1.0]));
        let mut expected = DenseMatrix::zeros(3);
        expected[(0, 2)] = 0.5;
        expected[(2, 0)] = -0.5;
        assert_eq!(a, expected);
        assert_eq!(build_a(&state(&[4.0])), DenseMatrix::zeros(2));
        assert_eq!(build_a(&state(&[4.0, 9.0]))[(0, 2)], 3.0);
    }

    #[test]
    fn objective_examples() {
        let l = lax_from_state(&state(&[1.0, 1.0]));
        assert!((objective_f(&l) - 2.0).abs() < 1e-15);
        let l = lax_from_state(&state(&[1.0]));
        assert!((objective_f(&l) - 0.75).abs() < 1e-15);
        assert!((objective_from_state(&[1.0, 1.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn objective_is_linear_in_u() {
        let mut rng = SplitMix64::new(17);
        for _ in 0..20 {
            let n = 1 + (rng.next_u64() % 12) as usize;
            let s = LatticeState::random(n, &mut rng).unwrap();
            let alpha = rng.uniform(0.1, 5.0);
            let f = objective_f(&lax_from_state(&s));
            let fa = objective_f(&lax_from_state(&s.scaled(alpha).unwrap()));
            assert!((fa - alpha * f).abs() <= 1e-13 * fa.abs());
            let closed = objective_from_state(s.u());
            assert!((closed - f).abs() <= 1e-13 * f.abs());
        }
    }

    #[test]
    fn double_bracket_examples() {
        let field = double_bracket_field(&lax_from_state(&state(&[1.0]))).unwrap();
        assert_eq!(field.max_abs(), 0.0);

        let field = double_bracket_field(&lax_from_state(&state(&[1.0, 1.0]))).unwrap();
        let mut expected = DenseMatrix::zeros(3);
        expected[(0, 1)] = -0.5;
        expected[(1, 0)] = -0.5;
        expected[(1, 2)] = 0.5;
        expected[(2, 1)] = 0.5;
        assert!(field.max_abs_diff(&expected).unwrap() < 1e-15);
    }

    #[test]
    fn inner_bracket_equals_a() {
        let mut rng = SplitMix64::new(23);
        for n in 1..=20 {
            let s = LatticeState::random(n, &mut rng).unwrap();
            let l = lax_from_state(&s).densify();
            let diff = build_a(&s).max_abs_diff(&bracket_l2_k(&l)).unwrap();
            assert!(diff <= 1e-12 * (1.0 + l.frobenius_norm().powi(2)));
        }
    }

    #[test]
    fn lax_rhs_examples() {
        let l = lax_from_state(&state(&[1.0, 1.0]));
        let v = lax_rhs(&l, Sign::Minus);
        assert!((v[(0, 1)] - 0.5).abs() < 1e-15);
        assert!((v[(1, 2)] + 0.5).abs() < 1e-15);
        for sigma in [Sign::Plus, Sign::Minus] {
            assert_eq!(lax_rhs(&lax_from_state(&state(&[3.0])), sigma).max_abs(), 0.0);
        }

        let mut rng = SplitMix64::new(29);
        for n in 1..=12 {
            let l = lax_from_state(&LatticeState::random(n, &mut rng).unwrap());
            let db = double_bracket_field(&l).unwrap();
            for sigma in [Sign::Plus, Sign::Minus] {
                let lax = lax_rhs(&l, sigma);
                let scale = l.densify().frobenius_norm().powi(3);
                assert!(lax.max_abs_diff(&db.scale(sigma.value())).unwrap() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn pushforward_examples() {
        for form in [FlowForm::Direct, FlowForm::Lax, FlowForm::Bracket] {
            assert_eq!(
                pushforward_rhs(&state(&[5.0]), form, CALIBRATED_SIGN).unwrap(),
                vec![0.0]
            );
        }
        let du = pushforward_rhs(&state(&[1.0, 1.0]), FlowForm::Bracket, CALIBRATED_SIGN).unwrap();
        assert!((du[0] - 1.0).abs() < 1e-15 && (du[1] + 1.0).abs() < 1e-15);

        let mut rng = SplitMix64::new(31);
        for n in 1..=20 {
            let s = LatticeState::random(n, &mut rng).unwrap();
            let direct = volterra_rhs(&s);
            let scale = direct.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for form in [FlowForm::Lax, FlowForm::Bracket] {
                let other = pushforward_rhs(&s, form, CALIBRATED_SIGN).unwrap();
                for (a, b) in direct.iter().zip(&other) {
                    assert!((a - b).abs() <= 1e-13 * scale, "n={n} {form}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn direct_velocity_matches_matrix_forms() {
        let s = state(&[1.0, 1.0]);
        let v = direct_lax_velocity(&s);
        assert!((v[(0, 1)] - 0.5).abs() < 1e-15);
        assert!((v[(1, 2)] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn sign_and_form_parse() {
        assert_eq!("-1".parse::<Sign>().unwrap(), Sign::Minus);
        assert_eq!("+1".parse::<Sign>().unwrap(), Sign::Plus);
        assert!("0".parse::<Sign>().is_err());
        assert_eq!("bracket".parse::<FlowForm>().unwrap(), FlowForm::Bracket);
        assert!("toda".parse::<FlowForm>().is_err());
        assert_eq!(Sign::Plus.flip(), Sign::Minus);
    }
}
