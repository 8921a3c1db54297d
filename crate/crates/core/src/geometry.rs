//! Normal-metric geometry of the isospectral set.
//!
//! For a base point `L` with simple spectrum, `L = Q Λ Qᵀ`, the centralizer
//! `{T : [L, T] = 0}` is the set of matrices diagonal in the eigenbasis, so the
//! orthogonal projection onto its complement zeroes the diagonal of `Qᵀ T Q`.
//! A tangent vector `V = [L, T]` has eigenbasis entries
//! `(λ_i - λ_j) (Qᵀ T Q)_ij`; dividing by the gaps recovers `T^⊥` and the
//! metric is `(V1, V2) = <T1^⊥, T2^⊥>`.

use thiserror::Error;

use crate::lattice::{
    bracket_l2_k, build_k, direct_lax_velocity, lax_from_state, objective_gradient_u,
    volterra_rhs, LatticeError, LatticeState, LaxMatrix, Sign,
};
use crate::linalg::{commutator, expm, expm1, frobenius_inner, symmetric_eigen, DenseMatrix, EigenDecomposition, LinalgError};

/// Spectral gaps at or below this multiple of `‖L‖` are treated as collisions.
pub const DEGENERACY_THRESHOLD: f64 = 1e-8;
/// Allowed diagonal residual, relative to `‖V‖`, of a tangent vector in the eigenbasis.
pub const TANGENT_TOLERANCE: f64 = 1e-10;
/// Pass threshold of [`gradient_flow_identity_check`], relative to its scale.
pub const FLOW_IDENTITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate spectrum: minimum gap {gap:e} not above {threshold:e}")]
    Degenerate { gap: f64, threshold: f64 },
    #[error("matrix is not tangent to the orbit (diagonal residual {residual:e}, allowed {allowed:e})")]
    NotTangent { residual: f64, allowed: f64 },
    #[error("tangent vector is based at a different point")]
    BaseMismatch,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// An ambient matrix tangent to the orbit through `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub base: LaxMatrix,
    pub mat: DenseMatrix,
}

impl TangentVector {
    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            base: self.base.clone(),
            mat: self.mat.scale(alpha),
        }
    }
}

/// Spectral data of a base point, shared by all metric operations there.
#[derive(Debug, Clone)]
pub struct OrbitContext {
    base: LaxMatrix,
    dense: DenseMatrix,
    eig: EigenDecomposition,
    gap_min: f64,
}

impl OrbitContext {
    pub fn new(base: &LaxMatrix) -> Result<Self, GeometryError> {
        let dense = base.densify();
        let eig = symmetric_eigen(&dense)?;
        let gap_min = eig.min_gap();
        let threshold = DEGENERACY_THRESHOLD * dense.frobenius_norm();
        if gap_min <= threshold {
            return Err(GeometryError::Degenerate {
                gap: gap_min,
                threshold,
            });
        }
        Ok(Self {
            base: base.clone(),
            dense,
            eig,
            gap_min,
        })
    }

    pub fn from_state(s: &LatticeState) -> Result<Self, GeometryError> {
        Self::new(&lax_from_state(s))
    }

    pub fn base(&self) -> &LaxMatrix {
        &self.base
    }

    pub fn dense(&self) -> &DenseMatrix {
        &self.dense
    }

    pub fn eigen(&self) -> &EigenDecomposition {
        &self.eig
    }

    pub fn gap_min(&self) -> f64 {
        self.gap_min
    }

    /// `T^⊥ = Q · offdiag(Qᵀ T Q) · Qᵀ`.
    pub fn centralizer_project(&self, t: &DenseMatrix) -> Result<DenseMatrix, GeometryError> {
        let mut w = t.congruence_transpose(&self.eig.basis)?;
        for i in 0..w.dim() {
            w[(i, i)] = 0.0;
        }
        Ok(w.congruence(&self.eig.basis)?)
    }

    /// Wraps `mat` as a tangent vector after checking it lies in the image of `ad_L`.
    pub fn tangent(&self, mat: DenseMatrix) -> Result<TangentVector, GeometryError> {
        self.eigen_coordinates(&mat)?;
        Ok(TangentVector {
            base: self.base.clone(),
            mat,
        })
    }

    /// The tangent vector `[L, T]`.
    pub fn tangent_of(&self, t: &DenseMatrix) -> Result<TangentVector, GeometryError> {
        Ok(TangentVector {
            base: self.base.clone(),
            mat: commutator(&self.dense, t)?,
        })
    }

    /// `Qᵀ V Q` after the tangency check on its diagonal.
    fn eigen_coordinates(&self, v: &DenseMatrix) -> Result<DenseMatrix, GeometryError> {
        let w = v.congruence_transpose(&self.eig.basis)?;
        let residual = w.diagonal().iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let allowed = TANGENT_TOLERANCE * v.frobenius_norm();
        if residual > allowed {
            return Err(GeometryError::NotTangent { residual, allowed });
        }
        Ok(w)
    }

    /// Eigenbasis coordinates of the solution `T^⊥` of `V = [L, T]`.
    fn solve_coordinates(&self, v: &TangentVector) -> Result<DenseMatrix, GeometryError> {
        if v.base != self.base {
            return Err(GeometryError::BaseMismatch);
        }
        let mut w = self.eigen_coordinates(&v.mat)?;
        let lambda = &self.eig.eigenvalues;
        for i in 0..w.dim() {
            for j in 0..w.dim() {
                w[(i, j)] = if i == j {
                    0.0
                } else {
                    w[(i, j)] / (lambda[i] - lambda[j])
                };
            }
        }
        Ok(w)
    }

    /// The representative `T^⊥` with `[L, T^⊥] = V`.
    pub fn solve_commutator(&self, v: &TangentVector) -> Result<DenseMatrix, GeometryError> {
        Ok(self.solve_coordinates(v)?.congruence(&self.eig.basis)?)
    }

    /// `([L, T1], [L, T2]) = <T1^⊥, T2^⊥>`.
    pub fn normal_metric(&self, v1: &TangentVector, v2: &TangentVector) -> Result<f64, GeometryError> {
        let t1 = self.solve_coordinates(v1)?;
        let t2 = self.solve_coordinates(v2)?;
        // Q is orthogonal, so the inner product can be taken in eigen coordinates.
        Ok(frobenius_inner(&t1, &t2)?)
    }

    /// `grad f = [L, [L², K]]`.
    pub fn orbit_gradient(&self) -> TangentVector {
        TangentVector {
            base: self.base.clone(),
            mat: commutator(&self.dense, &bracket_l2_k(&self.dense)).expect("same side"),
        }
    }
}

/// The three expressions of `df([L, T])`:
/// `<K, L[L,T] + [L,T]L>`, `<K, [L², T]>` and `<[L², K], T>`.
pub fn directional_derivative_chain(l: &LaxMatrix, t: &DenseMatrix) -> Result<[f64; 3], LinalgError> {
    let dense = l.densify();
    let k = build_k(dense.dim());
    let v = commutator(&dense, t)?;
    let first = frobenius_inner(&k, &(&(&dense * &v) + &(&v * &dense)))?;
    let l2 = &dense * &dense;
    let second = frobenius_inner(&k, &commutator(&l2, t)?)?;
    let third = frobenius_inner(&commutator(&l2, &k)?, t)?;
    Ok([first, second, third])
}

/// `df([L, T]) = tr([L², K] Tᵀ)`.
pub fn directional_derivative(l: &LaxMatrix, t: &DenseMatrix) -> Result<f64, LinalgError> {
    let dense = l.densify();
    if dense.dim() != t.dim() {
        return Err(LinalgError::DimensionMismatch {
            left: dense.dim(),
            right: t.dim(),
        });
    }
    frobenius_inner(&bracket_l2_k(&dense), t)
}

/// `tr(K X²)` for an arbitrary ambient matrix.
pub fn objective_dense(x: &DenseMatrix) -> f64 {
    let k = build_k(x.dim());
    (&k * &(x * x)).trace()
}

/// `f(L(ε)) - f(L)` along `L(ε) = exp(-εT) L exp(εT)`.
///
/// The displacement is formed as `exp(-εT) [L, exp(εT) - I]` and the change
/// of `tr(K X²)` as `tr(K (LΔ + ΔL + Δ²))`, so no O(1) quantities cancel.
pub fn objective_increment(l: &LaxMatrix, t: &DenseMatrix, eps: f64) -> Result<f64, LinalgError> {
    let dense = l.densify();
    if dense.dim() != t.dim() {
        return Err(LinalgError::DimensionMismatch {
            left: dense.dim(),
            right: t.dim(),
        });
    }
    let forward = expm1(&t.scale(eps));
    let backward = expm(&t.scale(-eps));
    let delta = &backward * &commutator(&dense, &forward)?;
    let k = build_k(dense.dim());
    let change = &(&(&dense * &delta) + &(&delta * &dense)) + &(&delta * &delta);
    Ok((&k * &change).trace())
}

/// Centered difference of `f` along `ε ↦ exp(-εT) L exp(εT)`, whose velocity
/// at `ε = 0` is `[L, T]`. For skew `T` the curve stays symmetric.
pub fn centered_difference(l: &LaxMatrix, t: &DenseMatrix, eps: f64) -> Result<f64, LinalgError> {
    let up = objective_increment(l, t, eps)?;
    let down = objective_increment(l, t, -eps)?;
    Ok((up - down) / (2.0 * eps))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientFlowReport {
    /// Max entrywise distance between `σ·grad f` and the direct-ODE velocity of `L`.
    pub field_residual: f64,
    /// `max(1, ‖L‖)³`.
    pub field_scale: f64,
    /// `df/dt` along the direct flow, by the chain rule in `u`.
    pub df_dt: f64,
    /// `(grad f, grad f)`.
    pub gradient_norm_sq: f64,
    /// `|df/dt - σ (grad f, grad f)|`.
    pub rate_residual: f64,
    /// `max(1, ‖L‖)⁴`.
    pub rate_scale: f64,
    pub passed: bool,
}

/// Compares the signed orbit gradient with the direct Volterra flow at `s`.
pub fn gradient_flow_identity_check(
    s: &LatticeState,
    sigma: Sign,
) -> Result<GradientFlowReport, GeometryError> {
    let ctx = OrbitContext::from_state(s)?;
    let grad = ctx.orbit_gradient();
    let velocity = direct_lax_velocity(s);
    let field_residual = grad.mat.scale(sigma.value()).max_abs_diff(&velocity)?;

    let df_dt: f64 = objective_gradient_u(s.sites())
        .iter()
        .zip(volterra_rhs(s))
        .map(|(g, du)| g * du)
        .sum();
    let gradient_norm_sq = ctx.normal_metric(&grad, &grad)?;
    let rate_residual = (df_dt - sigma.value() * gradient_norm_sq).abs();

    let norm = ctx.dense().frobenius_norm().max(1.0);
    let field_scale = norm.powi(3);
    let rate_scale = norm.powi(4);
    let passed = field_residual <= FLOW_IDENTITY_TOLERANCE * field_scale
        && rate_residual <= FLOW_IDENTITY_TOLERANCE * rate_scale;
    Ok(GradientFlowReport {
        field_residual,
        field_scale,
        df_dt,
        gradient_norm_sq,
        rate_residual,
        rate_scale,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_a, CALIBRATED_SIGN};
    use crate::rng::SplitMix64;

    fn ctx(u: &[f64]) -> OrbitContext {
        OrbitContext::from_state(&LatticeState::new(u.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn projection_examples() {
        let c = ctx(&[1.0, 2.0, 0.5]);
        let n = c.dense().dim();
        let p = c.centralizer_project(&DenseMatrix::identity(n)).unwrap();
        assert!(p.max_abs() < 1e-14);
        let p = c.centralizer_project(c.dense()).unwrap();
        assert!(p.max_abs() < 1e-14);
        let b = bracket_l2_k(c.dense());
        let p = c.centralizer_project(&b).unwrap();
        assert!(p.max_abs_diff(&b).unwrap() < 1e-13);
    }

    #[test]
    fn projection_is_idempotent_and_orthogonal() {
        let mut rng = SplitMix64::new(41);
        for n in 1..=10 {
            let c = OrbitContext::from_state(&LatticeState::random(n, &mut rng).unwrap()).unwrap();
            let t = rng.matrix(n + 1);
            let p = c.centralizer_project(&t).unwrap();
            let pp = c.centralizer_project(&p).unwrap();
            assert!(pp.max_abs_diff(&p).unwrap() <= 1e-12 * (1.0 + t.frobenius_norm()));
            // Powers of L span the centralizer.
            let mut power = DenseMatrix::identity(n + 1);
            for _ in 0..=n {
                let ip = frobenius_inner(&p, &power).unwrap();
                let scale = t.frobenius_norm() * power.frobenius_norm();
                assert!(ip.abs() <= 1e-11 * scale, "n={n}: {ip}");
                power = &power * c.dense();
            }
            let skew = rng.skew_matrix(n + 1);
            let ps = c.centralizer_project(&skew).unwrap();
            assert!(ps.max_abs_diff(&skew).unwrap() <= 1e-12 * skew.frobenius_norm().max(1.0));
        }
    }

    #[test]
    fn degenerate_and_mismatched_inputs() {
        // A zero-diagonal tridiagonal matrix with positive entries has simple
        // spectrum; scaling the entries far apart shrinks the inner gaps.
        let l = LaxMatrix::new(vec![1.0, 1e-9, 1.0]).unwrap();
        assert!(matches!(
            OrbitContext::new(&l),
            Err(GeometryError::Degenerate { .. })
        ));

        let c = ctx(&[1.0, 1.0]);
        let other = ctx(&[1.0, 2.0]);
        let g = other.orbit_gradient();
        assert_eq!(c.normal_metric(&g, &g), Err(GeometryError::BaseMismatch));
        assert!(matches!(
            c.tangent(DenseMatrix::identity(3)),
            Err(GeometryError::NotTangent { .. })
        ));
        assert!(c.centralizer_project(&DenseMatrix::identity(2)).is_err());
    }

    #[test]
    fn metric_examples() {
        let c = ctx(&[1.0, 1.0]);
        let a = build_a(&LatticeState::new(vec![1.0, 1.0]).unwrap());
        let v = c.tangent_of(&a).unwrap();
        assert!((c.normal_metric(&v, &v).unwrap() - 0.5).abs() < 1e-14);
        let zero = c.tangent(DenseMatrix::zeros(3)).unwrap();
        assert_eq!(c.normal_metric(&zero, &zero).unwrap(), 0.0);

        let mut rng = SplitMix64::new(43);
        for n in 2..=8 {
            let c = OrbitContext::from_state(&LatticeState::random(n, &mut rng).unwrap()).unwrap();
            let t1 = rng.matrix(n + 1);
            let t2 = rng.matrix(n + 1);
            let v1 = c.tangent_of(&t1).unwrap();
            let v2 = c.tangent_of(&t2).unwrap();
            let g12 = c.normal_metric(&v1, &v2).unwrap();
            let g21 = c.normal_metric(&v2, &v1).unwrap();
            let scale = t1.frobenius_norm() * t2.frobenius_norm();
            assert!((g12 - g21).abs() <= 1e-12 * scale);
            let alpha = rng.uniform(-3.0, 3.0);
            let ga = c.normal_metric(&v1.scale(alpha), &v2).unwrap();
            assert!((ga - alpha * g12).abs() <= 1e-11 * scale);
            let direct = frobenius_inner(
                &c.centralizer_project(&t1).unwrap(),
                &c.centralizer_project(&t2).unwrap(),
            )
            .unwrap();
            assert!((g12 - direct).abs() <= 1e-10 * scale, "{g12} vs {direct}");
            assert!(c.normal_metric(&v1, &v1).unwrap() > 0.0);

            let solved = c.solve_commutator(&v1).unwrap();
            let back = commutator(c.dense(), &solved).unwrap();
            assert!(back.max_abs_diff(&v1.mat).unwrap() <= 1e-10 * scale.sqrt());
        }
    }

    #[test]
    fn gradient_examples() {
        let g = ctx(&[1.0]).orbit_gradient();
        assert_eq!(g.mat.max_abs(), 0.0);
        let g = ctx(&[1.0, 1.0]).orbit_gradient();
        assert!((g.mat[(0, 1)] + 0.5).abs() < 1e-15);
        assert!((g.mat[(1, 2)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gradient_defining_equation() {
        let mut rng = SplitMix64::new(47);
        for n in 1..=10 {
            let c = OrbitContext::from_state(&LatticeState::random(n, &mut rng).unwrap()).unwrap();
            let grad = c.orbit_gradient();
            let scale = c.dense().frobenius_norm().max(1.0).powi(2);
            for _ in 0..10 {
                let t = rng.matrix(n + 1);
                let v = c.tangent_of(&t).unwrap();
                let df = directional_derivative(c.base(), &t).unwrap();
                let pairing = c.normal_metric(&grad, &v).unwrap();
                assert!((df - pairing).abs() <= 1e-11 * scale * t.frobenius_norm());
            }
        }
    }

    #[test]
    fn directional_derivative_examples() {
        let l = LaxMatrix::new(vec![1.0, 2.0]).unwrap();
        assert_eq!(directional_derivative(&l, &DenseMatrix::identity(3)).unwrap(), 0.0);
        assert!(directional_derivative(&l, &DenseMatrix::identity(2)).is_err());

        let mut rng = SplitMix64::new(53);
        for n in 1..=20 {
            let l = lax_from_state(&LatticeState::random(n, &mut rng).unwrap());
            let t = rng.matrix(n + 1);
            let [a, b, c] = directional_derivative_chain(&l, &t).unwrap();
            let scale = a.abs().max(b.abs()).max(c.abs()).max(1e-300);
            assert!((a - b).abs() <= 1e-12 * scale.max(1.0));
            assert!((b - c).abs() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn centered_difference_tracks_closed_form() {
        let mut rng = SplitMix64::new(59);
        for n in 1..=6 {
            let l = lax_from_state(&LatticeState::random(n, &mut rng).unwrap());
            let t = rng.skew_matrix(n + 1);
            let fd = centered_difference(&l, &t, 1e-6).unwrap();
            let exact = directional_derivative(&l, &t).unwrap();
            assert!((fd - exact).abs() <= 1e-4, "{fd} vs {exact}");
        }
    }

    #[test]
    fn increment_matches_direct_evaluation() {
        let mut rng = SplitMix64::new(67);
        for n in 1..=6 {
            let l = lax_from_state(&LatticeState::random(n, &mut rng).unwrap());
            let t = rng.skew_matrix(n + 1);
            for eps in [0.3, 1e-2] {
                let moved = &(&expm(&t.scale(-eps)) * &l.densify()) * &expm(&t.scale(eps));
                let direct = objective_dense(&moved) - objective_dense(&l.densify());
                let inc = objective_increment(&l, &t, eps).unwrap();
                assert!((inc - direct).abs() <= 1e-12 * objective_dense(&l.densify()));
            }
        }
    }

    #[test]
    fn flow_identity_examples() {
        let s = LatticeState::new(vec![1.0, 1.0]).unwrap();
        let r = gradient_flow_identity_check(&s, CALIBRATED_SIGN).unwrap();
        assert!((r.df_dt + 0.5).abs() < 1e-15);
        assert!((r.gradient_norm_sq - 0.5).abs() < 1e-14);
        assert!(r.passed, "{r:?}");
        let wrong = gradient_flow_identity_check(&s, CALIBRATED_SIGN.flip()).unwrap();
        assert!(!wrong.passed);

        let s = LatticeState::new(vec![3.0]).unwrap();
        for sigma in [Sign::Plus, Sign::Minus] {
            let r = gradient_flow_identity_check(&s, sigma).unwrap();
            assert_eq!(r.field_residual, 0.0);
            assert_eq!(r.rate_residual, 0.0);
        }

        let mut rng = SplitMix64::new(61);
        for k in 0..100 {
            let n = 2 + k % 11;
            let s = LatticeState::random(n, &mut rng).unwrap();
            let r = gradient_flow_identity_check(&s, CALIBRATED_SIGN).unwrap();
            assert!(r.passed, "n={n}: {r:?}");
        }
    }
}
