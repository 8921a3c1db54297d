use proptest::prelude::*;
use volterra_core::linalg::{commutator, frobenius_inner, symmetric_eigen, trace_power, DenseMatrix};
use volterra_core::lattice::build_k;

fn square(max_dim: usize) -> impl Strategy<Value = DenseMatrix> {
    (1..=max_dim).prop_flat_map(|n| {
        prop::collection::vec(-1.0f64..1.0, n * n)
            .prop_map(move |data| DenseMatrix::from_row_major(n, data).unwrap())
    })
}

fn same_size_triple(max_dim: usize) -> impl Strategy<Value = (DenseMatrix, DenseMatrix, DenseMatrix)> {
    (1..=max_dim).prop_flat_map(|n| {
        let m = move || {
            prop::collection::vec(-1.0f64..1.0, n * n)
                .prop_map(move |data| DenseMatrix::from_row_major(n, data).unwrap())
        };
        (m(), m(), m())
    })
}

fn symmetrize(x: &DenseMatrix) -> DenseMatrix {
    (x + &x.transpose()).scale(0.5)
}

fn rel(diff: f64, scale: f64) -> f64 {
    diff / scale.max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn commutator_is_bilinear_and_antisymmetric((x, y, z) in same_size_triple(10), a in -3.0f64..3.0) {
        let xy = commutator(&x, &y).unwrap();
        let yx = commutator(&y, &x).unwrap();
        prop_assert!((&xy + &yx).max_abs() <= 1e-12 * xy.max_abs().max(1.0));

        let lhs = commutator(&(&x.scale(a) + &z), &y).unwrap();
        let rhs = &xy.scale(a) + &commutator(&z, &y).unwrap();
        prop_assert!(rel(lhs.max_abs_diff(&rhs).unwrap(), lhs.max_abs()) <= 1e-12);
    }

    #[test]
    fn jacobi_identity((x, y, z) in same_size_triple(10)) {
        let a = commutator(&x, &commutator(&y, &z).unwrap()).unwrap();
        let b = commutator(&y, &commutator(&z, &x).unwrap()).unwrap();
        let c = commutator(&z, &commutator(&x, &y).unwrap()).unwrap();
        let scale = a.max_abs().max(b.max_abs()).max(c.max_abs());
        prop_assert!(rel((&(&a + &b) + &c).max_abs(), scale) <= 1e-12);
    }

    #[test]
    fn trace_pairing_with_k((x, t, _) in same_size_triple(10)) {
        let s = symmetrize(&x);
        let l2 = &s * &s;
        let k = build_k(s.dim());
        let lhs = (&k * &commutator(&l2, &t).unwrap()).trace();
        let rhs = frobenius_inner(&commutator(&l2, &k).unwrap(), &t).unwrap();
        prop_assert!(rel((lhs - rhs).abs(), lhs.abs().max(rhs.abs())) <= 1e-12);
    }

    #[test]
    fn eigen_reconstruction(x in square(50)) {
        let s = symmetrize(&x);
        let eig = symmetric_eigen(&s).unwrap();
        let err = (&eig.reconstruct() - &s).frobenius_norm();
        prop_assert!(err <= 1e-10 * s.frobenius_norm().max(f64::MIN_POSITIVE));
    }

    #[test]
    fn trace_power_matches_eigenvalues(x in square(20), k in 0u32..=6) {
        let s = symmetrize(&x);
        let direct = trace_power(&s, k);
        let spectral: f64 = symmetric_eigen(&s).unwrap().eigenvalues.iter().map(|l| l.powi(k as i32)).sum();
        let scale: f64 = symmetric_eigen(&s).unwrap().eigenvalues.iter().map(|l| l.abs().powi(k as i32)).sum();
        prop_assert!((direct - spectral).abs() <= 1e-10 * scale.max(1.0));
    }
}
