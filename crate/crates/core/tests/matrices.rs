use blockgs::linalg::SortedEigen;
use blockgs::matrices::*;
use blockgs::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn spec(kind: EnsembleKind, seed: u64) -> EnsembleSpec {
    EnsembleSpec::new(kind, seed)
}

#[test]
fn sobolev_entries() {
    let a = generate_ensemble(&spec(EnsembleKind::Sobolev { n: 3 }, 0)).unwrap();
    let want = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 1.0, 2.0, 3.0]);
    assert_eq!(a.matrix(), &want);
}

#[test]
fn tridiagonal_smallest_eigenvalue() {
    let a = generate_ensemble(&spec(EnsembleKind::Tridiagonal { n: 16, delta: 0.1 }, 0)).unwrap();
    assert!((a.eigen().min() - 0.1).abs() < 1e-8);
    for i in 0..16 {
        assert_eq!(a.get(i, i), 1.0);
        for j in 0..16 {
            if i.abs_diff(j) > 1 {
                assert_eq!(a.get(i, j), 0.0);
            }
        }
    }
}

#[test]
fn wishart_is_positive_definite() {
    let a = generate_ensemble(&spec(EnsembleKind::Wishart { n: 16, m: 18 }, 7)).unwrap();
    assert!(a.eigen().min() > 0.0);
}

#[test]
fn linspace_spectrum_is_exact() {
    let a = generate_ensemble(&spec(EnsembleKind::LinspaceEig { n: 16, kappa_max: 100.0 }, 3)).unwrap();
    let eig = a.eigen();
    for (i, v) in eig.values.iter().enumerate() {
        let want = 1.0 + 99.0 * i as f64 / 15.0;
        assert!((v - want).abs() < 1e-10 * 100.0, "eigenvalue {i}: {v} vs {want}");
    }
}

#[test]
fn circulant_has_prescribed_spectrum() {
    let (a, residue) = circulant(16).unwrap();
    assert!(residue < 1e-12);
    let mut want = circulant_spectrum(16);
    want.sort_by(f64::total_cmp);
    let got = a.eigen().values;
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-12);
    }
    assert_eq!(want[0], 1.0 / 9.0);
}

#[test]
fn alpha_beta_spectrum() {
    let a = make_alpha_beta(6, 2.0, 3.0).unwrap();
    let eig = a.eigen();
    assert!((eig.min() - 2.0).abs() < 1e-12);
    assert!((eig.max() - 5.0).abs() < 1e-12);
    assert!(make_alpha_beta(4, 1.0, -1.0).is_err());
}

#[test]
fn rel_err_examples() {
    let i2 = SpdMatrix::new(DMatrix::identity(2, 2)).unwrap();
    let xs = DVector::from_vec(vec![1.0, 0.0]);
    assert_eq!(rel_err_a_norm(&i2, &xs, &xs).unwrap(), 0.0);
    assert_eq!(rel_err_a_norm(&i2, &DVector::zeros(2), &xs).unwrap(), 1.0);
    let a = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
    let ones = DVector::from_element(2, 1.0);
    assert!((rel_err_a_norm(&a, &DVector::zeros(2), &ones).unwrap() - 1.0).abs() < 1e-15);
    assert!(rel_err_a_norm(&a, &ones, &DVector::zeros(2)).is_err());
}

#[test]
fn rejects_non_spd_input() {
    let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
    assert!(matches!(SpdMatrix::new(asym), Err(Error::Constraint(_))));
    let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    assert!(SpdMatrix::new(indefinite).is_err());
    let nan = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
    assert!(SpdMatrix::new(nan).is_err());
}

#[test]
fn spdmat_parse_errors_report_lines() {
    let e = parse_spdmat("spdmat 1 2\n1 0\n0 x\n").unwrap_err();
    assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
    let e = parse_spdmat("spdmat 1 2\n1 0\n").unwrap_err();
    assert!(matches!(e, Error::Parse { .. }), "{e}");
}

#[test]
fn matrix_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate_ensemble(&spec(EnsembleKind::Wishart { n: 6, m: 9 }, 1)).unwrap();
    let path = dir.path().join("a.spdmat");
    write_matrix(&path, &a).unwrap();
    assert_eq!(read_matrix(&path).unwrap(), a);
}

#[test]
fn ensembles_are_reproducible() {
    for kind in [
        EnsembleKind::LinspaceEig { n: 8, kappa_max: 10.0 },
        EnsembleKind::Wishart { n: 8, m: 10 },
    ] {
        let a = generate_ensemble(&spec(kind.clone(), 5)).unwrap();
        let b = generate_ensemble(&spec(kind.clone(), 5)).unwrap();
        let c = generate_ensemble(&spec(kind, 6)).unwrap();
        assert_eq!(a.matrix(), b.matrix());
        assert_ne!(a.matrix(), c.matrix());
    }
}

#[test]
fn linear_system_objective_identities() {
    let a = make_alpha_beta(5, 1.0, 2.0).unwrap();
    let sys = LinearSystem::with_gaussian_rhs(a, 0).unwrap();
    assert!((sys.objective(&sys.x_star) - sys.optimal_value()).abs() < 1e-12);
    assert!(sys.residual(&sys.x_star).norm() < 1e-12);
    let x = DVector::from_element(5, 0.3);
    let gap = sys.objective(&x) - sys.optimal_value();
    let half_err = 0.5 * sys.a.norm_sq(&(&x - &sys.x_star));
    assert!((gap - half_err).abs() < 1e-12);
}

proptest! {
    #[test]
    fn spdmat_text_round_trips_bit_for_bit(n in 1usize..7, m_extra in 0usize..4, seed in 0u64..1000) {
        let a = generate_ensemble(&spec(EnsembleKind::Wishart { n, m: n + m_extra }, seed)).unwrap();
        let back = parse_spdmat(&to_spdmat_string(&a)).unwrap();
        prop_assert_eq!(back.matrix(), a.matrix());
    }

    #[test]
    fn random_ensembles_are_exactly_symmetric(n in 2usize..10, seed in 0u64..1000, kappa in 1.0f64..1e3) {
        let a = generate_ensemble(&spec(EnsembleKind::LinspaceEig { n, kappa_max: kappa }, seed)).unwrap();
        prop_assert_eq!(a.matrix(), &a.matrix().transpose());
        let eig = SortedEigen::new(a.matrix());
        prop_assert!((eig.min() - 1.0).abs() < 1e-9 * kappa);
        prop_assert!((eig.max() - kappa).abs() < 1e-9 * kappa);
    }

    #[test]
    fn rel_err_is_nonnegative(n in 1usize..8, beta in 0.0f64..50.0, s in prop::collection::vec(-5.0f64..5.0, 8)) {
        let a = make_alpha_beta(n, 1.0, beta).unwrap();
        let x = DVector::from_iterator(n, s.iter().copied().take(n));
        let xs = DVector::from_element(n, 1.0);
        prop_assert!(rel_err_a_norm(&a, &x, &xs).unwrap() >= 0.0);
    }
}
