use blockgs::constants::ConstantsSource;
use blockgs::krr::*;
use blockgs::matrices::SpdMatrix;
use blockgs::solvers::SolverKind;
use blockgs::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn solver(kind: SolverKind, sampler: SamplerKind, iters: usize) -> KrrSolverConfig {
    KrrSolverConfig {
        kind,
        sampler,
        block_size: 10,
        constants: ConstantsSource::Exact,
        iters,
        seed: 0,
        threshold: None,
    }
}

#[test]
fn kernel_limits() {
    let data = two_blobs(8, 3, 1).unwrap();
    let k = gaussian_kernel(&data, 1e8).unwrap();
    assert!((k - DMatrix::identity(8, 8)).amax() < 1e-300);
    let mut dup = data.x.clone();
    dup.set_row(1, &data.x.row(0));
    let k = gaussian_kernel(&Dataset::new(dup, data.y.clone()).unwrap(), 0.7).unwrap();
    assert_eq!(k[(0, 1)], 1.0);
}

#[test]
fn kernel_entries_and_psd_slack() {
    let data = two_blobs(60, 4, 2).unwrap();
    let k = gaussian_kernel(&data, 0.25).unwrap();
    assert_eq!(k, k.transpose());
    assert!(k.iter().all(|&v| v > 0.0 && v <= 1.0));
    assert!((0..60).all(|i| k[(i, i)] == 1.0));
    assert!(kernel_psd_slack(&k) <= 1e-8);
}

#[test]
fn csv_round_trip_keeps_counts() {
    let data = two_blobs(100, 3, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("blobs.csv");
    write_dataset_csv(&path, &data).unwrap();
    let back = load_dataset_csv(&path).unwrap();
    assert_eq!((back.len(), back.dim()), (100, 3));
    assert_eq!(back, data);
    assert_eq!(back.y.iter().filter(|&&y| y > 0.0).count(), 50);
}

#[test]
fn csv_allows_comment_lines() {
    let d = parse_dataset_csv("# features then target\n0,1,1\n1,0,-1\n").unwrap();
    assert_eq!(d.len(), 2);
    assert_eq!(d.y.as_slice(), &[1.0, -1.0]);
}

#[test]
fn scalar_system_matches_formula() {
    let data = Dataset::new(DMatrix::from_element(1, 1, 4.0), DVector::from_element(1, 3.0)).unwrap();
    let cfg = KrrConfig { gamma: 2.0, lambda: 0.25, solver: solver(SolverKind::Gs, SamplerKind::Random, 1) };
    let res = krr_solve(&data, &cfg).unwrap();
    assert!((res.alpha[0] - 3.0 / 1.25).abs() < 1e-15);
}

#[test]
fn size_guard() {
    let data = Dataset::new(DMatrix::zeros(MAX_POINTS + 1, 1), DVector::zeros(MAX_POINTS + 1)).unwrap();
    let cfg = KrrConfig::defaults(&data, solver(SolverKind::Gs, SamplerKind::Random, 1));
    let e = krr_solve(&data, &cfg).unwrap_err();
    assert!(matches!(e, Error::Constraint(_)) && e.to_string().contains("out of scope"), "{e}");
}

#[test]
fn invalid_hyperparameters() {
    let data = two_blobs(4, 2, 0).unwrap();
    let mut cfg = KrrConfig::defaults(&data, solver(SolverKind::Gs, SamplerKind::Random, 1));
    cfg.gamma = 0.0;
    assert!(krr_solve(&data, &cfg).is_err());
    cfg.gamma = 1.0;
    cfg.lambda = -1.0;
    assert!(krr_solve(&data, &cfg).is_err());
}

#[test]
fn residual_is_bounded_by_reported_error() {
    let data = two_blobs(80, 5, 3).unwrap();
    for kind in [SolverKind::Gs, SolverKind::AccelGs, SolverKind::Cg] {
        let cfg = KrrConfig::defaults(&data, solver(kind, SamplerKind::Fixed, 200));
        let res = krr_solve(&data, &cfg).unwrap();
        assert!(res.rel_residual <= 10.0 * res.residual_bound, "{kind:?}: {} vs {}", res.rel_residual, res.residual_bound);
        assert_eq!(res.mu.is_some(), kind == SolverKind::AccelGs);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kernel_is_translation_invariant(seed in 0u64..1000, shift in prop::collection::vec(-50.0f64..50.0, 3), gamma in 0.01f64..2.0) {
        let data = two_blobs(12, 3, seed).unwrap();
        let mut moved = data.x.clone();
        for mut row in moved.row_iter_mut() {
            for (v, s) in row.iter_mut().zip(&shift) {
                *v += s;
            }
        }
        let a = gaussian_kernel(&data, gamma).unwrap();
        let b = gaussian_kernel(&Dataset::new(moved, data.y.clone()).unwrap(), gamma).unwrap();
        prop_assert!((a - b).amax() <= 1e-12 * 1e3);
    }

    #[test]
    fn ridge_makes_small_kernels_spd(n in 1usize..50, seed in 0u64..1000, log_lambda in -8.0f64..2.0, gamma in 0.01f64..5.0) {
        let data = two_blobs(n, 4, seed).unwrap();
        let a = regularized_kernel(&data, gamma, 10f64.powf(log_lambda));
        prop_assert!(a.is_ok(), "{:?}", a.err());
        let k = gaussian_kernel(&data, gamma).unwrap();
        prop_assert!(SpdMatrix::new(k + DMatrix::identity(n, n) * 10f64.powf(log_lambda)).is_ok());
    }
}
