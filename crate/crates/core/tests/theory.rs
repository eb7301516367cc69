use inmap_core::theory::{
    default_noise_levels, prediction_gap, thm2_noise_sweep, verify_prop3, verify_thm1,
};
use inmap_core::{build_synthetic_model, PgdConfig, SyntheticSpec};

#[test]
fn gap_bound_is_tight_without_overlap() {
    for seed in 0..5 {
        let spec = SyntheticSpec::new(8, 5, 20, 0.0, 2).with_seed(seed);
        let b = verify_thm1(&build_synthetic_model(&spec).unwrap());
        assert!((b.rhs - 10.0).abs() < 1e-12);
        assert!((b.lhs - b.rhs).abs() < 1e-6, "{b:?}");
        assert!(b.holds);
    }
}

#[test]
fn gap_bound_vanishes_at_full_overlap() {
    let spec = SyntheticSpec::new(8, 5, 20, 1.0, 5).with_seed(2);
    let b = verify_thm1(&build_synthetic_model(&spec).unwrap());
    assert!(b.lhs < 1e-10 && b.rhs.abs() < 1e-10, "{b:?}");
}

#[test]
fn calibration_matters() {
    let spec = SyntheticSpec::new(8, 5, 200, 0.25, 5).with_seed(3).with_full_overlap();
    let model = build_synthetic_model(&spec).unwrap();
    assert!(verify_prop3(&model, 0.01).unwrap() < 1e-10);
    assert!(prediction_gap(&model, 0.01, 0.01) > 1e-3);
}

#[test]
fn calibration_undefined_without_overlap() {
    let spec = SyntheticSpec::new(8, 5, 50, 0.0, 5).with_seed(3).with_full_overlap();
    let model = build_synthetic_model(&spec).unwrap();
    assert!(matches!(verify_prop3(&model, 0.01), Err(inmap_core::Error::Config(_))));
}

#[test]
fn noise_sweep_starts_at_zero() {
    let spec = SyntheticSpec::new(8, 5, 100, 0.5, 2).with_seed(1);
    let cfg = PgdConfig {
        iterations: 200,
        learning_rate: 0.3,
        ..PgdConfig::default()
    };
    let sweep =
        thm2_noise_sweep(&build_synthetic_model(&spec).unwrap(), &default_noise_levels(), &cfg)
            .unwrap();
    assert_eq!(sweep.label_gaps[0], 0.0);
    assert_eq!(sweep.proxy_gaps[0], 0.0);
    assert_eq!(sweep.noise_levels.len(), 11);
    assert!(sweep.label_gaps.windows(2).all(|w| w[1] > w[0]));
}
