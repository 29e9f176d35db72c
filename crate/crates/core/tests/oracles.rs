use hifu_core::verify::{caputo_convergence, constant_heat_error, manufactured_heat_space, manufactured_heat_time, run_suite, VerifyOptions};

#[test]
fn caputo_linear_order() {
    let r = caputo_convergence(0.5, 1, &[128, 256, 512, 1024]).unwrap();
    assert!(r.order >= 1.3, "{r:?}");
}

#[test]
fn heat_spatial_order() {
    let r = manufactured_heat_space(&[15, 30, 60], 0.01, 200).unwrap();
    assert!((1.8..=2.2).contains(&r.order), "{r:?}");
    assert!(r.errors.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn heat_temporal_order() {
    let r = manufactured_heat_time(60, 1.0, &[5, 10, 20, 40]).unwrap();
    assert!((0.8..=1.2).contains(&r.order), "{r:?}");
}

#[test]
fn constant_temperature_is_exact() {
    assert!(constant_heat_error().unwrap() <= 1e-12);
}

#[test]
fn fem_suite_passes() {
    let r = run_suite("fem", &VerifyOptions::default()).unwrap();
    assert!(r.iter().all(|c| c.passed), "{r:?}");
}
