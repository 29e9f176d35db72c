use hifu_core::scenario::{run, ScenarioConfig};

fn config(preset: &str, overrides: &[(&str, &str)]) -> ScenarioConfig {
    let o: Vec<(String, String)> = overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    ScenarioConfig::from_sources(None, Some(preset), &o).unwrap()
}

#[test]
fn zero_data_stays_zero() {
    let cfg = config(
        "example1",
        &[("mesh.h", "0.01"), ("time.steps", "20"), ("excitation.g0", "0"), ("transport.g_tilde", "0"), ("transport.c0", "0")],
    );
    let out = run(&cfg, None).unwrap();
    let b = &out.report.branches[0];
    assert_eq!(b.extra_fixed_point_iterations, 0);
    assert_eq!(b.max_abs_pressure, 0.0);
    assert_eq!(b.max_theta, 0.0);
    assert_eq!(b.mass_whole, 0.0);
    let s = &out.branches[0].state;
    assert_eq!(s.acoustic.p.max_abs(), 0.0);
    assert_eq!(s.concentration.c.max_abs(), 0.0);
}

#[test]
fn snapshots_follow_cadence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("example1", &[("mesh.h", "0.008"), ("time.steps", "100"), ("output.cadence", "25")]);
    let out = run(&cfg, Some(tmp.path())).unwrap();
    assert_eq!(out.report.branches[0].snapshots, vec![25, 50, 75, 100]);
    for k in [25, 50, 75, 100] {
        assert!(tmp.path().join(format!("example1_step{k:06}.vtk")).exists());
    }
    assert!(tmp.path().join("report.json").exists());
}

#[test]
fn paired_branches_share_the_mesh() {
    let cfg = config("example3", &[("mesh.h", "0.01"), ("time.steps", "10")]);
    let out = run(&cfg, None).unwrap();
    assert_eq!(out.branches.len(), 2);
    let none = out.report.branch("no_ultrasound").unwrap();
    assert_eq!(none.max_abs_pressure, 0.0);
    assert_eq!(none.max_theta, 0.0);
    let full = out.report.branch("full").unwrap();
    assert!(full.max_abs_pressure > 0.0);
    assert_eq!(full.initial_mass_whole, none.initial_mass_whole);
    for b in &out.branches {
        assert_eq!(b.state.acoustic.p.len(), out.mesh.num_vertices());
    }
}

#[test]
fn step_counters_agree() {
    let cfg = config("example1", &[("mesh.h", "0.01"), ("time.steps", "7")]);
    let out = run(&cfg, None).unwrap();
    let s = &out.branches[0].state;
    assert_eq!(s.acoustic.step, 7);
    assert_eq!(s.thermal.step, 7);
    assert_eq!(s.concentration.step, 7);
    assert!((s.acoustic.time - 7.0 * cfg.dt).abs() < 1e-20);
}

#[test]
fn heating_is_nonnegative_and_mass_grows_with_inflow() {
    let cfg = config("example1", &[("mesh.h", "0.008"), ("time.steps", "200")]);
    let out = run(&cfg, None).unwrap();
    let b = &out.report.branches[0];
    assert!(b.max_theta > 0.0);
    let s = &out.branches[0].state;
    assert!(s.thermal.theta.iter().all(|t| *t >= -1e-12));
    // inflow only, no sink: m(T) = g̃ |Γ_b| T
    let len = out.mesh.boundary_length(hifu_core::BoundaryTag::GammaB);
    let expect = cfg.transport.g_tilde * len * 200.0 * cfg.dt;
    assert!((b.mass_whole - expect).abs() <= 1e-8 * expect, "{} vs {expect}", b.mass_whole);
}

#[test]
fn default_mesh_matches_reference_size() {
    let cfg = ScenarioConfig::preset("example1").unwrap();
    let mesh = hifu_core::scenario::build_mesh(&cfg).unwrap();
    let n = mesh.num_triangles() as f64;
    assert!((n / 40192.0 - 1.0).abs() <= 0.2, "{n} triangles");
    assert!(mesh.min_angle_deg() >= 20.0);
}
