use std::path::Path;
use std::process::{Command, Output};

fn hifu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hifu")).args(args).output().unwrap()
}

fn hifu_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hifu")).args(args).env(key, value).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn help_matches_golden_files() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let cases: [(&str, &[&str]); 6] = [
        ("hifu", &["--help"]),
        ("run", &["run", "--help"]),
        ("preset", &["preset", "--help"]),
        ("verify", &["verify", "--help"]),
        ("kernel", &["kernel", "--help"]),
        ("mesh", &["mesh", "--help"]),
    ];
    for (name, args) in cases {
        let o = hifu(args);
        assert_eq!(code(&o), 0);
        let golden = std::fs::read_to_string(dir.join(format!("{name}.txt"))).unwrap();
        assert_eq!(stdout(&o), golden, "help for `{name}` drifted");
    }
}

#[test]
fn help_lists_every_run_flag() {
    let text = stdout(&hifu(&["run", "--help"]));
    for flag in ["--config", "--preset", "--set", "--out", "--help"] {
        assert!(text.contains(flag), "{flag}");
    }
}

#[test]
fn kernel_weights_sum() {
    let o = hifu(&["kernel", "--kind", "abel", "--alpha", "0.8", "--weights", "4"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("j,zeta"));
    let w: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(w.len(), 5);
    // Γ(1.2) = 0.2 Γ(0.2)
    let expect = 4f64.powf(0.2) / 0.918_168_742_399_760_6;
    assert!((w.iter().sum::<f64>() - expect).abs() < 1e-12);
}

#[test]
fn kernel_mittag_leffler() {
    let o = hifu(&["kernel", "--ml", "1", "1", "1"]);
    assert_eq!(code(&o), 0);
    let v: f64 = stdout(&o).lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!((v - std::f64::consts::E).abs() < 1e-12);
    let o = hifu(&["kernel", "--ml", "2", "1", "-2.4674011002723395"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn kernel_values() {
    let o = hifu(&["kernel", "--alpha", "0.5", "--at", "1,4"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let v: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    // t^{-1/2}/Γ(1/2)
    let g = std::f64::consts::PI.sqrt();
    assert!((v[0] - 1.0 / g).abs() < 1e-12 && (v[1] - 0.5 / g).abs() < 1e-12);
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&hifu(&["kernel", "--alpha", "1.5", "--weights", "3"])), 1);
    assert_eq!(code(&hifu(&["kernel", "--alpha", "0.5"])), 1);
    assert_eq!(code(&hifu(&["kernel", "--kind", "exp", "--alpha", "0.5", "--weights", "2"])), 1);
    assert_eq!(code(&hifu(&["run", "--preset", "example1", "--config", "x.toml", "--out", "o"])), 1);
    assert_eq!(code(&hifu(&["run", "--out", "o"])), 1);
    assert_eq!(code(&hifu(&["run", "--preset", "example1", "--set", "nonsense", "--out", "o"])), 1);
    assert_eq!(code(&hifu(&["run", "--preset", "example1", "--set", "bogus.key=1", "--out", "o"])), 1);
    assert_eq!(code(&hifu(&["run", "--preset", "example9", "--out", "o"])), 1);
    assert_eq!(code(&hifu(&["preset", "example9"])), 1);
    assert_eq!(code(&hifu(&["verify", "--suite", "nope"])), 1);
    assert_eq!(code(&hifu(&["mesh", "--h", "-1"])), 1);
    assert_eq!(code(&hifu(&["frobnicate"])), 1);
    assert_eq!(code(&hifu_env(&["preset"], "HIFU_THREADS", "zero")), 1);
}

#[test]
fn unwritable_output_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("file");
    std::fs::write(&file, "x").unwrap();
    let out = file.join("sub");
    let o = hifu(&["run", "--preset", "example1", "--set", "mesh.h=0.01", "--set", "time.steps=2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn runtime_failure_exits_2_with_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let o = hifu(&[
        "run",
        "--preset",
        "example1",
        "--set",
        "mesh.h=0.01",
        "--set",
        "time.steps=200",
        "--set",
        "excitation.g0=1e12",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("step"));
    assert!(out.join("example1_failure.json").exists());
    assert!(out.join("example1_failure.vtk").exists());
}

#[test]
fn verify_exit_codes() {
    assert_eq!(code(&hifu(&["verify", "--suite", "kernels"])), 0);
    let o = hifu_env(&["verify", "--suite", "kernels"], "HIFU_VERIFY_PERTURB_ZETA0", "1e-3");
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn verify_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("v.csv");
    assert_eq!(code(&hifu(&["verify", "--suite", "fem", "--csv", p.to_str().unwrap()])), 0);
    let text = std::fs::read_to_string(p).unwrap();
    assert!(text.starts_with("suite,check,passed,detail"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn run_smoke_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r1");
    let o = hifu_env(
        &["run", "--preset", "example1", "--set", "mesh.h=0.006", "--set", "time.steps=100", "--out", out.to_str().unwrap()],
        "HIFU_THREADS",
        "1",
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["steps"], 100);
    assert!(out.join("example1_series.csv").exists());
    assert!(out.join("example1_step000100.vtk").exists());
}

#[test]
fn run_from_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let preset = stdout(&hifu(&["preset", "example3"]));
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, preset).unwrap();
    let out = tmp.path().join("r");
    let o = hifu(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "mesh.h=0.01",
        "--set",
        "time.steps=5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("mass_focal.svg").exists());
}

#[test]
fn mesh_command_writes_files() {
    let tmp = tempfile::tempdir().unwrap();
    let m = tmp.path().join("d.mesh");
    let v = tmp.path().join("d.vtk");
    let o = hifu(&["mesh", "--h", "0.01", "--out", m.to_str().unwrap(), "--vtk", v.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("triangles"));
    let mesh = hifu_core::mesh::load_mesh(&m).unwrap();
    assert!(mesh.num_triangles() > 100);
    assert!(std::fs::read_to_string(v).unwrap().contains("CELL_TYPES"));
}

#[test]
fn preset_list() {
    let o = hifu(&["preset"]);
    assert_eq!(stdout(&o), "example1\nexample2\nexample3\n");
}
