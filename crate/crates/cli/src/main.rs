use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use hifu_core::kernels::{mittag_leffler, MemoryKernel};
use hifu_core::mesh::{build_domain_mesh, save_mesh};
use hifu_core::output::write_vtk;
use hifu_core::scenario::{self, ScenarioConfig, PRESETS};
use hifu_core::verify::{run_suite, VerifyError, VerifyOptions};
use hifu_core::L1Weights;

/// Ultrasound heating and drug transport simulator.
#[derive(Debug, Parser)]
#[command(name = "hifu", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario from a config file or a preset.
    Run(RunArgs),
    /// Print a preset as a config document, or list the presets.
    Preset(PresetArgs),
    /// Run verification suites and print a pass/fail table.
    Verify(VerifyArgs),
    /// Print memory kernel values, L1 weights or Mittag-Leffler values as CSV.
    Kernel(KernelArgs),
    /// Generate the computational domain mesh.
    Mesh(MeshArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Config document (TOML subset).
    #[arg(long, value_name = "PATH", conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset: example1, example2 or example3.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Override a config key, e.g. `--set mesh.h=0.004` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PresetArgs {
    /// Preset to print; omit to list the available presets.
    name: Option<String>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// kernels, fem, steppers or all.
    #[arg(long, default_value = "all")]
    suite: String,
    /// Also write the results as CSV.
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct KernelArgs {
    /// Kernel family (only `abel` is supported here).
    #[arg(long, default_value = "abel")]
    kind: String,
    /// Fractional order in (0, 1).
    #[arg(long)]
    alpha: Option<f64>,
    /// Print the N+1 L1 weights of step N.
    #[arg(long, value_name = "N", conflicts_with_all = ["ml", "at"])]
    weights: Option<usize>,
    /// Print kernel values at these times (comma separated).
    #[arg(long, value_name = "T,...", value_delimiter = ',', conflicts_with = "ml")]
    at: Vec<f64>,
    /// Evaluate the Mittag-Leffler function E_{a,b}(z).
    #[arg(long, num_args = 3, value_names = ["A", "B", "Z"], allow_negative_numbers = true)]
    ml: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct MeshArgs {
    /// Target edge length in meters.
    #[arg(long)]
    h: f64,
    /// Write the mesh in the native text format.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Write the mesh as a VTK file.
    #[arg(long, value_name = "PATH")]
    vtk: Option<PathBuf>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0} check(s) failed")]
    Verification(usize),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("HIFU_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("HIFU_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(runtime)
}

fn parse_overrides(set: &[String]) -> Result<Vec<(String, String)>, CliError> {
    set.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .filter(|(k, _)| !k.is_empty())
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{s}`")))
        })
        .collect()
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let overrides = parse_overrides(&args.set)?;
    let text = match &args.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?),
        None => None,
    };
    // config errors are the caller's fault
    let cfg = ScenarioConfig::from_sources(text.as_deref(), args.preset.as_deref(), &overrides)
        .and_then(|c| c.validate().map(|_| c))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let outcome = scenario::run(&cfg, Some(&args.out)).map_err(runtime)?;
    let r = &outcome.report;
    println!(
        "{}: {} steps of {:.3e} s on {} triangles ({:.1} s)",
        r.name, r.steps, r.dt, r.mesh.triangles, r.wall_time_s
    );
    println!(
        "{:<20} {:>12} {:>12} {:>10} {:>12} {:>12}",
        "branch", "max |p|", "axis max p", "max theta", "mass", "focal mass"
    );
    for b in &r.branches {
        println!(
            "{:<20} {:>12.4e} {:>12.4e} {:>10.4e} {:>12.4e} {:>12.4e}",
            b.label, b.max_abs_pressure, b.max_axis_pressure, b.max_theta, b.mass_whole, b.mass_focal
        );
    }
    println!("report: {}", args.out.join("report.json").display());
    Ok(())
}

fn cmd_preset(args: PresetArgs) -> Result<(), CliError> {
    match args.name {
        None => {
            for p in PRESETS {
                println!("{p}");
            }
        }
        Some(name) => {
            let cfg = ScenarioConfig::preset(&name).map_err(|e| CliError::Usage(e.to_string()))?;
            print!("{}", cfg.to_toml());
        }
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<(), CliError> {
    let perturb_zeta0 = match std::env::var("HIFU_VERIFY_PERTURB_ZETA0") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("HIFU_VERIFY_PERTURB_ZETA0 must be a number, got `{v}`")))?,
        Err(_) => 0.0,
    };
    let results = run_suite(&args.suite, &VerifyOptions { perturb_zeta0 }).map_err(|e| match e {
        VerifyError::UnknownSuite(_) => CliError::Usage(e.to_string()),
        e => runtime(e),
    })?;
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    println!("{:<9} {:<width$} {:<6} detail", "suite", "check", "result");
    for r in &results {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        println!("{:<9} {:<width$} {:<6} {}", r.suite, r.name, verdict, r.detail);
    }
    if let Some(path) = &args.csv {
        let mut w = csv::Writer::from_path(path).map_err(runtime)?;
        w.write_record(["suite", "check", "passed", "detail"]).map_err(runtime)?;
        for r in &results {
            w.write_record([r.suite.as_str(), r.name.as_str(), if r.passed { "true" } else { "false" }, r.detail.as_str()])
                .map_err(runtime)?;
        }
        w.flush().map_err(runtime)?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::Verification(failed));
    }
    Ok(())
}

/// Shortest round-trip form, switching to exponent notation for extreme magnitudes.
fn num(v: f64) -> String {
    if v == 0.0 || (1e-4..1e15).contains(&v.abs()) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn cmd_kernel(args: KernelArgs) -> Result<(), CliError> {
    let usage = |e: &dyn std::fmt::Display| CliError::Usage(e.to_string());
    if let Some(ml) = &args.ml {
        let (a, b, z) = (ml[0], ml[1], ml[2]);
        let v = mittag_leffler(a, b, z).map_err(|e| usage(&e))?;
        println!("a,b,z,value");
        println!("{},{},{},{}", num(a), num(b), num(z), num(v));
        return Ok(());
    }
    if args.kind != "abel" {
        return Err(CliError::Usage(format!("unsupported kernel kind `{}` (expected abel)", args.kind)));
    }
    let alpha = args.alpha.ok_or_else(|| CliError::Usage("--alpha is required for --kind abel".into()))?;
    let kernel = MemoryKernel::abel(alpha).map_err(|e| usage(&e))?;
    if let Some(n) = args.weights {
        if n == 0 {
            return Err(CliError::Usage("--weights needs N >= 1".into()));
        }
        let w = L1Weights::new(alpha, n - 1).map_err(|e| usage(&e))?;
        println!("j,zeta");
        for (j, z) in w.as_slice().iter().enumerate() {
            println!("{j},{}", num(*z));
        }
        return Ok(());
    }
    if args.at.is_empty() {
        return Err(CliError::Usage("nothing to print: pass --weights N, --at T,... or --ml A B Z".into()));
    }
    println!("t,value");
    for &t in &args.at {
        let v = kernel.eval(t).map_err(|e| usage(&e))?;
        println!("{},{}", num(t), num(v));
    }
    Ok(())
}

fn cmd_mesh(args: MeshArgs) -> Result<(), CliError> {
    if !(args.h > 0.0 && args.h.is_finite()) {
        return Err(CliError::Usage(format!("--h must be positive, got {}", args.h)));
    }
    let mesh = build_domain_mesh(args.h).map_err(runtime)?;
    println!(
        "vertices {} triangles {} min angle {:.2} deg max edge {:.4e} m area {:.6e} m^2",
        mesh.num_vertices(),
        mesh.num_triangles(),
        mesh.min_angle_deg(),
        mesh.max_edge_length(),
        mesh.total_area()
    );
    if let Some(p) = &args.out {
        save_mesh(&mesh, p).map_err(runtime)?;
    }
    if let Some(p) = &args.vtk {
        let x2: Vec<f64> = mesh.vertices().iter().map(|v| v[1]).collect();
        write_vtk(&mesh, &[("x2", x2.as_slice())], p).map_err(runtime)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Preset(a) => cmd_preset(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Kernel(a) => cmd_kernel(a),
        Command::Mesh(a) => cmd_mesh(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
