//! Run configuration, the three experiment presets and the coupled
//! pressure → temperature → concentration time loop.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acoustics::{AcousticError, AcousticState, Coupling, Damping, Excitation, NewmarkParams, WesterveltStepper};
use crate::bioheat::{PennesStepper, ThermalError, ThermalState};
use crate::fem::{FemSpace, NodalField};
use crate::materials::{MaterialModel, Perfusion};
use crate::mesh::{build_domain_mesh, load_mesh, BoundaryTag, Mesh, MeshError};
use crate::output::{self, OutputError, PlotStyle, PointLocator, ProbeSeries};
use crate::transport::{
    mass_integral, ConcentrationState, Region, TransportBoundary, TransportError, TransportStepper, VelocityModel,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {message}")]
    InvalidValue { key: String, message: String },
    #[error("invalid config: {field}: {message}")]
    Validation { field: String, message: String },
    #[error("unknown preset `{0}` (expected example1, example2 or example3)")]
    UnknownPreset(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("setup of the {stage} solver failed: {message}")]
    Setup { stage: &'static str, message: String },
    #[error("{label} run failed at step {step}: {message}")]
    Step { label: String, step: usize, message: String },
}

pub type Result<T> = std::result::Result<T, ScenarioError>;

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        field: field.into(),
        message: message.into(),
    }
}

/// Which equations are solved and how they feed back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    Full,
    /// q, b, k stay at their ambient values; the heat equation still runs.
    FrozenTemperature,
    /// k ≡ 0 and ambient coefficients.
    LinearAcoustics,
    /// p ≡ 0: only the concentration equation with v = v0.
    NoUltrasound,
}

impl CouplingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CouplingMode::Full => "full",
            CouplingMode::FrozenTemperature => "frozen_temperature",
            CouplingMode::LinearAcoustics => "linear_acoustics",
            CouplingMode::NoUltrasound => "no_ultrasound",
        }
    }

    pub fn acoustic_coupling(&self) -> Option<Coupling> {
        match self {
            CouplingMode::Full => Some(Coupling {
                temperature_feedback: true,
                nonlinear: true,
            }),
            CouplingMode::FrozenTemperature => Some(Coupling {
                temperature_feedback: false,
                nonlinear: true,
            }),
            CouplingMode::LinearAcoustics => Some(Coupling {
                temperature_feedback: false,
                nonlinear: false,
            }),
            CouplingMode::NoUltrasound => None,
        }
    }
}

impl fmt::Display for CouplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CouplingMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(CouplingMode::Full),
            "frozen_temperature" => Ok(CouplingMode::FrozenTemperature),
            "linear_acoustics" => Ok(CouplingMode::LinearAcoustics),
            "no_ultrasound" => Ok(CouplingMode::NoUltrasound),
            other => Err(format!(
                "unknown coupling mode `{other}` (full, frozen_temperature, linear_acoustics, no_ultrasound)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum MeshSource {
    Generated { h: f64 },
    File(PathBuf),
}

/// Tissue parameters; α₀ is stored per hertz so the attenuation follows the
/// excitation frequency.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaterialConfig {
    pub sound_speed: Vec<f64>,
    pub attenuation_per_hz: f64,
    pub perfusion: Perfusion,
    pub theta_ambient: f64,
    pub rho_a: f64,
    pub rho_b: f64,
    pub c_a: f64,
    pub c_b: f64,
    pub kappa_a: f64,
    pub beta_a: f64,
    pub zeta_tilde: f64,
}

impl MaterialConfig {
    pub fn liver() -> Self {
        let m = MaterialModel::liver(1.0);
        MaterialConfig {
            sound_speed: m.sound_speed,
            attenuation_per_hz: m.alpha0,
            perfusion: m.perfusion,
            theta_ambient: m.theta_ambient,
            rho_a: m.rho_a,
            rho_b: m.rho_b,
            c_a: m.c_a,
            c_b: m.c_b,
            kappa_a: m.kappa_a,
            beta_a: m.beta_a,
            zeta_tilde: m.zeta_tilde,
        }
    }

    pub fn model(&self, frequency: f64) -> MaterialModel {
        MaterialModel {
            sound_speed: self.sound_speed.clone(),
            alpha0: self.attenuation_per_hz * frequency,
            omega: 2.0 * std::f64::consts::PI * frequency,
            perfusion: self.perfusion.clone(),
            theta_ambient: self.theta_ambient,
            rho_a: self.rho_a,
            rho_b: self.rho_b,
            c_a: self.c_a,
            c_b: self.c_b,
            kappa_a: self.kappa_a,
            beta_a: self.beta_a,
            zeta_tilde: self.zeta_tilde,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportConfig {
    pub v0: [f64; 2],
    pub k_d: f64,
    pub d0: f64,
    pub g_tilde: f64,
    /// Outflow rate on Γ_a: Φ_c·n = −rate·c.
    pub outflow: f64,
    pub c0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    /// Snapshots every `cadence` steps, plus `snapshot_steps` and the final step.
    pub cadence: usize,
    pub snapshot_steps: Vec<usize>,
    pub axis_samples: usize,
    pub vtk: bool,
    pub probe_cadence: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub mesh: MeshSource,
    pub material: MaterialConfig,
    pub g0: f64,
    pub frequency: f64,
    pub damping: Damping,
    pub newmark: NewmarkParams,
    pub dt: f64,
    pub t_end: f64,
    pub coupling: CouplingMode,
    pub compare: Option<CouplingMode>,
    pub transport: TransportConfig,
    pub output: OutputConfig,
    pub probes: Vec<[f64; 2]>,
    pub solver_rel_tol: f64,
    pub history_cap_mb: Option<f64>,
}

pub const PRESETS: [&str; 3] = ["example1", "example2", "example3"];

/// Default target edge length of the generated mesh, about 40k triangles.
pub const DEFAULT_H: f64 = 0.00078;

impl ScenarioConfig {
    fn example1() -> Self {
        ScenarioConfig {
            name: "example1".into(),
            mesh: MeshSource::Generated { h: DEFAULT_H },
            material: MaterialConfig::liver(),
            g0: 1e9,
            frequency: 1e5,
            damping: Damping::Fractional { alpha: 0.8 },
            newmark: NewmarkParams::default(),
            dt: 6.67e-8,
            t_end: 1e-4,
            coupling: CouplingMode::Full,
            compare: None,
            transport: TransportConfig {
                v0: [0.0, 0.0],
                k_d: 1e-6,
                d0: 5.0,
                g_tilde: 0.01,
                outflow: 0.0,
                c0: 0.0,
            },
            output: OutputConfig {
                cadence: 500,
                snapshot_steps: vec![500, 750, 1000, 1500],
                axis_samples: 1401,
                vtk: true,
                probe_cadence: 1,
            },
            probes: vec![[0.0, -0.01], [0.0, 0.03], [0.0, 0.06]],
            solver_rel_tol: 1e-12,
            history_cap_mb: Some(4096.0),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "example1" => Ok(Self::example1()),
            "example2" => Ok(ScenarioConfig {
                name: "example2".into(),
                compare: Some(CouplingMode::FrozenTemperature),
                output: OutputConfig {
                    cadence: 250,
                    snapshot_steps: vec![],
                    ..Self::example1().output
                },
                ..Self::example1()
            }),
            "example3" => Ok(ScenarioConfig {
                name: "example3".into(),
                dt: 1e-6,
                t_end: 5e-4,
                compare: Some(CouplingMode::NoUltrasound),
                transport: TransportConfig {
                    v0: [0.0, 10.0],
                    k_d: 1e-6,
                    d0: 5.0,
                    g_tilde: 5e-3,
                    outflow: 100.0,
                    c0: 1e-4,
                },
                output: OutputConfig {
                    cadence: 100,
                    snapshot_steps: vec![],
                    ..Self::example1().output
                },
                ..Self::example1()
            }),
            other => Err(ScenarioError::UnknownPreset(other.into())),
        }
    }

    /// Number of time steps, ⌈T/τ⌉ with a small guard against round-off.
    pub fn steps(&self) -> usize {
        ((self.t_end / self.dt) - 1e-6).ceil().max(1.0) as usize
    }

    pub fn excitation(&self) -> Excitation {
        Excitation::new(self.g0, self.frequency)
    }

    pub fn material_model(&self) -> MaterialModel {
        self.material.model(self.frequency)
    }

    pub fn velocity_model(&self) -> VelocityModel {
        VelocityModel {
            v0: self.transport.v0,
            k_d: self.transport.k_d,
            d0: self.transport.d0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("time.dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= self.dt * (1.0 - 1e-9)) || !self.t_end.is_finite() {
            return Err(invalid("time.t_end", format!("must be at least dt = {}", self.dt)));
        }
        if let MeshSource::Generated { h } = self.mesh {
            if !(h > 0.0 && h <= 0.02) {
                return Err(invalid("mesh.h", format!("must be in (0, 0.02], got {h}")));
            }
        }
        if !(self.frequency > 0.0) {
            return Err(invalid("excitation.frequency", "must be positive"));
        }
        if !self.g0.is_finite() {
            return Err(invalid("excitation.g0", "must be finite"));
        }
        self.newmark.validate().map_err(|e| invalid("newmark", e.to_string()))?;
        self.damping.validate().map_err(|e| invalid("kernel", e.to_string()))?;
        self.material_model().validate().map_err(|e| invalid("material", e.to_string()))?;
        self.velocity_model().validate().map_err(|e| invalid("transport", e.to_string()))?;
        if !(self.transport.outflow >= 0.0) {
            return Err(invalid("transport.outflow", "must be nonnegative"));
        }
        if !self.transport.c0.is_finite() || !self.transport.g_tilde.is_finite() {
            return Err(invalid("transport", "c0 and g_tilde must be finite"));
        }
        if self.output.cadence == 0 || self.output.probe_cadence == 0 {
            return Err(invalid("output", "cadences must be at least 1"));
        }
        if self.output.axis_samples < 2 {
            return Err(invalid("output.axis_samples", "need at least 2"));
        }
        if self.compare == Some(self.coupling) {
            return Err(invalid("coupling.compare", "must differ from coupling.mode"));
        }
        if !(self.solver_rel_tol > 0.0 && self.solver_rel_tol <= 1e-3) {
            return Err(invalid("solver.rel_tol", "must be in (0, 1e-3]"));
        }
        if self.history_cap_mb.is_some_and(|c| !(c > 0.0)) {
            return Err(invalid("history.cap_mb", "must be positive"));
        }
        Ok(())
    }

    /// Parses a TOML document. The optional top-level `preset` key selects
    /// the base; without it `time.dt` and one of `time.t_end`/`time.steps`
    /// are required.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_sources(Some(text), None, &[])
    }

    /// Builds a config from an optional document, an optional preset and
    /// `key=value` overrides applied last.
    pub fn from_sources(text: Option<&str>, preset: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut entries = BTreeMap::new();
        if let Some(text) = text {
            let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ScenarioError::Parse(e.to_string()))?;
            flatten("", &toml::Value::Table(table), &mut entries);
        }
        let doc_preset = match entries.remove("preset") {
            Some(toml::Value::String(s)) => Some(s),
            Some(_) => return Err(ScenarioError::InvalidValue { key: "preset".into(), message: "expected a string".into() }),
            None => None,
        };
        for (k, v) in overrides {
            entries.insert(k.clone(), parse_override(v));
        }
        let base_name = preset.map(str::to_string).or(doc_preset);
        let mut cfg = match &base_name {
            Some(name) => Self::preset(name)?,
            None => {
                if !entries.contains_key("time.dt") {
                    return Err(invalid("time.dt", "missing (required without a preset)"));
                }
                if !entries.contains_key("time.t_end") && !entries.contains_key("time.steps") {
                    return Err(invalid("time.t_end", "missing (set time.t_end or time.steps)"));
                }
                ScenarioConfig {
                    name: "custom".into(),
                    ..Self::example1()
                }
            }
        };
        // dt first so that t_end and steps see the final step size
        let time_t_end = entries.remove("time.t_end");
        let time_steps = entries.remove("time.steps");
        if let Some(v) = entries.remove("time.dt") {
            cfg.dt = as_f64("time.dt", &v)?;
        }
        if let Some(v) = time_t_end {
            cfg.t_end = as_f64("time.t_end", &v)?;
        }
        if let Some(v) = time_steps {
            let n = as_usize("time.steps", &v)?;
            if n == 0 {
                return Err(invalid("time.steps", "must be at least 1"));
            }
            cfg.t_end = n as f64 * cfg.dt;
        }
        let mut alpha = None;
        let mut kind = None;
        for (key, value) in &entries {
            match key.as_str() {
                "kernel.alpha" => alpha = Some(as_f64(key, value)?),
                "kernel.kind" => kind = Some(as_str(key, value)?),
                _ => cfg.apply(key, value)?,
            }
        }
        if kind.is_some() || alpha.is_some() {
            let current_alpha = match cfg.damping {
                Damping::Fractional { alpha } => alpha,
                _ => 0.8,
            };
            let kind = kind.unwrap_or_else(|| match cfg.damping {
                Damping::Fractional { .. } => "abel".into(),
                Damping::Strong => "dirac".into(),
                Damping::None => "none".into(),
            });
            cfg.damping = match kind.as_str() {
                "abel" => Damping::Fractional {
                    alpha: alpha.unwrap_or(current_alpha),
                },
                "dirac" => Damping::Strong,
                "none" => Damping::None,
                other => {
                    return Err(ScenarioError::InvalidValue {
                        key: "kernel.kind".into(),
                        message: format!("`{other}` (expected abel, dirac or none)"),
                    })
                }
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, v: &toml::Value) -> Result<()> {
        match key {
            "name" => self.name = as_str(key, v)?,
            "mesh.h" => self.mesh = MeshSource::Generated { h: as_f64(key, v)? },
            "mesh.file" => self.mesh = MeshSource::File(PathBuf::from(as_str(key, v)?)),
            "material.sound_speed" => self.material.sound_speed = as_f64_vec(key, v)?,
            "material.attenuation_per_hz" => self.material.attenuation_per_hz = as_f64(key, v)?,
            "material.perfusion" => self.material.perfusion = Perfusion::polynomial(as_f64_vec(key, v)?),
            "material.perfusion_gaussian" => {
                let g = as_f64_vec(key, v)?;
                if g.len() != 6 {
                    return Err(ScenarioError::InvalidValue {
                        key: key.into(),
                        message: "expected [a1, a2, a3, a4, s0, s1]".into(),
                    });
                }
                self.material.perfusion = Perfusion::gaussian(g[0], g[1], g[2], g[3], (g[4], g[5]));
            }
            "material.theta_ambient" => self.material.theta_ambient = as_f64(key, v)?,
            "material.rho_a" => self.material.rho_a = as_f64(key, v)?,
            "material.rho_b" => self.material.rho_b = as_f64(key, v)?,
            "material.c_a" => self.material.c_a = as_f64(key, v)?,
            "material.c_b" => self.material.c_b = as_f64(key, v)?,
            "material.kappa_a" => self.material.kappa_a = as_f64(key, v)?,
            "material.beta_a" => self.material.beta_a = as_f64(key, v)?,
            "material.zeta_tilde" => self.material.zeta_tilde = as_f64(key, v)?,
            "excitation.g0" => self.g0 = as_f64(key, v)?,
            "excitation.frequency" => self.frequency = as_f64(key, v)?,
            "newmark.beta" => self.newmark.beta = as_f64(key, v)?,
            "newmark.gamma" => self.newmark.gamma = as_f64(key, v)?,
            "newmark.tol" => self.newmark.tol = as_f64(key, v)?,
            "newmark.max_iters" => self.newmark.max_iters = as_usize(key, v)?,
            "coupling.mode" => self.coupling = as_mode(key, v)?,
            "coupling.compare" => {
                let s = as_str(key, v)?;
                self.compare = if s == "none" {
                    None
                } else {
                    Some(s.parse().map_err(|m| ScenarioError::InvalidValue { key: key.into(), message: m })?)
                };
            }
            "transport.v0" => {
                let x = as_f64_vec(key, v)?;
                if x.len() != 2 {
                    return Err(ScenarioError::InvalidValue {
                        key: key.into(),
                        message: "expected two components".into(),
                    });
                }
                self.transport.v0 = [x[0], x[1]];
            }
            "transport.k_d" => self.transport.k_d = as_f64(key, v)?,
            "transport.d0" => self.transport.d0 = as_f64(key, v)?,
            "transport.g_tilde" => self.transport.g_tilde = as_f64(key, v)?,
            "transport.outflow" => self.transport.outflow = as_f64(key, v)?,
            "transport.c0" => self.transport.c0 = as_f64(key, v)?,
            "output.cadence" => self.output.cadence = as_usize(key, v)?,
            "output.snapshot_steps" => {
                let xs = match v {
                    toml::Value::Array(a) => a.iter().map(|x| as_usize(key, x)).collect::<Result<Vec<_>>>()?,
                    _ => return Err(type_error(key, "an array of step indices")),
                };
                self.output.snapshot_steps = xs;
            }
            "output.axis_samples" => self.output.axis_samples = as_usize(key, v)?,
            "output.vtk" => {
                self.output.vtk = v.as_bool().ok_or_else(|| type_error(key, "a boolean"))?;
            }
            "output.probe_cadence" => self.output.probe_cadence = as_usize(key, v)?,
            "probes.points" => {
                let pts = match v {
                    toml::Value::Array(a) => a
                        .iter()
                        .map(|p| {
                            let x = as_f64_vec(key, p)?;
                            if x.len() == 2 {
                                Ok([x[0], x[1]])
                            } else {
                                Err(type_error(key, "points as [x1, x2]"))
                            }
                        })
                        .collect::<Result<Vec<_>>>()?,
                    _ => return Err(type_error(key, "an array of [x1, x2] points")),
                };
                self.probes = pts;
            }
            "solver.rel_tol" => self.solver_rel_tol = as_f64(key, v)?,
            "history.cap_mb" => {
                let c = as_f64(key, v)?;
                self.history_cap_mb = if c == 0.0 { None } else { Some(c) };
            }
            _ => return Err(ScenarioError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// TOML rendering that [`ScenarioConfig::parse`] reads back unchanged.
    pub fn to_toml(&self) -> String {
        use std::fmt::Write as _;
        let f = |x: f64| format!("{x:e}");
        let list = |xs: &[f64]| format!("[{}]", xs.iter().map(|x| f(*x)).collect::<Vec<_>>().join(", "));
        let mut s = String::new();
        let _ = writeln!(s, "name = {:?}\n", self.name);
        s.push_str("[mesh]\n");
        match &self.mesh {
            MeshSource::Generated { h } => {
                let _ = writeln!(s, "h = {}", f(*h));
            }
            MeshSource::File(p) => {
                let _ = writeln!(s, "file = {:?}", p.display().to_string());
            }
        }
        let m = &self.material;
        let _ = writeln!(s, "\n[material]\nsound_speed = {}", list(&m.sound_speed));
        let _ = writeln!(s, "attenuation_per_hz = {}", f(m.attenuation_per_hz));
        match &m.perfusion {
            Perfusion::Polynomial { coeffs } => {
                let _ = writeln!(s, "perfusion = {}", list(coeffs));
            }
            Perfusion::Gaussian { a1, a2, a3, a4, s0, s1 } => {
                let _ = writeln!(s, "perfusion_gaussian = {}", list(&[*a1, *a2, *a3, *a4, *s0, *s1]));
            }
        }
        for (k, v) in [
            ("theta_ambient", m.theta_ambient),
            ("rho_a", m.rho_a),
            ("rho_b", m.rho_b),
            ("c_a", m.c_a),
            ("c_b", m.c_b),
            ("kappa_a", m.kappa_a),
            ("beta_a", m.beta_a),
            ("zeta_tilde", m.zeta_tilde),
        ] {
            let _ = writeln!(s, "{k} = {}", f(v));
        }
        let _ = writeln!(s, "\n[excitation]\ng0 = {}\nfrequency = {}", f(self.g0), f(self.frequency));
        match self.damping {
            Damping::Fractional { alpha } => {
                let _ = writeln!(s, "\n[kernel]\nkind = \"abel\"\nalpha = {}", f(alpha));
            }
            Damping::Strong => s.push_str("\n[kernel]\nkind = \"dirac\"\n"),
            Damping::None => s.push_str("\n[kernel]\nkind = \"none\"\n"),
        }
        let n = &self.newmark;
        let _ = writeln!(
            s,
            "\n[newmark]\nbeta = {}\ngamma = {}\ntol = {}\nmax_iters = {}",
            f(n.beta),
            f(n.gamma),
            f(n.tol),
            n.max_iters
        );
        let _ = writeln!(s, "\n[time]\ndt = {}\nt_end = {}", f(self.dt), f(self.t_end));
        let _ = writeln!(
            s,
            "\n[coupling]\nmode = \"{}\"\ncompare = \"{}\"",
            self.coupling,
            self.compare.map_or("none", |c| c.as_str())
        );
        let t = &self.transport;
        let _ = writeln!(
            s,
            "\n[transport]\nv0 = {}\nk_d = {}\nd0 = {}\ng_tilde = {}\noutflow = {}\nc0 = {}",
            list(&t.v0),
            f(t.k_d),
            f(t.d0),
            f(t.g_tilde),
            f(t.outflow),
            f(t.c0)
        );
        let o = &self.output;
        let steps: Vec<String> = o.snapshot_steps.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(
            s,
            "\n[output]\ncadence = {}\nsnapshot_steps = [{}]\naxis_samples = {}\nvtk = {}\nprobe_cadence = {}",
            o.cadence,
            steps.join(", "),
            o.axis_samples,
            o.vtk,
            o.probe_cadence
        );
        let pts: Vec<String> = self.probes.iter().map(|p| list(p)).collect();
        let _ = writeln!(s, "\n[probes]\npoints = [{}]", pts.join(", "));
        let _ = writeln!(s, "\n[solver]\nrel_tol = {}", f(self.solver_rel_tol));
        let _ = writeln!(s, "\n[history]\ncap_mb = {}", f(self.history_cap_mb.unwrap_or(0.0)));
        s
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut BTreeMap<String, toml::Value>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

/// Reads an override value as TOML, falling back to a bare string.
fn parse_override(text: &str) -> toml::Value {
    format!("v = {text}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

fn type_error(key: &str, expected: &str) -> ScenarioError {
    ScenarioError::InvalidValue {
        key: key.into(),
        message: format!("expected {expected}"),
    }
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(x) => Ok(*x),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(type_error(key, "a number")),
    }
}

fn as_usize(key: &str, v: &toml::Value) -> Result<usize> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(type_error(key, "a nonnegative integer")),
    }
}

fn as_str(key: &str, v: &toml::Value) -> Result<String> {
    v.as_str().map(str::to_string).ok_or_else(|| type_error(key, "a string"))
}

fn as_f64_vec(key: &str, v: &toml::Value) -> Result<Vec<f64>> {
    match v {
        toml::Value::Array(a) => a.iter().map(|x| as_f64(key, x)).collect(),
        _ => Err(type_error(key, "an array of numbers")),
    }
}

fn as_mode(key: &str, v: &toml::Value) -> Result<CouplingMode> {
    as_str(key, v)?
        .parse()
        .map_err(|m| ScenarioError::InvalidValue { key: key.into(), message: m })
}

/// Fields of one branch at a snapshot.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a> {
    pub label: &'a str,
    pub step: usize,
    pub time: f64,
    pub mesh: &'a Mesh,
    pub p: &'a [f64],
    pub theta: &'a [f64],
    pub c: &'a [f64],
}

/// Receives field snapshots during a run.
pub trait OutputSink {
    fn snapshot(&mut self, snap: &Snapshot<'_>) -> std::result::Result<(), OutputError>;
}

/// Discards snapshots.
pub struct NullSink;

impl OutputSink for NullSink {
    fn snapshot(&mut self, _: &Snapshot<'_>) -> std::result::Result<(), OutputError> {
        Ok(())
    }
}

/// Writes `<label>_step<NNNNNN>.vtk` files into a directory.
pub struct VtkDirectorySink {
    pub dir: PathBuf,
}

impl OutputSink for VtkDirectorySink {
    fn snapshot(&mut self, s: &Snapshot<'_>) -> std::result::Result<(), OutputError> {
        let path = self.dir.join(format!("{}_step{:06}.vtk", s.label, s.step));
        output::write_vtk(s.mesh, &[("p", s.p), ("theta", s.theta), ("c", s.c)], path)
    }
}

/// Acoustic, thermal and concentration state on one clock.
#[derive(Debug, Clone)]
pub struct CoupledState {
    pub acoustic: AcousticState,
    pub thermal: ThermalState,
    pub concentration: ConcentrationState,
}

impl CoupledState {
    pub fn step(&self) -> usize {
        self.concentration.step
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BranchReport {
    pub label: String,
    pub mode: Option<CouplingMode>,
    pub steps: usize,
    pub final_time: f64,
    pub fixed_point_iterations: usize,
    /// Iterations beyond the first solve, summed over steps.
    pub extra_fixed_point_iterations: usize,
    pub max_fixed_point_iterations: usize,
    pub linear_iterations: usize,
    pub nonmonotone_steps: usize,
    pub max_abs_pressure: f64,
    /// Largest axis-slice pressure seen at any step.
    pub max_axis_pressure: f64,
    /// (x2, p) of the axis maximum at the final step.
    pub final_axis_peak: Option<(f64, f64)>,
    /// x2 of the leading axis peak at the final step.
    pub leading_peak_x2: Option<f64>,
    pub max_theta: f64,
    pub max_theta_node: usize,
    pub mass_whole: f64,
    pub mass_focal: f64,
    pub initial_mass_whole: f64,
    pub initial_mass_focal: f64,
    pub max_cfl: f64,
    pub max_peclet: f64,
    pub probe_pressure: Vec<f64>,
    pub snapshots: Vec<usize>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MeshSummary {
    pub vertices: usize,
    pub triangles: usize,
    pub min_angle_deg: f64,
    pub max_edge_length: f64,
}

/// Machine-readable summary of a run (written as `report.json`).
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunReport {
    pub name: String,
    pub dt: f64,
    pub steps: usize,
    pub mesh: MeshSummary,
    pub branches: Vec<BranchReport>,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn branch(&self, label: &str) -> Option<&BranchReport> {
        self.branches.iter().find(|b| b.label == label)
    }
}

/// Everything a branch produced besides its report.
#[derive(Debug, Clone)]
pub struct BranchResult {
    pub report: BranchReport,
    pub series: Vec<ProbeSeries>,
    /// Pressure axis slices at snapshot steps.
    pub axis: Vec<(usize, Vec<(f64, Option<f64>)>)>,
    pub state: CoupledState,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub branches: Vec<BranchResult>,
    pub mesh: Arc<Mesh>,
}

/// Fraction of the axis maximum a local peak needs to count as leading.
pub const LEADING_PEAK_FRACTION: f64 = 0.5;

pub fn build_mesh(cfg: &ScenarioConfig) -> Result<Mesh> {
    Ok(match &cfg.mesh {
        MeshSource::Generated { h } => build_domain_mesh(*h)?,
        MeshSource::File(p) => load_mesh(p)?,
    })
}

/// Runs the configured branches (two when `compare` is set, concurrently)
/// and, with `out_dir`, writes snapshots, series, axis slices and the report.
pub fn run(cfg: &ScenarioConfig, out_dir: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let mesh = Arc::new(build_mesh(cfg)?);
    run_on_mesh(cfg, mesh, out_dir, start)
}

pub fn run_on_mesh(cfg: &ScenarioConfig, mesh: Arc<Mesh>, out_dir: Option<&Path>, start: Instant) -> Result<RunOutcome> {
    if !mesh.has_tag(BoundaryTag::GammaB) {
        return Err(invalid("mesh", "no GammaB boundary"));
    }
    if cfg.transport.outflow > 0.0 && !mesh.has_tag(BoundaryTag::GammaA) {
        return Err(invalid("transport.outflow", "mesh has no GammaA boundary"));
    }
    let space = Arc::new(FemSpace::new(mesh.clone()));
    let mut modes = vec![cfg.coupling];
    modes.extend(cfg.compare);
    let results: Vec<Result<BranchResult>> = if modes.len() == 1 {
        vec![run_branch(cfg, &space, modes[0], out_dir)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = modes
                .iter()
                .map(|&m| {
                    let space = &space;
                    s.spawn(move || run_branch(cfg, space, m, out_dir))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("branch thread panicked")).collect()
        })
    };
    let branches = results.into_iter().collect::<Result<Vec<_>>>()?;
    let report = RunReport {
        name: cfg.name.clone(),
        dt: cfg.dt,
        steps: cfg.steps(),
        mesh: MeshSummary {
            vertices: mesh.num_vertices(),
            triangles: mesh.num_triangles(),
            min_angle_deg: mesh.min_angle_deg(),
            max_edge_length: mesh.max_edge_length(),
        },
        branches: branches.iter().map(|b| b.report.clone()).collect(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out_dir {
        write_outputs(dir, &report, &branches)?;
    }
    Ok(RunOutcome { report, branches, mesh })
}

fn write_outputs(dir: &Path, report: &RunReport, branches: &[BranchResult]) -> Result<()> {
    for b in branches {
        output::write_csv(&b.series, dir.join(format!("{}_series.csv", b.report.label)))?;
        if !b.axis.is_empty() {
            write_axis_csv(&b.axis, dir.join(format!("{}_axis.csv", b.report.label)))?;
        }
    }
    let mass: Vec<ProbeSeries> = branches
        .iter()
        .flat_map(|b| {
            b.series
                .iter()
                .filter(|s| s.name == "mass_focal" || s.name == "mass_whole")
                .map(|s| ProbeSeries {
                    name: format!("{} {}", b.report.label, s.name),
                    ..s.clone()
                })
        })
        .collect();
    let same_axis = mass.windows(2).all(|w| w[0].times == w[1].times);
    if !mass.is_empty() && same_axis {
        for which in ["mass_whole", "mass_focal"] {
            let sel: Vec<ProbeSeries> = mass.iter().filter(|s| s.name.ends_with(which)).cloned().collect();
            let style = PlotStyle {
                title: format!("{} {which}", report.name),
                y_label: "mass [kg/m]".into(),
                ..Default::default()
            };
            output::write_svg_lineplot(&sel, dir.join(format!("{which}.svg")), &style)?;
        }
    }
    let json = serde_json::to_string_pretty(report).map_err(|e| ScenarioError::Io(e.into()))?;
    fs::write(dir.join("report.json"), json + "\n")?;
    Ok(())
}

fn write_axis_csv(axis: &[(usize, Vec<(f64, Option<f64>)>)], path: PathBuf) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(OutputError::from)?;
    let mut header = vec!["x2".to_string()];
    header.extend(axis.iter().map(|(s, _)| format!("p_step{s}")));
    w.write_record(&header).map_err(OutputError::from)?;
    for i in 0..axis[0].1.len() {
        let mut rec = vec![format!("{:.16e}", axis[0].1[i].0)];
        rec.extend(axis.iter().map(|(_, sl)| sl[i].1.map_or(String::new(), |v| format!("{v:.16e}"))));
        w.write_record(&rec).map_err(OutputError::from)?;
    }
    w.flush()?;
    Ok(())
}

fn branch_label(cfg: &ScenarioConfig, mode: CouplingMode) -> String {
    if cfg.compare.is_some() {
        mode.as_str().to_string()
    } else {
        cfg.name.clone()
    }
}

fn snapshot_due(cfg: &ScenarioConfig, step: usize, last: usize) -> bool {
    step.is_multiple_of(cfg.output.cadence) || cfg.output.snapshot_steps.contains(&step) || step == last
}

fn write_failure(dir: &Path, label: &str, mesh: &Mesh, state: &CoupledState, step: usize, message: &str) {
    let vtk = output::write_vtk(
        mesh,
        &[
            ("p", &state.acoustic.p),
            ("theta", &state.thermal.theta),
            ("c", &state.concentration.c),
        ],
        dir.join(format!("{label}_failure.vtk")),
    );
    let info = serde_json::json!({ "label": label, "step": step, "error": message });
    let json = fs::write(
        dir.join(format!("{label}_failure.json")),
        serde_json::to_string_pretty(&info).unwrap_or_default() + "\n",
    );
    if vtk.is_err() || json.is_err() {
        log::error!("could not write failure diagnostics for {label}");
    }
}

struct Steppers {
    wave: Option<WesterveltStepper>,
    heat: Option<PennesStepper>,
    transport: TransportStepper,
}

fn setup_err(stage: &'static str) -> impl Fn(String) -> ScenarioError {
    move |message| ScenarioError::Setup { stage, message }
}

fn build_steppers(cfg: &ScenarioConfig, space: &Arc<FemSpace>, mode: CouplingMode) -> Result<Steppers> {
    let model = cfg.material_model();
    let (wave, heat) = match mode.acoustic_coupling() {
        Some(coupling) => {
            let mut w = WesterveltStepper::new(
                space.clone(),
                model.clone(),
                cfg.excitation(),
                cfg.newmark,
                cfg.damping,
                coupling,
                cfg.dt,
            )
            .map_err(|e| setup_err("pressure")(e.to_string()))?
            .with_solver_tolerance(cfg.solver_rel_tol);
            if let Some(cap) = cfg.history_cap_mb {
                w = w.with_history_cap((cap * 1048576.0) as usize);
            }
            let h = PennesStepper::new(space.clone(), model, cfg.dt).map_err(|e| setup_err("heat")(e.to_string()))?;
            (Some(w), Some(h))
        }
        None => (None, None),
    };
    let transport = TransportStepper::new(
        space.clone(),
        cfg.velocity_model(),
        TransportBoundary {
            inflow: cfg.transport.g_tilde,
            outflow_rate: cfg.transport.outflow,
        },
        cfg.dt,
    )
    .map_err(|e| setup_err("transport")(e.to_string()))?;
    Ok(Steppers { wave, heat, transport })
}

#[derive(Debug, Error)]
enum StepFailure {
    #[error(transparent)]
    Acoustic(#[from] AcousticError),
    #[error(transparent)]
    Thermal(#[from] ThermalError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Output(#[from] OutputError),
}

/// One branch of a run on a shared space.
pub fn run_branch(
    cfg: &ScenarioConfig,
    space: &Arc<FemSpace>,
    mode: CouplingMode,
    out_dir: Option<&Path>,
) -> Result<BranchResult> {
    let mut sink: Box<dyn OutputSink> = match out_dir {
        Some(dir) if cfg.output.vtk => Box::new(VtkDirectorySink { dir: dir.to_path_buf() }),
        _ => Box::new(NullSink),
    };
    run_branch_with_sink(cfg, space, mode, out_dir, sink.as_mut())
}

pub fn run_branch_with_sink(
    cfg: &ScenarioConfig,
    space: &Arc<FemSpace>,
    mode: CouplingMode,
    out_dir: Option<&Path>,
    sink: &mut dyn OutputSink,
) -> Result<BranchResult> {
    let start = Instant::now();
    let label = branch_label(cfg, mode);
    let mesh = space.mesh().clone();
    let n = space.dim();
    let steps = cfg.steps();
    let mut st = build_steppers(cfg, space, mode)?;
    let mut state = CoupledState {
        acoustic: AcousticState::zeros(n),
        thermal: ThermalState::zeros(n),
        concentration: ConcentrationState::uniform(n, cfg.transport.c0),
    };
    let locator = PointLocator::new(&mesh);
    let (y_lo, y_hi) = output::vertical_extent(&mesh);
    let mut report = BranchReport {
        label: label.clone(),
        mode: Some(mode),
        initial_mass_whole: mass_integral(space, &state.concentration.c, Region::Whole),
        initial_mass_focal: mass_integral(space, &state.concentration.c, Region::FOCAL),
        ..Default::default()
    };
    let names = ["p_max", "theta_max", "mass_whole", "mass_focal"];
    let mut series: Vec<ProbeSeries> = names.iter().map(|s| ProbeSeries::new(*s)).collect();
    series.extend((0..cfg.probes.len()).map(|i| ProbeSeries::new(format!("probe{i}_p"))));
    let mut axis = Vec::new();
    let zero_grad = vec![[0.0; 2]; mesh.num_triangles()];
    let theta0 = vec![0.0; n];

    if let Some(w) = st.wave.as_mut() {
        w.initialize(&mut state.acoustic, &theta0).map_err(|e| ScenarioError::Step {
            label: label.clone(),
            step: 0,
            message: e.to_string(),
        })?;
    }

    for k in 1..=steps {
        let outcome: std::result::Result<(), StepFailure> = (|| {
            if let (Some(w), Some(h)) = (st.wave.as_mut(), st.heat.as_ref()) {
                // θ^n drives the pressure step; p_t^{n+1} drives the heat step
                debug_assert_eq!(state.thermal.step, state.acoustic.step);
                let info = w.step(&mut state.acoustic, &state.thermal.theta)?;
                report.fixed_point_iterations += info.iterations;
                report.extra_fixed_point_iterations += info.iterations.saturating_sub(1);
                report.max_fixed_point_iterations = report.max_fixed_point_iterations.max(info.iterations);
                report.linear_iterations += info.linear_iterations;
                if !info.monotone() {
                    report.nonmonotone_steps += 1;
                }
                debug_assert_eq!(state.thermal.step + 1, state.acoustic.step);
                h.step(&mut state.thermal, &state.acoustic.p_t, None, None)?;
            } else {
                state.acoustic.step = k;
                state.acoustic.time = k as f64 * cfg.dt;
                state.thermal.step = k;
                state.thermal.time = k as f64 * cfg.dt;
            }
            let grad = if st.wave.is_some() {
                space.element_gradient(&state.acoustic.p)
            } else {
                zero_grad.clone()
            };
            let tinfo = st.transport.step(&mut state.concentration, &grad, None)?;
            report.max_cfl = report.max_cfl.max(tinfo.cfl);
            report.max_peclet = report.max_peclet.max(tinfo.peclet);
            Ok(())
        })();
        if let Err(e) = outcome {
            let message = e.to_string();
            if let Some(dir) = out_dir {
                write_failure(dir, &label, &mesh, &state, k, &message);
            }
            return Err(ScenarioError::Step { label, step: k, message });
        }
        let t = k as f64 * cfg.dt;
        report.max_abs_pressure = report.max_abs_pressure.max(state.acoustic.p.max_abs());
        let slice = output::axis_slice_range(&mesh, &locator, &state.acoustic.p, y_lo, y_hi, cfg.output.axis_samples)?;
        if let Some((_, v)) = output::slice_max(&slice) {
            report.max_axis_pressure = report.max_axis_pressure.max(v);
        }
        if k % cfg.output.probe_cadence == 0 || k == steps {
            let whole = mass_integral(space, &state.concentration.c, Region::Whole);
            let focal = mass_integral(space, &state.concentration.c, Region::FOCAL);
            let (tmax, _) = state.thermal.max_probe();
            let mut vals = vec![state.acoustic.p.max_abs(), tmax, whole, focal];
            vals.extend(
                cfg.probes
                    .iter()
                    .map(|&x| locator.interpolate(&mesh, &state.acoustic.p, x).unwrap_or(f64::NAN)),
            );
            for (s, v) in series.iter_mut().zip(vals) {
                s.push(t, v)?;
            }
        }
        if snapshot_due(cfg, k, steps) {
            sink.snapshot(&Snapshot {
                label: &label,
                step: k,
                time: t,
                mesh: &mesh,
                p: &state.acoustic.p,
                theta: &state.thermal.theta,
                c: &state.concentration.c,
            })?;
            report.snapshots.push(k);
            axis.push((k, slice.clone()));
        }
        if k == steps {
            report.final_axis_peak = output::slice_max(&slice);
            report.leading_peak_x2 = output::leading_peak(&slice, LEADING_PEAK_FRACTION).map(|(y, _)| y);
        }
    }
    report.steps = steps;
    report.final_time = state.concentration.time;
    let (tmax, node) = state.thermal.max_probe();
    report.max_theta = tmax;
    report.max_theta_node = node;
    report.mass_whole = mass_integral(space, &state.concentration.c, Region::Whole);
    report.mass_focal = mass_integral(space, &state.concentration.c, Region::FOCAL);
    report.probe_pressure = cfg
        .probes
        .iter()
        .map(|&x| locator.interpolate(&mesh, &state.acoustic.p, x).unwrap_or(f64::NAN))
        .collect();
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(BranchResult {
        report,
        series,
        axis,
        state,
    })
}

/// Nodal field helper for callers that build custom initial data.
pub fn constant_field(space: &FemSpace, value: f64) -> NodalField {
    NodalField::constant(space.dim(), value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_values() {
        let e1 = ScenarioConfig::preset("example1").unwrap();
        assert_eq!(e1.dt, 6.67e-8);
        assert_eq!(e1.steps(), 1500);
        assert_eq!(e1.transport.d0, 5.0);
        let e3 = ScenarioConfig::preset("example3").unwrap();
        assert_eq!(e3.dt, 1e-6);
        assert_eq!(e3.steps(), 500);
        assert_eq!(e3.transport.v0, [0.0, 10.0]);
        assert_eq!(e3.compare, Some(CouplingMode::NoUltrasound));
        assert_eq!(
            ScenarioConfig::preset("example2").unwrap().compare,
            Some(CouplingMode::FrozenTemperature)
        );
        assert!(matches!(ScenarioConfig::preset("x"), Err(ScenarioError::UnknownPreset(_))));
    }

    #[test]
    fn parse_requires_time() {
        assert!(matches!(
            ScenarioConfig::parse("[time]\nt_end = 1e-4\n"),
            Err(ScenarioError::Validation { field, .. }) if field == "time.dt"
        ));
        assert!(matches!(
            ScenarioConfig::parse("[time]\ndt = 0.0\nt_end = 1e-4\n"),
            Err(ScenarioError::Validation { field, .. }) if field == "time.dt"
        ));
        let c = ScenarioConfig::parse("[time]\ndt = 1e-7\nsteps = 20\n").unwrap();
        assert_eq!(c.steps(), 20);
    }

    #[test]
    fn unknown_keys_and_types() {
        assert!(matches!(
            ScenarioConfig::parse("preset = \"example1\"\n[mesh]\nhh = 1\n"),
            Err(ScenarioError::UnknownKey(k)) if k == "mesh.hh"
        ));
        assert!(matches!(
            ScenarioConfig::parse("preset = \"example1\"\n[mesh]\nh = \"x\"\n"),
            Err(ScenarioError::InvalidValue { .. })
        ));
        assert!(matches!(ScenarioConfig::parse("[mesh\n"), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn overrides_apply_last() {
        let o = vec![
            ("mesh.h".to_string(), "0.004".to_string()),
            ("time.steps".to_string(), "100".to_string()),
            ("coupling.mode".to_string(), "linear_acoustics".to_string()),
        ];
        let c = ScenarioConfig::from_sources(None, Some("example1"), &o).unwrap();
        assert_eq!(c.mesh, MeshSource::Generated { h: 0.004 });
        assert_eq!(c.steps(), 100);
        assert_eq!(c.coupling, CouplingMode::LinearAcoustics);
    }

    #[test]
    fn toml_round_trip() {
        for name in PRESETS {
            let p = ScenarioConfig::preset(name).unwrap();
            let back = ScenarioConfig::parse(&p.to_toml()).unwrap();
            assert_eq!(back, p, "{name}");
        }
    }

    #[test]
    fn kernel_keys() {
        let c = ScenarioConfig::from_sources(None, Some("example1"), &[("kernel.alpha".into(), "0.5".into())]).unwrap();
        assert_eq!(c.damping, Damping::Fractional { alpha: 0.5 });
        let c = ScenarioConfig::from_sources(None, Some("example1"), &[("kernel.kind".into(), "dirac".into())]).unwrap();
        assert_eq!(c.damping, Damping::Strong);
        assert!(ScenarioConfig::from_sources(None, Some("example1"), &[("kernel.alpha".into(), "1.5".into())]).is_err());
    }
}
