//! Implicit-Euler step of the drug concentration equation with a
//! pressure-gradient-driven velocity, and mass functionals.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::{solve_sparse_from, CsrMatrix, FemError, FemSpace, NodalField, SolveOptions, SolverError, SolverKind};
use crate::mesh::BoundaryTag;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("invalid transport parameter: {0}")]
    Invalid(String),
    #[error("field dimension does not match the mesh")]
    Dimension,
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// v = v0 − k_D ∇p with isotropic diffusivity D0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityModel {
    pub v0: [f64; 2],
    pub k_d: f64,
    pub d0: f64,
}

impl VelocityModel {
    pub fn validate(&self) -> Result<(), TransportError> {
        if !(self.d0 > 0.0 && self.d0.is_finite()) {
            return Err(TransportError::Invalid(format!("D0 = {} must be positive", self.d0)));
        }
        if !(self.k_d >= 0.0 && self.k_d.is_finite()) {
            return Err(TransportError::Invalid(format!("k_D = {} must be nonnegative", self.k_d)));
        }
        if !self.v0.iter().all(|v| v.is_finite()) {
            return Err(TransportError::Invalid("v0 must be finite".into()));
        }
        Ok(())
    }

    pub fn velocity(&self, grad_p: &[[f64; 2]]) -> Vec<[f64; 2]> {
        grad_p
            .iter()
            .map(|g| [self.v0[0] - self.k_d * g[0], self.v0[1] - self.k_d * g[1]])
            .collect()
    }
}

/// Flux data: inflow g̃ on Γ_b and an optional outflow rate on Γ_a,
/// Φ_c·n = −rate·c there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportBoundary {
    pub inflow: f64,
    pub outflow_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationState {
    pub c: NodalField,
    pub time: f64,
    pub step: usize,
}

impl ConcentrationState {
    pub fn uniform(n: usize, c0: f64) -> Self {
        ConcentrationState {
            c: NodalField::constant(n, c0),
            time: 0.0,
            step: 0,
        }
    }
}

/// Region for [`mass_integral`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Region {
    Whole,
    /// Elements with centroid x2 strictly inside (lo, hi).
    Band { lo: f64, hi: f64 },
}

impl Region {
    pub const FOCAL: Region = Region::Band { lo: 0.02, hi: 0.05 };

    fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Region::Whole => true,
            Region::Band { lo, hi } => p[1] > *lo && p[1] < *hi,
        }
    }
}

/// ∫ c over the elements whose centroid lies in `region`.
pub fn mass_integral(space: &FemSpace, c: &[f64], region: Region) -> f64 {
    let mesh = space.mesh();
    mesh.triangles()
        .iter()
        .enumerate()
        .zip(space.geometry())
        .filter(|((e, _), _)| region.contains(mesh.centroid(*e)))
        .map(|((_, t), g)| g.area * (c[t[0]] + c[t[1]] + c[t[2]]) / 3.0)
        .sum()
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TransportInfo {
    pub max_speed: f64,
    pub cfl: f64,
    pub peclet: f64,
}

#[derive(Debug, Clone)]
pub struct TransportStepper {
    space: Arc<FemSpace>,
    velocity: VelocityModel,
    boundary: TransportBoundary,
    dt: f64,
    /// M + τD0 K + τ·rate·B_Γa, fixed over the run.
    base: CsrMatrix,
    inflow_load: Vec<f64>,
    element_size: Vec<f64>,
    solve: SolveOptions,
    warned: bool,
}

impl TransportStepper {
    pub fn new(
        space: Arc<FemSpace>,
        velocity: VelocityModel,
        boundary: TransportBoundary,
        dt: f64,
    ) -> Result<Self, TransportError> {
        velocity.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(TransportError::Invalid(format!("time step {dt} must be positive")));
        }
        if !(boundary.outflow_rate >= 0.0) || !boundary.inflow.is_finite() {
            return Err(TransportError::Invalid("outflow rate must be nonnegative".into()));
        }
        let mut base = space.mass().clone();
        base.add_scaled(dt * velocity.d0, &space.assemble_stiffness());
        if boundary.outflow_rate > 0.0 {
            base.add_scaled(dt * boundary.outflow_rate, &space.assemble_boundary_mass(BoundaryTag::GammaA, 1.0)?);
        }
        let inflow_load = if boundary.inflow != 0.0 {
            space.assemble_boundary_load(BoundaryTag::GammaB, |_, _| 1.0)?
        } else {
            vec![0.0; space.dim()]
        };
        let mesh = space.mesh().clone();
        let element_size = mesh
            .triangles()
            .iter()
            .map(|t| {
                let l = |a: usize, b: usize| mesh.edge_length([t[a], t[b]]);
                l(0, 1).max(l(1, 2)).max(l(2, 0))
            })
            .collect();
        Ok(TransportStepper {
            space,
            velocity,
            boundary,
            dt,
            base,
            inflow_load,
            element_size,
            solve: SolveOptions {
                method: SolverKind::BiCgStab,
                rel_tol: 1e-12,
                max_iter: None,
            },
            warned: false,
        })
    }

    pub fn velocity_model(&self) -> &VelocityModel {
        &self.velocity
    }

    fn diagnostics(&self, v: &[[f64; 2]]) -> TransportInfo {
        let mut info = TransportInfo::default();
        for (v, h) in v.iter().zip(&self.element_size) {
            let s = v[0].hypot(v[1]);
            info.max_speed = info.max_speed.max(s);
            info.cfl = info.cfl.max(s * self.dt / h);
            info.peclet = info.peclet.max(s * h / (2.0 * self.velocity.d0));
        }
        info
    }

    /// c^{n+1} from c^n with the pressure gradient at t^{n+1}.
    pub fn step(
        &mut self,
        state: &mut ConcentrationState,
        grad_p: &[[f64; 2]],
        f_c: Option<&[f64]>,
    ) -> Result<TransportInfo, TransportError> {
        let n = self.space.dim();
        if state.c.len() != n || grad_p.len() != self.space.mesh().num_triangles() || f_c.is_some_and(|f| f.len() != n) {
            return Err(TransportError::Dimension);
        }
        let tau = self.dt;
        let v = self.velocity.velocity(grad_p);
        let info = self.diagnostics(&v);
        if !self.warned && (info.cfl > 1.0 || info.peclet > 2.0) {
            log::warn!(
                "transport step {}: CFL {:.3}, mesh Péclet {:.3}; accuracy may degrade",
                state.step + 1,
                info.cfl,
                info.peclet
            );
            self.warned = true;
        }
        let mut a = self.base.clone();
        if info.max_speed > 0.0 {
            a.add_scaled(tau, &self.space.assemble_convection(&v));
        }
        let mut load = state.c.to_vec();
        if let Some(f) = f_c {
            for (l, f) in load.iter_mut().zip(f) {
                *l += tau * f;
            }
        }
        let mut rhs = self.space.load(&load);
        for (r, b) in rhs.iter_mut().zip(&self.inflow_load) {
            *r += tau * self.boundary.inflow * b;
        }
        let sol = solve_sparse_from(&a, &rhs, Some(&state.c), &self.solve)?;
        state.c = sol.x.into();
        state.step += 1;
        state.time = state.step as f64 * tau;
        Ok(info)
    }
}
