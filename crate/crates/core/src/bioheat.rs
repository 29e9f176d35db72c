//! Semi-implicit Pennes step for the temperature rise θ = Θ − Θ_a.

use std::sync::Arc;

use thiserror::Error;

use crate::fem::{apply_dirichlet, solve_sparse_from, CsrMatrix, FemSpace, NodalField, SolveOptions, SolverError, SolverKind};
use crate::materials::{MaterialError, MaterialModel};

#[derive(Debug, Error)]
pub enum ThermalError {
    #[error("heat system is not positive definite (negative perfusion reaction?)")]
    Indefinite(#[source] SolverError),
    #[error("invalid time step {0}")]
    InvalidStep(f64),
    #[error("field dimension does not match the mesh")]
    Dimension,
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Solver(SolverError),
}

impl From<SolverError> for ThermalError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::NotPositiveDefinite { .. } => ThermalError::Indefinite(e),
            e => ThermalError::Solver(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThermalState {
    pub theta: NodalField,
    pub time: f64,
    pub step: usize,
}

impl ThermalState {
    pub fn zeros(n: usize) -> Self {
        ThermalState {
            theta: NodalField::zeros(n),
            time: 0.0,
            step: 0,
        }
    }

    /// Largest rise and the lowest node index attaining it.
    pub fn max_probe(&self) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, &v) in self.theta.iter().enumerate() {
            if v > best.0 {
                best = (v, i);
            }
        }
        if self.theta.is_empty() {
            (0.0, 0)
        } else {
            best
        }
    }
}

/// Boundary treatment of the heat equation. Neumann is the physical model;
/// Dirichlet exists for manufactured-solution checks.
#[derive(Debug, Clone, PartialEq)]
pub enum ThermalBoundary {
    Neumann,
    Dirichlet { nodes: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct PennesStepper {
    space: Arc<FemSpace>,
    model: MaterialModel,
    dt: f64,
    stiffness: CsrMatrix,
    boundary: ThermalBoundary,
    solve: SolveOptions,
}

impl PennesStepper {
    pub fn new(space: Arc<FemSpace>, model: MaterialModel, dt: f64) -> Result<Self, ThermalError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(ThermalError::InvalidStep(dt));
        }
        model.validate()?;
        let stiffness = space.assemble_stiffness();
        Ok(PennesStepper {
            space,
            model,
            dt,
            stiffness,
            boundary: ThermalBoundary::Neumann,
            solve: SolveOptions {
                method: SolverKind::ConjugateGradient,
                rel_tol: 1e-12,
                max_iter: None,
            },
        })
    }

    pub fn with_boundary(mut self, boundary: ThermalBoundary) -> Self {
        if matches!(boundary, ThermalBoundary::Dirichlet { .. }) {
            self.solve.method = SolverKind::BiCgStab;
        }
        self.boundary = boundary;
        self
    }

    pub fn model(&self) -> &MaterialModel {
        &self.model
    }

    /// θ^{n+1} from (M + τκK + τν M(ω_b(θ^n))) θ^{n+1} = M(θ^n + τ𝒢(p_t^{n+1}, θ^n) + τ f).
    ///
    /// `dirichlet_values` is only read for a Dirichlet boundary.
    pub fn step(
        &self,
        state: &mut ThermalState,
        pt_new: &[f64],
        f_theta: Option<&[f64]>,
        dirichlet_values: Option<&[f64]>,
    ) -> Result<(), ThermalError> {
        let n = self.space.dim();
        if state.theta.len() != n || pt_new.len() != n || f_theta.is_some_and(|f| f.len() != n) {
            return Err(ThermalError::Dimension);
        }
        let tau = self.dt;
        let fields = self.model.eval_fields(&state.theta)?;
        let source = self.model.absorbed_energy(pt_new, &state.theta)?;
        let mut a = self.space.assemble_weighted_mass(&fields.omega_b);
        a.scale(tau * self.model.nu());
        a.add_scaled(1.0, self.space.mass());
        a.add_scaled(tau * self.model.kappa(), &self.stiffness);
        let mut load: Vec<f64> = state.theta.iter().zip(source.iter()).map(|(t, g)| t + tau * g).collect();
        if let Some(f) = f_theta {
            for (l, f) in load.iter_mut().zip(f) {
                *l += tau * f;
            }
        }
        let mut rhs = self.space.load(&load);
        if let ThermalBoundary::Dirichlet { nodes } = &self.boundary {
            let vals: Vec<f64> = match dirichlet_values {
                Some(v) => nodes.iter().map(|&i| v[i]).collect(),
                None => vec![0.0; nodes.len()],
            };
            apply_dirichlet(&mut a, &mut rhs, nodes, &vals);
        }
        let sol = solve_sparse_from(&a, &rhs, Some(&state.theta), &self.solve)?;
        state.theta = sol.x.into();
        state.step += 1;
        state.time = state.step as f64 * tau;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::Perfusion;
    use crate::mesh::Mesh;
    use approx::assert_relative_eq;

    fn stepper(model: MaterialModel) -> PennesStepper {
        let mesh = Arc::new(Mesh::structured_rectangle(0.0, 0.01, 0.0, 0.01, 5, 5).unwrap());
        PennesStepper::new(Arc::new(FemSpace::new(mesh)), model, 1e-3).unwrap()
    }

    #[test]
    fn zero_stays_zero() {
        let s = stepper(MaterialModel::liver(1e5));
        let n = s.space.dim();
        let mut st = ThermalState::zeros(n);
        s.step(&mut st, &vec![0.0; n], None, None).unwrap();
        assert_eq!(st.theta.max_abs(), 0.0);
    }

    #[test]
    fn uniform_decay() {
        let mut m = MaterialModel::liver(1e5);
        m.perfusion = Perfusion::polynomial(vec![0.5]);
        let s = stepper(m.clone());
        let n = s.space.dim();
        let mut st = ThermalState {
            theta: NodalField::constant(n, 2.0),
            time: 0.0,
            step: 0,
        };
        let mut u = 2.0;
        for _ in 0..3 {
            s.step(&mut st, &vec![0.0; n], None, None).unwrap();
            u /= 1.0 + 1e-3 * m.nu() * 0.5;
            for v in st.theta.iter() {
                assert_relative_eq!(*v, u, max_relative = 1e-11);
            }
        }
    }

    #[test]
    fn uniform_source() {
        let m = MaterialModel::liver(1e5);
        let s = stepper(m.clone());
        let n = s.space.dim();
        let mut st = ThermalState::zeros(n);
        let pt = 3e9;
        s.step(&mut st, &vec![pt; n], None, None).unwrap();
        let expect = 1e-3 * m.source(pt, 37.0) / (1.0 + 1e-3 * m.nu() * m.omega_b(37.0));
        assert!(expect > 0.0);
        for v in st.theta.iter() {
            assert_relative_eq!(*v, expect, max_relative = 1e-10);
        }
    }

    #[test]
    fn max_probe_tie_break() {
        let st = ThermalState {
            theta: vec![0.0, 2.0, 1.0, 2.0].into(),
            time: 0.0,
            step: 0,
        };
        assert_eq!(st.max_probe(), (2.0, 1));
        assert_eq!(ThermalState::zeros(3).max_probe(), (0.0, 0));
    }

    #[test]
    fn negative_perfusion_is_indefinite() {
        let mut m = MaterialModel::liver(1e5);
        m.perfusion = Perfusion::polynomial(vec![-1e6]);
        let s = stepper(m);
        let n = s.space.dim();
        let mut st = ThermalState {
            theta: NodalField::constant(n, 1.0),
            time: 0.0,
            step: 0,
        };
        let err = s.step(&mut st, &vec![0.0; n], None, None).unwrap_err();
        assert!(matches!(err, ThermalError::Indefinite(_) | ThermalError::Solver(_)), "{err}");
    }
}
