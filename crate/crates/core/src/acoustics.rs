//! Westervelt time stepping: Newmark predictor-corrector with a fixed-point
//! iteration for the quadratic nonlinearity and the L1 approximation of the
//! fractional damping memory.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::{solve_sparse_from, CsrMatrix, FemSpace, NodalField, SolveOptions, SolverError, SolverKind};
use crate::kernels::{gamma_fn, KernelError, L1Weights};
use crate::materials::{MaterialError, MaterialModel};
use crate::mesh::BoundaryTag;

#[derive(Debug, Error)]
pub enum AcousticError {
    #[error("fixed-point iteration did not converge in {iterations} iterations (last relative change {change:e})")]
    NotConverged { iterations: usize, change: f64 },
    #[error("degenerate mass coefficient 1 - 2kp = {value:e} at node {node}")]
    DegenerateMass { node: usize, value: f64 },
    #[error("velocity history needs {needed_mb:.1} MB, above the cap of {cap_mb:.1} MB")]
    HistoryCap { needed_mb: f64, cap_mb: f64 },
    #[error("invalid acoustic parameter: {0}")]
    Invalid(String),
    #[error("internal inconsistency: {0}")]
    Internal(String),
    #[error("non-finite pressure after step {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

pub type Result<T> = std::result::Result<T, AcousticError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewmarkParams {
    pub beta: f64,
    pub gamma: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for NewmarkParams {
    fn default() -> Self {
        NewmarkParams {
            beta: 0.45,
            gamma: 0.85,
            tol: 1e-12,
            max_iters: 200,
        }
    }
}

impl NewmarkParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 0.5) {
            return Err(AcousticError::Invalid(format!("beta = {} not in (0, 0.5]", self.beta)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(AcousticError::Invalid(format!("gamma = {} not in (0, 1]", self.gamma)));
        }
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(AcousticError::Invalid("tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

/// Neumann datum on Γ_b: g0 sin ωt over the first period, then modulated by
/// 1 + sin(ωt/4).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Excitation {
    pub g0: f64,
    pub omega: f64,
}

impl Excitation {
    pub fn new(g0: f64, frequency: f64) -> Self {
        Excitation {
            g0,
            omega: 2.0 * std::f64::consts::PI * frequency,
        }
    }

    fn switch_time(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega
    }

    pub fn g(&self, t: f64) -> f64 {
        let wt = self.omega * t;
        if t <= self.switch_time() {
            self.g0 * wt.sin()
        } else {
            self.g0 * wt.sin() * (1.0 + (wt / 4.0).sin())
        }
    }

    pub fn g_prime(&self, t: f64) -> f64 {
        let w = self.omega;
        let wt = w * t;
        if t <= self.switch_time() {
            self.g0 * w * wt.cos()
        } else {
            let s = (wt / 4.0).sin();
            self.g0 * w * (wt.cos() * (1.0 + s) + wt.sin() * 0.25 * (wt / 4.0).cos())
        }
    }
}

/// How the damping term b 𝔎 * Δp_t is discretized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Damping {
    /// Abel kernel of order α, L1 weights.
    Fractional { alpha: f64 },
    /// Dirac kernel: strong damping b Δp_t.
    Strong,
    None,
}

impl Damping {
    pub fn validate(&self) -> Result<()> {
        match self {
            Damping::Fractional { alpha } if !(*alpha > 0.0 && *alpha < 1.0) => {
                Err(AcousticError::Invalid(format!("fractional order {alpha} not in (0, 1)")))
            }
            _ => Ok(()),
        }
    }
}

/// Which couplings are active in the pressure equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coupling {
    /// Evaluate q, b, k at the current temperature rather than ambient.
    pub temperature_feedback: bool,
    /// Keep the k-terms; off gives the linear wave equation.
    pub nonlinear: bool,
}

impl Default for Coupling {
    fn default() -> Self {
        Coupling {
            temperature_feedback: true,
            nonlinear: true,
        }
    }
}

/// Pressure, its first two time derivatives, and the full velocity history
/// p_t^0, …, p_t^n stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticState {
    pub p: NodalField,
    pub p_t: NodalField,
    pub p_tt: NodalField,
    history: Vec<f64>,
    pub step: usize,
    pub time: f64,
}

impl AcousticState {
    pub fn zeros(n: usize) -> Self {
        Self::from_initial(NodalField::zeros(n), NodalField::zeros(n))
    }

    /// State at t = 0 with zero acceleration; see [`WesterveltStepper::initialize`].
    pub fn from_initial(p: NodalField, p_t: NodalField) -> Self {
        assert_eq!(p.len(), p_t.len());
        let n = p.len();
        let history = p_t.to_vec();
        AcousticState {
            p,
            p_t,
            p_tt: NodalField::zeros(n),
            history,
            step: 0,
            time: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    /// Number of stored velocity snapshots (n + 1).
    pub fn history_len(&self) -> usize {
        self.history.len() / self.dim().max(1)
    }

    /// p_t^k.
    pub fn velocity_at(&self, k: usize) -> &[f64] {
        let n = self.dim();
        &self.history[k * n..(k + 1) * n]
    }

    pub fn history_bytes(&self) -> usize {
        self.history.len() * std::mem::size_of::<f64>()
    }
}

/// p̃ = p + τp_t + (½ − β)τ²p_tt and p̃_t = p_t + (1 − γ)τp_tt.
pub fn predictor(state: &AcousticState, dt: f64, params: &NewmarkParams) -> (NodalField, NodalField) {
    let c2 = (0.5 - params.beta) * dt * dt;
    let c1 = (1.0 - params.gamma) * dt;
    let p = state
        .p
        .iter()
        .zip(state.p_t.iter())
        .zip(state.p_tt.iter())
        .map(|((p, v), a)| p + dt * v + c2 * a)
        .collect::<Vec<_>>();
    let pt = state.p_t.iter().zip(state.p_tt.iter()).map(|(v, a)| v + c1 * a).collect::<Vec<_>>();
    (p.into(), pt.into())
}

/// p = p̃ + βτ²p_tt and p_t = p̃_t + γτp_tt.
pub fn corrector(
    p_pred: &[f64],
    pt_pred: &[f64],
    p_tt: &[f64],
    dt: f64,
    params: &NewmarkParams,
) -> (NodalField, NodalField) {
    let cb = params.beta * dt * dt;
    let cg = params.gamma * dt;
    let p = p_pred.iter().zip(p_tt).map(|(p, a)| p + cb * a).collect::<Vec<_>>();
    let pt = pt_pred.iter().zip(p_tt).map(|(v, a)| v + cg * a).collect::<Vec<_>>();
    (p.into(), pt.into())
}

const HISTORY_CHUNK: usize = 2048;

/// Υ = Σ_{j=1}^{n+1} ζ_j p_t^{n+1−j} for weights built at step n.
pub fn history_term(state: &AcousticState, weights: &L1Weights) -> Result<NodalField> {
    let n_hist = state.history_len();
    if weights.step() + 1 != n_hist {
        return Err(AcousticError::Internal(format!(
            "weights for step {} but {} history snapshots",
            weights.step(),
            n_hist
        )));
    }
    let dim = state.dim();
    let zeta = weights.as_slice();
    let hist = &state.history;
    let mut out = vec![0.0; dim];
    out.par_chunks_mut(HISTORY_CHUNK).enumerate().for_each(|(c, chunk)| {
        let base = c * HISTORY_CHUNK;
        for j in 1..=n_hist {
            let z = zeta[j];
            let row = &hist[(n_hist - j) * dim + base..(n_hist - j) * dim + base + chunk.len()];
            for (o, h) in chunk.iter_mut().zip(row) {
                *o += z * h;
            }
        }
    });
    Ok(out.into())
}

/// Diagnostics of one pressure step.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct StepInfo {
    pub iterations: usize,
    /// Relative change ‖Δp_tt‖/‖p_tt‖ after each fixed-point iteration.
    pub changes: Vec<f64>,
    pub linear_iterations: usize,
}

impl StepInfo {
    pub fn monotone(&self) -> bool {
        self.changes.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Owns the operators and memory-term bookkeeping for one pressure run.
#[derive(Debug, Clone)]
pub struct WesterveltStepper {
    space: Arc<FemSpace>,
    model: MaterialModel,
    excitation: Excitation,
    params: NewmarkParams,
    damping: Damping,
    coupling: Coupling,
    dt: f64,
    weights: Option<L1Weights>,
    /// g′(t^0), …, g′(t^{n+1}) once the step to n+1 has been set up.
    g_prime: Vec<f64>,
    boundary_unit: Vec<f64>,
    source: Option<NodalField>,
    solve: SolveOptions,
    history_cap: Option<usize>,
}

fn tagged_unit_load(space: &FemSpace) -> Vec<f64> {
    space
        .assemble_boundary_load(BoundaryTag::GammaB, |_, _| 1.0)
        .unwrap_or_else(|_| vec![0.0; space.dim()])
}

impl WesterveltStepper {
    pub fn new(
        space: Arc<FemSpace>,
        model: MaterialModel,
        excitation: Excitation,
        params: NewmarkParams,
        damping: Damping,
        coupling: Coupling,
        dt: f64,
    ) -> Result<Self> {
        params.validate()?;
        damping.validate()?;
        model.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(AcousticError::Invalid(format!("time step {dt} must be positive")));
        }
        let weights = match damping {
            Damping::Fractional { alpha } => Some(L1Weights::new(alpha, 0)?),
            _ => None,
        };
        let boundary_unit = tagged_unit_load(&space);
        Ok(WesterveltStepper {
            space,
            model,
            excitation,
            params,
            damping,
            coupling,
            dt,
            weights,
            g_prime: Vec::new(),
            boundary_unit,
            source: None,
            solve: SolveOptions {
                method: SolverKind::BiCgStab,
                rel_tol: 1e-12,
                max_iter: None,
            },
            history_cap: None,
        })
    }

    /// Volume source f_p (defaults to zero).
    pub fn with_source(mut self, f: NodalField) -> Self {
        self.source = Some(f);
        self
    }

    pub fn with_solver_tolerance(mut self, rel_tol: f64) -> Self {
        self.solve.rel_tol = rel_tol;
        self
    }

    /// Abort once the velocity history would exceed `bytes`.
    pub fn with_history_cap(mut self, bytes: usize) -> Self {
        self.history_cap = Some(bytes);
        self
    }

    pub fn space(&self) -> &Arc<FemSpace> {
        &self.space
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn params(&self) -> &NewmarkParams {
        &self.params
    }

    pub fn coupling(&self) -> Coupling {
        self.coupling
    }

    pub fn model(&self) -> &MaterialModel {
        &self.model
    }

    pub fn excitation(&self) -> &Excitation {
        &self.excitation
    }

    fn coefficient_theta(&self, theta: &[f64]) -> Vec<f64> {
        if self.coupling.temperature_feedback {
            theta.to_vec()
        } else {
            vec![0.0; theta.len()]
        }
    }

    /// Sets p_tt^0 from the equation at t = 0 with the initial data in place
    /// of the predictors. The memory integral vanishes at t = 0.
    pub fn initialize(&mut self, state: &mut AcousticState, theta: &[f64]) -> Result<()> {
        if state.step != 0 {
            return Err(AcousticError::Internal("initialize called after stepping".into()));
        }
        let fields = self.model.eval_fields(&self.coefficient_theta(theta))?;
        let k = self.k_field(&fields.k);
        let m = mass_coefficient(&k, &state.p)?;
        let mm = self.space.assemble_weighted_mass(&m);
        let kq = self.space.assemble_weighted_stiffness(&fields.q);
        let mut rhs = neg(&kq.mul_vec(&state.p));
        let quad: Vec<f64> = k.iter().zip(state.p_t.iter()).map(|(k, v)| 2.0 * k * v * v).collect();
        axpy(&mut rhs, 1.0, &self.space.load(&quad));
        if let Some(f) = &self.source {
            let bf: Vec<f64> = fields.b.iter().zip(f.iter()).map(|(b, f)| b * f).collect();
            axpy(&mut rhs, 1.0, &self.space.load(&bf));
        }
        if let Damping::Strong = self.damping {
            let kb = self.space.assemble_weighted_stiffness(&fields.b);
            axpy(&mut rhs, -1.0, &kb.mul_vec(&state.p_t));
        }
        let flux = self.boundary_flux_initial();
        axpy(&mut rhs, flux, &self.boundary_unit);
        let sol = solve_sparse_from(&mm, &rhs, None, &self.solve)?;
        state.p_tt = sol.x.into();
        Ok(())
    }

    fn boundary_flux_initial(&self) -> f64 {
        let amb = self.model.theta_ambient;
        let mut flux = self.excitation.g(0.0) * self.model.q(amb);
        if let Damping::Strong = self.damping {
            flux += self.model.b(amb) * self.excitation.g_prime(0.0);
        }
        flux
    }

    fn k_field(&self, k: &[f64]) -> Vec<f64> {
        if self.coupling.nonlinear {
            k.to_vec()
        } else {
            vec![0.0; k.len()]
        }
    }

    /// Advances `state` from t^n to t^{n+1} with temperature `theta` = θ^n.
    pub fn step(&mut self, state: &mut AcousticState, theta: &[f64]) -> Result<StepInfo> {
        let dim = self.space.dim();
        if state.dim() != dim || theta.len() != dim {
            return Err(AcousticError::Internal("field dimension does not match the mesh".into()));
        }
        let n = state.step;
        if state.history_len() != n + 1 {
            return Err(AcousticError::Internal("history length is not step + 1".into()));
        }
        if let Some(cap) = self.history_cap {
            let needed = (n + 2) * dim * std::mem::size_of::<f64>();
            if needed > cap {
                return Err(AcousticError::HistoryCap {
                    needed_mb: needed as f64 / 1048576.0,
                    cap_mb: cap as f64 / 1048576.0,
                });
            }
        }
        let tau = self.dt;
        let t_new = (n + 1) as f64 * tau;
        let amb = self.model.theta_ambient;

        let fields = self.model.eval_fields(&self.coefficient_theta(theta))?;
        let k = self.k_field(&fields.k);
        let (p_pred, pt_pred) = predictor(state, tau, &self.params);

        let kq = self.space.assemble_weighted_stiffness(&fields.q);
        let mut lhs_fixed = kq.clone();
        lhs_fixed.scale(self.params.beta * tau * tau);
        let mut rhs_fixed = neg(&kq.mul_vec(&p_pred));
        let mut flux = self.excitation.g(t_new) * self.model.q(amb);

        match self.damping {
            Damping::Fractional { alpha } => {
                let weights = self.weights.as_mut().expect("fractional weights");
                while weights.step() < n {
                    weights.advance();
                }
                while self.g_prime.len() < n + 2 {
                    let j = self.g_prime.len();
                    self.g_prime.push(self.excitation.g_prime(j as f64 * tau));
                }
                let weights = self.weights.as_ref().expect("fractional weights");
                let zeta0 = weights.zeta(0);
                let scale = tau.powf(1.0 - alpha);
                let kb = self.space.assemble_weighted_stiffness(&fields.b);
                lhs_fixed.add_scaled(self.params.gamma * tau * scale * zeta0, &kb);
                let ups = history_term(state, weights)?;
                let arg: Vec<f64> = pt_pred.iter().zip(ups.iter()).map(|(v, u)| zeta0 * v + u).collect();
                axpy(&mut rhs_fixed, -scale, &kb.mul_vec(&arg));
                let conv: f64 = (0..=n + 1).map(|j| weights.zeta(j) * self.g_prime[n + 1 - j]).sum();
                flux += scale * self.model.b(amb) * conv;
            }
            Damping::Strong => {
                let kb = self.space.assemble_weighted_stiffness(&fields.b);
                lhs_fixed.add_scaled(self.params.gamma * tau, &kb);
                axpy(&mut rhs_fixed, -1.0, &kb.mul_vec(&pt_pred));
                flux += self.model.b(amb) * self.excitation.g_prime(t_new);
            }
            Damping::None => {}
        }
        axpy(&mut rhs_fixed, flux, &self.boundary_unit);
        if let Some(f) = &self.source {
            let bf: Vec<f64> = fields.b.iter().zip(f.iter()).map(|(b, f)| b * f).collect();
            axpy(&mut rhs_fixed, 1.0, &self.space.load(&bf));
        }

        let linear = k.iter().all(|v| *v == 0.0);
        let mut lhs_linear: Option<CsrMatrix> = None;
        let mut p_star = p_pred.clone();
        let mut pt_star = pt_pred.clone();
        let mut ptt_prev = vec![0.0; dim];
        let mut info = StepInfo::default();
        let mut converged = false;
        for _ in 0..self.params.max_iters {
            let sol = if linear {
                let a = lhs_linear.get_or_insert_with(|| {
                    let mut a = self.space.mass().clone();
                    a.add_scaled(1.0, &lhs_fixed);
                    a
                });
                solve_sparse_from(a, &rhs_fixed, Some(&ptt_prev), &self.solve)?
            } else {
                let m = mass_coefficient(&k, &p_star)?;
                let mut a = self.space.assemble_weighted_mass(&m);
                a.add_scaled(1.0, &lhs_fixed);
                let quad: Vec<f64> = k.iter().zip(pt_star.iter()).map(|(k, v)| 2.0 * k * v * v).collect();
                let mut rhs = self.space.load(&quad);
                axpy(&mut rhs, 1.0, &rhs_fixed);
                solve_sparse_from(&a, &rhs, Some(&ptt_prev), &self.solve)?
            };
            info.iterations += 1;
            info.linear_iterations += sol.iterations;
            let ptt = sol.x;
            let diff: Vec<f64> = ptt.iter().zip(&ptt_prev).map(|(a, b)| a - b).collect();
            let dn = self.space.l2_norm(&diff);
            let nn = self.space.l2_norm(&ptt);
            let change = if dn == 0.0 { 0.0 } else { dn / nn };
            info.changes.push(change);
            let (p, pt) = corrector(&p_pred, &pt_pred, &ptt, tau, &self.params);
            p_star = p;
            pt_star = pt;
            ptt_prev = ptt;
            if change < self.params.tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(AcousticError::NotConverged {
                iterations: info.iterations,
                change: info.changes.last().copied().unwrap_or(f64::NAN),
            });
        }
        if !info.monotone() {
            log::warn!("fixed-point changes not monotone at step {}: {:?}", n + 1, info.changes);
        }
        if !(p_star.is_finite() && pt_star.is_finite()) {
            return Err(AcousticError::NonFinite(n + 1));
        }
        state.history.extend_from_slice(&pt_star);
        state.p = p_star;
        state.p_t = pt_star;
        state.p_tt = ptt_prev.into();
        state.step = n + 1;
        state.time = t_new;
        Ok(info)
    }
}

/// m̃ = 1 − 2k̃p, rejecting nonpositive values.
fn mass_coefficient(k: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    let mut m = Vec::with_capacity(p.len());
    for (i, (k, p)) in k.iter().zip(p).enumerate() {
        let v = 1.0 - 2.0 * k * p;
        if !(v > 0.0) {
            return Err(AcousticError::DegenerateMass { node: i, value: v });
        }
        m.push(v);
    }
    Ok(m)
}

fn neg(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| -x).collect()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

/// E = ½ p_tᵀ M p_t + ½ q pᵀ K p for a constant squared sound speed q.
pub fn discrete_energy(space: &FemSpace, stiffness: &CsrMatrix, q: f64, state: &AcousticState) -> f64 {
    let mv = space.load(&state.p_t);
    let kin: f64 = state.p_t.iter().zip(&mv).map(|(a, b)| a * b).sum();
    let kp = stiffness.mul_vec(&state.p);
    let pot: f64 = state.p.iter().zip(&kp).map(|(a, b)| a * b).sum();
    0.5 * kin + 0.5 * q * pot
}

/// τ^{1−α}/Γ(2−α), the scale of the L1 memory sum; exposed for diagnostics.
pub fn memory_scale(alpha: f64, tau: f64) -> Result<f64> {
    Ok(tau.powf(1.0 - alpha) / gamma_fn(2.0 - alpha)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;
    use approx::assert_relative_eq;

    #[test]
    fn excitation_values() {
        let e = Excitation::new(1e9, 1e5);
        assert_eq!(e.g(0.0), 0.0);
        assert_relative_eq!(e.g(std::f64::consts::PI / (2.0 * e.omega)), 1e9, max_relative = 1e-14);
        let ts = e.switch_time();
        assert!(e.g(ts).abs() < 1e-3);
        assert!(e.g(ts * (1.0 + 1e-15)).abs() < 1e-3);
        assert_relative_eq!(e.g_prime(0.0), 1e9 * e.omega, max_relative = 1e-14);
    }

    #[test]
    fn excitation_derivative_matches_differences() {
        let e = Excitation::new(1e9, 1e5);
        let period = e.switch_time();
        for i in 0..20 {
            let t = period * (0.137 + 0.29 * i as f64);
            let h = period * 1e-6;
            let fd = (e.g(t + h) - e.g(t - h)) / (2.0 * h);
            let scale = e.g0 * e.omega;
            assert!((fd - e.g_prime(t)).abs() <= 1e-6 * scale, "t = {t}");
        }
        // one-sided slopes across the switch
        let h = period * 1e-7;
        let left = (e.g(period) - e.g(period - h)) / h;
        let right = (e.g(period + h) - e.g(period)) / h;
        assert_relative_eq!(left, e.g_prime(period), max_relative = 1e-5);
        assert_relative_eq!(right, e.g_prime(period * (1.0 + 1e-12)), max_relative = 1e-5);
    }

    fn scalar_state(p: f64, v: f64, a: f64) -> AcousticState {
        let mut s = AcousticState::from_initial(vec![p].into(), vec![v].into());
        s.p_tt = vec![a].into();
        s
    }

    #[test]
    fn predictor_corrector_arithmetic() {
        let params = NewmarkParams::default();
        let s = scalar_state(1.0, 2.0, 3.0);
        let (p, v) = predictor(&s, 0.1, &params);
        assert_relative_eq!(p[0], 1.2015, max_relative = 1e-14);
        assert_relative_eq!(v[0], 2.045, max_relative = 1e-14);
        let (p1, v1) = corrector(&p, &v, &[4.0], 0.1, &params);
        assert_relative_eq!(p1[0], 1.2195, max_relative = 1e-14);
        assert_relative_eq!(v1[0], 2.385, max_relative = 1e-14);
        let (p2, v2) = corrector(&p, &v, &[0.0], 0.1, &params);
        assert_eq!((p2[0], v2[0]), (p[0], v[0]));
    }

    #[test]
    fn newmark_exact_for_quadratics() {
        // p(t) = 1 + 2t + 1.5t²: constant acceleration 3
        let params = NewmarkParams::default();
        let mut s = scalar_state(1.0, 2.0, 3.0);
        let tau = 0.1;
        for n in 1..=5 {
            let (pp, vp) = predictor(&s, tau, &params);
            let (p, v) = corrector(&pp, &vp, &[3.0], tau, &params);
            let t = n as f64 * tau;
            assert_relative_eq!(p[0], 1.0 + 2.0 * t + 1.5 * t * t, max_relative = 1e-13);
            assert_relative_eq!(v[0], 2.0 + 3.0 * t, max_relative = 1e-13);
            s.p = p;
            s.p_t = v;
        }
    }

    #[test]
    fn history_term_cases() {
        let mut s = AcousticState::from_initial(vec![0.0; 3].into(), vec![1.0, 2.0, 3.0].into());
        let w0 = L1Weights::new(0.5, 0).unwrap();
        let u = history_term(&s, &w0).unwrap();
        for i in 0..3 {
            assert_relative_eq!(u[i], w0.zeta(1) * (i + 1) as f64, max_relative = 1e-15);
        }
        // constant history c
        s.history = vec![2.5; 3 * 5];
        let w = L1Weights::new(0.5, 4).unwrap();
        let u = history_term(&s, &w).unwrap();
        let expect = 2.5 * (w.telescoped_sum() - w.zeta(0));
        assert_relative_eq!(u[1], expect, max_relative = 1e-13);
        assert!(history_term(&s, &w0).is_err());
    }

    fn square_stepper(damping: Damping, coupling: Coupling) -> WesterveltStepper {
        let mesh = Arc::new(Mesh::structured_rectangle(0.0, 0.02, 0.0, 0.02, 6, 6).unwrap());
        let space = Arc::new(FemSpace::new(mesh));
        WesterveltStepper::new(
            space,
            MaterialModel::liver(1e5),
            Excitation::new(1e9, 1e5),
            NewmarkParams::default(),
            damping,
            coupling,
            1e-7,
        )
        .unwrap()
    }

    #[test]
    fn zero_data_stays_zero() {
        let mut st = square_stepper(Damping::Fractional { alpha: 0.8 }, Coupling::default());
        st.excitation.g0 = 0.0;
        let n = st.space.dim();
        let mut s = AcousticState::zeros(n);
        st.initialize(&mut s, &vec![0.0; n]).unwrap();
        for _ in 0..5 {
            let info = st.step(&mut s, &vec![0.0; n]).unwrap();
            assert_eq!(info.iterations, 1);
        }
        assert_eq!(s.p.max_abs(), 0.0);
        assert_eq!(s.history_len(), 6);
    }

    #[test]
    fn linear_mode_converges_in_two_solves() {
        let coupling = Coupling {
            temperature_feedback: false,
            nonlinear: false,
        };
        let mut st = square_stepper(Damping::Fractional { alpha: 0.8 }, coupling);
        let n = st.space.dim();
        let mut s = AcousticState::zeros(n);
        for _ in 0..4 {
            let info = st.step(&mut s, &vec![0.0; n]).unwrap();
            assert_eq!(info.iterations, 2);
            assert_eq!(info.changes[1], 0.0);
        }
        assert!(s.p.max_abs() > 0.0);
    }

    #[test]
    fn nonlinear_step_iterates() {
        let mut st = square_stepper(Damping::Fractional { alpha: 0.8 }, Coupling::default());
        let n = st.space.dim();
        let mut s = AcousticState::zeros(n);
        let mut total = 0;
        for _ in 0..20 {
            total += st.step(&mut s, &vec![0.0; n]).unwrap().iterations;
        }
        assert!(total > 40);
        assert!(s.p.is_finite());
    }

    #[test]
    fn history_cap_aborts() {
        let mut st = square_stepper(Damping::None, Coupling::default()).with_history_cap(1000);
        let n = st.space.dim();
        let mut s = AcousticState::zeros(n);
        let err = (0..10).find_map(|_| st.step(&mut s, &vec![0.0; n]).err()).unwrap();
        assert!(matches!(err, AcousticError::HistoryCap { .. }));
    }

    #[test]
    fn invalid_parameters() {
        let p = NewmarkParams {
            beta: 0.6,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        assert!(Damping::Fractional { alpha: 1.0 }.validate().is_err());
    }
}
