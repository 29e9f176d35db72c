//! Temperature-dependent tissue coefficients.
//!
//! Temperatures passed to [`MaterialModel`] methods are absolute (°C); nodal
//! fields carry the deviation θ = Θ − Θ_a from ambient.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::NodalField;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("degenerate {field} = {value:e} at node {node} (ambient value {ambient:e})")]
    Degenerate {
        field: &'static str,
        node: usize,
        value: f64,
        ambient: f64,
    },
    #[error("non-finite temperature at node {0}")]
    NonFinite(usize),
    #[error("invalid material parameter: {0}")]
    Invalid(String),
}

/// Relative threshold below which q̃ or b̃ counts as degenerate.
pub const DEGENERACY_RATIO: f64 = 1e-12;

/// Evaluates Σ c_k s^k by Horner's rule.
pub fn polyval(coeffs: &[f64], s: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
}

/// Blood perfusion rate ω_b(Θ) in 1/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perfusion {
    Polynomial { coeffs: Vec<f64> },
    /// a1 + a2 exp(−a3 (s − a4)²) on [s0, s1], frozen at the end values outside.
    Gaussian {
        a1: f64,
        a2: f64,
        a3: f64,
        a4: f64,
        s0: f64,
        s1: f64,
    },
}

impl Perfusion {
    pub fn polynomial(coeffs: Vec<f64>) -> Self {
        Perfusion::Polynomial { coeffs }
    }

    pub fn gaussian(a1: f64, a2: f64, a3: f64, a4: f64, range: (f64, f64)) -> Self {
        Perfusion::Gaussian {
            a1,
            a2,
            a3,
            a4,
            s0: range.0,
            s1: range.1,
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Perfusion::Polynomial { coeffs } => polyval(coeffs, s),
            Perfusion::Gaussian { a1, a2, a3, a4, s0, s1 } => {
                let s = s.clamp(*s0, *s1);
                a1 + a2 * (-a3 * (s - a4).powi(2)).exp()
            }
        }
    }
}

/// Coefficient functions and constants of the medium.
///
/// The squared sound speed is the square of a polynomial in Θ and the
/// damping follows the power law b = (2α₀/ω²) q^{3/2}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialModel {
    /// Sound speed c(Θ) in m/s as polynomial coefficients, lowest degree first.
    pub sound_speed: Vec<f64>,
    /// Attenuation α₀ in Np/m.
    pub alpha0: f64,
    /// Angular frequency ω in rad/s.
    pub omega: f64,
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

/// Nodal coefficient fields evaluated at θ + Θ_a.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientFields {
    pub q: NodalField,
    pub b: NodalField,
    pub k: NodalField,
    pub omega_b: NodalField,
}

impl MaterialModel {
    /// Liver tissue driven at `frequency` Hz.
    pub fn liver(frequency: f64) -> Self {
        MaterialModel {
            sound_speed: vec![1529.3, 1.6856, 6.1131e-2, -2.2967e-3, 2.2657e-5, -7.1795e-8],
            alpha0: 4.5e-6 * frequency,
            omega: 2.0 * std::f64::consts::PI * frequency,
            perfusion: Perfusion::polynomial(vec![5e-4, 1e-4]),
            theta_ambient: 37.0,
            rho_a: 1050.0,
            rho_b: 1030.0,
            c_a: 3600.0,
            c_b: 3620.0,
            kappa_a: 0.512,
            beta_a: 6.0,
            zeta_tilde: 2.0,
        }
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        let positive = [
            ("omega", self.omega),
            ("rho_a", self.rho_a),
            ("rho_b", self.rho_b),
            ("c_a", self.c_a),
            ("c_b", self.c_b),
            ("kappa_a", self.kappa_a),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MaterialError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.sound_speed.is_empty() {
            return Err(MaterialError::Invalid("empty sound speed polynomial".into()));
        }
        if !(self.alpha0 >= 0.0) || !(self.zeta_tilde >= 0.0) || !self.beta_a.is_finite() {
            return Err(MaterialError::Invalid("alpha0, zeta_tilde must be nonnegative".into()));
        }
        let (q, b) = (self.q(self.theta_ambient), self.b(self.theta_ambient));
        if !(q > 0.0) || !(b >= 0.0) {
            return Err(MaterialError::Invalid(format!("ambient q = {q}, b = {b}")));
        }
        Ok(())
    }

    pub fn sound_speed(&self, theta: f64) -> f64 {
        polyval(&self.sound_speed, theta)
    }

    /// Squared sound speed q(Θ) in m²/s².
    pub fn q(&self, theta: f64) -> f64 {
        self.sound_speed(theta).powi(2)
    }

    pub fn b(&self, theta: f64) -> f64 {
        2.0 * self.alpha0 / (self.omega * self.omega) * self.q(theta).powf(1.5)
    }

    /// Nonlinearity k(Θ) = β_a/(ρ_a q(Θ)) in 1/Pa.
    pub fn k(&self, theta: f64) -> f64 {
        self.beta_a / (self.rho_a * self.q(theta))
    }

    pub fn omega_b(&self, theta: f64) -> f64 {
        self.perfusion.eval(theta)
    }

    /// κ = κ_a/(ρ_a C_a)
    pub fn kappa(&self) -> f64 {
        self.kappa_a / (self.rho_a * self.c_a)
    }

    /// ν = ρ_b C_b/(ρ_a C_a)
    pub fn nu(&self) -> f64 {
        self.rho_b * self.c_b / (self.rho_a * self.c_a)
    }

    /// Scaled source 𝒢 for one node, absolute temperature.
    pub fn source(&self, pt: f64, theta: f64) -> f64 {
        let q = self.q(theta);
        self.zeta_tilde / (self.rho_a * self.c_a) * self.b(theta) / (q * q) * pt * pt
    }

    /// Evaluates q̃, b̃, k̃, ω̃_b at every node of `theta` (relative to ambient).
    pub fn eval_fields(&self, theta: &[f64]) -> Result<CoefficientFields, MaterialError> {
        let n = theta.len();
        let (q_amb, b_amb) = (self.q(self.theta_ambient), self.b(self.theta_ambient));
        let mut out = CoefficientFields {
            q: NodalField::zeros(n),
            b: NodalField::zeros(n),
            k: NodalField::zeros(n),
            omega_b: NodalField::zeros(n),
        };
        for (i, &t) in theta.iter().enumerate() {
            if !t.is_finite() {
                return Err(MaterialError::NonFinite(i));
            }
            let s = t + self.theta_ambient;
            let q = self.q(s);
            let b = self.b(s);
            check_positive("q", i, q, q_amb)?;
            if b_amb > 0.0 {
                check_positive("b", i, b, b_amb)?;
            }
            out.q[i] = q;
            out.b[i] = b;
            out.k[i] = self.beta_a / (self.rho_a * q);
            out.omega_b[i] = self.perfusion.eval(s);
        }
        Ok(out)
    }

    /// Nodal 𝒢(p_t, θ) in K/s.
    pub fn absorbed_energy(&self, pt: &[f64], theta: &[f64]) -> Result<NodalField, MaterialError> {
        assert_eq!(pt.len(), theta.len());
        let (q_amb, b_amb) = (self.q(self.theta_ambient), self.b(self.theta_ambient));
        let scale = self.zeta_tilde / (self.rho_a * self.c_a);
        let mut out = NodalField::zeros(pt.len());
        for (i, (&v, &t)) in pt.iter().zip(theta).enumerate() {
            if !t.is_finite() {
                return Err(MaterialError::NonFinite(i));
            }
            let s = t + self.theta_ambient;
            let q = self.q(s);
            let b = self.b(s);
            check_positive("q", i, q, q_amb)?;
            if b_amb > 0.0 {
                check_positive("b", i, b, b_amb)?;
            }
            out[i] = scale * b / (q * q) * v * v;
        }
        Ok(out)
    }
}

fn check_positive(field: &'static str, node: usize, value: f64, ambient: f64) -> Result<(), MaterialError> {
    if value > DEGENERACY_RATIO * ambient {
        Ok(())
    } else {
        Err(MaterialError::Degenerate {
            field,
            node,
            value,
            ambient,
        })
    }
}
