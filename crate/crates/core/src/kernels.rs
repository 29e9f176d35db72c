//! Memory kernels for the nonlocal acoustic damping term.
//!
//! Besides pointwise kernel evaluation this module provides the Gamma and
//! Mittag-Leffler functions the kernels are built from, the L1 weight
//! sequence that discretizes the Caputo derivative, and a discrete probe of
//! the kernel coercivity inequality.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("{what}: argument {value} is outside the admissible domain")]
    Domain { what: &'static str, value: f64 },
    #[error("the Dirac kernel has no pointwise value")]
    UnsupportedEvaluation,
    #[error("Mittag-Leffler series lost accuracy after {terms} terms (last term magnitude {last_term:e})")]
    Accuracy { terms: usize, last_term: f64 },
}

pub type Result<T> = std::result::Result<T, KernelError>;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

fn lanczos_series(x: f64) -> f64 {
    // x is the shifted argument (z - 1)
    let mut acc = LANCZOS_COEFFS[0];
    for (i, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    acc
}

/// Natural log of Γ(x) for x ≥ 0.5.
fn ln_gamma_right(x: f64) -> f64 {
    let z = x - 1.0;
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + lanczos_series(z).ln()
}

/// Γ(x) for positive x, Lanczos approximation with g = 7 and nine coefficients.
pub fn gamma_fn(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(KernelError::Domain {
            what: "gamma",
            value: x,
        });
    }
    Ok(gamma_unchecked(x))
}

fn gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        PI / ((PI * x).sin() * gamma_unchecked(1.0 - x))
    } else {
        ln_gamma_right(x).exp()
    }
}

/// 1/Γ(x) on the whole real line, zero at the poles.
fn recip_gamma(x: f64) -> f64 {
    if x <= 0.0 && x == x.round() {
        return 0.0;
    }
    if x < 0.5 {
        // reflection: 1/Γ(x) = sin(πx) Γ(1-x) / π
        (PI * x).sin() * ln_gamma_right(1.0 - x).exp() / PI
    } else {
        (-ln_gamma_right(x)).exp()
    }
}

/// Generalized Mittag-Leffler function E_{a,b}(z) for real arguments, summed
/// as a plain power series.
///
/// Summation stops once a term (in the decreasing tail) drops below 1e-16 of
/// the running sum, with a hard cap of 500 terms. For large negative `z` the
/// alternating series cancels catastrophically; when the accumulated
/// round-off of the largest term exceeds 1e-10 of the result scale the call
/// fails with [`KernelError::Accuracy`] instead of returning noise.
pub fn mittag_leffler(a: f64, b: f64, z: f64) -> Result<f64> {
    const MAX_TERMS: usize = 500;
    if !(a > 0.0) || !a.is_finite() {
        return Err(KernelError::Domain {
            what: "mittag_leffler (a)",
            value: a,
        });
    }
    if !b.is_finite() || !z.is_finite() {
        return Err(KernelError::Domain {
            what: "mittag_leffler (b, z)",
            value: if b.is_finite() { z } else { b },
        });
    }
    if z == 0.0 {
        return Ok(recip_gamma(b));
    }
    let ln_abs_z = z.abs().ln();
    let negative = z < 0.0;
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    let mut max_term = 0.0_f64;
    let mut prev_mag = f64::INFINITY;
    let mut last = 0.0_f64;
    for k in 0..MAX_TERMS {
        let arg = a * k as f64 + b;
        let mag = if arg >= 0.5 {
            (k as f64 * ln_abs_z - ln_gamma_right(arg)).exp()
        } else {
            (z.abs().powi(k as i32) * recip_gamma(arg)).abs()
        };
        let sign = {
            let s = if negative && k % 2 == 1 { -1.0 } else { 1.0 };
            if arg < 0.5 && recip_gamma(arg) < 0.0 {
                -s
            } else {
                s
            }
        };
        let term = sign * mag;
        // Neumaier summation keeps the tail from being swamped by the head.
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
        max_term = max_term.max(mag);
        last = mag;
        let total = sum + comp;
        let in_tail = arg > 0.0 && mag <= prev_mag && k > 0;
        if in_tail && mag < 1e-16 * total.abs().max(f64::EPSILON * max_term) {
            let roundoff = f64::EPSILON * max_term;
            if roundoff > 1e-10 * total.abs().max(1.0) {
                return Err(KernelError::Accuracy {
                    terms: k + 1,
                    last_term: mag,
                });
            }
            return Ok(total);
        }
        prev_mag = mag;
    }
    Err(KernelError::Accuracy {
        terms: MAX_TERMS,
        last_term: last,
    })
}

/// Memory kernel 𝔎 of the damping term `b 𝔎 * Δp_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MemoryKernel {
    /// t^{-α}/Γ(1-α); yields Caputo-type fractional damping.
    Abel { alpha: f64 },
    /// (1/τ) exp(-t/τ) with relaxation time τ in seconds.
    Exponential { relaxation: f64 },
    /// τ^{-a} t^{b-1} E_{a,b}(-(t/τ)^a).
    MittagLeffler { a: f64, b: f64, relaxation: f64 },
    /// δ_0, i.e. classical strong damping.
    DiracDelta,
}

impl MemoryKernel {
    pub fn abel(alpha: f64) -> Result<Self> {
        let k = MemoryKernel::Abel { alpha };
        k.validate()?;
        Ok(k)
    }

    pub fn exponential(relaxation: f64) -> Result<Self> {
        let k = MemoryKernel::Exponential { relaxation };
        k.validate()?;
        Ok(k)
    }

    pub fn mittag_leffler(a: f64, b: f64, relaxation: f64) -> Result<Self> {
        let k = MemoryKernel::MittagLeffler { a, b, relaxation };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MemoryKernel::Abel { alpha } if !(alpha > 0.0 && alpha < 1.0) => {
                Err(KernelError::Domain {
                    what: "Abel kernel order",
                    value: alpha,
                })
            }
            MemoryKernel::Exponential { relaxation } if !(relaxation > 0.0) => {
                Err(KernelError::Domain {
                    what: "relaxation time",
                    value: relaxation,
                })
            }
            MemoryKernel::MittagLeffler { a, relaxation, .. } => {
                if !(relaxation > 0.0) {
                    Err(KernelError::Domain {
                        what: "relaxation time",
                        value: relaxation,
                    })
                } else if !(a > 0.0) {
                    Err(KernelError::Domain {
                        what: "Mittag-Leffler order",
                        value: a,
                    })
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Pointwise value 𝔎(t) for t > 0.
    pub fn eval(&self, t: f64) -> Result<f64> {
        self.validate()?;
        if !(t > 0.0) {
            return Err(KernelError::Domain {
                what: "kernel time",
                value: t,
            });
        }
        match *self {
            MemoryKernel::Abel { alpha } => Ok(t.powf(-alpha) / gamma_unchecked(1.0 - alpha)),
            MemoryKernel::Exponential { relaxation } => {
                Ok((-t / relaxation).exp() / relaxation)
            }
            MemoryKernel::MittagLeffler { a, b, relaxation } => {
                let e = mittag_leffler(a, b, -(t / relaxation).powf(a))?;
                Ok(relaxation.powf(-a) * t.powf(b - 1.0) * e)
            }
            MemoryKernel::DiracDelta => Err(KernelError::UnsupportedEvaluation),
        }
    }

    /// Exact ∫_{t0}^{t1} 𝔎(u) du for 0 ≤ t0 ≤ t1.
    pub fn interval_integral(&self, t0: f64, t1: f64) -> Result<f64> {
        self.validate()?;
        if !(t0 >= 0.0 && t1 >= t0) {
            return Err(KernelError::Domain {
                what: "kernel integration interval",
                value: t0,
            });
        }
        match *self {
            MemoryKernel::Abel { alpha } => {
                let s = 1.0 - alpha;
                Ok((t1.powf(s) - t0.powf(s)) / gamma_unchecked(2.0 - alpha))
            }
            MemoryKernel::Exponential { relaxation } => {
                Ok((-t0 / relaxation).exp() - (-t1 / relaxation).exp())
            }
            MemoryKernel::MittagLeffler { a, b, relaxation } => {
                if !(b > 0.0) {
                    return Err(KernelError::Domain {
                        what: "Mittag-Leffler kernel integral requires b > 0",
                        value: b,
                    });
                }
                // d/du [u^b E_{a,b+1}(-c u^a)] = u^{b-1} E_{a,b}(-c u^a)
                let anti = |u: f64| -> Result<f64> {
                    if u == 0.0 {
                        return Ok(0.0);
                    }
                    Ok(u.powf(b) * mittag_leffler(a, b + 1.0, -(u / relaxation).powf(a))?)
                };
                Ok(relaxation.powf(-a) * (anti(t1)? - anti(t0)?))
            }
            MemoryKernel::DiracDelta => Err(KernelError::UnsupportedEvaluation),
        }
    }
}

/// The L1 weight sequence ζ_0^{n+1}, …, ζ_{n+1}^{n+1} of the Caputo
/// discretization at step n.
///
/// Interior weights do not depend on n, so advancing one step only rewrites
/// the last weight and appends a new one; the powers j^{1-α} are cached.
#[derive(Debug, Clone)]
pub struct L1Weights {
    alpha: f64,
    norm: f64,
    powers: Vec<f64>,
    weights: Vec<f64>,
    n: usize,
}

impl L1Weights {
    /// Weights for step index `n` (time level n+1).
    pub fn new(alpha: f64, n: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(KernelError::Domain {
                what: "L1 weights order",
                value: alpha,
            });
        }
        let norm = 1.0 / (2.0 * gamma_unchecked(2.0 - alpha));
        let mut w = L1Weights {
            alpha,
            norm,
            powers: vec![0.0, 1.0],
            weights: vec![norm, norm],
            n: 0,
        };
        while w.n < n {
            w.advance();
        }
        Ok(w)
    }

    fn power(&mut self, j: usize) -> f64 {
        let s = 1.0 - self.alpha;
        while self.powers.len() <= j {
            let k = self.powers.len();
            self.powers.push((k as f64).powf(s));
        }
        self.powers[j]
    }

    /// Moves from step n to n+1.
    pub fn advance(&mut self) {
        let n = self.n + 1;
        let p_n1 = self.power(n + 1);
        let p_n = self.power(n);
        let p_nm1 = self.power(n - 1);
        // ζ_n becomes an interior weight, ζ_{n+1} is new
        self.weights[n] = self.norm * (p_n1 - p_nm1);
        self.weights.push(self.norm * (p_n1 - p_n));
        self.n = n;
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn step(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn zeta(&self, j: usize) -> f64 {
        self.weights[j]
    }

    /// Closed form of Σ_j ζ_j = (n+1)^{1-α}/Γ(2-α).
    pub fn telescoped_sum(&self) -> f64 {
        ((self.n + 1) as f64).powf(1.0 - self.alpha) * 2.0 * self.norm
    }
}

/// L1 approximation of the Caputo derivative at the last time level, from
/// the velocity samples p_t(t_0), …, p_t(t_{n+1}) on a uniform grid of step `tau`.
pub fn caputo_l1_apply(velocity_history: &[f64], alpha: f64, tau: f64) -> Result<f64> {
    if velocity_history.is_empty() {
        return Err(KernelError::Domain {
            what: "empty velocity history",
            value: 0.0,
        });
    }
    if !(tau > 0.0) {
        return Err(KernelError::Domain {
            what: "time step",
            value: tau,
        });
    }
    if velocity_history.len() == 1 {
        return Ok(0.0);
    }
    let n = velocity_history.len() - 2;
    let w = L1Weights::new(alpha, n)?;
    let last = n + 1;
    let acc: f64 = w
        .as_slice()
        .iter()
        .enumerate()
        .map(|(j, z)| z * velocity_history[last - j])
        .sum();
    Ok(tau.powf(1.0 - alpha) * acc)
}

/// Discrete form of the coercivity inequality ∫(𝔎*y)y ≥ C ∫(𝔎*y)² with C = 1.
///
/// The convolution integrates the kernel exactly over each interval against
/// the interval mean of `signal`, and the outer integral is the trapezoidal
/// rule. Returns `(lhs, rhs)`; comparing them is left to the caller.
pub fn coercivity_probe(kernel: &MemoryKernel, signal: &[f64], tau: f64) -> Result<(f64, f64)> {
    let n = signal.len();
    if n < 2 || !(tau > 0.0) {
        return Err(KernelError::Domain {
            what: "coercivity probe needs at least two samples and tau > 0",
            value: n as f64,
        });
    }
    let trap = |i: usize| if i == 0 || i == n - 1 { 0.5 * tau } else { tau };
    if matches!(kernel, MemoryKernel::DiracDelta) {
        let s: f64 = (0..n).map(|i| trap(i) * signal[i] * signal[i]).sum();
        return Ok((s, s));
    }
    let cells: Vec<f64> = (0..n - 1)
        .map(|k| kernel.interval_integral(k as f64 * tau, (k + 1) as f64 * tau))
        .collect::<Result<_>>()?;
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for i in 1..n {
        let conv: f64 = (0..i)
            .map(|j| cells[i - 1 - j] * 0.5 * (signal[j] + signal[j + 1]))
            .sum();
        lhs += trap(i) * conv * signal[i];
        rhs += trap(i) * conv * conv;
    }
    Ok((lhs, rhs))
}
