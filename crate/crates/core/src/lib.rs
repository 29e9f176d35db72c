//! Finite-element simulation of ultrasound-enhanced drug delivery.
//!
//! The model couples a fractionally damped Westervelt equation for the
//! acoustic pressure, a Pennes bioheat equation whose source is the absorbed
//! acoustic energy, and an advection-diffusion equation for the drug
//! concentration driven by the pressure gradient. Space is discretized with
//! P1 triangles; time with a Newmark predictor-corrector plus fixed-point
//! iteration (pressure), semi-implicit Euler (temperature) and implicit Euler
//! (concentration).

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acoustics;
pub mod bioheat;
pub mod fem;
pub mod kernels;
pub mod materials;
pub mod mesh;
pub mod output;
pub mod scenario;
pub mod transport;
pub mod verify;

pub use acoustics::{AcousticState, Coupling, Damping, Excitation, NewmarkParams, WesterveltStepper};
pub use bioheat::ThermalState;
pub use fem::{CsrMatrix, FemSpace, NodalField};
pub use kernels::{L1Weights, MemoryKernel};
pub use materials::MaterialModel;
pub use mesh::{BoundaryTag, Mesh};
pub use scenario::{CouplingMode, RunReport, ScenarioConfig};
pub use transport::{ConcentrationState, VelocityModel};
