//! Two-type age-structured branching model of a cell population under
//! stress-induced death and phenotype switching.
//!
//! Type 0 cells are fast-dividing and die at division with probability `p(t)`.
//! They switch at rate `α` into a slow, stress-tolerant type 1, whose
//! daughters revert to type 0 with probability `γ`. The crate computes
//! extinction probabilities, the Malthusian growth rate with its sensitivities,
//! PDE and Floquet growth rates for periodic stress, and Monte Carlo
//! estimates from an exact individual-based simulator.

// Negated float comparisons are used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod extinction;
pub mod experiments;
pub mod hazard;
pub mod kernel;
pub mod params;
pub mod pde;
pub mod quadrature;
pub mod sim;
pub mod special;
pub mod spectral;
pub mod stress;

pub use error::{ModelError, Result};
pub use extinction::{
    critical_gamma, extinction_at_age, extinction_gamma_sensitivity, extinction_region_area, solve_extinction, survival_condition,
    ExtinctionSolution,
};
pub use hazard::{HazardModel, HazardSpec};
pub use kernel::{alpha_from_q, Mat2};
pub use params::ModelParams;
pub use spectral::{
    critical_p_bar, growth_sensitivity, k_infinity, lambda_star_0, lambda_star_1, malthusian_lambda, matrix_f,
    spectral_triplet, GrowthMatrix, GrowthSensitivity, SpectralTriplet,
};
pub use stress::{Segment, StressSignal};

/// Reference parameter set: Gamma(3,1) fast clock, Gamma(3,0.1) slow clock,
/// switching rate set from the switch-before-division probability `q`.
pub fn reference_params(p: f64, q: f64, gamma: f64) -> Result<ModelParams> {
    let beta0 = HazardModel::gamma(3.0, 1.0)?;
    let beta1 = HazardModel::gamma(3.0, 0.1)?;
    let alpha = alpha_from_q(&beta0, q)?;
    ModelParams::new(beta0, beta1, alpha, gamma, StressSignal::constant(p)?)
}
