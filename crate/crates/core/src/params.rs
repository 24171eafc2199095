//! Model parameters.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, ModelError, Result};
use crate::hazard::HazardModel;
use crate::stress::StressSignal;

/// Full parameter set of the two-type model.
///
/// Type 0 cells divide at hazard `beta0`, switch to type 1 at rate `alpha`,
/// and die at division with probability `p(t)`. Type 1 cells divide at hazard
/// `beta1`; each daughter is type 0 with probability `gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub beta0: HazardModel,
    pub beta1: HazardModel,
    pub alpha: f64,
    pub gamma: f64,
    pub stress: StressSignal,
}

impl ModelParams {
    pub fn new(
        beta0: HazardModel,
        beta1: HazardModel,
        alpha: f64,
        gamma: f64,
        stress: StressSignal,
    ) -> Result<Self> {
        let params = Self {
            beta0,
            beta1,
            alpha,
            gamma,
            stress,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(invalid("alpha", format!("must be finite and >= 0, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(invalid("gamma", format!("must lie in [0, 1], got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.beta0.clone(), self.beta1.clone(), alpha, self.gamma, self.stress.clone())
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.beta0.clone(), self.beta1.clone(), self.alpha, gamma, self.stress.clone())
    }

    pub fn with_stress(&self, stress: StressSignal) -> Result<Self> {
        Self::new(self.beta0.clone(), self.beta1.clone(), self.alpha, self.gamma, stress)
    }

    pub fn with_p(&self, p: f64) -> Result<Self> {
        self.with_stress(StressSignal::constant(p)?)
    }

    /// Constant stress value, or a domain error for time-varying stress.
    pub fn constant_p(&self) -> Result<f64> {
        self.stress.as_constant().ok_or_else(|| {
            ModelError::Domain("this routine needs constant stress".into())
        })
    }

    /// Common upper bound `b̄` of both hazards.
    pub fn bar_b(&self) -> f64 {
        self.beta0.upper_bound().max(self.beta1.upper_bound())
    }

    /// Common A3 lower rate `b` of both hazards.
    pub fn lower_b(&self) -> f64 {
        self.beta0.lower_bound().1.min(self.beta1.lower_bound().1)
    }

    /// Smallest admissible Laplace argument for the growth problem.
    pub fn lambda_floor(&self) -> f64 {
        -self.lower_b() + 1e-6
    }

    /// Age past which both survival functions, tilted by `e^{-λa}`, fall below `eps`.
    pub fn tail_age(&self, lambda: f64, eps: f64) -> f64 {
        let a0 = self.beta0.tail_age(self.alpha + lambda, eps);
        let a1 = self.beta1.tail_age(lambda, eps);
        a0.max(a1)
    }

    pub fn mean_division_time(&self, ty: usize) -> f64 {
        if ty == 0 {
            self.beta0.mean_division_time()
        } else {
            self.beta1.mean_division_time()
        }
    }

    /// Checks `ψ0(0,a) < ψ1(0,a)` for `a > 0` on a grid reaching the tail age.
    pub fn check_domination(&self) -> Result<()> {
        let end = self.tail_age(0.0, 1e-14);
        let n = 2000;
        for i in 1..=n {
            let a = end * i as f64 / n as f64;
            let (l0, l1) = (self.ln_psi0(0.0, a), self.ln_psi1(0.0, a));
            if l0 > l1 + 1e-12 {
                return Err(ModelError::Assumption(format!(
                    "type-0 survival exceeds type-1 survival at age {a}"
                )));
            }
        }
        Ok(())
    }

    pub fn check_assumptions(&self) -> Result<()> {
        self.beta0.check_assumptions()?;
        self.beta1.check_assumptions()
    }
}
