//! Survival functions, transition matrices and Laplace quantities of the
//! single-cell life cycle.

use nalgebra::Matrix2;

use crate::error::{invalid, ModelError, Result};
use crate::hazard::HazardModel;
use crate::params::ModelParams;
use crate::quadrature::{integrate, QuadOptions};

pub type Mat2 = Matrix2<f64>;

impl ModelParams {
    /// `ln ψ0(s,t)`: log probability that a type-0 cell of age `s` neither
    /// switches nor divides before age `t`.
    pub fn ln_psi0(&self, s: f64, t: f64) -> f64 {
        -self.alpha * (t - s) - self.beta0.cumulative(s, t)
    }

    pub fn ln_psi1(&self, s: f64, t: f64) -> f64 {
        -self.beta1.cumulative(s, t)
    }

    pub fn psi0(&self, s: f64, t: f64) -> f64 {
        self.ln_psi0(s, t).exp()
    }

    pub fn psi1(&self, s: f64, t: f64) -> f64 {
        self.ln_psi1(s, t).exp()
    }

    /// `∫_s^t ψ0(s,u) ψ1(u,t) du`.
    pub fn conv01(&self, s: f64, t: f64) -> f64 {
        if t <= s {
            return 0.0;
        }
        let scale = self.mean_division_time(0).min(self.mean_division_time(1));
        let panels = (((t - s) / scale) * 2.0).ceil().clamp(1.0, 64.0) as usize;
        integrate(
            |u| (self.ln_psi0(s, u) + self.ln_psi1(u, t)).exp(),
            s,
            t,
            QuadOptions::default().with_panels(panels),
        )
        .value
    }

    /// Transition matrix `Ψ(s,t)`; entry `(i,j)` is the probability that a
    /// type-`i` cell of age `s` is alive, undivided and of type `j` at age `t`.
    pub fn psi_matrix(&self, s: f64, t: f64) -> Mat2 {
        Mat2::new(self.psi0(s, t), self.alpha * self.conv01(s, t), 0.0, self.psi1(s, t))
    }

    /// Offspring rate matrix `B(a)` at stress level `p`.
    pub fn b_matrix(&self, p: f64, a: f64) -> Mat2 {
        let b0 = self.beta0.rate(a);
        let b1 = self.beta1.rate(a);
        Mat2::new((1.0 - p) * b0, 0.0, self.gamma * b1, (1.0 - self.gamma) * b1)
    }

    /// Loss matrix `D(a)`.
    pub fn d_matrix(&self, a: f64) -> Mat2 {
        Mat2::new(self.alpha + self.beta0.rate(a), -self.alpha, 0.0, self.beta1.rate(a))
    }

    /// `K(s,t) = Ψ(s,t) B(t)` under constant stress.
    pub fn k_matrix(&self, s: f64, t: f64) -> Result<Mat2> {
        let p = self.constant_p()?;
        Ok(self.psi_matrix(s, t) * self.b_matrix(p, t))
    }

    /// Probability that a newborn type-0 cell switches before dividing.
    pub fn q(&self) -> f64 {
        if self.alpha == 0.0 {
            return 0.0;
        }
        1.0 - self.beta0.laplace(self.alpha)
    }

    /// Probability that a type-0 cell of age `a` switches before dividing.
    pub fn q_at_age(&self, a: f64) -> f64 {
        if self.alpha == 0.0 {
            return 0.0;
        }
        1.0 - self.beta0.residual_laplace(a, self.alpha)
    }

    pub fn xi0(&self, lambda: f64) -> f64 {
        self.beta0.laplace(lambda)
    }

    pub fn xi1(&self, lambda: f64) -> f64 {
        self.beta1.laplace(lambda)
    }

    /// `ζ(λ) = α ∫_0^∞ ψ0(0,u) e^{-λu} R1(u,λ) du`: Laplace transform of the
    /// time to first division for a newborn type-0 cell that switches first.
    pub fn zeta(&self, lambda: f64) -> f64 {
        if self.alpha == 0.0 {
            return 0.0;
        }
        let end = self.beta0.tail_age(self.alpha + lambda, 1e-18);
        let panels = ((end / self.mean_division_time(0)).ceil() as usize).clamp(4, 64);
        self.alpha
            * integrate(
                |u| (self.ln_psi0(0.0, u) - lambda * u).exp() * self.beta1.residual_laplace(u, lambda),
                0.0,
                end,
                QuadOptions::default().with_panels(panels),
            )
            .value
    }
}

/// Switching rate that makes the probability of switching before the first
/// division equal to `q` for a type-0 clock `beta0`.
pub fn alpha_from_q(beta0: &HazardModel, q: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&q) {
        return Err(invalid("q", format!("must lie in [0, 1), got {q}")));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    if let HazardModel::Gamma { shape, rate, .. } = beta0 {
        return Ok(rate * ((1.0 - q).powf(-1.0 / shape) - 1.0));
    }
    let target = 1.0 - q;
    let mut hi = 1.0;
    while beta0.laplace(hi) > target {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(ModelError::Numerical(format!("no switching rate reaches q = {q}")));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta0.laplace(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
