use serde::Serialize;

use crate::error::{ModelError, Result};
use crate::params::ModelParams;
use crate::quadrature::{integrate, QuadOptions};

/// Solution of the renewal equation
/// `u(t) = Ψ(0,t) f(t) + 2 ∫_0^t K(0,s) u(t-s) ds`, where `u_i(t)` is the
/// expected sum of `f` over the population at time `t` descending from one
/// newborn type-`i` cell.
///
/// Values are stored tilted by `e^{-tilt · t}` to keep them in range.
#[derive(Debug, Clone, Serialize)]
pub struct RenewalSolution {
    pub dt: f64,
    pub tilt: f64,
    pub tilted: Vec<[f64; 2]>,
}

impl RenewalSolution {
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn value(&self, n: usize) -> [f64; 2] {
        let s = (self.tilt * self.time(n)).exp();
        [self.tilted[n][0] * s, self.tilted[n][1] * s]
    }

    pub fn ln_value(&self, n: usize, ty: usize) -> f64 {
        self.tilted[n][ty].ln() + self.tilt * self.time(n)
    }
}

/// Trapezoidal product integration of the renewal equation on `[0, t_end]`
/// under constant stress; `f(a)` gives the per-type payoff at age `a`.
pub fn renewal_mean<F: Fn(f64) -> [f64; 2]>(
    params: &ModelParams,
    f: F,
    t_end: f64,
    dt: f64,
) -> Result<RenewalSolution> {
    let p = params.constant_p()?;
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(ModelError::Domain(format!("bad renewal grid dt = {dt}, t_end = {t_end}")));
    }
    let steps = (t_end / dt).round() as usize;
    let tilt = 0.5 * params.bar_b();
    let gamma = params.gamma;

    // Ψ(0, s_m) on the grid; conv01 by cumulative recursion.
    let mut conv = vec![0.0; steps + 1];
    let opts = QuadOptions::default();
    if params.alpha > 0.0 {
        for m in 1..=steps {
            let (a, b) = ((m - 1) as f64 * dt, m as f64 * dt);
            let piece = integrate(|u| (params.ln_psi0(0.0, u) + params.ln_psi1(u, b)).exp(), a, b, opts).value;
            conv[m] = conv[m - 1] * params.psi1(a, b) + piece;
        }
    }
    // Tilted kernel e^{-tilt s} K(0,s) = e^{-tilt s} Ψ(0,s) B(s), row-major.
    let mut kern = Vec::with_capacity(steps + 1);
    let mut forcing = Vec::with_capacity(steps + 1);
    for (m, &cm) in conv.iter().enumerate() {
        let s = m as f64 * dt;
        let w = (-tilt * s).exp();
        let (p00, p01, p11) = (params.psi0(0.0, s), params.alpha * cm, params.psi1(0.0, s));
        let (b0, b1) = (params.beta0.rate(s), params.beta1.rate(s));
        // B = [[(1-p) b0, 0], [γ b1, (1-γ) b1]].
        let k00 = p00 * (1.0 - p) * b0 + p01 * gamma * b1;
        let k01 = p01 * (1.0 - gamma) * b1;
        let k10 = p11 * gamma * b1;
        let k11 = p11 * (1.0 - gamma) * b1;
        kern.push([k00 * w, k01 * w, k10 * w, k11 * w]);
        let fv = f(s);
        forcing.push([w * (p00 * fv[0] + p01 * fv[1]), w * p11 * fv[1]]);
    }

    let mut v: Vec<[f64; 2]> = Vec::with_capacity(steps + 1);
    v.push(forcing[0]);
    let k0 = kern[0];
    // I - Δt K(0,0) for the implicit diagonal term.
    let (m00, m01, m10, m11) = (1.0 - dt * k0[0], -dt * k0[1], -dt * k0[2], 1.0 - dt * k0[3]);
    let det = m00 * m11 - m01 * m10;
    if det.abs() < 1e-300 {
        return Err(ModelError::Numerical("singular renewal step".into()));
    }
    for n in 1..=steps {
        let mut acc = [0.0; 2];
        for m in 1..n {
            let k = &kern[m];
            let x = &v[n - m];
            acc[0] += k[0] * x[0] + k[1] * x[1];
            acc[1] += k[2] * x[0] + k[3] * x[1];
        }
        let k = &kern[n];
        let x = &v[0];
        acc[0] += 0.5 * (k[0] * x[0] + k[1] * x[1]);
        acc[1] += 0.5 * (k[2] * x[0] + k[3] * x[1]);
        let r0 = forcing[n][0] + 2.0 * dt * acc[0];
        let r1 = forcing[n][1] + 2.0 * dt * acc[1];
        v.push([(m11 * r0 - m01 * r1) / det, (m00 * r1 - m10 * r0) / det]);
    }
    Ok(RenewalSolution {
        dt,
        tilt,
        tilted: v,
    })
}

/// Growth rate from the expected population size of a type-0 founder:
/// slope of its logarithm over the second half of `[0, horizon]`.
pub fn renewal_growth_rate(params: &ModelParams, dt: f64, horizon: f64) -> Result<f64> {
    let sol = renewal_mean(params, |_| [1.0, 1.0], horizon, dt)?;
    let end = sol.tilted.len() - 1;
    let mid = end / 2;
    if mid == 0 {
        return Err(ModelError::Domain("horizon too short for a growth estimate".into()));
    }
    let slope = (sol.ln_value(end, 0) - sol.ln_value(mid, 0)) / (sol.time(end) - sol.time(mid));
    if !slope.is_finite() {
        return Err(ModelError::Numerical("renewal solution vanished".into()));
    }
    Ok(slope)
}
