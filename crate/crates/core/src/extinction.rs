//! Extinction probabilities of the branching process.

use serde::Serialize;

use crate::error::{ModelError, Result};
use crate::params::ModelParams;
use crate::quadrature::{integrate, integrate_to_infinity, QuadOptions};
use crate::stress::StressSignal;

const FIXED_POINT_TOL: f64 = 1e-13;
const FIXED_POINT_MAX_ITER: usize = 1_000_000;
/// `survives` is reported when `min(π0, π1)` sits this far below one.
pub const SURVIVAL_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtinctionSolution {
    pub pi0: f64,
    pub pi1: f64,
    pub survives: bool,
    pub iterations: usize,
    /// Sup-norm change of the final iteration.
    pub residual: f64,
}

/// Quadratic fixed-point system for newborn extinction probabilities
/// `(π0, π1)` under constant stress.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticSystem {
    pub p: f64,
    pub q: f64,
    pub gamma: f64,
}

impl QuadraticSystem {
    pub fn map(&self, (x0, x1): (f64, f64)) -> (f64, f64) {
        let Self { p, q, gamma } = *self;
        let y0 = (1.0 - q) * p + (1.0 - q) * (1.0 - p) * x0 * x0 + q * x1;
        let m = gamma * x0 + (1.0 - gamma) * x1;
        (y0, m * m)
    }

    /// Iterates the map from `start` until the sup-norm change drops below
    /// `1e-13` or a million iterations pass.
    pub fn solve_from(&self, start: (f64, f64)) -> ExtinctionSolution {
        let (x, iterations, residual) = iterate(|x| self.map(x), start);
        ExtinctionSolution {
            pi0: x.0,
            pi1: x.1,
            survives: x.0.min(x.1) < 1.0 - SURVIVAL_MARGIN,
            iterations,
            residual,
        }
    }
}

fn iterate<F: Fn((f64, f64)) -> (f64, f64)>(map: F, start: (f64, f64)) -> ((f64, f64), usize, f64) {
    let mut x = start;
    let mut change = f64::INFINITY;
    for it in 1..=FIXED_POINT_MAX_ITER {
        let y = map(x);
        change = (y.0 - x.0).abs().max((y.1 - x.1).abs());
        x = y;
        if change < FIXED_POINT_TOL {
            return (x, it, change);
        }
    }
    (x, FIXED_POINT_MAX_ITER, change)
}

/// Minimal non-negative solution of the extinction system for newborn cells
/// (constant stress only).
pub fn solve_extinction(params: &ModelParams) -> Result<ExtinctionSolution> {
    let p = params.constant_p()?;
    let sys = QuadraticSystem {
        p,
        q: params.q(),
        gamma: params.gamma,
    };
    Ok(sys.solve_from((0.0, 0.0)))
}

/// Extinction probability of a lineage founded by one type-`ty` cell of age `a`.
pub fn extinction_at_age(params: &ModelParams, a: f64, ty: usize) -> Result<f64> {
    if a < 0.0 {
        return Err(ModelError::Domain(format!("negative age {a}")));
    }
    let p = params.constant_p()?;
    let sol = solve_extinction(params)?;
    Ok(match ty {
        0 => {
            let qa = params.q_at_age(a);
            (1.0 - qa) * (p + (1.0 - p) * sol.pi0 * sol.pi0) + qa * sol.pi1
        }
        1 => sol.pi1,
        _ => return Err(ModelError::Domain(format!("cell type {ty} is not 0 or 1"))),
    })
}

/// `∂π/∂γ` for newborn extinction probabilities under constant stress, by
/// implicit differentiation of the quadratic system at its minimal root.
/// Zero when extinction is certain.
pub fn extinction_gamma_sensitivity(params: &ModelParams) -> Result<[f64; 2]> {
    let p = params.constant_p()?;
    let q = params.q();
    let g = params.gamma;
    let sol = solve_extinction(params)?;
    if !sol.survives {
        return Ok([0.0, 0.0]);
    }
    let (x0, x1) = (sol.pi0, sol.pi1);
    let m = g * x0 + (1.0 - g) * x1;
    // (I - J) dπ = ∂G/∂γ with J the Jacobian of the map.
    let (a, b) = (1.0 - 2.0 * (1.0 - q) * (1.0 - p) * x0, -q);
    let (c, d) = (-2.0 * m * g, 1.0 - 2.0 * m * (1.0 - g));
    let rhs1 = 2.0 * m * (x0 - x1);
    let det = a * d - b * c;
    if det.abs() < 1e-14 {
        return Err(ModelError::Numerical("extinction system is singular at its root".into()));
    }
    Ok([-b * rhs1 / det, a * rhs1 / det])
}

/// Closed-form survival criterion: the population survives with positive
/// probability iff `p <= 1/2` or `γ < (1 + q/((2p-1)(1-q)))/2`.
pub fn survival_condition(p: f64, q: f64, gamma: f64) -> bool {
    if p <= 0.5 || q >= 1.0 {
        return true;
    }
    gamma < 0.5 * (1.0 + q / ((2.0 * p - 1.0) * (1.0 - q)))
}

/// Smallest `γ` at which the population dies out almost surely, if that
/// threshold lies inside `[0, 1)`.
pub fn critical_gamma(p: f64, q: f64) -> Option<f64> {
    if p <= 0.5 || q >= 1.0 {
        return None;
    }
    let g = 0.5 * (1.0 + q / ((2.0 * p - 1.0) * (1.0 - q)));
    (g < 1.0).then_some(g)
}

/// Area of the almost-sure extinction region in the unit `(γ, q)` square.
pub fn extinction_region_area(p: f64) -> Result<f64> {
    if !(p > 0.5 && p <= 1.0) {
        return Err(ModelError::Domain(format!(
            "extinction region is empty for p = {p} (area 0)"
        )));
    }
    // ∫_0^{q_max} (1 - γ*(q)) dq with q_max = (2p-1)/(2p).
    let e = 2.0 * p - 1.0;
    Ok(0.5 - (2.0 * p).ln() / (2.0 * e))
}

/// Midpoint-rule estimate of the extinction-region area on an `n × n` grid.
pub fn extinction_region_area_numeric(p: f64, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let mut count = 0usize;
    for i in 0..n {
        let q = (i as f64 + 0.5) * h;
        for j in 0..n {
            let g = (j as f64 + 0.5) * h;
            if !survival_condition(p, q, g) {
                count += 1;
            }
        }
    }
    count as f64 * h * h
}

/// Extinction of the process killed at rate `kill_rate`, where a killed cell
/// counts as extinct.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KilledSolution {
    pub pi0: f64,
    pub pi1: f64,
    /// Probability a newborn type-0 cell is killed before any other event.
    pub omega0: f64,
    /// Probability a newborn type-1 cell is killed before dividing.
    pub omega1: f64,
    /// Probability a newborn type-0 cell switches before being killed or dividing.
    pub q_tilde: f64,
    /// Effective death probability with the unkilled `q` in the denominator.
    pub p_tilde_unkilled_q: f64,
    /// Effective death probability normalised by `1 - q̃`.
    pub p_tilde_consistent: f64,
    pub iterations: usize,
    pub residual: f64,
}

pub fn solve_extinction_killed(params: &ModelParams, kill_rate: f64) -> Result<KilledSolution> {
    let p = params.constant_p()?;
    if !(kill_rate >= 0.0) {
        return Err(ModelError::Domain(format!("kill rate {kill_rate} must be >= 0")));
    }
    let opts = QuadOptions::default();
    let scale0 = params.mean_division_time(0);
    let scale1 = params.mean_division_time(1);
    let int0 = integrate_to_infinity(
        |s| (params.ln_psi0(0.0, s) - kill_rate * s).exp(),
        0.0,
        scale0,
        opts,
    );
    let int1 = if kill_rate > 0.0 {
        integrate_to_infinity(|s| (params.ln_psi1(0.0, s) - kill_rate * s).exp(), 0.0, scale1, opts)
    } else {
        0.0
    };
    let omega0 = kill_rate * int0;
    let omega1 = kill_rate * int1;
    let q_tilde = params.alpha * int0;
    let divide0 = (1.0 - q_tilde - omega0).max(0.0);
    let q = params.q();
    let gamma = params.gamma;
    let map = |(x0, x1): (f64, f64)| {
        let y0 = omega0 + divide0 * (p + (1.0 - p) * x0 * x0) + q_tilde * x1;
        let m = gamma * x0 + (1.0 - gamma) * x1;
        (y0, omega1 + (1.0 - omega1) * m * m)
    };
    let ((pi0, pi1), iterations, residual) = iterate(map, (0.0, 0.0));
    Ok(KilledSolution {
        pi0,
        pi1,
        omega0,
        omega1,
        q_tilde,
        p_tilde_unkilled_q: p + (1.0 - p) * omega0 / (1.0 - q),
        p_tilde_consistent: p + (1.0 - p) * omega0 / (1.0 - q_tilde),
        iterations,
        residual,
    })
}

/// Extinction probabilities `π_i(s, a)` under periodic stress, on a grid with
/// equal time and age steps `h = T / n_s`. Entry `[i * n_a + j]` holds the
/// value at phase `s_i = i h` and age `a_j = j h`.
#[derive(Debug, Clone, Serialize)]
pub struct PeriodicExtinctionField {
    pub period: f64,
    pub step: f64,
    pub n_s: usize,
    pub n_a: usize,
    pub pi0: Vec<f64>,
    pub pi1: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl PeriodicExtinctionField {
    pub fn pi0_at(&self, i: usize, j: usize) -> f64 {
        self.pi0[(i % self.n_s) * self.n_a + j]
    }

    pub fn pi1_at(&self, i: usize, j: usize) -> f64 {
        self.pi1[(i % self.n_s) * self.n_a + j]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PeriodicOptions {
    pub n_s: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PeriodicOptions {
    fn default() -> Self {
        Self {
            n_s: 200,
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

/// Solves the periodic extinction system by monotone iteration from zero.
///
/// Each sweep conditions on the first time step of a cell's life: within a
/// step the cell divides, switches, or survives with probabilities computed
/// exactly from the hazards, and survivors inherit the value one step later
/// along the characteristic.
pub fn solve_periodic_extinction(params: &ModelParams, opts: PeriodicOptions) -> Result<PeriodicExtinctionField> {
    let period = match &params.stress {
        StressSignal::Periodic { period, .. } => *period,
        StressSignal::Constant { .. } => params.mean_division_time(0),
    };
    let n_s = opts.n_s.max(2);
    let h = period / n_s as f64;
    let a_end = params.tail_age(0.0, 1e-14);
    let n_a = (a_end / h).ceil() as usize + 1;
    if n_s.saturating_mul(n_a) > 200_000_000 {
        return Err(ModelError::Domain(format!(
            "grid of {n_s} x {n_a} cells is too large; raise the step"
        )));
    }

    // Per-age step probabilities.
    let mut surv0 = vec![0.0; n_a];
    let mut switch0 = vec![0.0; n_a];
    let mut div0 = vec![1.0; n_a];
    let mut surv1 = vec![0.0; n_a];
    let mut div1 = vec![1.0; n_a];
    for j in 0..n_a {
        let (a, b) = (j as f64 * h, (j + 1) as f64 * h);
        let l0 = params.ln_psi0(a, b);
        let l1 = params.ln_psi1(a, b);
        let sw = if params.alpha > 0.0 {
            params.alpha * integrate(|u| params.ln_psi0(a, u).exp(), a, b, QuadOptions::default()).value
        } else {
            0.0
        };
        surv0[j] = l0.exp();
        switch0[j] = sw;
        div0[j] = (-l0.exp_m1() - sw).max(0.0);
        surv1[j] = l1.exp();
        div1[j] = -l1.exp_m1();
    }
    let p_step: Vec<f64> = (0..n_s).map(|i| params.stress.at((i as f64 + 0.5) * h)).collect();
    let gamma = params.gamma;

    let mut pi0 = vec![0.0; n_s * n_a];
    let mut pi1 = vec![0.0; n_s * n_a];
    let mut birth0 = vec![0.0; n_s];
    let mut birth1 = vec![0.0; n_s];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        for i in 0..n_s {
            birth0[i] = pi0[i * n_a] * pi0[i * n_a];
            let m = gamma * pi0[i * n_a] + (1.0 - gamma) * pi1[i * n_a];
            birth1[i] = m * m;
        }
        let mut change: f64 = 0.0;
        for j in (0..n_a).rev() {
            for i in 0..n_s {
                let nxt = (i + 1) % n_s;
                let p = p_step[i];
                let kids0 = p + (1.0 - p) * 0.5 * (birth0[i] + birth0[nxt]);
                let kids1 = 0.5 * (birth1[i] + birth1[nxt]);
                let idx = i * n_a + j;
                let (new0, new1) = if j + 1 < n_a {
                    let (ahead0, ahead1) = (pi0[nxt * n_a + j + 1], pi1[nxt * n_a + j + 1]);
                    let new1 = div1[j] * kids1 + surv1[j] * ahead1;
                    (div0[j] * kids0 + switch0[j] * 0.5 * (new1 + ahead1) + surv0[j] * ahead0, new1)
                } else {
                    // Beyond the last node the hazards are taken as age-stationary,
                    // so the value is the fixed point of its own step.
                    let new1 = kids1;
                    ((div0[j] * kids0 + switch0[j] * new1) / (1.0 - surv0[j]).max(f64::MIN_POSITIVE), new1)
                };
                change = change.max((new0 - pi0[idx]).abs()).max((new1 - pi1[idx]).abs());
                pi0[idx] = new0;
                pi1[idx] = new1;
            }
        }
        residual = change;
        if change < opts.tol {
            break;
        }
    }
    if residual >= opts.tol {
        return Err(ModelError::NotConverged {
            what: "periodic extinction iteration",
            iterations,
            residual,
        });
    }
    Ok(PeriodicExtinctionField {
        period,
        step: h,
        n_s,
        n_a,
        pi0,
        pi1,
        iterations,
        residual,
    })
}
