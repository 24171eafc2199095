use serde::Serialize;

use super::{AgeGrid, DensityField, Stepper};
use crate::error::{ModelError, Result};
use crate::params::ModelParams;
use crate::quadrature::{integrate, QuadOptions};
use crate::spectral::{left_vector, malthusian_lambda, matrix_f};

#[derive(Debug, Clone, Copy)]
pub struct FloquetOptions {
    /// Target age/time step; the actual step divides every stress segment.
    pub da: Option<f64>,
    /// Convergence threshold on the change of the per-block growth factor.
    pub tol: f64,
    pub max_periods: usize,
    pub sensitivities: bool,
}

impl Default for FloquetOptions {
    fn default() -> Self {
        Self {
            da: None,
            tol: 1e-8,
            max_periods: 10_000,
            sensitivities: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FloquetResult {
    /// Floquet growth rate `λ_T`.
    pub lambda: f64,
    pub period: f64,
    pub da: f64,
    pub steps_per_period: usize,
    pub periods: usize,
    pub dlambda_dalpha: Option<f64>,
    pub dlambda_dgamma: Option<f64>,
}

/// Smallest step count per period, at least `t / da_target`, that puts every
/// segment boundary on the grid.
fn steps_per_period(params: &ModelParams, period: f64, da_target: f64) -> Result<usize> {
    let marks = params.stress.breakpoints();
    let base = (period / da_target).ceil().max(1.0) as usize;
    for n in base..=(64 * base + 1000) {
        let ok = marks.iter().all(|&b| {
            let x = b / period * n as f64;
            (x - x.round()).abs() < 1e-9 * n as f64
        });
        if ok {
            return Ok(n);
        }
    }
    Err(ModelError::Domain(format!(
        "no age step near {da_target} divides every stress segment"
    )))
}

/// Cumulative per-age transport `n_j = P_j n_0` for a newborn cohort:
/// `(A_j, C_j, B_j)` with `n0 = A x0` and `n1 = C x0 + B x1`.
fn transport_products(st: &Stepper) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let len = st.grid.len;
    let (mut a, mut c, mut b) = (vec![1.0; len], vec![0.0; len], vec![1.0; len]);
    for j in 1..len {
        a[j] = st.s0[j - 1] * a[j - 1];
        b[j] = st.s1[j - 1] * b[j - 1];
        c[j] = st.s1[j - 1] * c[j - 1] + st.s01[j - 1] * a[j - 1];
    }
    (a, c, b)
}

/// Growth rate of the time-periodic PDE by power iteration over periods,
/// with sensitivities from the discrete adjoint.
pub fn floquet_lambda(params: &ModelParams, opts: FloquetOptions) -> Result<FloquetResult> {
    let period = params
        .stress
        .period()
        .unwrap_or_else(|| params.mean_division_time(0));
    let da_target = opts.da.unwrap_or_else(|| super::default_da(params));
    let n_steps = steps_per_period(params, period, da_target)?;
    let da = period / n_steps as f64;
    let grid = AgeGrid::for_params(params, da)?;
    let st = Stepper::new(params, grid);
    let p_step: Vec<f64> = (0..n_steps)
        .map(|k| params.stress.at((k as f64 + 0.5) * da))
        .collect();
    let (ta, tc, tb) = transport_products(&st);

    // Start from the stable age profile at the time-averaged stress.
    let mean_params = params.with_p(params.stress.mean())?;
    let lam0 = malthusian_lambda(&mean_params).unwrap_or(0.0);
    let nu0 = matrix_f(&mean_params, lam0)
        .map(|f| left_vector(&f, 1.0))
        .unwrap_or([1.0, 0.0]);
    let mut field = DensityField::from_fn(&grid, |_| [0.0, 0.0]);
    for j in 0..grid.len {
        let tilt = (-lam0 * grid.age(j)).exp();
        field.n0[j] = tilt * ta[j] * nu0[0];
        field.n1[j] = tilt * (tc[j] * nu0[0] + tb[j] * nu0[1]);
    }
    field.renormalize(&grid);

    let tau = params.mean_division_time(0);
    let block = ((tau / period).ceil() as usize).max(1);
    let mut periods = 0;
    let mut prev: Option<f64> = None;
    let lambda = loop {
        let mut log_growth = 0.0;
        for _ in 0..block {
            for &p in &p_step {
                st.step(&mut field.n0, &mut field.n1, p);
                let before = field.log_scale;
                field.renormalize(&grid);
                log_growth += field.log_scale - before;
            }
            field.log_scale = 0.0;
        }
        periods += block;
        let est = log_growth / (block as f64 * period);
        if !est.is_finite() {
            return Err(ModelError::Numerical("population vanished during power iteration".into()));
        }
        if let Some(last) = prev {
            if ((est - last) * block as f64 * period).abs() < opts.tol {
                break est;
            }
        }
        if periods >= opts.max_periods {
            return Err(ModelError::NotConverged {
                what: "Floquet power iteration",
                iterations: periods,
                residual: prev.map_or(f64::INFINITY, |l| (est - l).abs()),
            });
        }
        prev = Some(est);
    };

    let (mut dalpha, mut dgamma) = (None, None);
    if opts.sensitivities {
        let (a, g) = adjoint_sensitivities(params, &st, &p_step, &mut field, (&ta, &tc, &tb), opts)?;
        dalpha = Some(a);
        dgamma = Some(g);
    }
    Ok(FloquetResult {
        lambda,
        period,
        da,
        steps_per_period: n_steps,
        periods,
        dlambda_dalpha: dalpha,
        dlambda_dgamma: dgamma,
    })
}

/// One backward step `h ← L_kᵀ h / g` of the exact adjoint of [`Stepper::step`].
fn adjoint_step(st: &Stepper, h0: &mut [f64], h1: &mut [f64], p: f64, scale: f64) {
    let (g, da, len) = (st.gamma, st.grid.da, st.grid.len);
    let c1 = 1.0 / (1.0 - da * (1.0 - g) * st.beta1[0]);
    let c0 = 1.0 / (1.0 - da * (1.0 - p) * st.beta0[0]);
    let y0 = c0 * h0[0];
    let y1 = c0 * da * g * st.beta1[0] * c1 * h0[0] + c1 * h1[0];
    for j in 1..len {
        let w = 2.0 * da * st.grid.weight(j);
        let hat0 = h0[j] + w * (1.0 - p) * st.beta0[j] * y0;
        let hat1 = h1[j] + w * st.beta1[j] * (g * y0 + (1.0 - g) * y1);
        h0[j - 1] = (st.s0[j - 1] * hat0 + st.s01[j - 1] * hat1) / scale;
        h1[j - 1] = st.s1[j - 1] * hat1 / scale;
    }
    h0[len - 1] = 0.0;
    h1[len - 1] = 0.0;
}

fn adjoint_sensitivities(
    params: &ModelParams,
    st: &Stepper,
    p_step: &[f64],
    field: &mut DensityField,
    (ta, tc, tb): (&[f64], &[f64], &[f64]),
    opts: FloquetOptions,
) -> Result<(f64, f64)> {
    let grid = st.grid;
    let len = grid.len;
    let n = p_step.len();

    // One more forward period records the newborn history and step factors.
    let mut births = Vec::with_capacity(n);
    let mut log_g = Vec::with_capacity(n);
    for &p in p_step {
        births.push([field.n0[0], field.n1[0]]);
        st.step(&mut field.n0, &mut field.n1, p);
        let before = field.log_scale;
        field.renormalize(&grid);
        log_g.push(field.log_scale - before);
    }
    field.log_scale = 0.0;
    let mut prefix = vec![0.0; n + 1];
    for k in 0..n {
        prefix[k + 1] = prefix[k] + log_g[k];
    }
    let ln_mu = prefix[n];
    let ext = |m: i64| -> f64 {
        let nn = n as i64;
        let wraps = m.div_euclid(nn);
        wraps as f64 * ln_mu + prefix[m.rem_euclid(nn) as usize]
    };
    // Density at step k, age j, rebuilt from the cohort born j steps earlier.
    let density = |k: usize, j: usize| -> [f64; 2] {
        let born = k as i64 - j as i64;
        let b = births[born.rem_euclid(n as i64) as usize];
        let f = (ext(born) - ext(k as i64)).exp();
        [f * ta[j] * b[0], f * (tc[j] * b[0] + tb[j] * b[1])]
    };

    // Converge the adjoint by backward periods, normalising by the forward
    // factors, and test the change over blocks of about one generation.
    let block = ((params.mean_division_time(0) / (n as f64 * grid.da)).ceil() as usize).max(1);
    let mut h0 = vec![1.0; len];
    let mut h1 = vec![1.0; len];
    let mut blocks = 0;
    loop {
        let old: Vec<f64> = h0.iter().chain(&h1).cloned().collect();
        for _ in 0..block {
            for k in (0..n).rev() {
                adjoint_step(st, &mut h0, &mut h1, p_step[k], log_g[k].exp());
            }
            let norm = h0.iter().chain(&h1).fold(0.0f64, |m, x| m.max(x.abs()));
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(ModelError::Numerical("adjoint iteration degenerated".into()));
            }
            h0.iter_mut().chain(h1.iter_mut()).for_each(|x| *x /= norm);
        }
        let old_norm = old.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let change = h0
            .iter()
            .chain(&h1)
            .zip(&old)
            .fold(0.0f64, |m, (a, b)| m.max((a - b / old_norm).abs()));
        blocks += 1;
        if change < 1e-10 {
            break;
        }
        // The budget counts blocks: at short periods convergence is set by
        // elapsed time, not by the number of periods.
        if blocks >= opts.max_periods {
            return Err(ModelError::NotConverged {
                what: "Floquet adjoint iteration",
                iterations: blocks * block,
                residual: change,
            });
        }
    }

    // Final backward period: pair h^{k+1} with the parameter derivative of
    // the step map applied to n^k.
    let (ds0, ds01) = alpha_derivatives(params, st);
    let (g, da) = (st.gamma, grid.da);
    let (mut num_a, mut num_g) = (0.0, 0.0);
    for k in (0..n).rev() {
        let p = p_step[k];
        let c1 = 1.0 / (1.0 - da * (1.0 - g) * st.beta1[0]);
        let c0 = 1.0 / (1.0 - da * (1.0 - p) * st.beta0[0]);
        let y0 = c0 * h0[0];
        let y1 = c0 * da * g * st.beta1[0] * c1 * h0[0] + c1 * h1[0];
        let mut sens_a = 0.0;
        // Transported densities m_j = E_{j-1}ᵀ n^k_{j-1} feed the γ derivative.
        let (mut r1, mut s1w) = (0.0, 0.0);
        for j in 1..len {
            let prev = density(k, j - 1);
            let w = 2.0 * da * grid.weight(j);
            if prev[0] != 0.0 {
                let hat0 = h0[j] + w * (1.0 - p) * st.beta0[j] * y0;
                let hat1 = h1[j] + w * st.beta1[j] * (g * y0 + (1.0 - g) * y1);
                sens_a += (hat0 * ds0[j - 1] + hat1 * ds01[j - 1]) * prev[0];
            }
            let m1 = st.s1[j - 1] * prev[1] + st.s01[j - 1] * prev[0];
            s1w += w * st.beta1[j] * m1;
            r1 += w * (1.0 - g) * st.beta1[j] * m1;
        }
        // Derivative of the newborn pair b = C r with respect to γ.
        let b1 = c1 * r1;
        let dc1 = -da * st.beta1[0] * c1 * c1;
        let db1 = dc1 * r1 - c1 * s1w;
        let db0 = c0 * (s1w + da * st.beta1[0] * b1 + da * g * st.beta1[0] * db1);
        let sens_g = h0[0] * db0 + h1[0] * db1;
        let scale = log_g[k].exp();
        num_a += sens_a / scale;
        num_g += sens_g / scale;
        adjoint_step(st, &mut h0, &mut h1, p, scale);
    }
    // ⟨h^k, n^k⟩ is the same for every k; evaluate it at k = 0.
    let den: f64 = (0..len)
        .map(|j| {
            let v = density(0, j);
            h0[j] * v[0] + h1[j] * v[1]
        })
        .sum();
    if !(den > 0.0) {
        return Err(ModelError::Numerical("degenerate adjoint pairing".into()));
    }
    let period = n as f64 * da;
    Ok((num_a / (den * period), num_g / (den * period)))
}


/// Derivatives of the per-cell transport entries `ψ0(a_j, a_{j+1})` and
/// `α ∫ ψ0 ψ1` with respect to `α`.
fn alpha_derivatives(params: &ModelParams, st: &Stepper) -> (Vec<f64>, Vec<f64>) {
    let grid = st.grid;
    let len = grid.len;
    let mut ds0 = vec![0.0; len];
    let mut ds01 = vec![0.0; len];
    let opts = QuadOptions::default();
    for j in 0..len - 1 {
        let (a, b) = (grid.age(j), grid.age(j + 1));
        ds0[j] = -grid.da * st.s0[j];
        let kernel = |u: f64| (params.ln_psi0(a, u) + params.ln_psi1(u, b)).exp();
        let plain = integrate(kernel, a, b, opts).value;
        let weighted = integrate(|u| (u - a) * kernel(u), a, b, opts).value;
        ds01[j] = plain - params.alpha * weighted;
    }
    (ds0, ds01)
}
