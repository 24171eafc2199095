//! Finite-volume solver for the age-structured population PDE, Floquet
//! growth rates under periodic stress, and the renewal-equation route.

mod floquet;
mod renewal;

pub use floquet::{floquet_lambda, FloquetOptions, FloquetResult};
pub use renewal::{renewal_growth_rate, renewal_mean, RenewalSolution};

use serde::Serialize;

use crate::error::{ModelError, Result};
use crate::params::ModelParams;
use crate::quadrature::{integrate, QuadOptions};

/// Uniform age grid `a_j = j Δa`, `j = 0..len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgeGrid {
    pub da: f64,
    pub len: usize,
}

impl AgeGrid {
    pub fn new(da: f64, a_max: f64) -> Result<Self> {
        if !(da > 0.0 && da.is_finite()) || !(a_max > da) {
            return Err(ModelError::Domain(format!("bad grid: Δa = {da}, a_max = {a_max}")));
        }
        Ok(Self {
            da,
            len: (a_max / da).ceil() as usize + 1,
        })
    }

    /// Grid reaching the age where both survival functions drop below `1e-14`.
    pub fn for_params(params: &ModelParams, da: f64) -> Result<Self> {
        Self::new(da, params.tail_age(0.0, 1e-14))
    }

    pub fn age(&self, j: usize) -> f64 {
        j as f64 * self.da
    }

    pub fn ages(&self) -> Vec<f64> {
        (0..self.len).map(|j| self.age(j)).collect()
    }

    /// Trapezoid weight of node `j`, in units of `Δa`.
    pub fn weight(&self, j: usize) -> f64 {
        if j == 0 || j + 1 == self.len {
            0.5
        } else {
            1.0
        }
    }
}

/// Density `n(t, a, i)` on an [`AgeGrid`], stored as `exp(log_scale) * (n0, n1)`
/// so long runs neither overflow nor underflow.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityField {
    pub t: f64,
    pub n0: Vec<f64>,
    pub n1: Vec<f64>,
    pub log_scale: f64,
}

impl DensityField {
    pub fn zeros(grid: &AgeGrid) -> Self {
        Self {
            t: 0.0,
            n0: vec![0.0; grid.len],
            n1: vec![0.0; grid.len],
            log_scale: 0.0,
        }
    }

    pub fn from_fn<F: Fn(f64) -> [f64; 2]>(grid: &AgeGrid, f: F) -> Self {
        let mut out = Self::zeros(grid);
        for j in 0..grid.len {
            let v = f(grid.age(j));
            out.n0[j] = v[0];
            out.n1[j] = v[1];
        }
        out
    }

    /// Trapezoid mass of the stored (unscaled) arrays.
    fn raw_mass(&self, grid: &AgeGrid) -> f64 {
        (0..grid.len)
            .map(|j| grid.weight(j) * (self.n0[j] + self.n1[j]))
            .sum::<f64>()
            * grid.da
    }

    /// `ln ∫ (n0 + n1) da`, or `-∞` for an empty field.
    pub fn log_mass(&self, grid: &AgeGrid) -> f64 {
        let m = self.raw_mass(grid);
        if m > 0.0 {
            m.ln() + self.log_scale
        } else {
            f64::NEG_INFINITY
        }
    }

    fn renormalize(&mut self, grid: &AgeGrid) {
        let m = self.raw_mass(grid);
        if m > 0.0 && m.is_finite() {
            let inv = 1.0 / m;
            self.n0.iter_mut().for_each(|x| *x *= inv);
            self.n1.iter_mut().for_each(|x| *x *= inv);
            self.log_scale += m.ln();
        }
    }
}

/// Time-independent pieces of one step: exact transport over each age cell
/// and node values of the hazards.
#[derive(Debug, Clone)]
pub(crate) struct Stepper {
    pub grid: AgeGrid,
    /// `ψ0(a_j, a_{j+1})`.
    pub s0: Vec<f64>,
    /// `ψ1(a_j, a_{j+1})`.
    pub s1: Vec<f64>,
    /// `α ∫ ψ0(a_j,u) ψ1(u,a_{j+1}) du`: switched during the cell.
    pub s01: Vec<f64>,
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub gamma: f64,
}

impl Stepper {
    pub fn new(params: &ModelParams, grid: AgeGrid) -> Self {
        let n = grid.len;
        let mut s0 = vec![0.0; n];
        let mut s1 = vec![0.0; n];
        let mut s01 = vec![0.0; n];
        let opts = QuadOptions::default();
        for j in 0..n - 1 {
            let (a, b) = (grid.age(j), grid.age(j + 1));
            s0[j] = params.psi0(a, b);
            s1[j] = params.psi1(a, b);
            if params.alpha > 0.0 {
                s01[j] = params.alpha
                    * integrate(|u| (params.ln_psi0(a, u) + params.ln_psi1(u, b)).exp(), a, b, opts).value;
            }
        }
        let beta0 = (0..n).map(|j| params.beta0.rate(grid.age(j))).collect();
        let beta1 = (0..n).map(|j| params.beta1.rate(grid.age(j))).collect();
        Self {
            grid,
            s0,
            s1,
            s01,
            beta0,
            beta1,
            gamma: params.gamma,
        }
    }

    /// Advances the unscaled arrays by one step `Δt = Δa` at stress `p`.
    pub fn step(&self, n0: &mut [f64], n1: &mut [f64], p: f64) {
        let len = self.grid.len;
        for j in (1..len).rev() {
            let (x0, x1) = (n0[j - 1], n1[j - 1]);
            n0[j] = self.s0[j - 1] * x0;
            n1[j] = self.s1[j - 1] * x1 + self.s01[j - 1] * x0;
        }
        let (b0, b1) = self.births(n0, n1, p);
        n0[0] = b0;
        n1[0] = b1;
    }

    /// Newborn densities solving the trapezoid boundary condition implicitly
    /// in the age-0 node.
    pub fn births(&self, n0: &[f64], n1: &[f64], p: f64) -> (f64, f64) {
        let (g, da, len) = (self.gamma, self.grid.da, self.grid.len);
        let (mut r0, mut r1) = (0.0, 0.0);
        for j in 1..len {
            let w = self.grid.weight(j);
            let d0 = self.beta0[j] * n0[j];
            let d1 = self.beta1[j] * n1[j];
            r0 += w * ((1.0 - p) * d0 + g * d1);
            r1 += w * (1.0 - g) * d1;
        }
        r0 *= 2.0 * da;
        r1 *= 2.0 * da;
        let c1 = 1.0 / (1.0 - da * (1.0 - g) * self.beta1[0]);
        let c0 = 1.0 / (1.0 - da * (1.0 - p) * self.beta0[0]);
        let b1 = c1 * r1;
        let b0 = c0 * (r0 + da * g * self.beta1[0] * b1);
        (b0, b1)
    }
}

/// Result of [`evolve_pde`].
#[derive(Debug, Clone, Serialize)]
pub struct PdeRun {
    pub grid: AgeGrid,
    pub final_field: DensityField,
    /// `(t, ln mass)` after every step, starting with the initial field.
    pub mass_trace: Vec<(f64, f64)>,
    pub snapshots: Vec<DensityField>,
}

/// Evolves `initial` to `t_end` with `Δt = Δa`; stress is sampled at step
/// midpoints. A snapshot is stored at the first step reaching each time in
/// `snapshot_times`.
pub fn evolve_pde(
    params: &ModelParams,
    grid: AgeGrid,
    initial: &DensityField,
    t_end: f64,
    snapshot_times: &[f64],
) -> Result<PdeRun> {
    if initial.n0.len() != grid.len || initial.n1.len() != grid.len {
        return Err(ModelError::Domain("initial field does not match the grid".into()));
    }
    if initial.n0.iter().chain(&initial.n1).any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(ModelError::Domain("initial density must be finite and non-negative".into()));
    }
    let stepper = Stepper::new(params, grid);
    let mut field = initial.clone();
    let steps = ((t_end - initial.t) / grid.da - 1e-9).ceil().max(0.0) as usize;
    let mut trace = Vec::with_capacity(steps + 1);
    trace.push((field.t, field.log_mass(&grid)));
    let mut pending: Vec<f64> = snapshot_times.to_vec();
    pending.sort_by(f64::total_cmp);
    let mut pending = pending.into_iter().peekable();
    let mut snapshots = Vec::new();
    while pending.peek().is_some_and(|&s| s <= field.t) {
        pending.next();
        snapshots.push(field.clone());
    }
    let t0 = initial.t;
    for k in 0..steps {
        let t = t0 + k as f64 * grid.da;
        let p = params.stress.at(t + 0.5 * grid.da);
        stepper.step(&mut field.n0, &mut field.n1, p);
        field.t = t0 + (k + 1) as f64 * grid.da;
        field.renormalize(&grid);
        trace.push((field.t, field.log_mass(&grid)));
        while pending.peek().is_some_and(|&s| s <= field.t + 1e-9 * grid.da) {
            pending.next();
            snapshots.push(field.clone());
        }
    }
    Ok(PdeRun {
        grid,
        final_field: field,
        mass_trace: trace,
        snapshots,
    })
}

/// Growth rate read off a long PDE run, with a grid-halving check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PdeGrowth {
    pub lambda: f64,
    /// Same estimate with `Δa / 2`.
    pub lambda_half: f64,
    /// Second-order Richardson extrapolation of the two.
    pub richardson: f64,
    pub da: f64,
    pub horizon: f64,
}

/// Default age step: one sixtieth of the mean type-0 division time.
pub fn default_da(params: &ModelParams) -> f64 {
    params.mean_division_time(0) / 60.0
}

/// Default run length: twenty mean type-1 division times, rounded up to
/// whole stress periods.
pub fn default_horizon(params: &ModelParams) -> f64 {
    let h = 20.0 * params.mean_division_time(0).max(params.mean_division_time(1));
    match params.stress.period() {
        Some(t) => (h / t).ceil() * t,
        None => h,
    }
}

/// Slope of `ln mass` over the second half of the run. Under periodic stress
/// the window spans whole periods.
pub fn pde_lambda(params: &ModelParams, da: f64, horizon: f64) -> Result<f64> {
    let grid = AgeGrid::for_params(params, da)?;
    let init = DensityField::from_fn(&grid, |a| [params.psi0(0.0, a), params.psi1(0.0, a)]);
    let run = evolve_pde(params, grid, &init, horizon, &[])?;
    let trace = &run.mass_trace;
    let end = trace.len() - 1;
    let span = match params.stress.period() {
        Some(t) => {
            let per = (t / da).round() as usize;
            (end / 2 / per).max(1) * per
        }
        None => end / 2,
    };
    if span == 0 || span > end {
        return Err(ModelError::Domain("horizon too short for a growth estimate".into()));
    }
    let (t1, l1) = trace[end];
    let (t0, l0) = trace[end - span];
    if !l1.is_finite() {
        return Err(ModelError::Numerical("population vanished on the grid".into()));
    }
    Ok((l1 - l0) / (t1 - t0))
}

pub fn growth_rate_from_pde(params: &ModelParams, da: Option<f64>, horizon: Option<f64>) -> Result<PdeGrowth> {
    let da = da.unwrap_or_else(|| default_da(params));
    let horizon = horizon.unwrap_or_else(|| default_horizon(params));
    let lambda = pde_lambda(params, da, horizon)?;
    let lambda_half = pde_lambda(params, 0.5 * da, horizon)?;
    Ok(PdeGrowth {
        lambda,
        lambda_half,
        richardson: (4.0 * lambda_half - lambda) / 3.0,
        da,
        horizon,
    })
}
