//! Malthusian growth rate, its eigenfunctions and sensitivities.

use serde::Serialize;

use crate::error::{ModelError, Result};
use crate::kernel::Mat2;
use crate::params::ModelParams;
use crate::quadrature::{integrate, QuadOptions};

/// Root tolerance for growth-rate bisection.
pub const LAMBDA_TOL: f64 = 1e-13;
/// Samples in the age grid returned with a [`SpectralTriplet`].
pub const TRIPLET_GRID: usize = 2048;

/// A 2×2 non-negative matrix together with its spectral radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthMatrix {
    pub matrix: [[f64; 2]; 2],
    pub rho: f64,
}

impl From<Mat2> for GrowthMatrix {
    fn from(m: Mat2) -> Self {
        Self {
            matrix: [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]],
            rho: spectral_radius(&m),
        }
    }
}

/// Largest eigenvalue of a non-negative 2×2 matrix from its trace and determinant.
pub fn spectral_radius(m: &Mat2) -> f64 {
    let tr = m[(0, 0)] + m[(1, 1)];
    let gap = m[(0, 0)] - m[(1, 1)];
    let disc = (gap * gap + 4.0 * m[(0, 1)] * m[(1, 0)]).max(0.0);
    0.5 * (tr + disc.sqrt())
}

/// Right eigenvector of a non-negative 2×2 matrix for eigenvalue `r`.
pub fn right_vector(m: &Mat2, r: f64) -> [f64; 2] {
    let a = [m[(0, 1)], r - m[(0, 0)]];
    let b = [r - m[(1, 1)], m[(1, 0)]];
    pick_vector(a, b, m[(0, 0)] >= m[(1, 1)])
}

/// Left eigenvector of a non-negative 2×2 matrix for eigenvalue `r`.
pub fn left_vector(m: &Mat2, r: f64) -> [f64; 2] {
    right_vector(&m.transpose(), r)
}

fn pick_vector(a: [f64; 2], b: [f64; 2], first_dominant: bool) -> [f64; 2] {
    let na = a[0].abs() + a[1].abs();
    let nb = b[0].abs() + b[1].abs();
    let v = if na >= nb { a } else { b };
    let n = v[0].abs() + v[1].abs();
    if n == 0.0 {
        // Diagonal matrix: the eigenvector is the dominant coordinate axis.
        return if first_dominant { [1.0, 0.0] } else { [0.0, 1.0] };
    }
    let sign = if v[0] + v[1] < 0.0 { -1.0 } else { 1.0 };
    [sign * v[0] / n, sign * v[1] / n]
}

/// Mean offspring matrix of the embedded generation process.
pub fn k_infinity(p: f64, q: f64, gamma: f64) -> GrowthMatrix {
    Mat2::new(
        2.0 * ((1.0 - p) * (1.0 - q) + gamma * q),
        2.0 * (1.0 - gamma) * q,
        2.0 * gamma,
        2.0 * (1.0 - gamma),
    )
    .into()
}

/// Laplace-transformed offspring matrix `F(λ)` (constant stress).
pub fn matrix_f(params: &ModelParams, lambda: f64) -> Result<Mat2> {
    let p = params.constant_p()?;
    check_lambda(params, lambda)?;
    Ok(f_from_parts(p, params.gamma, params.xi0(params.alpha + lambda), params.xi1(lambda), params.zeta(lambda)))
}

fn f_from_parts(p: f64, gamma: f64, x0: f64, x1: f64, z: f64) -> Mat2 {
    Mat2::new(
        2.0 * ((1.0 - p) * x0 + gamma * z),
        2.0 * (1.0 - gamma) * z,
        2.0 * gamma * x1,
        2.0 * (1.0 - gamma) * x1,
    )
}

fn check_lambda(params: &ModelParams, lambda: f64) -> Result<()> {
    let floor = params.lambda_floor();
    if lambda.is_nan() || lambda < floor {
        return Err(ModelError::Domain(format!(
            "λ = {lambda} lies below the admissible bound {floor}"
        )));
    }
    Ok(())
}

/// Malthusian growth rate: the `λ` with `ρ(F(λ)) = 1`, found by bisection
/// on `[λ_floor, b̄]`.
pub fn malthusian_lambda(params: &ModelParams) -> Result<f64> {
    malthusian_lambda_tol(params, LAMBDA_TOL)
}

pub fn malthusian_lambda_tol(params: &ModelParams, tol: f64) -> Result<f64> {
    let rho = |l: f64| -> Result<f64> { Ok(spectral_radius(&matrix_f(params, l)?)) };
    let mut lo = params.lambda_floor();
    let mut hi = params.bar_b();
    let (f_lo, f_hi) = (rho(lo)? - 1.0, rho(hi)? - 1.0);
    if f_lo < 0.0 || f_hi > 0.0 {
        return Err(ModelError::NoRoot { lo, hi, f_lo, f_hi });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if rho(mid)? > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Root of `2 ξ_1(λ) = 1`: the growth rate of a pure type-1 population.
pub fn lambda_star_1(params: &ModelParams) -> f64 {
    half_laplace_root(&params.beta1)
}

/// Root of `2 ξ_0(λ) = 1`: the growth rate of unstressed type-0 cells
/// that never switch.
pub fn lambda_star_0(params: &ModelParams) -> f64 {
    half_laplace_root(&params.beta0)
}

fn half_laplace_root(h: &crate::hazard::HazardModel) -> f64 {
    if let crate::hazard::HazardModel::Gamma { shape, rate, .. } = h {
        return rate * (2f64.powf(1.0 / shape) - 1.0);
    }
    let mut hi = h.upper_bound();
    while 2.0 * h.laplace(hi) > 1.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-15 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if 2.0 * h.laplace(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Stress level `p̄` at which the growth rate equals `λ*_1`, where the
/// sensitivity to `γ` changes sign.
///
/// At `λ = λ*_1` the characteristic equation loses its `γ` dependence and is
/// linear in `p`, so `p̄` is explicit.
pub fn critical_p_bar(params: &ModelParams) -> Result<f64> {
    params.check_domination()?;
    let l1 = lambda_star_1(params);
    let x0 = params.xi0(params.alpha + l1);
    let z = params.zeta(l1);
    let p_bar = 1.0 - (1.0 - 2.0 * z) / (2.0 * x0);
    if !(0.0..=0.5 + 1e-8).contains(&p_bar) {
        return Err(ModelError::Assumption(format!(
            "critical stress level {p_bar} outside [0, 1/2]"
        )));
    }
    Ok(p_bar)
}

/// Growth rate and its parameter sensitivities without the eigenfunctions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthSensitivity {
    pub lambda: f64,
    pub dlambda_dalpha: f64,
    pub dlambda_dgamma: f64,
}

/// Sensitivities by implicit differentiation of `ρ(F(λ; θ)) = 1`:
/// `∂θλ = -(uᵀ ∂θF v) / (uᵀ ∂λF v)` with `u, v` the Perron vectors of `F(λ)`.
/// `∂γF` is exact; `∂λF` and `∂αF` use fourth-order central differences.
/// Much cheaper than [`spectral_triplet`] and agrees with it to about 1e-9.
pub fn growth_sensitivity(params: &ModelParams) -> Result<GrowthSensitivity> {
    params.constant_p()?;
    let lambda = malthusian_lambda(params)?;
    let fm = matrix_f(params, lambda)?;
    let v = right_vector(&fm, 1.0);
    let u = left_vector(&fm, 1.0);
    let pair = |m: &Mat2| -> f64 {
        let w = m * nalgebra::Vector2::new(v[0], v[1]);
        u[0] * w[0] + u[1] * w[1]
    };
    let diff = |f: &dyn Fn(f64) -> Result<Mat2>, x: f64, h: f64| -> Result<Mat2> {
        let (a, b, c, d) = (f(x - 2.0 * h)?, f(x - h)?, f(x + h)?, f(x + 2.0 * h)?);
        Ok((a - 8.0 * b + 8.0 * c - d) / (12.0 * h))
    };
    let room = lambda - params.lambda_floor();
    let hl = 1e-3 * params.bar_b().min(room.max(1e-9));
    let d_lambda = pair(&diff(&|l| matrix_f(params, l), lambda, hl.min(0.25 * room))?);
    if !(d_lambda.abs() > 0.0) {
        return Err(ModelError::Numerical("characteristic matrix is flat in λ".into()));
    }
    let x1 = params.xi1(lambda);
    let z = params.zeta(lambda);
    let d_gamma = Mat2::new(2.0 * z, -2.0 * z, 2.0 * x1, -2.0 * x1);
    let d_alpha = if params.alpha > 0.0 {
        let ha = 1e-3 * params.alpha.min(params.beta0.upper_bound());
        let f = |a: f64| -> Result<Mat2> {
            let mut q = params.clone();
            q.alpha = a;
            matrix_f(&q, lambda)
        };
        pair(&diff(&f, params.alpha, ha.min(0.25 * params.alpha))?)
    } else {
        let ha = 1e-4 * params.beta0.upper_bound();
        let f = |a: f64| -> Result<Mat2> {
            let mut q = params.clone();
            q.alpha = a;
            matrix_f(&q, lambda)
        };
        let (f0, f1, f2) = (f(0.0)?, f(ha)?, f(2.0 * ha)?);
        pair(&((-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * ha)))
    };
    Ok(GrowthSensitivity {
        lambda,
        dlambda_dalpha: -d_alpha / d_lambda,
        dlambda_dgamma: -pair(&d_gamma) / d_lambda,
    })
}

/// Growth rate with its right eigenfunction `h` (reproductive value),
/// left eigenfunction `ν` (stable age distribution) and sensitivities.
///
/// `ν` is normalised to unit mass and `h` so that `⟨ν, h⟩ = 1`. The sampled
/// profiles live on `ages`, `TRIPLET_GRID` points reaching the tail age.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralTriplet {
    pub lambda: f64,
    pub ages: Vec<f64>,
    pub h0: Vec<f64>,
    pub h1: Vec<f64>,
    pub nu0: Vec<f64>,
    pub nu1: Vec<f64>,
    /// `h(0, ·)` after normalisation.
    pub h_newborn: [f64; 2],
    /// `ν(0, ·)` after normalisation.
    pub nu_newborn: [f64; 2],
    pub dlambda_dalpha: f64,
    pub dlambda_dgamma: f64,
}

/// Pointwise evaluation of the unnormalised eigenfunctions.
struct Eigen<'a> {
    params: &'a ModelParams,
    lambda: f64,
    p: f64,
    h00: f64,
    h01: f64,
    nu00: f64,
    nu01: f64,
}

impl Eigen<'_> {
    fn mix(&self) -> f64 {
        self.params.gamma * self.h00 + (1.0 - self.params.gamma) * self.h01
    }

    /// `∫_a^∞ ψ0(a,u) e^{-λ(u-a)} R1(u,λ) du`.
    fn switch_value(&self, a: f64) -> f64 {
        let prm = self.params;
        let end = a + prm.beta0.tail_age(prm.alpha + self.lambda, 1e-18).max(1.0);
        let panels = (((end - a) / prm.mean_division_time(0)).ceil() as usize).clamp(2, 32);
        integrate(
            |u| {
                (prm.ln_psi0(a, u) - self.lambda * (u - a)).exp()
                    * prm.beta1.residual_laplace(u, self.lambda)
            },
            a,
            end,
            QuadOptions::default().with_panels(panels),
        )
        .value
    }

    fn h(&self, a: f64) -> [f64; 2] {
        let prm = self.params;
        let c = 2.0 * self.mix();
        let h0 = 2.0 * (1.0 - self.p) * self.h00 * prm.beta0.residual_laplace(a, prm.alpha + self.lambda)
            + if prm.alpha > 0.0 { c * prm.alpha * self.switch_value(a) } else { 0.0 };
        [h0, c * prm.beta1.residual_laplace(a, self.lambda)]
    }

    fn nu(&self, a: f64) -> [f64; 2] {
        let prm = self.params;
        let tilt = (-self.lambda * a).exp();
        let conv = if prm.alpha > 0.0 { prm.alpha * prm.conv01(0.0, a) } else { 0.0 };
        [
            tilt * prm.psi0(0.0, a) * self.nu00,
            tilt * (conv * self.nu00 + prm.psi1(0.0, a) * self.nu01),
        ]
    }
}

fn integrate_ages<F: FnMut(f64) -> f64>(f: F, end: f64, scale: f64) -> f64 {
    let panels = ((end / scale).ceil() as usize).clamp(4, 256);
    let opts = QuadOptions {
        abs_tol: 1e-13,
        rel_tol: 1e-10,
        initial_panels: panels,
        max_intervals: 8000,
    };
    integrate(f, 0.0, end, opts).value
}

pub fn spectral_triplet(params: &ModelParams) -> Result<SpectralTriplet> {
    let p = params.constant_p()?;
    let lambda = malthusian_lambda(params)?;
    let gamma = params.gamma;
    let x1 = params.xi1(lambda);
    let fm = matrix_f(params, lambda)?;

    let mut h_dir = if gamma > 0.0 {
        [1.0 - 2.0 * x1 + 2.0 * gamma * x1, 2.0 * gamma * x1]
    } else {
        right_vector(&fm, 1.0)
    };
    if h_dir[0] < 0.0 || h_dir[1] < 0.0 || h_dir[0] + h_dir[1] <= 0.0 {
        return Err(ModelError::Numerical(format!(
            "reproductive value direction {h_dir:?} is not non-negative"
        )));
    }
    let s = h_dir[0] + h_dir[1];
    h_dir = [h_dir[0] / s, h_dir[1] / s];
    let nu_dir = left_vector(&fm, 1.0);
    if nu_dir[0] < 0.0 || nu_dir[1] < 0.0 {
        return Err(ModelError::Numerical(format!(
            "stable age direction {nu_dir:?} is not non-negative"
        )));
    }

    let mut eig = Eigen {
        params,
        lambda,
        p,
        h00: h_dir[0],
        h01: h_dir[1],
        nu00: nu_dir[0],
        nu01: nu_dir[1],
    };

    let end = params.tail_age(lambda, 1e-16);
    let scale = params.mean_division_time(0).min(params.mean_division_time(1));
    let mass = integrate_ages(|a| {
        let v = eig.nu(a);
        v[0] + v[1]
    }, end, scale);
    eig.nu00 /= mass;
    eig.nu01 /= mass;
    let nu_h = integrate_ages(|a| {
        let v = eig.nu(a);
        let h = eig.h(a);
        v[0] * h[0] + v[1] * h[1]
    }, end, scale);
    eig.h00 /= nu_h;
    eig.h01 /= nu_h;

    let dlambda_dalpha = integrate_ages(
        |a| {
            let h = eig.h(a);
            (h[1] - h[0]) * eig.nu(a)[0]
        },
        end,
        scale,
    );
    let dlambda_dgamma = 2.0 * (eig.h00 - eig.h01) * (eig.nu00 * params.zeta(lambda) + eig.nu01 * x1);

    let (ages, h0, h1, nu0, nu1) = sample_grid(&eig, end);
    Ok(SpectralTriplet {
        lambda,
        ages,
        h0,
        h1,
        nu0,
        nu1,
        h_newborn: [eig.h00, eig.h01],
        nu_newborn: [eig.nu00, eig.nu01],
        dlambda_dalpha,
        dlambda_dgamma,
    })
}

type Profiles = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

/// Samples `h` and `ν` on a uniform grid with recursions over neighbouring
/// cells, so each sample costs one short quadrature.
fn sample_grid(eig: &Eigen<'_>, end: f64) -> Profiles {
    let prm = eig.params;
    let n = TRIPLET_GRID;
    let da = end / (n - 1) as f64;
    let ages: Vec<f64> = (0..n).map(|i| i as f64 * da).collect();
    let opts = QuadOptions::default();
    let lambda = eig.lambda;

    // conv01(0, a) forward: C(b) = C(a) ψ1(a,b) + ∫_a^b ψ0(0,u) ψ1(u,b) du.
    let mut conv = vec![0.0; n];
    // Switch integral backward: G(a) = ∫_a^b ... + ψ0(a,b) e^{-λ(b-a)} G(b).
    let mut switch = vec![0.0; n];
    if prm.alpha > 0.0 {
        for i in 1..n {
            let (a, b) = (ages[i - 1], ages[i]);
            let step = integrate(|u| (prm.ln_psi0(0.0, u) + prm.ln_psi1(u, b)).exp(), a, b, opts).value;
            conv[i] = conv[i - 1] * prm.psi1(a, b) + step;
        }
        switch[n - 1] = eig.switch_value(ages[n - 1]);
        for i in (0..n - 1).rev() {
            let (a, b) = (ages[i], ages[i + 1]);
            let step = integrate(
                |u| (prm.ln_psi0(a, u) - lambda * (u - a)).exp() * prm.beta1.residual_laplace(u, lambda),
                a,
                b,
                opts,
            )
            .value;
            switch[i] = step + (prm.ln_psi0(a, b) - lambda * da).exp() * switch[i + 1];
        }
    }
    let c = 2.0 * eig.mix();
    let mut h0 = Vec::with_capacity(n);
    let mut h1 = Vec::with_capacity(n);
    let mut nu0 = Vec::with_capacity(n);
    let mut nu1 = Vec::with_capacity(n);
    for (i, &a) in ages.iter().enumerate() {
        h0.push(
            2.0 * (1.0 - eig.p) * eig.h00 * prm.beta0.residual_laplace(a, prm.alpha + lambda)
                + c * prm.alpha * switch[i],
        );
        h1.push(c * prm.beta1.residual_laplace(a, lambda));
        let tilt = (-lambda * a).exp();
        nu0.push(tilt * prm.psi0(0.0, a) * eig.nu00);
        nu1.push(tilt * (prm.alpha * conv[i] * eig.nu00 + prm.psi1(0.0, a) * eig.nu01));
    }
    (ages, h0, h1, nu0, nu1)
}
