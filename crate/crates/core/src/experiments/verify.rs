use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::error::ModelError;
use crate::extinction::{
    extinction_at_age, extinction_gamma_sensitivity, extinction_region_area, extinction_region_area_numeric, solve_extinction, solve_periodic_extinction,
    survival_condition, PeriodicOptions,
};
use crate::hazard::HazardModel;
use crate::params::ModelParams;
use crate::pde::{floquet_lambda, growth_rate_from_pde, renewal_growth_rate, FloquetOptions};
use crate::sim::{estimate_extinction, first_event_cdf, first_event_law_sample, replicate_rng, simulate, Founder, SimOptions};
use crate::spectral::{
    critical_p_bar, growth_sensitivity, k_infinity, lambda_star_1, malthusian_lambda, spectral_triplet,
};
use crate::stress::StressSignal;
use crate::reference_params;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Quick,
    Full,
}

impl std::str::FromStr for Level {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "quick" => Ok(Self::Quick),
            "full" => Ok(Self::Full),
            _ => Err(format!("unknown level `{s}` (expected quick or full)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub level: Level,
    pub seed: u64,
    /// Added to `γ` on the closed-form side of the survival equivalence, to
    /// confirm that the check can fail.
    pub perturb_gamma: f64,
}

impl VerifyOptions {
    pub fn new(level: Level) -> Self {
        Self {
            level,
            seed: 20240601,
            perturb_gamma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

/// Pass/fail per check. Runtimes are kept out of the serialised report so
/// that repeated runs produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub level: Level,
    pub seed: u64,
    pub version: String,
    pub passed: bool,
    pub failures: usize,
    pub checks: Vec<CheckResult>,
    #[serde(skip)]
    pub timings: Vec<(String, f64)>,
}

impl VerifyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    pub fn timings_json(&self) -> String {
        let total: f64 = self.timings.iter().map(|t| t.1).sum();
        let v = serde_json::json!({
            "level": self.level,
            "total_seconds": total,
            "checks": self.timings.iter().map(|(n, s)| serde_json::json!({"name": n, "seconds": s})).collect::<Vec<_>>(),
        });
        serde_json::to_string_pretty(&v).expect("timings serialise") + "\n"
    }
}

fn check(name: &str, measured: f64, tolerance: f64, detail: String) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed: measured <= tolerance,
        measured,
        tolerance,
        detail,
    }
}

fn failed(name: &str, e: ModelError) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed: false,
        measured: f64::NAN,
        tolerance: 0.0,
        detail: format!("error: {e}"),
    }
}

type Outcome = Result<CheckResult, ModelError>;

fn closed_forms() -> Outcome {
    let area = extinction_region_area(1.0)?;
    let e1 = (area - 0.5 * (1.0 - 2f64.ln())).abs();
    let b = HazardModel::gamma(2.0, 4.0)?;
    let prm = ModelParams::new(b.clone(), b, 4.0, 0.5, StressSignal::constant(0.5)?)?;
    let e2 = (prm.q() - 0.75).abs();
    let slow = reference_params(0.5, 0.4, 0.5)?;
    let l1 = lambda_star_1(&slow);
    // The root must also solve the transform equation, evaluated here
    // through the incomplete-gamma residual form.
    let e3 = (l1 - 0.1 * (2f64.powf(1.0 / 3.0) - 1.0))
        .abs()
        .max((2.0 * slow.beta1.residual_laplace(0.0, l1) - 1.0).abs());
    Ok(check(
        "closed_form_values",
        e1.max(e2).max(e3),
        1e-10,
        format!("area error {e1:.3e}, q error {e2:.3e}, lambda1* error {e3:.3e}"),
    ))
}

fn area_midpoint() -> Outcome {
    let mut worst: f64 = 0.0;
    for p in [0.6, 0.75, 0.9] {
        let exact = extinction_region_area(p)?;
        worst = worst.max((exact - extinction_region_area_numeric(p, 2000)).abs());
    }
    Ok(check(
        "extinction_area_midpoint",
        worst,
        1e-4,
        format!("closed form vs 2000x2000 midpoint count, max error {worst:.3e}"),
    ))
}

fn lambda_sign(params: &ModelParams) -> Result<f64, ModelError> {
    match malthusian_lambda(params) {
        Ok(l) => Ok(l),
        // ρ(F) < 1 already at the lowest admissible λ: deep subcritical.
        Err(ModelError::NoRoot { f_lo, .. }) if f_lo < 0.0 => Ok(-1.0),
        Err(e) => Err(e),
    }
}

fn survival_equivalence(opts: &VerifyOptions, draws: usize) -> Outcome {
    let mut rng = replicate_rng(opts.seed, 1);
    let mut disagreements = 0usize;
    let mut first = String::new();
    for _ in 0..draws {
        let p: f64 = rng.random();
        let q = rng.random_range(0.02..0.98);
        let g: f64 = rng.random();
        let prm = reference_params(p, q, g)?;
        let g_closed = (g + opts.perturb_gamma).clamp(0.0, 1.0);
        let a = survival_condition(p, q, g_closed);
        let b = solve_extinction(&prm)?.survives;
        let c = k_infinity(p, q, g).rho > 1.0;
        let d = lambda_sign(&prm)? > 0.0;
        if !(a == b && b == c && c == d) {
            disagreements += 1;
            if first.is_empty() {
                first = format!(
                    "first at p={p:.6}, q={q:.6}: survival_condition(gamma={g_closed:.6})={a}, \
                     extinction solver(gamma={g:.6})={b}, rho(K)>1={c}, lambda>0={d}"
                );
            }
        }
    }
    Ok(check(
        "survival_equivalence",
        disagreements as f64,
        0.0,
        if first.is_empty() { format!("{draws} draws agree") } else { first },
    ))
}

fn lambda_three_way(opts: &VerifyOptions, draws: usize) -> Outcome {
    let mut rng = replicate_rng(opts.seed, 2);
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    let mut done = 0;
    while done < draws {
        let p = rng.random_range(0.3..0.5);
        let q = rng.random_range(0.1..0.9);
        let g = rng.random_range(0.05..0.95);
        let prm = reference_params(p, q, g)?;
        let l = malthusian_lambda(&prm)?;
        if l <= 1e-3 {
            continue;
        }
        let pde = growth_rate_from_pde(&prm, None, None)?.richardson;
        let ren = renewal_growth_rate(&prm, 0.05, 600.0)?;
        worst = worst.max((l - pde).abs()).max((l - ren).abs());
        detail.push(format!("({p:.3},{q:.3},{g:.3}): {l:.8} / {pde:.8} / {ren:.8}"));
        done += 1;
    }
    Ok(check(
        "lambda_spectral_pde_renewal",
        worst,
        1e-3,
        format!("spectral / pde / renewal at {}", detail.join("; ")),
    ))
}

fn mc_extinction(opts: &VerifyOptions, replicates: usize) -> Outcome {
    let prm = reference_params(0.6, 0.4, 0.3)?;
    let exact = solve_extinction(&prm)?.pi0;
    let est = estimate_extinction(&prm, 0, replicates, f64::INFINITY, 2000, opts.seed)?;
    let sigma = (exact * (1.0 - exact) / replicates as f64).sqrt();
    Ok(check(
        "mc_extinction_within_3_sigma",
        (est.estimate - exact).abs() / sigma,
        3.0,
        format!("estimate {:.6} vs exact {exact:.6} over {replicates} lineages", est.estimate),
    ))
}

fn first_event_ks(opts: &VerifyOptions, draws: usize, samples: usize) -> Outcome {
    let mut rng = replicate_rng(opts.seed, 3);
    let band = 1.358 / (samples as f64).sqrt();
    let mut worst: f64 = 0.0;
    for k in 0..draws {
        let prm = reference_params(rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random())?;
        let ty = k % 2;
        let a = rng.random_range(0.0..5.0);
        let mut t: Vec<f64> = first_event_law_sample(&prm, a, ty, samples, opts.seed + k as u64)?
            .into_iter()
            .map(|e| e.0)
            .collect();
        t.sort_by(f64::total_cmp);
        let n = t.len() as f64;
        let d = t.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
            let f = first_event_cdf(&prm, a, ty, x);
            d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
        });
        worst = worst.max(d);
    }
    Ok(check(
        "first_event_ks",
        worst,
        band,
        format!("largest KS distance over {draws} draws of {samples} samples; 95% band {band:.5}"),
    ))
}

fn daughter_types(opts: &VerifyOptions, n: usize) -> Outcome {
    let g = 0.35;
    let prm = reference_params(0.5, 0.4, g)?;
    // The first event of a type-1 cell is always a division; stopping at two
    // cells leaves exactly the two daughters.
    let sim = SimOptions {
        n_cap: 2,
        ..SimOptions::default()
    };
    let mut counts = [0usize; 3];
    for k in 0..n as u64 {
        let mut rng = replicate_rng(opts.seed ^ 0x5eed, k);
        let out = simulate(&prm, &[Founder::newborn(1)], &sim, &mut rng);
        counts[out.n1.min(2)] += 1;
    }
    let expect = [g * g, 2.0 * g * (1.0 - g), (1.0 - g) * (1.0 - g)];
    let z = (0..3)
        .map(|i| {
            let f = counts[i] as f64 / n as f64;
            (f - expect[i]).abs() / (expect[i] * (1.0 - expect[i]) / n as f64).sqrt()
        })
        .fold(0.0, f64::max);
    Ok(check(
        "type1_daughter_frequencies",
        z,
        3.0,
        format!("counts (two type 0, mixed, two type 1) = {counts:?} over {n} divisions"),
    ))
}

fn sensitivities(opts: &VerifyOptions, draws: usize) -> Result<Vec<CheckResult>, ModelError> {
    let mut rng = replicate_rng(opts.seed, 4);
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    let mut sign_errors = 0;
    let mut done = 0;
    while done < draws {
        let p = rng.random_range(0.0..0.6);
        let q = rng.random_range(0.05..0.95);
        let g = rng.random_range(0.02..0.98);
        if !survival_condition(p, q, g) {
            continue;
        }
        let prm = reference_params(p, q, g)?;
        let tr = spectral_triplet(&prm)?;
        let fd = |f: &dyn Fn(f64) -> Result<ModelParams, ModelError>, x: f64| -> Result<f64, ModelError> {
            let h = 1e-5 * x.abs().max(1e-2);
            Ok((malthusian_lambda(&f(x + h)?)? - malthusian_lambda(&f(x - h)?)?) / (2.0 * h))
        };
        let fa = fd(&|a| prm.with_alpha(a), prm.alpha)?;
        let fg = fd(&|x| prm.with_gamma(x), g.clamp(1e-3, 1.0 - 1e-3))?;
        for (formula, numeric) in [(tr.dlambda_dalpha, fa), (tr.dlambda_dgamma, fg)] {
            let excess = (formula - numeric).abs() / 1e-6f64.max(1e-3 * numeric.abs());
            if excess > worst {
                worst = excess;
                worst_at = format!("formula {formula:.10e} vs difference {numeric:.10e} at ({p:.4},{q:.4},{g:.4})");
            }
        }
        let l1 = lambda_star_1(&prm);
        if (tr.lambda - l1).abs() > 1e-9 && (tr.dlambda_dgamma > 0.0) != (tr.lambda > l1) {
            sign_errors += 1;
        }
        done += 1;
    }
    Ok(vec![
        check("sensitivity_formula_vs_difference", worst, 1.0, worst_at),
        check(
            "gamma_sensitivity_sign_law",
            sign_errors as f64,
            0.0,
            format!("{sign_errors} of {draws} draws with sign(dlambda/dgamma) != sign(lambda - lambda1*)"),
        ),
    ])
}

fn critical_stress() -> Result<Vec<CheckResult>, ModelError> {
    let mut above = 0usize;
    let mut max_bar: f64 = 0.0;
    let mut listed = Vec::new();
    for q in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let v = critical_p_bar(&reference_params(0.5, q, 0.5)?)?;
        max_bar = max_bar.max(v);
        if v > 0.5 {
            above += 1;
        }
        listed.push(format!("q={q}: {v:.6}"));
    }
    let ref_bar = critical_p_bar(&reference_params(0.45, 0.4, 0.5)?)?;
    let outside = if ref_bar > 0.46 && ref_bar < 0.49 { 0.0 } else { 1.0 };

    // Growth and extinction sensitivities to γ over a grid.
    let mut negative = 0usize;
    let mut witness = String::new();
    for p in [0.3, 0.4, 0.44, 0.46, 0.48, 0.5, 0.6] {
        for q in [0.1, 0.4, 0.7] {
            for g in [0.1, 0.5, 0.9] {
                let prm = reference_params(p, q, g)?;
                if !solve_extinction(&prm)?.survives {
                    continue;
                }
                let d = extinction_gamma_sensitivity(&prm)?;
                if d[0] <= 0.0 || d[1] <= 0.0 {
                    negative += 1;
                }
                if witness.is_empty() {
                    let s = growth_sensitivity(&prm)?;
                    if s.dlambda_dgamma > 0.0 && d[0] > 0.0 {
                        witness = format!(
                            "at (p,q,gamma)=({p},{q},{g}): dlambda/dgamma={:.6e}, dpi0/dgamma={:.6e}",
                            s.dlambda_dgamma, d[0]
                        );
                    }
                }
            }
        }
    }
    let no_witness = if witness.is_empty() { 1.0 } else { 0.0 };
    Ok(vec![
        check("critical_stress_at_most_half", above as f64, 0.0, format!("p_bar by q: {}", listed.join(", "))),
        check("critical_stress_reference_range", outside, 0.0, format!("p_bar(q=0.4) = {ref_bar:.6}, expected in (0.46, 0.49)")),
        check(
            "extinction_increases_with_gamma",
            negative as f64,
            0.0,
            format!("{negative} surviving grid points with a non-positive dpi/dgamma"),
        ),
        check(
            "fitness_notions_diverge",
            no_witness,
            0.0,
            if witness.is_empty() { "no grid point with both sensitivities positive".into() } else { witness },
        ),
    ])
}

fn floquet(level: Level) -> Result<Vec<CheckResult>, ModelError> {
    let prm = reference_params(0.4, 0.4, 0.5)?;
    let l = malthusian_lambda(&prm)?;
    let lt = floquet_lambda(&prm, FloquetOptions { sensitivities: false, ..FloquetOptions::default() })?.lambda;
    let half = reference_params(0.5, 0.4, 0.5)?;
    let l_half = malthusian_lambda(&half)?;
    let fast = half.with_stress(StressSignal::square_wave(0.03, 0.25, 0.75)?)?;
    let lf = floquet_lambda(&fast, FloquetOptions { sensitivities: false, ..FloquetOptions::default() })?.lambda;

    let cells: &[(f64, f64)] = match level {
        Level::Quick => &[(0.1, 0.3)],
        Level::Full => &[(0.05, 0.1), (0.05, 0.6), (0.1, 0.3), (0.2, 0.6), (0.4, 0.5)],
    };
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for &(q, g) in cells {
        let base = reference_params(0.5, q, g)?;
        let flat = malthusian_lambda(&base)?;
        let slow = base.with_stress(StressSignal::square_wave(120.0, 0.25, 0.75)?)?;
        let v = floquet_lambda(&slow, FloquetOptions { sensitivities: false, ..FloquetOptions::default() })?.lambda;
        if v - flat > best.0 {
            best = (v - flat, q, g);
        }
    }

    let ext = reference_params(0.6, 0.4, 0.3)?;
    let field = solve_periodic_extinction(&ext, PeriodicOptions { n_s: 50, ..PeriodicOptions::default() })?;
    let mut err: f64 = 0.0;
    for j in 0..field.n_a {
        let a = j as f64 * field.step;
        if a > 100.0 {
            break;
        }
        for i in [0, field.n_s / 3] {
            err = err
                .max((field.pi0_at(i, j) - extinction_at_age(&ext, a, 0)?).abs())
                .max((field.pi1_at(i, j) - extinction_at_age(&ext, a, 1)?).abs());
        }
    }
    Ok(vec![
        check("floquet_constant_signal", (lt - l).abs(), 1e-3, format!("lambda_T {lt:.8} vs lambda {l:.8}")),
        check(
            "floquet_rapid_oscillation",
            (lf - l_half).abs(),
            5e-3,
            format!("lambda_T(T=0.03) {lf:.8} vs lambda(p=0.5) {l_half:.8}"),
        ),
        check(
            "floquet_slow_oscillation_beats_mean",
            -(best.0 - 1e-3),
            0.0,
            format!("largest excess {:.6} at (q, gamma) = ({}, {}), T = 120", best.0, best.1, best.2),
        ),
        check(
            "periodic_extinction_constant_stress",
            err,
            1e-8,
            "max deviation over ages up to 100 at two phases".into(),
        ),
    ])
}

/// Runs the cross-checks between independent routes through the model.
/// `quick` uses reduced sample sizes; `full` the complete ones.
pub fn verify_suite(opts: &VerifyOptions) -> VerifyReport {
    let full = opts.level == Level::Full;
    let pick = |q: usize, f: usize| if full { f } else { q };
    let mut checks = Vec::new();
    let mut timings = Vec::new();
    let mut run = |name: &str, f: &mut dyn FnMut() -> Result<Vec<CheckResult>, ModelError>| {
        let t = Instant::now();
        match f() {
            Ok(mut v) => checks.append(&mut v),
            Err(e) => checks.push(failed(name, e)),
        }
        timings.push((name.to_string(), t.elapsed().as_secs_f64()));
    };
    run("closed_form_values", &mut || closed_forms().map(|c| vec![c]));
    run("extinction_area_midpoint", &mut || area_midpoint().map(|c| vec![c]));
    run("survival_equivalence", &mut || survival_equivalence(opts, pick(50, 200)).map(|c| vec![c]));
    run("lambda_spectral_pde_renewal", &mut || lambda_three_way(opts, pick(1, 5)).map(|c| vec![c]));
    run("mc_extinction_within_3_sigma", &mut || mc_extinction(opts, pick(2000, 10_000)).map(|c| vec![c]));
    run("first_event_ks", &mut || first_event_ks(opts, pick(2, 5), pick(2000, 10_000)).map(|c| vec![c]));
    run("type1_daughter_frequencies", &mut || daughter_types(opts, pick(4000, 10_000)).map(|c| vec![c]));
    run("sensitivities", &mut || sensitivities(opts, pick(3, 20)));
    run("critical_stress", &mut critical_stress);
    run("floquet", &mut || floquet(opts.level));
    let failures = checks.iter().filter(|c| !c.passed).count();
    VerifyReport {
        level: opts.level,
        seed: opts.seed,
        version: super::VERSION.into(),
        passed: failures == 0,
        failures,
        checks,
        timings,
    }
}

