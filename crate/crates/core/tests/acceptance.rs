//! End-to-end acceptance checks. Runs without the libtest harness and prints
//! one PASS/FAIL line per criterion; exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::gamma_ur;
use stresspop_core::experiments::{
    render_csv, run_sweep, verify_suite, write_outputs, CellValue, ExperimentConfig, Level, VerifyOptions,
};
use stresspop_core::extinction::{solve_periodic_extinction, PeriodicOptions};
use stresspop_core::pde::{floquet_lambda, growth_rate_from_pde, renewal_growth_rate, FloquetOptions};
use stresspop_core::sim::{estimate_extinction, first_event_law_sample, replicate_rng, simulate, Founder, SimOptions};
use stresspop_core::spectral::malthusian_lambda_tol;
use stresspop_core::{
    critical_gamma, critical_p_bar, extinction_at_age, extinction_gamma_sensitivity, extinction_region_area,
    growth_sensitivity, lambda_star_1, malthusian_lambda, reference_params, solve_extinction, spectral_triplet,
    survival_condition, HazardModel, ModelError, ModelParams, StressSignal,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg)
    }
}

fn rho(m: [[f64; 2]; 2]) -> f64 {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    0.5 * (tr + (tr * tr - 4.0 * det).max(0.0).sqrt())
}

/// Mean offspring matrix of the embedded generation process.
fn mean_matrix(p: f64, q: f64, g: f64) -> [[f64; 2]; 2] {
    [
        [2.0 * (1.0 - p) * (1.0 - q) + 2.0 * q * g, 2.0 * q * (1.0 - g)],
        [2.0 * g, 2.0 * (1.0 - g)],
    ]
}

fn within_sigma(count: usize, n: usize, prob: f64, k: f64) -> bool {
    let sd = (prob * (1.0 - prob) / n as f64).sqrt();
    (count as f64 / n as f64 - prob).abs() <= k * sd
}

fn ks_distance<F: Fn(f64) -> f64>(mut xs: Vec<f64>, cdf: F) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

fn closed_forms() -> Outcome {
    let area = extinction_region_area(1.0).map_err(|e| e.to_string())?;
    let want = 0.5 * (1.0 - 2f64.ln());
    ensure((area - want).abs() < 1e-10, format!("area(1) = {area}, want {want}"))?;

    let g = ModelParams::new(
        HazardModel::gamma(2.0, 4.0).unwrap(),
        HazardModel::gamma(3.0, 0.1).unwrap(),
        4.0,
        0.5,
        StressSignal::constant(0.3).unwrap(),
    )
    .unwrap();
    ensure((g.q() - 0.75).abs() < 1e-12, format!("q = {}", g.q()))?;

    let l1 = lambda_star_1(&reference_params(0.5, 0.3, 0.5).unwrap());
    let want_l1 = 0.1 * (2f64.powf(1.0 / 3.0) - 1.0);
    ensure((l1 - want_l1).abs() < 1e-10, format!("lambda1* = {l1}, want {want_l1}"))?;
    Ok(format!("area {area:.12}, q {:.15}, lambda1* {l1:.12}", g.q()))
}

fn survival_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut survivors = 0;
    for k in 0..200 {
        let (mut p, mut q, mut g) = (rng.random_range(0.0..1.0), rng.random_range(0.0..0.95), rng.random_range(0.0..1.0));
        // Odd draws straddle the survival boundary inside the extinction corner.
        if k % 2 == 1 {
            p = 0.5 + 0.5 * p;
            q *= (2.0 * p - 1.0) / (2.0 * p) / 0.95;
            if let Some(gc) = critical_gamma(p, q) {
                g = (gc + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
            }
        }
        let params = reference_params(p, q, g).map_err(|e| e.to_string())?;
        let crit = survival_condition(p, q, g);
        let fixed = solve_extinction(&params).map_err(|e| e.to_string())?.survives;
        let spectral = rho(mean_matrix(p, q, g)) > 1.0;
        let growth = match malthusian_lambda(&params) {
            Ok(l) => l > 0.0,
            Err(ModelError::NoRoot { f_lo, .. }) if f_lo < 0.0 => false,
            Err(e) => return Err(format!("draw {k} ({p}, {q}, {g}): {e}")),
        };
        ensure(
            crit == fixed && fixed == spectral && spectral == growth,
            format!("draw {k} ({p}, {q}, {g}): criterion {crit}, fixed point {fixed}, rho {spectral}, lambda {growth}"),
        )?;
        survivors += usize::from(crit);
    }
    Ok(format!("200 draws, {survivors} surviving, 0 disagreements"))
}

fn three_way_growth() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    while n < 5 {
        let (p, q, g) = (rng.random_range(0.0..0.45), rng.random_range(0.05..0.6), rng.random_range(0.1..0.9));
        let params = reference_params(p, q, g).map_err(|e| e.to_string())?;
        let Ok(l) = malthusian_lambda(&params) else { continue };
        if l <= 0.0 {
            continue;
        }
        let pde = growth_rate_from_pde(&params, None, None).map_err(|e| e.to_string())?.lambda;
        let ren = renewal_growth_rate(&params, 0.05, 600.0).map_err(|e| e.to_string())?;
        let err = (pde - l).abs().max((ren - l).abs());
        ensure(err < 1e-3, format!("({p:.3}, {q:.3}, {g:.3}): spectral {l}, pde {pde}, renewal {ren}"))?;
        worst = worst.max(err);
        n += 1;
    }
    Ok(format!("5 draws, worst deviation {worst:.2e}"))
}

/// First-event distribution from the survival function of the clock plus
/// exponential switching.
fn first_event_cdf_oracle(shape: f64, rate: f64, alpha: f64, a: f64, t: f64) -> f64 {
    let surv = |x: f64| gamma_ur(shape, rate * x);
    1.0 - (-alpha * t).exp() * surv(a + t) / surv(a)
}

fn monte_carlo() -> Outcome {
    let params = reference_params(0.6, 0.4, 0.3).unwrap();
    let pi = solve_extinction(&params).unwrap().pi0;
    let n = 10_000;
    let est = estimate_extinction(&params, 0, n, 3000.0, 1000, 2024).map_err(|e| e.to_string())?;
    let sd = (pi * (1.0 - pi) / n as f64).sqrt();
    ensure((est.estimate - pi).abs() < 3.0 * sd, format!("MC {} vs {pi} (sd {sd})", est.estimate))?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let band = 1.358 / (n as f64).sqrt();
    let mut worst_ks: f64 = 0.0;
    for k in 0..5u64 {
        let (p, q, g) = (rng.random_range(0.0..1.0), rng.random_range(0.05..0.9), rng.random_range(0.0..1.0));
        let ty = (k % 2) as usize;
        let age = rng.random_range(0.0..if ty == 0 { 3.0 } else { 30.0 });
        let draw = reference_params(p, q, g).unwrap();
        let sample = first_event_law_sample(&draw, age, ty, n, 200 + k).map_err(|e| e.to_string())?;
        let (rate, alpha) = if ty == 0 { (1.0, draw.alpha) } else { (0.1, 0.0) };
        let d = ks_distance(sample.iter().map(|e| e.0).collect(), |t| first_event_cdf_oracle(3.0, rate, alpha, age, t));
        ensure(d < band, format!("KS {d} at type {ty}, age {age}, q {q}"))?;
        worst_ks = worst_ks.max(d);
    }

    let gamma = 0.3;
    let p = reference_params(0.5, 0.4, gamma).unwrap();
    let opts = SimOptions { n_cap: 2, ..SimOptions::default() };
    let mut counts = [0usize; 3];
    for k in 0..n as u64 {
        let out = simulate(&p, &[Founder::newborn(1)], &opts, &mut replicate_rng(8, k));
        counts[out.n0] += 1;
    }
    let want = [(1.0 - gamma) * (1.0 - gamma), 2.0 * gamma * (1.0 - gamma), gamma * gamma];
    for (c, w) in counts.iter().zip(want) {
        ensure(within_sigma(*c, n, w, 3.0), format!("daughter counts {counts:?} vs {want:?}"))?;
    }
    Ok(format!("pi0 {pi:.4} vs MC {:.4}, worst KS {worst_ks:.4} < {band:.4}, daughters {counts:?}", est.estimate))
}

fn sensitivity_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lam = |p: &ModelParams| malthusian_lambda_tol(p, 1e-15).map_err(|e| e.to_string());
    let d = 1e-4;
    let mut n = 0;
    let mut worst: f64 = 0.0;
    while n < 20 {
        let (p, q, g) = (rng.random_range(0.0..0.8), rng.random_range(0.05..0.8), rng.random_range(0.05..0.95));
        if !survival_condition(p, q, g) {
            continue;
        }
        let params = reference_params(p, q, g).unwrap();
        let t = spectral_triplet(&params).map_err(|e| e.to_string())?;
        let fg = (lam(&params.with_gamma(g + d).unwrap())? - lam(&params.with_gamma(g - d).unwrap())?) / (2.0 * d);
        let a = params.alpha;
        let fa = (lam(&params.with_alpha(a + d).unwrap())? - lam(&params.with_alpha(a - d).unwrap())?) / (2.0 * d);
        for (name, got, want) in [("gamma", t.dlambda_dgamma, fg), ("alpha", t.dlambda_dalpha, fa)] {
            let err = (got - want).abs();
            ensure(
                err <= 1e-6f64.max(1e-3 * want.abs()),
                format!("({p:.3}, {q:.3}, {g:.3}) d/d{name}: formula {got} vs FD {want}"),
            )?;
            worst = worst.max(err / want.abs().max(1e-3));
        }
        let gap = t.lambda - lambda_star_1(&params);
        if gap.abs() > 1e-9 {
            ensure(
                t.dlambda_dgamma.signum() == gap.signum(),
                format!("({p:.3}, {q:.3}, {g:.3}) sign law: dlambda/dgamma {} vs lambda - lambda1* {gap}", t.dlambda_dgamma),
            )?;
        }
        n += 1;
    }
    Ok(format!("20 draws, worst scaled deviation {worst:.2e}, sign law holds"))
}

fn fitness_config() -> ExperimentConfig {
    let text = r#"{
        "name": "fitness",
        "model": {
            "beta0": {"kind": "gamma", "shape": 3, "rate": 1},
            "beta1": {"kind": "gamma", "shape": 3, "rate": 0.1},
            "q": 0.1, "gamma": 0.1,
            "stress": {"kind": "constant", "p": 0.3}
        },
        "sweep": {"axes": [{"name": "p", "values": [0.3, 0.4, 0.6]}, {"name": "gamma", "values": [0.1, 0.5]}]},
        "method": {"kind": "fitness"},
        "seed": 1
    }"#;
    ExperimentConfig::from_json(text).unwrap()
}

fn critical_stress() -> Outcome {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut flips = 0;
    for k in 1..20 {
        let q = 0.05 * k as f64;
        let params = reference_params(0.4, q, 0.5).unwrap();
        let pb = critical_p_bar(&params).map_err(|e| format!("q {q}: {e}"))?;
        ensure(pb <= 0.5 && pb > 0.46 && pb < 0.49, format!("q {q}: p_bar {pb}"))?;
        lo = lo.min(pb);
        hi = hi.max(pb);
        // The gradient sign follows the side of p_bar.
        let dg = |p: f64| growth_sensitivity(&params.with_p(p).unwrap()).map(|s| s.dlambda_dgamma);
        let (d47, d48) = (dg(0.47).map_err(|e| e.to_string())?, dg(0.48).map_err(|e| e.to_string())?);
        ensure(
            (d47 > 0.0) == (pb > 0.47) && (d48 > 0.0) == (pb > 0.48),
            format!("q {q}: p_bar {pb} but dlambda/dgamma {d47} at 0.47, {d48} at 0.48"),
        )?;
        flips += usize::from(d47 > 0.0 && d48 < 0.0);
    }
    ensure(flips > 0, "no q with the flip between 0.47 and 0.48".into())?;

    // Extinction gets less likely as the reversion probability rises.
    let d = 1e-5;
    let mut checked = 0;
    for p in [0.2, 0.3, 0.4, 0.45, 0.5, 0.6, 0.7] {
        for q in [0.1, 0.4, 0.7] {
            for g in [0.1, 0.5, 0.9] {
                if !(survival_condition(p, q, g - d) && survival_condition(p, q, g + d)) {
                    continue;
                }
                let params = reference_params(p, q, g).unwrap();
                let s = extinction_gamma_sensitivity(&params).map_err(|e| e.to_string())?;
                let pi = |g: f64| solve_extinction(&params.with_gamma(g).unwrap()).unwrap();
                let (up, down) = (pi(g + d), pi(g - d));
                let fd = [(up.pi0 - down.pi0) / (2.0 * d), (up.pi1 - down.pi1) / (2.0 * d)];
                for i in 0..2 {
                    ensure(
                        s[i] > 0.0 && fd[i] > 0.0 && (s[i] - fd[i]).abs() < 1e-5f64.max(1e-3 * fd[i]),
                        format!("({p}, {q}, {g}) dpi{i}/dgamma {} vs FD {}", s[i], fd[i]),
                    )?;
                }
                checked += 1;
            }
        }
    }

    let r = run_sweep(&fitness_config(), 1).map_err(|e| e.to_string())?;
    let col = |name: &str| r.column(name).unwrap();
    let (dl, dpi) = (col("dlambda_dgamma"), col("dpi0_dgamma"));
    let witness = r.rows.iter().zip(dl.iter().zip(&dpi)).find_map(|(row, pair)| match pair {
        (CellValue::Float(a), CellValue::Float(b)) if *a > 0.0 && *b > 0.0 => Some(row.axis_values.clone()),
        _ => None,
    });
    let Some(w) = witness else {
        return Err("fitness sweep has no row with both gradients positive".into());
    };
    Ok(format!(
        "p_bar in [{lo:.4}, {hi:.4}], flip between 0.47 and 0.48 for {flips} q values, dpi/dgamma > 0 at {checked} points, witness (p, gamma) = ({}, {})",
        w[0], w[1]
    ))
}

fn floquet_config() -> ExperimentConfig {
    let text = r#"{
        "name": "slow",
        "model": {
            "beta0": {"kind": "gamma", "shape": 3, "rate": 1},
            "beta1": {"kind": "gamma", "shape": 3, "rate": 0.1},
            "q": 0.1, "gamma": 0.3,
            "stress": {"kind": "periodic", "period": 120,
                       "segments": [{"duration": 60, "p": 0.25}, {"duration": 60, "p": 0.75}]}
        },
        "sweep": {"axes": [{"name": "q", "values": [0.1, 0.4]}, {"name": "gamma", "values": [0.3, 0.7]}]},
        "method": {"kind": "floquet"},
        "seed": 1
    }"#;
    ExperimentConfig::from_json(text).unwrap()
}

fn floquet() -> Outcome {
    let no_sens = FloquetOptions { sensitivities: false, ..FloquetOptions::default() };
    let p = reference_params(0.4, 0.4, 0.5).unwrap();
    let l = malthusian_lambda(&p).unwrap();
    let flat = p.with_stress(StressSignal::square_wave(5.0, 0.4, 0.4).unwrap()).unwrap();
    let lf = floquet_lambda(&flat, no_sens).map_err(|e| e.to_string())?.lambda;
    ensure((lf - l).abs() < 1e-3, format!("constant signal: {lf} vs {l}"))?;

    let half = reference_params(0.5, 0.4, 0.5).unwrap();
    let lh = malthusian_lambda(&half).unwrap();
    let fast = half.with_stress(StressSignal::square_wave(0.03, 0.25, 0.75).unwrap()).unwrap();
    let lfast = floquet_lambda(&fast, no_sens).map_err(|e| e.to_string())?.lambda;
    ensure((lfast - lh).abs() < 5e-3, format!("T = 0.03: {lfast} vs {lh}"))?;

    let r = run_sweep(&floquet_config(), 1).map_err(|e| e.to_string())?;
    let lt = r.column("lambda_t").unwrap();
    let mut best: Option<(f64, f64, f64)> = None;
    for (row, v) in r.rows.iter().zip(&lt) {
        let CellValue::Float(v) = v else { return Err(format!("failed cell {:?}", row.axis_values)) };
        let (q, g) = (row.axis_values[0], row.axis_values[1]);
        let mean = malthusian_lambda(&reference_params(0.5, q, g).unwrap()).unwrap();
        if best.is_none_or(|b| v - mean > b.0) {
            best = Some((v - mean, q, g));
        }
    }
    let (excess, q, g) = best.unwrap();
    ensure(excess > 1e-3, format!("largest lambda_T excess {excess}"))?;

    let c = reference_params(0.6, 0.3, 0.4).unwrap();
    let f = solve_periodic_extinction(&c, PeriodicOptions { n_s: 20, ..Default::default() }).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for i in 0..f.n_s {
        for j in (0..f.n_a).step_by(5).filter(|&j| j as f64 * f.step <= 30.0) {
            let a = j as f64 * f.step;
            worst = worst
                .max((f.pi0_at(i, j) - extinction_at_age(&c, a, 0).unwrap()).abs())
                .max((f.pi1_at(i, j) - extinction_at_age(&c, a, 1).unwrap()).abs());
        }
    }
    ensure(worst < 1e-8, format!("periodic field deviates by {worst}"))?;
    Ok(format!(
        "constant {:.1e}, T = 0.03 off by {:.1e}, T = 120 excess {excess:.2e} at (q, gamma) = ({q}, {g}), field {worst:.1e}",
        (lf - l).abs(),
        (lfast - lh).abs()
    ))
}

fn determinism() -> Outcome {
    let opts = VerifyOptions::new(Level::Quick);
    let (a, b) = (verify_suite(&opts).to_json(), verify_suite(&opts).to_json());
    ensure(a == b, "verify quick reports differ".into())?;

    let text = r#"{
        "name": "mc",
        "model": {
            "beta0": {"kind": "gamma", "shape": 3, "rate": 1},
            "beta1": {"kind": "gamma", "shape": 3, "rate": 0.1},
            "q": 0.4, "gamma": 0.3,
            "stress": {"kind": "constant", "p": 0.6}
        },
        "sweep": {"axes": [{"name": "gamma", "values": [0.2, 0.5]}]},
        "method": {"kind": "simulate", "mode": "extinction", "replicates": 300},
        "seed": 11
    }"#;
    let cfg = ExperimentConfig::from_json(text).unwrap();
    let x = render_csv(&run_sweep(&cfg, 11).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let y = render_csv(&run_sweep(&cfg, 11).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure(x == y, "repeated sweep CSVs differ".into())?;

    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_outputs(&cfg, 11, d1.path(), false).map_err(|e| e.to_string())?;
    write_outputs(&cfg, 11, d2.path(), false).map_err(|e| e.to_string())?;
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("mc.csv")).unwrap();
    ensure(read(&d1) == read(&d2), "written CSVs differ".into())?;
    Ok(format!("verify report {} bytes and sweep CSV {} bytes identical across runs", a.len(), x.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("closed-form values", closed_forms),
        ("survival equivalence", survival_equivalence),
        ("three-way growth rate", three_way_growth),
        ("Monte Carlo vs analytic", monte_carlo),
        ("sensitivity fidelity", sensitivity_fidelity),
        ("critical stress", critical_stress),
        ("periodic stress", floquet),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {} ({name}, {secs:.1} s): {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {} ({name}, {secs:.1} s): {detail}", k + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
