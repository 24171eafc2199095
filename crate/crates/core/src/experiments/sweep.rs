use std::time::Instant;

use rayon::prelude::*;

use super::config::{AxisName, ExperimentConfig, MethodConfig, SimMode};
use super::{ExperimentError, VERSION};
use crate::error::Result;
use crate::extinction::{critical_gamma, extinction_gamma_sensitivity, solve_extinction, solve_periodic_extinction, PeriodicOptions};
use crate::kernel::alpha_from_q;
use crate::params::ModelParams;
use crate::pde::{evolve_pde, floquet_lambda, growth_rate_from_pde, AgeGrid, DensityField, FloquetOptions};
use crate::sim::{default_growth_window, estimate_extinction, estimate_growth_rate};
use crate::spectral::{critical_p_bar, growth_sensitivity, lambda_star_1, malthusian_lambda};
use crate::stress::StressSignal;

/// One output entry of a sweep row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellValue {
    Float(f64),
    Int(u64),
    Bool(bool),
    Empty,
}

impl From<f64> for CellValue {
    fn from(x: f64) -> Self {
        Self::Float(x)
    }
}

impl From<Option<f64>> for CellValue {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Self::Empty, Self::Float)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub axis_values: Vec<f64>,
    pub values: Vec<CellValue>,
    pub error: Option<String>,
}

/// Auxiliary per-point table, written as `<name>_<suffix>.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub suffix: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub name: String,
    pub method: String,
    pub axis_names: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
    /// Only filled for single-point runs.
    pub tables: Vec<Table>,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub wall_time: f64,
}

impl SweepResult {
    pub fn column(&self, name: &str) -> Option<Vec<CellValue>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r.values[i]).collect())
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }
}

/// Seed for grid cell `j`, decorrelated from neighbouring cells by SplitMix64.
pub fn cell_seed(seed: u64, j: u64) -> u64 {
    let mut z = seed.wrapping_add(j.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn output_columns(method: &MethodConfig, periodic: bool) -> Vec<&'static str> {
    match method {
        MethodConfig::Extinction { .. } if periodic => {
            vec!["pi0", "pi1", "pi0_phase_mean", "pi1_phase_mean", "survives", "iterations"]
        }
        MethodConfig::Extinction { .. } => vec!["pi0", "pi1", "survives", "critical_gamma"],
        MethodConfig::Growth {} => vec!["lambda", "lambda1star", "dlambda_dalpha", "dlambda_dgamma", "p_bar"],
        MethodConfig::Fitness {} => vec!["lambda", "dlambda_dgamma", "pi0", "pi1", "dpi0_dgamma", "dpi1_dgamma"],
        MethodConfig::Pde { .. } => vec!["lambda", "lambda_half", "richardson", "da", "horizon"],
        MethodConfig::Floquet { .. } => {
            vec!["lambda_t", "lambda_mean_stress", "dlambda_dalpha", "dlambda_dgamma", "period", "da", "periods"]
        }
        MethodConfig::Simulate { .. } => vec!["estimate", "std_error", "samples", "censored", "analytic"],
    }
}

fn grid_points(cfg: &ExperimentConfig) -> Result<(Vec<AxisName>, Vec<Vec<f64>>)> {
    let mut names = Vec::new();
    let mut points = Vec::new();
    if let Some(sweep) = &cfg.sweep {
        for ax in &sweep.axes {
            names.push(ax.name);
            points.push(ax.points()?);
        }
    }
    Ok((names, points))
}

fn params_at(cfg: &ExperimentConfig, names: &[AxisName], values: &[f64]) -> Result<ModelParams> {
    let mut model = cfg.model.clone();
    for (&name, &v) in names.iter().zip(values) {
        match name {
            AxisName::P => model.stress = StressSignal::constant(v)?,
            AxisName::Period => model.stress = model.stress.with_period(v)?,
            AxisName::Gamma => model.gamma = v,
            AxisName::Q => {
                model.alpha = Some(alpha_from_q(&model.beta0, v)?);
                model.q = None;
            }
            AxisName::Alpha => {
                model.alpha = Some(v);
                model.q = None;
            }
        }
    }
    model.build()
}

struct CellOutput {
    values: Vec<CellValue>,
    tables: Vec<Table>,
}

fn evaluate(method: &MethodConfig, params: &ModelParams, seed: u64, single: bool) -> Result<CellOutput> {
    let mut tables = Vec::new();
    let values: Vec<CellValue> = match method {
        MethodConfig::Extinction { time_steps } => match params.stress.as_constant() {
            Some(p) => {
                let sol = solve_extinction(params)?;
                vec![
                    sol.pi0.into(),
                    sol.pi1.into(),
                    CellValue::Bool(sol.survives),
                    critical_gamma(p, params.q()).into(),
                ]
            }
            None => {
                let opts = PeriodicOptions {
                    n_s: *time_steps,
                    ..PeriodicOptions::default()
                };
                let f = solve_periodic_extinction(params, opts)?;
                let mean = |v: &dyn Fn(usize) -> f64| (0..f.n_s).map(v).sum::<f64>() / f.n_s as f64;
                let m0 = mean(&|i| f.pi0_at(i, 0));
                let m1 = mean(&|i| f.pi1_at(i, 0));
                if single {
                    let mut rows = Vec::with_capacity(f.n_s * f.n_a);
                    for i in 0..f.n_s {
                        for j in 0..f.n_a {
                            rows.push(vec![i as f64 * f.step, j as f64 * f.step, f.pi0_at(i, j), f.pi1_at(i, j)]);
                        }
                    }
                    tables.push(Table {
                        suffix: "field".into(),
                        columns: vec!["s".into(), "a".into(), "pi0".into(), "pi1".into()],
                        rows,
                    });
                }
                vec![
                    f.pi0_at(0, 0).into(),
                    f.pi1_at(0, 0).into(),
                    m0.into(),
                    m1.into(),
                    CellValue::Bool(m0.min(m1) < 1.0 - crate::extinction::SURVIVAL_MARGIN),
                    CellValue::Int(f.iterations as u64),
                ]
            }
        },
        MethodConfig::Growth {} => {
            let g = growth_sensitivity(params)?;
            let p_bar = critical_p_bar(params).ok();
            vec![
                g.lambda.into(),
                lambda_star_1(params).into(),
                g.dlambda_dalpha.into(),
                g.dlambda_dgamma.into(),
                p_bar.into(),
            ]
        }
        MethodConfig::Fitness {} => {
            let g = growth_sensitivity(params)?;
            let sol = solve_extinction(params)?;
            let d = extinction_gamma_sensitivity(params)?;
            vec![
                g.lambda.into(),
                g.dlambda_dgamma.into(),
                sol.pi0.into(),
                sol.pi1.into(),
                d[0].into(),
                d[1].into(),
            ]
        }
        MethodConfig::Pde { da, horizon, snapshot_times } => {
            let g = growth_rate_from_pde(params, *da, *horizon)?;
            if single {
                tables.extend(pde_tables(params, g.da, g.horizon, snapshot_times)?);
            }
            vec![g.lambda.into(), g.lambda_half.into(), g.richardson.into(), g.da.into(), g.horizon.into()]
        }
        MethodConfig::Floquet { da, max_periods } => {
            let r = floquet_lambda(
                params,
                FloquetOptions {
                    da: *da,
                    max_periods: *max_periods,
                    ..FloquetOptions::default()
                },
            )?;
            let flat = params.with_stress(StressSignal::constant(params.stress.mean())?)?;
            vec![
                r.lambda.into(),
                malthusian_lambda(&flat).ok().into(),
                r.dlambda_dalpha.into(),
                r.dlambda_dgamma.into(),
                r.period.into(),
                r.da.into(),
                CellValue::Int(r.periods as u64),
            ]
        }
        MethodConfig::Simulate { mode, replicates, horizon, n_cap, founder_type } => {
            let slow = params.mean_division_time(0).max(params.mean_division_time(1));
            match mode {
                SimMode::Extinction => {
                    let h = horizon.unwrap_or(100.0 * slow);
                    let est = estimate_extinction(params, *founder_type, *replicates, h, n_cap.unwrap_or(1000), seed)?;
                    let analytic = match solve_extinction(params) {
                        Ok(s) => Some(if *founder_type == 0 { s.pi0 } else { s.pi1 }),
                        Err(_) => None,
                    };
                    vec![
                        est.estimate.into(),
                        est.std_error.into(),
                        CellValue::Int(est.samples as u64),
                        CellValue::Int(est.censored as u64),
                        analytic.into(),
                    ]
                }
                SimMode::Growth => {
                    let mut window = default_growth_window(params);
                    if let Some(h) = horizon {
                        window = (0.3 * h, *h);
                    }
                    let est = estimate_growth_rate(params, *replicates, window, n_cap.unwrap_or(100_000), seed)?;
                    vec![
                        est.estimate.into(),
                        est.std_error.into(),
                        CellValue::Int(est.samples as u64),
                        CellValue::Int(est.censored as u64),
                        malthusian_lambda(params).ok().into(),
                    ]
                }
            }
        }
    };
    Ok(CellOutput { values, tables })
}

fn pde_tables(params: &ModelParams, da: f64, horizon: f64, snapshot_times: &[f64]) -> Result<Vec<Table>> {
    let grid = AgeGrid::for_params(params, da)?;
    let init = DensityField::from_fn(&grid, |a| [params.psi0(0.0, a), params.psi1(0.0, a)]);
    let times: Vec<f64> = if snapshot_times.is_empty() {
        (0..=4).map(|k| horizon * k as f64 / 4.0).collect()
    } else {
        snapshot_times.to_vec()
    };
    let run = evolve_pde(params, grid, &init, horizon, &times)?;
    let mut snaps = Vec::new();
    for field in &run.snapshots {
        // Normalised to unit mass at each snapshot.
        let mass = (field.log_mass(&grid) - field.log_scale).exp();
        for j in 0..grid.len {
            snaps.push(vec![field.t, grid.age(j), field.n0[j] / mass, field.n1[j] / mass]);
        }
    }
    Ok(vec![
        Table {
            suffix: "snapshots".into(),
            columns: vec!["t".into(), "a".into(), "n0".into(), "n1".into()],
            rows: snaps,
        },
        Table {
            suffix: "mass".into(),
            columns: vec!["t".into(), "logmass".into()],
            rows: run.mass_trace.iter().map(|&(t, m)| vec![t, m]).collect(),
        },
    ])
}

/// Evaluates the configured method at every grid point, in parallel on the
/// current rayon pool. Rows are in row-major order over the declared axes
/// and do not depend on the number of workers. Failed points keep their
/// row with the message in the `error` column.
pub fn run_sweep(cfg: &ExperimentConfig, seed: u64) -> std::result::Result<SweepResult, ExperimentError> {
    cfg.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
    let start = Instant::now();
    let (names, points) = grid_points(cfg).map_err(|e| ExperimentError::Config(e.to_string()))?;
    let total: usize = points.iter().map(Vec::len).product();
    let single = total == 1;
    let periodic = cfg.model.stress.period().is_some();
    let columns = output_columns(&cfg.method, periodic);

    let cells: Vec<(Row, Vec<Table>)> = (0..total)
        .into_par_iter()
        .map(|j| {
            let mut rem = j;
            let mut values = vec![0.0; points.len()];
            for k in (0..points.len()).rev() {
                values[k] = points[k][rem % points[k].len()];
                rem /= points[k].len();
            }
            let out = params_at(cfg, &names, &values)
                .and_then(|prm| evaluate(&cfg.method, &prm, cell_seed(seed, j as u64), single));
            match out {
                Ok(o) => (
                    Row {
                        axis_values: values,
                        values: o.values,
                        error: None,
                    },
                    o.tables,
                ),
                Err(e) => (
                    Row {
                        axis_values: values,
                        values: vec![CellValue::Empty; columns.len()],
                        error: Some(e.to_string()),
                    },
                    Vec::new(),
                ),
            }
        })
        .collect();

    let mut rows = Vec::with_capacity(total);
    let mut tables = Vec::new();
    for (r, t) in cells {
        rows.push(r);
        tables.extend(t);
    }
    Ok(SweepResult {
        name: cfg.name.clone(),
        method: cfg.method.label().into(),
        axis_names: names.iter().map(|n| n.label().to_string()).collect(),
        columns: columns.iter().map(|c| c.to_string()).collect(),
        rows,
        tables,
        config_hash: cfg.hash(seed),
        seed,
        version: VERSION.into(),
        wall_time: start.elapsed().as_secs_f64(),
    })
}
