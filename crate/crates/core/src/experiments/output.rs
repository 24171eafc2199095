use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{ExperimentConfig, MethodConfig};
use super::sweep::{run_sweep, CellValue, SweepResult, Table};
use super::{ExperimentError, VERSION};

type Res<T> = std::result::Result<T, ExperimentError>;

/// Floats are written with 17 significant digits so they round-trip.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

fn format_cell(v: &CellValue) -> String {
    match v {
        CellValue::Float(x) => format_float(*x),
        CellValue::Int(n) => n.to_string(),
        CellValue::Bool(b) => b.to_string(),
        CellValue::Empty => String::new(),
    }
}

fn provenance_lines(r: &SweepResult) -> String {
    format!(
        "# stresspop {}\n# config_sha256 {}\n# seed {}\n# method {}\n# rows {}\n",
        r.version,
        r.config_hash,
        r.seed,
        r.method,
        r.rows.len()
    )
}

fn csv_body(header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Res<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| ExperimentError::Io {
        path: "<csv buffer>".into(),
        reason: e.to_string(),
    };
    w.write_record(&header).map_err(fail)?;
    for r in rows {
        w.write_record(&r).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| ExperimentError::Io {
        path: "<csv buffer>".into(),
        reason: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Main table: provenance comments, then axes, outputs and `error`.
pub fn render_csv(r: &SweepResult) -> Res<String> {
    let header: Vec<String> = r
        .axis_names
        .iter()
        .chain(&r.columns)
        .cloned()
        .chain(std::iter::once("error".to_string()))
        .collect();
    let rows = r.rows.iter().map(|row| {
        row.axis_values
            .iter()
            .map(|x| format_float(*x))
            .chain(row.values.iter().map(format_cell))
            .chain(std::iter::once(row.error.clone().unwrap_or_default()))
            .collect()
    });
    Ok(provenance_lines(r) + &csv_body(header, rows)?)
}

fn render_table(r: &SweepResult, t: &Table) -> Res<String> {
    let rows = t.rows.iter().map(|row| row.iter().map(|x| format_float(*x)).collect());
    Ok(provenance_lines(r) + &csv_body(t.columns.clone(), rows)?)
}

#[derive(Debug, Serialize)]
struct Provenance<'a> {
    name: &'a str,
    config_sha256: &'a str,
    seed: u64,
    version: &'a str,
    method: &'a str,
    rows: usize,
    failed_rows: usize,
    wall_time_seconds: f64,
}

/// Outcome of [`write_outputs`].
#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    /// Fresh outputs written; carries the main CSV path.
    Written(PathBuf),
    /// Matching outputs already present and complete.
    Skipped(PathBuf),
}

/// Hash, seed, version, declared rows and data rows found in an existing CSV.
type CsvStamp = (String, u64, String, usize, usize);

fn read_provenance(path: &Path) -> Res<Option<CsvStamp>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(ExperimentError::io(path, e)),
    };
    let field = |key: &str| {
        text.lines()
            .filter_map(|l| l.strip_prefix("# "))
            .find_map(|l| l.strip_prefix(key).map(|v| v.trim().to_string()))
    };
    let hash = field("config_sha256").unwrap_or_default();
    let seed = field("seed").and_then(|s| s.parse().ok()).unwrap_or(u64::MAX);
    let version = field("stresspop").unwrap_or_default();
    let rows = field("rows").and_then(|s| s.parse().ok()).unwrap_or(usize::MAX);
    // Data records after the header line; the csv reader handles quoted newlines.
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    let records = rdr.records().filter(|r| r.is_ok()).count();
    Ok(Some((hash, seed, version, rows, records)))
}

/// Runs the sweep unless a complete output with the same provenance exists.
///
/// A main CSV with a different config hash, seed or version, or an
/// incomplete one, is never overwritten unless `force` is set.
pub fn write_outputs(cfg: &ExperimentConfig, seed: u64, dir: &Path, force: bool) -> Res<(RunStatus, Option<SweepResult>)> {
    let main = dir.join(format!("{}.csv", cfg.name));
    let expected_hash = cfg.hash(seed);
    if let Some((hash, s, version, rows, records)) = read_provenance(&main)? {
        let same = hash == expected_hash && s == seed && version == VERSION;
        if same && rows == records {
            return Ok((RunStatus::Skipped(main), None));
        }
        if !force {
            let reason = if same {
                format!("file is incomplete ({records} of {rows} rows)")
            } else {
                "existing output has different provenance; pass --force to replace it".into()
            };
            return Err(ExperimentError::Conflict {
                path: main.display().to_string(),
                reason,
            });
        }
    }
    let result = run_sweep(cfg, seed)?;
    fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    for t in &result.tables {
        let path = dir.join(format!("{}_{}.csv", cfg.name, t.suffix));
        fs::write(&path, render_table(&result, t)?).map_err(|e| ExperimentError::io(&path, e))?;
    }
    if cfg.output.plot_script {
        let path = dir.join(format!("{}_plot.py", cfg.name));
        fs::write(&path, plot_script(cfg, &result)).map_err(|e| ExperimentError::io(&path, e))?;
    }
    let side = dir.join(format!("{}.provenance.json", cfg.name));
    let prov = Provenance {
        name: &cfg.name,
        config_sha256: &result.config_hash,
        seed,
        version: VERSION,
        method: &result.method,
        rows: result.rows.len(),
        failed_rows: result.failures(),
        wall_time_seconds: result.wall_time,
    };
    let json = serde_json::to_string_pretty(&prov).expect("provenance serialises");
    fs::write(&side, json + "\n").map_err(|e| ExperimentError::io(&side, e))?;
    // Main CSV last, so a crash never leaves a complete-looking file behind.
    let tmp = dir.join(format!(".{}.csv.partial", cfg.name));
    fs::write(&tmp, render_csv(&result)?).map_err(|e| ExperimentError::io(&tmp, e))?;
    fs::rename(&tmp, &main).map_err(|e| ExperimentError::io(&main, e))?;
    Ok((RunStatus::Written(main), Some(result)))
}

/// Columns worth a heatmap, as `(label, python expression over the row dict)`.
fn plotted(cfg: &ExperimentConfig, r: &SweepResult) -> Vec<(String, String)> {
    let col = |c: &str| (c.to_string(), format!("row['{c}']"));
    match &cfg.method {
        MethodConfig::Extinction { .. } => vec![
            ("1 - pi0".into(), "1 - row['pi0']".into()),
            ("1 - pi1".into(), "1 - row['pi1']".into()),
        ],
        MethodConfig::Growth {} => vec![col("lambda"), col("dlambda_dgamma")],
        MethodConfig::Fitness {} => vec![col("lambda"), col("dlambda_dgamma"), col("dpi0_dgamma")],
        MethodConfig::Floquet { .. } => vec![
            col("lambda_t"),
            ("lambda_t - lambda_mean_stress".into(), "row['lambda_t'] - row['lambda_mean_stress']".into()),
        ],
        _ => r.columns.iter().take(1).map(|c| col(c)).collect(),
    }
}

/// Matplotlib script drawing one heatmap per plotted column over the last
/// two axes, faceted by the first axis when there are three.
fn plot_script(cfg: &ExperimentConfig, r: &SweepResult) -> String {
    let quoted = |v: &[String]| v.iter().map(|s| format!("'{s}'")).collect::<Vec<_>>().join(", ");
    let panels = plotted(cfg, r);
    let labels: Vec<String> = panels.iter().map(|p| p.0.clone()).collect();
    let exprs = panels
        .iter()
        .map(|p| format!("    lambda row: {},", p.1))
        .collect::<Vec<_>>()
        .join("\n");
    let overlay = r.columns.iter().any(|c| c == "critical_gamma");
    PLOT_TEMPLATE
        .replace("@NAME@", &cfg.name)
        .replace("@AXES@", &quoted(&r.axis_names))
        .replace("@LABELS@", &quoted(&labels))
        .replace("@EXPRS@", &exprs)
        .replace("@OVERLAY@", if overlay { "True" } else { "False" })
}

const PLOT_TEMPLATE: &str = r##"#!/usr/bin/env python3
# Generated by stresspop. Usage: python @NAME@_plot.py [@NAME@.csv]
import csv
import sys

import matplotlib.pyplot as plt
import numpy as np

AXES = [@AXES@]
LABELS = [@LABELS@]
EXPRS = [
@EXPRS@
]
OVERLAY_CRITICAL_GAMMA = @OVERLAY@


def load(path):
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    rows = []
    for raw in csv.DictReader(lines):
        row = {}
        for key, value in raw.items():
            try:
                row[key] = float(value)
            except (TypeError, ValueError):
                row[key] = np.nan if key != "error" else value
        rows.append(row)
    return rows


def value(expr, row):
    try:
        return expr(row)
    except (KeyError, TypeError):
        return np.nan


def heatmap(ax, rows, xname, yname, expr, label):
    xs = sorted({r[xname] for r in rows})
    ys = sorted({r[yname] for r in rows})
    grid = np.full((len(ys), len(xs)), np.nan)
    for r in rows:
        grid[ys.index(r[yname]), xs.index(r[xname])] = value(expr, r)
    mesh = ax.pcolormesh(xs, ys, grid, shading="nearest")
    plt.colorbar(mesh, ax=ax, label=label)
    if OVERLAY_CRITICAL_GAMMA and xname == "gamma" and yname == "q":
        curve = sorted({(r["q"], r["critical_gamma"]) for r in rows if not np.isnan(r["critical_gamma"])})
        if curve:
            q, g = zip(*curve)
            ax.plot(g, q, color="red")
            ax.set_xlim(min(xs), max(xs))
    ax.set_xlabel(xname)
    ax.set_ylabel(yname)


def main():
    path = sys.argv[1] if len(sys.argv) > 1 else "@NAME@.csv"
    rows = load(path)
    if len(AXES) == 0:
        for label, expr in zip(LABELS, EXPRS):
            print(label, value(expr, rows[0]))
        return
    if len(AXES) == 1:
        fig, axes = plt.subplots(1, len(LABELS), figsize=(4 * len(LABELS), 3.5), squeeze=False)
        xs = [r[AXES[0]] for r in rows]
        for ax, label, expr in zip(axes[0], LABELS, EXPRS):
            ax.plot(xs, [value(expr, r) for r in rows], marker="o")
            ax.set_xlabel(AXES[0])
            ax.set_ylabel(label)
    else:
        facet = AXES[0] if len(AXES) == 3 else None
        yname, xname = AXES[-2], AXES[-1]
        groups = sorted({r[facet] for r in rows}) if facet else [None]
        fig, axes = plt.subplots(len(LABELS), len(groups), figsize=(4 * len(groups), 3.5 * len(LABELS)), squeeze=False)
        for i, (label, expr) in enumerate(zip(LABELS, EXPRS)):
            for j, g in enumerate(groups):
                sub = [r for r in rows if facet is None or r[facet] == g]
                heatmap(axes[i][j], sub, xname, yname, expr, label)
                if facet:
                    axes[i][j].set_title(f"{facet} = {g:g}")
    fig.tight_layout()
    fig.savefig("@NAME@.png", dpi=150)


if __name__ == "__main__":
    main()
"##;
