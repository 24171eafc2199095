use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stresspop_core::experiments::{
    write_outputs, ExperimentConfig, ExperimentError, Level, MethodConfig, RunStatus, VerifyOptions,
};

#[derive(Parser)]
#[command(name = "stresspop", version, about = "Stress-response population model experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Replace existing outputs whose provenance differs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Extinction probabilities.
    Extinction(Common),
    /// Malthusian growth rate and its sensitivities.
    Growth(Common),
    /// Growth rate from the age-structured PDE.
    Pde(Common),
    /// Floquet growth rate under periodic stress.
    Floquet(Common),
    /// Monte Carlo estimates from the individual-based simulator.
    Simulate(Common),
    /// Runs the method named in the config over its sweep grid.
    Sweep(Common),
    /// Cross-checks between independent computations.
    Verify {
        /// Optional config; only its seed is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value = "quick")]
        level: Level,
        /// Shift γ on one side of the survival equivalence (fault injection).
        #[arg(long, default_value_t = 0.0, hide = true)]
        perturb_gamma: f64,
    },
}

fn set_workers(k: Option<usize>) -> Result<(), ExperimentError> {
    if let Some(k) = k {
        if k == 0 {
            return Err(ExperimentError::Config("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
    }
    Ok(())
}

fn run_method(label: Option<&str>, c: &Common) -> Result<(), ExperimentError> {
    set_workers(c.workers)?;
    let mut cfg = ExperimentConfig::from_file(&c.config)?;
    if let Some(label) = label {
        if cfg.method.label() != label {
            cfg.method = MethodConfig::default_for(label).expect("known method");
            cfg.name = format!("{}_{label}", cfg.name);
            cfg.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        }
    }
    let seed = cfg.effective_seed(c.seed);
    let dir = c.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let (status, result) = write_outputs(&cfg, seed, &dir, c.force)?;
    match status {
        RunStatus::Skipped(p) => println!("{}: up to date, skipped", p.display()),
        RunStatus::Written(p) => {
            let r = result.expect("written runs carry a result");
            let failed = r.failures();
            println!("{}: {} rows, {} failed, {:.2} s", p.display(), r.rows.len(), failed, r.wall_time);
            if failed > 0 {
                let first = r.rows.iter().find_map(|row| row.error.clone()).unwrap_or_default();
                eprintln!("warning: {failed} grid points failed; first error: {first}");
                if failed == r.rows.len() {
                    return Err(ExperimentError::Compute(stresspop_core::ModelError::Numerical(first)));
                }
            }
        }
    }
    Ok(())
}

fn run_verify(config: Option<&Path>, seed: Option<u64>, out: &Path, workers: Option<usize>, level: Level, perturb: f64) -> Result<bool, ExperimentError> {
    set_workers(workers)?;
    let mut opts = VerifyOptions::new(level);
    if let Some(path) = config {
        let cfg = ExperimentConfig::from_file(path)?;
        opts.seed = cfg.effective_seed(None);
    }
    if let Some(s) = seed {
        opts.seed = s;
    }
    opts.perturb_gamma = perturb;
    let report = stresspop_core::experiments::verify_suite(&opts);
    for c in &report.checks {
        println!("{} {:<40} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    std::fs::create_dir_all(out).map_err(|e| io(out, e))?;
    let path = out.join("verify_report.json");
    std::fs::write(&path, report.to_json()).map_err(|e| io(&path, e))?;
    let path = out.join("verify_timings.json");
    std::fs::write(&path, report.timings_json()).map_err(|e| io(&path, e))?;
    println!("{} of {} checks passed", report.checks.len() - report.failures, report.checks.len());
    Ok(report.passed)
}

fn io(path: &Path, e: std::io::Error) -> ExperimentError {
    ExperimentError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Extinction(c) => run_method(Some("extinction"), c).map(|_| true),
        Command::Growth(c) => run_method(Some("growth"), c).map(|_| true),
        Command::Pde(c) => run_method(Some("pde"), c).map(|_| true),
        Command::Floquet(c) => run_method(Some("floquet"), c).map(|_| true),
        Command::Simulate(c) => run_method(Some("simulate"), c).map(|_| true),
        Command::Sweep(c) => run_method(None, c).map(|_| true),
        Command::Verify {
            config,
            seed,
            out,
            workers,
            level,
            perturb_gamma,
        } => run_verify(config.as_deref(), *seed, out, *workers, *level, *perturb_gamma),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
