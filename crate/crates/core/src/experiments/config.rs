use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::error::{invalid, Result};
use crate::hazard::HazardModel;
use crate::kernel::alpha_from_q;
use crate::params::ModelParams;
use crate::stress::StressSignal;

/// Model block of a config. Exactly one of `alpha` and `q` must be given;
/// `q` is converted to a switching rate through the type-0 clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub beta0: HazardModel,
    pub beta1: HazardModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    pub gamma: f64,
    pub stress: StressSignal,
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelParams> {
        let alpha = match (self.alpha, self.q) {
            (Some(a), None) => a,
            (None, Some(q)) => alpha_from_q(&self.beta0, q)?,
            _ => return Err(invalid("model", "give exactly one of `alpha` and `q`")),
        };
        ModelParams::new(self.beta0.clone(), self.beta1.clone(), alpha, self.gamma, self.stress.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisName {
    #[serde(rename = "p")]
    P,
    #[serde(rename = "q")]
    Q,
    #[serde(rename = "alpha")]
    Alpha,
    #[serde(rename = "gamma")]
    Gamma,
    #[serde(rename = "T")]
    Period,
}

impl AxisName {
    pub fn label(self) -> &'static str {
        match self {
            Self::P => "p",
            Self::Q => "q",
            Self::Alpha => "alpha",
            Self::Gamma => "gamma",
            Self::Period => "T",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

/// One sweep axis: explicit `values`, or `count` points from `start` to `stop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: AxisName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default)]
    pub spacing: Spacing,
}

impl Axis {
    pub fn points(&self) -> Result<Vec<f64>> {
        let pts = match (&self.values, self.start, self.stop, self.count) {
            (Some(v), None, None, None) => v.clone(),
            (None, Some(a), Some(b), Some(n)) if n >= 1 => {
                if n == 1 {
                    vec![a]
                } else {
                    match self.spacing {
                        Spacing::Linear => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
                        Spacing::Log => {
                            if a <= 0.0 || b <= 0.0 {
                                return Err(invalid("sweep", "log spacing needs positive bounds"));
                            }
                            let (la, lb) = (a.ln(), b.ln());
                            (0..n).map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp()).collect()
                        }
                    }
                }
            }
            _ => {
                return Err(invalid(
                    "sweep",
                    format!("axis `{}` needs either `values` or `start`/`stop`/`count`", self.name.label()),
                ))
            }
        };
        if pts.is_empty() || pts.iter().any(|x| !x.is_finite()) {
            return Err(invalid("sweep", format!("axis `{}` has no usable values", self.name.label())));
        }
        Ok(pts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axes: Vec<Axis>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    #[default]
    Extinction,
    Growth,
}

/// What to compute at each model point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MethodConfig {
    Extinction {
        #[serde(default = "default_ns")]
        time_steps: usize,
    },
    Growth {},
    /// Growth rate together with the γ-sensitivity of extinction.
    Fitness {},
    Pde {
        #[serde(default)]
        da: Option<f64>,
        #[serde(default)]
        horizon: Option<f64>,
        #[serde(default)]
        snapshot_times: Vec<f64>,
    },
    Floquet {
        #[serde(default)]
        da: Option<f64>,
        #[serde(default = "default_max_periods")]
        max_periods: usize,
    },
    Simulate {
        #[serde(default)]
        mode: SimMode,
        #[serde(default = "default_replicates")]
        replicates: usize,
        #[serde(default)]
        horizon: Option<f64>,
        #[serde(default)]
        n_cap: Option<usize>,
        #[serde(default)]
        founder_type: usize,
    },
}

fn default_ns() -> usize {
    200
}
fn default_max_periods() -> usize {
    10_000
}
fn default_replicates() -> usize {
    1000
}

impl MethodConfig {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Extinction { .. } => "extinction",
            Self::Growth {} => "growth",
            Self::Fitness {} => "fitness",
            Self::Pde { .. } => "pde",
            Self::Floquet { .. } => "floquet",
            Self::Simulate { .. } => "simulate",
        }
    }

    /// Default settings for a method named on the command line.
    pub fn default_for(label: &str) -> Option<Self> {
        Some(match label {
            "extinction" => Self::Extinction { time_steps: default_ns() },
            "growth" => Self::Growth {},
            "fitness" => Self::Fitness {},
            "pde" => Self::Pde {
                da: None,
                horizon: None,
                snapshot_times: Vec::new(),
            },
            "floquet" => Self::Floquet {
                da: None,
                max_periods: default_max_periods(),
            },
            "simulate" => Self::Simulate {
                mode: SimMode::Extinction,
                replicates: default_replicates(),
                horizon: None,
                n_cap: None,
                founder_type: 0,
            },
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "yes")]
    pub plot_script: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            plot_script: true,
        }
    }
}

fn default_dir() -> String {
    "out".into()
}
fn yes() -> bool {
    true
}
fn default_name() -> String {
    "experiment".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    pub method: MethodConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// Parses and validates; every failure here is a config error.
    pub fn from_json(text: &str) -> std::result::Result<Self, ExperimentError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> std::result::Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(invalid("name", "must be a non-empty file stem"));
        }
        self.model.build()?;
        if let Some(sweep) = &self.sweep {
            let mut seen = Vec::new();
            for ax in &sweep.axes {
                ax.points()?;
                if seen.contains(&ax.name) {
                    return Err(invalid("sweep", format!("axis `{}` repeated", ax.name.label())));
                }
                seen.push(ax.name);
            }
            let has = |n| seen.contains(&n);
            if has(AxisName::Q) && has(AxisName::Alpha) {
                return Err(invalid("sweep", "axes `q` and `alpha` both set the switching rate"));
            }
            if has(AxisName::Period) && self.model.stress.period().is_none() {
                return Err(invalid("sweep", "axis `T` needs a periodic stress signal"));
            }
            if has(AxisName::P) && self.model.stress.period().is_some() {
                return Err(invalid("sweep", "axis `p` needs constant stress"));
            }
        }
        self.validate_method()
    }

    fn validate_method(&self) -> Result<()> {
        let periodic = self.model.stress.period().is_some();
        let positive = |name: &'static str, v: Option<f64>| match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(invalid(name, "must be positive and finite")),
            _ => Ok(()),
        };
        match &self.method {
            MethodConfig::Extinction { time_steps } => {
                if *time_steps < 2 {
                    return Err(invalid("time_steps", "need at least 2 steps per period"));
                }
            }
            MethodConfig::Growth {} | MethodConfig::Fitness {} => {
                if periodic {
                    return Err(invalid("method", "growth and fitness need constant stress; use floquet"));
                }
            }
            MethodConfig::Pde { da, horizon, snapshot_times } => {
                positive("da", *da)?;
                positive("horizon", *horizon)?;
                if snapshot_times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
                    return Err(invalid("snapshot_times", "must be finite and non-negative"));
                }
            }
            MethodConfig::Floquet { da, max_periods } => {
                positive("da", *da)?;
                if *max_periods == 0 {
                    return Err(invalid("max_periods", "must be positive"));
                }
            }
            MethodConfig::Simulate { replicates, horizon, n_cap, founder_type, .. } => {
                if *replicates == 0 {
                    return Err(invalid("replicates", "must be positive"));
                }
                positive("horizon", *horizon)?;
                if n_cap.is_some_and(|n| n == 0) {
                    return Err(invalid("n_cap", "must be positive"));
                }
                if *founder_type > 1 {
                    return Err(invalid("founder_type", "must be 0 or 1"));
                }
            }
        }
        Ok(())
    }

    /// Effective seed: command line first, then config, then zero.
    pub fn effective_seed(&self, cli: Option<u64>) -> u64 {
        cli.or(self.seed).unwrap_or(0)
    }

    /// SHA-256 over the canonical JSON of the parsed config and the seed.
    pub fn hash(&self, seed: u64) -> String {
        let canonical = serde_json::to_string(self).expect("config serialises");
        let mut h = Sha256::new();
        h.update(canonical.as_bytes());
        h.update(format!("\nseed={seed}").as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
