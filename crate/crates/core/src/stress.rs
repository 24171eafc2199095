//! Time-varying stress signal `p(t)`: probability that a dividing type-0 cell dies.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub duration: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum StressSpec {
    Constant { p: f64 },
    Periodic { period: f64, segments: Vec<Segment> },
}

/// Validated stress signal. Periodic signals are piecewise constant and
/// their segment durations sum to the period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StressSpec", into = "StressSpec")]
pub enum StressSignal {
    Constant { p: f64 },
    Periodic { period: f64, segments: Vec<Segment> },
}

fn check_p(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(invalid("p", format!("stress probability {p} outside [0, 1]")))
    }
}

impl TryFrom<StressSpec> for StressSignal {
    type Error = ModelError;
    fn try_from(s: StressSpec) -> Result<Self> {
        match s {
            StressSpec::Constant { p } => Self::constant(p),
            StressSpec::Periodic { period, segments } => Self::periodic(period, segments),
        }
    }
}

impl From<StressSignal> for StressSpec {
    fn from(s: StressSignal) -> Self {
        match s {
            StressSignal::Constant { p } => StressSpec::Constant { p },
            StressSignal::Periodic { period, segments } => StressSpec::Periodic { period, segments },
        }
    }
}

impl StressSignal {
    pub fn constant(p: f64) -> Result<Self> {
        check_p(p)?;
        Ok(Self::Constant { p })
    }

    pub fn periodic(period: f64, segments: Vec<Segment>) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(invalid("period", format!("must be positive, got {period}")));
        }
        if segments.is_empty() {
            return Err(invalid("segments", "need at least one segment"));
        }
        for s in &segments {
            check_p(s.p)?;
            if !(s.duration.is_finite() && s.duration > 0.0) {
                return Err(invalid("segments", format!("non-positive duration {}", s.duration)));
            }
        }
        let total: f64 = segments.iter().map(|s| s.duration).sum();
        if (total - period).abs() > 1e-12 * period {
            return Err(invalid(
                "segments",
                format!("durations sum to {total}, period is {period}"),
            ));
        }
        Ok(Self::Periodic { period, segments })
    }

    /// Two-phase signal: `p_low` for the first half of each period, `p_high` after.
    pub fn square_wave(period: f64, p_low: f64, p_high: f64) -> Result<Self> {
        Self::periodic(
            period,
            vec![
                Segment { duration: 0.5 * period, p: p_low },
                Segment { duration: 0.5 * period, p: p_high },
            ],
        )
    }

    pub fn at(&self, t: f64) -> f64 {
        match self {
            Self::Constant { p } => *p,
            Self::Periodic { period, segments } => {
                let mut s = t.rem_euclid(*period);
                for seg in segments {
                    if s < seg.duration {
                        return seg.p;
                    }
                    s -= seg.duration;
                }
                segments.last().unwrap().p
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Constant { p } => *p,
            Self::Periodic { period, segments } => {
                segments.iter().map(|s| s.p * s.duration).sum::<f64>() / period
            }
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Self::Constant { p } => Some(*p),
            Self::Periodic { segments, .. } => {
                let p0 = segments[0].p;
                segments.iter().all(|s| s.p == p0).then_some(p0)
            }
        }
    }

    pub fn period(&self) -> Option<f64> {
        match self {
            Self::Constant { .. } => None,
            Self::Periodic { period, .. } => Some(*period),
        }
    }

    /// Same shape rescaled to a new period.
    pub fn with_period(&self, new_period: f64) -> Result<Self> {
        match self {
            Self::Constant { p } => Err(invalid(
                "period",
                format!("constant stress p = {p} has no period to set"),
            )),
            Self::Periodic { period, segments } => {
                let scale = new_period / period;
                let mut segs: Vec<Segment> = segments
                    .iter()
                    .map(|s| Segment { duration: s.duration * scale, p: s.p })
                    .collect();
                // Absorb rounding so the durations sum exactly to the period.
                let head: f64 = segs[..segs.len() - 1].iter().map(|s| s.duration).sum();
                segs.last_mut().unwrap().duration = new_period - head;
                Self::periodic(new_period, segs)
            }
        }
    }

    /// Segment boundaries within one period, starting at 0 and ending at the period.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Self::Constant { .. } => vec![],
            Self::Periodic { segments, .. } => {
                let mut out = vec![0.0];
                let mut acc = 0.0;
                for s in segments {
                    acc += s.duration;
                    out.push(acc);
                }
                out
            }
        }
    }
}
