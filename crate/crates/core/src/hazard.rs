//! Age-dependent division hazards.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, ModelError, Result};
use crate::quadrature::{integrate, QuadOptions};
use crate::special::{ln_gamma_fn, ln_gamma_q};

/// Serialized form of a hazard, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum HazardSpec {
    Constant { rate: f64 },
    Gamma { shape: f64, rate: f64 },
    Tabulated { ages: Vec<f64>, rates: Vec<f64> },
}

/// A validated division hazard `β(a)`.
///
/// Gamma hazards require `shape >= 1` so that `β` is bounded and
/// non-decreasing. Tabulated hazards interpolate linearly between knots and
/// hold the end values constant outside them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HazardSpec", into = "HazardSpec")]
pub enum HazardModel {
    Constant { rate: f64 },
    Gamma { shape: f64, rate: f64, ln_norm: f64 },
    Tabulated(Tabulated),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    ages: Vec<f64>,
    rates: Vec<f64>,
    // Cumulative hazard at each knot.
    cum: Vec<f64>,
}

impl TryFrom<HazardSpec> for HazardModel {
    type Error = ModelError;

    fn try_from(spec: HazardSpec) -> Result<Self> {
        match spec {
            HazardSpec::Constant { rate } => Self::constant(rate),
            HazardSpec::Gamma { shape, rate } => Self::gamma(shape, rate),
            HazardSpec::Tabulated { ages, rates } => Self::tabulated(ages, rates),
        }
    }
}

impl From<HazardModel> for HazardSpec {
    fn from(h: HazardModel) -> Self {
        match h {
            HazardModel::Constant { rate } => HazardSpec::Constant { rate },
            HazardModel::Gamma { shape, rate, .. } => HazardSpec::Gamma { shape, rate },
            HazardModel::Tabulated(t) => HazardSpec::Tabulated {
                ages: t.ages,
                rates: t.rates,
            },
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must be positive and finite, got {v}")))
    }
}

impl HazardModel {
    pub fn constant(rate: f64) -> Result<Self> {
        positive("rate", rate)?;
        Ok(Self::Constant { rate })
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        positive("shape", shape)?;
        positive("rate", rate)?;
        if shape < 1.0 {
            return Err(invalid(
                "shape",
                format!("gamma shape {shape} < 1 gives an unbounded hazard"),
            ));
        }
        let ln_norm = shape * rate.ln() - ln_gamma_fn(shape);
        Ok(Self::Gamma {
            shape,
            rate,
            ln_norm,
        })
    }

    pub fn tabulated(ages: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if ages.is_empty() || ages.len() != rates.len() {
            return Err(invalid(
                "ages",
                format!("need matching non-empty knots, got {} ages and {} rates", ages.len(), rates.len()),
            ));
        }
        if ages[0] < 0.0 || ages.iter().any(|a| !a.is_finite()) {
            return Err(invalid("ages", "knots must be finite and non-negative"));
        }
        if ages.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("ages", "knots must be strictly increasing"));
        }
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(invalid("rates", "rates must be finite and non-negative"));
        }
        let last = *rates.last().unwrap();
        if last <= 0.0 {
            return Err(invalid("rates", "last rate must be positive so cells eventually divide"));
        }
        let mut cum = Vec::with_capacity(ages.len());
        let mut acc = rates[0] * ages[0];
        cum.push(acc);
        for i in 1..ages.len() {
            acc += 0.5 * (rates[i - 1] + rates[i]) * (ages[i] - ages[i - 1]);
            cum.push(acc);
        }
        Ok(Self::Tabulated(Tabulated { ages, rates, cum }))
    }

    /// Hazard at age `a`, rejecting negative ages.
    pub fn eval(&self, a: f64) -> Result<f64> {
        if a.is_nan() || a < 0.0 {
            return Err(ModelError::Domain(format!("negative age {a}")));
        }
        Ok(self.rate(a))
    }

    /// Hazard at age `a >= 0` without argument checks.
    pub fn rate(&self, a: f64) -> f64 {
        match self {
            Self::Constant { rate } => *rate,
            Self::Gamma {
                shape,
                rate,
                ln_norm,
            } => {
                if a <= 0.0 {
                    return if *shape == 1.0 { *rate } else { 0.0 };
                }
                if shape.fract() == 0.0 && *shape <= 64.0 {
                    return rate * erlang_ratio(*shape as usize, rate * a);
                }
                let ln_pdf = ln_norm + (shape - 1.0) * a.ln() - rate * a;
                (ln_pdf - ln_gamma_q(*shape, rate * a)).exp().min(*rate)
            }
            Self::Tabulated(t) => t.rate(a),
        }
    }

    /// `∫_0^a β`.
    pub fn cumulative_from_zero(&self, a: f64) -> f64 {
        match self {
            Self::Constant { rate } => rate * a,
            Self::Gamma { shape, rate, .. } => -ln_gamma_q(*shape, rate * a),
            Self::Tabulated(t) => t.cumulative(a),
        }
    }

    /// `∫_s^t β`.
    pub fn cumulative(&self, s: f64, t: f64) -> f64 {
        match self {
            Self::Constant { rate } => rate * (t - s),
            _ => self.cumulative_from_zero(t) - self.cumulative_from_zero(s),
        }
    }

    /// Log survival `-∫_s^t β`.
    pub fn ln_survival(&self, s: f64, t: f64) -> f64 {
        -self.cumulative(s, t)
    }

    /// Sup of the hazard (the A2 bound `b̄`).
    pub fn upper_bound(&self) -> f64 {
        match self {
            Self::Constant { rate } => *rate,
            Self::Gamma { rate, .. } => *rate,
            Self::Tabulated(t) => t.rates.iter().cloned().fold(0.0, f64::max),
        }
    }

    /// `(a0, b)` such that `β(a) >= b` for every `a >= a0` (the A3 pair).
    pub fn lower_bound(&self) -> (f64, f64) {
        match self {
            Self::Constant { rate } => (0.0, *rate),
            Self::Gamma { shape, rate, .. } => {
                if *shape == 1.0 {
                    return (0.0, *rate);
                }
                let target = 0.5 * rate;
                let mut hi = shape / rate;
                while self.rate(hi) < target {
                    hi *= 2.0;
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.rate(mid) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo < 1e-12 * hi {
                        break;
                    }
                }
                (hi, target)
            }
            Self::Tabulated(t) => (*t.ages.last().unwrap(), *t.rates.last().unwrap()),
        }
    }

    /// Limit of `β(a)` as `a → ∞`.
    pub fn tail_rate(&self) -> f64 {
        match self {
            Self::Constant { rate } => *rate,
            Self::Gamma { rate, .. } => *rate,
            Self::Tabulated(t) => *t.rates.last().unwrap(),
        }
    }

    pub fn mean_division_time(&self) -> f64 {
        match self {
            Self::Constant { rate } => 1.0 / rate,
            Self::Gamma { shape, rate, .. } => shape / rate,
            Self::Tabulated(t) => {
                let end = *t.ages.last().unwrap();
                let body = t.integrate_knots(0.0, end, |s| (-t.cumulative(s)).exp());
                body + (-t.cumulative(end)).exp() / t.rates.last().unwrap()
            }
        }
    }

    /// Residual Laplace transform
    /// `R(u, λ) = ∫_0^∞ e^{-λv} β(u+v) exp(-∫_u^{u+v} β) dv`,
    /// the Laplace transform of the remaining time to division from age `u`.
    /// Requires `λ > -tail_rate()`.
    pub fn residual_laplace(&self, u: f64, lambda: f64) -> f64 {
        match self {
            Self::Constant { rate } => rate / (rate + lambda),
            Self::Gamma { shape, rate, .. } => {
                let shifted = rate + lambda;
                if lambda == 0.0 {
                    return 1.0;
                }
                let ln_r = shape * (rate / shifted).ln() + ln_gamma_q(*shape, shifted * u)
                    - ln_gamma_q(*shape, rate * u)
                    + lambda * u;
                ln_r.exp()
            }
            Self::Tabulated(t) => t.residual_laplace(u, lambda),
        }
    }

    /// Laplace transform `ξ(λ)` of the division-time density.
    pub fn laplace(&self, lambda: f64) -> f64 {
        match self {
            Self::Gamma { shape, rate, .. } => (1.0 + lambda / rate).powf(-shape),
            _ => self.residual_laplace(0.0, lambda),
        }
    }

    /// Age beyond which `exp(-∫_0^a β - decay·a)` stays below `eps`.
    pub fn tail_age(&self, decay: f64, eps: f64) -> f64 {
        let target = -eps.ln();
        let f = |a: f64| self.cumulative_from_zero(a) + decay * a;
        let mut hi = self.mean_division_time().max(1e-3);
        let mut guard = 0;
        while f(hi) < target {
            hi *= 2.0;
            guard += 1;
            if guard > 200 {
                return f64::INFINITY;
            }
        }
        let mut lo = 0.0;
        while hi - lo > 1e-6 * hi {
            let mid = 0.5 * (lo + hi);
            if f(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// Checks A1 to A3 on a grid; returns a description of the first failure.
    pub fn check_assumptions(&self) -> Result<()> {
        let (a0, b_low) = self.lower_bound();
        let b_up = self.upper_bound();
        let horizon = a0 + 50.0 / b_low;
        if self.cumulative_from_zero(horizon) < 30.0 {
            return Err(ModelError::Assumption(format!(
                "A1: cumulative hazard only {} by age {horizon}",
                self.cumulative_from_zero(horizon)
            )));
        }
        let n = 4000;
        for i in 0..=n {
            let a = horizon * i as f64 / n as f64;
            let r = self.rate(a);
            if r > b_up * (1.0 + 1e-12) {
                return Err(ModelError::Assumption(format!("A2: β({a}) = {r} exceeds {b_up}")));
            }
            if a >= a0 && r < b_low * (1.0 - 1e-9) {
                return Err(ModelError::Assumption(format!(
                    "A3: β({a}) = {r} below {b_low} past age {a0}"
                )));
            }
        }
        Ok(())
    }
}

/// `(x^{k-1}/(k-1)!) / Σ_{j<k} x^j/j!`: the Erlang hazard divided by its rate.
fn erlang_ratio(k: usize, x: f64) -> f64 {
    if x < 1.0 {
        let (mut term, mut sum) = (1.0, 1.0);
        for j in 1..k {
            term *= x / j as f64;
            sum += term;
        }
        term / sum
    } else {
        // Horner on 1 + (k-1)/x + (k-1)(k-2)/x^2 + ... to avoid overflow.
        let mut acc = 1.0;
        for j in 1..k {
            acc = 1.0 + acc * j as f64 / x;
        }
        1.0 / acc
    }
}

impl Tabulated {
    fn segment(&self, a: f64) -> usize {
        self.ages.partition_point(|&x| x <= a)
    }

    fn rate(&self, a: f64) -> f64 {
        let i = self.segment(a);
        if i == 0 {
            self.rates[0]
        } else if i == self.ages.len() {
            *self.rates.last().unwrap()
        } else {
            let w = (a - self.ages[i - 1]) / (self.ages[i] - self.ages[i - 1]);
            self.rates[i - 1] + w * (self.rates[i] - self.rates[i - 1])
        }
    }

    fn cumulative(&self, a: f64) -> f64 {
        let i = self.segment(a);
        if i == 0 {
            self.rates[0] * a
        } else {
            let a_prev = self.ages[i - 1];
            self.cum[i - 1] + 0.5 * (self.rates[i - 1] + self.rate(a)) * (a - a_prev)
        }
    }

    /// Adaptive integration split at the knots where the integrand kinks.
    fn integrate_knots<F: FnMut(f64) -> f64>(&self, lo: f64, hi: f64, mut f: F) -> f64 {
        let mut points = vec![lo];
        points.extend(self.ages.iter().cloned().filter(|&x| x > lo && x < hi));
        points.push(hi);
        points
            .windows(2)
            .map(|w| integrate(&mut f, w[0], w[1], QuadOptions::default()).value)
            .sum()
    }

    fn residual_laplace(&self, u: f64, lambda: f64) -> f64 {
        let end = *self.ages.last().unwrap();
        let r = *self.rates.last().unwrap();
        let tail = r / (r + lambda);
        if u >= end {
            return tail;
        }
        let cu = self.cumulative(u);
        let body = self.integrate_knots(u, end, |s| {
            self.rate(s) * (-(self.cumulative(s) - cu) - lambda * (s - u)).exp()
        });
        body + (-(self.cumulative(end) - cu) - lambda * (end - u)).exp() * tail
    }
}
