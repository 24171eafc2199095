//! Exact individual-based simulation of the branching process.
//!
//! Each cell's next event is drawn by thinning a Poisson clock of rate
//! `α·[type 0] + b̄_type`, where `b̄_type` bounds the cell's division hazard.
//! Events are processed in time order from a heap.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ModelError, Result};
use crate::params::ModelParams;

/// Random stream for replicate `k` of a run seeded with `seed`.
pub fn replicate_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Switch,
    Division,
    /// A type-0 division that killed the cell.
    Death,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    /// Type of the cell before the event.
    pub cell_type: usize,
    /// Age of the cell at the event.
    pub age: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Founder {
    pub cell_type: usize,
    pub age: f64,
}

impl Founder {
    pub fn newborn(cell_type: usize) -> Self {
        Self { cell_type, age: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub start_time: f64,
    pub horizon: f64,
    /// Stop once the population reaches this size.
    pub n_cap: usize,
    pub snapshot_times: Vec<f64>,
    pub record_events: bool,
    /// Keep the `(age, type)` of every cell alive at the end.
    pub record_final_ages: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            start_time: 0.0,
            horizon: f64::INFINITY,
            n_cap: 5000,
            snapshot_times: Vec::new(),
            record_events: false,
            record_final_ages: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub n0: usize,
    pub n1: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimOutcome {
    pub extinct: bool,
    pub capped: bool,
    /// Time of the last processed event (or the horizon).
    pub end_time: f64,
    pub n0: usize,
    pub n1: usize,
    pub snapshots: Vec<Snapshot>,
    pub events: Vec<Event>,
    pub final_ages: Vec<(f64, usize)>,
}

#[derive(Clone, Copy)]
struct Cell {
    /// Time at which the cell had age zero.
    origin: f64,
    ty: usize,
    alive: bool,
}

#[derive(Clone, Copy)]
struct Pending {
    t: f64,
    seq: u64,
    cell: usize,
    switch: bool,
}

impl PartialEq for Pending {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Pending {
    // Reversed so the max-heap pops the earliest event.
    fn cmp(&self, o: &Self) -> Ordering {
        o.t.total_cmp(&self.t).then(o.seq.cmp(&self.seq))
    }
}

#[derive(Default)]
struct Population {
    cells: Vec<Cell>,
    free: Vec<usize>,
    heap: BinaryHeap<Pending>,
    seq: u64,
}

impl Population {
    fn spawn<R: Rng + ?Sized>(&mut self, params: &ModelParams, bounds: [f64; 2], rng: &mut R, origin: f64, ty: usize, now: f64) {
        let cell = Cell { origin, ty, alive: true };
        let idx = match self.free.pop() {
            Some(i) => {
                self.cells[i] = cell;
                i
            }
            None => {
                self.cells.push(cell);
                self.cells.len() - 1
            }
        };
        self.schedule(params, bounds, rng, idx, now);
    }

    fn schedule<R: Rng + ?Sized>(&mut self, params: &ModelParams, bounds: [f64; 2], rng: &mut R, idx: usize, now: f64) {
        let cell = self.cells[idx];
        let (age, switch) = next_event(params, bounds, cell.ty, now - cell.origin, rng);
        self.seq += 1;
        self.heap.push(Pending {
            t: cell.origin + age,
            seq: self.seq,
            cell: idx,
            switch,
        });
    }
}

/// Draws the next event of a cell of type `ty` currently at age `age`.
/// Returns the age at the event and whether it is a switch.
fn next_event<R: Rng + ?Sized>(params: &ModelParams, bounds: [f64; 2], ty: usize, mut age: f64, rng: &mut R) -> (f64, bool) {
    let switch_rate = if ty == 0 { params.alpha } else { 0.0 };
    let total = switch_rate + bounds[ty];
    let hazard = if ty == 0 { &params.beta0 } else { &params.beta1 };
    loop {
        let tau: f64 = rng.sample(Exp1);
        age += tau / total;
        let u = rng.random::<f64>() * total;
        if u < switch_rate {
            return (age, true);
        }
        if u < switch_rate + hazard.rate(age) {
            return (age, false);
        }
    }
}

/// Runs one realisation from the given founders.
pub fn simulate<R: Rng + ?Sized>(params: &ModelParams, founders: &[Founder], opts: &SimOptions, rng: &mut R) -> SimOutcome {
    let bounds = [params.beta0.upper_bound(), params.beta1.upper_bound()];
    let mut pop = Population::default();
    let mut counts = [0usize; 2];
    let t0 = opts.start_time;

    for f in founders {
        pop.spawn(params, bounds, rng, t0 - f.age, f.cell_type, t0);
        counts[f.cell_type] += 1;
    }

    let mut snaps: Vec<f64> = opts.snapshot_times.iter().cloned().filter(|&s| s >= t0).collect();
    snaps.sort_by(f64::total_cmp);
    let mut snaps = snaps.into_iter().peekable();
    let mut snapshots = Vec::new();
    let mut events = Vec::new();
    let mut now = t0;
    let mut capped = counts[0] + counts[1] >= opts.n_cap;

    while !capped {
        let next_t = pop.heap.peek().map_or(f64::INFINITY, |e| e.t);
        while let Some(&s) = snaps.peek() {
            if s < next_t && s <= opts.horizon {
                snapshots.push(Snapshot { t: s, n0: counts[0], n1: counts[1] });
                snaps.next();
            } else {
                break;
            }
        }
        if counts[0] + counts[1] == 0 || next_t > opts.horizon {
            now = if counts[0] + counts[1] == 0 { now } else { opts.horizon };
            break;
        }
        let ev = pop.heap.pop().expect("non-empty heap");
        now = ev.t;
        let cell = pop.cells[ev.cell];
        let age = now - cell.origin;
        if ev.switch {
            if opts.record_events {
                events.push(Event { t: now, kind: EventKind::Switch, cell_type: 0, age });
            }
            pop.cells[ev.cell].ty = 1;
            counts[0] -= 1;
            counts[1] += 1;
            pop.schedule(params, bounds, rng, ev.cell, now);
            continue;
        }
        pop.cells[ev.cell].alive = false;
        pop.free.push(ev.cell);
        counts[cell.ty] -= 1;
        let kids: [Option<usize>; 2] = if cell.ty == 0 {
            if rng.random::<f64>() < params.stress.at(now) {
                [None, None]
            } else {
                [Some(0), Some(0)]
            }
        } else {
            let g = params.gamma;
            [
                Some(if rng.random::<f64>() < g { 0 } else { 1 }),
                Some(if rng.random::<f64>() < g { 0 } else { 1 }),
            ]
        };
        if opts.record_events {
            let kind = if kids[0].is_none() { EventKind::Death } else { EventKind::Division };
            events.push(Event { t: now, kind, cell_type: cell.ty, age });
        }
        for ty in kids.into_iter().flatten() {
            pop.spawn(params, bounds, rng, now, ty, now);
            counts[ty] += 1;
        }
        if counts[0] + counts[1] >= opts.n_cap {
            capped = true;
        }
    }

    let final_ages = if opts.record_final_ages {
        pop.cells
            .iter()
            .filter(|c| c.alive)
            .map(|c| (now - c.origin, c.ty))
            .collect()
    } else {
        Vec::new()
    };
    SimOutcome {
        extinct: counts[0] + counts[1] == 0,
        capped,
        end_time: now,
        n0: counts[0],
        n1: counts[1],
        snapshots,
        events,
        final_ages,
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    pub std_error: f64,
    /// Replicates that entered the estimate.
    pub samples: usize,
    /// Replicates stopped at the horizon while still alive and below the cap.
    pub censored: usize,
}

impl MonteCarloEstimate {
    /// Normal-approximation confidence interval at `z` standard errors.
    pub fn interval(&self, z: f64) -> (f64, f64) {
        (self.estimate - z * self.std_error, self.estimate + z * self.std_error)
    }
}

fn check_replicates(n: usize) -> Result<()> {
    if n == 0 {
        return Err(ModelError::Domain("need at least one replicate".into()));
    }
    Ok(())
}

/// Fraction of lineages from one newborn type-`ty` founder that die out.
/// Lineages reaching `n_cap` cells count as surviving.
pub fn estimate_extinction(
    params: &ModelParams,
    ty: usize,
    replicates: usize,
    horizon: f64,
    n_cap: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    estimate_extinction_from(params, Founder::newborn(ty), replicates, horizon, n_cap, seed)
}

pub fn estimate_extinction_from(
    params: &ModelParams,
    founder: Founder,
    replicates: usize,
    horizon: f64,
    n_cap: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    estimate_extinction_at(params, founder, 0.0, replicates, horizon, n_cap, seed)
}

/// As [`estimate_extinction_from`] with the founder placed at time `start`,
/// which matters under periodic stress.
pub fn estimate_extinction_at(
    params: &ModelParams,
    founder: Founder,
    start: f64,
    replicates: usize,
    horizon: f64,
    n_cap: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    check_replicates(replicates)?;
    let opts = SimOptions {
        start_time: start,
        horizon: start + horizon,
        n_cap,
        ..SimOptions::default()
    };
    let outcomes: Vec<(bool, bool)> = (0..replicates as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = replicate_rng(seed, k);
            let out = simulate(params, &[founder], &opts, &mut rng);
            (out.extinct, !out.extinct && !out.capped)
        })
        .collect();
    let extinct = outcomes.iter().filter(|o| o.0).count();
    let censored = outcomes.iter().filter(|o| o.1).count();
    let n = replicates as f64;
    let est = extinct as f64 / n;
    Ok(MonteCarloEstimate {
        estimate: est,
        std_error: (est * (1.0 - est) / n).sqrt(),
        samples: replicates,
        censored,
    })
}

/// Growth rate as the least-squares slope of `ln E[N_t]` over `window`, with
/// the mean taken over all replicates (extinct ones contribute zero).
///
/// Averaging per-replicate slopes of `ln N_t` is biased low because the log
/// of the population martingale drifts downward; the pooled mean is not.
/// Replicates that hit `n_cap` inside the window are dropped and counted as
/// censored. The standard error is a grouped jackknife over replicates.
pub fn estimate_growth_rate(
    params: &ModelParams,
    replicates: usize,
    window: (f64, f64),
    n_cap: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    check_replicates(replicates)?;
    let (a, b) = window;
    if !(b > a && a >= 0.0) {
        return Err(ModelError::Domain(format!("bad fit window [{a}, {b}]")));
    }
    let points = 64;
    let times: Vec<f64> = (0..=points).map(|i| a + (b - a) * i as f64 / points as f64).collect();
    let opts = SimOptions {
        horizon: b,
        n_cap,
        snapshot_times: times.clone(),
        ..SimOptions::default()
    };
    let runs: Vec<Option<Vec<f64>>> = (0..replicates as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = replicate_rng(seed, k);
            let out = simulate(params, &[Founder::newborn(0)], &opts, &mut rng);
            if out.capped {
                return None;
            }
            let mut counts = vec![0.0; times.len()];
            for (c, s) in counts.iter_mut().zip(&out.snapshots) {
                *c = (s.n0 + s.n1) as f64;
            }
            Some(counts)
        })
        .collect();
    let kept: Vec<&Vec<f64>> = runs.iter().flatten().collect();
    let alive = kept.iter().filter(|c| *c.last().unwrap() > 0.0).count();
    if alive == 0 {
        return Err(ModelError::Numerical(format!(
            "all {} uncapped replicates died out before t = {b}",
            kept.len()
        )));
    }
    let slope_of = |skip: Option<(usize, usize)>| -> Option<f64> {
        let mut sums = vec![0.0; times.len()];
        for (i, c) in kept.iter().enumerate() {
            if skip.is_some_and(|(g, groups)| i % groups == g) {
                continue;
            }
            sums.iter_mut().zip(c.iter()).for_each(|(s, x)| *s += x);
        }
        if sums.iter().any(|&s| s <= 0.0) {
            return None;
        }
        let ys: Vec<f64> = sums.iter().map(|s| s.ln()).collect();
        Some(ls_slope(&times, &ys))
    };
    let estimate = slope_of(None).ok_or_else(|| {
        ModelError::Numerical("mean population vanished inside the fit window".into())
    })?;
    let groups = 20.min(kept.len());
    let mut jack = Vec::with_capacity(groups);
    for g in 0..groups {
        if let Some(v) = slope_of(Some((g, groups))) {
            jack.push(v);
        }
    }
    let std_error = if jack.len() >= 2 {
        let m = jack.len() as f64;
        let mean = jack.iter().sum::<f64>() / m;
        ((m - 1.0) / m * jack.iter().map(|x| (x - mean).powi(2)).sum::<f64>()).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(MonteCarloEstimate {
        estimate,
        std_error,
        samples: alive,
        censored: replicates - kept.len(),
    })
}

/// Default fit window: from three mean type-1 division times to ten.
pub fn default_growth_window(params: &ModelParams) -> (f64, f64) {
    let tau = params.mean_division_time(1);
    (3.0 * tau, 10.0 * tau)
}

fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Time to, and kind of, the first event of a single cell of type `ty` and age `a`.
pub fn first_event_law_sample(
    params: &ModelParams,
    a: f64,
    ty: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<(f64, EventKind)>> {
    if a < 0.0 || ty > 1 {
        return Err(ModelError::Domain(format!("bad founder (age {a}, type {ty})")));
    }
    let bounds = [params.beta0.upper_bound(), params.beta1.upper_bound()];
    let mut rng = replicate_rng(seed, 0);
    Ok((0..n)
        .map(|_| {
            let (age, switch) = next_event(params, bounds, ty, a, &mut rng);
            let t = age - a;
            let kind = if switch {
                EventKind::Switch
            } else if ty == 0 && rng.random::<f64>() < params.stress.at(t) {
                EventKind::Death
            } else {
                EventKind::Division
            };
            (t, kind)
        })
        .collect())
}

/// Closed-form distribution function of the first-event time.
pub fn first_event_cdf(params: &ModelParams, a: f64, ty: usize, t: f64) -> f64 {
    let ln_surv = if ty == 0 { params.ln_psi0(a, a + t) } else { params.ln_psi1(a, a + t) };
    -ln_surv.exp_m1()
}
