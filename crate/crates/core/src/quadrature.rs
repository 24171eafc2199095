//! Globally adaptive Gauss-Kronrod (7/15) quadrature.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Tolerances for [`integrate`]. The estimate stops once the summed error
/// drops below `max(abs_tol, rel_tol * |value|)`.
#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub initial_panels: usize,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-14,
            rel_tol: 1e-12,
            initial_panels: 4,
            max_intervals: 4000,
        }
    }
}

impl QuadOptions {
    pub fn with_panels(mut self, n: usize) -> Self {
        self.initial_panels = n.max(1);
        self
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

#[derive(Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Panel {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    Panel {
        a,
        b,
        value: kron * h,
        error: ((kron - gauss) * h).abs(),
    }
}

/// Integrates `f` over `[a, b]`. Returns a best effort value if the interval
/// budget runs out; the reported `error` then exceeds the requested tolerance.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, opts: QuadOptions) -> QuadResult {
    if b == a {
        return QuadResult {
            value: 0.0,
            error: 0.0,
            intervals: 0,
        };
    }
    let n = opts.initial_panels.max(1);
    let width = (b - a) / n as f64;
    let mut heap = BinaryHeap::with_capacity(2 * n + 16);
    let (mut value, mut error) = (0.0, 0.0);
    for i in 0..n {
        let lo = a + width * i as f64;
        let hi = if i + 1 == n { b } else { lo + width };
        let p = gk15(&mut f, lo, hi);
        value += p.value;
        error += p.error;
        heap.push(p);
    }
    while error > opts.abs_tol.max(opts.rel_tol * value.abs()) && heap.len() < opts.max_intervals {
        let worst = heap.pop().expect("heap is non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            heap.push(worst);
            break;
        }
        let left = gk15(&mut f, worst.a, mid);
        let right = gk15(&mut f, mid, worst.b);
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
    // Re-sum to shed the drift of incremental updates.
    let (value, error) = heap
        .iter()
        .fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error));
    QuadResult {
        value,
        error,
        intervals: heap.len(),
    }
}

/// Integrates over consecutive breakpoints, one adaptive run per piece.
pub fn integrate_pieces<F: FnMut(f64) -> f64>(mut f: F, points: &[f64], opts: QuadOptions) -> f64 {
    points
        .windows(2)
        .map(|w| integrate(&mut f, w[0], w[1], opts).value)
        .sum()
}

/// Integrates a non-negative, eventually decaying `f` over `[a, ∞)`.
///
/// Panels of doubling width starting at `scale` are added until one
/// contributes less than `tail_tol` relative to the running total.
pub fn integrate_to_infinity<F: FnMut(f64) -> f64>(mut f: F, a: f64, scale: f64, opts: QuadOptions) -> f64 {
    let tail_tol = 1e-16;
    let mut total = 0.0;
    let mut lo = a;
    let mut width = scale;
    let mut quiet = 0;
    for _ in 0..200 {
        let hi = lo + width;
        let piece = integrate(&mut f, lo, hi, opts).value;
        total += piece;
        if piece.abs() <= tail_tol * total.abs().max(f64::MIN_POSITIVE) {
            quiet += 1;
            if quiet >= 2 {
                break;
            }
        } else {
            quiet = 0;
        }
        lo = hi;
        width *= 2.0;
    }
    total
}
