//! Adaptive Gauss–Kronrod quadrature used to pin one-dimensional laws.

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
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for k in 0..7 {
        let dx = h * XGK[k];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[k] * s;
        if k % 2 == 1 {
            gauss += WG[k / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

const MAX_INTERVALS: usize = 50_000;

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.err.total_cmp(&other.err).is_eq()
    }
}

impl Eq for Piece {}

impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Piece {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Globally adaptive: keeps bisecting the piece with the largest error
/// estimate until the summed estimate is below `tol`.
fn adapt(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let piece = |a: f64, b: f64| {
        let (value, err) = gk15(f, a, b);
        let err = if err.is_finite() { err } else { f64::MAX };
        Piece { a, b, value, err }
    };
    let mut heap = BinaryHeap::new();
    let first = piece(a, b);
    let mut total_err = first.err;
    heap.push(first);
    while total_err > tol && heap.len() < MAX_INTERVALS {
        let worst = heap.pop().expect("nonempty");
        let m = 0.5 * (worst.a + worst.b);
        if m <= worst.a || m >= worst.b {
            heap.push(Piece { err: 0.0, ..worst });
            total_err = heap.iter().map(|p| p.err).sum();
            continue;
        }
        let (l, r) = (piece(worst.a, m), piece(m, worst.b));
        total_err += l.err + r.err - worst.err;
        heap.push(l);
        heap.push(r);
        if heap.len() % 1024 == 0 {
            // refresh the running sum against drift
            total_err = heap.iter().map(|p| p.err).sum();
        }
    }
    let mut values: Vec<f64> = heap.into_iter().map(|p| p.value).collect();
    values.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    values.iter().sum()
}

/// `∫_a^b f` to absolute tolerance `tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    adapt(&f, a, b, tol)
}

/// `∫_a^∞ f` via the substitution `x = a + t / (1 - t)`.
pub fn integrate_to_infinity(f: impl Fn(f64) -> f64, a: f64, tol: f64) -> f64 {
    let g = |t: f64| {
        if t >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - t;
        let v = f(a + t / s) / (s * s);
        if v.is_finite() { v } else { 0.0 }
    };
    adapt(&g, 0.0, 1.0, tol)
}
