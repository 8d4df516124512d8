//! Adaptive Gauss–Kronrod integration and Wynn's epsilon acceleration.

#![allow(clippy::excessive_precision)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;

// Kronrod abscissae in descending order; odd indices are the 7-point Gauss nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// 15-point Kronrod estimate on `[a, b]` with `|K15 − G7|` as the error.
pub(crate) fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Globally adaptive integration over consecutive panels `breaks[k]..breaks[k+1]`.
///
/// The segment with the largest error estimate is bisected until the summed
/// error drops below `tol` or `max_splits` bisections have been spent.
pub(crate) fn integrate_panels<F: Fn(f64) -> f64>(f: &F, breaks: &[f64], tol: f64, max_splits: usize) -> Estimate {
    let mut heap = BinaryHeap::with_capacity(breaks.len() + max_splits);
    let mut total_err = 0.0;
    for w in breaks.windows(2) {
        let (value, error) = gk15(f, w[0], w[1]);
        total_err += error;
        heap.push(Segment { a: w[0], b: w[1], value, error });
    }
    let mut splits = 0;
    while total_err > tol && splits < max_splits {
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval cannot be split further in floating point.
            heap.push(worst);
            break;
        }
        let (v1, e1) = gk15(f, worst.a, mid);
        let (v2, e2) = gk15(f, mid, worst.b);
        total_err += e1 + e2 - worst.error;
        heap.push(Segment { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Segment { a: mid, b: worst.b, value: v2, error: e2 });
        splits += 1;
    }
    // Re-sum so the accumulated error is not polluted by cancellation.
    let (value, error) = heap.iter().fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.error));
    Estimate { value, error }
}

/// Wynn's epsilon algorithm fed one partial sum at a time.
pub(crate) struct EpsilonTable {
    diagonal: Vec<f64>,
    estimates: Vec<f64>,
}

impl EpsilonTable {
    pub fn new() -> Self {
        EpsilonTable {
            diagonal: Vec::new(),
            estimates: Vec::new(),
        }
    }

    /// Adds the next partial sum and returns the current extrapolated limit.
    pub fn push(&mut self, partial_sum: f64) -> f64 {
        let old = std::mem::take(&mut self.diagonal);
        let mut new = Vec::with_capacity(old.len() + 1);
        new.push(partial_sum);
        for k in 0..old.len() {
            let diff = new[k] - old[k];
            if diff == 0.0 || !diff.is_finite() {
                break;
            }
            let prev = if k == 0 { 0.0 } else { old[k - 1] };
            let next = prev + 1.0 / diff;
            if !next.is_finite() {
                break;
            }
            new.push(next);
        }
        // Even columns approximate the limit; take the deepest one.
        let deepest_even = (new.len() - 1) & !1;
        let estimate = new[deepest_even];
        self.diagonal = new;
        self.estimates.push(estimate);
        estimate
    }

    /// Spread of the last three extrapolated values.
    pub fn error(&self) -> f64 {
        let n = self.estimates.len();
        if n < 3 {
            return f64::INFINITY;
        }
        let e = &self.estimates[n - 3..];
        (e[2] - e[1]).abs() + (e[1] - e[0]).abs()
    }
}
