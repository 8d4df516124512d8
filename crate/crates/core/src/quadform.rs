//! Law of `Q = Σ (a_i Z_i + δ_i)²` with `Z_i` i.i.d. standard normal.
//!
//! Each term is a scaled noncentral chi-square with one degree of freedom,
//! weight `a_i²` and noncentrality `(δ_i / a_i)²`. The CDF is obtained by
//! numerically inverting the characteristic function (Imhof's integral):
//!
//! ```text
//! P(Q ≤ x) = 1/2 − (1/π) ∫₀^∞ sin θ(u) / (u ρ(u)) du
//! θ(u) = ½ Σ [atan(w_i u) + λ_i w_i u / (1 + w_i² u²)] − ½ x u
//! ρ(u) = Π (1 + w_i² u²)^¼ · exp(½ Σ λ_i w_i² u² / (1 + w_i² u²))
//! ```
//!
//! The head of the integral is handled by adaptive Gauss–Kronrod on panels no
//! wider than half an oscillation. Once the phase is strictly decreasing the
//! tail is split at the zeros of `sin θ` and the resulting alternating series
//! is summed with Wynn's epsilon algorithm. Points far in either tail are
//! resolved exactly through Chernoff bounds.

use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

use crate::quadrature::{integrate_panels, EpsilonTable, Estimate};
use crate::{Error, Result};

/// Absolute accuracy promised by [`QuadFormDist::cdf`].
pub const CDF_TOLERANCE: f64 = 1e-6;

/// Internal accuracy target, leaving headroom below [`CDF_TOLERANCE`].
const TARGET: f64 = 1e-7;

/// Tail probability below which a Chernoff bound short-circuits the integral.
const CHERNOFF_CUTOFF: f64 = 1e-12;

/// Terms whose scale is below this fraction of the largest are folded into a
/// deterministic shift.
const DEGENERATE_RATIO: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadTerm {
    /// Standard deviation multiplier `a_i > 0`.
    pub scale: f64,
    /// Offset `δ_i`.
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadFormDist {
    terms: Vec<QuadTerm>,
}

impl QuadFormDist {
    pub fn new(terms: Vec<QuadTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::domain("a quadratic form needs at least one term"));
        }
        for t in &terms {
            if !(t.scale > 0.0 && t.scale.is_finite()) {
                return Err(Error::domain(format!("term scale must be positive, got {}", t.scale)));
            }
            if !t.offset.is_finite() {
                return Err(Error::domain("term offset must be finite"));
            }
        }
        Ok(QuadFormDist { terms })
    }

    pub fn from_parts(scales: &[f64], offsets: &[f64]) -> Result<Self> {
        if scales.len() != offsets.len() {
            return Err(Error::domain("scales and offsets differ in length"));
        }
        Self::new(
            scales
                .iter()
                .zip(offsets)
                .map(|(&scale, &offset)| QuadTerm { scale, offset })
                .collect(),
        )
    }

    pub fn central(scales: &[f64]) -> Result<Self> {
        Self::from_parts(scales, &vec![0.0; scales.len()])
    }

    pub fn terms(&self) -> &[QuadTerm] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.terms.iter().map(|t| t.scale * t.scale + t.offset * t.offset).sum()
    }

    pub fn variance(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let a2 = t.scale * t.scale;
                2.0 * a2 * a2 + 4.0 * a2 * t.offset * t.offset
            })
            .sum()
    }

    /// Multiplies every scale and offset by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.terms
                .iter()
                .map(|t| QuadTerm {
                    scale: t.scale * factor,
                    offset: t.offset * factor,
                })
                .collect(),
        )
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let z: f64 = rng.sample(StandardNormal);
                let v = t.scale * z + t.offset;
                v * v
            })
            .sum()
    }

    /// `P(Q ≤ x)` to within [`CDF_TOLERANCE`].
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if x.is_nan() {
            return Err(Error::domain("cdf argument must not be NaN"));
        }
        if x <= 0.0 {
            return Ok(0.0);
        }
        if x == f64::INFINITY {
            return Ok(1.0);
        }
        Normalized::new(&self.terms).cdf(x)
    }

    /// `P(Q > x)`.
    pub fn sf(&self, x: f64) -> Result<f64> {
        self.cdf(x).map(|p| 1.0 - p)
    }

    /// Smallest `x` with `cdf(x) ≈ p`, to within [`CDF_TOLERANCE`] in probability.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain(format!("probability must lie in (0, 1), got {p}")));
        }
        let spread = self.variance().sqrt();
        let mut lo = 0.0;
        let mut f_lo = -p;
        let mut hi = self.mean() + 4.0 * spread;
        let mut f_hi = self.cdf(hi)? - p;
        let mut grow = 0;
        while f_hi < 0.0 {
            lo = hi;
            f_lo = f_hi;
            hi = hi * 2.0 + spread;
            f_hi = self.cdf(hi)? - p;
            grow += 1;
            if grow > 200 {
                return Err(Error::NumericalAccuracy { bound: -f_hi, target: CDF_TOLERANCE });
            }
        }
        // Illinois regula falsi with a bisection guard.
        let mut side = 0i8;
        for _ in 0..200 {
            if f_hi.abs() <= 1e-12 {
                return Ok(hi);
            }
            if f_lo.abs() <= 1e-12 && lo > 0.0 {
                return Ok(lo);
            }
            if hi - lo <= 1e-14 * hi {
                break;
            }
            let mut mid = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
            if !(mid > lo && mid < hi) || side.abs() > 2 {
                mid = 0.5 * (lo + hi);
                side = 0;
            }
            let f_mid = self.cdf(mid)? - p;
            if f_mid < 0.0 {
                lo = mid;
                f_lo = f_mid;
                if side < 0 {
                    f_hi *= 0.5;
                }
                side = if side < 0 { side - 1 } else { -1 };
            } else {
                hi = mid;
                f_hi = f_mid;
                if side > 0 {
                    f_lo *= 0.5;
                }
                side = if side > 0 { side + 1 } else { 1 };
            }
        }
        Ok(hi)
    }
}

/// Weights and noncentralities rescaled so that the mean is one.
struct Normalized {
    weights: Vec<f64>,
    noncentrality: Vec<f64>,
    shift: f64,
    scale: f64,
}

impl Normalized {
    fn new(terms: &[QuadTerm]) -> Self {
        let max_scale = terms.iter().map(|t| t.scale).fold(0.0, f64::max);
        let mut shift = 0.0;
        let mut kept = Vec::with_capacity(terms.len());
        for t in terms {
            if t.scale < DEGENERATE_RATIO * max_scale {
                shift += t.offset * t.offset;
            } else {
                kept.push(*t);
            }
        }
        let scale: f64 = kept.iter().map(|t| t.scale * t.scale + t.offset * t.offset).sum();
        let weights = kept.iter().map(|t| t.scale * t.scale / scale).collect();
        let noncentrality = kept.iter().map(|t| (t.offset / t.scale).powi(2)).collect();
        Normalized {
            weights,
            noncentrality,
            shift,
            scale,
        }
    }

    fn terms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.weights.iter().copied().zip(self.noncentrality.iter().copied())
    }

    fn cdf(&self, x: f64) -> Result<f64> {
        let x = (x - self.shift) / self.scale;
        if x <= 0.0 {
            return Ok(0.0);
        }
        if x < 1.0 && self.chernoff(x) < CHERNOFF_CUTOFF {
            return Ok(0.0);
        }
        if x > 1.0 && self.chernoff(x) < CHERNOFF_CUTOFF {
            return Ok(1.0);
        }
        let Estimate { value, error } = self.imhof_integral(x);
        let bound = error / PI;
        if !(bound <= CDF_TOLERANCE) || !value.is_finite() {
            return Err(Error::NumericalAccuracy { bound, target: CDF_TOLERANCE });
        }
        Ok((0.5 - value / PI).clamp(0.0, 1.0))
    }

    /// Cumulant generating function `log E[e^{tQ}]` and its derivative.
    fn cgf(&self, t: f64) -> (f64, f64) {
        self.terms().fold((0.0, 0.0), |(k, dk), (w, nc)| {
            let denom = 1.0 - 2.0 * w * t;
            (
                k - 0.5 * (-2.0 * w * t).ln_1p() + nc * w * t / denom,
                dk + w / denom + nc * w / (denom * denom),
            )
        })
    }

    /// Chernoff bound on `P(Q ≤ x)` for `x < 1` or on `P(Q ≥ x)` for `x > 1`.
    fn chernoff(&self, x: f64) -> f64 {
        let (mut lo, mut hi) = if x > 1.0 {
            let w_max = self.weights.iter().copied().fold(0.0, f64::max);
            (0.0, 0.5 / w_max)
        } else {
            let mut lo = -1.0;
            while self.cgf(lo).1 > x {
                lo *= 2.0;
                if lo < -1e300 {
                    return 1.0;
                }
            }
            (lo, 0.0)
        };
        // K'(t) is increasing; bisect for the saddlepoint K'(t) = x.
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cgf(mid).1 < x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = if x > 1.0 { lo } else { hi };
        let (k, _) = self.cgf(t);
        (k - t * x).exp().min(1.0)
    }

    fn phase(&self, u: f64, x: f64) -> f64 {
        0.5 * self
            .terms()
            .map(|(w, nc)| {
                let wu = w * u;
                wu.atan() + nc * wu / (1.0 + wu * wu)
            })
            .sum::<f64>()
            - 0.5 * x * u
    }

    fn phase_derivative(&self, u: f64, x: f64) -> f64 {
        0.5 * self
            .terms()
            .map(|(w, nc)| {
                let s = w * w * u * u;
                w / (1.0 + s) + nc * w * (1.0 - s) / ((1.0 + s) * (1.0 + s))
            })
            .sum::<f64>()
            - 0.5 * x
    }

    fn log_rho(&self, u: f64) -> f64 {
        self.terms()
            .map(|(w, nc)| {
                let s = w * w * u * u;
                0.25 * s.ln_1p() + 0.5 * nc * s / (1.0 + s)
            })
            .sum()
    }

    fn integrand(&self, u: f64, x: f64) -> f64 {
        if u == 0.0 {
            return 0.5 * (1.0 - x);
        }
        self.phase(u, x).sin() / (u * self.log_rho(u).exp())
    }

    /// Upper bound of `|∫_U^∞ integrand|`.
    fn truncation_bound(&self, u: f64) -> f64 {
        let k = 0.5 * self.weights.len() as f64;
        let log_bound = -(k.ln() + k * u.ln() + self.log_rho_floor(u));
        log_bound.exp()
    }

    /// `log Π √(w_i u) + ½ Σ λ_i w_i² u² / (1 + w_i² u²)` divided out of `u^k`,
    /// i.e. the lower envelope of `log ρ(u)` minus `k log u`.
    fn log_rho_floor(&self, u: f64) -> f64 {
        self.terms()
            .map(|(w, nc)| {
                let s = w * w * u * u;
                0.5 * w.ln() + 0.5 * nc * s / (1.0 + s)
            })
            .sum()
    }

    /// Upper envelope of `|θ'|` on `[u, ∞)` as `½ (g(u) + x)`.
    fn phase_rate(&self, u: f64) -> f64 {
        self.terms()
            .map(|(w, nc)| w * (1.0 + nc) / (1.0 + w * w * u * u))
            .sum()
    }

    /// Panel boundaries on `[0, end]`, each panel spanning at most half an
    /// oscillation of `sin θ`.
    fn panels(&self, x: f64, end: f64) -> Vec<f64> {
        let mut breaks = vec![0.0];
        let mut u = 0.0;
        while u < end {
            let width = PI / (self.phase_rate(u) + x);
            u = (u + width).min(end);
            breaks.push(u);
        }
        breaks
    }

    fn imhof_integral(&self, x: f64) -> Estimate {
        let f = |u: f64| self.integrand(u, x);
        let head_tol = 0.1 * TARGET * PI;

        // Beyond `monotone_from` the phase falls at rate at least x/4.
        let mut monotone_from = 1.0;
        while self.phase_rate(monotone_from) > 0.5 * x {
            monotone_from *= 2.0;
        }

        // Point past which the integrand is negligible outright.
        let trunc_tol = 0.01 * TARGET * PI;
        let mut cutoff = 1.0;
        while cutoff < monotone_from && self.truncation_bound(cutoff) > trunc_tol {
            cutoff *= 2.0;
        }
        if self.truncation_bound(cutoff) <= trunc_tol {
            let est = integrate_panels(&f, &self.panels(x, cutoff), head_tol, 20_000);
            return Estimate {
                value: est.value,
                error: est.error + self.truncation_bound(cutoff),
            };
        }

        // Head up to the first zero of sin θ past `monotone_from`.
        let mut level = (self.phase(monotone_from, x) / PI).floor();
        let mut zero = self.solve_phase(level * PI, monotone_from, x);
        let head = integrate_panels(&f, &self.panels(x, zero), head_tol, 20_000);

        // Tail as an alternating series over half-oscillations.
        let mut table = EpsilonTable::new();
        let mut partial = head.value;
        let mut tail_error = f64::INFINITY;
        let mut value = partial;
        let mut quad_error = head.error;
        for n in 0..2000 {
            level -= 1.0;
            let next = self.solve_phase(level * PI, zero, x);
            let piece = integrate_panels(&f, &[zero, next], 1e-3 * head_tol, 200);
            quad_error += piece.error;
            partial += piece.value;
            zero = next;
            let extrapolated = table.push(partial);

            let bound = self.truncation_bound(zero);
            if bound <= trunc_tol {
                value = partial;
                tail_error = bound;
                break;
            }
            if n >= 6 {
                let spread = table.error();
                if spread <= 1e-3 * head_tol {
                    value = extrapolated;
                    tail_error = spread;
                    break;
                }
            }
            value = extrapolated;
            tail_error = table.error().min(bound);
        }
        Estimate {
            value,
            error: quad_error + tail_error,
        }
    }

    /// Root of `θ(u) = target` for `u ≥ start`, where θ is decreasing.
    fn solve_phase(&self, target: f64, start: f64, x: f64) -> f64 {
        let g = |u: f64| self.phase(u, x) - target;
        if g(start) <= 0.0 {
            return start;
        }
        // θ' ≤ −x/4 past `start`, so the root is within 4π/x.
        let mut lo = start;
        let mut hi = start + 4.0 * PI / x;
        while g(hi) > 0.0 {
            lo = hi;
            hi += 4.0 * PI / x;
        }
        let mut u = 0.5 * (lo + hi);
        for _ in 0..100 {
            let val = g(u);
            if val > 0.0 {
                lo = u;
            } else {
                hi = u;
            }
            if hi - lo <= 1e-14 * hi {
                break;
            }
            let newton = u - val / self.phase_derivative(u, x);
            u = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if (u - lo).min(hi - u) <= 0.0 {
                break;
            }
        }
        u
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_invalid_terms() {
        assert!(QuadFormDist::new(vec![]).is_err());
        assert!(QuadFormDist::from_parts(&[1.0, 0.0], &[0.0, 0.0]).is_err());
        assert!(QuadFormDist::from_parts(&[1.0], &[f64::NAN]).is_err());
        assert!(QuadFormDist::from_parts(&[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn moments() {
        let d = QuadFormDist::from_parts(&[1.0, 2.0], &[3.0, -1.0]).unwrap();
        assert_eq!(d.mean(), 1.0 + 9.0 + 4.0 + 1.0);
        assert_eq!(d.variance(), 2.0 + 4.0 * 9.0 + 2.0 * 16.0 + 4.0 * 4.0);
    }

    #[test]
    fn chi_square_reference_values() {
        // 2Φ(1) − 1 and 1 − e^{-1}.
        let chi1 = QuadFormDist::central(&[1.0]).unwrap();
        assert_abs_diff_eq!(chi1.cdf(1.0).unwrap(), 0.682_689_492_137_085_9, epsilon = 1e-7);
        let chi2 = QuadFormDist::central(&[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(chi2.cdf(2.0).unwrap(), 1.0 - (-1.0f64).exp(), epsilon = 1e-7);
    }

    #[test]
    fn support_limits() {
        let d = QuadFormDist::from_parts(&[0.3, 2.0, 1.0], &[1.0, 0.0, -4.0]).unwrap();
        assert_eq!(d.cdf(-1.0).unwrap(), 0.0);
        assert_eq!(d.cdf(0.0).unwrap(), 0.0);
        assert_eq!(d.cdf(f64::INFINITY).unwrap(), 1.0);
        assert!(d.cdf(1e6).unwrap() > 1.0 - 1e-9);
        assert!(d.cdf(f64::NAN).is_err());
    }

    #[test]
    fn quantile_reference_values() {
        let chi1 = QuadFormDist::central(&[1.0]).unwrap();
        assert_abs_diff_eq!(chi1.quantile(0.682_689_492_137_085_9).unwrap(), 1.0, epsilon = 1e-5);
        let chi2 = QuadFormDist::central(&[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(chi2.quantile(0.5).unwrap(), 2.0 * 2f64.ln(), epsilon = 1e-6);
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(chi2.quantile(p), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn quantile_round_trip() {
        let d = QuadFormDist::from_parts(&[1.0, 0.5, 2.5], &[0.5, -2.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..25 {
            let x = rng.random_range(0.5..40.0);
            let p = d.cdf(x).unwrap();
            if !(1e-6..=1.0 - 1e-6).contains(&p) {
                continue;
            }
            let back = d.quantile(p).unwrap();
            assert!((back - x).abs() <= 1e-5, "x = {x}, quantile(cdf(x)) = {back}");
        }
    }

    #[test]
    fn near_point_mass_sample() {
        let d = QuadFormDist::from_parts(&[1e-12], &[3.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_abs_diff_eq!(d.sample(&mut rng), 9.0, epsilon = 1e-9);
    }

    #[test]
    fn degenerate_terms_fold_into_shift() {
        let d = QuadFormDist::from_parts(&[1.0, 1e-14], &[0.0, 2.0]).unwrap();
        let chi1 = QuadFormDist::central(&[1.0]).unwrap();
        assert_eq!(d.cdf(3.9).unwrap(), 0.0);
        assert_abs_diff_eq!(d.cdf(5.0).unwrap(), chi1.cdf(1.0).unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let d = QuadFormDist::from_parts(&[1.0, 3.0], &[0.1, 0.2]).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5).map(|_| d.sample(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(4), run(4));
    }

    #[test]
    fn cdf_is_monotone() {
        let d = QuadFormDist::from_parts(&[1.0, 0.2, 3.0], &[2.0, 0.0, -1.0]).unwrap();
        let mut prev = 0.0;
        for k in 1..400 {
            let p = d.cdf(k as f64 * 0.2).unwrap();
            assert!(p >= prev - 1e-9, "cdf decreased at {}", k as f64 * 0.2);
            prev = p;
        }
    }

    #[test]
    fn scale_equivariance() {
        let d = QuadFormDist::from_parts(&[0.7, 1.3, 4.0], &[-2.0, 0.5, 3.0]).unwrap();
        for s in [1e-3, 0.5, 7.0, 2500.0] {
            let ds = d.scaled(s).unwrap();
            for x in [0.5, 3.0, 10.0, 30.0, 60.0] {
                let a = d.cdf(x).unwrap();
                let b = ds.cdf(s * s * x).unwrap();
                assert!((a - b).abs() <= 1e-9, "s = {s}, x = {x}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn large_noncentrality_is_resolved() {
        // Nearly Gaussian: mean 1e6 + 1, sd ≈ 2000.
        let d = QuadFormDist::from_parts(&[1.0], &[1000.0]).unwrap();
        let mean = d.mean();
        let sd = d.variance().sqrt();
        let p = d.cdf(mean).unwrap();
        assert!((p - 0.5).abs() < 0.01, "{p}");
        assert_eq!(d.cdf(mean - 20.0 * sd).unwrap(), 0.0);
        assert_eq!(d.cdf(mean + 20.0 * sd).unwrap(), 1.0);
    }
}
