//! ToA ranging noise and least-squares position extraction.
//!
//! Squared ranges to anchor `i` satisfy
//! `d_i² − x_i² − y_i² = −2 x_i x − 2 y_i y + (x² + y²)`, which is linear in
//! the lifted unknown `(x, y, x² + y²)`. Stacking one row per anchor gives the
//! `L × 3` system `A X = b` solved here.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelParams};
use crate::{Error, Point, Result};

/// Smallest-to-largest singular value ratio below which the anchor layout is
/// treated as collinear.
pub const RANK_TOLERANCE: f64 = 1e-9;

/// Fixed reference nodes, at least three and not collinear.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorArray {
    anchors: Vec<Point>,
}

impl AnchorArray {
    pub fn new(anchors: Vec<Point>) -> Result<Self> {
        if anchors.len() < 3 {
            return Err(Error::geometry(format!(
                "at least 3 anchors are required, got {}",
                anchors.len()
            )));
        }
        if anchors.iter().any(|a| !a.x.is_finite() || !a.y.is_finite()) {
            return Err(Error::geometry("anchor coordinates must be finite"));
        }
        let array = AnchorArray { anchors };
        check_full_rank(&array.design_matrix())?;
        Ok(array)
    }

    /// The three anchors of the reference deployment:
    /// `(0, 500)`, `(−500, −500)`, `(−500, 500)`.
    pub fn reference() -> Self {
        AnchorArray {
            anchors: vec![
                Point::new(0.0, 500.0),
                Point::new(-500.0, -500.0),
                Point::new(-500.0, 500.0),
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.anchors
    }

    pub fn iter(&self) -> impl Iterator<Item = &Point> {
        self.anchors.iter()
    }

    /// Rows `−2 [x_i, y_i, −0.5]`.
    pub fn design_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.anchors.len(), 3, |i, j| match j {
            0 => -2.0 * self.anchors[i].x,
            1 => -2.0 * self.anchors[i].y,
            _ => 1.0,
        })
    }
}

/// Rectangular deployment area centered on the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub width_m: f64,
    pub height_m: f64,
}

impl Default for Region {
    fn default() -> Self {
        Region {
            width_m: 1000.0,
            height_m: 1000.0,
        }
    }
}

impl Region {
    pub fn new(width_m: f64, height_m: f64) -> Result<Self> {
        if !(width_m > 0.0 && height_m > 0.0 && width_m.is_finite() && height_m.is_finite()) {
            return Err(Error::domain("region dimensions must be positive"));
        }
        Ok(Region { width_m, height_m })
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x.abs() <= self.width_m / 2.0 && p.y.abs() <= self.height_m / 2.0
    }

    /// Maps a point of the unit square onto the region.
    pub fn from_unit(&self, u: f64, v: f64) -> Point {
        Point::new((u - 0.5) * self.width_m, (v - 0.5) * self.height_m)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        self.from_unit(u, v)
    }
}

/// Anchors, the legitimate node (Alice), the impersonator (Eve) and the link.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub anchors: AnchorArray,
    pub region: Region,
    pub alice: Point,
    pub eve: Point,
    pub channel: ChannelParams,
}

impl Scenario {
    pub fn new(
        anchors: AnchorArray,
        region: Region,
        alice: Point,
        eve: Point,
        channel: ChannelParams,
    ) -> Result<Self> {
        channel.validate()?;
        for (name, node) in [("alice", &alice), ("eve", &eve)] {
            if !region.contains(node) {
                return Err(Error::domain(format!(
                    "{name} at ({}, {}) lies outside the deployment region",
                    node.x, node.y
                )));
            }
            for anchor in anchors.iter() {
                true_distance(node, anchor)?;
            }
        }
        Ok(Scenario {
            anchors,
            region,
            alice,
            eve,
            channel,
        })
    }

    /// Reference deployment: 1000 × 1000 m², three anchors, Alice at the
    /// origin, Eve at `eve`.
    pub fn reference(eve: Point, transmit_power_db: f64) -> Result<Self> {
        Scenario::new(
            AnchorArray::reference(),
            Region::default(),
            Point::origin(),
            eve,
            ChannelParams::default().with_power_db(transmit_power_db),
        )
    }

    pub fn with_power_db(&self, transmit_power_db: f64) -> Self {
        Scenario {
            channel: self.channel.with_power_db(transmit_power_db),
            ..self.clone()
        }
    }

    /// Moves Eve, re-checking the geometry.
    pub fn with_eve(&self, eve: Point) -> Result<Self> {
        Scenario::new(self.anchors.clone(), self.region, self.alice, eve, self.channel)
    }
}

/// Euclidean distance between a node and an anchor.
pub fn true_distance(point: &Point, anchor: &Point) -> Result<f64> {
    let d = (point - anchor).norm();
    if d > 0.0 {
        Ok(d)
    } else {
        Err(Error::geometry(format!(
            "node coincides with anchor at ({}, {})",
            anchor.x, anchor.y
        )))
    }
}

/// How range noise enters the squared distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// High-SNR linearization `d̂² = d² + 2 n d`.
    #[default]
    Linearized,
    /// `d̂ = d + n`, then squared.
    Exact,
}

/// Noise injection settings for range sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangingModel {
    pub mode: NoiseMode,
    /// Multiplier on every per-anchor noise standard deviation; `0` gives
    /// noiseless ranges.
    pub noise_scale: f64,
}

impl Default for RangingModel {
    fn default() -> Self {
        RangingModel {
            mode: NoiseMode::Linearized,
            noise_scale: 1.0,
        }
    }
}

impl RangingModel {
    pub fn noiseless() -> Self {
        RangingModel {
            noise_scale: 0.0,
            ..Default::default()
        }
    }
}

/// One anchor's view of a transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeSample {
    pub true_distance: f64,
    pub noise_std: f64,
    /// The drawn range error `n_i` in meters.
    pub noise: f64,
    pub observed_sq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisySquaredDistances {
    pub samples: Vec<RangeSample>,
}

impl NoisySquaredDistances {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn observed_sq(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.observed_sq).collect()
    }
}

/// Noise standard deviation of every anchor link from `point`.
pub fn noise_stds(point: &Point, anchors: &AnchorArray, channel: &ChannelParams) -> Result<Vec<f64>> {
    anchors
        .iter()
        .map(|a| channel::distance_noise_std(true_distance(point, a)?, channel))
        .collect()
}

/// Draws one ranging round from `point` under the default (linearized)
/// noise model.
pub fn sample_noisy_squared_distances<R: Rng + ?Sized>(
    point: &Point,
    anchors: &AnchorArray,
    channel: &ChannelParams,
    rng: &mut R,
) -> Result<NoisySquaredDistances> {
    sample_ranges(point, anchors, channel, &RangingModel::default(), rng)
}

/// Draws one ranging round. Exactly one standard normal is consumed per
/// anchor regardless of `model`, so runs with different noise scales share
/// the same underlying draws at a fixed seed.
pub fn sample_ranges<R: Rng + ?Sized>(
    point: &Point,
    anchors: &AnchorArray,
    channel: &ChannelParams,
    model: &RangingModel,
    rng: &mut R,
) -> Result<NoisySquaredDistances> {
    let samples = anchors
        .iter()
        .map(|anchor| {
            let d = true_distance(point, anchor)?;
            let sigma = model.noise_scale * channel::distance_noise_std(d, channel)?;
            let z: f64 = rng.sample(StandardNormal);
            let n = sigma * z;
            let observed_sq = match model.mode {
                NoiseMode::Linearized => d * d + 2.0 * n * d,
                NoiseMode::Exact => (d + n) * (d + n),
            };
            Ok(RangeSample {
                true_distance: d,
                noise_std: sigma,
                noise: n,
                observed_sq,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NoisySquaredDistances { samples })
}

/// Design matrix and right-hand side `b_i = d̂_i² − x_i² − y_i²`.
pub fn build_system(anchors: &AnchorArray, observed_sq: &[f64]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if observed_sq.len() != anchors.len() {
        return Err(Error::domain(format!(
            "{} squared distances for {} anchors",
            observed_sq.len(),
            anchors.len()
        )));
    }
    let a = anchors.design_matrix();
    check_full_rank(&a)?;
    let b = DVector::from_iterator(
        anchors.len(),
        anchors
            .iter()
            .zip(observed_sq)
            .map(|(p, &dsq)| dsq - p.x * p.x - p.y * p.y),
    );
    Ok((a, b))
}

fn check_full_rank(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() < a.ncols() {
        return Err(Error::geometry("fewer equations than unknowns"));
    }
    let sv = a.singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || min <= RANK_TOLERANCE * max {
        return Err(Error::geometry(format!(
            "design matrix is rank deficient (singular values {min:.3e} / {max:.3e}); anchors are collinear"
        )));
    }
    Ok(())
}

/// Least-squares solution `(x, y, s)` of `A X ≈ b` via Householder QR.
pub fn solve_position(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Vector3<f64>> {
    if a.ncols() != 3 || a.nrows() != b.len() {
        return Err(Error::domain("system dimensions do not match"));
    }
    check_full_rank(a)?;
    let qr = a.clone().qr();
    let qtb = qr.q().transpose() * b;
    let x = qr
        .r()
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::geometry("triangular factor is singular"))?;
    Ok(Vector3::new(x[0], x[1], x[2]))
}

/// `|s − (x² + y²)|` for a lifted solution `(x, y, s)`.
pub fn consistency_gap(x: &Vector3<f64>) -> f64 {
    (x[2] - (x[0] * x[0] + x[1] * x[1])).abs()
}

/// Full fit: returns the planar estimate and the lifted solution.
pub fn estimate_position(anchors: &AnchorArray, observed: &NoisySquaredDistances) -> Result<(Point, Vector3<f64>)> {
    let (a, b) = build_system(anchors, &observed.observed_sq())?;
    let x = solve_position(&a, &b)?;
    Ok((Point::new(x[0], x[1]), x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{prop_assert, prop_assume, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exact_sq(point: &Point, anchors: &AnchorArray) -> Vec<f64> {
        anchors.iter().map(|a| (point - a).norm_squared()).collect()
    }

    #[test]
    fn distances() {
        assert_eq!(true_distance(&Point::origin(), &Point::new(0.0, 500.0)).unwrap(), 500.0);
        assert_abs_diff_eq!(
            true_distance(&Point::origin(), &Point::new(-500.0, -500.0)).unwrap(),
            707.106_781_186_547_5,
            epsilon = 1e-9
        );
        assert_eq!(true_distance(&Point::new(3.0, 4.0), &Point::new(3.0, 11.5)).unwrap(), 7.5);
        assert!(matches!(
            true_distance(&Point::new(1.0, 1.0), &Point::new(1.0, 1.0)),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn reference_design_matrix() {
        let a = AnchorArray::reference().design_matrix();
        let expected = DMatrix::from_row_slice(3, 3, &[0.0, -1000.0, 1.0, 1000.0, 1000.0, 1.0, 1000.0, -1000.0, 1.0]);
        assert_eq!(a, expected);
    }

    #[test]
    fn reference_rhs_vanishes_at_origin() {
        let anchors = AnchorArray::reference();
        let (_, b) = build_system(&anchors, &exact_sq(&Point::origin(), &anchors)).unwrap();
        assert_eq!(b.as_slice(), &[0.0, 0.0, 0.0]);
        let x = solve_position(&anchors.design_matrix(), &b).unwrap();
        assert_abs_diff_eq!(x.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn collinear_anchors_rejected() {
        let err = AnchorArray::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0), Point::new(2.0, 2.0)]).unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry(_)));
        assert!(AnchorArray::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0)]).is_err());
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(build_system(&AnchorArray::reference(), &[1.0, 2.0]).is_err());
    }

    #[test]
    fn recovers_offset_node() {
        let anchors = AnchorArray::new(vec![
            Point::new(-300.0, 120.0),
            Point::new(450.0, 400.0),
            Point::new(60.0, -480.0),
            Point::new(250.0, -90.0),
        ])
        .unwrap();
        let node = Point::new(100.0, -200.0);
        let (a, b) = build_system(&anchors, &exact_sq(&node, &anchors)).unwrap();
        let x = solve_position(&a, &b).unwrap();
        assert_abs_diff_eq!(x[0], 100.0, epsilon = 1e-9);
        assert_abs_diff_eq!(x[1], -200.0, epsilon = 1e-9);
        assert_abs_diff_eq!(x[2], 50_000.0, epsilon = 1e-6);
    }

    #[test]
    fn square_system_has_zero_residual() {
        let anchors = AnchorArray::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ranges = sample_noisy_squared_distances(&Point::new(40.0, 10.0), &anchors, &ChannelParams::default(), &mut rng).unwrap();
        let (a, b) = build_system(&anchors, &ranges.observed_sq()).unwrap();
        let x = solve_position(&a, &b).unwrap();
        let resid = (&b - &a * DVector::from_column_slice(x.as_slice())).norm();
        assert!(resid <= 1e-9 * b.norm().max(1.0), "residual {resid}");
    }

    #[test]
    fn consistency_gap_values() {
        assert_eq!(consistency_gap(&Vector3::new(0.0, 0.0, 0.0)), 0.0);
        assert_eq!(consistency_gap(&Vector3::new(3.0, 4.0, 25.0)), 0.0);
        assert_eq!(consistency_gap(&Vector3::new(3.0, 4.0, 30.0)), 5.0);
    }

    #[test]
    fn noiseless_model_returns_exact_squares() {
        let anchors = AnchorArray::reference();
        let node = Point::new(123.0, -45.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for mode in [NoiseMode::Linearized, NoiseMode::Exact] {
            let model = RangingModel { mode, noise_scale: 0.0 };
            let r = sample_ranges(&node, &anchors, &ChannelParams::default(), &model, &mut rng).unwrap();
            for (s, e) in r.samples.iter().zip(exact_sq(&node, &anchors)) {
                assert_eq!(s.noise, 0.0);
                assert_eq!(s.observed_sq, s.true_distance * s.true_distance);
                assert!((s.observed_sq - e).abs() <= 1e-12 * e);
            }
        }
    }

    #[test]
    fn exact_mode_squares_the_range() {
        let anchors = AnchorArray::reference();
        let node = Point::new(10.0, 20.0);
        let p = ChannelParams::default();
        let lin = sample_ranges(&node, &anchors, &p, &RangingModel::default(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let model = RangingModel { mode: NoiseMode::Exact, noise_scale: 1.0 };
        let exact = sample_ranges(&node, &anchors, &p, &model, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for (l, e) in lin.samples.iter().zip(&exact.samples) {
            assert_eq!(l.noise, e.noise);
            assert_abs_diff_eq!(e.observed_sq - l.observed_sq, e.noise * e.noise, epsilon = 1e-6);
        }
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let anchors = AnchorArray::reference();
        let p = ChannelParams::default();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_noisy_squared_distances(&Point::new(-20.0, 70.0), &anchors, &p, &mut rng).unwrap()
        };
        assert_eq!(draw(17), draw(17));
        assert_ne!(draw(17), draw(18));
    }

    #[test]
    fn linearized_squares_are_unbiased() {
        let anchors = AnchorArray::reference();
        let p = ChannelParams::default();
        let node = Point::new(0.0, 0.0);
        let n = 1_000_000;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut sums = [0.0; 3];
        let mut stds = [0.0; 3];
        for _ in 0..n {
            let r = sample_noisy_squared_distances(&node, &anchors, &p, &mut rng).unwrap();
            for (i, s) in r.samples.iter().enumerate() {
                sums[i] += s.observed_sq;
                stds[i] = 2.0 * s.noise_std * s.true_distance;
            }
        }
        for (i, a) in anchors.iter().enumerate() {
            let mean = sums[i] / n as f64;
            let se = stds[i] / (n as f64).sqrt();
            let truth = a.coords.norm_squared();
            assert!((mean - truth).abs() <= 4.0 * se, "anchor {i}: {mean} vs {truth} (se {se})");
        }
    }

    #[test]
    fn halving_noise_halves_position_error() {
        let anchors = AnchorArray::new(vec![
            Point::new(0.0, 500.0),
            Point::new(-500.0, -500.0),
            Point::new(-500.0, 500.0),
            Point::new(450.0, -300.0),
        ])
        .unwrap();
        let node = Point::new(75.0, -20.0);
        let p = ChannelParams::default();
        for seed in 0..50 {
            let fit = |scale: f64| {
                let model = RangingModel { mode: NoiseMode::Linearized, noise_scale: scale };
                let r = sample_ranges(&node, &anchors, &p, &model, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                estimate_position(&anchors, &r).unwrap().0 - node
            };
            let full = fit(1.0);
            let half = fit(0.5);
            assert_abs_diff_eq!(half.x, 0.5 * full.x, epsilon = 1e-9 * full.norm().max(1.0));
            assert_abs_diff_eq!(half.y, 0.5 * full.y, epsilon = 1e-9 * full.norm().max(1.0));
        }
    }

    /// Nelder-Mead on ‖b − AX‖², independent of the QR path.
    fn nelder_mead(a: &DMatrix<f64>, b: &DVector<f64>, start: Vector3<f64>, step: f64) -> Vector3<f64> {
        let f = |x: &Vector3<f64>| (b - a * DVector::from_column_slice(x.as_slice())).norm_squared();
        let mut simplex: Vec<Vector3<f64>> = (0..4)
            .map(|k| {
                let mut v = start;
                if k > 0 {
                    v[k - 1] += step;
                }
                v
            })
            .collect();
        for _ in 0..20_000 {
            simplex.sort_by(|p, q| f(p).partial_cmp(&f(q)).unwrap());
            let centroid = (simplex[0] + simplex[1] + simplex[2]) / 3.0;
            let worst = simplex[3];
            let reflected = centroid + (centroid - worst);
            if f(&reflected) < f(&simplex[0]) {
                let expanded = centroid + 2.0 * (centroid - worst);
                simplex[3] = if f(&expanded) < f(&reflected) { expanded } else { reflected };
            } else if f(&reflected) < f(&simplex[2]) {
                simplex[3] = reflected;
            } else {
                let contracted = centroid + 0.5 * (worst - centroid);
                if f(&contracted) < f(&worst) {
                    simplex[3] = contracted;
                } else {
                    let best = simplex[0];
                    for v in simplex.iter_mut().skip(1) {
                        *v = best + 0.5 * (*v - best);
                    }
                }
            }
        }
        simplex.sort_by(|p, q| f(p).partial_cmp(&f(q)).unwrap());
        simplex[0]
    }

    #[test]
    fn qr_matches_normal_equations_and_direct_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let pts: Vec<Point> = (0..5)
                .map(|_| Point::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
                .collect();
            let Ok(anchors) = AnchorArray::new(pts) else { continue };
            let obs: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..40.0)).collect();
            let (a, b) = build_system(&anchors, &obs).unwrap();
            let x = solve_position(&a, &b).unwrap();

            let ata = a.transpose() * &a;
            let normal = ata.try_inverse().unwrap() * a.transpose() * &b;
            for k in 0..3 {
                assert!((x[k] - normal[k]).abs() <= 1e-8 * x.norm().max(1.0));
            }

            let nm = nelder_mead(&a, &b, Vector3::zeros(), 1.0);
            for k in 0..3 {
                assert!((x[k] - nm[k]).abs() <= 1e-4, "component {k}: {} vs {}", x[k], nm[k]);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn exact_recovery(
            ax in -1000.0f64..1000.0, ay in -1000.0f64..1000.0,
            bx in -1000.0f64..1000.0, by in -1000.0f64..1000.0,
            cx in -1000.0f64..1000.0, cy in -1000.0f64..1000.0,
            x in -500.0f64..500.0, y in -500.0f64..500.0,
        ) {
            let pts = vec![Point::new(ax, ay), Point::new(bx, by), Point::new(cx, cy)];
            // Keep to reasonably conditioned triangles so 1e-9 m is attainable.
            let area = ((bx - ax) * (cy - ay) - (cx - ax) * (by - ay)).abs() / 2.0;
            prop_assume!(area > 1e4);
            let anchors = AnchorArray::new(pts).unwrap();
            let node = Point::new(x, y);
            let (a, b) = build_system(&anchors, &exact_sq(&node, &anchors)).unwrap();
            let sol = solve_position(&a, &b).unwrap();
            prop_assert!((sol[0] - x).abs() <= 1e-9 && (sol[1] - y).abs() <= 1e-9,
                "({}, {}) vs ({x}, {y})", sol[0], sol[1]);
        }

        #[test]
        fn translation_invariance(dx in -300.0f64..300.0, dy in -300.0f64..300.0, x in -400.0f64..400.0, y in -400.0f64..400.0) {
            let shift = nalgebra::Vector2::new(dx, dy);
            let base = AnchorArray::reference();
            let moved = AnchorArray::new(base.iter().map(|p| p + shift).collect()).unwrap();
            let node = Point::new(x, y);
            let (a, b) = build_system(&moved, &exact_sq(&(node + shift), &moved)).unwrap();
            let sol = solve_position(&a, &b).unwrap();
            prop_assert!((sol[0] - (x + dx)).abs() <= 1e-8 && (sol[1] - (y + dy)).abs() <= 1e-8);
        }
    }
}
