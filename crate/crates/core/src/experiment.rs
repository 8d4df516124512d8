//! Power sweeps, threshold families and ROC curves over a scenario.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::authentication::{
    empirical_rates_multi, h0_distribution, h1_distribution, DecisionConfig, EveMode, MonteCarlo,
};
use crate::localization::{Region, Scenario};
use crate::quadform::QuadFormDist;
use crate::{Error, Point, Result};

/// Number of quasi-random Eve positions averaged for analytic missed
/// detection when Eve is uniformly distributed.
pub const EVE_AVERAGE_POINTS: usize = 1000;

/// How the decision thresholds of a sweep are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdSpec {
    Values(Vec<f64>),
    /// Quantiles of the no-impersonation statistic at a reference power.
    H0Quantiles { h0_quantiles: Vec<f64>, at_power_db: f64 },
}

impl Default for ThresholdSpec {
    fn default() -> Self {
        ThresholdSpec::H0Quantiles {
            h0_quantiles: vec![0.5, 0.1, 0.01],
            at_power_db: 50.0,
        }
    }
}

impl ThresholdSpec {
    pub fn resolve(&self, scenario: &Scenario) -> Result<Vec<f64>> {
        match self {
            ThresholdSpec::Values(values) => {
                for &v in values {
                    DecisionConfig::new(v)?;
                }
                Ok(values.clone())
            }
            ThresholdSpec::H0Quantiles { h0_quantiles, at_power_db } => {
                let h0 = h0_distribution(&scenario.with_power_db(*at_power_db))?;
                h0_quantiles.iter().map(|&p| h0.quantile(p)).collect()
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ThresholdSpec::Values(_) => "explicit values".to_string(),
            ThresholdSpec::H0Quantiles { h0_quantiles, at_power_db } => {
                format!("H0 statistic quantiles at levels {h0_quantiles:?}, P = {at_power_db} dB")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Geometry and channel; the transmit power is overridden per grid point.
    pub scenario: Scenario,
    pub power_grid_db: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// Monte Carlo trials per grid point; `0` for analytic values only.
    pub trials_per_point: u64,
    pub master_seed: u64,
    pub eve_mode: EveMode,
    /// Worker threads for Monte Carlo; `0` uses the global pool.
    pub workers: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.power_grid_db.is_empty() {
            return Err(Error::domain("power grid is empty"));
        }
        if self.power_grid_db.iter().any(|p| !p.is_finite()) {
            return Err(Error::domain("power grid must be finite"));
        }
        if self.power_grid_db.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("power grid must be strictly increasing"));
        }
        if self.thresholds.is_empty() {
            return Err(Error::domain("no thresholds given"));
        }
        for &t in &self.thresholds {
            DecisionConfig::new(t)?;
        }
        Ok(())
    }
}

/// `start, start + step, …` up to and including `stop` (within 1e-9 step).
pub fn power_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Err(Error::domain("power grid needs start <= stop and a positive step"));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub power_db: f64,
    pub threshold: f64,
    pub p_fa_analytic: Option<f64>,
    pub p_md_analytic: Option<f64>,
    pub p_fa_empirical: Option<f64>,
    pub p_md_empirical: Option<f64>,
    pub stderr_fa: Option<f64>,
    pub stderr_md: Option<f64>,
    /// Set when this row could not be computed.
    pub failure: Option<String>,
}

/// Low-discrepancy Eve positions over the region (Halton, bases 2 and 3).
pub fn quasi_random_points(region: &Region, count: usize) -> Vec<Point> {
    (1..=count)
        .map(|k| region.from_unit(radical_inverse(k as u64, 2), radical_inverse(k as u64, 3)))
        .collect()
}

fn radical_inverse(mut k: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while k > 0 {
        r += (k % base) as f64 * f;
        k /= base;
        f *= inv;
    }
    r
}

/// Seed of the Monte Carlo run at one grid power. Thresholds at the same
/// power share trials.
fn point_seed(master_seed: u64, power_index: usize) -> u64 {
    // SplitMix64 finalizer.
    let mut z = master_seed.wrapping_add((power_index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One row per (power, threshold), powers outermost, in grid order.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let eves = match spec.eve_mode {
        EveMode::Fixed => vec![spec.scenario.eve],
        EveMode::UniformRandom => quasi_random_points(&spec.scenario.region, EVE_AVERAGE_POINTS)
            .into_iter()
            .filter(|e| spec.scenario.with_eve(*e).is_ok())
            .collect(),
    };
    let rows: Vec<Vec<SweepRow>> = spec
        .power_grid_db
        .par_iter()
        .enumerate()
        .map(|(i, &power)| sweep_point(spec, &eves, i, power))
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

fn sweep_point(spec: &SweepSpec, eves: &[Point], index: usize, power: f64) -> Vec<SweepRow> {
    let scenario = spec.scenario.with_power_db(power);
    let mut rows: Vec<SweepRow> = spec
        .thresholds
        .iter()
        .map(|&threshold| SweepRow {
            power_db: power,
            threshold,
            p_fa_analytic: None,
            p_md_analytic: None,
            p_fa_empirical: None,
            p_md_empirical: None,
            stderr_fa: None,
            stderr_md: None,
            failure: None,
        })
        .collect();

    match analytic_point(&scenario, eves, &spec.thresholds) {
        Ok(values) => {
            for (row, (fa, md)) in rows.iter_mut().zip(values) {
                row.p_fa_analytic = Some(fa);
                row.p_md_analytic = Some(md);
            }
        }
        Err(e) => rows.iter_mut().for_each(|r| r.failure = Some(e.to_string())),
    }

    if spec.trials_per_point > 0 {
        let configs: Vec<DecisionConfig> = spec.thresholds.iter().map(|&t| DecisionConfig { threshold: t }).collect();
        let mc = MonteCarlo {
            workers: spec.workers,
            eve_mode: spec.eve_mode,
            ..MonteCarlo::new(spec.trials_per_point, point_seed(spec.master_seed, index))
        };
        match empirical_rates_multi(&scenario, &configs, &mc) {
            Ok(rates) => {
                for (row, r) in rows.iter_mut().zip(rates) {
                    row.p_fa_empirical = Some(r.p_fa);
                    row.p_md_empirical = Some(r.p_md);
                    row.stderr_fa = Some(r.stderr_fa);
                    row.stderr_md = Some(r.stderr_md);
                }
            }
            Err(e) => rows
                .iter_mut()
                .for_each(|r| r.failure = Some(r.failure.take().unwrap_or_else(|| e.to_string()))),
        }
    }
    rows
}

/// Analytic `(p_fa, p_md)` per threshold, `p_md` averaged over `eves`.
fn analytic_point(scenario: &Scenario, eves: &[Point], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    let h0 = h0_distribution(scenario)?;
    let h1s = eves
        .iter()
        .map(|e| h1_distribution(&scenario.with_eve(*e)?))
        .collect::<Result<Vec<_>>>()?;
    thresholds
        .iter()
        .map(|&t| {
            let p_fa = h0.sf(t)?;
            let p_md = mean_cdf(&h1s, t)?;
            Ok((p_fa, p_md))
        })
        .collect()
}

fn mean_cdf(dists: &[QuadFormDist], x: f64) -> Result<f64> {
    let values = dists.par_iter().map(|d| d.cdf(x)).collect::<Result<Vec<_>>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub p_fa: f64,
    /// Detection probability `1 − p_md`.
    pub p_d: f64,
}

/// ROC for a fixed Eve at `power_db`: thresholds are H0 quantiles at
/// `n_points` equally spaced false-alarm levels from 0 to 1.
pub fn roc_curve(scenario: &Scenario, power_db: f64, n_points: usize) -> Result<Vec<RocPoint>> {
    roc_curve_over(scenario, &[scenario.eve], power_db, n_points)
}

/// ROC with detection probability averaged over the given Eve positions.
pub fn roc_curve_over(scenario: &Scenario, eves: &[Point], power_db: f64, n_points: usize) -> Result<Vec<RocPoint>> {
    if n_points < 2 {
        return Err(Error::domain("an ROC curve needs at least 2 points"));
    }
    if eves.is_empty() {
        return Err(Error::domain("no Eve positions given"));
    }
    let scenario = scenario.with_power_db(power_db);
    let h0 = h0_distribution(&scenario)?;
    let h1s = eves
        .iter()
        .map(|e| h1_distribution(&scenario.with_eve(*e)?))
        .collect::<Result<Vec<_>>>()?;
    (0..n_points)
        .map(|j| {
            let level = j as f64 / (n_points - 1) as f64;
            let threshold = if j == 0 {
                f64::INFINITY
            } else if j == n_points - 1 {
                0.0
            } else {
                h0.quantile(1.0 - level)?
            };
            Ok(RocPoint {
                p_fa: h0.sf(threshold)?,
                p_d: 1.0 - mean_cdf(&h1s, threshold)?,
            })
        })
        .collect()
}
