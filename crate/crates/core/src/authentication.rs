//! Residual-energy test statistic, threshold decision and error rates.
//!
//! The statistic is the squared norm of `b − A χ(X_claimed)` where
//! `χ(x, y) = (x, y, x² + y²)`. Under the linearized ranging model its
//! entries are `2 d_i n_i + d_i² − (d_i^claimed)²`, so the statistic is
//! exactly a [`QuadFormDist`] under either hypothesis.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel;
use crate::localization::{
    build_system, sample_ranges, solve_position, true_distance, AnchorArray, NoisySquaredDistances, RangingModel,
    Scenario,
};
use crate::quadform::{QuadFormDist, QuadTerm};
use crate::{Error, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    /// The packet came from the claimed (legitimate) node.
    H0NoImpersonation,
    H1Impersonation,
}

/// Decision threshold `ε_th` on the statistic, in m⁴.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionConfig {
    pub threshold: f64,
}

impl DecisionConfig {
    pub fn new(threshold: f64) -> Result<Self> {
        if threshold >= 0.0 {
            Ok(DecisionConfig { threshold })
        } else {
            Err(Error::domain(format!("threshold must be non-negative, got {threshold}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Analytic,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    pub p_fa: f64,
    pub p_md: f64,
    pub method: Method,
    /// Binomial standard error of `p_fa`; zero for analytic results.
    pub stderr_fa: f64,
    pub stderr_md: f64,
    /// Monte Carlo trials per hypothesis; zero for analytic results.
    pub trials: u64,
}

/// Where the impersonator transmits from in a Monte Carlo trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EveMode {
    /// Always the scenario's `eve`.
    #[default]
    Fixed,
    /// Redrawn uniformly over the deployment region in every trial.
    UniformRandom,
}

/// Residual `b − A χ(claimed)` for one ranging round.
pub fn residual_vector(observed: &NoisySquaredDistances, anchors: &AnchorArray, claimed: &Point) -> Result<DVector<f64>> {
    let (a, b) = build_system(anchors, &observed.observed_sq())?;
    Ok(b - a * lifted(claimed))
}

fn lifted(p: &Point) -> DVector<f64> {
    DVector::from_column_slice(&[p.x, p.y, p.x * p.x + p.y * p.y])
}

/// Squared Euclidean norm of the residual.
pub fn test_statistic(residual: &[f64]) -> f64 {
    residual.iter().map(|r| r * r).sum()
}

/// The statistic built from the estimated position instead of the residual:
/// `‖M (X̂ − X_claimed)‖²` where `X̂` is the planar part of the least-squares
/// fit, `Â†` the first two rows of `A⁺` and `M` the Moore–Penrose inverse of
/// `Â†`. `M Â†` projects onto the row space of `Â†`, so this never exceeds
/// [`test_statistic`] and matches it when the residual lies in that space.
pub fn test_statistic_pinv(observed: &NoisySquaredDistances, anchors: &AnchorArray, claimed: &Point) -> Result<f64> {
    let (a, b) = build_system(anchors, &observed.observed_sq())?;
    let fit = solve_position(&a, &b)?;
    let a_pinv = a
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::geometry(e.to_string()))?;
    let truncated: DMatrix<f64> = a_pinv.rows(0, 2).into_owned();
    let m = truncated
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::geometry(e.to_string()))?;
    let offset = DVector::from_column_slice(&[fit[0] - claimed.x, fit[1] - claimed.y]);
    Ok((m * offset).norm_squared())
}

/// `H1` iff `ts > ε_th`; a tie accepts the packet.
pub fn decide(ts: f64, config: &DecisionConfig) -> Hypothesis {
    if ts > config.threshold {
        Hypothesis::H1Impersonation
    } else {
        Hypothesis::H0NoImpersonation
    }
}

fn statistic_law(scenario: &Scenario, transmitter: &Point) -> Result<QuadFormDist> {
    let terms = scenario
        .anchors
        .iter()
        .map(|anchor| {
            let d_tx = true_distance(transmitter, anchor)?;
            let d_claimed = true_distance(&scenario.alice, anchor)?;
            let sigma = channel::distance_noise_std(d_tx, &scenario.channel)?;
            Ok(QuadTerm {
                scale: 2.0 * d_tx * sigma,
                offset: d_tx * d_tx - d_claimed * d_claimed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    QuadFormDist::new(terms)
}

/// Law of the statistic when Alice transmits: `Σ (2 d_iᴬ σ_i Z_i)²`.
pub fn h0_distribution(scenario: &Scenario) -> Result<QuadFormDist> {
    statistic_law(scenario, &scenario.alice)
}

/// Law of the statistic when Eve transmits claiming to be Alice:
/// `Σ (2 d_iᴱ σ_i Z_i + (d_iᴱ)² − (d_iᴬ)²)²`.
pub fn h1_distribution(scenario: &Scenario) -> Result<QuadFormDist> {
    statistic_law(scenario, &scenario.eve)
}

pub fn p_fa_analytic(scenario: &Scenario, config: &DecisionConfig) -> Result<f64> {
    h0_distribution(scenario)?.sf(config.threshold)
}

pub fn p_md_analytic(scenario: &Scenario, config: &DecisionConfig) -> Result<f64> {
    h1_distribution(scenario)?.cdf(config.threshold)
}

pub fn analytic_rates(scenario: &Scenario, config: &DecisionConfig) -> Result<ErrorRates> {
    Ok(ErrorRates {
        p_fa: p_fa_analytic(scenario, config)?,
        p_md: p_md_analytic(scenario, config)?,
        method: Method::Analytic,
        stderr_fa: 0.0,
        stderr_md: 0.0,
        trials: 0,
    })
}

/// Threshold whose analytic false-alarm probability equals `target_pfa`.
pub fn calibrate_threshold(scenario: &Scenario, target_pfa: f64) -> Result<DecisionConfig> {
    if !(target_pfa > 0.0 && target_pfa < 1.0) {
        return Err(Error::domain(format!("target false-alarm probability must lie in (0, 1), got {target_pfa}")));
    }
    let threshold = h0_distribution(scenario)?.quantile(1.0 - target_pfa)?;
    DecisionConfig::new(threshold)
}

/// Monte Carlo settings for [`empirical_rates_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarlo {
    pub trials: u64,
    pub master_seed: u64,
    /// Worker threads; `0` uses the global pool.
    pub workers: usize,
    pub ranging: RangingModel,
    pub eve_mode: EveMode,
}

impl MonteCarlo {
    pub fn new(trials: u64, master_seed: u64) -> Self {
        MonteCarlo {
            trials,
            master_seed,
            workers: 0,
            ranging: RangingModel::default(),
            eve_mode: EveMode::Fixed,
        }
    }
}

/// Generator for one trial. ChaCha streams keep trials independent and make
/// every trial reproducible on its own.
pub fn trial_rng(master_seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial);
    rng
}

/// Simulated rates over `trials` packets from each of Alice and Eve.
pub fn empirical_rates(scenario: &Scenario, config: &DecisionConfig, trials: u64, master_seed: u64) -> Result<ErrorRates> {
    empirical_rates_with(scenario, config, &MonteCarlo::new(trials, master_seed))
}

pub fn empirical_rates_with(scenario: &Scenario, config: &DecisionConfig, mc: &MonteCarlo) -> Result<ErrorRates> {
    let mut rates = empirical_rates_multi(scenario, std::slice::from_ref(config), mc)?;
    Ok(rates.remove(0))
}

/// Rates for several thresholds from one shared set of simulated packets.
pub fn empirical_rates_multi(scenario: &Scenario, configs: &[DecisionConfig], mc: &MonteCarlo) -> Result<Vec<ErrorRates>> {
    if mc.trials == 0 {
        return Err(Error::domain("at least one trial is required"));
    }
    let check = ClaimCheck::new(scenario);
    let zero = || vec![(0u64, 0u64); configs.len()];
    let run = || -> Result<Vec<(u64, u64)>> {
        (0..mc.trials)
            .into_par_iter()
            .map(|t| {
                let (ts_alice, ts_eve) = check.trial(scenario, mc, t)?;
                Ok(configs
                    .iter()
                    .map(|c| {
                        let false_alarm = decide(ts_alice, c) == Hypothesis::H1Impersonation;
                        let missed = decide(ts_eve, c) == Hypothesis::H0NoImpersonation;
                        (false_alarm as u64, missed as u64)
                    })
                    .collect())
            })
            .try_reduce(zero, |a, b| Ok(a.iter().zip(&b).map(|(x, y)| (x.0 + y.0, x.1 + y.1)).collect()))
    };
    let counts = if mc.workers == 0 {
        run()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(mc.workers)
            .build()
            .map_err(|e| Error::domain(e.to_string()))?
            .install(run)?
    };
    let n = mc.trials as f64;
    Ok(counts
        .into_iter()
        .map(|(false_alarms, misses)| {
            let p_fa = false_alarms as f64 / n;
            let p_md = misses as f64 / n;
            ErrorRates {
                p_fa,
                p_md,
                method: Method::Empirical,
                stderr_fa: binomial_stderr(p_fa, mc.trials),
                stderr_md: binomial_stderr(p_md, mc.trials),
                trials: mc.trials,
            }
        })
        .collect())
}

pub fn binomial_stderr(p: f64, trials: u64) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Precomputed `|anchor|²` and `A χ(claimed)` for fast residuals.
struct ClaimCheck {
    offset: Vec<f64>,
}

impl ClaimCheck {
    fn new(scenario: &Scenario) -> Self {
        let a = scenario.anchors.design_matrix();
        let fitted = a * lifted(&scenario.alice);
        let offset = scenario
            .anchors
            .iter()
            .zip(fitted.iter())
            .map(|(p, f)| p.coords.norm_squared() + f)
            .collect();
        ClaimCheck { offset }
    }

    fn statistic(&self, observed: &NoisySquaredDistances) -> f64 {
        observed
            .samples
            .iter()
            .zip(&self.offset)
            .map(|(s, o)| {
                let r = s.observed_sq - o;
                r * r
            })
            .sum()
    }

    /// Statistics of one packet from Alice and one from Eve.
    fn trial(&self, scenario: &Scenario, mc: &MonteCarlo, t: u64) -> Result<(f64, f64)> {
        let mut rng = trial_rng(mc.master_seed, t);
        let alice = sample_ranges(&scenario.alice, &scenario.anchors, &scenario.channel, &mc.ranging, &mut rng)?;
        let eve = match mc.eve_mode {
            EveMode::Fixed => scenario.eve,
            EveMode::UniformRandom => scenario.region.sample(&mut rng),
        };
        let spoofed = sample_ranges(&eve, &scenario.anchors, &scenario.channel, &mc.ranging, &mut rng)?;
        Ok((self.statistic(&alice), self.statistic(&spoofed)))
    }
}
