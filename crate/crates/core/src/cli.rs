//! Command-line front end: scenario configs in, CSV and JSON results out.
//!
//! Exit codes are `0` on success, `2` for usage and configuration errors and
//! `3` when a numerical accuracy target could not be met.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::authentication::EveMode;
use crate::channel::{absorption_db_per_km, pathloss_db, ChannelParams};
use crate::experiment::{
    power_grid, quasi_random_points, roc_curve_over, run_sweep, RocPoint, SweepRow, SweepSpec, ThresholdSpec,
    EVE_AVERAGE_POINTS,
};
use crate::localization::{
    consistency_gap, estimate_position, noise_stds, sample_ranges, AnchorArray, RangingModel, Region, Scenario,
};
use crate::{Error, Point, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Transmit power used by `localize` and `roc` when none is given.
pub const DEFAULT_POWER_DB: f64 = 60.0;

pub const CSV_HEADER: [&str; 8] = [
    "power_db",
    "threshold",
    "p_fa_analytic",
    "p_md_analytic",
    "p_fa_emp",
    "p_md_emp",
    "stderr_fa",
    "stderr_md",
];

#[derive(Debug, Parser)]
#[command(name = "uwauth", version, about = "Position-based authentication for underwater acoustic networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Thorp absorption and total pathloss of one link.
    Pathloss {
        /// Carrier frequency in kHz.
        #[arg(short = 'f', long, default_value_t = 10.0, allow_negative_numbers = true)]
        frequency: f64,
        /// Link distance in meters.
        #[arg(short = 'd', long, default_value_t = 1.0, allow_negative_numbers = true)]
        distance: f64,
        /// Spreading factor.
        #[arg(short = 'v', long, default_value_t = 1.5, allow_negative_numbers = true)]
        spreading: f64,
    },
    /// Localize Alice from one ranging round; prints JSON.
    Localize {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = NoiseSwitch::On)]
        noise: NoiseSwitch,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Transmit power in dB.
        #[arg(long, default_value_t = DEFAULT_POWER_DB, allow_negative_numbers = true)]
        power: f64,
    },
    /// Power sweep of false-alarm and missed-detection rates; writes CSV.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Monte Carlo worker threads (0 = one per core).
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// ROC curve at one transmit power; CSV on stdout.
    Roc {
        config: PathBuf,
        #[arg(long, default_value_t = DEFAULT_POWER_DB, allow_negative_numbers = true)]
        power: f64,
        #[arg(long, default_value_t = 101)]
        points: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseSwitch {
    On,
    Off,
}

// ---------------------------------------------------------------------------
// Config file

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub region: RegionConfig,
    pub anchors: Vec<[f64; 2]>,
    pub alice: [f64; 2],
    pub eve: EveConfig,
    pub channel: ChannelConfig,
    pub sweep: SweepConfig,
    pub trials: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub width_m: f64,
    pub height_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EveConfig {
    At([f64; 2]),
    Mode(EveKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EveKeyword {
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub frequency_khz: f64,
    pub sound_speed_mps: f64,
    pub spreading_factor: f64,
    pub signal_design_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// `[start, stop, step]` in dB.
    pub power_db: [f64; 3],
    pub thresholds: ThresholdConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdConfig {
    Values(Vec<f64>),
    Quantiles(QuantileThresholds),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantileThresholds {
    pub h0_quantiles: Vec<f64>,
    pub at_power_db: f64,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ScenarioConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.scenario()?;
        config.threshold_spec()?;
        config.power_grid()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => Error::Config(format!("{}: {other}", path.display())),
        })
    }

    pub fn eve_mode(&self) -> EveMode {
        match self.eve {
            EveConfig::At(_) => EveMode::Fixed,
            EveConfig::Mode(EveKeyword::Uniform) => EveMode::UniformRandom,
        }
    }

    /// The configured geometry at [`DEFAULT_POWER_DB`]. A uniform Eve is
    /// placed on Alice; callers that need Eve positions draw them separately.
    pub fn scenario(&self) -> Result<Scenario> {
        let anchors = AnchorArray::new(self.anchors.iter().map(|&[x, y]| Point::new(x, y)).collect())?;
        let region = Region::new(self.region.width_m, self.region.height_m)?;
        let alice = Point::new(self.alice[0], self.alice[1]);
        let eve = match self.eve {
            EveConfig::At([x, y]) => Point::new(x, y),
            EveConfig::Mode(EveKeyword::Uniform) => alice,
        };
        let c = &self.channel;
        let channel = ChannelParams::new(
            c.frequency_khz,
            c.sound_speed_mps,
            c.spreading_factor,
            DEFAULT_POWER_DB,
            c.signal_design_gain,
        )?;
        Scenario::new(anchors, region, alice, eve, channel)
    }

    pub fn threshold_spec(&self) -> Result<ThresholdSpec> {
        match &self.sweep.thresholds {
            ThresholdConfig::Values(values) => {
                if values.is_empty() {
                    return Err(Error::Config("sweep.thresholds is empty".into()));
                }
                if let Some(bad) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                    return Err(Error::Config(format!("sweep.thresholds: {bad} is not a non-negative number")));
                }
                Ok(ThresholdSpec::Values(values.clone()))
            }
            ThresholdConfig::Quantiles(q) => {
                if q.h0_quantiles.is_empty() {
                    return Err(Error::Config("sweep.thresholds.h0_quantiles is empty".into()));
                }
                if let Some(bad) = q.h0_quantiles.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
                    return Err(Error::Config(format!("sweep.thresholds.h0_quantiles: {bad} is not in (0, 1)")));
                }
                if !q.at_power_db.is_finite() {
                    return Err(Error::Config("sweep.thresholds.at_power_db must be finite".into()));
                }
                Ok(ThresholdSpec::H0Quantiles {
                    h0_quantiles: q.h0_quantiles.clone(),
                    at_power_db: q.at_power_db,
                })
            }
        }
    }

    pub fn power_grid(&self) -> Result<Vec<f64>> {
        let [start, stop, step] = self.sweep.power_db;
        power_grid(start, stop, step).map_err(|e| Error::Config(format!("sweep.power_db: {e}")))
    }

    pub fn sweep_spec(&self, workers: usize) -> Result<SweepSpec> {
        let scenario = self.scenario()?;
        Ok(SweepSpec {
            thresholds: self.threshold_spec()?.resolve(&scenario)?,
            scenario,
            power_grid_db: self.power_grid()?,
            trials_per_point: self.trials,
            master_seed: self.seed,
            eve_mode: self.eve_mode(),
            workers,
        })
    }
}

// ---------------------------------------------------------------------------
// Commands

/// `%g`-style formatting with `digits` significant digits.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn cmd_pathloss(frequency_khz: f64, distance_m: f64, spreading: f64) -> Result<String> {
    let alpha = absorption_db_per_km(frequency_khz)?;
    let params = ChannelParams {
        frequency_khz,
        spreading_factor: spreading,
        ..ChannelParams::default()
    };
    params.validate()?;
    let pl = pathloss_db(distance_m, &params)?;
    Ok(format!(
        "alpha={} dB/km, PL={} dB",
        format_significant(alpha, 6),
        format_significant(pl, 6)
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizeReport {
    pub x: f64,
    pub y: f64,
    pub consistency_gap: f64,
    /// Range noise standard deviation per anchor, meters.
    pub sigma_m: Vec<f64>,
    pub power_db: f64,
    pub seed: u64,
    pub noise: bool,
}

pub fn cmd_localize(config: &ScenarioConfig, noise: NoiseSwitch, seed: Option<u64>, power_db: f64) -> Result<LocalizeReport> {
    let scenario = config.scenario()?.with_power_db(power_db);
    scenario.channel.validate()?;
    let seed = seed.unwrap_or(config.seed);
    let model = match noise {
        NoiseSwitch::On => RangingModel::default(),
        NoiseSwitch::Off => RangingModel::noiseless(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranges = sample_ranges(&scenario.alice, &scenario.anchors, &scenario.channel, &model, &mut rng)?;
    let (p, lifted) = estimate_position(&scenario.anchors, &ranges)?;
    Ok(LocalizeReport {
        x: p.x,
        y: p.y,
        consistency_gap: consistency_gap(&lifted),
        sigma_m: noise_stds(&scenario.alice, &scenario.anchors, &scenario.channel)?,
        power_db,
        seed,
        noise: noise == NoiseSwitch::On,
    })
}

/// Metadata written next to a sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMetadata {
    pub seed: u64,
    pub eve_mode: EveMode,
    pub trials_per_point: u64,
    pub thresholds: Vec<f64>,
    pub threshold_provenance: String,
    /// Eve positions averaged for analytic missed detection.
    pub analytic_eve_points: usize,
    pub failed_rows: usize,
}

pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub metadata: SweepMetadata,
}

pub fn cmd_sweep(config: &ScenarioConfig, workers: usize) -> Result<SweepOutput> {
    let spec = config.sweep_spec(workers)?;
    let rows = run_sweep(&spec)?;
    let metadata = SweepMetadata {
        seed: spec.master_seed,
        eve_mode: spec.eve_mode,
        trials_per_point: spec.trials_per_point,
        thresholds: spec.thresholds.clone(),
        threshold_provenance: config.threshold_spec()?.describe(),
        analytic_eve_points: match spec.eve_mode {
            EveMode::Fixed => 1,
            EveMode::UniformRandom => EVE_AVERAGE_POINTS,
        },
        failed_rows: rows.iter().filter(|r| r.failure.is_some()).count(),
    };
    Ok(SweepOutput { rows, metadata })
}

fn cell(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_error)?;
    for r in rows {
        w.write_record([
            r.power_db.to_string(),
            r.threshold.to_string(),
            cell(r.p_fa_analytic),
            cell(r.p_md_analytic),
            cell(r.p_fa_empirical),
            cell(r.p_md_empirical),
            cell(r.stderr_fa),
            cell(r.stderr_md),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_roc_csv<W: Write>(points: &[RocPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p_fa", "p_d"]).map_err(csv_error)?;
    for p in points {
        w.write_record([p.p_fa.to_string(), p.p_d.to_string()]).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("{other:?}")),
    }
}

/// Sidecar metadata path: `run.csv` → `run.meta.json`.
pub fn metadata_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

pub fn cmd_roc(config: &ScenarioConfig, power_db: f64, points: usize) -> Result<Vec<RocPoint>> {
    let scenario = config.scenario()?;
    let eves = match config.eve_mode() {
        EveMode::Fixed => vec![scenario.eve],
        EveMode::UniformRandom => quasi_random_points(&scenario.region, EVE_AVERAGE_POINTS)
            .into_iter()
            .filter(|e| scenario.with_eve(*e).is_ok())
            .collect(),
    };
    roc_curve_over(&scenario, &eves, power_db, points)
}

// ---------------------------------------------------------------------------
// Entry point

pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::NumericalAccuracy { .. } => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { stderr.write_all(text.as_bytes()) } else { stdout.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli.command, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "uwauth: {e}");
            exit_code(&e)
        }
    }
}

fn execute(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Pathloss { frequency, distance, spreading } => {
            writeln!(stdout, "{}", cmd_pathloss(frequency, distance, spreading)?)?;
        }
        Command::Localize { config, noise, seed, power } => {
            let config = ScenarioConfig::load(&config)?;
            let report = cmd_localize(&config, noise, seed, power)?;
            let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
            writeln!(stdout, "{json}")?;
        }
        Command::Sweep { config, out, workers } => {
            let config = ScenarioConfig::load(&config)?;
            let output = cmd_sweep(&config, workers)?;
            write_sweep_csv(&output.rows, fs::File::create(&out)?)?;
            let meta = serde_json::to_string_pretty(&output.metadata).map_err(|e| Error::Config(e.to_string()))?;
            fs::write(metadata_path(&out), meta + "\n")?;
            write_summary(&output, &out, stderr)?;
            if let Some(row) = output.rows.iter().find(|r| r.failure.is_some()) {
                writeln!(
                    stderr,
                    "uwauth: {} row(s) failed, first at P = {} dB, threshold {}: {}",
                    output.metadata.failed_rows,
                    row.power_db,
                    row.threshold,
                    row.failure.as_deref().unwrap_or_default()
                )?;
                return Ok(EXIT_NUMERICAL);
            }
        }
        Command::Roc { config, power, points } => {
            let config = ScenarioConfig::load(&config)?;
            write_roc_csv(&cmd_roc(&config, power, points)?, &mut *stdout)?;
        }
    }
    Ok(EXIT_OK)
}

fn write_summary(output: &SweepOutput, out: &Path, stderr: &mut dyn Write) -> Result<()> {
    let m = &output.metadata;
    let powers = output.rows.len() / m.thresholds.len().max(1);
    writeln!(
        stderr,
        "wrote {} rows ({} powers x {} thresholds) to {}",
        output.rows.len(),
        powers,
        m.thresholds.len(),
        out.display()
    )?;
    writeln!(
        stderr,
        "seed {}, eve {}, {} trials per point, thresholds: {}",
        m.seed,
        match m.eve_mode {
            EveMode::Fixed => "fixed",
            EveMode::UniformRandom => "uniform_random",
        },
        m.trials_per_point,
        m.threshold_provenance
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_significant(1.1870299387081567, 6), "1.18703");
        assert_eq!(format_significant(41.078065034394356, 6), "41.0781");
        assert_eq!(format_significant(0.0011870299387081566, 6), "0.00118703");
        assert_eq!(format_significant(100.0, 6), "100");
        assert_eq!(format_significant(1234567.0, 6), "1.23457e+06");
        assert_eq!(format_significant(0.000012345, 3), "1.23e-05");
        assert_eq!(format_significant(-2.5, 6), "-2.5");
        assert_eq!(format_significant(0.0, 6), "0");
    }

    #[test]
    fn pathloss_line() {
        assert_eq!(cmd_pathloss(10.0, 500.0, 1.5).unwrap(), "alpha=1.18703 dB/km, PL=41.0781 dB");
        assert_eq!(cmd_pathloss(10.0, 1.0, 1.5).unwrap(), "alpha=1.18703 dB/km, PL=0.00118703 dB");
        assert_eq!(cmd_pathloss(0.0, 500.0, 1.5).unwrap_err().to_string(), "frequency must be positive");
        assert!(cmd_pathloss(10.0, 500.0, 0.0).is_err());
    }

    #[test]
    fn metadata_sits_next_to_csv() {
        assert_eq!(metadata_path(Path::new("out/run.csv")), Path::new("out/run.meta.json"));
        assert_eq!(metadata_path(Path::new("run")), Path::new("run.meta.json"));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::NumericalAccuracy { bound: 1.0, target: 1e-6 }), EXIT_NUMERICAL);
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Domain("x".into())), EXIT_USAGE);
    }
}
