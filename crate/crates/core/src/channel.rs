//! Acoustic pathloss and the ranging noise it induces at each anchor.
//!
//! Spreading loss is taken with a 1 m reference (distance in meters), while
//! the absorption coefficient is in dB/km with frequency in kHz, so the
//! absorption term uses distance in kilometers.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Link-level constants shared by every transmitter/anchor pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub frequency_khz: f64,
    pub sound_speed_mps: f64,
    /// Geometric spreading exponent (1 cylindrical, 2 spherical).
    pub spreading_factor: f64,
    /// Transmit power in dB re 1 pascal.
    pub transmit_power_db: f64,
    /// Processing gain of the ranging waveform against the ambient noise
    /// covariance. Rescales every ranging variance by its inverse.
    pub signal_design_gain: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            frequency_khz: 10.0,
            sound_speed_mps: 1500.0,
            spreading_factor: 1.5,
            transmit_power_db: 60.0,
            signal_design_gain: 1.0,
        }
    }
}

impl ChannelParams {
    pub fn new(
        frequency_khz: f64,
        sound_speed_mps: f64,
        spreading_factor: f64,
        transmit_power_db: f64,
        signal_design_gain: f64,
    ) -> Result<Self> {
        let params = ChannelParams {
            frequency_khz,
            sound_speed_mps,
            spreading_factor,
            transmit_power_db,
            signal_design_gain,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        positive(self.frequency_khz, "frequency")?;
        positive(self.sound_speed_mps, "sound speed")?;
        positive(self.spreading_factor, "spreading factor")?;
        positive(self.signal_design_gain, "signal design gain")?;
        if !self.transmit_power_db.is_finite() {
            return Err(Error::domain("transmit power must be finite"));
        }
        Ok(())
    }

    /// Same channel at a different transmit power.
    pub fn with_power_db(self, transmit_power_db: f64) -> Self {
        ChannelParams {
            transmit_power_db,
            ..self
        }
    }
}

fn positive(value: f64, what: &str) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} must be positive")))
    }
}

/// Thorp absorption coefficient in dB/km for a frequency in kHz.
pub fn absorption_db_per_km(frequency_khz: f64) -> Result<f64> {
    positive(frequency_khz, "frequency")?;
    let f2 = frequency_khz * frequency_khz;
    Ok(0.11 * f2 / (1.0 + f2) + 44.0 * f2 / (4100.0 + f2) + 2.75e-4 * f2 + 0.003)
}

/// Total pathloss in dB over `distance_m` meters.
pub fn pathloss_db(distance_m: f64, params: &ChannelParams) -> Result<f64> {
    positive(distance_m, "distance")?;
    let alpha = absorption_db_per_km(params.frequency_khz)?;
    Ok(params.spreading_factor * 10.0 * distance_m.log10() + distance_m / 1000.0 * alpha)
}

/// Variance (m²) of the ToA range estimate over a link of `distance_m`.
///
/// `c² · PL / (4 · P · gain)` with pathloss and transmit power both taken in
/// linear scale.
pub fn distance_noise_variance(distance_m: f64, params: &ChannelParams) -> Result<f64> {
    params.validate()?;
    let pl_linear = db_to_linear(pathloss_db(distance_m, params)?);
    let power_linear = db_to_linear(params.transmit_power_db);
    let c = params.sound_speed_mps;
    Ok(c * c * pl_linear / (4.0 * power_linear * params.signal_design_gain))
}

/// Standard deviation (m) of the range estimate.
pub fn distance_noise_std(distance_m: f64, params: &ChannelParams) -> Result<f64> {
    distance_noise_variance(distance_m, params).map(f64::sqrt)
}

#[inline]
fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
