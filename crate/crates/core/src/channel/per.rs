use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ChannelError;
use crate::engine::{RngStream, SimTime};

/// PER at which the relative SNR requirements of the schemes are stated.
pub const CALIBRATION_PER: f64 = 2e-2;

/// LTE reference modulation and coding schemes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mcs {
    R2,
    R3,
    R9,
}

impl Mcs {
    pub const ALL: [Mcs; 3] = [Mcs::R2, Mcs::R3, Mcs::R9];

    pub fn as_str(self) -> &'static str {
        match self {
            Mcs::R2 => "R2",
            Mcs::R3 => "R3",
            Mcs::R9 => "R9",
        }
    }

    /// Extra SNR over R2 needed to reach [`CALIBRATION_PER`].
    pub fn snr_offset_db(self) -> f64 {
        match self {
            Mcs::R2 => 0.0,
            Mcs::R3 => 8.5,
            Mcs::R9 => 18.0,
        }
    }
}

impl FromStr for Mcs {
    type Err = ChannelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mcs::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ChannelError::UnknownMcs(s.to_string()))
    }
}

impl fmt::Display for Mcs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Net physical-layer throughput in Mbps.
pub fn net_throughput(mcs: Mcs) -> f64 {
    match mcs {
        Mcs::R2 => 7.884,
        Mcs::R3 => 12.586,
        Mcs::R9 => 55.498,
    }
}

/// Absolute placement of the curve family. Only the offsets between schemes
/// are fixed; where R2 crosses the calibration PER is configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerCalibration {
    pub snr_ref_r2_db: f64,
    pub slope_per_db: f64,
}

impl Default for PerCalibration {
    fn default() -> Self {
        PerCalibration {
            snr_ref_r2_db: 5.0,
            slope_per_db: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McsProfile {
    pub mcs: Mcs,
    pub net_throughput_mbps: f64,
    /// SNR at which the curve passes through [`CALIBRATION_PER`].
    pub snr_at_calibration_db: f64,
    pub slope_per_db: f64,
}

impl McsProfile {
    pub fn new(mcs: Mcs, cal: &PerCalibration) -> Self {
        McsProfile {
            mcs,
            net_throughput_mbps: net_throughput(mcs),
            snr_at_calibration_db: cal.snr_ref_r2_db + mcs.snr_offset_db(),
            slope_per_db: cal.slope_per_db,
        }
    }
}

// (1 - p) / p at the calibration point.
fn calibration_odds() -> f64 {
    (1.0 - CALIBRATION_PER) / CALIBRATION_PER
}

/// Logistic-in-dB waterfall:
/// `1 / (1 + odds * exp(slope * (snr - snr_cal)))`, which equals the
/// calibration PER exactly at `snr_cal`.
pub fn per(mcs: &McsProfile, snr_db: f64) -> f64 {
    let x = mcs.slope_per_db * (snr_db - mcs.snr_at_calibration_db);
    let p = 1.0 / (1.0 + calibration_odds() * x.exp());
    p.clamp(0.0, 1.0)
}

/// Inverse of [`per`] for `0 < target < 1`.
pub fn snr_for_per(mcs: &McsProfile, target: f64) -> f64 {
    let odds = (1.0 - target) / target;
    mcs.snr_at_calibration_db + (odds / calibration_odds()).ln() / mcs.slope_per_db
}

/// Time on air of `bytes` at `rate_mbps`, rounded up to whole ticks.
pub fn airtime(bytes: u32, rate_mbps: f64) -> SimTime {
    let us = f64::from(bytes) * 8.0 / rate_mbps;
    SimTime::from_micros(us.ceil() as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Delivery {
    Delivered { airtime: SimTime },
    Dropped,
}

impl Delivery {
    pub fn is_delivered(self) -> bool {
        matches!(self, Delivery::Delivered { .. })
    }
}

/// One Bernoulli delivery decision for a frame at the given SNR.
pub fn deliver(bytes: u32, mcs: &McsProfile, snr_db: f64, rng: &mut RngStream) -> Delivery {
    deliver_with_per(bytes, mcs, per(mcs, snr_db), rng)
}

/// Like [`deliver`] with the PER supplied directly.
pub fn deliver_with_per(bytes: u32, mcs: &McsProfile, per: f64, rng: &mut RngStream) -> Delivery {
    debug_assert!(bytes > 0);
    if rng.bernoulli(per) {
        Delivery::Dropped
    } else {
        Delivery::Delivered {
            airtime: airtime(bytes, mcs.net_throughput_mbps),
        }
    }
}
