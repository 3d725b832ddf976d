//! Radio abstraction: tapped-delay-line profiles, link budget and the
//! per-MCS packet error curves that drive per-frame delivery.

mod budget;
mod export;
mod pdp;
mod per;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use budget::{free_space_loss_at_1m_db, max_range_m, snr, LinkBudget};
pub use export::{snr_grid, sweep_per, write_pdp_csv, write_per_csv, PerRow};
pub use pdp::{
    coherence_bandwidth, rms_delay_spread, synth_pdp, synth_pdp_with, ChannelModel, PdpParams, Tap,
};
pub use per::{
    airtime, deliver, deliver_with_per, net_throughput, per, snr_for_per, Delivery, Mcs,
    McsProfile, PerCalibration, CALIBRATION_PER,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("unknown channel scenario `{0}`")]
    UnknownScenario(String),
    #[error("unsupported sounder bandwidth {0} MHz (expected 80 or 120)")]
    UnsupportedBandwidth(f64),
    #[error("channel has zero delay spread")]
    DegenerateChannel,
    #[error("unknown MCS `{0}`")]
    UnknownMcs(String),
    #[error("empty or invalid SNR range")]
    EmptyRange,
}

/// Measured propagation scenarios with a synthesized delay profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelScenario {
    HstInterVehicle,
    MetroOpenField,
    MetroTunnel,
    MetroStation,
}

impl ChannelScenario {
    pub const ALL: [ChannelScenario; 4] = [
        ChannelScenario::HstInterVehicle,
        ChannelScenario::MetroOpenField,
        ChannelScenario::MetroTunnel,
        ChannelScenario::MetroStation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelScenario::HstInterVehicle => "hst_inter_vehicle",
            ChannelScenario::MetroOpenField => "metro_open_field",
            ChannelScenario::MetroTunnel => "metro_tunnel",
            ChannelScenario::MetroStation => "metro_station",
        }
    }

    /// Carrier of the sounding campaign the profile stands for.
    pub fn carrier_ghz(self) -> f64 {
        match self {
            ChannelScenario::HstInterVehicle => 5.2,
            _ => 2.6,
        }
    }

    /// Sounder bandwidth of the campaign.
    pub fn default_bandwidth_mhz(self) -> f64 {
        match self {
            ChannelScenario::HstInterVehicle => 120.0,
            _ => 80.0,
        }
    }

    /// Linear-in-dB decay of the default profile.
    pub fn default_decay_db_per_ns(self) -> f64 {
        match self {
            ChannelScenario::HstInterVehicle => 0.2,
            ChannelScenario::MetroOpenField => 0.15,
            ChannelScenario::MetroStation => 0.10,
            ChannelScenario::MetroTunnel => 0.06,
        }
    }

    /// Tunnels guide the wave, everything else is close to free space.
    pub fn default_path_loss_exponent(self) -> f64 {
        match self {
            ChannelScenario::MetroTunnel => 1.8,
            _ => 2.0,
        }
    }
}

impl FromStr for ChannelScenario {
    type Err = ChannelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ChannelScenario::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| ChannelError::UnknownScenario(s.to_string()))
    }
}

impl fmt::Display for ChannelScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
