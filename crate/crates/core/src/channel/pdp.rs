use serde::Serialize;

use super::{ChannelError, ChannelScenario};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tap {
    pub delay_ns: f64,
    pub power_db: f64,
}

/// Tapped-delay-line profile for one scenario, carrier and bandwidth.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChannelModel {
    pub scenario: ChannelScenario,
    pub carrier_ghz: f64,
    pub bandwidth_mhz: f64,
    pub taps: Vec<Tap>,
}

/// Shape parameters of a synthesized profile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdpParams {
    pub decay_db_per_ns: f64,
    /// Taps weaker than this are dropped.
    pub floor_db: f64,
    /// Upper bound on the first non-LOS tap, if any.
    pub second_tap_max_db: Option<f64>,
}

impl PdpParams {
    pub fn defaults(scenario: ChannelScenario) -> Self {
        PdpParams {
            decay_db_per_ns: scenario.default_decay_db_per_ns(),
            floor_db: -25.0,
            second_tap_max_db: match scenario {
                ChannelScenario::HstInterVehicle => Some(-10.0),
                _ => None,
            },
        }
    }
}

const FLOOR_EPS_DB: f64 = 1e-9;

pub fn synth_pdp(scenario: ChannelScenario, bandwidth_mhz: f64) -> Result<ChannelModel, ChannelError> {
    synth_pdp_with(scenario, bandwidth_mhz, &PdpParams::defaults(scenario))
}

/// Taps sit on the sounder's resolution grid (`1000 / bandwidth` ns) and
/// decay linearly in dB from a 0 dB line-of-sight tap.
pub fn synth_pdp_with(
    scenario: ChannelScenario,
    bandwidth_mhz: f64,
    params: &PdpParams,
) -> Result<ChannelModel, ChannelError> {
    if bandwidth_mhz != 80.0 && bandwidth_mhz != 120.0 {
        return Err(ChannelError::UnsupportedBandwidth(bandwidth_mhz));
    }
    let spacing = 1000.0 / bandwidth_mhz;
    let mut taps = Vec::new();
    for k in 0u32.. {
        let delay_ns = f64::from(k) * spacing;
        let mut power_db = -params.decay_db_per_ns * delay_ns;
        if power_db < params.floor_db - FLOOR_EPS_DB {
            break;
        }
        if k == 1 {
            if let Some(max) = params.second_tap_max_db {
                power_db = power_db.min(max);
            }
        }
        taps.push(Tap { delay_ns, power_db });
        if params.decay_db_per_ns <= 0.0 && k > 0 {
            // A flat profile would never reach the floor.
            break;
        }
    }
    Ok(ChannelModel {
        scenario,
        carrier_ghz: scenario.carrier_ghz(),
        bandwidth_mhz,
        taps,
    })
}

/// Power-weighted second central moment of the tap delays, in ns.
pub fn rms_delay_spread(m: &ChannelModel) -> f64 {
    let weights: Vec<f64> = m.taps.iter().map(|t| 10f64.powf(t.power_db / 10.0)).collect();
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let mean = m
        .taps
        .iter()
        .zip(&weights)
        .map(|(t, w)| w * t.delay_ns)
        .sum::<f64>()
        / total;
    let var = m
        .taps
        .iter()
        .zip(&weights)
        .map(|(t, w)| w * (t.delay_ns - mean).powi(2))
        .sum::<f64>()
        / total;
    var.sqrt()
}

/// `1 / (5 * tau_rms)`, in MHz.
pub fn coherence_bandwidth(m: &ChannelModel) -> Result<f64, ChannelError> {
    let tau_ns = rms_delay_spread(m);
    if tau_ns <= 0.0 {
        return Err(ChannelError::DegenerateChannel);
    }
    let hz = 1.0 / (5.0 * tau_ns * 1e-9);
    Ok(hz / 1e6)
}
