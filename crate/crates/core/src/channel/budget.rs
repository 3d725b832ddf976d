use serde::{Deserialize, Serialize};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Log-distance link budget between two backbone nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub tx_power_dbm: f64,
    pub noise_floor_dbm: f64,
    pub path_loss_exponent: f64,
    pub reference_loss_db_at_1m: f64,
    pub distance_m: f64,
}

impl LinkBudget {
    pub fn at_distance(mut self, distance_m: f64) -> Self {
        self.distance_m = distance_m;
        self
    }
}

/// Free-space loss at one metre, `20 log10(4 pi f / c)`.
pub fn free_space_loss_at_1m_db(carrier_ghz: f64) -> f64 {
    20.0 * (4.0 * std::f64::consts::PI * carrier_ghz * 1e9 / SPEED_OF_LIGHT).log10()
}

/// Received SNR in dB. Distances below a millimetre are clamped so the
/// result stays finite.
pub fn snr(b: &LinkBudget) -> f64 {
    let d = b.distance_m.max(1e-3);
    let path_loss = b.reference_loss_db_at_1m + 10.0 * b.path_loss_exponent * d.log10();
    b.tx_power_dbm - path_loss - b.noise_floor_dbm
}

/// Largest distance at which the budget still yields `min_snr_db`.
pub fn max_range_m(b: &LinkBudget, min_snr_db: f64) -> f64 {
    let margin = b.tx_power_dbm - b.reference_loss_db_at_1m - b.noise_floor_dbm - min_snr_db;
    10f64.powf(margin / (10.0 * b.path_loss_exponent))
}
