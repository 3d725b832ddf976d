//! Scenario files: TOML documents describing the train, radio, traffic,
//! cabin claims and fault schedule of one run.
//!
//! Unknown keys are rejected. Errors name the offending key path and, for
//! syntax and type errors, the line and column.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{ActiveCabin, BackboneParams};
use crate::channel::{
    synth_pdp_with, ChannelError, ChannelModel, ChannelScenario, Mcs, PdpParams, PerCalibration,
};
use crate::engine::SimTime;
use crate::topology::{Consist, ConsistId, Orientation, PipeFault, TrainComposition, VehicleId};
use crate::traffic::{Domain, DomainProfile, Endpoint, FlowSpec, Pattern};

pub const VALIDATION_3X4: &str = include_str!("../scenarios/validation_3x4.toml");

/// Scenarios shipped with the library, by name.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "validation_3x4" => Some(VALIDATION_3X4),
        _ => None,
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ScenarioError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        ScenarioError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Key path of a schema error; `(root)` for the top level.
    pub fn key_path(&self) -> Option<&str> {
        match self {
            ScenarioError::Schema { path, .. } => Some(path),
            ScenarioError::Io { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    pub run: RunSection,
    pub train: TrainSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub radio: RadioSection,
    #[serde(default)]
    pub backbone: BackboneParams,
    #[serde(default)]
    pub cabin_claims: Vec<ClaimSpec>,
    #[serde(default)]
    pub flows: Vec<FlowConfig>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Simulated seconds.
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub consists: Vec<ConsistSpec>,
    #[serde(default = "default_vehicle_length")]
    pub vehicle_length_m: f64,
    #[serde(default)]
    pub pipe_fault: PipeFault,
}

fn default_vehicle_length() -> f64 {
    25.0
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistSpec {
    pub id: u32,
    pub vehicles: u32,
    /// 1-based positions of vehicles with a driving cab.
    #[serde(default)]
    pub cabs: Vec<u32>,
    #[serde(default)]
    pub orientation: Orientation,
    #[serde(default = "yes")]
    pub equipped: bool,
    #[serde(default = "yes")]
    pub powered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub scenario: ChannelScenario,
    #[serde(default)]
    pub bandwidth_mhz: Option<f64>,
    #[serde(default)]
    pub decay_db_per_ns: Option<f64>,
    #[serde(default)]
    pub path_loss_exponent: Option<f64>,
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            scenario: ChannelScenario::MetroOpenField,
            bandwidth_mhz: None,
            decay_db_per_ns: None,
            path_loss_exponent: None,
        }
    }
}

impl ChannelSection {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth_mhz
            .unwrap_or_else(|| self.scenario.default_bandwidth_mhz())
    }

    pub fn path_loss_exponent(&self) -> f64 {
        self.path_loss_exponent
            .unwrap_or_else(|| self.scenario.default_path_loss_exponent())
    }

    /// Delay profile with the configured overrides.
    pub fn model(&self) -> Result<ChannelModel, ChannelError> {
        let mut params = PdpParams::defaults(self.scenario);
        if let Some(d) = self.decay_db_per_ns {
            params.decay_db_per_ns = d;
        }
        synth_pdp_with(self.scenario, self.bandwidth(), &params)
    }
}

/// Operating band of the backbone radio.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Band {
    /// 703-803 MHz.
    #[serde(rename = "lte_band_28")]
    LteBand28,
}

impl Band {
    pub fn centre_ghz(self) -> f64 {
        match self {
            Band::LteBand28 => 0.753,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Band::LteBand28 => "lte_band_28",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioSection {
    /// Without a band the channel scenario's carrier is used.
    pub band: Option<Band>,
    pub mcs: Mcs,
    pub tx_power_dbm: f64,
    pub noise_floor_dbm: f64,
    /// Fixed per-frame loss probability instead of the SNR curve.
    pub per_override: Option<f64>,
    /// Fixed node-to-node range instead of the link budget.
    pub max_range_m: Option<f64>,
    pub snr_ref_r2_db: f64,
    pub per_slope_per_db: f64,
    /// Retransmit a lost frame once on the same hop.
    pub resend_once: bool,
}

impl Default for RadioSection {
    fn default() -> Self {
        let cal = PerCalibration::default();
        RadioSection {
            band: None,
            mcs: Mcs::R2,
            tx_power_dbm: 23.0,
            noise_floor_dbm: -95.0,
            per_override: None,
            max_range_m: None,
            snr_ref_r2_db: cal.snr_ref_r2_db,
            per_slope_per_db: cal.slope_per_db,
            resend_once: false,
        }
    }
}

impl RadioSection {
    pub fn calibration(&self) -> PerCalibration {
        PerCalibration {
            snr_ref_r2_db: self.snr_ref_r2_db,
            slope_per_db: self.per_slope_per_db,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimSpec {
    pub at: f64,
    pub consist: u32,
    /// 1-based position of the cab vehicle within the consist.
    pub vehicle: u32,
}

impl ClaimSpec {
    pub fn cabin(&self) -> ActiveCabin {
        ActiveCabin {
            consist: ConsistId(self.consist),
            vehicle: VehicleId(self.consist * 100 + self.vehicle),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub id: String,
    pub domain: Domain,
    pub source: Endpoint,
    pub destination: Endpoint,
    #[serde(default)]
    pub start: f64,
    #[serde(default)]
    pub pattern: Option<Pattern>,
    #[serde(default)]
    pub period_ms: Option<f64>,
    #[serde(default)]
    pub rate_mbps: Option<f64>,
    #[serde(default)]
    pub payload_bytes: Option<u32>,
    #[serde(default)]
    pub deadline_ms: Option<f64>,
    #[serde(default)]
    pub loss_bound: Option<f64>,
    #[serde(default)]
    pub min_throughput_mbps: Option<f64>,
}

impl FlowConfig {
    /// Domain defaults with the configured overrides applied.
    pub fn profile(&self) -> DomainProfile {
        let mut p = DomainProfile::default_for(self.domain);
        if let Some(x) = self.pattern {
            p.pattern = x;
        }
        if self.period_ms.is_some() {
            p.period_ms = self.period_ms;
        }
        if self.rate_mbps.is_some() {
            p.rate_mbps = self.rate_mbps;
        }
        if let Some(x) = self.payload_bytes {
            p.payload_bytes = x;
        }
        if self.deadline_ms.is_some() {
            p.deadline_ms = self.deadline_ms;
        }
        if self.loss_bound.is_some() {
            p.loss_bound = self.loss_bound;
        }
        if self.min_throughput_mbps.is_some() {
            p.min_throughput_mbps = self.min_throughput_mbps;
        }
        p
    }

    pub fn spec(&self) -> FlowSpec {
        FlowSpec {
            id: self.id.clone(),
            profile: self.profile(),
            source: self.source.clone(),
            destination: self.destination.clone(),
            start: SimTime::from_secs_f64(self.start),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultSpec {
    /// The consist's backbone node fails.
    Kill { at: f64, consist: u32 },
    /// The node restarts with empty state.
    Revive { at: f64, consist: u32 },
    /// Radio link between two nodes is blocked for `duration` seconds.
    LinkDown { at: f64, a: u32, b: u32, duration: f64 },
    /// Splits the train right after `after`.
    Decouple { at: f64, after: u32 },
    /// Couples the train holding `with` onto the rear of the train holding
    /// `consist`.
    Couple {
        at: f64,
        consist: u32,
        with: u32,
        #[serde(default)]
        reversed: bool,
    },
    Inhibit { at: f64, issuer: u32 },
    Uninhibit { at: f64, issuer: u32 },
    SetPipe { at: f64, fault: PipeFault },
}

impl FaultSpec {
    pub fn at(&self) -> f64 {
        match *self {
            FaultSpec::Kill { at, .. }
            | FaultSpec::Revive { at, .. }
            | FaultSpec::LinkDown { at, .. }
            | FaultSpec::Decouple { at, .. }
            | FaultSpec::Couple { at, .. }
            | FaultSpec::Inhibit { at, .. }
            | FaultSpec::Uninhibit { at, .. }
            | FaultSpec::SetPipe { at, .. } => at,
        }
    }

    fn consists(&self) -> Vec<(&'static str, u32)> {
        match *self {
            FaultSpec::Kill { consist, .. } | FaultSpec::Revive { consist, .. } => {
                vec![("consist", consist)]
            }
            FaultSpec::LinkDown { a, b, .. } => vec![("a", a), ("b", b)],
            FaultSpec::Decouple { after, .. } => vec![("after", after)],
            FaultSpec::Couple { consist, with, .. } => vec![("consist", consist), ("with", with)],
            FaultSpec::Inhibit { issuer, .. } | FaultSpec::Uninhibit { issuer, .. } => {
                vec![("issuer", issuer)]
            }
            FaultSpec::SetPipe { .. } => vec![],
        }
    }
}

impl fmt::Display for FaultSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let de = toml::Deserializer::new(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "(root)".to_string() } else { path };
            let inner = e.into_inner();
            let location = inner
                .span()
                .map(|s| {
                    let (line, col) = line_col(text, s.start);
                    format!(" (line {line}, column {col})")
                })
                .unwrap_or_default();
            ScenarioError::schema(path, format!("{}{location}", inner.message()))
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// A bundled scenario name or a file path.
    pub fn resolve(name_or_path: &str) -> Result<Self, ScenarioError> {
        match bundled(name_or_path) {
            Some(text) => Self::parse(text),
            None => Self::load(Path::new(name_or_path)),
        }
    }

    pub fn display_name(&self) -> &str {
        self.name.as_deref().unwrap_or("unnamed")
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_secs_f64(self.run.duration)
    }

    pub fn composition(&self) -> TrainComposition {
        let consists = self
            .train
            .consists
            .iter()
            .map(|c| {
                let mut k = Consist::new(c.id, c.vehicles, &c.cabs).with_orientation(c.orientation);
                k.equipped = c.equipped;
                k.powered = c.powered;
                k
            })
            .collect();
        TrainComposition::new(consists).expect("validated composition")
    }

    pub fn flow_specs(&self) -> Vec<FlowSpec> {
        self.flows.iter().map(FlowConfig::spec).collect()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        fn e(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
            ScenarioError::schema(path, message)
        }
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;

        if !finite_pos(self.run.duration) {
            return Err(e("run.duration", "must be a positive number of seconds"));
        }
        if self.run.duration > 1e6 {
            return Err(e("run.duration", "must not exceed 1e6 seconds"));
        }

        let t = &self.train;
        if t.consists.is_empty() {
            return Err(e("train.consists", "at least one consist is required"));
        }
        if !finite_pos(t.vehicle_length_m) {
            return Err(e("train.vehicle_length_m", "must be positive"));
        }
        let mut ids = BTreeSet::new();
        for (i, c) in t.consists.iter().enumerate() {
            let at = |k: &str| format!("train.consists[{i}].{k}");
            if c.id == 0 || c.id > 9999 {
                return Err(e(at("id"), "must be within 1..=9999"));
            }
            if !ids.insert(c.id) {
                return Err(e(at("id"), format!("duplicate consist id {}", c.id)));
            }
            if c.vehicles == 0 || c.vehicles > 99 {
                return Err(e(at("vehicles"), "must be within 1..=99"));
            }
            if let Some(p) = c.cabs.iter().find(|&&p| p == 0 || p > c.vehicles) {
                return Err(e(at("cabs"), format!("cab position {p} outside 1..={}", c.vehicles)));
            }
        }

        let ch = &self.channel;
        if let Some(bw) = ch.bandwidth_mhz {
            if bw != 80.0 && bw != 120.0 {
                return Err(e("channel.bandwidth_mhz", "supported values are 80 and 120"));
            }
        }
        if ch.decay_db_per_ns.is_some_and(|d| !finite_pos(d)) {
            return Err(e("channel.decay_db_per_ns", "must be positive"));
        }
        if ch.path_loss_exponent.is_some_and(|d| !finite_pos(d)) {
            return Err(e("channel.path_loss_exponent", "must be positive"));
        }

        let r = &self.radio;
        if r.per_override.is_some_and(|p| !(0.0..=1.0).contains(&p)) {
            return Err(e("radio.per_override", "must be within [0, 1]"));
        }
        if r.max_range_m.is_some_and(|d| !finite_pos(d)) {
            return Err(e("radio.max_range_m", "must be positive"));
        }
        if !finite_pos(r.per_slope_per_db) {
            return Err(e("radio.per_slope_per_db", "must be positive"));
        }
        for (k, v) in [
            ("tx_power_dbm", r.tx_power_dbm),
            ("noise_floor_dbm", r.noise_floor_dbm),
            ("snr_ref_r2_db", r.snr_ref_r2_db),
        ] {
            if !v.is_finite() {
                return Err(e(format!("radio.{k}"), "must be finite"));
            }
        }

        let b = &self.backbone;
        for (k, v) in [
            ("beacon_interval_ms", b.beacon_interval_ms),
            ("quiet_intervals", u64::from(b.quiet_intervals)),
            ("miss_budget", u64::from(b.miss_budget)),
        ] {
            if v == 0 {
                return Err(e(format!("backbone.{k}"), "must be positive"));
            }
        }

        let spec_of = |id: u32| t.consists.iter().find(|c| c.id == id);
        for (i, c) in self.cabin_claims.iter().enumerate() {
            let at = |k: &str| format!("cabin_claims[{i}].{k}");
            if !finite_nonneg(c.at) {
                return Err(e(at("at"), "must be a non-negative time"));
            }
            let Some(k) = spec_of(c.consist) else {
                return Err(e(at("consist"), format!("unknown consist {}", c.consist)));
            };
            if !k.cabs.contains(&c.vehicle) {
                return Err(e(at("vehicle"), format!("vehicle {} of consist {} has no cab", c.vehicle, c.consist)));
            }
        }

        let mut flow_ids = BTreeSet::new();
        for (i, f) in self.flows.iter().enumerate() {
            let at = |k: &str| format!("flows[{i}].{k}");
            if !flow_ids.insert(f.id.as_str()) {
                return Err(e(at("id"), format!("duplicate flow id `{}`", f.id)));
            }
            if f.id.contains([',', '"', '\n']) {
                return Err(e(at("id"), "must not contain commas, quotes or newlines"));
            }
            if !finite_nonneg(f.start) {
                return Err(e(at("start"), "must be a non-negative time"));
            }
            f.profile().validate().map_err(|m| e(format!("flows[{i}]"), m))?;
        }

        for (i, f) in self.faults.iter().enumerate() {
            if !finite_nonneg(f.at()) {
                return Err(e(format!("faults[{i}].at"), "must be a non-negative time"));
            }
            for (k, id) in f.consists() {
                if spec_of(id).is_none() {
                    return Err(e(format!("faults[{i}].{k}"), format!("unknown consist {id}")));
                }
            }
            if let FaultSpec::LinkDown { duration, .. } = f {
                if !finite_pos(*duration) {
                    return Err(e(format!("faults[{i}].duration"), "must be positive"));
                }
            }
        }
        Ok(())
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}
