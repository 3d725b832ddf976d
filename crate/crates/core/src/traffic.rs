//! Function-domain traffic: flow profiles, per-flow measurement and the
//! requirement verdict report.

use std::collections::HashSet;
use std::fmt;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::OperationalTrainDirectory;
use crate::engine::SimTime;
use crate::topology::ConsistId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Tcms,
    Operator,
    Customer,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Tcms => "tcms",
            Domain::Operator => "operator",
            Domain::Customer => "customer",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Periodic,
    ConstantBitrate,
    /// Greedy sender that keeps the first hop busy.
    Bulk,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("flow `{flow}`: endpoint consist {consist} is not in the operational directory")]
    UnknownEndpoint { flow: String, consist: ConsistId },
    #[error("flow `{flow}`: {reason}")]
    InvalidProfile { flow: String, reason: String },
}

/// Traffic shape and requirement bounds of one flow.
///
/// The defaults per domain are placeholders: TCMS 16 ms / 256 B with a
/// 50 ms deadline and 1e-3 loss bound, operator CCTV at 2 Mbps in 1400 B
/// frames, customer bulk transfer without bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainProfile {
    pub domain: Domain,
    pub pattern: Pattern,
    pub period_ms: Option<f64>,
    pub rate_mbps: Option<f64>,
    pub payload_bytes: u32,
    pub deadline_ms: Option<f64>,
    pub loss_bound: Option<f64>,
    pub min_throughput_mbps: Option<f64>,
}

impl DomainProfile {
    pub fn default_for(domain: Domain) -> Self {
        match domain {
            Domain::Tcms => DomainProfile {
                domain,
                pattern: Pattern::Periodic,
                period_ms: Some(16.0),
                rate_mbps: None,
                payload_bytes: 256,
                deadline_ms: Some(50.0),
                loss_bound: Some(1e-3),
                min_throughput_mbps: None,
            },
            Domain::Operator => DomainProfile {
                domain,
                pattern: Pattern::ConstantBitrate,
                period_ms: None,
                rate_mbps: Some(2.0),
                payload_bytes: 1400,
                deadline_ms: None,
                loss_bound: None,
                min_throughput_mbps: None,
            },
            Domain::Customer => DomainProfile {
                domain,
                pattern: Pattern::Bulk,
                period_ms: None,
                rate_mbps: None,
                payload_bytes: 1400,
                deadline_ms: None,
                loss_bound: None,
                min_throughput_mbps: None,
            },
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.payload_bytes == 0 {
            return Err("payload must be positive".into());
        }
        if self.domain == Domain::Tcms && self.deadline_ms.is_none() {
            return Err("TCMS flows must carry a deadline".into());
        }
        match self.pattern {
            Pattern::Periodic if !self.period_ms.is_some_and(|p| p > 0.0) => {
                return Err("periodic flows need a positive period".into())
            }
            Pattern::ConstantBitrate if !self.rate_mbps.is_some_and(|r| r > 0.0) => {
                return Err("constant-bitrate flows need a positive rate".into())
            }
            _ => {}
        }
        let positive = |v: Option<f64>| v.map_or(true, |x| x > 0.0);
        if !positive(self.deadline_ms) || !positive(self.min_throughput_mbps) {
            return Err("bounds must be positive".into());
        }
        if !self.loss_bound.map_or(true, |x| (0.0..=1.0).contains(&x)) {
            return Err("loss bound must be within [0, 1]".into());
        }
        Ok(())
    }

    /// Spacing between frames for paced patterns.
    pub fn send_interval(&self) -> Option<SimTime> {
        match self.pattern {
            Pattern::Periodic => self.period_ms.map(|p| SimTime::from_secs_f64(p / 1e3)),
            Pattern::ConstantBitrate => self
                .rate_mbps
                .map(|r| SimTime::from_secs_f64(f64::from(self.payload_bytes) * 8.0 / (r * 1e6))),
            Pattern::Bulk => None,
        }
    }

    /// Frames a paced flow emits in `[start, end)`.
    pub fn sends_between(&self, start: SimTime, end: SimTime) -> Option<u64> {
        let step = self.send_interval()?.as_micros().max(1);
        let span = end.saturating_sub(start).as_micros();
        Some(span.div_ceil(step))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoint {
    pub consist: ConsistId,
    pub device: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSpec {
    pub id: String,
    pub profile: DomainProfile,
    pub source: Endpoint,
    pub destination: Endpoint,
    /// Earliest send time; flows never start before inauguration.
    pub start: SimTime,
}

#[derive(Clone, Debug)]
pub struct FlowRecord {
    pub spec: FlowSpec,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub delivered_bytes: u64,
    pub latencies_us: Vec<u64>,
    /// Frames whose outcome was already recorded.
    completed: HashSet<u64>,
    pub duplicates: u64,
    pub unroutable: u64,
    pub started_at: Option<SimTime>,
    pub finished_at: Option<SimTime>,
}

impl FlowRecord {
    pub fn new(spec: FlowSpec) -> Self {
        FlowRecord {
            spec,
            sent: 0,
            delivered: 0,
            dropped: 0,
            delivered_bytes: 0,
            latencies_us: Vec::new(),
            completed: HashSet::new(),
            duplicates: 0,
            unroutable: 0,
            started_at: None,
            finished_at: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn on_send(&mut self, now: SimTime) {
        self.started_at.get_or_insert(now);
        self.sent += 1;
    }

    /// Returns `false` when the frame was already accounted for.
    pub fn record_delivery(&mut self, frame_id: u64, bytes: u32, latency: SimTime) -> bool {
        if !self.completed.insert(frame_id) {
            self.duplicates += 1;
            return false;
        }
        self.delivered += 1;
        self.delivered_bytes += u64::from(bytes);
        self.latencies_us.push(latency.as_micros());
        true
    }

    pub fn record_drop(&mut self, frame_id: u64) -> bool {
        if !self.completed.insert(frame_id) {
            self.duplicates += 1;
            return false;
        }
        self.dropped += 1;
        true
    }

    pub fn in_flight(&self) -> u64 {
        self.sent - self.delivered - self.dropped
    }

    pub fn finish(&mut self, end: SimTime) {
        self.finished_at = Some(end);
    }

    /// Delivered payload rate over the flow's active window.
    pub fn throughput_mbps(&self) -> f64 {
        match (self.started_at, self.finished_at) {
            (Some(s), Some(e)) if e > s => {
                self.delivered_bytes as f64 * 8.0 / e.saturating_sub(s).as_micros() as f64
            }
            _ => 0.0,
        }
    }

    pub fn drop_ratio(&self) -> f64 {
        let done = self.delivered + self.dropped;
        if done == 0 {
            0.0
        } else {
            self.dropped as f64 / done as f64
        }
    }

    pub fn latency_percentile(&self, pct: f64) -> Option<u64> {
        percentile(&self.latencies_us, pct)
    }
}

/// Nearest-rank percentile.
pub fn percentile(samples: &[u64], pct: f64) -> Option<u64> {
    if samples.is_empty() {
        return None;
    }
    let mut v = samples.to_vec();
    v.sort_unstable();
    let rank = ((pct / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

/// One record per flow, after checking that both endpoint consists are in
/// the operational directory.
pub fn spawn_flows(
    specs: &[FlowSpec],
    otd: &OperationalTrainDirectory,
) -> Result<Vec<FlowRecord>, TrafficError> {
    specs
        .iter()
        .map(|s| {
            s.profile.validate().map_err(|reason| TrafficError::InvalidProfile {
                flow: s.id.clone(),
                reason,
            })?;
            for ep in [&s.source, &s.destination] {
                if !otd.tnd.contains(ep.consist) {
                    return Err(TrafficError::UnknownEndpoint {
                        flow: s.id.clone(),
                        consist: ep.consist,
                    });
                }
            }
            Ok(FlowRecord::new(s.clone()))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Latency { p99_us: u64, deadline_us: u64 },
    Loss { ratio: f64, bound: f64 },
    Throughput { achieved_mbps: f64, min_mbps: f64 },
    NoDelivery,
}

impl Violation {
    pub fn label(&self) -> &'static str {
        match self {
            Violation::Latency { .. } => "latency",
            Violation::Loss { .. } => "loss",
            Violation::Throughput { .. } => "throughput",
            Violation::NoDelivery => "no_delivery",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowVerdict {
    pub flow_id: String,
    pub domain: Domain,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub p50_us: Option<u64>,
    pub p99_us: Option<u64>,
    pub throughput_mbps: f64,
    pub violations: Vec<Violation>,
}

impl FlowVerdict {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioMeta {
    pub name: String,
    pub seed: u64,
    pub duration_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerdictReport {
    pub meta: ScenarioMeta,
    pub flows: Vec<FlowVerdict>,
}

impl VerdictReport {
    pub fn all_pass(&self) -> bool {
        self.flows.iter().all(FlowVerdict::pass)
    }
}

/// Checks every flow against its bounds: deadline on the 99th latency
/// percentile, loss bound on the drop ratio, throughput floor on the
/// achieved rate.
pub fn verdict(flows: &[FlowRecord], meta: ScenarioMeta) -> VerdictReport {
    let rows = flows
        .iter()
        .map(|f| {
            let p = &f.spec.profile;
            let p99 = f.latency_percentile(99.0);
            let mut violations = Vec::new();
            if f.sent > 0 && f.delivered == 0 {
                violations.push(Violation::NoDelivery);
            }
            if let (Some(deadline), Some(p99)) = (p.deadline_ms, p99) {
                let deadline_us = (deadline * 1e3).round() as u64;
                if p99 > deadline_us {
                    violations.push(Violation::Latency { p99_us: p99, deadline_us });
                }
            }
            if let Some(bound) = p.loss_bound {
                let ratio = f.drop_ratio();
                if ratio > bound {
                    violations.push(Violation::Loss { ratio, bound });
                }
            }
            let achieved = f.throughput_mbps();
            if let Some(min) = p.min_throughput_mbps {
                if achieved < min {
                    violations.push(Violation::Throughput {
                        achieved_mbps: achieved,
                        min_mbps: min,
                    });
                }
            }
            FlowVerdict {
                flow_id: f.spec.id.clone(),
                domain: p.domain,
                sent: f.sent,
                delivered: f.delivered,
                dropped: f.dropped,
                p50_us: f.latency_percentile(50.0),
                p99_us: p99,
                throughput_mbps: achieved,
                violations,
            }
        })
        .collect();
    VerdictReport { meta, flows: rows }
}

pub const REPORT_HEADER: [&str; 10] = [
    "flow_id",
    "domain",
    "sent",
    "delivered",
    "dropped",
    "p50_us",
    "p99_us",
    "throughput_mbps",
    "verdict",
    "violation",
];

/// One parsed row of a report CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub flow_id: String,
    pub domain: String,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub p50_us: Option<u64>,
    pub p99_us: Option<u64>,
    pub throughput_mbps: f64,
    pub verdict: String,
    pub violation: String,
}

impl From<&FlowVerdict> for ReportRow {
    fn from(v: &FlowVerdict) -> Self {
        ReportRow {
            flow_id: v.flow_id.clone(),
            domain: v.domain.to_string(),
            sent: v.sent,
            delivered: v.delivered,
            dropped: v.dropped,
            p50_us: v.p50_us,
            p99_us: v.p99_us,
            throughput_mbps: (v.throughput_mbps * 1e6).round() / 1e6,
            verdict: if v.pass() { "pass" } else { "fail" }.to_string(),
            violation: v
                .violations
                .iter()
                .map(Violation::label)
                .collect::<Vec<_>>()
                .join(";"),
        }
    }
}

pub fn write_report_csv<W: io::Write>(report: &VerdictReport, out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for v in &report.flows {
        w.serialize(ReportRow::from(v))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report_csv<R: io::Read>(input: R) -> csv::Result<Vec<ReportRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}
