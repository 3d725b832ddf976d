//! Wireless train backbone nodes: discovery, two-phase inauguration,
//! inhibition, integrity supervision and mediated routing.

mod directory;
mod node;
mod routing;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SimTime;
use crate::topology::{AdjacencyReport, ConsistId};

pub use directory::{
    build_tnd, confirm_length, operational_inauguration, ActiveCabin, CabinClaim,
    LengthConfirmation, OperationalTrainDirectory, TndEntry, TrainNetworkDirectory,
};
pub use node::{IntegrityStatus, NodeNote, Wltbn};
pub use routing::{consist_centres, route, RouteError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InaugurationError {
    #[error("inconsistent adjacency at {consist}: {detail}")]
    InconsistentAdjacency { consist: ConsistId, detail: String },
    #[error("directory lists {directory} consists but the secondary channel reads {secondary}")]
    LengthMismatch { directory: u32, secondary: u32 },
    #[error("secondary channel fault")]
    ChannelFault,
    #[error("simultaneous cabin claims from {first} and {second}")]
    CabinConflict { first: ConsistId, second: ConsistId },
    #[error("no cabin claim yet")]
    ClaimPending,
    #[error("claim rejected: cabin {0} is already active")]
    ClaimRejected(ActiveCabin),
    #[error("node is not operational")]
    NotOperational,
    #[error("command from {issuer} but {leader} is leading")]
    NotLeader { issuer: ConsistId, leader: ConsistId },
}

/// Protocol timing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneParams {
    pub beacon_interval_ms: u64,
    /// Beacon intervals without table changes before discovery converges.
    pub quiet_intervals: u32,
    /// Heartbeats a consist may miss before it is declared silent.
    pub miss_budget: u32,
    /// Intervals the claim set must be stable before committing a cabin.
    pub claim_settle_intervals: u32,
}

impl Default for BackboneParams {
    fn default() -> Self {
        BackboneParams {
            beacon_interval_ms: 100,
            quiet_intervals: 3,
            miss_budget: 5,
            claim_settle_intervals: 2,
        }
    }
}

impl BackboneParams {
    pub fn beacon_interval(&self) -> SimTime {
        SimTime::from_millis(self.beacon_interval_ms)
    }

    pub fn quiet_period(&self) -> SimTime {
        SimTime::from_millis(self.beacon_interval_ms * u64::from(self.quiet_intervals))
    }

    /// Silence longer than this raises a supervision verdict.
    pub fn miss_window(&self) -> SimTime {
        SimTime::from_millis(self.beacon_interval_ms * u64::from(self.miss_budget))
    }

    pub fn settle_period(&self) -> SimTime {
        SimTime::from_millis(self.beacon_interval_ms * u64::from(self.claim_settle_intervals))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Discovering,
    TndReady,
    Operational,
    Inhibited,
    IntegrityFault,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Idle => "idle",
            Phase::Discovering => "discovering",
            Phase::TndReady => "tnd_ready",
            Phase::Operational => "operational",
            Phase::Inhibited => "inhibited",
            Phase::IntegrityFault => "integrity_fault",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize)]
pub struct InhibitState {
    /// Bumped by every accepted inhibit or release command.
    pub epoch: u32,
    pub inhibited: bool,
}

/// Node state carried by every control frame; receivers merge it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Gossip {
    pub sender: ConsistId,
    pub generation: u32,
    pub phase: Phase,
    pub reports: Vec<AdjacencyReport>,
    pub claims: Vec<CabinClaim>,
    pub otd: Option<OperationalTrainDirectory>,
    pub inhibit: InhibitState,
    pub last_seen: Vec<(ConsistId, SimTime)>,
    pub integrity_fault: bool,
}

impl Gossip {
    /// Nominal encoded size in bytes, used for airtime.
    pub fn wire_size(&self) -> u32 {
        let otd = self
            .otd
            .as_ref()
            .map_or(0, |o| 23 + 8 * o.tnd.len() as u32);
        32 + 26 * self.reports.len() as u32
            + 16 * self.claims.len() as u32
            + otd
            + 12 * self.last_seen.len() as u32
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Beacon,
    AdjacencyReport,
    DirectorySync,
    CabinClaim,
    InhibitCmd,
    AppData,
}

impl FrameKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameKind::Beacon => "beacon",
            FrameKind::AdjacencyReport => "adjacency_report",
            FrameKind::DirectorySync => "directory_sync",
            FrameKind::CabinClaim => "cabin_claim",
            FrameKind::InhibitCmd => "inhibit_cmd",
            FrameKind::AppData => "app_data",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AppPayload {
    pub flow: usize,
    pub frame_id: u64,
    pub created: SimTime,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FrameBody {
    Control(Box<Gossip>),
    App(AppPayload),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneFrame {
    pub kind: FrameKind,
    pub source: ConsistId,
    /// `None` for broadcasts.
    pub destination: Option<ConsistId>,
    /// Node-to-node path for unicast frames, endpoints included.
    pub hops: Vec<ConsistId>,
    pub payload_bytes: u32,
    pub body: FrameBody,
}

impl BackboneFrame {
    pub fn control(kind: FrameKind, gossip: Gossip) -> Self {
        BackboneFrame {
            kind,
            source: gossip.sender,
            destination: None,
            hops: Vec::new(),
            payload_bytes: gossip.wire_size(),
            body: FrameBody::Control(Box::new(gossip)),
        }
    }

    pub fn app(source: ConsistId, destination: ConsistId, hops: Vec<ConsistId>, bytes: u32, payload: AppPayload) -> Self {
        BackboneFrame {
            kind: FrameKind::AppData,
            source,
            destination: Some(destination),
            hops,
            payload_bytes: bytes,
            body: FrameBody::App(payload),
        }
    }
}
