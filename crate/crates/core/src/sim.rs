//! Scenario runner: backbone nodes, the radio link layer, fault injection
//! and traffic generators driven by one event scheduler.
//!
//! Radio model: every node owns a FIFO transmit queue served at the net
//! throughput of the configured MCS. Control frames are broadcast and each
//! receiver in range draws its own loss; application frames travel node to
//! node along the hop list chosen by the source node. Draws come from the
//! transmitting node's random stream. There is no medium contention.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use log::warn;
use serde::Serialize;
use thiserror::Error;

use crate::backbone::{
    route, AppPayload, BackboneFrame, CabinClaim, FrameBody, InaugurationError,
    OperationalTrainDirectory, Phase, RouteError, Wltbn,
};
use crate::channel::{
    airtime, free_space_loss_at_1m_db, max_range_m, per, snr, snr_for_per, LinkBudget,
    McsProfile,
};
use crate::engine::{EventKind, RngStream, Scheduler, SimTime, TargetId, TraceDigest, TraceRecord};
use crate::scenario::{FaultSpec, Scenario};
use crate::topology::{
    couple, coupler_adjacency, decouple, read_secondary_channel, ConsistId, End, Orientation,
    PipeFault, TrainComposition,
};
use crate::traffic::{
    spawn_flows, verdict, write_report_csv, FlowRecord, Pattern, ScenarioMeta, TrafficError,
    VerdictReport,
};

/// Process exit codes of a run.
pub mod exit_code {
    pub const OK: i32 = 0;
    pub const GENERIC: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const LENGTH_MISMATCH: i32 = 10;
    pub const CABIN_CONFLICT: i32 = 11;
    pub const UNROUTABLE: i32 = 12;
    pub const CHANNEL_FAULT: i32 = 13;
    pub const INTEGRITY_FAULT: i32 = 14;
    pub const NOT_OPERATIONAL: i32 = 15;
    pub const UNKNOWN_ENDPOINT: i32 = 16;
    pub const INCONSISTENT_ADJACENCY: i32 = 17;
    pub const VERDICT_FAIL: i32 = 20;
}

/// Device to node latency on the consist network, each way.
pub const WIRED_LATENCY: SimTime = SimTime::from_micros(50);
/// Outstanding frames of a bulk sender.
pub const BULK_WINDOW: u64 = 2;
/// Gap between separate trains on the track.
pub const TRAIN_SEPARATION_M: f64 = 1000.0;

const FLOW_TARGET_BASE: TargetId = 1_000_000;
const JITTER_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunFailure {
    #[error(transparent)]
    Inauguration(InaugurationError),
    #[error(transparent)]
    Traffic(TrafficError),
    #[error("{count} frames could not be routed")]
    Unroutable { count: u64 },
    #[error("train integrity lost")]
    IntegrityFault,
    #[error("{failed} of {total} flows violated their requirements")]
    Verdict { failed: usize, total: usize },
}

impl RunFailure {
    pub fn exit_code(&self) -> i32 {
        use InaugurationError as E;
        match self {
            RunFailure::Inauguration(e) => match e {
                E::LengthMismatch { .. } => exit_code::LENGTH_MISMATCH,
                E::ChannelFault => exit_code::CHANNEL_FAULT,
                E::CabinConflict { .. } => exit_code::CABIN_CONFLICT,
                E::InconsistentAdjacency { .. } => exit_code::INCONSISTENT_ADJACENCY,
                _ => exit_code::NOT_OPERATIONAL,
            },
            RunFailure::Traffic(TrafficError::UnknownEndpoint { .. }) => exit_code::UNKNOWN_ENDPOINT,
            RunFailure::Traffic(_) => exit_code::GENERIC,
            RunFailure::Unroutable { .. } => exit_code::UNROUTABLE,
            RunFailure::IntegrityFault => exit_code::INTEGRITY_FAULT,
            RunFailure::Verdict { .. } => exit_code::VERDICT_FAIL,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Replaces `run.seed`.
    pub seed: Option<u64>,
    /// Keep the per-event trace.
    pub trace: bool,
    /// Skip traffic generation (inauguration only).
    pub no_traffic: bool,
}

#[derive(Clone, Debug)]
enum Ev {
    Start(ConsistId),
    Tick(ConsistId),
    TxDone(ConsistId, u32),
    Claim(usize),
    Fault(usize),
    LinkUp(usize),
    FlowSend(usize),
    Ingress { flow: usize, frame_id: u64, created: SimTime },
    Egress { flow: usize, frame_id: u64, created: SimTime, bytes: u32 },
}

impl EventKind for Ev {
    fn kind(&self) -> &'static str {
        match self {
            Ev::Start(_) => "start",
            Ev::Tick(_) => "tick",
            Ev::TxDone(..) => "tx_done",
            Ev::Claim(_) => "cabin_claim",
            Ev::Fault(_) => "fault",
            Ev::LinkUp(_) => "link_up",
            Ev::FlowSend(_) => "flow_send",
            Ev::Ingress { .. } => "ingress",
            Ev::Egress { .. } => "egress",
        }
    }
}

struct Outgoing {
    frame: BackboneFrame,
    /// Index of the receiving hop for unicast frames.
    next: usize,
    attempts: u8,
}

struct NodeSlot {
    node: Wltbn,
    alive: bool,
    queue: VecDeque<Outgoing>,
    busy: bool,
    /// Bumped on kill and revive so stale transmissions are ignored.
    epoch: u32,
    rng: RngStream,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RadioStats {
    pub transmissions: u64,
    pub receptions: u64,
    pub losses: u64,
}

#[derive(Clone, Debug, Default)]
struct FlowState {
    next_frame: u64,
    paced: bool,
}

/// A running scenario. Advance it with [`Simulation::run_until`] or
/// [`Simulation::run_to_end`].
pub struct Simulation {
    scenario: Scenario,
    seed: u64,
    end: SimTime,
    sched: Scheduler<Ev>,
    trains: Vec<TrainComposition>,
    pipe_fault: PipeFault,
    nodes: BTreeMap<ConsistId, NodeSlot>,
    links_down: BTreeMap<(ConsistId, ConsistId), u32>,
    mcs: McsProfile,
    budget: LinkBudget,
    range_m: f64,
    traffic: bool,
    flows: Vec<FlowRecord>,
    flow_state: Vec<FlowState>,
    flows_spawned: bool,
    traffic_failure: Option<TrafficError>,
    unroutable: u64,
    claim_seq: u64,
    command_errors: Vec<(SimTime, String)>,
    stats: RadioStats,
}

impl Simulation {
    pub fn new(scenario: Scenario, opts: &RunOptions) -> Self {
        let seed = opts.seed.unwrap_or(scenario.run.seed);
        let mut sched = Scheduler::new();
        sched.record_trace(opts.trace);
        let radio = &scenario.radio;
        let mcs = McsProfile::new(radio.mcs, &radio.calibration());
        let carrier = radio
            .band
            .map_or_else(|| scenario.channel.scenario.carrier_ghz(), |b| b.centre_ghz());
        let budget = LinkBudget {
            tx_power_dbm: radio.tx_power_dbm,
            noise_floor_dbm: radio.noise_floor_dbm,
            path_loss_exponent: scenario.channel.path_loss_exponent(),
            reference_loss_db_at_1m: free_space_loss_at_1m_db(carrier),
            distance_m: 1.0,
        };
        let range_m = radio
            .max_range_m
            .unwrap_or_else(|| max_range_m(&budget, snr_for_per(&mcs, 0.5)));
        let train = scenario.composition();
        let params = scenario.backbone;
        let interval = params.beacon_interval().as_micros().max(1);

        let mut nodes = BTreeMap::new();
        for c in train.consists.iter().filter(|c| c.has_live_node()) {
            let adj = coupler_adjacency(&train, c.id).expect("consist is in the train");
            let offset = RngStream::new(seed, JITTER_STREAM_BASE + u64::from(c.id.0)).below(interval);
            sched
                .schedule(SimTime::from_micros(offset), c.id.0, Ev::Start(c.id))
                .expect("start is in the future");
            nodes.insert(
                c.id,
                NodeSlot {
                    node: Wltbn::new(adj, params),
                    alive: true,
                    queue: VecDeque::new(),
                    busy: false,
                    epoch: 0,
                    rng: RngStream::new(seed, u64::from(c.id.0)),
                },
            );
        }
        for (i, c) in scenario.cabin_claims.iter().enumerate() {
            sched
                .schedule(SimTime::from_secs_f64(c.at), c.consist, Ev::Claim(i))
                .expect("claim time is non-negative");
        }
        for (i, f) in scenario.faults.iter().enumerate() {
            sched
                .schedule(SimTime::from_secs_f64(f.at()), 0, Ev::Fault(i))
                .expect("fault time is non-negative");
        }

        Simulation {
            end: scenario.duration(),
            pipe_fault: scenario.train.pipe_fault,
            seed,
            sched,
            trains: vec![train],
            nodes,
            links_down: BTreeMap::new(),
            mcs,
            budget,
            range_m,
            traffic: !opts.no_traffic,
            flows: Vec::new(),
            flow_state: Vec::new(),
            flows_spawned: false,
            traffic_failure: None,
            unroutable: 0,
            claim_seq: 0,
            command_errors: Vec::new(),
            stats: RadioStats::default(),
            scenario,
        }
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    pub fn end(&self) -> SimTime {
        self.end
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn range_m(&self) -> f64 {
        self.range_m
    }

    pub fn node(&self, id: ConsistId) -> Option<&Wltbn> {
        self.nodes.get(&id).map(|s| &s.node)
    }

    pub fn is_alive(&self, id: ConsistId) -> bool {
        self.nodes.get(&id).is_some_and(|s| s.alive)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Wltbn> {
        self.nodes.values().map(|s| &s.node)
    }

    pub fn trains(&self) -> &[TrainComposition] {
        &self.trains
    }

    pub fn flows(&self) -> &[FlowRecord] {
        &self.flows
    }

    pub fn command_errors(&self) -> &[(SimTime, String)] {
        &self.command_errors
    }

    /// Hop list the source node would use right now.
    pub fn route_between(&self, from: ConsistId, to: ConsistId) -> Result<Vec<ConsistId>, RouteError> {
        let slot = self
            .nodes
            .get(&from)
            .filter(|s| s.alive)
            .ok_or(RouteError::Unroutable { from, to })?;
        let otd = slot.node.otd().ok_or(RouteError::Unroutable { from, to })?;
        route(
            from,
            to,
            &otd.tnd,
            |c| slot.node.considers_live(c),
            self.scenario.train.vehicle_length_m,
            self.range_m,
        )
    }

    /// Processes every event due up to `t` (capped at the scenario end).
    pub fn run_until(&mut self, t: SimTime) -> u64 {
        let t = t.min(self.end);
        let mut steps = 0;
        while let Some(ev) = self.sched.pop_until(t) {
            self.handle(ev.payload);
            steps += 1;
        }
        if self.sched.now() < t {
            self.sched.run_until(t, |_, _| {});
        }
        steps
    }

    pub fn run_to_end(mut self) -> RunOutcome {
        self.run_until(self.end);
        self.finish()
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::Start(c) => self.on_start(c),
            Ev::Tick(c) => self.on_tick(c),
            Ev::TxDone(c, epoch) => self.on_tx_done(c, epoch),
            Ev::Claim(i) => self.on_claim(i),
            Ev::Fault(i) => self.on_fault(i),
            Ev::LinkUp(i) => {
                if let FaultSpec::LinkDown { a, b, .. } = self.scenario.faults[i] {
                    let key = link_key(ConsistId(a), ConsistId(b));
                    if let Some(n) = self.links_down.get_mut(&key) {
                        *n -= 1;
                        if *n == 0 {
                            self.links_down.remove(&key);
                        }
                    }
                }
            }
            Ev::FlowSend(i) => self.on_flow_send(i),
            Ev::Ingress { flow, frame_id, created } => self.on_ingress(flow, frame_id, created),
            Ev::Egress { flow, frame_id, created, bytes } => {
                let now = self.now();
                self.flows[flow].record_delivery(frame_id, bytes, now.saturating_sub(created));
                self.refill(flow, SimTime::ZERO);
            }
        }
    }

    fn on_start(&mut self, c: ConsistId) {
        let now = self.now();
        let interval = self.scenario.backbone.beacon_interval();
        let Some(slot) = self.nodes.get_mut(&c) else { return };
        if slot.alive {
            let frames = slot.node.start_discovery(now);
            self.send_all(c, frames);
        }
        self.sched.schedule_in(interval, c.0, Ev::Tick(c));
    }

    fn on_tick(&mut self, c: ConsistId) {
        let now = self.now();
        let interval = self.scenario.backbone.beacon_interval();
        self.sched.schedule_in(interval, c.0, Ev::Tick(c));
        let train = self.train_of(c).cloned();
        let fault = self.pipe_fault;
        let Some(slot) = self.nodes.get_mut(&c) else { return };
        if !slot.alive {
            return;
        }
        let frames = slot.node.on_tick(now, || {
            let t = train.ok_or(crate::topology::TopologyError::UnknownConsist(c))?;
            read_secondary_channel(&t, fault)
        });
        self.send_all(c, frames);
        self.maybe_spawn_flows(c);
    }

    fn send_all(&mut self, from: ConsistId, frames: Vec<BackboneFrame>) {
        for frame in frames {
            self.enqueue(from, Outgoing { frame, next: 0, attempts: 0 });
        }
    }

    fn enqueue(&mut self, at: ConsistId, out: Outgoing) {
        let Some(slot) = self.nodes.get_mut(&at) else { return };
        if !slot.alive {
            if let FrameBody::App(p) = out.frame.body {
                self.drop_app(p, SimTime::ZERO);
            }
            return;
        }
        slot.queue.push_back(out);
        self.kick(at);
    }

    fn kick(&mut self, at: ConsistId) {
        let rate = self.mcs.net_throughput_mbps;
        let Some(slot) = self.nodes.get_mut(&at) else { return };
        if slot.busy || !slot.alive {
            return;
        }
        let Some(head) = slot.queue.front() else { return };
        slot.busy = true;
        let air = airtime(head.frame.payload_bytes.max(1), rate);
        let epoch = slot.epoch;
        self.sched.schedule_in(air, at.0, Ev::TxDone(at, epoch));
    }

    fn on_tx_done(&mut self, from: ConsistId, epoch: u32) {
        let Some(slot) = self.nodes.get_mut(&from) else { return };
        if slot.epoch != epoch || !slot.alive {
            return;
        }
        slot.busy = false;
        let Some(mut out) = slot.queue.pop_front() else { return };
        self.stats.transmissions += 1;
        match &out.frame.body {
            FrameBody::Control(g) => {
                let receivers: Vec<ConsistId> = self
                    .nodes
                    .iter()
                    .filter(|(id, s)| **id != from && s.alive)
                    .map(|(id, _)| *id)
                    .collect();
                let g = g.clone();
                for r in receivers {
                    if !self.radio_hop(from, r) {
                        continue;
                    }
                    let now = self.now();
                    let frames = self
                        .nodes
                        .get_mut(&r)
                        .expect("receiver exists")
                        .node
                        .on_gossip(now, &g);
                    self.send_all(r, frames);
                    self.maybe_spawn_flows(r);
                }
            }
            FrameBody::App(p) => {
                let p = *p;
                let to = out.frame.hops[out.next];
                let delivered = self.nodes.get(&to).is_some_and(|s| s.alive) && self.radio_hop(from, to);
                if delivered {
                    if out.next + 1 == out.frame.hops.len() {
                        let flow = p.flow;
                        self.sched.schedule_in(
                            WIRED_LATENCY,
                            FLOW_TARGET_BASE + flow as TargetId,
                            Ev::Egress {
                                flow,
                                frame_id: p.frame_id,
                                created: p.created,
                                bytes: out.frame.payload_bytes,
                            },
                        );
                    } else {
                        out.next += 1;
                        out.attempts = 0;
                        self.enqueue(to, out);
                    }
                } else if self.scenario.radio.resend_once && out.attempts == 0 {
                    out.attempts = 1;
                    let slot = self.nodes.get_mut(&from).expect("sender exists");
                    slot.queue.push_front(out);
                } else {
                    self.drop_app(p, SimTime::ZERO);
                }
            }
        }
        self.kick(from);
    }

    /// One transmission attempt from `a` to `b`: range, link state and a
    /// loss draw from the sender's stream.
    fn radio_hop(&mut self, a: ConsistId, b: ConsistId) -> bool {
        if self.links_down.contains_key(&link_key(a, b)) {
            return false;
        }
        let (Some(pa), Some(pb)) = (self.position(a), self.position(b)) else {
            return false;
        };
        let d = (pa - pb).abs();
        if d > self.range_m {
            return false;
        }
        let p = self
            .scenario
            .radio
            .per_override
            .unwrap_or_else(|| per(&self.mcs, snr(&self.budget.at_distance(d))));
        let slot = self.nodes.get_mut(&a).expect("sender exists");
        if slot.rng.bernoulli(p) {
            self.stats.losses += 1;
            false
        } else {
            self.stats.receptions += 1;
            true
        }
    }

    fn train_of(&self, c: ConsistId) -> Option<&TrainComposition> {
        self.trains.iter().find(|t| t.index_of(c).is_some())
    }

    /// Centre of the consist along the track.
    fn position(&self, c: ConsistId) -> Option<f64> {
        let vlen = self.scenario.train.vehicle_length_m;
        let mut offset = 0.0;
        for t in &self.trains {
            for k in &t.consists {
                let len = f64::from(k.vehicle_count()) * vlen;
                if k.id == c {
                    return Some(offset + len / 2.0);
                }
                offset += len;
            }
            offset += TRAIN_SEPARATION_M;
        }
        None
    }

    fn on_claim(&mut self, i: usize) {
        let now = self.now();
        let spec = self.scenario.cabin_claims[i].clone();
        let c = ConsistId(spec.consist);
        let claim = CabinClaim {
            cabin: spec.cabin(),
            issued: now,
            seq: self.claim_seq,
        };
        self.claim_seq += 1;
        let Some(slot) = self.nodes.get_mut(&c).filter(|s| s.alive) else {
            self.command_error(format!("cabin claim on {c}: no live backbone node"));
            return;
        };
        match slot.node.claim_cabin(now, claim) {
            Ok(frames) => self.send_all(c, frames),
            Err(e) => self.command_error(format!("cabin claim on {c}: {e}")),
        }
    }

    fn command_error(&mut self, msg: String) {
        warn!("{}: {msg}", self.now());
        self.command_errors.push((self.now(), msg));
    }

    fn on_fault(&mut self, i: usize) {
        let now = self.now();
        match self.scenario.faults[i] {
            FaultSpec::Kill { consist, .. } => {
                let c = ConsistId(consist);
                let Some(slot) = self.nodes.get_mut(&c) else { return };
                slot.alive = false;
                slot.busy = false;
                slot.epoch += 1;
                let lost: Vec<AppPayload> = slot
                    .queue
                    .drain(..)
                    .filter_map(|o| match o.frame.body {
                        FrameBody::App(p) => Some(p),
                        FrameBody::Control(_) => None,
                    })
                    .collect();
                for p in lost {
                    self.drop_app(p, SimTime::ZERO);
                }
            }
            FaultSpec::Revive { consist, .. } => {
                let c = ConsistId(consist);
                let params = self.scenario.backbone;
                let adj = self.train_of(c).and_then(|t| coupler_adjacency(t, c).ok());
                let (Some(slot), Some(adj)) = (self.nodes.get_mut(&c), adj) else { return };
                if slot.alive {
                    return;
                }
                slot.node = Wltbn::new(adj, params);
                slot.alive = true;
                slot.busy = false;
                slot.epoch += 1;
                let frames = slot.node.start_discovery(now);
                self.send_all(c, frames);
            }
            FaultSpec::LinkDown { a, b, duration, .. } => {
                *self.links_down.entry(link_key(ConsistId(a), ConsistId(b))).or_default() += 1;
                self.sched
                    .schedule_in(SimTime::from_secs_f64(duration), 0, Ev::LinkUp(i));
            }
            FaultSpec::Decouple { after, .. } => {
                let c = ConsistId(after);
                let Some(ti) = self.trains.iter().position(|t| t.index_of(c).is_some()) else {
                    return;
                };
                let joint = self.trains[ti].index_of(c).expect("found above") + 1;
                match decouple(&self.trains[ti], joint) {
                    Ok((head, tail)) => {
                        self.trains.splice(ti..=ti, [head, tail]);
                        self.refresh_adjacency();
                    }
                    Err(e) => self.command_error(format!("decouple after {c}: {e}")),
                }
            }
            FaultSpec::Couple { consist, with, reversed, .. } => {
                let find = |id: u32| self.trains.iter().position(|t| t.index_of(ConsistId(id)).is_some());
                let (Some(ta), Some(tb)) = (find(consist), find(with)) else { return };
                if ta == tb {
                    self.command_error(format!("couple: C{consist} and C{with} are already one train"));
                    return;
                }
                let o = if reversed { Orientation::Reversed } else { Orientation::Forward };
                let joined = couple(&self.trains[ta], &self.trains[tb], End::Rear, o);
                self.trains[ta] = joined;
                self.trains.remove(tb);
                self.refresh_adjacency();
            }
            FaultSpec::Inhibit { issuer, .. } => self.inhibit_cmd(ConsistId(issuer), true),
            FaultSpec::Uninhibit { issuer, .. } => self.inhibit_cmd(ConsistId(issuer), false),
            FaultSpec::SetPipe { fault, .. } => self.pipe_fault = fault,
        }
    }

    fn inhibit_cmd(&mut self, issuer: ConsistId, on: bool) {
        let now = self.now();
        let Some(slot) = self.nodes.get_mut(&issuer).filter(|s| s.alive) else {
            self.command_error(format!("inhibit from {issuer}: no live backbone node"));
            return;
        };
        match slot.node.inhibit(now, issuer, on) {
            Ok(frames) => self.send_all(issuer, frames),
            Err(e) => self.command_error(format!("inhibit from {issuer}: {e}")),
        }
    }

    fn refresh_adjacency(&mut self) {
        for t in &self.trains {
            for k in &t.consists {
                if let Some(slot) = self.nodes.get_mut(&k.id) {
                    slot.node
                        .set_adjacency(coupler_adjacency(t, k.id).expect("consist is in its train"));
                }
            }
        }
    }

    fn maybe_spawn_flows(&mut self, at: ConsistId) {
        if self.flows_spawned || !self.traffic {
            return;
        }
        // Traffic starts once the whole train is operational.
        if self.nodes.values().any(|s| s.alive && s.node.otd().is_none()) {
            return;
        }
        let Some(otd) = self.nodes.get(&at).and_then(|s| s.node.otd()).cloned() else {
            return;
        };
        self.flows_spawned = true;
        let now = self.now();
        match spawn_flows(&self.scenario.flow_specs(), &otd) {
            Ok(flows) => {
                for (i, f) in flows.iter().enumerate() {
                    let start = f.spec.start.max(now);
                    if start < self.end {
                        self.sched
                            .schedule(start, FLOW_TARGET_BASE + i as TargetId, Ev::FlowSend(i))
                            .expect("start is not in the past");
                    }
                }
                self.flow_state = flows
                    .iter()
                    .map(|f| FlowState {
                        next_frame: 0,
                        paced: f.spec.profile.pattern != Pattern::Bulk,
                    })
                    .collect();
                self.flows = flows;
            }
            Err(e) => {
                warn!("{e}");
                self.traffic_failure = Some(e);
            }
        }
    }

    fn on_flow_send(&mut self, i: usize) {
        let now = self.now();
        if now >= self.end {
            return;
        }
        if self.flow_state[i].paced {
            self.emit(i);
            let step = self.flows[i]
                .spec
                .profile
                .send_interval()
                .expect("paced flow has an interval")
                .max(SimTime::from_micros(1));
            if now + step < self.end {
                self.sched.schedule_in(step, FLOW_TARGET_BASE + i as TargetId, Ev::FlowSend(i));
            }
        } else {
            while self.flows[i].in_flight() < BULK_WINDOW {
                self.emit(i);
            }
        }
    }

    fn emit(&mut self, i: usize) {
        let now = self.now();
        let frame_id = self.flow_state[i].next_frame;
        self.flow_state[i].next_frame += 1;
        self.flows[i].on_send(now);
        self.sched.schedule_in(
            WIRED_LATENCY,
            FLOW_TARGET_BASE + i as TargetId,
            Ev::Ingress { flow: i, frame_id, created: now },
        );
    }

    fn on_ingress(&mut self, flow: usize, frame_id: u64, created: SimTime) {
        let payload = AppPayload { flow, frame_id, created };
        let spec = &self.flows[flow].spec;
        let (src, dst) = (spec.source.consist, spec.destination.consist);
        let bytes = spec.profile.payload_bytes;
        let retry = self.scenario.backbone.beacon_interval();
        if !self.nodes.get(&src).is_some_and(|s| s.alive && s.node.otd().is_some()) {
            self.drop_app(payload, retry);
            return;
        }
        if src == dst {
            self.sched.schedule_in(
                WIRED_LATENCY,
                FLOW_TARGET_BASE + flow as TargetId,
                Ev::Egress { flow, frame_id, created, bytes },
            );
            return;
        }
        match self.route_between(src, dst) {
            Ok(hops) => {
                let frame = BackboneFrame::app(src, dst, hops, bytes, payload);
                self.enqueue(src, Outgoing { frame, next: 1, attempts: 0 });
            }
            Err(_) => {
                self.unroutable += 1;
                self.flows[flow].unroutable += 1;
                self.drop_app(payload, retry);
            }
        }
    }

    fn drop_app(&mut self, p: AppPayload, refill_after: SimTime) {
        if self.flows[p.flow].record_drop(p.frame_id) {
            self.refill(p.flow, refill_after);
        }
    }

    fn refill(&mut self, flow: usize, after: SimTime) {
        if self.flow_state[flow].paced || self.now() >= self.end {
            return;
        }
        if after == SimTime::ZERO {
            if self.flows[flow].in_flight() < BULK_WINDOW {
                self.emit(flow);
            }
        } else {
            self.sched
                .schedule_in(after, FLOW_TARGET_BASE + flow as TargetId, Ev::FlowSend(flow));
        }
    }

    pub fn finish(mut self) -> RunOutcome {
        let end = self.now();
        for f in &mut self.flows {
            f.finish(end);
        }
        let report = verdict(
            &self.flows,
            ScenarioMeta {
                name: self.scenario.display_name().to_string(),
                seed: self.seed,
                duration_s: self.scenario.run.duration,
            },
        );
        let nodes: Vec<NodeSummary> = self
            .nodes
            .iter()
            .map(|(id, s)| NodeSummary {
                consist: *id,
                alive: s.alive,
                phase: s.node.phase(),
                generation: s.node.generation(),
                reached_operational: s.node.reached_operational(),
                integrity_fault: s.node.integrity_fault(),
                hold: s.node.hold().cloned(),
                tnd_bytes: s.node.tnd().map(|t| t.encode()),
                otd: s.node.otd().cloned(),
            })
            .collect();
        let failure = self.judge(&nodes, &report);
        RunOutcome {
            scenario: self.scenario.display_name().to_string(),
            seed: self.seed,
            end,
            steps: self.sched.steps(),
            digest: self.sched.digest(),
            trace: self.sched.trace().map(<[TraceRecord]>::to_vec),
            nodes,
            flows: self.flows,
            report,
            failure,
            unroutable: self.unroutable,
            radio: self.stats,
            command_errors: self.command_errors,
        }
    }

    fn judge(&self, nodes: &[NodeSummary], report: &VerdictReport) -> Option<RunFailure> {
        let live: Vec<&NodeSummary> = nodes.iter().filter(|n| n.alive).collect();
        if let Some(e) = live.iter().find_map(|n| match &n.hold {
            Some(e @ InaugurationError::CabinConflict { .. }) => Some(e.clone()),
            _ => None,
        }) {
            return Some(RunFailure::Inauguration(e));
        }
        if live.is_empty() || live.iter().any(|n| n.otd.is_none()) {
            let e = live
                .iter()
                .filter(|n| n.otd.is_none())
                .find_map(|n| n.hold.clone())
                .unwrap_or(InaugurationError::NotOperational);
            return Some(RunFailure::Inauguration(e));
        }
        if live.iter().any(|n| n.integrity_fault) {
            return Some(RunFailure::IntegrityFault);
        }
        if let Some(e) = &self.traffic_failure {
            return Some(RunFailure::Traffic(e.clone()));
        }
        if self.unroutable > 0 {
            return Some(RunFailure::Unroutable { count: self.unroutable });
        }
        let failed = report.flows.iter().filter(|f| !f.pass()).count();
        if failed > 0 {
            return Some(RunFailure::Verdict {
                failed,
                total: report.flows.len(),
            });
        }
        None
    }
}

fn link_key(a: ConsistId, b: ConsistId) -> (ConsistId, ConsistId) {
    (a.min(b), a.max(b))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeSummary {
    pub consist: ConsistId,
    pub alive: bool,
    pub phase: Phase,
    pub generation: u32,
    pub reached_operational: bool,
    pub integrity_fault: bool,
    pub hold: Option<InaugurationError>,
    pub tnd_bytes: Option<Vec<u8>>,
    pub otd: Option<OperationalTrainDirectory>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub scenario: String,
    pub seed: u64,
    pub end: SimTime,
    pub steps: u64,
    pub digest: TraceDigest,
    pub trace: Option<Vec<TraceRecord>>,
    pub nodes: Vec<NodeSummary>,
    pub flows: Vec<FlowRecord>,
    pub report: VerdictReport,
    pub failure: Option<RunFailure>,
    pub unroutable: u64,
    pub radio: RadioStats,
    pub command_errors: Vec<(SimTime, String)>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        self.failure.as_ref().map_or(exit_code::OK, RunFailure::exit_code)
    }

    /// Directory held by the first live operational node.
    pub fn otd(&self) -> Option<&OperationalTrainDirectory> {
        self.nodes.iter().filter(|n| n.alive).find_map(|n| n.otd.as_ref())
    }

    /// Whether every live node holds byte-identical directories.
    pub fn directories_agree(&self) -> bool {
        let live: Vec<&NodeSummary> = self.nodes.iter().filter(|n| n.alive).collect();
        let Some(first) = live.first() else { return true };
        let otd = first.otd.as_ref().map(OperationalTrainDirectory::encode);
        live.iter().all(|n| {
            n.tnd_bytes == first.tnd_bytes && n.otd.as_ref().map(OperationalTrainDirectory::encode) == otd
        })
    }
}

/// Runs a scenario to its configured duration.
pub fn run(scenario: Scenario, opts: &RunOptions) -> RunOutcome {
    Simulation::new(scenario, opts).run_to_end()
}

/// Human-readable operational directory.
pub fn format_otd_table(otd: &OperationalTrainDirectory) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "generation {}  active cabin {}/{}  leading {}  trailing {}  inhibited {}",
        otd.tnd.generation,
        otd.active_cabin.consist,
        otd.active_cabin.vehicle,
        otd.leading,
        otd.trailing,
        if otd.inhibited { "yes" } else { "no" },
    );
    let _ = writeln!(s, "{:<4} {:<8} {:<12} {:<9} {:<9} role", "pos", "consist", "orientation", "vehicles", "equipped");
    for (i, e) in otd.tnd.entries.iter().enumerate() {
        let role = if e.consist == otd.leading {
            "leading"
        } else if e.consist == otd.trailing {
            "trailing"
        } else {
            ""
        };
        let _ = writeln!(
            s,
            "{:<4} {:<8} {:<12} {:<9} {:<9} {role}",
            i + 1,
            e.consist.to_string(),
            e.orientation.as_str(),
            e.vehicles,
            if e.equipped { "yes" } else { "no" },
        );
    }
    s
}

/// Per-node phase table.
pub fn format_node_table(nodes: &[NodeSummary]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<8} {:<6} {:<16} {:<10} hold", "consist", "alive", "phase", "generation");
    for n in nodes {
        let _ = writeln!(
            s,
            "{:<8} {:<6} {:<16} {:<10} {}",
            n.consist.to_string(),
            if n.alive { "yes" } else { "no" },
            n.phase.as_str(),
            n.generation,
            n.hold.as_ref().map(ToString::to_string).unwrap_or_default(),
        );
    }
    s
}

/// Files written for one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunArtifacts {
    pub report_csv: PathBuf,
    pub trace: Option<PathBuf>,
    pub digest: TraceDigest,
    pub exit_code: i32,
}

/// Writes `report.csv`, `digest.txt`, `nodes.txt`, `otd.txt` (when a
/// directory exists) and `trace.tsv` (when traced) under `dir`.
pub fn write_artifacts(outcome: &RunOutcome, dir: &Path) -> io::Result<RunArtifacts> {
    fs::create_dir_all(dir)?;
    let report_csv = dir.join("report.csv");
    write_report_csv(&outcome.report, fs::File::create(&report_csv)?).map_err(io::Error::other)?;
    fs::write(dir.join("digest.txt"), format!("{}\n", outcome.digest))?;
    fs::write(dir.join("nodes.txt"), format_node_table(&outcome.nodes))?;
    if let Some(otd) = outcome.otd() {
        fs::write(dir.join("otd.txt"), format_otd_table(otd))?;
    }
    let trace = match &outcome.trace {
        Some(log) => {
            let path = dir.join("trace.tsv");
            let mut text = String::with_capacity(log.len() * 24);
            for r in log {
                let _ = writeln!(text, "{r}");
            }
            fs::write(&path, text)?;
            Some(path)
        }
        None => None,
    };
    Ok(RunArtifacts {
        report_csv,
        trace,
        digest: outcome.digest,
        exit_code: outcome.exit_code(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::VALIDATION_3X4;

    fn validation(duration: f64) -> Scenario {
        let mut s = Scenario::parse(VALIDATION_3X4).unwrap();
        s.run.duration = duration;
        s
    }

    #[test]
    fn validation_scenario_runs_clean() {
        let out = run(validation(3.0), &RunOptions::default());
        assert_eq!(out.failure, None, "{}{:#?}", format_node_table(&out.nodes), out.report.flows);
        let otd = out.otd().unwrap();
        assert_eq!(otd.tnd.len(), 3);
        assert_eq!(otd.tnd.vehicle_count(), 12);
        assert_eq!(otd.active_cabin.consist, ConsistId(1));
        assert!(out.directories_agree());
        assert!(out.report.flows.iter().all(|f| f.delivered > 0));
    }

    #[test]
    fn same_seed_same_digest() {
        let a = run(validation(2.0), &RunOptions::default());
        let b = run(validation(2.0), &RunOptions::default());
        assert_eq!(a.digest, b.digest);
        assert_eq!(a.steps, b.steps);
    }

    #[test]
    fn trace_matches_digest() {
        let out = run(validation(1.0), &RunOptions { trace: true, ..Default::default() });
        let log = out.trace.as_ref().unwrap();
        assert_eq!(log.len() as u64, out.steps);
        assert_eq!(crate::engine::trace_digest(log), out.digest);
    }

    #[test]
    fn pipe_misreport_exit_code() {
        let mut s = validation(2.0);
        s.train.pipe_fault = PipeFault::Misreport { count: 4 };
        let out = run(s, &RunOptions::default());
        assert_eq!(out.exit_code(), exit_code::LENGTH_MISMATCH);
        assert!(out.nodes.iter().all(|n| !n.reached_operational));
    }

    #[test]
    fn severed_pipe_exit_code() {
        let mut s = validation(2.0);
        s.train.pipe_fault = PipeFault::Sever;
        assert_eq!(run(s, &RunOptions::default()).exit_code(), exit_code::CHANNEL_FAULT);
    }

    #[test]
    fn no_claim_is_pending() {
        let mut s = validation(2.0);
        s.cabin_claims.clear();
        let out = run(s, &RunOptions::default());
        assert_eq!(out.exit_code(), exit_code::NOT_OPERATIONAL);
        assert!(out.nodes.iter().all(|n| n.phase == Phase::TndReady));
    }

    #[test]
    fn unknown_endpoint_exit_code() {
        let mut s = validation(2.0);
        s.train.consists.pop();
        let out = run(s, &RunOptions::default());
        assert_eq!(out.exit_code(), exit_code::UNKNOWN_ENDPOINT);
    }

    #[test]
    fn conservation_holds() {
        let out = run(validation(2.0), &RunOptions::default());
        for f in &out.flows {
            assert!(f.delivered + f.dropped <= f.sent);
            assert_eq!(f.latencies_us.len() as u64, f.delivered);
        }
    }

    #[test]
    fn app_frames_cross_both_local_nodes() {
        let mut sim = Simulation::new(validation(3.0), &RunOptions::default());
        sim.run_until(SimTime::from_millis(2500));
        let hops = sim.route_between(ConsistId(1), ConsistId(3)).unwrap();
        assert_eq!(hops.first(), Some(&ConsistId(1)));
        assert_eq!(hops.last(), Some(&ConsistId(3)));
        assert_eq!(hops, vec![ConsistId(1), ConsistId(2), ConsistId(3)]);
    }

    #[test]
    fn otd_table_lists_roles() {
        let out = run(validation(2.0), &RunOptions { no_traffic: true, ..Default::default() });
        let table = format_otd_table(out.otd().unwrap());
        assert!(table.contains("active cabin C1/V101"));
        assert!(table.lines().nth(2).unwrap().contains("leading"));
        assert!(table.lines().nth(4).unwrap().contains("trailing"));
    }
}
