//! Train network directory (discovery output) and operational train
//! directory (active cabin, roles, inhibition), with their construction
//! rules and canonical byte encoding.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;

use super::InaugurationError;
use crate::engine::SimTime;
use crate::topology::{AdjacencyReport, ConsistId, End, Orientation, SecondaryChannelReading, VehicleId};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct TndEntry {
    pub consist: ConsistId,
    pub orientation: Orientation,
    pub vehicles: u32,
    pub equipped: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct TrainNetworkDirectory {
    /// Physical order from the directory head.
    pub entries: Vec<TndEntry>,
    pub generation: u32,
}

impl TrainNetworkDirectory {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn vehicle_count(&self) -> u32 {
        self.entries.iter().map(|e| e.vehicles).sum()
    }

    pub fn position(&self, id: ConsistId) -> Option<usize> {
        self.entries.iter().position(|e| e.consist == id)
    }

    pub fn contains(&self, id: ConsistId) -> bool {
        self.position(id).is_some()
    }

    pub fn entry(&self, id: ConsistId) -> Option<&TndEntry> {
        self.entries.iter().find(|e| e.consist == id)
    }

    /// Canonical layout, all integers big-endian:
    ///
    /// ```text
    /// generation u32 | count u16 | count x (consist u32, orientation u8,
    ///                                       vehicles u16, equipped u8)
    /// ```
    ///
    /// Orientation is 0 for forward and 1 for reversed.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 8 * self.entries.len());
        out.extend_from_slice(&self.generation.to_be_bytes());
        out.extend_from_slice(&(self.entries.len() as u16).to_be_bytes());
        for e in &self.entries {
            out.extend_from_slice(&e.consist.0.to_be_bytes());
            out.push(match e.orientation {
                Orientation::Forward => 0,
                Orientation::Reversed => 1,
            });
            out.extend_from_slice(&(e.vehicles as u16).to_be_bytes());
            out.push(u8::from(e.equipped));
        }
        out
    }

    /// Same directory with a different generation stamp.
    pub fn same_layout(&self, other: &TrainNetworkDirectory) -> bool {
        self.entries == other.entries
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct ActiveCabin {
    pub consist: ConsistId,
    pub vehicle: VehicleId,
}

impl fmt::Display for ActiveCabin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.consist, self.vehicle)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct OperationalTrainDirectory {
    pub tnd: TrainNetworkDirectory,
    pub active_cabin: ActiveCabin,
    pub leading: ConsistId,
    pub trailing: ConsistId,
    pub inhibited: bool,
}

impl OperationalTrainDirectory {
    /// Derives the leading/trailing roles from the cabin position. The
    /// trailing consist is the directory end farthest from the cabin.
    pub fn new(tnd: TrainNetworkDirectory, active_cabin: ActiveCabin) -> Self {
        let n = tnd.len();
        let i = tnd.position(active_cabin.consist).unwrap_or(0);
        let trailing = if i <= n - 1 - i {
            tnd.entries[n - 1].consist
        } else {
            tnd.entries[0].consist
        };
        OperationalTrainDirectory {
            tnd,
            active_cabin,
            leading: active_cabin.consist,
            trailing,
            inhibited: false,
        }
    }

    /// TND layout followed by `cabin consist u32 | cabin vehicle u32 |
    /// leading u32 | trailing u32 | inhibited u8`, big-endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.tnd.encode();
        out.extend_from_slice(&self.active_cabin.consist.0.to_be_bytes());
        out.extend_from_slice(&self.active_cabin.vehicle.0.to_be_bytes());
        out.extend_from_slice(&self.leading.0.to_be_bytes());
        out.extend_from_slice(&self.trailing.0.to_be_bytes());
        out.push(u8::from(self.inhibited));
        out
    }
}

fn inconsistent(consist: ConsistId, detail: impl Into<String>) -> InaugurationError {
    InaugurationError::InconsistentAdjacency {
        consist,
        detail: detail.into(),
    }
}

fn expected_relative(side: End, neighbor_end: End) -> Orientation {
    // Front-to-rear couplings keep both consists facing the same way.
    if side != neighbor_end {
        Orientation::Forward
    } else {
        Orientation::Reversed
    }
}

/// Builds the directory seen from `local` out of the adjacency reports
/// gathered during discovery.
///
/// Reporters are always admitted. A consist without a report of its own
/// (unequipped or dead node) is admitted only when reporters on both of its
/// sides saw its tag; a consist seen from one side only, such as an
/// unpowered train end, cannot be confirmed and terminates the chain.
///
/// The result is ordered from the end consist with the lower id, so every
/// node derives the same directory regardless of its own position. A
/// single-consist directory is always forward.
pub fn build_tnd<'a>(
    local: ConsistId,
    reports: impl IntoIterator<Item = &'a AdjacencyReport>,
    generation: u32,
) -> Result<TrainNetworkDirectory, InaugurationError> {
    let reporters: BTreeMap<ConsistId, &AdjacencyReport> =
        reports.into_iter().map(|r| (r.consist, r)).collect();
    if !reporters.contains_key(&local) {
        return Err(inconsistent(local, "local adjacency report missing"));
    }

    let mut links: HashMap<(ConsistId, End), (ConsistId, End)> = HashMap::new();
    let mut info: BTreeMap<ConsistId, (u32, bool)> = BTreeMap::new();
    let mut observers: BTreeMap<ConsistId, BTreeSet<ConsistId>> = BTreeMap::new();

    let mut note_info = |id: ConsistId, vehicles: u32, equipped: bool| match info.get(&id) {
        Some(&prev) if prev != (vehicles, equipped) => {
            Err(inconsistent(id, "conflicting consist description"))
        }
        _ => {
            info.insert(id, (vehicles, equipped));
            Ok(())
        }
    };

    for r in reporters.values() {
        note_info(r.consist, r.vehicles, r.equipped)?;
        for side in [End::Front, End::Rear] {
            let Some(tag) = r.side(side) else { continue };
            if tag.neighbor == r.consist {
                return Err(inconsistent(r.consist, "consist reports itself as neighbour"));
            }
            if tag.relative != expected_relative(side, tag.neighbor_end) {
                return Err(inconsistent(r.consist, "relative orientation contradicts coupler ends"));
            }
            note_info(tag.neighbor, tag.vehicles, tag.equipped)?;
            observers.entry(tag.neighbor).or_default().insert(r.consist);
            for (from, to) in [
                ((r.consist, side), (tag.neighbor, tag.neighbor_end)),
                ((tag.neighbor, tag.neighbor_end), (r.consist, side)),
            ] {
                match links.get(&from) {
                    Some(existing) if *existing != to => {
                        return Err(inconsistent(from.0, "coupler claimed by two consists"));
                    }
                    _ => {
                        links.insert(from, to);
                    }
                }
            }
        }
    }
    // A reporter must agree with every link others attribute to it.
    for r in reporters.values() {
        for side in [End::Front, End::Rear] {
            if links.contains_key(&(r.consist, side)) && r.side(side).is_none() {
                return Err(inconsistent(r.consist, "asymmetric adjacency"));
            }
        }
    }

    let admitted = |id: ConsistId| {
        reporters.contains_key(&id) || observers.get(&id).is_some_and(|o| o.len() >= 2)
    };

    let mut visited = BTreeSet::from([local]);
    let mut walk = |exit: End| -> Result<Vec<(ConsistId, End)>, InaugurationError> {
        let mut chain = Vec::new();
        let (mut cur, mut out_side) = (local, exit);
        while let Some(&(next, entry)) = links.get(&(cur, out_side)) {
            if !admitted(next) {
                break;
            }
            if !visited.insert(next) {
                return Err(inconsistent(next, "adjacency forms a cycle"));
            }
            chain.push((next, entry));
            cur = next;
            out_side = entry.other();
        }
        Ok(chain)
    };
    let towards_front = walk(End::Front)?;
    let towards_rear = walk(End::Rear)?;

    // List head lies beyond the local front end.
    let mut seq: Vec<(ConsistId, Orientation)> = Vec::new();
    for &(id, entry) in towards_front.iter().rev() {
        let o = if entry == End::Rear {
            Orientation::Forward
        } else {
            Orientation::Reversed
        };
        seq.push((id, o));
    }
    seq.push((local, Orientation::Forward));
    for &(id, entry) in &towards_rear {
        let o = if entry == End::Front {
            Orientation::Forward
        } else {
            Orientation::Reversed
        };
        seq.push((id, o));
    }

    if seq.len() == 1 {
        seq[0].1 = Orientation::Forward;
    } else if seq[seq.len() - 1].0 < seq[0].0 {
        seq.reverse();
        for s in &mut seq {
            s.1 = s.1.flip();
        }
    }

    let entries = seq
        .into_iter()
        .map(|(consist, orientation)| {
            let (vehicles, equipped) = info[&consist];
            TndEntry {
                consist,
                orientation,
                vehicles,
                equipped,
            }
        })
        .collect();
    Ok(TrainNetworkDirectory {
        entries,
        generation,
    })
}

/// Outcome of a successful length check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LengthConfirmation {
    pub consist_count: u32,
}

/// The directory length must match the secondary channel before the train
/// may become operational. A severed channel surfaces as `ChannelFault`.
pub fn confirm_length<E>(
    tnd: &TrainNetworkDirectory,
    reading: Result<SecondaryChannelReading, E>,
) -> Result<LengthConfirmation, InaugurationError> {
    let reading = reading.map_err(|_| InaugurationError::ChannelFault)?;
    let directory = tnd.len() as u32;
    if directory == reading.consist_count {
        Ok(LengthConfirmation {
            consist_count: directory,
        })
    } else {
        Err(InaugurationError::LengthMismatch {
            directory,
            secondary: reading.consist_count,
        })
    }
}

/// A driver's request to make a cab the active one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct CabinClaim {
    pub cabin: ActiveCabin,
    pub issued: SimTime,
    /// Global event sequence of the claim, for ordering within a tick.
    pub seq: u64,
}

impl CabinClaim {
    pub fn order_key(&self) -> (SimTime, u64) {
        (self.issued, self.seq)
    }
}

/// Picks the active cabin: the earliest claim (by event order) whose
/// consist is in the directory wins and later claims are rejected. Two
/// claims from different consists issued in the same tick were active
/// simultaneously and yield `CabinConflict`.
pub fn operational_inauguration(
    tnd: &TrainNetworkDirectory,
    claims: &[CabinClaim],
) -> Result<OperationalTrainDirectory, InaugurationError> {
    let mut valid: Vec<&CabinClaim> = claims
        .iter()
        .filter(|c| tnd.contains(c.cabin.consist))
        .collect();
    valid.sort_by_key(|c| c.order_key());
    let first = valid.first().ok_or(InaugurationError::ClaimPending)?;
    if let Some(rival) = valid
        .iter()
        .skip(1)
        .find(|c| c.issued == first.issued && c.cabin.consist != first.cabin.consist)
    {
        return Err(InaugurationError::CabinConflict {
            first: first.cabin.consist,
            second: rival.cabin.consist,
        });
    }
    Ok(OperationalTrainDirectory::new(tnd.clone(), first.cabin))
}
