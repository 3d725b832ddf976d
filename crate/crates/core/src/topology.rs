//! Physical ground truth: vehicles, consists, coupling and decoupling, the
//! coupler adjacency oracle (RFID stand-in) and the secondary safe channel
//! (pneumatic pipe stand-in).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConsistId(pub u32);

impl fmt::Display for ConsistId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "V{}", self.0)
    }
}

/// Orientation of a consist relative to the train head.
///
/// `Forward` means the consist's own front end points towards the head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    #[default]
    Forward,
    Reversed,
}

impl Orientation {
    pub fn flip(self) -> Self {
        match self {
            Orientation::Forward => Orientation::Reversed,
            Orientation::Reversed => Orientation::Forward,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Orientation::Forward => "fwd",
            Orientation::Reversed => "rev",
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One of the two ends of a consist or composition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum End {
    Front,
    Rear,
}

impl End {
    pub fn other(self) -> Self {
        match self {
            End::Front => End::Rear,
            End::Rear => End::Front,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: VehicleId,
    pub has_cab: bool,
    pub position_in_consist: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Consist {
    pub id: ConsistId,
    pub vehicles: Vec<Vehicle>,
    pub orientation: Orientation,
    /// Carries a backbone node.
    pub equipped: bool,
    pub powered: bool,
}

impl Consist {
    /// Builds a forward, equipped, powered consist of `count` vehicles.
    /// Vehicle ids are `consist * 100 + position`; cabs sit at the listed
    /// positions.
    pub fn new(id: u32, count: u32, cab_positions: &[u32]) -> Self {
        let vehicles = (1..=count)
            .map(|pos| Vehicle {
                id: VehicleId(id * 100 + pos),
                has_cab: cab_positions.contains(&pos),
                position_in_consist: pos,
            })
            .collect();
        Consist {
            id: ConsistId(id),
            vehicles,
            orientation: Orientation::Forward,
            equipped: true,
            powered: true,
        }
    }

    pub fn with_orientation(mut self, o: Orientation) -> Self {
        self.orientation = o;
        self
    }

    pub fn unequipped(mut self) -> Self {
        self.equipped = false;
        self
    }

    pub fn unpowered(mut self) -> Self {
        self.powered = false;
        self
    }

    pub fn vehicle_count(&self) -> u32 {
        self.vehicles.len() as u32
    }

    /// A consist may originate backbone frames only if it has a powered node.
    pub fn has_live_node(&self) -> bool {
        self.equipped && self.powered
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&Vehicle> {
        self.vehicles.iter().find(|v| v.id == id)
    }

    /// Checks the per-consist invariants: non-empty and contiguous positions.
    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.vehicles.is_empty() {
            return Err(TopologyError::EmptyConsist(self.id));
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            if v.position_in_consist != i as u32 + 1 {
                return Err(TopologyError::NonContiguousPositions(self.id));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainComposition {
    /// Physical sequence from the train head.
    pub consists: Vec<Consist>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("joint {joint} is not between two consists of a {count}-consist train")]
    InvalidJoint { joint: usize, count: usize },
    #[error("consist {0} is not part of this train")]
    UnknownConsist(ConsistId),
    #[error("secondary channel severed")]
    ChannelFault,
    #[error("consist {0} has no vehicles")]
    EmptyConsist(ConsistId),
    #[error("consist {0} vehicle positions are not 1..n")]
    NonContiguousPositions(ConsistId),
    #[error("composition has no consists")]
    EmptyComposition,
}

impl TrainComposition {
    pub fn new(consists: Vec<Consist>) -> Result<Self, TopologyError> {
        if consists.is_empty() {
            return Err(TopologyError::EmptyComposition);
        }
        for c in &consists {
            c.validate()?;
        }
        Ok(TrainComposition { consists })
    }

    pub fn len(&self) -> usize {
        self.consists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.consists.is_empty()
    }

    pub fn vehicle_count(&self) -> u32 {
        self.consists.iter().map(Consist::vehicle_count).sum()
    }

    pub fn index_of(&self, id: ConsistId) -> Option<usize> {
        self.consists.iter().position(|c| c.id == id)
    }

    pub fn consist(&self, id: ConsistId) -> Option<&Consist> {
        self.consists.iter().find(|c| c.id == id)
    }

    pub fn consist_mut(&mut self, id: ConsistId) -> Option<&mut Consist> {
        self.consists.iter_mut().find(|c| c.id == id)
    }

    pub fn ids(&self) -> Vec<ConsistId> {
        self.consists.iter().map(|c| c.id).collect()
    }

    /// The same physical train viewed from the other end.
    pub fn reversed(&self) -> Self {
        let consists = self
            .consists
            .iter()
            .rev()
            .map(|c| c.clone().with_orientation(c.orientation.flip()))
            .collect();
        TrainComposition { consists }
    }
}

/// Couples `b` onto `a` at the given end of `a`. With `b_orientation`
/// reversed, `b` is turned around as a whole before coupling.
pub fn couple(
    a: &TrainComposition,
    b: &TrainComposition,
    at_end: End,
    b_orientation: Orientation,
) -> TrainComposition {
    let b = match b_orientation {
        Orientation::Forward => b.clone(),
        Orientation::Reversed => b.reversed(),
    };
    let consists = match at_end {
        End::Rear => a.consists.iter().chain(b.consists.iter()).cloned().collect(),
        End::Front => b.consists.iter().chain(a.consists.iter()).cloned().collect(),
    };
    TrainComposition { consists }
}

/// Splits the train between consist `joint - 1` and `joint` (0-based).
pub fn decouple(
    t: &TrainComposition,
    joint: usize,
) -> Result<(TrainComposition, TrainComposition), TopologyError> {
    if joint == 0 || joint >= t.len() {
        return Err(TopologyError::InvalidJoint {
            joint,
            count: t.len(),
        });
    }
    let (head, tail) = t.consists.split_at(joint);
    Ok((
        TrainComposition {
            consists: head.to_vec(),
        },
        TrainComposition {
            consists: tail.to_vec(),
        },
    ))
}

/// What a coupler RFID reader sees of the neighbouring consist's tag.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TagRead {
    pub neighbor: ConsistId,
    /// End of the neighbour that touches the reader.
    pub neighbor_end: End,
    /// `Forward` when both consists face the same way.
    pub relative: Orientation,
    pub vehicles: u32,
    pub equipped: bool,
}

/// Adjacency as seen from one consist, expressed in its own frame: `front`
/// is whatever is coupled at the consist's own front end.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdjacencyReport {
    pub consist: ConsistId,
    pub vehicles: u32,
    pub equipped: bool,
    pub front: Option<TagRead>,
    pub rear: Option<TagRead>,
}

impl AdjacencyReport {
    pub fn side(&self, end: End) -> Option<&TagRead> {
        match end {
            End::Front => self.front.as_ref(),
            End::Rear => self.rear.as_ref(),
        }
    }

    pub fn neighbors(&self) -> impl Iterator<Item = &TagRead> {
        self.front.iter().chain(self.rear.iter())
    }
}

// The end of consist `c` that faces the train head.
fn head_side_end(c: &Consist) -> End {
    match c.orientation {
        Orientation::Forward => End::Front,
        Orientation::Reversed => End::Rear,
    }
}

fn tag_of(c: &Consist, facing: End, reader: &Consist) -> TagRead {
    TagRead {
        neighbor: c.id,
        neighbor_end: facing,
        relative: if c.orientation == reader.orientation {
            Orientation::Forward
        } else {
            Orientation::Reversed
        },
        vehicles: c.vehicle_count(),
        equipped: c.equipped,
    }
}

/// Physical neighbours of a consist. Tags are passive, so unpowered
/// neighbours are reported too.
pub fn coupler_adjacency(
    t: &TrainComposition,
    id: ConsistId,
) -> Result<AdjacencyReport, TopologyError> {
    let i = t.index_of(id).ok_or(TopologyError::UnknownConsist(id))?;
    let me = &t.consists[i];
    // Neighbour towards the head touches with its tail-side end and vice versa.
    let towards_head = i
        .checked_sub(1)
        .map(|j| &t.consists[j])
        .map(|n| tag_of(n, head_side_end(n).other(), me));
    let towards_tail = t
        .consists
        .get(i + 1)
        .map(|n| tag_of(n, head_side_end(n), me));
    let (front, rear) = match me.orientation {
        Orientation::Forward => (towards_head, towards_tail),
        Orientation::Reversed => (towards_tail, towards_head),
    };
    Ok(AdjacencyReport {
        consist: id,
        vehicles: me.vehicle_count(),
        equipped: me.equipped,
        front,
        rear,
    })
}

/// Injected behaviour of the pneumatic pipe.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PipeFault {
    #[default]
    None,
    Misreport { count: u32 },
    Sever,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SecondaryChannelReading {
    pub consist_count: u32,
    /// Set when the value came from fault injection rather than the train.
    pub fault_injected: bool,
}

/// Reads the number of physically coupled consists off the pipe.
pub fn read_secondary_channel(
    t: &TrainComposition,
    fault: PipeFault,
) -> Result<SecondaryChannelReading, TopologyError> {
    match fault {
        PipeFault::None => Ok(SecondaryChannelReading {
            consist_count: t.len() as u32,
            fault_injected: false,
        }),
        PipeFault::Misreport { count } => Ok(SecondaryChannelReading {
            consist_count: count,
            fault_injected: true,
        }),
        PipeFault::Sever => Err(TopologyError::ChannelFault),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn train(ids: &[u32]) -> TrainComposition {
        TrainComposition::new(ids.iter().map(|&i| Consist::new(i, 4, &[1, 4])).collect()).unwrap()
    }

    #[test]
    fn couple_at_rear_appends() {
        let t = couple(&train(&[1]), &train(&[2]), End::Rear, Orientation::Forward);
        assert_eq!(t.ids(), vec![ConsistId(1), ConsistId(2)]);
    }

    #[test]
    fn couple_reversed_at_front() {
        let t = couple(&train(&[1, 2]), &train(&[3]), End::Front, Orientation::Reversed);
        assert_eq!(t.ids(), vec![ConsistId(3), ConsistId(1), ConsistId(2)]);
        let o: Vec<_> = t.consists.iter().map(|c| c.orientation).collect();
        assert_eq!(
            o,
            vec![Orientation::Reversed, Orientation::Forward, Orientation::Forward]
        );
    }

    #[test]
    fn decouple_splits_and_inverts_couple() {
        let (a, b) = decouple(&train(&[1, 2, 3]), 1).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(b.len(), 2);

        let a = train(&[1, 2]);
        let b = train(&[3]);
        let (x, y) = decouple(&couple(&a, &b, End::Rear, Orientation::Forward), a.len()).unwrap();
        assert_eq!((x, y), (a, b));
    }

    #[test]
    fn decouple_single_consist_is_invalid() {
        assert_eq!(
            decouple(&train(&[1]), 1),
            Err(TopologyError::InvalidJoint { joint: 1, count: 1 })
        );
        assert!(decouple(&train(&[1, 2]), 0).is_err());
    }

    #[test]
    fn adjacency_middle_and_end() {
        let t = train(&[1, 2, 3]);
        let mid = coupler_adjacency(&t, ConsistId(2)).unwrap();
        assert_eq!(mid.front.as_ref().unwrap().neighbor, ConsistId(1));
        assert_eq!(mid.rear.as_ref().unwrap().neighbor, ConsistId(3));
        let head = coupler_adjacency(&t, ConsistId(1)).unwrap();
        assert!(head.front.is_none());
        assert_eq!(head.neighbors().count(), 1);
        assert_eq!(
            coupler_adjacency(&t, ConsistId(9)),
            Err(TopologyError::UnknownConsist(ConsistId(9)))
        );
    }

    #[test]
    fn unpowered_tail_still_visible() {
        let mut t = train(&[1, 2, 3]);
        t.consists[2].powered = false;
        let r = coupler_adjacency(&t, ConsistId(2)).unwrap();
        assert_eq!(r.rear.unwrap().neighbor, ConsistId(3));
    }

    #[test]
    fn reversed_neighbor_faces_with_front() {
        let t = couple(&train(&[1]), &train(&[2]), End::Rear, Orientation::Reversed);
        let r1 = coupler_adjacency(&t, ConsistId(1)).unwrap();
        let tag = r1.rear.unwrap();
        assert_eq!(tag.neighbor_end, End::Rear);
        assert_eq!(tag.relative, Orientation::Reversed);
        let r2 = coupler_adjacency(&t, ConsistId(2)).unwrap();
        assert_eq!(r2.rear.unwrap().neighbor, ConsistId(1));
        assert!(r2.front.is_none());
    }

    #[test]
    fn secondary_channel_readings() {
        let t = train(&[1, 2, 3]);
        assert_eq!(read_secondary_channel(&t, PipeFault::None).unwrap().consist_count, 3);
        let r = read_secondary_channel(&t, PipeFault::Misreport { count: 2 }).unwrap();
        assert_eq!((r.consist_count, r.fault_injected), (2, true));
        assert_eq!(
            read_secondary_channel(&train(&[7]), PipeFault::None).unwrap().consist_count,
            1
        );
        assert_eq!(
            read_secondary_channel(&t, PipeFault::Sever),
            Err(TopologyError::ChannelFault)
        );
    }

    fn arb_train(start: u32) -> impl Strategy<Value = TrainComposition> {
        prop::collection::vec((1u32..6, any::<bool>()), 1..6).prop_map(move |spec| {
            let consists = spec
                .into_iter()
                .enumerate()
                .map(|(i, (n, rev))| {
                    let c = Consist::new(start + i as u32, n, &[1]);
                    if rev {
                        c.with_orientation(Orientation::Reversed)
                    } else {
                        c
                    }
                })
                .collect();
            TrainComposition::new(consists).unwrap()
        })
    }

    proptest! {
        #[test]
        fn vehicle_sum_invariant(a in arb_train(1), b in arb_train(20), rear in any::<bool>(), rev in any::<bool>()) {
            let end = if rear { End::Rear } else { End::Front };
            let o = if rev { Orientation::Reversed } else { Orientation::Forward };
            let t = couple(&a, &b, end, o);
            prop_assert_eq!(t.vehicle_count(), a.vehicle_count() + b.vehicle_count());
            for joint in 1..t.len() {
                let (x, y) = decouple(&t, joint).unwrap();
                prop_assert_eq!(x.vehicle_count() + y.vehicle_count(), t.vehicle_count());
            }
        }

        #[test]
        fn adjacency_is_symmetric(t in arb_train(1)) {
            for c in &t.consists {
                let r = coupler_adjacency(&t, c.id).unwrap();
                for (side, tag) in [(End::Front, &r.front), (End::Rear, &r.rear)] {
                    if let Some(tag) = tag {
                        let back = coupler_adjacency(&t, tag.neighbor).unwrap();
                        let seen = back.side(tag.neighbor_end).unwrap();
                        prop_assert_eq!(seen.neighbor, c.id);
                        prop_assert_eq!(seen.neighbor_end, side);
                        prop_assert_eq!(seen.relative, tag.relative);
                    }
                }
            }
        }

        #[test]
        fn reversal_preserves_adjacency(t in arb_train(1)) {
            let once = t.reversed();
            prop_assert_eq!(once.reversed(), t.clone());
            for c in &t.consists {
                prop_assert_eq!(
                    coupler_adjacency(&t, c.id).unwrap(),
                    coupler_adjacency(&once.reversed(), c.id).unwrap()
                );
                // Local reports do not depend on which end is called the head.
                prop_assert_eq!(
                    coupler_adjacency(&t, c.id).unwrap(),
                    coupler_adjacency(&once, c.id).unwrap()
                );
            }
        }
    }
}
