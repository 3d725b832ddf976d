use thiserror::Error;

use super::directory::TrainNetworkDirectory;
use crate::topology::ConsistId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RouteError {
    #[error("consist {0} is not in the operational directory")]
    NotInDirectory(ConsistId),
    #[error("no backbone path from {from} to {to}")]
    Unroutable { from: ConsistId, to: ConsistId },
}

/// Centre of each directory consist along the track, in metres from the
/// directory head.
pub fn consist_centres(tnd: &TrainNetworkDirectory, vehicle_length_m: f64) -> Vec<f64> {
    let mut offset = 0.0;
    tnd.entries
        .iter()
        .map(|e| {
            let len = f64::from(e.vehicles) * vehicle_length_m;
            let centre = offset + len / 2.0;
            offset += len;
            centre
        })
        .collect()
}

/// Hop list between the backbone nodes of two directory consists.
///
/// Every live node between the endpoints relays; dead or unequipped
/// consists are skipped as long as the resulting hop fits in `range_m`.
/// Both endpoint nodes always appear, so end devices never talk across
/// consists directly.
pub fn route(
    from: ConsistId,
    to: ConsistId,
    tnd: &TrainNetworkDirectory,
    is_live: impl Fn(ConsistId) -> bool,
    vehicle_length_m: f64,
    range_m: f64,
) -> Result<Vec<ConsistId>, RouteError> {
    let a = tnd.position(from).ok_or(RouteError::NotInDirectory(from))?;
    let b = tnd.position(to).ok_or(RouteError::NotInDirectory(to))?;
    let unroutable = RouteError::Unroutable { from, to };
    let usable = |i: usize| tnd.entries[i].equipped && is_live(tnd.entries[i].consist);
    if !usable(a) || !usable(b) {
        return Err(unroutable);
    }
    if a == b {
        return Ok(vec![from]);
    }
    let centres = consist_centres(tnd, vehicle_length_m);
    let path: Vec<usize> = if a < b {
        (a..=b).filter(|&i| i == a || i == b || usable(i)).collect()
    } else {
        (b..=a).rev().filter(|&i| i == a || i == b || usable(i)).collect()
    };
    if path
        .windows(2)
        .any(|w| (centres[w[1]] - centres[w[0]]).abs() > range_m)
    {
        return Err(unroutable);
    }
    Ok(path.into_iter().map(|i| tnd.entries[i].consist).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::directory::TndEntry;
    use crate::topology::Orientation;

    fn tnd(n: u32) -> TrainNetworkDirectory {
        TrainNetworkDirectory {
            entries: (1..=n)
                .map(|i| TndEntry {
                    consist: ConsistId(i),
                    orientation: Orientation::Forward,
                    vehicles: 4,
                    equipped: true,
                })
                .collect(),
            generation: 1,
        }
    }

    const C: fn(u32) -> ConsistId = ConsistId;

    #[test]
    fn healthy_middle_relays() {
        let hops = route(C(1), C(3), &tnd(3), |_| true, 25.0, 500.0).unwrap();
        assert_eq!(hops, vec![C(1), C(2), C(3)]);
        let back = route(C(3), C(1), &tnd(3), |_| true, 25.0, 500.0).unwrap();
        assert_eq!(back, vec![C(3), C(2), C(1)]);
    }

    #[test]
    fn dead_middle_skipped_within_range() {
        let hops = route(C(1), C(3), &tnd(3), |c| c != C(2), 25.0, 250.0).unwrap();
        assert_eq!(hops, vec![C(1), C(3)]);
    }

    #[test]
    fn dead_gap_beyond_range() {
        // Centres are 100 m apart; skipping C2 needs 200 m.
        assert_eq!(
            route(C(1), C(3), &tnd(3), |c| c != C(2), 25.0, 150.0),
            Err(RouteError::Unroutable { from: C(1), to: C(3) })
        );
    }

    #[test]
    fn unequipped_middle_skipped() {
        let mut t = tnd(3);
        t.entries[1].equipped = false;
        assert_eq!(
            route(C(1), C(3), &t, |_| true, 25.0, 250.0).unwrap(),
            vec![C(1), C(3)]
        );
    }

    #[test]
    fn endpoints_must_be_live_and_known() {
        assert!(route(C(1), C(3), &tnd(3), |c| c != C(3), 25.0, 1e4).is_err());
        assert_eq!(
            route(C(1), C(9), &tnd(3), |_| true, 25.0, 1e4),
            Err(RouteError::NotInDirectory(C(9)))
        );
        assert_eq!(route(C(2), C(2), &tnd(3), |_| true, 25.0, 1.0).unwrap(), vec![C(2)]);
    }
}
