use std::io::{self, Write};

use super::pdp::ChannelModel;
use super::per::{per, Mcs, McsProfile, PerCalibration};
use super::ChannelError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerRow {
    pub mcs: Mcs,
    pub snr_db: f64,
    pub per: f64,
}

/// Inclusive grid `min, min + step, ...` up to `max`. Points are computed
/// as `min + i * step`, so quarter-dB grids land exactly on the
/// calibration crossings.
pub fn snr_grid(min_db: f64, max_db: f64, step_db: f64) -> Result<Vec<f64>, ChannelError> {
    if !(min_db.is_finite() && max_db.is_finite() && min_db <= max_db) {
        return Err(ChannelError::EmptyRange);
    }
    if !(step_db.is_finite() && step_db > 0.0) {
        return Err(ChannelError::EmptyRange);
    }
    let n = ((max_db - min_db) / step_db + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| min_db + i as f64 * step_db).collect())
}

/// PER of every scheme at every grid point, scheme-major.
pub fn sweep_per(schemes: &[Mcs], cal: &PerCalibration, grid: &[f64]) -> Vec<PerRow> {
    schemes
        .iter()
        .flat_map(|&m| {
            let p = McsProfile::new(m, cal);
            grid.iter().map(move |&s| PerRow {
                mcs: m,
                snr_db: s,
                per: per(&p, s),
            })
        })
        .collect()
}

pub fn write_per_csv<W: Write>(rows: &[PerRow], mut out: W) -> io::Result<()> {
    writeln!(out, "mcs,snr_db,per")?;
    for r in rows {
        writeln!(out, "{},{:.2},{:.6e}", r.mcs.as_str(), r.snr_db, r.per)?;
    }
    out.flush()
}

pub fn write_pdp_csv<W: Write>(model: &ChannelModel, mut out: W) -> io::Result<()> {
    writeln!(out, "delay_ns,power_db")?;
    for t in &model.taps {
        writeln!(out, "{},{}", fixed3(t.delay_ns), fixed3(t.power_db))?;
    }
    out.flush()
}

// Three decimals without a negative zero.
fn fixed3(x: f64) -> String {
    let x = if x.abs() < 5e-4 { 0.0 } else { x };
    format!("{x:.3}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{synth_pdp, ChannelScenario};

    #[test]
    fn grid_hits_crossings() {
        let g = snr_grid(-5.0, 30.0, 0.25).unwrap();
        assert_eq!(g.len(), 141);
        for s in [5.0, 13.5, 23.0, 30.0] {
            assert!(g.contains(&s));
        }
        assert_eq!(snr_grid(3.0, 3.0, 0.25).unwrap(), vec![3.0]);
        assert!(snr_grid(4.0, 3.0, 0.25).is_err());
        assert!(snr_grid(0.0, 3.0, 0.0).is_err());
    }

    #[test]
    fn sweep_rows_at_calibration() {
        let grid = snr_grid(-5.0, 30.0, 0.25).unwrap();
        let rows = sweep_per(&Mcs::ALL, &PerCalibration::default(), &grid);
        assert_eq!(rows.len(), 3 * grid.len());
        let mut buf = Vec::new();
        write_per_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("mcs,snr_db,per\n"));
        for line in ["R2,5.00,2.000000e-2", "R3,13.50,2.000000e-2", "R9,23.00,2.000000e-2"] {
            assert!(text.contains(line), "{line}");
        }
    }

    #[test]
    fn single_point_and_empty_list() {
        let rows = sweep_per(&Mcs::ALL, &PerCalibration::default(), &[10.0]);
        assert_eq!(rows.len(), 3);
        let mut buf = Vec::new();
        write_per_csv(&sweep_per(&[], &PerCalibration::default(), &[10.0]), &mut buf).unwrap();
        assert_eq!(buf, b"mcs,snr_db,per\n");
    }

    #[test]
    fn pdp_csv_layout() {
        let m = synth_pdp(ChannelScenario::HstInterVehicle, 120.0).unwrap();
        let mut buf = Vec::new();
        write_pdp_csv(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("delay_ns,power_db"));
        assert_eq!(lines.next(), Some("0.000,0.000"));
        assert_eq!(lines.next(), Some("8.333,-10.000"));
        assert_eq!(text.lines().count(), m.taps.len() + 1);
    }
}
