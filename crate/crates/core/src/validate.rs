//! Comparison of computed bus voltages against a reference exported by
//! another tool.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::Grid;
use crate::powerflow::PowerFlowSolution;

pub const DEFAULT_TOL_MAG: f64 = 1e-4;
pub const DEFAULT_TOL_ANG_DEG: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ValidateError {
    #[error("reference CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("reference lists bus {0:?} twice")]
    Duplicate(String),
    #[error("bus sets differ: missing from reference {missing:?}, unknown to the grid {unknown:?}")]
    BusSetMismatch { missing: Vec<String>, unknown: Vec<String> },
}

#[derive(Debug, Clone, Deserialize)]
struct ReferenceRow {
    bus_id: String,
    v_mag_pu: f64,
    v_angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Deviation {
    pub bus_id: String,
    pub v_mag_ref: f64,
    pub v_mag: f64,
    pub d_mag: f64,
    pub v_angle_ref: f64,
    pub v_angle: f64,
    pub d_angle: f64,
    pub mag_ok: bool,
    pub angle_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub tol_mag: f64,
    pub tol_angle_deg: f64,
    pub rows: Vec<Deviation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.mag_ok && r.angle_ok)
    }

    pub fn max_mag_deviation(&self) -> f64 {
        self.rows.iter().map(|r| r.d_mag).fold(0.0, f64::max)
    }

    pub fn max_angle_deviation(&self) -> f64 {
        self.rows.iter().map(|r| r.d_angle).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Absolute angle difference in degrees, folded into [0, 180].
fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Compare a power flow solution with reference voltages. Columns other than
/// `bus_id`, `v_mag_pu` and `v_angle_deg` are ignored.
pub fn compare_voltages<R: Read>(
    grid: &Grid,
    sol: &PowerFlowSolution,
    reference: R,
    tol_mag: f64,
    tol_angle_deg: f64,
) -> Result<ValidationReport, ValidateError> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reference);
    let mut refs = BTreeMap::new();
    for row in rd.deserialize::<ReferenceRow>() {
        let row = row?;
        if refs.contains_key(&row.bus_id) {
            return Err(ValidateError::Duplicate(row.bus_id));
        }
        refs.insert(row.bus_id.clone(), row);
    }
    let ids: BTreeSet<&str> = grid.buses().iter().map(|b| b.id.as_str()).collect();
    let missing: Vec<String> = ids.iter().filter(|id| !refs.contains_key(**id)).map(|s| s.to_string()).collect();
    let unknown: Vec<String> = refs.keys().filter(|k| !ids.contains(k.as_str())).cloned().collect();
    if !missing.is_empty() || !unknown.is_empty() {
        return Err(ValidateError::BusSetMismatch { missing, unknown });
    }
    let rows = grid
        .buses()
        .iter()
        .zip(&sol.voltages)
        .map(|(b, v)| {
            let r = &refs[&b.id];
            let (mag, ang) = (v.norm(), v.arg().to_degrees());
            let d_mag = (mag - r.v_mag_pu).abs();
            let d_angle = angle_diff(ang, r.v_angle_deg);
            Deviation {
                bus_id: b.id.clone(),
                v_mag_ref: r.v_mag_pu,
                v_mag: mag,
                d_mag,
                v_angle_ref: r.v_angle_deg,
                v_angle: ang,
                d_angle,
                mag_ok: d_mag <= tol_mag,
                angle_ok: d_angle <= tol_angle_deg,
            }
        })
        .collect();
    Ok(ValidationReport {
        tol_mag,
        tol_angle_deg,
        rows,
    })
}
