//! CSV and JSON result files.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so files
//! re-read bit-identically and repeated runs give byte-identical output.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::dynamics::Trajectory;
use crate::montecarlo::{Cell, SurvivabilityEstimate, TrialRecord};
use crate::network::Grid;
use crate::powerflow::{network_injection, PowerFlowSolution};
use crate::ybus::{assemble_ybus, YBusError};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    YBus(#[from] YBusError),
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// One row of the bus table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BusRow {
    pub bus_id: String,
    pub v_mag_pu: f64,
    pub v_angle_deg: f64,
    pub p_injected_mw: f64,
    pub q_injected_mvar: f64,
}

/// Bus voltages and net injections (generation minus load) of a solution.
pub fn bus_table(grid: &Grid, sol: &PowerFlowSolution) -> Result<Vec<BusRow>, ReportError> {
    // Loads are left out of the admittance matrix, so the computed injection
    // is the net of generation and load for either load model.
    let passive = assemble_ybus(&grid.without_loads(), sol.load_model, &[])?;
    let s = network_injection(&passive, &sol.voltages);
    Ok(grid
        .buses()
        .iter()
        .zip(&sol.voltages)
        .zip(&s)
        .map(|((b, v), s)| BusRow {
            bus_id: b.id.clone(),
            v_mag_pu: v.norm(),
            v_angle_deg: v.arg().to_degrees(),
            p_injected_mw: s.re * grid.s_base(),
            q_injected_mvar: s.im * grid.s_base(),
        })
        .collect())
}

pub fn write_bus_table<W: Write>(rows: &[BusRow], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Time series: voltages per bus, interconnection flow and, when recorded,
/// the integrator states of every DG.
pub fn write_trajectory<W: Write>(tr: &Trajectory, out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string()];
    for b in tr.bus_ids() {
        header.push(format!("v_mag_{b}"));
        header.push(format!("v_angle_{b}"));
    }
    header.push("p_meas".into());
    header.push("q_meas".into());
    if tr.has_states() {
        for b in tr.dg_buses() {
            header.push(format!("chi_p_{b}"));
            header.push(format!("chi_q_{b}"));
        }
    }
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for k in 0..tr.len() {
        row.clear();
        row.push(tr.times()[k].to_string());
        for v in tr.voltages_at(k) {
            row.push(v.norm().to_string());
            row.push(v.arg().to_degrees().to_string());
        }
        row.push(tr.p_meas()[k].to_string());
        row.push(tr.q_meas()[k].to_string());
        if tr.has_states() {
            for dg in tr.state_at(k).chunks(5) {
                row.push(dg[0].to_string());
                row.push(dg[1].to_string());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trials<W: Write>(records: &[TrialRecord], with_refs: bool, out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["trial_index"];
    if with_refs {
        header.extend(["p_ref", "q_ref"]);
    }
    header.extend([
        "r_on_ohm",
        "duration_ms",
        "included",
        "survived",
        "outcome",
        "failure_bus",
        "failure_t",
        "failure_v",
        "failure_v_min",
    ]);
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.trial_index.to_string()];
        if with_refs {
            row.push(opt(r.p_ref));
            row.push(opt(r.q_ref));
        }
        row.extend([
            r.r_on_ohm.to_string(),
            (r.duration_s * 1e3).to_string(),
            r.included.to_string(),
            r.survived.to_string(),
            r.outcome.tag().to_string(),
            r.failure_bus.clone().unwrap_or_default(),
            opt(r.failure_t),
            opt(r.failure_v),
            opt(r.failure_v_min),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Cell table; cells below the minimum count carry `insufficient` as mu.
pub fn write_envelope<W: Write>(cells: &[Cell], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cell_p_center", "cell_q_center", "count", "survivors", "mu"])?;
    for c in cells {
        w.write_record([
            c.p_center.to_string(),
            c.q_center.to_string(),
            c.count.to_string(),
            c.survivors.to_string(),
            c.mu.map(|m| m.to_string()).unwrap_or_else(|| "insufficient".into()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per bus: the data behind the survivability bar chart.
pub fn write_estimates<W: Write>(estimates: &[SurvivabilityEstimate], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bus", "load_model", "survivors", "trials", "mu", "ci_half_width", "master_seed"])?;
    for e in estimates {
        w.write_record([
            e.bus.clone(),
            e.load_model.tag().to_string(),
            e.survivors.to_string(),
            e.trials.to_string(),
            e.mu.to_string(),
            e.ci_half_width.to_string(),
            e.master_seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write, T: Serialize>(value: &T, mut out: W) -> Result<(), ReportError> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::network::LoadModel;
    use crate::powerflow::{solve_power_flow, PowerFlowOptions};

    #[test]
    fn bus_table_balances_and_round_trips() {
        let g = Grid::cigre12();
        let sol = solve_power_flow(&g, LoadModel::ConstantPq, &BTreeMap::new(), &PowerFlowOptions::default()).unwrap();
        let rows = bus_table(&g, &sol).unwrap();
        assert_eq!(rows.len(), 12);
        // Constant-power loads: injection at a load bus is minus the load.
        let mv1 = rows.iter().find(|r| r.bus_id == "MV-01").unwrap();
        let load = &g.loads()["MV-01"];
        assert!((mv1.p_injected_mw + load.p_mw).abs() < 1e-6, "{mv1:?} vs {load:?}");

        let mut buf = Vec::new();
        write_bus_table(&rows, &mut buf).unwrap();
        let mut rd = csv::Reader::from_reader(buf.as_slice());
        let headers = rd.headers().unwrap().clone();
        assert_eq!(
            headers.iter().collect::<Vec<_>>(),
            ["bus_id", "v_mag_pu", "v_angle_deg", "p_injected_mw", "q_injected_mvar"]
        );
        let back: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
        assert_eq!(back.len(), 12);
        assert_eq!(back[3][1].parse::<f64>().unwrap(), rows[3].v_mag_pu);
    }

    #[test]
    fn insufficient_cells_are_marked() {
        let cells = [
            Cell { p_center: 1.0, q_center: 2.0, count: 120, survivors: 60, mu: Some(0.5) },
            Cell { p_center: 1.5, q_center: 2.0, count: 3, survivors: 3, mu: None },
        ];
        let mut buf = Vec::new();
        write_envelope(&cells, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "cell_p_center,cell_q_center,count,survivors,mu\n1,2,120,60,0.5\n1.5,2,3,3,insufficient\n"
        );
    }
}
