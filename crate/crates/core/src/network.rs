//! Static grid description and its JSON schema.
//!
//! A [`Grid`] is built once from a document and is immutable afterwards, so
//! it can be shared read-only between any number of concurrent simulations.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{Bases, VoltageLevel};

const CIGRE12: &str = include_str!("../data/cigre12.json");

#[derive(Debug, Error)]
pub enum GridError {
    #[error("cannot read grid file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("grid document is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate bus id {0:?}")]
    DuplicateBus(String),
    #[error("{element} references unknown bus {bus:?}")]
    UnknownBus { element: String, bus: String },
    #[error("{element}: invalid {field}: {reason}")]
    InvalidValue {
        element: String,
        field: &'static str,
        reason: String,
    },
    #[error("branch {0:?} has zero series impedance")]
    ZeroImpedance(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LoadModel {
    /// Voltage-independent power demand.
    #[serde(rename = "pq", alias = "constant_pq", alias = "PQ")]
    ConstantPq,
    /// Static impedance sized from the nominal demand at 1 pu.
    #[serde(rename = "z", alias = "constant_impedance", alias = "Z")]
    ConstantImpedance,
}

impl LoadModel {
    pub fn tag(self) -> &'static str {
        match self {
            LoadModel::ConstantPq => "pq",
            LoadModel::ConstantImpedance => "z",
        }
    }
}

impl std::str::FromStr for LoadModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pq" | "constant_pq" | "p" => Ok(LoadModel::ConstantPq),
            "z" | "constant_impedance" | "impedance" => Ok(LoadModel::ConstantImpedance),
            other => Err(format!("unknown load model {other:?} (expected pq or z)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    pub level: VoltageLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: String,
    pub from: String,
    pub to: String,
    pub r_ohm: f64,
    pub x_ohm: f64,
    /// Total line charging susceptance in microsiemens.
    #[serde(default)]
    pub b_us: f64,
    #[serde(default = "yes")]
    pub in_service: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_km: Option<f64>,
}

fn yes() -> bool {
    true
}

/// Two-winding transformer. Impedance in pu on its own rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transformer {
    #[serde(default = "default_tr_id")]
    pub id: String,
    /// HV terminal.
    pub from: String,
    /// MV terminal.
    pub to: String,
    pub r_pu: f64,
    pub x_pu: f64,
    pub rating_mva: f64,
    #[serde(default)]
    pub tap_position: i32,
    #[serde(default)]
    pub tap_neutral: i32,
    #[serde(default = "default_tap_min")]
    pub tap_min: i32,
    #[serde(default = "default_tap_max")]
    pub tap_max: i32,
    #[serde(default)]
    pub tap_step_percent: f64,
    #[serde(default)]
    pub phase_shift_deg: f64,
}

fn default_tr_id() -> String {
    "TR-01".to_string()
}
fn default_tap_min() -> i32 {
    -16
}
fn default_tap_max() -> i32 {
    16
}

impl Transformer {
    /// Off-nominal ratio applied at the MV terminal.
    pub fn ratio(&self) -> f64 {
        1.0 + f64::from(self.tap_position - self.tap_neutral) * self.tap_step_percent / 100.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub p_mw: f64,
    pub q_mvar: f64,
    /// Model declared in the file. Solvers take an explicit model flag that
    /// applies to every load, so this is informational.
    #[serde(default = "default_load_model")]
    pub model: LoadModel,
}

fn default_load_model() -> LoadModel {
    LoadModel::ConstantPq
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlackSpec {
    pub bus: String,
    #[serde(default = "one")]
    pub v_pu: f64,
    #[serde(default)]
    pub angle_deg: f64,
}

fn one() -> f64 {
    1.0
}

/// On-disk layout of a grid file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDocument {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub bases: Bases,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transformer: Option<Transformer>,
    #[serde(default)]
    pub loads: BTreeMap<String, LoadSpec>,
    #[serde(default)]
    pub dg: Vec<String>,
    pub slack: SlackSpec,
}

/// Validated grid.
#[derive(Debug, Clone)]
pub struct Grid {
    name: String,
    bases: Bases,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    transformer: Option<Transformer>,
    loads: BTreeMap<String, LoadSpec>,
    dg_buses: Vec<String>,
    slack: SlackSpec,
    index: HashMap<String, usize>,
}

impl Grid {
    /// The bundled 12-bus CIGRE MV feeder.
    pub fn cigre12() -> Grid {
        load_grid(CIGRE12).expect("bundled grid is valid")
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Grid, GridError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| GridError::Io {
            path: path.display().to_string(),
            source,
        })?;
        load_grid(&text)
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn bases(&self) -> &Bases {
        &self.bases
    }
    pub fn s_base(&self) -> f64 {
        self.bases.s_base_mva
    }
    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }
    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }
    pub fn transformer(&self) -> Option<&Transformer> {
        self.transformer.as_ref()
    }
    pub fn loads(&self) -> &BTreeMap<String, LoadSpec> {
        &self.loads
    }
    pub fn dg_buses(&self) -> &[String] {
        &self.dg_buses
    }
    pub fn slack(&self) -> &SlackSpec {
        &self.slack
    }
    pub fn slack_index(&self) -> usize {
        self.index[&self.slack.bus]
    }

    /// Slack voltage phasor in pu.
    pub fn slack_voltage(&self) -> num_complex::Complex64 {
        num_complex::Complex64::from_polar(self.slack.v_pu, self.slack.angle_deg.to_radians())
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn bus_id(&self, index: usize) -> &str {
        &self.buses[index].id
    }

    pub fn bus_level(&self, index: usize) -> VoltageLevel {
        self.buses[index].level
    }

    /// Indices of all MV buses in bus order.
    pub fn mv_bus_indices(&self) -> Vec<usize> {
        (0..self.buses.len())
            .filter(|&i| self.buses[i].level == VoltageLevel::Mv)
            .collect()
    }

    pub fn dg_bus_indices(&self) -> Vec<usize> {
        self.dg_buses.iter().map(|b| self.index[b]).collect()
    }

    /// Nominal load demand per bus in pu (consumption positive).
    pub fn load_pu(&self) -> Vec<num_complex::Complex64> {
        let mut out = vec![num_complex::Complex64::new(0.0, 0.0); self.buses.len()];
        for (bus, load) in &self.loads {
            out[self.index[bus]] += num_complex::Complex64::new(
                self.bases.power_to_pu(load.p_mw),
                self.bases.power_to_pu(load.q_mvar),
            );
        }
        out
    }

    /// Copy of this grid with every load scaled to zero.
    pub fn without_loads(&self) -> Grid {
        let mut g = self.clone();
        g.loads.clear();
        g
    }

    /// Copy of this grid with a different tap position (validated).
    pub fn with_tap(&self, tap_position: i32) -> Result<Grid, GridError> {
        let mut doc = self.to_document();
        if let Some(tr) = doc.transformer.as_mut() {
            tr.tap_position = tap_position;
        }
        Grid::from_document(doc)
    }

    pub fn to_document(&self) -> GridDocument {
        GridDocument {
            name: self.name.clone(),
            bases: self.bases,
            buses: self.buses.clone(),
            branches: self.branches.clone(),
            transformer: self.transformer.clone(),
            loads: self.loads.clone(),
            dg: self.dg_buses.clone(),
            slack: self.slack.clone(),
        }
    }

    pub fn from_document(doc: GridDocument) -> Result<Grid, GridError> {
        let mut index = HashMap::with_capacity(doc.buses.len());
        for (i, bus) in doc.buses.iter().enumerate() {
            if index.insert(bus.id.clone(), i).is_some() {
                return Err(GridError::DuplicateBus(bus.id.clone()));
            }
        }
        let known = |element: &str, bus: &str| -> Result<usize, GridError> {
            index.get(bus).copied().ok_or_else(|| GridError::UnknownBus {
                element: element.to_string(),
                bus: bus.to_string(),
            })
        };
        let invalid = |element: &str, field: &'static str, reason: &str| GridError::InvalidValue {
            element: element.to_string(),
            field,
            reason: reason.to_string(),
        };

        for (name, v) in [
            ("s_base_mva", doc.bases.s_base_mva),
            ("v_base_hv_kv", doc.bases.v_base_hv_kv),
            ("v_base_mv_kv", doc.bases.v_base_mv_kv),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid("bases", name, &format!("must be positive and finite, got {v}")));
            }
        }

        let mut branch_ids = HashMap::new();
        for br in &doc.branches {
            let element = format!("branch {}", br.id);
            if branch_ids.insert(br.id.clone(), ()).is_some() {
                return Err(invalid(&element, "id", "duplicate branch id"));
            }
            let f = known(&element, &br.from)?;
            let t = known(&element, &br.to)?;
            if f == t {
                return Err(invalid(&element, "to", "branch endpoints coincide"));
            }
            if doc.buses[f].level != doc.buses[t].level {
                return Err(invalid(&element, "to", "branch joins different voltage levels"));
            }
            for (field, v) in [("r_ohm", br.r_ohm), ("x_ohm", br.x_ohm), ("b_us", br.b_us)] {
                if !v.is_finite() {
                    return Err(invalid(&element, field, "not finite"));
                }
            }
            if br.r_ohm < 0.0 {
                return Err(invalid(&element, "r_ohm", "negative resistance"));
            }
            if br.r_ohm == 0.0 && br.x_ohm == 0.0 {
                return Err(GridError::ZeroImpedance(br.id.clone()));
            }
        }

        if let Some(tr) = &doc.transformer {
            let element = format!("transformer {}", tr.id);
            let hv = known(&element, &tr.from)?;
            let mv = known(&element, &tr.to)?;
            if hv == mv {
                return Err(invalid(&element, "to", "transformer terminals coincide"));
            }
            if !(tr.r_pu.is_finite() && tr.x_pu.is_finite()) || tr.r_pu < 0.0 {
                return Err(invalid(&element, "r_pu", "impedance must be finite with r >= 0"));
            }
            if tr.r_pu == 0.0 && tr.x_pu == 0.0 {
                return Err(GridError::ZeroImpedance(tr.id.clone()));
            }
            if !(tr.rating_mva.is_finite() && tr.rating_mva > 0.0) {
                return Err(invalid(&element, "rating_mva", "must be positive"));
            }
            if tr.phase_shift_deg != 0.0 {
                return Err(invalid(&element, "phase_shift_deg", "phase shifting is not supported"));
            }
            if tr.tap_min > tr.tap_max || tr.tap_position < tr.tap_min || tr.tap_position > tr.tap_max {
                return Err(invalid(
                    &element,
                    "tap_position",
                    &format!(
                        "{} outside [{}, {}]",
                        tr.tap_position, tr.tap_min, tr.tap_max
                    ),
                ));
            }
            if tr.ratio() <= 0.0 {
                return Err(invalid(&element, "tap_step_percent", "non-positive ratio"));
            }
        }

        for (bus, load) in &doc.loads {
            let element = format!("load at {bus}");
            known(&element, bus)?;
            if !(load.p_mw.is_finite() && load.q_mvar.is_finite()) {
                return Err(invalid(&element, "p_mw", "not finite"));
            }
            if load.p_mw < 0.0 {
                return Err(invalid(&element, "p_mw", "negative demand"));
            }
        }

        let mut seen_dg = HashMap::new();
        for bus in &doc.dg {
            known("dg", bus)?;
            if seen_dg.insert(bus.clone(), ()).is_some() {
                return Err(invalid("dg", "bus", &format!("duplicate DG bus {bus}")));
            }
        }

        known("slack", &doc.slack.bus)?;
        if !(doc.slack.v_pu.is_finite() && doc.slack.v_pu > 0.0) {
            return Err(invalid("slack", "v_pu", "must be positive"));
        }

        Ok(Grid {
            name: doc.name,
            bases: doc.bases,
            buses: doc.buses,
            branches: doc.branches,
            transformer: doc.transformer,
            loads: doc.loads,
            dg_buses: doc.dg,
            slack: doc.slack,
            index,
        })
    }
}

/// Parse and validate a grid document.
pub fn load_grid(document: &str) -> Result<Grid, GridError> {
    let doc: GridDocument = serde_json::from_str(document)?;
    Grid::from_document(doc)
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_grid_shape() {
        let g = Grid::cigre12();
        assert_eq!(g.n_buses(), 12);
        assert_eq!(g.branches().iter().filter(|b| b.in_service).count(), 10);
        assert_eq!(g.branches().iter().filter(|b| !b.in_service).count(), 2);
        assert_eq!(g.transformer().unwrap().tap_position, 10);
        assert_eq!(g.dg_buses().len(), 11);
        assert_eq!(g.dg_buses()[0], "MV-01");
        assert_eq!(g.dg_buses()[10], "MV-11");
        assert_eq!(g.slack().bus, "HV-00");
        assert!(g.loads().keys().all(|b| b.starts_with("MV-")));
        assert_eq!(g.mv_bus_indices().len(), 11);
    }

    #[test]
    fn dangling_branch_is_rejected() {
        let text = fixtures::minimal_json().replace(r#""to": "B", "r_ohm""#, r#""to": "MV-99", "r_ohm""#);
        match load_grid(&text) {
            Err(GridError::UnknownBus { bus, element }) => {
                assert_eq!(bus, "MV-99");
                assert!(element.contains("AB"));
            }
            other => panic!("expected unknown bus error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_grid_loads() {
        let g = load_grid(&fixtures::minimal_json()).unwrap();
        assert_eq!(g.branches().len(), 1);
        assert_eq!(g.slack_index(), 0);
    }

    #[test]
    fn duplicate_bus_is_rejected() {
        let text = fixtures::minimal_json().replace(r#"{"id": "B", "level": "mv"}"#, r#"{"id": "A", "level": "mv"}"#);
        assert!(matches!(load_grid(&text), Err(GridError::DuplicateBus(id)) if id == "A"));
    }

    #[test]
    fn missing_field_is_a_parse_error() {
        let text = fixtures::minimal_json().replace(r#""slack": {"bus": "A"}"#, r#""slock": {"bus": "A"}"#);
        assert!(matches!(load_grid(&text), Err(GridError::Parse(_))));
    }

    #[test]
    fn zero_impedance_branch_is_rejected() {
        let text = fixtures::two_bus_json(0.0, 1.0, 0.0);
        assert!(matches!(load_grid(&text), Err(GridError::ZeroImpedance(id)) if id == "AB"));
    }

    #[test]
    fn negative_resistance_and_bad_tap_are_rejected() {
        let text = fixtures::minimal_json().replace(r#""r_ohm": 0.0"#, r#""r_ohm": -1.0"#);
        assert!(matches!(load_grid(&text), Err(GridError::InvalidValue { field: "r_ohm", .. })));
        let g = Grid::cigre12();
        assert!(matches!(g.with_tap(40), Err(GridError::InvalidValue { field: "tap_position", .. })));
    }

    #[test]
    fn cigre_tap_ratio() {
        let g = Grid::cigre12();
        assert!((g.transformer().unwrap().ratio() - 1.0625).abs() < 1e-15);
    }
}
