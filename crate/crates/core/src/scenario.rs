//! Simulation scenario: grid, controller settings, reference schedule,
//! faults and solver settings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControlParams, PowerPair, ReferenceSchedule, ReferenceStep};
use crate::dynamics::SolverSettings;
use crate::fault::FaultSpec;
use crate::network::{Grid, GridError, LoadModel};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid scenario JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Scenario file layout. The grid path is resolved relative to the scenario
/// file; without it the bundled 12-bus grid is used.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    #[serde(default)]
    pub grid: Option<String>,
    #[serde(default = "default_load_model")]
    pub load_model: LoadModel,
    #[serde(default = "default_pq_min_voltage")]
    pub pq_min_voltage: f64,
    #[serde(default)]
    pub control: ControlParams,
    #[serde(default)]
    pub references: Vec<ReferenceStep>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    pub t_end: f64,
    #[serde(default)]
    pub solver: SolverSettings,
    /// Steady DG output before the run, by bus, MW and Mvar.
    #[serde(default)]
    pub initial_dg: BTreeMap<String, PowerPair>,
}

fn default_load_model() -> LoadModel {
    LoadModel::ConstantPq
}

/// Voltage below which constant-power loads behave as constant impedance
/// during simulation, pu.
pub const DEFAULT_PQ_MIN_VOLTAGE: f64 = 0.7;

fn default_pq_min_voltage() -> f64 {
    DEFAULT_PQ_MIN_VOLTAGE
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub grid: Grid,
    pub load_model: LoadModel,
    /// Constant-power loads switch to constant impedance below this voltage;
    /// 0 disables the changeover.
    pub pq_min_voltage: f64,
    pub control: ControlParams,
    /// Reference steps. Entries at `t <= 0` set the initial reference; when
    /// there is none the initial measured flow is held.
    pub references: Vec<ReferenceStep>,
    pub faults: Vec<FaultSpec>,
    pub t_end: f64,
    pub solver: SolverSettings,
    pub initial_dg: BTreeMap<String, PowerPair>,
}

impl Scenario {
    /// No events, references equal to the initial flow.
    pub fn steady(grid: Grid, load_model: LoadModel, t_end: f64) -> Self {
        Self {
            grid,
            load_model,
            pq_min_voltage: DEFAULT_PQ_MIN_VOLTAGE,
            control: ControlParams::default(),
            references: Vec::new(),
            faults: Vec::new(),
            t_end,
            solver: SolverSettings::default(),
            initial_dg: BTreeMap::new(),
        }
    }

    pub fn from_document(doc: ScenarioDocument, base_dir: Option<&Path>) -> Result<Self, ScenarioError> {
        let grid = match &doc.grid {
            None => Grid::cigre12(),
            Some(p) => {
                let path = match base_dir {
                    Some(dir) if Path::new(p).is_relative() => dir.join(p),
                    _ => PathBuf::from(p),
                };
                Grid::from_path(path)?
            }
        };
        let s = Self {
            grid,
            load_model: doc.load_model,
            pq_min_voltage: doc.pq_min_voltage,
            control: doc.control,
            references: doc.references,
            faults: doc.faults,
            t_end: doc.t_end,
            solver: doc.solver,
            initial_dg: doc.initial_dg,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn from_json(text: &str, base_dir: Option<&Path>) -> Result<Self, ScenarioError> {
        Self::from_document(serde_json::from_str(text)?, base_dir)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, path.parent())
    }

    /// The bundled reference-step and bus-8 fault scenario.
    pub fn bundled_fig4() -> Self {
        Self::from_json(include_str!("../data/scenario_fig4.json"), None).expect("bundled scenario is valid")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end must be > 0, got {}", self.t_end));
        }
        if !(0.0..1.0).contains(&self.pq_min_voltage) {
            return bad(format!("pq_min_voltage must be in [0, 1), got {}", self.pq_min_voltage));
        }
        self.control.validate().map_err(ScenarioError::Invalid)?;
        self.solver.validate().map_err(ScenarioError::Invalid)?;
        for f in &self.faults {
            f.validate().map_err(ScenarioError::Invalid)?;
            if self.grid.bus_index(&f.bus).is_none() {
                return bad(format!("fault at unknown bus {:?}", f.bus));
            }
            if f.t_on < 0.0 || f.t_off() > self.t_end {
                return bad(format!(
                    "fault at {} spans [{}, {}] outside [0, {}]",
                    f.bus,
                    f.t_on,
                    f.t_off(),
                    self.t_end
                ));
            }
        }
        for w in self.references.windows(2) {
            if !(w[1].t > w[0].t) {
                return bad("reference times must be strictly increasing".into());
            }
        }
        for bus in self.initial_dg.keys() {
            if !self.grid.dg_buses().contains(bus) {
                return bad(format!("initial DG output at {bus:?}, which hosts no DG"));
            }
        }
        Ok(())
    }

    /// Initial DG output in MW + j Mvar by bus.
    pub fn initial_injections(&self) -> BTreeMap<String, Complex64> {
        self.initial_dg
            .iter()
            .map(|(b, s)| (b.clone(), Complex64::new(s.p_mw, s.q_mvar)))
            .collect()
    }

    /// Full schedule once the initial measured flow is known.
    pub fn schedule(&self, initial_flow: PowerPair) -> ReferenceSchedule {
        let base = self
            .references
            .iter()
            .rev()
            .find(|s| s.t <= 0.0)
            .map(|s| PowerPair::new(s.p_mw, s.q_mvar))
            .unwrap_or(initial_flow);
        let steps = self.references.iter().copied().filter(|s| s.t > 0.0).collect();
        ReferenceSchedule::new(base, steps).expect("validated reference times")
    }
}
