//! RMS time-domain simulation of the controlled grid.
//!
//! Differential states are the five DG states per unit; the network is an
//! algebraic constraint solved inside every right-hand-side evaluation.

mod model;
mod network;
mod rosenbrock;
mod simulate;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::control::DgState;

pub use model::{initialize_state, AdnModel, ModelError};
pub use network::{solve_network, NetworkError, NetworkSolver};
pub use rosenbrock::{Ode23s, OdeSystem, StepOutcome};
pub use simulate::{simulate, simulate_with, RecordOptions, SimError, Simulation};

/// Integrator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub rtol: f64,
    pub atol: f64,
    /// Output sampling interval, s.
    pub sample_dt: f64,
    /// Largest internal step, s.
    pub max_step: f64,
    /// Budget of attempted steps per run; exceeding it is a numerical failure.
    pub max_steps: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-8,
            sample_dt: 1e-3,
            max_step: 0.05,
            max_steps: 200_000,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("sample_dt", self.sample_dt),
            ("max_step", self.max_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("solver.{name} must be > 0, got {v}"));
            }
        }
        if self.max_steps == 0 {
            return Err("solver.max_steps must be >= 1".into());
        }
        Ok(())
    }
}

/// All DG states at one instant, in DG order.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicState {
    pub t: f64,
    pub dgs: Vec<DgState>,
}

impl DynamicState {
    pub fn from_vector(t: f64, x: &[f64]) -> Self {
        Self {
            t,
            dgs: x.chunks(DgState::LEN).map(DgState::from_slice).collect(),
        }
    }

    pub fn to_vector(&self) -> Vec<f64> {
        self.dgs.iter().flat_map(|s| s.to_array()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimulationStatus {
    Completed,
    NumericalFailure { t: f64, reason: String },
}

/// Sampled simulation output.
///
/// At an event time two samples share the same time stamp: the value just
/// before the event followed by the value just after it.
#[derive(Debug, Clone)]
pub struct Trajectory {
    bus_ids: Vec<String>,
    dg_buses: Vec<String>,
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    voltages: Vec<Vec<Complex64>>,
    p_meas: Vec<f64>,
    q_meas: Vec<f64>,
    status: SimulationStatus,
}

impl Trajectory {
    pub fn empty(bus_ids: Vec<String>, dg_buses: Vec<String>) -> Self {
        Self {
            bus_ids,
            dg_buses,
            times: Vec::new(),
            states: Vec::new(),
            voltages: Vec::new(),
            p_meas: Vec::new(),
            q_meas: Vec::new(),
            status: SimulationStatus::Completed,
        }
    }

    /// Append a sample; `state` is omitted when states are not recorded.
    pub fn push_sample(&mut self, t: f64, state: Option<&[f64]>, voltages: &[Complex64], p_meas: f64, q_meas: f64) {
        debug_assert!(self.times.last().is_none_or(|&last| t >= last));
        self.times.push(t);
        if let Some(x) = state {
            self.states.push(x.to_vec());
        }
        self.voltages.push(voltages.to_vec());
        self.p_meas.push(p_meas);
        self.q_meas.push(q_meas);
    }

    pub fn set_status(&mut self, status: SimulationStatus) {
        self.status = status;
    }

    pub fn status(&self) -> &SimulationStatus {
        &self.status
    }

    pub fn completed(&self) -> bool {
        self.status == SimulationStatus::Completed
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn bus_ids(&self) -> &[String] {
        &self.bus_ids
    }

    pub fn dg_buses(&self) -> &[String] {
        &self.dg_buses
    }

    pub fn voltages_at(&self, k: usize) -> &[Complex64] {
        &self.voltages[k]
    }

    pub fn has_states(&self) -> bool {
        !self.states.is_empty()
    }

    /// State vector of sample `k`; panics when states were not recorded.
    pub fn state_at(&self, k: usize) -> &[f64] {
        &self.states[k]
    }

    pub fn dynamic_state(&self, k: usize) -> DynamicState {
        DynamicState::from_vector(self.times[k], &self.states[k])
    }

    pub fn p_meas(&self) -> &[f64] {
        &self.p_meas
    }

    pub fn q_meas(&self) -> &[f64] {
        &self.q_meas
    }

    /// Voltage magnitude series of one bus.
    pub fn magnitude_series(&self, bus: usize) -> Vec<f64> {
        self.voltages.iter().map(|v| v[bus].norm()).collect()
    }

    /// Index of the last sample with time `<= t`.
    pub fn index_at_or_before(&self, t: f64) -> Option<usize> {
        let n = self.times.partition_point(|&x| x <= t);
        n.checked_sub(1)
    }
}
