use thiserror::Error;

use super::model::{initialize_state, AdnModel, ModelError};
use super::rosenbrock::{Ode23s, StepError};
use super::{DynamicState, SimulationStatus, Trajectory};
use crate::control::{PowerPair, ReferenceSchedule};
use crate::fault::FaultSpec;
use crate::powerflow::{solve_power_flow, transformer_mv_flow, PowerFlowError, PowerFlowOptions};
use crate::scenario::Scenario;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("initial power flow failed: {0}")]
    PowerFlow(#[from] PowerFlowError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// What to keep in the trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordOptions {
    /// Samples before this time are dropped.
    pub from: f64,
    pub states: bool,
}

impl Default for RecordOptions {
    fn default() -> Self {
        Self { from: 0.0, states: true }
    }
}

/// Event times closer than this are treated as equal.
const EVENT_EPS: f64 = 1e-9;

/// A running simulation that can be advanced piecewise.
pub struct Simulation {
    model: AdnModel,
    ode: Ode23s,
    schedule: ReferenceSchedule,
    faults: Vec<FaultSpec>,
    events: Vec<f64>,
    next_event: usize,
    t_end: f64,
    sample_dt: f64,
    max_steps: usize,
    next_sample: usize,
    record: RecordOptions,
    trajectory: Trajectory,
    initial: DynamicState,
    failed: bool,
    work: Vec<f64>,
}

impl Simulation {
    pub fn new(scenario: &Scenario, record: RecordOptions) -> Result<Self, SimError> {
        scenario.validate().map_err(|e| SimError::Invalid(e.to_string()))?;
        let grid = &scenario.grid;
        let pf = solve_power_flow(
            grid,
            scenario.load_model,
            &scenario.initial_injections(),
            &PowerFlowOptions::default(),
        )?;
        let initial = initialize_state(grid, &pf, &scenario.control)?;
        let mut model = AdnModel::new(grid, scenario.load_model, scenario.pq_min_voltage, scenario.control, &pf.voltages)?;
        let initial_flow = match grid.transformer() {
            Some(_) => {
                let (p, q) = transformer_mv_flow(grid, &pf.voltages)?;
                PowerPair::new(p, q)
            }
            None => {
                let (p, q) = model.measurement(&pf.voltages);
                PowerPair::new(p, q)
            }
        };
        let schedule = scenario.schedule(initial_flow);

        let mut events: Vec<f64> = schedule.steps().iter().map(|s| s.t).collect();
        for f in &scenario.faults {
            events.push(f.t_on);
            events.push(f.t_off());
        }
        events.retain(|&t| t < scenario.t_end - EVENT_EPS);
        events.sort_by(f64::total_cmp);
        events.dedup_by(|a, b| (*a - *b).abs() <= EVENT_EPS);

        model.set_reference(schedule.value_at(0.0));
        let faults: Vec<FaultSpec> = scenario.faults.clone();
        let s = &scenario.solver;
        let ode = Ode23s::new(s.rtol, s.atol, s.max_step);
        let trajectory = Trajectory::empty(
            grid.buses().iter().map(|b| b.id.clone()).collect(),
            grid.dg_buses().to_vec(),
        );
        let mut sim = Self {
            model,
            ode,
            schedule,
            faults,
            events,
            next_event: 0,
            t_end: scenario.t_end,
            sample_dt: s.sample_dt,
            max_steps: s.max_steps,
            next_sample: 0,
            record,
            trajectory,
            initial: initial.clone(),
            failed: false,
            work: Vec::new(),
        };
        let x0 = initial.to_vector();
        sim.work = vec![0.0; x0.len()];
        if let Err(e) = sim.ode.reset(&mut sim.model, 0.0, &x0) {
            sim.fail(0.0, e.to_string());
        }
        Ok(sim)
    }

    pub fn initial_state(&self) -> &DynamicState {
        &self.initial
    }

    pub fn t(&self) -> f64 {
        self.ode.t()
    }

    pub fn state(&self) -> &[f64] {
        self.ode.y()
    }

    pub fn failed(&self) -> bool {
        self.failed
    }

    pub fn stats(&self) -> super::rosenbrock::Stats {
        self.ode.stats
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn into_trajectory(self) -> Trajectory {
        self.trajectory
    }

    /// Interconnection flow at the current time under the current context.
    pub fn measurement(&mut self) -> Option<PowerPair> {
        let x = self.ode.y().to_vec();
        self.model
            .outputs(&x)
            .ok()
            .map(|o| PowerPair::new(o.p_meas, o.q_meas))
    }

    /// Reference in force for the current segment.
    pub fn reference(&self) -> PowerPair {
        self.model.reference()
    }

    fn fail(&mut self, t: f64, reason: String) {
        self.failed = true;
        self.trajectory
            .set_status(SimulationStatus::NumericalFailure { t, reason });
    }

    /// Faults and reference in force from `t` on.
    fn apply_context(&mut self, t: f64) -> Result<(), ModelError> {
        let active: Vec<FaultSpec> = self
            .faults
            .iter()
            .filter(|f| f.t_on <= t + EVENT_EPS && t + EVENT_EPS < f.t_off())
            .cloned()
            .collect();
        self.model.set_faults(&active)?;
        self.model.set_reference(self.schedule.value_at(t + EVENT_EPS));
        Ok(())
    }

    fn sample_time(&self, k: usize) -> f64 {
        (k as f64 * self.sample_dt).min(self.t_end)
    }

    fn is_event_time(&self, t: f64) -> bool {
        self.events.iter().any(|&e| (e - t).abs() <= EVENT_EPS)
    }

    fn record_sample(&mut self, t: f64, x: &[f64]) -> bool {
        if t < self.record.from - EVENT_EPS {
            return true;
        }
        match self.model.outputs(x) {
            Ok(o) => {
                let state = self.record.states.then_some(x);
                self.trajectory.push_sample(t, state, &o.voltages, o.p_meas, o.q_meas);
                true
            }
            Err(e) => {
                self.fail(t, format!("network solve failed at sample: {e}"));
                false
            }
        }
    }

    /// Emit regular samples up to the current integrator time.
    fn emit_samples(&mut self) -> bool {
        let t_now = self.ode.t();
        loop {
            if self.next_sample > 0 && self.sample_time(self.next_sample - 1) >= self.t_end {
                return true;
            }
            let ts = self.sample_time(self.next_sample);
            if ts > t_now + EVENT_EPS {
                return true;
            }
            self.next_sample += 1;
            if self.is_event_time(ts) {
                continue;
            }
            let mut x = std::mem::take(&mut self.work);
            if (ts - t_now).abs() <= EVENT_EPS {
                x.copy_from_slice(self.ode.y());
            } else {
                self.ode.interpolate(ts, &mut x);
                self.model_project(&mut x);
            }
            let ok = self.record_sample(ts, &x);
            self.work = x;
            if !ok {
                return false;
            }
        }
    }

    fn model_project(&self, x: &mut [f64]) {
        use super::rosenbrock::OdeSystem;
        self.model.project(x);
    }

    /// Record both sides of the events at the current time and restart.
    fn apply_events(&mut self) {
        let t = self.ode.t();
        let x = self.ode.y().to_vec();
        if !self.record_sample(t, &x) {
            return;
        }
        while self.next_event < self.events.len() && self.events[self.next_event] <= t + EVENT_EPS {
            self.next_event += 1;
        }
        if let Err(e) = self.apply_context(t) {
            self.fail(t, e.to_string());
            return;
        }
        if let Err(e) = self.ode.reset(&mut self.model, t, &x) {
            self.fail(t, format!("network solve failed after event: {e}"));
            return;
        }
        self.record_sample(t, &x);
    }

    /// Integrate to `t_stop` (capped at the end time). Events at exactly
    /// `t_stop` stay pending, so the state reflects the left limit there.
    pub fn advance_to(&mut self, t_stop: f64) {
        let t_stop = t_stop.min(self.t_end);
        loop {
            if self.failed {
                return;
            }
            let t = self.ode.t();
            let pending = self.events.get(self.next_event).copied();
            if let Some(te) = pending {
                if te <= t + EVENT_EPS && t < t_stop - EVENT_EPS {
                    // Samples due at or before the event time come first.
                    if !self.emit_samples() {
                        return;
                    }
                    self.apply_events();
                    continue;
                }
            }
            if !self.emit_samples() {
                return;
            }
            if t >= t_stop - EVENT_EPS {
                return;
            }
            let st = self.ode.stats;
            if st.accepted + st.rejected >= self.max_steps {
                self.fail(t, format!("step budget of {} exhausted at step size {:.3e}", self.max_steps, self.ode.step_size()));
                return;
            }
            let target = pending.map_or(t_stop, |te| te.min(t_stop));
            match self.ode.step(&mut self.model, target) {
                Ok(_) => {}
                Err(StepError::System(e)) => {
                    self.fail(t, format!("network solve failed: {e}"));
                    return;
                }
                Err(StepError::StepTooSmall { t, h }) => {
                    self.fail(t, format!("step size {h:.3e} below minimum"));
                    return;
                }
            }
        }
    }

    /// Run to the end time, applying any events at the end as well.
    pub fn finish(mut self) -> Trajectory {
        self.advance_to(self.t_end);
        self.trajectory
    }
}

/// Simulate a scenario from its steady initial state.
pub fn simulate(scenario: &Scenario) -> Result<Trajectory, SimError> {
    simulate_with(scenario, RecordOptions::default())
}

pub fn simulate_with(scenario: &Scenario, record: RecordOptions) -> Result<Trajectory, SimError> {
    Ok(Simulation::new(scenario, record)?.finish())
}
