//! Monte Carlo survivability studies.
//!
//! Every trial draws from its own random stream derived from the master seed
//! and the trial index, runs one simulation and classifies it against the
//! limiting curve. Trials run on a worker pool; results are gathered by trial
//! index, so the outcome does not depend on the number of workers.

mod cells;
mod sampling;

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use cells::{cluster_cells, Cell, CellLattice, PointVerdict};
pub use sampling::{sample_fault, trial_rng, FaultModel};

use crate::control::{ControlParams, PowerPair, ReferenceStep};
use crate::dynamics::{RecordOptions, SimError, Simulation, SolverSettings, Trajectory};
use crate::fault::{check_survival, FaultSpec, LimitingCurve, SurvivalVerdict};
use crate::network::{Grid, LoadModel};
use crate::powerflow::{solve_power_flow, transformer_mv_flow, PowerFlowError, PowerFlowOptions};
use crate::scenario::{Scenario, DEFAULT_PQ_MIN_VOLTAGE};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("base operating point: {0}")]
    PowerFlow(#[from] PowerFlowError),
    #[error("grid has no transformer to measure the interconnection flow")]
    NoTransformer,
    #[error("unknown bus {0:?}")]
    UnknownBus(String),
    #[error("invalid study configuration: {0}")]
    Invalid(String),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("trial {index}: {source}")]
    Trial {
        index: usize,
        #[source]
        source: SimError,
    },
}

/// Settings shared by all trials of a study.
#[derive(Debug, Clone, Serialize)]
pub struct StudyConfig {
    pub load_model: LoadModel,
    pub pq_min_voltage: f64,
    pub control: ControlParams,
    pub solver: SolverSettings,
    pub fault_model: FaultModel,
    pub curve: LimitingCurve,
    /// Buses checked against the curve; all MV buses when empty.
    pub monitored: Vec<String>,
    pub master_seed: u64,
    /// Worker threads; 0 uses the available parallelism.
    #[serde(skip)]
    pub workers: usize,
}

impl StudyConfig {
    pub fn new(load_model: LoadModel, master_seed: u64) -> Self {
        Self {
            load_model,
            pq_min_voltage: DEFAULT_PQ_MIN_VOLTAGE,
            control: ControlParams::default(),
            solver: SolverSettings::default(),
            fault_model: FaultModel::default(),
            curve: LimitingCurve::bundled(),
            monitored: Vec::new(),
            master_seed,
            workers: 0,
        }
    }

    fn validate(&self) -> Result<(), StudyError> {
        self.fault_model.validate().map_err(StudyError::Invalid)?;
        self.control.validate().map_err(StudyError::Invalid)?;
        self.solver.validate().map_err(StudyError::Invalid)?;
        Ok(())
    }

    fn monitored_indices(&self, grid: &Grid) -> Result<Vec<usize>, StudyError> {
        if self.monitored.is_empty() {
            return Ok(grid.mv_bus_indices());
        }
        self.monitored
            .iter()
            .map(|b| grid.bus_index(b).ok_or_else(|| StudyError::UnknownBus(b.clone())))
            .collect()
    }

    /// Scenario skeleton for one trial.
    pub fn scenario(&self, grid: &Grid, t_end: f64) -> Scenario {
        let mut s = Scenario::steady(grid.clone(), self.load_model, t_end);
        s.pq_min_voltage = self.pq_min_voltage;
        s.control = self.control;
        s.solver = self.solver;
        s
    }

    fn pool(&self) -> Result<rayon::ThreadPool, StudyError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| StudyError::Pool(e.to_string()))
    }
}

/// Outcome of one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial_index: usize,
    pub p_ref: Option<f64>,
    pub q_ref: Option<f64>,
    pub r_on_ohm: f64,
    pub duration_s: f64,
    /// False when the operating point failed the settling filter.
    pub included: bool,
    pub survived: bool,
    pub outcome: TrialOutcome,
    pub failure_bus: Option<String>,
    pub failure_t: Option<f64>,
    /// Voltage and curve value at the first violation.
    pub failure_v: Option<f64>,
    pub failure_v_min: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialOutcome {
    Survived,
    Violated,
    NumericalFailure,
    Undecidable,
    Filtered,
}

impl TrialOutcome {
    pub fn tag(self) -> &'static str {
        match self {
            TrialOutcome::Survived => "survived",
            TrialOutcome::Violated => "violated",
            TrialOutcome::NumericalFailure => "numerical_failure",
            TrialOutcome::Undecidable => "undecidable",
            TrialOutcome::Filtered => "filtered",
        }
    }
}

fn record(index: usize, fault: &FaultSpec, refs: Option<PowerPair>, verdict: &SurvivalVerdict) -> TrialRecord {
    let (outcome, failure_t) = match verdict {
        SurvivalVerdict::Survived => (TrialOutcome::Survived, None),
        SurvivalVerdict::Violated(v) => (TrialOutcome::Violated, Some(v.t)),
        SurvivalVerdict::NumericalFailure { t } => (TrialOutcome::NumericalFailure, Some(*t)),
        SurvivalVerdict::Undecidable { covered_until, .. } => (TrialOutcome::Undecidable, Some(*covered_until)),
    };
    let violation = verdict.violation();
    TrialRecord {
        trial_index: index,
        p_ref: refs.map(|r| r.p_mw),
        q_ref: refs.map(|r| r.q_mvar),
        r_on_ohm: fault.r_on_ohm,
        duration_s: fault.duration,
        included: true,
        survived: verdict.survived(),
        outcome,
        failure_bus: violation.map(|v| v.bus.clone()),
        failure_t,
        failure_v: violation.map(|v| v.v),
        failure_v_min: violation.map(|v| v.v_min),
    }
}

/// Survivability estimate at one bus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivabilityEstimate {
    pub bus: String,
    pub survivors: usize,
    pub trials: usize,
    pub mu: f64,
    pub ci_half_width: f64,
    pub load_model: LoadModel,
    pub master_seed: u64,
}

/// Half-width bound `1 / (2 sqrt N)` of the survivability estimate.
pub fn ci_half_width(trials: usize) -> f64 {
    1.0 / (2.0 * (trials as f64).sqrt())
}

impl SurvivabilityEstimate {
    pub fn from_records(bus: &str, records: &[TrialRecord], load_model: LoadModel, master_seed: u64) -> Self {
        let trials = records.iter().filter(|r| r.included).count();
        let survivors = records.iter().filter(|r| r.included && r.survived).count();
        Self {
            bus: bus.to_string(),
            survivors,
            trials,
            mu: if trials == 0 { 0.0 } else { survivors as f64 / trials as f64 },
            ci_half_width: ci_half_width(trials),
            load_model,
            master_seed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SingleNodeResult {
    pub estimate: SurvivabilityEstimate,
    pub records: Vec<TrialRecord>,
}

/// Fault onset in single-node trials, s.
pub const SINGLE_NODE_T_ON: f64 = 0.5;

/// Run the fault scenario of one trial and classify it.
pub fn run_fault_trial(
    grid: &Grid,
    config: &StudyConfig,
    fault: &FaultSpec,
    monitored: &[usize],
) -> Result<(SurvivalVerdict, Trajectory), SimError> {
    let t_end = fault.t_on + config.curve.horizon();
    let mut scenario = config.scenario(grid, t_end.max(fault.t_off()));
    scenario.faults = vec![fault.clone()];
    let record = RecordOptions {
        from: fault.t_on,
        states: false,
    };
    let tr = Simulation::new(&scenario, record)?.finish();
    Ok((check_survival(&tr, fault, &config.curve, monitored), tr))
}

/// Lowest voltage magnitude at `bus` over samples in `[t0, t1]`.
pub fn min_voltage_between(tr: &Trajectory, bus: usize, t0: f64, t1: f64) -> Option<f64> {
    tr.times()
        .iter()
        .enumerate()
        .filter(|(_, &t)| t >= t0 && t <= t1)
        .map(|(k, _)| tr.voltages_at(k)[bus].norm())
        .reduce(f64::min)
}

/// Faults used by a single-node study, in trial order.
pub fn single_node_faults(config: &StudyConfig, bus: &str, n: usize) -> Vec<FaultSpec> {
    (0..n)
        .map(|i| {
            let mut rng = trial_rng(config.master_seed, i as u64);
            sample_fault(&mut rng, &config.fault_model, bus, SINGLE_NODE_T_ON)
        })
        .collect()
}

/// Survivability of faults at `bus` from `n` independent trials.
pub fn single_node_survivability(
    grid: &Grid,
    bus: &str,
    n: usize,
    config: &StudyConfig,
) -> Result<SingleNodeResult, StudyError> {
    config.validate()?;
    if n == 0 {
        return Err(StudyError::Invalid("number of trials must be >= 1".into()));
    }
    if grid.bus_index(bus).is_none() {
        return Err(StudyError::UnknownBus(bus.to_string()));
    }
    solve_power_flow(grid, config.load_model, &BTreeMap::new(), &PowerFlowOptions::default())?;
    let monitored = config.monitored_indices(grid)?;
    let faults = single_node_faults(config, bus, n);
    let pool = config.pool()?;
    let records: Vec<TrialRecord> = pool.install(|| {
        faults
            .par_iter()
            .enumerate()
            .map(|(i, fault)| {
                run_fault_trial(grid, config, fault, &monitored)
                    .map(|(verdict, _)| record(i, fault, None, &verdict))
                    .map_err(|source| StudyError::Trial { index: i, source })
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(SingleNodeResult {
        estimate: SurvivabilityEstimate::from_records(bus, &records, config.load_model, config.master_seed),
        records,
    })
}

/// Settings specific to the operating-point envelope study.
#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeConfig {
    pub fault_bus: String,
    pub samples: usize,
    /// Half-widths of the sampling box around the base flow, MW and Mvar.
    pub p_half_range: f64,
    pub q_half_range: f64,
    pub step_time: f64,
    pub t_on: f64,
    /// Relative control error above which a set point counts as not reached.
    pub filter_threshold: f64,
    /// Apply the threshold to the reactive error as well.
    pub filter_q: bool,
    pub cell_size: f64,
    pub stride: f64,
    pub min_count: usize,
}

impl EnvelopeConfig {
    pub fn new(fault_bus: &str, samples: usize) -> Self {
        Self {
            fault_bus: fault_bus.to_string(),
            samples,
            p_half_range: 15.0,
            q_half_range: 10.0,
            step_time: 0.25,
            t_on: 1.25,
            filter_threshold: 0.05,
            filter_q: true,
            cell_size: 0.5,
            stride: 0.25,
            min_count: 100,
        }
    }

    fn validate(&self) -> Result<(), StudyError> {
        let bad = |m: &str| Err(StudyError::Invalid(m.to_string()));
        if self.samples == 0 {
            return bad("number of samples must be >= 1");
        }
        if !(self.p_half_range >= 0.0 && self.q_half_range >= 0.0) {
            return bad("sampling half-ranges must be >= 0");
        }
        if !(self.filter_threshold > 0.0) {
            return bad("filter threshold must be > 0");
        }
        if !(self.step_time > 0.0 && self.t_on > self.step_time) {
            return bad("need 0 < step_time < t_on");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeMap {
    pub base: PowerPair,
    pub lattice: CellLattice,
    pub min_count: usize,
    pub cells: Vec<Cell>,
    pub samples: usize,
    pub included: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeResult {
    pub map: EnvelopeMap,
    pub records: Vec<TrialRecord>,
}

/// Whether the interconnection flow has settled close enough to its reference.
pub fn passes_filter(reference: PowerPair, measured: PowerPair, threshold: f64, check_q: bool) -> bool {
    let dp = (reference.p_mw - measured.p_mw).abs() / measured.p_mw.abs();
    if !(dp < threshold) {
        return false;
    }
    if check_q {
        let s = measured.p_mw.hypot(measured.q_mvar);
        let dq = (reference.q_mvar - measured.q_mvar).abs() / s;
        return dq < threshold;
    }
    true
}

pub fn envelope_trial(
    grid: &Grid,
    config: &StudyConfig,
    env: &EnvelopeConfig,
    base: PowerPair,
    monitored: &[usize],
    index: usize,
) -> Result<TrialRecord, SimError> {
    let mut rng = trial_rng(config.master_seed, index as u64);
    let mut draw = |c: f64, half: f64| if half > 0.0 { rng.random_range(c - half..=c + half) } else { c };
    let p_ref = draw(base.p_mw, env.p_half_range);
    let q_ref = draw(base.q_mvar, env.q_half_range);
    let fault = sample_fault(&mut rng, &config.fault_model, &env.fault_bus, env.t_on);
    let reference = PowerPair::new(p_ref, q_ref);

    let t_end = (env.t_on + config.curve.horizon()).max(fault.t_off());
    let mut scenario = config.scenario(grid, t_end);
    scenario.references = vec![ReferenceStep {
        t: env.step_time,
        p_mw: p_ref,
        q_mvar: q_ref,
    }];
    scenario.faults = vec![fault.clone()];
    let mut sim = Simulation::new(
        &scenario,
        RecordOptions {
            from: env.t_on,
            states: false,
        },
    )?;
    sim.advance_to(env.t_on);
    let settled = !sim.failed()
        && sim
            .measurement()
            .is_some_and(|m| passes_filter(reference, m, env.filter_threshold, env.filter_q));
    if !settled {
        return Ok(TrialRecord {
            trial_index: index,
            p_ref: Some(p_ref),
            q_ref: Some(q_ref),
            r_on_ohm: fault.r_on_ohm,
            duration_s: fault.duration,
            included: false,
            survived: false,
            outcome: TrialOutcome::Filtered,
            failure_bus: None,
            failure_t: None,
            failure_v: None,
            failure_v_min: None,
        });
    }
    let tr = sim.finish();
    let verdict = check_survival(&tr, &fault, &config.curve, monitored);
    Ok(record(index, &fault, Some(reference), &verdict))
}

/// Interconnection flow of the base operating point (no DG output).
pub fn base_flow(grid: &Grid, load_model: LoadModel) -> Result<PowerPair, StudyError> {
    let pf = solve_power_flow(grid, load_model, &BTreeMap::new(), &PowerFlowOptions::default())?;
    if grid.transformer().is_none() {
        return Err(StudyError::NoTransformer);
    }
    let (p, q) = transformer_mv_flow(grid, &pf.voltages)?;
    Ok(PowerPair::new(p, q))
}

/// Survivability over random interconnection set points around the base flow.
pub fn envelope_study(grid: &Grid, config: &StudyConfig, env: &EnvelopeConfig) -> Result<EnvelopeResult, StudyError> {
    config.validate()?;
    env.validate()?;
    if grid.bus_index(&env.fault_bus).is_none() {
        return Err(StudyError::UnknownBus(env.fault_bus.clone()));
    }
    let base = base_flow(grid, config.load_model)?;
    let monitored = config.monitored_indices(grid)?;
    let lattice = CellLattice {
        p_range: (base.p_mw - env.p_half_range, base.p_mw + env.p_half_range),
        q_range: (base.q_mvar - env.q_half_range, base.q_mvar + env.q_half_range),
        cell_size: env.cell_size,
        stride: env.stride,
    };
    lattice.validate().map_err(StudyError::Invalid)?;
    let pool = config.pool()?;
    let records: Vec<TrialRecord> = pool.install(|| {
        (0..env.samples)
            .into_par_iter()
            .map(|i| {
                envelope_trial(grid, config, env, base, &monitored, i)
                    .map_err(|source| StudyError::Trial { index: i, source })
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let points: Vec<PointVerdict> = records
        .iter()
        .filter(|r| r.included)
        .map(|r| PointVerdict {
            p: r.p_ref.unwrap_or(base.p_mw),
            q: r.q_ref.unwrap_or(base.q_mvar),
            survived: r.survived,
        })
        .collect();
    let cells = cluster_cells(&points, &lattice, env.min_count);
    Ok(EnvelopeResult {
        map: EnvelopeMap {
            base,
            lattice,
            min_count: env.min_count,
            cells,
            samples: env.samples,
            included: points.len(),
        },
        records,
    })
}
