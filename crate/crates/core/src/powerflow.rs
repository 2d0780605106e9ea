//! Newton-Raphson AC power flow in polar coordinates.
//!
//! All non-slack buses are PQ buses. Specified injections are DG output minus
//! constant-power load demand; impedance loads live in the admittance matrix.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::network::{Grid, LoadModel};
use crate::ybus::{assemble_ybus, branch_stamp, transformer_stamp, AdmittanceMatrix, ElementStamp, YBusError};

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error(transparent)]
    YBus(#[from] YBusError),
    #[error("power flow did not converge in {iterations} iterations (max mismatch {residual:.3e} pu)")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("singular power flow Jacobian at iteration {0}")]
    SingularJacobian(usize),
    #[error("DG injection at unknown bus {0:?}")]
    UnknownBus(String),
    #[error("warm start has {got} voltages, grid has {expected} buses")]
    WarmStartLength { got: usize, expected: usize },
    #[error("unknown branch or transformer {0:?}")]
    UnknownElement(String),
    #[error("grid has no transformer")]
    NoTransformer,
}

#[derive(Debug, Clone)]
pub struct PowerFlowOptions {
    /// Convergence threshold on the largest absolute mismatch, pu.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial voltages by bus index; flat start when absent.
    pub warm_start: Option<Vec<Complex64>>,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    /// Per-unit voltage phasor per bus, in grid bus order.
    pub voltages: Vec<Complex64>,
    /// Number of mismatch evaluations, the final convergence check included.
    pub iterations: usize,
    /// Largest absolute mismatch at the returned voltages, pu.
    pub residual_norm: f64,
    pub load_model: LoadModel,
    /// Specified DG injections used for the solve, pu by bus index.
    pub dg_injections: Vec<Complex64>,
}

impl PowerFlowSolution {
    pub fn voltage(&self, grid: &Grid, bus: &str) -> Option<Complex64> {
        grid.bus_index(bus).map(|i| self.voltages[i])
    }
}

/// Active and reactive power entering an element at each end, MW and Mvar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchFlow {
    pub p_from: f64,
    pub q_from: f64,
    pub p_to: f64,
    pub q_to: f64,
}

impl BranchFlow {
    fn zero() -> Self {
        Self {
            p_from: 0.0,
            q_from: 0.0,
            p_to: 0.0,
            q_to: 0.0,
        }
    }

    fn from_stamp(stamp: &ElementStamp, voltages: &[Complex64], s_base: f64) -> Self {
        let (sf, st) = stamp.terminal_powers(voltages[stamp.from], voltages[stamp.to]);
        Self {
            p_from: sf.re * s_base,
            q_from: sf.im * s_base,
            p_to: st.re * s_base,
            q_to: st.im * s_base,
        }
    }
}

/// DG injections in MW/Mvar keyed by bus id to pu by bus index.
pub fn dg_injection_vector(
    grid: &Grid,
    dg_injections: &BTreeMap<String, Complex64>,
) -> Result<Vec<Complex64>, PowerFlowError> {
    let mut out = vec![Complex64::new(0.0, 0.0); grid.n_buses()];
    for (bus, s) in dg_injections {
        let i = grid
            .bus_index(bus)
            .ok_or_else(|| PowerFlowError::UnknownBus(bus.clone()))?;
        out[i] += s / grid.s_base();
    }
    Ok(out)
}

/// Specified net injection per bus in pu: DG output minus constant-power load.
pub fn specified_injection(grid: &Grid, load_model: LoadModel, dg: &[Complex64]) -> Vec<Complex64> {
    let loads = grid.load_pu();
    (0..grid.n_buses())
        .map(|i| match load_model {
            LoadModel::ConstantPq => dg[i] - loads[i],
            LoadModel::ConstantImpedance => dg[i],
        })
        .collect()
}

/// Injection implied by the network, `u * conj(Y u)`.
pub fn network_injection(ybus: &AdmittanceMatrix, voltages: &[Complex64]) -> Vec<Complex64> {
    ybus.currents(voltages)
        .into_iter()
        .zip(voltages)
        .map(|(i, v)| v * i.conj())
        .collect()
}

fn mismatch_with(
    ybus: &AdmittanceMatrix,
    spec: &[Complex64],
    voltages: &[Complex64],
    slack: usize,
) -> Vec<Complex64> {
    let mut m: Vec<Complex64> = network_injection(ybus, voltages)
        .into_iter()
        .zip(spec)
        .map(|(calc, s)| s - calc)
        .collect();
    m[slack] = Complex64::new(0.0, 0.0);
    m
}

/// Complex power mismatch per bus in pu; the slack entry is zero.
pub fn power_mismatch(
    grid: &Grid,
    voltages: &[Complex64],
    load_model: LoadModel,
    dg_injections: &BTreeMap<String, Complex64>,
) -> Result<Vec<Complex64>, PowerFlowError> {
    let ybus = assemble_ybus(grid, load_model, &[])?;
    let dg = dg_injection_vector(grid, dg_injections)?;
    let spec = specified_injection(grid, load_model, &dg);
    Ok(mismatch_with(&ybus, &spec, voltages, grid.slack_index()))
}

/// Non-slack bus indices in bus order; the unknown vector is
/// `[angles of these buses, magnitudes of these buses]`.
pub fn unknown_buses(grid: &Grid) -> Vec<usize> {
    let slack = grid.slack_index();
    (0..grid.n_buses()).filter(|&i| i != slack).collect()
}

/// Jacobian of the stacked mismatch `[Re; Im]` over the non-slack buses with
/// respect to `[angles; magnitudes]`.
pub fn mismatch_jacobian(ybus: &AdmittanceMatrix, voltages: &[Complex64], pq: &[usize]) -> DMatrix<f64> {
    let y = ybus.matrix();
    let ibus = ybus.currents(voltages);
    let m = pq.len();
    let mut jac = DMatrix::zeros(2 * m, 2 * m);
    let j = Complex64::i();
    for (r, &i) in pq.iter().enumerate() {
        for (c, &k) in pq.iter().enumerate() {
            // dS_i/dtheta_k and dS_i/d|V_k| of the calculated injection.
            let vk_unit = voltages[k] / voltages[k].norm();
            let mut ds_da = -j * voltages[i] * (y[(i, k)] * voltages[k]).conj();
            let mut ds_dm = voltages[i] * (y[(i, k)] * vk_unit).conj();
            if i == k {
                ds_da += j * voltages[i] * ibus[i].conj();
                ds_dm += ibus[i].conj() * vk_unit;
            }
            // Mismatch = spec - calc.
            jac[(r, c)] = -ds_da.re;
            jac[(r + m, c)] = -ds_da.im;
            jac[(r, c + m)] = -ds_dm.re;
            jac[(r + m, c + m)] = -ds_dm.im;
        }
    }
    jac
}

fn max_abs(m: &[Complex64], pq: &[usize]) -> f64 {
    pq.iter()
        .map(|&i| m[i].re.abs().max(m[i].im.abs()))
        .fold(0.0, f64::max)
}

/// Solve the power flow. DG injections are MW + j Mvar keyed by bus id.
pub fn solve_power_flow(
    grid: &Grid,
    load_model: LoadModel,
    dg_injections: &BTreeMap<String, Complex64>,
    options: &PowerFlowOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    let ybus = assemble_ybus(grid, load_model, &[])?;
    let dg = dg_injection_vector(grid, dg_injections)?;
    let spec = specified_injection(grid, load_model, &dg);
    let slack = grid.slack_index();
    let pq = unknown_buses(grid);
    let m = pq.len();

    let mut v: Vec<Complex64> = match &options.warm_start {
        Some(w) if w.len() != grid.n_buses() => {
            return Err(PowerFlowError::WarmStartLength {
                got: w.len(),
                expected: grid.n_buses(),
            })
        }
        Some(w) => w.clone(),
        None => vec![Complex64::new(1.0, 0.0); grid.n_buses()],
    };
    v[slack] = grid.slack_voltage();

    let mut iterations = 0;
    loop {
        let mis = mismatch_with(&ybus, &spec, &v, slack);
        iterations += 1;
        let residual = max_abs(&mis, &pq);
        if residual < options.tol {
            return Ok(PowerFlowSolution {
                voltages: v,
                iterations,
                residual_norm: residual,
                load_model,
                dg_injections: dg,
            });
        }
        if iterations > options.max_iter || !residual.is_finite() {
            return Err(PowerFlowError::NotConverged {
                iterations: iterations - 1,
                residual,
            });
        }
        let jac = mismatch_jacobian(&ybus, &v, &pq);
        let f = DVector::from_fn(2 * m, |r, _| if r < m { mis[pq[r]].re } else { mis[pq[r - m]].im });
        let dx = jac
            .lu()
            .solve(&f)
            .ok_or(PowerFlowError::SingularJacobian(iterations))?;
        for (r, &i) in pq.iter().enumerate() {
            let ang = v[i].arg() - dx[r];
            let mag = v[i].norm() - dx[r + m];
            v[i] = Complex64::from_polar(mag, ang);
        }
    }
}

/// Flow through a line or the transformer, looked up by element id.
pub fn branch_flow(grid: &Grid, solution: &PowerFlowSolution, element: &str) -> Result<BranchFlow, PowerFlowError> {
    element_flow(grid, &solution.voltages, element)
}

pub(crate) fn element_flow(grid: &Grid, voltages: &[Complex64], element: &str) -> Result<BranchFlow, PowerFlowError> {
    if let Some(br) = grid.branches().iter().find(|b| b.id == element) {
        if !br.in_service {
            return Ok(BranchFlow::zero());
        }
        let stamp = branch_stamp(grid, br)?;
        return Ok(BranchFlow::from_stamp(&stamp, voltages, grid.s_base()));
    }
    match grid.transformer() {
        Some(tr) if tr.id == element => {
            let stamp = transformer_stamp(grid, tr)?;
            Ok(BranchFlow::from_stamp(&stamp, voltages, grid.s_base()))
        }
        _ => Err(PowerFlowError::UnknownElement(element.to_string())),
    }
}

/// Power delivered by the transformer into the MV grid, measured at its MV
/// terminal (MW, Mvar). This is the interconnection measurement.
pub fn transformer_mv_flow(grid: &Grid, voltages: &[Complex64]) -> Result<(f64, f64), PowerFlowError> {
    let tr = grid.transformer().ok_or(PowerFlowError::NoTransformer)?;
    let f = element_flow(grid, voltages, &tr.id)?;
    Ok((-f.p_to, -f.q_to))
}
