use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use super::network::{NetworkError, NetworkSolver};
use super::rosenbrock::OdeSystem;
use super::DynamicState;
use crate::control::{current_command, dg_dynamics, ControlParams, DgState, Hold, PowerPair};
use crate::fault::FaultSpec;
use crate::network::{Grid, LoadModel};
use crate::powerflow::PowerFlowSolution;
use crate::ybus::{assemble_ybus, transformer_stamp, AdmittanceMatrix, ElementStamp, YBusError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    YBus(#[from] YBusError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("power flow solution does not match the grid ({got} voltages for {expected} buses)")]
    SolutionMismatch { got: usize, expected: usize },
}

/// Consistent initial DG states from a converged power flow: the PLL sits on
/// the bus angle, currents reproduce the steady injection and the integrators
/// hold it as their set point.
pub fn initialize_state(grid: &Grid, pf: &PowerFlowSolution, params: &ControlParams) -> Result<DynamicState, ModelError> {
    if pf.voltages.len() != grid.n_buses() {
        return Err(ModelError::SolutionMismatch {
            got: pf.voltages.len(),
            expected: grid.n_buses(),
        });
    }
    let s_base = grid.s_base();
    let dgs = grid
        .dg_bus_indices()
        .into_iter()
        .map(|b| {
            let u = pf.voltages[b];
            let s = pf.dg_injections[b];
            let theta = u.arg();
            let i_dq = (s / u).conj() * Complex64::from_polar(1.0, -theta);
            DgState {
                chi_p: (s.re * s_base).clamp(params.p_min, params.p_max),
                chi_q: (s.im * s_base).clamp(params.q_min, params.q_max),
                theta_pll: theta,
                i_d: i_dq.re,
                i_q: i_dq.im,
            }
        })
        .collect();
    Ok(DynamicState { t: 0.0, dgs })
}

/// Network-side quantities at one instant.
#[derive(Debug, Clone)]
pub struct Outputs {
    pub voltages: Vec<Complex64>,
    pub p_meas: f64,
    pub q_meas: f64,
}

/// Right-hand side of the controlled grid for one segment between events.
#[derive(Debug, Clone)]
pub struct AdnModel {
    n_buses: usize,
    slack: usize,
    dg_buses: Vec<usize>,
    /// DGs attached to each bus.
    dgs_at_bus: Vec<Vec<usize>>,
    s_base: f64,
    params: ControlParams,
    load_model: LoadModel,
    base_ybus: AdmittanceMatrix,
    pq_loads: Vec<Complex64>,
    pq_min_voltage: f64,
    slack_voltage: Complex64,
    meter: Option<ElementStamp>,
    solver: NetworkSolver,
    grid: Grid,
    reference: PowerPair,
    last_voltages: Vec<Complex64>,
    /// Cached network solution from the last right-hand-side call.
    cache: Option<(Vec<f64>, Vec<Complex64>)>,
    /// Integrator holds by DG, latched at accepted states.
    holds: Vec<Hold>,
}

impl AdnModel {
    pub fn new(
        grid: &Grid,
        load_model: LoadModel,
        pq_min_voltage: f64,
        params: ControlParams,
        initial_voltages: &[Complex64],
    ) -> Result<Self, ModelError> {
        let base_ybus = assemble_ybus(grid, load_model, &[])?;
        let pq_loads = match load_model {
            LoadModel::ConstantPq => grid.load_pu(),
            LoadModel::ConstantImpedance => vec![Complex64::new(0.0, 0.0); grid.n_buses()],
        };
        let meter = grid.transformer().map(|tr| transformer_stamp(grid, tr)).transpose()?;
        let dg_buses = grid.dg_bus_indices();
        let mut dgs_at_bus = vec![Vec::new(); grid.n_buses()];
        for (k, &b) in dg_buses.iter().enumerate() {
            dgs_at_bus[b].push(k);
        }
        let solver = NetworkSolver::new(&base_ybus, grid.slack_index(), grid.slack_voltage(), &pq_loads, pq_min_voltage);
        Ok(Self {
            n_buses: grid.n_buses(),
            slack: grid.slack_index(),
            dg_buses,
            dgs_at_bus,
            s_base: grid.s_base(),
            params,
            load_model,
            base_ybus,
            pq_loads,
            pq_min_voltage,
            slack_voltage: grid.slack_voltage(),
            meter,
            solver,
            grid: grid.clone(),
            reference: PowerPair::default(),
            last_voltages: initial_voltages.to_vec(),
            cache: None,
            holds: vec![Hold::NONE; grid.dg_buses().len()],
        })
    }

    pub fn n_dgs(&self) -> usize {
        self.dg_buses.len()
    }

    pub fn params(&self) -> &ControlParams {
        &self.params
    }

    /// Swap the network for the given set of active faults.
    pub fn set_faults(&mut self, faults: &[FaultSpec]) -> Result<(), ModelError> {
        let ybus = if faults.is_empty() {
            self.base_ybus.clone()
        } else {
            assemble_ybus(&self.grid, self.load_model, faults)?
        };
        self.solver = NetworkSolver::new(&ybus, self.slack, self.slack_voltage, &self.pq_loads, self.pq_min_voltage);
        self.cache = None;
        Ok(())
    }

    pub fn set_reference(&mut self, reference: PowerPair) {
        self.reference = reference;
        self.cache = None;
    }

    pub fn reference(&self) -> PowerPair {
        self.reference
    }

    fn algebraic(&self) -> bool {
        self.params.t_conv == 0.0
    }

    /// Network current of every DG when the converter current is a state.
    fn state_injection(&self, x: &[f64]) -> Vec<Complex64> {
        let mut inj = vec![Complex64::new(0.0, 0.0); self.n_buses];
        for (k, &b) in self.dg_buses.iter().enumerate() {
            let s = DgState::from_slice(&x[k * DgState::LEN..]);
            inj[b] += Complex64::new(s.i_d, s.i_q) * Complex64::from_polar(1.0, s.theta_pll);
        }
        inj
    }

    /// Solve the network for the state `x`.
    pub fn voltages(&mut self, x: &[f64]) -> Result<Vec<Complex64>, NetworkError> {
        if let Some((cx, cv)) = &self.cache {
            if cx.as_slice() == x {
                return Ok(cv.clone());
            }
        }
        let v = if self.algebraic() {
            let s_base = self.s_base;
            let params = self.params;
            let dgs_at_bus = &self.dgs_at_bus;
            self.solver.solve(
                &self.last_voltages,
                |bus, u| {
                    dgs_at_bus[bus]
                        .iter()
                        .map(|&k| {
                            let s = DgState::from_slice(&x[k * DgState::LEN..]);
                            let (cmd, _) = current_command(&s, u, &params, s_base);
                            Complex64::new(cmd.0, cmd.1) * Complex64::from_polar(1.0, s.theta_pll)
                        })
                        .sum()
                },
                true,
            )?
        } else {
            let inj = self.state_injection(x);
            self.solver.solve_fixed(&inj, &self.last_voltages)?
        };
        self.last_voltages.clone_from(&v);
        self.cache = Some((x.to_vec(), v.clone()));
        Ok(v)
    }

    /// Interconnection power into the MV grid (MW, Mvar).
    pub fn measurement(&self, v: &[Complex64]) -> (f64, f64) {
        match &self.meter {
            Some(stamp) => {
                let (_, s_to) = stamp.terminal_powers(v[stamp.from], v[stamp.to]);
                (-s_to.re * self.s_base, -s_to.im * self.s_base)
            }
            None => {
                let i: Complex64 = (0..self.n_buses).map(|j| self.solver_y(self.slack, j) * v[j]).sum();
                let s = v[self.slack] * i.conj();
                (s.re * self.s_base, s.im * self.s_base)
            }
        }
    }

    fn solver_y(&self, i: usize, j: usize) -> Complex64 {
        self.base_ybus.get(i, j)
    }

    pub fn outputs(&mut self, x: &[f64]) -> Result<Outputs, NetworkError> {
        let voltages = self.voltages(x)?;
        let (p_meas, q_meas) = self.measurement(&voltages);
        Ok(Outputs { voltages, p_meas, q_meas })
    }

    /// Whether any bus voltage lies outside the freeze band.
    pub fn outside_band(&self, v: &[Complex64]) -> bool {
        let band = self.params.freeze_band;
        v.iter().any(|u| (u.norm() - self.params.u_ref).abs() > band)
    }

    /// Derivatives for a known network solution.
    fn derivatives(&self, x: &[f64], v: &[Complex64], dy: &mut [f64]) {
        let (p, q) = self.measurement(v);
        let error = PowerPair::new(self.reference.p_mw - p, self.reference.q_mvar - q);
        for (k, &b) in self.dg_buses.iter().enumerate() {
            let off = k * DgState::LEN;
            let s = DgState::from_slice(&x[off..]);
            let r = dg_dynamics(&s, v[b], error, self.holds[k], &self.params, self.s_base);
            dy[off..off + DgState::LEN].copy_from_slice(&r.derivative.to_array());
        }
    }
}

impl OdeSystem for AdnModel {
    type Error = NetworkError;

    fn dim(&self) -> usize {
        self.dg_buses.len() * DgState::LEN
    }

    fn rhs(&mut self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), NetworkError> {
        let v = self.voltages(y)?;
        self.derivatives(y, &v, dy);
        Ok(())
    }

    fn jacobian(&mut self, t: f64, y: &[f64], f0: &[f64], jac: &mut DMatrix<f64>) -> Result<(), NetworkError> {
        let n = self.dim();
        let v0 = self.voltages(y)?;
        let mut yp = y.to_vec();
        let mut fp = vec![0.0; n];
        for j in 0..n {
            let h = 1e-7 * y[j].abs().max(1e-5);
            yp[j] = y[j] + h;
            // Integrator states do not enter the network when currents are states.
            if !self.algebraic() && j % DgState::LEN < 2 {
                self.derivatives(&yp, &v0, &mut fp);
            } else {
                self.rhs(t, &yp, &mut fp)?;
            }
            for i in 0..n {
                jac[(i, j)] = (fp[i] - f0[i]) / h;
            }
            yp[j] = y[j];
        }
        self.last_voltages = v0;
        Ok(())
    }

    fn update_modes(&mut self, _t: f64, y: &[f64]) -> Result<bool, NetworkError> {
        let v = self.voltages(y)?;
        let frozen = self.outside_band(&v);
        let (p, q) = self.measurement(&v);
        let error = PowerPair::new(self.reference.p_mw - p, self.reference.q_mvar - q);
        let mut changed = false;
        for k in 0..self.holds.len() {
            let s = DgState::from_slice(&y[k * DgState::LEN..]);
            let h = Hold::evaluate(&s, error, frozen, &self.params, self.s_base);
            changed |= h != self.holds[k];
            self.holds[k] = h;
        }
        Ok(changed)
    }

    fn project(&self, y: &mut [f64]) -> bool {
        let mut changed = false;
        for k in 0..self.dg_buses.len() {
            let off = k * DgState::LEN;
            let p = y[off].clamp(self.params.p_min, self.params.p_max);
            let q = y[off + 1].clamp(self.params.q_min, self.params.q_max);
            changed |= p != y[off] || q != y[off + 1];
            y[off] = p;
            y[off + 1] = q;
        }
        changed
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::powerflow::{solve_power_flow, transformer_mv_flow, PowerFlowOptions};

    fn base() -> (Grid, PowerFlowSolution) {
        let g = Grid::cigre12();
        let pf = solve_power_flow(&g, LoadModel::ConstantPq, &BTreeMap::new(), &PowerFlowOptions::default()).unwrap();
        (g, pf)
    }

    #[test]
    fn zero_injection_gives_zero_states() {
        let (g, pf) = base();
        let s = initialize_state(&g, &pf, &ControlParams::default()).unwrap();
        assert_eq!(s.dgs.len(), 11);
        for d in &s.dgs {
            assert_eq!((d.chi_p, d.chi_q, d.i_d, d.i_q), (0.0, 0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn base_case_is_an_equilibrium() {
        let (g, pf) = base();
        let params = ControlParams::default();
        let s = initialize_state(&g, &pf, &params).unwrap();
        let mut m = AdnModel::new(&g, LoadModel::ConstantPq, 0.7, params, &pf.voltages).unwrap();
        let (p, q) = transformer_mv_flow(&g, &pf.voltages).unwrap();
        m.set_reference(PowerPair::new(p, q));
        let x = s.to_vector();
        let mut dx = vec![0.0; x.len()];
        m.rhs(0.0, &x, &mut dx).unwrap();
        assert!(dx.iter().all(|d| d.abs() < 1e-6), "{dx:?}");
        let out = m.outputs(&x).unwrap();
        assert!((out.p_meas - p).abs() < 1e-9);

        // A reference below the import raises DG output at 1 MW/s per MW.
        m.set_reference(PowerPair::new(p - 1.0, q));
        m.update_modes(0.0, &x).unwrap();
        m.rhs(0.0, &x, &mut dx).unwrap();
        assert!((dx[0] - 1.0).abs() < 1e-9);
        // Above it the active integrators sit on their lower limit; the
        // reactive ones still move.
        m.set_reference(PowerPair::new(p + 1.0, q + 1.0));
        assert!(m.update_modes(0.0, &x).unwrap());
        m.rhs(0.0, &x, &mut dx).unwrap();
        assert_eq!(dx[0], 0.0);
        assert!((dx[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn nonzero_dg_injection_initializes_consistently() {
        let g = Grid::cigre12();
        let dg: BTreeMap<String, Complex64> = g
            .dg_buses()
            .iter()
            .map(|b| (b.clone(), Complex64::new(0.5, -0.2)))
            .collect();
        let pf = solve_power_flow(&g, LoadModel::ConstantPq, &dg, &PowerFlowOptions::default()).unwrap();
        let params = ControlParams::default();
        let s = initialize_state(&g, &pf, &params).unwrap();
        assert!((s.dgs[3].chi_p - 0.5).abs() < 1e-12 && (s.dgs[3].chi_q + 0.2).abs() < 1e-12);
        for t_conv in [0.01, 0.0] {
            let params = ControlParams { t_conv, ..params };
            let mut m = AdnModel::new(&g, LoadModel::ConstantPq, 0.7, params, &pf.voltages).unwrap();
            let (p, q) = transformer_mv_flow(&g, &pf.voltages).unwrap();
            m.set_reference(PowerPair::new(p, q));
            let x = s.to_vector();
            let v = m.voltages(&x).unwrap();
            for (a, b) in v.iter().zip(&pf.voltages) {
                assert!((a - b).norm() < 1e-8);
            }
            let mut dx = vec![0.0; x.len()];
            m.rhs(0.0, &x, &mut dx).unwrap();
            assert!(dx.iter().all(|d| d.abs() < 1e-6), "t_conv {t_conv}: {dx:?}");
        }
    }
}
