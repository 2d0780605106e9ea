use nalgebra::{DMatrix, DVector, LU};
use num_complex::Complex64;
use thiserror::Error;

use crate::ybus::AdmittanceMatrix;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum NetworkError {
    #[error("network equations did not converge (residual {residual:.3e} pu after {iterations} iterations)")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("singular network Jacobian")]
    Singular,
    #[error("bus voltage collapsed to zero")]
    Collapse,
}

const TOL: f64 = 1e-10;
const MAX_ITER: usize = 30;
const FD_STEP: f64 = 1e-7;

/// Solves `Y u = i_dg(u) - i_load(u)` for all non-slack buses, where
/// constant-power loads draw `conj(S / u)`.
///
/// The admittance matrix must already carry impedance loads and faults.
#[derive(Debug, Clone)]
pub struct NetworkSolver {
    n: usize,
    slack: usize,
    slack_voltage: Complex64,
    /// Non-slack bus index per unknown position.
    buses: Vec<usize>,
    /// Real form `[[G, -B], [B, G]]` of the non-slack block.
    y_real: DMatrix<f64>,
    /// Current injected by the slack voltage through the network, per position.
    slack_current: Vec<Complex64>,
    /// Constant-power consumption per position.
    loads: Vec<Complex64>,
    /// Below this magnitude constant-power loads turn into constant impedance.
    pq_min_voltage: f64,
    has_pq: bool,
    linear_lu: Option<LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl NetworkSolver {
    /// `pq_loads` is the constant-power consumption per bus in pu. Below
    /// `pq_min_voltage` a load keeps the admittance it has at that voltage;
    /// 0 keeps constant power at any voltage.
    pub fn new(
        ybus: &AdmittanceMatrix,
        slack: usize,
        slack_voltage: Complex64,
        pq_loads: &[Complex64],
        pq_min_voltage: f64,
    ) -> Self {
        let n = ybus.n();
        let buses: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
        let m = buses.len();
        let mut y_real = DMatrix::zeros(2 * m, 2 * m);
        for (r, &i) in buses.iter().enumerate() {
            for (c, &j) in buses.iter().enumerate() {
                let y = ybus.get(i, j);
                y_real[(r, c)] = y.re;
                y_real[(r, c + m)] = -y.im;
                y_real[(r + m, c)] = y.im;
                y_real[(r + m, c + m)] = y.re;
            }
        }
        let slack_current = buses.iter().map(|&i| ybus.get(i, slack) * slack_voltage).collect();
        let loads: Vec<Complex64> = buses.iter().map(|&i| pq_loads[i]).collect();
        let has_pq = loads.iter().any(|s| s.norm() > 0.0);
        let linear_lu = (!has_pq).then(|| y_real.clone().lu());
        Self {
            n,
            slack,
            slack_voltage,
            buses,
            y_real,
            slack_current,
            loads,
            pq_min_voltage,
            has_pq,
            linear_lu,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Solve with bus current injections that do not depend on the voltage.
    pub fn solve_fixed(&self, injections: &[Complex64], guess: &[Complex64]) -> Result<Vec<Complex64>, NetworkError> {
        self.solve(guess, |bus, _| injections[bus], false)
    }

    /// Solve with `injection(bus, u_bus)` giving the current each bus injects.
    /// `local_dependence` marks injections that vary with the own-bus voltage.
    pub fn solve<F>(&self, guess: &[Complex64], injection: F, local_dependence: bool) -> Result<Vec<Complex64>, NetworkError>
    where
        F: Fn(usize, Complex64) -> Complex64,
    {
        let m = self.buses.len();
        let mut out = vec![Complex64::new(0.0, 0.0); self.n];
        out[self.slack] = self.slack_voltage;
        if m == 0 {
            return Ok(out);
        }
        if let (Some(lu), false) = (&self.linear_lu, local_dependence) {
            let b = DVector::from_fn(2 * m, |r, _| {
                let k = r % m;
                let rhs = injection(self.buses[k], Complex64::new(0.0, 0.0)) - self.slack_current[k];
                if r < m {
                    rhs.re
                } else {
                    rhs.im
                }
            });
            let x = lu.solve(&b).ok_or(NetworkError::Singular)?;
            for (k, &bus) in self.buses.iter().enumerate() {
                out[bus] = Complex64::new(x[k], x[k + m]);
            }
            return Ok(out);
        }

        let mut u: Vec<Complex64> = self.buses.iter().map(|&b| guess[b]).collect();
        let mut residual = f64::INFINITY;
        for _ in 0..MAX_ITER {
            let r = self.residual(&u, &injection);
            residual = r.iter().fold(0.0, |a: f64, x| a.max(x.re.abs()).max(x.im.abs()));
            if !residual.is_finite() {
                return Err(NetworkError::Collapse);
            }
            if residual < TOL {
                for (k, &bus) in self.buses.iter().enumerate() {
                    out[bus] = u[k];
                }
                return Ok(out);
            }
            let mut jac = self.y_real.clone();
            for k in 0..m {
                let mut blk = [[0.0; 2]; 2];
                if self.has_pq && self.loads[k].norm() > 0.0 {
                    if u[k].norm() >= self.pq_min_voltage {
                        let a = -self.loads[k].conj() / (u[k].conj() * u[k].conj());
                        blk = [[a.re, a.im], [a.im, -a.re]];
                    } else {
                        let y = self.loads[k].conj() / (self.pq_min_voltage * self.pq_min_voltage);
                        blk = [[y.re, -y.im], [y.im, y.re]];
                    }
                }
                if local_dependence {
                    let bus = self.buses[k];
                    let base = injection(bus, u[k]);
                    let h = FD_STEP * u[k].norm().max(1e-3);
                    let dr = (injection(bus, u[k] + h) - base) / h;
                    let di = (injection(bus, u[k] + Complex64::new(0.0, h)) - base) / h;
                    blk[0][0] -= dr.re;
                    blk[1][0] -= dr.im;
                    blk[0][1] -= di.re;
                    blk[1][1] -= di.im;
                }
                jac[(k, k)] += blk[0][0];
                jac[(k, k + m)] += blk[0][1];
                jac[(k + m, k)] += blk[1][0];
                jac[(k + m, k + m)] += blk[1][1];
            }
            let f = DVector::from_fn(2 * m, |row, _| if row < m { -r[row].re } else { -r[row - m].im });
            let dx = jac.lu().solve(&f).ok_or(NetworkError::Singular)?;
            for k in 0..m {
                u[k] += Complex64::new(dx[k], dx[k + m]);
                if u[k].norm() < 1e-8 || !u[k].norm().is_finite() {
                    return Err(NetworkError::Collapse);
                }
            }
        }
        Err(NetworkError::NotConverged {
            iterations: MAX_ITER,
            residual,
        })
    }

    /// Current drawn by the constant-power load at position `k`.
    fn load_current(&self, k: usize, u: Complex64) -> Complex64 {
        let s = self.loads[k];
        if u.norm() >= self.pq_min_voltage {
            (s / u).conj()
        } else {
            s.conj() * u / (self.pq_min_voltage * self.pq_min_voltage)
        }
    }

    fn residual<F>(&self, u: &[Complex64], injection: &F) -> Vec<Complex64>
    where
        F: Fn(usize, Complex64) -> Complex64,
    {
        let m = self.buses.len();
        (0..m)
            .map(|r| {
                let mut acc = self.slack_current[r];
                for c in 0..m {
                    let y = Complex64::new(self.y_real[(r + m, c + m)], self.y_real[(r + m, c)]);
                    acc += y * u[c];
                }
                if self.has_pq && self.loads[r].norm() > 0.0 {
                    acc += self.load_current(r, u[r]);
                }
                acc - injection(self.buses[r], u[r])
            })
            .collect()
    }
}

/// One-shot network solve with fixed DG currents and constant-power loads,
/// both per bus in pu. Flat start unless a guess is given.
pub fn solve_network(
    ybus: &AdmittanceMatrix,
    slack: usize,
    slack_voltage: Complex64,
    dg_currents: &[Complex64],
    pq_loads: &[Complex64],
    pq_min_voltage: f64,
    guess: Option<&[Complex64]>,
) -> Result<Vec<Complex64>, NetworkError> {
    let solver = NetworkSolver::new(ybus, slack, slack_voltage, pq_loads, pq_min_voltage);
    let flat = vec![slack_voltage; ybus.n()];
    solver.solve_fixed(dg_currents, guess.unwrap_or(&flat))
}
