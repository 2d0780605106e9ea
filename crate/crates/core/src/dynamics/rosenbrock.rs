//! Linearly implicit second-order Rosenbrock W-method (the Wolfbrandt pair
//! used by Matlab's ode23s) with a third-order error estimate, step-size
//! control and continuous output.
//!
//! The second-order solution stays second order for any Jacobian
//! approximation, so the Jacobian is refreshed only periodically or after a
//! rejected step.

use nalgebra::{DMatrix, DVector};

pub trait OdeSystem {
    type Error;

    fn dim(&self) -> usize;

    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), Self::Error>;

    /// Forward-difference Jacobian; systems may override with something cheaper.
    fn jacobian(&mut self, t: f64, y: &[f64], f0: &[f64], jac: &mut DMatrix<f64>) -> Result<(), Self::Error> {
        let n = self.dim();
        let mut yp = y.to_vec();
        let mut fp = vec![0.0; n];
        for j in 0..n {
            let h = 1e-7 * y[j].abs().max(1e-5);
            yp[j] = y[j] + h;
            self.rhs(t, &yp, &mut fp)?;
            for i in 0..n {
                jac[(i, j)] = (fp[i] - f0[i]) / h;
            }
            yp[j] = y[j];
        }
        Ok(())
    }

    /// Re-evaluate discrete modes at an accepted state. Modes stay fixed
    /// while a step is attempted, so the right-hand side is smooth inside
    /// every step. Returns true when a mode changed.
    fn update_modes(&mut self, _t: f64, _y: &[f64]) -> Result<bool, Self::Error> {
        Ok(false)
    }

    /// Map an accepted state back onto its admissible set. Returns true when
    /// the state changed.
    fn project(&self, _y: &mut [f64]) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Accepted { t: f64 },
}

#[derive(Debug)]
pub enum StepError<E> {
    System(E),
    StepTooSmall { t: f64, h: f64 },
}

const D: f64 = 0.292_893_218_813_452_5; // 1 / (2 + sqrt 2)
const E32: f64 = 7.414_213_562_373_095; // 6 + sqrt 2

#[derive(Debug, Clone)]
pub struct Ode23s {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    /// Accepted steps between Jacobian refreshes.
    pub jacobian_every: usize,
    t: f64,
    y: Vec<f64>,
    f0: Vec<f64>,
    h: f64,
    jac: DMatrix<f64>,
    jac_fresh: bool,
    jac_valid: bool,
    jac_age: usize,
    // Continuous output of the last accepted step.
    t_prev: f64,
    y_prev: Vec<f64>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    h_prev: f64,
    pub stats: Stats,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub jacobians: usize,
    pub rhs_failures: usize,
}

impl Ode23s {
    pub fn new(rtol: f64, atol: f64, max_step: f64) -> Self {
        Self {
            rtol,
            atol,
            max_step,
            jacobian_every: 10,
            t: 0.0,
            y: Vec::new(),
            f0: Vec::new(),
            h: 0.0,
            jac: DMatrix::zeros(0, 0),
            jac_fresh: false,
            jac_valid: false,
            jac_age: 0,
            t_prev: 0.0,
            y_prev: Vec::new(),
            k1: Vec::new(),
            k2: Vec::new(),
            h_prev: 0.0,
            stats: Stats::default(),
        }
    }

    /// Start (or restart after a discontinuity) from `(t, y)`.
    pub fn reset<S: OdeSystem>(&mut self, sys: &mut S, t: f64, y: &[f64]) -> Result<(), S::Error> {
        let n = sys.dim();
        self.t = t;
        self.y = y.to_vec();
        self.f0 = vec![0.0; n];
        sys.update_modes(t, &self.y)?;
        sys.rhs(t, &self.y, &mut self.f0)?;
        if self.jac.nrows() != n {
            self.jac = DMatrix::zeros(n, n);
        }
        self.jac_valid = false;
        self.jac_fresh = false;
        self.h = (1e-4f64).min(self.max_step);
        self.t_prev = t;
        self.y_prev = self.y.clone();
        self.k1 = vec![0.0; n];
        self.k2 = vec![0.0; n];
        self.h_prev = 0.0;
        Ok(())
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Proposed size of the next step.
    pub fn step_size(&self) -> f64 {
        self.h
    }

    pub fn derivative(&self) -> &[f64] {
        &self.f0
    }

    /// State inside the last accepted step `[t_prev, t]`.
    pub fn interpolate(&self, t: f64, out: &mut [f64]) {
        if self.h_prev == 0.0 || t >= self.t {
            out.copy_from_slice(&self.y);
            return;
        }
        let s = ((t - self.t_prev) / self.h_prev).clamp(0.0, 1.0);
        let c1 = s * (1.0 - s) / (1.0 - 2.0 * D);
        let c2 = s * (s - 2.0 * D) / (1.0 - 2.0 * D);
        let h = self.h_prev;
        for i in 0..out.len() {
            out[i] = self.y_prev[i] + h * (c1 * self.k1[i] + c2 * self.k2[i]);
        }
    }

    fn refresh_jacobian<S: OdeSystem>(&mut self, sys: &mut S) -> Result<(), S::Error> {
        sys.jacobian(self.t, &self.y, &self.f0, &mut self.jac)?;
        self.jac_valid = true;
        self.jac_fresh = true;
        self.jac_age = 0;
        self.stats.jacobians += 1;
        Ok(())
    }

    /// Take one accepted step without passing `t_limit`.
    pub fn step<S: OdeSystem>(&mut self, sys: &mut S, t_limit: f64) -> Result<StepOutcome, StepError<S::Error>> {
        let n = self.y.len();
        if !self.jac_valid || self.jac_age >= self.jacobian_every {
            self.refresh_jacobian(sys).map_err(StepError::System)?;
        }
        let span = (t_limit - self.t).max(0.0);
        let h_min = 1e-12 * self.t.abs().max(1.0);
        let mut h = self.h.min(self.max_step);
        let mut y1 = vec![0.0; n];
        let mut f1 = vec![0.0; n];
        let mut f2 = vec![0.0; n];
        loop {
            let last = h >= span * (1.0 - 1e-12);
            if last {
                h = span;
            }
            if h < h_min && !last {
                return Err(StepError::StepTooSmall { t: self.t, h });
            }
            let w = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - h * D * self.jac[(i, j)]);
            let Some(lu) = Some(w.lu()).filter(|lu| lu.is_invertible()) else {
                h *= 0.25;
                continue;
            };
            let solve = |v: DVector<f64>| lu.solve(&v).unwrap_or_else(|| DVector::from_element(v.len(), f64::NAN));

            let k1 = solve(DVector::from_column_slice(&self.f0));
            for i in 0..n {
                y1[i] = self.y[i] + 0.5 * h * k1[i];
            }
            if sys.rhs(self.t + 0.5 * h, &y1, &mut f1).is_err() {
                self.stats.rhs_failures += 1;
                h *= 0.25;
                continue;
            }
            let k2 = solve(DVector::from_fn(n, |i, _| f1[i] - k1[i])) + &k1;
            let y_new: Vec<f64> = (0..n).map(|i| self.y[i] + h * k2[i]).collect();
            let t_new = if last { t_limit } else { self.t + h };
            if sys.rhs(t_new, &y_new, &mut f2).is_err() {
                self.stats.rhs_failures += 1;
                h *= 0.25;
                continue;
            }
            let k3 = solve(DVector::from_fn(n, |i, _| {
                f2[i] - E32 * (k2[i] - f1[i]) - 2.0 * (k1[i] - self.f0[i])
            }));
            let mut err: f64 = 0.0;
            for i in 0..n {
                let e = h / 6.0 * (k1[i] - 2.0 * k2[i] + k3[i]);
                let sc = self.atol + self.rtol * self.y[i].abs().max(y_new[i].abs());
                err = err.max(e.abs() / sc);
            }
            if !err.is_finite() {
                err = 1e10;
            }
            let fac = if err == 0.0 { 5.0 } else { (0.8 * err.powf(-1.0 / 3.0)).clamp(0.2, 5.0) };
            if err > 1.0 {
                self.stats.rejected += 1;
                if !self.jac_fresh {
                    self.refresh_jacobian(sys).map_err(StepError::System)?;
                } else {
                    h *= fac.min(0.5);
                }
                continue;
            }
            self.stats.accepted += 1;
            self.t_prev = self.t;
            self.h_prev = t_new - self.t;
            self.y_prev.copy_from_slice(&self.y);
            self.k1.copy_from_slice(k1.as_slice());
            self.k2.copy_from_slice(k2.as_slice());
            self.t = t_new;
            self.y = y_new;
            let projected = sys.project(&mut self.y);
            let switched = sys.update_modes(self.t, &self.y).map_err(StepError::System)?;
            if projected || switched {
                sys.rhs(self.t, &self.y, &mut f2).map_err(StepError::System)?;
            }
            if switched {
                self.jac_valid = false;
            }
            std::mem::swap(&mut self.f0, &mut f2);
            self.jac_fresh = false;
            self.jac_age += 1;
            // Keep the proposal from a truncated final step unless it grew.
            self.h = if last { self.h.max(h * fac) } else { h * fac };
            return Ok(StepOutcome::Accepted { t: self.t });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay {
        lambda: f64,
    }

    impl OdeSystem for Decay {
        type Error = ();
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&mut self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), ()> {
            dy[0] = -self.lambda * y[0];
            dy[1] = -y[1] + y[0];
            Ok(())
        }
    }

    fn run(lambda: f64, tol: f64) -> (f64, Stats) {
        let mut sys = Decay { lambda };
        let mut ode = Ode23s::new(tol, tol * 1e-2, 0.5);
        ode.reset(&mut sys, 0.0, &[1.0, 0.0]).unwrap();
        while ode.t() < 2.0 {
            ode.step(&mut sys, 2.0).unwrap();
        }
        (ode.y()[0], ode.stats)
    }

    #[test]
    fn stiff_decay_is_stable_with_few_steps() {
        let (y, stats) = run(1e4, 1e-6);
        assert!(y.abs() < 1e-8);
        assert!(stats.accepted < 400, "{stats:?}");
    }

    #[test]
    fn accuracy_improves_with_tolerance() {
        let exact = (-2.0f64).exp();
        let (a, _) = run(1.0, 1e-4);
        let (b, _) = run(1.0, 1e-7);
        assert!((b - exact).abs() < (a - exact).abs());
        assert!((b - exact).abs() < 1e-6);
    }

    #[test]
    fn continuous_output_matches_endpoints() {
        let mut sys = Decay { lambda: 1.0 };
        let mut ode = Ode23s::new(1e-8, 1e-10, 0.5);
        ode.reset(&mut sys, 0.0, &[1.0, 0.0]).unwrap();
        ode.step(&mut sys, 1.0).unwrap();
        let t1 = ode.t();
        let mut out = [0.0; 2];
        ode.interpolate(t1, &mut out);
        assert_eq!(out[0], ode.y()[0]);
        ode.interpolate(0.5 * t1, &mut out);
        assert!((out[0] - (-0.5 * t1).exp()).abs() < 1e-7);
    }
}
