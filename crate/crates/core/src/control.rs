//! Interconnection power-flow tracking and the converter model of each DG.
//!
//! Every DG runs two clamped integrators on the same global error measured
//! at the MV side of the transformer. Their outputs are power set points that
//! a simplified PLL and a current-source converter turn into a network current.
//! A fault ride-through block adds reactive current outside a voltage dead
//! band, and a limiter caps the current magnitude with priority to the
//! reactive axis while the FRT flag is raised.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Controller and converter parameters. Power quantities in MW/Mvar, time
/// constants in s, currents and voltages in pu of the DG rating unless noted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlParams {
    /// Integral gain on the per-unit active power error, 1/s.
    pub k_i_p: f64,
    /// Integral gain on the per-unit reactive power error, 1/s.
    pub k_i_q: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub u_ref: f64,
    pub u_dead: f64,
    pub k_frt: f64,
    pub i_max: f64,
    pub freeze_band: f64,
    pub t_pll: f64,
    /// Current-lag time constant; 0 makes the converter current algebraic.
    pub t_conv: f64,
    /// Floor on the d-axis voltage used to derive current references.
    pub u_floor: f64,
    /// DG rating in MVA; base of `i_max` and of the FRT current.
    pub s_rated: f64,
}

impl Default for ControlParams {
    fn default() -> Self {
        Self {
            k_i_p: 1.0,
            k_i_q: 1.0,
            p_min: 0.0,
            p_max: 1.0,
            q_min: -1.0,
            q_max: 1.0,
            u_ref: 1.0,
            u_dead: 0.1,
            k_frt: 2.0,
            i_max: 1.0,
            freeze_band: 0.1,
            t_pll: 0.02,
            t_conv: 0.01,
            u_floor: 0.1,
            s_rated: 1.0,
        }
    }
}

impl ControlParams {
    pub fn validate(&self) -> Result<(), String> {
        let nonneg = [
            ("k_i_p", self.k_i_p),
            ("k_i_q", self.k_i_q),
            ("k_frt", self.k_frt),
            ("t_conv", self.t_conv),
            ("freeze_band", self.freeze_band),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("control.{name} must be >= 0, got {v}"));
            }
        }
        let positive = [
            ("u_dead", self.u_dead),
            ("i_max", self.i_max),
            ("t_pll", self.t_pll),
            ("u_floor", self.u_floor),
            ("s_rated", self.s_rated),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("control.{name} must be > 0, got {v}"));
            }
        }
        if !(self.p_min <= self.p_max) {
            return Err("control.p_min must not exceed p_max".into());
        }
        if !(self.q_min <= self.q_max) {
            return Err("control.q_min must not exceed q_max".into());
        }
        Ok(())
    }
}

/// Internal states of one DG.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DgState {
    /// Active power set point from the integrator, MW.
    pub chi_p: f64,
    /// Reactive power set point from the integrator, Mvar.
    pub chi_q: f64,
    /// PLL angle, rad.
    pub theta_pll: f64,
    /// Converter d-axis current, pu on the system base.
    pub i_d: f64,
    /// Converter q-axis current, pu on the system base.
    pub i_q: f64,
}

impl DgState {
    pub const LEN: usize = 5;

    pub fn to_array(self) -> [f64; 5] {
        [self.chi_p, self.chi_q, self.theta_pll, self.i_d, self.i_q]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            chi_p: x[0],
            chi_q: x[1],
            theta_pll: x[2],
            i_d: x[3],
            i_q: x[4],
        }
    }
}

/// Pair of active (MW) and reactive (Mvar) power.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PowerPair {
    pub p_mw: f64,
    pub q_mvar: f64,
}

impl PowerPair {
    pub fn new(p_mw: f64, q_mvar: f64) -> Self {
        Self { p_mw, q_mvar }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStep {
    pub t: f64,
    pub p_mw: f64,
    pub q_mvar: f64,
}

/// Piecewise-constant interconnection references. Before the first step the
/// base value applies; a step is in force from its own time on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceSchedule {
    base: PowerPair,
    steps: Vec<ReferenceStep>,
}

impl ReferenceSchedule {
    pub fn new(base: PowerPair, steps: Vec<ReferenceStep>) -> Result<Self, String> {
        for w in steps.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(format!(
                    "reference step times must be strictly increasing ({} then {})",
                    w[0].t, w[1].t
                ));
            }
        }
        if steps.iter().any(|s| !(s.t.is_finite() && s.p_mw.is_finite() && s.q_mvar.is_finite())) {
            return Err("reference steps must be finite".into());
        }
        Ok(Self { base, steps })
    }

    pub fn constant(base: PowerPair) -> Self {
        Self { base, steps: Vec::new() }
    }

    pub fn base(&self) -> PowerPair {
        self.base
    }

    pub fn steps(&self) -> &[ReferenceStep] {
        &self.steps
    }

    pub fn value_at(&self, t: f64) -> PowerPair {
        let k = self.steps.partition_point(|s| s.t <= t);
        if k == 0 {
            self.base
        } else {
            let s = self.steps[k - 1];
            PowerPair::new(s.p_mw, s.q_mvar)
        }
    }
}

/// Global control error `reference - measurement`, MW and Mvar.
pub fn global_error(p_meas: f64, q_meas: f64, refs: &ReferenceSchedule, t: f64) -> PowerPair {
    let r = refs.value_at(t);
    PowerPair::new(r.p_mw - p_meas, r.q_mvar - q_meas)
}

/// Whether a clamped integrator stands still: frozen, or on a limit with the
/// error pushing outward.
pub fn integrator_held(chi: f64, delta: f64, frozen: bool, lo: f64, hi: f64) -> bool {
    frozen || (chi >= hi && delta > 0.0) || (chi <= lo && delta < 0.0)
}

/// Rate of a clamped integrator whose output is in MW (or Mvar).
///
/// `delta` is the per-unit error driving the integrator; the rate is
/// `k_i * delta * s_base` unless the integrator is held.
pub fn integrator_rate(
    chi: f64,
    delta: f64,
    frozen: bool,
    k_i: f64,
    lo: f64,
    hi: f64,
    s_base: f64,
) -> f64 {
    if integrator_held(chi, delta, frozen, lo, hi) {
        0.0
    } else {
        k_i * delta * s_base
    }
}

/// Held flags of the two integrators of one DG. The simulator decides them at
/// accepted states and keeps them fixed while a step is attempted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Hold {
    pub p: bool,
    pub q: bool,
}

impl Hold {
    pub const NONE: Hold = Hold { p: false, q: false };
    pub const BOTH: Hold = Hold { p: true, q: true };

    /// Flags for the instantaneous state and global error.
    pub fn evaluate(state: &DgState, error: PowerPair, frozen: bool, params: &ControlParams, s_base: f64) -> Hold {
        Hold {
            p: integrator_held(state.chi_p, -error.p_mw / s_base, frozen, params.p_min, params.p_max),
            q: integrator_held(state.chi_q, -error.q_mvar / s_base, frozen, params.q_min, params.q_max),
        }
    }
}

/// FRT flag and additional reactive current (pu of the DG rating).
///
/// Positive current is injected for under-voltage and negative for
/// over-voltage; zero inside the dead band.
pub fn frt_flag_and_injection(u_mag: f64, params: &ControlParams) -> (bool, f64) {
    let dev = u_mag - params.u_ref;
    if dev.abs() <= params.u_dead {
        (false, 0.0)
    } else if dev < 0.0 {
        (true, -params.k_frt * (dev + params.u_dead))
    } else {
        (true, -params.k_frt * (dev - params.u_dead))
    }
}

/// Cap the current magnitude at `i_max`, keeping the priority axis (q when
/// `frt` is set, d otherwise) first.
pub fn limit_currents(i_d: f64, i_q: f64, frt: bool, i_max: f64) -> (f64, f64) {
    let clamp = |x: f64, lim: f64| x.clamp(-lim, lim);
    if frt {
        let q = clamp(i_q, i_max);
        let room = (i_max * i_max - q * q).max(0.0).sqrt();
        (clamp(i_d, room), q)
    } else {
        let d = clamp(i_d, i_max);
        let room = (i_max * i_max - d * d).max(0.0).sqrt();
        (d, clamp(i_q, room))
    }
}

/// Current references (system pu) for power set points in MW/Mvar, with
/// `S = u * conj(i)` in a PLL frame where `u_q` is nearly zero.
pub fn current_reference(
    p_r1: f64,
    q_r1: f64,
    u_dq: Complex64,
    u_floor: f64,
    s_base: f64,
) -> (f64, f64) {
    let u_d = u_dq.re.max(u_floor);
    let p = p_r1 / s_base;
    let q = q_r1 / s_base;
    (p / u_d, -q / u_d)
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x <= -PI {
        x += 2.0 * PI;
    } else if x > PI {
        x -= 2.0 * PI;
    }
    x
}

/// Derivatives of one DG plus its network current injection (system pu).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgResponse {
    pub derivative: DgState,
    pub injection: Complex64,
    /// Limited current command in the PLL frame, system pu.
    pub command: (f64, f64),
    pub frt: bool,
}

/// Limited current command the converter is steering towards.
pub fn current_command(
    state: &DgState,
    pcc_voltage: Complex64,
    params: &ControlParams,
    s_base: f64,
) -> ((f64, f64), bool) {
    let u_dq = pcc_voltage * Complex64::from_polar(1.0, -state.theta_pll);
    let p_set = state.chi_p.clamp(params.p_min, params.p_max);
    let q_set = state.chi_q.clamp(params.q_min, params.q_max);
    let (i_d_ref, i_q_ref) = current_reference(p_set, q_set, u_dq, params.u_floor, s_base);
    let (frt, i_q_plus) = frt_flag_and_injection(pcc_voltage.norm(), params);
    let rated = params.s_rated / s_base;
    // Q = -u_d * i_q, so extra reactive output needs a negative i_q.
    let i_q_cmd = i_q_ref - i_q_plus * rated;
    (limit_currents(i_d_ref, i_q_cmd, frt, params.i_max * rated), frt)
}

/// Right-hand side of one DG.
///
/// `error` is the global error `reference - measurement`. Generation has to
/// rise when the measured import exceeds its reference, so the integrators
/// are driven by the negated per-unit error.
pub fn dg_dynamics(
    state: &DgState,
    pcc_voltage: Complex64,
    error: PowerPair,
    hold: Hold,
    params: &ControlParams,
    s_base: f64,
) -> DgResponse {
    let rate = |held: bool, k_i: f64, e: f64| if held { 0.0 } else { -k_i * e };
    let d_chi_p = rate(hold.p, params.k_i_p, error.p_mw);
    let d_chi_q = rate(hold.q, params.k_i_q, error.q_mvar);
    let d_theta = if pcc_voltage.norm() > 0.0 {
        wrap_angle(pcc_voltage.arg() - state.theta_pll) / params.t_pll
    } else {
        0.0
    };
    let (command, frt) = current_command(state, pcc_voltage, params, s_base);
    let (derivative, current) = if params.t_conv > 0.0 {
        (
            DgState {
                chi_p: d_chi_p,
                chi_q: d_chi_q,
                theta_pll: d_theta,
                i_d: (command.0 - state.i_d) / params.t_conv,
                i_q: (command.1 - state.i_q) / params.t_conv,
            },
            Complex64::new(state.i_d, state.i_q),
        )
    } else {
        (
            DgState {
                chi_p: d_chi_p,
                chi_q: d_chi_q,
                theta_pll: d_theta,
                i_d: 0.0,
                i_q: 0.0,
            },
            Complex64::new(command.0, command.1),
        )
    };
    DgResponse {
        derivative,
        injection: current * Complex64::from_polar(1.0, state.theta_pll),
        command,
        frt,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> ControlParams {
        ControlParams::default()
    }

    #[test]
    fn global_error_schedule_semantics() {
        let refs = ReferenceSchedule::new(
            PowerPair::new(24.373, 6.115),
            vec![ReferenceStep { t: 1.0, p_mw: 24.0, q_mvar: 5.0 }],
        )
        .unwrap();
        let e = global_error(24.373, 6.115, &refs, 0.5);
        assert_eq!(e, PowerPair::new(0.0, 0.0));
        let e = global_error(24.373, 6.115, &refs, 1.0);
        assert!((e.p_mw + 0.373).abs() < 1e-12);
        assert!((e.q_mvar + 1.115).abs() < 1e-12);
        assert!(ReferenceSchedule::new(
            PowerPair::default(),
            vec![
                ReferenceStep { t: 1.0, p_mw: 0.0, q_mvar: 0.0 },
                ReferenceStep { t: 1.0, p_mw: 0.0, q_mvar: 0.0 }
            ]
        )
        .is_err());
    }

    #[test]
    fn integrator_rate_cases() {
        assert_eq!(integrator_rate(0.5, 0.3, true, 1.0, 0.0, 1.0, 100.0), 0.0);
        assert_eq!(integrator_rate(1.0, 0.3, false, 1.0, 0.0, 1.0, 100.0), 0.0);
        assert_eq!(integrator_rate(0.0, -0.3, false, 1.0, 0.0, 1.0, 100.0), 0.0);
        assert!((integrator_rate(0.5, 0.01, false, 1.0, 0.0, 1.0, 100.0) - 1.0).abs() < 1e-12);
        // Leaving a limit inward is allowed.
        assert!(integrator_rate(1.0, -0.01, false, 1.0, 0.0, 1.0, 100.0) < 0.0);
    }

    #[test]
    fn frt_examples() {
        let p = params();
        assert_eq!(frt_flag_and_injection(1.0, &p), (false, 0.0));
        let (e, iq) = frt_flag_and_injection(0.8, &p);
        assert!(e && (iq - 0.2).abs() < 1e-12);
        let (e, iq) = frt_flag_and_injection(1.15, &p);
        assert!(e && (iq + 0.1).abs() < 1e-12);
    }

    #[test]
    fn limiter_examples() {
        assert_eq!(limit_currents(0.5, 0.2, false, 1.0), (0.5, 0.2));
        let (d, q) = limit_currents(0.8, 0.9, true, 1.0);
        assert!((d - 0.19f64.sqrt()).abs() < 1e-12 && q == 0.9);
        assert!((d - 0.4359).abs() < 1e-4);
        assert_eq!(limit_currents(2.0, 0.0, false, 1.0), (1.0, 0.0));
        assert_eq!(limit_currents(-0.8, -0.9, true, 1.0).1, -0.9);
        assert!(limit_currents(-0.8, -0.9, true, 1.0).0 < 0.0);
    }

    #[test]
    fn current_reference_examples() {
        let (d, q) = current_reference(1.0, 0.0, Complex64::new(1.0, 0.0), 0.1, 100.0);
        assert!((d - 0.01).abs() < 1e-15 && q == 0.0);
        assert_eq!(current_reference(0.0, 0.0, Complex64::new(1.0, 0.0), 0.1, 100.0), (0.0, 0.0));
        let (d, q) = current_reference(1.0, 1.0, Complex64::new(0.05, 0.0), 0.1, 100.0);
        assert!((d - 0.1).abs() < 1e-15 && (q + 0.1).abs() < 1e-15);
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let p = params();
        let u = Complex64::from_polar(1.0, -0.1);
        // 0.5 MW and 0.2 Mvar delivered at 1 pu.
        let st = DgState {
            chi_p: 0.5,
            chi_q: 0.2,
            theta_pll: -0.1,
            i_d: 0.005,
            i_q: -0.002,
        };
        let r = dg_dynamics(&st, u, PowerPair::default(), Hold::NONE, &p, 100.0);
        for d in r.derivative.to_array() {
            assert!(d.abs() < 1e-12);
        }
        let s = u * r.injection.conj() * 100.0;
        assert!((s.re - 0.5).abs() < 1e-12 && (s.im - 0.2).abs() < 1e-12);
    }

    #[test]
    fn pll_responds_to_angle_step() {
        let p = params();
        let st = DgState::default();
        let r = dg_dynamics(&st, Complex64::from_polar(1.0, 0.1), PowerPair::default(), Hold::NONE, &p, 100.0);
        assert!((r.derivative.theta_pll - 0.1 / p.t_pll).abs() < 1e-12);
    }

    #[test]
    fn deep_dip_raises_reactive_current_within_limit() {
        let p = params();
        let st = DgState {
            chi_p: 0.8,
            chi_q: 0.0,
            ..DgState::default()
        };
        let r = dg_dynamics(&st, Complex64::new(0.5, 0.0), PowerPair::default(), Hold::BOTH, &p, 100.0);
        assert!(r.frt);
        let (d, q) = r.command;
        // I_q+ = 2 * 0.4 = 0.8 pu of 1 MVA on a 100 MVA base.
        assert!((q + 0.008).abs() < 1e-12);
        assert!(d * d + q * q <= 1e-4 + 1e-16);
        // Delivered reactive power at the commanded current is positive.
        assert!(-0.5 * q > 0.0);
        assert_eq!(r.derivative.chi_p, 0.0);
    }

    #[test]
    fn sign_convention_under_global_error() {
        // Measured import above the reference: DG output must rise.
        let p = params();
        let st = DgState { chi_p: 0.5, chi_q: 0.0, ..DgState::default() };
        let r = dg_dynamics(&st, Complex64::new(1.0, 0.0), PowerPair::new(-1.0, -1.0), Hold::NONE, &p, 100.0);
        assert!(r.derivative.chi_p > 0.0 && r.derivative.chi_q > 0.0);
    }

    #[test]
    fn algebraic_converter_injects_command() {
        let p = ControlParams { t_conv: 0.0, ..params() };
        let st = DgState { chi_p: 0.5, ..DgState::default() };
        let r = dg_dynamics(&st, Complex64::new(1.0, 0.0), PowerPair::default(), Hold::NONE, &p, 100.0);
        assert_eq!(r.derivative.i_d, 0.0);
        assert!((r.injection - Complex64::new(0.005, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.3) - 0.3).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn limited_current_stays_in_circle(d in -5.0f64..5.0, q in -5.0f64..5.0, frt: bool, imax in 0.01f64..3.0) {
            let (ld, lq) = limit_currents(d, q, frt, imax);
            prop_assert!(ld * ld + lq * lq <= imax * imax + 1e-12);
            prop_assert!(ld * d >= 0.0 && lq * q >= 0.0);
        }

        #[test]
        fn limiter_is_idempotent(d in -5.0f64..5.0, q in -5.0f64..5.0, frt: bool, imax in 0.01f64..3.0) {
            let once = limit_currents(d, q, frt, imax);
            let twice = limit_currents(once.0, once.1, frt, imax);
            prop_assert!((once.0 - twice.0).abs() < 1e-15 && (once.1 - twice.1).abs() < 1e-15);
        }

        #[test]
        fn frt_current_is_continuous_piecewise_linear(u in 0.0f64..2.0) {
            let p = params();
            let (_, i) = frt_flag_and_injection(u, &p);
            let h = 1e-7;
            let (_, i2) = frt_flag_and_injection(u + h, &p);
            prop_assert!((i2 - i).abs() <= p.k_frt * h * (1.0 + 1e-6));
            if (u - 1.0).abs() > p.u_dead + h {
                prop_assert!(((i2 - i) / h + p.k_frt).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn frt_current_is_zero_at_band_edges() {
        let p = params();
        assert!(frt_flag_and_injection(0.9, &p).1.abs() < 1e-12);
        assert!(frt_flag_and_injection(1.1, &p).1.abs() < 1e-12);
    }
}
