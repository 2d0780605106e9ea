//! Short-circuit faults and the low-voltage ride-through survival criterion.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{SimulationStatus, Trajectory};

const DEFAULT_CURVE: &str = include_str!("../data/frt_curve.json");

/// One resistive short circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub bus: String,
    pub r_on_ohm: f64,
    /// Onset time, s.
    pub t_on: f64,
    /// Time until clearing, s.
    pub duration: f64,
}

impl FaultSpec {
    pub fn t_off(&self) -> f64 {
        self.t_on + self.duration
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.r_on_ohm > 0.0 && self.r_on_ohm.is_finite()) {
            return Err(format!("fault at {}: r_on_ohm must be > 0", self.bus));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(format!("fault at {}: duration must be > 0", self.bus));
        }
        if !(self.t_on >= 0.0 && self.t_on.is_finite()) {
            return Err(format!("fault at {}: t_on must be >= 0", self.bus));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("limiting curve has no breakpoints")]
    Empty,
    #[error("limiting curve breakpoint {index}: {reason}")]
    Breakpoint { index: usize, reason: String },
    #[error("cannot read curve file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("curve file is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub tau_s: f64,
    pub v_min_pu: f64,
}

/// Piecewise-linear lower bound on voltage magnitude versus time since fault
/// onset. Constant outside the breakpoint range.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitingCurve {
    points: Vec<CurvePoint>,
}

impl LimitingCurve {
    pub fn new(points: Vec<CurvePoint>) -> Result<Self, CurveError> {
        if points.is_empty() {
            return Err(CurveError::Empty);
        }
        for (index, p) in points.iter().enumerate() {
            if !(p.tau_s.is_finite() && p.tau_s >= 0.0) {
                return Err(CurveError::Breakpoint {
                    index,
                    reason: format!("tau {} must be finite and >= 0", p.tau_s),
                });
            }
            if !(0.0..=1.0).contains(&p.v_min_pu) {
                return Err(CurveError::Breakpoint {
                    index,
                    reason: format!("v_min {} outside [0, 1]", p.v_min_pu),
                });
            }
            if index > 0 && p.tau_s <= points[index - 1].tau_s {
                return Err(CurveError::Breakpoint {
                    index,
                    reason: "tau must be strictly increasing".into(),
                });
            }
        }
        Ok(Self { points })
    }

    /// Curve shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_json(DEFAULT_CURVE).expect("bundled curve is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, CurveError> {
        let points: Vec<CurvePoint> = serde_json::from_str(text)?;
        Self::new(points)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, CurveError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CurveError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Constant curve, mostly useful for rigged studies.
    pub fn constant(v_min_pu: f64, horizon_s: f64) -> Result<Self, CurveError> {
        Self::new(vec![
            CurvePoint { tau_s: 0.0, v_min_pu },
            CurvePoint { tau_s: horizon_s, v_min_pu },
        ])
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    /// Time after onset covered by the breakpoints.
    pub fn horizon(&self) -> f64 {
        self.points.last().map(|p| p.tau_s).unwrap_or(0.0)
    }

    pub fn evaluate(&self, tau: f64) -> f64 {
        let pts = &self.points;
        let first = pts[0];
        let last = pts[pts.len() - 1];
        if tau <= first.tau_s {
            return first.v_min_pu;
        }
        if tau >= last.tau_s {
            return last.v_min_pu;
        }
        // First breakpoint strictly after tau.
        let k = pts.partition_point(|p| p.tau_s <= tau);
        let (a, b) = (pts[k - 1], pts[k]);
        let w = (tau - a.tau_s) / (b.tau_s - a.tau_s);
        a.v_min_pu + w * (b.v_min_pu - a.v_min_pu)
    }
}

/// Interpolated minimum voltage `curve` demands at `tau` seconds after onset.
pub fn evaluate_limiting_curve(curve: &LimitingCurve, tau: f64) -> f64 {
    curve.evaluate(tau)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub bus: String,
    pub t: f64,
    pub v: f64,
    pub v_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SurvivalVerdict {
    Survived,
    Violated(Violation),
    /// The simulation broke down before the horizon; never counts as survival.
    NumericalFailure { t: f64 },
    /// The trajectory ends before the curve horizon.
    Undecidable { covered_until: f64, required: f64 },
}

impl SurvivalVerdict {
    pub fn survived(&self) -> bool {
        matches!(self, SurvivalVerdict::Survived)
    }

    pub fn violation(&self) -> Option<&Violation> {
        match self {
            SurvivalVerdict::Violated(v) => Some(v),
            _ => None,
        }
    }
}

/// Check every monitored bus against the curve on all samples in
/// `[t_on, t_on + horizon]`.
pub fn check_survival(
    trajectory: &Trajectory,
    fault: &FaultSpec,
    curve: &LimitingCurve,
    monitored: &[usize],
) -> SurvivalVerdict {
    if let SimulationStatus::NumericalFailure { t, .. } = trajectory.status() {
        return SurvivalVerdict::NumericalFailure { t: *t };
    }
    let required = fault.t_on + curve.horizon();
    let covered_until = trajectory.times().last().copied().unwrap_or(f64::NEG_INFINITY);
    // Sample times are accumulated sums; allow for rounding in the last digit.
    let slack = 1e-9 * required.abs().max(1.0);
    if covered_until < required - slack {
        return SurvivalVerdict::Undecidable {
            covered_until,
            required,
        };
    }
    for (k, &t) in trajectory.times().iter().enumerate() {
        if t < fault.t_on || t > required + slack {
            continue;
        }
        let v_min = curve.evaluate(t - fault.t_on);
        let voltages = trajectory.voltages_at(k);
        for &bus in monitored {
            let v = voltages[bus].norm();
            if v < v_min {
                return SurvivalVerdict::Violated(Violation {
                    bus: trajectory.bus_ids()[bus].clone(),
                    t,
                    v,
                    v_min,
                });
            }
        }
    }
    SurvivalVerdict::Survived
}
