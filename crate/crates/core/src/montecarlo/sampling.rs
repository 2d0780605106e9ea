use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::fault::FaultSpec;

/// Distribution of fault duration and resistance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultModel {
    pub duration_mean: f64,
    /// Standard deviation of the duration; 0 gives a fixed duration.
    pub duration_std: f64,
    pub r_on_lo: f64,
    pub r_on_hi: f64,
    /// Durations are redrawn outside `mean +- truncation_sigmas * std`.
    pub truncation_sigmas: f64,
    pub min_duration: f64,
}

impl Default for FaultModel {
    fn default() -> Self {
        Self {
            duration_mean: 0.150,
            duration_std: 0.010,
            r_on_lo: 3.0,
            r_on_hi: 10.0,
            truncation_sigmas: 5.0,
            min_duration: 1e-3,
        }
    }
}

impl FaultModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.duration_mean > 0.0 && self.duration_mean.is_finite()) {
            return Err("fault model: duration_mean must be > 0".into());
        }
        if !(self.duration_std >= 0.0 && self.duration_std.is_finite()) {
            return Err("fault model: duration_std must be >= 0".into());
        }
        if !(self.r_on_lo > 0.0 && self.r_on_lo <= self.r_on_hi && self.r_on_hi.is_finite()) {
            return Err("fault model: need 0 < r_on_lo <= r_on_hi".into());
        }
        if !(self.truncation_sigmas > 0.0) {
            return Err("fault model: truncation_sigmas must be > 0".into());
        }
        if !(self.min_duration > 0.0) {
            return Err("fault model: min_duration must be > 0".into());
        }
        Ok(())
    }

    pub fn sample_duration<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.duration_std == 0.0 {
            return self.duration_mean.max(self.min_duration);
        }
        let normal = Normal::new(self.duration_mean, self.duration_std).expect("validated std");
        let half = self.truncation_sigmas * self.duration_std;
        loop {
            let d: f64 = normal.sample(rng);
            if (d - self.duration_mean).abs() <= half {
                return d.max(self.min_duration);
            }
        }
    }

    pub fn sample_resistance<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.r_on_lo == self.r_on_hi {
            return self.r_on_lo;
        }
        Uniform::new_inclusive(self.r_on_lo, self.r_on_hi)
            .expect("validated range")
            .sample(rng)
    }
}

/// Generator of trial `index` under `master_seed`: one ChaCha stream per
/// trial, so results do not depend on scheduling.
pub fn trial_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Draw one fault at `bus` starting at `t_on`.
pub fn sample_fault<R: Rng + ?Sized>(rng: &mut R, model: &FaultModel, bus: &str, t_on: f64) -> FaultSpec {
    let duration = model.sample_duration(rng);
    let r_on_ohm = model.sample_resistance(rng);
    FaultSpec {
        bus: bus.to_string(),
        r_on_ohm,
        t_on,
        duration,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn streams_differ_and_repeat() {
        let a: u64 = trial_rng(7, 0).random();
        let b: u64 = trial_rng(7, 1).random();
        let c: u64 = trial_rng(7, 0).random();
        let d: u64 = trial_rng(8, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn zero_std_gives_fixed_duration() {
        let m = FaultModel {
            duration_std: 0.0,
            ..FaultModel::default()
        };
        let mut rng = trial_rng(1, 0);
        for _ in 0..100 {
            assert_eq!(sample_fault(&mut rng, &m, "MV-03", 0.5).duration, 0.150);
        }
    }

    #[test]
    fn invalid_models_are_rejected() {
        let bad = FaultModel {
            r_on_lo: 10.0,
            r_on_hi: 3.0,
            ..FaultModel::default()
        };
        assert!(bad.validate().is_err());
        assert!(FaultModel::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn samples_stay_in_bounds(seed in any::<u64>(), index in 0u64..1000) {
            let m = FaultModel::default();
            let f = sample_fault(&mut trial_rng(seed, index), &m, "B", 0.5);
            prop_assert!((3.0..=10.0).contains(&f.r_on_ohm));
            prop_assert!((f.duration - 0.150).abs() <= 0.050 + 1e-15);
            prop_assert!(f.duration >= 1e-3);
            prop_assert_eq!(f.t_on, 0.5);
        }
    }
}
