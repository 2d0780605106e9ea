//! Per-unit conversions.

use serde::{Deserialize, Serialize};

/// Nominal voltage level a bus belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoltageLevel {
    Hv,
    Mv,
}

/// System per-unit bases. Power in MVA, voltages line-to-line in kV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bases {
    #[serde(default = "default_s_base")]
    pub s_base_mva: f64,
    #[serde(default = "default_v_hv")]
    pub v_base_hv_kv: f64,
    #[serde(default = "default_v_mv")]
    pub v_base_mv_kv: f64,
    #[serde(default = "default_f_nom")]
    pub f_nom_hz: f64,
}

fn default_s_base() -> f64 {
    100.0
}
fn default_v_hv() -> f64 {
    110.0
}
fn default_v_mv() -> f64 {
    20.0
}
fn default_f_nom() -> f64 {
    50.0
}

impl Default for Bases {
    fn default() -> Self {
        Self {
            s_base_mva: default_s_base(),
            v_base_hv_kv: default_v_hv(),
            v_base_mv_kv: default_v_mv(),
            f_nom_hz: default_f_nom(),
        }
    }
}

impl Bases {
    pub fn v_base_kv(&self, level: VoltageLevel) -> f64 {
        match level {
            VoltageLevel::Hv => self.v_base_hv_kv,
            VoltageLevel::Mv => self.v_base_mv_kv,
        }
    }

    /// Impedance base in ohm, `V_base^2 / S_base`.
    pub fn z_base_ohm(&self, level: VoltageLevel) -> f64 {
        let v = self.v_base_kv(level);
        v * v / self.s_base_mva
    }

    pub fn power_to_pu(&self, mw: f64) -> f64 {
        mw / self.s_base_mva
    }

    pub fn power_from_pu(&self, pu: f64) -> f64 {
        pu * self.s_base_mva
    }

    pub fn voltage_to_pu(&self, kv: f64, level: VoltageLevel) -> f64 {
        kv / self.v_base_kv(level)
    }

    pub fn voltage_from_pu(&self, pu: f64, level: VoltageLevel) -> f64 {
        pu * self.v_base_kv(level)
    }

    pub fn impedance_to_pu(&self, ohm: f64, level: VoltageLevel) -> f64 {
        ohm / self.z_base_ohm(level)
    }

    pub fn impedance_from_pu(&self, pu: f64, level: VoltageLevel) -> f64 {
        pu * self.z_base_ohm(level)
    }

    /// Susceptance in microsiemens to per unit.
    pub fn susceptance_us_to_pu(&self, b_us: f64, level: VoltageLevel) -> f64 {
        b_us * 1e-6 * self.z_base_ohm(level)
    }
}
