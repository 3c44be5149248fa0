//! Reduced-order grid-forming converter: a VSM swing equation drives the
//! angle of a constant-magnitude internal voltage placed behind the series
//! filter and coupling transformer impedances.
//!
//! Dynamic quantities here are on the converter's own MVA rating.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::C64;

/// VSM and electrical parameters of one converter, on its own rating.
///
/// The inner-loop fields (`c_f`, `m_max`, `k_cp`, `k_ci`, `k_vp`, `k_vi`,
/// `r_v`, `t_vr`) are carried for completeness; the reduced-order model does
/// not use them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConverterParams {
    pub id: u32,
    pub rating_mva: f64,
    pub h: f64,
    pub d: f64,
    pub r_f: f64,
    pub x_f: f64,
    pub r_c: f64,
    pub x_c: f64,
    pub i_max: f64,
    pub omega0: f64,
    pub c_f: f64,
    pub m_max: f64,
    pub k_cp: f64,
    pub k_ci: f64,
    pub k_vp: f64,
    pub k_vi: f64,
    pub r_v: f64,
    pub t_vr: f64,
    /// The coupling transformer is an explicit network branch, so only the
    /// filter impedance sits between the internal source and its bus.
    #[serde(default)]
    pub transformer_in_network: bool,
}

impl ConverterParams {
    /// Values of the reference converter data set with the given inertia.
    pub fn reference(id: u32, h: f64) -> Self {
        Self {
            id,
            rating_mva: 900.0,
            h,
            d: 20.0,
            r_f: 0.005,
            x_f: 0.15,
            r_c: 0.005,
            x_c: 0.15,
            i_max: 1.2,
            omega0: 2.0 * PI * 50.0,
            c_f: 0.066,
            m_max: 1.31,
            k_cp: 0.73,
            k_ci: 1.19,
            k_vp: 0.52,
            k_vi: 1.16,
            r_v: 0.09,
            t_vr: 0.0167,
            transformer_in_network: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let key = |f: &str| format!("converters[{}].{f}", self.id);
        if !(self.h > 0.0) {
            return Err(Error::validation(key("h_gfm"), "requires H > 0"));
        }
        if !(self.d >= 0.0) {
            return Err(Error::validation(key("d_gfm"), "requires D >= 0"));
        }
        if !(self.x_f + self.x_c > 0.0) {
            return Err(Error::validation(key("x_f"), "requires x_f + x_c > 0"));
        }
        if !(self.rating_mva > 0.0) {
            return Err(Error::validation(key("rating_mva"), "requires rating > 0"));
        }
        if !(self.i_max > 0.0) {
            return Err(Error::validation(key("i_max"), "requires i_max > 0"));
        }
        if !(self.omega0 > 0.0) {
            return Err(Error::validation("system.nominal_hz", "requires a positive frequency"));
        }
        Ok(())
    }

    /// Converter-to-system power ratio (`rating / base`).
    pub fn power_ratio(&self, base_mva: f64) -> f64 {
        self.rating_mva / base_mva
    }

    /// Impedance between the internal source and the attachment bus on the
    /// system base: z_f + z_c, or z_f alone when the transformer is a branch.
    pub fn source_impedance(&self, base_mva: f64) -> C64 {
        let z = if self.transformer_in_network {
            C64::new(self.r_f, self.x_f)
        } else {
            C64::new(self.r_f + self.r_c, self.x_f + self.x_c)
        };
        z / self.power_ratio(base_mva)
    }

    /// Coupling transformer impedance on the system base.
    pub fn transformer_impedance(&self, base_mva: f64) -> C64 {
        C64::new(self.r_c, self.x_c) / self.power_ratio(base_mva)
    }

    /// Current limit converted to the system base (at 1 pu voltage base).
    pub fn i_max_system(&self, base_mva: f64) -> f64 {
        self.i_max * self.power_ratio(base_mva)
    }
}

/// Internal angle `delta` is kept unwrapped so that pole slipping shows up
/// as unbounded growth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConverterState {
    pub delta: f64,
    pub domega: f64,
    pub e_mag: f64,
}

impl ConverterState {
    pub fn omega(&self) -> f64 {
        1.0 + self.domega
    }
}

/// Right-hand side of the emulated swing equation:
/// `2H dΔω/dt = p_ref - p_g - D Δω`, `dδ/dt = ω0 Δω`.
pub fn swing_derivatives(state: &ConverterState, p_g: f64, p_ref: f64, params: &ConverterParams) -> (f64, f64) {
    let ddomega = (p_ref - p_g - params.d * state.domega) / (2.0 * params.h);
    (params.omega0 * state.domega, ddomega)
}

/// Lossless-link power angle relation, `v_f v_g / x_c · sin(δ_f − δ_g)`.
pub fn electrical_power_angle(v_f: f64, v_g: f64, x_c: f64, delta_f: f64, delta_g: f64) -> f64 {
    v_f * v_g / x_c * (delta_f - delta_g).sin()
}

/// Network-frame internal voltage phasor `e_mag ∠ δ`.
pub fn internal_phasor(state: &ConverterState) -> C64 {
    C64::from_polar(state.e_mag, state.delta)
}
