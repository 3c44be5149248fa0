//! Supplementary active-power controllers for transient stability.
//!
//! All three strategies produce a setpoint correction `Δp_ts` (converter pu)
//! that is added to the constant setpoint `p0`:
//!
//! * WACS: delayed `ω_COI − ω_i` through deadband, gain, low-pass, washout
//!   and saturation.
//! * TDM: `−Δω_i` through the same chain with the low-pass usually bypassed.
//! * L: a voltage-sag latch with frequency hold, emitting `−γ · Δp_max`.
//!
//! Discrete blocks advance once per simulation step with the input held over
//! the step (trapezoidal rule on the filter state).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inertia-weighted mean frequency.
pub fn coi_frequency(omega: &[f64], h: &[f64]) -> Result<f64> {
    if omega.is_empty() || omega.len() != h.len() {
        return Err(Error::Config(format!(
            "COI needs equal non-empty lists (got {} frequencies, {} inertias)",
            omega.len(),
            h.len()
        )));
    }
    if let Some(bad) = h.iter().find(|&&x| !(x > 0.0)) {
        return Err(Error::Config(format!("COI inertia must be positive, got {bad}")));
    }
    let h_tot: f64 = h.iter().sum();
    let weighted: f64 = omega.iter().zip(h).map(|(w, h)| w * h).sum();
    Ok(weighted / h_tot)
}

/// Central COI computation shared by all WACS controllers.
#[derive(Debug, Clone)]
pub struct CoiHub {
    h: Vec<f64>,
    h_tot: f64,
    latest: f64,
}

impl CoiHub {
    pub fn new(h: Vec<f64>) -> Result<Self> {
        let latest = coi_frequency(&vec![1.0; h.len()], &h)?;
        let h_tot = h.iter().sum();
        Ok(Self { h, h_tot, latest })
    }

    pub fn h_tot(&self) -> f64 {
        self.h_tot
    }

    pub fn latest(&self) -> f64 {
        self.latest
    }

    pub fn update(&mut self, omega: &[f64]) -> Result<f64> {
        self.latest = coi_frequency(omega, &self.h)?;
        Ok(self.latest)
    }
}

/// Internal states of the low-pass and washout blocks.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BlockStates {
    pub lowpass: f64,
    /// Integrator of the washout realization `u − x`, `T x' = u − x`.
    pub washout: f64,
}

fn trapezoid(x: f64, u: f64, t: f64, dt: f64) -> f64 {
    ((2.0 * t - dt) * x + 2.0 * dt * u) / (2.0 * t + dt)
}

/// `1 / (1 + s T_f)`; `T_f = 0` passes the input through.
pub fn step_lowpass(state: &mut f64, u: f64, t_f: f64, dt: f64) -> f64 {
    *state = if t_f > 0.0 { trapezoid(*state, u, t_f, dt) } else { u };
    *state
}

/// `s T_W / (1 + s T_W)`, realized as `u` minus a low-pass of `u`.
pub fn step_washout(state: &mut f64, u: f64, t_w: f64, dt: f64) -> f64 {
    debug_assert!(t_w > 0.0);
    *state = trapezoid(*state, u, t_w, dt);
    u - *state
}

/// Zero inside `±ε`, identity outside.
pub fn apply_deadband(u: f64, eps: f64) -> f64 {
    if u.abs() <= eps {
        0.0
    } else {
        u
    }
}

pub fn apply_saturation(u: f64, limit: f64) -> f64 {
    u.clamp(-limit, limit)
}

/// Fixed-depth FIFO delay, pre-filled with an equilibrium value.
#[derive(Debug, Clone)]
pub struct DelayLine {
    buf: VecDeque<f64>,
    depth: usize,
}

impl DelayLine {
    pub fn new(tau: f64, dt: f64, prefill: f64) -> Self {
        let steps = tau / dt;
        let depth = steps.round().max(0.0) as usize;
        if (steps - depth as f64).abs() > 1e-9 {
            log::warn!("delay {tau} s is not a multiple of dt = {dt} s; using {depth} steps");
        }
        Self::with_depth(depth, prefill)
    }

    pub fn with_depth(depth: usize, prefill: f64) -> Self {
        Self {
            buf: std::iter::repeat_n(prefill, depth).collect(),
            depth,
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn push_pop(&mut self, sample: f64) -> f64 {
        self.buf.push_back(sample);
        self.buf.pop_front().expect("buffer holds depth + 1 samples")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TspWacsConfig {
    #[serde(default = "default_gain")]
    pub k: f64,
    #[serde(default = "default_wacs_tf")]
    pub t_f: f64,
    #[serde(default = "default_tw")]
    pub t_w: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_dp_max")]
    pub dp_max: f64,
    #[serde(default)]
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TspTdmConfig {
    #[serde(default = "default_gain")]
    pub k: f64,
    #[serde(default)]
    pub t_f: f64,
    #[serde(default = "default_tw")]
    pub t_w: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_dp_max")]
    pub dp_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TspLConfig {
    #[serde(default = "default_v_a")]
    pub v_a: f64,
    #[serde(default = "default_v_b")]
    pub v_b: f64,
    #[serde(default = "default_eps")]
    pub omega_thres: f64,
    #[serde(default = "default_dp_max")]
    pub dp_max: f64,
    /// Compare `|Δω|` instead of the signed deviation against the threshold.
    #[serde(default)]
    pub abs_frequency: bool,
}

fn default_gain() -> f64 {
    100.0
}
fn default_wacs_tf() -> f64 {
    0.1
}
fn default_tw() -> f64 {
    10.0
}
fn default_eps() -> f64 {
    1e-3
}
fn default_dp_max() -> f64 {
    0.15
}
fn default_v_a() -> f64 {
    0.5
}
fn default_v_b() -> f64 {
    0.9
}

impl Default for TspWacsConfig {
    fn default() -> Self {
        Self {
            k: default_gain(),
            t_f: default_wacs_tf(),
            t_w: default_tw(),
            eps: default_eps(),
            dp_max: default_dp_max(),
            tau: 0.0,
        }
    }
}

impl Default for TspTdmConfig {
    fn default() -> Self {
        Self {
            k: default_gain(),
            t_f: 0.0,
            t_w: default_tw(),
            eps: default_eps(),
            dp_max: default_dp_max(),
        }
    }
}

impl Default for TspLConfig {
    fn default() -> Self {
        Self {
            v_a: default_v_a(),
            v_b: default_v_b(),
            omega_thres: default_eps(),
            dp_max: default_dp_max(),
            abs_frequency: false,
        }
    }
}

fn check_filter_chain(prefix: &str, k: f64, t_f: f64, t_w: f64, eps: f64, dp_max: f64) -> Result<()> {
    for (name, v) in [("k", k), ("t_f", t_f), ("eps", eps)] {
        if !(v >= 0.0) {
            return Err(Error::validation(format!("{prefix}.{name}"), "requires a value >= 0"));
        }
    }
    if !(t_w > 0.0) {
        return Err(Error::validation(format!("{prefix}.t_w"), "requires T_W > 0"));
    }
    if !(dp_max > 0.0) {
        return Err(Error::validation(format!("{prefix}.dp_max"), "requires dp_max > 0"));
    }
    Ok(())
}

impl TspWacsConfig {
    pub fn validate(&self) -> Result<()> {
        check_filter_chain("tsp.wacs", self.k, self.t_f, self.t_w, self.eps, self.dp_max)?;
        if !(self.tau >= 0.0) {
            return Err(Error::validation("tsp.wacs.tau", "requires tau >= 0"));
        }
        Ok(())
    }
}

impl TspTdmConfig {
    pub fn validate(&self) -> Result<()> {
        check_filter_chain("tsp.tdm", self.k, self.t_f, self.t_w, self.eps, self.dp_max)
    }
}

impl TspLConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.v_a && self.v_a < self.v_b && self.v_b < 1.0) {
            return Err(Error::validation(
                "tsp.l.v_a",
                "requires v_A < v_B (and 0 < v_A, v_B < 1)",
            ));
        }
        if !(self.omega_thres > 0.0) {
            return Err(Error::validation("tsp.l.omega_thres", "requires omega_thres > 0"));
        }
        if !(self.dp_max > 0.0) {
            return Err(Error::validation("tsp.l.dp_max", "requires dp_max > 0"));
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn filter_chain(u: f64, eps: f64, k: f64, t_f: f64, t_w: f64, dp_max: f64, states: &mut BlockStates, dt: f64) -> f64 {
    let x = apply_deadband(u, eps) * k;
    let x = step_lowpass(&mut states.lowpass, x, t_f, dt);
    let x = step_washout(&mut states.washout, x, t_w, dt);
    apply_saturation(x, dp_max)
}

/// WACS step on the already-delayed error `ω_COI − ω_i`.
pub fn tsp_wacs_step(delayed_error: f64, cfg: &TspWacsConfig, states: &mut BlockStates, dt: f64) -> f64 {
    filter_chain(delayed_error, cfg.eps, cfg.k, cfg.t_f, cfg.t_w, cfg.dp_max, states, dt)
}

pub fn tsp_tdm_step(domega: f64, cfg: &TspTdmConfig, states: &mut BlockStates, dt: f64) -> f64 {
    filter_chain(-domega, cfg.eps, cfg.k, cfg.t_f, cfg.t_w, cfg.dp_max, states, dt)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TspLState {
    /// Undervoltage latch with hysteresis.
    pub gamma1: bool,
    /// Frequency condition.
    pub gamma2: bool,
    /// Controller active.
    pub gamma: bool,
}

/// Set by a γ1 rising edge; once set, held while γ1 or γ2 holds.
pub fn tsp_l_step(v_g: f64, domega: f64, cfg: &TspLConfig, latch: TspLState) -> (TspLState, f64) {
    let gamma1 = if v_g <= cfg.v_a {
        true
    } else if v_g > cfg.v_b {
        false
    } else {
        latch.gamma1
    };
    let dev = if cfg.abs_frequency { domega.abs() } else { domega };
    let gamma2 = dev >= cfg.omega_thres;
    let gamma = if latch.gamma {
        gamma1 || gamma2
    } else {
        gamma1 && !latch.gamma1
    };
    let out = if gamma { -cfg.dp_max } else { 0.0 };
    (TspLState { gamma1, gamma2, gamma }, out)
}

/// Total setpoint `p0 + Δp_ts`.
pub fn compose_setpoint(p0: f64, dp_ts: f64) -> f64 {
    p0 + dp_ts
}

/// Strategy selection for a study.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    None,
    Wacs(TspWacsConfig),
    Tdm(TspTdmConfig),
    L(TspLConfig),
}

impl Strategy {
    pub fn label(&self) -> &'static str {
        match self {
            Strategy::None => "base",
            Strategy::Wacs(_) => "wacs",
            Strategy::Tdm(_) => "tdm",
            Strategy::L(_) => "l",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Strategy::None => Ok(()),
            Strategy::Wacs(c) => c.validate(),
            Strategy::Tdm(c) => c.validate(),
            Strategy::L(c) => c.validate(),
        }
    }
}

/// Local measurements handed to a controller at the start of a step.
#[derive(Debug, Clone, Copy)]
pub struct Measurement {
    pub omega: f64,
    pub domega: f64,
    pub v_g: f64,
    pub omega_coi: f64,
}

/// Per-converter controller instance.
#[derive(Debug, Clone)]
pub struct Controller {
    strategy: Strategy,
    enabled: bool,
    blocks: BlockStates,
    latch: TspLState,
    delay: DelayLine,
    output: f64,
}

impl Controller {
    /// Starts at equilibrium: filters zeroed, latch clear, delay line full of
    /// zero error.
    pub fn new(strategy: Strategy, enabled: bool, dt: f64) -> Self {
        let tau = match &strategy {
            Strategy::Wacs(c) => c.tau,
            _ => 0.0,
        };
        Self {
            strategy,
            enabled,
            blocks: BlockStates::default(),
            latch: TspLState::default(),
            delay: DelayLine::new(tau, dt, 0.0),
            output: 0.0,
        }
    }

    pub fn is_active(&self) -> bool {
        self.enabled && self.strategy != Strategy::None
    }

    pub fn latch(&self) -> TspLState {
        self.latch
    }

    pub fn output(&self) -> f64 {
        self.output
    }

    pub fn step(&mut self, m: &Measurement, dt: f64) -> f64 {
        if !self.enabled {
            self.output = 0.0;
            return 0.0;
        }
        self.output = match &self.strategy {
            Strategy::None => 0.0,
            Strategy::Wacs(cfg) => {
                let u = self.delay.push_pop(m.omega_coi - m.omega);
                tsp_wacs_step(u, cfg, &mut self.blocks, dt)
            }
            Strategy::Tdm(cfg) => tsp_tdm_step(m.domega, cfg, &mut self.blocks, dt),
            Strategy::L(cfg) => {
                let (latch, out) = tsp_l_step(m.v_g, m.domega, cfg, self.latch);
                self.latch = latch;
                out
            }
        };
        self.output
    }
}
