//! Fixed-step hybrid simulation.
//!
//! Each step solves the network at the start-of-step state, advances the
//! discrete controller blocks once with those measurements, then integrates
//! the swing equations with classical RK4 while the setpoints are held. The
//! network is re-solved inside every RK4 stage. Scheduled events are snapped
//! to step boundaries and applied before the step that starts there.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::io::Write;

use crate::error::{Error, Result};
use crate::netmodel::{
    apply_fault, ConverterPort, FaultSpec, NetworkModel, NetworkSolution, NetworkSolver, PostAction, C64,
};
use crate::powerflow::{initialize_converters, solve_powerflow, DispatchSpec, PowerFlowOptions};
use crate::tsp::{compose_setpoint, CoiHub, Controller, Measurement, Strategy};
use crate::vsm::{internal_phasor, swing_derivatives, ConverterParams, ConverterState};

/// Static study data: network with loads as specified powers, the dispatch
/// and converter parameters in dispatch order.
#[derive(Debug, Clone)]
pub struct System {
    pub network: NetworkModel,
    pub dispatch: DispatchSpec,
    pub converters: Vec<ConverterParams>,
    /// Bus where each converter's terminal voltage v_g is measured. Equal to
    /// the dispatch bus unless the coupling transformer is a network branch.
    pub pcc_buses: Vec<u32>,
}

impl System {
    /// System with v_g measured at each converter's dispatch bus.
    pub fn new(network: NetworkModel, dispatch: DispatchSpec, converters: Vec<ConverterParams>) -> Self {
        let pcc_buses = dispatch.units.iter().map(|u| u.bus).collect();
        Self {
            network,
            dispatch,
            converters,
            pcc_buses,
        }
    }

    pub fn converter_ids(&self) -> Vec<u32> {
        self.converters.iter().map(|c| c.id).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstabilityCriteria {
    /// Growth of the internal-angle spread over its pre-fault value (rad).
    pub angle_threshold: f64,
    /// Bound on any |Δω| (pu).
    pub freq_threshold: f64,
}

impl Default for InstabilityCriteria {
    fn default() -> Self {
        Self {
            angle_threshold: PI,
            freq_threshold: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub fault: Option<FaultSpec>,
    pub strategy: Strategy,
    /// Converter ids with the supplementary controller switched on; `None`
    /// enables every converter.
    pub enabled_converters: Option<BTreeSet<u32>>,
    pub t_end: f64,
    pub dt: f64,
    pub record_decimation: usize,
    pub criteria: InstabilityCriteria,
    /// End the run at the first verdict violation.
    pub stop_on_violation: bool,
}

impl Scenario {
    pub fn new(name: impl Into<String>, fault: Option<FaultSpec>, strategy: Strategy) -> Self {
        Self {
            name: name.into(),
            fault,
            strategy,
            enabled_converters: None,
            t_end: 10.0,
            dt: 1e-3,
            record_decimation: 1,
            criteria: InstabilityCriteria::default(),
            stop_on_violation: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::validation("scenario.dt", "requires dt > 0"));
        }
        if !(self.t_end > 0.0) {
            return Err(Error::validation("scenario.t_end", "requires t_end > 0"));
        }
        if self.record_decimation == 0 {
            return Err(Error::validation("output.decimation", "requires decimation >= 1"));
        }
        if let Some(f) = &self.fault {
            f.validate()?;
            if f.t_clear + 5.0 > self.t_end {
                log::warn!(
                    "{}: t_end = {} s leaves less than 5 s after clearing",
                    self.name,
                    self.t_end
                );
            }
        }
        self.strategy.validate()
    }

    /// Start of the verdict window.
    pub fn window_start(&self) -> f64 {
        self.fault.as_ref().map_or(0.0, |f| f.t_clear)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConverterTrace {
    pub id: u32,
    pub delta: Vec<f64>,
    pub domega: Vec<f64>,
    pub pg: Vec<f64>,
    pub dpts: Vec<f64>,
    pub vg: Vec<f64>,
    pub gamma: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub t: f64,
    pub step: u64,
    pub description: String,
}

/// Recorded trajectories. Converter power and setpoint columns are on each
/// converter's own rating.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimeSeries {
    pub t: Vec<f64>,
    pub converters: Vec<ConverterTrace>,
    pub omega_coi: Vec<f64>,
    pub events: Vec<EventRecord>,
}

/// Formats with nine significant digits.
pub fn sig9(x: f64) -> String {
    format!("{x:.8e}")
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn converter(&self, id: u32) -> Option<&ConverterTrace> {
        self.converters.iter().find(|c| c.id == id)
    }

    /// CSV with one row per recorded sample; converters in ascending id.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut order: Vec<&ConverterTrace> = self.converters.iter().collect();
        order.sort_by_key(|c| c.id);
        let mut header = vec!["t_s".to_string()];
        for c in &order {
            for col in ["delta_rad", "domega_pu", "pg_pu", "dpts_pu", "vg_pu", "gamma"] {
                header.push(format!("vsc{}_{col}", c.id));
            }
        }
        header.push("omega_coi_pu".into());
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.t.len() {
            let mut row = vec![sig9(self.t[k])];
            for c in &order {
                row.push(sig9(c.delta[k]));
                row.push(sig9(c.domega[k]));
                row.push(sig9(c.pg[k]));
                row.push(sig9(c.dpts[k]));
                row.push(sig9(c.vg[k]));
                row.push(if c.gamma[k] { "1".into() } else { "0".into() });
            }
            row.push(sig9(self.omega_coi[k]));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstabilityReason {
    AngleSeparation,
    FrequencyRunaway,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityVerdict {
    pub stable: bool,
    pub reason: InstabilityReason,
    pub t_violation: Option<f64>,
}

impl StabilityVerdict {
    pub fn stable() -> Self {
        Self {
            stable: true,
            reason: InstabilityReason::None,
            t_violation: None,
        }
    }

    pub fn label(&self) -> &'static str {
        if self.stable {
            "STABLE"
        } else {
            "UNSTABLE"
        }
    }
}

/// Online form of the instability criterion, shared by the engine and
/// [`detect_instability`].
#[derive(Debug, Clone)]
pub struct InstabilityMonitor {
    criteria: InstabilityCriteria,
    baseline_spread: f64,
    window_start: f64,
    max_spread_growth: f64,
    violation: Option<(InstabilityReason, f64)>,
}

fn spread(delta: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = delta.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
    hi - lo
}

impl InstabilityMonitor {
    pub fn new(criteria: InstabilityCriteria, baseline_spread: f64, window_start: f64) -> Self {
        Self {
            criteria,
            baseline_spread,
            window_start,
            max_spread_growth: 0.0,
            violation: None,
        }
    }

    /// Feeds one sample; returns true once a violation has been seen.
    pub fn observe(&mut self, t: f64, delta: &[f64], domega: &[f64]) -> bool {
        if self.violation.is_some() {
            return true;
        }
        if t + 1e-12 < self.window_start {
            return false;
        }
        let growth = spread(delta.iter().copied()) - self.baseline_spread;
        self.max_spread_growth = self.max_spread_growth.max(growth);
        if growth > self.criteria.angle_threshold {
            self.violation = Some((InstabilityReason::AngleSeparation, t));
        } else if domega.iter().any(|w| !(w.abs() <= self.criteria.freq_threshold)) {
            self.violation = Some((InstabilityReason::FrequencyRunaway, t));
        }
        self.violation.is_some()
    }

    pub fn max_spread_growth(&self) -> f64 {
        self.max_spread_growth
    }

    pub fn verdict(&self) -> StabilityVerdict {
        match self.violation {
            Some((reason, t)) => StabilityVerdict {
                stable: false,
                reason,
                t_violation: Some(t),
            },
            None => StabilityVerdict::stable(),
        }
    }
}

/// Verdict over a recorded series. The first sample is taken as the
/// pre-fault reference. A series without a violation must extend at least
/// 2 s past `window_start`.
pub fn detect_instability(
    series: &TimeSeries,
    window_start: f64,
    criteria: InstabilityCriteria,
) -> Result<StabilityVerdict> {
    if series.is_empty() || series.converters.is_empty() {
        return Err(Error::Verdict("empty series".into()));
    }
    let m = series.converters.len();
    let baseline = spread(series.converters.iter().map(|c| c.delta[0]));
    let mut monitor = InstabilityMonitor::new(criteria, baseline, window_start);
    let mut delta = vec![0.0; m];
    let mut domega = vec![0.0; m];
    for k in 0..series.len() {
        for (j, c) in series.converters.iter().enumerate() {
            delta[j] = c.delta[k];
            domega[j] = c.domega[k];
        }
        if monitor.observe(series.t[k], &delta, &domega) {
            return Ok(monitor.verdict());
        }
    }
    let last = *series.t.last().unwrap();
    if last + 1e-9 < window_start + 2.0 {
        return Err(Error::Verdict(format!(
            "series ends at {last} s, needs 2 s past {window_start} s"
        )));
    }
    Ok(monitor.verdict())
}

/// Per-converter `(dδ/dt, dΔω/dt)` from one network solve.
pub fn derivative_eval(
    solver: &mut NetworkSolver,
    params: &[ConverterParams],
    base_mva: f64,
    states: &[ConverterState],
    p_ref: &[f64],
) -> Result<(Vec<(f64, f64)>, NetworkSolution)> {
    let e: Vec<C64> = states.iter().map(internal_phasor).collect();
    let sol = solver.solve(&e)?;
    let d = states
        .iter()
        .zip(params)
        .zip(p_ref)
        .zip(&sol.pcc_powers)
        .map(|(((s, p), &pr), sg)| swing_derivatives(s, sg.re / p.power_ratio(base_mva), pr, p))
        .collect();
    Ok((d, sol))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub steps: u64,
    pub powerflow_iterations: usize,
    pub powerflow_mismatch: f64,
    /// Largest |Σ injections − Σ element consumption| over all steps.
    pub max_balance_residual: f64,
    pub max_spread_growth: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub series: TimeSeries,
    pub verdict: StabilityVerdict,
    pub stats: RunStats,
}

enum EventKind {
    ApplyFault,
    ClearFault,
}

struct ScheduledEvent {
    step: u64,
    kind: EventKind,
}

/// A running simulation.
pub struct Simulation {
    name: String,
    base_mva: f64,
    params: Vec<ConverterParams>,
    ports: Vec<ConverterPort>,
    pcc: Vec<usize>,
    states: Vec<ConverterState>,
    p_ref0: Vec<f64>,
    p_ref: Vec<f64>,
    controllers: Vec<Controller>,
    coi: CoiHub,
    network: NetworkModel,
    healthy_y: crate::netmodel::AdmittanceMatrix,
    solver: NetworkSolver,
    fault: Option<FaultSpec>,
    fault_shunt: Option<(usize, C64)>,
    events: Vec<ScheduledEvent>,
    step_index: u64,
    n_steps: u64,
    dt: f64,
    decimation: usize,
    stop_on_violation: bool,
    series: TimeSeries,
    monitor: InstabilityMonitor,
    stats: RunStats,
}

impl Simulation {
    /// Power flow, converter initialization and controller reset.
    pub fn new(system: &System, scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let tag = |e: Error| match e {
            Error::Initialization(m) => Error::Initialization(format!("{}: {m}", scenario.name)),
            other => other,
        };
        let op = solve_powerflow(&system.network, &system.dispatch, &PowerFlowOptions::default()).map_err(tag)?;
        let init = initialize_converters(&system.network, &system.dispatch, &op, &system.converters).map_err(tag)?;
        let base_mva = system.network.base_mva;

        let h: Vec<f64> = system.converters.iter().map(|c| c.h).collect();
        let coi = CoiHub::new(h)?;
        let controllers = system
            .converters
            .iter()
            .map(|c| {
                let on = scenario
                    .enabled_converters
                    .as_ref()
                    .is_none_or(|set| set.contains(&c.id));
                Controller::new(scenario.strategy.clone(), on, scenario.dt)
            })
            .collect();

        let healthy_y = init.network.ybus()?;
        let mut solver = NetworkSolver::new(healthy_y.clone(), init.ports.clone())?;

        let (d, _) = derivative_eval(&mut solver, &system.converters, base_mva, &init.states, &init.p_ref0)?;
        if let Some((k, _)) = d.iter().enumerate().find(|(_, (_, dw))| dw.abs() > 1e-9) {
            return Err(Error::Initialization(format!(
                "{}: converter {} not at equilibrium after initialization",
                scenario.name, system.converters[k].id
            )));
        }

        let mut events = Vec::new();
        if let Some(f) = &scenario.fault {
            init.network.bus_index(f.bus)?;
            if let PostAction::TripBranch(id) = &f.post_action {
                if !init
                    .network
                    .branches()
                    .iter()
                    .any(|b| &b.circuit_id == id && b.in_service)
                {
                    return Err(Error::Scenario(format!("{}: cannot trip circuit {id}", scenario.name)));
                }
            }
            events.push(ScheduledEvent {
                step: (f.t_apply / scenario.dt).round() as u64,
                kind: EventKind::ApplyFault,
            });
            events.push(ScheduledEvent {
                step: (f.t_clear / scenario.dt).round() as u64,
                kind: EventKind::ClearFault,
            });
        }

        if system.pcc_buses.len() != system.converters.len() {
            return Err(Error::Scenario(format!(
                "{}: one PCC bus per converter required",
                scenario.name
            )));
        }
        let pcc = system
            .pcc_buses
            .iter()
            .map(|&b| init.network.bus_index(b))
            .collect::<Result<Vec<_>>>()?;

        let baseline = spread(init.states.iter().map(|s| s.delta));
        let monitor = InstabilityMonitor::new(scenario.criteria, baseline, scenario.window_start());
        let m = system.converters.len();
        let series = TimeSeries {
            converters: system
                .converters
                .iter()
                .map(|c| ConverterTrace {
                    id: c.id,
                    ..Default::default()
                })
                .collect(),
            ..Default::default()
        };

        let mut sim = Self {
            name: scenario.name.clone(),
            base_mva,
            params: system.converters.clone(),
            ports: init.ports,
            pcc,
            states: init.states,
            p_ref: init.p_ref0.clone(),
            p_ref0: init.p_ref0,
            controllers,
            coi,
            network: init.network,
            healthy_y,
            solver,
            fault: scenario.fault.clone(),
            fault_shunt: None,
            events,
            step_index: 0,
            n_steps: (scenario.t_end / scenario.dt).round() as u64,
            dt: scenario.dt,
            decimation: scenario.record_decimation,
            stop_on_violation: scenario.stop_on_violation,
            series,
            monitor,
            stats: RunStats {
                powerflow_iterations: op.iterations,
                powerflow_mismatch: op.max_mismatch,
                ..Default::default()
            },
        };
        debug_assert_eq!(sim.p_ref.len(), m);
        sim.apply_due_events()?;
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.dt
    }

    pub fn states(&self) -> &[ConverterState] {
        &self.states
    }

    pub fn p_ref0(&self) -> &[f64] {
        &self.p_ref0
    }

    pub fn controllers(&self) -> &[Controller] {
        &self.controllers
    }

    pub fn series(&self) -> &TimeSeries {
        &self.series
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    pub fn is_finished(&self) -> bool {
        self.step_index >= self.n_steps || (self.stop_on_violation && !self.monitor.verdict().stable)
    }

    fn sim_error(&self, message: String) -> Error {
        Error::Simulation {
            t: self.time(),
            message: format!("{}: {message}", self.name),
        }
    }

    fn log_event(&mut self, description: String) {
        self.series.events.push(EventRecord {
            t: self.time(),
            step: self.step_index,
            description,
        });
    }

    fn apply_due_events(&mut self) -> Result<()> {
        let due: Vec<usize> = (0..self.events.len())
            .filter(|&k| self.events[k].step == self.step_index)
            .collect();
        let mut changed = false;
        for k in due {
            let fault = self.fault.clone().expect("events only exist with a fault");
            match self.events[k].kind {
                EventKind::ApplyFault => {
                    let y = apply_fault(&self.healthy_y, &fault)?;
                    self.fault_shunt = Some((self.network.bus_index(fault.bus)?, fault.shunt_admittance));
                    self.solver = NetworkSolver::new(y, self.ports.clone())?;
                    self.log_event(format!("fault applied at bus {}", fault.bus));
                }
                EventKind::ClearFault => {
                    self.fault_shunt = None;
                    if let PostAction::TripBranch(id) = &fault.post_action {
                        self.network = self.network.trip_branch(id)?;
                        self.healthy_y = self.network.ybus()?;
                        self.log_event(format!("fault cleared, circuit {id} disconnected"));
                    } else {
                        self.log_event("fault cleared".into());
                    }
                    self.solver = NetworkSolver::new(self.healthy_y.clone(), self.ports.clone())?;
                }
            }
            changed = true;
        }
        if changed {
            self.events.retain(|e| e.step != self.step_index);
        }
        Ok(())
    }

    fn check_balance(&mut self, sol: &NetworkSolution) {
        let injected: C64 = sol.pcc_powers.iter().sum();
        let extra: Vec<(usize, C64)> = self.fault_shunt.into_iter().collect();
        let consumed = self.network.element_consumption(&sol.bus_voltages, &extra);
        let r = (injected - consumed).norm();
        if r > self.stats.max_balance_residual {
            self.stats.max_balance_residual = r;
        }
    }

    fn record(&mut self, sol: &NetworkSolution, omega_coi: f64) {
        let t = self.time();
        self.series.t.push(t);
        self.series.omega_coi.push(omega_coi);
        for (k, trace) in self.series.converters.iter_mut().enumerate() {
            let s = &self.states[k];
            trace.delta.push(s.delta);
            trace.domega.push(s.domega);
            trace
                .pg
                .push(sol.pcc_powers[k].re / self.params[k].power_ratio(self.base_mva));
            trace.dpts.push(self.controllers[k].output());
            trace.vg.push(sol.bus_voltages[self.pcc[k]].norm());
            trace.gamma.push(self.controllers[k].latch().gamma);
        }
    }

    /// Advances one step of length `dt`.
    pub fn step(&mut self) -> Result<()> {
        let dt = self.dt;
        let m = self.states.len();
        let (k1, sol) = derivative_eval(&mut self.solver, &self.params, self.base_mva, &self.states, &self.p_ref)
            .map_err(|e| self.sim_error(e.to_string()))?;
        self.check_balance(&sol);

        let omega: Vec<f64> = self.states.iter().map(|s| s.omega()).collect();
        let omega_coi = self.coi.update(&omega)?;
        let mut k1 = k1;
        let mut any_change = false;
        for k in 0..m {
            let meas = Measurement {
                omega: omega[k],
                domega: self.states[k].domega,
                v_g: sol.bus_voltages[self.pcc[k]].norm(),
                omega_coi,
            };
            let dp = self.controllers[k].step(&meas, dt);
            let p = compose_setpoint(self.p_ref0[k], dp);
            if p != self.p_ref[k] {
                any_change = true;
                self.p_ref[k] = p;
            }
        }
        if any_change {
            // stage 1 must see the setpoints held over this step
            for k in 0..m {
                let pg = sol.pcc_powers[k].re / self.params[k].power_ratio(self.base_mva);
                k1[k] = swing_derivatives(&self.states[k], pg, self.p_ref[k], &self.params[k]);
            }
        }
        if self.step_index.is_multiple_of(self.decimation as u64) {
            self.record(&sol, omega_coi);
        }

        let advance = |base: &[ConverterState], d: &[(f64, f64)], h: f64| -> Vec<ConverterState> {
            base.iter()
                .zip(d)
                .map(|(s, (dd, dw))| ConverterState {
                    delta: s.delta + h * dd,
                    domega: s.domega + h * dw,
                    e_mag: s.e_mag,
                })
                .collect()
        };
        let s2 = advance(&self.states, &k1, dt / 2.0);
        let (k2, _) = derivative_eval(&mut self.solver, &self.params, self.base_mva, &s2, &self.p_ref)
            .map_err(|e| self.sim_error(e.to_string()))?;
        let s3 = advance(&self.states, &k2, dt / 2.0);
        let (k3, _) = derivative_eval(&mut self.solver, &self.params, self.base_mva, &s3, &self.p_ref)
            .map_err(|e| self.sim_error(e.to_string()))?;
        let s4 = advance(&self.states, &k3, dt);
        let (k4, _) = derivative_eval(&mut self.solver, &self.params, self.base_mva, &s4, &self.p_ref)
            .map_err(|e| self.sim_error(e.to_string()))?;

        let mut next = self.states.clone();
        for k in 0..m {
            next[k].delta += dt / 6.0 * (k1[k].0 + 2.0 * k2[k].0 + 2.0 * k3[k].0 + k4[k].0);
            next[k].domega += dt / 6.0 * (k1[k].1 + 2.0 * k2[k].1 + 2.0 * k3[k].1 + k4[k].1);
        }
        if next.iter().any(|s| !(s.delta.is_finite() && s.domega.is_finite())) {
            let snapshot: Vec<String> = self
                .states
                .iter()
                .map(|s| format!("(δ={:.6}, Δω={:.6})", s.delta, s.domega))
                .collect();
            return Err(self.sim_error(format!("non-finite state; last good state {}", snapshot.join(" "))));
        }
        self.states = next;
        self.step_index += 1;
        self.stats.steps += 1;
        self.apply_due_events()?;

        let t = self.time();
        let delta: Vec<f64> = self.states.iter().map(|s| s.delta).collect();
        let domega: Vec<f64> = self.states.iter().map(|s| s.domega).collect();
        self.monitor.observe(t, &delta, &domega);
        Ok(())
    }

    /// Runs to `t_end` (or the first violation when requested) and records
    /// the final sample.
    pub fn finish(mut self) -> Result<RunResult> {
        while !self.is_finished() {
            self.step()?;
        }
        let e: Vec<C64> = self.states.iter().map(internal_phasor).collect();
        let sol = self.solver.solve(&e).map_err(|e| self.sim_error(e.to_string()))?;
        self.check_balance(&sol);
        let omega: Vec<f64> = self.states.iter().map(|s| s.omega()).collect();
        let omega_coi = self.coi.update(&omega)?;
        if self.series.t.last().is_none_or(|&t| t < self.time()) {
            self.record(&sol, omega_coi);
        }
        self.stats.max_spread_growth = self.monitor.max_spread_growth();
        Ok(RunResult {
            verdict: self.monitor.verdict(),
            series: self.series,
            stats: self.stats,
        })
    }
}

/// Initializes, simulates to `t_end` and forms the verdict over the
/// post-clearing window.
pub fn run(system: &System, scenario: &Scenario) -> Result<RunResult> {
    Simulation::new(system, scenario)?.finish()
}
