//! Per-unit static network: buses, branches, constant-impedance loads, the
//! nodal admittance matrix, fault/trip mutation and the algebraic solve that
//! couples converter internal voltages to bus voltages.
//!
//! Everything here is on the system MVA base. Converters enter the solve as
//! Thevenin sources `e` behind `z`, turned into Norton injections. A source
//! whose current magnitude would exceed its limit is replaced by a current
//! source of exactly `i_max` at the unsaturated current's angle, and the
//! solve is repeated until the saturated set and the bus voltages settle.

use std::collections::{BTreeMap, HashMap, VecDeque};

use nalgebra::{DMatrix, DVector, Dyn, LU};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Tolerance of the current-limit angle solve.
pub const SATURATION_TOL: f64 = 1e-8;
/// Iteration cap of the current-limit set and angle iterations.
pub const SATURATION_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BusKind {
    ConverterTerminal,
    Load,
    Interior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: u32,
    pub base_kv: f64,
    pub kind: BusKind,
}

/// π-model branch; half of `b_shunt` sits at each end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b_shunt: f64,
    pub circuit_id: String,
    #[serde(default = "default_true")]
    pub in_service: bool,
}

fn default_true() -> bool {
    true
}

impl Branch {
    pub fn series_admittance(&self) -> C64 {
        C64::new(1.0, 0.0) / C64::new(self.r, self.x)
    }
}

/// Load given as consumed power at the initialization voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Load {
    pub bus: u32,
    pub p_mw: f64,
    pub q_mvar: f64,
}

/// Fixed bus shunt specified at 1 pu voltage. Positive `b_mvar` is capacitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shunt {
    pub bus: u32,
    #[serde(default)]
    pub g_mw: f64,
    #[serde(default)]
    pub b_mvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PostAction {
    None,
    TripBranch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultSpec {
    pub bus: u32,
    pub shunt_admittance: C64,
    pub t_apply: f64,
    pub t_clear: f64,
    pub post_action: PostAction,
}

impl FaultSpec {
    pub const DEFAULT_CONDUCTANCE: f64 = 1e4;

    pub fn bolted(bus: u32, t_apply: f64, t_clear: f64, post_action: PostAction) -> Self {
        Self {
            bus,
            shunt_admittance: C64::new(Self::DEFAULT_CONDUCTANCE, 0.0),
            t_apply,
            t_clear,
            post_action,
        }
    }

    /// A zero-duration fault (`t_clear == t_apply`) is accepted as a null event.
    pub fn validate(&self) -> Result<()> {
        if !(self.t_apply.is_finite() && self.t_clear.is_finite()) {
            return Err(Error::Scenario("fault times must be finite".into()));
        }
        if self.t_clear < self.t_apply {
            return Err(Error::Scenario(format!(
                "fault clears at {} s before it is applied at {} s",
                self.t_clear, self.t_apply
            )));
        }
        if self.shunt_admittance.re < 0.0 || !self.shunt_admittance.is_finite() {
            return Err(Error::Scenario(
                "fault shunt conductance must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Dense complex nodal admittance matrix, rows ordered by ascending bus id.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub base_mva: f64,
    bus_ids: Vec<u32>,
    matrix: DMatrix<C64>,
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn bus_ids(&self) -> &[u32] {
        &self.bus_ids
    }

    pub fn index_of(&self, bus: u32) -> Option<usize> {
        self.bus_ids.binary_search(&bus).ok()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    /// Entry addressed by bus ids. Panics on unknown ids.
    pub fn entry(&self, from: u32, to: u32) -> C64 {
        let i = self.index_of(from).expect("unknown bus id");
        let j = self.index_of(to).expect("unknown bus id");
        self.matrix[(i, j)]
    }

    pub fn at(&self, i: usize, j: usize) -> C64 {
        self.matrix[(i, j)]
    }

    fn add_shunt(&mut self, idx: usize, y: C64) {
        self.matrix[(idx, idx)] += y;
    }
}

/// Assembles Y from branches and bus shunts (loads already as admittances).
pub fn build_ybus(
    buses: &[Bus],
    branches: &[Branch],
    shunts: &[(u32, C64)],
    base_mva: f64,
) -> Result<AdmittanceMatrix> {
    let mut bus_ids: Vec<u32> = buses.iter().map(|b| b.id).collect();
    bus_ids.sort_unstable();
    let n = bus_ids.len();
    let index = |id: u32, what: &str| -> Result<usize> {
        bus_ids
            .binary_search(&id)
            .map_err(|_| Error::Config(format!("{what} references unknown bus {id}")))
    };

    let mut y = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
    for br in branches.iter().filter(|b| b.in_service) {
        let what = format!("branch {}", br.circuit_id);
        let i = index(br.from, &what)?;
        let j = index(br.to, &what)?;
        if i == j {
            return Err(Error::Config(format!("{what} connects bus {} to itself", br.from)));
        }
        if br.r == 0.0 && br.x == 0.0 {
            return Err(Error::Config(format!("{what} has zero impedance")));
        }
        let ys = br.series_admittance();
        let ysh = C64::new(0.0, br.b_shunt / 2.0);
        y[(i, i)] += ys + ysh;
        y[(j, j)] += ys + ysh;
        y[(i, j)] -= ys;
        y[(j, i)] -= ys;
    }
    for &(bus, ysh) in shunts {
        let i = index(bus, "shunt")?;
        y[(i, i)] += ysh;
    }
    Ok(AdmittanceMatrix {
        base_mva,
        bus_ids,
        matrix: y,
    })
}

/// Returns a copy of `y` with the fault shunt added at the fault bus.
pub fn apply_fault(y: &AdmittanceMatrix, fault: &FaultSpec) -> Result<AdmittanceMatrix> {
    let idx = y
        .index_of(fault.bus)
        .ok_or_else(|| Error::Scenario(format!("fault at unknown bus {}", fault.bus)))?;
    let mut faulted = y.clone();
    faulted.add_shunt(idx, fault.shunt_admittance);
    Ok(faulted)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    loads: Vec<Load>,
    shunts: Vec<Shunt>,
    load_admittances: Option<Vec<C64>>,
    index: BTreeMap<u32, usize>,
}

impl NetworkModel {
    pub fn new(
        base_mva: f64,
        mut buses: Vec<Bus>,
        branches: Vec<Branch>,
        loads: Vec<Load>,
        shunts: Vec<Shunt>,
    ) -> Result<Self> {
        if !(base_mva > 0.0) {
            return Err(Error::Config("base_mva must be positive".into()));
        }
        buses.sort_by_key(|b| b.id);
        let mut index = BTreeMap::new();
        for (k, bus) in buses.iter().enumerate() {
            if !(bus.base_kv > 0.0) {
                return Err(Error::Config(format!("bus {} has non-positive base_kv", bus.id)));
            }
            if index.insert(bus.id, k).is_some() {
                return Err(Error::Config(format!("duplicate bus id {}", bus.id)));
            }
        }
        let mut circuits = std::collections::BTreeSet::new();
        for br in &branches {
            for end in [br.from, br.to] {
                if !index.contains_key(&end) {
                    return Err(Error::Config(format!(
                        "branch {} references unknown bus {end}",
                        br.circuit_id
                    )));
                }
            }
            if br.from == br.to {
                return Err(Error::Config(format!("branch {} is a self-loop", br.circuit_id)));
            }
            if br.x == 0.0 {
                return Err(Error::Config(format!("branch {} has zero reactance", br.circuit_id)));
            }
            if !circuits.insert(br.circuit_id.clone()) {
                return Err(Error::Config(format!("duplicate circuit id {}", br.circuit_id)));
            }
        }
        for load in &loads {
            if !index.contains_key(&load.bus) {
                return Err(Error::Config(format!("load at unknown bus {}", load.bus)));
            }
        }
        for sh in &shunts {
            if !index.contains_key(&sh.bus) {
                return Err(Error::Config(format!("shunt at unknown bus {}", sh.bus)));
            }
        }
        Ok(Self {
            base_mva,
            buses,
            branches,
            loads,
            shunts,
            load_admittances: None,
            index,
        })
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn loads(&self) -> &[Load] {
        &self.loads
    }

    pub fn shunts(&self) -> &[Shunt] {
        &self.shunts
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn index_of(&self, bus: u32) -> Option<usize> {
        self.index.get(&bus).copied()
    }

    pub fn bus_index(&self, bus: u32) -> Result<usize> {
        self.index_of(bus)
            .ok_or_else(|| Error::Scenario(format!("unknown bus {bus}")))
    }

    pub fn load_admittances(&self) -> Option<&[C64]> {
        self.load_admittances.as_deref()
    }

    /// Fixes every load as a constant admittance, one per entry of `loads()`.
    pub fn with_load_admittances(mut self, admittances: Vec<C64>) -> Result<Self> {
        if admittances.len() != self.loads.len() {
            return Err(Error::Config(format!(
                "expected {} load admittances, got {}",
                self.loads.len(),
                admittances.len()
            )));
        }
        self.load_admittances = Some(admittances);
        Ok(self)
    }

    /// Bus shunts in system pu at 1 pu voltage, keyed by bus id.
    pub fn shunt_admittances(&self) -> Vec<(u32, C64)> {
        let mut out: Vec<(u32, C64)> = self
            .shunts
            .iter()
            .map(|s| (s.bus, C64::new(s.g_mw, s.b_mvar) / self.base_mva))
            .collect();
        if let Some(yl) = &self.load_admittances {
            out.extend(self.loads.iter().zip(yl).map(|(l, y)| (l.bus, *y)));
        }
        out
    }

    /// Y with line charging, bus shunts and (once fixed) load admittances.
    pub fn ybus(&self) -> Result<AdmittanceMatrix> {
        build_ybus(&self.buses, &self.branches, &self.shunt_admittances(), self.base_mva)
    }

    /// Marks a circuit out of service. Parallel circuits are untouched.
    pub fn trip_branch(&self, circuit_id: &str) -> Result<NetworkModel> {
        let mut out = self.clone();
        let br = out
            .branches
            .iter_mut()
            .find(|b| b.circuit_id == circuit_id)
            .ok_or_else(|| Error::Scenario(format!("unknown circuit id {circuit_id}")))?;
        if !br.in_service {
            return Err(Error::Scenario(format!(
                "circuit {circuit_id} is already out of service"
            )));
        }
        br.in_service = false;
        let islanded = out.islanded_converter_buses();
        if !islanded.is_empty() {
            log::warn!(
                "tripping {circuit_id} isolates converter terminal bus(es) {:?}",
                islanded
            );
        }
        Ok(out)
    }

    /// Converter-terminal buses not connected to the largest island.
    pub fn islanded_converter_buses(&self) -> Vec<u32> {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in self.branches.iter().filter(|b| b.in_service) {
            let (i, j) = (self.index[&br.from], self.index[&br.to]);
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut component = vec![usize::MAX; n];
        let mut sizes = Vec::new();
        for start in 0..n {
            if component[start] != usize::MAX {
                continue;
            }
            let c = sizes.len();
            let mut size = 0;
            let mut queue = VecDeque::from([start]);
            component[start] = c;
            while let Some(u) = queue.pop_front() {
                size += 1;
                for &w in &adj[u] {
                    if component[w] == usize::MAX {
                        component[w] = c;
                        queue.push_back(w);
                    }
                }
            }
            sizes.push(size);
        }
        let main = (0..sizes.len()).max_by_key(|&c| sizes[c]).unwrap_or(0);
        self.buses
            .iter()
            .enumerate()
            .filter(|(k, b)| b.kind == BusKind::ConverterTerminal && component[*k] != main)
            .map(|(_, b)| b.id)
            .collect()
    }

    /// Complex power absorbed by every network element at bus voltages `v`
    /// (index order), plus any `extra` shunts such as a fault. Computed
    /// element by element, independently of the assembled Y.
    pub fn element_consumption(&self, v: &[C64], extra: &[(usize, C64)]) -> C64 {
        let mut total = C64::new(0.0, 0.0);
        for br in self.branches.iter().filter(|b| b.in_service) {
            let (i, j) = (self.index[&br.from], self.index[&br.to]);
            let dv = v[i] - v[j];
            total += dv.norm_sqr() * br.series_admittance().conj();
            let half = C64::new(0.0, br.b_shunt / 2.0).conj();
            total += (v[i].norm_sqr() + v[j].norm_sqr()) * half;
        }
        for (bus, y) in self.shunt_admittances() {
            total += v[self.index[&bus]].norm_sqr() * y.conj();
        }
        for &(i, y) in extra {
            total += v[i].norm_sqr() * y.conj();
        }
        total
    }
}

/// A converter as seen by the network: internal source behind `z_source`
/// at bus index `bus`, with current magnitude limit `i_max` (system pu).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConverterPort {
    pub bus: usize,
    pub z_source: C64,
    pub i_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSolution {
    pub bus_voltages: Vec<C64>,
    pub converter_currents: Vec<C64>,
    /// `v_g * conj(i)` at each converter's connection bus.
    pub pcc_powers: Vec<C64>,
    pub saturated: Vec<bool>,
    pub iterations: usize,
}

/// Factorization for one saturation mask, with the responses of the bus
/// voltages to a unit current at each saturated converter's bus.
struct Factor {
    lu: LU<C64, Dyn, Dyn>,
    unit_responses: Vec<DVector<C64>>,
}

/// Solves repeated network problems on a fixed Y, caching one LU
/// factorization per set of current-limited converters.
///
/// For a given set, a limited converter injects `i_max ∠ φ` and the bus
/// voltages are linear in those phasors. The angles are found by Newton's
/// method on the alignment condition `φ = arg((e − v) / z)`; the set itself
/// is updated until it is consistent with the resulting currents.
pub struct NetworkSolver {
    y: AdmittanceMatrix,
    ports: Vec<ConverterPort>,
    factors: HashMap<Vec<bool>, Factor>,
    last_mask: Vec<bool>,
    last_angles: Vec<f64>,
}

impl NetworkSolver {
    pub fn new(y: AdmittanceMatrix, ports: Vec<ConverterPort>) -> Result<Self> {
        for (k, p) in ports.iter().enumerate() {
            if p.bus >= y.n() {
                return Err(Error::Config(format!(
                    "converter {k} at bus index {} out of range",
                    p.bus
                )));
            }
            if p.z_source.norm() == 0.0 {
                return Err(Error::Config(format!("converter {k} has zero source impedance")));
            }
        }
        let m = ports.len();
        Ok(Self {
            y,
            ports,
            factors: HashMap::new(),
            last_mask: vec![false; m],
            last_angles: vec![0.0; m],
        })
    }

    pub fn admittance(&self) -> &AdmittanceMatrix {
        &self.y
    }

    pub fn ports(&self) -> &[ConverterPort] {
        &self.ports
    }

    fn factor(&mut self, saturated: &[bool]) -> Result<&Factor> {
        if !self.factors.contains_key(saturated) {
            let n = self.y.n();
            let mut m = self.y.matrix.clone();
            for (p, &sat) in self.ports.iter().zip(saturated) {
                if !sat {
                    m[(p.bus, p.bus)] += C64::new(1.0, 0.0) / p.z_source;
                }
            }
            let scale = m.iter().map(|c| c.norm()).fold(0.0, f64::max);
            let lu = m.lu();
            let u = lu.u();
            let (mut worst, mut worst_row) = (f64::INFINITY, 0);
            for k in 0..u.nrows() {
                let d = u[(k, k)].norm();
                if d < worst {
                    worst = d;
                    worst_row = k;
                }
            }
            if !(worst > 1e-13 * scale.max(1.0)) {
                return Err(Error::Numerical(format!(
                    "singular network matrix (pivot {worst:.3e} near bus {})",
                    self.y.bus_ids[worst_row.min(n - 1)]
                )));
            }
            let mut unit_responses = Vec::new();
            for (p, &sat) in self.ports.iter().zip(saturated) {
                if sat {
                    let mut rhs = DVector::from_element(n, C64::new(0.0, 0.0));
                    rhs[p.bus] = C64::new(1.0, 0.0);
                    let w = lu
                        .solve(&rhs)
                        .ok_or_else(|| Error::Numerical("singular network matrix".into()))?;
                    unit_responses.push(w);
                }
            }
            self.factors.insert(saturated.to_vec(), Factor { lu, unit_responses });
        }
        Ok(&self.factors[saturated])
    }

    /// Bus voltages for a saturation mask, solving for the current angles
    /// of the limited converters. Returns the voltages and the angles.
    fn solve_mask(&mut self, e: &[C64], mask: &[bool], guess: &[f64]) -> Result<(DVector<C64>, Vec<f64>)> {
        let n = self.y.n();
        let ports = self.ports.clone();
        let f = self.factor(mask)?;
        let mut rhs = DVector::from_element(n, C64::new(0.0, 0.0));
        for (k, p) in ports.iter().enumerate() {
            if !mask[k] {
                rhs[p.bus] += e[k] / p.z_source;
            }
        }
        let v0 =
            f.lu.solve(&rhs)
                .ok_or_else(|| Error::Numerical("singular network matrix".into()))?;
        let sat: Vec<usize> = (0..ports.len()).filter(|&k| mask[k]).collect();
        let s = sat.len();
        let mut phi: Vec<f64> = sat.iter().map(|&k| guess[k]).collect();
        if s > 0 {
            // W[a][b]: voltage at the bus of saturated port a per unit current at port b
            let w: Vec<Vec<C64>> = sat
                .iter()
                .map(|&a| (0..s).map(|b| f.unit_responses[b][ports[a].bus]).collect())
                .collect();
            let rot: Vec<C64> = sat
                .iter()
                .map(|&k| C64::from_polar(1.0, -ports[k].z_source.arg()))
                .collect();
            let mut converged = false;
            for _ in 0..SATURATION_MAX_ITER {
                let src: Vec<C64> = (0..s).map(|b| C64::from_polar(ports[sat[b]].i_max, phi[b])).collect();
                let mut g = DVector::zeros(s);
                let mut jac = DMatrix::zeros(s, s);
                for a in 0..s {
                    let k = sat[a];
                    let align = C64::from_polar(1.0, -phi[a]) * rot[a];
                    let mut d = e[k] - v0[ports[k].bus];
                    for b in 0..s {
                        d -= w[a][b] * src[b];
                    }
                    g[a] = (d * align).im;
                    for b in 0..s {
                        let mut dd = -w[a][b] * src[b] * C64::i();
                        if a == b {
                            dd -= d * C64::i();
                        }
                        jac[(a, b)] = (dd * align).im;
                    }
                }
                let step = jac
                    .lu()
                    .solve(&(-&g))
                    .ok_or_else(|| Error::Numerical("singular current-limit Jacobian".into()))?;
                let mut largest: f64 = 0.0;
                for a in 0..s {
                    let dphi = step[a].clamp(-0.5, 0.5);
                    phi[a] += dphi;
                    largest = largest.max(dphi.abs());
                }
                if largest < SATURATION_TOL * 1e-3 || g.amax() < SATURATION_TOL * 1e-3 {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::Numerical(format!(
                    "current-limit angles did not converge in {SATURATION_MAX_ITER} iterations"
                )));
            }
        }
        let mut v = v0;
        for (b, resp) in f.unit_responses.iter().enumerate() {
            v += resp * C64::from_polar(ports[sat[b]].i_max, phi[b]);
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numerical("non-finite bus voltage in network solve".into()));
        }
        let mut angles = guess.to_vec();
        for (b, &k) in sat.iter().enumerate() {
            angles[k] = phi[b];
        }
        Ok((v, angles))
    }

    /// Network solve for internal voltages `e` (one per port).
    pub fn solve(&mut self, e: &[C64]) -> Result<NetworkSolution> {
        assert_eq!(e.len(), self.ports.len(), "one internal voltage per converter");
        let m = self.ports.len();
        let ports = self.ports.clone();
        let mut mask = self.last_mask.clone();
        let mut angles = self.last_angles.clone();
        let mut seen: Vec<Vec<bool>> = Vec::new();

        for iteration in 1..=SATURATION_MAX_ITER {
            let (v, phi) = self.solve_mask(e, &mask, &angles)?;
            angles = phi;
            let mut next = mask.clone();
            for (k, p) in ports.iter().enumerate() {
                let free = (e[k] - v[p.bus]) / p.z_source;
                if mask[k] {
                    // a limited source whose terminal would pass less than
                    // the limit on its own, or that would need to absorb
                    // against its internal voltage, is released
                    let aligned = free * C64::from_polar(1.0, -angles[k]);
                    if aligned.re < p.i_max * (1.0 - 1e-12) {
                        next[k] = false;
                    }
                } else if free.norm() > p.i_max {
                    next[k] = true;
                    angles[k] = free.arg();
                }
            }
            if next == mask {
                let mut currents = Vec::with_capacity(m);
                let mut powers = Vec::with_capacity(m);
                for (k, p) in ports.iter().enumerate() {
                    let i = if mask[k] {
                        C64::from_polar(p.i_max, angles[k])
                    } else {
                        (e[k] - v[p.bus]) / p.z_source
                    };
                    currents.push(i);
                    powers.push(v[p.bus] * i.conj());
                }
                self.last_mask = mask.clone();
                self.last_angles = angles;
                return Ok(NetworkSolution {
                    bus_voltages: v.iter().copied().collect(),
                    converter_currents: currents,
                    pcc_powers: powers,
                    saturated: mask,
                    iterations: iteration,
                });
            }
            seen.push(mask.clone());
            if seen.contains(&next) {
                // cycling between sets: keep every converter that was limited
                // in either, which ends the cycle
                next = next.iter().zip(&mask).map(|(a, b)| *a || *b).collect();
            }
            mask = next;
        }
        Err(Error::Numerical(format!(
            "current-limit set did not settle in {SATURATION_MAX_ITER} iterations"
        )))
    }
}

/// One-shot network solve; see [`NetworkSolver`] for repeated solves.
pub fn solve_network(
    y: &AdmittanceMatrix,
    ports: &[ConverterPort],
    internal_voltages: &[C64],
) -> Result<NetworkSolution> {
    NetworkSolver::new(y.clone(), ports.to_vec())?.solve(internal_voltages)
}
