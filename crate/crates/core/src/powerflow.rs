//! Newton–Raphson AC power flow for the pre-fault operating point, and the
//! equilibrium initialization of converter states built on it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{ConverterPort, NetworkModel, NetworkSolver, C64};
use crate::vsm::{ConverterParams, ConverterState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchUnit {
    pub converter: u32,
    pub bus: u32,
    pub p_mw: f64,
    pub v_pu: f64,
}

/// Scheduled converter injections; `slack` indexes `units`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSpec {
    pub units: Vec<DispatchUnit>,
    pub slack: usize,
}

#[derive(Debug, Clone)]
pub struct PowerFlowOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Warm start in bus-index order.
    pub initial: Option<Vec<C64>>,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    /// Bus voltage phasors in bus-index order.
    pub voltages: Vec<C64>,
    /// Complex injection of each dispatch unit, system pu.
    pub injections: Vec<C64>,
    /// Constant-impedance equivalents of the loads at the solved voltages.
    pub load_admittances: Vec<C64>,
    pub iterations: usize,
    pub max_mismatch: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum BusType {
    Slack,
    Pv,
    Pq,
}

pub fn solve_powerflow(
    network: &NetworkModel,
    dispatch: &DispatchSpec,
    opts: &PowerFlowOptions,
) -> Result<OperatingPoint> {
    let n = network.n_buses();
    if dispatch.slack >= dispatch.units.len() {
        return Err(Error::Initialization("no slack unit designated".into()));
    }
    let islanded = network.islanded_converter_buses();
    if !islanded.is_empty() {
        return Err(Error::Initialization(format!(
            "network is not connected; isolated converter bus(es) {islanded:?}"
        )));
    }

    // The load-free Y: loads enter as constant power here.
    let shell = NetworkModel::new(
        network.base_mva,
        network.buses().to_vec(),
        network.branches().to_vec(),
        network.loads().to_vec(),
        network.shunts().to_vec(),
    )?;
    let y = shell.ybus()?;
    let ym = y.matrix();
    let base = network.base_mva;

    let mut kind = vec![BusType::Pq; n];
    let mut s_spec = vec![C64::new(0.0, 0.0); n];
    let mut v_set = vec![1.0; n];
    let mut unit_bus = Vec::with_capacity(dispatch.units.len());
    for (k, u) in dispatch.units.iter().enumerate() {
        let i = network.bus_index(u.bus)?;
        if kind[i] != BusType::Pq {
            return Err(Error::Initialization(format!("two units at bus {}", u.bus)));
        }
        kind[i] = if k == dispatch.slack {
            BusType::Slack
        } else {
            BusType::Pv
        };
        v_set[i] = u.v_pu;
        s_spec[i].re += u.p_mw / base;
        unit_bus.push(i);
    }
    let mut s_load = vec![C64::new(0.0, 0.0); n];
    for l in network.loads() {
        let i = network.bus_index(l.bus)?;
        s_load[i] += C64::new(l.p_mw, l.q_mvar) / base;
    }
    for i in 0..n {
        s_spec[i] -= s_load[i];
    }

    let pvpq: Vec<usize> = (0..n).filter(|&i| kind[i] != BusType::Slack).collect();
    let pq: Vec<usize> = (0..n).filter(|&i| kind[i] == BusType::Pq).collect();

    let (mut va, mut vm): (Vec<f64>, Vec<f64>) = match &opts.initial {
        Some(v0) if v0.len() == n => (
            v0.iter().map(|c| c.arg()).collect(),
            v0.iter().map(|c| c.norm()).collect(),
        ),
        _ => (vec![0.0; n], vec![1.0; n]),
    };
    for i in 0..n {
        if kind[i] != BusType::Pq {
            vm[i] = v_set[i];
        }
    }

    let phasors = |va: &[f64], vm: &[f64]| -> DVector<C64> {
        DVector::from_iterator(n, va.iter().zip(vm).map(|(&a, &m)| C64::from_polar(m, a)))
    };

    let mut iterations = 0;
    loop {
        let v = phasors(&va, &vm);
        let current = ym * &v;
        let s_calc: Vec<C64> = (0..n).map(|i| v[i] * current[i].conj()).collect();

        let mut f = Vec::with_capacity(pvpq.len() + pq.len());
        f.extend(pvpq.iter().map(|&i| s_calc[i].re - s_spec[i].re));
        f.extend(pq.iter().map(|&i| s_calc[i].im - s_spec[i].im));
        let (worst_pos, worst) = f
            .iter()
            .enumerate()
            .map(|(k, x)| (k, x.abs()))
            .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });

        if worst < opts.tol {
            for i in 0..n {
                if !(0.8 < vm[i] && vm[i] < 1.2) {
                    log::warn!(
                        "bus {} voltage {:.4} pu outside (0.8, 1.2)",
                        network.buses()[i].id,
                        vm[i]
                    );
                }
            }
            let load_admittances = network
                .loads()
                .iter()
                .map(|l| {
                    let i = network.bus_index(l.bus).unwrap();
                    C64::new(l.p_mw, -l.q_mvar) / base / (vm[i] * vm[i])
                })
                .collect();
            // injections: bus net injection plus whatever load sits there
            let injections = unit_bus.iter().map(|&i| s_calc[i] + s_load[i]).collect();
            return Ok(OperatingPoint {
                voltages: v.iter().copied().collect(),
                injections,
                load_admittances,
                iterations,
                max_mismatch: worst,
            });
        }
        if iterations >= opts.max_iter {
            let bus_pos = if worst_pos < pvpq.len() {
                pvpq[worst_pos]
            } else {
                pq[worst_pos - pvpq.len()]
            };
            return Err(Error::Initialization(format!(
                "power flow diverged after {iterations} iterations; worst mismatch {worst:.3e} pu at bus {}",
                network.buses()[bus_pos].id
            )));
        }

        // dS/dθ and dS/d|V| in the usual complex form.
        let diag_v = DMatrix::from_diagonal(&v);
        let diag_i = DMatrix::from_diagonal(&current);
        let vnorm = v.map(|c| c / c.norm());
        let diag_vnorm = DMatrix::from_diagonal(&vnorm);
        let ds_dvm = &diag_v * (ym * &diag_vnorm).map(|c| c.conj()) + diag_i.map(|c| c.conj()) * &diag_vnorm;
        let ds_dva = (&diag_v * (&diag_i - ym * &diag_v).map(|c| c.conj())).map(|c| c * C64::new(0.0, 1.0));

        let m = pvpq.len() + pq.len();
        let mut jac = DMatrix::<f64>::zeros(m, m);
        for (r, &i) in pvpq.iter().enumerate() {
            for (c, &j) in pvpq.iter().enumerate() {
                jac[(r, c)] = ds_dva[(i, j)].re;
            }
            for (c, &j) in pq.iter().enumerate() {
                jac[(r, pvpq.len() + c)] = ds_dvm[(i, j)].re;
            }
        }
        for (r, &i) in pq.iter().enumerate() {
            let row = pvpq.len() + r;
            for (c, &j) in pvpq.iter().enumerate() {
                jac[(row, c)] = ds_dva[(i, j)].im;
            }
            for (c, &j) in pq.iter().enumerate() {
                jac[(row, pvpq.len() + c)] = ds_dvm[(i, j)].im;
            }
        }
        let dx = jac
            .lu()
            .solve(&DVector::from_vec(f))
            .ok_or_else(|| Error::Initialization("singular power-flow Jacobian".into()))?;
        for (k, &i) in pvpq.iter().enumerate() {
            va[i] -= dx[k];
        }
        for (k, &i) in pq.iter().enumerate() {
            vm[i] -= dx[pvpq.len() + k];
        }
        iterations += 1;
        if let Some(i) = (0..n).find(|&i| !(vm[i] >= 0.5)) {
            return Err(Error::Initialization(format!(
                "voltage collapse during power flow: |v| = {:.3} pu at bus {} (iteration {iterations})",
                vm[i],
                network.buses()[i].id
            )));
        }
    }
}

/// Equilibrium converter states and constant setpoints.
#[derive(Debug, Clone)]
pub struct Initialization {
    /// Network with loads fixed as constant admittances.
    pub network: NetworkModel,
    pub ports: Vec<ConverterPort>,
    pub states: Vec<ConverterState>,
    /// Constant setpoints on each converter's own rating.
    pub p_ref0: Vec<f64>,
}

/// Back-solves each converter's internal voltage through its source impedance and
/// sets `p_ref0` so that the swing equation starts exactly balanced.
/// `params` must be in the same order as `dispatch.units`.
pub fn initialize_converters(
    network: &NetworkModel,
    dispatch: &DispatchSpec,
    op: &OperatingPoint,
    params: &[ConverterParams],
) -> Result<Initialization> {
    if params.len() != dispatch.units.len() {
        return Err(Error::Initialization(format!(
            "{} converters but {} dispatch units",
            params.len(),
            dispatch.units.len()
        )));
    }
    let base = network.base_mva;
    let network = network.clone().with_load_admittances(op.load_admittances.clone())?;

    let mut ports = Vec::with_capacity(params.len());
    let mut states = Vec::with_capacity(params.len());
    let mut e = Vec::with_capacity(params.len());
    for ((unit, p), s) in dispatch.units.iter().zip(params).zip(&op.injections) {
        if unit.converter != p.id {
            return Err(Error::Initialization(format!(
                "dispatch unit for converter {} paired with parameters of converter {}",
                unit.converter, p.id
            )));
        }
        let bus = network.bus_index(unit.bus)?;
        let z = p.source_impedance(base);
        let v = op.voltages[bus];
        let i = (s / v).conj();
        if i.norm() > p.i_max_system(base) {
            return Err(Error::Initialization(format!(
                "converter {} starts above its current limit ({:.3} pu)",
                p.id,
                i.norm() / p.power_ratio(base)
            )));
        }
        let em = v + z * i;
        ports.push(ConverterPort {
            bus,
            z_source: z,
            i_max: p.i_max_system(base),
        });
        states.push(ConverterState {
            delta: em.arg(),
            domega: 0.0,
            e_mag: em.norm(),
        });
        e.push(em);
    }

    let mut solver = NetworkSolver::new(network.ybus()?, ports.clone())?;
    let sol = solver.solve(&e)?;
    let mut p_ref0 = Vec::with_capacity(params.len());
    for ((p, s), got) in params.iter().zip(&op.injections).zip(&sol.pcc_powers) {
        let err = (s - got).norm();
        if err > 1e-8 {
            return Err(Error::Initialization(format!(
                "converter {} injection reconstruction off by {err:.3e} pu",
                p.id
            )));
        }
        p_ref0.push(got.re / p.power_ratio(base));
    }
    Ok(Initialization {
        network,
        ports,
        states,
        p_ref0,
    })
}
