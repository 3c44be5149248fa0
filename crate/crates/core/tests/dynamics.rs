//! Swing dynamics through the full engine: linearization, integrator order,
//! equilibrium and boundedness.

mod common;

use std::f64::consts::PI;

use gfm_core::engine::{derivative_eval, Scenario, Simulation};
use gfm_core::experiments::{FaultId, StrategyKind, Study, Variant};
use gfm_core::netmodel::{solve_network, FaultSpec, NetworkSolver, PostAction, C64};
use gfm_core::powerflow::{initialize_converters, solve_powerflow, Initialization, PowerFlowOptions};
use gfm_core::tsp::Strategy;
use gfm_core::vsm::internal_phasor;
use nalgebra::{DMatrix, DVector};

const OMEGA0: f64 = 2.0 * PI * 50.0;

fn init(system: &gfm_core::engine::System) -> Initialization {
    let op = solve_powerflow(&system.network, &system.dispatch, &PowerFlowOptions::default()).unwrap();
    initialize_converters(&system.network, &system.dispatch, &op, &system.converters).unwrap()
}

fn shunt_at_bus1(y: C64) -> FaultSpec {
    FaultSpec {
        bus: 1,
        shunt_admittance: y,
        t_apply: 0.0,
        t_clear: 1e3,
        post_action: PostAction::None,
    }
}

#[test]
fn derivative_matches_infinite_bus_linearization() {
    let (x_src, x_line, h) = (0.1, 0.3, 4.5);
    let system = common::two_machine([h, 1e6], 20.0, x_src, x_line, 50.0);
    let init = init(&system);
    let mut solver = NetworkSolver::new(init.network.ybus().unwrap(), init.ports.clone()).unwrap();

    let (ea, eb) = (init.states[0].e_mag, init.states[1].e_mag);
    let x_total = 2.0 * x_src + x_line;
    let d0 = init.states[0].delta - init.states[1].delta;
    // lossless link: p = Ea Eb sin(d) / X
    assert!((ea * eb * d0.sin() / x_total - 0.5).abs() < 1e-9);
    assert!((init.p_ref0[0] - 0.5).abs() < 1e-9);

    let eps = 1e-3;
    let mut states = init.states.clone();
    states[0].delta += eps;
    let (d, _) = derivative_eval(&mut solver, &system.converters, 100.0, &states, &init.p_ref0).unwrap();
    let k = ea * eb * d0.cos() / x_total;
    let expected = -k * eps / (2.0 * h);
    assert!((d[0].1 - expected).abs() < 1e-6, "{} vs {expected}", d[0].1);
    assert_eq!(d[0].0, 0.0);
}

#[test]
fn small_signal_response_matches_damped_oscillator() {
    let (h, damping) = (4.5, 20.0);
    let system = common::two_machine([h, 1e6], damping, 0.1, 0.3, 50.0);
    let init = init(&system);
    let fault = shunt_at_bus1(C64::new(0.02, 0.0));

    // post-step equilibrium angle and synchronizing coefficient from the
    // faulted network, with the infinite bus held
    let y = gfm_core::netmodel::apply_fault(&init.network.ybus().unwrap(), &fault).unwrap();
    let p_at = |delta: f64| {
        let mut s = init.states.clone();
        s[0].delta = delta;
        let e: Vec<C64> = s.iter().map(internal_phasor).collect();
        solve_network(&y, &init.ports, &e).unwrap().pcc_powers[0].re
    };
    let slope = |d: f64| (p_at(d + 1e-6) - p_at(d - 1e-6)) / 2e-6;
    let mut star = init.states[0].delta;
    for _ in 0..20 {
        star -= (p_at(star) - init.p_ref0[0]) / slope(star);
    }
    let k = slope(star);
    let x0 = init.states[0].delta - star;
    assert!(x0.abs() > 1e-3, "excitation too small: {x0}");

    let mut scenario = Scenario::new("small signal", Some(fault), Strategy::None);
    scenario.t_end = 3.0;
    let r = gfm_core::engine::run(&system, &scenario).unwrap();

    let sigma = damping / (4.0 * h);
    let wd = (OMEGA0 * k / (2.0 * h) - sigma * sigma).sqrt();
    let s = &r.series;
    let mut worst: f64 = 0.0;
    for i in 0..s.len() {
        let t = s.t[i];
        let analytic = x0 * (-sigma * t).exp() * ((wd * t).cos() + sigma / wd * (wd * t).sin());
        let numeric = s.converters[0].delta[i] - star - (s.converters[1].delta[i] - init.states[1].delta);
        worst = worst.max((numeric - analytic).abs());
    }
    assert!(worst < 0.02 * x0.abs(), "deviation {worst} vs peak {}", x0.abs());
}

fn final_angle(dt: f64) -> f64 {
    let system = common::two_machine([4.5, 6.0], 0.0, 0.1, 0.3, 50.0);
    let mut scenario = Scenario::new("oscillator", Some(shunt_at_bus1(C64::new(0.0, -0.5))), Strategy::None);
    scenario.t_end = 2.0;
    scenario.dt = dt;
    scenario.record_decimation = usize::MAX;
    let r = gfm_core::engine::run(&system, &scenario).unwrap();
    let s = &r.series;
    s.converters[0].delta.last().unwrap() - s.converters[1].delta.last().unwrap()
}

#[test]
fn rk4_self_convergence_is_fourth_order() {
    let reference = final_angle(0.0005);
    let errors: Vec<f64> = [0.02, 0.01, 0.005]
        .iter()
        .map(|&dt| (final_angle(dt) - reference).abs())
        .collect();
    for w in errors.windows(2) {
        let slope = (w[0] / w[1]).log2();
        assert!((slope - 4.0).abs() <= 0.4, "slope {slope}, errors {errors:?}");
    }
}

#[test]
fn bundled_equilibrium_is_a_fixed_point() {
    let study = Study::bundled().unwrap();
    let scenario = Scenario::new("steady", None, Strategy::None);
    let mut sim = Simulation::new(&study.system, &scenario).unwrap();
    let start = sim.states().to_vec();
    for _ in 0..1000 {
        sim.step().unwrap();
    }
    for (a, b) in start.iter().zip(sim.states()) {
        assert!((a.delta - b.delta).abs() < 1e-9);
        assert!((a.domega - b.domega).abs() < 1e-9);
    }
}

#[test]
fn frequency_deviation_bounded_by_imbalance_over_damping() {
    let study = Study::bundled().unwrap();
    let r = study
        .simulate(FaultId::I, Variant::all(StrategyKind::Base), 150)
        .unwrap();
    let init = init(&study.system);
    for (k, c) in r.series.converters.iter().enumerate() {
        let d = study.system.converters[k].d;
        let sup =
            c.pg.iter()
                .zip(&c.dpts)
                .map(|(pg, dp)| (init.p_ref0[k] + dp - pg).abs())
                .fold(0.0, f64::max);
        let peak = c.domega.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        assert!(
            peak <= sup / d * (1.0 + 1e-3) + 1e-9,
            "converter {}: {peak} > {}",
            c.id,
            sup / d
        );
    }
}

#[test]
fn doubled_loads_match_independent_dense_solve() {
    let study = Study::bundled().unwrap();
    let init = init(&study.system);
    let doubled: Vec<C64> = init
        .network
        .load_admittances()
        .unwrap()
        .iter()
        .map(|y| y * 2.0)
        .collect();
    let network = init.network.clone().with_load_admittances(doubled).unwrap();
    let y = network.ybus().unwrap();
    // limits lifted: this checks the linear solve, not current limiting
    let mut ports = init.ports.clone();
    for p in &mut ports {
        p.i_max = 1e3;
    }
    let mut solver = NetworkSolver::new(y.clone(), ports).unwrap();
    let (d, sol) = derivative_eval(&mut solver, &study.system.converters, 100.0, &init.states, &init.p_ref0).unwrap();
    assert!(sol.saturated.iter().all(|s| !s));

    // Norton equivalents of the sources folded into a dense system
    let n = y.n();
    let mut a = DMatrix::from_fn(n, n, |i, j| y.at(i, j));
    let mut b = DVector::from_element(n, C64::new(0.0, 0.0));
    for (port, s) in init.ports.iter().zip(&init.states) {
        a[(port.bus, port.bus)] += 1.0 / port.z_source;
        b[port.bus] += internal_phasor(s) / port.z_source;
    }
    let v = a.lu().solve(&b).unwrap();
    for (k, (port, s)) in init.ports.iter().zip(&init.states).enumerate() {
        let i = (internal_phasor(s) - v[port.bus]) / port.z_source;
        let p = (v[port.bus] * i.conj()).re / study.system.converters[k].power_ratio(100.0);
        let expected = (init.p_ref0[k] - p) / (2.0 * study.system.converters[k].h);
        assert!((d[k].1 - expected).abs() < 1e-9, "converter {k}");
        assert!(expected < 0.0, "heavier load must decelerate converter {k}");
    }
}
