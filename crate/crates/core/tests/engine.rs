//! Event handling, determinism, verdicts and resolution of the hybrid
//! simulation loop on the bundled system.

use std::f64::consts::PI;

use gfm_core::engine::{
    detect_instability, ConverterTrace, InstabilityCriteria, InstabilityReason, Scenario, TimeSeries,
};
use gfm_core::experiments::{Area, FaultId, StrategyKind, Study, Variant};
use gfm_core::tsp::{Strategy, TspWacsConfig};

fn base() -> Variant {
    Variant::all(StrategyKind::Base)
}

#[test]
fn zero_duration_fault_is_a_null_event() {
    let study = Study::bundled().unwrap();
    let faulted = study.simulate(FaultId::II, base(), 0).unwrap();
    let mut quiet = study.scenario(FaultId::II, base(), 0);
    quiet.fault = None;
    let quiet = gfm_core::engine::run(&study.system, &quiet).unwrap();
    assert_eq!(faulted.series.len(), quiet.series.len());
    for (a, b) in faulted.series.converters.iter().zip(&quiet.series.converters) {
        for k in 0..a.delta.len() {
            assert!((a.delta[k] - b.delta[k]).abs() < 1e-9);
            assert!((a.domega[k] - b.domega[k]).abs() < 1e-9);
        }
    }
}

#[test]
fn fault_events_fire_once_on_step_boundaries() {
    let study = Study::bundled().unwrap();
    let r = study.simulate(FaultId::I, base(), 100).unwrap();
    let events = &r.series.events;
    assert_eq!(events.len(), 2, "{events:?}");
    assert_eq!(events[0].step, 1000);
    assert!(events[0].description.contains("applied"));
    assert_eq!(events[1].step, 1100);
    assert!(events[1].description.contains("7-8a"));
}

#[test]
fn identical_runs_are_bit_identical() {
    let study = Study::bundled().unwrap();
    let v = Variant::all(StrategyKind::Wacs { tau_ms: 50 });
    let a = study.simulate(FaultId::I, v, 150).unwrap();
    let b = study.simulate(FaultId::I, v, 150).unwrap();
    assert_eq!(a.series, b.series);
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.series.write_csv(&mut ca).unwrap();
    b.series.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn disabled_controller_matches_base_case() {
    let study = Study::bundled().unwrap();
    let reference = study.simulate(FaultId::I, base(), 120).unwrap();
    let mut s = study.scenario(FaultId::I, base(), 120);
    s.strategy = Strategy::Wacs(TspWacsConfig::default());
    s.enabled_converters = Some(Default::default());
    let disabled = gfm_core::engine::run(&study.system, &s).unwrap();
    assert_eq!(reference.series.converters, disabled.series.converters);
}

#[test]
fn area_restriction_only_moves_enabled_converters() {
    let study = Study::bundled().unwrap();
    let v = Variant {
        strategy: StrategyKind::Wacs { tau_ms: 0 },
        area: Area::One,
    };
    let r = study.simulate(FaultId::I, v, 150).unwrap();
    for c in &r.series.converters {
        let moved = c.dpts.iter().any(|&d| d != 0.0);
        assert_eq!(moved, c.id <= 2, "converter {}", c.id);
    }
}

#[test]
fn network_conserves_power_through_fault_and_limiting() {
    let study = Study::bundled().unwrap();
    for fault in FaultId::ALL {
        let r = study.simulate(fault, base(), 200).unwrap();
        assert!(
            r.stats.max_balance_residual <= 1e-6,
            "{fault}: {}",
            r.stats.max_balance_residual
        );
    }
}

fn peak_spread_after(study: &Study, dt: f64) -> f64 {
    let mut study = study.clone();
    study.dt = dt;
    let r = study
        .simulate(FaultId::I, Variant::all(StrategyKind::L { v_a_centi: 50 }), 150)
        .unwrap();
    assert!(r.verdict.stable);
    let s = &r.series;
    (0..s.len())
        .filter(|&k| s.t[k] >= 1.15)
        .map(|k| {
            let d = s.converters.iter().map(|c| c.delta[k]);
            d.clone().fold(f64::MIN, f64::max) - d.fold(f64::MAX, f64::min)
        })
        .fold(0.0, f64::max)
}

#[test]
fn halving_dt_barely_moves_the_stable_trajectory() {
    let study = Study::bundled().unwrap();
    let coarse = peak_spread_after(&study, 1e-3);
    let fine = peak_spread_after(&study, 5e-4);
    assert!(((coarse - fine) / fine).abs() < 0.005, "{coarse} vs {fine}");
}

fn series(t_end: f64, angles: impl Fn(f64) -> [f64; 2]) -> TimeSeries {
    let dt = 0.01;
    let n = (t_end / dt).round() as usize + 1;
    let t: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
    let converters = (0..2)
        .map(|j| ConverterTrace {
            id: j as u32 + 1,
            delta: t.iter().map(|&t| angles(t)[j]).collect(),
            domega: vec![0.0; n],
            ..Default::default()
        })
        .collect();
    TimeSeries {
        omega_coi: vec![1.0; n],
        t,
        converters,
        events: vec![],
    }
}

#[test]
fn verdict_examples() {
    let criteria = InstabilityCriteria::default();
    let flat = series(5.0, |_| [0.3, -0.1]);
    assert!(detect_instability(&flat, 1.0, criteria).unwrap().stable);

    let ramp = series(10.0, |t| [0.5 * t, 0.0]);
    let v = detect_instability(&ramp, 0.0, criteria).unwrap();
    assert!(!v.stable);
    assert_eq!(v.reason, InstabilityReason::AngleSeparation);
    let tv = v.t_violation.unwrap();
    assert!(tv > 2.0 * PI && tv <= 2.0 * PI + 0.01 + 1e-12, "{tv}");

    let swing = series(10.0, |t| [0.25 * (3.0 * t).sin(), -0.25 * (3.0 * t).sin()]);
    assert!(detect_instability(&swing, 1.0, criteria).unwrap().stable);

    assert!(detect_instability(&series(1.5, |_| [0.0, 0.0]), 1.0, criteria).is_err());
}

#[test]
fn explicit_fault_spec_matches_catalog_entry() {
    let study = Study::bundled().unwrap();
    let catalog = study.simulate(FaultId::IV, base(), 100).unwrap();
    let spec = study.explicit_fault_spec(8, Some("8-9a"), 100);
    let s = study.scenario_with("explicit".into(), Some(spec), base());
    let explicit = gfm_core::engine::run(&study.system, &s).unwrap();
    assert_eq!(catalog.series.converters, explicit.series.converters);
}

#[test]
fn scenario_rejects_bad_inputs() {
    let study = Study::bundled().unwrap();
    let mut s = Scenario::new("bad", None, Strategy::None);
    s.dt = 0.0;
    assert!(gfm_core::engine::run(&study.system, &s).is_err());
    let mut s = study.scenario(FaultId::I, base(), 100);
    s.fault.as_mut().unwrap().t_clear = 0.5;
    assert!(gfm_core::engine::run(&study.system, &s).is_err());
}
