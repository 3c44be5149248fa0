//! Admittance assembly, network solution invariants and the Kundur load
//! flow regression.

mod common;

use gfm_core::config::ConfigDocument;
use gfm_core::netmodel::{
    apply_fault, build_ybus, solve_network, Branch, ConverterPort, FaultSpec, NetworkModel, PostAction, C64,
};
use gfm_core::powerflow::{solve_powerflow, PowerFlowOptions};
use gfm_core::vsm::electrical_power_angle;
use proptest::prelude::*;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[test]
fn kundur_ybus_matches_elementwise_reassembly() {
    let doc = ConfigDocument::bundled_kundur();
    let net = doc.network().unwrap();
    let y = net.ybus().unwrap();
    for a in net.buses() {
        for b in net.buses() {
            let expected = if a.id == b.id {
                let mut s = c(0.0, 0.0);
                for br in doc.branches.iter().filter(|br| br.from == a.id || br.to == a.id) {
                    s += 1.0 / c(br.r, br.x) + c(0.0, br.b_shunt / 2.0);
                }
                for sh in doc.shunts.iter().filter(|sh| sh.bus == a.id) {
                    s += c(sh.g_mw, sh.b_mvar) / 100.0;
                }
                s
            } else {
                -doc.branches
                    .iter()
                    .filter(|br| (br.from, br.to) == (a.id, b.id) || (br.from, br.to) == (b.id, a.id))
                    .map(|br| 1.0 / c(br.r, br.x))
                    .sum::<C64>()
            };
            assert!((y.entry(a.id, b.id) - expected).norm() < 1e-9, "Y[{}][{}]", a.id, b.id);
            assert_eq!(y.entry(a.id, b.id), y.entry(b.id, a.id));
        }
    }
}

#[test]
fn fault_iv_trip_halves_mutual_admittance() {
    let net = ConfigDocument::bundled_kundur().network().unwrap();
    let before = net.ybus().unwrap().entry(8, 9);
    let after = net.trip_branch("8-9a").unwrap().ybus().unwrap().entry(8, 9);
    assert!((after - before / 2.0).norm() < 1e-12);
    assert!(net.trip_branch("8-9a").unwrap().trip_branch("8-9a").is_err());
}

#[test]
fn power_angle_relation_matches_network_solve() {
    // source behind j x_c feeding a resistive load at the PCC
    let x_c = 0.3;
    let net = NetworkModel::new(100.0, vec![common::bus(1)], vec![], vec![], vec![]).unwrap();
    let y = build_ybus(net.buses(), &[], &[(1, c(1.0, 0.0))], 100.0).unwrap();
    let port = ConverterPort {
        bus: 0,
        z_source: c(0.0, x_c),
        i_max: 100.0,
    };
    let e = C64::from_polar(1.05, 0.4);
    let sol = solve_network(&y, &[port], &[e]).unwrap();
    let v = sol.bus_voltages[0];
    let p = electrical_power_angle(e.norm(), v.norm(), x_c, e.arg(), v.arg());
    assert!((p - sol.pcc_powers[0].re).abs() < 1e-9);
}

#[test]
fn zero_flow_branch_removal_leaves_voltages() {
    // buses 2 and 3 are mirror images, so the 2-3 tie carries nothing
    let buses = (1..=4).map(common::bus).collect();
    let branches = vec![
        common::branch(1, 2, 0.01, 0.1, "1-2"),
        common::branch(1, 3, 0.01, 0.1, "1-3"),
        common::branch(2, 3, 0.0, 0.2, "2-3"),
        common::branch(2, 4, 0.02, 0.2, "2-4"),
        common::branch(3, 4, 0.02, 0.2, "3-4"),
    ];
    let net = NetworkModel::new(100.0, buses, branches, vec![], vec![]).unwrap();
    let ports = [
        ConverterPort {
            bus: 0,
            z_source: c(0.0, 0.1),
            i_max: 100.0,
        },
        ConverterPort {
            bus: 3,
            z_source: c(0.0, 0.1),
            i_max: 100.0,
        },
    ];
    let e = [C64::from_polar(1.0, 0.3), C64::from_polar(1.0, -0.2)];
    let before = solve_network(&net.ybus().unwrap(), &ports, &e).unwrap();
    let after = solve_network(&net.trip_branch("2-3").unwrap().ybus().unwrap(), &ports, &e).unwrap();
    for (a, b) in before.bus_voltages.iter().zip(&after.bus_voltages) {
        assert!((a - b).norm() < 1e-9);
    }
}

#[test]
fn kundur_powerflow_regression() {
    // independent polar-form root-finding solution of the same data
    const FROZEN: [(u32, f64, f64); 11] = [
        (1, 1.03, 37.441145672473844),
        (2, 1.01, 27.145505586635142),
        (3, 1.03, 0.0),
        (4, 1.01, -9.760116248151173),
        (5, 0.9967967273182171, 30.751893539337612),
        (6, 0.9614562220056146, 20.101204959946145),
        (7, 0.9358781957798519, 11.0946138885649),
        (8, 0.9052774799887213, -7.1532696498713095),
        (9, 0.9483644906488286, -25.030879851559234),
        (10, 0.9694311746791089, -16.517182391924273),
        (11, 1.0007286037142864, -6.400636426377336),
    ];
    let system = ConfigDocument::bundled_kundur().system().unwrap();
    let op = solve_powerflow(&system.network, &system.dispatch, &PowerFlowOptions::default()).unwrap();
    assert!(op.iterations <= 10, "{} iterations", op.iterations);
    assert!(op.max_mismatch < 1e-8);
    for (id, vm, deg) in FROZEN {
        let v = op.voltages[system.network.bus_index(id).unwrap()];
        assert!((v.norm() - vm).abs() < 1e-8, "bus {id} |V|");
        assert!((v.arg().to_degrees() - deg).abs() < 1e-6, "bus {id} angle");
    }
    let slack = op.injections[system.dispatch.slack];
    assert!((slack.re * 100.0 - 695.9897759400732).abs() < 1e-5);

    let again = solve_powerflow(
        &system.network,
        &system.dispatch,
        &PowerFlowOptions {
            initial: Some(op.voltages.clone()),
            ..Default::default()
        },
    )
    .unwrap();
    assert!(again.iterations <= 1);
}

/// Random connected network: a chain plus optional chords, no shunts.
fn network_strategy() -> impl Strategy<Value = (usize, Vec<Branch>, Vec<f64>)> {
    (3usize..7).prop_flat_map(|n| {
        let chain = proptest::collection::vec((0.001f64..0.05, 0.05f64..0.5), n - 1);
        let chords = proptest::collection::vec((0..n, 0..n, 0.001f64..0.05, 0.05f64..0.5), 0..4);
        let loads = proptest::collection::vec(0.0f64..2.0, n);
        (Just(n), chain, chords, loads).prop_map(|(n, chain, chords, loads)| {
            let mut branches: Vec<Branch> = chain
                .iter()
                .enumerate()
                .map(|(i, &(r, x))| common::branch(i as u32 + 1, i as u32 + 2, r, x, &format!("c{i}")))
                .collect();
            for (k, &(a, b, r, x)) in chords.iter().enumerate() {
                if a != b {
                    branches.push(common::branch(a as u32 + 1, b as u32 + 1, r, x, &format!("x{k}")));
                }
            }
            (n, branches, loads)
        })
    })
}

fn assemble(n: usize, branches: &[Branch], loads: &[f64]) -> gfm_core::netmodel::AdmittanceMatrix {
    let buses: Vec<_> = (1..=n as u32).map(common::bus).collect();
    let shunts: Vec<(u32, C64)> = loads
        .iter()
        .enumerate()
        .map(|(i, &g)| (i as u32 + 1, c(g, -0.3 * g)))
        .collect();
    build_ybus(&buses, branches, &shunts, 100.0).unwrap()
}

proptest! {
    #[test]
    fn ybus_is_reciprocal((n, branches, loads) in network_strategy()) {
        let y = assemble(n, &branches, &loads);
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(y.at(i, j), y.at(j, i));
            }
        }
    }

    #[test]
    fn solution_conserves_power(
        (n, branches, loads) in network_strategy(),
        mags in proptest::collection::vec(0.9f64..1.1, 2),
        angles in proptest::collection::vec(-0.5f64..0.5, 2),
        i_max in 0.5f64..20.0,
        fault in proptest::option::of(0usize..6),
    ) {
        let mut y = assemble(n, &branches, &loads);
        if let Some(f) = fault.filter(|&f| f < n) {
            let spec = FaultSpec { bus: f as u32 + 1, shunt_admittance: c(1e4, 0.0), t_apply: 0.0, t_clear: 0.1, post_action: PostAction::None };
            y = apply_fault(&y, &spec).unwrap();
        }
        let ports = [
            ConverterPort { bus: 0, z_source: c(0.005, 0.2), i_max },
            ConverterPort { bus: n - 1, z_source: c(0.005, 0.2), i_max },
        ];
        let e: Vec<C64> = mags.iter().zip(&angles).map(|(&m, &a)| C64::from_polar(m, a)).collect();
        let sol = solve_network(&y, &ports, &e).unwrap();

        let injected: C64 = sol.pcc_powers.iter().sum();
        let v = &sol.bus_voltages;
        let absorbed: C64 = (0..n)
            .map(|i| v[i] * (0..n).map(|j| y.at(i, j) * v[j]).sum::<C64>().conj())
            .sum();
        prop_assert!((injected - absorbed).norm() <= 1e-6);
        for cur in &sol.converter_currents {
            prop_assert!(cur.norm() <= i_max + 1e-9);
        }
    }
}
