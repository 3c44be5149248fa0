//! Small systems shared by the integration tests.
#![allow(dead_code)]

use gfm_core::engine::System;
use gfm_core::netmodel::{Branch, Bus, BusKind, NetworkModel};
use gfm_core::powerflow::{DispatchSpec, DispatchUnit};
use gfm_core::vsm::ConverterParams;

pub fn bus(id: u32) -> Bus {
    Bus {
        id,
        base_kv: 230.0,
        kind: BusKind::ConverterTerminal,
    }
}

pub fn branch(from: u32, to: u32, r: f64, x: f64, id: &str) -> Branch {
    Branch {
        from,
        to,
        r,
        x,
        b_shunt: 0.0,
        circuit_id: id.into(),
        in_service: true,
    }
}

/// Converter rated at the 100 MVA system base behind a lossless j`x_src`.
pub fn converter(id: u32, h: f64, d: f64, x_src: f64) -> ConverterParams {
    ConverterParams {
        rating_mva: 100.0,
        d,
        r_f: 0.0,
        x_f: x_src / 2.0,
        r_c: 0.0,
        x_c: x_src / 2.0,
        i_max: 50.0,
        ..ConverterParams::reference(id, h)
    }
}

/// Two converters joined by a lossless line; converter 2 is the slack.
pub fn two_machine(h: [f64; 2], d: f64, x_src: f64, x_line: f64, p_mw: f64) -> System {
    let network = NetworkModel::new(
        100.0,
        vec![bus(1), bus(2)],
        vec![branch(1, 2, 0.0, x_line, "1-2")],
        vec![],
        vec![],
    )
    .unwrap();
    let dispatch = DispatchSpec {
        units: vec![
            DispatchUnit {
                converter: 1,
                bus: 1,
                p_mw,
                v_pu: 1.0,
            },
            DispatchUnit {
                converter: 2,
                bus: 2,
                p_mw: -p_mw,
                v_pu: 1.0,
            },
        ],
        slack: 1,
    };
    System::new(
        network,
        dispatch,
        vec![converter(1, h[0], d, x_src), converter(2, h[1], d, x_src)],
    )
}
