//! Configuration loading, validation and the run manifest.

use gfm_core::config::ConfigDocument;
use gfm_core::manifest::{config_hash, RunManifest, MANIFEST_FILE};
use gfm_core::Error;

fn bundled_with(from: &str, to: &str) -> gfm_core::Result<ConfigDocument> {
    let text = ConfigDocument::bundled_kundur_text();
    assert!(text.contains(from), "fixture text `{from}` not found");
    ConfigDocument::parse(&text.replacen(from, to, 1))
}

fn validation_key(r: gfm_core::Result<ConfigDocument>) -> String {
    match r {
        Err(Error::Validation { key, .. }) => key,
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn bundled_system_measures_voltage_at_the_grid_side_bus() {
    let doc = ConfigDocument::bundled_kundur();
    let system = doc.system().unwrap();
    assert_eq!(system.pcc_buses, vec![5, 6, 11, 10]);
    assert!(system.converters.iter().all(|c| c.transformer_in_network));
    let h: Vec<f64> = system.converters.iter().map(|c| c.h).collect();
    assert_eq!(h, vec![4.5, 4.5, 4.175, 6.175]);
}

#[test]
fn transformer_branch_must_match_converter_data() {
    let key = validation_key(bundled_with(
        "r = 0.000555556\nx = 0.0166666667\ncircuit_id = \"1-5\"",
        "r = 0.000555556\nx = 0.02\ncircuit_id = \"1-5\"",
    ));
    assert_eq!(key, "converters[1].pcc_bus");
    let key = validation_key(bundled_with("pcc_bus = 5", "pcc_bus = 7"));
    assert_eq!(key, "converters[1].pcc_bus");
    let key = validation_key(bundled_with("pcc_bus = 5", "pcc_bus = 1"));
    assert_eq!(key, "converters[1].pcc_bus");
}

#[test]
fn explicit_fault_definition_is_validated() {
    let ok = bundled_with("fault = \"I\"", "fault_spec = { bus = 8, trip = \"8-9a\" }").unwrap();
    assert_eq!(ok.scenario.fault_spec.as_ref().unwrap().bus, 8);
    let key = validation_key(bundled_with("fault = \"I\"", "fault_spec = { bus = 99 }"));
    assert_eq!(key, "scenario.fault_spec.bus");
    let key = validation_key(bundled_with(
        "fault = \"I\"",
        "fault_spec = { bus = 8, trip = \"8-9z\" }",
    ));
    assert_eq!(key, "scenario.fault_spec.trip");
    let key = validation_key(bundled_with("fault = \"I\"", "fault = \"V\""));
    assert_eq!(key, "scenario.fault");
}

#[test]
fn physical_invariants_rejected_with_key() {
    assert_eq!(
        validation_key(bundled_with("h_gfm = 4.5", "h_gfm = -1.0")),
        "converters[1].h_gfm"
    );
    assert_eq!(validation_key(bundled_with("v_a = 0.5", "v_a = 0.95")), "tsp.l.v_a");
    assert_eq!(validation_key(bundled_with("dt = 0.001", "dt = 0.0")), "scenario.dt");
    assert_eq!(validation_key(bundled_with("slack = true\n", "")), "converters.slack");
}

#[test]
fn syntax_errors_carry_a_location() {
    match bundled_with("[system]", "[system]\nbase_mva = = 1") {
        Err(Error::Parse { line, column, .. }) => assert!(line > 1 && column >= 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn defaults_are_recorded_for_the_manifest() {
    let doc = bundled_with("d_gfm = 20.0\n", "").unwrap();
    assert_eq!(doc.converters[0].d_gfm, Some(20.0));
    assert!(
        doc.applied_defaults.iter().any(|d| d.contains("converters[1].d_gfm")),
        "{:?}",
        doc.applied_defaults
    );
}

#[test]
fn manifest_lists_files_and_hash() {
    let doc = ConfigDocument::bundled_kundur();
    let dir = tempfile::tempdir().unwrap();
    let mut m = RunManifest::start(&doc, vec!["gfmsim".into(), "table".into()]);
    m.add_file("b.csv");
    m.add_file("a.csv");
    let m = m.finish(dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    let back: RunManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.files, vec!["a.csv", "b.csv"]);
    assert_eq!(back.config_hash, config_hash(&doc));

    let reordered = bundled_with("[tsp]\nmode = \"none\"", "[tsp]\nmode = \"none\"\n").unwrap();
    assert_eq!(config_hash(&reordered), config_hash(&doc));
    let changed = bundled_with("clear_ms = 150", "clear_ms = 160").unwrap();
    assert_ne!(config_hash(&changed), config_hash(&doc));
}
