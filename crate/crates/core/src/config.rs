//! Study configuration: a strict TOML document describing the network,
//! converters, controller parameters, scenario, CCT grid and outputs.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{InstabilityCriteria, System};
use crate::error::{Error, Result};
use crate::netmodel::{Branch, Bus, Load, NetworkModel, Shunt};
use crate::powerflow::{DispatchSpec, DispatchUnit};
use crate::tsp::{TspLConfig, TspTdmConfig, TspWacsConfig};
use crate::vsm::ConverterParams;

const BUNDLED_KUNDUR: &str = include_str!("../data/kundur_gfm.toml");

pub const DEFAULT_D: f64 = 20.0;
pub const DEFAULT_I_MAX: f64 = 1.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub base_mva: f64,
    #[serde(default = "default_hz")]
    pub nominal_hz: f64,
}

fn default_hz() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConverterSection {
    pub id: u32,
    pub bus: u32,
    /// Grid-side bus of the coupling transformer. When given, the transformer
    /// must appear as a branch `bus`-`pcc_bus` with impedance r_c + j x_c.
    #[serde(default)]
    pub pcc_bus: Option<u32>,
    pub p_mw: f64,
    pub v_pu: f64,
    #[serde(default)]
    pub slack: bool,
    pub rating_mva: f64,
    pub h_gfm: f64,
    pub d_gfm: Option<f64>,
    pub r_f: f64,
    pub x_f: f64,
    pub r_c: f64,
    pub x_c: f64,
    pub i_max: Option<f64>,
    #[serde(default)]
    pub c_f: f64,
    #[serde(default)]
    pub m_max: f64,
    #[serde(default)]
    pub k_cp: f64,
    #[serde(default)]
    pub k_ci: f64,
    #[serde(default)]
    pub k_vp: f64,
    #[serde(default)]
    pub k_vi: f64,
    #[serde(default)]
    pub r_v: f64,
    #[serde(default)]
    pub t_vr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TspMode {
    #[default]
    None,
    Wacs,
    Tdm,
    L,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TspSection {
    #[serde(default)]
    pub mode: TspMode,
    #[serde(default)]
    pub wacs: TspWacsConfig,
    #[serde(default)]
    pub tdm: TspTdmConfig,
    #[serde(default)]
    pub l: TspLConfig,
}

/// Explicit fault definition, used instead of a catalog entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSection {
    pub bus: u32,
    #[serde(default)]
    pub trip: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    /// Catalog entry ("I".."IV").
    #[serde(default)]
    pub fault: Option<String>,
    #[serde(default)]
    pub fault_spec: Option<FaultSection>,
    #[serde(default = "default_t_apply")]
    pub t_apply: f64,
    #[serde(default = "default_clear_ms")]
    pub clear_ms: u32,
    #[serde(default = "default_g_fault")]
    pub fault_conductance: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_angle")]
    pub angle_threshold: f64,
    #[serde(default = "default_freq")]
    pub freq_threshold: f64,
}

fn default_t_apply() -> f64 {
    1.0
}
fn default_clear_ms() -> u32 {
    150
}
fn default_g_fault() -> f64 {
    1e4
}
fn default_t_end() -> f64 {
    10.0
}
fn default_dt() -> f64 {
    1e-3
}
fn default_angle() -> f64 {
    PI
}
fn default_freq() -> f64 {
    0.1
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            fault: None,
            fault_spec: None,
            t_apply: default_t_apply(),
            clear_ms: default_clear_ms(),
            fault_conductance: default_g_fault(),
            t_end: default_t_end(),
            dt: default_dt(),
            angle_threshold: default_angle(),
            freq_threshold: default_freq(),
        }
    }
}

impl ScenarioSection {
    pub fn criteria(&self) -> InstabilityCriteria {
        InstabilityCriteria {
            angle_threshold: self.angle_threshold,
            freq_threshold: self.freq_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CctSection {
    #[serde(default = "default_grid")]
    pub grid_ms: u32,
    #[serde(default = "default_max")]
    pub max_ms: u32,
}

fn default_grid() -> u32 {
    10
}
fn default_max() -> u32 {
    2000
}

impl Default for CctSection {
    fn default() -> Self {
        Self {
            grid_ms: default_grid(),
            max_ms: default_max(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub directory: String,
    #[serde(default = "default_decimation")]
    pub decimation: usize,
}

fn default_dir() -> String {
    "out".into()
}
fn default_decimation() -> usize {
    1
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: default_dir(),
            decimation: default_decimation(),
        }
    }
}

/// Published CCTs (ms) per table and column, rows ordered Fault I..IV.
/// Reporting data only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub table2: BTreeMap<String, [u32; 4]>,
    #[serde(default)]
    pub table3: BTreeMap<String, [u32; 4]>,
    #[serde(default)]
    pub table4: BTreeMap<String, [u32; 4]>,
}

impl ReferenceSection {
    pub fn lookup(&self, table: u8, column: &str, fault_index: usize) -> Option<u32> {
        let t = match table {
            2 => &self.table2,
            3 => &self.table3,
            4 => &self.table4,
            _ => return None,
        };
        t.get(column).and_then(|row| row.get(fault_index).copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub system: SystemSection,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub loads: Vec<Load>,
    #[serde(default)]
    pub shunts: Vec<Shunt>,
    pub converters: Vec<ConverterSection>,
    #[serde(default)]
    pub tsp: TspSection,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub cct: CctSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub reference: ReferenceSection,
    /// Defaults filled in at load time, as `key = value` strings.
    #[serde(skip)]
    pub applied_defaults: Vec<String>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |p| before.len() - p - 1) + 1;
    (line, column)
}

impl ConfigDocument {
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc: ConfigDocument = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            Error::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        doc.apply_defaults();
        doc.validate()?;
        Ok(doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::parse(&text)
    }

    /// The two-area system shipped with the crate.
    pub fn bundled_kundur() -> Self {
        Self::parse(BUNDLED_KUNDUR).expect("bundled configuration is valid")
    }

    pub fn bundled_kundur_text() -> &'static str {
        BUNDLED_KUNDUR
    }

    fn apply_defaults(&mut self) {
        for c in &mut self.converters {
            if c.d_gfm.is_none() {
                c.d_gfm = Some(DEFAULT_D);
                log::info!("converters[{}].d_gfm not given, using {DEFAULT_D} pu", c.id);
                self.applied_defaults
                    .push(format!("converters[{}].d_gfm = {DEFAULT_D}", c.id));
            }
            if c.i_max.is_none() {
                c.i_max = Some(DEFAULT_I_MAX);
                log::info!("converters[{}].i_max not given, using {DEFAULT_I_MAX} pu", c.id);
                self.applied_defaults
                    .push(format!("converters[{}].i_max = {DEFAULT_I_MAX}", c.id));
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.system.base_mva > 0.0) {
            return Err(Error::validation("system.base_mva", "requires a positive base"));
        }
        if !(self.system.nominal_hz > 0.0) {
            return Err(Error::validation("system.nominal_hz", "requires a positive frequency"));
        }
        if self.converters.is_empty() {
            return Err(Error::validation("converters", "requires at least one converter"));
        }
        let slacks = self.converters.iter().filter(|c| c.slack).count();
        if slacks != 1 {
            return Err(Error::validation(
                "converters.slack",
                format!("requires exactly one slack converter, found {slacks}"),
            ));
        }
        let mut ids: Vec<u32> = self.converters.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::validation("converters.id", "requires unique ids"));
        }
        for c in &self.converters {
            if !self.buses.iter().any(|b| b.id == c.bus) {
                return Err(Error::validation(
                    format!("converters[{}].bus", c.id),
                    format!("unknown bus {}", c.bus),
                ));
            }
            if !(c.v_pu > 0.0) {
                return Err(Error::validation(
                    format!("converters[{}].v_pu", c.id),
                    "requires v > 0",
                ));
            }
            let params = self.converter_params(c);
            params.validate()?;
            if let Some(pcc) = c.pcc_bus {
                self.check_transformer(c, pcc, &params)?;
            }
        }
        self.tsp.wacs.validate()?;
        self.tsp.tdm.validate()?;
        self.tsp.l.validate()?;
        let s = &self.scenario;
        if !(s.dt > 0.0) {
            return Err(Error::validation("scenario.dt", "requires dt > 0"));
        }
        if !(s.t_end > s.t_apply) {
            return Err(Error::validation("scenario.t_end", "requires t_end > t_apply"));
        }
        if !(s.fault_conductance >= 0.0) {
            return Err(Error::validation("scenario.fault_conductance", "requires a value >= 0"));
        }
        if !(s.angle_threshold > 0.0 && s.freq_threshold > 0.0) {
            return Err(Error::validation(
                "scenario.angle_threshold",
                "requires positive thresholds",
            ));
        }
        if let Some(f) = &s.fault {
            crate::experiments::FaultId::parse(f)
                .ok_or_else(|| Error::validation("scenario.fault", format!("unknown fault `{f}`")))?;
        }
        if let Some(spec) = &s.fault_spec {
            if s.fault.is_some() {
                return Err(Error::validation(
                    "scenario.fault_spec",
                    "conflicts with scenario.fault",
                ));
            }
            if !self.buses.iter().any(|b| b.id == spec.bus) {
                return Err(Error::validation(
                    "scenario.fault_spec.bus",
                    format!("unknown bus {}", spec.bus),
                ));
            }
            if let Some(id) = &spec.trip {
                if !self.branches.iter().any(|b| &b.circuit_id == id) {
                    return Err(Error::validation(
                        "scenario.fault_spec.trip",
                        format!("unknown circuit `{id}`"),
                    ));
                }
            }
        }
        if self.cct.grid_ms == 0 || self.cct.max_ms < self.cct.grid_ms {
            return Err(Error::validation("cct.grid_ms", "requires 0 < grid_ms <= max_ms"));
        }
        if self.output.decimation == 0 {
            return Err(Error::validation("output.decimation", "requires decimation >= 1"));
        }
        self.network()?;
        Ok(())
    }

    fn converter_params(&self, c: &ConverterSection) -> ConverterParams {
        ConverterParams {
            id: c.id,
            rating_mva: c.rating_mva,
            h: c.h_gfm,
            d: c.d_gfm.unwrap_or(DEFAULT_D),
            r_f: c.r_f,
            x_f: c.x_f,
            r_c: c.r_c,
            x_c: c.x_c,
            i_max: c.i_max.unwrap_or(DEFAULT_I_MAX),
            omega0: 2.0 * PI * self.system.nominal_hz,
            c_f: c.c_f,
            m_max: c.m_max,
            k_cp: c.k_cp,
            k_ci: c.k_ci,
            k_vp: c.k_vp,
            k_vi: c.k_vi,
            r_v: c.r_v,
            t_vr: c.t_vr,
            transformer_in_network: c.pcc_bus.is_some(),
        }
    }

    fn check_transformer(&self, c: &ConverterSection, pcc: u32, params: &ConverterParams) -> Result<()> {
        let key = format!("converters[{}].pcc_bus", c.id);
        if pcc == c.bus {
            return Err(Error::validation(key, "must differ from the converter bus"));
        }
        let z = params.transformer_impedance(self.system.base_mva);
        let branch = self
            .branches
            .iter()
            .find(|b| (b.from == c.bus && b.to == pcc) || (b.from == pcc && b.to == c.bus))
            .ok_or_else(|| Error::validation(key.clone(), format!("no branch between buses {} and {pcc}", c.bus)))?;
        let tol = 1e-6 * z.norm();
        if (branch.r - z.re).abs() > tol || (branch.x - z.im).abs() > tol {
            return Err(Error::validation(
                key,
                format!(
                    "branch {} has r={}, x={} but the transformer data give r={:.9}, x={:.9}",
                    branch.circuit_id, branch.r, branch.x, z.re, z.im
                ),
            ));
        }
        Ok(())
    }

    pub fn network(&self) -> Result<NetworkModel> {
        NetworkModel::new(
            self.system.base_mva,
            self.buses.clone(),
            self.branches.clone(),
            self.loads.clone(),
            self.shunts.clone(),
        )
    }

    /// Network, dispatch and converter parameters in converter-list order.
    pub fn system(&self) -> Result<System> {
        let units = self
            .converters
            .iter()
            .map(|c| DispatchUnit {
                converter: c.id,
                bus: c.bus,
                p_mw: c.p_mw,
                v_pu: c.v_pu,
            })
            .collect();
        let slack = self.converters.iter().position(|c| c.slack).expect("validated");
        Ok(System {
            network: self.network()?,
            dispatch: DispatchSpec { units, slack },
            converters: self.converters.iter().map(|c| self.converter_params(c)).collect(),
            pcc_buses: self.converters.iter().map(|c| c.pcc_bus.unwrap_or(c.bus)).collect(),
        })
    }

    pub fn inertia(&self) -> Vec<f64> {
        self.converters.iter().map(|c| c.h_gfm).collect()
    }

    /// Canonical serialization used for hashing.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("document serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_file_loads() {
        let doc = ConfigDocument::bundled_kundur();
        assert_eq!(doc.buses.len(), 11);
        assert_eq!(doc.converters.len(), 4);
        assert_eq!(doc.inertia(), vec![4.5, 4.5, 4.175, 6.175]);
    }

    #[test]
    fn hysteresis_order_enforced() {
        let text = BUNDLED_KUNDUR.replace("v_a = 0.5", "v_a = 0.95");
        let err = ConfigDocument::parse(&text).unwrap_err().to_string();
        assert!(err.contains("requires v_A < v_B"), "{err}");
    }

    #[test]
    fn missing_damping_defaults() {
        let text = BUNDLED_KUNDUR.replace("d_gfm = 20.0\n", "");
        let doc = ConfigDocument::parse(&text).unwrap();
        assert!(doc.converters.iter().all(|c| c.d_gfm == Some(20.0)));
        assert_eq!(doc.applied_defaults.iter().filter(|d| d.contains("d_gfm")).count(), 4);
    }

    #[test]
    fn unknown_key_has_location() {
        let text = BUNDLED_KUNDUR.replace("[system]\n", "[system]\nbogus = 1\n");
        match ConfigDocument::parse(&text) {
            Err(Error::Parse { line, column, message }) => {
                assert!(line > 0 && column > 0);
                assert!(message.contains("bogus"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn line_col_counts_from_one() {
        assert_eq!(line_col("ab\ncd", 0), (1, 1));
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
    }
}
