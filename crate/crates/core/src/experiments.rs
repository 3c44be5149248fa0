//! Reproduction harness: the four Kundur fault cases, critical clearing time
//! search per (fault, strategy, area, latency) cell, and table emission.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use crate::config::{ConfigDocument, ReferenceSection};
use crate::engine::{run, InstabilityCriteria, RunResult, Scenario, System};
use crate::error::{Error, Result};
use crate::netmodel::{FaultSpec, PostAction, C64};
use crate::parallel::par_map;
use crate::tsp::{Strategy, TspLConfig, TspTdmConfig, TspWacsConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FaultId {
    I,
    II,
    III,
    IV,
}

impl FaultId {
    pub const ALL: [FaultId; 4] = [FaultId::I, FaultId::II, FaultId::III, FaultId::IV];

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Some(FaultId::I),
            "II" | "2" => Some(FaultId::II),
            "III" | "3" => Some(FaultId::III),
            "IV" | "4" => Some(FaultId::IV),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        ["I", "II", "III", "IV"][self.index()]
    }
}

impl fmt::Display for FaultId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fault {}", self.label())
    }
}

/// One catalog entry: the faulted line, the bus the short circuit sits on
/// and the clearing action.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultEntry {
    pub id: FaultId,
    pub line: &'static str,
    pub bus: u32,
    pub trip: Option<&'static str>,
}

impl FaultEntry {
    pub fn post_action(&self) -> PostAction {
        self.trip.map_or(PostAction::None, |c| PostAction::TripBranch(c.into()))
    }
}

pub struct FaultCatalog;

impl FaultCatalog {
    pub fn entry(id: FaultId) -> FaultEntry {
        match id {
            FaultId::I => FaultEntry {
                id,
                line: "7-8a",
                bus: 7,
                trip: Some("7-8a"),
            },
            FaultId::II => FaultEntry {
                id,
                line: "5-6",
                bus: 5,
                trip: None,
            },
            FaultId::III => FaultEntry {
                id,
                line: "10-11",
                bus: 11,
                trip: None,
            },
            FaultId::IV => FaultEntry {
                id,
                line: "8-9a",
                bus: 8,
                trip: Some("8-9a"),
            },
        }
    }

    pub fn entries() -> Vec<FaultEntry> {
        FaultId::ALL.iter().map(|&id| Self::entry(id)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Area {
    All,
    One,
    Two,
}

impl Area {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "all" => Some(Area::All),
            "1" => Some(Area::One),
            "2" => Some(Area::Two),
            _ => None,
        }
    }

    /// Converters with the supplementary controller switched on.
    pub fn enabled_converters(self) -> Option<BTreeSet<u32>> {
        match self {
            Area::All => None,
            Area::One => Some([1, 2].into_iter().collect()),
            Area::Two => Some([3, 4].into_iter().collect()),
        }
    }
}

/// Strategy of one table column. TSP-L thresholds and WACS latency are in
/// integer units so that cells hash and order deterministically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StrategyKind {
    Base,
    /// TSP-L with `v_A` in hundredths of a pu.
    L {
        v_a_centi: u32,
    },
    Tdm,
    /// TSP-WACS with latency in ms.
    Wacs {
        tau_ms: u32,
    },
}

impl StrategyKind {
    pub fn parse(s: &str, tau_ms: u32, v_a: f64) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "base" | "none" => Some(StrategyKind::Base),
            "l" => Some(StrategyKind::L {
                v_a_centi: (v_a * 100.0).round() as u32,
            }),
            "tdm" => Some(StrategyKind::Tdm),
            "wacs" => Some(StrategyKind::Wacs { tau_ms }),
            _ => None,
        }
    }

    pub fn label(self) -> String {
        match self {
            StrategyKind::Base => "base".into(),
            StrategyKind::L { v_a_centi } => format!("l_va{v_a_centi:03}"),
            StrategyKind::Tdm => "tdm".into(),
            StrategyKind::Wacs { tau_ms } => format!("wacs_tau{tau_ms}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Variant {
    pub strategy: StrategyKind,
    pub area: Area,
}

impl Variant {
    pub fn all(strategy: StrategyKind) -> Self {
        Self {
            strategy,
            area: Area::All,
        }
    }

    pub fn label(&self) -> String {
        match self.area {
            Area::All => self.strategy.label(),
            Area::One => format!("{}_area1", self.strategy.label()),
            Area::Two => format!("{}_area2", self.strategy.label()),
        }
    }
}

/// Simulation settings shared by every cell of a study.
#[derive(Debug, Clone)]
pub struct Study {
    pub system: System,
    pub t_apply: f64,
    pub fault_conductance: f64,
    pub t_end: f64,
    pub dt: f64,
    pub criteria: InstabilityCriteria,
    pub wacs: TspWacsConfig,
    pub tdm: TspTdmConfig,
    pub l: TspLConfig,
    pub grid_ms: u32,
    pub max_ms: u32,
    pub decimation: usize,
    pub reference: ReferenceSection,
}

impl Study {
    pub fn from_config(doc: &ConfigDocument) -> Result<Self> {
        Ok(Self {
            system: doc.system()?,
            t_apply: doc.scenario.t_apply,
            fault_conductance: doc.scenario.fault_conductance,
            t_end: doc.scenario.t_end,
            dt: doc.scenario.dt,
            criteria: doc.scenario.criteria(),
            wacs: doc.tsp.wacs.clone(),
            tdm: doc.tsp.tdm.clone(),
            l: doc.tsp.l.clone(),
            grid_ms: doc.cct.grid_ms,
            max_ms: doc.cct.max_ms,
            decimation: doc.output.decimation,
            reference: doc.reference.clone(),
        })
    }

    pub fn bundled() -> Result<Self> {
        Self::from_config(&ConfigDocument::bundled_kundur())
    }

    pub fn strategy(&self, kind: StrategyKind) -> Strategy {
        match kind {
            StrategyKind::Base => Strategy::None,
            StrategyKind::L { v_a_centi } => Strategy::L(TspLConfig {
                v_a: v_a_centi as f64 / 100.0,
                ..self.l.clone()
            }),
            StrategyKind::Tdm => Strategy::Tdm(self.tdm.clone()),
            StrategyKind::Wacs { tau_ms } => Strategy::Wacs(TspWacsConfig {
                tau: tau_ms as f64 / 1000.0,
                ..self.wacs.clone()
            }),
        }
    }

    pub fn fault_spec(&self, fault: FaultId, clear_ms: u32) -> FaultSpec {
        let e = FaultCatalog::entry(fault);
        self.explicit_fault_spec(e.bus, e.trip, clear_ms)
    }

    /// Bolted-style fault at any bus, optionally tripping a circuit when it
    /// clears.
    pub fn explicit_fault_spec(&self, bus: u32, trip: Option<&str>, clear_ms: u32) -> FaultSpec {
        FaultSpec {
            bus,
            shunt_admittance: C64::new(self.fault_conductance, 0.0),
            t_apply: self.t_apply,
            t_clear: self.t_apply + clear_ms as f64 / 1000.0,
            post_action: trip.map_or(PostAction::None, |c| PostAction::TripBranch(c.into())),
        }
    }

    pub fn scenario(&self, fault: FaultId, variant: Variant, clear_ms: u32) -> Scenario {
        self.scenario_with(
            format!("{fault} {} {clear_ms} ms", variant.label()),
            Some(self.fault_spec(fault, clear_ms)),
            variant,
        )
    }

    /// Scenario for any fault definition. The horizon always extends at
    /// least 2 s past clearing so the verdict window is populated.
    pub fn scenario_with(&self, name: String, fault: Option<FaultSpec>, variant: Variant) -> Scenario {
        let t_clear = fault.as_ref().map_or(0.0, |f| f.t_clear);
        let mut s = Scenario::new(name, fault, self.strategy(variant.strategy));
        s.enabled_converters = variant.area.enabled_converters();
        s.t_end = self.t_end.max(t_clear + 2.0);
        s.dt = self.dt;
        s.record_decimation = self.decimation;
        s.criteria = self.criteria;
        s
    }

    pub fn simulate(&self, fault: FaultId, variant: Variant, clear_ms: u32) -> Result<RunResult> {
        run(&self.system, &self.scenario(fault, variant, clear_ms))
    }

    /// Stability of one clearing time, stopping at the first violation.
    pub fn probe(&self, fault: FaultId, variant: Variant, clear_ms: u32) -> Result<bool> {
        let mut s = self.scenario(fault, variant, clear_ms);
        s.stop_on_violation = true;
        s.record_decimation = usize::MAX;
        Ok(run(&self.system, &s)?.verdict.stable)
    }

    /// Stability of the intact system with the strategy active and no event.
    pub fn prefault_stable(&self, variant: Variant) -> Result<bool> {
        let mut s = self.scenario_with(format!("pre-fault {}", variant.label()), None, variant);
        s.t_end = self.t_apply + 2.0;
        s.record_decimation = usize::MAX;
        s.stop_on_violation = true;
        Ok(run(&self.system, &s)?.verdict.stable)
    }

    pub fn find_cct(&self, fault: FaultId, variant: Variant) -> CctResult {
        let outcome = find_cct(
            || self.prefault_stable(variant),
            |ms| self.probe(fault, variant, ms),
            self.grid_ms,
            self.max_ms,
        );
        let (cct_ms, status, error) = match outcome {
            Ok((ms, st)) => (ms, st, None),
            Err(e) => (0, CctStatus::Failed, Some(e.to_string())),
        };
        CctResult {
            fault,
            variant,
            cct_ms,
            status,
            error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CctStatus {
    Found,
    AtLeastMax,
    Zero,
    Failed,
}

impl CctStatus {
    pub fn label(self) -> &'static str {
        match self {
            CctStatus::Found => "found",
            CctStatus::AtLeastMax => ">=max",
            CctStatus::Zero => "=0",
            CctStatus::Failed => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CctResult {
    pub fault: FaultId,
    pub variant: Variant,
    pub cct_ms: u32,
    pub status: CctStatus,
    pub error: Option<String>,
}

/// Largest stable clearing time on the grid, by bisection under a
/// monotonicity assumption. The bracket is re-checked with fresh probes;
/// if that contradicts the bisection, a linear scan from zero decides.
/// `prefault` must report the undisturbed system stable. A system that is
/// unstable even after a zero-duration fault (the post-fault topology alone
/// is fatal) has a CCT of zero.
pub fn find_cct<P, F>(prefault: P, probe: F, grid_ms: u32, max_ms: u32) -> Result<(u32, CctStatus)>
where
    P: FnOnce() -> Result<bool>,
    F: Fn(u32) -> Result<bool>,
{
    if grid_ms == 0 || max_ms < grid_ms {
        return Err(Error::Harness(format!("bad CCT grid {grid_ms} ms / {max_ms} ms")));
    }
    if !prefault()? {
        return Err(Error::Harness("system unstable before the fault".into()));
    }
    if !probe(0)? {
        return Ok((0, CctStatus::Zero));
    }
    let top = max_ms / grid_ms;
    let mut memo: BTreeMap<u32, bool> = BTreeMap::new();
    let mut eval = |k: u32| -> Result<bool> {
        if let Some(&v) = memo.get(&k) {
            return Ok(v);
        }
        let v = probe(k * grid_ms)?;
        memo.insert(k, v);
        Ok(v)
    };
    if !eval(1)? {
        return Ok((0, CctStatus::Zero));
    }
    if eval(top)? {
        return Ok((top * grid_ms, CctStatus::AtLeastMax));
    }
    let (mut lo, mut hi) = (1u32, top);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if eval(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if probe(lo * grid_ms)? && !probe(hi * grid_ms)? {
        return Ok((lo * grid_ms, CctStatus::Found));
    }
    log::warn!(
        "stability not monotone around {} ms, falling back to a linear scan",
        lo * grid_ms
    );
    scan_cct(probe, grid_ms, max_ms)
}

/// Last stable grid point before the first unstable one.
pub fn scan_cct<F>(probe: F, grid_ms: u32, max_ms: u32) -> Result<(u32, CctStatus)>
where
    F: Fn(u32) -> Result<bool>,
{
    let top = max_ms / grid_ms;
    for k in 1..=top {
        if !probe(k * grid_ms)? {
            return Ok(if k == 1 {
                (0, CctStatus::Zero)
            } else {
                ((k - 1) * grid_ms, CctStatus::Found)
            });
        }
    }
    Ok((top * grid_ms, CctStatus::AtLeastMax))
}

/// A table column: its header, the variant simulated and the key into the
/// reference data.
#[derive(Debug, Clone)]
pub struct Column {
    pub header: String,
    pub variant: Variant,
    pub reference_key: String,
}

#[derive(Debug, Clone)]
pub struct TableLayout {
    pub number: u8,
    pub title: &'static str,
    pub columns: Vec<Column>,
}

fn column(header: &str, strategy: StrategyKind, area: Area, key: &str) -> Column {
    Column {
        header: header.into(),
        variant: Variant { strategy, area },
        reference_key: key.into(),
    }
}

/// Column layouts of the three published CCT tables.
pub fn published_tables() -> Vec<TableLayout> {
    use StrategyKind::*;
    let mut out = vec![TableLayout {
        number: 2,
        title: "all converters",
        columns: vec![
            column("base", Base, Area::All, "base"),
            column("l_va075", L { v_a_centi: 75 }, Area::All, "l_va075"),
            column("l_va050", L { v_a_centi: 50 }, Area::All, "l_va050"),
            column("tdm", Tdm, Area::All, "tdm"),
            column("wacs_tau0", Wacs { tau_ms: 0 }, Area::All, "wacs_tau0"),
            column("wacs_tau50", Wacs { tau_ms: 50 }, Area::All, "wacs_tau50"),
            column("wacs_tau100", Wacs { tau_ms: 100 }, Area::All, "wacs_tau100"),
        ],
    }];
    for (number, title, area) in [(3, "area 1 only", Area::One), (4, "area 2 only", Area::Two)] {
        out.push(TableLayout {
            number,
            title,
            columns: vec![
                column("base", Base, Area::All, "base"),
                column("l", L { v_a_centi: 50 }, area, "l"),
                column("tdm", Tdm, area, "tdm"),
                column("wacs", Wacs { tau_ms: 0 }, area, "wacs"),
            ],
        });
    }
    out
}

/// Published value for a cell, from the first table whose layout has it.
pub fn reference_cct(reference: &ReferenceSection, fault: FaultId, variant: Variant) -> Option<u32> {
    published_tables().iter().find_map(|l| {
        l.columns
            .iter()
            .find(|c| c.variant == variant)
            .and_then(|c| reference.lookup(l.number, &c.reference_key, fault.index()))
    })
}

/// Results of a table run, keyed by (fault, variant).
#[derive(Debug, Clone, Default)]
pub struct CctTables {
    pub cells: BTreeMap<(FaultId, Variant), CctResult>,
    pub layouts: Vec<TableLayout>,
    pub reference: ReferenceSection,
}

impl CctTables {
    pub fn get(&self, fault: FaultId, variant: Variant) -> Option<&CctResult> {
        self.cells.get(&(fault, variant))
    }

    pub fn cct(&self, fault: FaultId, variant: Variant) -> Option<u32> {
        self.get(fault, variant)
            .filter(|r| r.status != CctStatus::Failed)
            .map(|r| r.cct_ms)
    }

    pub fn write_table_csv<W: Write>(&self, layout: &TableLayout, mut w: W) -> std::io::Result<()> {
        let mut header = vec!["fault".to_string()];
        for c in &layout.columns {
            header.push(format!("{}_ms", c.header));
            header.push(format!("{}_ref_paper_ms", c.header));
        }
        writeln!(w, "{}", header.join(","))?;
        for fault in FaultId::ALL {
            let mut row = vec![fault.label().to_string()];
            for c in &layout.columns {
                row.push(match self.get(fault, c.variant) {
                    Some(r) if r.status != CctStatus::Failed => r.cct_ms.to_string(),
                    _ => "NA".into(),
                });
                row.push(
                    self.reference
                        .lookup(layout.number, &c.reference_key, fault.index())
                        .map_or("NA".into(), |v| v.to_string()),
                );
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Long-form listing of every cell with status and errors.
    pub fn write_cells_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "fault,variant,cct_ms,status,error")?;
        for ((fault, variant), r) in &self.cells {
            let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
            writeln!(
                w,
                "{},{},{},{},{}",
                fault.label(),
                variant.label(),
                r.cct_ms,
                r.status.label(),
                err
            )?;
        }
        Ok(())
    }

    pub fn orderings(&self) -> Vec<OrderingCheck> {
        check_orderings(self, 10)
    }
}

/// Runs every distinct cell of `layouts` once; cells shared between tables
/// (the base column) are simulated a single time.
pub fn run_cct_table(study: &Study, layouts: Vec<TableLayout>, jobs: Option<usize>) -> CctTables {
    let mut cells: Vec<(FaultId, Variant)> = Vec::new();
    for layout in &layouts {
        for c in &layout.columns {
            for fault in FaultId::ALL {
                if !cells.contains(&(fault, c.variant)) {
                    cells.push((fault, c.variant));
                }
            }
        }
    }
    cells.sort();
    let results = par_map(&cells, jobs, |&(fault, variant)| {
        let r = study.find_cct(fault, variant);
        log::info!("{fault} {}: {} ms ({})", variant.label(), r.cct_ms, r.status.label());
        r
    });
    CctTables {
        cells: cells.into_iter().zip(results).collect(),
        layouts,
        reference: study.reference.clone(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingCheck {
    pub name: String,
    pub passed: bool,
    /// Informational checks are reported but do not fail a run.
    pub fatal: bool,
    pub detail: String,
}

/// Ordering properties over a full table run.
pub fn check_orderings(t: &CctTables, grid_ms: u32) -> Vec<OrderingCheck> {
    use StrategyKind::*;
    let base = Variant::all(Base);
    let l50 = Variant::all(L { v_a_centi: 50 });
    let l75 = Variant::all(L { v_a_centi: 75 });
    let wacs = |tau_ms| Variant::all(Wacs { tau_ms });
    let mut out = Vec::new();
    let mut push = |name: String, passed: Option<bool>, fatal: bool, detail: String| {
        out.push(OrderingCheck {
            name,
            passed: passed.unwrap_or(false),
            fatal,
            detail,
        });
    };
    let show = |v: Option<u32>| v.map_or("NA".to_string(), |x| x.to_string());
    for fault in FaultId::ALL {
        let b = t.cct(fault, base);
        let l = t.cct(fault, l50);
        let w0 = t.cct(fault, wacs(0));
        let w50 = t.cct(fault, wacs(50));
        let w100 = t.cct(fault, wacs(100));
        if fault != FaultId::IV {
            push(
                format!("{fault}: CCT(L, v_A=0.5) >= CCT(base) + 20 ms"),
                b.zip(l).map(|(b, l)| l >= b + 20),
                true,
                format!("L {} vs base {}", show(l), show(b)),
            );
            push(
                format!("{fault}: CCT(WACS, tau=0) >= CCT(base) + 20 ms"),
                b.zip(w0).map(|(b, w)| w >= b + 20),
                true,
                format!("WACS {} vs base {}", show(w0), show(b)),
            );
        } else {
            push(
                format!("{fault}: CCT(L, v_A=0.5) = CCT(base)"),
                b.zip(l).map(|(b, l)| l == b),
                true,
                format!("L {} vs base {}", show(l), show(b)),
            );
            push(
                format!("{fault}: CCT(WACS, tau=0) >= 1.5 CCT(base)"),
                b.zip(w0).map(|(b, w)| 2 * w >= 3 * b),
                true,
                format!("WACS {} vs base {}", show(w0), show(b)),
            );
            let l75v = t.cct(fault, l75);
            push(
                format!("{fault}: CCT(L, v_A=0.75) <= CCT(base)"),
                b.zip(l75v).map(|(b, l)| l <= b),
                false,
                format!("L(0.75) {} vs base {}", show(l75v), show(b)),
            );
        }
        push(
            format!("{fault}: CCT(WACS) non-increasing in tau within one grid step"),
            w0.zip(w50)
                .zip(w100)
                .map(|((a, b), c)| b <= a + grid_ms && c <= b + grid_ms),
            true,
            format!("tau 0/50/100: {}/{}/{}", show(w0), show(w50), show(w100)),
        );
        push(
            format!("{fault}: CCT(WACS, tau=100) >= CCT(base)"),
            b.zip(w100).map(|(b, w)| w >= b),
            true,
            format!("WACS(100) {} vs base {}", show(w100), show(b)),
        );
    }
    out
}

/// Plain-text report of every table plus the ordering checks.
pub fn summary_report(t: &CctTables) -> String {
    let mut s = String::new();
    for layout in &t.layouts {
        s.push_str(&format!("Table {} ({})\n", layout.number, layout.title));
        s.push_str(&format!("{:<10}", "fault"));
        for c in &layout.columns {
            s.push_str(&format!("{:>16}", c.header));
        }
        s.push('\n');
        for fault in FaultId::ALL {
            s.push_str(&format!("{:<10}", fault.label()));
            for c in &layout.columns {
                let ours = t.get(fault, c.variant).map_or("NA".to_string(), |r| match r.status {
                    CctStatus::AtLeastMax => format!(">={}", r.cct_ms),
                    CctStatus::Failed => "err".into(),
                    _ => r.cct_ms.to_string(),
                });
                let published = t
                    .reference
                    .lookup(layout.number, &c.reference_key, fault.index())
                    .map_or("NA".into(), |v| v.to_string());
                s.push_str(&format!("{:>16}", format!("{ours} ({published})")));
            }
            s.push('\n');
        }
        s.push('\n');
    }
    s.push_str("values: this model (published)\n\nOrderings checked\n");
    for c in t.orderings() {
        let tag = match (c.passed, c.fatal) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "NOTE",
        };
        s.push_str(&format!("[{tag}] {} -- {}\n", c.name, c.detail));
    }
    s
}

/// The four trajectories of the Fault I showcase, labelled base/l/tdm/wacs.
pub fn run_showcase(
    study: &Study,
    fault: FaultId,
    clear_ms: u32,
    jobs: Option<usize>,
) -> Result<Vec<(String, RunResult)>> {
    let variants = [
        Variant::all(StrategyKind::Base),
        Variant::all(StrategyKind::L {
            v_a_centi: (study.l.v_a * 100.0).round() as u32,
        }),
        Variant::all(StrategyKind::Tdm),
        Variant::all(StrategyKind::Wacs {
            tau_ms: (study.wacs.tau * 1000.0).round() as u32,
        }),
    ];
    let labels = ["base", "l", "tdm", "wacs"];
    let runs = par_map(&variants, jobs, |&v| study.simulate(fault, v, clear_ms));
    labels
        .iter()
        .zip(runs)
        .map(|(l, r)| r.map(|r| (l.to_string(), r)))
        .collect()
}

/// Plot-ready quantities of one showcase run: angle difference of converters
/// 1 and 3, frequency deviation from the COI, setpoint supplement and power.
pub fn write_showcase_csv<W: Write>(result: &RunResult, mut w: W) -> std::io::Result<()> {
    use crate::engine::sig9;
    let s = &result.series;
    let ids: Vec<u32> = s.converters.iter().map(|c| c.id).collect();
    let mut header = vec!["t_s".to_string(), "delta_1_3_rad".to_string()];
    for id in &ids {
        header.push(format!("vsc{id}_domega_rel_coi_pu"));
    }
    for id in &ids {
        header.push(format!("vsc{id}_dpts_pu"));
    }
    for id in &ids {
        header.push(format!("vsc{id}_pg_pu"));
    }
    writeln!(w, "{}", header.join(","))?;
    let c1 = s.converter(1);
    let c3 = s.converter(3);
    for k in 0..s.len() {
        let mut row = vec![sig9(s.t[k])];
        row.push(match (c1, c3) {
            (Some(a), Some(b)) => sig9(a.delta[k] - b.delta[k]),
            _ => "NA".into(),
        });
        for c in &s.converters {
            row.push(sig9(c.domega[k] - (s.omega_coi[k] - 1.0)));
        }
        for c in &s.converters {
            row.push(sig9(c.dpts[k]));
        }
        for c in &s.converters {
            row.push(sig9(c.pg[k]));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn mock_threshold() {
        let r = find_cct(|| Ok(true), |ms| Ok(ms <= 230), 10, 2000).unwrap();
        assert_eq!(r, (230, CctStatus::Found));
    }

    #[test]
    fn mock_always_unstable_after_zero() {
        let r = find_cct(|| Ok(true), |ms| Ok(ms == 0), 10, 2000).unwrap();
        assert_eq!(r, (0, CctStatus::Zero));
    }

    #[test]
    fn mock_always_stable() {
        let r = find_cct(|| Ok(true), |_| Ok(true), 10, 2000).unwrap();
        assert_eq!(r, (2000, CctStatus::AtLeastMax));
    }

    #[test]
    fn unstable_prefault_is_harness_error() {
        assert!(matches!(
            find_cct(|| Ok(false), |_| Ok(true), 10, 2000),
            Err(Error::Harness(_))
        ));
        assert_eq!(
            find_cct(|| Ok(true), |_| Ok(false), 10, 2000).unwrap(),
            (0, CctStatus::Zero)
        );
    }

    #[test]
    fn contradicting_recheck_falls_back_to_scan() {
        // 240 ms reads stable only the first time it is run
        let first = Cell::new(true);
        let probe = |ms: u32| {
            if ms == 240 {
                return Ok(first.replace(false));
            }
            Ok(ms <= 230)
        };
        assert_eq!(find_cct(|| Ok(true), probe, 10, 2000).unwrap(), (230, CctStatus::Found));
    }

    #[test]
    fn scan_agrees_with_bisection_on_monotone_mocks() {
        for answer in (0..=2000).step_by(10) {
            let probe = |ms: u32| Ok(ms <= answer);
            assert_eq!(
                find_cct(|| Ok(true), probe, 10, 2000).unwrap(),
                scan_cct(probe, 10, 2000).unwrap()
            );
        }
    }

    #[test]
    fn catalog_entries() {
        let e = FaultCatalog::entry(FaultId::IV);
        assert_eq!(e.bus, 8);
        assert_eq!(e.post_action(), PostAction::TripBranch("8-9a".into()));
        assert_eq!(FaultCatalog::entry(FaultId::II).post_action(), PostAction::None);
    }

    #[test]
    fn area_sets() {
        assert_eq!(
            Area::One.enabled_converters().unwrap().into_iter().collect::<Vec<_>>(),
            vec![1, 2]
        );
        assert_eq!(
            Area::Two.enabled_converters().unwrap().into_iter().collect::<Vec<_>>(),
            vec![3, 4]
        );
        assert!(Area::All.enabled_converters().is_none());
    }

    #[test]
    fn table_layouts() {
        let t = published_tables();
        assert_eq!(t[0].columns.len(), 7);
        let wacs: Vec<_> = t[0].columns.iter().filter(|c| c.header.starts_with("wacs")).collect();
        assert_eq!(wacs.len(), 3);
    }
}
