//! gfmsim: batch front end for the grid-forming transient-stability
//! simulator. Exit codes: 0 success, 1 usage or configuration error,
//! 2 simulation or initialization error.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use gfm_core::config::{ConfigDocument, TspMode};
use gfm_core::engine::run;
use gfm_core::experiments::{
    published_tables, reference_cct, run_cct_table, run_showcase, summary_report, write_showcase_csv, Area, CctStatus,
    FaultId, StrategyKind, Study, Variant,
};
use gfm_core::manifest::RunManifest;
use gfm_core::netmodel::FaultSpec;
use gfm_core::powerflow::{solve_powerflow, PowerFlowOptions};
use gfm_core::Error;

#[derive(Parser)]
#[command(
    name = "gfmsim",
    version,
    about = "Transient stability of 100% grid-forming converter grids"
)]
struct Cli {
    /// Log verbosity: -v info, -vv debug
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the load flow and print bus voltages and converter injections
    Powerflow {
        /// Configuration file (TOML)
        config: PathBuf,
    },
    /// Run one fault scenario, write its time series and print the verdict
    Simulate(SimulateArgs),
    /// Critical clearing time of one (fault, strategy, area) cell
    Cct(CellArgs),
    /// Reproduce the three published CCT tables
    Table(TableArgs),
    /// One fault at one clearing time under all four strategies (plot-ready CSVs)
    Showcase(ShowcaseArgs),
}

#[derive(Args)]
struct CellArgs {
    /// Configuration file (TOML)
    config: PathBuf,
    /// Fault case I, II, III or IV [default: scenario.fault]
    #[arg(long, value_parser = parse_fault)]
    fault: Option<FaultId>,
    /// base, l, tdm or wacs [default: tsp.mode]
    #[arg(long, value_parser = ["base", "none", "l", "tdm", "wacs"])]
    strategy: Option<String>,
    /// WACS latency in ms [default: tsp.wacs.tau]
    #[arg(long)]
    tau_ms: Option<u32>,
    /// TSP-L activation threshold v_A in pu [default: tsp.l.v_a]
    #[arg(long)]
    v_a: Option<f64>,
    /// Converters running the supplementary controller: all, 1 (area 1) or 2 (area 2)
    #[arg(long, default_value = "all", value_parser = parse_area)]
    area: Area,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    cell: CellArgs,
    /// Fault duration in ms [default: scenario.clear_ms]
    #[arg(long)]
    clear_ms: Option<u32>,
    /// Output directory [default: output.directory]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TableArgs {
    /// Configuration file (TOML)
    config: PathBuf,
    /// Worker threads for independent cells [default: all cores]
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory [default: output.directory]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ShowcaseArgs {
    /// Configuration file (TOML)
    config: PathBuf,
    #[arg(long, default_value = "I", value_parser = parse_fault)]
    fault: FaultId,
    #[arg(long, default_value_t = 150)]
    clear_ms: u32,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_fault(s: &str) -> Result<FaultId, String> {
    FaultId::parse(s).ok_or_else(|| format!("unknown fault `{s}` (expected I, II, III or IV)"))
}

fn parse_area(s: &str) -> Result<Area, String> {
    Area::parse(s).ok_or_else(|| format!("unknown area `{s}` (expected all, 1 or 2)"))
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let argv: Vec<String> = std::env::args().collect();
    let outcome = match cli.command {
        Command::Powerflow { config } => powerflow(&config),
        Command::Simulate(a) => simulate(a, argv),
        Command::Cct(a) => cct(a),
        Command::Table(a) => table(a, argv),
        Command::Showcase(a) => showcase(a, argv),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Validation { .. } | Error::Parse { .. } => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn load(path: &Path) -> CliResult<ConfigDocument> {
    let doc = ConfigDocument::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read {}: {io}", path.display())),
        other => other,
    })?;
    for d in &doc.applied_defaults {
        log::info!("default applied: {d}");
    }
    Ok(doc)
}

fn output_dir(doc: &ConfigDocument, out: Option<PathBuf>) -> CliResult<PathBuf> {
    let dir = out.unwrap_or_else(|| PathBuf::from(&doc.output.directory));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_file(
    dir: &Path,
    name: &str,
    manifest: &mut RunManifest,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    f(&mut w)?;
    w.flush()?;
    manifest.add_file(name);
    Ok(())
}

fn variant(doc: &ConfigDocument, a: &CellArgs) -> CliResult<Variant> {
    let name = match &a.strategy {
        Some(s) => s.clone(),
        None => match doc.tsp.mode {
            TspMode::None => "base",
            TspMode::Wacs => "wacs",
            TspMode::Tdm => "tdm",
            TspMode::L => "l",
        }
        .to_string(),
    };
    let tau_ms = a.tau_ms.unwrap_or((doc.tsp.wacs.tau * 1000.0).round() as u32);
    let v_a = a.v_a.unwrap_or(doc.tsp.l.v_a);
    if !(0.0 < v_a && v_a < doc.tsp.l.v_b) {
        return Err(Failure::Usage(format!(
            "--v-a {v_a} requires 0 < v_A < v_B = {}",
            doc.tsp.l.v_b
        )));
    }
    let strategy =
        StrategyKind::parse(&name, tau_ms, v_a).ok_or_else(|| Failure::Usage(format!("unknown strategy `{name}`")))?;
    if a.area != Area::All && strategy == StrategyKind::Base {
        return Err(Failure::Usage("--area has no effect on the base case".into()));
    }
    Ok(Variant { strategy, area: a.area })
}

fn catalog_fault(doc: &ConfigDocument, flag: Option<FaultId>) -> Option<FaultId> {
    flag.or_else(|| doc.scenario.fault.as_deref().and_then(FaultId::parse))
}

fn powerflow(config: &Path) -> CliResult<()> {
    let doc = load(config)?;
    let system = doc.system()?;
    let op = solve_powerflow(&system.network, &system.dispatch, &PowerFlowOptions::default())?;
    println!(
        "converged in {} iterations, max mismatch {:.3e} pu",
        op.iterations, op.max_mismatch
    );
    println!("{:>5} {:>10} {:>11}", "bus", "|V| pu", "angle deg");
    for b in system.network.buses() {
        let v = op.voltages[system.network.bus_index(b.id)?];
        println!("{:>5} {:>10.6} {:>11.4}", b.id, v.norm(), v.arg().to_degrees());
    }
    println!("{:>5} {:>5} {:>10} {:>10}", "vsc", "bus", "P MW", "Q Mvar");
    let base = doc.system.base_mva;
    for (u, s) in system.dispatch.units.iter().zip(&op.injections) {
        println!(
            "{:>5} {:>5} {:>10.3} {:>10.3}",
            u.converter,
            u.bus,
            s.re * base,
            s.im * base
        );
    }
    Ok(())
}

fn simulate(a: SimulateArgs, argv: Vec<String>) -> CliResult<()> {
    let doc = load(&a.cell.config)?;
    let study = Study::from_config(&doc)?;
    let variant = variant(&doc, &a.cell)?;
    let clear_ms = a.clear_ms.unwrap_or(doc.scenario.clear_ms);
    let (tag, spec): (String, FaultSpec) = match (catalog_fault(&doc, a.cell.fault), &doc.scenario.fault_spec) {
        (Some(f), _) => (f.label().to_string(), study.fault_spec(f, clear_ms)),
        (None, Some(fs)) => (
            format!("bus{}", fs.bus),
            study.explicit_fault_spec(fs.bus, fs.trip.as_deref(), clear_ms),
        ),
        (None, None) => return Err(Failure::Usage("no fault given (use --fault or scenario.fault)".into())),
    };
    let scenario = study.scenario_with(format!("{tag} {} {clear_ms} ms", variant.label()), Some(spec), variant);
    let result = run(&study.system, &scenario)?;

    let dir = output_dir(&doc, a.out)?;
    let mut manifest = RunManifest::start(&doc, argv);
    let name = format!("sim_{tag}_{}_{clear_ms}ms.csv", variant.label());
    write_file(&dir, &name, &mut manifest, |w| result.series.write_csv(w))?;
    manifest.finish(&dir)?;

    let v = result.verdict;
    log::info!(
        "{}: {:?} at t = {:?} s, conservation residual {:.2e} pu, output {}",
        scenario.name,
        v.reason,
        v.t_violation,
        result.stats.max_balance_residual,
        dir.join(&name).display()
    );
    println!("{}", v.label());
    Ok(())
}

fn cct(a: CellArgs) -> CliResult<()> {
    let doc = load(&a.config)?;
    let study = Study::from_config(&doc)?;
    let variant = variant(&doc, &a)?;
    let fault = catalog_fault(&doc, a.fault)
        .ok_or_else(|| Failure::Usage("cct needs a catalog fault (use --fault I..IV)".into()))?;
    let r = study.find_cct(fault, variant);
    if let Some(e) = &r.error {
        return Err(Failure::Core(Error::Harness(e.clone())));
    }
    let reference = reference_cct(&study.reference, fault, variant).map_or("NA".into(), |v| v.to_string());
    let shown = match r.status {
        CctStatus::AtLeastMax => format!(">={}", r.cct_ms),
        _ => r.cct_ms.to_string(),
    };
    println!(
        "fault={} strategy={} cct_ms={shown} status={} ref_paper_ms={reference}",
        fault.label(),
        variant.label(),
        r.status.label()
    );
    Ok(())
}

fn table(a: TableArgs, argv: Vec<String>) -> CliResult<()> {
    if a.jobs == Some(0) {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    let doc = load(&a.config)?;
    let study = Study::from_config(&doc)?;
    let dir = output_dir(&doc, a.out)?;
    let mut manifest = RunManifest::start(&doc, argv);
    let tables = run_cct_table(&study, published_tables(), a.jobs);
    for layout in &tables.layouts {
        let name = format!("table{}.csv", layout.number);
        write_file(&dir, &name, &mut manifest, |w| tables.write_table_csv(layout, w))?;
    }
    write_file(&dir, "cells.csv", &mut manifest, |w| tables.write_cells_csv(w))?;
    let report = summary_report(&tables);
    write_file(&dir, "summary.txt", &mut manifest, |w| w.write_all(report.as_bytes()))?;
    manifest.finish(&dir)?;
    print!("{report}");
    let failed = tables.cells.values().filter(|r| r.status == CctStatus::Failed).count();
    if failed > 0 {
        return Err(Failure::Core(Error::Harness(format!(
            "{failed} cell(s) failed, see cells.csv"
        ))));
    }
    Ok(())
}

fn showcase(a: ShowcaseArgs, argv: Vec<String>) -> CliResult<()> {
    if a.jobs == Some(0) {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    let doc = load(&a.config)?;
    let study = Study::from_config(&doc)?;
    let runs = run_showcase(&study, a.fault, a.clear_ms, a.jobs)?;
    let dir = output_dir(&doc, a.out)?;
    let mut manifest = RunManifest::start(&doc, argv);
    for (label, r) in &runs {
        let name = format!("showcase_{}_{label}_{}ms.csv", a.fault.label(), a.clear_ms);
        write_file(&dir, &name, &mut manifest, |w| write_showcase_csv(r, w))?;
        println!("{label} {}", r.verdict.label());
    }
    manifest.finish(&dir)?;
    Ok(())
}
