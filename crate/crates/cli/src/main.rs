//! fso-sim: run, validate and inspect fractal social organization scenarios.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fso_core::classification::compare_systems;
use fso_core::export::{hierarchy_dot, son_space_csv, son_space_dot};
use fso_core::hierarchy::{validate, NodeId, Severity};
use fso_core::roleflow::Protocol;
use fso_core::simulation::{run, Scenario};
use fso_core::sonspace::{count, enumerate, CapabilityMatrix};

/// Most levels a hierarchy may have.
const MAX_LEVELS: usize = 16;

#[derive(Parser)]
#[command(name = "fso-sim", version, about = "Deterministic fractal social organization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more scenarios and write CSV/JSON metrics
    Run(RunArgs),
    /// Check a scenario without running it; writes nothing
    Validate(ScenarioArg),
    /// Count and list the SONs a protocol admits over the hierarchy
    SonSpace(SonSpaceArgs),
    /// Render the hierarchy or a SON space as Graphviz DOT
    ExportDot(ExportArgs),
    /// Compare two nodes feature by feature, as JSON
    Compare(CompareArgs),
}

#[derive(Args)]
struct ScenarioArg {
    /// Scenario file (JSON)
    #[arg(long = "scenario", value_name = "FILE")]
    flag: Option<PathBuf>,
    #[arg(value_name = "SCENARIO", conflicts_with = "flag")]
    positional: Option<PathBuf>,
}

impl ScenarioArg {
    fn path(&self) -> Result<&Path> {
        match (&self.flag, &self.positional) {
            (Some(p), _) | (None, Some(p)) => Ok(p),
            (None, None) => Err(BadUsage("a scenario file is required".into()).into()),
        }
    }
}

#[derive(Args)]
struct Overrides {
    /// Override the scenario's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the scenario's horizon (ticks)
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    horizon: Option<u64>,
    /// Disable the knowledge ledger: no scores, no permanent nodes
    #[arg(long)]
    memoryless: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario files; repeat to run several
    #[arg(long = "scenario", value_name = "FILE")]
    scenarios: Vec<PathBuf>,
    #[arg(value_name = "SCENARIO")]
    positional: Vec<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Output directory
    #[arg(long, env = "FSO_SIM_OUT", default_value = "out")]
    out: PathBuf,
    /// Also write scores.csv
    #[arg(long)]
    dump_scores: bool,
    /// Scenarios run concurrently
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: u32,
}

#[derive(Args)]
struct SonSpaceArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    /// Protocol id; defaults to the first protocol
    #[arg(long)]
    protocol: Option<String>,
    /// Output directory for son_space.csv
    #[arg(long, env = "FSO_SIM_OUT", default_value = "out")]
    out: PathBuf,
    /// Also write son_space.dot
    #[arg(long)]
    dot: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum What {
    Hierarchy,
    SonSpace,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    #[arg(long, value_enum, default_value = "hierarchy")]
    what: What,
    /// Protocol for `--what son-space`; defaults to the first protocol
    #[arg(long)]
    protocol: Option<String>,
    /// Write to this file instead of standard output
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    #[arg(long)]
    a: String,
    #[arg(long)]
    b: String,
    /// Containment levels to descend
    #[arg(long, default_value_t = 1)]
    depth: usize,
}

/// Input that fails validation; exits with status 2.
#[derive(Debug)]
struct Invalid(String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "validation failed: {}", self.0)
    }
}

impl std::error::Error for Invalid {}

/// Misuse not caught by the argument parser; exits with status 1.
#[derive(Debug)]
struct BadUsage(String);

impl fmt::Display for BadUsage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BadUsage {}

fn load(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path)
        .map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
    let scenario = Scenario::from_json(&text).map_err(|e| Invalid(e.to_string()))?;
    let levels = scenario.hierarchy().levels().len();
    if levels > MAX_LEVELS {
        return Err(Invalid(format!("hierarchy has {levels} levels; at most {MAX_LEVELS} are supported")).into());
    }
    Ok(scenario)
}

fn load_with(path: &Path, o: &Overrides) -> Result<Scenario> {
    let mut s = load(path)?;
    if let Some(seed) = o.seed {
        s = s.with_seed(seed);
    }
    if let Some(h) = o.horizon {
        s = s.with_horizon(h)?;
    }
    if o.memoryless {
        s = s.memoryless();
    }
    Ok(s)
}

fn protocol<'a>(s: &'a Scenario, id: Option<&str>) -> Result<&'a Protocol> {
    match id {
        Some(id) => s
            .protocol(id)
            .ok_or_else(|| BadUsage(format!("no protocol `{id}` in scenario")).into()),
        None => s
            .protocols()
            .values()
            .next()
            .ok_or_else(|| Invalid("scenario defines no protocols".into()).into()),
    }
}

fn son_space(s: &Scenario, p: &Protocol) -> Result<(u128, Vec<fso_core::sonspace::Assignment>)> {
    let m = CapabilityMatrix::from_hierarchy(s.hierarchy(), &p.required_roles);
    let n = count(&m, p)?;
    let sons = enumerate(&m, p)?;
    Ok((n, sons))
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let paths: Vec<PathBuf> = args.scenarios.into_iter().chain(args.positional).collect();
    if paths.is_empty() {
        bail!(BadUsage("a scenario file is required".into()));
    }
    let scenarios = paths
        .iter()
        .map(|p| load_with(p, &args.overrides))
        .collect::<Result<Vec<_>>>()?;

    let multi = scenarios.len() > 1;
    let dirs: Vec<PathBuf> = paths
        .iter()
        .map(|p| {
            if multi {
                let stem = p.file_stem().map_or("scenario".into(), |s| s.to_string_lossy());
                args.out.join(stem.as_ref())
            } else {
                args.out.clone()
            }
        })
        .collect();

    let jobs = args.jobs as usize;
    let mut results = Vec::with_capacity(scenarios.len());
    for (chunk, dir_chunk) in scenarios.chunks(jobs).zip(dirs.chunks(jobs)) {
        let batch: Vec<Result<String>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .zip(dir_chunk)
                .map(|(s, dir)| scope.spawn(move || run_one(s, dir, args.dump_scores)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("run thread panicked"))
                .collect()
        });
        results.extend(batch);
    }
    for r in results {
        println!("{}", r?);
    }
    Ok(())
}

fn run_one(s: &Scenario, dir: &Path, dump_scores: bool) -> Result<String> {
    let report = run(s).with_context(|| format!("running `{}`", s.name()))?;
    let files = report
        .write_to(dir, dump_scores)
        .with_context(|| format!("writing {}", dir.display()))?;
    let m = &report.summary;
    Ok(format!(
        "{}: {} ticks, {} SONs formed ({} ok, {} starved, {} disrupted), {} exceptions, {} permanent nodes, energy {}/{} spent -> {} [{}]",
        m.scenario,
        m.horizon,
        m.sons_formed,
        m.sons_succeeded,
        m.sons_starved,
        m.sons_disrupted,
        m.exceptions,
        m.permanentifications.len(),
        m.budget_spent,
        m.budget_initial,
        dir.display(),
        files.join(", "),
    ))
}

fn cmd_validate(args: ScenarioArg) -> Result<()> {
    let s = load(args.path()?)?;
    let h = s.hierarchy();
    for w in validate(h).iter().filter(|v| v.severity == Severity::Warning) {
        println!("warning: {}: {}", w.subject, w.message);
    }
    println!(
        "ok: {} ({} levels, {} nodes, {} protocols, {} events)",
        s.name(),
        h.levels().len(),
        h.len(),
        s.protocols().len(),
        s.events().len()
    );
    Ok(())
}

fn cmd_son_space(args: SonSpaceArgs) -> Result<()> {
    let s = load(args.scenario.path()?)?;
    let p = protocol(&s, args.protocol.as_deref())?;
    let (n, sons) = son_space(&s, p)?;
    println!("protocol: {}", p.id);
    println!("count: {n}");
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("son_space.csv"), son_space_csv(p, &sons))?;
    if args.dot {
        fs::write(args.out.join("son_space.dot"), son_space_dot(p, &sons))?;
    }
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let s = load(args.scenario.path()?)?;
    let dot = match args.what {
        What::Hierarchy => hierarchy_dot(s.hierarchy()),
        What::SonSpace => {
            let p = protocol(&s, args.protocol.as_deref())?;
            son_space_dot(p, &son_space(&s, p)?.1)
        }
    };
    match args.output {
        Some(path) => fs::write(&path, dot).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{dot}"),
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let s = load(args.scenario.path()?)?;
    let h = s.hierarchy();
    let (a, b) = (NodeId::new(args.a), NodeId::new(args.b));
    for id in [&a, &b] {
        if !h.contains(id) {
            bail!(BadUsage(format!("no node `{id}` in scenario")));
        }
    }
    let report = compare_systems(h, &a, h, &b, args.depth)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Validate(a) => cmd_validate(a),
        Command::SonSpace(a) => cmd_son_space(a),
        Command::ExportDot(a) => cmd_export(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
