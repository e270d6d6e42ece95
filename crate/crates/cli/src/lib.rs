//! Subcommands of the `balaf` binary.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 when an
//! experiment grid or a verification run completed with failures.

pub mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use balaf_core::eval::{prepare_scenario, run_experiment, DataSource, ExperimentDataset, ExperimentReport, ExperimentSettings};
use balaf_core::ingest::SynthSpec;
use balaf_core::scenario::{Bundle, ScenarioKind, ScenarioSpec, GENERATOR_SIGMA2};
use balaf_core::verify::{replay_fixture, run_verify, VerifyConfig};
use balaf_core::SparseVector;
use balaf_service::{AppState, ServiceConfig};

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] balaf_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How a subcommand ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Ran to the end with failed cells or failed checks.
    Partial,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::Partial => 2,
        }
    }
}

pub fn exit_code(result: &Result<Outcome, CliError>) -> u8 {
    match result {
        Ok(o) => o.exit_code(),
        Err(_) => 1,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Flag overrides for `simulate`.
#[derive(Debug, Clone, Default)]
pub struct SimulateArgs {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

pub fn simulate(args: &SimulateArgs) -> Result<Outcome, CliError> {
    let config = RunConfig::load(&args.config)?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let experiment = config.to_experiment(base)?;
    let out = args
        .out
        .clone()
        .or_else(|| config.out.as_ref().map(|o| base.join(o)))
        .ok_or_else(|| CliError::Config("no output directory: set \"out\" or pass --out".into()))?;
    let jobs = args.jobs.or(config.jobs);
    if jobs == Some(0) {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    fs::create_dir_all(out.join("traces")).map_err(|e| CliError::Config(format!("{}: {e}", out.display())))?;
    let report = run_experiment(&experiment, jobs)?;
    write_report(&report, &out)?;
    for (key, err) in report.failures() {
        log::error!("{} {} {} {} seed {}: {err}", key.dataset, key.scenario, key.pct, key.strategy, key.seed);
    }
    let failed = report.failures().count();
    println!(
        "{} cells, {} failed; report in {}",
        report.cells.len(),
        failed,
        out.join("report.csv").display()
    );
    Ok(if report.all_succeeded() { Outcome::Success } else { Outcome::Partial })
}

/// Writes `report.csv`, `summary.json`, `curves.jsonl` and one trace file
/// per successful cell.
pub fn write_report(report: &ExperimentReport, out: &Path) -> Result<(), CliError> {
    let mut csv = create(&out.join("report.csv"))?;
    report.write_csv(&mut csv)?;
    csv.flush()?;
    let mut summary = create(&out.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut summary, &report.summary_json()).map_err(balaf_core::Error::from)?;
    summary.write_all(b"\n")?;
    summary.flush()?;
    let mut curves = create(&out.join("curves.jsonl"))?;
    report.write_curves(&mut curves)?;
    curves.flush()?;
    let traces = out.join("traces");
    fs::create_dir_all(&traces)?;
    for cell in &report.cells {
        if let Ok(run) = &cell.result {
            let k = &cell.key;
            let name = format!("{}_{}_{}_{}_seed{}.jsonl", k.dataset, k.scenario, k.pct, k.strategy, k.seed);
            let mut w = create(&traces.join(name))?;
            run.trace.write_jsonl(&mut w, false)?;
            w.flush()?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct VerifyArgs {
    pub config: VerifyConfig,
    /// Where failing instances are dumped.
    pub fixtures: PathBuf,
}

pub fn verify(args: &VerifyArgs) -> Result<Outcome, CliError> {
    let report = run_verify(&args.config)?;
    println!(
        "{} instances; max identity error {:.3e}; min greedy/optimal ratio avg {:.4}, worst {:.4}; {} failed",
        report.instances,
        report.max_identity_error,
        report.min_ratio_avg,
        report.min_ratio_worst,
        report.failed.len()
    );
    if report.passed() {
        return Ok(Outcome::Success);
    }
    fs::create_dir_all(&args.fixtures)?;
    for failure in &report.failed {
        let path = args.fixtures.join(format!("instance-{}.json", failure.instance.index));
        let json = serde_json::to_string_pretty(failure).map_err(balaf_core::Error::from)?;
        fs::write(&path, json)?;
        for f in &failure.failures {
            println!("instance {}: {:?}: {}", failure.instance.index, f.check, f.detail);
        }
        println!("fixture written to {}", path.display());
    }
    Ok(Outcome::Partial)
}

/// Re-checks a dumped fixture; `Partial` when the failure reproduces.
pub fn verify_replay(path: &Path) -> Result<Outcome, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let failures = replay_fixture(&text)?;
    for f in &failures {
        println!("{:?}: {}", f.check, f.detail);
    }
    println!("{} failed checks", failures.len());
    Ok(if failures.is_empty() { Outcome::Success } else { Outcome::Partial })
}

#[derive(Debug, Clone)]
pub struct ServeArgs {
    pub bind: String,
    pub bundles: Vec<PathBuf>,
    pub state_dir: PathBuf,
    pub static_dir: Option<PathBuf>,
}

/// Serves until interrupted. Prints `listening on <addr>` once bound.
pub fn serve(args: &ServeArgs) -> Result<Outcome, CliError> {
    if args.bundles.is_empty() {
        return Err(CliError::Config("at least one --bundle is required".into()));
    }
    if let Some(dir) = &args.static_dir {
        if !dir.is_dir() {
            return Err(CliError::Config(format!("{}: not a directory", dir.display())));
        }
    }
    let state = AppState::new(ServiceConfig {
        bundles: args.bundles.clone(),
        state_dir: Some(args.state_dir.clone()),
        static_dir: args.static_dir.clone(),
    })
    .map_err(|e| CliError::Config(format!("loading bundle: {e}")))?;
    let addr: SocketAddr =
        args.bind.parse().map_err(|e| CliError::Config(format!("bind address {}: {e}", args.bind)))?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Config(format!("binding {addr}: {e}")))?;
        println!("listening on {}", listener.local_addr()?);
        std::io::stdout().flush()?;
        balaf_service::serve(listener, Arc::new(state)).await?;
        Ok(Outcome::Success)
    })
}

/// Rows for `gen-scenario`.
#[derive(Debug, Clone)]
pub enum ScenarioSource {
    Synth(SynthSpec),
    Files { target: PathBuf, redundant: Option<PathBuf> },
}

/// The synthetic corpus used when no data is given.
pub fn default_synth() -> SynthSpec {
    SynthSpec { n: 1000, n_redundant: 600, dims: 50, separation: 0.5, redundant_classes: 2, doc_length: 12, seed: 0 }
}

#[derive(Debug, Clone)]
pub struct GenScenarioArgs {
    pub kind: ScenarioKind,
    pub pct: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub name: String,
    pub source: ScenarioSource,
    pub pool_size: usize,
    pub test_size: usize,
    pub generator_sigma2: f64,
}

impl GenScenarioArgs {
    pub fn new(kind: ScenarioKind, pct: f64, out: PathBuf) -> Self {
        let d = ExperimentSettings::default();
        GenScenarioArgs {
            kind,
            pct,
            seed: 0,
            out,
            name: "scenario".into(),
            source: ScenarioSource::Synth(default_synth()),
            pool_size: d.pool_size,
            test_size: d.test_size,
            generator_sigma2: GENERATOR_SIGMA2,
        }
    }
}

/// Readable rendering of count features: `w3 w3 w17`.
fn display_text(features: &SparseVector) -> String {
    let mut words = Vec::new();
    for (i, v) in features.iter() {
        if v.fract() == 0.0 && (1.0..=20.0).contains(&v) {
            words.extend(std::iter::repeat_n(format!("w{i}"), v as usize));
        } else {
            words.push(format!("w{i}:{v}"));
        }
    }
    words.join(" ")
}

/// Builds the pool and labeler behavior of one grid point, exactly as
/// `simulate` would for the same seed, and writes it as a bundle.
pub fn gen_scenario(args: &GenScenarioArgs) -> Result<Outcome, CliError> {
    if !(0.0..=1.0).contains(&args.pct) {
        return Err(CliError::Config(format!("--pct {} outside [0, 1]", args.pct)));
    }
    let source = match &args.source {
        ScenarioSource::Synth(spec) => DataSource::Synth(*spec),
        ScenarioSource::Files { target, redundant } => DataSource::Fixed {
            target: Arc::new(config::read_dataset(target)?),
            redundant: redundant.as_deref().map(config::read_dataset).transpose()?.map(Arc::new),
        },
    };
    let settings = ExperimentSettings {
        pool_size: args.pool_size,
        test_size: args.test_size,
        generator_sigma2: args.generator_sigma2,
        ..ExperimentSettings::default()
    };
    settings.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let dataset = ExperimentDataset { name: args.name.clone(), source };
    let prepared = prepare_scenario(&dataset, args.kind, args.pct, args.seed, &settings)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let spec = ScenarioSpec { kind: args.kind, pct: args.pct, generator_sigma2: args.generator_sigma2, seed: args.seed };
    let mut bundle = Bundle::from_scenario(&args.name, Some(spec), &prepared.scenario);
    bundle.manifest.display_text = bundle.data.features.iter().map(display_text).collect();
    bundle.write(&args.out)?;
    println!(
        "{} scenario, {} examples, {} abstaining, written to {}",
        args.kind,
        bundle.data.len(),
        prepared.scenario.truth.abstention_pattern().count(),
        args.out.display()
    );
    Ok(Outcome::Success)
}
