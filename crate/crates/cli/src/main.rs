use std::path::PathBuf;
use std::process::ExitCode;

use balaf_cli::{
    exit_code, gen_scenario, serve, simulate, verify, verify_replay, GenScenarioArgs, ScenarioSource, ServeArgs,
    SimulateArgs, VerifyArgs,
};
use balaf_core::ingest::SynthSpec;
use balaf_core::scenario::{ScenarioKind, GENERATOR_SIGMA2};
use balaf_core::verify::VerifyConfig;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "balaf", version, about = "Active learning with abstention feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment grid from a JSON config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; overrides the config.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Check the greedy guarantees on random small instances by brute force.
    Verify {
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 4)]
        max_pool: usize,
        #[arg(long, default_value_t = 3)]
        max_budget: usize,
        #[arg(long, default_value_t = 3)]
        max_alphabet: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for failing-instance fixtures.
        #[arg(long, default_value = "verify-failures")]
        fixtures: PathBuf,
        /// Re-check a dumped fixture instead of generating instances.
        #[arg(long, conflicts_with_all = ["instances", "max_pool", "max_budget", "max_alphabet", "seed"])]
        replay: Option<PathBuf>,
    },
    /// Serve the session API over one or more scenario bundles.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long = "bundle", required = true)]
        bundles: Vec<PathBuf>,
        #[arg(long, default_value = "balaf-state")]
        state_dir: PathBuf,
        /// Built console bundle to serve at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Generate a scenario bundle.
    GenScenario {
        #[arg(long)]
        kind: ScenarioKind,
        #[arg(long)]
        pct: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "scenario")]
        name: String,
        /// Binary svmlight dataset; synthetic data is used when absent.
        #[arg(long, conflicts_with = "synth")]
        dataset: Option<PathBuf>,
        /// Unrelated-class rows for the unrelated scenario.
        #[arg(long, requires = "dataset")]
        redundant: Option<PathBuf>,
        /// JSON synthetic dataset spec.
        #[arg(long)]
        synth: Option<PathBuf>,
        #[arg(long, default_value_t = 600)]
        pool_size: usize,
        #[arg(long, default_value_t = 300)]
        test_size: usize,
        #[arg(long, default_value_t = GENERATOR_SIGMA2)]
        generator_sigma2: f64,
    },
}

fn run(cli: Cli) -> Result<balaf_cli::Outcome, balaf_cli::CliError> {
    match cli.command {
        Command::Simulate { config, out, jobs } => simulate(&SimulateArgs { config, out, jobs }),
        Command::Verify { replay: Some(path), .. } => verify_replay(&path),
        Command::Verify { instances, max_pool, max_budget, max_alphabet, seed, fixtures, replay: None } => {
            let config = VerifyConfig { instances, max_pool, max_budget, max_alphabet, seed, ..VerifyConfig::default() };
            verify(&VerifyArgs { config, fixtures })
        }
        Command::Serve { bind, bundles, state_dir, static_dir } => {
            serve(&ServeArgs { bind, bundles, state_dir, static_dir })
        }
        Command::GenScenario {
            kind,
            pct,
            out,
            seed,
            name,
            dataset,
            redundant,
            synth,
            pool_size,
            test_size,
            generator_sigma2,
        } => {
            let source = match (dataset, synth) {
                (Some(target), _) => ScenarioSource::Files { target, redundant },
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| balaf_cli::CliError::Config(format!("{}: {e}", path.display())))?;
                    let spec: SynthSpec = serde_json::from_str(&text)
                        .map_err(|e| balaf_cli::CliError::Config(format!("{}: {e}", path.display())))?;
                    ScenarioSource::Synth(spec)
                }
                (None, None) => ScenarioSource::Synth(balaf_cli::default_synth()),
            };
            let mut args = GenScenarioArgs::new(kind, pct, out);
            args.seed = seed;
            args.name = name;
            args.source = source;
            args.pool_size = pool_size;
            args.test_size = test_size;
            args.generator_sigma2 = generator_sigma2;
            gen_scenario(&args)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = run(Cli::parse());
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    ExitCode::from(exit_code(&result))
}
