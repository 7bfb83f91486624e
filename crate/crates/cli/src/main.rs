use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use coordlab::agents::llm::LlmConfig;
use coordlab::agents::synthetic::SyntheticAgentParams;
use coordlab::fixture::SyntheticPoolParams;
use coordlab::harness::{
    all_reference_names, cmd_analyze, cmd_fixture_build, cmd_fixture_synth, cmd_run, cmd_score, parse_date,
    BackendConfig, ExperimentConfig, HarnessError,
};
use serde_json::json;

/// Coordination-layer forecasting experiments.
#[derive(Parser)]
#[command(name = "coordlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or synthesize market fixtures.
    #[command(subcommand)]
    Fixture(FixtureCommand),
    /// Run every (spec, market) cell not already traced.
    Run(RunArgs),
    /// Score traces into a leaderboard and Murphy reports.
    Score {
        /// Run directory holding manifest.json and traces/.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        fixture: PathBuf,
        /// Defaults to <run>/score.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pairwise tests, power, frontier and disagreements.
    Analyze {
        /// Directory written by `score`.
        #[arg(long)]
        score: PathBuf,
    },
}

#[derive(Subcommand)]
enum FixtureCommand {
    /// Filter a market pool and draw a stratified fixture.
    Build {
        #[arg(long)]
        pool: PathBuf,
        /// Training cutoff, YYYY-MM-DD.
        #[arg(long)]
        cutoff: String,
        #[arg(long, default_value_t = 100)]
        target: usize,
        #[arg(long)]
        seed: u64,
        /// Accept categories whose baseline deciles cannot be balanced.
        #[arg(long)]
        force_uneven: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic market pool.
    Synth {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long)]
        seed: u64,
        /// Omit markets the filters would drop.
        #[arg(long)]
        clean: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Synthetic,
    Llm,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config (TOML). Other flags are ignored when given.
    #[arg(long, conflicts_with_all = ["fixture", "seed", "out"])]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    fixture: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    seed: Option<u64>,
    #[arg(long, required_unless_present = "config")]
    out: Option<PathBuf>,
    /// Comma-separated reference names or spec file paths.
    #[arg(long, value_delimiter = ',')]
    specs: Vec<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value = "synthetic")]
    backend: BackendKind,
    /// TOML file with the backend's parameters.
    #[arg(long)]
    backend_params: Option<PathBuf>,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn experiment(args: RunArgs) -> Result<ExperimentConfig, HarnessError> {
    if let Some(path) = &args.config {
        return ExperimentConfig::from_toml_file(path);
    }
    let (Some(fixture), Some(seed), Some(out)) = (args.fixture, args.seed, args.out) else {
        return Err(HarnessError::Config("--fixture, --seed and --out are required".into()));
    };
    let mut config = ExperimentConfig::new(fixture, out, seed);
    config.specs = if args.specs.is_empty() {
        all_reference_names()
    } else {
        args.specs
    };
    if let Some(w) = args.workers {
        config.workers = w;
    }
    config.backend = match (args.backend, &args.backend_params) {
        (BackendKind::Synthetic, None) => BackendConfig::Synthetic(SyntheticAgentParams::default()),
        (BackendKind::Synthetic, Some(p)) => BackendConfig::Synthetic(read_toml(p)?),
        (BackendKind::Llm, None) => BackendConfig::Llm(LlmConfig::default()),
        (BackendKind::Llm, Some(p)) => BackendConfig::Llm(read_toml(p)?),
    };
    Ok(config)
}

fn execute(cli: Cli) -> Result<serde_json::Value, HarnessError> {
    let value = match cli.command {
        Command::Fixture(FixtureCommand::Build {
            pool,
            cutoff,
            target,
            seed,
            force_uneven,
            out,
        }) => {
            let summary = cmd_fixture_build(&pool, parse_date(&cutoff)?, target, seed, force_uneven, &out)?;
            json!(summary)
        }
        Command::Fixture(FixtureCommand::Synth { n, seed, clean, out }) => {
            let params = if clean {
                SyntheticPoolParams::clean(n)
            } else {
                SyntheticPoolParams {
                    n_markets: n,
                    ..Default::default()
                }
            };
            json!({ "markets": cmd_fixture_synth(&params, seed, &out)? })
        }
        Command::Run(args) => json!(cmd_run(&experiment(args)?)?),
        Command::Score { run, fixture, out } => {
            let out = out.unwrap_or_else(|| run.join("score"));
            let rows = cmd_score(&run, &fixture, &out)?;
            json!({ "out": out, "leaderboard": rows })
        }
        Command::Analyze { score } => {
            let report = cmd_analyze(&score)?;
            json!({ "pairs": report.pairs.len(), "n_common": report.n_common, "frontier": report.frontier })
        }
    };
    Ok(value)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": "usage", "message": e.to_string().trim_end() }));
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(value) => {
            println!("{}", serde_json::to_string_pretty(&value).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
