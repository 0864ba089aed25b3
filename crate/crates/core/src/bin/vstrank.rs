//! Command-line front end: `vstrank {stats,summarize,rank,report,run,synth}`.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use vstrank::client::{BackendSpec, MalformedFormat, MockBehavior, RemoteConfig};
use vstrank::metrics::ScoringMode;
use vstrank::prompting::StrategyId;
use vstrank::report::emit_report;
use vstrank::runner::{Experiment, RunError, SummaryStore};
use vstrank::synthetic::{generate, write_dataset, SyntheticSpec};
use vstrank::ExperimentConfig;

/// Writes to stdout, ignoring errors such as a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

macro_rules! say_raw {
    ($($arg:tt)*) => {{
        let _ = write!(std::io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(
    name = "vstrank",
    version,
    about = "Evaluate vision-language models as candidate rerankers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample users and write dataset statistics.
    Stats(Overrides),
    /// Run only the visual-summary phase.
    Summarize(Overrides),
    /// Run summary and ranking phases and write raw outputs and scores.
    Rank(Overrides),
    /// Rebuild the report from raw outputs already on disk.
    Report(Overrides),
    /// Everything end to end.
    Run(Overrides),
    /// Write a synthetic dataset and a matching mock-backed config.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MockKind {
    Oracle,
    Random,
    Hallucinate,
    Malformed,
}

#[derive(Args)]
struct Overrides {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Strategies to evaluate; repeat or comma-separate.
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<StrategyId>,
    /// Use a chat-completions endpoint at this base URL.
    #[arg(long, conflicts_with = "mock")]
    backend_url: Option<String>,
    /// Use a mock backend instead of the configured one.
    #[arg(long, value_enum)]
    mock: Option<MockKind>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    /// Sampling seed for users and negatives.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    scoring_mode: Option<ScoringMode>,
}

fn parse_mode(s: &str) -> Result<ScoringMode, String> {
    s.parse()
}

#[derive(Args)]
struct SynthArgs {
    /// Directory for the dataset and `experiment.toml`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    users: usize,
    #[arg(long, default_value_t = 1500)]
    items: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl Overrides {
    fn load(&self) -> Result<ExperimentConfig, RunError> {
        let mut c = ExperimentConfig::load(&self.config)?;
        if !self.strategy.is_empty() {
            c.strategies = self.strategy.clone();
        }
        if let Some(url) = &self.backend_url {
            let api_key_env = match &c.backend {
                BackendSpec::Remote(r) => r.api_key_env.clone(),
                BackendSpec::Mock { .. } => None,
            };
            c.backend = BackendSpec::Remote(RemoteConfig {
                api_key_env,
                ..RemoteConfig::new(url.clone())
            });
        }
        if let Some(kind) = self.mock {
            let seed = c.sample.seed;
            c.backend = BackendSpec::mock(match kind {
                MockKind::Oracle => MockBehavior::Oracle,
                MockKind::Random => MockBehavior::UniformRandom { seed },
                MockKind::Hallucinate => MockBehavior::Hallucinate { rate: 0.2, seed },
                MockKind::Malformed => MockBehavior::Malformed {
                    format: MalformedFormat::Mixed,
                    seed,
                },
            });
        }
        if let Some(m) = &self.model {
            c.model = m.clone();
        }
        if let Some(r) = self.runs {
            c.runs = r;
            c.run_seeds.clear();
        }
        if let Some(s) = self.seed {
            c.sample.seed = s;
        }
        if !self.k.is_empty() {
            c.k = self.k.clone();
        }
        if let Some(d) = &self.cache_dir {
            c.cache_dir = Some(d.clone());
        }
        if let Some(o) = &self.out {
            c.output_dir = o.clone();
        }
        if let Some(m) = self.scoring_mode {
            c.scoring_mode = m;
        }
        Ok(c)
    }
}

fn report_stage(e: std::io::Error, dir: &std::path::Path) -> RunError {
    RunError::Io {
        stage: "report",
        path: dir.to_path_buf(),
        source: e,
    }
}

fn execute(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Stats(o) => {
            let exp = Experiment::new(o.load()?)?;
            let prepared = exp.prepare()?;
            let path = exp.write_stats(&prepared.stats)?;
            let s = &prepared.stats;
            say!(
                "users={} items={} interactions={} sparsity={:.2}% dropped={}",
                s.users,
                s.items,
                s.interactions,
                s.sparsity_pct(),
                prepared.dropped_users
            );
            say!("wrote {}", path.display());
            Ok(())
        }
        Command::Summarize(o) => {
            let exp = Experiment::new(o.load()?)?;
            let prepared = exp.prepare()?;
            let store = exp.run_summary_phase(&prepared);
            let path = exp.write_summaries(&store)?;
            say!(
                "summary requests={} failures={}",
                store.requests,
                store.failures()
            );
            say!("wrote {}", path.display());
            Ok(())
        }
        Command::Rank(o) => {
            let exp = Experiment::new(o.load()?)?;
            exp.write_resolved_config()?;
            let prepared = exp.prepare()?;
            exp.write_stats(&prepared.stats)?;
            let store = exp.run_summary_phase(&prepared);
            if exp.config().has_summary_phase() {
                exp.write_summaries(&store)?;
            }
            let outputs = exp.run_all_rankings(&prepared, &store);
            let raw = exp.write_raw(&prepared, &outputs)?;
            let scores = exp.score(&prepared, &outputs);
            let path = exp.write_scores(&scores)?;
            say!("wrote {} and {}", raw.display(), path.display());
            Ok(())
        }
        Command::Report(o) => {
            let exp = Experiment::new(o.load()?)?;
            let prepared = exp.prepare()?;
            let outputs = exp.load_raw(&prepared)?;
            let scores = exp.score(&prepared, &outputs);
            exp.write_scores(&scores)?;
            let report = exp.aggregate(&prepared, &SummaryStore::default(), &outputs, &scores);
            let dir = &exp.config().output_dir;
            let (csv, md) = emit_report(&report, dir).map_err(|e| report_stage(e, dir))?;
            say_raw!("{}", report.to_markdown());
            say!("wrote {} and {}", csv.display(), md.display());
            Ok(())
        }
        Command::Run(o) => {
            let exp = Experiment::new(o.load()?)?;
            let (report, files) = exp.run()?;
            say_raw!("{}", report.to_markdown());
            say!(
                "wrote {} and {}",
                files.report_csv.display(),
                files.report_md.display()
            );
            Ok(())
        }
    }
}

fn synth(a: SynthArgs) -> Result<(), RunError> {
    let data = generate(&SyntheticSpec {
        users: a.users,
        items: a.items,
        seed: a.seed,
        ..SyntheticSpec::default()
    });
    let files = write_dataset(&a.out, &data).map_err(|e| RunError::Io {
        stage: "synth",
        path: a.out.clone(),
        source: e,
    })?;
    let config = format!(
        r#"strategies = ["TitleOnly", "MM", "VST"]
model = "mock-lvlm"
runs = 3
cache_dir = "cache"
output_dir = "out"

[dataset]
name = "synthetic"
interactions = "{}"
catalog = "{}"

[sample]
users = {}
seed = {}

[backend]
kind = "mock"
behavior = {{ type = "uniform_random", seed = {} }}
"#,
        files.interactions.file_name().unwrap().to_string_lossy(),
        files.catalog.file_name().unwrap().to_string_lossy(),
        a.users,
        a.seed,
        a.seed
    );
    let cfg_path = a.out.join("experiment.toml");
    std::fs::write(&cfg_path, config).map_err(|e| RunError::Io {
        stage: "synth",
        path: cfg_path.clone(),
        source: e,
    })?;
    say!("wrote {}", cfg_path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut shown = e.to_string();
            eprintln!("error: {shown}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                let msg = s.to_string();
                if !shown.contains(&msg) {
                    eprintln!("  caused by: {msg}");
                    shown = msg;
                }
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
