mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lowshot::benchmark::ReportFormat;
use lowshot::repr::RegularizerKind;

use crate::commands::Ctx;
use crate::config::RunConfigFile;

#[derive(Parser)]
#[command(name = "lowshot", version, about = "Low-shot learning experiments on feature vectors")]
struct Cli {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overwrite outputs made from a different configuration.
    #[arg(long, global = true)]
    force: bool,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "lowshot-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world: raw train/test stores and the class split.
    Synth,
    /// Train the feature extractor and base classifier on the base classes.
    TrainRepr {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_parser = parse_regularizer)]
        regularizer: Option<RegularizerKind>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Write feature stores of φ(x) for the raw train and test stores.
    Extract {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        extractor: Option<PathBuf>,
    },
    /// Cluster base classes, mine analogies and train the generator.
    HallucinatePrep {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        head: Option<PathBuf>,
    },
    /// Run the two-phase benchmark end to end; writes report.json and report.csv.
    Lowshot {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the theory suites; exits 1 on any bound violation.
    Verify,
    /// Render a report file.
    Report {
        path: PathBuf,
        #[arg(long, default_value = "table", value_parser = parse_format)]
        format: ReportFormat,
    },
}

fn parse_regularizer(s: &str) -> Result<RegularizerKind, String> {
    s.parse().map_err(|e: lowshot::Error| e.to_string())
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: lowshot::Error| e.to_string())
}

#[derive(Debug)]
pub enum Failure {
    /// Bad config, flags or a refused overwrite: exit 2.
    Config(String),
    /// Anything that went wrong while running: exit 1.
    Runtime(String),
}

impl From<lowshot::Error> for Failure {
    fn from(e: lowshot::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl Failure {
    fn report(&self) -> ExitCode {
        let (kind, message, code) = match self {
            Failure::Config(m) => ("config", m, 2),
            Failure::Runtime(m) => ("runtime", m, 1),
        };
        eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
        ExitCode::from(code)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Failure::Config("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    if let Command::Report { path, format } = &cli.command {
        return commands::report(path, *format);
    }
    let config = RunConfigFile::load(cli.config.as_deref())?.with_seed(cli.seed);
    config.validate()?;
    let ctx = Ctx {
        config,
        out: cli.out,
        force: cli.force,
    };
    match &cli.command {
        Command::Synth => commands::synth(&ctx),
        Command::TrainRepr { data, regularizer, lambda } => {
            commands::train_repr(&ctx, data.as_deref(), *regularizer, *lambda)
        }
        Command::Extract { data, extractor } => commands::extract(&ctx, data.as_deref(), extractor.as_deref()),
        Command::HallucinatePrep { data, features, head } => {
            commands::hallucinate_prep(&ctx, data.as_deref(), features.as_deref(), head.as_deref())
        }
        Command::Lowshot { data } => commands::lowshot(&ctx, data.as_deref()),
        Command::Verify => commands::verify(&ctx),
        Command::Report { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}
