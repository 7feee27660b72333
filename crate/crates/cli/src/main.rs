use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use cocolex::harness::dataset::Document;
use cocolex::harness::{
    build_document_index, format_ablation, format_report, generate_synthetic_corpus, read_report,
    run_ablation, run_experiment, ExperimentConfig,
};
use cocolex::index::{ContextIndex, Metric};
use cocolex::model::ReferenceNgramModel;
use cocolex::tokenizer::ByteTokenizer;

#[derive(Parser)]
#[command(name = "cocolex", version, about = "Copy-based decoding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset.
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run strategies over a dataset and write a JSON report.
    Run(RunArgs),
    /// Pretty-print one report, or compare several.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Build a whole-document index and save it as a snapshot.
    Index {
        /// Text files indexed as consecutive documents.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = Metric::Euclidean)]
        metric: Metric,
        #[arg(long, default_value_t = 512)]
        chunk_size: usize,
        #[arg(long, default_value_t = 256)]
        chunk_stride: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run over both metrics and passage counts 3, 6 and 10.
    Ablate(RunArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Flat `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated strategy names.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    alpha_min: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    lambda_min: Option<String>,
    #[arg(long)]
    lambda_max: Option<String>,
    #[arg(long)]
    smoothing: Option<String>,
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    knn_k: Option<String>,
    #[arg(long)]
    passages: Option<String>,
    #[arg(long)]
    rep_penalty: Option<String>,
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    max_new_tokens: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any other setting as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    extra: Vec<String>,
}

impl RunArgs {
    fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        vec![
            ("dataset", path(&self.dataset)),
            ("strategy", self.strategy.clone()),
            ("alpha", self.alpha.clone()),
            ("alpha-min", self.alpha_min.clone()),
            ("lambda", self.lambda.clone()),
            ("lambda-min", self.lambda_min.clone()),
            ("lambda-max", self.lambda_max.clone()),
            ("smoothing", self.smoothing.clone()),
            ("window", self.window.clone()),
            ("knn-k", self.knn_k.clone()),
            ("passages", self.passages.clone()),
            ("rep-penalty", self.rep_penalty.clone()),
            ("metric", self.metric.clone()),
            ("max-new-tokens", self.max_new_tokens.clone()),
            ("seed", self.seed.clone()),
            ("workers", self.workers.clone()),
            ("out", path(&self.out)),
        ]
    }

    fn to_config(&self) -> anyhow::Result<ExperimentConfig> {
        let mut config = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            config.apply_file_contents(&text)?;
        }
        for (key, value) in self.flags() {
            if let Some(value) = value {
                config.apply(key, &value)?;
            }
        }
        for kv in &self.extra {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{kv}`");
            };
            config.apply(k, v)?;
        }
        if config.dataset.as_os_str().is_empty() {
            bail!("no dataset given (use --dataset or `dataset = ...` in the config file)");
        }
        config.validate()?;
        Ok(config)
    }
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn classify(err: anyhow::Error) -> Self {
        match err.downcast_ref::<cocolex::Error>() {
            Some(e) if e.is_data_error() => Failure::Data(err),
            _ => Failure::Runtime(err),
        }
    }
}

fn check_input(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Data(anyhow::anyhow!(
            "input file {} not found",
            path.display()
        )))
    }
}

fn configure(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let config = args.to_config().map_err(Failure::Usage)?;
    check_input(&config.dataset)?;
    Ok(config)
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Generate {
            seed,
            instances,
            out,
        } => {
            if instances == 0 {
                return Err(Failure::Usage(anyhow::anyhow!(
                    "--instances must be at least 1"
                )));
            }
            generate_synthetic_corpus(seed, instances, &out)
                .map_err(|e| Failure::classify(e.into()))?;
            emit(&format!(
                "wrote {instances} instances to {}\n",
                out.display()
            ));
        }
        Command::Run(args) => {
            let config = configure(&args)?;
            let report = run_experiment(&config).map_err(|e| Failure::classify(e.into()))?;
            emit(&format_report(&report));
            if let Some(out) = &config.output {
                emit(&format!("\nreport written to {}\n", out.display()));
            }
        }
        Command::Ablate(args) => {
            let config = configure(&args)?;
            let report = run_ablation(&config, &[Metric::Euclidean, Metric::Cosine], &[3, 6, 10])
                .map_err(|e| Failure::classify(e.into()))?;
            emit(&format_ablation(&report));
        }
        Command::Report { reports } => {
            for path in &reports {
                check_input(path)?;
            }
            for path in &reports {
                let report = read_report(path).map_err(|e| {
                    Failure::classify(anyhow::Error::from(e).context(path.display().to_string()))
                })?;
                if reports.len() > 1 {
                    emit(&format!("== {}\n", path.display()));
                }
                emit(&format_report(&report));
            }
        }
        Command::Index {
            inputs,
            out,
            metric,
            chunk_size,
            chunk_stride,
            seed,
        } => {
            let mut documents = Vec::new();
            for path in &inputs {
                check_input(path)?;
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))
                    .map_err(Failure::Data)?;
                documents.push(Document {
                    doc_id: path.display().to_string(),
                    text,
                });
            }
            let model = ReferenceNgramModel::new(cocolex::model::ReferenceModelConfig {
                seed,
                ..Default::default()
            })
            .map_err(|e| Failure::Usage(e.into()))?;
            let index: ContextIndex = build_document_index(
                &model,
                &ByteTokenizer,
                &documents,
                chunk_size,
                chunk_stride,
                metric,
            )
            .map_err(|e| match e {
                cocolex::Error::InvalidChunking(_) => Failure::Usage(e.into()),
                e => Failure::classify(e.into()),
            })?;
            index.save(&out).map_err(|e| Failure::Runtime(e.into()))?;
            emit(&format!(
                "indexed {} positions (dimension {}, {metric}) into {}\n",
                index.len(),
                index.dimension(),
                out.display()
            ));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            let (code, kind, err) = match failure {
                Failure::Usage(e) => (1, "usage error", e),
                Failure::Data(e) => (2, "data error", e),
                Failure::Runtime(e) => (3, "error", e),
            };
            eprintln!("{kind}: {err:#}");
            ExitCode::from(code)
        }
    }
}
