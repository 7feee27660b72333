//! End-to-end experiments: retrieve, prompt, decode and score every
//! instance under every requested strategy.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{load_dataset, Document, Instance};
use super::prompt::{build_prompt, context_text, TEMPLATE_VERSION};
use crate::decoding::{decode, DecodeInput, Strategy, StrategyConfig};
use crate::error::{Error, Result};
use crate::evaluation::{
    aggregate, context_coverage, rouge_l_f1, significance, timing_report, InstanceScore,
    MetricReport, StrategyAggregate, TimingEntry,
};
use crate::index::{chunk_spans, ContextIndex, DocumentChunk, Metric};
use crate::model::{LanguageModel, ReferenceModelConfig, ReferenceNgramModel};
use crate::prob::TokenId;
use crate::retrieval::{chunk_document, terms, Bm25Index, Bm25Params, Passage};
use crate::tokenizer::{ByteTokenizer, Tokenizer};

/// What ROUGE-L and context coverage count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreUnits {
    /// The tokenizer's tokens.
    #[default]
    Tokens,
    /// Case-folded alphanumeric words.
    Words,
}

impl std::str::FromStr for ScoreUnits {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "tokens" => Ok(Self::Tokens),
            "words" => Ok(Self::Words),
            other => Err(Error::InvalidConfig(format!(
                "unknown score units `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub strategies: Vec<Strategy>,
    /// Shared hyperparameters; `strategy` is replaced per run.
    pub decoding: StrategyConfig,
    /// Passages placed in the prompt.
    pub passages: usize,
    pub passage_words: usize,
    pub passage_overlap: usize,
    pub bm25: Bm25Params,
    /// Whole-document chunking for `cocolex_plus`.
    pub doc_chunk_size: usize,
    pub doc_chunk_stride: usize,
    pub model: ReferenceModelConfig,
    pub coverage_n: usize,
    pub score_units: ScoreUnits,
    pub prompt_budget: usize,
    pub eos: Option<TokenId>,
    #[serde(skip)]
    pub workers: usize,
    #[serde(skip)]
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            strategies: vec![Strategy::Regular, Strategy::Cocolex],
            decoding: StrategyConfig::default(),
            passages: crate::retrieval::DEFAULT_TOP_K,
            passage_words: crate::retrieval::DEFAULT_PASSAGE_WORDS,
            passage_overlap: crate::retrieval::DEFAULT_PASSAGE_OVERLAP,
            bm25: Bm25Params::default(),
            doc_chunk_size: 512,
            doc_chunk_stride: 256,
            model: ReferenceModelConfig::default(),
            coverage_n: crate::evaluation::DEFAULT_COVERAGE_N,
            score_units: ScoreUnits::Tokens,
            prompt_budget: 32_768,
            eos: Some(b'\n' as TokenId),
            workers: 1,
            output: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value `{value}` for `{key}`")))
}

impl ExperimentConfig {
    /// Applies one `key = value` setting. Keys are the CLI flag names without
    /// leading dashes.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let d = &mut self.decoding;
        match key.trim().trim_start_matches('-') {
            "dataset" => self.dataset = PathBuf::from(value.trim()),
            "out" => self.output = Some(PathBuf::from(value.trim())),
            "strategy" | "strategies" => {
                self.strategies = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?;
            }
            "alpha" => d.alpha = parse(key, value)?,
            "alpha-min" => d.alpha_min = parse(key, value)?,
            "lambda" => d.static_lambda = parse(key, value)?,
            "lambda-min" => d.lambda_bounds.0 = parse(key, value)?,
            "lambda-max" => d.lambda_bounds.1 = parse(key, value)?,
            "smoothing" => d.smoothing = parse(key, value)?,
            "window" => d.window = parse(key, value)?,
            "knn-k" => d.neighbors_k = parse(key, value)?,
            "rep-penalty" => d.repetition_penalty = parse(key, value)?,
            "max-new-tokens" => d.max_new_tokens = parse(key, value)?,
            "metric" => d.metric = value.trim().parse()?,
            "passages" => self.passages = parse(key, value)?,
            "passage-words" => self.passage_words = parse(key, value)?,
            "passage-overlap" => self.passage_overlap = parse(key, value)?,
            "chunk-size" => self.doc_chunk_size = parse(key, value)?,
            "chunk-stride" => self.doc_chunk_stride = parse(key, value)?,
            "seed" => self.model.seed = parse(key, value)?,
            "vocab-size" => self.model.vocab_size = parse(key, value)?,
            "hidden-dim" => self.model.hidden_dim = parse(key, value)?,
            "order" => self.model.order = parse(key, value)?,
            "temperature" => self.model.temperature = parse(key, value)?,
            "coverage-n" => self.coverage_n = parse(key, value)?,
            "score-units" => self.score_units = value.parse()?,
            "prompt-budget" => self.prompt_budget = parse(key, value)?,
            "eos" => {
                self.eos = match value.trim() {
                    "none" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "workers" => self.workers = parse(key, value)?,
            other => return Err(Error::InvalidConfig(format!("unknown setting `{other}`"))),
        }
        Ok(())
    }

    /// Reads `key = value` lines. `#` starts a comment.
    pub fn apply_file_contents(&mut self, contents: &str) -> Result<()> {
        for (i, raw) in contents.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("config line {}: expected `key = value`", i + 1))
            })?;
            self.apply(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::InvalidConfig("no strategies selected".into()));
        }
        self.decoding.validate()?;
        if self.passage_words == 0 || self.passage_overlap >= self.passage_words {
            return Err(Error::InvalidChunking(format!(
                "passage size {} with overlap {}",
                self.passage_words, self.passage_overlap
            )));
        }
        chunk_spans(1, self.doc_chunk_size, self.doc_chunk_stride)?;
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be >= 1".into()));
        }
        Ok(())
    }
}

/// Chunks each document, encodes each chunk on its own and indexes every
/// document position once. Positions are numbered across the concatenated
/// documents.
pub fn build_document_index<M, T>(
    model: &M,
    tokenizer: &T,
    documents: &[Document],
    chunk_size: usize,
    stride: usize,
    metric: Metric,
) -> Result<ContextIndex>
where
    M: LanguageModel + ?Sized,
    T: Tokenizer + ?Sized,
{
    let mut index = ContextIndex::empty(model.hidden_dim(), metric);
    let mut offset = 0usize;
    for doc in documents {
        let tokens = tokenizer.encode(&doc.text);
        let mut chunks = Vec::new();
        for span in chunk_spans(tokens.len(), chunk_size, stride)? {
            let chunk_tokens = tokens[span.clone()].to_vec();
            let states = model.prefill(&chunk_tokens)?.states;
            chunks.push(DocumentChunk {
                start: span.start,
                tokens: chunk_tokens,
                states,
            });
        }
        match ContextIndex::build_from_document_chunks(&chunks, chunk_size, stride, metric) {
            Ok(mut part) => {
                part.shift_positions(offset as u32);
                index.extend(part)?;
            }
            Err(Error::EmptyIndex(_)) => {}
            Err(e) => return Err(e),
        }
        offset += tokens.len();
    }
    Ok(index)
}

/// Top passages for an instance, best first.
pub fn retrieve(instance: &Instance, config: &ExperimentConfig) -> Result<Vec<Passage>> {
    let mut passages = Vec::new();
    for doc in &instance.documents {
        passages.extend(chunk_document(
            &doc.doc_id,
            &doc.text,
            config.passage_words,
            config.passage_overlap,
        )?);
    }
    if passages.is_empty() || config.passages == 0 {
        return Ok(Vec::new());
    }
    let bm25 = Bm25Index::new(&passages, config.bm25)?;
    Ok(bm25
        .rank(&instance.query, config.passages)?
        .into_iter()
        .map(|(i, _)| passages[i].clone())
        .collect())
}

fn run_instance<M: LanguageModel>(
    model: &M,
    instance: &Instance,
    config: &ExperimentConfig,
) -> Result<Vec<InstanceScore>> {
    let tokenizer = ByteTokenizer;
    let passages = retrieve(instance, config)?;
    let refs: Vec<&Passage> = passages.iter().collect();
    let prompt = build_prompt(&tokenizer, &instance.query, &refs, config.prompt_budget)?;
    let units = |text: &str| -> Vec<String> {
        match config.score_units {
            ScoreUnits::Words => terms(text),
            ScoreUnits::Tokens => tokenizer.encode(text).iter().map(u32::to_string).collect(),
        }
    };
    let context_units = units(&context_text(&refs));
    let reference_units = units(&instance.reference_answer);

    let mut doc_index = None;
    let mut doc_index_seconds = 0.0;
    if config.strategies.contains(&Strategy::CocolexPlus) {
        let started = Instant::now();
        doc_index = Some(build_document_index(
            model,
            &tokenizer,
            &instance.documents,
            config.doc_chunk_size,
            config.doc_chunk_stride,
            config.decoding.metric,
        )?);
        doc_index_seconds = started.elapsed().as_secs_f64();
    }

    let mut rows = Vec::with_capacity(config.strategies.len());
    for &strategy in &config.strategies {
        let mut input = DecodeInput::new(&prompt);
        input.eos = config.eos;
        input.document_index = doc_index.as_ref();
        let cfg = StrategyConfig {
            strategy,
            ..config.decoding
        };
        let result = decode(model, &input, &cfg)?;
        let output = tokenizer.decode(result.content_tokens(config.eos));
        let output_units = units(&output);
        rows.push(InstanceScore {
            instance_id: instance.id.clone(),
            strategy: strategy.name().to_string(),
            rouge_l_f1: rouge_l_f1(&output_units, &reference_units),
            context_coverage: context_coverage(&output_units, &context_units, config.coverage_n),
            tokens_generated: result.tokens.len(),
            model_calls: result.model_calls(),
            seconds_per_token: result.seconds_per_token(),
            index_build_seconds: if strategy == Strategy::CocolexPlus {
                doc_index_seconds
            } else {
                result.timing.index_build_seconds
            },
            output,
        });
    }
    Ok(rows)
}

/// Runs every strategy on every instance and assembles the report. Writes it
/// to `config.output` when set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricReport> {
    let instances = load_dataset(&config.dataset)?;
    let report = run_on_instances(config, &instances)?;
    if let Some(path) = &config.output {
        write_report(&report, path)?;
    }
    Ok(report)
}

pub fn run_on_instances(config: &ExperimentConfig, instances: &[Instance]) -> Result<MetricReport> {
    config.validate()?;
    let model = ReferenceNgramModel::new(config.model)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let per_instance: Vec<Vec<InstanceScore>> = pool.install(|| {
        instances
            .par_iter()
            .map(|inst| run_instance(&model, inst, config).map_err(|e| e.for_instance(&inst.id)))
            .collect::<Result<_>>()
    })?;

    let order = |s: &str| config.strategies.iter().position(|x| x.name() == s);
    let mut rows: Vec<InstanceScore> = per_instance.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        a.instance_id
            .cmp(&b.instance_id)
            .then(order(&a.strategy).cmp(&order(&b.strategy)))
    });

    let names: Vec<String> = config
        .strategies
        .iter()
        .map(|s| s.name().to_string())
        .collect();
    let timing = if config.strategies.contains(&Strategy::Regular) {
        timing_report(&rows)?
    } else {
        BTreeMap::new()
    };
    let mut config_json = serde_json::to_value(config)?;
    config_json["template"] = serde_json::Value::from(TEMPLATE_VERSION);
    Ok(MetricReport {
        config: config_json,
        aggregates: aggregate(&rows),
        significance: significance(&rows, &names),
        timing,
        per_instance: rows,
    })
}

pub fn write_report<T: Serialize>(report: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, report)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<MetricReport> {
    Ok(serde_json::from_reader(std::io::BufReader::new(
        File::open(path)?,
    ))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub metric: Metric,
    pub passages: usize,
    pub aggregates: BTreeMap<String, StrategyAggregate>,
    pub timing: BTreeMap<String, TimingEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config: serde_json::Value,
    pub runs: Vec<AblationRun>,
}

/// Repeats the experiment for every (metric, passage count) combination.
pub fn run_ablation(
    config: &ExperimentConfig,
    metrics: &[Metric],
    passage_counts: &[usize],
) -> Result<AblationReport> {
    let instances = load_dataset(&config.dataset)?;
    let mut runs = Vec::new();
    for &metric in metrics {
        for &passages in passage_counts {
            let mut cfg = config.clone();
            cfg.decoding.metric = metric;
            cfg.passages = passages;
            let report = run_on_instances(&cfg, &instances)?;
            runs.push(AblationRun {
                metric,
                passages,
                aggregates: report.aggregates,
                timing: report.timing,
            });
        }
    }
    let report = AblationReport {
        config: serde_json::to_value(config)?,
        runs,
    };
    if let Some(path) = &config.output {
        write_report(&report, path)?;
    }
    Ok(report)
}

/// Plain-text summary of a report.
pub fn format_report(report: &MetricReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:>9} {:>9} {:>8} {:>10} {:>10}\n",
        "strategy", "rouge-l", "coverage", "tokens", "time/tok", "calls/tok"
    ));
    for (name, agg) in &report.aggregates {
        let t = report.timing.get(name);
        out.push_str(&format!(
            "{:<16} {:>9.4} {:>9.4} {:>8.1} {:>10} {:>10}\n",
            name,
            agg.rouge_l_f1.mean,
            agg.context_coverage.mean,
            agg.tokens_generated.mean,
            t.map_or("-".into(), |t| format!(
                "{:.2}x",
                t.relative_seconds_per_token
            )),
            t.map_or("-".into(), |t| format!("{:.2}x", t.relative_model_calls)),
        ));
    }
    if !report.significance.is_empty() {
        out.push_str("\nWilcoxon signed-rank (two-sided)\n");
        for s in &report.significance {
            out.push_str(&format!(
                "  {:<18} {} vs {}: {:.4} vs {:.4}, p = {}\n",
                s.metric,
                s.a,
                s.b,
                s.mean_a,
                s.mean_b,
                s.p_value.map_or("n/a".into(), |p| format!("{p:.4}")),
            ));
        }
    }
    out
}

pub fn format_ablation(report: &AblationReport) -> String {
    let mut out = format!(
        "{:<10} {:>8} {:<16} {:>9} {:>9} {:>10}\n",
        "metric", "passages", "strategy", "rouge-l", "coverage", "time/tok"
    );
    for run in &report.runs {
        for (name, agg) in &run.aggregates {
            out.push_str(&format!(
                "{:<10} {:>8} {:<16} {:>9.4} {:>9.4} {:>10}\n",
                run.metric.to_string(),
                run.passages,
                name,
                agg.rouge_l_f1.mean,
                agg.context_coverage.mean,
                run.timing.get(name).map_or("-".into(), |t| format!(
                    "{:.2}x",
                    t.relative_seconds_per_token
                )),
            ));
        }
    }
    out
}
