//! Acceptance suite. Every test prints one `[PASS]` or `[FAIL]` line naming
//! its criterion, then asserts.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use cocolex::decoding::{
    decode, decode_with_observer, DecodeInput, Prompt, Strategy, StrategyConfig,
};
use cocolex::evaluation::{strip_timing, wilcoxon_signed_rank, MetricReport};
use cocolex::harness::dataset::Document;
use cocolex::harness::{
    build_document_index, run_on_instances, synthetic_instances, ExperimentConfig,
};
use cocolex::index::{ContextIndex, DocumentChunk, Metric};
use cocolex::model::{LanguageModel, ReferenceModelConfig, ReferenceNgramModel};
use cocolex::prob::{TokenId, MASS_TOLERANCE};
use cocolex::tokenizer::ByteTokenizer;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MINUTE: Duration = Duration::from_secs(60);

fn verdict(criterion: u32, name: &str, ok: bool, detail: &str) {
    let tag = if ok { "PASS" } else { "FAIL" };
    let line = format!("[{tag}] criterion {criterion:>2}: {name}: {detail}\n");
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(ok, "criterion {criterion} ({name}) failed: {detail}");
}

fn model(seed: u64) -> ReferenceNgramModel {
    ReferenceNgramModel::new(ReferenceModelConfig {
        seed,
        ..ReferenceModelConfig::default()
    })
    .unwrap()
}

fn random_tokens(rng: &mut ChaCha8Rng, len: usize) -> Vec<TokenId> {
    (0..len).map(|_| rng.gen_range(0..256)).collect()
}

fn random_prompt(rng: &mut ChaCha8Rng) -> Prompt {
    let (context_len, query_len) = (rng.gen_range(8..120), rng.gen_range(1..24));
    let context = random_tokens(rng, context_len);
    let query = random_tokens(rng, query_len);
    Prompt::from_context(context, &query)
}

fn random_document_index(rng: &mut ChaCha8Rng, model: &ReferenceNgramModel) -> ContextIndex {
    let text: String = (0..rng.gen_range(40..300))
        .map(|_| rng.gen_range(b' '..=b'~') as char)
        .collect();
    let docs = [Document {
        doc_id: "d".into(),
        text,
    }];
    build_document_index(model, &ByteTokenizer, &docs, 64, 32, Metric::Euclidean).unwrap()
}

#[test]
fn criterion_01_normalization_fuzz() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut steps = 0usize;
    let mut violations = Vec::new();
    for session in 0..40u64 {
        let m = model(session);
        let prompt = random_prompt(&mut rng);
        let doc_index = random_document_index(&mut rng, &m);
        for strategy in Strategy::ALL {
            let config = StrategyConfig {
                max_new_tokens: rng.gen_range(4..12),
                ..StrategyConfig::new(strategy)
            };
            let input = DecodeInput::new(&prompt).with_document_index(&doc_index);
            decode_with_observer(&m, &input, &config, |view| {
                steps += 1;
                let mut dists = vec![view.model, view.output];
                dists.extend(view.copy);
                for d in dists {
                    if (d.mass() - 1.0).abs() > MASS_TOLERANCE {
                        violations.push(format!("{strategy} mass {}", d.mass()));
                    }
                }
                if let Some(l) = view.lambda {
                    let expected = match strategy {
                        Strategy::Colex => l == config.static_lambda,
                        _ => (0.2..=0.8).contains(&l),
                    };
                    if !expected {
                        violations.push(format!("{strategy} lambda {l}"));
                    }
                }
                if let (Strategy::Adacad | Strategy::AdacadCocolex, Some(a)) =
                    (strategy, view.alpha)
                {
                    if !(0.3..=1.0).contains(&a) {
                        violations.push(format!("{strategy} alpha {a}"));
                    }
                }
            })
            .unwrap();
        }
    }
    let elapsed = started.elapsed();
    verdict(
        1,
        "normalization fuzz",
        steps >= 1000 && violations.is_empty() && elapsed < MINUTE,
        &format!(
            "{steps} steps, {} violations, {elapsed:.2?}",
            violations.len()
        ),
    );
}

#[test]
fn criterion_02_degeneration_identities() {
    let started = Instant::now();
    let mut mismatches = Vec::new();
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = model(seed);
        let prompt = random_prompt(&mut rng);
        let input = DecodeInput::new(&prompt);
        let base = StrategyConfig {
            max_new_tokens: 32,
            ..StrategyConfig::default()
        };
        let regular = decode(&m, &input, &base).unwrap().tokens;
        let variants = [
            (
                "cad(alpha=0)",
                StrategyConfig {
                    strategy: Strategy::Cad,
                    alpha: 0.0,
                    ..base
                },
            ),
            (
                "cocolex(bounds=(1,1))",
                StrategyConfig {
                    strategy: Strategy::Cocolex,
                    lambda_bounds: (1.0, 1.0),
                    ..base
                },
            ),
            (
                "colex(lambda=1)",
                StrategyConfig {
                    strategy: Strategy::Colex,
                    static_lambda: 1.0,
                    ..base
                },
            ),
        ];
        for (name, config) in variants {
            if decode(&m, &input, &config).unwrap().tokens != regular {
                mismatches.push(format!("seed {seed}: {name}"));
            }
        }
    }
    let elapsed = started.elapsed();
    verdict(
        2,
        "degeneration identities",
        mismatches.is_empty() && elapsed < MINUTE,
        &format!("150 comparisons over 50 seeds, mismatches {mismatches:?}, {elapsed:.2?}"),
    );
}

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let norm = |v: &[f32]| v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        1.0
    } else {
        1.0 - dot / denom
    }
}

#[test]
fn criterion_03_knn_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut failures = 0;
    for trial in 0..200 {
        let n = rng.gen_range(2..=1000);
        let d = rng.gen_range(1..=64);
        let k = rng.gen_range(1..=32);
        let metric = if trial % 2 == 0 {
            Metric::Euclidean
        } else {
            Metric::Cosine
        };
        let mut states: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        // Duplicate keys exercise the tie order.
        for _ in 0..n / 10 {
            let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
            states[a] = states[b].clone();
        }
        let tokens = random_tokens(&mut rng, n);
        let index = ContextIndex::build_from_prefix(&states, &tokens, metric).unwrap();
        let query: Vec<f32> = if rng.gen_bool(0.2) {
            states[rng.gen_range(0..n)].clone()
        } else {
            (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };

        let mut scan: Vec<(f64, u32, TokenId)> = (0..n - 1)
            .map(|i| (metric.distance(&query, &states[i]), i as u32, tokens[i + 1]))
            .collect();
        scan.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scan.truncate(k);

        let got: Vec<(f64, u32, TokenId)> = index
            .query_top_k(&query, k)
            .unwrap()
            .iter()
            .map(|nb| (nb.distance, nb.entry.position, nb.entry.value))
            .collect();
        let formula_agrees = got.iter().all(|&(dist, pos, _)| {
            let key = &states[pos as usize];
            let expected = match metric {
                Metric::Euclidean => euclidean(&query, key),
                Metric::Cosine => cosine_distance(&query, key),
            };
            (dist - expected).abs() < 1e-9
        });
        if got != scan || !formula_agrees {
            failures += 1;
        }
    }
    let elapsed = started.elapsed();
    verdict(
        3,
        "kNN oracle",
        failures == 0 && elapsed < MINUTE,
        &format!(
            "{} of 200 random indexes match the exhaustive scan, {elapsed:.2?}",
            200 - failures
        ),
    );
}

#[test]
fn criterion_04_copy_correctness() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut built, mut copied) = (0, 0);
    while built < 100 {
        let m = model(rng.gen());
        let order = m.order();
        // All-distinct context tokens make every m-gram unique.
        let mut vocab: Vec<TokenId> = (0..256).collect();
        vocab.shuffle(&mut rng);
        let context = vocab[..rng.gen_range(order + 8..96)].to_vec();
        let j = rng.gen_range(0..context.len() - order);
        let gram = &context[j..j + order];
        let continuation = context[j + order];
        let lead = rng.gen_range(0..8);
        let mut query = random_tokens(&mut rng, lead);
        query.extend_from_slice(gram);
        let prompt = Prompt::from_context(context.clone(), &query);

        let step = m.step(&prompt.tokens).unwrap();
        if step.logits.values()[continuation as usize]
            >= step
                .logits
                .values()
                .iter()
                .cloned()
                .fold(f64::MIN, f64::max)
        {
            continue;
        }
        // Oracle: the nearest stored state is the m-gram's own occurrence.
        let states = m.prefill(&prompt.tokens).unwrap().states;
        let index =
            ContextIndex::build_from_prefix(&states[..context.len()], &context, Metric::Euclidean)
                .unwrap();
        let nearest = index.query_top_k(&step.hidden_state, 1).unwrap()[0];
        assert_eq!(nearest.entry.position as usize, j + order - 1);
        assert_eq!(nearest.entry.value, continuation);
        assert!((nearest.similarity - 1.0).abs() < 1e-6);

        built += 1;
        let config = StrategyConfig {
            lambda_bounds: (0.0, 0.0),
            max_new_tokens: 1,
            ..StrategyConfig::new(Strategy::Cocolex)
        };
        let out = decode(&m, &DecodeInput::new(&prompt), &config).unwrap();
        if out.tokens == [continuation] {
            copied += 1;
        }
    }
    let elapsed = started.elapsed();
    verdict(
        4,
        "copy correctness",
        copied == 100 && elapsed < MINUTE,
        &format!("{copied}/100 context continuations emitted, {elapsed:.2?}"),
    );
}

/// The 200-instance synthetic run shared by criteria 5, 6 and 7.
fn corpus_run() -> &'static (MetricReport, Duration) {
    static RUN: OnceLock<(MetricReport, Duration)> = OnceLock::new();
    RUN.get_or_init(|| {
        let started = Instant::now();
        let instances = synthetic_instances(2024, 200);
        let config = ExperimentConfig {
            strategies: Strategy::ALL.to_vec(),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            ..ExperimentConfig::default()
        };
        let report = run_on_instances(&config, &instances).unwrap();
        (report, started.elapsed())
    })
}

fn paired_scores(
    report: &MetricReport,
    metric: fn(&cocolex::evaluation::InstanceScore) -> f64,
) -> (Vec<f64>, Vec<f64>) {
    let pick = |s: &str| -> Vec<f64> {
        report
            .per_instance
            .iter()
            .filter(|r| r.strategy == s)
            .map(metric)
            .collect()
    };
    (pick("cocolex"), pick("regular"))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn criterion_05_directional_faithfulness() {
    let (report, elapsed) = corpus_run();
    let (cocolex, regular) = paired_scores(report, |r| r.context_coverage);
    let test = wilcoxon_signed_rank(&cocolex, &regular);
    let p = test.as_ref().map_or(f64::NAN, |t| t.p_value);
    verdict(
        5,
        "directional faithfulness",
        cocolex.len() == 200
            && mean(&cocolex) > mean(&regular)
            && p < 0.05
            && *elapsed < 5 * MINUTE,
        &format!(
            "coverage(n=4) cocolex {:.4} vs regular {:.4}, Wilcoxon p = {p:.3e}, {elapsed:.2?}",
            mean(&cocolex),
            mean(&regular)
        ),
    );
}

#[test]
fn criterion_06_directional_correctness() {
    let (report, _) = corpus_run();
    let (cocolex, regular) = paired_scores(report, |r| r.rouge_l_f1);
    let p = wilcoxon_signed_rank(&cocolex, &regular).map_or(f64::NAN, |t| t.p_value);
    verdict(
        6,
        "directional correctness",
        mean(&cocolex) >= mean(&regular),
        &format!(
            "ROUGE-L F1 cocolex {:.4} vs regular {:.4}, Wilcoxon p = {p:.3e}",
            mean(&cocolex),
            mean(&regular)
        ),
    );
}

#[test]
fn criterion_07_cost_accounting() {
    let (report, _) = corpus_run();
    let t = &report.timing;
    let mut problems = Vec::new();
    for (name, ratio) in [
        ("cad", 2.0),
        ("adacad", 2.0),
        ("adacad_cocolex", 2.0),
        ("cocolex", 1.0),
        ("colex", 1.0),
        ("cocolex_plus", 1.0),
    ] {
        if t[name].relative_model_calls != ratio {
            problems.push(format!("{name} calls {:.4}x", t[name].relative_model_calls));
        }
    }
    for row in &report.per_instance {
        let per_token = if row.strategy.parse::<Strategy>().unwrap().is_contrastive() {
            2
        } else {
            1
        };
        if row.model_calls != per_token * row.tokens_generated as u64 {
            problems.push(format!("{} {} calls", row.instance_id, row.strategy));
        }
    }
    let slower = t["cocolex"].relative_seconds_per_token > 1.0;
    let build = t["cocolex_plus"].mean_index_build_seconds;
    verdict(
        7,
        "cost accounting",
        problems.is_empty() && slower && build > 0.0,
        &format!(
            "calls cad {:.2}x adacad {:.2}x adacad_cocolex {:.2}x cocolex {:.2}x colex {:.2}x; \
             time/token cocolex {:.2}x; cocolex_plus index build {:.3} ms/instance; {} problems",
            t["cad"].relative_model_calls,
            t["adacad"].relative_model_calls,
            t["adacad_cocolex"].relative_model_calls,
            t["cocolex"].relative_model_calls,
            t["colex"].relative_model_calls,
            t["cocolex"].relative_seconds_per_token,
            build * 1e3,
            problems.len()
        ),
    );
}

#[test]
fn criterion_08_cocolex_plus_assignment() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut errors = Vec::new();
    let mut checked = 0usize;
    for doc in 0..50 {
        let len = rng.gen_range(2..=512);
        let window = rng.gen_range(1..=128);
        let stride = rng.gen_range(1..=window);
        let tokens = random_tokens(&mut rng, len);

        let mut spans = Vec::new();
        let mut start = 0;
        loop {
            spans.push(start..(start + window).min(len));
            if start + window >= len {
                break;
            }
            start += stride;
        }
        // Each chunk gets its own random states, so an entry's key reveals
        // which chunk supplied it.
        let chunks: Vec<DocumentChunk> = spans
            .iter()
            .map(|s| DocumentChunk {
                start: s.start,
                tokens: tokens[s.clone()].to_vec(),
                states: (0..s.len())
                    .map(|_| (0..4).map(|_| rng.gen::<f32>()).collect())
                    .collect(),
            })
            .collect();
        let index =
            ContextIndex::build_from_document_chunks(&chunks, window, stride, Metric::Euclidean)
                .unwrap();

        let mut seen = HashSet::new();
        for e in index.entries() {
            if !seen.insert(e.position) {
                errors.push(format!("doc {doc}: position {} twice", e.position));
            }
        }
        for p in 0..len - 1 {
            let owner = chunks
                .iter()
                .filter(|c| c.start <= p && p < c.start + c.tokens.len())
                .max_by_key(|c| p - c.start)
                .unwrap();
            match index.entries().iter().find(|e| e.position as usize == p) {
                Some(e) if e.key == owner.states[p - owner.start] && e.value == tokens[p + 1] => {}
                Some(_) => errors.push(format!("doc {doc}: position {p} from the wrong chunk")),
                None => errors.push(format!("doc {doc}: position {p} missing")),
            }
            checked += 1;
        }
        if index.len() != len - 1 {
            errors.push(format!(
                "doc {doc}: {} entries for {len} tokens",
                index.len()
            ));
        }
    }
    let elapsed = started.elapsed();
    verdict(
        8,
        "CoCoLex+ assignment",
        errors.is_empty() && elapsed < MINUTE,
        &format!(
            "{checked} positions over 50 documents, {} errors, {elapsed:.2?}",
            errors.len()
        ),
    );
}

fn cocolex_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cocolex"))
}

fn generate_corpus(dir: &Path, instances: usize) -> std::path::PathBuf {
    let path = dir.join("corpus.jsonl");
    let status = cocolex_bin()
        .args([
            "generate",
            "--seed",
            "9",
            "--instances",
            &instances.to_string(),
            "--out",
        ])
        .arg(&path)
        .status()
        .unwrap();
    assert!(status.success());
    path
}

#[test]
fn criterion_09_ablation_toggles() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(dir.path(), 12);
    let out = dir.path().join("ablation.json");
    let output = cocolex_bin()
        .args([
            "ablate",
            "--strategy",
            "regular,cocolex",
            "--max-new-tokens",
            "24",
            "--dataset",
        ])
        .arg(&corpus)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    let report: serde_json::Value = std::fs::read(&out)
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok())
        .unwrap_or_default();
    let runs: Vec<(String, u64)> = report["runs"]
        .as_array()
        .map(|runs| {
            runs.iter()
                .map(|r| {
                    (
                        r["metric"].as_str().unwrap_or("").to_string(),
                        r["passages"].as_u64().unwrap_or(0),
                    )
                })
                .collect()
        })
        .unwrap_or_default();
    let mut expected = Vec::new();
    for metric in ["euclidean", "cosine"] {
        for passages in [3, 6, 10] {
            expected.push((metric.to_string(), passages));
        }
    }
    let table = String::from_utf8_lossy(&output.stdout);
    verdict(
        9,
        "ablation toggles",
        output.status.success() && runs == expected && table.contains("cosine"),
        &format!("exit {:?}, runs {runs:?}", output.status.code()),
    );
}

#[test]
fn criterion_10_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(dir.path(), 20);
    let run = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        let status = cocolex_bin()
            .args([
                "run",
                "--strategy",
                "regular,cad,adacad,colex,cocolex,cocolex_plus,adacad_cocolex",
                "--max-new-tokens",
                "32",
                "--seed",
                "5",
                "--workers",
                workers,
                "--dataset",
            ])
            .arg(&corpus)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        let mut value: serde_json::Value =
            serde_json::from_slice(&std::fs::read(out).unwrap()).unwrap();
        strip_timing(&mut value);
        serde_json::to_vec_pretty(&value).unwrap()
    };
    let first = run("a.json", "1");
    let second = run("b.json", "4");
    verdict(
        10,
        "determinism",
        first == second,
        &format!(
            "{} bytes each after removing timing fields, identical: {}",
            first.len(),
            first == second
        ),
    );
}
