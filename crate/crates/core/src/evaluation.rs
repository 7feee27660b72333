//! Scoring of generated answers and comparison of strategies.
//!
//! * [`rouge_l_f1`]: LCS-based F1 against the reference answer.
//! * [`context_coverage`]: share of generated n-grams found verbatim in the
//!   prompt context, a lexical faithfulness proxy.
//! * [`wilcoxon_signed_rank`]: paired two-sided test, exact for up to 12
//!   non-zero differences.
//! * [`timing_report`]: per-token cost relative to regular decoding.

use std::collections::{BTreeMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest sample size for which p-values are computed by enumerating every
/// sign assignment.
pub const EXACT_WILCOXON_MAX_N: usize = 12;

pub const DEFAULT_COVERAGE_N: usize = 4;

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_f1<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Fraction of the generated n-grams (by position) that occur verbatim in
/// the context. Zero when the generation has fewer than `n` tokens. `n` of 0
/// is treated as 1.
pub fn context_coverage<T: Eq + Hash>(generated: &[T], context: &[T], n: usize) -> f64 {
    let n = n.max(1);
    if generated.len() < n {
        return 0.0;
    }
    let grams: HashSet<&[T]> = context.windows(n).collect();
    let total = generated.len() - n + 1;
    let hits = generated.windows(n).filter(|g| grams.contains(g)).count();
    hits as f64 / total as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of the ranks of positive differences.
    pub w_plus: f64,
    /// Number of non-zero differences.
    pub n: usize,
    pub p_value: f64,
    pub exact: bool,
}

/// Ranks of `values` (1-based), ties sharing their average rank. Returned
/// doubled so that they are integers.
fn doubled_ranks(values: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // average of ranks i+1 ..= j+1, doubled
        let doubled = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        if j > i {
            ties.push(j - i + 1);
        }
        i = j + 1;
    }
    (ranks, ties)
}

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped. With at most [`EXACT_WILCOXON_MAX_N`]
/// remaining pairs the null distribution of `W+` is obtained by enumerating
/// all sign assignments; above that a normal approximation with tie and
/// continuity corrections is used.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::ShapeError(format!(
            "paired samples of different lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n < 5 {
        return Err(Error::InsufficientData(n));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = doubled_ranks(&abs);
    let w2: u64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();

    if n <= EXACT_WILCOXON_MAX_N {
        let (mut le, mut ge) = (0u64, 0u64);
        for mask in 0u32..(1 << n) {
            let s: u64 = (0..n)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| ranks[i])
                .sum();
            if s <= w2 {
                le += 1;
            }
            if s >= w2 {
                ge += 1;
            }
        }
        let total = (1u64 << n) as f64;
        let p = (2.0 * le.min(ge) as f64 / total).min(1.0);
        return Ok(WilcoxonResult {
            w_plus: w2 as f64 / 2.0,
            n,
            p_value: p,
            exact: true,
        });
    }

    let nf = n as f64;
    let w = w2 as f64 / 2.0;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    Ok(WilcoxonResult {
        w_plus: w,
        n,
        p_value: normal_two_sided(w, mean, var),
        exact: false,
    })
}

fn normal_two_sided(w: f64, mean: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).clamp(f64::MIN_POSITIVE, 1.0)
}

/// Normal-approximation p-value regardless of sample size. Used to
/// cross-check the exact path.
pub fn wilcoxon_normal_approximation(a: &[f64], b: &[f64]) -> Result<f64> {
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.len() < 5 {
        return Err(Error::InsufficientData(diffs.len()));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = doubled_ranks(&abs);
    let w = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, &r)| r as f64 / 2.0)
        .sum::<f64>();
    let nf = diffs.len() as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    Ok(normal_two_sided(
        w,
        nf * (nf + 1.0) / 4.0,
        nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub stddev: f64,
    pub n: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stddev = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stddev, n }
    }
}

/// Scores for one (instance, strategy) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub instance_id: String,
    pub strategy: String,
    pub output: String,
    pub rouge_l_f1: f64,
    pub context_coverage: f64,
    pub tokens_generated: usize,
    pub model_calls: u64,
    pub seconds_per_token: f64,
    pub index_build_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyAggregate {
    pub rouge_l_f1: Aggregate,
    pub context_coverage: Aggregate,
    pub tokens_generated: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub metric: String,
    pub a: String,
    pub b: String,
    pub mean_a: f64,
    pub mean_b: f64,
    /// `None` when there are too few non-zero differences.
    pub p_value: Option<f64>,
    pub exact: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingEntry {
    pub mean_seconds_per_token: f64,
    /// Mean seconds per token over the regular strategy's.
    pub relative_seconds_per_token: f64,
    pub model_calls_per_token: f64,
    /// Calls per token over the regular strategy's.
    pub relative_model_calls: f64,
    pub mean_index_build_seconds: f64,
}

/// The full experiment report, serialized with a fixed key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: serde_json::Value,
    pub per_instance: Vec<InstanceScore>,
    pub aggregates: BTreeMap<String, StrategyAggregate>,
    pub significance: Vec<Significance>,
    pub timing: BTreeMap<String, TimingEntry>,
}

/// Keys under which wall-clock measurements appear in a serialized report.
pub const TIMING_KEYS: [&str; 5] = [
    "seconds_per_token",
    "index_build_seconds",
    "mean_seconds_per_token",
    "relative_seconds_per_token",
    "mean_index_build_seconds",
];

pub const BASELINE: &str = "regular";

type ScoreField = fn(&InstanceScore) -> f64;

fn rows_for<'a>(
    rows: &'a [InstanceScore],
    strategy: &'a str,
) -> impl Iterator<Item = &'a InstanceScore> {
    rows.iter().filter(move |r| r.strategy == strategy)
}

/// Per-token time and model calls of every strategy relative to regular
/// decoding.
pub fn timing_report(rows: &[InstanceScore]) -> Result<BTreeMap<String, TimingEntry>> {
    let stats = |strategy: &str| {
        let group: Vec<&InstanceScore> = rows_for(rows, strategy).collect();
        let spt = Aggregate::of(
            &group
                .iter()
                .map(|r| r.seconds_per_token)
                .collect::<Vec<_>>(),
        )
        .mean;
        let calls: u64 = group.iter().map(|r| r.model_calls).sum();
        let tokens: usize = group.iter().map(|r| r.tokens_generated).sum();
        let build = Aggregate::of(
            &group
                .iter()
                .map(|r| r.index_build_seconds)
                .collect::<Vec<_>>(),
        )
        .mean;
        (group.len(), spt, calls as f64 / tokens.max(1) as f64, build)
    };
    let (n, base_spt, base_calls, _) = stats(BASELINE);
    if n == 0 {
        return Err(Error::MissingBaseline(BASELINE.into()));
    }
    let mut out = BTreeMap::new();
    for strategy in rows
        .iter()
        .map(|r| r.strategy.as_str())
        .collect::<HashSet<_>>()
    {
        let (_, spt, calls, build) = stats(strategy);
        out.insert(
            strategy.to_string(),
            TimingEntry {
                mean_seconds_per_token: spt,
                relative_seconds_per_token: spt / base_spt,
                model_calls_per_token: calls,
                relative_model_calls: calls / base_calls,
                mean_index_build_seconds: build,
            },
        );
    }
    Ok(out)
}

pub fn aggregate(rows: &[InstanceScore]) -> BTreeMap<String, StrategyAggregate> {
    let mut out = BTreeMap::new();
    for strategy in rows
        .iter()
        .map(|r| r.strategy.as_str())
        .collect::<HashSet<_>>()
    {
        let pick = |f: fn(&InstanceScore) -> f64| {
            Aggregate::of(&rows_for(rows, strategy).map(f).collect::<Vec<_>>())
        };
        out.insert(
            strategy.to_string(),
            StrategyAggregate {
                rouge_l_f1: pick(|r| r.rouge_l_f1),
                context_coverage: pick(|r| r.context_coverage),
                tokens_generated: pick(|r| r.tokens_generated as f64),
            },
        );
    }
    out
}

/// Paired scores of two strategies, aligned by instance id.
fn paired(rows: &[InstanceScore], a: &str, b: &str, f: ScoreField) -> (Vec<f64>, Vec<f64>) {
    let bs: BTreeMap<&str, f64> = rows_for(rows, b)
        .map(|r| (r.instance_id.as_str(), f(r)))
        .collect();
    rows_for(rows, a)
        .filter_map(|r| bs.get(r.instance_id.as_str()).map(|&y| (f(r), y)))
        .unzip()
}

/// Wilcoxon tests for every pair of strategies on ROUGE-L and coverage.
/// `strategies` fixes the pair order.
pub fn significance(rows: &[InstanceScore], strategies: &[String]) -> Vec<Significance> {
    let metrics: [(&str, ScoreField); 2] = [
        ("rouge_l_f1", |r| r.rouge_l_f1),
        ("context_coverage", |r| r.context_coverage),
    ];
    let mut out = Vec::new();
    for (i, a) in strategies.iter().enumerate() {
        for b in &strategies[i + 1..] {
            for (metric, f) in metrics {
                let (xa, xb) = paired(rows, a, b, f);
                let test = wilcoxon_signed_rank(&xa, &xb).ok();
                out.push(Significance {
                    metric: metric.to_string(),
                    a: a.clone(),
                    b: b.clone(),
                    mean_a: Aggregate::of(&xa).mean,
                    mean_b: Aggregate::of(&xb).mean,
                    p_value: test.map(|t| t.p_value),
                    exact: test.map(|t| t.exact),
                });
            }
        }
    }
    out
}

/// Removes every wall-clock field from a serialized report so that two runs
/// can be compared byte for byte.
pub fn strip_timing(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            for key in TIMING_KEYS {
                map.remove(key);
            }
            map.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}
