//! Greedy decoding with seven next-token strategies.
//!
//! | strategy         | model calls / token | next-token distribution                                  |
//! |------------------|---------------------|----------------------------------------------------------|
//! | `regular`        | 1                   | `softmax(penalized logits)`                               |
//! | `cad`            | 2                   | `softmax((1 + a) * with - a * without)`                   |
//! | `adacad`         | 2                   | CAD with `a_t = max(a_min, JSD(without, with))`           |
//! | `colex`          | 1                   | `l * p_model + (1 - l) * p_copy`, `l` fixed               |
//! | `cocolex`        | 1                   | as `colex`, `l_t` from smoothed entropy confidence        |
//! | `cocolex_plus`   | 1                   | as `cocolex`, copying from a whole-document index         |
//! | `adacad_cocolex` | 2                   | as `cocolex` with the AdaCAD distribution as `p_model`    |
//!
//! The repetition penalty only touches model logits, and only tokens the
//! session has generated count as seen, so copying prompt text is never
//! penalized.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::confidence::{raw_confidence, ConfidenceState};
use crate::error::{Error, Result};
use crate::index::{copy_distribution, ContextIndex, Metric};
use crate::model::{LanguageModel, ModelStep};
use crate::prob::{
    apply_repetition_penalty, entropy, jsd, softmax, Distribution, LogitVector, TokenId,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Regular,
    Cad,
    Adacad,
    Colex,
    Cocolex,
    CocolexPlus,
    AdacadCocolex,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Regular,
        Strategy::Cad,
        Strategy::Adacad,
        Strategy::Colex,
        Strategy::Cocolex,
        Strategy::CocolexPlus,
        Strategy::AdacadCocolex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Regular => "regular",
            Strategy::Cad => "cad",
            Strategy::Adacad => "adacad",
            Strategy::Colex => "colex",
            Strategy::Cocolex => "cocolex",
            Strategy::CocolexPlus => "cocolex_plus",
            Strategy::AdacadCocolex => "adacad_cocolex",
        }
    }

    /// Needs a second forward pass without the retrieved context.
    pub fn is_contrastive(self) -> bool {
        matches!(
            self,
            Strategy::Cad | Strategy::Adacad | Strategy::AdacadCocolex
        )
    }

    /// Mixes in a copy distribution.
    pub fn copies(self) -> bool {
        matches!(
            self,
            Strategy::Colex | Strategy::Cocolex | Strategy::CocolexPlus | Strategy::AdacadCocolex
        )
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', '+'], "_");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == norm || (norm == "cocolex_" && *st == Strategy::CocolexPlus))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy `{s}`")))
    }
}

/// Strategy selector and every decoding hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    /// CAD contrast weight.
    pub alpha: f64,
    /// AdaCAD floor on the per-step weight.
    pub alpha_min: f64,
    /// Fixed mixture weight for CoLex.
    pub static_lambda: f64,
    pub lambda_bounds: (f64, f64),
    pub smoothing: f64,
    pub window: usize,
    pub neighbors_k: usize,
    pub repetition_penalty: f64,
    pub max_new_tokens: usize,
    pub metric: Metric,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Regular,
            alpha: 0.5,
            alpha_min: 0.3,
            static_lambda: 0.5,
            lambda_bounds: (0.2, 0.8),
            smoothing: 0.5,
            window: 5,
            neighbors_k: 32,
            repetition_penalty: 1.5,
            max_new_tokens: 64,
            metric: Metric::Euclidean,
        }
    }
}

impl StrategyConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.alpha_min) {
            return fail(format!(
                "alpha_min must lie in [0, 1], got {}",
                self.alpha_min
            ));
        }
        if !(0.0..=1.0).contains(&self.static_lambda) {
            return fail(format!(
                "static lambda must lie in [0, 1], got {}",
                self.static_lambda
            ));
        }
        if self.neighbors_k == 0 {
            return fail("neighbors_k must be >= 1".into());
        }
        if self.max_new_tokens == 0 {
            return fail("max_new_tokens must be >= 1".into());
        }
        if !(self.repetition_penalty >= 1.0 && self.repetition_penalty.is_finite()) {
            return Err(Error::InvalidPenalty(self.repetition_penalty));
        }
        ConfidenceState::new(self.window, self.smoothing, self.lambda_bounds)?;
        Ok(())
    }
}

/// A prompt assembled by the harness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    /// Template with the retrieved passages.
    pub tokens: Vec<TokenId>,
    /// Where the passages sit inside `tokens`.
    pub context_span: Range<usize>,
    /// The same template with the passages left out, for contrastive
    /// strategies.
    pub without_context: Vec<TokenId>,
}

impl Prompt {
    /// A prompt that is all context, with no separate query text.
    pub fn from_context(context: Vec<TokenId>, query: &[TokenId]) -> Self {
        let span = 0..context.len();
        let mut tokens = context;
        tokens.extend_from_slice(query);
        Self {
            tokens,
            context_span: span,
            without_context: query.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DecodeInput<'a> {
    pub prompt: Option<&'a Prompt>,
    /// Whole-document index for `cocolex_plus`.
    pub document_index: Option<&'a ContextIndex>,
    /// Generation stops once this token is emitted.
    pub eos: Option<TokenId>,
}

impl<'a> DecodeInput<'a> {
    pub fn new(prompt: &'a Prompt) -> Self {
        Self {
            prompt: Some(prompt),
            ..Self::default()
        }
    }

    pub fn with_document_index(mut self, index: &'a ContextIndex) -> Self {
        self.document_index = Some(index);
        self
    }

    pub fn with_eos(mut self, eos: TokenId) -> Self {
        self.eos = Some(eos);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub token: TokenId,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    /// Entropy (nats) of the model-side distribution.
    pub entropy: f64,
    /// `(1 - lambda)` times the copy probability on every token other than
    /// the chosen one.
    pub copy_mass: Option<f64>,
    pub model_calls: u32,
    /// The copy index returned no neighbors and lambda was forced to 1.
    pub copy_fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DecodeTiming {
    pub prefill_seconds: f64,
    pub index_build_seconds: f64,
    /// The generation loop only.
    pub decode_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub strategy: Strategy,
    /// Includes the end-of-sequence token when one was emitted.
    pub tokens: Vec<TokenId>,
    pub trace: Vec<StepTrace>,
    pub timing: DecodeTiming,
    pub index_entries: usize,
}

impl GenerationResult {
    pub fn model_calls(&self) -> u64 {
        self.trace.iter().map(|s| s.model_calls as u64).sum()
    }

    pub fn seconds_per_token(&self) -> f64 {
        if self.tokens.is_empty() {
            0.0
        } else {
            self.timing.decode_seconds / self.tokens.len() as f64
        }
    }

    /// Generated tokens without a trailing end-of-sequence token.
    pub fn content_tokens(&self, eos: Option<TokenId>) -> &[TokenId] {
        match (self.tokens.last(), eos) {
            (Some(&last), Some(e)) if last == e => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

/// Everything the loop computed for one step, for inspection in tests and
/// diagnostics.
#[derive(Debug)]
pub struct StepView<'a> {
    pub step: usize,
    pub model: &'a Distribution,
    pub copy: Option<&'a Distribution>,
    pub output: &'a Distribution,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
}

pub fn next_distribution_regular(
    step: &ModelStep,
    seen: &HashSet<TokenId>,
    penalty: f64,
) -> Result<Distribution> {
    softmax(&apply_repetition_penalty(&step.logits, seen, penalty)?)
}

fn contrast(with: &LogitVector, without: &LogitVector, alpha: f64) -> Result<LogitVector> {
    if with.len() != without.len() {
        return Err(Error::VocabMismatch {
            expected: with.len(),
            actual: without.len(),
        });
    }
    LogitVector::new(
        with.values()
            .iter()
            .zip(without.values())
            .map(|(&w, &wo)| (1.0 + alpha) * w - alpha * wo)
            .collect(),
    )
}

/// `softmax((1 + alpha) * with - alpha * without)` on penalized logits.
pub fn next_distribution_cad(
    with: &ModelStep,
    without: &ModelStep,
    alpha: f64,
    seen: &HashSet<TokenId>,
    penalty: f64,
) -> Result<Distribution> {
    let w = apply_repetition_penalty(&with.logits, seen, penalty)?;
    let wo = apply_repetition_penalty(&without.logits, seen, penalty)?;
    softmax(&contrast(&w, &wo, alpha)?)
}

/// CAD with the weight set to the JSD between the two branches, floored at
/// `alpha_min`. Returns the distribution and the weight used.
pub fn next_distribution_adacad(
    with: &ModelStep,
    without: &ModelStep,
    alpha_min: f64,
    seen: &HashSet<TokenId>,
    penalty: f64,
) -> Result<(Distribution, f64)> {
    let w = apply_repetition_penalty(&with.logits, seen, penalty)?;
    let wo = apply_repetition_penalty(&without.logits, seen, penalty)?;
    let alpha = jsd(&softmax(&wo)?, &softmax(&w)?)?.max(alpha_min);
    Ok((softmax(&contrast(&w, &wo, alpha)?)?, alpha))
}

/// `lambda * p_model + (1 - lambda) * p_copy`.
pub fn next_distribution_cocolex(
    p_model: &Distribution,
    p_copy: &Distribution,
    lambda: f64,
) -> Result<Distribution> {
    if p_model.len() != p_copy.len() {
        return Err(Error::VocabMismatch {
            expected: p_model.len(),
            actual: p_copy.len(),
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!(
            "lambda {lambda} outside [0, 1]"
        )));
    }
    Distribution::new(
        p_model
            .probs()
            .iter()
            .zip(p_copy.probs())
            .map(|(&m, &c)| (lambda * m + (1.0 - lambda) * c).min(1.0))
            .collect(),
    )
}

/// Runs a greedy decode.
pub fn decode<M: LanguageModel + ?Sized>(
    model: &M,
    input: &DecodeInput<'_>,
    config: &StrategyConfig,
) -> Result<GenerationResult> {
    decode_with_observer(model, input, config, |_| {})
}

/// [`decode`], calling `observe` with every distribution computed at each
/// step.
pub fn decode_with_observer<M, F>(
    model: &M,
    input: &DecodeInput<'_>,
    config: &StrategyConfig,
    mut observe: F,
) -> Result<GenerationResult>
where
    M: LanguageModel + ?Sized,
    F: FnMut(&StepView<'_>),
{
    config.validate()?;
    let prompt = input
        .prompt
        .ok_or_else(|| Error::InvalidConfig("decode needs a prompt".into()))?;
    let strategy = config.strategy;
    let span = prompt.context_span.clone();
    if span.start > span.end || span.end > prompt.tokens.len() {
        return Err(Error::ShapeError(format!(
            "context span {span:?} outside a prompt of {} tokens",
            prompt.tokens.len()
        )));
    }

    let started = Instant::now();
    let prefill_with = model.prefill(&prompt.tokens)?;
    let prefill_without = if strategy.is_contrastive() {
        Some(model.prefill(&prompt.without_context)?)
    } else {
        None
    };
    let prefill_seconds = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let owned_index;
    let index: Option<&ContextIndex> = match strategy {
        Strategy::CocolexPlus => {
            Some(input.document_index.ok_or_else(|| {
                Error::InvalidConfig("cocolex_plus needs a document index".into())
            })?)
        }
        s if s.copies() => {
            owned_index = match ContextIndex::build_from_prefix(
                &prefill_with.states[span.clone()],
                &prompt.tokens[span.clone()],
                config.metric,
            ) {
                Ok(mut idx) => {
                    idx.shift_positions(span.start as u32);
                    idx
                }
                Err(Error::EmptyIndex(_)) => ContextIndex::empty(model.hidden_dim(), config.metric),
                Err(e) => return Err(e),
            };
            Some(&owned_index)
        }
        _ => None,
    };
    let index_build_seconds = started.elapsed().as_secs_f64();

    let mut confidence =
        ConfidenceState::new(config.window, config.smoothing, config.lambda_bounds)?;
    let mut seq_with = prompt.tokens.clone();
    let mut seq_without = prompt.without_context.clone();
    let mut generated: Vec<TokenId> = Vec::with_capacity(config.max_new_tokens);
    let mut seen: HashSet<TokenId> = HashSet::new();
    let mut trace = Vec::with_capacity(config.max_new_tokens);
    let mut first_with = Some(prefill_with.final_step);
    let mut first_without = prefill_without.map(|p| p.final_step);

    let started = Instant::now();
    for t in 0..config.max_new_tokens {
        // The first step reuses the prefill pass, which already counted as
        // the call producing these logits.
        let mut calls = 1;
        let with = match first_with.take() {
            Some(s) => s,
            None => model.step(&seq_with)?,
        };
        let without = if strategy.is_contrastive() {
            calls += 1;
            Some(match first_without.take() {
                Some(s) => s,
                None => model.step(&seq_without)?,
            })
        } else {
            None
        };

        let (p_model, alpha) = match strategy {
            Strategy::Cad => {
                let d = next_distribution_cad(
                    &with,
                    without.as_ref().expect("contrastive"),
                    config.alpha,
                    &seen,
                    config.repetition_penalty,
                )?;
                (d, Some(config.alpha))
            }
            Strategy::Adacad | Strategy::AdacadCocolex => {
                let (d, a) = next_distribution_adacad(
                    &with,
                    without.as_ref().expect("contrastive"),
                    config.alpha_min,
                    &seen,
                    config.repetition_penalty,
                )?;
                (d, Some(a))
            }
            _ => (
                next_distribution_regular(&with, &seen, config.repetition_penalty)?,
                None,
            ),
        };
        let step_entropy = entropy(&p_model);

        let mut lambda = None;
        let mut copy = None;
        let mut copy_fallback = false;
        if let Some(index) = index {
            let neighbors = if index.is_empty() {
                Vec::new()
            } else {
                index.query_top_k(&with.hidden_state, config.neighbors_k)?
            };
            match copy_distribution(&neighbors, p_model.len()) {
                Ok(c) => {
                    lambda = Some(match strategy {
                        Strategy::Colex => config.static_lambda,
                        _ => confidence.update(raw_confidence(&p_model)?)?,
                    });
                    copy = Some(c);
                }
                Err(Error::EmptyNeighbors) => {
                    lambda = Some(1.0);
                    copy_fallback = true;
                }
                Err(e) => return Err(e),
            }
        }

        let mixed;
        let output = match (&copy, lambda) {
            (Some(c), Some(l)) => {
                mixed = next_distribution_cocolex(&p_model, c, l)?;
                &mixed
            }
            _ => &p_model,
        };
        observe(&StepView {
            step: t,
            model: &p_model,
            copy: copy.as_ref(),
            output,
            lambda,
            alpha,
        });

        let token = output.argmax();
        let copy_mass = match (&copy, lambda) {
            (Some(c), Some(l)) => Some((1.0 - l) * (1.0 - c.prob(token)).max(0.0)),
            _ => None,
        };
        trace.push(StepTrace {
            token,
            lambda,
            alpha,
            entropy: step_entropy,
            copy_mass,
            model_calls: calls,
            copy_fallback,
        });
        generated.push(token);
        seen.insert(token);
        seq_with.push(token);
        seq_without.push(token);
        if input.eos == Some(token) {
            break;
        }
    }
    let decode_seconds = started.elapsed().as_secs_f64();

    Ok(GenerationResult {
        strategy,
        tokens: generated,
        trace,
        timing: DecodeTiming {
            prefill_seconds,
            index_build_seconds,
            decode_seconds,
        },
        index_entries: index.map_or(0, ContextIndex::len),
    })
}
