//! The autoregressive model contract used by every decoding strategy, and a
//! small deterministic reference model that satisfies it.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::HiddenState;
use crate::prob::{LogitVector, TokenId};

pub mod wire;

/// Output of one forward step: next-token logits and the last-layer hidden
/// state of the newest position.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelStep {
    pub logits: LogitVector,
    pub hidden_state: HiddenState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrefillResult {
    /// One state per prompt position.
    pub states: Vec<HiddenState>,
    /// Logits and state at the final prompt position.
    pub final_step: ModelStep,
}

/// A causal language model.
///
/// Implementations are immutable; calls are pure and may run concurrently.
pub trait LanguageModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn hidden_dim(&self) -> usize;

    /// Encodes a whole prompt, returning a hidden state for every position.
    fn prefill(&self, tokens: &[TokenId]) -> Result<PrefillResult>;

    /// Logits and state for the final position of `prefix`.
    fn step(&self, prefix: &[TokenId]) -> Result<ModelStep>;
}

impl<M: LanguageModel + ?Sized> LanguageModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn hidden_dim(&self) -> usize {
        (**self).hidden_dim()
    }
    fn prefill(&self, tokens: &[TokenId]) -> Result<PrefillResult> {
        (**self).prefill(tokens)
    }
    fn step(&self, prefix: &[TokenId]) -> Result<ModelStep> {
        (**self).step(prefix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModelConfig {
    pub seed: u64,
    pub vocab_size: usize,
    pub hidden_dim: usize,
    /// Number of trailing tokens that make up the state.
    pub order: usize,
    pub temperature: f64,
}

impl Default for ReferenceModelConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            vocab_size: 256,
            hidden_dim: 32,
            order: 4,
            temperature: 0.7,
        }
    }
}

/// Tied-embedding m-gram model.
///
/// The hidden state at a position is the L2-normalized mean of the embeddings
/// of the last `order` tokens, and the logits are the embedding table applied
/// to that state, divided by the temperature. Two positions whose last
/// `order` tokens agree therefore have bit-identical states, which makes the
/// behavior of nearest-neighbor copying predictable.
#[derive(Clone, PartialEq)]
pub struct ReferenceNgramModel {
    config: ReferenceModelConfig,
    /// Row-major `vocab_size x hidden_dim`, unit rows.
    embeddings: Vec<f32>,
}

impl fmt::Debug for ReferenceNgramModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReferenceNgramModel")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl ReferenceNgramModel {
    pub fn new(config: ReferenceModelConfig) -> Result<Self> {
        let ReferenceModelConfig {
            seed,
            vocab_size,
            hidden_dim,
            order,
            temperature,
        } = config;
        if vocab_size < 2 || hidden_dim == 0 || order == 0 {
            return Err(Error::InvalidConfig(format!(
                "reference model needs |V| >= 2, d >= 1, m >= 1 (got {vocab_size}, {hidden_dim}, {order})"
            )));
        }
        if temperature <= 0.0 || !temperature.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut embeddings = Vec::with_capacity(vocab_size * hidden_dim);
        for _ in 0..vocab_size {
            let row: Vec<f64> = (0..hidden_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let norm = row
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            embeddings.extend(row.iter().map(|x| (x / norm) as f32));
        }
        Ok(Self { config, embeddings })
    }

    pub fn config(&self) -> &ReferenceModelConfig {
        &self.config
    }

    pub fn order(&self) -> usize {
        self.config.order
    }

    pub fn embedding(&self, token: TokenId) -> &[f32] {
        let d = self.config.hidden_dim;
        &self.embeddings[token as usize * d..(token as usize + 1) * d]
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if let Some(&token) = tokens
            .iter()
            .find(|&&t| t as usize >= self.config.vocab_size)
        {
            return Err(Error::InvalidToken {
                token,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// State of the last position of `window` (at most `order` tokens).
    fn state(&self, window: &[TokenId]) -> HiddenState {
        let d = self.config.hidden_dim;
        let mut acc = vec![0.0f64; d];
        for &t in window {
            for (a, &e) in acc.iter_mut().zip(self.embedding(t)) {
                *a += e as f64;
            }
        }
        let n = window.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return vec![0.0; d];
        }
        acc.into_iter().map(|x| (x / norm) as f32).collect()
    }

    fn logits(&self, state: &[f32]) -> LogitVector {
        let d = self.config.hidden_dim;
        let t = self.config.temperature;
        let values = self
            .embeddings
            .chunks_exact(d)
            .map(|row| {
                row.iter()
                    .zip(state)
                    .map(|(&e, &h)| e as f64 * h as f64)
                    .sum::<f64>()
                    / t
            })
            .collect();
        LogitVector::new(values).expect("bounded inputs give finite logits")
    }

    fn window_ending_at<'a>(&self, tokens: &'a [TokenId], i: usize) -> &'a [TokenId] {
        &tokens[(i + 1).saturating_sub(self.config.order)..=i]
    }
}

impl LanguageModel for ReferenceNgramModel {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    fn prefill(&self, tokens: &[TokenId]) -> Result<PrefillResult> {
        if tokens.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        self.check_tokens(tokens)?;
        let states: Vec<HiddenState> = (0..tokens.len())
            .map(|i| self.state(self.window_ending_at(tokens, i)))
            .collect();
        let last = states.last().expect("non-empty").clone();
        Ok(PrefillResult {
            final_step: ModelStep {
                logits: self.logits(&last),
                hidden_state: last,
            },
            states,
        })
    }

    fn step(&self, prefix: &[TokenId]) -> Result<ModelStep> {
        if prefix.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        let window = self.window_ending_at(prefix, prefix.len() - 1);
        self.check_tokens(window)?;
        let hidden_state = self.state(window);
        Ok(ModelStep {
            logits: self.logits(&hidden_state),
            hidden_state,
        })
    }
}
