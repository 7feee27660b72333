//! Vocabulary, logit and probability primitives shared by every strategy.
//!
//! Entropy is measured in nats. The Jensen-Shannon divergence uses base-2
//! logarithms so that it ranges over exactly `[0, 1]`.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

/// Dense token id in `[0, |V|)`.
pub type TokenId = u32;

/// Tolerance on the total mass of a [`Distribution`].
pub const MASS_TOLERANCE: f64 = 1e-9;

/// A bijection between dense token ids and their surface strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::InvalidVocabulary(format!(
                "need at least 2 tokens, got {}",
                tokens.len()
            )));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if ids.insert(tok.clone(), id as TokenId).is_some() {
                return Err(Error::InvalidVocabulary(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    /// The 256-entry byte vocabulary. Printable ASCII bytes map to themselves,
    /// every other byte to a `<0xNN>` escape.
    pub fn bytes() -> Self {
        let tokens = (0u16..256)
            .map(|b| {
                let b = b as u8;
                if b.is_ascii_graphic() || b == b' ' {
                    (b as char).to_string()
                } else {
                    format!("<0x{b:02X}>")
                }
            })
            .collect();
        Self::new(tokens).expect("byte vocabulary is well formed")
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }
}

/// Unnormalized scores over the vocabulary. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidLogits { index });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A normalized probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    /// Validates that every entry is in `[0, 1]` and the total mass is 1
    /// within [`MASS_TOLERANCE`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution(
                "empty probability vector".into(),
            ));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} = {p} is outside [0, 1]"
            )));
        }
        let mass: f64 = probs.iter().sum();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("total mass {mass}")));
        }
        Ok(Self(probs))
    }

    /// Normalizes non-negative weights. Fails if the weights sum to zero.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution(
                "weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidDistribution("weights sum to zero".into()));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn one_hot(size: usize, token: TokenId) -> Result<Self> {
        if token as usize >= size {
            return Err(Error::InvalidToken {
                token,
                vocab_size: size,
            });
        }
        let mut probs = vec![0.0; size];
        probs[token as usize] = 1.0;
        Ok(Self(probs))
    }

    pub fn uniform(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidDistribution("empty vocabulary".into()));
        }
        Ok(Self(vec![1.0 / size as f64; size]))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.0.get(token as usize).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Greedy choice. Ties go to the lowest token id.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        best as TokenId
    }
}

fn check_same_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::VocabMismatch { expected, actual });
    }
    Ok(())
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &LogitVector) -> Result<Distribution> {
    let values = logits.values();
    if values.is_empty() {
        return Err(Error::InvalidDistribution("empty logit vector".into()));
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidLogits { index });
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Distribution::new(exps.into_iter().map(|e| e / total).collect())
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy(d: &Distribution) -> f64 {
    -d.probs()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Jensen-Shannon divergence in bits, in `[0, 1]`.
pub fn jsd(p: &Distribution, q: &Distribution) -> Result<f64> {
    check_same_len(p.len(), q.len())?;
    let mut total = 0.0;
    for (&a, &b) in p.probs().iter().zip(q.probs()) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / m).log2();
        }
    }
    Ok(total.clamp(0.0, 1.0))
}

/// CTRL-style repetition penalty: for each token in `seen`, a positive logit
/// is divided by `penalty` and a non-positive one multiplied by it.
pub fn apply_repetition_penalty(
    logits: &LogitVector,
    seen: &HashSet<TokenId>,
    penalty: f64,
) -> Result<LogitVector> {
    if penalty < 1.0 || !penalty.is_finite() {
        return Err(Error::InvalidPenalty(penalty));
    }
    let mut values = logits.values().to_vec();
    for &tok in seen {
        let Some(v) = values.get_mut(tok as usize) else {
            return Err(Error::InvalidToken {
                token: tok,
                vocab_size: logits.len(),
            });
        };
        if *v > 0.0 {
            *v /= penalty;
        } else {
            *v *= penalty;
        }
    }
    LogitVector::new(values)
}
