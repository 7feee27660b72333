//! Entropy-based confidence weight for the model/copy mixture.
//!
//! The raw score is `exp(-H / ln|V|)`: 1 for a one-hot distribution, `1/e`
//! for a uniform one. It is smoothed against the mean of recent outputs and
//! clamped to a configured interval.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::prob::{entropy, Distribution};

pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_SMOOTHING: f64 = 0.5;
pub const DEFAULT_BOUNDS: (f64, f64) = (0.2, 0.8);

/// `exp(-normalized entropy)` of a model distribution.
pub fn raw_confidence(d: &Distribution) -> Result<f64> {
    if d.len() < 2 {
        return Err(Error::DegenerateVocabulary(d.len()));
    }
    let normalized = entropy(d) / (d.len() as f64).ln();
    Ok((-normalized.clamp(0.0, 1.0)).exp())
}

/// Per-session smoothing state.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceState {
    history: VecDeque<f64>,
    window: usize,
    smoothing: f64,
    bounds: (f64, f64),
}

impl ConfidenceState {
    /// `bounds` may be degenerate (`min == max`), which pins the output.
    pub fn new(window: usize, smoothing: f64, bounds: (f64, f64)) -> Result<Self> {
        if window == 0 {
            return Err(Error::InvalidConfig(
                "confidence window must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&smoothing) {
            return Err(Error::InvalidConfig(format!(
                "smoothing factor {smoothing} outside [0, 1]"
            )));
        }
        let (lo, hi) = bounds;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "confidence bounds ({lo}, {hi}) must satisfy 0 <= min <= max <= 1"
            )));
        }
        Ok(Self {
            history: VecDeque::with_capacity(window),
            window,
            smoothing,
            bounds,
        })
    }

    /// Combines `raw` with the mean of the window, clamps, and records the
    /// clamped value. With an empty history the raw value is used alone.
    pub fn update(&mut self, raw: f64) -> Result<f64> {
        if !(raw > 0.0 && raw <= 1.0) {
            return Err(Error::InvalidConfidence(raw));
        }
        let combined = if self.history.is_empty() {
            raw
        } else {
            let mean = self.history.iter().sum::<f64>() / self.history.len() as f64;
            self.smoothing * raw + (1.0 - self.smoothing) * mean
        };
        let lambda = combined.clamp(self.bounds.0, self.bounds.1);
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(lambda);
        Ok(lambda)
    }

    pub fn history(&self) -> impl Iterator<Item = f64> + '_ {
        self.history.iter().copied()
    }
}

impl Default for ConfidenceState {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW, DEFAULT_SMOOTHING, DEFAULT_BOUNDS).expect("defaults are valid")
    }
}
