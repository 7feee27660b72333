//! Confidence-guided copy decoding for long-document question answering.
//!
//! A decoder mixes the language model's next-token distribution with a copy
//! distribution read off a nearest-neighbour index over the context's hidden
//! states. The mixing weight follows the model's confidence: a peaked model
//! distribution leans on the model, a flat one leans on the context.
//!
//! ```
//! use cocolex::decoding::{decode, DecodeInput, Prompt, Strategy, StrategyConfig};
//! use cocolex::model::{ReferenceModelConfig, ReferenceNgramModel};
//!
//! let model = ReferenceNgramModel::new(ReferenceModelConfig::default()).unwrap();
//! let context: Vec<u32> = b"the cap is ten. ".iter().map(|&b| b.into()).collect();
//! let prompt = Prompt::from_context(context, &b"the cap is".map(u32::from));
//! let config = StrategyConfig { max_new_tokens: 8, ..StrategyConfig::new(Strategy::Cocolex) };
//! let out = decode(&model, &DecodeInput::new(&prompt), &config).unwrap();
//! assert_eq!(out.tokens.len(), 8);
//! assert!(out.trace.iter().all(|s| s.lambda.is_some_and(|l| (0.2..=0.8).contains(&l))));
//! ```
//!
//! Modules, bottom up: [`prob`], [`index`], [`confidence`], [`model`],
//! [`decoding`], [`retrieval`], [`evaluation`], and [`harness`] for datasets
//! and experiment runs.

pub mod confidence;
pub mod decoding;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod index;
pub mod model;
pub mod prob;
pub mod retrieval;
pub mod tokenizer;

pub use decoding::{decode, Strategy, StrategyConfig};
pub use error::{Error, Result};
pub use index::{ContextIndex, Metric};
pub use model::{LanguageModel, ReferenceNgramModel};
pub use prob::{Distribution, LogitVector, TokenId};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/distributions.md")]
    mod distributions {}
    #[doc = include_str!("../../../book/src/context-index.md")]
    mod context_index {}
    #[doc = include_str!("../../../book/src/confidence.md")]
    mod confidence {}
    #[doc = include_str!("../../../book/src/strategies.md")]
    mod strategies {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
