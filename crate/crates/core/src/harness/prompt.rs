//! The prompt template.
//!
//! With passages:
//!
//! ```text
//! Context:
//! <passage 1>
//!
//! <passage 2>
//!
//! Question: <query>
//! Answer:
//! ```
//!
//! Without passages the prompt is just the last two lines. The copy index is
//! built over the passages and the blank lines between them.

use crate::decoding::Prompt;
use crate::error::{Error, Result};
use crate::retrieval::Passage;
use crate::tokenizer::Tokenizer;

pub const TEMPLATE_VERSION: &str = "qa-v1";
pub const CONTEXT_HEADER: &str = "Context:\n";
pub const PASSAGE_SEPARATOR: &str = "\n\n";
pub const QUESTION_PREFIX: &str = "Question: ";
pub const ANSWER_CUE: &str = "\nAnswer:";

pub fn question_block(query: &str) -> String {
    format!("{QUESTION_PREFIX}{query}{ANSWER_CUE}")
}

pub fn context_text(passages: &[&Passage]) -> String {
    passages
        .iter()
        .map(|p| p.text.as_str())
        .collect::<Vec<_>>()
        .join(PASSAGE_SEPARATOR)
}

/// Builds the with- and without-context prompts. Fails if the full prompt
/// exceeds `budget` tokens.
pub fn build_prompt<T: Tokenizer + ?Sized>(
    tokenizer: &T,
    query: &str,
    passages: &[&Passage],
    budget: usize,
) -> Result<Prompt> {
    let question = tokenizer.encode(&question_block(query));
    let (tokens, context_span) = if passages.is_empty() {
        (question.clone(), 0..0)
    } else {
        let mut tokens = tokenizer.encode(CONTEXT_HEADER);
        let start = tokens.len();
        tokens.extend(tokenizer.encode(&context_text(passages)));
        let end = tokens.len();
        tokens.extend(tokenizer.encode(PASSAGE_SEPARATOR));
        tokens.extend_from_slice(&question);
        (tokens, start..end)
    };
    if tokens.len() > budget {
        return Err(Error::PromptTooLong {
            tokens: tokens.len(),
            budget,
        });
    }
    Ok(Prompt {
        tokens,
        context_span,
        without_context: question,
    })
}
