//! Passage chunking and Okapi BM25 ranking over an instance's documents.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PASSAGE_WORDS: usize = 256;
pub const DEFAULT_PASSAGE_OVERLAP: usize = 32;
pub const DEFAULT_TOP_K: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub doc_id: String,
    pub passage_id: usize,
    pub text: String,
    /// Index of the first word in the document.
    pub start_word: usize,
    pub token_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Case-folded alphanumeric terms.
pub fn terms(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Byte ranges of whitespace-separated words.
fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Splits a document into windows of `size` words that overlap by
/// `overlap` words. A window starts at every multiple of the stride that is
/// still inside the document, so trailing windows may be shorter. Passage text is the
/// original document slice, so inner whitespace is preserved.
pub fn chunk_document(
    doc_id: &str,
    text: &str,
    size: usize,
    overlap: usize,
) -> Result<Vec<Passage>> {
    if size == 0 {
        return Err(Error::InvalidChunking(
            "passage size must be positive".into(),
        ));
    }
    if overlap >= size {
        return Err(Error::InvalidChunking(format!(
            "overlap {overlap} must be smaller than size {size}"
        )));
    }
    let words = word_spans(text);
    let stride = size - overlap;
    let mut passages = Vec::new();
    let mut start = 0;
    while start < words.len() {
        let end = (start + size).min(words.len());
        passages.push(Passage {
            doc_id: doc_id.to_string(),
            passage_id: passages.len(),
            text: text[words[start].0..words[end - 1].1].to_string(),
            start_word: start,
            token_count: end - start,
        });
        start += stride;
    }
    Ok(passages)
}

/// Precomputed BM25 statistics over a fixed set of passages.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    term_freqs: Vec<HashMap<String, usize>>,
    lengths: Vec<usize>,
    doc_freq: HashMap<String, usize>,
    avg_len: f64,
}

impl Bm25Index {
    pub fn new(passages: &[Passage], params: Bm25Params) -> Result<Self> {
        if passages.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if params.k1 <= 0.0 || !params.k1.is_finite() || !(0.0..=1.0).contains(&params.b) {
            return Err(Error::InvalidConfig(format!(
                "BM25 needs k1 > 0 and b in [0, 1], got {params:?}"
            )));
        }
        let mut term_freqs = Vec::with_capacity(passages.len());
        let mut lengths = Vec::with_capacity(passages.len());
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for p in passages {
            let words = terms(&p.text);
            lengths.push(words.len());
            let mut tf: HashMap<String, usize> = HashMap::new();
            for w in words {
                *tf.entry(w).or_default() += 1;
            }
            for term in tf.keys() {
                *doc_freq.entry(term.clone()).or_default() += 1;
            }
            term_freqs.push(tf);
        }
        let avg_len = lengths.iter().sum::<usize>() as f64 / lengths.len() as f64;
        Ok(Self {
            params,
            term_freqs,
            lengths,
            doc_freq,
            avg_len,
        })
    }

    /// `ln((N - n + 0.5) / (n + 0.5) + 1)`, always positive.
    pub fn idf(&self, term: &str) -> f64 {
        let n_docs = self.lengths.len() as f64;
        let n = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        ((n_docs - n + 0.5) / (n + 0.5) + 1.0).ln()
    }

    /// Scores every passage. Repeated query terms contribute once per
    /// occurrence.
    pub fn scores(&self, query: &str) -> Result<Vec<f64>> {
        let query_terms = terms(query);
        if query_terms.is_empty() {
            return Err(Error::EmptyQuery);
        }
        let Bm25Params { k1, b } = self.params;
        let avg_len = self.avg_len.max(f64::MIN_POSITIVE);
        Ok(self
            .term_freqs
            .iter()
            .zip(&self.lengths)
            .map(|(tf, &len)| {
                query_terms
                    .iter()
                    .map(|t| {
                        let f = tf.get(t).copied().unwrap_or(0) as f64;
                        if f == 0.0 {
                            return 0.0;
                        }
                        let norm = k1 * (1.0 - b + b * len as f64 / avg_len);
                        self.idf(t) * f * (k1 + 1.0) / (f + norm)
                    })
                    .sum()
            })
            .collect())
    }

    /// Indices and scores of the best `top_k` passages, highest first. Equal
    /// scores keep input order.
    pub fn rank(&self, query: &str, top_k: usize) -> Result<Vec<(usize, f64)>> {
        let mut ranked: Vec<(usize, f64)> = self.scores(query)?.into_iter().enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        ranked.truncate(top_k);
        Ok(ranked)
    }
}

/// One-shot BM25 ranking with default parameters.
pub fn bm25_rank<'a>(
    query: &str,
    passages: &'a [Passage],
    top_k: usize,
) -> Result<Vec<(&'a Passage, f64)>> {
    let index = Bm25Index::new(passages, Bm25Params::default())?;
    Ok(index
        .rank(query, top_k)?
        .into_iter()
        .map(|(i, s)| (&passages[i], s))
        .collect())
}
