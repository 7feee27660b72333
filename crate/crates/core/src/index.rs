//! Hidden-state store for context tokens and the copy distribution built from
//! its nearest neighbors.
//!
//! Each entry pairs the hidden state of a context position with the token that
//! follows it. At decode time the current hidden state is compared against
//! every key (exact search), the top-k closest entries are turned into
//! similarities `exp(-distance)`, and the similarities are summed per next
//! token and normalized over the tokens that appear among the neighbors.
//!
//! Snapshot files use a flat little-endian layout:
//!
//! | bytes            | content                          |
//! |------------------|----------------------------------|
//! | 8                | magic `COCOIDX1`                 |
//! | 4                | dimension `d` (u32)              |
//! | 8                | entry count `n` (u64)            |
//! | `4 * n * d`      | keys, row-major f32              |
//! | `4 * n`          | next-token values (u32)          |
//! | `4 * n`          | source positions (u32)           |

use std::cmp::Ordering;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{Distribution, TokenId};

/// A last-layer hidden-state vector.
pub type HiddenState = Vec<f32>;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"COCOIDX1";

/// Distance used to compare hidden states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// L2 distance.
    #[default]
    Euclidean,
    /// `1 - cos(a, b)`. A zero vector has cosine 0 with everything.
    Cosine,
}

impl Metric {
    pub fn distance(self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let d = x as f64 - y as f64;
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
            Metric::Cosine => {
                let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
                for (&x, &y) in a.iter().zip(b) {
                    let (x, y) = (x as f64, y as f64);
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                if na == 0.0 || nb == 0.0 {
                    return 1.0;
                }
                (1.0 - dot / (na.sqrt() * nb.sqrt())).max(0.0)
            }
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" | "l2" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::InvalidConfig(format!("unknown metric `{other}`"))),
        }
    }
}

/// A stored `(hidden state, next token)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub key: HiddenState,
    pub value: TokenId,
    pub position: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<'a> {
    pub entry: &'a IndexEntry,
    pub distance: f64,
    /// `exp(-distance)`.
    pub similarity: f64,
}

/// Exact nearest-neighbor store over context hidden states.
///
/// Built once before decoding starts and never mutated afterwards, so a
/// shared reference can be queried from any number of threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextIndex {
    entries: Vec<IndexEntry>,
    dimension: usize,
    metric: Metric,
}

impl ContextIndex {
    pub fn empty(dimension: usize, metric: Metric) -> Self {
        Self {
            entries: Vec::new(),
            dimension,
            metric,
        }
    }

    /// Pairs the state at each position with the token at the next position.
    /// The last position has no successor and is not stored. Positions are
    /// numbered from 0 at the start of the span.
    pub fn build_from_prefix(
        hidden_states: &[HiddenState],
        tokens: &[TokenId],
        metric: Metric,
    ) -> Result<Self> {
        if hidden_states.len() != tokens.len() {
            return Err(Error::ShapeError(format!(
                "{} hidden states for {} tokens",
                hidden_states.len(),
                tokens.len()
            )));
        }
        if tokens.len() < 2 {
            return Err(Error::EmptyIndex(tokens.len()));
        }
        let mut index = Self::empty(hidden_states[0].len(), metric);
        for (i, pair) in tokens.windows(2).enumerate() {
            index.push(IndexEntry {
                key: hidden_states[i].clone(),
                value: pair[1],
                position: i as u32,
            })?;
        }
        Ok(index)
    }

    /// Indexes a whole document from overlapping chunks, each encoded
    /// independently. A position covered by several chunks takes its state
    /// from the chunk in which it sits furthest from the chunk start, i.e.
    /// where it has seen the most preceding tokens.
    pub fn build_from_document_chunks(
        chunks: &[DocumentChunk],
        chunk_size: usize,
        stride: usize,
        metric: Metric,
    ) -> Result<Self> {
        let Some(last) = chunks.last() else {
            return Err(Error::EmptyIndex(0));
        };
        let doc_len = last.start + last.tokens.len();
        let spans = chunk_spans(doc_len, chunk_size, stride)?;
        if spans.len() != chunks.len() {
            return Err(Error::ShapeError(format!(
                "a document of {doc_len} tokens needs {} chunks, got {}",
                spans.len(),
                chunks.len()
            )));
        }

        let mut doc_tokens: Vec<Option<TokenId>> = vec![None; doc_len];
        let mut assigned: Vec<Option<(usize, usize)>> = vec![None; doc_len];
        let mut dimension = None;
        for (ci, (chunk, span)) in chunks.iter().zip(&spans).enumerate() {
            if chunk.start != span.start || chunk.tokens.len() != span.len() {
                return Err(Error::ShapeError(format!(
                    "chunk {ci} covers {}..{}, expected {}..{}",
                    chunk.start,
                    chunk.start + chunk.tokens.len(),
                    span.start,
                    span.end
                )));
            }
            if chunk.states.len() != chunk.tokens.len() {
                return Err(Error::ShapeError(format!(
                    "chunk {ci} has {} states for {} tokens",
                    chunk.states.len(),
                    chunk.tokens.len()
                )));
            }
            for (offset, (&tok, state)) in chunk.tokens.iter().zip(&chunk.states).enumerate() {
                if *dimension.get_or_insert(state.len()) != state.len() {
                    return Err(Error::ShapeError(format!(
                        "chunk {ci} has a state of dimension {}",
                        state.len()
                    )));
                }
                let pos = chunk.start + offset;
                match doc_tokens[pos] {
                    Some(t) if t != tok => {
                        return Err(Error::ShapeError(format!(
                            "chunks disagree on the token at position {pos}"
                        )))
                    }
                    _ => doc_tokens[pos] = Some(tok),
                }
                if assigned[pos].is_none_or(|(_, best)| offset > best) {
                    assigned[pos] = Some((ci, offset));
                }
            }
        }

        let doc_tokens: Vec<TokenId> = doc_tokens.into_iter().map(Option::unwrap).collect();
        if doc_len < 2 {
            return Err(Error::EmptyIndex(doc_len));
        }
        let mut index = Self::empty(dimension.unwrap_or(0), metric);
        for pos in 0..doc_len - 1 {
            let (ci, offset) = assigned[pos].expect("every position lies in a chunk");
            index.push(IndexEntry {
                key: chunks[ci].states[offset].clone(),
                value: doc_tokens[pos + 1],
                position: pos as u32,
            })?;
        }
        Ok(index)
    }

    fn push(&mut self, entry: IndexEntry) -> Result<()> {
        if entry.key.len() != self.dimension {
            return Err(Error::ShapeError(format!(
                "key of dimension {} in an index of dimension {}",
                entry.key.len(),
                self.dimension
            )));
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Appends all entries of `other`, which must share dimension and metric.
    pub fn extend(&mut self, other: ContextIndex) -> Result<()> {
        if other.metric != self.metric {
            return Err(Error::ShapeError(
                "cannot merge indexes with different metrics".into(),
            ));
        }
        if other.is_empty() {
            return Ok(());
        }
        if self.is_empty() {
            self.dimension = other.dimension;
        }
        for entry in other.entries {
            self.push(entry)?;
        }
        Ok(())
    }

    /// Adds `offset` to every stored position.
    pub fn shift_positions(&mut self, offset: u32) {
        for e in &mut self.entries {
            e.position += offset;
        }
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// Exact top-k search. Results are sorted by ascending distance, ties by
    /// ascending source position.
    pub fn query_top_k(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor<'_>>> {
        if query.len() != self.dimension {
            return Err(Error::ShapeError(format!(
                "query of dimension {} against an index of dimension {}",
                query.len(),
                self.dimension
            )));
        }
        let k = k.min(self.entries.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut scored: Vec<(f64, &IndexEntry)> = self
            .entries
            .iter()
            .map(|e| (self.metric.distance(query, &e.key), e))
            .collect();
        let order = |a: &(f64, &IndexEntry), b: &(f64, &IndexEntry)| -> Ordering {
            a.0.total_cmp(&b.0).then(a.1.position.cmp(&b.1.position))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        Ok(scored
            .into_iter()
            .map(|(distance, entry)| Neighbor {
                entry,
                distance,
                similarity: (-distance).exp(),
            })
            .collect())
    }

    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        let dim = u32::try_from(self.dimension)
            .map_err(|_| Error::Snapshot("dimension exceeds u32".into()))?;
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&dim.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            for x in &e.key {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        for e in &self.entries {
            w.write_all(&e.value.to_le_bytes())?;
        }
        for e in &self.entries {
            w.write_all(&e.position.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a snapshot. The file does not record the metric, so the caller
    /// supplies it.
    pub fn read_snapshot<R: Read>(mut r: R, metric: Metric) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Snapshot("truncated header".into()))?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Snapshot("bad magic".into()));
        }
        let dim = read_u32(&mut r)? as usize;
        let mut count = [0u8; 8];
        r.read_exact(&mut count)
            .map_err(|_| Error::Snapshot("truncated header".into()))?;
        let count = usize::try_from(u64::from_le_bytes(count))
            .map_err(|_| Error::Snapshot("entry count overflows".into()))?;

        let mut keys = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let mut key = Vec::with_capacity(dim);
            for _ in 0..dim {
                key.push(f32::from_bits(read_u32(&mut r)?));
            }
            keys.push(key);
        }
        let mut values = Vec::with_capacity(keys.len());
        for _ in 0..count {
            values.push(read_u32(&mut r)?);
        }
        let mut entries = Vec::with_capacity(keys.len());
        for (key, value) in keys.into_iter().zip(values) {
            entries.push(IndexEntry {
                key,
                value,
                position: read_u32(&mut r)?,
            });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Snapshot("trailing bytes".into()));
        }
        Ok(Self {
            entries,
            dimension: dim,
            metric,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_snapshot(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path, metric: Metric) -> Result<Self> {
        Self::read_snapshot(BufReader::new(File::open(path)?), metric)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Snapshot("unexpected end of file".into()))?;
    Ok(u32::from_le_bytes(buf))
}

/// Normalized copy distribution over the tokens that follow the given
/// neighbors. Tokens that follow none of them get probability 0.
pub fn copy_distribution(neighbors: &[Neighbor<'_>], vocab_size: usize) -> Result<Distribution> {
    if neighbors.is_empty() {
        return Err(Error::EmptyNeighbors);
    }
    // exp(-(d - d_min)) is exp(-d) up to a common factor and cannot underflow
    // to an all-zero vector.
    let d_min = neighbors
        .iter()
        .map(|n| n.distance)
        .fold(f64::INFINITY, f64::min);
    let mut weights = vec![0.0; vocab_size];
    for n in neighbors {
        let slot = weights
            .get_mut(n.entry.value as usize)
            .ok_or(Error::InvalidToken {
                token: n.entry.value,
                vocab_size,
            })?;
        *slot += (d_min - n.distance).exp();
    }
    Distribution::from_weights(weights)
}

/// A chunk of a document encoded on its own.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentChunk {
    /// Offset of the first chunk token in the document.
    pub start: usize,
    pub tokens: Vec<TokenId>,
    pub states: Vec<HiddenState>,
}

/// Sliding windows of width `chunk_size` and step `stride` over a document of
/// `len` tokens. The last window ends at the document end, and windows stop
/// as soon as one reaches it.
pub fn chunk_spans(len: usize, chunk_size: usize, stride: usize) -> Result<Vec<Range<usize>>> {
    if chunk_size == 0 || stride == 0 || stride > chunk_size {
        return Err(Error::InvalidChunking(format!(
            "need 0 < stride <= chunk size, got chunk size {chunk_size} and stride {stride}"
        )));
    }
    let mut spans = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + chunk_size).min(len);
        spans.push(start..end);
        if end == len {
            break;
        }
        start += stride;
    }
    Ok(spans)
}
