//! Byte format for out-of-process model adapters.
//!
//! Every message is a little-endian `u32` payload length followed by the
//! payload.
//!
//! Request payload: `u8` op-name length, op name (`prefill` or `step`),
//! `u32` token count, tokens as `u32`.
//!
//! Response payload: `u32` vocabulary size, `u32` state count `n`, `u32`
//! state dimension `d`, logits as `f32`, then `n * d` states as row-major
//! `f32`. A `step` response carries one state.
//!
//! Only the codec and an in-process server exist; no transport is provided.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::prob::{LogitVector, TokenId};

use super::{LanguageModel, ModelStep, PrefillResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Prefill,
    Step,
}

impl Op {
    fn name(self) -> &'static str {
        match self {
            Op::Prefill => "prefill",
            Op::Step => "step",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub op: Op,
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub logits: Vec<f32>,
    pub dimension: usize,
    /// Row-major, `states.len() / dimension` rows.
    pub states: Vec<f32>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::ShapeError(format!("wire: {}", msg.into()))
}

fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| bad("frame too large"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(payload)?;
    Ok(())
}

fn read_frame<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut payload = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut payload)?;
    Ok(payload)
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.0.len() < n {
            return Err(bad("truncated payload"));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| bad("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl Request {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let name = self.op.name().as_bytes();
        let mut payload = Vec::with_capacity(1 + name.len() + 4 + 4 * self.tokens.len());
        payload.push(name.len() as u8);
        payload.extend_from_slice(name);
        payload.extend_from_slice(&(self.tokens.len() as u32).to_le_bytes());
        for t in &self.tokens {
            payload.extend_from_slice(&t.to_le_bytes());
        }
        write_frame(w, &payload)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let payload = read_frame(r)?;
        let mut c = Cursor(&payload);
        let name_len = c.take(1)?[0] as usize;
        let op = match c.take(name_len)? {
            b"prefill" => Op::Prefill,
            b"step" => Op::Step,
            other => {
                return Err(bad(format!(
                    "unknown op {:?}",
                    String::from_utf8_lossy(other)
                )))
            }
        };
        let n = c.u32()? as usize;
        let tokens = (0..n).map(|_| c.u32()).collect::<Result<_>>()?;
        if !c.0.is_empty() {
            return Err(bad("trailing bytes in request"));
        }
        Ok(Self { op, tokens })
    }
}

impl Response {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        if self.dimension == 0 || !self.states.len().is_multiple_of(self.dimension) {
            return Err(bad("states are not a whole number of rows"));
        }
        let mut payload = Vec::with_capacity(12 + 4 * (self.logits.len() + self.states.len()));
        payload.extend_from_slice(&(self.logits.len() as u32).to_le_bytes());
        payload.extend_from_slice(&((self.states.len() / self.dimension) as u32).to_le_bytes());
        payload.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        for x in self.logits.iter().chain(&self.states) {
            payload.extend_from_slice(&x.to_le_bytes());
        }
        write_frame(w, &payload)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let payload = read_frame(r)?;
        let mut c = Cursor(&payload);
        let vocab = c.u32()? as usize;
        let rows = c.u32()? as usize;
        let dimension = c.u32()? as usize;
        let logits = c.f32s(vocab)?;
        let states = c.f32s(
            rows.checked_mul(dimension)
                .ok_or_else(|| bad("length overflow"))?,
        )?;
        if !c.0.is_empty() {
            return Err(bad("trailing bytes in response"));
        }
        Ok(Self {
            logits,
            dimension,
            states,
        })
    }

    fn last_state(&self) -> Result<Vec<f32>> {
        if self.dimension == 0 || self.states.len() < self.dimension {
            return Err(bad("response carries no state"));
        }
        Ok(self.states[self.states.len() - self.dimension..].to_vec())
    }

    fn logit_vector(&self) -> Result<LogitVector> {
        LogitVector::new(self.logits.iter().map(|&x| x as f64).collect())
    }

    pub fn into_step(self) -> Result<ModelStep> {
        Ok(ModelStep {
            logits: self.logit_vector()?,
            hidden_state: self.last_state()?,
        })
    }

    pub fn into_prefill(self) -> Result<PrefillResult> {
        let final_step = ModelStep {
            logits: self.logit_vector()?,
            hidden_state: self.last_state()?,
        };
        Ok(PrefillResult {
            states: self
                .states
                .chunks_exact(self.dimension)
                .map(<[f32]>::to_vec)
                .collect(),
            final_step,
        })
    }
}

/// Answers a request with a local model, as an adapter process would.
pub fn serve<M: LanguageModel + ?Sized>(model: &M, request: &Request) -> Result<Response> {
    let (logits, states) = match request.op {
        Op::Prefill => {
            let r = model.prefill(&request.tokens)?;
            (r.final_step.logits, r.states.concat())
        }
        Op::Step => {
            let s = model.step(&request.tokens)?;
            (s.logits, s.hidden_state)
        }
    };
    Ok(Response {
        logits: logits.values().iter().map(|&x| x as f32).collect(),
        dimension: model.hidden_dim(),
        states,
    })
}
