//! JSON-lines datasets: one instance per line.
//!
//! ```text
//! {"id": "q1", "query": "...", "documents": [{"doc_id": "d1", "text": "..."}], "reference_answer": "..."}
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub id: String,
    pub query: String,
    pub documents: Vec<Document>,
    pub reference_answer: String,
}

/// Parses a dataset, reporting the first malformed line by its 1-based
/// number. Blank lines are skipped.
pub fn parse_dataset<R: BufRead>(reader: R) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let instance: Instance = serde_json::from_str(&line).map_err(|e| Error::Dataset {
            line: line_no,
            message: e.to_string(),
        })?;
        let fail = |message: String| Error::Dataset {
            line: line_no,
            message,
        };
        if instance.id.is_empty() {
            return Err(fail("empty id".into()));
        }
        if instance.documents.is_empty() {
            return Err(fail(format!("instance `{}` has no documents", instance.id)));
        }
        if !ids.insert(instance.id.clone()) {
            return Err(fail(format!("duplicate id `{}`", instance.id)));
        }
        out.push(instance);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Instance>> {
    parse_dataset(BufReader::new(File::open(path)?))
}

pub fn write_dataset<W: Write>(mut w: W, instances: &[Instance]) -> Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
