//! Line-delimited record interchange.
//!
//! Every artifact that crosses a stage boundary (compiled instances, raw
//! model outputs, parsed states, turn judgements) is one JSON object per
//! line, sorted by instance id before writing so replays are byte-stable.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::codec::{Diagnostic, ParsedState};
use crate::compiler::{CompiledInstance, Provenance};
use crate::error::{Error, Result};
use crate::metrics::TurnJudgement;

/// The interchange form of a compiled instance: the full model input
/// (prompt and context already joined), the target, and provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance_id: String,
    pub input: String,
    pub target: String,
    pub provenance: Provenance,
}

impl From<&CompiledInstance> for InstanceRecord {
    fn from(instance: &CompiledInstance) -> Self {
        InstanceRecord {
            instance_id: instance.instance_id.clone(),
            input: instance.input(),
            target: instance.target.clone(),
            provenance: instance.provenance.clone(),
        }
    }
}

/// One raw decoded string, as dumped by a backend and consumed by replay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawOutputRecord {
    pub instance_id: String,
    pub raw_output: String,
}

/// A parsed prediction: the raw string plus its structured interpretation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedRecord {
    pub instance_id: String,
    pub raw_output: String,
    pub assignments: std::collections::BTreeMap<String, String>,
    pub diagnostics: Vec<Diagnostic>,
}

impl ParsedRecord {
    pub fn new(instance_id: &str, raw_output: &str, parsed: &ParsedState) -> Self {
        ParsedRecord {
            instance_id: instance_id.to_string(),
            raw_output: raw_output.to_string(),
            assignments: parsed.assignments.clone(),
            diagnostics: parsed.diagnostics.clone(),
        }
    }
}

/// Writes records as one JSON object per line.
pub fn write_jsonl<'a, T, I>(path: &Path, records: I) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        writer
            .write_all(line.as_bytes())
            .and_then(|_| writer.write_all(b"\n"))
            .map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?;
    }
    writer.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a line-delimited record file; blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Convenience alias used by the judgement dump.
pub type JudgementRecord = TurnJudgement;
