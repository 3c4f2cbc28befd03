use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::instruction::{InstructionRecord, Vocab};
use crate::envgraph::{world_to_string, AgentState, EnvGraph};

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: schema violation at `{path}`: {message}")]
    SchemaViolation { line: usize, path: String, message: String },
    #[error("dataset was generated for world {expected}, but the given world hashes to {got}")]
    DatasetWorldMismatch { expected: String, got: String },
    #[error("record {id}: {message}")]
    InvalidRecord { id: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// First line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub version: u32,
    pub world_sha256: String,
    pub vocab: Vocab,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<InstructionRecord>,
}

/// SHA-256 of the canonical world file text.
pub fn world_hash(graph: &EnvGraph) -> String {
    hex::encode(Sha256::digest(world_to_string(graph).as_bytes()))
}

impl Dataset {
    pub fn new(graph: &EnvGraph, vocab: Vocab, records: Vec<InstructionRecord>) -> Self {
        Dataset {
            header: DatasetHeader { version: DATASET_VERSION, world_sha256: world_hash(graph), vocab, count: records.len() },
            records,
        }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.header.vocab
    }

    /// Confirms the dataset belongs to `graph` and that every record replays
    /// to its gold path.
    pub fn validate_against(&self, graph: &EnvGraph) -> Result<(), DatasetError> {
        let got = world_hash(graph);
        if got != self.header.world_sha256 {
            return Err(DatasetError::DatasetWorldMismatch { expected: self.header.world_sha256.clone(), got });
        }
        for r in &self.records {
            let bad = |message: String| DatasetError::InvalidRecord { id: r.id, message };
            if r.tokens.iter().any(|&t| t as usize >= self.header.vocab.len()) {
                return Err(bad("token id outside the vocabulary".into()));
            }
            let states = graph
                .replay(AgentState::start(r.gold_path[0], r.initial_heading), &r.gold_actions)
                .map_err(|e| bad(e.to_string()))?;
            let mut path = vec![states[0].node];
            path.extend(states.windows(2).filter(|w| w[0].node != w[1].node).map(|w| w[1].node));
            if path != r.gold_path {
                return Err(bad("gold actions do not replay to the gold path".into()));
            }
        }
        Ok(())
    }
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let header = DatasetHeader { count: dataset.records.len(), ..dataset.header.clone() };
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    for r in &dataset.records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn parse_line<T: serde::de::DeserializeOwned>(text: &str, line: usize) -> Result<T, DatasetError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| DatasetError::SchemaViolation {
        line,
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, first) = lines.next().ok_or(DatasetError::SchemaViolation {
        line: 1,
        path: ".".into(),
        message: "empty file, expected a header line".into(),
    })?;
    let header: DatasetHeader = parse_line(&first?, 1)?;
    if header.version != DATASET_VERSION {
        return Err(DatasetError::SchemaViolation {
            line: 1,
            path: "version".into(),
            message: format!("unsupported version {}", header.version),
        });
    }
    let mut records = Vec::with_capacity(header.count);
    for (i, text) in lines {
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let record: InstructionRecord = parse_line(&text, i + 1)?;
        record.check_shape().map_err(|message| DatasetError::SchemaViolation { line: i + 1, path: ".".into(), message })?;
        records.push(record);
    }
    if records.len() != header.count {
        return Err(DatasetError::SchemaViolation {
            line: records.len() + 2,
            path: "count".into(),
            message: format!("header declares {} records, file holds {}", header.count, records.len()),
        });
    }
    Ok(Dataset { header, records })
}
