//! Generated datasets and their JSONL form.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::template::{Realized, Role, StructureTag};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Finetune,
    ValidationSubpart,
    Test,
    Probe,
}

/// One realized slot and what the mask plan does with it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub role: Role,
    pub span: (usize, usize),
    pub surface: String,
    /// Token the model should predict here; `None` for open probes.
    pub expected: Option<String>,
    pub masked: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSentence {
    pub id: String,
    pub text: String,
    pub structure_id: String,
    pub tag: StructureTag,
    pub verb: String,
    /// Lexical context shared with the matching tuning-structure sentence.
    pub condition: String,
    pub slots: Vec<SlotRecord>,
}

impl DatasetSentence {
    pub(crate) fn from_realized(
        id: String,
        structure_id: &str,
        tag: StructureTag,
        verb: &str,
        condition: String,
        realized: Realized,
        plan: impl Fn(Role, &str) -> (Option<String>, bool),
    ) -> Self {
        let slots = realized
            .slots
            .into_iter()
            .map(|s| {
                let (expected, masked) = plan(s.role, &s.surface);
                SlotRecord {
                    role: s.role,
                    span: s.span,
                    surface: s.surface,
                    expected,
                    masked,
                }
            })
            .collect();
        Self {
            id,
            text: realized.text,
            structure_id: structure_id.to_string(),
            tag,
            verb: verb.to_string(),
            condition,
            slots,
        }
    }

    pub fn masked_slots(&self) -> impl Iterator<Item = &SlotRecord> {
        self.slots.iter().filter(|s| s.masked)
    }

    pub fn mask_count(&self) -> usize {
        self.masked_slots().count()
    }

    pub fn slot(&self, role: Role) -> Option<&SlotRecord> {
        self.slots.iter().find(|s| s.role == role)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedDataset {
    pub name: String,
    pub purpose: Purpose,
    pub sentences: Vec<DatasetSentence>,
}

impl GeneratedDataset {
    pub fn new(name: impl Into<String>, purpose: Purpose, sentences: Vec<DatasetSentence>) -> Self {
        Self {
            name: name.into(),
            purpose,
            sentences,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.sentences.iter().map(|s| s.text.as_str()).collect()
    }

    /// One JSON object per line: a header line, then one line per sentence.
    pub fn to_jsonl(&self) -> Result<String> {
        let header = serde_json::json!({ "name": self.name, "purpose": self.purpose });
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for s in &self.sentences {
            out.push_str(&serde_json::to_string(s)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(src: &str) -> Result<Self> {
        let mut lines = src.lines().filter(|l| !l.trim().is_empty());
        let header: serde_json::Value = match lines.next() {
            Some(l) => serde_json::from_str(l)?,
            None => return Err(Error::Config("empty dataset file".into())),
        };
        let name = header["name"]
            .as_str()
            .ok_or_else(|| Error::Config("dataset header lacks a name".into()))?
            .to_string();
        let purpose: Purpose = serde_json::from_value(header["purpose"].clone())?;
        let sentences = lines.map(serde_json::from_str).collect::<std::result::Result<_, _>>()?;
        Ok(Self { name, purpose, sentences })
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut src = String::new();
        for line in BufReader::new(f).lines() {
            src.push_str(&line.map_err(|e| Error::io(path, e))?);
            src.push('\n');
        }
        Self::from_jsonl(&src)
    }

    /// Hex sha256 of the JSONL form.
    pub fn content_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_jsonl()?.as_bytes())))
    }
}
