//! Turning dataset sentences into masked token sequences.

use crate::backend::ModelHandle;
use crate::error::{Error, Result};
use crate::lexicon::single_token_id;
use crate::paradigm::{DatasetSentence, GeneratedDataset, Role};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSlot {
    pub role: Role,
    pub position: usize,
    /// Token id to predict; `None` for open probe slots.
    pub target: Option<u32>,
}

/// One sentence with its masked slots already replaced by the mask id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSentence {
    pub sentence_id: String,
    pub ids: Vec<u32>,
    pub slots: Vec<MaskedSlot>,
}

fn target_id(handle: &ModelHandle, at_slot: u32, surface: &str, expected: &str) -> Result<u32> {
    if expected == surface {
        return Ok(at_slot);
    }
    match single_token_id(handle.tokenizer(), expected) {
        Some(id) => Ok(id),
        None => handle.token_id(expected),
    }
}

/// Encodes with delimiters and masks every slot flagged `masked`.
///
/// Each masked slot must come out as exactly one token.
pub fn mask_sentence(handle: &ModelHandle, s: &DatasetSentence) -> Result<MaskedSentence> {
    let enc = handle.encode(&s.text)?;
    let mut ids = enc.ids.clone();
    let mut slots = Vec::new();
    for slot in s.masked_slots() {
        let position = enc.position_of_span(slot.span).ok_or_else(|| {
            Error::Shape(format!("{} slot `{}` is not a single token in `{}`", slot.role, slot.surface, s.text))
        })?;
        let target = match &slot.expected {
            Some(e) => Some(target_id(handle, enc.ids[position], &slot.surface, e)?),
            None => None,
        };
        ids[position] = handle.tokenizer().mask_id();
        slots.push(MaskedSlot {
            role: slot.role,
            position,
            target,
        });
    }
    Ok(MaskedSentence {
        sentence_id: s.id.clone(),
        ids,
        slots,
    })
}

pub fn mask_dataset(handle: &ModelHandle, data: &GeneratedDataset) -> Result<Vec<MaskedSentence>> {
    data.sentences.iter().map(|s| mask_sentence(handle, s)).collect()
}

/// Batch rows, `(row, position)` picks and targets for every slot with a target.
pub fn training_batch(masked: &[MaskedSentence]) -> (Vec<Vec<u32>>, Vec<(usize, usize)>, Vec<u32>) {
    let rows = masked.iter().map(|m| m.ids.clone()).collect();
    let mut picks = Vec::new();
    let mut targets = Vec::new();
    for (r, m) in masked.iter().enumerate() {
        for s in &m.slots {
            if let Some(t) = s.target {
                picks.push((r, s.position));
                targets.push(t);
            }
        }
    }
    (rows, picks, targets)
}
