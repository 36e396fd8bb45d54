//! Mean-confidence curves over fine-tuning epochs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{role_means, ConfidenceRecord};
use crate::error::Result;
use crate::tuning::TuningTrajectory;

/// Confidence records of one validation subpart at one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochConfidence {
    pub epoch: usize,
    pub subpart: String,
    pub records: Vec<ConfidenceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceCurve {
    pub subpart: String,
    pub role: String,
    /// `(epoch, mean confidence)`, one point per epoch.
    pub points: Vec<(usize, f64)>,
}

fn collect(points: impl Iterator<Item = (String, String, usize, f64)>) -> Vec<ConfidenceCurve> {
    let mut curves: BTreeMap<(String, String), Vec<(usize, f64)>> = BTreeMap::new();
    for (subpart, role, epoch, v) in points {
        curves.entry((subpart, role)).or_default().push((epoch, v));
    }
    curves
        .into_iter()
        .map(|((subpart, role), points)| ConfidenceCurve { subpart, role, points })
        .collect()
}

/// Curves per (subpart, role) rebuilt from persisted per-epoch records.
pub fn track_trajectory(history: &[EpochConfidence]) -> Vec<ConfidenceCurve> {
    collect(history.iter().flat_map(|h| {
        role_means(&h.records)
            .into_iter()
            .map(move |(role, v)| (h.subpart.clone(), role, h.epoch, v))
    }))
}

/// The same curves as recorded live in a tuning trajectory.
pub fn curves_from_trajectory(t: &TuningTrajectory) -> Vec<ConfidenceCurve> {
    collect(t.epochs.iter().flat_map(|e| {
        e.validation.iter().flat_map(move |s| {
            s.role_confidence
                .iter()
                .map(move |(role, v)| (s.name.clone(), role.clone(), e.epoch, *v))
        })
    }))
}

/// One JSON line per (epoch, subpart).
pub fn history_to_jsonl(history: &[EpochConfidence]) -> Result<String> {
    let mut out = String::new();
    for h in history {
        out.push_str(&serde_json::to_string(h)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn history_from_jsonl(src: &str) -> Result<Vec<EpochConfidence>> {
    Ok(src
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<std::result::Result<_, _>>()?)
}
