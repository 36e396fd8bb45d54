//! Metrics over scored positions: positionwise and cross-position accuracy,
//! confidence, conditioning on the tuning structure, and grouped breakdowns.

pub mod breakdown;
pub mod score;
pub mod trajectory;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paradigm::{Role, StructureTag};

pub use breakdown::{breakdown, penalty, AccuracyBreakdown, GroupKey, GroupStat, Keyed};
pub use score::{score_exp1, score_exp2, Exp1Validator, Exp2Validator, PositionScores};
pub use trajectory::{
    curves_from_trajectory, history_from_jsonl, history_to_jsonl, track_trajectory, ConfidenceCurve, EpochConfidence,
};

/// Floor applied to log-probabilities before taking differences.
pub const LOG_PROB_FLOOR: f64 = -30.0;

/// Where a record came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub model: String,
    pub sentence_id: String,
    pub structure_id: String,
    pub tag: StructureTag,
    pub verb: String,
    /// Fine-tuning regimen the model went through, e.g. `TO` or `GO`.
    pub tuning: String,
    pub condition: String,
}

/// Log-probabilities of candidate tokens at one masked position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(flatten)]
    pub meta: RecordMeta,
    pub role: Role,
    pub position: usize,
    pub candidates: Vec<u32>,
    pub log_probs: Vec<f64>,
    pub expected: u32,
    pub unexpected: u32,
}

impl PredictionRecord {
    pub fn log_prob(&self, token: u32) -> Result<f64> {
        self.candidates
            .iter()
            .position(|&c| c == token)
            .map(|i| self.log_probs[i])
            .ok_or_else(|| Error::Metric(format!("token {token} not scored in `{}`", self.meta.sentence_id)))
    }

    pub fn is_correct(&self) -> Result<bool> {
        position_accuracy_exp1(self, self.expected, self.unexpected)
    }
}

/// True iff the expected token beats the unexpected one; ties are wrong.
pub fn position_accuracy_exp1(rec: &PredictionRecord, expected: u32, unexpected: u32) -> Result<bool> {
    Ok(rec.log_prob(expected)? > rec.log_prob(unexpected)?)
}

/// Underlying argument role of a noun, independent of surface position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgRole {
    Subject,
    Object,
}

impl ArgRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ArgRole::Subject => "subject",
            ArgRole::Object => "object",
        }
    }
}

impl fmt::Display for ArgRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRecord {
    #[serde(flatten)]
    pub meta: RecordMeta,
    pub noun: String,
    pub noun_id: u32,
    pub role: ArgRole,
    /// The position where the noun belongs.
    pub position: usize,
    pub other_position: usize,
    pub log_p: f64,
    pub log_p_other: f64,
    pub confidence: f64,
}

impl ConfidenceRecord {
    pub fn is_correct(&self) -> bool {
        self.confidence > 0.0
    }
}

fn floored(x: f64) -> f64 {
    if x.is_nan() {
        LOG_PROB_FLOOR
    } else {
        x.max(LOG_PROB_FLOOR)
    }
}

fn paired<'a>(noun: u32, p: &'a PositionScores, other: &'a PositionScores) -> Result<(f64, f64)> {
    if p.sentence_id != other.sentence_id {
        return Err(Error::Pairing(format!(
            "positions come from `{}` and `{}`",
            p.sentence_id, other.sentence_id
        )));
    }
    if p.position == other.position {
        return Err(Error::Pairing(format!("both positions are {} in `{}`", p.position, p.sentence_id)));
    }
    Ok((floored(p.log_prob(noun)?), floored(other.log_prob(noun)?)))
}

/// True iff the noun is likelier where it belongs than in the other position.
pub fn cross_position_accuracy_exp2(noun: u32, p: &PositionScores, other: &PositionScores) -> Result<bool> {
    let (a, b) = paired(noun, p, other)?;
    Ok(a > b)
}

/// `log p(n|P) − log p(n|P′)` with both terms floored at [`LOG_PROB_FLOOR`].
pub fn confidence(
    meta: RecordMeta,
    noun: &str,
    noun_id: u32,
    role: ArgRole,
    p: &PositionScores,
    other: &PositionScores,
) -> Result<ConfidenceRecord> {
    let (log_p, log_p_other) = paired(noun_id, p, other)?;
    Ok(ConfidenceRecord {
        meta,
        noun: noun.to_string(),
        noun_id,
        role,
        position: p.position,
        other_position: other.position,
        log_p,
        log_p_other,
        confidence: log_p - log_p_other,
    })
}

/// A record that can be conditioned on its tuning-structure counterpart.
pub trait Conditioned {
    /// Identifies the tuning-structure record this one depends on.
    fn condition_key(&self) -> String;
    fn correct(&self) -> Result<bool>;
}

impl Conditioned for PredictionRecord {
    fn condition_key(&self) -> String {
        format!("{}|{}|{}", self.meta.model, self.role, self.meta.condition)
    }
    fn correct(&self) -> Result<bool> {
        self.is_correct()
    }
}

impl Conditioned for ConfidenceRecord {
    fn condition_key(&self) -> String {
        format!("{}|{}|{}", self.meta.model, self.noun, self.meta.condition)
    }
    fn correct(&self) -> Result<bool> {
        Ok(self.is_correct())
    }
}

/// Test records whose tuning-structure counterpart was predicted correctly.
///
/// A key with several tuning records counts as correct only if all are.
pub fn conditional_filter<'a, R: Conditioned>(test: &'a [R], tuning: &[R]) -> Result<Vec<&'a R>> {
    let mut ok: HashMap<String, bool> = HashMap::new();
    for t in tuning {
        let c = t.correct()?;
        ok.entry(t.condition_key()).and_modify(|v| *v &= c).or_insert(c);
    }
    let mut out = Vec::new();
    for r in test {
        let key = r.condition_key();
        match ok.get(&key) {
            Some(true) => out.push(r),
            Some(false) => {}
            None => return Err(Error::Coverage(key)),
        }
    }
    Ok(out)
}

/// Breakdown of the conditioned test records by `keys`.
pub fn conditional_accuracy<R: Conditioned + Keyed>(
    test: &[R],
    tuning: &[R],
    keys: &[&str],
) -> Result<AccuracyBreakdown> {
    let kept = conditional_filter(test, tuning)?;
    breakdown(&kept, keys)
}

/// Mean of a boolean stream, `None` when empty.
pub fn mean_accuracy<I: IntoIterator<Item = bool>>(it: I) -> Option<f64> {
    let (mut n, mut k) = (0usize, 0usize);
    for b in it {
        n += 1;
        k += usize::from(b);
    }
    (n > 0).then(|| k as f64 / n as f64)
}

/// Mean confidence by underlying role.
pub fn role_means(records: &[ConfidenceRecord]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = acc.entry(r.role.to_string()).or_default();
        e.0 += r.confidence;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}
