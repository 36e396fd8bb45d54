//! Grouped means with counts and standard errors.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ConfidenceRecord, PredictionRecord};
use crate::error::{Error, Result};
use crate::paradigm::{ArgOrder, RelativeOrder, StructureTag, Voice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Model,
    Tuning,
    Role,
    Alternation,
    Voice,
    AMovement,
    AbarMovement,
    ArgOrder,
    OrderVsTuning,
    Tense,
    Structure,
    Verb,
    Condition,
    Noun,
}

impl GroupKey {
    pub const ALL: [GroupKey; 14] = [
        GroupKey::Model,
        GroupKey::Tuning,
        GroupKey::Role,
        GroupKey::Alternation,
        GroupKey::Voice,
        GroupKey::AMovement,
        GroupKey::AbarMovement,
        GroupKey::ArgOrder,
        GroupKey::OrderVsTuning,
        GroupKey::Tense,
        GroupKey::Structure,
        GroupKey::Verb,
        GroupKey::Condition,
        GroupKey::Noun,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupKey::Model => "model",
            GroupKey::Tuning => "tuning",
            GroupKey::Role => "role",
            GroupKey::Alternation => "alternation",
            GroupKey::Voice => "voice",
            GroupKey::AMovement => "a_movement",
            GroupKey::AbarMovement => "abar_movement",
            GroupKey::ArgOrder => "arg_order",
            GroupKey::OrderVsTuning => "order_vs_tuning",
            GroupKey::Tense => "tense",
            GroupKey::Structure => "structure",
            GroupKey::Verb => "verb",
            GroupKey::Condition => "condition",
            GroupKey::Noun => "noun",
        }
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupKey {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        GroupKey::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown grouping key `{s}`")))
    }
}

fn yes_no(b: bool) -> String {
    if b { "yes" } else { "no" }.into()
}

fn tag_value(tag: &StructureTag, key: GroupKey) -> Option<String> {
    Some(match key {
        GroupKey::Alternation => tag.alternation.label().into(),
        GroupKey::Voice => match tag.voice {
            Voice::Active => "active".into(),
            Voice::Passive => "passive".into(),
        },
        GroupKey::AMovement => yes_no(tag.a_movement),
        GroupKey::AbarMovement => yes_no(tag.abar_movement),
        GroupKey::ArgOrder => match tag.arg_order {
            ArgOrder::SO => "SO".into(),
            ArgOrder::OS => "OS".into(),
        },
        GroupKey::OrderVsTuning => match tag.order_vs_tuning {
            Some(RelativeOrder::Same) => "same".into(),
            Some(RelativeOrder::Reverse) => "reverse".into(),
            None => "none".into(),
        },
        GroupKey::Tense => format!("{:?}", tag.tense_aspect).to_lowercase(),
        _ => return None,
    })
}

/// Something with grouping attributes and a value to average.
pub trait Keyed {
    fn key_value(&self, key: GroupKey) -> String;
    fn value(&self) -> Result<f64>;
}

impl Keyed for PredictionRecord {
    fn key_value(&self, key: GroupKey) -> String {
        let m = &self.meta;
        match key {
            GroupKey::Model => m.model.clone(),
            GroupKey::Tuning => m.tuning.clone(),
            GroupKey::Role => self.role.to_string(),
            GroupKey::Structure => m.structure_id.clone(),
            GroupKey::Verb => m.verb.clone(),
            GroupKey::Condition => m.condition.clone(),
            GroupKey::Noun => String::new(),
            k => tag_value(&m.tag, k).unwrap_or_default(),
        }
    }

    fn value(&self) -> Result<f64> {
        Ok(f64::from(u8::from(self.is_correct()?)))
    }
}

impl Keyed for ConfidenceRecord {
    fn key_value(&self, key: GroupKey) -> String {
        let m = &self.meta;
        match key {
            GroupKey::Model => m.model.clone(),
            GroupKey::Tuning => m.tuning.clone(),
            GroupKey::Role => self.role.to_string(),
            GroupKey::Structure => m.structure_id.clone(),
            GroupKey::Verb => m.verb.clone(),
            GroupKey::Condition => m.condition.clone(),
            GroupKey::Noun => self.noun.clone(),
            k => tag_value(&m.tag, k).unwrap_or_default(),
        }
    }

    fn value(&self) -> Result<f64> {
        Ok(f64::from(u8::from(self.is_correct())))
    }
}

impl<T: Keyed> Keyed for &T {
    fn key_value(&self, key: GroupKey) -> String {
        (*self).key_value(key)
    }
    fn value(&self) -> Result<f64> {
        (*self).value()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    /// One value per grouping key, in key order.
    pub values: Vec<String>,
    pub mean: f64,
    pub count: usize,
    /// Sample standard deviation over √n; zero below two members.
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyBreakdown {
    pub keys: Vec<GroupKey>,
    pub groups: Vec<GroupStat>,
}

impl AccuracyBreakdown {
    pub fn get(&self, values: &[&str]) -> Option<&GroupStat> {
        self.groups
            .iter()
            .find(|g| g.values.iter().map(String::as_str).eq(values.iter().copied()))
    }

    /// Count-weighted mean over all groups.
    pub fn overall(&self) -> Option<f64> {
        let n: usize = self.groups.iter().map(|g| g.count).sum();
        (n > 0).then(|| self.groups.iter().map(|g| g.mean * g.count as f64).sum::<f64>() / n as f64)
    }

    /// Delimited text, one row per group.
    pub fn to_tsv(&self) -> String {
        let mut out: String = self.keys.iter().map(|k| format!("{k}\t")).collect();
        out.push_str("mean\tcount\tstd_err\n");
        for g in &self.groups {
            for v in &g.values {
                out.push_str(v);
                out.push('\t');
            }
            out.push_str(&format!("{:.6}\t{}\t{:.6}\n", g.mean, g.count, g.std_err));
        }
        out
    }
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Groups records by the named keys and averages their values.
pub fn breakdown<R: Keyed>(records: &[R], keys: &[&str]) -> Result<AccuracyBreakdown> {
    let keys: Vec<GroupKey> = keys.iter().map(|k| k.parse()).collect::<Result<_>>()?;
    let mut groups: BTreeMap<Vec<String>, Vec<f64>> = BTreeMap::new();
    for r in records {
        let v: Vec<String> = keys.iter().map(|&k| r.key_value(k)).collect();
        groups.entry(v).or_default().push(r.value()?);
    }
    Ok(AccuracyBreakdown {
        keys,
        groups: groups
            .into_iter()
            .map(|(values, xs)| {
                let (mean, std_err) = mean_and_se(&xs);
                GroupStat {
                    values,
                    mean,
                    count: xs.len(),
                    std_err,
                }
            })
            .collect(),
    })
}

/// `same − reverse` for every combination of the other keys.
pub fn penalty(b: &AccuracyBreakdown) -> Result<BTreeMap<Vec<String>, f64>> {
    let at = b
        .keys
        .iter()
        .position(|&k| k == GroupKey::OrderVsTuning)
        .ok_or_else(|| Error::Config("penalty needs an order_vs_tuning grouping".into()))?;
    let mut cells: BTreeMap<Vec<String>, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for g in &b.groups {
        let mut rest = g.values.clone();
        let order = rest.remove(at);
        let e = cells.entry(rest).or_default();
        match order.as_str() {
            "same" => e.0 = Some(g.mean),
            "reverse" => e.1 = Some(g.mean),
            _ => {}
        }
    }
    Ok(cells
        .into_iter()
        .filter_map(|(k, (s, r))| Some((k, s? - r?)))
        .collect())
}
