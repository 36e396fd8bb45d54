//! Reading predictions off a model for both experiments, and the validators
//! that do so during fine-tuning.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{confidence, role_means, ArgRole, ConfidenceRecord, EpochConfidence, PredictionRecord, RecordMeta};
use crate::backend::ModelHandle;
use crate::error::{Error, Result};
use crate::lexicon::{single_token_id, ArgumentNounSet};
use crate::paradigm::{DatasetSentence, GeneratedDataset, NovelWords, Role};
use crate::tuning::{mask_dataset, MaskedSentence, SubpartEval, Validator};

/// Candidate log-probabilities at one position of one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionScores {
    pub sentence_id: String,
    pub position: usize,
    pub candidates: Vec<u32>,
    pub log_probs: Vec<f64>,
}

impl PositionScores {
    pub fn log_prob(&self, token: u32) -> Result<f64> {
        self.candidates
            .iter()
            .position(|&c| c == token)
            .map(|i| self.log_probs[i])
            .ok_or_else(|| Error::Metric(format!("token {token} not scored at {}:{}", self.sentence_id, self.position)))
    }
}

fn meta(model: &str, tuning: &str, s: &DatasetSentence) -> RecordMeta {
    RecordMeta {
        model: model.to_string(),
        sentence_id: s.id.clone(),
        structure_id: s.structure_id.clone(),
        tag: s.tag.clone(),
        verb: s.verb.clone(),
        tuning: tuning.to_string(),
        condition: s.condition.clone(),
    }
}

fn score_exp1_masked(
    handle: &ModelHandle,
    data: &GeneratedDataset,
    masked: &[MaskedSentence],
    novel: &NovelWords,
    model: &str,
    tuning: &str,
) -> Result<Vec<PredictionRecord>> {
    let theme = handle.token_id(&novel.theme)?;
    let goal = handle.token_id(&novel.goal)?;
    let rows: Vec<Vec<u32>> = masked.iter().map(|m| m.ids.clone()).collect();
    let mut picks = Vec::new();
    let mut owners = Vec::new();
    for (r, m) in masked.iter().enumerate() {
        for slot in &m.slots {
            if let Some(t) = slot.target {
                picks.push((r, slot.position));
                owners.push((r, slot.role, slot.position, t));
            }
        }
    }
    let candidates = vec![theme, goal];
    let lp = handle.candidate_log_probs(&rows, &picks, &candidates)?;
    owners
        .into_iter()
        .zip(lp)
        .map(|((r, role, position, expected), log_probs)| {
            let unexpected = match expected {
                e if e == theme => goal,
                e if e == goal => theme,
                other => {
                    return Err(Error::Metric(format!(
                        "expected token {other} in `{}` is not a novel token",
                        data.sentences[r].id
                    )))
                }
            };
            Ok(PredictionRecord {
                meta: meta(model, tuning, &data.sentences[r]),
                role,
                position,
                candidates: candidates.clone(),
                log_probs,
                expected,
                unexpected,
            })
        })
        .collect()
}

/// One record per masked novel-token slot, scoring both novel tokens.
pub fn score_exp1(
    handle: &ModelHandle,
    data: &GeneratedDataset,
    novel: &NovelWords,
    model: &str,
    tuning: &str,
) -> Result<Vec<PredictionRecord>> {
    let masked = mask_dataset(handle, data)?;
    score_exp1_masked(handle, data, &masked, novel, model, tuning)
}

fn noun_ids(handle: &ModelHandle, nouns: &ArgumentNounSet) -> Result<Vec<(String, u32, ArgRole)>> {
    let mut out = Vec::new();
    for (list, role) in [(&nouns.subject_nouns, ArgRole::Subject), (&nouns.object_nouns, ArgRole::Object)] {
        for n in list {
            let id = single_token_id(handle.tokenizer(), n).ok_or_else(|| Error::MissingToken(n.clone()))?;
            out.push((n.clone(), id, role));
        }
    }
    Ok(out)
}

/// Distinct masked inputs with their subject and object positions.
struct Exp2Inputs {
    /// Index of the first sentence with each input.
    first: Vec<usize>,
    rows: Vec<Vec<u32>>,
    positions: Vec<(usize, usize)>,
    /// Input index of every sentence.
    of_sentence: Vec<usize>,
}

fn exp2_inputs(data: &GeneratedDataset, masked: &[MaskedSentence]) -> Result<Exp2Inputs> {
    let mut seen: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut inputs = Exp2Inputs {
        first: vec![],
        rows: vec![],
        positions: vec![],
        of_sentence: vec![],
    };
    for (i, m) in masked.iter().enumerate() {
        let pos = |role: Role| {
            m.slots.iter().find(|s| s.role == role).map(|s| s.position).ok_or_else(|| {
                Error::Metric(format!("`{}` has no masked {role} slot", data.sentences[i].id))
            })
        };
        let (sp, op) = (pos(Role::Subject)?, pos(Role::Theme)?);
        let k = *seen.entry(m.ids.clone()).or_insert_with(|| {
            inputs.first.push(i);
            inputs.rows.push(m.ids.clone());
            inputs.positions.push((sp, op));
            inputs.rows.len() - 1
        });
        inputs.of_sentence.push(k);
    }
    Ok(inputs)
}

struct Exp2Scores {
    records: Vec<ConfidenceRecord>,
    /// Mean `−log p(target)` over every masked argument slot of every sentence.
    loss: f64,
}

fn score_exp2_masked(
    handle: &ModelHandle,
    data: &GeneratedDataset,
    masked: &[MaskedSentence],
    nouns: &[(String, u32, ArgRole)],
    model: &str,
    tuning: &str,
) -> Result<Exp2Scores> {
    let inputs = exp2_inputs(data, masked)?;
    let candidates: Vec<u32> = nouns.iter().map(|n| n.1).collect();
    let picks: Vec<(usize, usize)> = inputs
        .positions
        .iter()
        .enumerate()
        .flat_map(|(r, &(sp, op))| [(r, sp), (r, op)])
        .collect();
    let lp = handle.candidate_log_probs(&inputs.rows, &picks, &candidates)?;
    let mut records = Vec::with_capacity(inputs.rows.len() * nouns.len());
    for (k, &(sp, op)) in inputs.positions.iter().enumerate() {
        let s = &data.sentences[inputs.first[k]];
        let at = |position: usize, row: &Vec<f64>| PositionScores {
            sentence_id: s.id.clone(),
            position,
            candidates: candidates.clone(),
            log_probs: row.clone(),
        };
        let subj = at(sp, &lp[2 * k]);
        let obj = at(op, &lp[2 * k + 1]);
        for (noun, id, role) in nouns {
            let (p, other) = match role {
                ArgRole::Subject => (&subj, &obj),
                ArgRole::Object => (&obj, &subj),
            };
            records.push(confidence(meta(model, tuning, s), noun, *id, *role, p, other)?);
        }
    }
    let index: HashMap<u32, usize> = candidates.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut loss = 0.0;
    let mut n = 0usize;
    for (i, m) in masked.iter().enumerate() {
        let k = inputs.of_sentence[i];
        for slot in &m.slots {
            let Some(t) = slot.target else { continue };
            let row = match slot.role {
                Role::Subject => &lp[2 * k],
                Role::Theme => &lp[2 * k + 1],
                _ => continue,
            };
            let j = index
                .get(&t)
                .ok_or_else(|| Error::Metric(format!("target {t} of `{}` is outside the noun set", data.sentences[i].id)))?;
            loss -= row[*j];
            n += 1;
        }
    }
    Ok(Exp2Scores {
        records,
        loss: if n > 0 { loss / n as f64 } else { f64::NAN },
    })
}

/// Every noun of the set scored at both argument positions of each distinct masked input.
pub fn score_exp2(
    handle: &ModelHandle,
    data: &GeneratedDataset,
    nouns: &ArgumentNounSet,
    model: &str,
    tuning: &str,
) -> Result<Vec<ConfidenceRecord>> {
    let masked = mask_dataset(handle, data)?;
    let ids = noun_ids(handle, nouns)?;
    Ok(score_exp2_masked(handle, data, &masked, &ids, model, tuning)?.records)
}

/// Validation for the alternation experiment: loss, accuracy and mean
/// `log p(expected) − log p(unexpected)` per subpart.
pub struct Exp1Validator {
    subparts: Vec<(GeneratedDataset, Vec<MaskedSentence>)>,
    novel: NovelWords,
}

impl Exp1Validator {
    pub fn new(handle: &ModelHandle, subparts: Vec<GeneratedDataset>, novel: NovelWords) -> Result<Self> {
        let subparts = subparts
            .into_iter()
            .map(|d| {
                let m = mask_dataset(handle, &d)?;
                Ok((d, m))
            })
            .collect::<Result<_>>()?;
        Ok(Self { subparts, novel })
    }
}

impl Validator for Exp1Validator {
    fn evaluate(&mut self, handle: &ModelHandle) -> Result<Vec<SubpartEval>> {
        let mut out = Vec::new();
        for (data, masked) in &self.subparts {
            let recs = score_exp1_masked(handle, data, masked, &self.novel, "", "")?;
            let n = recs.len().max(1) as f64;
            let mut loss = 0.0;
            let mut hits = 0usize;
            let mut conf: BTreeMap<String, (f64, usize)> = BTreeMap::new();
            let mut total_conf = 0.0;
            for r in &recs {
                let e = r.log_prob(r.expected)?;
                let u = r.log_prob(r.unexpected)?;
                loss -= e;
                hits += usize::from(r.is_correct()?);
                let c = e.max(super::LOG_PROB_FLOOR) - u.max(super::LOG_PROB_FLOOR);
                total_conf += c;
                let slot = conf.entry(r.role.to_string()).or_default();
                slot.0 += c;
                slot.1 += 1;
            }
            out.push(SubpartEval {
                name: data.name.clone(),
                loss: loss / n,
                accuracy: hits as f64 / n,
                mean_confidence: Some(total_conf / n),
                role_confidence: conf.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect(),
            });
        }
        Ok(out)
    }
}

/// Validation for the novel-verb experiment. Keeps every epoch's
/// confidence records so curves can be rebuilt later.
pub struct Exp2Validator {
    subparts: Vec<(GeneratedDataset, Vec<MaskedSentence>)>,
    nouns: Vec<(String, u32, ArgRole)>,
    pub history: Vec<EpochConfidence>,
    epoch: usize,
}

impl Exp2Validator {
    pub fn new(handle: &ModelHandle, subparts: Vec<GeneratedDataset>, nouns: &ArgumentNounSet) -> Result<Self> {
        let subparts = subparts
            .into_iter()
            .map(|d| {
                let m = mask_dataset(handle, &d)?;
                Ok((d, m))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            subparts,
            nouns: noun_ids(handle, nouns)?,
            history: vec![],
            epoch: 0,
        })
    }
}

impl Validator for Exp2Validator {
    fn evaluate(&mut self, handle: &ModelHandle) -> Result<Vec<SubpartEval>> {
        let mut out = Vec::new();
        for (data, masked) in &self.subparts {
            let s = score_exp2_masked(handle, data, masked, &self.nouns, "", "")?;
            let n = s.records.len().max(1) as f64;
            let hits = s.records.iter().filter(|r| r.is_correct()).count();
            out.push(SubpartEval {
                name: data.name.clone(),
                loss: s.loss,
                accuracy: hits as f64 / n,
                mean_confidence: Some(s.records.iter().map(|r| r.confidence).sum::<f64>() / n),
                role_confidence: role_means(&s.records),
            });
            self.history.push(EpochConfidence {
                epoch: self.epoch,
                subpart: data.name.clone(),
                records: s.records,
            });
        }
        self.epoch += 1;
        Ok(out)
    }
}
