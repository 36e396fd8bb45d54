//! Novel tokens and the two argument-noun selection procedures.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::backend::{ModelHandle, Tokenizer};
use crate::error::{Error, Result};
use crate::paradigm::template::{Realized, Role};

/// Nouns per argument role in a neutral set.
pub const NOUNS_PER_ROLE: usize = 6;
/// Ranked indices that become subject nouns; the rest become objects.
pub const SUBJECT_RANKS: [usize; 6] = [0, 3, 4, 7, 10, 11];
/// Shortest candidate kept by the pool filter is one character longer.
pub const MIN_CANDIDATE_CHARS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NovelRole {
    Theme,
    Goal,
    Verb,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NovelToken {
    pub surface: String,
    pub role: NovelRole,
    pub init_seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArgumentNounSet {
    pub subject_nouns: Vec<String>,
    pub object_nouns: Vec<String>,
    /// Neutrality score of every scored candidate.
    pub scores: BTreeMap<String, f64>,
}

impl ArgumentNounSet {
    pub fn role_of(&self, noun: &str) -> Option<Role> {
        if self.subject_nouns.iter().any(|n| n == noun) {
            Some(Role::Subject)
        } else if self.object_nouns.iter().any(|n| n == noun) {
            Some(Role::Theme)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyNounSet {
    pub good_subjects: Vec<(String, u64)>,
    pub good_objects: Vec<(String, u64)>,
}

/// Id of `word` when it is a single token in running text.
pub fn single_token_id(tok: &Tokenizer, word: &str) -> Option<u32> {
    if !tok.is_single_token(word) {
        return None;
    }
    tok.encode(&format!("the {word}"), false).ok()?.ids.last().copied()
}

/// Candidates longer than three characters that tokenize as one piece, deduplicated.
pub fn filter_candidate_pool(tok: &Tokenizer, pool: &[String]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    pool.iter()
        .filter(|w| w.chars().count() > MIN_CANDIDATE_CHARS)
        .filter(|w| seen.insert(w.to_string()))
        .filter(|w| single_token_id(tok, w).is_some())
        .cloned()
        .collect()
}

/// Mean over sentences of the squared log-odds; zero iff every log-odds is zero.
pub fn neutrality_score(log_odds: &[f64]) -> f64 {
    if log_odds.is_empty() {
        return 0.0;
    }
    log_odds.iter().map(|x| x * x).sum::<f64>() / log_odds.len() as f64
}

/// Candidates sorted by ascending score, ties broken by the token string.
pub fn rank_by_neutrality(log_odds: &BTreeMap<String, Vec<f64>>) -> Vec<(String, f64)> {
    let mut ranked: Vec<(String, f64)> = log_odds
        .iter()
        .map(|(n, lo)| (n.clone(), neutrality_score(lo)))
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

/// Splits the twelve best-ranked candidates into subject and object nouns.
pub fn assign_roles(ranked: &[(String, f64)]) -> Result<ArgumentNounSet> {
    let needed = 2 * NOUNS_PER_ROLE;
    if ranked.len() < needed {
        return Err(Error::InsufficientCandidates {
            found: ranked.len(),
            needed,
        });
    }
    let mut set = ArgumentNounSet {
        scores: ranked.iter().cloned().collect(),
        ..Default::default()
    };
    for (i, (noun, _)) in ranked.iter().take(needed).enumerate() {
        if SUBJECT_RANKS.contains(&i) {
            set.subject_nouns.push(noun.clone());
        } else {
            set.object_nouns.push(noun.clone());
        }
    }
    Ok(set)
}

/// Picks twelve nouns whose subject/object log-odds are closest to zero.
///
/// Each scoring sentence must realize one subject and one theme slot; both
/// are masked together and every candidate is read off both positions.
pub fn select_neutral_nouns(
    handle: &ModelHandle,
    scoring_sentences: &[Realized],
    candidate_pool: &[String],
) -> Result<ArgumentNounSet> {
    let tok = handle.tokenizer();
    let pool = filter_candidate_pool(tok, candidate_pool);
    if pool.len() < 2 * NOUNS_PER_ROLE {
        return Err(Error::InsufficientCandidates {
            found: pool.len(),
            needed: 2 * NOUNS_PER_ROLE,
        });
    }
    let ids: Vec<u32> = pool
        .iter()
        .map(|w| single_token_id(tok, w).expect("filtered"))
        .collect();
    let mut batch = Vec::with_capacity(scoring_sentences.len());
    let mut picks = Vec::with_capacity(2 * scoring_sentences.len());
    for (row, s) in scoring_sentences.iter().enumerate() {
        let enc = handle.encode(&s.text)?;
        let pos = |role: Role| -> Result<usize> {
            let slot = s
                .slot(role)
                .ok_or_else(|| Error::Selection(format!("scoring sentence lacks a {role} slot: {}", s.text)))?;
            enc.position_of_span(slot.span)
                .ok_or_else(|| Error::Selection(format!("{role} slot is not one token in: {}", s.text)))
        };
        let (sp, op) = (pos(Role::Subject)?, pos(Role::Theme)?);
        let mut masked = enc.ids.clone();
        masked[sp] = tok.mask_id();
        masked[op] = tok.mask_id();
        batch.push(masked);
        picks.push((row, sp));
        picks.push((row, op));
    }
    let rows = handle.candidate_log_probs(&batch, &picks, &ids)?;
    let mut log_odds: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for pair in rows.chunks(2) {
        for (j, noun) in pool.iter().enumerate() {
            log_odds.entry(noun.clone()).or_default().push(pair[0][j] - pair[1][j]);
        }
    }
    assign_roles(&rank_by_neutrality(&log_odds))
}

/// Reads a two-column (token, count) table; tab, comma or space separated.
pub fn read_frequency_table(path: &Path) -> Result<Vec<(String, u64)>> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_frequency_table(&src)
}

pub fn parse_frequency_table(src: &str) -> Result<Vec<(String, u64)>> {
    let mut out = Vec::new();
    for (n, line) in src.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split(['\t', ',', ' ']).filter(|c| !c.is_empty());
        let (Some(tok), Some(count)) = (cols.next(), cols.next()) else {
            return Err(Error::Config(format!("frequency table line {} has fewer than two columns", n + 1)));
        };
        let count = count
            .parse()
            .map_err(|_| Error::Config(format!("bad count `{count}` on line {}", n + 1)))?;
        out.push((tok.to_string(), count));
    }
    Ok(out)
}

fn top_k(table: &[(String, u64)], k: usize, keep: &impl Fn(&str) -> bool) -> Vec<(String, u64)> {
    let mut rows: Vec<(String, u64)> = table.iter().filter(|(t, _)| keep(t)).cloned().collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    rows.dedup_by(|a, b| a.0 == b.0);
    rows.truncate(k);
    rows
}

/// Top-k nouns for each pattern minus those also in the other pattern's top-k.
///
/// `keep` is the whole-word tokenization filter, applied before ranking.
pub fn select_frequency_disjoint_nouns(
    subject_table: &[(String, u64)],
    object_table: &[(String, u64)],
    k: usize,
    keep: impl Fn(&str) -> bool,
) -> Result<FrequencyNounSet> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let subj = top_k(subject_table, k, &keep);
    let obj = top_k(object_table, k, &keep);
    let subj_words: BTreeSet<&str> = subj.iter().map(|(t, _)| t.as_str()).collect();
    let obj_words: BTreeSet<&str> = obj.iter().map(|(t, _)| t.as_str()).collect();
    let set = FrequencyNounSet {
        good_subjects: subj.iter().filter(|(t, _)| !obj_words.contains(t.as_str())).cloned().collect(),
        good_objects: obj.iter().filter(|(t, _)| !subj_words.contains(t.as_str())).cloned().collect(),
    };
    if set.good_subjects.is_empty() || set.good_objects.is_empty() {
        return Err(Error::Selection(format!(
            "no disjoint nouns among the top {k} of either pattern"
        )));
    }
    Ok(set)
}

/// Element-wise mean and standard deviation of the original embedding rows.
pub fn embedding_moments(handle: &ModelHandle) -> Result<(Vec<f64>, Vec<f64>)> {
    let rows = handle.embeddings()?;
    let rows = &rows[..handle.original_vocab_size()];
    let d = rows.first().map(Vec::len).unwrap_or(0);
    let n = rows.len() as f64;
    let mut mean = vec![0f64; d];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += f64::from(*x) / n;
        }
    }
    let mut var = vec![0f64; d];
    for r in rows {
        for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
            *v += (f64::from(*x) - m).powi(2) / n;
        }
    }
    Ok((mean, var.into_iter().map(f64::sqrt).collect()))
}

/// Draws the token's row from N(mean_j, std_j) per dimension, seeded.
pub fn sample_embedding_row(mean: &[f64], std: &[f64], seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    mean.iter()
        .zip(std)
        .map(|(&m, &s)| {
            let n = Normal::new(m, s.max(f64::MIN_POSITIVE)).expect("finite moments");
            n.sample(&mut rng) as f32
        })
        .collect()
}

pub fn init_novel_embedding(handle: &mut ModelHandle, token: &NovelToken, seed: u64) -> Result<()> {
    let id = handle.token_id(&token.surface)?;
    if !handle.added_tokens().contains(&id) {
        return Err(Error::MissingToken(token.surface.clone()));
    }
    let (mean, std) = embedding_moments(handle)?;
    let row = sample_embedding_row(&mean, &std, seed);
    handle.set_novel_embedding(&token.surface, &row)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LexiconManifest {
    pub novel_tokens: Vec<NovelToken>,
    pub argument_nouns: Option<ArgumentNounSet>,
    pub frequency_nouns: BTreeMap<String, FrequencyNounSet>,
}

impl LexiconManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&src)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::load_baseline;

    #[test]
    fn toy_ranking_by_squares() {
        let vals = [0.1, 2.0, 0.5, 1.0, 0.05];
        let lo: BTreeMap<String, Vec<f64>> =
            vals.iter().enumerate().map(|(i, v)| (format!("c{}", i + 1), vec![*v])).collect();
        let ranked: Vec<_> = rank_by_neutrality(&lo).into_iter().map(|(n, _)| n).collect();
        assert_eq!(ranked, ["c5", "c1", "c3", "c4", "c2"]);
    }

    #[test]
    fn ties_break_lexicographically() {
        let lo: BTreeMap<String, Vec<f64>> =
            [("b", 1.0), ("a", -1.0), ("c", 0.0)].iter().map(|(n, v)| (n.to_string(), vec![*v])).collect();
        let ranked: Vec<_> = rank_by_neutrality(&lo).into_iter().map(|(n, _)| n).collect();
        assert_eq!(ranked, ["c", "a", "b"]);
    }

    #[test]
    fn role_assignment_uses_fixed_ranks() {
        let ranked: Vec<_> = (0..14).map(|i| (format!("n{i:02}"), i as f64)).collect();
        let set = assign_roles(&ranked).unwrap();
        assert_eq!(set.subject_nouns, ["n00", "n03", "n04", "n07", "n10", "n11"]);
        assert_eq!(set.object_nouns, ["n01", "n02", "n05", "n06", "n08", "n09"]);
        assert!(matches!(assign_roles(&ranked[..11]), Err(Error::InsufficientCandidates { found: 11, .. })));
    }

    #[test]
    fn frequency_selection() {
        let t = |v: &[(&str, u64)]| v.iter().map(|(a, b)| (a.to_string(), *b)).collect::<Vec<_>>();
        let subj = t(&[("car", 9), ("dog", 8), ("house", 7), ("tree", 6), ("cat", 1)]);
        let obj = t(&[("driver", 9), ("dog", 8), ("tree", 7), ("cup", 6), ("car", 1)]);
        let s = select_frequency_disjoint_nouns(&subj, &obj, 4, |_| true).unwrap();
        assert_eq!(s.good_subjects, t(&[("car", 9), ("house", 7)]));
        assert_eq!(s.good_objects, t(&[("driver", 9), ("cup", 6)]));
        assert!(select_frequency_disjoint_nouns(&subj, &subj, 4, |_| true).is_err());
        assert_eq!(parse_frequency_table("car\t3\ndog,4\n").unwrap(), t(&[("car", 3), ("dog", 4)]));
    }

    #[test]
    fn novel_embedding_init_is_seeded() {
        let mut h = load_baseline("builtin:tiny-wordpiece").unwrap();
        let tok = NovelToken {
            surface: "thax".into(),
            role: NovelRole::Theme,
            init_seed: 1,
        };
        assert!(matches!(init_novel_embedding(&mut h, &tok, 1), Err(Error::MissingToken(_))));
        h.add_tokens(&["thax"]).unwrap();
        init_novel_embedding(&mut h, &tok, 1).unwrap();
        let a = h.embeddings().unwrap().last().unwrap().clone();
        init_novel_embedding(&mut h, &tok, 1).unwrap();
        let b = h.embeddings().unwrap().last().unwrap().clone();
        init_novel_embedding(&mut h, &tok, 2).unwrap();
        let c = h.embeddings().unwrap().last().unwrap().clone();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
