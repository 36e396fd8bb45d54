//! Tokenization invariance between an augmented and a pristine tokenizer.
//!
//! A sentence passes when the pristine token sequence can be written as
//! `A0 G1 A1 G2 ... Ak`, where `A0..Ak` are the runs of the augmented
//! sequence between novel tokens and every `Gi` is a non-empty run of
//! pristine pieces standing in for the i-th novel token.

use serde::{Deserialize, Serialize};

use super::tokenizer::Tokenizer;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceCheck {
    pub sentence: String,
    pub identical: bool,
    pub augmented: Vec<String>,
    pub pristine: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub checks: Vec<SentenceCheck>,
}

impl InvarianceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.identical)
    }

    pub fn failures(&self) -> impl Iterator<Item = &SentenceCheck> {
        self.checks.iter().filter(|c| !c.identical)
    }

    pub fn merge(&mut self, other: InvarianceReport) {
        self.checks.extend(other.checks);
    }
}

/// Compares each sentence under both tokenizers.
pub fn check_tokenizers<S: AsRef<str>>(
    augmented: &Tokenizer,
    pristine: &Tokenizer,
    sentences: &[S],
) -> InvarianceReport {
    let novel: Vec<u32> = augmented.added_ids().to_vec();
    let checks = sentences
        .iter()
        .map(|s| {
            let s = s.as_ref();
            let (aug, pri) = match (augmented.encode(s, true), pristine.encode(s, true)) {
                (Ok(a), Ok(p)) => (a.ids, p.ids),
                _ => {
                    return SentenceCheck {
                        sentence: s.to_string(),
                        identical: false,
                        augmented: vec![],
                        pristine: vec![],
                    }
                }
            };
            // split the augmented ids into runs separated by novel tokens
            let mut runs: Vec<Vec<String>> = vec![Vec::new()];
            for &id in &aug {
                if novel.contains(&id) {
                    runs.push(Vec::new());
                } else {
                    runs.last_mut().unwrap().push(augmented.render(&[id]).remove(0));
                }
            }
            let pri_tokens = pristine.render(&pri);
            let identical = runs_with_gaps_match(&runs, &pri_tokens);
            SentenceCheck {
                sentence: s.to_string(),
                identical,
                augmented: augmented.render(&aug),
                pristine: pri_tokens,
            }
        })
        .collect();
    InvarianceReport { checks }
}

/// True when `seq` equals `runs[0] g1 runs[1] ... g_k runs[k]` with every gap non-empty.
fn runs_with_gaps_match(runs: &[Vec<String>], seq: &[String]) -> bool {
    // reachable[i]: the runs consumed so far end exactly at seq[..i]
    let n = seq.len();
    let first = &runs[0];
    if !seq.starts_with(first) {
        return false;
    }
    let mut reachable = vec![false; n + 1];
    reachable[first.len()] = true;
    for run in &runs[1..] {
        let mut next = vec![false; n + 1];
        for start in 0..=n {
            if !reachable[start] {
                continue;
            }
            // gap of length >= 1, then the run
            for gap_end in start + 1..=n {
                let end = gap_end + run.len();
                if end <= n && seq[gap_end..end] == run[..] {
                    next[end] = true;
                }
            }
        }
        reachable = next;
    }
    reachable[n]
}
