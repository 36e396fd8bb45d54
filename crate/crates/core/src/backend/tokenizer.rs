//! Subword tokenizers with added-token support.
//!
//! Two families are supported: WordPiece (BERT style, `##` continuation
//! pieces) and byte-pair encoding with a `Ġ` marker for a preceding space
//! (RoBERTa style). Added tokens are matched in the raw text before
//! pre-tokenization, the same way the Hugging Face tokenizers do, so a
//! novel token can split a longer word apart. The invariance check in
//! [`crate::backend::invariance`] exists to catch exactly that.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Marker for a word that follows whitespace in byte-pair vocabularies.
pub const SPACE_MARKER: char = '\u{0120}';
const CONTINUATION: &str = "##";
const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerKind {
    WordPiece,
    BytePair,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub cls: String,
    pub sep: String,
    pub mask: String,
    pub pad: String,
    pub unk: String,
}

impl SpecialTokens {
    pub fn bert() -> Self {
        Self {
            cls: "[CLS]".into(),
            sep: "[SEP]".into(),
            mask: "[MASK]".into(),
            pad: "[PAD]".into(),
            unk: "[UNK]".into(),
        }
    }

    pub fn roberta() -> Self {
        Self {
            cls: "<s>".into(),
            sep: "</s>".into(),
            mask: "<mask>".into(),
            pad: "<pad>".into(),
            unk: "<unk>".into(),
        }
    }

    fn all(&self) -> [&str; 5] {
        [&self.cls, &self.sep, &self.mask, &self.pad, &self.unk]
    }
}

/// Token ids plus the byte span of the source text each token covers.
///
/// Special tokens inserted around the sentence have no span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub spans: Vec<Option<(usize, usize)>>,
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Index of the token whose span is exactly `span`.
    pub fn position_of_span(&self, span: (usize, usize)) -> Option<usize> {
        self.spans.iter().position(|s| *s == Some(span))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tokenizer {
    kind: TokenizerKind,
    lowercase: bool,
    tokens: Vec<String>,
    #[serde(default)]
    merges: Vec<(String, String)>,
    special: SpecialTokens,
    #[serde(default)]
    added: Vec<u32>,
    #[serde(skip)]
    index: HashMap<String, u32>,
    #[serde(skip)]
    merge_ranks: HashMap<(String, String), usize>,
}

/// A piece of raw text after added/special tokens have been cut out.
enum Segment {
    Text { start: usize, end: usize },
    Token { id: u32, start: usize, end: usize },
}

impl Tokenizer {
    pub fn new(
        kind: TokenizerKind,
        lowercase: bool,
        tokens: Vec<String>,
        merges: Vec<(String, String)>,
        special: SpecialTokens,
    ) -> Result<Self> {
        let mut tok = Self {
            kind,
            lowercase,
            tokens,
            merges,
            special,
            added: Vec::new(),
            index: HashMap::new(),
            merge_ranks: HashMap::new(),
        };
        tok.rebuild_indices()?;
        Ok(tok)
    }

    /// Restores lookup tables after deserialization.
    pub fn rebuild_indices(&mut self) -> Result<()> {
        self.index.clear();
        for (id, t) in self.tokens.iter().enumerate() {
            if self.index.insert(t.clone(), id as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry `{t}`")));
            }
        }
        for s in self.special.all() {
            if !self.index.contains_key(s) {
                return Err(Error::Config(format!("special token `{s}` missing from vocabulary")));
            }
        }
        self.merge_ranks = self
            .merges
            .iter()
            .enumerate()
            .map(|(r, (a, b))| ((a.clone(), b.clone()), r))
            .collect();
        Ok(())
    }

    pub fn kind(&self) -> TokenizerKind {
        self.kind
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn special(&self) -> &SpecialTokens {
        &self.special
    }

    pub fn added_ids(&self) -> &[u32] {
        &self.added
    }

    pub fn token_to_id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_to_token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn mask_id(&self) -> u32 {
        self.index[&self.special.mask]
    }

    pub fn cls_id(&self) -> u32 {
        self.index[&self.special.cls]
    }

    pub fn sep_id(&self) -> u32 {
        self.index[&self.special.sep]
    }

    pub fn pad_id(&self) -> u32 {
        self.index[&self.special.pad]
    }

    pub fn unk_id(&self) -> u32 {
        self.index[&self.special.unk]
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.special
            .all()
            .iter()
            .any(|s| self.index.get(*s) == Some(&id))
    }

    /// Normalized form under which a surface string is registered.
    pub fn normalize(&self, surface: &str) -> String {
        let s = surface.trim();
        if self.lowercase {
            s.to_ascii_lowercase()
        } else {
            s.to_string()
        }
    }

    /// Registers a novel token with a fresh id at the end of the vocabulary.
    pub fn add_token(&mut self, surface: &str) -> Result<u32> {
        let norm = self.normalize(surface);
        if norm.is_empty() || norm.chars().any(char::is_whitespace) {
            return Err(Error::InvalidToken(surface.to_string()));
        }
        let spaced = format!("{SPACE_MARKER}{norm}");
        if self.index.contains_key(&norm) || self.index.contains_key(&spaced) {
            return Err(Error::Conflict(norm));
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(norm.clone());
        self.index.insert(norm, id);
        self.added.push(id);
        Ok(id)
    }

    /// True when `word` is encoded as one non-unknown token in running text.
    pub fn is_single_token(&self, word: &str) -> bool {
        let probe = format!("the {word}");
        let Ok(enc) = self.encode(&probe, false) else {
            return false;
        };
        let start = 4;
        let hits: Vec<_> = enc
            .spans
            .iter()
            .zip(&enc.ids)
            .filter(|(s, _)| matches!(s, Some((a, _)) if *a >= start))
            .collect();
        hits.len() == 1
            && *hits[0].1 != self.unk_id()
            && hits[0].0 == &Some((start, probe.len()))
    }

    pub fn encode(&self, text: &str, with_special: bool) -> Result<Encoding> {
        let mut ids = Vec::new();
        let mut spans = Vec::new();
        if with_special {
            ids.push(self.cls_id());
            spans.push(None);
        }
        for seg in self.split_added(text) {
            match seg {
                Segment::Token { id, start, end } => {
                    ids.push(id);
                    spans.push(Some((start, end)));
                }
                Segment::Text { start, end } => {
                    for (w0, w1, spaced) in pretokenize(text, start, end) {
                        let word = &text[w0..w1];
                        for (piece, p0, p1) in self.word_pieces(word, spaced) {
                            ids.push(piece);
                            spans.push(Some((w0 + p0, w0 + p1)));
                        }
                    }
                }
            }
        }
        if with_special {
            ids.push(self.sep_id());
            spans.push(None);
        }
        Ok(Encoding { ids, spans })
    }

    /// Token strings for an encoding, for display and debugging.
    pub fn render(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.id_to_token(i).unwrap_or("<?>").to_string())
            .collect()
    }

    fn surface_matches(&self, text: &str, at: usize, pattern: &str) -> bool {
        let Some(slice) = text.get(at..at + pattern.len()) else {
            return false;
        };
        if self.lowercase {
            slice.eq_ignore_ascii_case(pattern)
        } else if slice == pattern {
            true
        } else {
            // cased vocabularies also accept the sentence-initial capitalized variant
            let mut cs = pattern.chars();
            match cs.next() {
                Some(first) => {
                    let cap: String = first.to_uppercase().chain(cs).collect();
                    cap == slice
                }
                None => false,
            }
        }
    }

    fn split_added(&self, text: &str) -> Vec<Segment> {
        let mut patterns: Vec<(&str, u32)> = self
            .special
            .all()
            .iter()
            .map(|s| (*s, self.index[*s]))
            .collect();
        patterns.extend(self.added.iter().map(|&id| (self.tokens[id as usize].as_str(), id)));
        patterns.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(b.0)));

        let mut out = Vec::new();
        let mut seg_start = 0;
        let mut i = 0;
        while i < text.len() {
            if !text.is_char_boundary(i) {
                i += 1;
                continue;
            }
            let hit = patterns
                .iter()
                .find(|(p, _)| self.surface_matches(text, i, p))
                .copied();
            if let Some((p, id)) = hit {
                let mut seg_end = i;
                if self.kind == TokenizerKind::BytePair {
                    // the space-prefixed variant absorbs the preceding whitespace
                    while seg_end > seg_start
                        && text[..seg_end].ends_with(|c: char| c.is_whitespace())
                    {
                        seg_end -= text[..seg_end].chars().last().unwrap().len_utf8();
                    }
                }
                if seg_end > seg_start {
                    out.push(Segment::Text {
                        start: seg_start,
                        end: seg_end,
                    });
                }
                out.push(Segment::Token {
                    id,
                    start: i,
                    end: i + p.len(),
                });
                i += p.len();
                seg_start = i;
            } else {
                i += 1;
            }
        }
        if seg_start < text.len() {
            out.push(Segment::Text {
                start: seg_start,
                end: text.len(),
            });
        }
        out
    }

    /// Pieces for one pre-tokenized word with their byte offsets inside it.
    fn word_pieces(&self, word: &str, spaced: bool) -> Vec<(u32, usize, usize)> {
        match self.kind {
            TokenizerKind::WordPiece => self.wordpiece(word),
            TokenizerKind::BytePair => self.bpe(word, spaced),
        }
    }

    fn wordpiece(&self, word: &str) -> Vec<(u32, usize, usize)> {
        let norm = if self.lowercase {
            word.to_ascii_lowercase()
        } else {
            word.to_string()
        };
        if norm.chars().count() > MAX_WORD_CHARS {
            return vec![(self.unk_id(), 0, word.len())];
        }
        let mut out = Vec::new();
        let mut start = 0;
        while start < norm.len() {
            let mut end = norm.len();
            let mut found = None;
            while end > start {
                if norm.is_char_boundary(end) {
                    let sub = &norm[start..end];
                    let key = if start > 0 {
                        format!("{CONTINUATION}{sub}")
                    } else {
                        sub.to_string()
                    };
                    if let Some(&id) = self.index.get(&key) {
                        found = Some((id, end));
                        break;
                    }
                }
                end -= 1;
            }
            match found {
                Some((id, end)) => {
                    out.push((id, start, end));
                    start = end;
                }
                None => return vec![(self.unk_id(), 0, word.len())],
            }
        }
        out
    }

    fn bpe(&self, word: &str, spaced: bool) -> Vec<(u32, usize, usize)> {
        let norm = if self.lowercase {
            word.to_ascii_lowercase()
        } else {
            word.to_string()
        };
        let mut symbols: Vec<String> = norm.chars().map(String::from).collect();
        if spaced {
            symbols.insert(0, SPACE_MARKER.to_string());
        }
        apply_merges(&mut symbols, &self.merge_ranks);
        let mut out = Vec::with_capacity(symbols.len());
        let mut off = 0;
        for s in symbols {
            let len: usize = s
                .chars()
                .filter(|&c| c != SPACE_MARKER)
                .map(char::len_utf8)
                .sum();
            let id = self.index.get(&s).copied().unwrap_or_else(|| self.unk_id());
            out.push((id, off, off + len));
            off += len;
        }
        out
    }
}

/// Merges symbol pairs in rank order until no ranked pair remains.
fn apply_merges(symbols: &mut Vec<String>, ranks: &HashMap<(String, String), usize>) {
    loop {
        let best = symbols
            .windows(2)
            .enumerate()
            .filter_map(|(i, w)| ranks.get(&(w[0].clone(), w[1].clone())).map(|r| (*r, i)))
            .min();
        let Some((_, i)) = best else { break };
        let merged = format!("{}{}", symbols[i], symbols[i + 1]);
        symbols[i] = merged;
        symbols.remove(i + 1);
    }
}

/// Splits `text[start..end]` into words and punctuation marks.
///
/// Returns `(begin, end, preceded_by_space)` triples with absolute offsets.
fn pretokenize(text: &str, start: usize, end: usize) -> Vec<(usize, usize, bool)> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    let mut spaced = false;
    let mut prev_space = false;
    for (off, c) in text[start..end].char_indices() {
        let at = start + off;
        if c.is_whitespace() {
            if let Some(ws) = word_start.take() {
                out.push((ws, at, spaced));
            }
            prev_space = true;
        } else if c.is_ascii_punctuation() {
            if let Some(ws) = word_start.take() {
                out.push((ws, at, spaced));
            }
            out.push((at, at + c.len_utf8(), prev_space));
            prev_space = false;
        } else {
            if word_start.is_none() {
                word_start = Some(at);
                spaced = prev_space;
            }
            prev_space = false;
        }
    }
    if let Some(ws) = word_start {
        out.push((ws, end, spaced));
    }
    out
}

/// Learns a byte-pair merge table from word frequencies.
///
/// Words are pre-tokenized exactly as [`Tokenizer::encode`] would see them
/// in running text. Ties between equally frequent pairs are broken by the
/// pair's string order so training is deterministic.
pub fn train_bpe(
    corpus: &[String],
    specials: &SpecialTokens,
    target_vocab: usize,
) -> (Vec<String>, Vec<(String, String)>) {
    let mut words: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    for line in corpus {
        for (a, b, spaced) in pretokenize(line, 0, line.len()) {
            let mut syms: Vec<String> = line[a..b].chars().map(String::from).collect();
            if spaced {
                syms.insert(0, SPACE_MARKER.to_string());
            }
            *words.entry(syms).or_default() += 1;
        }
    }
    let mut vocab: Vec<String> = specials.all().iter().map(|s| s.to_string()).collect();
    let mut alphabet: Vec<String> = words.keys().flatten().cloned().collect();
    alphabet.sort();
    alphabet.dedup();
    vocab.extend(alphabet);
    let mut merges = Vec::new();
    let mut current: Vec<(Vec<String>, usize)> = words.into_iter().collect();
    while vocab.len() < target_vocab {
        let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
        for (syms, n) in &current {
            for w in syms.windows(2) {
                *counts.entry((w[0].clone(), w[1].clone())).or_default() += n;
            }
        }
        let Some((pair, _)) = counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        else {
            break;
        };
        let joined = format!("{}{}", pair.0, pair.1);
        for (syms, _) in current.iter_mut() {
            let mut i = 0;
            while i + 1 < syms.len() {
                if syms[i] == pair.0 && syms[i + 1] == pair.1 {
                    syms[i] = joined.clone();
                    syms.remove(i + 1);
                }
                i += 1;
            }
        }
        if !vocab.contains(&joined) {
            vocab.push(joined);
        }
        merges.push(pair);
    }
    (vocab, merges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_wordpiece() -> Tokenizer {
        let mut tokens: Vec<String> = SpecialTokens::bert().all().iter().map(|s| s.to_string()).collect();
        for w in ["the", "was", "sprayed", "i", "onto", "door", ".", "th", "##ax", "##es", "es"] {
            tokens.push(w.to_string());
        }
        Tokenizer::new(TokenizerKind::WordPiece, true, tokens, vec![], SpecialTokens::bert()).unwrap()
    }

    #[test]
    fn wordpiece_splits_unknown_words_into_continuations() {
        let tok = toy_wordpiece();
        let enc = tok.encode("The thaxes", false).unwrap();
        assert_eq!(tok.render(&enc.ids), ["the", "th", "##ax", "##es"]);
        assert_eq!(enc.spans[1], Some((4, 6)));
        assert_eq!(enc.spans[3], Some((8, 10)));
    }

    #[test]
    fn added_token_gets_next_id_and_single_position() {
        let mut tok = toy_wordpiece();
        let v = tok.vocab_size() as u32;
        let id = tok.add_token("thax").unwrap();
        assert_eq!(id, v);
        let enc = tok.encode("the THAX was sprayed", true).unwrap();
        assert_eq!(enc.ids.iter().filter(|&&i| i == id).count(), 1);
        assert_eq!(enc.spans[2], Some((4, 8)));
    }

    #[test]
    fn add_token_rejects_duplicates_and_blank() {
        let mut tok = toy_wordpiece();
        assert!(matches!(tok.add_token("door"), Err(Error::Conflict(_))));
        assert!(matches!(tok.add_token("   "), Err(Error::InvalidToken(_))));
        tok.add_token("gorx").unwrap();
        assert!(matches!(tok.add_token("GORX"), Err(Error::Conflict(_))));
    }

    #[test]
    fn mask_literal_is_special() {
        let tok = toy_wordpiece();
        let enc = tok.encode("the [MASK] was", false).unwrap();
        assert_eq!(enc.ids[1], tok.mask_id());
    }

    #[test]
    fn bpe_marks_space_and_absorbs_it_before_added_tokens() {
        let corpus: Vec<String> = vec!["the door was sprayed .".into(); 3];
        let (vocab, merges) = train_bpe(&corpus, &SpecialTokens::roberta(), 60);
        let mut tok =
            Tokenizer::new(TokenizerKind::BytePair, false, vocab, merges, SpecialTokens::roberta()).unwrap();
        let before = tok.encode("the door was", false).unwrap();
        assert_eq!(tok.render(&before.ids), ["the", "\u{120}door", "\u{120}was"]);
        let id = tok.add_token("thax").unwrap();
        let enc = tok.encode("the thax was", false).unwrap();
        assert_eq!(enc.ids[1], id);
        assert_eq!(tok.render(&enc.ids)[2], "\u{120}was");
        let cap = tok.encode("Thax was", false).unwrap();
        assert_eq!(cap.ids[0], id);
    }

    #[test]
    fn single_token_probe() {
        let tok = toy_wordpiece();
        assert!(tok.is_single_token("door"));
        assert!(!tok.is_single_token("thaxes"));
        assert!(!tok.is_single_token("zzz"));
    }
}
