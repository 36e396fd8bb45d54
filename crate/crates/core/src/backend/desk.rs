//! Small built-in backends for tests and desk-scale runs.
//!
//! The vocabulary covers every word the shipped catalogs, frames, lexicon and
//! reference pool can produce, plus single letters so that unseen words
//! (the novel tokens before they are added) still tokenize. Weights are
//! random; these models know nothing about English.

use std::collections::BTreeSet;

use super::handle::ModelHandle;
use super::network::{Network, NetworkConfig};
use super::tokenizer::{train_bpe, SpecialTokens, Tokenizer, TokenizerKind};
use crate::error::{Error, Result};
use crate::paradigm::catalog::{Catalog, Frames, EXP1_STRUCTURES, EXP2_STRUCTURES, FRAMES};
use crate::paradigm::lexical::LexicalConfig;
use crate::paradigm::template::Element;

pub const DESK_WIKI: &str = include_str!("../../data/reference/wiki.txt");
pub const DESK_BOOKS: &str = include_str!("../../data/reference/books.txt");

/// Target vocabulary of the byte-pair desk tokenizer.
const BPE_TARGET: usize = 900;
const PUNCTUATION: [&str; 5] = [".", ",", "?", "!", "'"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeskFamily {
    WordPiece,
    BytePair,
}

impl DeskFamily {
    fn from_name(name: &str) -> Option<Self> {
        match name {
            "tiny-wordpiece" => Some(DeskFamily::WordPiece),
            "tiny-bpe" => Some(DeskFamily::BytePair),
            _ => None,
        }
    }
}

fn template_words(src: &str) -> Vec<String> {
    src.split_whitespace()
        .filter(|w| !w.starts_with(['[', '<', '{', '@']))
        .map(str::to_string)
        .collect()
}

/// Sentences the desk tokenizers are built from.
pub fn desk_corpus() -> Vec<String> {
    let lex = LexicalConfig::default();
    let mut lines: Vec<String> = DESK_WIKI.lines().chain(DESK_BOOKS.lines()).map(str::to_string).collect();
    for src in [EXP1_STRUCTURES, EXP2_STRUCTURES] {
        let catalog = Catalog::from_toml(src).expect("shipped catalog parses");
        for s in &catalog.structures {
            let words: Vec<String> = s
                .elements
                .iter()
                .filter_map(|e| match e {
                    Element::Word(w) => Some(w.clone()),
                    _ => None,
                })
                .collect();
            lines.push(words.join(" "));
        }
    }
    let frames = Frames::from_toml(FRAMES).expect("shipped frames parse");
    let mut frame_src = vec![
        frames.finetune_exp1.to.clone(),
        frames.finetune_exp1.go.clone(),
        frames.finetune_exp1_passive.to.clone(),
        frames.finetune_exp1_passive.go.clone(),
        frames.two_pp.with.clone(),
        frames.two_pp.on.clone(),
    ];
    frame_src.extend(frames.exp2.exp2_scoring.iter().cloned());
    for f in &frames.unpassivizable {
        frame_src.extend([f.active.clone(), f.passive.clone(), f.subject_query.clone(), f.object_query.clone()]);
        frame_src.push(f.forms.join(" "));
    }
    for f in frame_src {
        lines.push(template_words(&f).join(" "));
    }
    for chunk in lex.all_words().chunks(8) {
        lines.push(format!("the {} .", chunk.join(" the ")));
    }
    lines.push(letters().join(" "));
    lines
}

fn letters() -> Vec<String> {
    (b'a'..=b'z').map(|c| (c as char).to_string()).collect()
}

/// WordPiece vocabulary: specials, punctuation, letters, continuation letters, words.
pub fn desk_wordpiece_vocab() -> Vec<String> {
    let special = SpecialTokens::bert();
    let mut vocab = vec![special.pad, special.unk, special.cls, special.sep, special.mask];
    vocab.extend(PUNCTUATION.iter().map(|s| s.to_string()));
    vocab.extend(letters());
    vocab.extend(letters().into_iter().map(|l| format!("##{l}")));
    let mut words = BTreeSet::new();
    for line in desk_corpus() {
        for w in line.split(|c: char| c.is_whitespace() || c.is_ascii_punctuation()) {
            if w.chars().count() > 1 {
                words.insert(w.to_ascii_lowercase());
            }
        }
    }
    vocab.extend(words);
    vocab
}

/// Tokenizer and network config for a desk family.
pub fn desk_tokenizer(family: DeskFamily) -> Result<Tokenizer> {
    match family {
        DeskFamily::WordPiece => Tokenizer::new(
            TokenizerKind::WordPiece,
            true,
            desk_wordpiece_vocab(),
            vec![],
            SpecialTokens::bert(),
        ),
        DeskFamily::BytePair => {
            let mut corpus = desk_corpus();
            // capitalized letters keep sentence-initial novel words encodable
            corpus.push(letters().join(" ").to_ascii_uppercase());
            let (vocab, merges) = train_bpe(&corpus, &SpecialTokens::roberta(), BPE_TARGET);
            Tokenizer::new(TokenizerKind::BytePair, false, vocab, merges, SpecialTokens::roberta())
        }
    }
}

/// Whether `model_id` names a builtin backend, without building it.
pub fn is_builtin(model_id: &str) -> bool {
    let Some(rest) = model_id.strip_prefix("builtin:") else {
        return false;
    };
    let (name, variant) = rest.split_once('#').unwrap_or((rest, "0"));
    DeskFamily::from_name(name).is_some() && variant.parse::<u64>().is_ok()
}

/// Resolves `builtin:<family>[#variant]` into a freshly initialized handle.
///
/// The variant number selects the weight seed, standing in for different
/// pre-trained checkpoints of the same architecture.
pub fn load_builtin(model_id: &str) -> Result<ModelHandle> {
    let rest = model_id
        .strip_prefix("builtin:")
        .ok_or_else(|| Error::Load(model_id.into(), "not a builtin id".into()))?;
    let (name, variant) = match rest.split_once('#') {
        Some((n, v)) => (
            n,
            v.parse::<u64>()
                .map_err(|_| Error::Load(model_id.into(), format!("bad variant `{v}`")))?,
        ),
        None => (rest, 0),
    };
    let family = DeskFamily::from_name(name)
        .ok_or_else(|| Error::Load(model_id.into(), format!("unknown builtin `{name}`")))?;
    let tokenizer = desk_tokenizer(family)?;
    let config = NetworkConfig::tiny(tokenizer.vocab_size());
    let family_seed = match family {
        DeskFamily::WordPiece => 0x5eed_0001,
        DeskFamily::BytePair => 0x5eed_0002,
    };
    let network = Network::random(config, family_seed ^ variant.wrapping_mul(0x9e37_79b9_7f4a_7c15))?;
    ModelHandle::new(model_id, tokenizer, network)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_vocabularies_are_small() {
        let wp = desk_tokenizer(DeskFamily::WordPiece).unwrap();
        let bp = desk_tokenizer(DeskFamily::BytePair).unwrap();
        assert!(wp.vocab_size() <= 1000, "{}", wp.vocab_size());
        assert!(bp.vocab_size() <= 1000, "{}", bp.vocab_size());
    }

    #[test]
    fn desk_wordpiece_covers_the_lexicon() {
        let wp = desk_tokenizer(DeskFamily::WordPiece).unwrap();
        for w in LexicalConfig::default().all_words() {
            assert!(wp.is_single_token(&w), "{w}");
        }
        assert!(!wp.is_single_token("thax"));
    }

    #[test]
    fn builtin_variants_differ() {
        let a = load_builtin("builtin:tiny-wordpiece").unwrap();
        let b = load_builtin("builtin:tiny-wordpiece#1").unwrap();
        assert_ne!(a.baseline().hash, b.baseline().hash);
        assert!(load_builtin("builtin:huge").is_err());
    }
}
