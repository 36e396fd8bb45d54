//! Lexical material for the generators: verbs, fillers, adverbs, noun groups.
//!
//! Everything here is configuration data. The defaults are what the shipped
//! catalogs were written against; runs may override any list.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Surface forms of a verb plus the preposition it takes in the theme-object frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerbEntry {
    pub lemma: String,
    pub past: String,
    pub participle: String,
    /// Preposition introducing the goal in the theme-object structure.
    #[serde(default)]
    pub to_preposition: String,
    /// Particle used by particle-shift structures.
    #[serde(default = "default_particle")]
    pub particle: String,
}

fn default_particle() -> String {
    "up".into()
}

impl VerbEntry {
    pub fn regular(lemma: &str, past: &str, prep: &str) -> Self {
        Self {
            lemma: lemma.into(),
            past: past.into(),
            participle: past.into(),
            to_preposition: prep.into(),
            particle: default_particle(),
        }
    }

    /// A verb with one surface form for every slot (the novel verb).
    pub fn invariant(surface: &str) -> Self {
        Self {
            lemma: surface.into(),
            past: surface.into(),
            participle: surface.into(),
            to_preposition: String::new(),
            particle: default_particle(),
        }
    }
}

/// Non-target nouns that fill the argument slot opposite a novel noun.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillerSet {
    pub verb: String,
    pub themes: Vec<String>,
    pub goals: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LexicalConfig {
    pub spray_verbs: Vec<VerbEntry>,
    pub load_verbs: Vec<VerbEntry>,
    /// Fine-tuning fillers keyed by verb lemma.
    pub fillers: Vec<FillerSet>,
    /// Agents instantiating the subject slot of test structures.
    pub agents: Vec<String>,
    pub mass_nouns: Vec<String>,
    pub count_nouns: Vec<String>,
    /// Preverbal adverbs for the novel-verb frames.
    pub adverbs: Vec<String>,
    /// Sentence-final modifier whose presence or absence doubles the frames.
    pub modifier: String,
    /// Desk-scale candidate pool for neutral-noun selection.
    pub candidate_nouns: Vec<String>,
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for LexicalConfig {
    fn default() -> Self {
        Self {
            spray_verbs: vec![
                VerbEntry::regular("spray", "sprayed", "onto"),
                VerbEntry::regular("shower", "showered", "onto"),
                VerbEntry::regular("dab", "dabbed", "onto"),
                VerbEntry::regular("rub", "rubbed", "onto"),
            ],
            load_verbs: vec![
                VerbEntry::regular("load", "loaded", "into"),
                VerbEntry::regular("stock", "stocked", "into"),
                VerbEntry::regular("pack", "packed", "into"),
                VerbEntry::regular("stuff", "stuffed", "into"),
            ],
            fillers: vec![
                FillerSet {
                    verb: "spray".into(),
                    themes: words(&["paint", "water", "perfume", "lotion", "oil", "dye"]),
                    goals: words(&["door", "wall", "table", "car", "window", "floor"]),
                },
                FillerSet {
                    verb: "load".into(),
                    themes: words(&["hay", "box", "book", "bag", "rock", "wood"]),
                    goals: words(&["truck", "wagon", "cart", "van", "boat", "ship"]),
                },
            ],
            agents: words(&[
                "man", "woman", "girl", "boy", "farmer", "worker", "chef", "artist", "teacher",
            ]),
            mass_nouns: words(&[
                "paint", "water", "oil", "sand", "mud", "perfume", "lotion", "dye", "soap", "glue",
            ]),
            count_nouns: words(&[
                "door", "wall", "box", "truck", "wagon", "table", "bag", "car", "cart", "boat",
            ]),
            adverbs: words(&["always", "often", "usually", "recently"]),
            modifier: "before".into(),
            candidate_nouns: words(&[
                "apple", "bottle", "bread", "bridge", "camera", "candle", "chair", "cheese", "clock",
                "cloud", "coin", "cookie", "desk", "dinner", "doctor", "dragon", "drum", "egg",
                "engine", "flower", "forest", "garden", "ghost", "guitar", "hammer", "horse",
                "house", "island", "jacket", "kitten", "ladder", "lamp", "letter", "lion",
                "mirror", "monkey", "mountain", "mushroom", "nurse", "orange", "pencil", "piano",
                "pillow", "pirate", "planet", "rabbit", "river", "robot", "sailor", "shoe",
                "soldier", "spoon", "starfish", "stone", "student", "sugar", "tiger", "tower",
                "tree", "village",
            ]),
        }
    }
}

impl LexicalConfig {
    pub fn test_verbs(&self) -> Vec<VerbEntry> {
        self.spray_verbs.iter().chain(&self.load_verbs).cloned().collect()
    }

    pub fn verb(&self, lemma: &str) -> Result<&VerbEntry> {
        self.spray_verbs
            .iter()
            .chain(&self.load_verbs)
            .find(|v| v.lemma == lemma)
            .ok_or_else(|| Error::Config(format!("unknown verb `{lemma}`")))
    }

    pub fn fillers_for(&self, lemma: &str) -> Result<&FillerSet> {
        self.fillers
            .iter()
            .find(|f| f.verb == lemma)
            .ok_or_else(|| Error::Generation(format!("no filler nouns configured for `{lemma}`")))
    }

    /// Every word the shipped lexicon can emit.
    pub fn all_words(&self) -> Vec<String> {
        let mut out = Vec::new();
        for v in self.test_verbs() {
            out.extend([v.lemma, v.past, v.participle, v.to_preposition, v.particle]);
        }
        for f in &self.fillers {
            out.extend(f.themes.iter().cloned());
            out.extend(f.goals.iter().cloned());
        }
        out.extend(self.agents.iter().cloned());
        out.extend(self.mass_nouns.iter().cloned());
        out.extend(self.count_nouns.iter().cloned());
        out.extend(self.adverbs.iter().cloned());
        out.push(self.modifier.clone());
        out.extend(self.candidate_nouns.iter().cloned());
        out.retain(|w| !w.is_empty());
        out
    }
}
