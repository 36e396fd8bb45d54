//! Declarative structure catalogs and fixed frames.

use std::collections::BTreeSet;
use std::path::Path;

use serde::Deserialize;

use super::template::{Alternation, Declared, SentenceTemplate, TenseAspect, Transformation, Voice};
use crate::error::{Error, Result};

pub const EXP1_STRUCTURES: &str = include_str!("../../data/exp1_structures.toml");
pub const EXP2_STRUCTURES: &str = include_str!("../../data/exp2_structures.toml");
pub const FRAMES: &str = include_str!("../../data/frames.toml");

/// Number of test structures in the novel-noun catalog.
pub const EXP1_STRUCTURE_COUNT: usize = 78;

#[derive(Debug, Deserialize)]
struct CatalogFile {
    structure: Vec<CatalogRecord>,
}

#[derive(Debug, Deserialize)]
struct CatalogRecord {
    id: String,
    template: String,
    alternation: Alternation,
    voice: Voice,
    tense: TenseAspect,
    #[serde(default)]
    transformations: BTreeSet<Transformation>,
}

#[derive(Debug, Clone)]
pub struct Catalog {
    pub structures: Vec<SentenceTemplate>,
}

impl Catalog {
    pub fn from_toml(src: &str) -> Result<Self> {
        let file: CatalogFile =
            toml::from_str(src).map_err(|e| Error::Config(format!("structure catalog: {e}")))?;
        let mut seen = BTreeSet::new();
        let mut structures = Vec::with_capacity(file.structure.len());
        for r in file.structure {
            if !seen.insert(r.id.clone()) {
                return Err(Error::Config(format!("duplicate structure id `{}`", r.id)));
            }
            let declared = Declared {
                alternation: r.alternation,
                voice: r.voice,
                tense: r.tense,
                transformations: r.transformations,
            };
            structures.push(SentenceTemplate::parse(&r.id, &r.template, declared)?);
        }
        Ok(Self { structures })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&src)
    }

    pub fn exp1_default() -> Self {
        Self::from_toml(EXP1_STRUCTURES).expect("shipped catalog parses")
    }

    pub fn exp2_default() -> Self {
        Self::from_toml(EXP2_STRUCTURES).expect("shipped catalog parses")
    }

    pub fn len(&self) -> usize {
        self.structures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.structures.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SentenceTemplate> {
        self.structures.iter().find(|s| s.id == id)
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct AlternationPair {
    pub to: String,
    pub go: String,
}

impl AlternationPair {
    pub fn for_alternation(&self, alt: Alternation) -> Result<&str> {
        match alt {
            Alternation::To => Ok(&self.to),
            Alternation::Go => Ok(&self.go),
            Alternation::None => Err(Error::Config("spray/load frames need TO or GO".into())),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct NovelVerbFrames {
    pub perfect_active: String,
    pub perfect_passive: String,
    pub past_active: String,
    pub past_passive: String,
    pub exp2_scoring: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TwoPpFrames {
    pub with: String,
    pub on: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct UnpassivizableFrame {
    pub verb: String,
    pub active: String,
    pub passive: String,
    pub subject_query: String,
    pub object_query: String,
    /// lemma, active form, participle
    pub forms: [String; 3],
}

#[derive(Debug, Clone, Deserialize)]
pub struct Frames {
    pub finetune_exp1: AlternationPair,
    pub finetune_exp1_passive: AlternationPair,
    pub exp2: NovelVerbFrames,
    pub two_pp: TwoPpFrames,
    pub unpassivizable: Vec<UnpassivizableFrame>,
}

impl Frames {
    pub fn from_toml(src: &str) -> Result<Self> {
        toml::from_str(src).map_err(|e| Error::Config(format!("frames: {e}")))
    }

    pub fn default_frames() -> Self {
        Self::from_toml(FRAMES).expect("shipped frames parse")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paradigm::template::{tag_structure, Role};

    #[test]
    fn shipped_exp1_catalog_has_78_structures() {
        let c = Catalog::exp1_default();
        assert_eq!(c.len(), EXP1_STRUCTURE_COUNT);
        for s in &c.structures {
            assert_eq!(s.count_role(Role::Theme), 1, "{}", s.id);
            assert_eq!(s.count_role(Role::Goal), 1, "{}", s.id);
            assert_eq!(s.count_role(Role::Subject), 1, "{}", s.id);
            let tag = tag_structure(s, None).unwrap();
            if tag.voice == Voice::Passive {
                assert!(tag.a_movement);
            }
        }
    }

    #[test]
    fn shipped_exp2_catalog_is_transitive() {
        let c = Catalog::exp2_default();
        assert!(!c.is_empty());
        for s in &c.structures {
            assert_eq!(s.count_role(Role::Subject), 1);
            assert_eq!(s.count_role(Role::Theme), 1);
            assert_eq!(s.count_role(Role::Goal), 0);
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let src = r#"
[[structure]]
id = "a"
template = "The [subject] <verb.past> the [theme] @to the [goal] ."
alternation = "to"
voice = "active"
tense = "past"

[[structure]]
id = "a"
template = "The [subject] <verb.past> the [theme] @to the [goal] ."
alternation = "to"
voice = "active"
tense = "past"
"#;
        assert!(Catalog::from_toml(src).is_err());
    }

    #[test]
    fn frames_parse() {
        let f = Frames::default_frames();
        assert_eq!(f.exp2.exp2_scoring.len(), 5);
        assert_eq!(f.unpassivizable.len(), 3);
    }
}
