//! Role-annotated sentence templates and their structural tags.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::lexical::VerbEntry;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Subject,
    Theme,
    Goal,
    Verb,
    Filler,
    Adverb,
    Modifier,
}

impl Role {
    pub fn is_noun(self) -> bool {
        matches!(self, Role::Subject | Role::Theme | Role::Goal | Role::Filler)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Subject => "subject",
            Role::Theme => "theme",
            Role::Goal => "goal",
            Role::Verb => "verb",
            Role::Filler => "filler",
            Role::Adverb => "adverb",
            Role::Modifier => "modifier",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "subject" => Role::Subject,
            "theme" => Role::Theme,
            "goal" => Role::Goal,
            "verb" => Role::Verb,
            "filler" => Role::Filler,
            "adverb" => Role::Adverb,
            "modifier" => Role::Modifier,
            other => return Err(Error::Config(format!("unknown slot role `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerbForm {
    Base,
    Past,
    Participle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Element {
    Word(String),
    Slot { role: Role, form: Option<VerbForm> },
    /// The verb's theme-object preposition.
    ToPreposition,
    /// The verb's particle.
    Particle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternation {
    #[serde(alias = "TO")]
    To,
    #[serde(alias = "GO")]
    Go,
    None,
}

impl Alternation {
    pub fn opposite(self) -> Self {
        match self {
            Alternation::To => Alternation::Go,
            Alternation::Go => Alternation::To,
            Alternation::None => Alternation::None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Alternation::To => "TO",
            Alternation::Go => "GO",
            Alternation::None => "none",
        }
    }
}

impl FromStr for Alternation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "to" => Ok(Alternation::To),
            "go" => Ok(Alternation::Go),
            "none" => Ok(Alternation::None),
            other => Err(Error::Config(format!("unknown alternation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Voice {
    Active,
    Passive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ArgOrder {
    SO,
    OS,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelativeOrder {
    Same,
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transformation {
    Cleft,
    WhMatrix,
    WhEmbedded,
    PolarQuestion,
    Negation,
    Raising,
    RelativeClause,
    ParticleShift,
}

impl Transformation {
    pub fn is_abar(self) -> bool {
        matches!(
            self,
            Transformation::Cleft
                | Transformation::WhMatrix
                | Transformation::WhEmbedded
                | Transformation::RelativeClause
        )
    }

    pub fn is_a_movement(self) -> bool {
        matches!(self, Transformation::Raising)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TenseAspect {
    Perfect,
    Past,
    Present,
}

/// Structural metadata attached to every generated sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StructureTag {
    pub alternation: Alternation,
    pub voice: Voice,
    pub a_movement: bool,
    pub abar_movement: bool,
    pub arg_order: ArgOrder,
    pub order_vs_tuning: Option<RelativeOrder>,
    pub transformations: BTreeSet<Transformation>,
    pub tense_aspect: TenseAspect,
}

impl StructureTag {
    /// Copy of this tag with its order compared against a tuning structure.
    pub fn relative_to(&self, tuning: &StructureTag) -> StructureTag {
        let mut t = self.clone();
        t.order_vs_tuning = Some(if self.arg_order == tuning.arg_order {
            RelativeOrder::Same
        } else {
            RelativeOrder::Reverse
        });
        t
    }
}

/// Declared properties a template cannot reveal from its word sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Declared {
    pub alternation: Alternation,
    pub voice: Voice,
    pub tense: TenseAspect,
    #[serde(default)]
    pub transformations: BTreeSet<Transformation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceTemplate {
    pub id: String,
    pub elements: Vec<Element>,
    pub declared: Declared,
}

/// Words realized into a slot. Noun roles map to one word each.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    pub nouns: BTreeMap<Role, String>,
    pub verb: Option<VerbEntry>,
    pub adverb: Option<String>,
    pub modifier: Option<String>,
}

impl Bindings {
    pub fn noun(mut self, role: Role, word: impl Into<String>) -> Self {
        self.nouns.insert(role, word.into());
        self
    }

    pub fn verb(mut self, verb: &VerbEntry) -> Self {
        self.verb = Some(verb.clone());
        self
    }

    pub fn adverb(mut self, adverb: impl Into<String>) -> Self {
        self.adverb = Some(adverb.into());
        self
    }

    pub fn modifier(mut self, modifier: impl Into<String>) -> Self {
        self.modifier = Some(modifier.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealizedSlot {
    pub role: Role,
    /// Byte span of the slot's word in the realized text.
    pub span: (usize, usize),
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Realized {
    pub text: String,
    pub slots: Vec<RealizedSlot>,
}

impl Realized {
    pub fn slot(&self, role: Role) -> Option<&RealizedSlot> {
        self.slots.iter().find(|s| s.role == role)
    }
}

fn is_punct(w: &str) -> bool {
    matches!(w, "." | "," | "?" | "!")
}

impl SentenceTemplate {
    /// Parses the catalog slot syntax:
    /// `[noun-role]`, `<verb.base|past|part>`, `{adverb}`, `{modifier}`, `@to`, `@prt`.
    pub fn parse(id: &str, source: &str, declared: Declared) -> Result<Self> {
        let mut elements = Vec::new();
        for w in source.split_whitespace() {
            let el = if let Some(inner) = w.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let role: Role = inner.parse()?;
                if !role.is_noun() {
                    return Err(Error::Config(format!("`{w}` is not a noun slot in `{id}`")));
                }
                Element::Slot { role, form: None }
            } else if let Some(inner) = w.strip_prefix('<').and_then(|s| s.strip_suffix('>')) {
                let form = match inner {
                    "verb.base" => VerbForm::Base,
                    "verb.past" => VerbForm::Past,
                    "verb.part" => VerbForm::Participle,
                    other => return Err(Error::Config(format!("unknown verb slot `<{other}>` in `{id}`"))),
                };
                Element::Slot {
                    role: Role::Verb,
                    form: Some(form),
                }
            } else if let Some(inner) = w.strip_prefix('{').and_then(|s| s.strip_suffix('}')) {
                match inner {
                    "adverb" => Element::Slot { role: Role::Adverb, form: None },
                    "modifier" => Element::Slot { role: Role::Modifier, form: None },
                    other => return Err(Error::Config(format!("unknown slot `{{{other}}}` in `{id}`"))),
                }
            } else if w == "@to" {
                Element::ToPreposition
            } else if w == "@prt" {
                Element::Particle
            } else if w.starts_with(['[', '<', '{', '@']) {
                return Err(Error::Config(format!("untyped slot `{w}` in `{id}`")));
            } else {
                Element::Word(w.to_string())
            };
            elements.push(el);
        }
        if elements.is_empty() {
            return Err(Error::Config(format!("template `{id}` is empty")));
        }
        Ok(Self {
            id: id.to_string(),
            elements,
            declared,
        })
    }

    /// Roles of the slots in linear order.
    pub fn slot_roles(&self) -> Vec<Role> {
        self.elements
            .iter()
            .filter_map(|e| match e {
                Element::Slot { role, .. } => Some(*role),
                _ => None,
            })
            .collect()
    }

    pub fn count_role(&self, role: Role) -> usize {
        self.slot_roles().iter().filter(|r| **r == role).count()
    }

    fn element_index(&self, role: Role) -> Option<usize> {
        self.elements
            .iter()
            .position(|e| matches!(e, Element::Slot { role: r, .. } if *r == role))
    }

    /// The two roles whose linear order defines SO/OS.
    ///
    /// Spray/load templates (theme and goal both present) order theme before
    /// goal, the order of the theme-object frame; transitive templates order
    /// subject before object (`theme`).
    pub fn order_roles(&self) -> (Role, Role) {
        if self.count_role(Role::Theme) > 0 && self.count_role(Role::Goal) > 0 {
            (Role::Theme, Role::Goal)
        } else {
            (Role::Subject, Role::Theme)
        }
    }

    pub fn arg_order(&self) -> Result<ArgOrder> {
        let (first, second) = self.order_roles();
        match (self.element_index(first), self.element_index(second)) {
            (Some(a), Some(b)) => Ok(if a < b { ArgOrder::SO } else { ArgOrder::OS }),
            _ => Err(Error::Config(format!(
                "template `{}` lacks a {first} or {second} slot",
                self.id
            ))),
        }
    }

    pub fn realize(&self, b: &Bindings) -> Result<Realized> {
        let mut text = String::new();
        let mut slots = Vec::new();
        let missing = |what: &str| Error::Generation(format!("template `{}` needs a binding for {what}", self.id));
        for el in &self.elements {
            let (word, role) = match el {
                Element::Word(w) => (w.clone(), None),
                Element::Slot { role: Role::Verb, form } => {
                    let v = b.verb.as_ref().ok_or_else(|| missing("verb"))?;
                    let w = match form.unwrap_or(VerbForm::Past) {
                        VerbForm::Base => &v.lemma,
                        VerbForm::Past => &v.past,
                        VerbForm::Participle => &v.participle,
                    };
                    (w.clone(), Some(Role::Verb))
                }
                Element::Slot { role: Role::Adverb, .. } => {
                    (b.adverb.clone().ok_or_else(|| missing("adverb"))?, Some(Role::Adverb))
                }
                Element::Slot { role: Role::Modifier, .. } => match &b.modifier {
                    Some(m) if !m.is_empty() => (m.clone(), Some(Role::Modifier)),
                    _ => continue,
                },
                Element::Slot { role, .. } => {
                    let w = b.nouns.get(role).ok_or_else(|| missing(role.as_str()))?;
                    (w.clone(), Some(*role))
                }
                Element::ToPreposition => {
                    let v = b.verb.as_ref().ok_or_else(|| missing("verb"))?;
                    if v.to_preposition.is_empty() {
                        return Err(missing("theme-object preposition"));
                    }
                    (v.to_preposition.clone(), None)
                }
                Element::Particle => (b.verb.as_ref().ok_or_else(|| missing("verb"))?.particle.clone(), None),
            };
            if !text.is_empty() && !is_punct(&word) {
                text.push(' ');
            }
            let start = text.len();
            text.push_str(&word);
            if let Some(role) = role {
                slots.push(RealizedSlot {
                    role,
                    span: (start, text.len()),
                    surface: word,
                });
            }
        }
        Ok(Realized { text, slots })
    }
}

/// Completes a template's tag, comparing order with `tuning_reference` when given.
pub fn tag_structure(template: &SentenceTemplate, tuning_reference: Option<&StructureTag>) -> Result<StructureTag> {
    let d = &template.declared;
    let passive = d.voice == Voice::Passive;
    let tag = StructureTag {
        alternation: d.alternation,
        voice: d.voice,
        a_movement: passive || d.transformations.iter().any(|t| t.is_a_movement()),
        abar_movement: d.transformations.iter().any(|t| t.is_abar()),
        arg_order: template.arg_order()?,
        order_vs_tuning: None,
        transformations: d.transformations.clone(),
        tense_aspect: d.tense,
    };
    Ok(match tuning_reference {
        Some(r) => tag.relative_to(r),
        None => tag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn declared(alt: Alternation, voice: Voice, tf: &[Transformation]) -> Declared {
        Declared {
            alternation: alt,
            voice,
            tense: TenseAspect::Past,
            transformations: tf.iter().copied().collect(),
        }
    }

    #[test]
    fn untyped_slots_are_rejected() {
        let d = declared(Alternation::To, Voice::Active, &[]);
        assert!(SentenceTemplate::parse("x", "The [agent] left .", d.clone()).is_err());
        assert!(SentenceTemplate::parse("x", "The @foo left .", d.clone()).is_err());
        assert!(SentenceTemplate::parse("x", "<verb.ing>", d).is_err());
    }

    #[test]
    fn realization_records_spans() {
        let t = SentenceTemplate::parse(
            "to",
            "I <verb.past> the [theme] @to the [goal] .",
            declared(Alternation::To, Voice::Active, &[]),
        )
        .unwrap();
        let v = VerbEntry::regular("spray", "sprayed", "onto");
        let r = t
            .realize(&Bindings::default().verb(&v).noun(Role::Theme, "thax").noun(Role::Goal, "door"))
            .unwrap();
        assert_eq!(r.text, "I sprayed the thax onto the door.");
        let s = r.slot(Role::Theme).unwrap();
        assert_eq!(&r.text[s.span.0..s.span.1], "thax");
    }

    #[test]
    fn passive_goal_object_tag() {
        // "The gorx was sprayed with the thax."
        let t = SentenceTemplate::parse(
            "go_passive",
            "The [goal] was <verb.part> with the [theme] .",
            declared(Alternation::Go, Voice::Passive, &[]),
        )
        .unwrap();
        let to_active = SentenceTemplate::parse(
            "to",
            "I <verb.past> the [theme] @to the [goal] .",
            declared(Alternation::To, Voice::Active, &[]),
        )
        .unwrap();
        let reference = tag_structure(&to_active, None).unwrap();
        let tag = tag_structure(&t, Some(&reference)).unwrap();
        assert_eq!(tag.alternation, Alternation::Go);
        assert_eq!(tag.voice, Voice::Passive);
        assert!(tag.a_movement);
        assert!(!tag.abar_movement);
        assert_eq!(tag.arg_order, ArgOrder::OS);
        assert_eq!(tag.order_vs_tuning, Some(RelativeOrder::Reverse));
    }

    #[test]
    fn embedded_wh_with_raising() {
        let t = SentenceTemplate::parse(
            "4f",
            "I wonder which [goal] the [subject] seems to have <verb.part> @to the [theme] .",
            declared(
                Alternation::To,
                Voice::Active,
                &[Transformation::WhEmbedded, Transformation::Raising],
            ),
        )
        .unwrap();
        let tag = tag_structure(&t, None).unwrap();
        let want: BTreeSet<_> = [Transformation::WhEmbedded, Transformation::Raising].into();
        assert_eq!(tag.transformations, want);
        assert!(tag.a_movement && tag.abar_movement);
    }

    #[test]
    fn which_object_question_is_active_os() {
        let t = SentenceTemplate::parse(
            "q",
            "Which [theme] has the [subject] <verb.part> ?",
            declared(Alternation::None, Voice::Active, &[Transformation::WhMatrix]),
        )
        .unwrap();
        let tag = tag_structure(&t, None).unwrap();
        assert_eq!((tag.voice, tag.arg_order), (Voice::Active, ArgOrder::OS));
    }

    #[test]
    fn same_and_reverse_against_tuning() {
        let d = |a| declared(a, Voice::Active, &[]);
        let to = SentenceTemplate::parse("to", "The [subject] <verb.past> the [theme] @to the [goal] .", d(Alternation::To)).unwrap();
        let go = SentenceTemplate::parse("go", "The [subject] <verb.past> the [goal] with the [theme] .", d(Alternation::Go)).unwrap();
        let reference = tag_structure(&to, None).unwrap();
        assert_eq!(tag_structure(&to, Some(&reference)).unwrap().order_vs_tuning, Some(RelativeOrder::Same));
        assert_eq!(tag_structure(&go, Some(&reference)).unwrap().order_vs_tuning, Some(RelativeOrder::Reverse));
    }
}
