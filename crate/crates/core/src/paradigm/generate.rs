//! Dataset generators for both experiments and the two probes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::catalog::{Catalog, Frames, UnpassivizableFrame, EXP1_STRUCTURE_COUNT};
use super::dataset::{DatasetSentence, GeneratedDataset, Purpose};
use super::lexical::{FillerSet, LexicalConfig, VerbEntry};
use super::template::{
    tag_structure, Alternation, Bindings, Declared, Realized, Role, SentenceTemplate, StructureTag, TenseAspect,
    Voice,
};
use crate::error::{Error, Result};
use crate::lexicon::{ArgumentNounSet, FrequencyNounSet};

/// Fine-tuning sentences per novel slot.
pub const FINETUNE_PER_SLOT: usize = 6;

/// Surfaces of the novel tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NovelWords {
    pub theme: String,
    pub goal: String,
    pub verb: String,
}

impl Default for NovelWords {
    fn default() -> Self {
        Self {
            theme: "thax".into(),
            goal: "gorx".into(),
            verb: "blorked".into(),
        }
    }
}

fn frame(id: &str, src: &str, alternation: Alternation, voice: Voice, tense: TenseAspect) -> Result<SentenceTemplate> {
    SentenceTemplate::parse(
        id,
        src,
        Declared {
            alternation,
            voice,
            tense,
            transformations: BTreeSet::new(),
        },
    )
}

/// The active fine-tuning frame for an alternation.
pub fn finetune_frame_exp1(frames: &Frames, alternation: Alternation) -> Result<SentenceTemplate> {
    frame(
        &format!("finetune_{}", alternation.label().to_lowercase()),
        frames.finetune_exp1.for_alternation(alternation)?,
        alternation,
        Voice::Active,
        TenseAspect::Past,
    )
}

/// Tag of the fine-tuning structure; the reference for same/reverse order.
pub fn tuning_reference_exp1(frames: &Frames, alternation: Alternation) -> Result<StructureTag> {
    tag_structure(&finetune_frame_exp1(frames, alternation)?, None)
}

/// Catalog structure whose test sentences condition the rest of the test set.
pub fn tuning_structure_id_exp1(alternation: Alternation) -> String {
    format!("{}_active_plain", alternation.label().to_lowercase())
}

fn novel_slot_sentences(
    name: &str,
    purpose: Purpose,
    template: &SentenceTemplate,
    verb: &VerbEntry,
    fillers: &FillerSet,
    novel: &NovelWords,
    reference: &StructureTag,
) -> Result<GeneratedDataset> {
    if fillers.goals.len() < FINETUNE_PER_SLOT || fillers.themes.len() < FINETUNE_PER_SLOT {
        return Err(Error::Generation(format!(
            "`{}` needs {FINETUNE_PER_SLOT} theme and {FINETUNE_PER_SLOT} goal fillers, found {} and {}",
            verb.lemma,
            fillers.themes.len(),
            fillers.goals.len()
        )));
    }
    let tag = tag_structure(template, Some(reference))?;
    let mut sentences = Vec::with_capacity(2 * FINETUNE_PER_SLOT);
    // novel theme with goal fillers, then novel goal with theme fillers
    let assignments = fillers.goals[..FINETUNE_PER_SLOT]
        .iter()
        .map(|g| (Role::Theme, novel.theme.as_str(), g.as_str()))
        .chain(
            fillers.themes[..FINETUNE_PER_SLOT]
                .iter()
                .map(|t| (Role::Goal, novel.goal.as_str(), t.as_str())),
        );
    for (i, (novel_role, novel_word, filler)) in assignments.enumerate() {
        let b = match novel_role {
            Role::Theme => Bindings::default().noun(Role::Theme, novel_word).noun(Role::Goal, filler),
            _ => Bindings::default().noun(Role::Goal, novel_word).noun(Role::Theme, filler),
        }
        .verb(verb)
        .noun(Role::Subject, "I");
        let realized = template.realize(&b)?;
        sentences.push(DatasetSentence::from_realized(
            format!("{name}/{i:02}"),
            &template.id,
            tag.clone(),
            &verb.lemma,
            novel_role.to_string(),
            realized,
            |role, surface| {
                if role == novel_role {
                    (Some(surface.to_string()), true)
                } else {
                    (Some(surface.to_string()), false)
                }
            },
        ));
    }
    Ok(GeneratedDataset::new(name, purpose, sentences))
}

/// Twelve sentences: six with the novel theme, six with the novel goal.
pub fn generate_finetune_exp1(
    verb: &VerbEntry,
    alternation: Alternation,
    fillers: &FillerSet,
    frames: &Frames,
    novel: &NovelWords,
) -> Result<GeneratedDataset> {
    let template = finetune_frame_exp1(frames, alternation)?;
    let reference = tag_structure(&template, None)?;
    novel_slot_sentences(
        &format!("finetune_{}_{}", verb.lemma, alternation.label()),
        Purpose::Finetune,
        &template,
        verb,
        fillers,
        novel,
        &reference,
    )
}

/// The verb of the other class standing in for `verb` in the third subpart.
pub fn other_class_verb<'a>(lex: &'a LexicalConfig, verb: &VerbEntry) -> Result<&'a VerbEntry> {
    let in_spray = lex.spray_verbs.iter().any(|v| v.lemma == verb.lemma);
    let other = if in_spray { &lex.load_verbs } else { &lex.spray_verbs };
    other
        .first()
        .ok_or_else(|| Error::Config("both verb classes need at least one verb".into()))
}

/// Four subparts: tuning data, opposite alternation, other verb in the
/// opposite alternation, and the passivized tuning structure.
pub fn generate_validation_exp1(
    verb: &VerbEntry,
    alternation: Alternation,
    lex: &LexicalConfig,
    frames: &Frames,
    novel: &NovelWords,
) -> Result<Vec<GeneratedDataset>> {
    let reference = tuning_reference_exp1(frames, alternation)?;
    let fillers = lex.fillers_for(&verb.lemma)?;
    let opposite = alternation.opposite();
    let other = other_class_verb(lex, verb)?;
    let other_fillers = lex.fillers_for(&other.lemma)?;
    let passive = frame(
        &format!("finetune_{}_passive", alternation.label().to_lowercase()),
        frames.finetune_exp1_passive.for_alternation(alternation)?,
        alternation,
        Voice::Passive,
        TenseAspect::Past,
    )?;
    let v = Purpose::ValidationSubpart;
    Ok(vec![
        novel_slot_sentences(
            &format!("valid_tuning_{}_{}", verb.lemma, alternation.label()),
            v,
            &finetune_frame_exp1(frames, alternation)?,
            verb,
            fillers,
            novel,
            &reference,
        )?,
        novel_slot_sentences(
            &format!("valid_alternation_{}_{}", verb.lemma, opposite.label()),
            v,
            &finetune_frame_exp1(frames, opposite)?,
            verb,
            fillers,
            novel,
            &reference,
        )?,
        novel_slot_sentences(
            &format!("valid_verb_{}_{}", other.lemma, opposite.label()),
            v,
            &finetune_frame_exp1(frames, opposite)?,
            other,
            other_fillers,
            novel,
            &reference,
        )?,
        novel_slot_sentences(
            &format!("valid_passive_{}_{}", verb.lemma, alternation.label()),
            v,
            &passive,
            verb,
            fillers,
            novel,
            &reference,
        )?,
    ])
}

/// Every catalog structure × verb × agent, both novel tokens masked.
///
/// `allow_custom` lifts the cardinality check for edited catalogs.
pub fn generate_test_exp1(
    verbs: &[VerbEntry],
    agents: &[String],
    catalog: &Catalog,
    tuning_reference: Option<&StructureTag>,
    novel: &NovelWords,
    allow_custom: bool,
) -> Result<GeneratedDataset> {
    if !allow_custom && catalog.len() != EXP1_STRUCTURE_COUNT {
        return Err(Error::Config(format!(
            "structure inventory has {} entries, expected {EXP1_STRUCTURE_COUNT}",
            catalog.len()
        )));
    }
    if verbs.is_empty() || agents.is_empty() {
        return Err(Error::Generation("test set needs verbs and agents".into()));
    }
    let mut sentences = Vec::with_capacity(catalog.len() * verbs.len() * agents.len());
    for s in &catalog.structures {
        let tag = tag_structure(s, tuning_reference)?;
        for v in verbs {
            for a in agents {
                let b = Bindings::default()
                    .verb(v)
                    .noun(Role::Subject, a.as_str())
                    .noun(Role::Theme, novel.theme.as_str())
                    .noun(Role::Goal, novel.goal.as_str());
                let realized = s.realize(&b)?;
                sentences.push(DatasetSentence::from_realized(
                    format!("{}/{}/{}", s.id, v.lemma, a),
                    &s.id,
                    tag.clone(),
                    &v.lemma,
                    format!("{}|{}", v.lemma, a),
                    realized,
                    |role, surface| (Some(surface.to_string()), matches!(role, Role::Theme | Role::Goal)),
                ));
            }
        }
    }
    Ok(GeneratedDataset::new("test_exp1", Purpose::Test, sentences))
}

/// Adverb × modifier-presence frames for the novel-verb experiment.
pub fn exp2_frame_settings(lex: &LexicalConfig) -> Vec<(String, Option<String>)> {
    let mut out = Vec::with_capacity(lex.adverbs.len() * 2);
    for a in &lex.adverbs {
        out.push((a.clone(), None));
        out.push((a.clone(), Some(lex.modifier.clone())));
    }
    out
}

fn exp2_frame(id: &str, src: &str, voice: Voice, tense: TenseAspect) -> Result<SentenceTemplate> {
    frame(id, src, Alternation::None, voice, tense)
}

/// Tag of the novel-verb fine-tuning structure (perfect active).
pub fn tuning_reference_exp2(frames: &Frames) -> Result<StructureTag> {
    tag_structure(
        &exp2_frame("perfect_active", &frames.exp2.perfect_active, Voice::Active, TenseAspect::Perfect)?,
        None,
    )
}

/// Catalog structure conditioning the novel-verb test set.
pub const TUNING_STRUCTURE_EXP2: &str = "active_plain";

#[allow(clippy::too_many_arguments)]
fn pairings(
    name: &str,
    purpose: Purpose,
    template: &SentenceTemplate,
    lex: &LexicalConfig,
    nouns: &ArgumentNounSet,
    novel_verb: &str,
    reference: &StructureTag,
    mask_verb: bool,
) -> Result<GeneratedDataset> {
    let verb = VerbEntry::invariant(novel_verb);
    let tag = tag_structure(template, Some(reference))?;
    let settings = exp2_frame_settings(lex);
    let mut sentences = Vec::with_capacity(settings.len() * nouns.subject_nouns.len() * nouns.object_nouns.len());
    for (fi, (adverb, modifier)) in settings.iter().enumerate() {
        for s in &nouns.subject_nouns {
            for o in &nouns.object_nouns {
                let mut b = Bindings::default()
                    .verb(&verb)
                    .adverb(adverb.as_str())
                    .noun(Role::Subject, s.as_str())
                    .noun(Role::Theme, o.as_str());
                if let Some(m) = modifier {
                    b = b.modifier(m.as_str());
                }
                let realized = template.realize(&b)?;
                sentences.push(DatasetSentence::from_realized(
                    format!("{name}/f{fi}/{s}/{o}"),
                    &template.id,
                    tag.clone(),
                    novel_verb,
                    format!("f{fi}"),
                    realized,
                    |role, surface| match role {
                        Role::Subject | Role::Theme => (Some(surface.to_string()), true),
                        Role::Verb => (Some(surface.to_string()), mask_verb),
                        _ => (None, false),
                    },
                ));
            }
        }
    }
    Ok(GeneratedDataset::new(name, purpose, sentences))
}

/// Sentences scored during neutral-noun selection: every fine-tuning frame
/// plus the extra scoring frames. Noun slots hold `placeholder`; they are
/// masked before scoring anyway.
pub fn exp2_scoring_sentences(
    frames: &Frames,
    lex: &LexicalConfig,
    novel_verb: &str,
    placeholder: &str,
) -> Result<Vec<Realized>> {
    let verb = VerbEntry::invariant(novel_verb);
    let base = |b: Bindings| b.verb(&verb).noun(Role::Subject, placeholder).noun(Role::Theme, placeholder);
    let tuning = exp2_frame("perfect_active", &frames.exp2.perfect_active, Voice::Active, TenseAspect::Perfect)?;
    let mut out = Vec::new();
    for (adverb, modifier) in exp2_frame_settings(lex) {
        let mut b = base(Bindings::default()).adverb(adverb.as_str());
        if let Some(m) = modifier {
            b = b.modifier(m.as_str());
        }
        out.push(tuning.realize(&b)?);
    }
    for (i, src) in frames.exp2.exp2_scoring.iter().enumerate() {
        let t = exp2_frame(&format!("scoring_{i}"), src, Voice::Active, TenseAspect::Perfect)?;
        out.push(t.realize(&base(Bindings::default()))?);
    }
    Ok(out)
}

/// Frames × subject/object pairings with verb, subject and object masked.
pub fn generate_finetune_exp2(
    frames: &Frames,
    lex: &LexicalConfig,
    nouns: &ArgumentNounSet,
    novel_verb: &str,
) -> Result<GeneratedDataset> {
    let t = exp2_frame("perfect_active", &frames.exp2.perfect_active, Voice::Active, TenseAspect::Perfect)?;
    let reference = tag_structure(&t, None)?;
    pairings("finetune_exp2", Purpose::Finetune, &t, lex, nouns, novel_verb, &reference, true)
}

/// Perfect active (the tuning data), perfect passive, past active, past passive.
///
/// Validation masks the two argument slots and leaves the verb visible.
pub fn generate_validation_exp2(
    frames: &Frames,
    lex: &LexicalConfig,
    nouns: &ArgumentNounSet,
    novel_verb: &str,
) -> Result<Vec<GeneratedDataset>> {
    let reference = tuning_reference_exp2(frames)?;
    let f = &frames.exp2;
    let specs = [
        ("perfect_active", &f.perfect_active, Voice::Active, TenseAspect::Perfect),
        ("perfect_passive", &f.perfect_passive, Voice::Passive, TenseAspect::Perfect),
        ("past_active", &f.past_active, Voice::Active, TenseAspect::Past),
        ("past_passive", &f.past_passive, Voice::Passive, TenseAspect::Past),
    ];
    specs
        .iter()
        .map(|(id, src, voice, tense)| {
            let t = exp2_frame(id, src, *voice, *tense)?;
            pairings(
                &format!("valid_{id}"),
                Purpose::ValidationSubpart,
                &t,
                lex,
                nouns,
                novel_verb,
                &reference,
                false,
            )
        })
        .collect()
}

/// Novel-verb test structures × adverbs, argument slots masked.
///
/// The realized nouns only fill the text; every noun of the set is scored at
/// the masked positions.
pub fn generate_test_exp2(
    catalog: &Catalog,
    frames: &Frames,
    lex: &LexicalConfig,
    nouns: &ArgumentNounSet,
    novel_verb: &str,
) -> Result<GeneratedDataset> {
    let reference = tuning_reference_exp2(frames)?;
    let verb = VerbEntry::invariant(novel_verb);
    let n = nouns.subject_nouns.len().min(nouns.object_nouns.len());
    if n == 0 {
        return Err(Error::Generation("argument noun set is empty".into()));
    }
    let mut sentences = Vec::new();
    let mut k = 0;
    for s in &catalog.structures {
        let tag = tag_structure(s, Some(&reference))?;
        for adverb in &lex.adverbs {
            let subj = &nouns.subject_nouns[k % n];
            let obj = &nouns.object_nouns[k % n];
            k += 1;
            let b = Bindings::default()
                .verb(&verb)
                .adverb(adverb.as_str())
                .noun(Role::Subject, subj.as_str())
                .noun(Role::Theme, obj.as_str());
            let realized = s.realize(&b)?;
            sentences.push(DatasetSentence::from_realized(
                format!("{}/{adverb}", s.id),
                &s.id,
                tag.clone(),
                novel_verb,
                adverb.clone(),
                realized,
                |role, surface| match role {
                    Role::Subject | Role::Theme => (Some(surface.to_string()), true),
                    Role::Verb => (Some(surface.to_string()), false),
                    _ => (None, false),
                },
            ));
        }
    }
    Ok(GeneratedDataset::new("test_exp2", Purpose::Test, sentences))
}

/// Two-PP frames ("with" and "on") for every verb, all noun slots masked.
pub fn generate_probe_two_pp(verbs: &[VerbEntry], frames: &Frames, placeholder: &str) -> Result<GeneratedDataset> {
    let variants = [("with", &frames.two_pp.with), ("on", &frames.two_pp.on)];
    let mut sentences = Vec::with_capacity(verbs.len() * variants.len());
    for v in verbs {
        for (label, src) in variants {
            let t = frame(&format!("two_pp_{label}"), src, Alternation::Go, Voice::Passive, TenseAspect::Past)?;
            let tag = tag_structure(&t, None)?;
            let b = Bindings::default()
                .verb(v)
                .noun(Role::Goal, placeholder)
                .noun(Role::Filler, placeholder)
                .noun(Role::Theme, placeholder);
            let realized = t.realize(&b)?;
            sentences.push(DatasetSentence::from_realized(
                format!("two_pp_{label}/{}", v.lemma),
                &t.id,
                tag,
                &v.lemma,
                label.to_string(),
                realized,
                |role, _| (None, role.is_noun()),
            ));
        }
    }
    Ok(GeneratedDataset::new("probe_two_pp", Purpose::Probe, sentences))
}

fn frame_verb(f: &UnpassivizableFrame) -> VerbEntry {
    VerbEntry {
        lemma: f.forms[0].clone(),
        past: f.forms[1].clone(),
        participle: f.forms[2].clone(),
        to_preposition: String::new(),
        particle: String::new(),
    }
}

/// Query strings used to count subject and object occurrences of `noun`.
pub fn unpassivizable_queries(f: &UnpassivizableFrame, noun: &str) -> (String, String) {
    (f.subject_query.replace("NOUN", noun), f.object_query.replace("NOUN", noun))
}

/// Active/passive pairs sharing a noun pair; pair `i` uses the i-th good
/// subject and the i-th good object of the verb's noun set.
pub fn generate_probe_unpassivizable(
    frames: &[UnpassivizableFrame],
    noun_sets: &[(String, FrequencyNounSet)],
    max_pairs: usize,
) -> Result<GeneratedDataset> {
    let mut sentences = Vec::new();
    for f in frames {
        let set = noun_sets
            .iter()
            .find(|(v, _)| *v == f.verb)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Generation(format!("no noun set for `{}`", f.verb)))?;
        let verb = frame_verb(f);
        let active = frame(&format!("{}_active", f.verb), &f.active, Alternation::None, Voice::Active, TenseAspect::Present)?;
        let passive = frame(
            &format!("{}_passive", f.verb),
            &f.passive,
            Alternation::None,
            Voice::Passive,
            TenseAspect::Present,
        )?;
        let reference = tag_structure(&active, None)?;
        let n = set.good_subjects.len().min(set.good_objects.len()).min(max_pairs);
        for i in 0..n {
            let subj = &set.good_subjects[i].0;
            let obj = &set.good_objects[i].0;
            for t in [&active, &passive] {
                let b = Bindings::default()
                    .verb(&verb)
                    .noun(Role::Subject, subj.as_str())
                    .noun(Role::Theme, obj.as_str());
                let realized = t.realize(&b)?;
                sentences.push(DatasetSentence::from_realized(
                    format!("{}/{i}", t.id),
                    &t.id,
                    tag_structure(t, Some(&reference))?,
                    &f.verb,
                    format!("{}|{i}", f.verb),
                    realized,
                    |role, surface| (Some(surface.to_string()), role.is_noun()),
                ));
            }
        }
    }
    Ok(GeneratedDataset::new("probe_unpassivizable", Purpose::Probe, sentences))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paradigm::template::{ArgOrder, RelativeOrder, Transformation};

    fn lex() -> LexicalConfig {
        LexicalConfig::default()
    }

    fn nouns() -> ArgumentNounSet {
        ArgumentNounSet {
            subject_nouns: ["doctor", "nurse", "pirate", "sailor", "robot", "tiger"].map(String::from).to_vec(),
            object_nouns: ["apple", "bread", "candle", "cheese", "drum", "lamp"].map(String::from).to_vec(),
            scores: Default::default(),
        }
    }

    #[test]
    fn finetune_exp1_spray_to() {
        let l = lex();
        let v = l.verb("spray").unwrap();
        let d = generate_finetune_exp1(v, Alternation::To, l.fillers_for("spray").unwrap(), &Frames::default_frames(), &NovelWords::default())
            .unwrap();
        assert_eq!(d.len(), 12);
        assert!(d.texts().contains(&"I sprayed the thax onto the door."));
        let theme = d.sentences.iter().filter(|s| s.text.contains("thax")).count();
        let goal = d.sentences.iter().filter(|s| s.text.contains("gorx")).count();
        assert_eq!((theme, goal), (6, 6));
        for s in &d.sentences {
            assert_eq!(s.mask_count(), 1);
            assert!(s.text.contains("sprayed"));
        }
    }

    #[test]
    fn too_few_fillers() {
        let l = lex();
        let mut f = l.fillers_for("spray").unwrap().clone();
        f.goals.truncate(5);
        let r = generate_finetune_exp1(l.verb("spray").unwrap(), Alternation::To, &f, &Frames::default_frames(), &NovelWords::default());
        assert!(matches!(r, Err(Error::Generation(_))));
    }

    #[test]
    fn validation_subparts_for_spray_go() {
        let l = lex();
        let subs = generate_validation_exp1(l.verb("spray").unwrap(), Alternation::Go, &l, &Frames::default_frames(), &NovelWords::default())
            .unwrap();
        let names: Vec<_> = subs.iter().map(|d| d.name.as_str()).collect();
        assert_eq!(
            names,
            ["valid_tuning_spray_GO", "valid_alternation_spray_TO", "valid_verb_load_TO", "valid_passive_spray_GO"]
        );
        assert!(subs[2].sentences[0].text.starts_with("I loaded"));
        assert_eq!(subs[3].sentences[0].tag.voice, Voice::Passive);
        assert_eq!(subs[1].sentences[0].tag.order_vs_tuning, Some(RelativeOrder::Reverse));
    }

    #[test]
    fn full_exp1_test_set() {
        let l = lex();
        let frames = Frames::default_frames();
        let r = tuning_reference_exp1(&frames, Alternation::To).unwrap();
        let d = generate_test_exp1(&l.test_verbs(), &l.agents, &Catalog::exp1_default(), Some(&r), &NovelWords::default(), false)
            .unwrap();
        assert_eq!(d.len(), 5616);
        assert!(d.sentences.iter().all(|s| s.mask_count() == 2));
        let s = d.sentences.iter().find(|s| s.text == "The gorx was sprayed with the thax by the man.").unwrap();
        assert_eq!(s.tag.alternation, Alternation::Go);
        assert!(s.tag.a_movement && !s.tag.abar_movement);
        assert_eq!(s.tag.arg_order, ArgOrder::OS);
        assert_eq!(s.tag.order_vs_tuning, Some(RelativeOrder::Reverse));
        let s = d
            .sentences
            .iter()
            .find(|s| s.text == "I wonder which thax the man seems to have sprayed onto the gorx.")
            .unwrap();
        let want: BTreeSet<_> = [Transformation::WhEmbedded, Transformation::Raising].into();
        assert_eq!(s.tag.transformations, want);
    }

    #[test]
    fn inventory_size_checked() {
        let l = lex();
        let mut c = Catalog::exp1_default();
        c.structures.pop();
        let nw = NovelWords::default();
        assert!(generate_test_exp1(&l.test_verbs(), &l.agents, &c, None, &nw, false).is_err());
        assert_eq!(generate_test_exp1(&l.test_verbs(), &l.agents, &c, None, &nw, true).unwrap().len(), 77 * 72);
    }

    #[test]
    fn exp2_sets() {
        let l = lex();
        let f = Frames::default_frames();
        let d = generate_finetune_exp2(&f, &l, &nouns(), "blorked").unwrap();
        assert_eq!(d.len(), 288);
        assert!(d.sentences.iter().all(|s| s.mask_count() == 3));
        assert!(d.texts().contains(&"The doctor has always blorked the apple."));
        let v = generate_validation_exp2(&f, &l, &nouns(), "blorked").unwrap();
        assert_eq!(v.len(), 4);
        assert!(v[1].texts().contains(&"The apple has always been blorked by the doctor."));
        for d in &v {
            assert!(d.sentences.iter().all(|s| s.mask_count() == 2 && s.text.contains("blorked")));
        }
        let t = generate_test_exp2(&Catalog::exp2_default(), &f, &l, &nouns(), "blorked").unwrap();
        assert_eq!(t.len(), 24 * 4);
    }

    #[test]
    fn two_pp_probe() {
        let l = lex();
        let d = generate_probe_two_pp(&l.test_verbs(), &Frames::default_frames(), "thing").unwrap();
        assert_eq!(d.len(), 16);
        assert!(d.sentences.iter().all(|s| s.mask_count() == 3));
        assert!(d.texts().contains(&"The thing on the thing was sprayed on the thing."));
    }

    #[test]
    fn unpassivizable_pairs() {
        let f = Frames::default_frames();
        let set = FrequencyNounSet {
            good_subjects: vec![("car".into(), 10), ("house".into(), 5)],
            good_objects: vec![("driver".into(), 9), ("garden".into(), 4)],
        };
        let sets: Vec<_> = ["have", "cost", "resemble"].iter().map(|v| (v.to_string(), set.clone())).collect();
        let d = generate_probe_unpassivizable(&f.unpassivizable, &sets, 10).unwrap();
        assert_eq!(d.len(), 3 * 2 * 2);
        assert!(d.texts().contains(&"A driver is had by a car."));
        assert!(d.texts().contains(&"A car has a driver."));
        assert_eq!(unpassivizable_queries(&f.unpassivizable[0], "car"), ("A car has a".into(), "has a car .".into()));
    }

    #[test]
    fn jsonl_round_trip() {
        let l = lex();
        let d = generate_finetune_exp1(l.verb("load").unwrap(), Alternation::Go, l.fillers_for("load").unwrap(), &Frames::default_frames(), &NovelWords::default())
            .unwrap();
        let back = GeneratedDataset::from_jsonl(&d.to_jsonl().unwrap()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn scoring_set_is_tuning_frames_plus_extras() {
        let s = exp2_scoring_sentences(&Frames::default_frames(), &lex(), "blorked", "man").unwrap();
        assert_eq!(s.len(), 8 + 5);
        assert!(s.iter().all(|r| r.slot(Role::Subject).is_some() && r.slot(Role::Theme).is_some()));
        assert!(s.iter().all(|r| r.text.contains("blorked")));
    }
}
