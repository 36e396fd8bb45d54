//! Stages of a single run. Every stage reads its inputs from the run
//! directory, so a run can resume after any completed stage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{backend_slug, ExperimentConfig, ExperimentKind, RunSpec};
use super::manifest::{RunManifest, Stage};
use super::plot;
use super::report;
use crate::backend::{load_baseline, verify_tokenization_invariance, ModelHandle, Snapshot};
use crate::error::{Error, Result};
use crate::eval::{
    conditional_filter, curves_from_trajectory, score_exp1, score_exp2, ConfidenceCurve, ConfidenceRecord,
    Exp1Validator, Exp2Validator, PredictionRecord,
};
use crate::geometry::{
    baseline_correlation_probe, cosine_profile, kl_audit, DriftAudit, EmbeddingMatrix, GroupLabel,
    GroupSimilarity, NounGroup, TopDirections,
};
use crate::lexicon::{
    init_novel_embedding, read_frequency_table, select_frequency_disjoint_nouns, select_neutral_nouns,
    single_token_id, ArgumentNounSet, LexiconManifest, NovelRole, NovelToken,
};
use crate::paradigm::{
    exp2_scoring_sentences, generate_finetune_exp1, generate_finetune_exp2, generate_probe_two_pp,
    generate_probe_unpassivizable, generate_test_exp1, generate_test_exp2, generate_validation_exp1,
    generate_validation_exp2, tuning_reference_exp1, tuning_structure_id_exp1, Alternation, Catalog, Frames,
    GeneratedDataset, LexicalConfig, TUNING_STRUCTURE_EXP2,
};
use crate::tuning::{finetune, sample_reference_batch, FinetunedState, TuningConfig, TuningTrajectory};

/// Deterministic sub-seed for one purpose within a run.
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    write_file(path, &out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    src.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&src)?)
}

/// Fine-tuning outcome persisted next to the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneSummary {
    pub state: FinetunedState,
    pub snapshot: String,
}

/// Per-run numbers that the tables and plots are built from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub finetune_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub conditional_accuracy: Option<f64>,
    pub two_pp_r: Option<f64>,
    pub two_pp_p: Option<f64>,
    pub kl_pool_mean: Option<f64>,
    pub kl_targets_mean: Option<f64>,
}

/// Cosine similarities of one group member to both novel tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosinePoint {
    pub group: String,
    pub member: String,
    pub theme: f64,
    pub goal: f64,
}

/// Mean confidence of one noun in the active and passive tuning-tense frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidencePoint {
    pub noun: String,
    pub role: String,
    pub active: f64,
    pub passive: f64,
}

pub struct RunContext<'a> {
    pub cfg: &'a ExperimentConfig,
    pub spec: &'a RunSpec,
    pub dir: PathBuf,
    pub manifest: RunManifest,
    lex: LexicalConfig,
    frames: Frames,
    catalog: Catalog,
    baseline: Option<ModelHandle>,
    tuned: Option<ModelHandle>,
}

impl<'a> RunContext<'a> {
    pub fn new(cfg: &'a ExperimentConfig, spec: &'a RunSpec, manifest: RunManifest) -> Result<Self> {
        Ok(Self {
            dir: spec.dir(&cfg.output_dir),
            lex: cfg.lexicon()?,
            frames: cfg.frames()?,
            catalog: cfg.catalog()?,
            cfg,
            spec,
            manifest,
            baseline: None,
            tuned: None,
        })
    }

    fn model(&self) -> String {
        backend_slug(&self.spec.backend)
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn put_jsonl<T: Serialize>(&mut self, name: &str, rel: &str, rows: &[T]) -> Result<()> {
        write_jsonl(&self.path(rel), rows)?;
        self.manifest.artifacts.insert(name.into(), rel.into());
        Ok(())
    }

    fn put_json<T: Serialize>(&mut self, name: &str, rel: &str, value: &T) -> Result<()> {
        write_file(&self.path(rel), &serde_json::to_string_pretty(value)?)?;
        self.manifest.artifacts.insert(name.into(), rel.into());
        Ok(())
    }

    fn put_text(&mut self, name: &str, rel: &str, text: &str) -> Result<()> {
        write_file(&self.path(rel), text)?;
        self.manifest.artifacts.insert(name.into(), rel.into());
        Ok(())
    }

    fn get_path(&self, name: &str) -> Result<PathBuf> {
        Ok(self.path(self.manifest.artifact(name)?))
    }

    fn get_jsonl<T: DeserializeOwned>(&self, name: &str) -> Result<Vec<T>> {
        read_jsonl(&self.get_path(name)?)
    }

    fn get_json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        read_json(&self.get_path(name)?)
    }

    fn dataset(&self, name: &str) -> Result<GeneratedDataset> {
        GeneratedDataset::read_jsonl(&self.get_path(&format!("dataset:{name}"))?)
    }

    fn baseline(&mut self) -> Result<&ModelHandle> {
        if self.baseline.is_none() {
            let h = load_baseline(&self.spec.backend)?;
            self.manifest
                .backend_versions
                .insert(self.spec.backend.clone(), h.baseline().hash.clone());
            self.baseline = Some(h);
        }
        Ok(self.baseline.as_ref().expect("just loaded"))
    }

    fn alternation(&self) -> Result<Alternation> {
        self.spec
            .condition
            .rsplit_once('-')
            .ok_or_else(|| Error::Config(format!("condition `{}` is not verb-alternation", self.spec.condition)))?
            .1
            .parse()
    }

    fn tuning_verb(&self) -> &str {
        self.spec.condition.rsplit_once('-').map(|p| p.0).unwrap_or(&self.spec.condition)
    }

    fn novel_tokens(&self) -> Vec<NovelToken> {
        let n = &self.cfg.datasets.novel;
        let seed = self.spec.seed;
        match self.spec.experiment {
            ExperimentKind::Exp1 | ExperimentKind::ProbeTwoPp => vec![
                NovelToken {
                    surface: n.theme.clone(),
                    role: NovelRole::Theme,
                    init_seed: derive_seed(seed, "init:theme"),
                },
                NovelToken {
                    surface: n.goal.clone(),
                    role: NovelRole::Goal,
                    init_seed: derive_seed(seed, "init:goal"),
                },
            ],
            ExperimentKind::Exp2 => vec![NovelToken {
                surface: n.verb.clone(),
                role: NovelRole::Verb,
                init_seed: derive_seed(seed, "init:verb"),
            }],
            ExperimentKind::ProbeUnpassivizable => Vec::new(),
        }
    }

    /// Baseline copy with the run's novel tokens registered and initialized.
    fn augmented(&mut self) -> Result<ModelHandle> {
        let tokens = self.novel_tokens();
        let mut h = self.baseline()?.fork()?;
        let surfaces: Vec<&str> = tokens.iter().map(|t| t.surface.as_str()).collect();
        h.add_tokens(&surfaces)?;
        for t in &tokens {
            init_novel_embedding(&mut h, t, t.init_seed)?;
        }
        Ok(h)
    }

    fn tuned(&mut self) -> Result<&ModelHandle> {
        if self.tuned.is_none() {
            let h = if self.spec.experiment == ExperimentKind::ProbeUnpassivizable {
                self.baseline()?.fork()?
            } else {
                let summary: TuneSummary = self.get_json("tune")?;
                let snap = Snapshot::load(&self.path(&summary.snapshot))?;
                let mut h = self.augmented()?;
                h.restore(&snap)?;
                h
            };
            self.tuned = Some(h);
        }
        Ok(self.tuned.as_ref().expect("just loaded"))
    }

    fn argument_nouns(&self) -> Result<ArgumentNounSet> {
        let lm: LexiconManifest = self.get_json("lexicon")?;
        match self.spec.experiment {
            ExperimentKind::ProbeUnpassivizable => {
                let set = lm
                    .frequency_nouns
                    .get(&self.spec.condition)
                    .ok_or_else(|| Error::Report(format!("run `{}` has no frequency nouns", self.spec.run_id)))?;
                Ok(ArgumentNounSet {
                    subject_nouns: set.good_subjects.iter().map(|p| p.0.clone()).collect(),
                    object_nouns: set.good_objects.iter().map(|p| p.0.clone()).collect(),
                    scores: BTreeMap::new(),
                })
            }
            _ => lm
                .argument_nouns
                .ok_or_else(|| Error::Report(format!("run `{}` has no argument nouns", self.spec.run_id))),
        }
    }

    pub fn run_stage(&mut self, stage: Stage) -> Result<Option<String>> {
        match stage {
            Stage::SelectNouns => self.select_nouns(),
            Stage::Generate => self.generate(),
            Stage::Verify => self.verify(),
            Stage::Tune => self.tune(),
            Stage::Eval => self.eval(),
            Stage::Analyze => self.analyze(),
            Stage::Report => self.report(),
        }
    }

    fn select_nouns(&mut self) -> Result<Option<String>> {
        let mut lm = LexiconManifest {
            novel_tokens: self.novel_tokens(),
            ..Default::default()
        };
        let note = match self.spec.experiment {
            ExperimentKind::Exp2 => {
                // the argument set is tied to the condition, not the seed
                let k: u64 = self.spec.condition.trim_start_matches("set").parse().unwrap_or(0);
                let verb = NovelToken {
                    surface: self.cfg.datasets.novel.verb.clone(),
                    role: NovelRole::Verb,
                    init_seed: derive_seed(k, "selection:verb"),
                };
                let mut h = self.baseline()?.fork()?;
                h.add_tokens(&[&verb.surface])?;
                init_novel_embedding(&mut h, &verb, verb.init_seed)?;
                let placeholder = h.tokenizer().special().mask.clone();
                let scoring = exp2_scoring_sentences(&self.frames, &self.lex, &verb.surface, &placeholder)?;
                let set = select_neutral_nouns(&h, &scoring, &self.cfg.candidate_pool()?)?;
                let note = format!("subjects {:?}, objects {:?}", set.subject_nouns, set.object_nouns);
                lm.argument_nouns = Some(set);
                Some(note)
            }
            ExperimentKind::ProbeUnpassivizable => {
                let f = self
                    .cfg
                    .datasets
                    .frequency
                    .iter()
                    .find(|f| f.verb == self.spec.condition)
                    .ok_or_else(|| Error::Config(format!("no frequency tables for `{}`", self.spec.condition)))?
                    .clone();
                let subj = read_frequency_table(&f.subject_table)?;
                let obj = read_frequency_table(&f.object_table)?;
                let tok = self.baseline()?.tokenizer().clone();
                let set = select_frequency_disjoint_nouns(&subj, &obj, self.cfg.datasets.top_k, |w| {
                    single_token_id(&tok, w).is_some()
                })?;
                let note = format!("{} subjects, {} objects", set.good_subjects.len(), set.good_objects.len());
                lm.frequency_nouns.insert(f.verb.clone(), set);
                Some(note)
            }
            _ => None,
        };
        self.put_json("lexicon", "lexicon.json", &lm)?;
        Ok(note)
    }

    fn put_dataset(&mut self, d: &GeneratedDataset) -> Result<()> {
        let rel = format!("datasets/{}.jsonl", d.name);
        let p = self.path(&rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        d.write_jsonl(&p)?;
        self.manifest.dataset_hashes.insert(d.name.clone(), d.content_hash()?);
        self.manifest.artifacts.insert(format!("dataset:{}", d.name), rel);
        Ok(())
    }

    fn dataset_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .manifest
            .artifacts
            .keys()
            .filter_map(|k| k.strip_prefix("dataset:").map(str::to_string))
            .collect();
        names.sort();
        names
    }

    fn validation_names(&self) -> Vec<String> {
        self.dataset_names().into_iter().filter(|n| n.starts_with("valid_")).collect()
    }

    fn generate(&mut self) -> Result<Option<String>> {
        let novel = self.cfg.datasets.novel.clone();
        let mut sets = Vec::new();
        match self.spec.experiment {
            ExperimentKind::Exp1 | ExperimentKind::ProbeTwoPp => {
                let alt = self.alternation()?;
                let verb = self.lex.verb(self.tuning_verb())?.clone();
                let fillers = self.lex.fillers_for(&verb.lemma)?.clone();
                sets.push(generate_finetune_exp1(&verb, alt, &fillers, &self.frames, &novel)?);
                sets.extend(generate_validation_exp1(&verb, alt, &self.lex, &self.frames, &novel)?);
                if self.spec.experiment == ExperimentKind::Exp1 {
                    let reference = tuning_reference_exp1(&self.frames, alt)?;
                    sets.push(generate_test_exp1(
                        &self.lex.test_verbs(),
                        &self.lex.agents,
                        &self.catalog,
                        Some(&reference),
                        &novel,
                        self.cfg.datasets.allow_custom_inventory,
                    )?);
                }
                let placeholder = self.baseline()?.tokenizer().special().mask.clone();
                sets.push(generate_probe_two_pp(&self.lex.test_verbs(), &self.frames, &placeholder)?);
            }
            ExperimentKind::Exp2 => {
                let nouns = self.argument_nouns()?;
                sets.push(generate_finetune_exp2(&self.frames, &self.lex, &nouns, &novel.verb)?);
                sets.extend(generate_validation_exp2(&self.frames, &self.lex, &nouns, &novel.verb)?);
                sets.push(generate_test_exp2(&self.catalog, &self.frames, &self.lex, &nouns, &novel.verb)?);
            }
            ExperimentKind::ProbeUnpassivizable => {
                let lm: LexiconManifest = self.get_json("lexicon")?;
                let frames: Vec<_> = self
                    .frames
                    .unpassivizable
                    .iter()
                    .filter(|f| f.verb == self.spec.condition)
                    .cloned()
                    .collect();
                let sets_in: Vec<_> = lm.frequency_nouns.into_iter().collect();
                sets.push(generate_probe_unpassivizable(&frames, &sets_in, self.cfg.datasets.max_pairs)?);
            }
        }
        let counts: Vec<String> = sets.iter().map(|d| format!("{} {}", d.name, d.len())).collect();
        for d in &sets {
            self.put_dataset(d)?;
        }
        Ok(Some(counts.join(", ")))
    }

    fn verify(&mut self) -> Result<Option<String>> {
        let mut texts = Vec::new();
        for name in self.dataset_names() {
            texts.extend(self.dataset(&name)?.sentences.into_iter().map(|s| s.text));
        }
        let augmented = self.augmented()?;
        let report = verify_tokenization_invariance(&augmented, self.baseline()?, &texts);
        let failures = report.failures().count();
        self.put_json("invariance", "invariance.json", &report)?;
        if failures > 0 {
            return Err(Error::InvarianceGate(failures));
        }
        Ok(Some(format!("{} sentences identical", texts.len())))
    }

    fn tuning_config(&self) -> TuningConfig {
        TuningConfig {
            seed: self.spec.seed,
            ..self.cfg.tuning.clone()
        }
    }

    fn record_settings(&mut self) -> Result<()> {
        let dropout = self.baseline()?.network().config().dropout;
        let t = self.tuning_config();
        let s = &mut self.manifest.settings;
        s.insert("optimizer".into(), "adamw(beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0)".into());
        s.insert("train_dropout".into(), if t.train_dropout { dropout.to_string() } else { "0".into() });
        s.insert("learning_rate".into(), t.learning_rate.to_string());
        s.insert("freeze_policy".into(), t.freeze_policy.as_str().into());
        s.insert("epochs".into(), format!("{}..={} patience {}", t.min_epochs, t.max_epochs, t.patience));
        s.insert("lambda".into(), self.cfg.loss.lambda.to_string());
        s.insert("kl_sample_size".into(), self.cfg.loss.kl_sample_size.to_string());
        Ok(())
    }

    fn tune(&mut self) -> Result<Option<String>> {
        if self.spec.experiment == ExperimentKind::ProbeUnpassivizable {
            return Ok(Some("baseline model, no fine-tuning".into()));
        }
        self.record_settings()?;
        let mut handle = self.augmented()?;
        let tuning_set = self.dataset(&self.finetune_name()?)?;
        let subparts = self
            .validation_names()
            .iter()
            .map(|n| self.dataset(n))
            .collect::<Result<Vec<_>>>()?;
        let cfg = self.tuning_config();
        let mut trajectory = TuningTrajectory::default();
        let result = match self.spec.experiment {
            ExperimentKind::Exp2 => {
                let nouns = self.argument_nouns()?;
                let mut v = Exp2Validator::new(&handle, subparts, &nouns)?;
                finetune(&mut handle, &tuning_set, &mut v, &cfg, &self.cfg.loss, &mut trajectory)
            }
            _ => {
                let mut v = Exp1Validator::new(&handle, subparts, self.cfg.datasets.novel.clone())?;
                finetune(&mut handle, &tuning_set, &mut v, &cfg, &self.cfg.loss, &mut trajectory)
            }
        };
        // the trajectory is kept even when training diverged
        self.put_text("trajectory", "trajectory.jsonl", &trajectory.to_jsonl()?)?;
        let state = result?;
        let snap = handle.snapshot()?;
        snap.persist(&self.path("snapshots"))?;
        let summary = TuneSummary {
            state: state.clone(),
            snapshot: format!("snapshots/{}", snap.hash),
        };
        self.put_json("tune", "tune.json", &summary)?;
        self.tuned = Some(handle);
        Ok(Some(format!(
            "best epoch {} of {}, validation loss {:.4}",
            state.best_epoch, state.final_epoch, state.best_validation_loss
        )))
    }

    fn finetune_name(&self) -> Result<String> {
        self.dataset_names()
            .into_iter()
            .find(|n| n.starts_with("finetune"))
            .ok_or_else(|| Error::Report(format!("run `{}` has no fine-tuning set", self.spec.run_id)))
    }

    /// Scored records are stored under the dataset's role in the run:
    /// `finetune`, `test`, a validation subpart name, or `probe`.
    fn eval(&mut self) -> Result<Option<String>> {
        let model = self.model();
        let finetune_name = self.finetune_name();
        let mut jobs: Vec<(String, String)> = Vec::new();
        for name in self.dataset_names() {
            let key = if Some(&name) == finetune_name.as_ref().ok() {
                "finetune".to_string()
            } else if name.starts_with("test") {
                "test".to_string()
            } else if name == "probe_unpassivizable" {
                "probe".to_string()
            } else if name.starts_with("valid") && self.spec.experiment == ExperimentKind::Exp2 {
                name.clone()
            } else {
                continue;
            };
            jobs.push((name, key));
        }
        let mut counts = Vec::new();
        for (name, key) in jobs {
            let data = self.dataset(&name)?;
            let rel = format!("records/{key}.jsonl");
            let n = match self.spec.experiment {
                ExperimentKind::Exp1 | ExperimentKind::ProbeTwoPp => {
                    let tuning = self.alternation()?.label().to_string();
                    let novel = self.cfg.datasets.novel.clone();
                    let recs = score_exp1(self.tuned()?, &data, &novel, &model, &tuning)?;
                    self.put_jsonl(&format!("records:{key}"), &rel, &recs)?;
                    recs.len()
                }
                ExperimentKind::Exp2 => {
                    let nouns = self.argument_nouns()?;
                    let recs = score_exp2(self.tuned()?, &data, &nouns, &model, "perfect_active")?;
                    self.put_jsonl(&format!("records:{key}"), &rel, &recs)?;
                    recs.len()
                }
                ExperimentKind::ProbeUnpassivizable => {
                    let nouns = self.argument_nouns()?;
                    let recs = score_exp2(self.tuned()?, &data, &nouns, &model, "baseline")?;
                    self.put_jsonl(&format!("records:{key}"), &rel, &recs)?;
                    recs.len()
                }
            };
            counts.push(format!("{key} {n}"));
        }
        Ok(Some(counts.join(", ")))
    }

    fn analyze(&mut self) -> Result<Option<String>> {
        let mut summary = RunSummary::default();
        match self.spec.experiment {
            ExperimentKind::Exp1 | ExperimentKind::ProbeTwoPp => {
                let ft: Vec<PredictionRecord> = self.get_jsonl("records:finetune")?;
                summary.finetune_accuracy = report::accuracy(&ft)?;
                if self.spec.experiment == ExperimentKind::Exp1 {
                    let test: Vec<PredictionRecord> = self.get_jsonl("records:test")?;
                    let tuning_id = tuning_structure_id_exp1(self.alternation()?);
                    let (tuning, rest) = report::split_tuning(&test, |r| r.meta.structure_id == tuning_id);
                    let kept = conditional_filter(&rest, &tuning)?;
                    summary.test_accuracy = report::accuracy(&rest)?;
                    summary.conditional_accuracy = report::accuracy(&kept)?;
                    for t in report::exp1_tables(&kept)? {
                        self.put_text(&format!("table:{}", t.name), &format!("tables/{}.tsv", t.name), &t.text)?;
                    }
                }
                self.cosine_analysis()?;
                let (r, p) = self.two_pp_analysis()?;
                summary.two_pp_r = r;
                summary.two_pp_p = p;
            }
            ExperimentKind::Exp2 => {
                let ft: Vec<ConfidenceRecord> = self.get_jsonl("records:finetune")?;
                let test: Vec<ConfidenceRecord> = self.get_jsonl("records:test")?;
                let (tuning, rest) = report::split_tuning(&test, |r| r.meta.structure_id == TUNING_STRUCTURE_EXP2);
                let kept = conditional_filter(&rest, &tuning)?;
                summary.finetune_accuracy = report::accuracy(&ft)?;
                summary.test_accuracy = report::accuracy(&rest)?;
                summary.conditional_accuracy = report::accuracy(&kept)?;
                for t in report::voice_order_tables(&kept, &ft)? {
                    self.put_text(&format!("table:{}", t.name), &format!("tables/{}.tsv", t.name), &t.text)?;
                }
                let active: Vec<ConfidenceRecord> = self.get_jsonl("records:valid_perfect_active")?;
                let passive: Vec<ConfidenceRecord> = self.get_jsonl("records:valid_perfect_passive")?;
                let points = report::confidence_points(&active, &passive);
                self.put_jsonl("confidence_points", "analysis/confidence_points.jsonl", &points)?;
                let traj = TuningTrajectory::from_jsonl(&std::fs::read_to_string(self.get_path("trajectory")?).map_err(
                    |e| Error::io(self.dir.join("trajectory.jsonl"), e),
                )?)?;
                let curves = curves_from_trajectory(&traj);
                self.put_json("curves", "analysis/curves.json", &curves)?;
                let (pool_mean, target_mean) = self.kl_analysis()?;
                summary.kl_pool_mean = pool_mean;
                summary.kl_targets_mean = target_mean;
            }
            ExperimentKind::ProbeUnpassivizable => {
                let recs: Vec<ConfidenceRecord> = self.get_jsonl("records:probe")?;
                summary.test_accuracy = report::accuracy(&recs)?;
                for t in report::unpassivizable_tables(&recs)? {
                    self.put_text(&format!("table:{}", t.name), &format!("tables/{}.tsv", t.name), &t.text)?;
                }
            }
        }
        self.put_json("summary", "analysis/summary.json", &summary)?;
        Ok(summary.conditional_accuracy.map(|a| format!("conditional accuracy {:.4}", a)))
    }

    fn noun_groups(&mut self, handle: &ModelHandle) -> Result<[NounGroup; 2]> {
        Ok([
            NounGroup::resolve(GroupLabel::Mass, &self.lex.mass_nouns, handle)?,
            NounGroup::resolve(GroupLabel::Count, &self.lex.count_nouns, handle)?,
        ])
    }

    fn cosine_analysis(&mut self) -> Result<()> {
        let d = self.cfg.analysis.pca_directions;
        let novel = self.cfg.datasets.novel.clone();
        self.tuned()?;
        let handle = self.tuned.take().expect("loaded");
        let result = (|| {
            let e = EmbeddingMatrix::from_handle(&handle)?;
            let corrected = TopDirections::fit(&e, d)?.apply(&e)?;
            let tokens = vec![
                (novel.theme.clone(), handle.token_id(&novel.theme)?),
                (novel.goal.clone(), handle.token_id(&novel.goal)?),
            ];
            let groups = self.noun_groups(&handle)?;
            cosine_profile(&corrected, &tokens, &groups)
        })();
        self.tuned = Some(handle);
        let profile: Vec<GroupSimilarity> = result?;
        self.put_json("cosine", "analysis/cosine.json", &profile)?;
        let points = report::cosine_points(&profile, &novel.theme, &novel.goal);
        self.put_jsonl("cosine_points", "analysis/cosine_points.jsonl", &points)?;
        Ok(())
    }

    fn two_pp_analysis(&mut self) -> Result<(Option<f64>, Option<f64>)> {
        let probe = self.dataset("probe_two_pp")?;
        let novel = self.cfg.datasets.novel.clone();
        self.tuned()?;
        self.baseline()?;
        let tuned = self.tuned.take().expect("loaded");
        let base = self.baseline.take().expect("loaded");
        let result = (|| {
            let [mass, count] = self.noun_groups(&base)?;
            baseline_correlation_probe(&tuned, &base, &probe, [(&mass, &novel.theme), (&count, &novel.goal)])
        })();
        self.tuned = Some(tuned);
        self.baseline = Some(base);
        match result {
            Ok(report) => {
                let rp = (Some(report.correlation.r), Some(report.correlation.p_value));
                self.put_json("two_pp", "analysis/two_pp.json", &report)?;
                Ok(rp)
            }
            // a constant coordinate leaves r undefined; record and move on
            Err(Error::Undefined(msg)) => {
                self.manifest.settings.insert("two_pp".into(), format!("undefined: {msg}"));
                Ok((None, None))
            }
            Err(e) => Err(e),
        }
    }

    fn kl_analysis(&mut self) -> Result<(Option<f64>, Option<f64>)> {
        let pool = self.cfg.loss.pool()?;
        let n = self.cfg.analysis.kl_sample_size.min(pool.len());
        let sample = sample_reference_batch(&pool, n, derive_seed(self.spec.seed, "audit"), 0)?;
        let nouns = self.argument_nouns()?;
        let targets = target_sample(
            &pool,
            &nouns,
            self.cfg.analysis.kl_per_noun,
            derive_seed(self.spec.seed, "audit:targets"),
        );
        self.tuned()?;
        self.baseline()?;
        let tuned = self.tuned.take().expect("loaded");
        let base = self.baseline.take().expect("loaded");
        let audits = (|| -> Result<(DriftAudit, Option<DriftAudit>)> {
            let a = kl_audit(&tuned, &base, &sample)?;
            let b = if targets.is_empty() {
                None
            } else {
                Some(kl_audit(&tuned, &base, &targets)?)
            };
            Ok((a, b))
        })();
        self.tuned = Some(tuned);
        self.baseline = Some(base);
        let (pool_audit, target_audit) = audits?;
        let pm = Some(pool_audit.mean);
        self.put_json("kl_pool", "analysis/kl_pool.json", &pool_audit)?;
        let tm = match target_audit {
            Some(a) => {
                let m = Some(a.mean);
                self.put_json("kl_targets", "analysis/kl_targets.json", &a)?;
                m
            }
            None => {
                self.manifest
                    .settings
                    .insert("kl_targets".into(), "no pool sentence contains an argument noun".into());
                None
            }
        };
        Ok((pm, tm))
    }

    fn report(&mut self) -> Result<Option<String>> {
        if !self.cfg.analysis.plots {
            return Ok(Some("plots disabled".into()));
        }
        let title = self.spec.run_id.clone();
        match self.spec.experiment {
            ExperimentKind::Exp1 | ExperimentKind::ProbeTwoPp => {
                let points: Vec<CosinePoint> = self.get_jsonl("cosine_points")?;
                let novel = &self.cfg.datasets.novel;
                plot::cosine_scatter(&self.path("plots/cosine_similarity.svg"), &title, &novel.theme, &novel.goal, &points)?;
                self.manifest
                    .artifacts
                    .insert("plot:cosine_similarity".into(), "plots/cosine_similarity.svg".into());
                if self.manifest.artifacts.contains_key("two_pp") {
                    let r: crate::geometry::CorrelationReport = self.get_json("two_pp")?;
                    plot::two_pp_scatter(&self.path("plots/two_pp_correlation.svg"), &title, &r)?;
                    self.manifest
                        .artifacts
                        .insert("plot:two_pp_correlation".into(), "plots/two_pp_correlation.svg".into());
                }
            }
            ExperimentKind::Exp2 => {
                let points: Vec<ConfidencePoint> = self.get_jsonl("confidence_points")?;
                plot::confidence_scatter(&self.path("plots/confidence_active_passive.svg"), &title, &points)?;
                let curves: Vec<ConfidenceCurve> = self.get_json("curves")?;
                plot::trajectory_lines(&self.path("plots/confidence_trajectory.svg"), &title, &curves)?;
                let mut strips = Vec::new();
                for (name, label) in [("kl_pool", "reference sample"), ("kl_targets", "argument nouns")] {
                    if self.manifest.artifacts.contains_key(name) {
                        let a: DriftAudit = self.get_json(name)?;
                        strips.push((label.to_string(), a.values.iter().map(|v| v.kl).collect::<Vec<_>>()));
                    }
                }
                plot::strips(&self.path("plots/kl_audit.svg"), &title, "KL(tuned || baseline)", &strips)?;
                for name in ["confidence_active_passive", "confidence_trajectory", "kl_audit"] {
                    self.manifest.artifacts.insert(format!("plot:{name}"), format!("plots/{name}.svg"));
                }
            }
            ExperimentKind::ProbeUnpassivizable => {
                let recs: Vec<ConfidenceRecord> = self.get_jsonl("records:probe")?;
                let bars = report::unpassivizable_bars(&recs)?;
                plot::bars(&self.path("plots/unpassivizable_accuracy.svg"), &title, "accuracy", &bars)?;
                self.manifest
                    .artifacts
                    .insert("plot:unpassivizable_accuracy".into(), "plots/unpassivizable_accuracy.svg".into());
            }
        }
        Ok(None)
    }
}

/// Up to `per_noun` pool sentences containing each argument noun as a word,
/// preferring the wiki corpus when the pool has one.
pub fn target_sample(
    pool: &crate::tuning::ReferencePool,
    nouns: &ArgumentNounSet,
    per_noun: usize,
    seed: u64,
) -> Vec<String> {
    let source: Vec<&String> = match pool.corpora.iter().find(|c| c.name == "wiki") {
        Some(c) => c.sentences.iter().collect(),
        None => pool.corpora.iter().flat_map(|c| &c.sentences).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for noun in nouns.subject_nouns.iter().chain(&nouns.object_nouns) {
        let mut hits: Vec<&String> = source
            .iter()
            .copied()
            .filter(|s| {
                s.split(|c: char| !c.is_alphanumeric())
                    .any(|w| w.eq_ignore_ascii_case(noun))
            })
            .collect();
        hits.shuffle(&mut rng);
        out.extend(hits.into_iter().take(per_noun).cloned());
    }
    out
}
