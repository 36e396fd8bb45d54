//! Experiment configuration files and run planning.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::is_resolvable;
use crate::error::{Error, Result};
use crate::paradigm::{Alternation, Catalog, Frames, LexicalConfig, NovelWords};
use crate::tuning::{LossConfig, TuningConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Exp1,
    Exp2,
    ProbeTwoPp,
    ProbeUnpassivizable,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Exp1 => "exp1",
            ExperimentKind::Exp2 => "exp2",
            ExperimentKind::ProbeTwoPp => "probe_two_pp",
            ExperimentKind::ProbeUnpassivizable => "probe_unpassivizable",
        }
    }

    fn default_tuning(self) -> TuningConfig {
        match self {
            ExperimentKind::Exp2 => TuningConfig::exp2(),
            _ => TuningConfig::exp1(),
        }
    }

    fn default_loss(self) -> LossConfig {
        match self {
            ExperimentKind::Exp2 => LossConfig::exp2(),
            _ => LossConfig::exp1(),
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp1" => Ok(Self::Exp1),
            "exp2" => Ok(Self::Exp2),
            "probe_two_pp" => Ok(Self::ProbeTwoPp),
            "probe_unpassivizable" => Ok(Self::ProbeUnpassivizable),
            other => Err(Error::Config(format!("unknown experiment `{other}`"))),
        }
    }
}

/// Subject and object count tables for one unpassivizable verb.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencySpec {
    pub verb: String,
    pub subject_table: PathBuf,
    pub object_table: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    /// Fine-tuning verbs of the novel-noun experiment.
    pub verbs: Vec<String>,
    pub alternations: Vec<Alternation>,
    /// Structure catalog replacing the shipped one.
    pub catalog: Option<PathBuf>,
    pub frames: Option<PathBuf>,
    /// Lexical configuration replacing the shipped defaults.
    pub lexicon: Option<PathBuf>,
    /// Newline-delimited candidate nouns for neutral-noun selection.
    pub candidate_pool: Option<PathBuf>,
    pub allow_custom_inventory: bool,
    /// Model-specific argument sets per backend.
    pub argument_sets: usize,
    pub frequency: Vec<FrequencySpec>,
    pub top_k: usize,
    /// Active/passive pairs per unpassivizable verb.
    pub max_pairs: usize,
    pub novel: NovelWords,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            verbs: vec!["spray".into(), "load".into()],
            alternations: vec![Alternation::To, Alternation::Go],
            catalog: None,
            frames: None,
            lexicon: None,
            candidate_pool: None,
            allow_custom_inventory: false,
            argument_sets: 3,
            frequency: Vec::new(),
            top_k: 2000,
            max_pairs: 50,
            novel: NovelWords::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSpec {
    /// Principal directions removed before cosine profiles.
    pub pca_directions: usize,
    /// Reference sentences in the drift audit.
    pub kl_sample_size: usize,
    /// Pool sentences per argument noun in the targeted drift audit.
    pub kl_per_noun: usize,
    pub plots: bool,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            pca_directions: 3,
            kl_sample_size: 100,
            kl_per_noun: 10,
            plots: true,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: ExperimentKind,
    backends: Vec<String>,
    seeds: Vec<u64>,
    #[serde(default = "default_output")]
    output_dir: PathBuf,
    #[serde(default)]
    tuning: toml::Table,
    #[serde(default)]
    loss: toml::Table,
    #[serde(default)]
    datasets: DatasetSpec,
    #[serde(default)]
    analysis: AnalysisSpec,
    #[serde(default = "one")]
    max_concurrent: usize,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

fn one() -> usize {
    1
}

/// A validated experiment description. Relative paths are resolved
/// against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub backends: Vec<String>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub tuning: TuningConfig,
    pub loss: LossConfig,
    pub datasets: DatasetSpec,
    pub analysis: AnalysisSpec,
    /// Cap on runs, and so backend instances, alive at once.
    pub max_concurrent: usize,
}

/// Overlays user keys on the experiment's preset.
fn merge<T: Serialize + serde::de::DeserializeOwned>(preset: T, user: toml::Table, what: &str) -> Result<T> {
    let mut base = toml::Table::try_from(preset).map_err(|e| Error::Config(format!("{what}: {e}")))?;
    for (k, v) in user {
        base.insert(k, v);
    }
    base.try_into().map_err(|e| Error::Config(format!("{what}: {e}")))
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn resolve_backend(base: &Path, id: &str) -> String {
    if id.starts_with("builtin:") || Path::new(id).is_absolute() {
        id.to_string()
    } else {
        base.join(id).to_string_lossy().into_owned()
    }
}

impl ExperimentConfig {
    pub fn from_toml(src: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        let tuning = merge(raw.experiment.default_tuning(), raw.tuning, "tuning")?;
        let mut loss = merge(raw.experiment.default_loss(), raw.loss, "loss")?;
        if let Some(p) = loss.reference_manifest.as_mut() {
            resolve(base, p);
        }
        let mut datasets = raw.datasets;
        for p in [
            &mut datasets.catalog,
            &mut datasets.frames,
            &mut datasets.lexicon,
            &mut datasets.candidate_pool,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
        for f in &mut datasets.frequency {
            resolve(base, &mut f.subject_table);
            resolve(base, &mut f.object_table);
        }
        let mut output_dir = raw.output_dir;
        resolve(base, &mut output_dir);
        let cfg = Self {
            experiment: raw.experiment,
            backends: raw.backends.iter().map(|b| resolve_backend(base, b)).collect(),
            seeds: raw.seeds,
            output_dir,
            tuning,
            loss,
            datasets,
            analysis: raw.analysis,
            max_concurrent: raw.max_concurrent,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&src, path.parent().unwrap_or(Path::new(".")))
    }

    fn referenced_files(&self) -> Vec<&Path> {
        let d = &self.datasets;
        let mut out: Vec<&Path> = [&d.catalog, &d.frames, &d.lexicon, &d.candidate_pool, &self.loss.reference_manifest]
            .into_iter()
            .flatten()
            .map(PathBuf::as_path)
            .collect();
        for f in &d.frequency {
            out.push(&f.subject_table);
            out.push(&f.object_table);
        }
        out
    }

    /// Everything checkable without running a model.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.backends.is_empty() {
            return Err(Error::Config("at least one backend is required".into()));
        }
        if self.max_concurrent == 0 {
            return Err(Error::Config("max_concurrent must be at least 1".into()));
        }
        for p in self.referenced_files() {
            if !p.is_file() {
                return Err(Error::Config(format!("referenced file {} does not exist", p.display())));
            }
        }
        for b in &self.backends {
            if !is_resolvable(b) {
                return Err(Error::Load(b.clone(), "backend is not available".into()));
            }
        }
        self.tuning.validate()?;
        self.loss.validate()?;
        let lex = self.lexicon()?;
        self.frames()?;
        self.catalog()?;
        let d = &self.datasets;
        match self.experiment {
            ExperimentKind::Exp1 | ExperimentKind::ProbeTwoPp => {
                if d.verbs.is_empty() || d.alternations.is_empty() {
                    return Err(Error::Config("fine-tuning verbs and alternations must be non-empty".into()));
                }
                for v in &d.verbs {
                    lex.verb(v)?;
                    lex.fillers_for(v)?;
                }
                if d.alternations.contains(&Alternation::None) {
                    return Err(Error::Config("fine-tuning alternation must be TO or GO".into()));
                }
            }
            ExperimentKind::Exp2 => {
                if d.argument_sets == 0 {
                    return Err(Error::Config("argument_sets must be at least 1".into()));
                }
            }
            ExperimentKind::ProbeUnpassivizable => {
                if d.frequency.is_empty() {
                    return Err(Error::Config("the unpassivizable probe needs frequency tables".into()));
                }
                let frames = self.frames()?;
                for f in &d.frequency {
                    if !frames.unpassivizable.iter().any(|u| u.verb == f.verb) {
                        return Err(Error::Config(format!("no unpassivizable frame for `{}`", f.verb)));
                    }
                }
                if d.top_k == 0 {
                    return Err(Error::Config("top_k must be at least 1".into()));
                }
            }
        }
        if self.analysis.pca_directions == 0 {
            return Err(Error::Config("pca_directions must be at least 1".into()));
        }
        Ok(())
    }

    pub fn lexicon(&self) -> Result<LexicalConfig> {
        match &self.datasets.lexicon {
            Some(p) => {
                let src = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                toml::from_str(&src).map_err(|e| Error::Config(format!("lexicon: {e}")))
            }
            None => Ok(LexicalConfig::default()),
        }
    }

    pub fn frames(&self) -> Result<Frames> {
        match &self.datasets.frames {
            Some(p) => Frames::from_toml(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => Ok(Frames::default_frames()),
        }
    }

    /// The test catalog of this experiment.
    pub fn catalog(&self) -> Result<Catalog> {
        match (&self.datasets.catalog, self.experiment) {
            (Some(p), _) => Catalog::from_path(p),
            (None, ExperimentKind::Exp2) => Ok(Catalog::exp2_default()),
            (None, _) => Ok(Catalog::exp1_default()),
        }
    }

    pub fn candidate_pool(&self) -> Result<Vec<String>> {
        match &self.datasets.candidate_pool {
            Some(p) => Ok(std::fs::read_to_string(p)
                .map_err(|e| Error::io(p, e))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect()),
            None => Ok(self.lexicon()?.candidate_nouns),
        }
    }

    /// Digest of the resolved config plus the bytes of every referenced file.
    ///
    /// The output directory and the concurrency cap do not affect results
    /// and are left out.
    pub fn hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        let mut v = serde_json::to_value(self)?;
        if let Some(o) = v.as_object_mut() {
            o.remove("output_dir");
            o.remove("max_concurrent");
        }
        h.update(serde_json::to_vec(&v)?);
        for p in self.referenced_files() {
            h.update(std::fs::read(p).map_err(|e| Error::io(p, e))?);
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Conditions crossed with backends and seeds by the planner.
    pub fn conditions(&self) -> Vec<String> {
        let d = &self.datasets;
        match self.experiment {
            ExperimentKind::Exp1 | ExperimentKind::ProbeTwoPp => d
                .verbs
                .iter()
                .flat_map(|v| d.alternations.iter().map(move |a| format!("{v}-{}", a.label())))
                .collect(),
            ExperimentKind::Exp2 => (0..d.argument_sets).map(|k| format!("set{k}")).collect(),
            ExperimentKind::ProbeUnpassivizable => d.frequency.iter().map(|f| f.verb.clone()).collect(),
        }
    }
}

/// One backend × condition × seed cell of an experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSpec {
    pub run_id: String,
    pub experiment: ExperimentKind,
    pub backend: String,
    pub condition: String,
    pub seed: u64,
    pub config_hash: String,
}

impl RunSpec {
    /// `<experiment>/<backend>/<condition>/<seed>` under the output root.
    pub fn dir(&self, root: &Path) -> PathBuf {
        root.join(&self.run_id)
    }
}

/// Filesystem-safe form of a backend id.
pub fn backend_slug(id: &str) -> String {
    let name = id.strip_prefix("builtin:").unwrap_or_else(|| {
        Path::new(id)
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or(id)
    });
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Cross product of backends, conditions and seeds.
pub fn plan(config: &ExperimentConfig) -> Result<Vec<RunSpec>> {
    config.validate()?;
    let hash = config.hash()?;
    let mut slugs: BTreeMap<String, &str> = BTreeMap::new();
    for b in &config.backends {
        if let Some(prev) = slugs.insert(backend_slug(b), b) {
            return Err(Error::Config(format!("backends `{prev}` and `{b}` share a run directory")));
        }
    }
    let mut out = Vec::new();
    for b in &config.backends {
        for c in config.conditions() {
            for &seed in &config.seeds {
                out.push(RunSpec {
                    run_id: format!("{}/{}/{c}/{seed}", config.experiment, backend_slug(b)),
                    experiment: config.experiment,
                    backend: b.clone(),
                    condition: c.clone(),
                    seed,
                    config_hash: hash.clone(),
                });
            }
        }
    }
    Ok(out)
}
