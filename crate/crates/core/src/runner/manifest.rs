use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentKind, RunSpec};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    SelectNouns,
    Generate,
    Verify,
    Tune,
    Eval,
    Analyze,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::SelectNouns,
        Stage::Generate,
        Stage::Verify,
        Stage::Tune,
        Stage::Eval,
        Stage::Analyze,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::SelectNouns => "select_nouns",
            Stage::Generate => "generate",
            Stage::Verify => "verify",
            Stage::Tune => "tune",
            Stage::Eval => "eval",
            Stage::Analyze => "analyze",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Done,
    /// Not part of this experiment's pipeline.
    NotApplicable,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// Some requested stages are still outstanding.
    Partial,
    Completed,
    Failed,
    /// The tokenization invariance check failed; nothing was tuned.
    GateFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub experiment: ExperimentKind,
    pub backend: String,
    pub condition: String,
    pub seed: u64,
    pub config_hash: String,
    /// Content hash of each backend's baseline snapshot.
    pub backend_versions: BTreeMap<String, String>,
    pub dataset_hashes: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    pub status: RunStatus,
    /// Artifact name → path relative to the run directory.
    pub artifacts: BTreeMap<String, String>,
    /// Settings the config leaves implicit (optimizer, dropout rate, ...).
    pub settings: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(spec: &RunSpec) -> Self {
        Self {
            run_id: spec.run_id.clone(),
            experiment: spec.experiment,
            backend: spec.backend.clone(),
            condition: spec.condition.clone(),
            seed: spec.seed,
            config_hash: spec.config_hash.clone(),
            backend_versions: BTreeMap::new(),
            dataset_hashes: BTreeMap::new(),
            stages: Vec::new(),
            status: RunStatus::Partial,
            artifacts: BTreeMap::new(),
            settings: BTreeMap::new(),
        }
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    /// Done or not applicable.
    pub fn settled(&self, stage: Stage) -> bool {
        matches!(
            self.stage(stage).map(|s| s.status),
            Some(StageStatus::Done | StageStatus::NotApplicable)
        )
    }

    pub fn mark(&mut self, stage: Stage, status: StageStatus, detail: Option<String>) {
        self.stages.retain(|s| s.stage != stage);
        self.stages.push(StageRecord { stage, status, detail });
        self.stages.sort_by_key(|s| s.stage);
    }

    pub fn artifact(&self, name: &str) -> Result<&str> {
        self.artifacts
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| Error::Report(format!("run `{}` has no `{name}` artifact", self.run_id)))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &p).map_err(|e| Error::io(&p, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        let src = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_str(&src)?)
    }
}
