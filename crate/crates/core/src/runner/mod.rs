//! Experiment runs: config, planning, stage execution and reporting.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod plot;
pub mod report;

use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;

pub use config::{backend_slug, plan, AnalysisSpec, DatasetSpec, ExperimentConfig, ExperimentKind, FrequencySpec, RunSpec};
pub use manifest::{RunManifest, RunStatus, Stage, StageRecord, StageStatus, MANIFEST_FILE};
pub use pipeline::{derive_seed, RunContext, RunSummary};
pub use report::{aggregate, AggregateReport};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecuteOptions {
    /// Last stage to run.
    pub until: Stage,
    /// Rerun every stage even when a matching manifest says it is done.
    pub force: bool,
}

impl Default for ExecuteOptions {
    fn default() -> Self {
        Self {
            until: Stage::Report,
            force: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub spec: RunSpec,
    pub manifest: RunManifest,
    /// Nothing was left to do.
    pub skipped: bool,
    pub error: Option<String>,
}

impl RunOutcome {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

/// Whether `stage` does anything for this kind of experiment.
pub fn applicable(kind: ExperimentKind, stage: Stage) -> bool {
    !(kind == ExperimentKind::ProbeUnpassivizable && stage == Stage::Tune)
}

fn check_writable(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write-check");
    std::fs::write(&probe, b"ok").map_err(|e| Error::io(&probe, e))?;
    std::fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

/// Runs every spec up to `opts.until`, at most `max_concurrent` at a time.
///
/// A failed run keeps whatever it already wrote and does not stop the others.
pub fn execute(cfg: &ExperimentConfig, runs: &[RunSpec], opts: ExecuteOptions) -> Result<Vec<RunOutcome>> {
    check_writable(&cfg.output_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_concurrent.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let lock = Mutex::new(());
    Ok(pool.install(|| runs.par_iter().map(|spec| execute_one(cfg, spec, opts, &lock)).collect()))
}

fn write_manifest(m: &RunManifest, dir: &Path, lock: &Mutex<()>) -> Result<()> {
    let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
    m.write(dir)
}

fn execute_one(cfg: &ExperimentConfig, spec: &RunSpec, opts: ExecuteOptions, lock: &Mutex<()>) -> RunOutcome {
    let dir = spec.dir(&cfg.output_dir);
    let manifest = match RunManifest::read(&dir) {
        Ok(m) if !opts.force && m.config_hash == spec.config_hash => m,
        _ => RunManifest::new(spec),
    };
    let stages: Vec<Stage> = Stage::ALL.into_iter().filter(|&s| s <= opts.until).collect();
    if stages.iter().all(|&s| manifest.settled(s)) {
        return RunOutcome {
            spec: spec.clone(),
            manifest,
            skipped: true,
            error: None,
        };
    }
    let mut ctx = match RunContext::new(cfg, spec, manifest.clone()) {
        Ok(c) => c,
        Err(e) => {
            return RunOutcome {
                spec: spec.clone(),
                manifest,
                skipped: false,
                error: Some(e.to_string()),
            }
        }
    };
    // once a stage reruns, everything downstream of it is stale
    let mut dirty = false;
    let mut error = None;
    for stage in stages {
        if !dirty && ctx.manifest.settled(stage) {
            continue;
        }
        dirty = true;
        if !applicable(spec.experiment, stage) {
            ctx.manifest.mark(stage, StageStatus::NotApplicable, None);
        } else {
            log::info!("{}: {stage}", spec.run_id);
            match ctx.run_stage(stage) {
                Ok(detail) => ctx.manifest.mark(stage, StageStatus::Done, detail),
                Err(e) => {
                    ctx.manifest.mark(stage, StageStatus::Failed, Some(e.to_string()));
                    ctx.manifest.status = match e {
                        Error::InvarianceGate(_) => RunStatus::GateFailed,
                        _ => RunStatus::Failed,
                    };
                    error = Some(format!("{stage}: {e}"));
                }
            }
        }
        if error.is_none() {
            ctx.manifest.status = if ctx.manifest.settled(Stage::Report) {
                RunStatus::Completed
            } else {
                RunStatus::Partial
            };
        }
        if let Err(e) = write_manifest(&ctx.manifest, &dir, lock) {
            error.get_or_insert(format!("{stage}: {e}"));
        }
        if error.is_some() {
            break;
        }
    }
    RunOutcome {
        spec: spec.clone(),
        manifest: ctx.manifest,
        skipped: false,
        error,
    }
}

/// Manifests of every planned run that has one on disk.
pub fn collect_manifests(cfg: &ExperimentConfig, runs: &[RunSpec]) -> Vec<RunManifest> {
    runs.iter()
        .filter_map(|s| RunManifest::read(&s.dir(&cfg.output_dir)).ok())
        .filter(|m| m.config_hash == runs[0].config_hash)
        .collect()
}
