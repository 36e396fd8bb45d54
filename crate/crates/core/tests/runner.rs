use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use argprobe_core::eval::PredictionRecord;
use argprobe_core::runner::pipeline::read_jsonl;
use argprobe_core::runner::{
    aggregate, execute, plan, ExecuteOptions, ExperimentConfig, RunManifest, RunStatus, Stage, StageStatus,
};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn desk(name: &str, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_path(&configs().join("desk").join(name)).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn inline(src: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(src, Path::new(".")).unwrap()
}

#[test]
fn exp1_plan_has_sixty_runs() {
    let cfg = inline(
        r#"
experiment = "exp1"
backends = ["builtin:tiny-wordpiece#1", "builtin:tiny-wordpiece#2", "builtin:tiny-bpe#3"]
seeds = [0, 1, 2, 3, 4]
"#,
    );
    let runs = plan(&cfg).unwrap();
    assert_eq!(runs.len(), 60);
    assert!(runs.iter().any(|r| r.run_id == "exp1/tiny-bpe_3/load-GO/4"));
}

#[test]
fn exp2_plan_has_twenty_four_runs() {
    let backends: Vec<String> = (0..8).map(|i| format!("\"builtin:tiny-wordpiece#{i}\"")).collect();
    let cfg = inline(&format!(
        "experiment = \"exp2\"\nbackends = [{}]\nseeds = [0]\n",
        backends.join(", ")
    ));
    let runs = plan(&cfg).unwrap();
    assert_eq!(runs.len(), 24);
    assert!(runs.iter().any(|r| r.run_id == "exp2/tiny-wordpiece_7/set2/0"));
}

#[test]
fn single_backend_single_seed_is_one_run() {
    let cfg = inline(
        r#"
experiment = "exp1"
backends = ["builtin:tiny-wordpiece"]
seeds = [3]
[datasets]
verbs = ["load"]
alternations = ["GO"]
"#,
    );
    let runs = plan(&cfg).unwrap();
    assert_eq!(runs.len(), 1);
    assert_eq!(runs[0].run_id, "exp1/tiny-wordpiece/load-GO/3");
}

#[test]
fn invalid_configs_fail_before_any_compute() {
    let base = "experiment = \"exp1\"\nbackends = [\"builtin:tiny-wordpiece\"]\n";
    assert!(ExperimentConfig::from_toml(&format!("{base}seeds = []\n"), Path::new(".")).is_err());
    assert!(ExperimentConfig::from_toml(
        &format!("{base}seeds = [0]\n[datasets]\ncatalog = \"no/such/file.toml\"\n"),
        Path::new(".")
    )
    .is_err());
    assert!(ExperimentConfig::from_toml(
        "experiment = \"exp1\"\nbackends = [\"missing-model-dir\"]\nseeds = [0]\n",
        Path::new("/nonexistent")
    )
    .is_err());
    assert!(ExperimentConfig::from_toml(&format!("{base}seeds = [0]\nbogus = 1\n"), Path::new(".")).is_err());
}

#[test]
fn presets_fill_unset_hyperparameters() {
    let cfg = inline("experiment = \"exp2\"\nbackends = [\"builtin:tiny-bpe\"]\nseeds = [0]\n[tuning]\npatience = 7\n");
    assert_eq!(cfg.tuning.patience, 7);
    assert_eq!(cfg.tuning.min_epochs, 100);
    assert_eq!(cfg.tuning.max_epochs, 260);
    assert!((cfg.tuning.learning_rate - 1e-4).abs() < 1e-15);
    assert!((cfg.loss.lambda - 2.5).abs() < 1e-15);
}

#[test]
fn identical_configs_give_identical_ids_and_hash() {
    let a = desk("exp1.toml", Path::new("/tmp/a"));
    let b = desk("exp1.toml", Path::new("/tmp/b"));
    assert_eq!(a.hash().unwrap(), b.hash().unwrap());
    assert_eq!(plan(&a).unwrap(), plan(&b).unwrap());
    let mut c = a.clone();
    c.tuning.patience += 1;
    assert_ne!(a.hash().unwrap(), c.hash().unwrap());
}

/// Brute-force conditional accuracy by role: a test record counts only when
/// every tuning-structure record with the same model, role and condition is correct.
fn oracle_role_means(records: &[PredictionRecord], tuning_id: &str) -> BTreeMap<String, f64> {
    let mut ok: BTreeMap<(String, String, String), bool> = BTreeMap::new();
    for r in records.iter().filter(|r| r.meta.structure_id == tuning_id) {
        let right = r.log_prob(r.expected).unwrap() > r.log_prob(r.unexpected).unwrap();
        let k = (r.meta.model.clone(), r.role.to_string(), r.meta.condition.clone());
        let e = ok.entry(k).or_insert(true);
        *e = *e && right;
    }
    let mut acc: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.meta.structure_id != tuning_id) {
        let k = (r.meta.model.clone(), r.role.to_string(), r.meta.condition.clone());
        if ok[&k] {
            let right = r.log_prob(r.expected).unwrap() > r.log_prob(r.unexpected).unwrap();
            let e = acc.entry(r.role.to_string()).or_default();
            e.0 += f64::from(u8::from(right));
            e.1 += 1.0;
        }
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n)).collect()
}

fn table_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split('\t').map(str::to_string).collect()).collect()
}

#[test]
fn desk_exp1_completes_resumes_and_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = desk("exp1.toml", tmp.path());
    let runs = plan(&cfg).unwrap();
    let out = execute(&cfg, &runs, ExecuteOptions::default()).unwrap();
    assert!(out[0].succeeded(), "{:?}", out[0].error);
    let m = &out[0].manifest;
    assert_eq!(m.status, RunStatus::Completed);
    assert!(Stage::ALL.iter().all(|&s| m.settled(s)));
    for rel in m.artifacts.values() {
        assert!(tmp.path().join(&m.run_id).join(rel).exists(), "{rel}");
    }
    assert_eq!(m.dataset_hashes.len(), 7);
    assert!(m.backend_versions.contains_key("builtin:tiny-wordpiece"));
    assert_eq!(m.settings["lambda"], "0");

    // rerun with the same hash does nothing
    let again = execute(&cfg, &runs, ExecuteOptions::default()).unwrap();
    assert!(again[0].skipped);
    assert_eq!(&again[0].manifest, m);

    // the persisted role table equals a recomputation from the records
    let dir = tmp.path().join(&m.run_id);
    let records: Vec<PredictionRecord> = read_jsonl(&dir.join(m.artifact("records:test").unwrap())).unwrap();
    let oracle = oracle_role_means(&records, "to_active_plain");
    let role = std::fs::read_to_string(dir.join(m.artifact("table:role").unwrap())).unwrap();
    let rows = table_rows(&role);
    assert_eq!(rows.len(), oracle.len());
    for row in rows {
        let got: f64 = row[3].parse().unwrap();
        assert!((got - oracle[&row[2]]).abs() < 1e-6, "{row:?}");
    }

    // the cross-run report reproduces the same numbers from the manifests
    let report_dir = tmp.path().join("report");
    let manifests: Vec<RunManifest> = vec![RunManifest::read(&dir).unwrap()];
    let rep = aggregate(&manifests, tmp.path(), &report_dir, true).unwrap();
    assert!(rep.files.iter().all(|f| f.exists()));
    let pooled = std::fs::read_to_string(report_dir.join("tables/role.tsv")).unwrap();
    assert_eq!(pooled, role);

    // a second identical execution elsewhere emits identical tables
    let tmp2 = tempfile::tempdir().unwrap();
    let cfg2 = desk("exp1.toml", tmp2.path());
    let out2 = execute(&cfg2, &plan(&cfg2).unwrap(), ExecuteOptions::default()).unwrap();
    assert!(out2[0].succeeded());
    for name in ["table:role", "table:order", "table:movement"] {
        let a = std::fs::read_to_string(dir.join(m.artifact(name).unwrap())).unwrap();
        let b = std::fs::read_to_string(tmp2.path().join(&m.run_id).join(m.artifact(name).unwrap())).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn resume_continues_after_a_partial_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = desk("exp1.toml", tmp.path());
    let runs = plan(&cfg).unwrap();
    let first = execute(&cfg, &runs, ExecuteOptions { until: Stage::Verify, force: false }).unwrap();
    assert_eq!(first[0].manifest.status, RunStatus::Partial);
    assert!(first[0].manifest.stage(Stage::Tune).is_none());
    let hashes = first[0].manifest.dataset_hashes.clone();
    let second = execute(&cfg, &runs, ExecuteOptions { until: Stage::Eval, force: false }).unwrap();
    assert!(second[0].succeeded(), "{:?}", second[0].error);
    assert_eq!(second[0].manifest.dataset_hashes, hashes);
    assert!(second[0].manifest.settled(Stage::Eval));
    assert!(second[0].manifest.stage(Stage::Analyze).is_none());
}

#[test]
fn invariance_failure_aborts_before_tuning() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = desk("exp1.toml", tmp.path());
    // a novel token that is a substring of a real word splits it on tokenization
    cfg.datasets.novel.theme = "ray".into();
    let runs = plan(&cfg).unwrap();
    let out = execute(&cfg, &runs, ExecuteOptions::default()).unwrap();
    let m = &out[0].manifest;
    assert!(!out[0].succeeded());
    assert_eq!(m.status, RunStatus::GateFailed);
    assert_eq!(m.stage(Stage::Verify).unwrap().status, StageStatus::Failed);
    assert!(m.stage(Stage::Tune).is_none());
    assert!(m.artifacts.contains_key("invariance"));
    let on_disk = RunManifest::read(&tmp.path().join(&m.run_id)).unwrap();
    assert_eq!(on_disk.status, RunStatus::GateFailed);
}

#[test]
fn empty_manifest_list_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(aggregate(&[], tmp.path(), tmp.path(), false).is_err());
}

#[test]
fn missing_artifact_names_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = desk("exp1.toml", tmp.path());
    let runs = plan(&cfg).unwrap();
    let out = execute(&cfg, &runs, ExecuteOptions { until: Stage::Generate, force: false }).unwrap();
    let err = aggregate(&[out[0].manifest.clone()], tmp.path(), tmp.path(), false).unwrap_err();
    assert!(err.to_string().contains(&runs[0].run_id), "{err}");
}

#[test]
fn desk_exp2_completes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = desk("exp2.toml", tmp.path());
    cfg.backends.truncate(1);
    let runs = plan(&cfg).unwrap();
    let out = execute(&cfg, &runs, ExecuteOptions::default()).unwrap();
    assert!(out[0].succeeded(), "{:?}", out[0].error);
    let m = &out[0].manifest;
    for name in ["table:voice_order", "confidence_points", "curves", "kl_pool", "plot:kl_audit"] {
        assert!(m.artifacts.contains_key(name), "{name}");
    }
    let rep = aggregate(std::slice::from_ref(m), tmp.path(), &tmp.path().join("report"), true).unwrap();
    assert!(rep.files.iter().any(|f| f.ends_with("tables/voice_order.tsv")));
}

#[test]
fn desk_unpassivizable_uses_baseline_models() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = desk("probe_unpassivizable.toml", tmp.path());
    let runs = plan(&cfg).unwrap();
    assert_eq!(runs.len(), 2);
    let out = execute(&cfg, &runs, ExecuteOptions::default()).unwrap();
    for o in &out {
        assert!(o.succeeded(), "{:?}", o.error);
        assert_eq!(o.manifest.stage(Stage::Tune).unwrap().status, StageStatus::NotApplicable);
    }
    let manifests: Vec<RunManifest> = out.into_iter().map(|o| o.manifest).collect();
    let rep = aggregate(&manifests, tmp.path(), &tmp.path().join("report"), true).unwrap();
    let t = std::fs::read_to_string(tmp.path().join("report/tables/unpassivizable.tsv")).unwrap();
    assert!(t.contains("have") && t.contains("cost"));
    assert!(!rep.files.is_empty());
}
