//! Tables built from scored records, and aggregation of finished runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentKind;
use super::manifest::RunManifest;
use super::pipeline::{read_json, read_jsonl, write_file, ConfidencePoint, CosinePoint};
use super::plot::{self, Bar};
use crate::error::{Error, Result};
use crate::eval::{
    breakdown, conditional_filter, penalty, role_means, AccuracyBreakdown, ConfidenceRecord, Keyed,
    PredictionRecord,
};
use crate::geometry::{aggregate_profiles, CorrelationReport, DriftAudit, GroupSimilarity};
use crate::paradigm::{tuning_structure_id_exp1, Alternation, TUNING_STRUCTURE_EXP2};

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959963984540054;

/// A named delimited table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub text: String,
}

impl Table {
    fn new(name: &str, text: String) -> Self {
        Self { name: name.into(), text }
    }
}

/// Mean record value, `None` for an empty slice.
pub fn accuracy<R: Keyed>(records: &[R]) -> Result<Option<f64>> {
    if records.is_empty() {
        return Ok(None);
    }
    let mut s = 0.0;
    for r in records {
        s += r.value()?;
    }
    Ok(Some(s / records.len() as f64))
}

/// Splits records into (tuning-structure records, everything else).
pub fn split_tuning<R: Clone>(records: &[R], is_tuning: impl Fn(&R) -> bool) -> (Vec<R>, Vec<R>) {
    records.iter().cloned().partition(|r| is_tuning(r))
}

/// Long table with one column per value of the key at `col`.
pub fn pivot(b: &AccuracyBreakdown, col: usize) -> String {
    let mut cols: Vec<String> = b.groups.iter().map(|g| g.values[col].clone()).collect();
    cols.sort();
    cols.dedup();
    let mut rows: BTreeMap<Vec<String>, BTreeMap<String, f64>> = BTreeMap::new();
    for g in &b.groups {
        let mut rest = g.values.clone();
        let c = rest.remove(col);
        rows.entry(rest).or_default().insert(c, g.mean);
    }
    let mut out = String::new();
    for (i, k) in b.keys.iter().enumerate() {
        if i != col {
            let _ = write!(out, "{k}\t");
        }
    }
    out.push_str(&cols.join("\t"));
    out.push('\n');
    for (rest, cells) in rows {
        for v in &rest {
            let _ = write!(out, "{v}\t");
        }
        let vals: Vec<String> = cols
            .iter()
            .map(|c| cells.get(c).map(|m| format!("{m:.6}")).unwrap_or_else(|| "NA".into()))
            .collect();
        out.push_str(&vals.join("\t"));
        out.push('\n');
    }
    out
}

/// Role, movement and order tables for conditioned alternation records.
pub fn exp1_tables(kept: &[&PredictionRecord]) -> Result<Vec<Table>> {
    let role = breakdown(kept, &["model", "tuning", "role"])?;
    let movement = breakdown(kept, &["model", "a_movement", "abar_movement"])?;
    let order = breakdown(kept, &["model", "order_vs_tuning"])?;
    let pen = penalty(&order)?;
    let mut layout = String::from("model\tsame\treverse\tpenalty\n");
    let mut models: Vec<&str> = order.groups.iter().map(|g| g.values[0].as_str()).collect();
    models.dedup();
    let cell = |m: &str, o: &str| order.get(&[m, o]).map(|g| format!("{:.6}", g.mean)).unwrap_or_else(|| "NA".into());
    for m in models {
        let p = pen.get(&vec![m.to_string()]).map(|p| format!("{p:.6}")).unwrap_or_else(|| "NA".into());
        let _ = writeln!(layout, "{m}\t{}\t{}\t{p}", cell(m, "same"), cell(m, "reverse"));
    }
    Ok(vec![
        Table::new("role", role.to_tsv()),
        Table::new("role_pivot", pivot(&role, 2)),
        Table::new("movement", movement.to_tsv()),
        Table::new("movement_pivot", pivot(&movement, 2)),
        Table::new("order", layout),
        Table::new("order_long", order.to_tsv()),
    ])
}

/// Fine-tuning accuracy next to conditioned accuracy by voice and order.
pub fn voice_order_tables(kept: &[&ConfidenceRecord], finetune: &[ConfidenceRecord]) -> Result<Vec<Table>> {
    let ft = breakdown(finetune, &["model"])?;
    let test = breakdown(kept, &["model", "voice", "arg_order"])?;
    let cells = [("active", "SO"), ("active", "OS"), ("passive", "SO"), ("passive", "OS")];
    let mut models: Vec<&str> = ft.groups.iter().map(|g| g.values[0].as_str()).collect();
    models.extend(test.groups.iter().map(|g| g.values[0].as_str()));
    models.sort();
    models.dedup();
    let mut out = String::from("model\tfinetune\tactive_SO\tactive_OS\tpassive_SO\tpassive_OS\n");
    let fmt = |g: Option<&crate::eval::GroupStat>| g.map(|g| format!("{:.6}", g.mean)).unwrap_or_else(|| "NA".into());
    for m in models {
        out.push_str(m);
        let _ = write!(out, "\t{}", fmt(ft.get(&[m])));
        for (v, o) in cells {
            let _ = write!(out, "\t{}", fmt(test.get(&[m, v, o])));
        }
        out.push('\n');
    }
    Ok(vec![Table::new("voice_order", out), Table::new("voice_order_long", test.to_tsv())])
}

fn ci_table(b: &AccuracyBreakdown) -> String {
    let mut out: String = b.keys.iter().map(|k| format!("{k}\t")).collect();
    out.push_str("mean\tcount\tstd_err\tci_low\tci_high\n");
    for g in &b.groups {
        for v in &g.values {
            let _ = write!(out, "{v}\t");
        }
        let h = Z95 * g.std_err;
        let _ = writeln!(out, "{:.6}\t{}\t{:.6}\t{:.6}\t{:.6}", g.mean, g.count, g.std_err, g.mean - h, g.mean + h);
    }
    out
}

/// Accuracy by verb, voice and role with 95% intervals.
pub fn unpassivizable_tables(records: &[ConfidenceRecord]) -> Result<Vec<Table>> {
    let b = breakdown(records, &["verb", "voice", "role"])?;
    Ok(vec![
        Table::new("unpassivizable", ci_table(&b)),
        Table::new("unpassivizable_pivot", pivot(&b, 1)),
    ])
}

pub fn unpassivizable_bars(records: &[ConfidenceRecord]) -> Result<Vec<Bar>> {
    let b = breakdown(records, &["verb", "voice"])?;
    Ok(b.groups
        .iter()
        .map(|g| Bar {
            label: g.values.join(" "),
            value: g.mean,
            half_width: Z95 * g.std_err,
        })
        .collect())
}

fn mean_by_noun(records: &[ConfidenceRecord]) -> BTreeMap<String, (String, f64)> {
    let mut acc: BTreeMap<String, (String, f64, usize)> = BTreeMap::new();
    for r in records {
        let e = acc.entry(r.noun.clone()).or_insert((r.role.to_string(), 0.0, 0));
        e.1 += r.confidence;
        e.2 += 1;
    }
    acc.into_iter().map(|(k, (role, s, n))| (k, (role, s / n as f64))).collect()
}

/// Per-noun mean confidence in the active and passive validation frames.
pub fn confidence_points(active: &[ConfidenceRecord], passive: &[ConfidenceRecord]) -> Vec<ConfidencePoint> {
    let a = mean_by_noun(active);
    let p = mean_by_noun(passive);
    a.into_iter()
        .filter_map(|(noun, (role, x))| {
            p.get(&noun).map(|(_, y)| ConfidencePoint {
                noun,
                role,
                active: x,
                passive: *y,
            })
        })
        .collect()
}

/// Pairs each group member's similarity to the theme and goal tokens.
pub fn cosine_points(profile: &[GroupSimilarity], theme: &str, goal: &str) -> Vec<CosinePoint> {
    let mut out = Vec::new();
    for t in profile.iter().filter(|g| g.novel == theme) {
        let Some(g) = profile.iter().find(|g| g.novel == goal && g.group == t.group) else {
            continue;
        };
        for (member, x) in &t.similarities {
            if let Some((_, y)) = g.similarities.iter().find(|s| &s.0 == member) {
                out.push(CosinePoint {
                    group: t.group.clone(),
                    member: member.clone(),
                    theme: *x,
                    goal: *y,
                });
            }
        }
    }
    out
}

fn run_alternation(m: &RunManifest) -> Result<Alternation> {
    m.condition
        .rsplit_once('-')
        .ok_or_else(|| Error::Report(format!("run `{}` has condition `{}`", m.run_id, m.condition)))?
        .1
        .parse()
}

fn load<T: serde::de::DeserializeOwned>(root: &Path, m: &RunManifest, name: &str) -> Result<Vec<T>> {
    read_jsonl(&root.join(&m.run_id).join(m.artifact(name)?))
}

fn load_one<T: serde::de::DeserializeOwned>(root: &Path, m: &RunManifest, name: &str) -> Result<T> {
    read_json(&root.join(&m.run_id).join(m.artifact(name)?))
}

/// Alternation test records of one run, conditioned on its own tuning structure.
pub fn conditioned_exp1(root: &Path, m: &RunManifest) -> Result<Vec<PredictionRecord>> {
    let test: Vec<PredictionRecord> = load(root, m, "records:test")?;
    let id = tuning_structure_id_exp1(run_alternation(m)?);
    let (tuning, rest) = split_tuning(&test, |r| r.meta.structure_id == id);
    Ok(conditional_filter(&rest, &tuning)?.into_iter().cloned().collect())
}

/// Novel-verb test records of one run, conditioned on its tuning structure.
pub fn conditioned_exp2(root: &Path, m: &RunManifest) -> Result<Vec<ConfidenceRecord>> {
    let test: Vec<ConfidenceRecord> = load(root, m, "records:test")?;
    let (tuning, rest) = split_tuning(&test, |r| r.meta.structure_id == TUNING_STRUCTURE_EXP2);
    Ok(conditional_filter(&rest, &tuning)?.into_iter().cloned().collect())
}

/// Files written by [`aggregate`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: usize,
    pub files: Vec<PathBuf>,
}

struct Writer<'a> {
    out: &'a Path,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn table(&mut self, t: &Table) -> Result<()> {
        let p = self.out.join("tables").join(format!("{}.tsv", t.name));
        write_file(&p, &t.text)?;
        self.files.push(p);
        Ok(())
    }

    fn plot(&mut self, name: &str) -> PathBuf {
        let p = self.out.join("plots").join(format!("{name}.svg"));
        self.files.push(p.clone());
        p
    }
}

/// Pools finished runs into cross-run tables and figures under `out_dir`.
///
/// Conditioning happens within each run, since the conditioning key does not
/// tell seeds or tuning regimens apart. A run missing an artifact is an error
/// naming that run.
pub fn aggregate(manifests: &[RunManifest], root: &Path, out_dir: &Path, plots: bool) -> Result<AggregateReport> {
    if manifests.is_empty() {
        return Err(Error::Report("no runs to aggregate".into()));
    }
    let mut w = Writer {
        out: out_dir,
        files: Vec::new(),
    };
    let kinds: Vec<ExperimentKind> = {
        let mut k: Vec<_> = manifests.iter().map(|m| m.experiment).collect();
        k.dedup();
        k
    };
    if kinds.len() > 1 {
        return Err(Error::Report("runs come from more than one experiment".into()));
    }
    match kinds[0] {
        ExperimentKind::Exp1 => {
            let mut pooled = Vec::new();
            for m in manifests {
                pooled.extend(conditioned_exp1(root, m)?);
            }
            let refs: Vec<&PredictionRecord> = pooled.iter().collect();
            for t in exp1_tables(&refs)? {
                w.table(&t)?;
            }
            cosine_and_two_pp(&mut w, manifests, root, plots)?;
        }
        ExperimentKind::ProbeTwoPp => cosine_and_two_pp(&mut w, manifests, root, plots)?,
        ExperimentKind::Exp2 => {
            let mut pooled = Vec::new();
            let mut ft = Vec::new();
            let mut conf = String::from("run\trole\tactive\tpassive\n");
            let mut strips: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            let mut kl = String::from("run\tbackend\tlambda\tsample\tmean\tsum\tn\n");
            for m in manifests {
                pooled.extend(conditioned_exp2(root, m)?);
                ft.extend(load::<ConfidenceRecord>(root, m, "records:finetune")?);
                let a = role_means(&load::<ConfidenceRecord>(root, m, "records:valid_perfect_active")?);
                let p = role_means(&load::<ConfidenceRecord>(root, m, "records:valid_perfect_passive")?);
                for (role, x) in &a {
                    let y = p.get(role).map(|y| format!("{y:.6}")).unwrap_or_else(|| "NA".into());
                    let _ = writeln!(conf, "{}\t{role}\t{x:.6}\t{y}", m.run_id);
                }
                let lambda = m.settings.get("lambda").cloned().unwrap_or_else(|| "?".into());
                let backend = super::config::backend_slug(&m.backend);
                for (name, sample) in [("kl_pool", "pool"), ("kl_targets", "targets")] {
                    if !m.artifacts.contains_key(name) {
                        continue;
                    }
                    let audit: DriftAudit = load_one(root, m, name)?;
                    let _ = writeln!(
                        kl,
                        "{}\t{backend}\t{lambda}\t{sample}\t{:.6}\t{:.6}\t{}",
                        m.run_id,
                        audit.mean,
                        audit.sum,
                        audit.values.len()
                    );
                    strips
                        .entry(format!("{backend} λ={lambda} {sample}"))
                        .or_default()
                        .extend(audit.values.iter().map(|v| v.kl));
                }
            }
            let refs: Vec<&ConfidenceRecord> = pooled.iter().collect();
            for t in voice_order_tables(&refs, &ft)? {
                w.table(&t)?;
            }
            w.table(&Table::new("role_confidence", conf))?;
            w.table(&Table::new("kl_audit", kl))?;
            if plots {
                let p = w.plot("kl_audit");
                let groups: Vec<(String, Vec<f64>)> = strips.into_iter().collect();
                plot::strips(&p, "KL drift from baseline", "KL(tuned || baseline)", &groups)?;
            }
        }
        ExperimentKind::ProbeUnpassivizable => {
            let mut pooled = Vec::new();
            for m in manifests {
                pooled.extend(load::<ConfidenceRecord>(root, m, "records:probe")?);
            }
            for t in unpassivizable_tables(&pooled)? {
                w.table(&t)?;
            }
            if plots {
                let p = w.plot("unpassivizable_accuracy");
                plot::bars(&p, "Unpassivizable verbs", "accuracy", &unpassivizable_bars(&pooled)?)?;
            }
        }
    }
    Ok(AggregateReport {
        runs: manifests.len(),
        files: w.files,
    })
}

fn cosine_and_two_pp(w: &mut Writer<'_>, manifests: &[RunManifest], root: &Path, plots: bool) -> Result<()> {
    let mut profiles = Vec::new();
    let mut corr = String::from("run\tr\tp_value\tn\n");
    let mut points: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for m in manifests {
        profiles.push(load_one::<Vec<GroupSimilarity>>(root, m, "cosine")?);
        // a run whose probe was undefined records why in its settings
        if m.artifacts.contains_key("two_pp") {
            let r: CorrelationReport = load_one(root, m, "two_pp")?;
            let c = r.correlation;
            let _ = writeln!(corr, "{}\t{:.6}\t{:.6e}\t{}", m.run_id, c.r, c.p_value, c.n);
            for p in &r.points {
                let name = format!("{} / {}", p.group, p.novel);
                match points.iter_mut().find(|g| g.0 == name) {
                    Some(g) => g.1.push((p.baseline, p.tuned)),
                    None => points.push((name, vec![(p.baseline, p.tuned)])),
                }
            }
        } else {
            let why = m.settings.get("two_pp").cloned().unwrap_or_else(|| "missing".into());
            let _ = writeln!(corr, "{}\tNA\tNA\t0\t# {why}", m.run_id);
        }
    }
    let mut cos = String::from("novel\tgroup\tmean\tstd_err\truns\n");
    let agg = aggregate_profiles(&profiles);
    for (n, g, mean, se, k) in &agg {
        let _ = writeln!(cos, "{n}\t{g}\t{mean:.6}\t{se:.6}\t{k}");
    }
    w.table(&Table::new("cosine", cos))?;
    w.table(&Table::new("two_pp_correlation", corr))?;
    if plots {
        let bars: Vec<Bar> = agg
            .iter()
            .map(|(n, g, mean, se, _)| Bar {
                label: format!("{n} {g}"),
                value: *mean,
                half_width: Z95 * se,
            })
            .collect();
        let p = w.plot("cosine_similarity");
        plot::bars(&p, "Cosine similarity by group", "mean cosine", &bars)?;
        if !points.is_empty() {
            let p = w.plot("two_pp_correlation");
            plot::scatter(
                &p,
                "Baseline vs tuned log-probability",
                "baseline group log-probability",
                "tuned novel-token log-probability",
                &points,
                false,
            )?;
        }
    }
    Ok(())
}
