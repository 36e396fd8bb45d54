//! How far a tuned model's predictions moved from the baseline's.

use serde::{Deserialize, Serialize};

use crate::backend::{DistributionSet, ModelHandle};
use crate::error::{Error, Result};
use crate::tuning::kl_divergence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionDrift {
    pub sentence: String,
    pub position: usize,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftAudit {
    pub values: Vec<PositionDrift>,
    pub mean: f64,
    pub sum: f64,
    /// Minimum, lower quartile, median, upper quartile, maximum.
    pub quantiles: [f64; 5],
    pub sample: Vec<String>,
}

fn renormalize(row: &[f64], v: usize) -> Vec<f64> {
    let r = &row[..v];
    let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z = r.iter().map(|x| (x - m).exp()).sum::<f64>().ln() + m;
    r.iter().map(|x| x - z).collect()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Audit from matching distribution sets over a shared support.
///
/// Both sides are cut to the smaller vocabulary and renormalized, so ids
/// beyond it (added tokens) drop out.
pub fn audit_distributions(tuned: &[DistributionSet], baseline: &[DistributionSet]) -> Result<DriftAudit> {
    if tuned.len() != baseline.len() {
        return Err(Error::Shape(format!("{} tuned sets vs {} baseline sets", tuned.len(), baseline.len())));
    }
    let mut values = Vec::new();
    for (t, b) in tuned.iter().zip(baseline) {
        if t.sentence_id != b.sentence_id || t.positions != b.positions {
            return Err(Error::Shape(format!("sets `{}` and `{}` do not line up", t.sentence_id, b.sentence_id)));
        }
        for ((&pos, pt), pb) in t.positions.iter().zip(&t.log_probs).zip(&b.log_probs) {
            let v = pt.len().min(pb.len());
            if v == 0 {
                return Err(Error::Shape("empty distribution".into()));
            }
            // rounding can leave a value a hair below zero
            let kl = kl_divergence(&renormalize(pt, v), &renormalize(pb, v))?.max(0.0);
            values.push(PositionDrift {
                sentence: t.sentence_id.clone(),
                position: pos,
                kl,
            });
        }
    }
    let mut sorted: Vec<f64> = values.iter().map(|d| d.kl).collect();
    sorted.sort_by(f64::total_cmp);
    let sum: f64 = sorted.iter().sum();
    let mean = if sorted.is_empty() { f64::NAN } else { sum / sorted.len() as f64 };
    Ok(DriftAudit {
        quantiles: [0.0, 0.25, 0.5, 0.75, 1.0].map(|q| quantile(&sorted, q)),
        values,
        mean,
        sum,
        sample: tuned.iter().map(|t| t.sentence_id.clone()).collect(),
    })
}

/// `D_KL(p_tuned ‖ p_baseline)` at every content position of every sentence.
pub fn kl_audit(tuned: &ModelHandle, baseline: &ModelHandle, sample: &[String]) -> Result<DriftAudit> {
    let v = baseline.vocab_size();
    if tuned.original_vocab_size() != baseline.original_vocab_size() {
        return Err(Error::Shape(format!(
            "tuned vocabulary {} does not extend baseline vocabulary {}",
            tuned.original_vocab_size(),
            v
        )));
    }
    let mut t_sets = Vec::new();
    let mut b_sets = Vec::new();
    for s in sample {
        let ids = baseline.encode(s)?.ids;
        let positions = baseline.content_positions(&ids);
        let picks: Vec<(usize, usize)> = positions.iter().map(|&p| (0, p)).collect();
        let lt = tuned.log_probs(std::slice::from_ref(&ids), &picks)?;
        let lb = baseline.log_probs(std::slice::from_ref(&ids), &picks)?;
        let to64 = |rows: Vec<Vec<f32>>| -> Vec<Vec<f64>> {
            rows.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect()
        };
        t_sets.push(DistributionSet {
            sentence_id: s.clone(),
            positions: positions.clone(),
            log_probs: to64(lt),
        });
        b_sets.push(DistributionSet {
            sentence_id: s.clone(),
            positions,
            log_probs: to64(lb),
        });
    }
    audit_distributions(&t_sets, &b_sets)
}
