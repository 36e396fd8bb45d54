//! Does the tuned model place novel tokens where the baseline placed their
//! noun class? Pearson correlation over two-PP contexts.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::NounGroup;
use crate::backend::ModelHandle;
use crate::error::{Error, Result};
use crate::paradigm::GeneratedDataset;
use crate::tuning::mask_sentence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided, from Student's t with n − 2 degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

/// Sample Pearson correlation with its p-value.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Correlation> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!("{} x values vs {} y values", xs.len(), ys.len())));
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::Undefined(format!("correlation needs at least 3 points, got {n}")));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation with a constant coordinate".into()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p_value = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Undefined(e.to_string()))?;
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok(Correlation { r, p_value, n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub sentence: String,
    pub position: usize,
    pub group: String,
    pub novel: String,
    /// Mean baseline log-probability of the group's members.
    pub baseline: f64,
    /// Tuned log-probability of the novel token.
    pub tuned: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub points: Vec<ProbePoint>,
    pub correlation: Correlation,
}

/// Pairs each group with a novel token, e.g. mass nouns with the novel theme,
/// and correlates their predictions at every masked probe position.
pub fn baseline_correlation_probe(
    tuned: &ModelHandle,
    baseline: &ModelHandle,
    probe: &GeneratedDataset,
    pairs: [(&NounGroup, &str); 2],
) -> Result<CorrelationReport> {
    let mut points = Vec::new();
    for s in &probe.sentences {
        let mt = mask_sentence(tuned, s)?;
        let mb = mask_sentence(baseline, s)?;
        let tp: Vec<usize> = mt.slots.iter().map(|x| x.position).collect();
        let bp: Vec<usize> = mb.slots.iter().map(|x| x.position).collect();
        if tp != bp {
            return Err(Error::Shape(format!("`{}` masks differently under the two tokenizers", s.id)));
        }
        for (group, novel) in pairs {
            let ids: Vec<u32> = group.members.iter().map(|m| m.1).collect();
            let nid = tuned.token_id(novel)?;
            let picks: Vec<(usize, usize)> = bp.iter().map(|&p| (0, p)).collect();
            let lb = baseline.candidate_log_probs(std::slice::from_ref(&mb.ids), &picks, &ids)?;
            let lt = tuned.candidate_log_probs(std::slice::from_ref(&mt.ids), &picks, &[nid])?;
            for ((&position, b), t) in bp.iter().zip(lb).zip(lt) {
                points.push(ProbePoint {
                    sentence: s.id.clone(),
                    position,
                    group: group.label.name().to_string(),
                    novel: novel.to_string(),
                    baseline: b.iter().sum::<f64>() / b.len() as f64,
                    tuned: t[0],
                });
            }
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| p.baseline).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.tuned).collect();
    let correlation = pearson(&xs, &ys)?;
    Ok(CorrelationReport { points, correlation })
}
