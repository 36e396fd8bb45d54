//! Masked-LM cross-entropy plus the drift penalty against the baseline.

use candle_core::{Tensor, D};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{DistributionSet, ModelHandle, Network, Trainable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValue {
    pub cross_entropy: f64,
    /// Summed divergence over all reference positions, before scaling.
    pub kl: f64,
    pub total: f64,
}

/// `Σ p (log p − log q)` from log-probabilities; zero-probability terms vanish.
pub fn kl_divergence(log_p: &[f64], log_q: &[f64]) -> Result<f64> {
    if log_p.len() != log_q.len() {
        return Err(Error::Shape(format!("support sizes {} vs {}", log_p.len(), log_q.len())));
    }
    Ok(log_p
        .iter()
        .zip(log_q)
        .filter(|(lp, _)| lp.is_finite())
        .map(|(lp, lq)| lp.exp() * (lp - lq))
        .sum())
}

/// Summed divergence of model from baseline over matching distribution sets.
pub fn kl_term(model: &[DistributionSet], baseline: &[DistributionSet]) -> Result<f64> {
    if model.len() != baseline.len() {
        return Err(Error::Shape(format!("{} model sets vs {} baseline sets", model.len(), baseline.len())));
    }
    let mut sum = 0.0;
    for (m, b) in model.iter().zip(baseline) {
        if m.sentence_id != b.sentence_id || m.positions != b.positions {
            return Err(Error::Shape(format!(
                "distribution sets for `{}` and `{}` cover different positions",
                m.sentence_id, b.sentence_id
            )));
        }
        for (p, q) in m.log_probs.iter().zip(&b.log_probs) {
            sum += kl_divergence(p, q)?;
        }
    }
    Ok(sum)
}

/// Mean `−log p(target)` over every position of every set.
pub fn cross_entropy(model: &[DistributionSet], targets: &[Vec<u32>]) -> Result<f64> {
    if model.len() != targets.len() {
        return Err(Error::Shape(format!("{} sets vs {} target lists", model.len(), targets.len())));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (m, t) in model.iter().zip(targets) {
        if m.log_probs.len() != t.len() {
            return Err(Error::Shape(format!("`{}`: {} positions vs {} targets", m.sentence_id, m.log_probs.len(), t.len())));
        }
        for (row, &id) in m.log_probs.iter().zip(t) {
            let lp = row.get(id as usize).ok_or(Error::Bounds {
                index: id as usize,
                len: row.len(),
            })?;
            sum -= lp;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Shape("no target positions".into()));
    }
    Ok(sum / n as f64)
}

/// `L = L_CE + λ · Σ_s Σ_t D_KL(p_M(t) ‖ p_B(t))`.
///
/// `reference_model` and `reference_baseline` hold the distributions at every
/// position of the sampled sentences. With `lambda == 0` they are not read.
pub fn compute_loss(
    tuning: &[DistributionSet],
    targets: &[Vec<u32>],
    reference_model: &[DistributionSet],
    reference_baseline: &[DistributionSet],
    lambda: f64,
) -> Result<LossValue> {
    let ce = cross_entropy(tuning, targets)?;
    if lambda == 0.0 {
        return Ok(LossValue {
            cross_entropy: ce,
            kl: 0.0,
            total: ce,
        });
    }
    let kl = kl_term(reference_model, reference_baseline)?;
    Ok(LossValue {
        cross_entropy: ce,
        kl,
        total: ce + lambda * kl,
    })
}

/// Reference sentences encoded for one step, with their content positions.
pub struct ReferenceBatch {
    pub rows: Vec<Vec<u32>>,
    pub picks: Vec<(usize, usize)>,
}

impl ReferenceBatch {
    pub fn encode(handle: &ModelHandle, sentences: &[String]) -> Result<Self> {
        let mut rows = Vec::with_capacity(sentences.len());
        let mut picks = Vec::new();
        for (r, s) in sentences.iter().enumerate() {
            let ids = handle.encode(s)?.ids;
            picks.extend(handle.content_positions(&ids).into_iter().map(|p| (r, p)));
            rows.push(ids);
        }
        Ok(Self { rows, picks })
    }
}

/// The differentiable loss for one optimizer step.
///
/// The model's distributions at reference positions are restricted to the
/// baseline vocabulary and renormalized before comparison.
#[allow(clippy::too_many_arguments)]
pub fn graph_loss(
    handle: &ModelHandle,
    mode: Trainable,
    rows: &[Vec<u32>],
    picks: &[(usize, usize)],
    targets: &[u32],
    reference: Option<(&Network, &ReferenceBatch, f64)>,
    mut dropout: Option<&mut ChaCha8Rng>,
) -> Result<(Tensor, LossValue)> {
    let net = handle.network();
    let pad = handle.tokenizer().pad_id();
    let hidden = net.encode(rows, pad, Some(mode), dropout.as_deref_mut())?;
    let logits = net.head(&net.gather_positions(&hidden, picks)?, Some(mode))?;
    let lsm = candle_nn::ops::log_softmax(&logits, D::Minus1)?;
    let idx = Tensor::from_vec(targets.to_vec(), (targets.len(), 1), net.device())?;
    let ce = lsm.gather(&idx, 1)?.mean_all()?.neg()?;
    let ce_value = f64::from(ce.to_scalar::<f32>()?);
    let Some((base, refs, lambda)) = reference.filter(|(_, _, l)| *l > 0.0) else {
        return Ok((
            ce,
            LossValue {
                cross_entropy: ce_value,
                kl: 0.0,
                total: ce_value,
            },
        ));
    };
    let v = base.config().vocab_size;
    let hm = net.encode(&refs.rows, pad, Some(mode), dropout)?;
    let lm = net.head(&net.gather_positions(&hm, &refs.picks)?, Some(mode))?.narrow(1, 0, v)?;
    let lp_m = candle_nn::ops::log_softmax(&lm, D::Minus1)?;
    let hb = base.encode(&refs.rows, pad, None, None)?;
    let lb = base.head(&base.gather_positions(&hb, &refs.picks)?, None)?;
    let lp_b = candle_nn::ops::log_softmax(&lb, D::Minus1)?.detach();
    let kl = (lp_m.exp()? * (&lp_m - &lp_b)?)?.sum_all()?;
    let kl_value = f64::from(kl.to_scalar::<f32>()?);
    let total = (&ce + (kl * lambda)?)?;
    let total_value = f64::from(total.to_scalar::<f32>()?);
    Ok((
        total,
        LossValue {
            cross_entropy: ce_value,
            kl: kl_value,
            total: total_value,
        },
    ))
}
