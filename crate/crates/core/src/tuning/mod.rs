//! Fine-tuning: full-batch AdamW on masked positions, an optional drift
//! penalty, early stopping on validation loss and best-state selection.

pub mod batch;
pub mod loss;
pub mod reference;

use std::collections::BTreeMap;
use std::path::PathBuf;

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{FreezePolicy, ModelHandle};
use crate::error::{Error, Result};
use crate::paradigm::GeneratedDataset;

pub use batch::{mask_dataset, mask_sentence, training_batch, MaskedSentence, MaskedSlot};
pub use loss::{compute_loss, cross_entropy, graph_loss, kl_divergence, kl_term, LossValue, ReferenceBatch};
pub use reference::{largest_remainder, sample_reference_batch, ReferencePool};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningConfig {
    pub freeze_policy: FreezePolicy,
    pub learning_rate: f64,
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Dropout during training steps at the checkpoint's own rate; validation never uses it.
    pub train_dropout: bool,
    pub seed: u64,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self::exp1()
    }
}

impl TuningConfig {
    /// Novel embeddings only, LR 0.001, patience 30.
    pub fn exp1() -> Self {
        Self {
            freeze_policy: FreezePolicy::NovelEmbeddingsOnly,
            learning_rate: 1e-3,
            min_epochs: 0,
            max_epochs: 1000,
            patience: 30,
            train_dropout: true,
            seed: 0,
        }
    }

    /// Everything unfrozen, LR 0.0001, between 100 and 260 epochs, patience 30.
    pub fn exp2() -> Self {
        Self {
            freeze_policy: FreezePolicy::AllUnfrozen,
            learning_rate: 1e-4,
            min_epochs: 100,
            max_epochs: 260,
            patience: 30,
            train_dropout: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_epochs > self.max_epochs {
            return Err(Error::Config(format!(
                "min_epochs {} exceeds max_epochs {}",
                self.min_epochs, self.max_epochs
            )));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda: f64,
    pub kl_sample_size: usize,
    /// Pool manifest; `None` uses the built-in pool.
    pub reference_manifest: Option<PathBuf>,
    /// Proportions by corpus name, overriding the manifest's.
    pub corpus_mix: BTreeMap<String, f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::exp2()
    }
}

impl LossConfig {
    pub fn exp1() -> Self {
        Self {
            lambda: 0.0,
            ..Self::exp2()
        }
    }

    pub fn exp2() -> Self {
        Self {
            lambda: 2.5,
            kl_sample_size: 100,
            reference_manifest: None,
            corpus_mix: [("wiki".to_string(), 0.68), ("books".to_string(), 0.32)].into(),
        }
    }

    /// Loads the pool this config names, with the configured mix applied.
    pub fn pool(&self) -> Result<ReferencePool> {
        let pool = match &self.reference_manifest {
            Some(p) => ReferencePool::from_manifest(p)?,
            None => ReferencePool::desk(),
        };
        pool.with_mix(&self.corpus_mix)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda {} must be a non-negative number", self.lambda)));
        }
        if !self.corpus_mix.is_empty() {
            let s: f64 = self.corpus_mix.values().sum();
            if (s - 1.0).abs() > 1e-9 || self.corpus_mix.values().any(|&p| p < 0.0) {
                return Err(Error::Config(format!("corpus mix sums to {s}, expected 1")));
            }
        }
        if self.lambda > 0.0 {
            let pool = self.pool()?;
            if self.kl_sample_size == 0 || self.kl_sample_size > pool.len() {
                return Err(Error::Config(format!(
                    "kl sample size {} outside 1..={}",
                    self.kl_sample_size,
                    pool.len()
                )));
            }
        }
        Ok(())
    }
}

/// Validation result for one subpart at one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubpartEval {
    pub name: String,
    pub loss: f64,
    pub accuracy: f64,
    pub mean_confidence: Option<f64>,
    /// Mean confidence split by underlying role, when the metric defines one.
    #[serde(default)]
    pub role_confidence: BTreeMap<String, f64>,
}

/// Evaluates the current model on the validation subparts, without dropout.
pub trait Validator {
    fn evaluate(&mut self, handle: &ModelHandle) -> Result<Vec<SubpartEval>>;
}

/// Loss and top-1 accuracy at target positions; no confidence.
pub struct CrossEntropyValidator {
    subparts: Vec<(String, Vec<MaskedSentence>)>,
}

impl CrossEntropyValidator {
    pub fn new(handle: &ModelHandle, subparts: &[GeneratedDataset]) -> Result<Self> {
        Ok(Self {
            subparts: subparts
                .iter()
                .map(|d| Ok((d.name.clone(), mask_dataset(handle, d)?)))
                .collect::<Result<_>>()?,
        })
    }
}

impl Validator for CrossEntropyValidator {
    fn evaluate(&mut self, handle: &ModelHandle) -> Result<Vec<SubpartEval>> {
        let mut out = Vec::new();
        for (name, masked) in &self.subparts {
            let (rows, picks, targets) = training_batch(masked);
            let lp = handle.log_probs(&rows, &picks)?;
            let mut loss = 0.0;
            let mut hits = 0usize;
            for (row, &t) in lp.iter().zip(&targets) {
                loss -= f64::from(row[t as usize]);
                let best = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i as u32);
                hits += usize::from(best == Some(t));
            }
            let n = targets.len().max(1) as f64;
            out.push(SubpartEval {
                name: name.clone(),
                loss: loss / n,
                accuracy: hits as f64 / n,
                mean_confidence: None,
                role_confidence: BTreeMap::new(),
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Loss of the step that produced this epoch's weights; absent at epoch 0.
    pub train: Option<LossValue>,
    pub validation: Vec<SubpartEval>,
    /// Equal-weight mean of the subpart losses.
    pub validation_loss: f64,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TuningTrajectory {
    pub epochs: Vec<EpochRecord>,
    /// Optimizer steps taken.
    pub steps: usize,
}

impl TuningTrajectory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// Appends an evaluation, updating the best-so-far on strict improvement.
    pub fn record(&mut self, epoch: usize, train: Option<LossValue>, validation: Vec<SubpartEval>) -> &EpochRecord {
        let loss = mean_loss(&validation);
        let (best_epoch, best_validation_loss) = match self.epochs.last() {
            Some(prev) if !(loss < prev.best_validation_loss) => (prev.best_epoch, prev.best_validation_loss),
            _ => (epoch, loss),
        };
        self.epochs.push(EpochRecord {
            epoch,
            train,
            validation,
            validation_loss: loss,
            best_epoch,
            best_validation_loss,
        });
        self.epochs.last().expect("just pushed")
    }

    pub fn improved(&self) -> bool {
        self.last().is_some_and(|r| r.best_epoch == r.epoch)
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(src: &str) -> Result<Self> {
        let epochs: Vec<EpochRecord> = src
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        let steps = epochs.last().map(|e| e.epoch).unwrap_or(0);
        Ok(Self { epochs, steps })
    }
}

fn mean_loss(v: &[SubpartEval]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().map(|s| s.loss).sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stop iff `(epoch ≥ min AND epoch − best ≥ patience) OR epoch ≥ max`.
pub fn early_stop_decision(trajectory: &TuningTrajectory, cfg: &TuningConfig) -> StopDecision {
    let Some(last) = trajectory.last() else {
        return StopDecision::Continue;
    };
    let e = last.epoch;
    if e >= cfg.max_epochs || (e >= cfg.min_epochs && e - last.best_epoch >= cfg.patience) {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetunedState {
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub final_epoch: usize,
    pub steps: usize,
}

/// Fine-tunes `handle` in place and leaves it at the best validation state.
///
/// Epoch 0 is the untouched model. Each later epoch is one full-batch step
/// followed by validation. `trajectory` is filled as training proceeds, so
/// it stays available when a divergence error aborts the run.
pub fn finetune(
    handle: &mut ModelHandle,
    tuning: &GeneratedDataset,
    validator: &mut dyn Validator,
    cfg: &TuningConfig,
    loss_cfg: &LossConfig,
    trajectory: &mut TuningTrajectory,
) -> Result<FinetunedState> {
    cfg.validate()?;
    loss_cfg.validate()?;
    handle.set_freeze_policy(cfg.freeze_policy);
    let mode = cfg.freeze_policy.trainable();
    let masked = mask_dataset(handle, tuning)?;
    let (rows, picks, targets) = training_batch(&masked);
    if targets.is_empty() {
        return Err(Error::Config(format!("tuning set `{}` has no target positions", tuning.name)));
    }
    let reference = if loss_cfg.lambda > 0.0 {
        Some((handle.baseline_network()?, loss_cfg.pool()?))
    } else {
        None
    };
    let mut opt = AdamW::new(
        handle.network().trainable_vars(mode),
        ParamsAdamW {
            lr: cfg.learning_rate,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd50f_0a7e);

    *trajectory = TuningTrajectory::default();
    let eval0 = validator.evaluate(handle)?;
    check_validation(0, &eval0)?;
    trajectory.record(0, None, eval0);
    let mut best: BTreeMap<String, Tensor> = handle.network().tensors()?;

    let mut epoch = 0;
    while early_stop_decision(trajectory, cfg) == StopDecision::Continue {
        epoch += 1;
        let refs = match &reference {
            Some((_, pool)) => {
                let s = sample_reference_batch(pool, loss_cfg.kl_sample_size, cfg.seed, epoch as u64)?;
                Some(ReferenceBatch::encode(handle, &s)?)
            }
            None => None,
        };
        let (loss, value) = graph_loss(
            handle,
            mode,
            &rows,
            &picks,
            &targets,
            reference
                .as_ref()
                .zip(refs.as_ref())
                .map(|((net, _), r)| (net, r, loss_cfg.lambda)),
            cfg.train_dropout.then_some(&mut dropout_rng),
        )?;
        if !value.total.is_finite() {
            return Err(Error::Divergence {
                epoch,
                value: value.total,
            });
        }
        opt.backward_step(&loss)?;
        handle.touch();
        trajectory.steps += 1;
        let eval = validator.evaluate(handle)?;
        check_validation(epoch, &eval)?;
        trajectory.record(epoch, Some(value), eval);
        if trajectory.improved() {
            best = handle.network().tensors()?;
        }
    }
    let last = trajectory.last().expect("epoch 0 recorded");
    let state = FinetunedState {
        best_epoch: last.best_epoch,
        best_validation_loss: last.best_validation_loss,
        final_epoch: last.epoch,
        steps: trajectory.steps,
    };
    handle.load_parameters(&best)?;
    Ok(state)
}

fn check_validation(epoch: usize, eval: &[SubpartEval]) -> Result<()> {
    let l = mean_loss(eval);
    if l.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { epoch, value: l })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(loss: f64) -> Vec<SubpartEval> {
        vec![SubpartEval {
            name: "v".into(),
            loss,
            accuracy: 0.0,
            mean_confidence: None,
            role_confidence: BTreeMap::new(),
        }]
    }

    fn cfg(min: usize, max: usize) -> TuningConfig {
        TuningConfig {
            min_epochs: min,
            max_epochs: max,
            ..TuningConfig::exp1()
        }
    }

    fn at(epoch: usize, best: usize) -> TuningTrajectory {
        let mut t = TuningTrajectory::default();
        for e in 0..=epoch {
            t.record(e, None, eval(if e <= best { 10.0 - e as f64 * 1e-3 } else { 20.0 }));
        }
        t
    }

    #[test]
    fn minimum_floor() {
        assert_eq!(early_stop_decision(&at(50, 10), &cfg(100, 260)), StopDecision::Continue);
    }

    #[test]
    fn patience_runs_out() {
        assert_eq!(early_stop_decision(&at(130, 100), &cfg(100, 260)), StopDecision::Stop);
        assert_eq!(early_stop_decision(&at(129, 100), &cfg(100, 260)), StopDecision::Continue);
    }

    #[test]
    fn cap() {
        assert_eq!(early_stop_decision(&at(260, 259), &cfg(100, 260)), StopDecision::Stop);
    }

    #[test]
    fn ties_do_not_improve() {
        let mut t = TuningTrajectory::default();
        t.record(0, None, eval(1.0));
        t.record(1, None, eval(1.0));
        assert_eq!(t.last().unwrap().best_epoch, 0);
    }

    /// Replays a loss stream without the trajectory type.
    fn oracle(stream: &[f64], min: usize, max: usize, patience: usize) -> (usize, usize) {
        let mut best = 0;
        for e in 0..stream.len() {
            if stream[e] < stream[best] {
                best = e;
            }
            if e >= max || (e >= min && e - best >= patience) {
                return (e, best);
            }
        }
        panic!("stream too short");
    }

    fn controller(stream: &[f64], c: &TuningConfig) -> (usize, usize) {
        let mut t = TuningTrajectory::default();
        for (e, &l) in stream.iter().enumerate() {
            t.record(e, None, eval(l));
            if early_stop_decision(&t, c) == StopDecision::Stop {
                return (e, t.last().unwrap().best_epoch);
            }
        }
        panic!("stream too short");
    }

    #[test]
    fn scripted_streams() {
        let exp2 = TuningConfig::exp2();
        let improving: Vec<f64> = (0..400).map(|e| 100.0 - e as f64).collect();
        assert_eq!(controller(&improving, &exp2), (260, 260));
        let mut worsening: Vec<f64> = (0..=150).map(|e| 100.0 - e as f64).collect();
        worsening.extend((1..200).map(|i| 1.0 + i as f64));
        assert_eq!(controller(&worsening, &exp2), (180, 150));
        let exp1 = TuningConfig::exp1();
        let mut s: Vec<f64> = (0..=12).map(|e| 50.0 - e as f64).collect();
        s.extend(std::iter::repeat(60.0).take(100));
        assert_eq!(controller(&s, &exp1), (42, 12));
        assert_eq!(oracle(&s, 0, 1000, 30), (42, 12));
    }

    #[test]
    fn config_validation() {
        assert!(TuningConfig::exp1().validate().is_ok());
        assert!(TuningConfig::exp2().validate().is_ok());
        assert!(cfg(10, 5).validate().is_err());
        assert!(TuningConfig {
            patience: 0,
            ..TuningConfig::exp1()
        }
        .validate()
        .is_err());
        assert!(TuningConfig {
            learning_rate: 0.0,
            ..TuningConfig::exp1()
        }
        .validate()
        .is_err());
        assert!(LossConfig::exp2().validate().is_ok());
        assert!(LossConfig {
            kl_sample_size: 501,
            ..LossConfig::exp2()
        }
        .validate()
        .is_err());
    }

    proptest::proptest! {
        #[test]
        fn controller_matches_oracle(
            stream in proptest::collection::vec(0.0f64..10.0, 400),
            min in 0usize..50,
            span in 0usize..200,
            patience in 1usize..40,
        ) {
            let c = TuningConfig { min_epochs: min, max_epochs: min + span, patience, ..TuningConfig::exp1() };
            proptest::prop_assert_eq!(controller(&stream, &c), oracle(&stream, min, min + span, patience));
        }

        #[test]
        fn best_so_far_never_increases(stream in proptest::collection::vec(0.0f64..10.0, 1..100)) {
            let mut t = TuningTrajectory::default();
            for (e, &l) in stream.iter().enumerate() {
                t.record(e, None, eval(l));
            }
            for w in t.epochs.windows(2) {
                proptest::prop_assert!(w[1].best_validation_loss <= w[0].best_validation_loss);
            }
            for r in &t.epochs {
                proptest::prop_assert!(t.last().unwrap().best_validation_loss <= r.validation_loss);
            }
        }
    }
}
