use std::collections::BTreeMap;

use argprobe_core::backend::{load_baseline, DistributionSet, ModelHandle};
use argprobe_core::paradigm::{
    generate_finetune_exp1, generate_validation_exp1, Alternation, Frames, GeneratedDataset, LexicalConfig,
    NovelWords,
};
use argprobe_core::tuning::*;
use argprobe_core::Error;

fn exp1_setup() -> (ModelHandle, GeneratedDataset, Vec<GeneratedDataset>) {
    let mut h = load_baseline("builtin:tiny-wordpiece").unwrap();
    let novel = NovelWords::default();
    h.add_tokens(&[&novel.theme, &novel.goal]).unwrap();
    let lex = LexicalConfig::default();
    let frames = Frames::default_frames();
    let verb = lex.verb("spray").unwrap().clone();
    let tune = generate_finetune_exp1(&verb, Alternation::To, lex.fillers_for("spray").unwrap(), &frames, &novel)
        .unwrap();
    let valid = generate_validation_exp1(&verb, Alternation::To, &lex, &frames, &novel).unwrap();
    (h, tune, valid)
}

/// Returns a fixed loss stream and remembers the novel rows it saw.
struct Scripted {
    stream: Vec<f64>,
    seen: Vec<Vec<Vec<f32>>>,
}

impl Validator for Scripted {
    fn evaluate(&mut self, handle: &ModelHandle) -> argprobe_core::Result<Vec<SubpartEval>> {
        let rows = handle.embeddings()?;
        self.seen.push(rows[handle.original_vocab_size()..].to_vec());
        let loss = self.stream[self.seen.len() - 1];
        Ok(vec![SubpartEval {
            name: "scripted".into(),
            loss,
            accuracy: 0.0,
            mean_confidence: None,
            role_confidence: BTreeMap::new(),
        }])
    }
}

#[test]
fn scripted_stream_through_the_loop() {
    let (mut h, tune, _) = exp1_setup();
    let mut stream: Vec<f64> = (0..=8).map(|e| 10.0 - e as f64).collect();
    stream.extend((0..100).map(|i| 5.0 + i as f64));
    let mut v = Scripted { stream, seen: vec![] };
    let mut traj = TuningTrajectory::default();
    let cfg = TuningConfig {
        patience: 5,
        ..TuningConfig::exp1()
    };
    let state = finetune(&mut h, &tune, &mut v, &cfg, &LossConfig::exp1(), &mut traj).unwrap();
    assert_eq!(state.best_epoch, 8);
    assert_eq!(state.final_epoch, 13);
    assert_eq!(state.steps, 13);
    assert_eq!(traj.epochs.len(), 14);
    let now = h.embeddings().unwrap()[h.original_vocab_size()..].to_vec();
    assert_eq!(now, v.seen[8]);
    assert_ne!(v.seen[8], v.seen[13]);
}

#[test]
fn improving_stream_runs_to_the_cap() {
    let (mut h, tune, _) = exp1_setup();
    let mut v = Scripted {
        stream: (0..100).map(|e| 100.0 - e as f64).collect(),
        seen: vec![],
    };
    let cfg = TuningConfig {
        max_epochs: 12,
        ..TuningConfig::exp1()
    };
    let mut traj = TuningTrajectory::default();
    let state = finetune(&mut h, &tune, &mut v, &cfg, &LossConfig::exp1(), &mut traj).unwrap();
    assert_eq!((state.final_epoch, state.best_epoch, state.steps), (12, 12, 12));
}

#[test]
fn novel_only_leaves_everything_else_byte_identical() {
    let (mut h, tune, valid) = exp1_setup();
    let before = h.network().tensors().unwrap();
    let mut v = CrossEntropyValidator::new(&h, &valid).unwrap();
    let cfg = TuningConfig {
        max_epochs: 15,
        ..TuningConfig::exp1()
    };
    let mut traj = TuningTrajectory::default();
    finetune(&mut h, &tune, &mut v, &cfg, &LossConfig::exp1(), &mut traj).unwrap();
    let after = h.network().tensors().unwrap();
    for (name, t) in &before {
        let a = t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = after[name].flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let same = a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
        if name == "embeddings.novel" {
            if traj.last().unwrap().best_epoch > 0 {
                assert!(!same, "novel rows should move");
            }
        } else {
            assert!(same, "{name} changed");
        }
    }
}

#[test]
fn best_state_has_the_lowest_validation_loss() {
    let (mut h, tune, valid) = exp1_setup();
    let mut v = CrossEntropyValidator::new(&h, &valid).unwrap();
    let cfg = TuningConfig {
        max_epochs: 40,
        learning_rate: 0.05,
        ..TuningConfig::exp1()
    };
    let mut traj = TuningTrajectory::default();
    let state = finetune(&mut h, &tune, &mut v, &cfg, &LossConfig::exp1(), &mut traj).unwrap();
    for r in &traj.epochs {
        assert!(state.best_validation_loss <= r.validation_loss);
    }
    let again = v.evaluate(&h).unwrap();
    let mean = again.iter().map(|s| s.loss).sum::<f64>() / again.len() as f64;
    assert!((mean - state.best_validation_loss).abs() < 1e-9, "{mean} vs {}", state.best_validation_loss);
}

#[test]
fn divergence_keeps_the_trajectory() {
    let (mut h, tune, _) = exp1_setup();
    let mut stream = vec![3.0, 2.0, 1.0];
    stream.push(f64::NAN);
    let mut v = Scripted { stream, seen: vec![] };
    let mut traj = TuningTrajectory::default();
    let err = finetune(&mut h, &tune, &mut v, &TuningConfig::exp1(), &LossConfig::exp1(), &mut traj).unwrap_err();
    assert!(matches!(err, Error::Divergence { epoch: 3, .. }));
    assert_eq!(traj.epochs.len(), 3);
}

fn restrict(row: &[f32], v: usize) -> Vec<f64> {
    let r: Vec<f64> = row[..v].iter().map(|&x| f64::from(x)).collect();
    let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z = r.iter().map(|x| (x - m).exp()).sum::<f64>().ln() + m;
    r.iter().map(|x| x - z).collect()
}

#[test]
fn graph_loss_matches_distribution_route() {
    let (mut h, tune, _) = exp1_setup();
    // move every parameter away from the baseline first
    let mut warm = Scripted {
        stream: vec![3.0, 2.0, 1.0, 0.0],
        seen: vec![],
    };
    let cfg = TuningConfig {
        freeze_policy: argprobe_core::backend::FreezePolicy::AllUnfrozen,
        learning_rate: 0.01,
        max_epochs: 3,
        ..TuningConfig::exp1()
    };
    finetune(&mut h, &tune, &mut warm, &cfg, &LossConfig::exp1(), &mut TuningTrajectory::default()).unwrap();
    let masked = mask_dataset(&h, &tune).unwrap();
    let (rows, picks, targets) = training_batch(&masked);
    let pool = ReferencePool::desk();
    let sample = sample_reference_batch(&pool, 5, 3, 1).unwrap();
    let refs = ReferenceBatch::encode(&h, &sample).unwrap();
    let base = h.baseline_network().unwrap();
    let v = h.original_vocab_size();
    let mode = h.freeze_policy().trainable();
    let (_, g) = graph_loss(&h, mode, &rows, &picks, &targets, Some((&base, &refs, 2.5)), None).unwrap();

    // second route: per-sentence distributions through the inference API
    let mut tuning_sets = Vec::new();
    let mut tuning_targets = Vec::new();
    for m in &masked {
        let positions: Vec<usize> = m.slots.iter().map(|s| s.position).collect();
        let lp = h.log_probs(std::slice::from_ref(&m.ids), &positions.iter().map(|&p| (0, p)).collect::<Vec<_>>()).unwrap();
        tuning_sets.push(DistributionSet {
            sentence_id: m.sentence_id.clone(),
            positions,
            log_probs: lp.iter().map(|r| r.iter().map(|&x| f64::from(x)).collect()).collect(),
        });
        tuning_targets.push(m.slots.iter().map(|s| s.target.unwrap()).collect());
    }
    let pristine = load_baseline("builtin:tiny-wordpiece").unwrap();
    let mut model_sets = Vec::new();
    let mut base_sets = Vec::new();
    for (i, row) in refs.rows.iter().enumerate() {
        let positions: Vec<usize> = refs.picks.iter().filter(|p| p.0 == i).map(|p| p.1).collect();
        let picks: Vec<_> = positions.iter().map(|&p| (0, p)).collect();
        let m = h.log_probs(std::slice::from_ref(row), &picks).unwrap();
        let b = pristine.log_probs(std::slice::from_ref(row), &picks).unwrap();
        model_sets.push(DistributionSet {
            sentence_id: i.to_string(),
            positions: positions.clone(),
            log_probs: m.iter().map(|r| restrict(r, v)).collect(),
        });
        base_sets.push(DistributionSet {
            sentence_id: i.to_string(),
            positions,
            log_probs: b.iter().map(|r| r.iter().map(|&x| f64::from(x)).collect()).collect(),
        });
    }
    let n = compute_loss(&tuning_sets, &tuning_targets, &model_sets, &base_sets, 2.5).unwrap();
    assert!((n.cross_entropy - g.cross_entropy).abs() < 1e-4 * n.cross_entropy.abs().max(1.0));
    assert!(n.kl > 1e-3, "{}", n.kl);
    assert!((n.kl - g.kl).abs() < 1e-3 * n.kl, "{} vs {}", n.kl, g.kl);
    assert!((n.total - g.total).abs() < 1e-3 * n.total.abs().max(1.0));
}

#[test]
fn one_epoch_is_one_step_and_trajectory_round_trips() {
    let (mut h, tune, valid) = exp1_setup();
    let mut v = CrossEntropyValidator::new(&h, &valid).unwrap();
    let cfg = TuningConfig {
        max_epochs: 5,
        ..TuningConfig::exp1()
    };
    let mut traj = TuningTrajectory::default();
    let state = finetune(&mut h, &tune, &mut v, &cfg, &LossConfig::exp1(), &mut traj).unwrap();
    assert_eq!(state.steps, state.final_epoch);
    let back = TuningTrajectory::from_jsonl(&traj.to_jsonl().unwrap()).unwrap();
    assert_eq!(back, traj);
}
