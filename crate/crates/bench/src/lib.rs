//! Criterion benchmarks for the hot paths: embedding post-processing,
//! conditioned breakdowns, masked-position scoring and tokenization.

use std::collections::BTreeSet;

use argprobe_core::backend::{load_baseline, ModelHandle};
use argprobe_core::eval::{breakdown, conditional_filter, PredictionRecord, RecordMeta};
use argprobe_core::geometry::{all_but_the_top, EmbeddingMatrix};
use argprobe_core::paradigm::{Alternation, ArgOrder, RelativeOrder, Role, StructureTag, TenseAspect, Voice};
use criterion::{black_box, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_embeddings(rows: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    EmbeddingMatrix::new((0..rows as u32).collect(), data).expect("rectangular")
}

/// `n` records over 20 conditions; the first 40 (one per role and condition)
/// come from the tuning structure.
pub fn synthetic_records(n: usize, seed: u64) -> Vec<PredictionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let role = if i % 2 == 0 { Role::Theme } else { Role::Goal };
            let expected = if role == Role::Theme { 1 } else { 2 };
            let voice = if rng.random_bool(0.5) { Voice::Active } else { Voice::Passive };
            PredictionRecord {
                meta: RecordMeta {
                    model: "bench".into(),
                    sentence_id: format!("s{i}"),
                    structure_id: if i < 40 { "tuning".into() } else { format!("x{}", i % 13) },
                    tag: StructureTag {
                        alternation: Alternation::To,
                        voice,
                        a_movement: rng.random_bool(0.3),
                        abar_movement: rng.random_bool(0.3),
                        arg_order: if rng.random_bool(0.5) { ArgOrder::SO } else { ArgOrder::OS },
                        order_vs_tuning: Some(if rng.random_bool(0.5) { RelativeOrder::Same } else { RelativeOrder::Reverse }),
                        transformations: BTreeSet::new(),
                        tense_aspect: TenseAspect::Past,
                    },
                    verb: "spray".into(),
                    tuning: "TO".into(),
                    condition: format!("c{}", (i / 2) % 20),
                },
                role,
                position: 3,
                candidates: vec![1, 2],
                log_probs: vec![rng.random_range(-5.0..0.0), rng.random_range(-5.0..0.0)],
                expected,
                unexpected: 3 - expected,
            }
        })
        .collect()
}

fn bench_geometry(c: &mut Criterion) {
    let mut g = c.benchmark_group("all_but_the_top");
    for rows in [200, 1000] {
        let e = random_embeddings(rows, 64, 7);
        g.bench_with_input(BenchmarkId::from_parameter(rows), &e, |b, e| {
            b.iter(|| all_but_the_top(black_box(e), 3).expect("fits"))
        });
    }
    g.finish();
}

fn bench_metrics(c: &mut Criterion) {
    let records = synthetic_records(20_000, 11);
    let (tuning, test): (Vec<_>, Vec<_>) = records.iter().cloned().partition(|r| r.meta.structure_id == "tuning");
    c.bench_function("conditional_breakdown_20k", |b| {
        b.iter(|| {
            let kept = conditional_filter(black_box(&test), &tuning).expect("covered");
            breakdown(&kept, &["model", "voice", "arg_order", "order_vs_tuning"]).expect("keys")
        })
    });
}

fn desk() -> ModelHandle {
    load_baseline("builtin:tiny-wordpiece").expect("built-in backend")
}

fn bench_backend(c: &mut Criterion) {
    let h = desk();
    let text = "The girl sprayed the paint onto the wall in the garden.";
    c.bench_function("tokenize_sentence", |b| b.iter(|| h.encode(black_box(text)).expect("encodes")));
    let ids = h.encode(text).expect("encodes").ids;
    let batch: Vec<Vec<u32>> = vec![ids.clone(); 16];
    let picks: Vec<(usize, usize)> = (0..16).map(|i| (i, 3)).collect();
    c.bench_function("masked_log_probs_batch16", |b| {
        b.iter(|| h.log_probs(black_box(&batch), &picks).expect("forward"))
    });
}

pub fn benchmarks(c: &mut Criterion) {
    bench_geometry(c);
    bench_metrics(c);
    bench_backend(c);
}
