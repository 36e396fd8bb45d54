use argprobe_core::backend::{load_baseline, DistributionSet};
use argprobe_core::geometry::*;
use argprobe_core::paradigm::{generate_probe_two_pp, Frames, LexicalConfig, NovelWords};
use argprobe_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // shared offset and a dominant direction make the matrix anisotropic
    let offset: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let rows = (0..n)
        .map(|_| {
            let s: f64 = rng.random_range(-3.0..3.0);
            (0..d)
                .map(|j| offset[j] + s * ((j % 3) as f64 - 1.0) + rng.random_range(-1.0..1.0))
                .collect()
        })
        .collect();
    EmbeddingMatrix::new((0..n as u32).collect(), rows).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Top-k eigenvectors of the sample covariance by power iteration with deflation.
fn power_top(rows: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows[0].len();
    let mu: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut c = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                c[i][j] += (r[i] - mu[i]) * (r[j] - mu[j]) / (n - 1) as f64;
            }
        }
    }
    let mut out = Vec::new();
    for t in 0..k {
        let mut v: Vec<f64> = (0..d).map(|j| 1.0 + ((j * 7 + t) % 5) as f64).collect();
        let mut lambda = 0.0;
        for _ in 0..20_000 {
            let w: Vec<f64> = (0..d).map(|i| dot(&c[i], &v)).collect();
            let norm = dot(&w, &w).sqrt();
            let next: Vec<f64> = w.iter().map(|x| x / norm).collect();
            let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            v = next;
            lambda = norm;
            if delta < 1e-15 {
                break;
            }
        }
        for i in 0..d {
            for j in 0..d {
                c[i][j] -= lambda * v[i] * v[j];
            }
        }
        out.push(v);
    }
    out
}

#[test]
fn corrected_rows_are_orthogonal_to_oracle_directions() {
    for (n, d, seed) in [(10, 8, 1), (200, 32, 2)] {
        let e = random_matrix(n, d, seed);
        let oracle = power_top(&e.rows, 3);
        let fitted = principal_directions(&e, 3).unwrap();
        for (u, v) in fitted.iter().zip(&oracle) {
            assert!(dot(u, v).abs() > 1.0 - 1e-6, "fitted direction disagrees with the oracle");
        }
        let c = all_but_the_top(&e, 3).unwrap();
        for row in &c.rows {
            for u in &oracle {
                assert!(dot(row, u).abs() < 1e-6, "{}", dot(row, u));
            }
        }
    }
}

#[test]
fn correction_is_idempotent_and_centered() {
    let e = random_matrix(200, 32, 3);
    let fit = TopDirections::fit(&e, 3).unwrap();
    let once = fit.apply(&e).unwrap();
    let twice = fit.apply(&once).unwrap();
    for (a, b) in once.rows.iter().flatten().zip(twice.rows.iter().flatten()) {
        assert!((a - b).abs() < 1e-9);
    }
    for j in 0..once.dim() {
        let m: f64 = once.rows.iter().map(|r| r[j]).sum::<f64>() / once.rows.len() as f64;
        assert!(m.abs() < 1e-9, "column {j} mean {m}");
    }
}

#[test]
fn rank_one_matrix_collapses_to_zero() {
    let u = [1.0, -2.0, 0.5, 3.0];
    let rows: Vec<Vec<f64>> = [-2.0, -1.0, 0.5, 2.5].iter().map(|s| u.iter().map(|x| s * x).collect()).collect();
    let c = all_but_the_top(&EmbeddingMatrix::new(vec![0, 1, 2, 3], rows).unwrap(), 1).unwrap();
    assert!(c.rows.iter().flatten().all(|x| x.abs() < 1e-12));
}

#[test]
fn already_corrected_matrix_is_unchanged() {
    // mean zero and nothing along the removed axis
    let rows = vec![vec![0.0, 1.0, 0.0], vec![0.0, -1.0, 0.0], vec![0.0, 0.0, 0.5], vec![0.0, 0.0, -0.5]];
    let e = EmbeddingMatrix::new(vec![0, 1, 2, 3], rows.clone()).unwrap();
    let fit = TopDirections {
        directions: vec![vec![1.0, 0.0, 0.0]],
    };
    assert_eq!(fit.apply(&e).unwrap().rows, rows);
}

#[test]
fn too_many_directions_is_a_parameter_error() {
    let e = random_matrix(10, 4, 9);
    assert!(matches!(all_but_the_top(&e, 4), Err(Error::Parameter(_))));
}

#[test]
fn cosine_examples() {
    assert!((cosine(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(cosine(&[1.0, 0.0], &[0.0, 4.0]).unwrap(), 0.0);
    assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 1.0]), Err(Error::Undefined(_))));
    let a = [0.3, -1.2, 2.0];
    let b = [1.5, 0.4, -0.7];
    let expected = (0.3 * 1.5 - 1.2 * 0.4 - 2.0 * 0.7)
        / ((0.09f64 + 1.44 + 4.0).sqrt() * (2.25f64 + 0.16 + 0.49).sqrt());
    assert!((cosine(&a, &b).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn profile_reports_zero_rows_and_excludes_them() {
    let rows = vec![vec![1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
    let e = EmbeddingMatrix::new(vec![10, 11, 12, 13], rows).unwrap();
    let g = NounGroup {
        label: GroupLabel::Mass,
        members: vec![("a".into(), 11), ("zero".into(), 12), ("b".into(), 13)],
    };
    let p = cosine_profile(&e, &[("thax".into(), 10)], &[g]).unwrap();
    assert_eq!(p[0].undefined, vec!["zero".to_string()]);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    assert!((p[0].mean - s / 2.0).abs() < 1e-12);
    // sample sd of {s, 0} is s/√2, over √2
    assert!((p[0].std_err - s / 2.0).abs() < 1e-12);
}

#[test]
fn pearson_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xs: Vec<f64> = (0..50).map(|_| rng.random_range(-5.0..5.0)).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 1.7 * x - 0.3 + rng.random_range(-2.0..2.0)).collect();
    let n = xs.len() as f64;
    let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
    let sxy = dot(&xs, &ys);
    let (sxx, syy) = (dot(&xs, &xs), dot(&ys, &ys));
    let r = (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
    let c = pearson(&xs, &ys).unwrap();
    assert!((c.r - r).abs() < 1e-9);
    assert!(c.p_value < 1e-10);
    assert_eq!(pearson(&xs, &xs).unwrap().r, 1.0);
    assert!(matches!(pearson(&[1.0, 2.0], &[3.0, 4.0]), Err(Error::Undefined(_))));
}

#[test]
fn pearson_p_value_matches_student_t_tail() {
    let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
    let noisy = [2.0, 1.0, 4.0, 3.0, 6.0, 5.0, 3.0, 9.0, 2.0, 7.0, 4.0, 8.0];
    let c = pearson(&xs, &noisy).unwrap();
    let t = c.r * (10.0 / (1.0 - c.r * c.r)).sqrt();
    // two-sided tail of t(10), numerically integrated
    let pdf = |x: f64| (1.0 + x * x / 10.0).powf(-5.5);
    let (lo, hi, k) = (t.abs(), 200.0, 400_000);
    let h = (hi - lo) / k as f64;
    let mut tail = 0.5 * (pdf(lo) + pdf(hi));
    for i in 1..k {
        tail += pdf(lo + i as f64 * h);
    }
    tail *= h;
    // normalizing constant Γ(5.5) / (√(10π) Γ(5))
    let norm = 52.34277778455352 / ((10.0 * std::f64::consts::PI).sqrt() * 24.0);
    assert!((c.p_value - 2.0 * tail * norm).abs() < 1e-6, "{} vs {}", c.p_value, 2.0 * tail * norm);
}

fn set(id: &str, rows: Vec<Vec<f64>>) -> DistributionSet {
    DistributionSet {
        sentence_id: id.into(),
        positions: (1..=rows.len()).collect(),
        log_probs: rows.into_iter().map(|r| r.into_iter().map(f64::ln).collect()).collect(),
    }
}

#[test]
fn audit_of_hand_built_streams_matches_direct_sum() {
    let p = vec![vec![0.1, 0.2, 0.3, 0.4], vec![0.25, 0.25, 0.25, 0.25]];
    let q = vec![vec![0.4, 0.3, 0.2, 0.1], vec![0.7, 0.1, 0.1, 0.1]];
    let audit = audit_distributions(&[set("a", p.clone())], &[set("a", q.clone())]).unwrap();
    let direct: Vec<f64> = p
        .iter()
        .zip(&q)
        .map(|(pr, qr)| pr.iter().zip(qr).map(|(a, b)| a * (a / b).ln()).sum())
        .collect();
    assert_eq!(audit.values.len(), 2);
    for (v, d) in audit.values.iter().zip(&direct) {
        assert!((v.kl - d).abs() < 1e-12);
    }
    assert!((audit.sum - direct.iter().sum::<f64>()).abs() < 1e-12);
    assert!((audit.mean - direct.iter().sum::<f64>() / 2.0).abs() < 1e-12);
    let self_audit = audit_distributions(&[set("a", p.clone())], &[set("a", p)]).unwrap();
    assert!(self_audit.values.iter().all(|v| v.kl == 0.0));
}

#[test]
fn audit_drops_extra_support_and_renormalizes() {
    // a fifth class (an added token) on the tuned side only
    let tuned = set("a", vec![vec![0.05, 0.1, 0.15, 0.2, 0.5]]);
    let base = set("a", vec![vec![0.1, 0.2, 0.3, 0.4]]);
    let audit = audit_distributions(&[tuned], &[base]).unwrap();
    assert!(audit.values[0].kl.abs() < 1e-12);
}

#[test]
fn kl_audit_of_a_model_against_itself_is_zero() {
    let base = load_baseline("builtin:tiny-wordpiece").unwrap();
    let mut tuned = base.fork().unwrap();
    tuned.add_tokens(&["thax", "gorx"]).unwrap();
    let sample: Vec<String> = argprobe_core::backend::desk::DESK_WIKI.lines().take(5).map(str::to_string).collect();
    let audit = kl_audit(&tuned, &base, &sample).unwrap();
    assert!(!audit.values.is_empty());
    assert!(audit.values.iter().all(|v| v.kl.abs() < 1e-6), "{:?}", audit.quantiles);
}

#[test]
fn two_pp_probe_produces_a_correlation() {
    let base = load_baseline("builtin:tiny-wordpiece").unwrap();
    let mut tuned = base.fork().unwrap();
    let novel = NovelWords::default();
    tuned.add_tokens(&[&novel.theme, &novel.goal]).unwrap();
    let lex = LexicalConfig::default();
    let probe = generate_probe_two_pp(&lex.test_verbs(), &Frames::default_frames(), "[MASK]").unwrap();
    let mass = NounGroup::resolve(GroupLabel::Mass, &lex.mass_nouns, &base).unwrap();
    let count = NounGroup::resolve(GroupLabel::Count, &lex.count_nouns, &base).unwrap();
    let report = baseline_correlation_probe(&tuned, &base, &probe, [(&mass, &novel.theme), (&count, &novel.goal)]).unwrap();
    assert_eq!(report.points.len(), probe.sentences.iter().map(|s| s.mask_count()).sum::<usize>() * 2);
    assert!(report.correlation.r.is_finite());
}

fn arb_rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (6usize..20).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 6), n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_fitted_correction_is_idempotent(rows in arb_rows(), d in 1usize..4) {
        let e = EmbeddingMatrix::new((0..rows.len() as u32).collect(), rows).unwrap();
        let fit = TopDirections::fit(&e, d).unwrap();
        let once = fit.apply(&e).unwrap();
        let twice = fit.apply(&once).unwrap();
        for (a, b) in once.rows.iter().flatten().zip(twice.rows.iter().flatten()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        for j in 0..6 {
            let m: f64 = once.rows.iter().map(|r| r[j]).sum::<f64>() / once.rows.len() as f64;
            prop_assert!(m.abs() < 1e-9);
        }
    }

    #[test]
    fn prop_cosine_is_scale_invariant(
        a in prop::collection::vec(-5.0f64..5.0, 4),
        b in prop::collection::vec(-5.0f64..5.0, 4),
        c in 0.01f64..100.0,
    ) {
        prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
        let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
        prop_assert!((cosine(&a, &b).unwrap() - cosine(&scaled, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn prop_pearson_is_affine_invariant(
        pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 4..30),
        slope in 0.1f64..10.0,
        shift in -10.0f64..10.0,
    ) {
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let r = pearson(&xs, &ys);
        prop_assume!(r.is_ok());
        let moved: Vec<f64> = xs.iter().map(|x| slope * x + shift).collect();
        let r2 = pearson(&moved, &ys).unwrap();
        prop_assert!((r.unwrap().r - r2.r).abs() < 1e-9);
    }

    #[test]
    fn prop_audit_values_are_non_negative(
        p in prop::collection::vec(0.01f64..1.0, 5),
        q in prop::collection::vec(0.01f64..1.0, 5),
    ) {
        let norm = |v: &[f64]| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect::<Vec<_>>() };
        let a = audit_distributions(&[set("s", vec![norm(&p)])], &[set("s", vec![norm(&q)])]).unwrap();
        prop_assert!(a.values.iter().all(|v| v.kl >= 0.0));
    }
}
