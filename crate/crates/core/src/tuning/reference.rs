//! The reference pool sampled for the drift penalty.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::desk::{DESK_BOOKS, DESK_WIKI};
use crate::error::{Error, Result};

pub const DEFAULT_POOL_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub name: String,
    pub file: PathBuf,
    pub proportion: f64,
}

/// `manifest.toml` next to the corpus files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolManifest {
    #[serde(default = "default_cap")]
    pub cap: usize,
    pub corpus: Vec<CorpusEntry>,
}

fn default_cap() -> usize {
    DEFAULT_POOL_CAP
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub proportion: f64,
    pub sentences: Vec<String>,
}

/// Sentences partitioned by corpus, each with its share of every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePool {
    pub corpora: Vec<Corpus>,
}

fn lines(src: &str) -> Vec<String> {
    src.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

impl ReferencePool {
    pub fn new(corpora: Vec<Corpus>) -> Result<Self> {
        if corpora.is_empty() {
            return Err(Error::Config("reference pool has no corpora".into()));
        }
        let total: f64 = corpora.iter().map(|c| c.proportion).sum();
        if corpora.iter().any(|c| !(c.proportion >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("corpus proportions must be non-negative and sum to 1, got {total}")));
        }
        Ok(Self { corpora })
    }

    /// The pool built into the crate: 340 encyclopedic and 160 narrative sentences.
    pub fn desk() -> Self {
        Self::new(vec![
            Corpus {
                name: "wiki".into(),
                proportion: 0.68,
                sentences: lines(DESK_WIKI),
            },
            Corpus {
                name: "books".into(),
                proportion: 0.32,
                sentences: lines(DESK_BOOKS),
            },
        ])
        .expect("desk pool is valid")
    }

    /// Reads a manifest; files are resolved relative to it and truncated to the cap.
    pub fn from_manifest(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: PoolManifest = toml::from_str(&src).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let quotas = largest_remainder(m.cap, &m.corpus.iter().map(|c| c.proportion).collect::<Vec<_>>());
        let mut corpora = Vec::new();
        for (c, quota) in m.corpus.iter().zip(quotas) {
            let file = dir.join(&c.file);
            let src = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
            let mut sentences = lines(&src);
            sentences.truncate(quota);
            corpora.push(Corpus {
                name: c.name.clone(),
                proportion: c.proportion,
                sentences,
            });
        }
        Self::new(corpora)
    }

    /// Replaces the proportions by name; every corpus must be named.
    pub fn with_mix(mut self, mix: &BTreeMap<String, f64>) -> Result<Self> {
        if mix.is_empty() {
            return Ok(self);
        }
        for c in &mut self.corpora {
            c.proportion = *mix
                .get(&c.name)
                .ok_or_else(|| Error::Config(format!("no mix proportion for corpus `{}`", c.name)))?;
        }
        if mix.len() != self.corpora.len() {
            return Err(Error::Config("mix names a corpus the pool lacks".into()));
        }
        Self::new(self.corpora)
    }

    pub fn len(&self) -> usize {
        self.corpora.iter().map(|c| c.sentences.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Integer shares of `n` proportional to `weights`, rounding by largest remainder.
///
/// Ties in the remainder go to the earlier entry.
pub fn largest_remainder(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || total <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut out: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut left = n - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

fn step_seed(seed: u64, step: u64, corpus: usize) -> u64 {
    let mut x = seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (corpus as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Draws `n` distinct sentences split across corpora by the mix.
///
/// The draw depends only on `(seed, step)`; corpora appear in pool order.
pub fn sample_reference_batch(pool: &ReferencePool, n: usize, seed: u64, step: u64) -> Result<Vec<String>> {
    let weights: Vec<f64> = pool.corpora.iter().map(|c| c.proportion).collect();
    let quotas = largest_remainder(n, &weights);
    let mut out = Vec::with_capacity(n);
    for (i, (c, q)) in pool.corpora.iter().zip(quotas).enumerate() {
        if q > c.sentences.len() {
            return Err(Error::Sampling(format!(
                "corpus `{}` holds {} sentences, {q} requested",
                c.name,
                c.sentences.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(step_seed(seed, step, i));
        let mut idx = sample(&mut rng, c.sentences.len(), q).into_vec();
        idx.sort_unstable();
        out.extend(idx.into_iter().map(|j| c.sentences[j].clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(a: usize, b: usize) -> ReferencePool {
        let mk = |name: &str, p: f64, n: usize| Corpus {
            name: name.into(),
            proportion: p,
            sentences: (0..n).map(|i| format!("{name} {i}")).collect(),
        };
        ReferencePool::new(vec![mk("wiki", 0.68, a), mk("books", 0.32, b)]).unwrap()
    }

    #[test]
    fn hundred_splits_68_32() {
        let s = sample_reference_batch(&pool(500, 500), 100, 7, 0).unwrap();
        assert_eq!(s.len(), 100);
        assert_eq!(s.iter().filter(|x| x.starts_with("wiki")).count(), 68);
        assert_eq!(s.iter().filter(|x| x.starts_with("books")).count(), 32);
    }

    #[test]
    fn keyed_by_seed_and_step() {
        let p = pool(500, 500);
        let a = sample_reference_batch(&p, 100, 7, 3).unwrap();
        assert_eq!(a, sample_reference_batch(&p, 100, 7, 3).unwrap());
        assert_ne!(a, sample_reference_batch(&p, 100, 7, 4).unwrap());
        assert_ne!(a, sample_reference_batch(&p, 100, 8, 3).unwrap());
    }

    #[test]
    fn exact_pool_is_taken_whole() {
        let p = pool(68, 32);
        let s = sample_reference_batch(&p, 100, 1, 0).unwrap();
        let mut all: Vec<String> = p.corpora.iter().flat_map(|c| c.sentences.clone()).collect();
        let mut got = s.clone();
        all.sort();
        got.sort();
        assert_eq!(got, all);
    }

    #[test]
    fn exhausted_pool() {
        assert!(matches!(
            sample_reference_batch(&pool(10, 10), 100, 1, 0),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn desk_pool_and_manifest_agree() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/reference/manifest.toml");
        let m = ReferencePool::from_manifest(&dir).unwrap();
        assert_eq!(m, ReferencePool::desk());
        assert_eq!(m.len(), 500);
    }

    #[test]
    fn remainders() {
        assert_eq!(largest_remainder(100, &[0.68, 0.32]), vec![68, 32]);
        assert_eq!(largest_remainder(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
        assert_eq!(largest_remainder(7, &[0.68, 0.32]), vec![5, 2]);
    }
}
