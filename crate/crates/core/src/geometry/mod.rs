//! Embedding geometry and distribution drift: all-but-the-top correction,
//! cosine profiles against noun groups, the two-PP correlation probe and
//! KL audits against the baseline model.

pub mod drift;
pub mod probe;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::backend::ModelHandle;
use crate::error::{Error, Result};
use crate::eval::breakdown::mean_and_se;

pub use drift::{audit_distributions, kl_audit, DriftAudit, PositionDrift};
pub use probe::{baseline_correlation_probe, pearson, Correlation, CorrelationReport, ProbePoint};

/// Pre-contextual embedding rows keyed by token id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub ids: Vec<u32>,
    pub rows: Vec<Vec<f64>>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<u32>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::Shape(format!("{} ids for {} rows", ids.len(), rows.len())));
        }
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("embedding rows differ in length".into()));
        }
        if rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Shape("embedding has non-finite entries".into()));
        }
        Ok(Self { ids, rows })
    }

    /// Every input embedding row of the handle, novel rows included.
    pub fn from_handle(handle: &ModelHandle) -> Result<Self> {
        let rows: Vec<Vec<f64>> = handle
            .embeddings()?
            .into_iter()
            .map(|r| r.into_iter().map(f64::from).collect())
            .collect();
        Self::new((0..rows.len() as u32).collect(), rows)
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map(Vec::len).unwrap_or(0)
    }

    pub fn row(&self, id: u32) -> Option<&[f64]> {
        self.ids.iter().position(|&i| i == id).map(|k| self.rows[k].as_slice())
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), self.dim(), |i, j| self.rows[i][j])
    }
}

fn column_means(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows().max(1) as f64;
    (0..m.ncols()).map(|j| m.column(j).sum() / n).collect()
}

/// Principal directions of the centered rows, largest variance first.
///
/// Each direction's largest-magnitude entry is made positive.
pub fn principal_directions(e: &EmbeddingMatrix, d: usize) -> Result<Vec<Vec<f64>>> {
    let dim = e.dim();
    if d >= dim {
        return Err(Error::Parameter(format!("cannot remove {d} directions from {dim} dimensions")));
    }
    let mut m = e.matrix();
    let mu = column_means(&m);
    for mut row in m.row_iter_mut() {
        for (j, x) in row.iter_mut().enumerate() {
            *x -= mu[j];
        }
    }
    let cov = m.transpose() * &m / (m.nrows().max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    Ok(order[..d]
        .iter()
        .map(|&k| {
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let big = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
            if big < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect())
}

/// Mean removal plus projection onto the complement of fitted directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopDirections {
    pub directions: Vec<Vec<f64>>,
}

impl TopDirections {
    pub fn fit(e: &EmbeddingMatrix, d: usize) -> Result<Self> {
        Ok(Self {
            directions: principal_directions(e, d)?,
        })
    }

    /// Centers `e` on its own mean and removes the fitted components.
    pub fn apply(&self, e: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        let dim = e.dim();
        if self.directions.iter().any(|u| u.len() != dim) {
            return Err(Error::Shape("direction and row dimensions differ".into()));
        }
        let m = e.matrix();
        let mu = column_means(&m);
        let rows = e
            .rows
            .iter()
            .map(|r| {
                let mut x: Vec<f64> = r.iter().zip(&mu).map(|(a, b)| a - b).collect();
                for u in &self.directions {
                    let dot: f64 = x.iter().zip(u).map(|(a, b)| a * b).sum();
                    x.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
                }
                x
            })
            .collect();
        EmbeddingMatrix::new(e.ids.clone(), rows)
    }
}

/// Mean-centers the rows and removes their top `d` principal components.
pub fn all_but_the_top(e: &EmbeddingMatrix, d: usize) -> Result<EmbeddingMatrix> {
    TopDirections::fit(e, d)?.apply(e)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Undefined("cosine similarity with a zero vector".into()));
    }
    Ok(dot / (na * nb))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupLabel {
    /// Mass nouns, theme-like.
    Mass,
    /// Count nouns, goal-like.
    Count,
    Custom(String),
}

impl GroupLabel {
    pub fn name(&self) -> &str {
        match self {
            GroupLabel::Mass => "mass",
            GroupLabel::Count => "count",
            GroupLabel::Custom(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NounGroup {
    pub label: GroupLabel,
    /// `(word, token id)` pairs.
    pub members: Vec<(String, u32)>,
}

impl NounGroup {
    /// Resolves words to single-token ids; words that split are an error.
    pub fn resolve(label: GroupLabel, words: &[String], handle: &ModelHandle) -> Result<Self> {
        let members = words
            .iter()
            .map(|w| {
                crate::lexicon::single_token_id(handle.tokenizer(), w)
                    .map(|id| (w.clone(), id))
                    .ok_or_else(|| Error::MissingToken(w.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        if members.is_empty() {
            return Err(Error::Config(format!("noun group `{}` is empty", label.name())));
        }
        Ok(Self { label, members })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSimilarity {
    pub novel: String,
    pub group: String,
    pub similarities: Vec<(String, f64)>,
    /// Members whose similarity is undefined (zero vectors).
    pub undefined: Vec<String>,
    pub mean: f64,
    pub std_err: f64,
}

/// Cosine similarity of every group member to each novel token.
pub fn cosine_profile(
    corrected: &EmbeddingMatrix,
    novel: &[(String, u32)],
    groups: &[NounGroup],
) -> Result<Vec<GroupSimilarity>> {
    let mut out = Vec::new();
    for (name, id) in novel {
        let v = corrected
            .row(*id)
            .ok_or_else(|| Error::MissingToken(name.clone()))?;
        for g in groups {
            let mut sims = Vec::new();
            let mut undefined = Vec::new();
            for (w, mid) in &g.members {
                let row = corrected.row(*mid).ok_or_else(|| Error::MissingToken(w.clone()))?;
                match cosine(v, row) {
                    Ok(c) => sims.push((w.clone(), c)),
                    Err(Error::Undefined(_)) => undefined.push(w.clone()),
                    Err(e) => return Err(e),
                }
            }
            let xs: Vec<f64> = sims.iter().map(|s| s.1).collect();
            let (mean, std_err) = mean_and_se(&xs);
            out.push(GroupSimilarity {
                novel: name.clone(),
                group: g.label.name().to_string(),
                similarities: sims,
                undefined,
                mean,
                std_err,
            });
        }
    }
    Ok(out)
}

/// Per (novel token, group) mean and standard error of run-level means.
pub fn aggregate_profiles(runs: &[Vec<GroupSimilarity>]) -> Vec<(String, String, f64, f64, usize)> {
    let mut acc: std::collections::BTreeMap<(String, String), Vec<f64>> = Default::default();
    for run in runs {
        for g in run {
            if g.mean.is_finite() {
                acc.entry((g.novel.clone(), g.group.clone())).or_default().push(g.mean);
            }
        }
    }
    acc.into_iter()
        .map(|((n, g), xs)| {
            let (m, se) = mean_and_se(&xs);
            (n, g, m, se, xs.len())
        })
        .collect()
}
