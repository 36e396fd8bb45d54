//! The model handle: tokenizer plus network plus run state.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use candle_core::{Device, Tensor, D};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{Network, NetworkConfig, Trainable};
use super::tokenizer::Tokenizer;
use crate::error::{Error, Result};

/// Sentences per forward pass during batched inference.
const INFERENCE_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FreezePolicy {
    NovelEmbeddingsOnly,
    AllUnfrozen,
}

impl FreezePolicy {
    pub fn trainable(self) -> Trainable {
        match self {
            FreezePolicy::NovelEmbeddingsOnly => Trainable::NovelOnly,
            FreezePolicy::AllUnfrozen => Trainable::All,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FreezePolicy::NovelEmbeddingsOnly => "novel-embeddings-only",
            FreezePolicy::AllUnfrozen => "all-unfrozen",
        }
    }
}

impl fmt::Display for FreezePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FreezePolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "novel-embeddings-only" => Ok(FreezePolicy::NovelEmbeddingsOnly),
            "all-unfrozen" => Ok(FreezePolicy::AllUnfrozen),
            other => Err(Error::Config(format!("unknown freeze policy `{other}`"))),
        }
    }
}

/// Full-vocabulary log-probabilities at requested positions of one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSet {
    pub sentence_id: String,
    pub positions: Vec<usize>,
    pub log_probs: Vec<Vec<f64>>,
}

impl DistributionSet {
    pub fn vocab_size(&self) -> Option<usize> {
        self.log_probs.first().map(Vec::len)
    }

    pub fn at(&self, position: usize) -> Option<&[f64]> {
        self.positions
            .iter()
            .position(|&p| p == position)
            .map(|i| self.log_probs[i].as_slice())
    }
}

/// Everything besides the tensors that a snapshot must carry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotState {
    pub model_id: String,
    pub state_version: u64,
    pub freeze_policy: FreezePolicy,
    pub added_tokens: Vec<String>,
    pub network: NetworkConfig,
    pub tokenizer: Tokenizer,
}

/// A full copy of a handle's parameters and state.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub hash: String,
    pub state: SnapshotState,
    tensors: BTreeMap<String, Tensor>,
}

impl Snapshot {
    fn new(state: SnapshotState, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let hash = content_hash(&state, &tensors)?;
        Ok(Self { hash, state, tensors })
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    /// Writes `<root>/<hash>/{params.safetensors,state.json}` and returns the directory.
    pub fn persist(&self, root: &Path) -> Result<PathBuf> {
        let dir = root.join(&self.hash);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let map: HashMap<String, Tensor> = self.tensors.clone().into_iter().collect();
        candle_core::safetensors::save(&map, dir.join("params.safetensors"))?;
        let state = serde_json::to_string_pretty(&self.state)?;
        let p = dir.join("state.json");
        std::fs::write(&p, state).map_err(|e| Error::io(&p, e))?;
        Ok(dir)
    }

    /// Reads a persisted snapshot and checks it against its directory name.
    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("state.json");
        let src = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let mut state: SnapshotState = serde_json::from_str(&src)?;
        state.tokenizer.rebuild_indices()?;
        let tensors: BTreeMap<String, Tensor> =
            candle_core::safetensors::load(dir.join("params.safetensors"), &Device::Cpu)?
                .into_iter()
                .collect();
        let snap = Self::new(state, tensors)?;
        let expected = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if snap.hash != expected {
            return Err(Error::Integrity {
                path: dir.to_path_buf(),
                expected: expected.to_string(),
                found: snap.hash,
            });
        }
        Ok(snap)
    }
}

fn content_hash(state: &SnapshotState, tensors: &BTreeMap<String, Tensor>) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&(
        &state.model_id,
        state.state_version,
        state.freeze_policy,
        &state.added_tokens,
        &state.network,
    ))?);
    for (name, t) in tensors {
        h.update(name.as_bytes());
        for d in t.dims() {
            h.update((*d as u64).to_le_bytes());
        }
        for x in t.flatten_all()?.to_vec1::<f32>()? {
            h.update(x.to_le_bytes());
        }
    }
    Ok(hex::encode(h.finalize()))
}

/// A masked language model with its tokenizer and mutable run state.
pub struct ModelHandle {
    model_id: String,
    tokenizer: Tokenizer,
    network: Network,
    freeze: FreezePolicy,
    state_version: u64,
    baseline: Arc<Snapshot>,
}

impl ModelHandle {
    /// Wraps a freshly loaded checkpoint and records its baseline snapshot.
    pub fn new(model_id: impl Into<String>, tokenizer: Tokenizer, network: Network) -> Result<Self> {
        if tokenizer.vocab_size() != network.total_vocab() {
            return Err(Error::Shape(format!(
                "tokenizer has {} entries, network {}",
                tokenizer.vocab_size(),
                network.total_vocab()
            )));
        }
        let model_id = model_id.into();
        let freeze = FreezePolicy::NovelEmbeddingsOnly;
        let baseline = Arc::new(capture(&model_id, 0, freeze, &tokenizer, &network)?);
        Ok(Self {
            model_id,
            tokenizer,
            network,
            freeze,
            state_version: 0,
            baseline,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn vocab_size(&self) -> usize {
        self.tokenizer.vocab_size()
    }

    /// Size of the vocabulary before any token was added.
    pub fn original_vocab_size(&self) -> usize {
        self.network.config().vocab_size
    }

    pub fn added_tokens(&self) -> &[u32] {
        self.tokenizer.added_ids()
    }

    pub fn added_token_strings(&self) -> Vec<String> {
        self.tokenizer.render(self.tokenizer.added_ids())
    }

    pub fn state_version(&self) -> u64 {
        self.state_version
    }

    /// Records a parameter mutation made through [`Self::network`] vars.
    pub fn touch(&mut self) {
        self.state_version += 1;
    }

    pub fn freeze_policy(&self) -> FreezePolicy {
        self.freeze
    }

    pub fn set_freeze_policy(&mut self, policy: FreezePolicy) {
        self.freeze = policy;
    }

    /// The snapshot taken at load time.
    pub fn baseline(&self) -> &Snapshot {
        &self.baseline
    }

    /// The tokenizer as it was at load time, without added tokens.
    pub fn pristine_tokenizer(&self) -> &Tokenizer {
        &self.baseline.state.tokenizer
    }

    /// Independent copy with its own parameters; shares the baseline record.
    pub fn fork(&self) -> Result<Self> {
        Ok(Self {
            model_id: self.model_id.clone(),
            tokenizer: self.tokenizer.clone(),
            network: self.network.deep_clone()?,
            freeze: self.freeze,
            state_version: self.state_version,
            baseline: self.baseline.clone(),
        })
    }

    /// Registers novel tokens, one fresh id each, in list order.
    ///
    /// New rows start at the mean input embedding until initialized.
    pub fn add_tokens<S: AsRef<str>>(&mut self, tokens: &[S]) -> Result<Vec<u32>> {
        // validate everything before mutating anything
        let mut probe = self.tokenizer.clone();
        for t in tokens {
            probe.add_token(t.as_ref())?;
        }
        let rows = self.network.embedding_rows()?;
        let d = self.network.config().hidden_size;
        let mut mean = vec![0f32; d];
        for r in &rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x / rows.len() as f32;
            }
        }
        let mut ids = Vec::with_capacity(tokens.len());
        for t in tokens {
            ids.push(self.tokenizer.add_token(t.as_ref())?);
            self.network.push_novel_row(&mean)?;
        }
        self.touch();
        Ok(ids)
    }

    pub fn token_id(&self, token: &str) -> Result<u32> {
        self.tokenizer
            .token_to_id(&self.tokenizer.normalize(token))
            .ok_or_else(|| Error::MissingToken(token.to_string()))
    }

    /// Overwrites the input embedding of an added token.
    pub fn set_novel_embedding(&mut self, token: &str, row: &[f32]) -> Result<()> {
        let id = self.token_id(token)?;
        let index = self
            .tokenizer
            .added_ids()
            .iter()
            .position(|&a| a == id)
            .ok_or_else(|| Error::MissingToken(token.to_string()))?;
        self.network.set_novel_row(index, row)?;
        self.touch();
        Ok(())
    }

    /// Overwrites parameters in place (same names and shapes) and bumps the version.
    pub fn load_parameters(&mut self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        self.network.load_tensors(tensors)?;
        self.touch();
        Ok(())
    }

    /// A detached copy of the baseline network, without added rows.
    pub fn baseline_network(&self) -> Result<Network> {
        let copies = self
            .baseline
            .tensors
            .iter()
            .map(|(k, t)| Ok((k.clone(), t.copy()?)))
            .collect::<Result<_>>()?;
        Network::from_tensors(self.baseline.state.network.clone(), copies)
    }

    /// Input embedding rows of the whole vocabulary.
    pub fn embeddings(&self) -> Result<Vec<Vec<f32>>> {
        self.network.embedding_rows()
    }

    /// Token ids of `text` with the model's sentence delimiters.
    pub fn encode(&self, text: &str) -> Result<super::tokenizer::Encoding> {
        self.tokenizer.encode(text, true)
    }

    pub fn snapshot(&self) -> Result<Snapshot> {
        capture(&self.model_id, self.state_version, self.freeze, &self.tokenizer, &self.network)
    }

    /// Returns parameters, vocabulary, policy and version to `snap`.
    pub fn restore(&mut self, snap: &Snapshot) -> Result<()> {
        if snap.state.model_id != self.model_id {
            return Err(Error::Shape(format!(
                "snapshot of `{}` cannot restore `{}`",
                snap.state.model_id, self.model_id
            )));
        }
        let same_layout = self.network.tensors()?.iter().all(|(k, t)| {
            snap.tensors.get(k).map(|s| s.dims() == t.dims()).unwrap_or(false)
        }) && self.network.param_names().count() == snap.tensors.len();
        if same_layout {
            self.network.load_tensors(&snap.tensors)?;
        } else {
            let copies = snap
                .tensors
                .iter()
                .map(|(k, t)| Ok((k.clone(), t.copy()?)))
                .collect::<Result<_>>()?;
            self.network = Network::from_tensors(snap.state.network.clone(), copies)?;
        }
        self.tokenizer = snap.state.tokenizer.clone();
        self.freeze = snap.state.freeze_policy;
        self.state_version = snap.state.state_version;
        Ok(())
    }

    /// Log-softmax rows `(n, V)` at `(sentence, position)` picks of a batch.
    pub fn log_probs_tensor(&self, batch: &[Vec<u32>], picks: &[(usize, usize)]) -> Result<Tensor> {
        for &(r, p) in picks {
            let len = batch.get(r).map(Vec::len).unwrap_or(0);
            if p >= len {
                return Err(Error::Bounds { index: p, len });
            }
        }
        let hidden = self.network.encode(batch, self.tokenizer.pad_id(), None, None)?;
        let sel = self.network.gather_positions(&hidden, picks)?;
        let logits = self.network.head(&sel, None)?;
        Ok(candle_nn::ops::log_softmax(&logits, D::Minus1)?)
    }

    /// Full-vocabulary log-probabilities, one row per pick, in pick order.
    ///
    /// Runs in chunks of sentences; the result does not depend on chunking.
    pub fn log_probs(&self, batch: &[Vec<u32>], picks: &[(usize, usize)]) -> Result<Vec<Vec<f32>>> {
        self.chunked(batch, picks, |t| Ok(t.to_vec2::<f32>()?))
    }

    /// Log-probabilities of `candidates` only, one row per pick.
    pub fn candidate_log_probs(
        &self,
        batch: &[Vec<u32>],
        picks: &[(usize, usize)],
        candidates: &[u32],
    ) -> Result<Vec<Vec<f64>>> {
        let v = self.vocab_size() as u32;
        if let Some(&c) = candidates.iter().find(|&&c| c >= v) {
            return Err(Error::Bounds {
                index: c as usize,
                len: v as usize,
            });
        }
        let idx = Tensor::from_vec(candidates.to_vec(), candidates.len(), self.network.device())?;
        let rows = self.chunked(batch, picks, |t| Ok(t.index_select(&idx, 1)?.to_vec2::<f32>()?))?;
        Ok(rows
            .into_iter()
            .map(|r| r.into_iter().map(f64::from).collect())
            .collect())
    }

    fn chunked<F>(&self, batch: &[Vec<u32>], picks: &[(usize, usize)], f: F) -> Result<Vec<Vec<f32>>>
    where
        F: Fn(&Tensor) -> Result<Vec<Vec<f32>>>,
    {
        let mut out: Vec<Option<Vec<f32>>> = vec![None; picks.len()];
        for start in (0..batch.len()).step_by(INFERENCE_CHUNK) {
            let end = (start + INFERENCE_CHUNK).min(batch.len());
            let (order, local): (Vec<usize>, Vec<(usize, usize)>) = picks
                .iter()
                .enumerate()
                .filter(|(_, (r, _))| (start..end).contains(r))
                .map(|(i, &(r, p))| (i, (r - start, p)))
                .unzip();
            if local.is_empty() {
                continue;
            }
            let rows = f(&self.log_probs_tensor(&batch[start..end], &local)?)?;
            for (i, row) in order.into_iter().zip(rows) {
                out[i] = Some(row);
            }
        }
        out.into_iter()
            .enumerate()
            .map(|(i, r)| {
                r.ok_or(Error::Bounds {
                    index: picks[i].0,
                    len: batch.len(),
                })
            })
            .collect()
    }

    /// Masks `positions` of `ids` and returns a distribution per position.
    pub fn predict_ids(&self, sentence_id: &str, ids: &[u32], positions: &[usize]) -> Result<DistributionSet> {
        let mut masked = ids.to_vec();
        for &p in positions {
            if p >= masked.len() {
                return Err(Error::Bounds {
                    index: p,
                    len: masked.len(),
                });
            }
            masked[p] = self.tokenizer.mask_id();
        }
        let picks: Vec<_> = positions.iter().map(|&p| (0, p)).collect();
        let rows = self.log_probs(&[masked], &picks)?;
        Ok(DistributionSet {
            sentence_id: sentence_id.to_string(),
            positions: positions.to_vec(),
            log_probs: rows
                .into_iter()
                .map(|r| r.into_iter().map(f64::from).collect())
                .collect(),
        })
    }

    /// Tokenizes `sentence` (with delimiters) and predicts at the masked positions.
    pub fn predict_distributions(
        &self,
        sentence_id: &str,
        sentence: &str,
        mask_positions: &[usize],
    ) -> Result<DistributionSet> {
        let enc = self.encode(sentence)?;
        self.predict_ids(sentence_id, &enc.ids, mask_positions)
    }

    /// Positions of `ids` that hold ordinary (non-delimiter) tokens.
    pub fn content_positions(&self, ids: &[u32]) -> Vec<usize> {
        (0..ids.len()).filter(|&i| !self.tokenizer.is_special(ids[i])).collect()
    }
}

fn capture(
    model_id: &str,
    state_version: u64,
    freeze_policy: FreezePolicy,
    tokenizer: &Tokenizer,
    network: &Network,
) -> Result<Snapshot> {
    Snapshot::new(
        SnapshotState {
            model_id: model_id.to_string(),
            state_version,
            freeze_policy,
            added_tokens: tokenizer.render(tokenizer.added_ids()),
            network: network.config().clone(),
            tokenizer: tokenizer.clone(),
        },
        network.tensors()?,
    )
}
