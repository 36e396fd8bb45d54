//! Resolving model ids to handles.
//!
//! Three kinds of id are understood:
//! `builtin:<family>[#variant]` for the desk models, a directory written by
//! [`save_checkpoint`] (manifest plus checksummed safetensors), and a
//! Hugging Face style directory holding `config.json`, the tokenizer files
//! and `model.safetensors` for BERT, DistilBERT or RoBERTa masked LMs.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::desk::load_builtin;
use super::handle::ModelHandle;
use super::network::{Network, NetworkConfig, OUTPUT_BIAS, WORD_EMBEDDINGS};
use super::tokenizer::{SpecialTokens, Tokenizer, TokenizerKind};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "argprobe-model.json";
const PARAMS: &str = "params.safetensors";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointManifest {
    model_id: String,
    network: NetworkConfig,
    tokenizer: Tokenizer,
    /// Hex sha256 of the parameter file.
    sha256: String,
}

/// Loads a model and records its baseline snapshot.
pub fn load_baseline(model_id: &str) -> Result<ModelHandle> {
    if model_id.starts_with("builtin:") {
        return load_builtin(model_id);
    }
    let dir = PathBuf::from(model_id);
    if dir.join(MANIFEST).is_file() {
        load_checkpoint(&dir)
    } else if dir.join("config.json").is_file() {
        load_hf(&dir)
    } else {
        Err(Error::Load(
            model_id.into(),
            "neither a builtin id nor a checkpoint directory".into(),
        ))
    }
}

/// Cheap availability check: a valid builtin id or a checkpoint directory.
pub fn is_resolvable(model_id: &str) -> bool {
    if model_id.starts_with("builtin:") {
        return super::desk::is_builtin(model_id);
    }
    let dir = Path::new(model_id);
    dir.join(MANIFEST).is_file() || dir.join("config.json").is_file()
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes the handle's current parameters and vocabulary as a checkpoint.
///
/// Novel rows are folded into the base vocabulary, so the saved model
/// loads as an ordinary checkpoint with no added tokens.
pub fn save_checkpoint(handle: &ModelHandle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let net = handle.network();
    let mut tensors = net.tensors()?;
    let mut config = net.config().clone();
    if let (Some(emb), Some(bias)) = (
        tensors.remove(super::network::NOVEL_EMBEDDINGS),
        tensors.remove(super::network::NOVEL_BIAS),
    ) {
        let w = Tensor::cat(&[&tensors[WORD_EMBEDDINGS], &emb], 0)?;
        let b = Tensor::cat(&[&tensors[OUTPUT_BIAS], &bias], 0)?;
        config.vocab_size = w.dims()[0];
        tensors.insert(WORD_EMBEDDINGS.into(), w);
        tensors.insert(OUTPUT_BIAS.into(), b);
    }
    let mut tokenizer = Tokenizer::new(
        handle.tokenizer().kind(),
        handle.tokenizer().lowercase(),
        handle.tokenizer().tokens().to_vec(),
        handle.tokenizer().merges().to_vec(),
        handle.tokenizer().special().clone(),
    )?;
    tokenizer.rebuild_indices()?;
    let params = dir.join(PARAMS);
    let map: HashMap<String, Tensor> = tensors.into_iter().collect();
    candle_core::safetensors::save(&map, &params)?;
    let manifest = CheckpointManifest {
        model_id: handle.model_id().to_string(),
        network: config,
        tokenizer,
        sha256: sha256_file(&params)?,
    };
    let p = dir.join(MANIFEST);
    std::fs::write(&p, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&p, e))
}

fn load_checkpoint(dir: &Path) -> Result<ModelHandle> {
    let p = dir.join(MANIFEST);
    let src = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let mut m: CheckpointManifest = serde_json::from_str(&src)?;
    let params = dir.join(PARAMS);
    let found = sha256_file(&params)?;
    if found != m.sha256 {
        return Err(Error::Integrity {
            path: params,
            expected: m.sha256,
            found,
        });
    }
    m.tokenizer.rebuild_indices()?;
    let tensors: BTreeMap<String, Tensor> = candle_core::safetensors::load(&params, &Device::Cpu)?
        .into_iter()
        .collect();
    let network = Network::from_tensors(m.network, tensors)?;
    ModelHandle::new(dir.to_string_lossy(), m.tokenizer, network)
}

#[derive(Debug, Deserialize)]
struct HfConfig {
    model_type: String,
    vocab_size: usize,
    #[serde(alias = "dim")]
    hidden_size: usize,
    #[serde(alias = "n_layers")]
    num_hidden_layers: usize,
    #[serde(alias = "n_heads")]
    num_attention_heads: usize,
    #[serde(alias = "hidden_dim")]
    intermediate_size: usize,
    max_position_embeddings: usize,
    #[serde(default)]
    type_vocab_size: Option<usize>,
    #[serde(default)]
    layer_norm_eps: Option<f64>,
    #[serde(default)]
    hidden_dropout_prob: Option<f64>,
    #[serde(default)]
    dropout: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
struct HfTokenizerConfig {
    #[serde(default)]
    do_lower_case: Option<bool>,
}

/// Parameter-name prefixes of one checkpoint family.
struct Names {
    word: &'static str,
    position: &'static str,
    token_type: Option<&'static str>,
    emb_ln: &'static str,
    layer: &'static str,
    q: &'static str,
    k: &'static str,
    v: &'static str,
    attn_out: &'static str,
    attn_ln: &'static str,
    inter: &'static str,
    out: &'static str,
    out_ln: &'static str,
    transform: &'static str,
    head_ln: &'static str,
    bias: &'static str,
}

const BERT: Names = Names {
    word: "bert.embeddings.word_embeddings",
    position: "bert.embeddings.position_embeddings",
    token_type: Some("bert.embeddings.token_type_embeddings"),
    emb_ln: "bert.embeddings.LayerNorm",
    layer: "bert.encoder.layer",
    q: "attention.self.query",
    k: "attention.self.key",
    v: "attention.self.value",
    attn_out: "attention.output.dense",
    attn_ln: "attention.output.LayerNorm",
    inter: "intermediate.dense",
    out: "output.dense",
    out_ln: "output.LayerNorm",
    transform: "cls.predictions.transform.dense",
    head_ln: "cls.predictions.transform.LayerNorm",
    bias: "cls.predictions.bias",
};

const ROBERTA: Names = Names {
    word: "roberta.embeddings.word_embeddings",
    position: "roberta.embeddings.position_embeddings",
    token_type: Some("roberta.embeddings.token_type_embeddings"),
    emb_ln: "roberta.embeddings.LayerNorm",
    layer: "roberta.encoder.layer",
    transform: "lm_head.dense",
    head_ln: "lm_head.layer_norm",
    bias: "lm_head.bias",
    ..BERT
};

const DISTILBERT: Names = Names {
    word: "distilbert.embeddings.word_embeddings",
    position: "distilbert.embeddings.position_embeddings",
    token_type: None,
    emb_ln: "distilbert.embeddings.LayerNorm",
    layer: "distilbert.transformer.layer",
    q: "attention.q_lin",
    k: "attention.k_lin",
    v: "attention.v_lin",
    attn_out: "attention.out_lin",
    attn_ln: "sa_layer_norm",
    inter: "ffn.lin1",
    out: "ffn.lin2",
    out_ln: "output_layer_norm",
    transform: "vocab_transform",
    head_ln: "vocab_layer_norm",
    bias: "vocab_projector.bias",
};

fn load_hf(dir: &Path) -> Result<ModelHandle> {
    let id = dir.to_string_lossy().to_string();
    let read = |name: &str| -> Result<String> {
        let p = dir.join(name);
        std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    };
    let cfg: HfConfig = serde_json::from_str(&read("config.json")?)?;
    let (names, position_offset) = match cfg.model_type.as_str() {
        "bert" => (&BERT, 0),
        "roberta" => (&ROBERTA, 2),
        "distilbert" => (&DISTILBERT, 0),
        other => return Err(Error::Load(id, format!("unsupported model type `{other}`"))),
    };
    let tokenizer = match cfg.model_type.as_str() {
        "roberta" => {
            let vocab: BTreeMap<String, u32> = serde_json::from_str(&read("vocab.json")?)?;
            let mut tokens = vec![String::new(); vocab.len()];
            for (t, i) in vocab {
                let slot = tokens
                    .get_mut(i as usize)
                    .ok_or_else(|| Error::Load(id.clone(), "vocabulary ids are not dense".into()))?;
                *slot = t;
            }
            let merges = read("merges.txt")?
                .lines()
                .filter(|l| !l.starts_with("#version") && !l.trim().is_empty())
                .filter_map(|l| l.split_once(' ').map(|(a, b)| (a.to_string(), b.to_string())))
                .collect();
            Tokenizer::new(TokenizerKind::BytePair, false, tokens, merges, SpecialTokens::roberta())?
        }
        _ => {
            let tc: HfTokenizerConfig = read("tokenizer_config.json")
                .ok()
                .and_then(|s| serde_json::from_str(&s).ok())
                .unwrap_or_default();
            let tokens = read("vocab.txt")?.lines().map(str::to_string).collect();
            Tokenizer::new(
                TokenizerKind::WordPiece,
                tc.do_lower_case.unwrap_or(true),
                tokens,
                vec![],
                SpecialTokens::bert(),
            )?
        }
    };
    let raw = candle_core::safetensors::load(dir.join("model.safetensors"), &Device::Cpu)?;
    let get = |name: &str| -> Result<Tensor> {
        let alt = name
            .replace("LayerNorm.weight", "LayerNorm.gamma")
            .replace("LayerNorm.bias", "LayerNorm.beta");
        let t = raw
            .get(name)
            .or_else(|| raw.get(&alt))
            .or_else(|| name.split_once('.').and_then(|(_, rest)| raw.get(rest)))
            .ok_or_else(|| Error::Load(id.clone(), format!("missing tensor `{name}`")))?;
        Ok(t.to_dtype(DType::F32)?)
    };
    let mut t = BTreeMap::new();
    let linear = |t: &mut BTreeMap<String, Tensor>, src: &str, dst: &str| -> Result<()> {
        t.insert(format!("{dst}.weight"), get(&format!("{src}.weight"))?);
        t.insert(format!("{dst}.bias"), get(&format!("{src}.bias"))?);
        Ok(())
    };
    t.insert(WORD_EMBEDDINGS.to_string(), get(&format!("{}.weight", names.word))?);
    t.insert("embeddings.position".into(), get(&format!("{}.weight", names.position))?);
    let type_vocab = match names.token_type {
        Some(tt) => {
            let w = get(&format!("{tt}.weight"))?;
            let n = w.dims()[0];
            t.insert("embeddings.token_type".into(), w);
            n
        }
        None => {
            t.insert(
                "embeddings.token_type".into(),
                Tensor::zeros((1, cfg.hidden_size), DType::F32, &Device::Cpu)?,
            );
            1
        }
    };
    linear(&mut t, names.emb_ln, "embeddings.ln")?;
    for l in 0..cfg.num_hidden_layers {
        let src = format!("{}.{l}", names.layer);
        let dst = format!("layer.{l}");
        linear(&mut t, &format!("{src}.{}", names.q), &format!("{dst}.attention.query"))?;
        linear(&mut t, &format!("{src}.{}", names.k), &format!("{dst}.attention.key"))?;
        linear(&mut t, &format!("{src}.{}", names.v), &format!("{dst}.attention.value"))?;
        linear(&mut t, &format!("{src}.{}", names.attn_out), &format!("{dst}.attention.output"))?;
        linear(&mut t, &format!("{src}.{}", names.attn_ln), &format!("{dst}.attention.ln"))?;
        linear(&mut t, &format!("{src}.{}", names.inter), &format!("{dst}.ffn.inter"))?;
        linear(&mut t, &format!("{src}.{}", names.out), &format!("{dst}.ffn.output"))?;
        linear(&mut t, &format!("{src}.{}", names.out_ln), &format!("{dst}.ffn.ln"))?;
    }
    linear(&mut t, names.transform, "head.transform")?;
    linear(&mut t, names.head_ln, "head.ln")?;
    t.insert(OUTPUT_BIAS.into(), get(names.bias)?);
    let config = NetworkConfig {
        vocab_size: cfg.vocab_size,
        hidden_size: cfg.hidden_size,
        num_layers: cfg.num_hidden_layers,
        num_heads: cfg.num_attention_heads,
        intermediate_size: cfg.intermediate_size,
        max_positions: cfg.max_position_embeddings,
        type_vocab_size: cfg.type_vocab_size.unwrap_or(type_vocab).max(type_vocab),
        layer_norm_eps: cfg.layer_norm_eps.unwrap_or(1e-12),
        dropout: cfg.hidden_dropout_prob.or(cfg.dropout).unwrap_or(0.1),
        position_offset,
    };
    if tokenizer.vocab_size() != config.vocab_size {
        return Err(Error::Load(
            id,
            format!("tokenizer has {} entries, model {}", tokenizer.vocab_size(), config.vocab_size),
        ));
    }
    let network = Network::from_tensors(config, t)?;
    ModelHandle::new(id, tokenizer, network)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_ids_fail_to_load() {
        assert!(matches!(load_baseline("/nonexistent/model"), Err(Error::Load(..))));
    }

    #[test]
    fn checkpoint_round_trip_and_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let h = load_baseline("builtin:tiny-wordpiece").unwrap();
        save_checkpoint(&h, dir.path()).unwrap();
        let back = load_baseline(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(back.vocab_size(), h.vocab_size());
        let a = h.predict_distributions("p", "the man sprayed the door .", &[2]).unwrap();
        let b = back.predict_distributions("p", "the man sprayed the door .", &[2]).unwrap();
        assert_eq!(a.log_probs, b.log_probs);
        // corrupt the parameter file
        let p = dir.path().join(PARAMS);
        let mut bytes = std::fs::read(&p).unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 0xff;
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(load_baseline(dir.path().to_str().unwrap()), Err(Error::Integrity { .. })));
    }
}
