//! BERT-style masked language model built on candle tensors.
//!
//! Post-LayerNorm encoder blocks, GELU feed-forward, a prediction head whose
//! decoder matrix is tied to the input embeddings. Rows for added tokens live
//! in their own variables (`embeddings.novel`, `head.novel_bias`) so that the
//! novel-embeddings-only policy can train them without touching the rest.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NOVEL_EMBEDDINGS: &str = "embeddings.novel";
pub const NOVEL_BIAS: &str = "head.novel_bias";
pub const WORD_EMBEDDINGS: &str = "embeddings.word";
pub const OUTPUT_BIAS: &str = "head.bias";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub intermediate_size: usize,
    pub max_positions: usize,
    #[serde(default = "default_type_vocab")]
    pub type_vocab_size: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// First position-embedding row used (2 for RoBERTa checkpoints).
    #[serde(default)]
    pub position_offset: usize,
}

fn default_type_vocab() -> usize {
    2
}
fn default_eps() -> f64 {
    1e-12
}
fn default_dropout() -> f64 {
    0.1
}

impl NetworkConfig {
    /// Two layers, hidden size 32: small enough for CPU tests.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden_size: 32,
            num_layers: 2,
            num_heads: 2,
            intermediate_size: 64,
            max_positions: 64,
            type_vocab_size: 2,
            layer_norm_eps: 1e-12,
            dropout: 0.1,
            position_offset: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden_size, self.num_heads
            )));
        }
        if self.vocab_size == 0 || self.num_layers == 0 || self.max_positions == 0 {
            return Err(Error::Config("empty network dimension".into()));
        }
        Ok(())
    }
}

/// Which variables receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainable {
    NovelOnly,
    All,
}

pub struct Network {
    config: NetworkConfig,
    params: BTreeMap<String, Var>,
    device: Device,
}

impl Network {
    /// Fresh network with BERT's initializer: N(0, 0.02) weights, zero biases, unit norms.
    pub fn random(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let device = Device::Cpu;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, 0.02).expect("valid normal");
        let mut params = BTreeMap::new();
        for (name, shape, kind) in layout(&config) {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = match kind {
                Init::Normal => (0..n).map(|_| normal.sample(&mut rng)).collect(),
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
            };
            let t = Tensor::from_vec(data, shape, &device)?;
            params.insert(name, Var::from_tensor(&t)?);
        }
        Ok(Self {
            config,
            params,
            device,
        })
    }

    /// Builds a network from named tensors, checking every expected shape.
    pub fn from_tensors(config: NetworkConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let mut params = BTreeMap::new();
        for (name, shape, _) in layout(&config) {
            let t = tensors
                .get(&name)
                .ok_or_else(|| Error::Load(name.clone(), "missing tensor".into()))?;
            if t.dims() != shape.as_slice() {
                return Err(Error::Shape(format!("{name}: expected {shape:?}, found {:?}", t.dims())));
            }
            params.insert(name, Var::from_tensor(&t.to_dtype(DType::F32)?)?);
        }
        for extra in [NOVEL_EMBEDDINGS, NOVEL_BIAS] {
            if let Some(t) = tensors.get(extra) {
                params.insert(extra.to_string(), Var::from_tensor(&t.to_dtype(DType::F32)?)?);
            }
        }
        Ok(Self {
            config,
            params,
            device: Device::Cpu,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn novel_count(&self) -> usize {
        self.params
            .get(NOVEL_EMBEDDINGS)
            .map(|v| v.dims()[0])
            .unwrap_or(0)
    }

    pub fn total_vocab(&self) -> usize {
        self.config.vocab_size + self.novel_count()
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.params.get(name)
    }

    /// Deep copies of every parameter.
    pub fn tensors(&self) -> Result<BTreeMap<String, Tensor>> {
        self.params
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    /// Overwrites parameters in place; the name set and shapes must match.
    pub fn load_tensors(&mut self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let have: Vec<&String> = self.params.keys().collect();
        let want: Vec<&String> = tensors.keys().collect();
        if have != want {
            return Err(Error::Shape(format!(
                "parameter sets differ: {} vs {} entries",
                have.len(),
                want.len()
            )));
        }
        for (name, var) in &self.params {
            let src = &tensors[name];
            if src.dims() != var.dims() {
                return Err(Error::Shape(format!("{name}: {:?} vs {:?}", var.dims(), src.dims())));
            }
            var.set(src)?;
        }
        Ok(())
    }

    pub fn deep_clone(&self) -> Result<Self> {
        let params = self
            .params
            .iter()
            .map(|(k, v)| Ok((k.clone(), Var::from_tensor(&v.as_tensor().copy()?)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            config: self.config.clone(),
            params,
            device: self.device.clone(),
        })
    }

    /// Appends one embedding row (and a zero output bias) for a new token.
    pub fn push_novel_row(&mut self, row: &[f32]) -> Result<()> {
        let d = self.config.hidden_size;
        if row.len() != d {
            return Err(Error::Shape(format!("embedding row has {} entries, expected {d}", row.len())));
        }
        let new_row = Tensor::from_vec(row.to_vec(), (1, d), &self.device)?;
        let zero = Tensor::zeros(1, DType::F32, &self.device)?;
        let emb = match self.params.get(NOVEL_EMBEDDINGS) {
            Some(v) => Tensor::cat(&[v.as_tensor(), &new_row], 0)?,
            None => new_row,
        };
        let bias = match self.params.get(NOVEL_BIAS) {
            Some(v) => Tensor::cat(&[v.as_tensor(), &zero], 0)?,
            None => zero,
        };
        self.params.insert(NOVEL_EMBEDDINGS.into(), Var::from_tensor(&emb)?);
        self.params.insert(NOVEL_BIAS.into(), Var::from_tensor(&bias)?);
        Ok(())
    }

    /// Overwrites novel row `index` in place.
    pub fn set_novel_row(&mut self, index: usize, row: &[f32]) -> Result<()> {
        let d = self.config.hidden_size;
        let var = self
            .params
            .get(NOVEL_EMBEDDINGS)
            .ok_or_else(|| Error::Shape("no novel rows".into()))?;
        let n = var.dims()[0];
        if index >= n {
            return Err(Error::Bounds { index, len: n });
        }
        if row.len() != d {
            return Err(Error::Shape(format!("embedding row has {} entries, expected {d}", row.len())));
        }
        let mut all = var.as_tensor().flatten_all()?.to_vec1::<f32>()?;
        all[index * d..(index + 1) * d].copy_from_slice(row);
        var.set(&Tensor::from_vec(all, (n, d), &self.device)?)?;
        Ok(())
    }

    /// Input embedding rows for the whole vocabulary, novel rows last.
    pub fn embedding_rows(&self) -> Result<Vec<Vec<f32>>> {
        Ok(self.embedding_matrix(None)?.to_vec2::<f32>()?)
    }

    /// Vars that an optimizer should update under `mode`.
    pub fn trainable_vars(&self, mode: Trainable) -> Vec<Var> {
        self.params
            .iter()
            .filter(|(name, _)| is_trainable(name, mode))
            .map(|(_, v)| v.clone())
            .collect()
    }

    fn p(&self, name: &str, mode: Option<Trainable>) -> Tensor {
        let var = &self.params[name];
        match mode {
            Some(m) if is_trainable(name, m) => var.as_tensor().clone(),
            _ => var.as_tensor().detach(),
        }
    }

    fn embedding_matrix(&self, mode: Option<Trainable>) -> Result<Tensor> {
        let base = self.p(WORD_EMBEDDINGS, mode);
        match self.params.contains_key(NOVEL_EMBEDDINGS) {
            true => Ok(Tensor::cat(&[&base, &self.p(NOVEL_EMBEDDINGS, mode)], 0)?),
            false => Ok(base),
        }
    }

    fn output_bias(&self, mode: Option<Trainable>) -> Result<Tensor> {
        let base = self.p(OUTPUT_BIAS, mode);
        match self.params.contains_key(NOVEL_BIAS) {
            true => Ok(Tensor::cat(&[&base, &self.p(NOVEL_BIAS, mode)], 0)?),
            false => Ok(base),
        }
    }

    /// Encodes a padded batch into final hidden states `(batch, len, hidden)`.
    ///
    /// `grad` selects which parameters stay attached to the graph; `None`
    /// detaches everything. `dropout` enables dropout with the given stream.
    pub fn encode(
        &self,
        batch: &[Vec<u32>],
        pad_id: u32,
        grad: Option<Trainable>,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let b = batch.len();
        let t = batch.iter().map(Vec::len).max().unwrap_or(0);
        if b == 0 || t == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if t + self.config.position_offset > self.config.max_positions {
            return Err(Error::Bounds {
                index: t + self.config.position_offset,
                len: self.config.max_positions,
            });
        }
        let total = self.total_vocab() as u32;
        let mut flat = Vec::with_capacity(b * t);
        let mut mask = Vec::with_capacity(b * t);
        for seq in batch {
            for i in 0..t {
                let id = seq.get(i).copied().unwrap_or(pad_id);
                if id >= total {
                    return Err(Error::Bounds {
                        index: id as usize,
                        len: total as usize,
                    });
                }
                flat.push(id);
                mask.push(if i < seq.len() { 0f32 } else { -1e9 });
            }
        }
        let d = self.config.hidden_size;
        let ids = Tensor::from_vec(flat, b * t, &self.device)?;
        let emb = self.embedding_matrix(grad)?.index_select(&ids, 0)?.reshape((b, t, d))?;
        let pos = self.p("embeddings.position", grad).narrow(0, self.config.position_offset, t)?;
        let typ = self.p("embeddings.token_type", grad).narrow(0, 0, 1)?;
        let x = emb.broadcast_add(&pos)?.broadcast_add(&typ)?;
        let x = self.layer_norm(&x, "embeddings.ln", grad)?;
        let mut x = self.dropout(&x, dropout.as_deref_mut())?;
        let bias = Tensor::from_vec(mask, (b, 1, 1, t), &self.device)?;
        for l in 0..self.config.num_layers {
            x = self.block(&x, &bias, l, grad, dropout.as_deref_mut())?;
        }
        Ok(x)
    }

    /// Logits over the full vocabulary for selected rows of `(n, hidden)` states.
    pub fn head(&self, hidden: &Tensor, grad: Option<Trainable>) -> Result<Tensor> {
        let h = self.linear(hidden, "head.transform", grad)?.gelu_erf()?;
        let h = self.layer_norm(&h, "head.ln", grad)?;
        let emb = self.embedding_matrix(grad)?;
        let logits = h.broadcast_matmul(&emb.t()?)?;
        Ok(logits.broadcast_add(&self.output_bias(grad)?)?)
    }

    /// Gathers hidden states at `(row, position)` pairs into `(n, hidden)`.
    pub fn gather_positions(&self, hidden: &Tensor, picks: &[(usize, usize)]) -> Result<Tensor> {
        let (b, t, d) = hidden.dims3()?;
        let idx: Vec<u32> = picks
            .iter()
            .map(|&(r, p)| {
                if r >= b || p >= t {
                    Err(Error::Bounds { index: p, len: t })
                } else {
                    Ok((r * t + p) as u32)
                }
            })
            .collect::<Result<_>>()?;
        let idx = Tensor::from_vec(idx, picks.len(), &self.device)?;
        Ok(hidden.reshape((b * t, d))?.index_select(&idx, 0)?)
    }

    fn block(
        &self,
        x: &Tensor,
        bias: &Tensor,
        l: usize,
        grad: Option<Trainable>,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        let h = self.config.num_heads;
        let dh = d / h;
        let split = |y: Tensor| -> Result<Tensor> {
            Ok(y.reshape((b, t, h, dh))?.transpose(1, 2)?.contiguous()?)
        };
        let pre = format!("layer.{l}.attention");
        let q = split(self.linear(x, &format!("{pre}.query"), grad)?)?;
        let k = split(self.linear(x, &format!("{pre}.key"), grad)?)?;
        let v = split(self.linear(x, &format!("{pre}.value"), grad)?)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (dh as f64).sqrt())?.broadcast_add(bias)?;
        let probs = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let probs = self.dropout(&probs, dropout.as_deref_mut())?;
        let ctx = probs.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, t, d))?;
        let attn = self.linear(&ctx, &format!("{pre}.output"), grad)?;
        let attn = self.dropout(&attn, dropout.as_deref_mut())?;
        let x = self.layer_norm(&(x + attn)?, &format!("{pre}.ln"), grad)?;
        let pre = format!("layer.{l}.ffn");
        let ff = self.linear(&x, &format!("{pre}.inter"), grad)?.gelu_erf()?;
        let ff = self.linear(&ff, &format!("{pre}.output"), grad)?;
        let ff = self.dropout(&ff, dropout)?;
        self.layer_norm(&(x + ff)?, &format!("{pre}.ln"), grad)
    }

    fn linear(&self, x: &Tensor, name: &str, grad: Option<Trainable>) -> Result<Tensor> {
        let w = self.p(&format!("{name}.weight"), grad);
        let b = self.p(&format!("{name}.bias"), grad);
        Ok(x.broadcast_matmul(&w.t()?)?.broadcast_add(&b)?)
    }

    fn layer_norm(&self, x: &Tensor, name: &str, grad: Option<Trainable>) -> Result<Tensor> {
        let gamma = self.p(&format!("{name}.weight"), grad);
        let beta = self.p(&format!("{name}.bias"), grad);
        let mean = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let y = xc.broadcast_div(&(var + self.config.layer_norm_eps)?.sqrt()?)?;
        Ok(y.broadcast_mul(&gamma)?.broadcast_add(&beta)?)
    }

    fn dropout(&self, x: &Tensor, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let p = self.config.dropout;
        let Some(rng) = rng else {
            return Ok(x.clone());
        };
        if p <= 0.0 {
            return Ok(x.clone());
        }
        let scale = (1.0 / (1.0 - p)) as f32;
        let n = x.elem_count();
        let keep: Vec<f32> = (0..n)
            .map(|_| if rng.random::<f64>() >= p { scale } else { 0.0 })
            .collect();
        let m = Tensor::from_vec(keep, x.shape(), &self.device)?;
        Ok((x * m)?)
    }
}

fn is_trainable(name: &str, mode: Trainable) -> bool {
    match mode {
        Trainable::All => true,
        Trainable::NovelOnly => name == NOVEL_EMBEDDINGS,
    }
}

/// Every base parameter with its shape and initializer, in a fixed order.
fn layout(config: &NetworkConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = config.hidden_size;
    let i = config.intermediate_size;
    let mut out = vec![
        (WORD_EMBEDDINGS.to_string(), vec![config.vocab_size, d], Init::Normal),
        ("embeddings.position".into(), vec![config.max_positions, d], Init::Normal),
        ("embeddings.token_type".into(), vec![config.type_vocab_size, d], Init::Normal),
        ("embeddings.ln.weight".into(), vec![d], Init::Ones),
        ("embeddings.ln.bias".into(), vec![d], Init::Zeros),
    ];
    for l in 0..config.num_layers {
        for proj in ["query", "key", "value", "output"] {
            out.push((format!("layer.{l}.attention.{proj}.weight"), vec![d, d], Init::Normal));
            out.push((format!("layer.{l}.attention.{proj}.bias"), vec![d], Init::Zeros));
        }
        out.push((format!("layer.{l}.attention.ln.weight"), vec![d], Init::Ones));
        out.push((format!("layer.{l}.attention.ln.bias"), vec![d], Init::Zeros));
        out.push((format!("layer.{l}.ffn.inter.weight"), vec![i, d], Init::Normal));
        out.push((format!("layer.{l}.ffn.inter.bias"), vec![i], Init::Zeros));
        out.push((format!("layer.{l}.ffn.output.weight"), vec![d, i], Init::Normal));
        out.push((format!("layer.{l}.ffn.output.bias"), vec![d], Init::Zeros));
        out.push((format!("layer.{l}.ffn.ln.weight"), vec![d], Init::Ones));
        out.push((format!("layer.{l}.ffn.ln.bias"), vec![d], Init::Zeros));
    }
    out.extend([
        ("head.transform.weight".into(), vec![d, d], Init::Normal),
        ("head.transform.bias".into(), vec![d], Init::Zeros),
        ("head.ln.weight".into(), vec![d], Init::Ones),
        ("head.ln.bias".into(), vec![d], Init::Zeros),
        (OUTPUT_BIAS.into(), vec![config.vocab_size], Init::Zeros),
    ]);
    out
}

#[derive(Clone, Copy)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_nn::Optimizer;

    fn net() -> Network {
        Network::random(NetworkConfig::tiny(20), 3).unwrap()
    }

    #[test]
    fn logits_cover_novel_rows() {
        let mut n = net();
        n.push_novel_row(&[0.01; 32]).unwrap();
        let h = n.encode(&[vec![1, 2, 20]], 0, None, None).unwrap();
        let sel = n.gather_positions(&h, &[(0, 2)]).unwrap();
        let logits = n.head(&sel, None).unwrap();
        assert_eq!(logits.dims(), &[1, 21]);
    }

    #[test]
    fn padding_does_not_change_unpadded_rows() {
        let n = net();
        let a = n.encode(&[vec![1, 2, 3]], 0, None, None).unwrap();
        let b = n.encode(&[vec![1, 2, 3], vec![4, 5, 6, 7, 8]], 0, None, None).unwrap();
        let a = a.narrow(1, 0, 3).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = b.narrow(0, 0, 1).unwrap().narrow(1, 0, 3).unwrap();
        let b = b.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn novel_only_step_leaves_other_parameters() {
        let mut n = net();
        n.push_novel_row(&[0.05; 32]).unwrap();
        let before = n.tensors().unwrap();
        let vars = n.trainable_vars(Trainable::NovelOnly);
        assert_eq!(vars.len(), 1);
        let mut opt = candle_nn::AdamW::new(vars, candle_nn::ParamsAdamW { lr: 0.01, weight_decay: 0.0, ..Default::default() }).unwrap();
        let h = n.encode(&[vec![1, 20, 3]], 0, Some(Trainable::NovelOnly), None).unwrap();
        let sel = n.gather_positions(&h, &[(0, 1)]).unwrap();
        let loss = n.head(&sel, Some(Trainable::NovelOnly)).unwrap().sqr().unwrap().mean_all().unwrap();
        opt.backward_step(&loss).unwrap();
        let after = n.tensors().unwrap();
        for (name, t) in &before {
            let same = t.flatten_all().unwrap().to_vec1::<f32>().unwrap()
                == after[name].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(same, name != NOVEL_EMBEDDINGS, "{name}");
        }
    }
}
