//! Transformer building blocks, training utilities and the checkpoint
//! format shared by the post-editing models.

pub mod checkpoint;
pub mod layers;
pub mod params;
pub mod vocab;

use candle_core::{Device, Tensor, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sentence};
use crate::encode::{EncodedSource, SourceFactor};
use crate::error::{ApeError, Result};
use crate::subword::{bpe_restore, BpeModel};
use layers::{attention_mask, embed, sinusoids, Ctx, DecoderLayer, EncoderLayer, LayerNorm};
use params::{Init, ParamStore};
use vocab::{Vocab, PAD_ID};

/// Transformer dimensions shared by both model families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub factor_embed_dim: usize,
    pub dropout: f32,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 2,
            n_layers: 2,
            ffn_dim: 128,
            factor_embed_dim: 16,
            dropout: 0.1,
            max_len: 128,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(ApeError::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 || self.ffn_dim == 0 {
            return err("model dimensions must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return err(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.factor_embed_dim == 0 || self.factor_embed_dim >= self.d_model {
            return err(format!(
                "factor_embed_dim {} must lie in [1, d_model)",
                self.factor_embed_dim
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.max_len < 4 {
            return err("max_len must be at least 4".into());
        }
        Ok(())
    }

    /// Width of the token part of an encoder input vector.
    pub fn token_embed_dim(&self) -> usize {
        self.d_model - self.factor_embed_dim
    }
}

/// Optional subword segmentation plus the vocabulary: the text side of a
/// model.
#[derive(Debug, Clone, PartialEq)]
pub struct Codec {
    pub vocab: Vocab,
    pub bpe: Option<BpeModel>,
}

impl Codec {
    /// Builds the vocabulary over every column and constraint phrase of the
    /// corpora, segmented by `bpe` when given.
    pub fn build(corpora: &[&Corpus], bpe: Option<BpeModel>) -> Self {
        let vocab = match &bpe {
            None => Vocab::from_corpora(corpora),
            Some(b) => {
                let mut all = Vec::new();
                for c in corpora {
                    for t in c.iter() {
                        for s in [&t.src, &t.mt, &t.pe] {
                            all.push(b.apply(s).0);
                        }
                        for k in &t.constraints {
                            all.push(b.apply(&k.src).0);
                            all.push(b.apply(&k.tgt).0);
                        }
                    }
                }
                Vocab::build(all.iter())
            }
        };
        Codec { vocab, bpe }
    }

    pub fn segment(&self, s: &Sentence) -> Sentence {
        match &self.bpe {
            Some(b) => b.apply(s).0,
            None => s.clone(),
        }
    }

    pub fn source_ids(&self, enc: &EncodedSource, max_len: usize) -> Result<FactoredIds> {
        let enc = match &self.bpe {
            Some(b) => b.apply_encoded(enc)?,
            None => enc.clone(),
        };
        Ok(FactoredIds::from_encoded(&enc, &self.vocab, max_len))
    }

    pub fn target_ids(&self, s: &Sentence) -> Vec<u32> {
        self.vocab.encode(&self.segment(s))
    }

    /// Ids back to words, with subwords glued.
    pub fn decode(&self, ids: &[u32]) -> Sentence {
        let s = self.vocab.decode(ids);
        if self.bpe.is_some() {
            bpe_restore(&s)
        } else {
            s
        }
    }

    pub fn merges(&self) -> Option<Vec<(String, String)>> {
        self.bpe.as_ref().map(|b| b.merges().to_vec())
    }

    pub fn from_parts(vocab: Vocab, merges: Option<Vec<(String, String)>>) -> Result<Self> {
        vocab.validate()?;
        let bpe = merges.map(BpeModel::from_merges).transpose()?;
        Ok(Codec { vocab, bpe })
    }
}

/// A padded batch of id sequences.
pub struct SeqBatch {
    pub ids: Tensor,
    pub valid: Vec<Vec<bool>>,
}

impl SeqBatch {
    pub fn new(seqs: &[Vec<u32>], device: &Device) -> Result<Self> {
        let t = seqs.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let mut ids = Vec::with_capacity(seqs.len() * t);
        let mut valid = Vec::with_capacity(seqs.len());
        for s in seqs {
            ids.extend(s.iter().copied().chain(std::iter::repeat(PAD_ID)).take(t));
            valid.push((0..t).map(|i| i < s.len()).collect());
        }
        Ok(SeqBatch {
            ids: Tensor::from_vec(ids, (seqs.len(), t), device)?,
            valid,
        })
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn width(&self) -> usize {
        self.valid.first().map_or(0, Vec::len)
    }
}

/// Token ids plus source factors of one encoder input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactoredIds {
    pub ids: Vec<u32>,
    pub factors: Vec<u32>,
}

impl FactoredIds {
    /// Maps tokens through the vocabulary; keeps at most `max_len` positions.
    pub fn from_encoded(enc: &EncodedSource, vocab: &Vocab, max_len: usize) -> Self {
        let mut ids = vocab.encode(&enc.tokens);
        let mut factors: Vec<u32> = enc.factors.iter().map(|f| f.index() as u32).collect();
        ids.truncate(max_len);
        factors.truncate(max_len);
        FactoredIds { ids, factors }
    }
}

/// Padded factored inputs.
pub struct FactoredBatch {
    pub ids: Tensor,
    pub factors: Tensor,
    pub valid: Vec<Vec<bool>>,
}

impl FactoredBatch {
    pub fn new(items: &[&FactoredIds], device: &Device) -> Result<Self> {
        let t = items.iter().map(|x| x.ids.len()).max().unwrap_or(0).max(1);
        let b = items.len();
        let mut ids = Vec::with_capacity(b * t);
        let mut factors = Vec::with_capacity(b * t);
        let mut valid = Vec::with_capacity(b);
        for x in items {
            ids.extend(x.ids.iter().copied().chain(std::iter::repeat(PAD_ID)).take(t));
            factors.extend(x.factors.iter().copied().chain(std::iter::repeat(0)).take(t));
            valid.push((0..t).map(|i| i < x.ids.len()).collect());
        }
        Ok(FactoredBatch {
            ids: Tensor::from_vec(ids, (b, t), device)?,
            factors: Tensor::from_vec(factors, (b, t), device)?,
            valid,
        })
    }

    /// Keeps only the given rows.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let idx = Tensor::from_vec(
            rows.iter().map(|&r| r as u32).collect::<Vec<_>>(),
            rows.len(),
            self.ids.device(),
        )?;
        Ok(FactoredBatch {
            ids: self.ids.index_select(&idx, 0)?,
            factors: self.factors.index_select(&idx, 0)?,
            valid: rows.iter().map(|&r| self.valid[r].clone()).collect(),
        })
    }
}

pub struct EncoderStack {
    layers: Vec<EncoderLayer>,
    ln: LayerNorm,
}

impl EncoderStack {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let layers = (0..cfg.n_layers)
            .map(|i| EncoderLayer::new(ps, &format!("{name}.layer{i}"), cfg.d_model, cfg.n_heads, cfg.ffn_dim))
            .collect::<Result<_>>()?;
        Ok(EncoderStack {
            layers,
            ln: LayerNorm::new(ps, &format!("{name}.ln_f"), cfg.d_model)?,
        })
    }

    pub fn forward(&self, x: &Tensor, valid: &[Vec<bool>], ctx: &Ctx) -> Result<Tensor> {
        let mask = attention_mask(valid, x.dim(1)?, false, x.device())?;
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward(&h, &mask, ctx)?;
        }
        self.ln.forward(&h)
    }
}

pub struct DecoderStack {
    layers: Vec<DecoderLayer>,
    ln: LayerNorm,
}

impl DecoderStack {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let layers = (0..cfg.n_layers)
            .map(|i| DecoderLayer::new(ps, &format!("{name}.layer{i}"), cfg.d_model, cfg.n_heads, cfg.ffn_dim))
            .collect::<Result<_>>()?;
        Ok(DecoderStack {
            layers,
            ln: LayerNorm::new(ps, &format!("{name}.ln_f"), cfg.d_model)?,
        })
    }

    pub fn forward(
        &self,
        x: &Tensor,
        valid: &[Vec<bool>],
        causal: bool,
        memory: &Memory,
        ctx: &Ctx,
    ) -> Result<Tensor> {
        let t = x.dim(1)?;
        let self_mask = attention_mask(valid, t, causal, x.device())?;
        let mem_mask = attention_mask(&memory.valid, t, false, x.device())?;
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward(&h, &self_mask, &memory.states, &mem_mask, ctx)?;
        }
        self.ln.forward(&h)
    }
}

/// Encoder outputs the decoder attends to.
pub struct Memory {
    pub states: Tensor,
    pub valid: Vec<Vec<bool>>,
}

impl Memory {
    /// Repeats rows, e.g. once per beam hypothesis.
    pub fn select(&self, rows: &[usize]) -> Result<Memory> {
        let idx = Tensor::from_vec(
            rows.iter().map(|&r| r as u32).collect::<Vec<_>>(),
            rows.len(),
            self.states.device(),
        )?;
        Ok(Memory {
            states: self.states.index_select(&idx, 0)?,
            valid: rows.iter().map(|&r| self.valid[r].clone()).collect(),
        })
    }
}

/// Token and factor embeddings (concatenated, shared by all encoders) plus
/// one or two encoder stacks. With two stacks the memory is the source
/// encoding followed by the MT encoding along the length axis.
pub struct SourceEncoders {
    tok: Tensor,
    fac: Tensor,
    pos: Tensor,
    scale: f64,
    enc_a: EncoderStack,
    enc_b: Option<EncoderStack>,
}

impl SourceEncoders {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig, vocab_size: usize, two_encoders: bool) -> Result<Self> {
        let std = (cfg.d_model as f64).powf(-0.5);
        let tok = ps.create("src_embed.tokens", &[vocab_size, cfg.token_embed_dim()], Init::Normal(std))?;
        let fac = ps.create(
            "src_embed.factors",
            &[SourceFactor::COUNT, cfg.factor_embed_dim],
            Init::Normal(std),
        )?;
        let enc_a = EncoderStack::new(ps, "encoder_src", cfg)?;
        let enc_b = if two_encoders {
            Some(EncoderStack::new(ps, "encoder_mt", cfg)?)
        } else {
            None
        };
        Ok(SourceEncoders {
            tok,
            fac,
            pos: sinusoids(cfg.max_len, cfg.d_model, ps.device())?,
            scale: (cfg.d_model as f64).sqrt(),
            enc_a,
            enc_b,
        })
    }

    pub fn is_multi_source(&self) -> bool {
        self.enc_b.is_some()
    }

    /// Encoder input vectors: `[token_embed ; factor_embed]`, scaled, plus
    /// positions.
    pub fn embed(&self, batch: &FactoredBatch) -> Result<Tensor> {
        let t = batch.ids.dim(1)?;
        let x = Tensor::cat(&[embed(&self.tok, &batch.ids)?, embed(&self.fac, &batch.factors)?], D::Minus1)?;
        Ok((x * self.scale)?.broadcast_add(&self.pos.narrow(0, 0, t)?)?)
    }

    pub fn encode(&self, src: &FactoredBatch, mt: Option<&FactoredBatch>, ctx: &Ctx) -> Result<Memory> {
        let a = self.enc_a.forward(&ctx.dropout(&self.embed(src)?)?, &src.valid, ctx)?;
        match (&self.enc_b, mt) {
            (Some(enc_b), Some(mt)) => {
                let b = enc_b.forward(&ctx.dropout(&self.embed(mt)?)?, &mt.valid, ctx)?;
                let valid = src
                    .valid
                    .iter()
                    .zip(&mt.valid)
                    .map(|(x, y)| x.iter().chain(y).copied().collect())
                    .collect();
                Ok(Memory {
                    states: Tensor::cat(&[a, b], 1)?,
                    valid,
                })
            }
            (None, None) => Ok(Memory {
                states: a,
                valid: src.valid.clone(),
            }),
            (Some(_), None) => Err(ApeError::Argument("multi-source model needs an MT input".into())),
            (None, Some(_)) => Err(ApeError::Argument("single-source model takes no MT input".into())),
        }
    }
}

/// Decoder-side token embedding with positions.
pub struct TargetEmbedding {
    tok: Tensor,
    pos: Tensor,
    scale: f64,
}

impl TargetEmbedding {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig, vocab_size: usize) -> Result<Self> {
        Ok(TargetEmbedding {
            tok: ps.create(
                "tgt_embed.tokens",
                &[vocab_size, cfg.d_model],
                Init::Normal((cfg.d_model as f64).powf(-0.5)),
            )?,
            pos: sinusoids(cfg.max_len, cfg.d_model, ps.device())?,
            scale: (cfg.d_model as f64).sqrt(),
        })
    }

    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        let t = ids.dim(1)?;
        Ok((embed(&self.tok, ids)? * self.scale)?.broadcast_add(&self.pos.narrow(0, 0, t)?)?)
    }
}

/// Cross-entropy against `targets` with label smoothing `eps`.
/// `logits` has shape `(n, classes)`.
pub fn smoothed_cross_entropy(logits: &Tensor, targets: &[u32], eps: f64) -> Result<Tensor> {
    let n = targets.len();
    let logp = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let tgt = Tensor::from_slice(targets, (n, 1), logits.device())?;
    let nll = logp.gather(&tgt, 1)?.neg()?.mean_all()?;
    if eps == 0.0 {
        return Ok(nll);
    }
    let uniform = logp.mean(D::Minus1)?.neg()?.mean_all()?;
    Ok(((nll * (1.0 - eps))? + (uniform * eps)?)?)
}

/// Selects rows of a `(b, t, d)` tensor by flat `(b·t)` index.
pub fn gather_rows(x: &Tensor, flat_rows: &[u32]) -> Result<Tensor> {
    let (b, t, d) = x.dims3()?;
    let idx = Tensor::from_slice(flat_rows, flat_rows.len(), x.device())?;
    Ok(x.reshape((b * t, d))?.index_select(&idx, 0)?)
}

/// Optimisation settings shared by both trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: usize,
    pub label_smoothing: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 64,
            lr: 3e-3,
            warmup: 200,
            label_smoothing: 0.1,
            weight_decay: 0.01,
            seed: 1,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.warmup == 0 || self.log_every == 0 {
            return Err(ApeError::Config("batch_size, warmup and log_every must be positive".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(ApeError::Config("lr must be positive and label_smoothing in [0, 1)".into()));
        }
        Ok(())
    }

    /// Linear warmup followed by inverse square-root decay.
    pub fn lr_at(&self, step: usize) -> f64 {
        let s = (step + 1) as f64;
        let w = self.warmup as f64;
        self.lr * (s / w).min((w / s).sqrt())
    }
}

/// Loss values recorded during training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub steps: usize,
    /// `(step, mean loss since the previous entry)`
    pub losses: Vec<(usize, f32)>,
}

/// AdamW with the warmup schedule and a finiteness guard.
pub struct Stepper {
    opt: AdamW,
    cfg: TrainConfig,
    step: usize,
    window: Vec<f32>,
    pub state: TrainState,
}

impl Stepper {
    pub fn new(ps: &ParamStore, cfg: &TrainConfig, start_step: usize) -> Result<Self> {
        let opt = AdamW::new(
            ps.vars(),
            ParamsAdamW {
                lr: cfg.lr_at(0),
                beta1: 0.9,
                beta2: 0.98,
                eps: 1e-9,
                weight_decay: cfg.weight_decay,
            },
        )?;
        Ok(Stepper {
            opt,
            cfg: cfg.clone(),
            step: start_step,
            window: Vec::new(),
            state: TrainState {
                steps: start_step,
                losses: Vec::new(),
            },
        })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn apply(&mut self, loss: &Tensor) -> Result<f32> {
        let value = loss.to_scalar::<f32>()?;
        if !value.is_finite() {
            return Err(ApeError::Numeric(format!("non-finite loss {value} at step {}", self.step)));
        }
        self.opt.set_learning_rate(self.cfg.lr_at(self.step));
        self.opt.backward_step(loss)?;
        self.step += 1;
        self.state.steps = self.step;
        self.window.push(value);
        if self.step % self.cfg.log_every == 0 {
            let mean = self.window.iter().sum::<f32>() / self.window.len() as f32;
            log::info!("step {} loss {mean:.4}", self.step);
            self.state.losses.push((self.step, mean));
            self.window.clear();
        }
        Ok(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        ModelConfig::default().validate().unwrap();
        let bad = ModelConfig {
            n_heads: 3,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            factor_embed_dim: 64,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn schedule_peaks_at_warmup() {
        let c = TrainConfig {
            lr: 1.0,
            warmup: 100,
            ..TrainConfig::default()
        };
        assert!((c.lr_at(99) - 1.0).abs() < 1e-12);
        assert!(c.lr_at(10) < c.lr_at(50));
        assert!((c.lr_at(399) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_give_log_v() {
        let logits = Tensor::zeros((3, 10), candle_core::DType::F32, &Device::Cpu).unwrap();
        for eps in [0.0, 0.1] {
            let l = smoothed_cross_entropy(&logits, &[1, 2, 3], eps).unwrap();
            let v = l.to_scalar::<f32>().unwrap();
            assert!((v - (10f32).ln()).abs() < 1e-5);
        }
    }

    #[test]
    fn encoder_input_width_is_d_model() {
        let cfg = ModelConfig::default();
        let mut ps = ParamStore::new(1);
        let enc = SourceEncoders::new(&mut ps, &cfg, 20, true).unwrap();
        let x = FactoredIds {
            ids: vec![5, 6, 7],
            factors: vec![0, 1, 2],
        };
        let m = FactoredIds {
            ids: vec![5, 6],
            factors: vec![3, 3],
        };
        let xb = FactoredBatch::new(&[&x], &Device::Cpu).unwrap();
        let mb = FactoredBatch::new(&[&m], &Device::Cpu).unwrap();
        assert_eq!(enc.embed(&xb).unwrap().dims(), &[1, 3, cfg.d_model]);
        let mem = enc.encode(&xb, Some(&mb), &Ctx::eval()).unwrap();
        assert_eq!(mem.states.dims(), &[1, 5, cfg.d_model]);
        assert_eq!(mem.valid[0].len(), 5);
    }
}
