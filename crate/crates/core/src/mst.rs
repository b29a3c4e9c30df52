//! Multi-source Transformer post-editor.
//!
//! Encoder A reads the (possibly constraint-annotated) source, encoder B the
//! MT with factor 3. The autoregressive decoder cross-attends over both
//! encodings concatenated as `[source ; MT]`.

use std::path::Path;

use candle_core::{Tensor, D};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sentence, Triplet};
use crate::encode::{encode_mt, encode_source, EncodeMethod};
use crate::error::{ApeError, Result};
use crate::nn::checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, FORMAT_VERSION};
use crate::nn::layers::{Ctx, Linear};
use crate::nn::params::{ParamData, ParamStore};
use crate::nn::vocab::{BOS_ID, EOS_ID, NUM_SPECIAL};
use crate::nn::{
    gather_rows, smoothed_cross_entropy, Codec, DecoderStack, FactoredBatch, FactoredIds, Memory, ModelConfig,
    SeqBatch, SourceEncoders, Stepper, TargetEmbedding, TrainConfig, TrainState,
};

pub const CHECKPOINT_KIND: &str = "mst";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MstConfig {
    #[serde(default)]
    pub model: ModelConfig,
    pub variant: EncodeMethod,
}

impl MstConfig {
    pub fn new(variant: EncodeMethod) -> Self {
        MstConfig {
            model: ModelConfig::default(),
            variant,
        }
    }
}

/// One training or decoding input, already mapped to ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MstExample {
    pub src: FactoredIds,
    pub mt: FactoredIds,
    /// Post-edit ids without markers; empty when decoding.
    pub pe: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub sentence: Sentence,
    pub ids: Vec<u32>,
    /// Length-normalized log-probability.
    pub score: f32,
    /// No beam entry produced the end symbol within the length limit.
    pub truncated: bool,
}

pub struct MstModel {
    config: MstConfig,
    codec: Codec,
    ps: ParamStore,
    encoders: SourceEncoders,
    tgt_embed: TargetEmbedding,
    decoder: DecoderStack,
    out: Linear,
    train_steps: usize,
}

impl MstModel {
    pub fn build(config: MstConfig, codec: Codec) -> Result<Self> {
        config.model.validate()?;
        if codec.vocab.is_empty() {
            return Err(ApeError::Config("vocabulary has no words".into()));
        }
        let cfg = &config.model;
        let v = codec.vocab.len();
        let mut ps = ParamStore::new(cfg.seed);
        let encoders = SourceEncoders::new(&mut ps, cfg, v, true)?;
        let tgt_embed = TargetEmbedding::new(&mut ps, cfg, v)?;
        let decoder = DecoderStack::new(&mut ps, "decoder", cfg)?;
        let out = Linear::with_std(&mut ps, "output", cfg.d_model, v, 0.01)?;
        Ok(MstModel {
            config,
            codec,
            ps,
            encoders,
            tgt_embed,
            decoder,
            out,
            train_steps: 0,
        })
    }

    pub fn config(&self) -> &MstConfig {
        &self.config
    }

    pub fn codec(&self) -> &Codec {
        &self.codec
    }

    pub fn train_steps(&self) -> usize {
        self.train_steps
    }

    pub fn num_params(&self) -> usize {
        self.ps.num_params()
    }

    /// Encodes a triplet for this model's variant. The post-edit is kept to
    /// `max_len - 1` tokens so the end symbol fits.
    pub fn example(&self, t: &Triplet) -> Result<MstExample> {
        let max_len = self.config.model.max_len;
        let x = encode_source(&t.src, &t.constraints, self.config.variant);
        let mut pe = self.codec.target_ids(&t.pe);
        pe.truncate(max_len - 1);
        Ok(MstExample {
            src: self.codec.source_ids(&x, max_len)?,
            mt: self.codec.source_ids(&encode_mt(&t.mt), max_len)?,
            pe,
        })
    }

    pub fn examples(&self, corpus: &Corpus) -> Result<Vec<MstExample>> {
        corpus.iter().map(|t| self.example(t)).collect()
    }

    fn encode(&self, batch: &[&MstExample], ctx: &Ctx) -> Result<Memory> {
        let dev = self.ps.device();
        let src: Vec<&FactoredIds> = batch.iter().map(|e| &e.src).collect();
        let mt: Vec<&FactoredIds> = batch.iter().map(|e| &e.mt).collect();
        let src = FactoredBatch::new(&src, dev)?;
        let mt = FactoredBatch::new(&mt, dev)?;
        self.encoders.encode(&src, Some(&mt), ctx)
    }

    /// Decoder states `(b, t, d)` for prefixes that all start with BOS.
    fn decode_states(&self, prefixes: &[Vec<u32>], memory: &Memory, ctx: &Ctx) -> Result<(Tensor, SeqBatch)> {
        let batch = SeqBatch::new(prefixes, self.ps.device())?;
        let x = ctx.dropout(&self.tgt_embed.forward(&batch.ids)?)?;
        let h = self.decoder.forward(&x, &batch.valid, true, memory, ctx)?;
        Ok((h, batch))
    }

    /// Mean teacher-forced cross-entropy per target token.
    pub fn loss(&self, batch: &[&MstExample], label_smoothing: f64, ctx: &Ctx) -> Result<Tensor> {
        let memory = self.encode(batch, ctx)?;
        let prefixes: Vec<Vec<u32>> = batch
            .iter()
            .map(|e| std::iter::once(BOS_ID).chain(e.pe.iter().copied()).collect())
            .collect();
        let (h, sb) = self.decode_states(&prefixes, &memory, ctx)?;
        let width = sb.width();
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for (b, e) in batch.iter().enumerate() {
            for (i, &tok) in e.pe.iter().chain(std::iter::once(&EOS_ID)).enumerate() {
                rows.push((b * width + i) as u32);
                targets.push(tok);
            }
        }
        let logits = self.out.forward(&gather_rows(&h, &rows)?)?;
        smoothed_cross_entropy(&logits, &targets, label_smoothing)
    }

    /// Trains on shuffled minibatches for `cfg.steps` further steps. The
    /// learning-rate schedule continues from the model's step count.
    pub fn train(&mut self, data: &[MstExample], cfg: &TrainConfig) -> Result<TrainState> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(ApeError::Argument("empty training set".into()));
        }
        let mut stepper = Stepper::new(&self.ps, cfg, self.train_steps)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = Vec::new();
        for _ in 0..cfg.steps {
            if order.len() < cfg.batch_size.min(data.len()) {
                let mut fresh: Vec<usize> = (0..data.len()).collect();
                fresh.shuffle(&mut rng);
                order.extend(fresh);
            }
            let take = cfg.batch_size.min(data.len());
            let batch: Vec<&MstExample> = order.drain(..take).map(|i| &data[i]).collect();
            let step = stepper.step_index() as u64;
            let ctx = Ctx::train(self.config.model.dropout, cfg.seed ^ step.wrapping_mul(0x9E37_79B9));
            let loss = self.loss(&batch, cfg.label_smoothing, &ctx)?;
            stepper.apply(&loss)?;
        }
        self.train_steps = stepper.step_index();
        Ok(stepper.state)
    }

    /// Log-probabilities of the next token after each prefix, with the
    /// non-generable specials masked out.
    fn next_log_probs(&self, prefixes: &[Vec<u32>], memory: &Memory) -> Result<Vec<Vec<f32>>> {
        let ctx = Ctx::eval();
        let (h, sb) = self.decode_states(prefixes, memory, &ctx)?;
        let width = sb.width();
        let rows: Vec<u32> = prefixes
            .iter()
            .enumerate()
            .map(|(b, p)| (b * width + p.len() - 1) as u32)
            .collect();
        let logits = self.out.forward(&gather_rows(&h, &rows)?)?;
        let logp = candle_nn::ops::log_softmax(&logits, D::Minus1)?;
        let mut out = logp.to_vec2::<f32>()?;
        for row in &mut out {
            for (id, v) in row.iter_mut().enumerate().take(NUM_SPECIAL as usize) {
                if id as u32 != EOS_ID {
                    *v = f32::NEG_INFINITY;
                }
            }
        }
        Ok(out)
    }

    fn finish(&self, ids: Vec<u32>, logp: f32, truncated: bool) -> Hypothesis {
        let n = ids.len() + usize::from(!truncated);
        Hypothesis {
            sentence: self.codec.decode(&ids),
            ids,
            score: logp / n.max(1) as f32,
            truncated,
        }
    }

    fn length_limit(&self, max_len: usize) -> usize {
        max_len.min(self.config.model.max_len - 1)
    }

    /// Argmax decoding of a batch.
    pub fn greedy_decode(&self, batch: &[&MstExample], max_len: usize) -> Result<Vec<Hypothesis>> {
        let limit = self.length_limit(max_len);
        let memory = self.encode(batch, &Ctx::eval())?;
        let mut prefixes: Vec<Vec<u32>> = vec![vec![BOS_ID]; batch.len()];
        let mut scores = vec![0f32; batch.len()];
        let mut done: Vec<Option<Hypothesis>> = vec![None; batch.len()];
        for _ in 0..=limit {
            let live: Vec<usize> = (0..batch.len()).filter(|&i| done[i].is_none()).collect();
            if live.is_empty() {
                break;
            }
            let mem = memory.select(&live)?;
            let p: Vec<Vec<u32>> = live.iter().map(|&i| prefixes[i].clone()).collect();
            let logp = self.next_log_probs(&p, &mem)?;
            for (row, &i) in logp.iter().zip(&live) {
                let (tok, lp) = argmax(row);
                scores[i] += lp;
                if tok == EOS_ID {
                    done[i] = Some(self.finish(prefixes[i][1..].to_vec(), scores[i], false));
                } else if prefixes[i].len() > limit {
                    done[i] = Some(self.finish(prefixes[i][1..].to_vec(), scores[i] - lp, true));
                } else {
                    prefixes[i].push(tok);
                }
            }
        }
        Ok(done.into_iter().map(|h| h.expect("every row finishes")).collect())
    }

    /// Beam search with length-normalized final ranking. A sentence stops
    /// once `beam` hypotheses have ended.
    pub fn beam_decode(&self, batch: &[&MstExample], beam: usize, max_len: usize) -> Result<Vec<Hypothesis>> {
        if beam == 0 {
            return Err(ApeError::Argument("beam size must be at least 1".into()));
        }
        let limit = self.length_limit(max_len);
        let memory = self.encode(batch, &Ctx::eval())?;
        // (prefix including BOS, summed log-prob)
        let mut live: Vec<Vec<(Vec<u32>, f32)>> = vec![vec![(vec![BOS_ID], 0.0)]; batch.len()];
        let mut finished: Vec<Vec<Hypothesis>> = vec![Vec::new(); batch.len()];
        for _ in 0..=limit {
            let mut rows = Vec::new();
            let mut prefixes = Vec::new();
            for (s, hyps) in live.iter().enumerate() {
                for (p, _) in hyps {
                    rows.push(s);
                    prefixes.push(p.clone());
                }
            }
            if rows.is_empty() {
                break;
            }
            let logp = self.next_log_probs(&prefixes, &memory.select(&rows)?)?;
            let mut offset = 0;
            for s in 0..batch.len() {
                let hyps = std::mem::take(&mut live[s]);
                if hyps.is_empty() {
                    continue;
                }
                let mut cands: Vec<(f32, usize, u32)> = Vec::new();
                for (h, (_, score)) in hyps.iter().enumerate() {
                    for (tok, lp) in top_k(&logp[offset + h], beam) {
                        cands.push((score + lp, h, tok));
                    }
                }
                offset += hyps.len();
                cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
                let mut next = Vec::new();
                for (score, h, tok) in cands {
                    if next.len() + finished[s].len() >= beam {
                        break;
                    }
                    let prefix = &hyps[h].0;
                    if tok == EOS_ID {
                        finished[s].push(self.finish(prefix[1..].to_vec(), score, false));
                    } else if prefix.len() > limit {
                        continue;
                    } else {
                        let mut p = prefix.clone();
                        p.push(tok);
                        next.push((p, score));
                    }
                }
                if finished[s].len() < beam && next.is_empty() && finished[s].is_empty() {
                    // Length limit hit with nothing ended: keep the best prefix.
                    let (p, score) = &hyps[0];
                    finished[s].push(self.finish(p[1..].to_vec(), *score, true));
                }
                if finished[s].len() < beam {
                    live[s] = next;
                }
            }
        }
        Ok(finished
            .into_iter()
            .map(|mut f| {
                f.sort_by(|a, b| b.score.total_cmp(&a.score));
                f.swap_remove(0)
            })
            .collect())
    }

    /// Post-edits a corpus in batches and returns the detokenized outputs.
    pub fn postedit(&self, corpus: &Corpus, beam: usize, batch_size: usize) -> Result<Vec<Sentence>> {
        let examples = self.examples(corpus)?;
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(batch_size.max(1)) {
            let refs: Vec<&MstExample> = chunk.iter().collect();
            let max_len = refs.iter().map(|e| 2 * e.mt.ids.len().max(e.src.ids.len()) + 10).max().unwrap_or(10);
            let hyps = if beam == 1 {
                self.greedy_decode(&refs, max_len)?
            } else {
                self.beam_decode(&refs, beam, max_len)?
            };
            out.extend(hyps.into_iter().map(|h| h.sentence));
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let manifest = CheckpointManifest {
            format_version: FORMAT_VERSION,
            kind: CHECKPOINT_KIND.into(),
            config: serde_json::to_value(&self.config)?,
            vocab: self.codec.vocab.clone(),
            bpe_merges: self.codec.merges(),
            train_steps: self.train_steps,
            tensors: Vec::new(),
        };
        save_checkpoint(path, &manifest, &self.ps.export()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (manifest, params) = load_checkpoint(path)?;
        MstModel::from_checkpoint(manifest, &params)
    }

    pub fn from_checkpoint(manifest: CheckpointManifest, params: &[ParamData]) -> Result<Self> {
        if manifest.kind != CHECKPOINT_KIND {
            return Err(ApeError::Checkpoint(format!(
                "expected a {CHECKPOINT_KIND} checkpoint, found {:?}",
                manifest.kind
            )));
        }
        let config: MstConfig = serde_json::from_value(manifest.config)?;
        let codec = Codec::from_parts(manifest.vocab, manifest.bpe_merges)?;
        let mut model = MstModel::build(config, codec)?;
        model.ps.import(params)?;
        model.train_steps = manifest.train_steps;
        Ok(model)
    }
}

/// Highest value; ties go to the lowest index.
pub(crate) fn argmax(row: &[f32]) -> (u32, f32) {
    let mut best = (0u32, f32::NEG_INFINITY);
    for (i, &v) in row.iter().enumerate() {
        if v > best.1 {
            best = (i as u32, v);
        }
    }
    best
}

fn top_k(row: &[f32], k: usize) -> Vec<(u32, f32)> {
    let mut idx: Vec<u32> = (0..row.len() as u32).filter(|&i| row[i as usize].is_finite()).collect();
    idx.sort_by(|&a, &b| row[b as usize].total_cmp(&row[a as usize]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.into_iter().map(|i| (i, row[i as usize])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Constraint, ConstraintSet};

    fn tiny_corpus() -> Corpus {
        let t = |s: &str, m: &str, p: &str| Triplet::new(0, Sentence::from_text(s), Sentence::from_text(m), Sentence::from_text(p));
        Corpus::new(
            "tiny",
            vec![
                t("s1 s2", "t1 t9", "t1 t2").with_constraints(ConstraintSet::new(vec![
                    Constraint::from_text("s2", "t2").unwrap(),
                ])),
                t("s3", "t3 t3", "t3"),
                t("s4 s1", "t4", "t4 t1"),
            ],
        )
    }

    fn small_config(variant: EncodeMethod) -> MstConfig {
        MstConfig {
            model: ModelConfig {
                d_model: 32,
                ffn_dim: 64,
                max_len: 32,
                dropout: 0.0,
                ..ModelConfig::default()
            },
            variant,
        }
    }

    #[test]
    fn initial_loss_is_near_log_vocab() {
        let c = tiny_corpus();
        let codec = Codec::build(&[&c], None);
        let v = codec.vocab.len() as f32;
        let m = MstModel::build(small_config(EncodeMethod::Append), codec).unwrap();
        let ex = m.examples(&c).unwrap();
        let refs: Vec<&MstExample> = ex.iter().collect();
        let l = m.loss(&refs, 0.0, &Ctx::eval()).unwrap().to_scalar::<f32>().unwrap();
        assert!((l - v.ln()).abs() < 0.1 * v.ln(), "{l} vs {}", v.ln());
    }

    #[test]
    fn beam_one_is_greedy_and_empty_mt_decodes() {
        let c = tiny_corpus();
        let m = MstModel::build(small_config(EncodeMethod::Plain), Codec::build(&[&c], None)).unwrap();
        let mut ex = m.examples(&c).unwrap();
        ex[1].mt = FactoredIds {
            ids: vec![],
            factors: vec![],
        };
        let refs: Vec<&MstExample> = ex.iter().collect();
        let g = m.greedy_decode(&refs, 6).unwrap();
        let b = m.beam_decode(&refs, 1, 6).unwrap();
        for (x, y) in g.iter().zip(&b) {
            assert_eq!(x.ids, y.ids);
            assert_eq!(x.truncated, y.truncated);
        }
        let b4 = m.beam_decode(&refs, 4, 6).unwrap();
        assert_eq!(b4.len(), 3);
    }

    #[test]
    fn same_seed_same_parameters() {
        let c = tiny_corpus();
        let a = MstModel::build(small_config(EncodeMethod::Append), Codec::build(&[&c], None)).unwrap();
        let b = MstModel::build(small_config(EncodeMethod::Append), Codec::build(&[&c], None)).unwrap();
        assert_eq!(a.ps.export().unwrap(), b.ps.export().unwrap());
    }

    #[test]
    fn checkpoint_roundtrip_and_kind_check() {
        let c = tiny_corpus();
        let mut m = MstModel::build(small_config(EncodeMethod::Replace), Codec::build(&[&c], None)).unwrap();
        let ex = m.examples(&c).unwrap();
        let cfg = TrainConfig {
            steps: 5,
            warmup: 2,
            log_every: 1,
            ..TrainConfig::default()
        };
        m.train(&ex, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        m.save(&p).unwrap();
        let back = MstModel::load(&p).unwrap();
        assert_eq!(back.train_steps(), 5);
        assert_eq!(m.postedit(&c, 2, 2).unwrap(), back.postedit(&c, 2, 2).unwrap());
    }
}
