//! The Levenshtein Transformer: a non-causal decoder over the current edit
//! state with deletion, placeholder-insertion and fill heads.

use std::path::Path;

use candle_core::{Tensor, D};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::oracle::{
    apply_deletions, apply_fills, apply_insertions, init_state, oracle_edits, trace_line, EditState, InitStrategy,
};
use crate::corpus::{Corpus, Sentence, Token, Triplet};
use crate::encode::{encode_mt, encode_source, EncodeMethod};
use crate::error::{ApeError, Result};
use crate::nn::checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, FORMAT_VERSION};
use crate::nn::layers::{Ctx, Linear};
use crate::nn::params::{ParamData, ParamStore};
use crate::nn::vocab::{NUM_SPECIAL, PLH_ID};
use crate::nn::{
    gather_rows, smoothed_cross_entropy, Codec, DecoderStack, FactoredBatch, FactoredIds, Memory, ModelConfig,
    SeqBatch, SourceEncoders, Stepper, TargetEmbedding, TrainConfig, TrainState,
};

pub const CHECKPOINT_KIND: &str = "levt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LevtConfig {
    pub model: ModelConfig,
    /// Encoding of the source sequence.
    pub variant: EncodeMethod,
    /// Separate encoders for source and MT; otherwise the MT only seeds the
    /// decoder.
    pub multi_source: bool,
    pub max_iterations: usize,
    pub max_insert_per_slot: usize,
    pub init_strategy: InitStrategy,
    pub protect_constraints: bool,
    /// Subtracted from the zero-insertion logit of every slot at decoding
    /// time; positive values counter under-generation.
    pub empty_slot_penalty: f32,
}

impl Default for LevtConfig {
    fn default() -> Self {
        LevtConfig {
            model: ModelConfig::default(),
            variant: EncodeMethod::Plain,
            multi_source: false,
            max_iterations: 10,
            max_insert_per_slot: 16,
            init_strategy: InitStrategy::Mt,
            protect_constraints: false,
            empty_slot_penalty: 0.0,
        }
    }
}

impl LevtConfig {
    /// Single encoder over the annotated source, decoder seeded with MT.
    pub fn single_source(variant: EncodeMethod) -> Self {
        LevtConfig {
            variant,
            ..LevtConfig::default()
        }
    }

    /// Source and MT encoders, decoder seeded with ordered constraints.
    pub fn multi_source() -> Self {
        LevtConfig {
            multi_source: true,
            init_strategy: InitStrategy::Constraints,
            ..LevtConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !self.empty_slot_penalty.is_finite() {
            return Err(ApeError::Config("empty_slot_penalty must be finite".into()));
        }
        if self.max_iterations == 0 || self.max_insert_per_slot == 0 {
            return Err(ApeError::Config(
                "max_iterations and max_insert_per_slot must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevtExample {
    pub src: FactoredIds,
    pub mt: Option<FactoredIds>,
    pub init: EditState<u32>,
    /// Reference ids without sentinels; empty when decoding.
    pub pe: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutput {
    pub sentence: Sentence,
    pub ids: Vec<u32>,
    pub iterations: usize,
    /// One line per phase per iteration when tracing was requested.
    pub trace: Vec<String>,
}

pub struct LevtModel {
    config: LevtConfig,
    codec: Codec,
    ps: ParamStore,
    encoders: SourceEncoders,
    embed: TargetEmbedding,
    decoder: DecoderStack,
    del_head: Linear,
    ins_head: Linear,
    fill_head: Linear,
    train_steps: usize,
}

/// Per-head logits over the rows they were requested for.
struct HeadRows {
    rows: Vec<u32>,
    pairs: (Vec<u32>, Vec<u32>),
}

impl LevtModel {
    pub fn build(config: LevtConfig, codec: Codec) -> Result<Self> {
        config.validate()?;
        if codec.vocab.is_empty() {
            return Err(ApeError::Config("vocabulary has no words".into()));
        }
        let cfg = &config.model;
        let v = codec.vocab.len();
        let mut ps = ParamStore::new(cfg.seed);
        let encoders = SourceEncoders::new(&mut ps, cfg, v, config.multi_source)?;
        let embed = TargetEmbedding::new(&mut ps, cfg, v)?;
        let decoder = DecoderStack::new(&mut ps, "decoder", cfg)?;
        let d = cfg.d_model;
        let del_head = Linear::with_std(&mut ps, "head.delete", d, 2, 0.01)?;
        let ins_head = Linear::with_std(&mut ps, "head.insert", 2 * d, config.max_insert_per_slot + 1, 0.01)?;
        let fill_head = Linear::with_std(&mut ps, "head.fill", d, v, 0.01)?;
        Ok(LevtModel {
            config,
            codec,
            ps,
            encoders,
            embed,
            decoder,
            del_head,
            ins_head,
            fill_head,
            train_steps: 0,
        })
    }

    pub fn config(&self) -> &LevtConfig {
        &self.config
    }

    pub fn codec(&self) -> &Codec {
        &self.codec
    }

    pub fn train_steps(&self) -> usize {
        self.train_steps
    }

    /// Overrides the decoding-time initialisation and protection.
    pub fn set_decoding(&mut self, init: InitStrategy, protect_constraints: bool) {
        self.config.init_strategy = init;
        self.config.protect_constraints = protect_constraints;
    }

    pub fn set_empty_slot_penalty(&mut self, penalty: f32) {
        self.config.empty_slot_penalty = penalty;
    }

    /// Maps a token state to ids, segmenting each token and copying its
    /// anchor to every piece. Inner tokens beyond `max_len` are dropped.
    fn state_ids(&self, state: &EditState<Token>) -> EditState<u32> {
        let mut inner = Vec::new();
        let mut anchors = Vec::new();
        for (tok, anchor) in state.inner().iter().zip(&state.anchors[1..state.len() - 1]) {
            for id in self.codec.target_ids(&Sentence(vec![tok.clone()])) {
                inner.push(id);
                anchors.push(*anchor);
            }
        }
        inner.truncate(self.config.model.max_len - 2);
        anchors.truncate(inner.len());
        let mut s = EditState::from_inner(inner);
        let n = s.len();
        s.anchors[1..n - 1].copy_from_slice(&anchors);
        s
    }

    pub fn example(&self, t: &Triplet) -> Result<LevtExample> {
        self.example_with_init(t, self.config.init_strategy)
    }

    pub fn example_with_init(&self, t: &Triplet, init: InitStrategy) -> Result<LevtExample> {
        let max_len = self.config.model.max_len;
        let x = encode_source(&t.src, &t.constraints, self.config.variant);
        let mt = if self.config.multi_source {
            Some(self.codec.source_ids(&encode_mt(&t.mt), max_len)?)
        } else {
            None
        };
        let state = init_state(init, Some(&t.mt), Some(&t.constraints), Some(&t.src))?;
        let mut pe = self.codec.target_ids(&t.pe);
        pe.truncate(max_len - 2);
        Ok(LevtExample {
            src: self.codec.source_ids(&x, max_len)?,
            mt,
            init: self.state_ids(&state),
            pe,
        })
    }

    pub fn examples(&self, corpus: &Corpus) -> Result<Vec<LevtExample>> {
        corpus.iter().map(|t| self.example(t)).collect()
    }

    fn encode(&self, batch: &[&LevtExample], ctx: &Ctx) -> Result<Memory> {
        let dev = self.ps.device();
        let src: Vec<&FactoredIds> = batch.iter().map(|e| &e.src).collect();
        let src = FactoredBatch::new(&src, dev)?;
        if self.config.multi_source {
            let mt = batch
                .iter()
                .map(|e| {
                    e.mt.as_ref()
                        .ok_or_else(|| ApeError::Argument("multi-source example lacks MT".into()))
                })
                .collect::<Result<Vec<_>>>()?;
            let mt = FactoredBatch::new(&mt, dev)?;
            self.encoders.encode(&src, Some(&mt), ctx)
        } else {
            self.encoders.encode(&src, None, ctx)
        }
    }

    /// Decoder states for the given token sequences (sentinels included).
    fn states(&self, seqs: &[Vec<u32>], memory: &Memory, ctx: &Ctx) -> Result<(Tensor, usize)> {
        let batch = SeqBatch::new(seqs, self.ps.device())?;
        let x = ctx.dropout(&self.embed.forward(&batch.ids)?)?;
        let h = self.decoder.forward(&x, &batch.valid, false, memory, ctx)?;
        Ok((h, batch.width()))
    }

    fn delete_logits(&self, h: &Tensor, rows: &[u32]) -> Result<Tensor> {
        self.del_head.forward(&gather_rows(h, rows)?)
    }

    fn insert_logits(&self, h: &Tensor, left: &[u32], right: &[u32]) -> Result<Tensor> {
        let pair = Tensor::cat(&[gather_rows(h, left)?, gather_rows(h, right)?], D::Minus1)?;
        self.ins_head.forward(&pair)
    }

    fn fill_logits(&self, h: &Tensor, rows: &[u32]) -> Result<Tensor> {
        self.fill_head.forward(&gather_rows(h, rows)?)
    }

    /// Rows of every inner token and every adjacent pair.
    fn head_rows(seqs: &[Vec<u32>], width: usize) -> HeadRows {
        let mut rows = Vec::new();
        let mut left = Vec::new();
        let mut right = Vec::new();
        for (b, s) in seqs.iter().enumerate() {
            let base = (b * width) as u32;
            rows.extend((1..s.len() - 1).map(|i| base + i as u32));
            left.extend((0..s.len() - 1).map(|i| base + i as u32));
            right.extend((1..s.len()).map(|i| base + i as u32));
        }
        HeadRows {
            rows,
            pairs: (left, right),
        }
    }

    fn placeholder_rows(seqs: &[Vec<u32>], width: usize) -> Vec<u32> {
        let mut rows = Vec::new();
        for (b, s) in seqs.iter().enumerate() {
            for (i, &t) in s.iter().enumerate() {
                if t == PLH_ID {
                    rows.push((b * width + i) as u32);
                }
            }
        }
        rows
    }

    /// Oracle insertion targets for a state that only needs insertions,
    /// with each slot clamped to the head's range. Returns the counts and
    /// the fills that survive clamping.
    fn clamped_insertions(&self, inner: &[u32], reference: &[u32]) -> (Vec<usize>, Vec<u32>) {
        let acts = oracle_edits(inner, reference);
        let cap = self.config.max_insert_per_slot;
        let mut fills = Vec::with_capacity(acts.fills.len());
        let mut it = acts.fills.into_iter();
        let counts = acts
            .insert_counts
            .iter()
            .map(|&c| {
                let keep = c.min(cap);
                for (k, f) in it.by_ref().take(c).enumerate() {
                    if k < keep {
                        fills.push(f);
                    }
                }
                keep
            })
            .collect();
        (counts, fills)
    }

    /// Roll-in state for the insertion heads: the reference with tokens
    /// dropped at random, or the initial state after oracle deletions.
    fn insertion_rollin(&self, e: &LevtExample, rng: &mut ChaCha8Rng) -> Result<EditState<u32>> {
        if rng.random_bool(0.5) {
            let kept: Vec<u32> = e.pe.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
            Ok(EditState::from_inner(kept))
        } else {
            let acts = oracle_edits(e.init.inner(), &e.pe);
            apply_deletions(&e.init, &acts.deletions)
        }
    }

    /// Joint loss of the three heads on one batch. With `allow_own_output`
    /// half of the deletion roll-ins come from the model's own insertions
    /// and fills.
    fn loss(
        &self,
        batch: &[&LevtExample],
        ctx: &Ctx,
        rng: &mut ChaCha8Rng,
        allow_own_output: bool,
        label_smoothing: f64,
    ) -> Result<Tensor> {
        let memory = self.encode(batch, ctx)?;
        let max_len = self.config.model.max_len;

        // Insertion and fill targets.
        let mut ins_in = Vec::with_capacity(batch.len());
        let mut ins_targets = Vec::new();
        let mut fill_in = Vec::with_capacity(batch.len());
        let mut fill_targets = Vec::new();
        for e in batch {
            let s = self.insertion_rollin(e, rng)?;
            let (counts, fills) = self.clamped_insertions(s.inner(), &e.pe);
            ins_targets.extend(counts.iter().map(|&c| c as u32));
            fill_in.push(apply_insertions(&s, &counts)?.tokens);
            fill_targets.extend(fills);
            ins_in.push(s.tokens);
        }
        let (h_ins, w_ins) = self.states(&ins_in, &memory, ctx)?;
        let hr = Self::head_rows(&ins_in, w_ins);
        let ins_logits = self.insert_logits(&h_ins, &hr.pairs.0, &hr.pairs.1)?;
        let mut total = smoothed_cross_entropy(&ins_logits, &ins_targets, 0.0)?;

        if !fill_targets.is_empty() {
            let (h_fill, w_fill) = self.states(&fill_in, &memory, ctx)?;
            let rows = Self::placeholder_rows(&fill_in, w_fill);
            let logits = self.fill_logits(&h_fill, &rows)?;
            total = (total + smoothed_cross_entropy(&logits, &fill_targets, label_smoothing)?)?;
        }

        // Deletion roll-in: the model's own insertion output, or the init.
        let use_own: Vec<bool> = batch.iter().map(|_| allow_own_output && rng.random_bool(0.5)).collect();
        let mut del_in: Vec<Vec<u32>> = batch.iter().map(|e| e.init.tokens.clone()).collect();
        if use_own.iter().any(|&u| u) {
            let predicted = argmax_rows(&ins_logits.detach().to_vec2::<f32>()?, 0);
            let mut offset = 0;
            let mut own: Vec<(usize, EditState<u32>)> = Vec::new();
            for (b, s) in ins_in.iter().enumerate() {
                let slots = s.len() - 1;
                if use_own[b] {
                    let mut counts: Vec<usize> = predicted[offset..offset + slots].iter().map(|&c| c as usize).collect();
                    cap_total(&mut counts, s.len(), max_len);
                    own.push((b, apply_insertions(&EditState::from_inner(s[1..s.len() - 1].to_vec()), &counts)?));
                }
                offset += slots;
            }
            let seqs: Vec<Vec<u32>> = own.iter().map(|(_, s)| s.tokens.clone()).collect();
            let eval = Ctx::eval();
            let (h, w) = self.states(&seqs, &memory.select(&own.iter().map(|(b, _)| *b).collect::<Vec<_>>())?, &eval)?;
            let rows = Self::placeholder_rows(&seqs, w);
            let fills = if rows.is_empty() {
                Vec::new()
            } else {
                argmax_rows(&self.fill_logits(&h, &rows)?.to_vec2::<f32>()?, NUM_SPECIAL)
            };
            let mut it = fills.into_iter();
            for (b, s) in own {
                let n = s.tokens.iter().filter(|&&t| t == PLH_ID).count();
                let f: Vec<u32> = it.by_ref().take(n).collect();
                del_in[b] = apply_fills(&s, &f)?.tokens;
            }
        }
        let mut del_rows = Vec::new();
        let mut del_targets = Vec::new();
        let (h_del, w_del) = self.states(&del_in, &memory, ctx)?;
        for (b, (s, e)) in del_in.iter().zip(batch).enumerate() {
            let acts = oracle_edits(&s[1..s.len() - 1], &e.pe);
            for i in 1..s.len() - 1 {
                del_rows.push((b * w_del + i) as u32);
                del_targets.push(u32::from(acts.deletions[i]));
            }
        }
        if !del_rows.is_empty() {
            let logits = self.delete_logits(&h_del, &del_rows)?;
            total = (total + smoothed_cross_entropy(&logits, &del_targets, 0.0)?)?;
        }
        Ok(total)
    }

    /// Imitation training. After the schedule's warmup the deletion roll-in
    /// mixes in the model's own insertion output.
    pub fn train(&mut self, data: &[LevtExample], cfg: &TrainConfig) -> Result<TrainState> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(ApeError::Argument("empty training set".into()));
        }
        let mut stepper = Stepper::new(&self.ps, cfg, self.train_steps)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = Vec::new();
        let take = cfg.batch_size.min(data.len());
        for _ in 0..cfg.steps {
            if order.len() < take {
                let mut fresh: Vec<usize> = (0..data.len()).collect();
                fresh.shuffle(&mut rng);
                order.extend(fresh);
            }
            let batch: Vec<&LevtExample> = order.drain(..take).map(|i| &data[i]).collect();
            let step = stepper.step_index();
            let ctx = Ctx::train(self.config.model.dropout, cfg.seed ^ (step as u64).wrapping_mul(0x9E37_79B9));
            let loss = self.loss(&batch, &ctx, &mut rng, step >= cfg.warmup, cfg.label_smoothing)?;
            stepper.apply(&loss)?;
        }
        self.train_steps = stepper.step_index();
        Ok(stepper.state)
    }

    fn render(&self, tokens: &[u32]) -> Vec<String> {
        tokens.iter().map(|&t| self.codec.vocab.word(t).to_string()).collect()
    }

    /// Iterative refinement of a batch from each example's initial state.
    pub fn refine(&self, batch: &[&LevtExample], trace: bool) -> Result<Vec<RefineOutput>> {
        let ctx = Ctx::eval();
        let memory = self.encode(batch, &ctx)?;
        let max_len = self.config.model.max_len;
        let protect = self.config.protect_constraints;
        let mut states: Vec<EditState<u32>> = batch.iter().map(|e| e.init.clone()).collect();
        let mut active: Vec<usize> = (0..batch.len()).collect();
        let mut traces: Vec<Vec<String>> = vec![Vec::new(); batch.len()];
        for iter in 0..self.config.max_iterations {
            if active.is_empty() {
                break;
            }
            let mem = memory.select(&active)?;
            let before: Vec<Vec<u32>> = active.iter().map(|&b| states[b].tokens.clone()).collect();

            // Deletion.
            let (h, w) = self.states(&before, &mem, &ctx)?;
            let hr = Self::head_rows(&before, w);
            let del = self.delete_logits(&h, &hr.rows)?.to_vec2::<f32>()?;
            let mut offset = 0;
            for &b in &active {
                let s = &states[b];
                let mut flags = vec![false; s.len()];
                for i in 1..s.len() - 1 {
                    let row = &del[offset + i - 1];
                    flags[i] = row[1] > row[0] && !(protect && s.anchors[i].is_some());
                }
                offset += s.len() - 2;
                states[b] = apply_deletions(s, &flags)?;
                if trace {
                    traces[b].push(trace_line(iter, "delete", &self.render(&states[b].tokens)));
                }
            }

            // Placeholder insertion.
            let seqs: Vec<Vec<u32>> = active.iter().map(|&b| states[b].tokens.clone()).collect();
            let (h, w) = self.states(&seqs, &mem, &ctx)?;
            let hr = Self::head_rows(&seqs, w);
            let mut ins = self.insert_logits(&h, &hr.pairs.0, &hr.pairs.1)?.to_vec2::<f32>()?;
            for row in &mut ins {
                row[0] -= self.config.empty_slot_penalty;
            }
            let predicted = argmax_rows(&ins, 0);
            let mut offset = 0;
            for &b in &active {
                let s = &states[b];
                let slots = s.len() - 1;
                let mut counts: Vec<usize> = predicted[offset..offset + slots].iter().map(|&c| c as usize).collect();
                offset += slots;
                if protect {
                    for (k, c) in counts.iter_mut().enumerate() {
                        if s.anchors[k].is_some() && s.anchors[k] == s.anchors[k + 1] {
                            *c = 0;
                        }
                    }
                }
                cap_total(&mut counts, s.len(), max_len);
                states[b] = apply_insertions(s, &counts)?;
                if trace {
                    traces[b].push(trace_line(iter, "insert", &self.render(&states[b].tokens)));
                }
            }

            // Fill.
            let seqs: Vec<Vec<u32>> = active.iter().map(|&b| states[b].tokens.clone()).collect();
            let (h, w) = self.states(&seqs, &mem, &ctx)?;
            let rows = Self::placeholder_rows(&seqs, w);
            let fills = if rows.is_empty() {
                Vec::new()
            } else {
                argmax_rows(&self.fill_logits(&h, &rows)?.to_vec2::<f32>()?, NUM_SPECIAL)
            };
            let mut it = fills.into_iter();
            for &b in &active {
                let n = states[b].tokens.iter().filter(|&&t| t == PLH_ID).count();
                let f: Vec<u32> = it.by_ref().take(n).collect();
                let mut next = apply_fills(&states[b], &f)?;
                next.iteration += 1;
                states[b] = next;
                if trace {
                    traces[b].push(trace_line(iter, "fill", &self.render(&states[b].tokens)));
                }
            }

            let mut still = Vec::with_capacity(active.len());
            for (k, &b) in active.iter().enumerate() {
                if states[b].tokens != before[k] {
                    still.push(b);
                }
            }
            active = still;
        }
        Ok(states
            .into_iter()
            .zip(traces)
            .map(|(s, trace)| RefineOutput {
                sentence: self.codec.decode(s.inner()),
                ids: s.inner().to_vec(),
                iterations: s.iteration,
                trace,
            })
            .collect())
    }

    /// Post-edits a corpus from the configured initial state.
    pub fn postedit(&self, corpus: &Corpus, batch_size: usize) -> Result<Vec<Sentence>> {
        Ok(self
            .postedit_full(corpus, batch_size, false)?
            .into_iter()
            .map(|r| r.sentence)
            .collect())
    }

    /// Like [`LevtModel::postedit`] but keeps iteration counts and, when
    /// `trace` is set, the per-phase edit trace.
    pub fn postedit_full(&self, corpus: &Corpus, batch_size: usize, trace: bool) -> Result<Vec<RefineOutput>> {
        let examples = self.examples(corpus)?;
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(batch_size.max(1)) {
            let refs: Vec<&LevtExample> = chunk.iter().collect();
            out.extend(self.refine(&refs, trace)?);
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
        LevtModel::from_checkpoint(manifest, &params)
    }

    pub fn from_checkpoint(manifest: CheckpointManifest, params: &[ParamData]) -> Result<Self> {
        if manifest.kind != CHECKPOINT_KIND {
            return Err(ApeError::Checkpoint(format!(
                "expected a {CHECKPOINT_KIND} checkpoint, found {:?}",
                manifest.kind
            )));
        }
        let config: LevtConfig = serde_json::from_value(manifest.config)?;
        let codec = Codec::from_parts(manifest.vocab, manifest.bpe_merges)?;
        let mut model = LevtModel::build(config, codec)?;
        model.ps.import(params)?;
        model.train_steps = manifest.train_steps;
        Ok(model)
    }
}

/// Argmax per row over columns `from..`; ties go to the lowest index.
fn argmax_rows(rows: &[Vec<f32>], from: u32) -> Vec<u32> {
    rows.iter()
        .map(|r| {
            let mut best = from;
            for i in from as usize..r.len() {
                if r[i] > r[best as usize] {
                    best = i as u32;
                }
            }
            best
        })
        .collect()
}

/// Shrinks insertion counts from the right until the state after
/// insertion fits in `max_len` tokens.
fn cap_total(counts: &mut [usize], len: usize, max_len: usize) {
    let mut excess = (len + counts.iter().sum::<usize>()).saturating_sub(max_len);
    for c in counts.iter_mut().rev() {
        if excess == 0 {
            break;
        }
        let cut = (*c).min(excess);
        *c -= cut;
        excess -= cut;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Constraint, ConstraintSet};

    fn corpus() -> Corpus {
        let t = |s: &str, m: &str, p: &str| {
            Triplet::new(0, Sentence::from_text(s), Sentence::from_text(m), Sentence::from_text(p))
        };
        Corpus::new(
            "tiny",
            vec![
                t("s1 s2 s3", "t1 t9 t3", "t1 t2 t3").with_constraints(ConstraintSet::new(vec![
                    Constraint::from_text("s2 s3", "t2 t3").unwrap(),
                    Constraint::from_text("s1", "t1").unwrap(),
                ])),
                t("s4", "t4 t4", "t4"),
            ],
        )
    }

    fn small(mut cfg: LevtConfig) -> LevtConfig {
        cfg.model = ModelConfig {
            d_model: 32,
            ffn_dim: 64,
            max_len: 24,
            dropout: 0.0,
            ..ModelConfig::default()
        };
        cfg.max_insert_per_slot = 4;
        cfg
    }

    /// Zeroes the head weights and sets the biases so every head makes a
    /// fixed decision.
    fn force_heads(m: &LevtModel, delete: bool, insert: usize) {
        let mut params = m.ps.export().unwrap();
        for (name, _, data) in &mut params {
            match name.as_str() {
                "head.delete.weight" | "head.insert.weight" => data.iter_mut().for_each(|v| *v = 0.0),
                "head.delete.bias" => {
                    data[0] = if delete { -10.0 } else { 10.0 };
                    data[1] = -data[0];
                }
                "head.insert.bias" => {
                    for (i, v) in data.iter_mut().enumerate() {
                        *v = if i == insert { 10.0 } else { -10.0 };
                    }
                }
                _ => {}
            }
        }
        m.ps.import(&params).unwrap();
    }

    #[test]
    fn noop_heads_return_init_after_one_iteration() {
        let c = corpus();
        let m = LevtModel::build(small(LevtConfig::default()), Codec::build(&[&c], None)).unwrap();
        force_heads(&m, false, 0);
        let ex = m.examples(&c).unwrap();
        let refs: Vec<&LevtExample> = ex.iter().collect();
        let out = m.refine(&refs, true).unwrap();
        assert_eq!(out[0].sentence.to_string(), "t1 t9 t3");
        assert_eq!(out[1].sentence.to_string(), "t4 t4");
        assert_eq!(out[0].iterations, 1);
        assert_eq!(out[0].trace.len(), 3);
        assert!(out[0].trace[0].starts_with("iter=0 delete: <s> t1"));
    }

    #[test]
    fn protection_keeps_constraints_under_hostile_heads() {
        let c = corpus();
        let mut cfg = small(LevtConfig::multi_source());
        cfg.protect_constraints = true;
        let m = LevtModel::build(cfg, Codec::build(&[&c], None)).unwrap();
        force_heads(&m, true, 3);
        let out = m.postedit(&c, 2).unwrap();
        assert!(out[0].contains_phrase(Sentence::from_text("t2 t3").tokens()), "{}", out[0]);
        assert!(out[0].contains_phrase(Sentence::from_text("t1").tokens()));
        assert!(out[0].len() <= 22);
    }

    #[test]
    fn empty_slot_penalty_overrides_a_zero_insertion_head() {
        let c = corpus();
        let mut m = LevtModel::build(small(LevtConfig::default()), Codec::build(&[&c], None)).unwrap();
        force_heads(&m, false, 0);
        m.set_empty_slot_penalty(30.0);
        let ex = m.examples(&c).unwrap();
        let out = m.refine(&[&ex[1]], true).unwrap();
        assert_eq!(out[0].trace[1], "iter=0 insert: <s> <plh> t4 <plh> t4 <plh> </s>");
        let mut bad = small(LevtConfig::default());
        bad.empty_slot_penalty = f32::NAN;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn clamped_insertions_drop_overflowing_fills() {
        let c = corpus();
        let m = LevtModel::build(small(LevtConfig::default()), Codec::build(&[&c], None)).unwrap();
        let (counts, fills) = m.clamped_insertions(&[7], &[1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(counts, [4, 1]);
        assert_eq!(fills, [1, 2, 3, 4, 8]);
    }

    #[test]
    fn training_runs_and_checkpoint_roundtrips() {
        let c = corpus();
        let mut m = LevtModel::build(small(LevtConfig::multi_source()), Codec::build(&[&c], None)).unwrap();
        let ex = m.examples(&c).unwrap();
        let cfg = TrainConfig {
            steps: 4,
            warmup: 2,
            log_every: 2,
            ..TrainConfig::default()
        };
        let st = m.train(&ex, &cfg).unwrap();
        assert_eq!(st.losses.len(), 2);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.ckpt");
        m.save(&p).unwrap();
        let back = LevtModel::load(&p).unwrap();
        assert_eq!(m.postedit(&c, 2).unwrap(), back.postedit(&c, 2).unwrap());
        assert!(crate::mst::MstModel::load(&p).is_err());
    }
}
