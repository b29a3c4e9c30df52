use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use log::info;
use serde::{Deserialize, Serialize};
use termape::augment::{
    augment_corpus, build_probe_set, count_augmentations, load_relations, save_relations, ProbeKind, Relation,
};
use termape::corpus::{join, load_corpus_dir, read_constraints, read_sentences, save_corpus_dir, write_sentences};
use termape::encode::encode_source;
use termape::error::ApeError;
use termape::evalsuite::evaluate as score;
use termape::levt::InitStrategy;
use termape::pipeline::{
    file_digest, format_table, run_cascade, run_schedule, ApeModel, CascadeInputs, CascadeSpec, DecodeOptions,
    FileDigest, ModelKind, Schedule, TrainVariant,
};
use termape::subword::{bpe_restore, BpeModel};
use termape::synthgen::{gen_cascade_testset, NoiseConfig, SynthConfig};
use termape::termmine::{subsample_constraints, IdentityStemmer, Stemmer, StopList, SuffixStemmer, TermDictionary, TermMiner};
use termape::{Corpus, EncodeMethod, ModelConfig, TrainConfig};

use crate::config::{required, resolve, write_resolved};

fn cfg_err(msg: impl Into<String>) -> anyhow::Error {
    ApeError::Config(msg.into()).into()
}

/// `<path>.config.toml`, the resolved-config companion of a file output.
fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".config.toml");
    path.with_file_name(name)
}

fn parent_dir(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| ApeError::io(dir, e))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    parent_dir(path)?;
    fs::write(path, text).map_err(|e| ApeError::io(path, e))?;
    Ok(())
}

fn load_dir(dir: &Path) -> anyhow::Result<Corpus> {
    let name = dir.file_name().map_or_else(|| "corpus".into(), |n| n.to_string_lossy().into_owned());
    Ok(load_corpus_dir(&name, dir)?)
}

/// Replaces the constraint column. A file without any record means "no
/// terminology": every triplet gets an empty set.
fn override_constraints(corpus: Corpus, path: Option<&Path>) -> anyhow::Result<Corpus> {
    let Some(path) = path else { return Ok(corpus) };
    let sets = read_constraints(path)?;
    if sets.is_empty() {
        let n = corpus.len();
        return Ok(corpus.with_constraint_sets(vec![Default::default(); n])?);
    }
    if sets.len() != corpus.len() {
        return Err(ApeError::Alignment {
            path: path.to_path_buf(),
            expected: corpus.len(),
            found: sets.len(),
        }
        .into());
    }
    Ok(corpus.with_constraint_sets(sets)?)
}

fn parse<T: std::str::FromStr<Err = ApeError>>(s: &str) -> anyhow::Result<T> {
    s.parse::<T>().map_err(|e| cfg_err(e.to_string()))
}

// gen-synthetic

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSyntheticArgs {
    /// Output directory (train/, test/, dictionary.tsv, relations.tsv, lexicon.json, manifest.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of source words in the lexicon [default: 200].
    #[arg(long)]
    pub lexicon_size: Option<usize>,
    /// Fraction of source words with several target variants [default: 0.5].
    #[arg(long)]
    pub ambiguous_fraction: Option<f64>,
    /// Training triplets [default: 20000].
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Test triplets [default: 1000].
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Minimum sentence length [default: 3].
    #[arg(long)]
    pub len_min: Option<usize>,
    /// Maximum sentence length [default: 10].
    #[arg(long)]
    pub len_max: Option<usize>,
    /// MT substitution rate per word [default: 0.1].
    #[arg(long)]
    pub sub_rate: Option<f64>,
    /// MT deletion rate per word [default: 0.05].
    #[arg(long)]
    pub del_rate: Option<f64>,
    /// MT insertion rate per word [default: 0.05].
    #[arg(long)]
    pub ins_rate: Option<f64>,
    /// Probability that an ambiguous word carries a constraint [default: 0.25].
    #[arg(long)]
    pub constraint_rate: Option<f64>,
    /// Random seed [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write cascade/: a test set with plain and constrained MT where
    /// this fraction of constraints deviates from the sentence style.
    #[arg(long)]
    pub cascade_deviate: Option<f64>,
}

pub fn gen_synthetic(flags: GenSyntheticArgs, file: Option<&Path>) -> anyhow::Result<()> {
    let d = SynthConfig::default();
    let defaults = GenSyntheticArgs {
        out: None,
        lexicon_size: Some(d.lexicon_size),
        ambiguous_fraction: Some(d.ambiguous_fraction),
        n_train: Some(d.n_train),
        n_test: Some(d.n_test),
        len_min: Some(d.len_min),
        len_max: Some(d.len_max),
        sub_rate: Some(d.noise.sub_rate),
        del_rate: Some(d.noise.del_rate),
        ins_rate: Some(d.noise.ins_rate),
        constraint_rate: Some(d.constraint_rate),
        seed: Some(d.seed),
        cascade_deviate: None,
    };
    let a = resolve(defaults, file, &flags)?;
    let out = required(&a.out, "out")?;
    let cfg = SynthConfig {
        lexicon_size: required(&a.lexicon_size, "lexicon_size")?,
        ambiguous_fraction: required(&a.ambiguous_fraction, "ambiguous_fraction")?,
        n_train: required(&a.n_train, "n_train")?,
        n_test: required(&a.n_test, "n_test")?,
        len_min: required(&a.len_min, "len_min")?,
        len_max: required(&a.len_max, "len_max")?,
        noise: NoiseConfig {
            sub_rate: required(&a.sub_rate, "sub_rate")?,
            del_rate: required(&a.del_rate, "del_rate")?,
            ins_rate: required(&a.ins_rate, "ins_rate")?,
        },
        constraint_rate: required(&a.constraint_rate, "constraint_rate")?,
        seed: required(&a.seed, "seed")?,
    };
    let data = cfg.generate()?;
    save_corpus_dir(&data.train, out.join("train"))?;
    save_corpus_dir(&data.test, out.join("test"))?;
    data.lexicon.to_dictionary().save(out.join("dictionary.tsv"))?;
    let (syn, ant) = data.lexicon.relations(cfg.seed);
    save_relations(&[syn, ant], out.join("relations.tsv"))?;
    write_text(&out.join("lexicon.json"), &serde_json::to_string_pretty(&data.lexicon)?)?;
    let mut files = vec![
        "train/corpus.src",
        "train/corpus.mt",
        "train/corpus.pe",
        "train/corpus.constraints.jsonl",
        "test/corpus.src",
        "test/corpus.mt",
        "test/corpus.pe",
        "test/corpus.constraints.jsonl",
        "dictionary.tsv",
        "relations.tsv",
        "lexicon.json",
    ];
    if let Some(dev) = a.cascade_deviate {
        let cas = gen_cascade_testset(
            &data.lexicon,
            cfg.n_test,
            cfg.len_range(),
            &cfg.noise,
            cfg.constraint_rate,
            dev,
            cfg.test_seed(),
        )?;
        save_corpus_dir(&cas.corpus, out.join("cascade"))?;
        write_sentences(out.join("cascade/constrained.mt"), &cas.constrained_mt)?;
        files.extend([
            "cascade/corpus.src",
            "cascade/corpus.mt",
            "cascade/corpus.pe",
            "cascade/corpus.constraints.jsonl",
            "cascade/constrained.mt",
        ]);
    }
    let digests: Vec<FileDigest> = files
        .iter()
        .map(|f| {
            let mut d = file_digest(out.join(f))?;
            d.path = PathBuf::from(f);
            Ok(d)
        })
        .collect::<anyhow::Result<_>>()?;
    let manifest = serde_json::json!({ "synth": cfg, "files": digests });
    write_text(&out.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)?;
    write_resolved(&a, &out.join("config.toml"))?;
    info!(
        "wrote {} train / {} test triplets to {}",
        data.train.len(),
        data.test.len(),
        out.display()
    );
    Ok(())
}

// mine-terms

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MineTermsArgs {
    /// Corpus directory (corpus.src, corpus.mt, corpus.pe).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Bilingual dictionary TSV (source phrase, target phrase).
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    /// Output constraint JSONL.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Stop words: builtin or none [default: builtin].
    #[arg(long)]
    pub stoplist: Option<String>,
    /// Extra source-side stop words, one per line.
    #[arg(long)]
    pub src_stop_words: Option<PathBuf>,
    /// Extra target-side stop words, one per line.
    #[arg(long)]
    pub tgt_stop_words: Option<PathBuf>,
    /// Stemmer used for matching: suffix or identity [default: suffix].
    #[arg(long)]
    pub stemmer: Option<String>,
    /// Probability of keeping each mined constraint [default: 0.25].
    #[arg(long)]
    pub keep_rate: Option<f64>,
    /// Random seed for subsampling [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn mine_terms(flags: MineTermsArgs, file: Option<&Path>) -> anyhow::Result<()> {
    let defaults = MineTermsArgs {
        stoplist: Some("builtin".into()),
        stemmer: Some("suffix".into()),
        keep_rate: Some(0.25),
        seed: Some(1),
        ..Default::default()
    };
    let a = resolve(defaults, file, &flags)?;
    let corpus = load_dir(&required(&a.corpus, "corpus")?)?;
    let dict = TermDictionary::load(required(&a.dictionary, "dictionary")?)?;
    let out = required(&a.out, "out")?;
    let mut stop = match required(&a.stoplist, "stoplist")?.as_str() {
        "builtin" => StopList::builtin(),
        "none" => StopList::none(),
        other => return Err(cfg_err(format!("unknown stoplist {other:?} (expected builtin or none)"))),
    };
    if let Some(p) = &a.src_stop_words {
        stop.source.extend(StopList::read_words(p)?);
    }
    if let Some(p) = &a.tgt_stop_words {
        stop.target.extend(StopList::read_words(p)?);
    }
    let stemmer: Box<dyn Stemmer> = match required(&a.stemmer, "stemmer")?.as_str() {
        "suffix" => Box::new(SuffixStemmer),
        "identity" => Box::new(IdentityStemmer),
        other => return Err(cfg_err(format!("unknown stemmer {other:?} (expected suffix or identity)"))),
    };
    let miner = TermMiner::new(&dict, &stop, stemmer.as_ref());
    let mined: Vec<_> = corpus.iter().map(|t| miner.mine(t)).collect();
    let kept = subsample_constraints(&mined, required(&a.keep_rate, "keep_rate")?, required(&a.seed, "seed")?)?;
    parent_dir(&out)?;
    termape::corpus::write_constraints(&out, &kept)?;
    write_resolved(&a, &sidecar(&out))?;
    info!(
        "mined {} constraints, kept {}",
        mined.iter().map(|s| s.len()).sum::<usize>(),
        kept.iter().map(|s| s.len()).sum::<usize>()
    );
    Ok(())
}

// encode

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodeArgs {
    /// Corpus directory with a constraint file.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Constraint JSONL replacing the corpus constraints.
    #[arg(long)]
    pub constraints: Option<PathBuf>,
    /// Encoding: plain, append or replace [default: append].
    #[arg(long)]
    pub method: Option<String>,
    /// BPE merges file; factors are propagated to every piece.
    #[arg(long)]
    pub bpe: Option<PathBuf>,
    /// Output file, one `tok|factor` line per source sentence.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn encode(flags: EncodeArgs, file: Option<&Path>) -> anyhow::Result<()> {
    let defaults = EncodeArgs {
        method: Some("append".into()),
        ..Default::default()
    };
    let a = resolve(defaults, file, &flags)?;
    let corpus = override_constraints(load_dir(&required(&a.corpus, "corpus")?)?, a.constraints.as_deref())?;
    let method: EncodeMethod = parse(&required(&a.method, "method")?)?;
    let bpe = a.bpe.as_ref().map(BpeModel::load).transpose()?;
    let out = required(&a.out, "out")?;
    let mut text = String::new();
    for t in corpus.iter() {
        let mut enc = encode_source(&t.src, &t.constraints, method);
        if let Some(b) = &bpe {
            enc = b.apply_encoded(&enc)?;
        }
        text.push_str(&enc.to_debug_line());
        text.push('\n');
    }
    write_text(&out, &text)?;
    write_resolved(&a, &sidecar(&out))
}

// bpe-train / bpe-apply

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BpeTrainArgs {
    /// Corpus directory; source, MT, post-edit and constraint phrases are used.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Number of merge operations [default: 500].
    #[arg(long)]
    pub merges: Option<usize>,
    /// Output merges file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn bpe_train(flags: BpeTrainArgs, file: Option<&Path>) -> anyhow::Result<()> {
    let defaults = BpeTrainArgs {
        merges: Some(termape::subword::DESK_MERGES),
        ..Default::default()
    };
    let a = resolve(defaults, file, &flags)?;
    let corpus = load_dir(&required(&a.corpus, "corpus")?)?;
    let out = required(&a.out, "out")?;
    let bpe = BpeModel::train_on_corpora(&[&corpus], required(&a.merges, "merges")?)?;
    parent_dir(&out)?;
    bpe.save(&out)?;
    write_resolved(&a, &sidecar(&out))?;
    info!("learned {} merges", bpe.merges().len());
    Ok(())
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BpeApplyArgs {
    /// Merges file from bpe-train.
    #[arg(long)]
    pub bpe: Option<PathBuf>,
    /// Sentence-per-line input.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Sentence-per-line output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Join segmented pieces back into words instead of segmenting.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub restore: Option<bool>,
}

pub fn bpe_apply(flags: BpeApplyArgs, file: Option<&Path>) -> anyhow::Result<()> {
    let defaults = BpeApplyArgs {
        restore: Some(false),
        ..Default::default()
    };
    let a = resolve(defaults, file, &flags)?;
    let input = read_sentences(required(&a.input, "input")?)?;
    let out = required(&a.out, "out")?;
    let output: Vec<_> = if required(&a.restore, "restore")? {
        input.iter().map(bpe_restore).collect()
    } else {
        let bpe = BpeModel::load(required(&a.bpe, "bpe")?)?;
        input.iter().map(|s| bpe.apply(s).0).collect()
    };
    parent_dir(&out)?;
    write_sentences(&out, &output)?;
    write_resolved(&a, &sidecar(&out))
}

// train

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    /// Model family: mst or levt [default: mst].
    #[arg(long)]
    pub kind: Option<String>,
    /// Input variant: plain, append, replace or ms-levt [default: append].
    #[arg(long)]
    pub variant: Option<String>,
    /// Pretraining corpus directory.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Fine-tuning corpus directory.
    #[arg(long)]
    pub finetune: Option<PathBuf>,
    /// Output directory (phase1.ckpt, phase2.ckpt, manifest.json, config.toml).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Pretraining steps [default: 2000].
    #[arg(long)]
    pub pretrain_steps: Option<usize>,
    /// Fine-tuning steps [default: 0].
    #[arg(long)]
    pub finetune_steps: Option<usize>,
    /// Copies of the fine-tuning corpus in phase 2 [default: 10].
    #[arg(long)]
    pub upsample_factor: Option<usize>,
    /// Pretraining triplets mixed into phase 2 [default: 0].
    #[arg(long)]
    pub pretrain_subset: Option<usize>,
    /// Learn this many BPE merges on the training data; unset keeps whole words.
    #[arg(long)]
    pub bpe_merges: Option<usize>,
    /// Sentences per batch [default: 64].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate [default: 0.003].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Warmup steps [default: 200].
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Label smoothing [default: 0.1].
    #[arg(long)]
    pub label_smoothing: Option<f64>,
    /// AdamW weight decay [default: 0.01].
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Steps between loss log lines [default: 100].
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Model width [default: 64].
    #[arg(long)]
    pub d_model: Option<usize>,
    /// Attention heads [default: 2].
    #[arg(long)]
    pub n_heads: Option<usize>,
    /// Encoder and decoder layers [default: 2].
    #[arg(long)]
    pub n_layers: Option<usize>,
    /// Feed-forward width [default: 128].
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    /// Source factor embedding width [default: 16].
    #[arg(long)]
    pub factor_embed_dim: Option<usize>,
    /// Dropout probability [default: 0.1].
    #[arg(long)]
    pub dropout: Option<f32>,
    /// Maximum sequence length in subword units [default: 128].
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Seed for initialisation, shuffling and dropout [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn train(flags: TrainArgs, file: Option<&Path>) -> anyhow::Result<()> {
    let m = ModelConfig::default();
    let t = TrainConfig::default();
    let defaults = TrainArgs {
        kind: Some("mst".into()),
        variant: Some("append".into()),
        pretrain_steps: Some(t.steps),
        finetune_steps: Some(0),
        upsample_factor: Some(10),
        pretrain_subset: Some(0),
        batch_size: Some(t.batch_size),
        lr: Some(t.lr),
        warmup: Some(t.warmup),
        label_smoothing: Some(t.label_smoothing),
        weight_decay: Some(t.weight_decay),
        log_every: Some(t.log_every),
        d_model: Some(m.d_model),
        n_heads: Some(m.n_heads),
        n_layers: Some(m.n_layers),
        ffn_dim: Some(m.ffn_dim),
        factor_embed_dim: Some(m.factor_embed_dim),
        dropout: Some(m.dropout),
        max_len: Some(m.max_len),
        seed: Some(m.seed),
        ..Default::default()
    };
    let a = resolve(defaults, file, &flags)?;
    let kind: ModelKind = parse(&required(&a.kind, "kind")?)?;
    let variant: TrainVariant = parse(&required(&a.variant, "variant")?)?;
    let train_dir = required(&a.train, "train")?;
    let out = required(&a.out, "out")?;
    let seed = required(&a.seed, "seed")?;
    let model_cfg = ModelConfig {
        d_model: required(&a.d_model, "d_model")?,
        n_heads: required(&a.n_heads, "n_heads")?,
        n_layers: required(&a.n_layers, "n_layers")?,
        ffn_dim: required(&a.ffn_dim, "ffn_dim")?,
        factor_embed_dim: required(&a.factor_embed_dim, "factor_embed_dim")?,
        dropout: required(&a.dropout, "dropout")?,
        max_len: required(&a.max_len, "max_len")?,
        seed,
    };
    model_cfg.validate()?;
    let schedule = Schedule {
        pretrain_corpus: train_dir.display().to_string(),
        finetune_corpus: a.finetune.as_ref().map(|p| p.display().to_string()),
        upsample_factor: required(&a.upsample_factor, "upsample_factor")?,
        pretrain_subset: required(&a.pretrain_subset, "pretrain_subset")?,
        pretrain_steps: required(&a.pretrain_steps, "pretrain_steps")?,
        finetune_steps: required(&a.finetune_steps, "finetune_steps")?,
        bpe_merges: a.bpe_merges,
        train: TrainConfig {
            steps: 0,
            batch_size: required(&a.batch_size, "batch_size")?,
            lr: required(&a.lr, "lr")?,
            warmup: required(&a.warmup, "warmup")?,
            label_smoothing: required(&a.label_smoothing, "label_smoothing")?,
            weight_decay: required(&a.weight_decay, "weight_decay")?,
            seed,
            log_every: required(&a.log_every, "log_every")?,
        },
    };
    let pretrain = load_dir(&train_dir)?;
    let finetune = a.finetune.as_deref().map(load_dir).transpose()?;
    write_resolved(&a, &out.join("config.toml"))?;
    let result = run_schedule(kind, variant, &model_cfg, &schedule, &pretrain, finetune.as_ref(), &out)?;
    info!(
        "trained {kind} {variant} for {} steps; final checkpoint {}",
        result.model.train_steps(),
        result.manifest.final_checkpoint.display()
    );
    Ok(())
}

// postedit

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteditArgs {
    /// Checkpoint written by train.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Test corpus directory (corpus.src, corpus.mt; corpus.pe may be empty lines).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Constraint JSONL replacing the corpus constraints; an empty file means no terminology.
    #[arg(long)]
    pub constraints: Option<PathBuf>,
    /// Hypothesis file, one post-edit per line.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// LevT initial state: blank, mt or constraints [default: the checkpoint's].
    #[arg(long)]
    pub init: Option<String>,
    /// LevT: never delete constraint tokens nor insert inside a constraint.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub protect_constraints: Option<bool>,
    /// LevT: write the per-iteration edit trace to this file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// LevT: subtracted from each slot's zero-insertion score [default: the checkpoint's].
    #[arg(long)]
    pub empty_slot_penalty: Option<f32>,
    /// MST beam size; 1 decodes greedily [default: 4].
    #[arg(long)]
    pub beam: Option<usize>,
    /// Sentences decoded together [default: 64].
    #[arg(long)]
    pub batch_size: Option<usize>,
}

pub fn postedit(flags: PosteditArgs, file: Option<&Path>) -> anyhow::Result<()> {
    let d = DecodeOptions::default();
    let defaults = PosteditArgs {
        beam: Some(d.beam),
        batch_size: Some(d.batch_size),
        ..Default::default()
    };
    let a = resolve(defaults, file, &flags)?;
    let mut model = ApeModel::load(required(&a.checkpoint, "checkpoint")?)?;
    let corpus = override_constraints(load_dir(&required(&a.corpus, "corpus")?)?, a.constraints.as_deref())?;
    let out = required(&a.out, "out")?;
    let opts = DecodeOptions {
        beam: required(&a.beam, "beam")?,
        batch_size: required(&a.batch_size, "batch_size")?,
    };
    if opts.beam == 0 || opts.batch_size == 0 {
        return Err(cfg_err("beam and batch_size must be positive"));
    }
    let hyps = match &mut model {
        ApeModel::Mst(_) => {
            if a.init.is_some() || a.protect_constraints.is_some() || a.trace.is_some() || a.empty_slot_penalty.is_some() {
                return Err(cfg_err(
                    "--init, --protect-constraints, --trace and --empty-slot-penalty apply to levt checkpoints only",
                ));
            }
            model.postedit(&corpus, &opts)?
        }
        ApeModel::Levt(m) => {
            let init = match &a.init {
                Some(s) => parse::<InitStrategy>(s)?,
                None => m.config().init_strategy,
            };
            let protect = a.protect_constraints.unwrap_or(m.config().protect_constraints);
            m.set_decoding(init, protect);
            if let Some(p) = a.empty_slot_penalty {
                if !p.is_finite() {
                    return Err(cfg_err("empty_slot_penalty must be finite"));
                }
                m.set_empty_slot_penalty(p);
            }
            let outputs = m.postedit_full(&corpus, opts.batch_size, a.trace.is_some())?;
            if let Some(path) = &a.trace {
                let mut text = String::new();
                for (i, o) in outputs.iter().enumerate() {
                    text.push_str(&format!("# sentence {i}\n"));
                    for line in &o.trace {
                        text.push_str(line);
                        text.push('\n');
                    }
                }
                write_text(path, &text)?;
            }
            outputs.into_iter().map(|o| o.sentence).collect()
        }
    };
    parent_dir(&out)?;
    write_sentences(&out, &hyps)?;
    write_resolved(&a, &sidecar(&out))
}

// augment / probe

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentArgs {
    /// Training corpus directory with constraints.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Relation TSV (word, synonym|antonym, related word).
    #[arg(long)]
    pub relations: Option<PathBuf>,
    /// Relations used: synonym, antonym or both [default: both].
    #[arg(long)]
    pub relation: Option<String>,
    /// Output corpus directory: the original triplets followed by the new samples.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn augment(flags: AugmentArgs, file: Option<&Path>) -> anyhow::Result<()> {
    let defaults = AugmentArgs {
        relation: Some("both".into()),
        ..Default::default()
    };
    let a = resolve(defaults, file, &flags)?;
    let corpus = load_dir(&required(&a.corpus, "corpus")?)?;
    let mut lexicons = load_relations(required(&a.relations, "relations")?)?;
    match required(&a.relation, "relation")?.as_str() {
        "both" => {}
        r => {
            let keep: Relation = r.parse().map_err(|e: ApeError| cfg_err(e.to_string()))?;
            lexicons.retain(|l| l.relation() == keep);
        }
    }
    let out = required(&a.out, "out")?;
    let expected = count_augmentations(&corpus, &lexicons);
    let aug = augment_corpus(&corpus, &lexicons);
    if aug.len() != expected {
        return Err(ApeError::Contract {
            phase: "augment",
            message: format!("emitted {} samples, expected {expected}", aug.len()),
        }
        .into());
    }
    save_corpus_dir(&join(&corpus, &aug), &out)?;
    write_resolved(&a, &out.join("config.toml"))?;
    println!("{}", serde_json::json!({ "original": corpus.len(), "augmented": aug.len() }));
    Ok(())
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeArgs {
    /// Test corpus directory with constraints.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Relation TSV (word, synonym|antonym, related word).
    #[arg(long)]
    pub relations: Option<PathBuf>,
    /// Probe kind: original, synonym, antonym or random [default: synonym].
    #[arg(long)]
    pub kind: Option<String>,
    /// Seed for random replacements [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output corpus directory; source_ids.txt maps rows to test-set ids.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn probe(flags: ProbeArgs, file: Option<&Path>) -> anyhow::Result<()> {
    let defaults = ProbeArgs {
        kind: Some("synonym".into()),
        seed: Some(1),
        ..Default::default()
    };
    let a = resolve(defaults, file, &flags)?;
    let corpus = load_dir(&required(&a.corpus, "corpus")?)?;
    let lexicons = load_relations(required(&a.relations, "relations")?)?;
    let kind: ProbeKind = parse(&required(&a.kind, "kind")?)?;
    let out = required(&a.out, "out")?;
    let probe = build_probe_set(&corpus, kind, &lexicons, required(&a.seed, "seed")?)?;
    save_corpus_dir(&probe.corpus, &out)?;
    let ids: String = probe.source_ids.iter().map(|i| format!("{i}\n")).collect();
    write_text(&out.join("source_ids.txt"), &ids)?;
    write_resolved(&a, &out.join("config.toml"))?;
    println!(
        "{}",
        serde_json::json!({ "kind": kind, "kept": probe.corpus.len(), "dropped": probe.dropped })
    );
    Ok(())
}

// evaluate

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateArgs {
    /// Hypotheses, one per line.
    #[arg(long)]
    pub hyp: Option<PathBuf>,
    /// References, one per line.
    #[arg(long = "ref")]
    #[serde(rename = "ref")]
    pub reference: Option<PathBuf>,
    /// Constraint JSONL; without it Term% is null.
    #[arg(long)]
    pub constraints: Option<PathBuf>,
    /// Also write the report JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn evaluate(flags: EvaluateArgs, file: Option<&Path>) -> anyhow::Result<()> {
    let a = resolve(EvaluateArgs::default(), file, &flags)?;
    let hyp_path = required(&a.hyp, "hyp")?;
    let ref_path = required(&a.reference, "ref")?;
    let hyps = read_sentences(&hyp_path)?;
    let refs = read_sentences(&ref_path)?;
    if hyps.len() != refs.len() {
        return Err(ApeError::Alignment {
            path: hyp_path,
            expected: refs.len(),
            found: hyps.len(),
        }
        .into());
    }
    let sets = a.constraints.as_ref().map(read_constraints).transpose()?;
    if let (Some(s), Some(p)) = (&sets, &a.constraints) {
        if s.len() != refs.len() {
            return Err(ApeError::Alignment {
                path: p.clone(),
                expected: refs.len(),
                found: s.len(),
            }
            .into());
        }
    }
    let report = score(&hyps, &refs, sets.as_deref())?;
    let json = report.to_json();
    if let Some(out) = &a.out {
        write_text(out, &format!("{json}\n"))?;
        write_resolved(&a, &sidecar(out))?;
    }
    println!("{json}");
    Ok(())
}

// cascade

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeArgs {
    /// Test corpus directory; corpus.mt holds the unconstrained MT.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Constrained MT output, one sentence per line.
    #[arg(long)]
    pub constrained_mt: Option<PathBuf>,
    /// Checkpoint of the unconstrained post-editor.
    #[arg(long)]
    pub ape: Option<PathBuf>,
    /// Checkpoint of the constrained post-editor.
    #[arg(long)]
    pub cape: Option<PathBuf>,
    /// MST beam size [default: 4].
    #[arg(long)]
    pub beam: Option<usize>,
    /// Sentences decoded together [default: 64].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Report JSON with one entry per cascade.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cascade(flags: CascadeArgs, file: Option<&Path>) -> anyhow::Result<()> {
    let d = DecodeOptions::default();
    let defaults = CascadeArgs {
        beam: Some(d.beam),
        batch_size: Some(d.batch_size),
        ..Default::default()
    };
    let a = resolve(defaults, file, &flags)?;
    let corpus = load_dir(&required(&a.corpus, "corpus")?)?;
    let out = required(&a.out, "out")?;
    let mt_plain = corpus.mt_column();
    let mt_constrained = a.constrained_mt.as_ref().map(read_sentences).transpose()?;
    let ape = a.ape.as_ref().map(ApeModel::load).transpose()?;
    let cape = a.cape.as_ref().map(ApeModel::load).transpose()?;
    let inputs = CascadeInputs {
        testset: &corpus,
        mt_plain: Some(&mt_plain),
        mt_constrained: mt_constrained.as_deref(),
        ape_plain: ape.as_ref(),
        ape_constrained: cape.as_ref(),
        decode: DecodeOptions {
            beam: required(&a.beam, "beam")?,
            batch_size: required(&a.batch_size, "batch_size")?,
        },
    };
    let mut rows = Vec::new();
    for spec in CascadeSpec::all() {
        let available = (spec.mt == termape::pipeline::MtVariant::Plain || mt_constrained.is_some())
            && match spec.ape {
                termape::pipeline::ApeVariant::None => true,
                termape::pipeline::ApeVariant::Plain => ape.is_some(),
                termape::pipeline::ApeVariant::Constrained => cape.is_some(),
            };
        if !available {
            info!("skipping {spec}: inputs not supplied");
            continue;
        }
        rows.push((spec.to_string(), run_cascade(spec, &inputs)?));
    }
    let json: Vec<_> = rows
        .iter()
        .map(|(name, r)| serde_json::json!({ "system": name, "report": r }))
        .collect();
    write_text(&out, &serde_json::to_string_pretty(&json).context("serializing reports")?)?;
    write_resolved(&a, &sidecar(&out))?;
    print!("{}", format_table(&rows));
    Ok(())
}
