//! Experiment orchestration: two-phase training schedules, the do-nothing
//! baseline, MT→APE cascades and result tables.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{holdout_split, join, upsample, Corpus, Sentence};
use crate::encode::EncodeMethod;
use crate::error::{ApeError, Result};
use crate::evalsuite::{evaluate, EvalReport};
use crate::levt::{LevtConfig, LevtModel};
use crate::mst::{MstConfig, MstModel};
use crate::nn::checkpoint::load_checkpoint;
use crate::nn::{Codec, ModelConfig, TrainConfig, TrainState};
use crate::subword::BpeModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mst,
    Levt,
}

impl FromStr for ModelKind {
    type Err = ApeError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mst" => Ok(ModelKind::Mst),
            "levt" => Ok(ModelKind::Levt),
            _ => Err(ApeError::Config(format!("unknown model kind {s:?} (expected mst or levt)"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Mst => "mst",
            ModelKind::Levt => "levt",
        })
    }
}

/// Input encoding of a trained system. `MsLevt` is only valid for LevT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainVariant {
    Plain,
    Append,
    Replace,
    MsLevt,
}

impl FromStr for TrainVariant {
    type Err = ApeError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(TrainVariant::Plain),
            "append" => Ok(TrainVariant::Append),
            "replace" => Ok(TrainVariant::Replace),
            "ms-levt" => Ok(TrainVariant::MsLevt),
            _ => Err(ApeError::Config(format!(
                "unknown variant {s:?} (expected plain, append, replace or ms-levt)"
            ))),
        }
    }
}

impl fmt::Display for TrainVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainVariant::Plain => "plain",
            TrainVariant::Append => "append",
            TrainVariant::Replace => "replace",
            TrainVariant::MsLevt => "ms-levt",
        })
    }
}

impl TrainVariant {
    fn encode_method(self) -> EncodeMethod {
        match self {
            TrainVariant::Plain | TrainVariant::MsLevt => EncodeMethod::Plain,
            TrainVariant::Append => EncodeMethod::Append,
            TrainVariant::Replace => EncodeMethod::Replace,
        }
    }
}

/// A trained post-editor of either family.
pub enum ApeModel {
    Mst(MstModel),
    Levt(LevtModel),
}

/// Decoding knobs shared by both families; LevT ignores `beam`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub beam: usize,
    pub batch_size: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            beam: 4,
            batch_size: 64,
        }
    }
}

impl ApeModel {
    pub fn build(kind: ModelKind, variant: TrainVariant, model: ModelConfig, codec: Codec) -> Result<Self> {
        match (kind, variant) {
            (ModelKind::Mst, TrainVariant::MsLevt) => Err(ApeError::Config(
                "the ms-levt variant requires model kind levt".into(),
            )),
            (ModelKind::Mst, v) => Ok(ApeModel::Mst(MstModel::build(
                MstConfig {
                    model,
                    variant: v.encode_method(),
                },
                codec,
            )?)),
            (ModelKind::Levt, TrainVariant::MsLevt) => Ok(ApeModel::Levt(LevtModel::build(
                LevtConfig {
                    model,
                    ..LevtConfig::multi_source()
                },
                codec,
            )?)),
            (ModelKind::Levt, v) => Ok(ApeModel::Levt(LevtModel::build(
                LevtConfig {
                    model,
                    ..LevtConfig::single_source(v.encode_method())
                },
                codec,
            )?)),
        }
    }

    /// Loads a checkpoint of either kind.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (manifest, params) = load_checkpoint(path)?;
        match manifest.kind.as_str() {
            crate::mst::CHECKPOINT_KIND => Ok(ApeModel::Mst(MstModel::from_checkpoint(manifest, &params)?)),
            crate::levt::model::CHECKPOINT_KIND => Ok(ApeModel::Levt(LevtModel::from_checkpoint(manifest, &params)?)),
            other => Err(ApeError::Checkpoint(format!("unknown model kind {other:?}"))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        match self {
            ApeModel::Mst(m) => m.save(path),
            ApeModel::Levt(m) => m.save(path),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ApeModel::Mst(_) => ModelKind::Mst,
            ApeModel::Levt(_) => ModelKind::Levt,
        }
    }

    pub fn train_steps(&self) -> usize {
        match self {
            ApeModel::Mst(m) => m.train_steps(),
            ApeModel::Levt(m) => m.train_steps(),
        }
    }

    pub fn train(&mut self, corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainState> {
        match self {
            ApeModel::Mst(m) => {
                let data = m.examples(corpus)?;
                m.train(&data, cfg)
            }
            ApeModel::Levt(m) => {
                let data = m.examples(corpus)?;
                m.train(&data, cfg)
            }
        }
    }

    pub fn postedit(&self, corpus: &Corpus, opts: &DecodeOptions) -> Result<Vec<Sentence>> {
        match self {
            ApeModel::Mst(m) => m.postedit(corpus, opts.beam, opts.batch_size),
            ApeModel::Levt(m) => m.postedit(corpus, opts.batch_size),
        }
    }
}

/// Two-phase training: pretraining, then fine-tuning on the upsampled
/// fine-tuning corpus joined with a pretraining subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub pretrain_corpus: String,
    pub finetune_corpus: Option<String>,
    pub upsample_factor: usize,
    /// Pretraining triplets joined into phase 2.
    pub pretrain_subset: usize,
    pub pretrain_steps: usize,
    pub finetune_steps: usize,
    /// Learned BPE merges over the training corpora; none keeps whole words.
    pub bpe_merges: Option<usize>,
    pub train: TrainConfig,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            pretrain_corpus: "train".into(),
            finetune_corpus: None,
            upsample_factor: 10,
            pretrain_subset: 0,
            pretrain_steps: TrainConfig::default().steps,
            finetune_steps: 0,
            bpe_merges: None,
            train: TrainConfig::default(),
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.upsample_factor == 0 {
            return Err(ApeError::Config("upsample_factor must be at least 1".into()));
        }
        Ok(())
    }
}

/// The phase-2 training mixture.
pub fn finetune_mixture(schedule: &Schedule, pretrain: &Corpus, finetune: &Corpus) -> Result<Corpus> {
    let up = upsample(finetune, schedule.upsample_factor)?;
    let n = schedule.pretrain_subset.min(pretrain.len());
    let (_, subset) = holdout_split(pretrain, n, schedule.train.seed)?;
    Ok(join(&up, &subset))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub corpus_size: usize,
    pub steps: usize,
    pub losses: Vec<(usize, f32)>,
    pub checkpoint: FileDigest,
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    pub kind: ModelKind,
    pub variant: TrainVariant,
    pub model: ModelConfig,
    pub schedule: Schedule,
    pub data: Vec<(String, String)>,
    pub vocab_size: usize,
    pub phases: Vec<PhaseRecord>,
    pub final_checkpoint: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: impl AsRef<Path>) -> Result<FileDigest> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| ApeError::io(path, e))?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
    })
}

/// Digest of every column and constraint of a corpus.
pub fn corpus_digest(corpus: &Corpus) -> String {
    let mut h = Sha256::new();
    for t in corpus.iter() {
        for s in [&t.src, &t.mt, &t.pe] {
            h.update(s.to_string().as_bytes());
            h.update(b"\n");
        }
        for c in &t.constraints {
            h.update(format!("{}\t{}\n", c.src, c.tgt).as_bytes());
        }
        h.update(b"\x1e");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub struct ScheduleOutput {
    pub model: ApeModel,
    pub manifest: TrainManifest,
}

/// Runs both phases, writing `phase1.ckpt`, `phase2.ckpt` (when phase 2
/// trains) and `manifest.json` into `out_dir`.
pub fn run_schedule(
    kind: ModelKind,
    variant: TrainVariant,
    model_cfg: &ModelConfig,
    schedule: &Schedule,
    pretrain: &Corpus,
    finetune: Option<&Corpus>,
    out_dir: impl AsRef<Path>,
) -> Result<ScheduleOutput> {
    schedule.validate()?;
    if pretrain.is_empty() {
        return Err(ApeError::Config(format!("pretraining corpus {:?} is empty", pretrain.name)));
    }
    if schedule.finetune_corpus.is_some() && finetune.is_none() {
        return Err(ApeError::Config("schedule names a fine-tuning corpus but none was supplied".into()));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| ApeError::io(out_dir, e))?;

    let mut corpora = vec![pretrain];
    corpora.extend(finetune);
    let bpe = match schedule.bpe_merges {
        Some(n) => Some(BpeModel::train_on_corpora(&corpora, n)?),
        None => None,
    };
    let codec = Codec::build(&corpora, bpe);
    let vocab_size = codec.vocab.len();
    let mut model = ApeModel::build(kind, variant, model_cfg.clone(), codec)?;
    let mut data = vec![(pretrain.name.clone(), corpus_digest(pretrain))];
    if let Some(f) = finetune {
        data.push((f.name.clone(), corpus_digest(f)));
    }

    let mut phases = Vec::new();
    let p1 = TrainConfig {
        steps: schedule.pretrain_steps,
        ..schedule.train.clone()
    };
    let state = model.train(pretrain, &p1)?;
    let path1 = out_dir.join("phase1.ckpt");
    model.save(&path1)?;
    phases.push(PhaseRecord {
        corpus_size: pretrain.len(),
        steps: schedule.pretrain_steps,
        losses: state.losses,
        checkpoint: file_digest(&path1)?,
    });
    let mut final_checkpoint = path1;

    if let Some(f) = finetune.filter(|_| schedule.finetune_steps > 0) {
        let mix = finetune_mixture(schedule, pretrain, f)?;
        let p2 = TrainConfig {
            steps: schedule.finetune_steps,
            seed: schedule.train.seed.wrapping_add(1),
            ..schedule.train.clone()
        };
        let state = model.train(&mix, &p2)?;
        let path2 = out_dir.join("phase2.ckpt");
        model.save(&path2)?;
        phases.push(PhaseRecord {
            corpus_size: mix.len(),
            steps: schedule.finetune_steps,
            losses: state.losses,
            checkpoint: file_digest(&path2)?,
        });
        final_checkpoint = path2;
    }

    let manifest = TrainManifest {
        kind,
        variant,
        model: model_cfg.clone(),
        schedule: schedule.clone(),
        data,
        vocab_size,
        phases,
        final_checkpoint,
    };
    let path = out_dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| ApeError::io(&path, e))?;
    Ok(ScheduleOutput { model, manifest })
}

/// The MT output taken as the post-edit.
pub fn do_nothing(testset: &Corpus) -> Vec<Sentence> {
    testset.mt_column()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MtVariant {
    Plain,
    Constrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApeVariant {
    None,
    Plain,
    Constrained,
}

/// One MT→APE pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeSpec {
    pub mt: MtVariant,
    pub ape: ApeVariant,
}

impl CascadeSpec {
    pub fn all() -> [CascadeSpec; 6] {
        let mut out = [CascadeSpec {
            mt: MtVariant::Plain,
            ape: ApeVariant::None,
        }; 6];
        let mut k = 0;
        for mt in [MtVariant::Plain, MtVariant::Constrained] {
            for ape in [ApeVariant::None, ApeVariant::Plain, ApeVariant::Constrained] {
                out[k] = CascadeSpec { mt, ape };
                k += 1;
            }
        }
        out
    }
}

impl fmt::Display for CascadeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mt = match self.mt {
            MtVariant::Plain => "MT",
            MtVariant::Constrained => "cMT",
        };
        match self.ape {
            ApeVariant::None => f.write_str(mt),
            ApeVariant::Plain => write!(f, "{mt} -> APE"),
            ApeVariant::Constrained => write!(f, "{mt} -> cAPE"),
        }
    }
}

/// Inputs of a cascade run: the test set, the two MT output columns and
/// the two post-editors.
pub struct CascadeInputs<'a> {
    pub testset: &'a Corpus,
    pub mt_plain: Option<&'a [Sentence]>,
    pub mt_constrained: Option<&'a [Sentence]>,
    pub ape_plain: Option<&'a ApeModel>,
    pub ape_constrained: Option<&'a ApeModel>,
    pub decode: DecodeOptions,
}

pub fn run_cascade(spec: CascadeSpec, inputs: &CascadeInputs<'_>) -> Result<EvalReport> {
    let (mt, which) = match spec.mt {
        MtVariant::Plain => (inputs.mt_plain, "plain MT outputs"),
        MtVariant::Constrained => (inputs.mt_constrained, "constrained MT outputs"),
    };
    let mt = mt.ok_or_else(|| ApeError::Config(format!("cascade {spec} needs {which}")))?;
    let corpus = inputs.testset.with_mt(mt.to_vec())?;
    let hyps = match spec.ape {
        ApeVariant::None => do_nothing(&corpus),
        ApeVariant::Plain => inputs
            .ape_plain
            .ok_or_else(|| ApeError::Config(format!("cascade {spec} needs a plain APE checkpoint")))?
            .postedit(&corpus, &inputs.decode)?,
        ApeVariant::Constrained => inputs
            .ape_constrained
            .ok_or_else(|| ApeError::Config(format!("cascade {spec} needs a constrained APE checkpoint")))?
            .postedit(&corpus, &inputs.decode)?,
    };
    let sets = corpus.constraint_sets();
    evaluate(&hyps, &corpus.pe_column(), Some(&sets))
}

/// Aligned text table with one row per system.
pub fn format_table(rows: &[(String, EvalReport)]) -> String {
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("System".len());
    let mut out = format!("{:<name_w$}  {:>7}  {:>7}  {:>7}\n", "System", "TER", "BLEU", "Term%");
    for (name, r) in rows {
        let term = r.term_pct.map_or_else(|| "-".to_string(), |t| format!("{t:.2}"));
        out.push_str(&format!(
            "{name:<name_w$}  {:>7.2}  {:>7.2}  {term:>7}\n",
            100.0 * r.ter,
            r.bleu
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Triplet;

    fn toy(n: usize) -> Corpus {
        Corpus::new(
            "toy",
            (0..n)
                .map(|i| {
                    let s = Sentence::from_text(&format!("w{i}"));
                    Triplet::new(0, s.clone(), s.clone(), s)
                })
                .collect(),
        )
    }

    #[test]
    fn mixture_counts() {
        let s = Schedule {
            upsample_factor: 10,
            pretrain_subset: 5,
            ..Schedule::default()
        };
        let mix = finetune_mixture(&s, &toy(100), &toy(24)).unwrap();
        assert_eq!(mix.len(), 245);
    }

    #[test]
    fn six_cascades() {
        let all = CascadeSpec::all();
        let names: Vec<String> = all.iter().map(ToString::to_string).collect();
        assert_eq!(names, ["MT", "MT -> APE", "MT -> cAPE", "cMT", "cMT -> APE", "cMT -> cAPE"]);
    }

    #[test]
    fn none_cascade_is_do_nothing() {
        let c = toy(3);
        let mt = vec![Sentence::from_text("w0"), Sentence::from_text("x"), Sentence::from_text("w2")];
        let inputs = CascadeInputs {
            testset: &c,
            mt_plain: Some(&mt),
            mt_constrained: None,
            ape_plain: None,
            ape_constrained: None,
            decode: DecodeOptions::default(),
        };
        let spec = CascadeSpec {
            mt: MtVariant::Plain,
            ape: ApeVariant::None,
        };
        let r = run_cascade(spec, &inputs).unwrap();
        let direct = evaluate(&mt, &c.pe_column(), Some(&c.constraint_sets())).unwrap();
        assert_eq!(r, direct);
        let missing = CascadeSpec {
            mt: MtVariant::Constrained,
            ape: ApeVariant::None,
        };
        assert!(matches!(run_cascade(missing, &inputs), Err(ApeError::Config(_))));
    }

    #[test]
    fn table_layout() {
        let s = vec![Sentence::from_text("a b c d e")];
        let r = evaluate(&s, &s, None).unwrap();
        let t = format_table(&[("MT".into(), r)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "System      TER     BLEU    Term%");
        assert_eq!(lines[1], "MT         0.00   100.00        -");
    }
}
