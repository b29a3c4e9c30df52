//! Synthetic triplet corpora with controllable lexical ambiguity.
//!
//! Source words are `s0, s1, ...`; target words `t0, t1, ...`. Each source
//! word translates to one to three target variants. A sentence draws a
//! hidden style index and every word of its post-edit takes variant
//! `style % k`. The MT column is the post-edit passed through token noise.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{Relation, RelationLexicon};
use crate::corpus::{Constraint, ConstraintSet, Corpus, Sentence, Token, Triplet};
use crate::error::{ApeError, Result};
use crate::termmine::TermDictionary;

/// Number of hidden styles. Divisible by every variant count (1, 2, 3).
pub const NUM_STYLES: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexEntry {
    pub src: String,
    pub variants: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub entries: Vec<LexEntry>,
    pub seed: u64,
}

impl Lexicon {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_ambiguous(&self) -> usize {
        self.entries.iter().filter(|e| e.variants.len() >= 2).count()
    }

    /// All target words in creation order.
    pub fn target_vocab(&self) -> Vec<&str> {
        self.entries
            .iter()
            .flat_map(|e| e.variants.iter().map(String::as_str))
            .collect()
    }

    /// Every (source word, variant) pair as a term dictionary.
    pub fn to_dictionary(&self) -> TermDictionary {
        TermDictionary::new(self.entries.iter().flat_map(|e| {
            e.variants
                .iter()
                .map(move |v| (Sentence::from_text(&e.src), Sentence::from_text(v)))
        }))
        .expect("lexicon words are non-empty")
    }

    /// Synonyms are the other variants of the same source word. Each target
    /// word also gets one antonym: a variant of a different, randomly paired
    /// source word.
    pub fn relations(&self, seed: u64) -> (RelationLexicon, RelationLexicon) {
        let mut syn = BTreeMap::new();
        for e in &self.entries {
            for v in &e.variants {
                let others: Vec<String> = e.variants.iter().filter(|o| *o != v).cloned().collect();
                if !others.is_empty() {
                    syn.insert(v.clone(), others);
                }
            }
        }
        let mut ant = BTreeMap::new();
        if self.entries.len() >= 2 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = self.entries.len();
            for (i, e) in self.entries.iter().enumerate() {
                for v in &e.variants {
                    let j = (i + rng.random_range(1..n)) % n;
                    let other = &self.entries[j].variants;
                    ant.insert(v.clone(), vec![other[rng.random_range(0..other.len())].clone()]);
                }
            }
        }
        (
            RelationLexicon::new(Relation::Synonym, syn).expect("valid synonym lexicon"),
            RelationLexicon::new(Relation::Antonym, ant).expect("valid antonym lexicon"),
        )
    }
}

pub fn gen_lexicon(vocab_size: usize, ambiguous_fraction: f64, seed: u64) -> Result<Lexicon> {
    if vocab_size == 0 {
        return Err(ApeError::Argument("vocab_size must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&ambiguous_fraction) {
        return Err(ApeError::Argument(format!(
            "ambiguous_fraction {ambiguous_fraction} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_amb = (ambiguous_fraction * vocab_size as f64).round() as usize;
    let mut order: Vec<usize> = (0..vocab_size).collect();
    order.shuffle(&mut rng);
    let mut ambiguous = vec![false; vocab_size];
    for &i in &order[..n_amb] {
        ambiguous[i] = true;
    }
    let mut next_target = 0;
    let entries = (0..vocab_size)
        .map(|i| {
            let k = if ambiguous[i] { rng.random_range(2..=3) } else { 1 };
            let variants = (0..k)
                .map(|_| {
                    next_target += 1;
                    format!("t{}", next_target - 1)
                })
                .collect();
            LexEntry {
                src: format!("s{i}"),
                variants,
            }
        })
        .collect();
    Ok(Lexicon { entries, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub sub_rate: f64,
    pub del_rate: f64,
    pub ins_rate: f64,
}

impl NoiseConfig {
    pub const NONE: NoiseConfig = NoiseConfig {
        sub_rate: 0.0,
        del_rate: 0.0,
        ins_rate: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let rates = [self.sub_rate, self.del_rate, self.ins_rate];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(ApeError::Argument(format!("noise rates must lie in [0, 1]: {self:?}")));
        }
        if rates.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(ApeError::Argument(format!("noise rates sum above 1: {self:?}")));
        }
        Ok(())
    }
}

/// Mixes the corpus seed and a triplet id into an independent stream seed.
fn triplet_seed(seed: u64, id: u64) -> u64 {
    let mut z = seed ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy)]
enum Draw {
    Keep,
    Sub(u64),
    Del,
    Ins(u64),
}

fn draw_noise(noise: &NoiseConfig, n: usize, rng: &mut ChaCha8Rng) -> Vec<Draw> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let r: u64 = rng.random();
            if u < noise.sub_rate {
                Draw::Sub(r)
            } else if u < noise.sub_rate + noise.del_rate {
                Draw::Del
            } else if u < noise.sub_rate + noise.del_rate + noise.ins_rate {
                Draw::Ins(r)
            } else {
                Draw::Keep
            }
        })
        .collect()
}

/// Applies per-position noise draws to a post-edit. `words[i]` is the
/// lexicon entry of position `i`; `protected[i]` positions are kept intact.
fn corrupt(
    lexicon: &Lexicon,
    targets: &[&str],
    words: &[usize],
    pe: &[String],
    draws: &[Draw],
    protected: &[bool],
) -> Vec<String> {
    let random_other = |r: u64, current: &str| -> String {
        let mut j = (r % targets.len() as u64) as usize;
        if targets[j] == current && targets.len() > 1 {
            j = (j + 1) % targets.len();
        }
        targets[j].to_string()
    };
    let mut out = Vec::with_capacity(pe.len() + 2);
    for i in 0..pe.len() {
        let draw = if protected[i] { Draw::Keep } else { draws[i] };
        match draw {
            Draw::Keep => out.push(pe[i].clone()),
            Draw::Del => {}
            Draw::Ins(r) => {
                out.push(pe[i].clone());
                out.push(random_other(r, &pe[i]));
            }
            Draw::Sub(r) => {
                let variants = &lexicon.entries[words[i]].variants;
                let others: Vec<&String> = variants.iter().filter(|v| **v != pe[i]).collect();
                if others.is_empty() {
                    out.push(random_other(r, &pe[i]));
                } else {
                    out.push(others[(r % others.len() as u64) as usize].clone());
                }
            }
        }
    }
    out
}

fn to_sentence(words: &[String]) -> Sentence {
    Sentence(
        words
            .iter()
            .map(|w| Token::new(w.clone()).expect("generated words are valid tokens"))
            .collect(),
    )
}

fn check_args(len_range: (usize, usize), constraint_rate: f64, noise: &NoiseConfig) -> Result<()> {
    let (lo, hi) = len_range;
    if lo < 1 || hi > 100 || lo > hi {
        return Err(ApeError::Argument(format!(
            "len_range ({lo}, {hi}) must satisfy 1 <= lo <= hi <= 100"
        )));
    }
    if !(0.0..=1.0).contains(&constraint_rate) {
        return Err(ApeError::Argument(format!(
            "constraint_rate {constraint_rate} outside [0, 1]"
        )));
    }
    noise.validate()
}

struct Draft {
    words: Vec<usize>,
    pe: Vec<String>,
    /// (position, chosen variant) of each attached constraint
    constraints: Vec<(usize, String)>,
    draws: Vec<Draw>,
    rng: ChaCha8Rng,
}

fn draft(
    lexicon: &Lexicon,
    id: u64,
    len_range: (usize, usize),
    noise: &NoiseConfig,
    constraint_rate: f64,
    seed: u64,
) -> Draft {
    let mut rng = ChaCha8Rng::seed_from_u64(triplet_seed(seed, id));
    let len = rng.random_range(len_range.0..=len_range.1);
    let words: Vec<usize> = (0..len).map(|_| rng.random_range(0..lexicon.len())).collect();
    let style = rng.random_range(0..NUM_STYLES);
    let pe: Vec<String> = words
        .iter()
        .map(|&w| {
            let v = &lexicon.entries[w].variants;
            v[style % v.len()].clone()
        })
        .collect();
    let mut constraints = Vec::new();
    let mut seen = vec![false; lexicon.len()];
    for (i, &w) in words.iter().enumerate() {
        if lexicon.entries[w].variants.len() < 2 || seen[w] {
            continue;
        }
        seen[w] = true;
        if rng.random::<f64>() < constraint_rate {
            constraints.push((i, pe[i].clone()));
        }
    }
    let draws = draw_noise(noise, len, &mut rng);
    Draft {
        words,
        pe,
        constraints,
        draws,
        rng,
    }
}

fn constraint_set(lexicon: &Lexicon, d: &Draft) -> ConstraintSet {
    d.constraints
        .iter()
        .map(|(i, v)| {
            Constraint::new(
                Sentence::from_text(&lexicon.entries[d.words[*i]].src),
                Sentence::from_text(v),
            )
            .expect("non-empty")
        })
        .collect()
}

pub fn gen_corpus(
    lexicon: &Lexicon,
    n_triplets: usize,
    len_range: (usize, usize),
    noise: &NoiseConfig,
    constraint_rate: f64,
    seed: u64,
) -> Result<Corpus> {
    check_args(len_range, constraint_rate, noise)?;
    let targets = lexicon.target_vocab();
    let triplets = (0..n_triplets as u64)
        .map(|id| {
            let d = draft(lexicon, id, len_range, noise, constraint_rate, seed);
            let mt = corrupt(lexicon, &targets, &d.words, &d.pe, &d.draws, &vec![false; d.pe.len()]);
            let src: Vec<String> = d.words.iter().map(|&w| lexicon.entries[w].src.clone()).collect();
            Triplet::new(id, to_sentence(&src), to_sentence(&mt), to_sentence(&d.pe))
                .with_constraints(constraint_set(lexicon, &d))
        })
        .collect();
    Ok(Corpus::new("synthetic", triplets))
}

/// A test set for MT→APE cascades: the corpus carries unconstrained MT in
/// its `mt` column, `constrained_mt` honours every constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeTestset {
    pub corpus: Corpus,
    pub constrained_mt: Vec<Sentence>,
}

/// Like [`gen_corpus`], but a `deviate_fraction` of the constraints asks
/// for a variant other than the one the sentence style would pick, as
/// customer terminology may. The post-edit follows the constraint. The
/// unconstrained MT is produced from the style-only translation; the
/// constrained MT applies the same noise draws to the post-edit while
/// leaving constrained positions untouched.
pub fn gen_cascade_testset(
    lexicon: &Lexicon,
    n_triplets: usize,
    len_range: (usize, usize),
    noise: &NoiseConfig,
    constraint_rate: f64,
    deviate_fraction: f64,
    seed: u64,
) -> Result<CascadeTestset> {
    check_args(len_range, constraint_rate, noise)?;
    if !(0.0..=1.0).contains(&deviate_fraction) {
        return Err(ApeError::Argument(format!(
            "deviate_fraction {deviate_fraction} outside [0, 1]"
        )));
    }
    let targets = lexicon.target_vocab();
    let mut triplets = Vec::with_capacity(n_triplets);
    let mut cmt = Vec::with_capacity(n_triplets);
    for id in 0..n_triplets as u64 {
        let mut d = draft(lexicon, id, len_range, noise, constraint_rate, seed);
        let style_pe = d.pe.clone();
        let mut protected = vec![false; d.pe.len()];
        for k in 0..d.constraints.len() {
            let (pos, _) = d.constraints[k].clone();
            let w = d.words[pos];
            let variants = &lexicon.entries[w].variants;
            if d.rng.random::<f64>() < deviate_fraction {
                let others: Vec<&String> = variants.iter().filter(|v| **v != style_pe[pos]).collect();
                let chosen = others[d.rng.random_range(0..others.len())].clone();
                d.constraints[k].1 = chosen.clone();
                for (i, &wi) in d.words.iter().enumerate() {
                    if wi == w {
                        d.pe[i] = chosen.clone();
                    }
                }
            }
            for (i, &wi) in d.words.iter().enumerate() {
                if wi == w {
                    protected[i] = true;
                }
            }
        }
        let mt = corrupt(lexicon, &targets, &d.words, &style_pe, &d.draws, &vec![false; d.pe.len()]);
        let cm = corrupt(lexicon, &targets, &d.words, &d.pe, &d.draws, &protected);
        let src: Vec<String> = d.words.iter().map(|&w| lexicon.entries[w].src.clone()).collect();
        triplets.push(
            Triplet::new(id, to_sentence(&src), to_sentence(&mt), to_sentence(&d.pe))
                .with_constraints(constraint_set(lexicon, &d)),
        );
        cmt.push(to_sentence(&cm));
    }
    Ok(CascadeTestset {
        corpus: Corpus::new("synthetic.cascade", triplets),
        constrained_mt: cmt,
    })
}

/// Every generation parameter of a synthetic train/test pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub lexicon_size: usize,
    pub ambiguous_fraction: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub noise: NoiseConfig,
    pub constraint_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            lexicon_size: 200,
            ambiguous_fraction: 0.5,
            n_train: 20_000,
            n_test: 1_000,
            len_min: 3,
            len_max: 10,
            noise: NoiseConfig {
                sub_rate: 0.1,
                del_rate: 0.05,
                ins_rate: 0.05,
            },
            constraint_rate: 0.25,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub lexicon: Lexicon,
    pub train: Corpus,
    pub test: Corpus,
}

impl SynthConfig {
    pub fn len_range(&self) -> (usize, usize) {
        (self.len_min, self.len_max)
    }

    /// Seed of the test corpus stream, distinct from the training stream.
    pub fn test_seed(&self) -> u64 {
        triplet_seed(self.seed, u64::MAX)
    }

    pub fn generate(&self) -> Result<SyntheticData> {
        let lexicon = gen_lexicon(self.lexicon_size, self.ambiguous_fraction, self.seed)?;
        let mut train = gen_corpus(
            &lexicon,
            self.n_train,
            self.len_range(),
            &self.noise,
            self.constraint_rate,
            self.seed.wrapping_add(1),
        )?;
        train.name = "synthetic.train".into();
        let mut test = gen_corpus(
            &lexicon,
            self.n_test,
            self.len_range(),
            &self.noise,
            self.constraint_rate,
            self.test_seed(),
        )?;
        test.name = "synthetic.test".into();
        Ok(SyntheticData {
            lexicon,
            train,
            test,
        })
    }
}
