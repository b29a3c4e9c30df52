//! Byte-pair-encoding segmentation, factor propagation and a simple
//! most-frequent-casing truecaser.
//!
//! Subwords that do not end a word carry the `@@` continuation suffix, so
//! `lowest` may come out as `low@@ est`. Merges never cross word boundaries.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::corpus::{Corpus, Sentence, Token};
use crate::encode::EncodedSource;
use crate::error::{ApeError, Result};

pub const CONTINUATION: &str = "@@";

/// Default merge count for desk-scale corpora.
pub const DESK_MERGES: usize = 500;
/// Merge count used for full-size WMT-style data.
pub const FULL_MERGES: usize = 32_000;

/// An ordered list of learned merges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

impl BpeModel {
    pub fn from_merges(merges: Vec<(String, String)>) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (i, m) in merges.iter().enumerate() {
            if ranks.insert(m.clone(), i).is_some() {
                return Err(ApeError::Argument(format!(
                    "duplicate merge {} {}",
                    m.0, m.1
                )));
            }
        }
        Ok(BpeModel { merges, ranks })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Learns `num_merges` merges from the joint token stream, greedily taking
    /// the most frequent adjacent symbol pair (ties: lexicographically
    /// smallest pair). Stops early when no pair is left.
    pub fn train<'a>(
        sentences: impl IntoIterator<Item = &'a Sentence>,
        num_merges: usize,
    ) -> Result<Self> {
        let mut word_freq: BTreeMap<&str, u64> = BTreeMap::new();
        for s in sentences {
            for t in s.tokens() {
                *word_freq.entry(t.as_str()).or_default() += 1;
            }
        }
        if word_freq.is_empty() {
            return Err(ApeError::Argument("cannot train BPE on an empty corpus".into()));
        }

        let mut symbols: Vec<String> = Vec::new();
        let mut symbol_ids: HashMap<String, u32> = HashMap::new();
        let mut intern = |s: String, symbols: &mut Vec<String>| -> u32 {
            if let Some(&id) = symbol_ids.get(&s) {
                return id;
            }
            let id = symbols.len() as u32;
            symbols.push(s.clone());
            symbol_ids.insert(s, id);
            id
        };

        let mut words: Vec<(Vec<u32>, i64)> = Vec::with_capacity(word_freq.len());
        for (w, f) in &word_freq {
            let syms = w
                .chars()
                .map(|c| intern(c.to_string(), &mut symbols))
                .collect();
            words.push((syms, *f as i64));
        }

        let mut pair_counts: HashMap<(u32, u32), i64> = HashMap::new();
        let mut where_: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
        for (wi, (syms, f)) in words.iter().enumerate() {
            for p in syms.windows(2) {
                let key = (p[0], p[1]);
                *pair_counts.entry(key).or_default() += f;
                where_.entry(key).or_default().insert(wi);
            }
        }

        let mut merges = Vec::with_capacity(num_merges);
        while merges.len() < num_merges {
            let best = pair_counts
                .iter()
                .filter(|(_, &c)| c > 0)
                .max_by(|(a, ca), (b, cb)| {
                    ca.cmp(cb).then_with(|| {
                        // smaller strings win ties, so reverse the comparison
                        let ka = (&symbols[a.0 as usize], &symbols[a.1 as usize]);
                        let kb = (&symbols[b.0 as usize], &symbols[b.1 as usize]);
                        kb.cmp(&ka)
                    })
                })
                .map(|(k, _)| *k);
            let Some((left, right)) = best else { break };
            let merged = format!("{}{}", symbols[left as usize], symbols[right as usize]);
            merges.push((symbols[left as usize].clone(), symbols[right as usize].clone()));
            let new_id = intern(merged, &mut symbols);

            let affected: Vec<usize> = where_
                .remove(&(left, right))
                .map(|s| s.into_iter().collect())
                .unwrap_or_default();
            let mut affected = affected;
            affected.sort_unstable();
            for wi in affected {
                let (syms, f) = &mut words[wi];
                let f = *f;
                for p in syms.windows(2) {
                    let key = (p[0], p[1]);
                    if let Some(c) = pair_counts.get_mut(&key) {
                        *c -= f;
                    }
                }
                let mut out = Vec::with_capacity(syms.len());
                let mut i = 0;
                while i < syms.len() {
                    if i + 1 < syms.len() && syms[i] == left && syms[i + 1] == right {
                        out.push(new_id);
                        i += 2;
                    } else {
                        out.push(syms[i]);
                        i += 1;
                    }
                }
                *syms = out;
                for p in syms.windows(2) {
                    let key = (p[0], p[1]);
                    *pair_counts.entry(key).or_default() += f;
                    where_.entry(key).or_default().insert(wi);
                }
            }
            pair_counts.remove(&(left, right));
        }
        BpeModel::from_merges(merges)
    }

    /// Trains on the source, MT and post-edit columns of all corpora.
    pub fn train_on_corpora(corpora: &[&Corpus], num_merges: usize) -> Result<Self> {
        let sentences = corpora
            .iter()
            .flat_map(|c| c.iter())
            .flat_map(|t| [&t.src, &t.mt, &t.pe]);
        BpeModel::train(sentences, num_merges)
    }

    /// Segments one word into subword strings (without continuation marks).
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut syms: Vec<String> = word.chars().map(|c| c.to_string()).collect();
        loop {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, p)| {
                    self.ranks
                        .get(&(p[0].clone(), p[1].clone()))
                        .map(|&r| (r, i))
                })
                .min();
            let Some((rank, _)) = best else { break };
            let (l, r) = &self.merges[rank];
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && &syms[i] == l && &syms[i + 1] == r {
                    out.push(format!("{l}{r}"));
                    i += 2;
                } else {
                    out.push(std::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            syms = out;
        }
        syms
    }

    /// Segments a sentence. The second value maps every subword to the
    /// index of the word it came from.
    pub fn apply(&self, sentence: &Sentence) -> (Sentence, Vec<usize>) {
        let mut out = Vec::with_capacity(sentence.len());
        let mut align = Vec::with_capacity(sentence.len());
        for (wi, tok) in sentence.tokens().iter().enumerate() {
            let pieces = self.segment_word(tok.as_str());
            let last = pieces.len() - 1;
            for (pi, piece) in pieces.into_iter().enumerate() {
                let text = if pi < last {
                    format!("{piece}{CONTINUATION}")
                } else {
                    piece
                };
                out.push(Token::new(text).expect("subwords of a token are valid tokens"));
                align.push(wi);
            }
        }
        (Sentence(out), align)
    }

    /// Segments the tokens of an encoded input and copies each word's factor
    /// to all of its subwords.
    pub fn apply_encoded(&self, input: &EncodedSource) -> Result<EncodedSource> {
        let (tokens, align) = self.apply(&input.tokens);
        let factors = propagate_factors(&input.factors, &align)?;
        EncodedSource::new(tokens, factors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| ApeError::io(path, e))?;
        for (l, r) in &self.merges {
            writeln!(f, "{l} {r}").map_err(|e| ApeError::io(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ApeError::io(path, e))?;
        BpeModel::parse(&text).map_err(|(line, message)| ApeError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        })
    }

    fn parse(text: &str) -> std::result::Result<Self, (usize, String)> {
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let parts: Vec<&str> = line.split(' ').collect();
            if parts.len() != 2 || parts.iter().any(|p| p.is_empty()) {
                return Err((i + 1, format!("expected two symbols, got {line:?}")));
            }
            merges.push((parts[0].to_string(), parts[1].to_string()));
        }
        BpeModel::from_merges(merges).map_err(|e| (0, e.to_string()))
    }
}

/// Undoes segmentation by gluing every `@@`-suffixed piece to its successor.
pub fn bpe_restore(sentence: &Sentence) -> Sentence {
    let mut out = Vec::with_capacity(sentence.len());
    let mut pending = String::new();
    for tok in sentence.tokens() {
        match tok.as_str().strip_suffix(CONTINUATION) {
            Some(stem) => pending.push_str(stem),
            None => {
                pending.push_str(tok.as_str());
                out.push(Token::new(std::mem::take(&mut pending)).expect("non-empty"));
            }
        }
    }
    // a dangling continuation at the end of a truncated hypothesis
    if !pending.is_empty() {
        out.push(Token::new(pending).expect("non-empty"));
    }
    Sentence(out)
}

/// Gives each subword the factor of the word it belongs to.
pub fn propagate_factors<T: Copy>(factors_per_word: &[T], alignment: &[usize]) -> Result<Vec<T>> {
    alignment
        .iter()
        .map(|&wi| {
            factors_per_word.get(wi).copied().ok_or_else(|| {
                ApeError::Argument(format!(
                    "alignment index {wi} out of range for {} words",
                    factors_per_word.len()
                ))
            })
        })
        .collect()
}

/// Lowercased word → most frequent surface form.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TruecaseModel {
    casing: BTreeMap<String, String>,
}

impl TruecaseModel {
    /// Counts surface forms everywhere except sentence-initial position,
    /// where capitalization carries no information. Ties go to the
    /// lexicographically smallest form.
    pub fn train<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> Self {
        let mut counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for s in sentences {
            for t in s.tokens().iter().skip(1) {
                *counts
                    .entry(t.as_str().to_lowercase())
                    .or_default()
                    .entry(t.as_str().to_string())
                    .or_default() += 1;
            }
        }
        let casing = counts
            .into_iter()
            .map(|(k, forms)| {
                let best = forms
                    .into_iter()
                    .max_by(|(fa, ca), (fb, cb)| ca.cmp(cb).then_with(|| fb.cmp(fa)))
                    .map(|(f, _)| f)
                    .expect("at least one form");
                (k, best)
            })
            .collect();
        TruecaseModel { casing }
    }

    pub fn get(&self, word: &str) -> Option<&str> {
        self.casing.get(&word.to_lowercase()).map(String::as_str)
    }

    /// Restores the natural casing of the sentence-initial token; unknown
    /// initial words are lowercased. Other tokens are left alone.
    pub fn truecase(&self, sentence: &Sentence) -> Sentence {
        let mut toks = sentence.0.clone();
        if let Some(first) = toks.first_mut() {
            let fixed = self
                .get(first.as_str())
                .map(str::to_string)
                .unwrap_or_else(|| first.as_str().to_lowercase());
            *first = Token::new(fixed).expect("casing preserves non-emptiness");
        }
        Sentence(toks)
    }

    /// Capitalizes the first character of the sentence.
    pub fn detruecase(&self, sentence: &Sentence) -> Sentence {
        let mut toks = sentence.0.clone();
        if let Some(first) = toks.first_mut() {
            let mut chars = first.as_str().chars();
            let head = chars.next().expect("non-empty token");
            let fixed: String = head.to_uppercase().chain(chars).collect();
            *first = Token::new(fixed).expect("non-empty");
        }
        Sentence(toks)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| ApeError::io(path, e))?;
        for (k, v) in &self.casing {
            writeln!(f, "{k}\t{v}").map_err(|e| ApeError::io(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ApeError::io(path, e))?;
        let mut casing = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let (k, v) = line.split_once('\t').ok_or_else(|| ApeError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected lowercase<TAB>surface".into(),
            })?;
            if k != k.to_lowercase() || v.to_lowercase() != k {
                return Err(ApeError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("{k:?} is not the lowercase form of {v:?}"),
                });
            }
            casing.insert(k.to_string(), v.to_string());
        }
        Ok(TruecaseModel { casing })
    }
}
