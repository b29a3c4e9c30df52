//! Synonym/antonym constraint swaps for data augmentation and for probing
//! how faithfully a model copies the constraints it is given.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Constraint, Corpus, Sentence, Token, Triplet};
use crate::error::{ApeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Synonym,
    Antonym,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Synonym => "synonym",
            Relation::Antonym => "antonym",
        })
    }
}

impl FromStr for Relation {
    type Err = ApeError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synonym" => Ok(Relation::Synonym),
            "antonym" => Ok(Relation::Antonym),
            _ => Err(ApeError::Argument(format!("unknown relation {s:?}"))),
        }
    }
}

/// Target word → related target words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationLexicon {
    relation: Relation,
    entries: BTreeMap<String, Vec<String>>,
}

impl RelationLexicon {
    pub fn new(relation: Relation, entries: BTreeMap<String, Vec<String>>) -> Result<Self> {
        for (w, rel) in &entries {
            if rel.is_empty() {
                return Err(ApeError::Argument(format!("{w:?} has an empty {relation} list")));
            }
            if relation == Relation::Synonym && rel.contains(w) {
                return Err(ApeError::Argument(format!("{w:?} listed as its own synonym")));
            }
        }
        Ok(RelationLexicon { relation, entries })
    }

    pub fn empty(relation: Relation) -> Self {
        RelationLexicon {
            relation,
            entries: BTreeMap::new(),
        }
    }

    pub fn relation(&self) -> Relation {
        self.relation
    }

    pub fn related(&self, word: &str) -> Option<&[String]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .flat_map(|(k, v)| std::iter::once(k.as_str()).chain(v.iter().map(String::as_str)))
    }
}

/// Writes `word<TAB>relation<TAB>related` lines.
pub fn save_relations(lexicons: &[RelationLexicon], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| ApeError::io(path, e))?;
    for lex in lexicons {
        for (w, rel) in &lex.entries {
            for r in rel {
                writeln!(f, "{w}\t{}\t{r}", lex.relation).map_err(|e| ApeError::io(path, e))?;
            }
        }
    }
    Ok(())
}

/// Reads a relation TSV into one lexicon per relation (synonyms first).
pub fn load_relations(path: impl AsRef<Path>) -> Result<Vec<RelationLexicon>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ApeError::io(path, e))?;
    let mut grouped: BTreeMap<Relation, BTreeMap<String, Vec<String>>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let parse_err = |message: String| ApeError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 || cols.iter().any(|c| c.is_empty() || c.contains(' ')) {
            return Err(parse_err("expected word<TAB>relation<TAB>related_word".into()));
        }
        let rel: Relation = cols[1].parse().map_err(|e: ApeError| parse_err(e.to_string()))?;
        let list = grouped
            .entry(rel)
            .or_default()
            .entry(cols[0].to_string())
            .or_default();
        if !list.iter().any(|r| r == cols[2]) {
            list.push(cols[2].to_string());
        }
    }
    grouped
        .into_iter()
        .map(|(rel, entries)| RelationLexicon::new(rel, entries))
        .collect()
}

fn replace_word(s: &Sentence, from: &Token, to: &Token) -> Sentence {
    Sentence(
        s.tokens()
            .iter()
            .map(|t| if t == from { to.clone() } else { t.clone() })
            .collect(),
    )
}

/// A single-word constraint target that occurs in the post-edit.
fn swappable(t: &Triplet, c: &Constraint) -> Option<Token> {
    match c.tgt.tokens() {
        [w] if t.pe.tokens().contains(w) => Some(w.clone()),
        _ => None,
    }
}

/// Swaps constraint `ci` of `t` to `to`, along with every post-edit
/// occurrence of the old word and every other constraint naming it.
fn swap(t: &Triplet, ci: usize, from: &Token, to: &Token) -> Triplet {
    let mut out = t.clone();
    let old = out.constraints.0[ci].tgt.clone();
    for c in out.constraints.0.iter_mut() {
        if c.tgt == old {
            c.tgt = Sentence(vec![to.clone()]);
        }
    }
    out.pe = replace_word(&t.pe, from, to);
    out
}

/// Number of samples [`augment_corpus`] emits, counted independently.
pub fn count_augmentations(corpus: &Corpus, lexicons: &[RelationLexicon]) -> usize {
    let mut n = 0;
    for t in corpus.iter() {
        for c in &t.constraints {
            if let Some(w) = swappable(t, c) {
                n += lexicons
                    .iter()
                    .filter_map(|l| l.related(w.as_str()))
                    .map(<[String]>::len)
                    .sum::<usize>();
            }
        }
    }
    n
}

/// One new triplet for every (triplet, constraint, related word): the
/// constraint target and its post-edit occurrences are replaced; source and
/// MT stay untouched.
pub fn augment_corpus(corpus: &Corpus, lexicons: &[RelationLexicon]) -> Corpus {
    let mut out = Vec::new();
    for t in corpus.iter() {
        for (ci, c) in t.constraints.iter().enumerate() {
            let Some(w) = swappable(t, c) else { continue };
            for lex in lexicons {
                for r in lex.related(w.as_str()).unwrap_or_default() {
                    let to = Token::new(r.clone()).expect("lexicon words are tokens");
                    out.push(swap(t, ci, &w, &to));
                }
            }
        }
    }
    Corpus::new(format!("{}.aug", corpus.name), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Original,
    Synonym,
    Antonym,
    Random,
}

impl FromStr for ProbeKind {
    type Err = ApeError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "original" => Ok(ProbeKind::Original),
            "synonym" => Ok(ProbeKind::Synonym),
            "antonym" => Ok(ProbeKind::Antonym),
            "random" => Ok(ProbeKind::Random),
            _ => Err(ApeError::Argument(format!("unknown probe kind {s:?}"))),
        }
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeKind::Original => "original",
            ProbeKind::Synonym => "synonym",
            ProbeKind::Antonym => "antonym",
            ProbeKind::Random => "random",
        })
    }
}

/// A probe corpus plus the test-set ids its triplets came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    pub corpus: Corpus,
    pub source_ids: Vec<u64>,
    pub dropped: usize,
}

/// Replaces every swappable constraint target of each triplet according to
/// `kind`. Triplets with nothing to replace are dropped and counted.
pub fn build_probe_set(
    testset: &Corpus,
    kind: ProbeKind,
    lexicons: &[RelationLexicon],
    seed: u64,
) -> Result<ProbeSet> {
    if kind == ProbeKind::Original {
        return Ok(ProbeSet {
            corpus: testset.clone(),
            source_ids: testset.iter().map(|t| t.id).collect(),
            dropped: 0,
        });
    }
    let find = |rel: Relation| lexicons.iter().find(|l| l.relation() == rel);
    let synonyms = find(Relation::Synonym);
    let relation_lex = match kind {
        ProbeKind::Synonym => Some(
            synonyms.ok_or_else(|| ApeError::Config("synonym probe needs a synonym lexicon".into()))?,
        ),
        ProbeKind::Antonym => Some(
            find(Relation::Antonym)
                .ok_or_else(|| ApeError::Config("antonym probe needs an antonym lexicon".into()))?,
        ),
        _ => None,
    };
    let vocab: Vec<String> = {
        let mut v: BTreeSet<String> = testset
            .iter()
            .flat_map(|t| t.pe.words())
            .map(str::to_string)
            .collect();
        for l in lexicons {
            v.extend(l.words().map(str::to_string));
        }
        v.into_iter().collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = Vec::new();
    let mut source_ids = Vec::new();
    let mut dropped = 0;
    for t in testset.iter() {
        let mut probe = t.clone();
        let mut changed = false;
        for ci in 0..t.constraints.len() {
            let Some(w) = swappable(&probe, &probe.constraints.0[ci]) else { continue };
            let choice = match relation_lex {
                Some(lex) => lex
                    .related(w.as_str())
                    .map(|rel| rel[rng.random_range(0..rel.len())].clone()),
                None => {
                    let banned: BTreeSet<&str> = std::iter::once(w.as_str())
                        .chain(synonyms.and_then(|s| s.related(w.as_str())).unwrap_or_default().iter().map(String::as_str))
                        .collect();
                    let pool: Vec<&String> = vocab.iter().filter(|v| !banned.contains(v.as_str())).collect();
                    (!pool.is_empty()).then(|| pool[rng.random_range(0..pool.len())].clone())
                }
            };
            if let Some(r) = choice {
                let to = Token::new(r).expect("vocabulary words are tokens");
                probe = swap(&probe, ci, &w, &to);
                changed = true;
            }
        }
        if changed {
            source_ids.push(t.id);
            kept.push(probe);
        } else {
            dropped += 1;
        }
    }
    Ok(ProbeSet {
        corpus: Corpus::new(format!("{}.{kind}", testset.name), kept),
        source_ids,
        dropped,
    })
}
