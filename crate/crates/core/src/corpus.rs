//! APE triplets, constraint annotations and the parallel-file formats they
//! live in.
//!
//! A corpus on disk is three line-aligned UTF-8 files (source, MT output,
//! post-edit) with space-separated tokens, plus an optional constraint file
//! holding one JSON object per line:
//!
//! ```text
//! {"id":0,"constraints":[{"src":["features"],"tgt":["Funktionen"]}]}
//! ```

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ApeError, Result};

/// A single whitespace-free, non-empty token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Token(String);

impl Token {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(ApeError::Argument("empty token".into()));
        }
        if text.chars().any(char::is_whitespace) {
            return Err(ApeError::Argument(format!(
                "token {text:?} contains whitespace"
            )));
        }
        Ok(Token(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Token {
    type Error = ApeError;

    fn try_from(value: String) -> Result<Self> {
        Token::new(value)
    }
}

impl From<Token> for String {
    fn from(value: Token) -> Self {
        value.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl PartialEq<str> for Token {
    fn eq(&self, other: &str) -> bool {
        self.0 == other
    }
}

impl PartialEq<&str> for Token {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

/// An ordered token sequence. Serializes as a single-space join.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Sentence(pub Vec<Token>);

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Self {
        Sentence(tokens)
    }

    /// Whitespace tokenization. Never fails: whitespace runs are separators.
    pub fn from_text(text: &str) -> Self {
        Sentence(
            text.split_whitespace()
                .map(|t| Token(t.to_string()))
                .collect(),
        )
    }

    /// Builds a sentence from string slices, validating every token.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        words
            .iter()
            .map(|w| Token::new(w.as_ref()))
            .collect::<Result<Vec<_>>>()
            .map(Sentence)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn words(&self) -> Vec<&str> {
        self.0.iter().map(Token::as_str).collect()
    }

    /// Start index of the first contiguous occurrence of `phrase`.
    pub fn find(&self, phrase: &[Token]) -> Option<usize> {
        find_subsequence(&self.0, phrase)
    }

    pub fn contains_phrase(&self, phrase: &[Token]) -> bool {
        self.find(phrase).is_some()
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(t.as_str())?;
        }
        Ok(())
    }
}

impl FromStr for Sentence {
    type Err = ApeError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(Sentence::from_text(s))
    }
}

impl From<Vec<Token>> for Sentence {
    fn from(value: Vec<Token>) -> Self {
        Sentence(value)
    }
}

/// First start index of `needle` inside `haystack`. An empty needle never
/// matches.
pub fn find_subsequence<T: PartialEq>(haystack: &[T], needle: &[T]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// A terminology pair: the source phrase must be rendered as the target
/// phrase whenever it occurs in the source sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Constraint {
    pub src: Sentence,
    pub tgt: Sentence,
}

impl Constraint {
    pub fn new(src: Sentence, tgt: Sentence) -> Result<Self> {
        if src.is_empty() || tgt.is_empty() {
            return Err(ApeError::Argument(
                "constraint phrases must be non-empty".into(),
            ));
        }
        Ok(Constraint { src, tgt })
    }

    /// Convenience constructor from space-separated phrases.
    pub fn from_text(src: &str, tgt: &str) -> Result<Self> {
        Constraint::new(Sentence::from_text(src), Sentence::from_text(tgt))
    }
}

#[derive(Serialize, Deserialize)]
struct ConstraintRecord {
    src: Vec<Token>,
    tgt: Vec<Token>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintLine {
    id: u64,
    constraints: Vec<ConstraintRecord>,
}

/// The constraints attached to one triplet, in source order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct ConstraintSet(pub Vec<Constraint>);

impl ConstraintSet {
    pub fn new(constraints: Vec<Constraint>) -> Self {
        ConstraintSet(constraints)
    }

    pub fn empty() -> Self {
        ConstraintSet(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Constraint> {
        self.0.iter()
    }

    /// Stable-sorts by the position of each source phrase's first occurrence
    /// in `src`. Constraints whose source phrase is absent go last.
    pub fn sorted_by_source(&self, src: &Sentence) -> ConstraintSet {
        let mut keyed: Vec<(usize, Constraint)> = self
            .0
            .iter()
            .map(|c| (src.find(c.src.tokens()).unwrap_or(usize::MAX), c.clone()))
            .collect();
        keyed.sort_by_key(|(k, _)| *k);
        ConstraintSet(keyed.into_iter().map(|(_, c)| c).collect())
    }

    fn to_json_line(&self, id: u64) -> Result<String> {
        let line = ConstraintLine {
            id,
            constraints: self
                .0
                .iter()
                .map(|c| ConstraintRecord {
                    src: c.src.0.clone(),
                    tgt: c.tgt.0.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&line)?)
    }

    fn from_json_line(text: &str) -> std::result::Result<(u64, ConstraintSet), String> {
        let parsed: ConstraintLine = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let constraints = parsed
            .constraints
            .into_iter()
            .map(|r| Constraint::new(Sentence(r.src), Sentence(r.tgt)))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.to_string())?;
        Ok((parsed.id, ConstraintSet(constraints)))
    }
}

impl<'a> IntoIterator for &'a ConstraintSet {
    type Item = &'a Constraint;
    type IntoIter = std::slice::Iter<'a, Constraint>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl FromIterator<Constraint> for ConstraintSet {
    fn from_iter<I: IntoIterator<Item = Constraint>>(iter: I) -> Self {
        ConstraintSet(iter.into_iter().collect())
    }
}

/// One APE example: source, MT output, post-edit and its constraints.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub id: u64,
    pub src: Sentence,
    pub mt: Sentence,
    pub pe: Sentence,
    pub constraints: ConstraintSet,
}

impl Triplet {
    pub fn new(id: u64, src: Sentence, mt: Sentence, pe: Sentence) -> Self {
        Triplet {
            id,
            src,
            mt,
            pe,
            constraints: ConstraintSet::empty(),
        }
    }

    pub fn with_constraints(mut self, constraints: ConstraintSet) -> Self {
        self.constraints = constraints;
        self
    }
}

/// An ordered collection of triplets with sequential ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub triplets: Vec<Triplet>,
}

impl Corpus {
    /// Builds a corpus, renumbering ids `0..n` in order.
    pub fn new(name: impl Into<String>, triplets: Vec<Triplet>) -> Self {
        let triplets = triplets
            .into_iter()
            .enumerate()
            .map(|(i, mut t)| {
                t.id = i as u64;
                t
            })
            .collect();
        Corpus {
            name: name.into(),
            triplets,
        }
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Triplet> {
        self.triplets.iter()
    }

    pub fn num_constraints(&self) -> usize {
        self.triplets.iter().map(|t| t.constraints.len()).sum()
    }

    pub fn constraint_sets(&self) -> Vec<ConstraintSet> {
        self.triplets.iter().map(|t| t.constraints.clone()).collect()
    }

    pub fn mt_column(&self) -> Vec<Sentence> {
        self.triplets.iter().map(|t| t.mt.clone()).collect()
    }

    pub fn pe_column(&self) -> Vec<Sentence> {
        self.triplets.iter().map(|t| t.pe.clone()).collect()
    }

    /// Replaces the constraint sets. `sets` must be aligned with the triplets.
    pub fn with_constraint_sets(&self, sets: Vec<ConstraintSet>) -> Result<Corpus> {
        if sets.len() != self.len() {
            return Err(ApeError::Argument(format!(
                "{} constraint sets for {} triplets",
                sets.len(),
                self.len()
            )));
        }
        let triplets = self
            .triplets
            .iter()
            .cloned()
            .zip(sets)
            .map(|(t, c)| t.with_constraints(c))
            .collect();
        Ok(Corpus::new(self.name.clone(), triplets))
    }

    /// Replaces the MT column, e.g. with the outputs of another MT system.
    pub fn with_mt(&self, mt: Vec<Sentence>) -> Result<Corpus> {
        if mt.len() != self.len() {
            return Err(ApeError::Argument(format!(
                "{} MT sentences for {} triplets",
                mt.len(),
                self.len()
            )));
        }
        let triplets = self
            .triplets
            .iter()
            .cloned()
            .zip(mt)
            .map(|(mut t, m)| {
                t.mt = m;
                t
            })
            .collect();
        Ok(Corpus::new(self.name.clone(), triplets))
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| ApeError::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Reads a sentence-per-line file.
pub fn read_sentences(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    Ok(read_lines(path.as_ref())?
        .iter()
        .map(|l| Sentence::from_text(l))
        .collect())
}

/// Writes a sentence-per-line file with LF endings.
pub fn write_sentences<'a>(
    path: impl AsRef<Path>,
    sentences: impl IntoIterator<Item = &'a Sentence>,
) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| ApeError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in sentences {
        writeln!(w, "{s}").map_err(|e| ApeError::io(path, e))?;
    }
    w.flush().map_err(|e| ApeError::io(path, e))
}

/// Reads a constraint JSONL file. Line `i` must carry `"id": i`.
pub fn read_constraints(path: impl AsRef<Path>) -> Result<Vec<ConstraintSet>> {
    let path = path.as_ref();
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let (id, set) = ConstraintSet::from_json_line(line).map_err(|message| {
                ApeError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message,
                }
            })?;
            if id != i as u64 {
                return Err(ApeError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("id {id} does not match line index {i}"),
                });
            }
            Ok(set)
        })
        .collect()
}

pub fn write_constraints<'a>(
    path: impl AsRef<Path>,
    sets: impl IntoIterator<Item = &'a ConstraintSet>,
) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| ApeError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (i, set) in sets.into_iter().enumerate() {
        writeln!(w, "{}", set.to_json_line(i as u64)?).map_err(|e| ApeError::io(path, e))?;
    }
    w.flush().map_err(|e| ApeError::io(path, e))
}

/// Loads three line-aligned files (and optionally a constraint file) into a
/// corpus. Ids are assigned from line indices.
pub fn load_corpus(
    name: &str,
    src_path: impl AsRef<Path>,
    mt_path: impl AsRef<Path>,
    pe_path: impl AsRef<Path>,
    constraints_path: Option<&Path>,
) -> Result<Corpus> {
    let src = read_sentences(src_path.as_ref())?;
    let mt = read_sentences(mt_path.as_ref())?;
    let pe = read_sentences(pe_path.as_ref())?;
    let expected = src.len();
    for (path, found) in [(mt_path.as_ref(), mt.len()), (pe_path.as_ref(), pe.len())] {
        if found != expected {
            return Err(ApeError::Alignment {
                path: path.to_path_buf(),
                expected,
                found,
            });
        }
    }
    let constraints = match constraints_path {
        Some(path) => {
            let sets = read_constraints(path)?;
            if sets.len() != expected {
                return Err(ApeError::Alignment {
                    path: path.to_path_buf(),
                    expected,
                    found: sets.len(),
                });
            }
            sets
        }
        None => vec![ConstraintSet::empty(); expected],
    };
    let triplets = src
        .into_iter()
        .zip(mt)
        .zip(pe)
        .zip(constraints)
        .enumerate()
        .map(|(i, (((s, m), p), c))| Triplet::new(i as u64, s, m, p).with_constraints(c))
        .collect();
    Ok(Corpus::new(name, triplets))
}

/// File names used by [`save_corpus_dir`] / [`load_corpus_dir`].
pub const SRC_FILE: &str = "corpus.src";
pub const MT_FILE: &str = "corpus.mt";
pub const PE_FILE: &str = "corpus.pe";
pub const CONSTRAINTS_FILE: &str = "corpus.constraints.jsonl";

pub fn save_corpus(
    corpus: &Corpus,
    src_path: impl AsRef<Path>,
    mt_path: impl AsRef<Path>,
    pe_path: impl AsRef<Path>,
    constraints_path: Option<&Path>,
) -> Result<()> {
    write_sentences(src_path, corpus.triplets.iter().map(|t| &t.src))?;
    write_sentences(mt_path, corpus.triplets.iter().map(|t| &t.mt))?;
    write_sentences(pe_path, corpus.triplets.iter().map(|t| &t.pe))?;
    if let Some(path) = constraints_path {
        write_constraints(path, corpus.triplets.iter().map(|t| &t.constraints))?;
    }
    Ok(())
}

/// Writes `corpus.{src,mt,pe}` and the constraint file into `dir`.
pub fn save_corpus_dir(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| ApeError::io(dir, e))?;
    let cpath = dir.join(CONSTRAINTS_FILE);
    save_corpus(
        corpus,
        dir.join(SRC_FILE),
        dir.join(MT_FILE),
        dir.join(PE_FILE),
        Some(&cpath),
    )
}

pub fn load_corpus_dir(name: &str, dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let cpath = dir.join(CONSTRAINTS_FILE);
    load_corpus(
        name,
        dir.join(SRC_FILE),
        dir.join(MT_FILE),
        dir.join(PE_FILE),
        cpath.exists().then_some(cpath.as_path()),
    )
}

/// `factor` back-to-back copies of the corpus, renumbered.
pub fn upsample(corpus: &Corpus, factor: usize) -> Result<Corpus> {
    if factor < 1 {
        return Err(ApeError::Argument("upsample factor must be >= 1".into()));
    }
    let mut triplets = Vec::with_capacity(corpus.len() * factor);
    for _ in 0..factor {
        triplets.extend(corpus.triplets.iter().cloned());
    }
    Ok(Corpus::new(corpus.name.clone(), triplets))
}

/// `a` followed by `b`, renumbered.
pub fn join(a: &Corpus, b: &Corpus) -> Corpus {
    let triplets = a.triplets.iter().chain(b.triplets.iter()).cloned().collect();
    let name = match (a.name.is_empty(), b.name.is_empty()) {
        (true, _) => b.name.clone(),
        (_, true) => a.name.clone(),
        _ => format!("{}+{}", a.name, b.name),
    };
    Corpus::new(name, triplets)
}

/// Random held-out split. Both parts keep the original relative order.
pub fn holdout_split(corpus: &Corpus, n_valid: usize, seed: u64) -> Result<(Corpus, Corpus)> {
    if n_valid > corpus.len() {
        return Err(ApeError::Argument(format!(
            "n_valid {n_valid} exceeds corpus size {}",
            corpus.len()
        )));
    }
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut valid_mask = vec![false; corpus.len()];
    for &i in &idx[..n_valid] {
        valid_mask[i] = true;
    }
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (t, is_valid) in corpus.triplets.iter().zip(valid_mask) {
        if is_valid {
            valid.push(t.clone());
        } else {
            train.push(t.clone());
        }
    }
    Ok((
        Corpus::new(format!("{}.train", corpus.name), train),
        Corpus::new(format!("{}.valid", corpus.name), valid),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Corpus {
        let triplets = (0..n)
            .map(|i| {
                Triplet::new(
                    0,
                    Sentence::from_text(&format!("src {i}")),
                    Sentence::from_text(&format!("mt {i}")),
                    Sentence::from_text(&format!("pe {i}")),
                )
            })
            .collect();
        Corpus::new("toy", triplets)
    }

    #[test]
    fn token_rejects_whitespace_and_empty() {
        assert!(Token::new("").is_err());
        assert!(Token::new("a b").is_err());
        assert!(Token::new("a\tb").is_err());
        assert!(Token::new("Größe").is_ok());
    }

    #[test]
    fn load_three_lines() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["a.src", "a.mt", "a.pe"] {
            fs::write(dir.path().join(f), "x y\nz\nw w w\n").unwrap();
        }
        let c = load_corpus(
            "a",
            dir.path().join("a.src"),
            dir.path().join("a.mt"),
            dir.path().join("a.pe"),
            None,
        )
        .unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.triplets.iter().map(|t| t.id).collect::<Vec<_>>(), [0, 1, 2]);
        assert_eq!(c.triplets[2].pe.len(), 3);
    }

    #[test]
    fn load_empty_files() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["a.src", "a.mt", "a.pe"] {
            fs::write(dir.path().join(f), "").unwrap();
        }
        let c = load_corpus(
            "a",
            dir.path().join("a.src"),
            dir.path().join("a.mt"),
            dir.path().join("a.pe"),
            None,
        )
        .unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn load_misaligned_names_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.src"), "1\n2\n3\n").unwrap();
        fs::write(dir.path().join("a.mt"), "1\n2\n3\n").unwrap();
        fs::write(dir.path().join("a.pe"), "1\n2\n").unwrap();
        let err = load_corpus(
            "a",
            dir.path().join("a.src"),
            dir.path().join("a.mt"),
            dir.path().join("a.pe"),
            None,
        )
        .unwrap_err();
        match err {
            ApeError::Alignment { path, expected, found } => {
                assert!(path.ends_with("a.pe"));
                assert_eq!((expected, found), (3, 2));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_constraint_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        fs::write(
            &p,
            "{\"id\":0,\"constraints\":[]}\n{\"id\":1,\"constraints\":[{\"src\":[],\"tgt\":[\"x\"]}]}\n",
        )
        .unwrap();
        match read_constraints(&p).unwrap_err() {
            ApeError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
        fs::write(&p, "not json\n").unwrap();
        assert!(matches!(
            read_constraints(&p).unwrap_err(),
            ApeError::Parse { line: 1, .. }
        ));
    }

    #[test]
    fn upsample_counts_and_identity() {
        let c = toy(5);
        assert_eq!(upsample(&c, 10).unwrap().len(), 50);
        assert_eq!(upsample(&c, 1).unwrap(), c);
        assert_eq!(upsample(&toy(0), 3).unwrap().len(), 0);
        assert!(upsample(&c, 0).is_err());
        let up = upsample(&c, 3).unwrap();
        assert_eq!(up.triplets[7].src, c.triplets[2].src);
        assert_eq!(up.triplets[7].id, 7);
    }

    #[test]
    fn join_counts() {
        let a = toy(3);
        let b = toy(2);
        assert_eq!(join(&a, &b).len(), 5);
        let e = Corpus::new("", vec![]);
        assert_eq!(join(&e, &b).triplets, b.triplets);
        let official = toy(4);
        let synthetic = toy(7);
        assert_eq!(join(&upsample(&official, 10).unwrap(), &synthetic).len(), 47);
    }

    #[test]
    fn holdout_is_deterministic_partition() {
        let c = toy(100);
        let (t1, v1) = holdout_split(&c, 10, 1).unwrap();
        let (t2, v2) = holdout_split(&c, 10, 1).unwrap();
        assert_eq!((t1.clone(), v1.clone()), (t2, v2));
        assert_eq!(v1.len(), 10);
        let mut all: Vec<_> = t1.iter().chain(v1.iter()).map(|t| t.src.to_string()).collect();
        all.sort();
        let mut orig: Vec<_> = c.iter().map(|t| t.src.to_string()).collect();
        orig.sort();
        assert_eq!(all, orig);

        let (t0, v0) = holdout_split(&c, 0, 1).unwrap();
        assert!(v0.is_empty());
        assert_eq!(t0.triplets, c.triplets);
        assert!(holdout_split(&c, 101, 1).is_err());
    }

    #[test]
    fn sorted_by_source_orders_by_first_occurrence() {
        let x = Sentence::from_text("a b c");
        let set = ConstraintSet::new(vec![
            Constraint::from_text("b c", "Y").unwrap(),
            Constraint::from_text("zz", "Q").unwrap(),
            Constraint::from_text("a", "Z").unwrap(),
        ]);
        let sorted = set.sorted_by_source(&x);
        let firsts: Vec<_> = sorted.iter().map(|c| c.tgt.to_string()).collect();
        assert_eq!(firsts, ["Z", "Y", "Q"]);
    }
}
