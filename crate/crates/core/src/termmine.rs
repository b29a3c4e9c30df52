//! Terminology mining from a bilingual dictionary.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{find_subsequence, Constraint, ConstraintSet, Sentence, Triplet};
use crate::error::{ApeError, Result};

/// Source/target phrase pairs, deduplicated and kept in sorted order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TermDictionary {
    entries: Vec<(Sentence, Sentence)>,
}

impl TermDictionary {
    pub fn new(entries: impl IntoIterator<Item = (Sentence, Sentence)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (s, t) in entries {
            if s.is_empty() || t.is_empty() {
                return Err(ApeError::Argument("dictionary phrases must be non-empty".into()));
            }
            set.insert((s, t));
        }
        Ok(TermDictionary {
            entries: set.into_iter().collect(),
        })
    }

    pub fn from_pairs(pairs: &[(&str, &str)]) -> Result<Self> {
        TermDictionary::new(
            pairs
                .iter()
                .map(|(s, t)| (Sentence::from_text(s), Sentence::from_text(t))),
        )
    }

    pub fn entries(&self) -> &[(Sentence, Sentence)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ApeError::io(path, e))?;
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let parse_err = |message: &str| ApeError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: message.to_string(),
            };
            let (s, t) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected source<TAB>target"))?;
            if t.contains('\t') {
                return Err(parse_err("more than two columns"));
            }
            let (s, t) = (Sentence::from_text(s), Sentence::from_text(t));
            if s.is_empty() || t.is_empty() {
                return Err(parse_err("empty phrase"));
            }
            pairs.push((s, t));
        }
        TermDictionary::new(pairs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| ApeError::io(path, e))?;
        for (s, t) in &self.entries {
            writeln!(f, "{s}\t{t}").map_err(|e| ApeError::io(path, e))?;
        }
        Ok(())
    }
}

const ENGLISH_STOPS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "is", "it", "its", "of",
    "on", "or", "that", "the", "this", "to", "was", "were", "will", "with",
];

const GERMAN_STOPS: &[&str] = &[
    "am", "an", "auf", "das", "dem", "den", "der", "des", "die", "ein", "eine", "einem", "einen",
    "einer", "es", "für", "im", "in", "ist", "mit", "nicht", "oder", "sich", "sind", "und", "von",
    "war", "zu",
];

/// Lowercase stop words per side.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StopList {
    pub source: HashSet<String>,
    pub target: HashSet<String>,
}

impl StopList {
    /// Built-in English source and German target function words.
    pub fn builtin() -> Self {
        StopList {
            source: ENGLISH_STOPS.iter().map(|s| s.to_string()).collect(),
            target: GERMAN_STOPS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn none() -> Self {
        StopList::default()
    }

    /// Reads one word per line; words are lowercased.
    pub fn read_words(path: impl AsRef<Path>) -> Result<HashSet<String>> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ApeError::io(path, e))?;
        Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_lowercase)
            .collect())
    }

    fn all_stops(words: &Sentence, stops: &HashSet<String>) -> bool {
        words
            .tokens()
            .iter()
            .all(|t| stops.contains(&t.as_str().to_lowercase()))
    }
}

pub trait Stemmer {
    /// Must be deterministic and idempotent.
    fn stem(&self, word: &str) -> String;
}

/// Strips inflectional suffixes, longest first, keeping at least three
/// characters of stem. Repeats until nothing more can be stripped so that
/// stemming is idempotent. Output is lowercase.
#[derive(Debug, Clone, Copy, Default)]
pub struct SuffixStemmer;

impl SuffixStemmer {
    const SUFFIXES: [&'static str; 8] = ["ing", "es", "ed", "en", "er", "s", "e", "n"];
    const MIN_STEM: usize = 3;
}

impl Stemmer for SuffixStemmer {
    fn stem(&self, word: &str) -> String {
        let mut w = word.to_lowercase();
        'outer: loop {
            for suf in Self::SUFFIXES {
                if let Some(rest) = w.strip_suffix(suf) {
                    if rest.chars().count() >= Self::MIN_STEM {
                        w = rest.to_string();
                        continue 'outer;
                    }
                }
            }
            return w;
        }
    }
}

/// Leaves words untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityStemmer;

impl Stemmer for IdentityStemmer {
    fn stem(&self, word: &str) -> String {
        word.to_string()
    }
}

fn stem_all(s: &Sentence, stemmer: &dyn Stemmer) -> Vec<String> {
    s.tokens().iter().map(|t| stemmer.stem(t.as_str())).collect()
}

struct PreparedEntry {
    src_stems: Vec<String>,
    tgt_stems: Vec<String>,
}

/// A dictionary prepared for repeated matching: stop-word pairs removed,
/// phrases stemmed and indexed by their first source stem.
pub struct TermMiner<'a> {
    entries: Vec<PreparedEntry>,
    by_first: HashMap<String, Vec<usize>>,
    stemmer: &'a dyn Stemmer,
}

impl<'a> TermMiner<'a> {
    pub fn new(dictionary: &TermDictionary, stoplist: &StopList, stemmer: &'a dyn Stemmer) -> Self {
        let mut entries = Vec::new();
        let mut by_first: HashMap<String, Vec<usize>> = HashMap::new();
        for (s, t) in dictionary.entries() {
            if StopList::all_stops(s, &stoplist.source) || StopList::all_stops(t, &stoplist.target) {
                continue;
            }
            let e = PreparedEntry {
                src_stems: stem_all(s, stemmer),
                tgt_stems: stem_all(t, stemmer),
            };
            by_first
                .entry(e.src_stems[0].clone())
                .or_default()
                .push(entries.len());
            entries.push(e);
        }
        TermMiner {
            entries,
            by_first,
            stemmer,
        }
    }

    /// Constraints for one triplet, ordered by source position.
    pub fn mine(&self, triplet: &Triplet) -> ConstraintSet {
        let src = stem_all(&triplet.src, self.stemmer);
        let pe = stem_all(&triplet.pe, self.stemmer);
        // (start, len, constraint)
        let mut cands: Vec<(usize, usize, Constraint)> = Vec::new();
        let mut seen: HashSet<usize> = HashSet::new();
        for first in &src {
            let Some(ids) = self.by_first.get(first) else { continue };
            for &id in ids {
                if !seen.insert(id) {
                    continue;
                }
                let e = &self.entries[id];
                let Some(s0) = find_subsequence(&src, &e.src_stems) else { continue };
                let Some(t0) = find_subsequence(&pe, &e.tgt_stems) else { continue };
                let s1 = s0 + e.src_stems.len();
                let t1 = t0 + e.tgt_stems.len();
                let c = Constraint {
                    src: Sentence(triplet.src.0[s0..s1].to_vec()),
                    tgt: Sentence(triplet.pe.0[t0..t1].to_vec()),
                };
                cands.push((s0, s1 - s0, c));
            }
        }
        // leftmost first, then longest, then by target surface form
        cands.sort_by(|a, b| {
            a.0.cmp(&b.0)
                .then(b.1.cmp(&a.1))
                .then_with(|| a.2.tgt.cmp(&b.2.tgt))
        });
        let mut out = Vec::new();
        let mut covered_until = 0;
        for (start, len, c) in cands {
            if start < covered_until {
                continue;
            }
            covered_until = start + len;
            out.push(c);
        }
        ConstraintSet::new(out)
    }
}

pub fn mine_constraints(
    dictionary: &TermDictionary,
    triplet: &Triplet,
    stoplist: &StopList,
    stemmer: &dyn Stemmer,
) -> ConstraintSet {
    TermMiner::new(dictionary, stoplist, stemmer).mine(triplet)
}

/// Keeps each constraint independently with probability `keep_rate`.
pub fn subsample_constraints(
    sets: &[ConstraintSet],
    keep_rate: f64,
    seed: u64,
) -> Result<Vec<ConstraintSet>> {
    if !(0.0..=1.0).contains(&keep_rate) {
        return Err(ApeError::Argument(format!(
            "keep_rate {keep_rate} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sets
        .iter()
        .map(|set| {
            set.iter()
                .filter(|_| rng.random::<f64>() < keep_rate)
                .cloned()
                .collect()
        })
        .collect())
}

/// Disjoint train/test split of the dictionary entries.
pub fn split_dictionary(
    dictionary: &TermDictionary,
    test_fraction: f64,
    seed: u64,
) -> Result<(TermDictionary, TermDictionary)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(ApeError::Argument(format!(
            "test_fraction {test_fraction} outside (0, 1)"
        )));
    }
    let n = dictionary.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_ids: HashSet<usize> = idx[..n_test].iter().copied().collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, e) in dictionary.entries().iter().enumerate() {
        if test_ids.contains(&i) {
            test.push(e.clone());
        } else {
            train.push(e.clone());
        }
    }
    Ok((
        TermDictionary { entries: train },
        TermDictionary { entries: test },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triplet(src: &str, pe: &str) -> Triplet {
        Triplet::new(0, Sentence::from_text(src), Sentence::from_text(pe), Sentence::from_text(pe))
    }

    struct TableStemmer(HashMap<&'static str, &'static str>);

    impl Stemmer for TableStemmer {
        fn stem(&self, w: &str) -> String {
            let s = self.0.get(w).copied().unwrap_or(w);
            s.to_string()
        }
    }

    /// Tries every (entry, src span, pe span) combination directly.
    fn brute_force(
        dict: &TermDictionary,
        t: &Triplet,
        stemmer: &dyn Stemmer,
    ) -> Vec<(usize, usize, Constraint)> {
        let st = |s: &[crate::corpus::Token]| -> Vec<String> {
            s.iter().map(|w| stemmer.stem(w.as_str())).collect()
        };
        let mut found = Vec::new();
        for (ds, dt) in dict.entries() {
            let (ks, kt) = (st(ds.tokens()), st(dt.tokens()));
            let src_hit = (0..t.src.len())
                .flat_map(|a| (a + 1..=t.src.len()).map(move |b| (a, b)))
                .find(|&(a, b)| st(&t.src.0[a..b]) == ks);
            let pe_hit = (0..t.pe.len())
                .flat_map(|a| (a + 1..=t.pe.len()).map(move |b| (a, b)))
                .find(|&(a, b)| st(&t.pe.0[a..b]) == kt);
            if let (Some((a, b)), Some((c, d))) = (src_hit, pe_hit) {
                found.push((
                    a,
                    b - a,
                    Constraint::new(Sentence(t.src.0[a..b].to_vec()), Sentence(t.pe.0[c..d].to_vec()))
                        .unwrap(),
                ));
            }
        }
        found
    }

    #[test]
    fn figure_example() {
        let dict = TermDictionary::from_pairs(&[("features", "Funktionen")]).unwrap();
        let t = triplet(
            "Photoshop Elements provides the same features as",
            "Photoshop Elements bietet die gleichen Funktionen wie",
        );
        let c = mine_constraints(&dict, &t, &StopList::builtin(), &SuffixStemmer);
        assert_eq!(c.0, [Constraint::from_text("features", "Funktionen").unwrap()]);
    }

    #[test]
    fn stop_word_entries_skipped() {
        let dict = TermDictionary::from_pairs(&[("the", "Abbild"), ("mirror", "die")]).unwrap();
        let t = triplet("the mirror", "das Abbild die");
        assert!(mine_constraints(&dict, &t, &StopList::builtin(), &SuffixStemmer).is_empty());
    }

    #[test]
    fn stem_match_recovers_surface() {
        let stemmer = TableStemmer(HashMap::from([
            ("magnifies", "magnify"),
            ("vergrößerte", "vergrößern"),
        ]));
        let dict = TermDictionary::from_pairs(&[("magnify", "vergrößern")]).unwrap();
        let t = triplet(
            "the tool magnifies the selected area of the image",
            "das Werkzeug vergrößerte den Bereich",
        );
        let got = mine_constraints(&dict, &t, &StopList::builtin(), &stemmer);
        let want = brute_force(&dict, &t, &stemmer);
        assert_eq!(want.len(), 1);
        assert_eq!(got.0, [want[0].2.clone()]);
        assert_eq!(got.0[0], Constraint::from_text("magnifies", "vergrößerte").unwrap());
    }

    #[test]
    fn overlap_leftmost_longest() {
        let dict = TermDictionary::from_pairs(&[
            ("layer", "Ebene"),
            ("layer mask", "Ebenenmaske"),
            ("mask", "Maske"),
        ])
        .unwrap();
        let t = triplet("add a layer mask", "eine Ebenenmaske Ebene Maske");
        let c = mine_constraints(&dict, &t, &StopList::none(), &IdentityStemmer);
        assert_eq!(c.0, [Constraint::from_text("layer mask", "Ebenenmaske").unwrap()]);
        assert!(brute_force(&dict, &t, &IdentityStemmer).len() == 3);
    }

    #[test]
    fn empty_dictionary_mines_nothing() {
        let t = triplet("a b c", "x y z");
        let c = mine_constraints(&TermDictionary::default(), &t, &StopList::none(), &SuffixStemmer);
        assert!(c.is_empty());
    }

    #[test]
    fn suffix_stemmer_rules() {
        let s = SuffixStemmer;
        assert_eq!(s.stem("magnifies"), "magnifi");
        assert_eq!(s.stem("going"), "going"); // "go" would be too short
        assert_eq!(s.stem("walked"), "walk");
        assert_eq!(s.stem("s12"), "s12");
        for w in ["vergrößerten", "features", "running", "boxes", "Gardens"] {
            assert_eq!(s.stem(&s.stem(w)), s.stem(w));
        }
    }

    #[test]
    fn subsample_rates() {
        let one = ConstraintSet::new(vec![Constraint::from_text("a", "b").unwrap()]);
        let sets = vec![one.clone(); 10_000];
        assert_eq!(subsample_constraints(&sets, 1.0, 3).unwrap(), sets);
        assert!(subsample_constraints(&sets, 0.0, 3).unwrap().iter().all(|s| s.is_empty()));
        let kept: usize = subsample_constraints(&sets, 0.25, 3)
            .unwrap()
            .iter()
            .map(|s| s.len())
            .sum();
        let sigma = (10_000.0f64 * 0.25 * 0.75).sqrt();
        assert!((kept as f64 - 2500.0).abs() <= 3.0 * sigma, "{kept}");
        assert!(subsample_constraints(&sets, 1.5, 3).is_err());
    }

    #[test]
    fn dictionary_split_partitions() {
        let pairs: Vec<(String, String)> = (0..37).map(|i| (format!("s{i}"), format!("t{i}"))).collect();
        let refs: Vec<(&str, &str)> = pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let dict = TermDictionary::from_pairs(&refs).unwrap();
        let (tr, te) = split_dictionary(&dict, 0.3, 9).unwrap();
        assert_eq!(te.len(), 11);
        let a: BTreeSet<_> = tr.entries().iter().collect();
        let b: BTreeSet<_> = te.entries().iter().collect();
        assert!(a.is_disjoint(&b));
        assert_eq!(a.len() + b.len(), dict.len());
        assert_eq!(split_dictionary(&dict, 0.3, 9).unwrap(), (tr, te));
    }

    #[test]
    fn dictionary_tsv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("dict.tsv");
        let dict = TermDictionary::from_pairs(&[("layer mask", "Ebenenmaske"), ("save", "speichern")]).unwrap();
        dict.save(&p).unwrap();
        assert_eq!(TermDictionary::load(&p).unwrap(), dict);
        fs::write(&p, "ok\tgut\nbroken line\n").unwrap();
        assert!(matches!(TermDictionary::load(&p), Err(ApeError::Parse { line: 2, .. })));
    }
}
