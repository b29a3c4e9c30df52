//! Invariants checked over randomly generated inputs.

use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;
use termape::augment::{augment_corpus, build_probe_set, count_augmentations, ProbeKind};
use termape::corpus::{holdout_split, load_corpus_dir, save_corpus_dir, upsample};
use termape::encode::{encode_append, encode_plain, encode_replace, find_spans};
use termape::evalsuite::{bleu, evaluate, ter, term_pct};
use termape::levt::oracle::{apply_deletions, apply_fills, apply_insertions};
use termape::levt::{apply_edits, oracle_edits, EditState};
use termape::subword::{bpe_restore, propagate_factors, BpeModel, TruecaseModel};
use termape::synthgen::{gen_corpus, gen_lexicon, NoiseConfig};
use termape::termmine::{IdentityStemmer, StopList, TermDictionary, TermMiner};
use termape::{Constraint, ConstraintSet, Corpus, Sentence, SourceFactor, Token, Triplet};

const WORDS: &[&str] = &["a", "b", "c", "d", "ab", "ba", "cab", "dd"];

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(WORDS).prop_map(str::to_string)
}

fn sentence(max: usize) -> impl Strategy<Value = Sentence> {
    prop::collection::vec(word(), 0..=max).prop_map(|w| Sentence::from_words(&w).unwrap())
}

fn phrase() -> impl Strategy<Value = Sentence> {
    prop::collection::vec(word(), 1..=2).prop_map(|w| Sentence::from_words(&w).unwrap())
}

fn constraints() -> impl Strategy<Value = ConstraintSet> {
    prop::collection::vec((phrase(), phrase()), 0..=3)
        .prop_map(|v| v.into_iter().map(|(s, t)| Constraint::new(s, t).unwrap()).collect())
}

fn corpus(max: usize) -> impl Strategy<Value = Corpus> {
    prop::collection::vec((sentence(6), sentence(6), sentence(6), constraints()), 0..=max).prop_map(|rows| {
        Corpus::new(
            "p",
            rows.into_iter()
                .enumerate()
                .map(|(i, (s, m, p, c))| Triplet::new(i as u64, s, m, p).with_constraints(c))
                .collect(),
        )
    })
}

fn is_subsequence(needle: &[Token], hay: &[Token]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

fn multiset(c: &Corpus) -> HashMap<String, usize> {
    let mut m = HashMap::new();
    for t in c.iter() {
        let key = format!("{}|{}|{}|{:?}", t.src, t.mt, t.pe, t.constraints);
        *m.entry(key).or_default() += 1;
    }
    m
}

/// Plain quadratic Levenshtein distance with unit costs.
fn dp_edit(a: &[Token], b: &[Token]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut cur = vec![i; b.len() + 1];
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Insert/delete-only distance via longest common subsequence.
fn lcs_indel(a: &[u32], b: &[u32]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 0..a.len() {
        for j in 0..b.len() {
            t[i + 1][j + 1] = if a[i] == b[j] { t[i][j] + 1 } else { t[i][j + 1].max(t[i + 1][j]) };
        }
    }
    a.len() + b.len() - 2 * t[a.len()][b.len()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    // corpus

    #[test]
    fn corpus_dir_roundtrip(c in corpus(6)) {
        let dir = tempfile::tempdir().unwrap();
        save_corpus_dir(&c, dir.path()).unwrap();
        let back = load_corpus_dir("p", dir.path()).unwrap();
        prop_assert_eq!(back.len(), c.len());
        for (a, b) in c.iter().zip(back.iter()) {
            prop_assert_eq!(&a.src, &b.src);
            prop_assert_eq!(&a.mt, &b.mt);
            prop_assert_eq!(&a.pe, &b.pe);
            prop_assert_eq!(&a.constraints, &b.constraints);
        }
    }

    #[test]
    fn upsample_composes(c in corpus(5), a in 1usize..4, b in 1usize..4) {
        let once = upsample(&c, a * b).unwrap();
        let twice = upsample(&upsample(&c, a).unwrap(), b).unwrap();
        prop_assert_eq!(multiset(&once), multiset(&twice));
    }

    #[test]
    fn holdout_partitions(n in 0usize..30, k in 0usize..30, seed in any::<u64>()) {
        let k = k.min(n);
        let c = Corpus::new(
            "h",
            (0..n).map(|i| {
                let s = Sentence::from_text(&format!("w{i}"));
                Triplet::new(i as u64, s.clone(), s.clone(), s)
            }).collect(),
        );
        let (rest, held) = holdout_split(&c, k, seed).unwrap();
        prop_assert_eq!(rest.len() + held.len(), n);
        prop_assert_eq!(held.len(), k);
        let a: BTreeSet<String> = rest.iter().map(|t| t.src.to_string()).collect();
        let b: BTreeSet<String> = held.iter().map(|t| t.src.to_string()).collect();
        prop_assert!(a.is_disjoint(&b));
        prop_assert_eq!(a.len() + b.len(), n);
    }

    // encode

    #[test]
    fn append_laws(x in sentence(8), c in constraints()) {
        let enc = encode_append(&x, &c);
        prop_assert_eq!(enc.tokens.len(), enc.factors.len());
        let kept: Vec<Token> = enc.tokens.tokens().iter().zip(&enc.factors)
            .filter(|(_, f)| matches!(f, SourceFactor::Source | SourceFactor::SourceConstraint))
            .map(|(t, _)| t.clone()).collect();
        prop_assert_eq!(&kept, &x.0);
        prop_assert!(is_subsequence(&x.0, &enc.tokens.0));
        // every maximal factor-2 run is a constraint target right after a factor-1 run
        let toks = enc.tokens.tokens();
        let mut i = 0;
        while i < toks.len() {
            if enc.factors[i] == SourceFactor::TargetConstraint {
                let start = i;
                while i < toks.len() && enc.factors[i] == SourceFactor::TargetConstraint { i += 1; }
                prop_assert!(start > 0 && enc.factors[start - 1] == SourceFactor::SourceConstraint);
                let run = &toks[start..i];
                prop_assert!(c.iter().any(|k| k.tgt.tokens() == run));
            } else {
                i += 1;
            }
        }
    }

    #[test]
    fn replace_laws(x in sentence(8), c in constraints()) {
        let enc = encode_replace(&x, &c);
        prop_assert_eq!(enc.tokens.len(), enc.factors.len());
        let mut covered = vec![false; x.len()];
        for m in find_spans(&x, &c) {
            if let Some((s, e)) = m.span() {
                covered[s..e].iter_mut().for_each(|v| *v = true);
            }
        }
        let expected: Vec<Token> = x.tokens().iter().zip(&covered).filter(|(_, c)| !**c).map(|(t, _)| t.clone()).collect();
        let zeros: Vec<Token> = enc.tokens.tokens().iter().zip(&enc.factors)
            .filter(|(_, f)| **f == SourceFactor::Source).map(|(t, _)| t.clone()).collect();
        prop_assert_eq!(zeros, expected);
    }

    #[test]
    fn empty_constraints_identity(x in sentence(8)) {
        let plain = encode_plain(&x);
        prop_assert_eq!(&encode_append(&x, &ConstraintSet::empty()), &plain);
        prop_assert_eq!(&encode_replace(&x, &ConstraintSet::empty()), &plain);
    }

    // subword

    #[test]
    fn bpe_restore_inverts_apply(train in prop::collection::vec(phrase(), 1..10), s in sentence(8), merges in 0usize..40) {
        let c = Corpus::new("b", train.into_iter().enumerate().map(|(i, s)| Triplet::new(i as u64, s.clone(), s.clone(), s)).collect());
        let bpe = BpeModel::train_on_corpora(&[&c], merges).unwrap();
        let (seg, align) = bpe.apply(&s);
        prop_assert_eq!(bpe_restore(&seg), s.clone());
        prop_assert_eq!(align.len(), seg.len());
        let factors: Vec<u8> = (0..s.len()).map(|i| (i % 4) as u8).collect();
        let prop = propagate_factors(&factors, &align).unwrap();
        prop_assert_eq!(prop.len(), seg.len());
        let a: BTreeSet<u8> = factors.iter().copied().collect();
        let b: BTreeSet<u8> = prop.iter().copied().collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn truecase_detruecase_identity(
        train in prop::collection::vec(prop::collection::vec("[a-cA-C]{1,3}", 1..5), 1..8),
        s in prop::collection::vec("[a-cA-C]{1,3}", 1..5),
    ) {
        let sents: Vec<Sentence> = train.iter().map(|w| Sentence::from_words(w).unwrap()).collect();
        let model = TruecaseModel::train(&sents);
        let truecased = model.truecase(&Sentence::from_words(&s).unwrap());
        prop_assert_eq!(model.truecase(&model.detruecase(&truecased)), truecased);
    }

    // termmine

    #[test]
    fn mined_constraints_match_surface(
        entries in prop::collection::vec((phrase(), phrase()), 0..6),
        extra in prop::collection::vec((phrase(), phrase()), 0..4),
        src in sentence(8),
        pe in sentence(8),
    ) {
        let t = Triplet::new(0, src.clone(), Sentence::default(), pe.clone());
        let stop = StopList::none();
        let small = TermDictionary::new(entries.clone()).unwrap();
        let mined = TermMiner::new(&small, &stop, &IdentityStemmer).mine(&t);
        for c in &mined {
            prop_assert!(src.contains_phrase(c.src.tokens()));
            prop_assert!(pe.contains_phrase(c.tgt.tokens()));
        }
        let empty = TermDictionary::new(Vec::new()).unwrap();
        prop_assert!(TermMiner::new(&empty, &stop, &IdentityStemmer).mine(&t).is_empty());
        // growing the dictionary keeps each old constraint unless a new one claims an overlapping span
        let mut all = entries;
        all.extend(extra);
        let big = TermDictionary::new(all).unwrap();
        let mined_big = TermMiner::new(&big, &stop, &IdentityStemmer).mine(&t);
        let span = |c: &Constraint| {
            let s = src.find(c.src.tokens()).unwrap();
            (s, s + c.src.len())
        };
        for c in &mined {
            let kept = mined_big.iter().any(|d| d == c);
            let (s, e) = span(c);
            let displaced = mined_big.iter().any(|d| {
                let (s2, e2) = span(d);
                s < e2 && s2 < e
            });
            prop_assert!(kept || displaced, "{c:?} vanished");
        }
    }

    // levt

    #[test]
    fn oracle_reaches_reference_minimally(
        cur in prop::collection::vec(0u32..5, 0..=8),
        reference in prop::collection::vec(0u32..5, 0..=8),
    ) {
        let cur: Vec<u32> = cur.into_iter().map(|v| v + 10).collect();
        let reference: Vec<u32> = reference.into_iter().map(|v| v + 10).collect();
        let actions = oracle_edits(&cur, &reference);
        let out = apply_edits(&EditState::from_inner(cur.clone()), &actions).unwrap();
        prop_assert_eq!(out.inner(), &reference[..]);
        prop_assert_eq!(actions.num_deletions() + actions.fills.len(), lcs_indel(&cur, &reference));
    }

    #[test]
    fn sentinels_survive_any_operations(
        init in prop::collection::vec(10u32..15, 0..6),
        ops in prop::collection::vec((0u8..3, prop::collection::vec(any::<bool>(), 0..12), prop::collection::vec(0usize..3, 0..12)), 1..6),
    ) {
        let mut s = EditState::from_inner(init);
        for (kind, bits, counts) in ops {
            let n = s.len();
            s = match kind {
                0 => {
                    let mut d: Vec<bool> = (0..n).map(|i| bits.get(i).copied().unwrap_or(false)).collect();
                    d[0] = false;
                    d[n - 1] = false;
                    apply_deletions(&s, &d).unwrap()
                }
                1 => {
                    let c: Vec<usize> = (0..n - 1).map(|i| counts.get(i).copied().unwrap_or(0)).collect();
                    apply_insertions(&s, &c).unwrap()
                }
                _ => {
                    let holes = s.tokens.iter().filter(|t| **t == termape::nn::vocab::PLH_ID).count();
                    apply_fills(&s, &vec![20u32; holes]).unwrap()
                }
            };
            prop_assert_eq!(s.tokens[0], termape::nn::vocab::BOS_ID);
            prop_assert_eq!(*s.tokens.last().unwrap(), termape::nn::vocab::EOS_ID);
        }
    }

    // evalsuite

    #[test]
    fn ter_bounds(h in sentence(8), r in sentence(8).prop_filter("non-empty", |s| !s.is_empty())) {
        let with = ter(&h, &r, true).ratio();
        let without = ter(&h, &r, false).ratio();
        prop_assert!(with <= without + 1e-12);
        let bound = h.len().max(r.len()) as f64 / r.len() as f64;
        prop_assert!(without <= bound + 1e-12);
        prop_assert_eq!(ter(&h, &r, false).edits, dp_edit(h.tokens(), r.tokens()));
    }

    #[test]
    fn bleu_permutation_invariant(pairs in prop::collection::vec((sentence(7), sentence(7)), 1..8), rot in 0usize..8) {
        let (h, r): (Vec<Sentence>, Vec<Sentence>) = pairs.iter().cloned().unzip();
        let k = rot % pairs.len();
        let mut h2 = h.clone();
        let mut r2 = r.clone();
        h2.rotate_left(k);
        r2.rotate_left(k);
        h2.reverse();
        r2.reverse();
        let a = bleu(&h, &r).unwrap();
        let b = bleu(&h2, &r2).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn reports_are_deterministic(pairs in prop::collection::vec((sentence(6), sentence(6), constraints()), 1..6)) {
        let h: Vec<Sentence> = pairs.iter().map(|p| p.0.clone()).collect();
        let r: Vec<Sentence> = pairs.iter().map(|p| p.1.clone()).collect();
        let c: Vec<ConstraintSet> = pairs.iter().map(|p| p.2.clone()).collect();
        let a = evaluate(&h, &r, Some(&c)).unwrap().to_json();
        let b = evaluate(&h.clone(), &r.clone(), Some(&c.clone())).unwrap().to_json();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // synthgen

    #[test]
    fn synthetic_constraints_present_and_reproducible(seed in any::<u64>(), rate in 0.0f64..=1.0) {
        let lex = gen_lexicon(30, 0.5, seed).unwrap();
        let noise = NoiseConfig { sub_rate: 0.1, del_rate: 0.05, ins_rate: 0.05 };
        let c = gen_corpus(&lex, 40, (3, 10), &noise, rate, seed).unwrap();
        for t in c.iter() {
            for k in &t.constraints {
                prop_assert!(t.src.contains_phrase(k.src.tokens()));
                prop_assert!(t.pe.contains_phrase(k.tgt.tokens()));
            }
        }
        prop_assert_eq!(c, gen_corpus(&lex, 40, (3, 10), &noise, rate, seed).unwrap());
        let clean = NoiseConfig { sub_rate: 0.0, del_rate: 0.0, ins_rate: 0.0 };
        let z = gen_corpus(&lex, 40, (3, 10), &clean, rate, seed).unwrap();
        if let Some(p) = term_pct(&z.mt_column(), &z.constraint_sets()).unwrap() {
            prop_assert_eq!(p, 100.0);
        }
    }

    // augment

    #[test]
    fn augmentation_laws(seed in any::<u64>()) {
        let lex = gen_lexicon(30, 0.5, seed).unwrap();
        let noise = NoiseConfig { sub_rate: 0.1, del_rate: 0.05, ins_rate: 0.05 };
        let c = gen_corpus(&lex, 30, (3, 10), &noise, 0.5, seed).unwrap();
        let (syn, ant) = lex.relations(seed);
        let lexicons = [syn, ant];
        let aug = augment_corpus(&c, &lexicons);
        prop_assert_eq!(aug.len(), count_augmentations(&c, &lexicons));
        let by_id: HashMap<(String, String), ()> = c.iter().map(|t| ((t.src.to_string(), t.mt.to_string()), ())).collect();
        for t in aug.iter() {
            prop_assert!(by_id.contains_key(&(t.src.to_string(), t.mt.to_string())));
            for k in &t.constraints {
                prop_assert!(t.pe.contains_phrase(k.tgt.tokens()));
            }
        }
        for kind in [ProbeKind::Synonym, ProbeKind::Antonym, ProbeKind::Random] {
            let probe = build_probe_set(&c, kind, &lexicons, seed).unwrap();
            prop_assert_eq!(probe.corpus.len() + probe.dropped, c.len());
            for t in probe.corpus.iter() {
                for k in &t.constraints {
                    prop_assert!(t.pe.contains_phrase(k.tgt.tokens()));
                }
            }
        }
    }
}

#[test]
fn constraints_per_constrained_triplet_band() {
    let data = termape::synthgen::SynthConfig::default().generate().unwrap();
    let sets = data.train.constraint_sets();
    let constrained: Vec<usize> = sets.iter().map(ConstraintSet::len).filter(|&n| n > 0).collect();
    let avg = constrained.iter().sum::<usize>() as f64 / constrained.len() as f64;
    assert!((1.0..=1.5).contains(&avg), "average {avg}");
}
