//! Translation error rate with greedy block shifts.

use std::collections::HashMap;

use crate::corpus::Sentence;

/// Edit count and reference length of one hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TerScore {
    pub edits: usize,
    pub ref_len: usize,
}

impl TerScore {
    /// Sentence-level ratio. An empty reference yields the raw edit count.
    pub fn ratio(&self) -> f64 {
        ratio(self.edits, self.ref_len)
    }
}

impl std::ops::Add for TerScore {
    type Output = TerScore;
    fn add(self, o: TerScore) -> TerScore {
        TerScore {
            edits: self.edits + o.edits,
            ref_len: self.ref_len + o.ref_len,
        }
    }
}

impl std::iter::Sum for TerScore {
    fn sum<I: Iterator<Item = TerScore>>(iter: I) -> TerScore {
        iter.fold(TerScore::default(), |a, b| a + b)
    }
}

pub(crate) fn ratio(edits: usize, ref_len: usize) -> f64 {
    edits as f64 / ref_len.max(1) as f64
}

/// Unit-cost insert/delete/substitute distance.
pub fn edit_distance<T: PartialEq>(hyp: &[T], reference: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=reference.len()).collect();
    let mut cur = vec![0; reference.len() + 1];
    for (i, h) in hyp.iter().enumerate() {
        cur[0] = i + 1;
        for (j, r) in reference.iter().enumerate() {
            let sub = prev[j] + usize::from(h != r);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[reference.len()]
}

fn intern<'a>(hyp: &'a Sentence, reference: &'a Sentence) -> (Vec<u32>, Vec<u32>) {
    let mut ids: HashMap<&'a str, u32> = HashMap::new();
    let mut id = |w: &'a str| {
        let n = ids.len() as u32;
        *ids.entry(w).or_insert(n)
    };
    let r = reference.words().into_iter().map(&mut id).collect();
    let h = hyp.words().into_iter().map(&mut id).collect();
    (h, r)
}

/// Moves `hyp[start..start+len]` so that it begins at `dest` in the result.
fn shifted(hyp: &[u32], start: usize, len: usize, dest: usize) -> Vec<u32> {
    let mut rest: Vec<u32> = Vec::with_capacity(hyp.len());
    rest.extend_from_slice(&hyp[..start]);
    rest.extend_from_slice(&hyp[start + len..]);
    let mut out = Vec::with_capacity(hyp.len());
    out.extend_from_slice(&rest[..dest]);
    out.extend_from_slice(&hyp[start..start + len]);
    out.extend_from_slice(&rest[dest..]);
    out
}

/// Greedy shift search; returns (shift count, remaining edit distance).
fn shift_search_ids(mut hyp: Vec<u32>, reference: &[u32]) -> (usize, usize) {
    let mut dist = edit_distance(&hyp, reference);
    let mut shifts = 0;
    let n = hyp.len();
    loop {
        let mut best: Option<(usize, Vec<u32>)> = None;
        for start in 0..n {
            for len in 1..=n - start {
                for dest in 0..=n - len {
                    if dest == start {
                        continue;
                    }
                    let cand = shifted(&hyp, start, len, dest);
                    let d = edit_distance(&cand, reference);
                    if best.as_ref().map_or(d < dist, |(bd, _)| d < *bd) {
                        best = Some((d, cand));
                    }
                }
            }
        }
        match best {
            // a shift costs one edit, so it must save at least two
            Some((d, cand)) if d + 1 < dist => {
                hyp = cand;
                dist = d;
                shifts += 1;
            }
            _ => return (shifts, dist),
        }
    }
}

/// TER edit count of `hyp` against `reference`.
pub fn ter(hyp: &Sentence, reference: &Sentence, allow_shifts: bool) -> TerScore {
    let ref_len = reference.len();
    if reference.is_empty() {
        return TerScore {
            edits: hyp.len(),
            ref_len: 0,
        };
    }
    let (h, r) = intern(hyp, reference);
    let edits = if allow_shifts {
        let (s, d) = shift_search_ids(h, &r);
        s + d
    } else {
        edit_distance(&h, &r)
    };
    TerScore { edits, ref_len }
}

/// Corpus TER: total edits over total reference length.
pub fn corpus_ter(hyps: &[Sentence], refs: &[Sentence], allow_shifts: bool) -> TerScore {
    hyps.iter()
        .zip(refs)
        .map(|(h, r)| ter(h, r, allow_shifts))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(t: &str) -> Sentence {
        Sentence::from_text(t)
    }

    /// Plain recursive definition, memoized.
    fn reference_distance(a: &[char], b: &[char]) -> usize {
        fn go(a: &[char], b: &[char], memo: &mut HashMap<(usize, usize), usize>) -> usize {
            if a.is_empty() {
                return b.len();
            }
            if b.is_empty() {
                return a.len();
            }
            if let Some(&v) = memo.get(&(a.len(), b.len())) {
                return v;
            }
            let v = if a[0] == b[0] {
                go(&a[1..], &b[1..], memo)
            } else {
                1 + go(&a[1..], &b[1..], memo)
                    .min(go(&a[1..], b, memo))
                    .min(go(a, &b[1..], memo))
            };
            memo.insert((a.len(), b.len()), v);
            v
        }
        go(a, b, &mut HashMap::new())
    }

    #[test]
    fn identity() {
        let r = s("a b c d e f g h i j");
        assert_eq!(ter(&r, &r, true), TerScore { edits: 0, ref_len: 10 });
        assert_eq!(ter(&r, &r, true).ratio(), 0.0);
    }

    #[test]
    fn one_substitution() {
        let t = ter(&s("a b c d e f g h i x"), &s("a b c d e f g h i j"), true);
        assert_eq!(t, TerScore { edits: 1, ref_len: 10 });
        assert!((t.ratio() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn single_swap_is_one_shift() {
        let h = s("b a c d");
        let r = s("a b c d");
        assert_eq!(ter(&h, &r, true).ratio(), 0.25);
        assert_eq!(ter(&h, &r, false).ratio(), 0.5);
    }

    #[test]
    fn empty_cases() {
        assert_eq!(ter(&s(""), &s(""), true), TerScore { edits: 0, ref_len: 0 });
        assert_eq!(ter(&s("a b"), &s(""), true), TerScore { edits: 2, ref_len: 0 });
        assert_eq!(ter(&s(""), &s("a b c"), true), TerScore { edits: 3, ref_len: 3 });
    }

    #[test]
    fn matches_recursive_definition() {
        let words = ["a", "b", "c"];
        let mut seqs: Vec<Vec<&str>> = vec![vec![]];
        for len in 1..=4 {
            let mut next = Vec::new();
            for sq in seqs.iter().filter(|q| q.len() == len - 1) {
                for w in words {
                    let mut q = sq.clone();
                    q.push(w);
                    next.push(q);
                }
            }
            seqs.extend(next);
        }
        for a in &seqs {
            for b in &seqs {
                let ca: Vec<char> = a.iter().map(|w| w.chars().next().unwrap()).collect();
                let cb: Vec<char> = b.iter().map(|w| w.chars().next().unwrap()).collect();
                let got = ter(&s(&a.join(" ")), &s(&b.join(" ")), false).edits;
                assert_eq!(got, reference_distance(&ca, &cb), "{a:?} {b:?}");
            }
        }
    }

    #[test]
    fn block_shift_moves_phrase() {
        // moving "c d" to the front fixes everything
        let t = ter(&s("a b c d"), &s("c d a b"), true);
        assert_eq!(t.edits, 1);
    }

    #[test]
    fn corpus_sums() {
        let hyps = [s("a b"), s("a x c")];
        let refs = [s("a b"), s("a b c")];
        let t = corpus_ter(&hyps, &refs, true);
        assert_eq!(t, TerScore { edits: 1, ref_len: 5 });
    }
}
