//! Corpus-level BLEU without smoothing.

use std::collections::HashMap;

use crate::corpus::{Sentence, Token};
use crate::error::{ApeError, Result};

pub const MAX_N: usize = 4;

fn ngram_counts(tokens: &[Token], n: usize) -> HashMap<&[Token], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and hypothesis n-gram totals, per order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn collect(hyps: &[Sentence], refs: &[Sentence], max_n: usize) -> Result<Self> {
        if hyps.len() != refs.len() {
            return Err(ApeError::Argument(format!(
                "{} hypotheses for {} references",
                hyps.len(),
                refs.len()
            )));
        }
        if hyps.is_empty() {
            return Err(ApeError::Argument("BLEU needs at least one sentence".into()));
        }
        let mut stats = BleuStats {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            hyp_len: 0,
            ref_len: 0,
        };
        for (h, r) in hyps.iter().zip(refs) {
            stats.hyp_len += h.len();
            stats.ref_len += r.len();
            for n in 1..=max_n {
                let rc = ngram_counts(r.tokens(), n);
                for (g, c) in ngram_counts(h.tokens(), n) {
                    stats.matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
                }
                stats.totals[n - 1] += h.len().saturating_sub(n - 1);
            }
        }
        Ok(stats)
    }

    /// BLEU as a percentage.
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for (&m, &t) in self.matches.iter().zip(&self.totals) {
            if m == 0 || t == 0 {
                return 0.0;
            }
            log_sum += (m as f64 / t as f64).ln();
        }
        let log_p = log_sum / self.matches.len() as f64;
        let bp = (1.0 - self.ref_len as f64 / self.hyp_len as f64).min(0.0);
        100.0 * (bp + log_p).exp()
    }
}

pub fn bleu(hyps: &[Sentence], refs: &[Sentence]) -> Result<f64> {
    bleu_n(hyps, refs, MAX_N)
}

pub fn bleu_n(hyps: &[Sentence], refs: &[Sentence], max_n: usize) -> Result<f64> {
    Ok(BleuStats::collect(hyps, refs, max_n)?.score())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(t: &str) -> Sentence {
        Sentence::from_text(t)
    }

    #[test]
    fn perfect_match() {
        let c = [s("a b c d e"), s("x y z w")];
        assert_eq!(bleu(&c, &c).unwrap(), 100.0);
    }

    #[test]
    fn zero_four_gram_precision() {
        let st = BleuStats::collect(&[s("a b c d")], &[s("a b c e")], 4).unwrap();
        assert_eq!(st.matches, [3, 2, 1, 0]);
        assert_eq!(st.totals, [4, 3, 2, 1]);
        assert_eq!(st.score(), 0.0);
    }

    #[test]
    fn hand_computed_score() {
        let b = bleu(&[s("a b c d e")], &[s("a b c d f")]).unwrap();
        let expect = 100.0 * (0.8f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
        assert!((b - expect).abs() < 1e-9);
        assert!((b - 66.87).abs() < 1e-2);
    }

    #[test]
    fn brevity_penalty() {
        // hyp is a 4-token prefix of an 8-token ref: all precisions 1, BP = e^{-1}
        let b = bleu(&[s("a b c d")], &[s("a b c d e f g h")]).unwrap();
        assert!((b - 100.0 * (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn clipping() {
        let st = BleuStats::collect(&[s("the the the")], &[s("the cat")], 1).unwrap();
        assert_eq!(st.matches, [1]);
    }

    #[test]
    fn length_mismatch_is_error() {
        assert!(bleu(&[s("a")], &[]).is_err());
        assert!(bleu(&[], &[]).is_err());
    }
}
