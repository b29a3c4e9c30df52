//! Evaluation: TER, BLEU, Term% and output stability.

mod bleu;
mod ter;

pub use bleu::{bleu, bleu_n, BleuStats, MAX_N};
pub use ter::{corpus_ter, edit_distance, ter, TerScore};

use serde::{Deserialize, Serialize};

use crate::corpus::{ConstraintSet, Sentence};
use crate::error::{ApeError, Result};

/// Metrics of one system output against one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ter: f64,
    pub bleu: f64,
    pub term_pct: Option<f64>,
    pub n_sentences: usize,
    pub n_constraints: usize,
    pub n_constraints_hit: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// Term% with the undefined case mapped to 0 for comparisons.
    pub fn term_or_zero(&self) -> f64 {
        self.term_pct.unwrap_or(0.0)
    }
}

/// Counts constraints whose target phrase occurs contiguously in the
/// aligned output. Returns `(hit, total)`.
pub fn term_hits(outputs: &[Sentence], constraint_sets: &[ConstraintSet]) -> Result<(usize, usize)> {
    if outputs.len() != constraint_sets.len() {
        return Err(ApeError::Argument(format!(
            "{} outputs for {} constraint sets",
            outputs.len(),
            constraint_sets.len()
        )));
    }
    let mut hit = 0;
    let mut total = 0;
    for (out, set) in outputs.iter().zip(constraint_sets) {
        for c in set {
            total += 1;
            if out.contains_phrase(c.tgt.tokens()) {
                hit += 1;
            }
        }
    }
    Ok((hit, total))
}

/// Term% as a percentage, `None` when there are no constraints.
pub fn term_pct(outputs: &[Sentence], constraint_sets: &[ConstraintSet]) -> Result<Option<f64>> {
    let (hit, total) = term_hits(outputs, constraint_sets)?;
    Ok(pct(hit, total))
}

fn pct(hit: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| 100.0 * hit as f64 / total as f64)
}

/// Full report. TER uses block shifts. Without constraint sets Term% is
/// undefined.
pub fn evaluate(
    hyps: &[Sentence],
    refs: &[Sentence],
    constraint_sets: Option<&[ConstraintSet]>,
) -> Result<EvalReport> {
    let bleu = bleu(hyps, refs)?;
    let t = corpus_ter(hyps, refs, true);
    let (hit, total) = match constraint_sets {
        Some(sets) => term_hits(hyps, sets)?,
        None => (0, 0),
    };
    let report = EvalReport {
        ter: ter::ratio(t.edits, t.ref_len),
        bleu,
        term_pct: pct(hit, total),
        n_sentences: hyps.len(),
        n_constraints: total,
        n_constraints_hit: hit,
    };
    if !report.ter.is_finite() || !report.bleu.is_finite() {
        return Err(ApeError::Numeric("non-finite metric".into()));
    }
    Ok(report)
}

/// TER and BLEU of `outputs_a` measured against `outputs_b` as references.
pub fn stability(outputs_a: &[Sentence], outputs_b: &[Sentence]) -> Result<(f64, f64)> {
    let report = evaluate(outputs_a, outputs_b, None)?;
    Ok((report.ter, report.bleu))
}
