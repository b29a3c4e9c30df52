//! Constraint-annotated encoder inputs.
//!
//! Two ways of putting a terminology pair into the source sequence:
//! *append* inserts the target phrase right after the matched source span,
//! *replace* substitutes it for the span. Every position carries a source
//! factor: 0 plain source word, 1 source side of a constraint, 2 target side
//! of a constraint, 3 MT word.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{ConstraintSet, Sentence, Token};
use crate::error::{ApeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum SourceFactor {
    Source = 0,
    SourceConstraint = 1,
    TargetConstraint = 2,
    Mt = 3,
}

impl SourceFactor {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }
}

impl TryFrom<u8> for SourceFactor {
    type Error = ApeError;

    fn try_from(value: u8) -> Result<Self> {
        Ok(match value {
            0 => SourceFactor::Source,
            1 => SourceFactor::SourceConstraint,
            2 => SourceFactor::TargetConstraint,
            3 => SourceFactor::Mt,
            v => return Err(ApeError::Argument(format!("source factor {v} out of range"))),
        })
    }
}

impl From<SourceFactor> for u8 {
    fn from(value: SourceFactor) -> Self {
        value as u8
    }
}

/// How constraints are represented in the source-side encoder input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodeMethod {
    /// No constraints; every source token gets factor 0.
    Plain,
    Append,
    Replace,
}

impl FromStr for EncodeMethod {
    type Err = ApeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(EncodeMethod::Plain),
            "append" => Ok(EncodeMethod::Append),
            "replace" => Ok(EncodeMethod::Replace),
            other => Err(ApeError::Config(format!("unknown encode method {other:?}"))),
        }
    }
}

impl fmt::Display for EncodeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncodeMethod::Plain => "plain",
            EncodeMethod::Append => "append",
            EncodeMethod::Replace => "replace",
        })
    }
}

/// A token sequence with one source factor per token.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EncodedSource {
    pub tokens: Sentence,
    pub factors: Vec<SourceFactor>,
}

impl EncodedSource {
    pub fn new(tokens: Sentence, factors: Vec<SourceFactor>) -> Result<Self> {
        if tokens.len() != factors.len() {
            return Err(ApeError::Argument(format!(
                "{} tokens but {} factors",
                tokens.len(),
                factors.len()
            )));
        }
        let has_mt = factors.contains(&SourceFactor::Mt);
        if has_mt && factors.iter().any(|f| *f != SourceFactor::Mt) {
            return Err(ApeError::Argument(
                "MT factor mixed with source-side factors".into(),
            ));
        }
        Ok(EncodedSource { tokens, factors })
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// `token|factor` pairs, space separated.
    pub fn to_debug_line(&self) -> String {
        self.tokens
            .tokens()
            .iter()
            .zip(&self.factors)
            .map(|(t, f)| format!("{t}|{}", f.index()))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn from_debug_line(line: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut factors = Vec::new();
        for item in line.split_whitespace() {
            let (tok, fac) = item
                .rsplit_once('|')
                .ok_or_else(|| ApeError::Argument(format!("missing factor in {item:?}")))?;
            let fac: u8 = fac
                .parse()
                .map_err(|_| ApeError::Argument(format!("bad factor in {item:?}")))?;
            tokens.push(Token::new(tok)?);
            factors.push(SourceFactor::try_from(fac)?);
        }
        EncodedSource::new(Sentence(tokens), factors)
    }
}

/// Where (if anywhere) a constraint's source phrase was matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanMatch {
    Matched { start: usize, end: usize },
    /// Source phrase does not occur in the sentence.
    Absent,
    /// Leftmost occurrence overlaps a span claimed by an earlier constraint.
    Overlapping,
}

impl SpanMatch {
    pub fn span(&self) -> Option<(usize, usize)> {
        match *self {
            SpanMatch::Matched { start, end } => Some((start, end)),
            _ => None,
        }
    }
}

/// Leftmost occurrence of each constraint's source phrase, in constraint
/// order. A match that overlaps an earlier accepted span is rejected.
pub fn find_spans(x: &Sentence, constraints: &ConstraintSet) -> Vec<SpanMatch> {
    let mut taken: Vec<(usize, usize)> = Vec::new();
    constraints
        .iter()
        .map(|c| match x.find(c.src.tokens()) {
            None => SpanMatch::Absent,
            Some(start) => {
                let end = start + c.src.len();
                if taken.iter().any(|&(s, e)| start < e && s < end) {
                    SpanMatch::Overlapping
                } else {
                    taken.push((start, end));
                    SpanMatch::Matched { start, end }
                }
            }
        })
        .collect()
}

/// Matched spans paired with their constraint index, sorted by start.
fn matched_in_order(x: &Sentence, constraints: &ConstraintSet) -> Vec<(usize, usize, usize)> {
    let mut spans: Vec<(usize, usize, usize)> = find_spans(x, constraints)
        .into_iter()
        .enumerate()
        .filter_map(|(ci, m)| m.span().map(|(s, e)| (s, e, ci)))
        .collect();
    spans.sort_unstable();
    spans
}

pub fn encode_append(x: &Sentence, constraints: &ConstraintSet) -> EncodedSource {
    let spans = matched_in_order(x, constraints);
    let mut tokens = Vec::with_capacity(x.len());
    let mut factors = Vec::with_capacity(x.len());
    let mut pos = 0;
    for (start, end, ci) in spans {
        for t in &x.tokens()[pos..start] {
            tokens.push(t.clone());
            factors.push(SourceFactor::Source);
        }
        for t in &x.tokens()[start..end] {
            tokens.push(t.clone());
            factors.push(SourceFactor::SourceConstraint);
        }
        for t in constraints.0[ci].tgt.tokens() {
            tokens.push(t.clone());
            factors.push(SourceFactor::TargetConstraint);
        }
        pos = end;
    }
    for t in &x.tokens()[pos..] {
        tokens.push(t.clone());
        factors.push(SourceFactor::Source);
    }
    EncodedSource {
        tokens: Sentence(tokens),
        factors,
    }
}

pub fn encode_replace(x: &Sentence, constraints: &ConstraintSet) -> EncodedSource {
    let spans = matched_in_order(x, constraints);
    let mut tokens = Vec::with_capacity(x.len());
    let mut factors = Vec::with_capacity(x.len());
    let mut pos = 0;
    for (start, end, ci) in spans {
        for t in &x.tokens()[pos..start] {
            tokens.push(t.clone());
            factors.push(SourceFactor::Source);
        }
        for t in constraints.0[ci].tgt.tokens() {
            tokens.push(t.clone());
            factors.push(SourceFactor::TargetConstraint);
        }
        pos = end;
    }
    for t in &x.tokens()[pos..] {
        tokens.push(t.clone());
        factors.push(SourceFactor::Source);
    }
    EncodedSource {
        tokens: Sentence(tokens),
        factors,
    }
}

/// The unannotated source: all factors 0.
pub fn encode_plain(x: &Sentence) -> EncodedSource {
    EncodedSource {
        tokens: x.clone(),
        factors: vec![SourceFactor::Source; x.len()],
    }
}

pub fn encode_mt(mt: &Sentence) -> EncodedSource {
    EncodedSource {
        tokens: mt.clone(),
        factors: vec![SourceFactor::Mt; mt.len()],
    }
}

/// Dispatches on the method. `Plain` ignores the constraints.
pub fn encode_source(x: &Sentence, constraints: &ConstraintSet, method: EncodeMethod) -> EncodedSource {
    match method {
        EncodeMethod::Plain => encode_plain(x),
        EncodeMethod::Append => encode_append(x, constraints),
        EncodeMethod::Replace => encode_replace(x, constraints),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Constraint;

    fn s(text: &str) -> Sentence {
        Sentence::from_text(text)
    }

    fn factors(e: &EncodedSource) -> Vec<usize> {
        e.factors.iter().map(|f| f.index()).collect()
    }

    #[test]
    fn spans_direct_absent_overlap() {
        let x = s("a b c d");
        let c = ConstraintSet::new(vec![Constraint::from_text("b c", "Y").unwrap()]);
        assert_eq!(find_spans(&x, &c), [SpanMatch::Matched { start: 1, end: 3 }]);

        let c = ConstraintSet::new(vec![Constraint::from_text("q", "Y").unwrap()]);
        assert_eq!(find_spans(&x, &c), [SpanMatch::Absent]);

        // [a b] claims 0..2, [b c] would claim 1..3 -> skipped
        let c = ConstraintSet::new(vec![
            Constraint::from_text("a b", "Y").unwrap(),
            Constraint::from_text("b c", "Z").unwrap(),
        ]);
        assert_eq!(
            find_spans(&x, &c),
            [SpanMatch::Matched { start: 0, end: 2 }, SpanMatch::Overlapping]
        );
        let e = encode_append(&x, &c);
        assert_eq!(e.tokens.to_string(), "a b Y c d");
        assert_eq!(factors(&e), [1, 1, 2, 0, 0]);
    }

    #[test]
    fn worked_example_append_and_replace() {
        let x = s("x1 x2 x3 x4");
        let c = ConstraintSet::new(vec![Constraint::from_text("x2 x3", "y1").unwrap()]);
        let app = encode_append(&x, &c);
        assert_eq!(app.tokens.to_string(), "x1 x2 x3 y1 x4");
        assert_eq!(factors(&app), [0, 1, 1, 2, 0]);
        let rep = encode_replace(&x, &c);
        assert_eq!(rep.tokens.to_string(), "x1 y1 x4");
        assert_eq!(factors(&rep), [0, 2, 0]);
    }

    #[test]
    fn empty_constraints_are_identity() {
        let x = s("x1 x2 x3");
        for e in [
            encode_append(&x, &ConstraintSet::empty()),
            encode_replace(&x, &ConstraintSet::empty()),
        ] {
            assert_eq!(e.tokens, x);
            assert_eq!(factors(&e), [0, 0, 0]);
        }
    }

    #[test]
    fn replace_two_disjoint_length_arithmetic() {
        let x = s("a b c d e f");
        let c = ConstraintSet::new(vec![
            Constraint::from_text("b c", "Y").unwrap(),
            Constraint::from_text("e", "Z1 Z2 Z3").unwrap(),
        ]);
        let rep = encode_replace(&x, &c);
        // 6 - (2 + 1) + (1 + 3)
        assert_eq!(rep.len(), 7);
        assert_eq!(rep.tokens.to_string(), "a Y d Z1 Z2 Z3 f");
    }

    #[test]
    fn mt_factors() {
        let e = encode_mt(&s("a b c d e"));
        assert_eq!(factors(&e), [3, 3, 3, 3, 3]);
        assert!(encode_mt(&Sentence::default()).is_empty());
    }

    #[test]
    fn debug_line_roundtrip() {
        let e = EncodedSource::new(s("features Funktionen as"), vec![
            SourceFactor::SourceConstraint,
            SourceFactor::TargetConstraint,
            SourceFactor::Source,
        ])
        .unwrap();
        assert_eq!(e.to_debug_line(), "features|1 Funktionen|2 as|0");
        assert_eq!(EncodedSource::from_debug_line(&e.to_debug_line()).unwrap(), e);
    }

    #[test]
    fn mt_factor_cannot_mix() {
        assert!(EncodedSource::new(s("a b"), vec![SourceFactor::Mt, SourceFactor::Source]).is_err());
        assert!(EncodedSource::new(s("a b"), vec![SourceFactor::Mt]).is_err());
    }
}
