//! Edit states, edit actions and the Levenshtein expert policy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{ConstraintSet, Sentence, Token};
use crate::error::{ApeError, Result};

/// Symbols that can live in an edit state.
pub trait EditSymbol: Clone + PartialEq + fmt::Debug {
    fn bos() -> Self;
    fn eos() -> Self;
    fn placeholder() -> Self;
}

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const PLACEHOLDER: &str = "<plh>";

impl EditSymbol for Token {
    fn bos() -> Self {
        Token::new(BOS).expect("valid")
    }
    fn eos() -> Self {
        Token::new(EOS).expect("valid")
    }
    fn placeholder() -> Self {
        Token::new(PLACEHOLDER).expect("valid")
    }
}

/// Model vocabularies reserve these ids.
impl EditSymbol for u32 {
    fn bos() -> Self {
        crate::nn::vocab::BOS_ID
    }
    fn eos() -> Self {
        crate::nn::vocab::EOS_ID
    }
    fn placeholder() -> Self {
        crate::nn::vocab::PLH_ID
    }
}

/// A decoding state bracketed by sentinels. `anchors[i]` names the
/// constraint phrase token `i` was initialised from, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct EditState<T = Token> {
    pub tokens: Vec<T>,
    pub anchors: Vec<Option<usize>>,
    pub iteration: usize,
}

impl<T: EditSymbol> EditState<T> {
    pub fn blank() -> Self {
        EditState::from_inner(Vec::new())
    }

    /// Wraps `inner` in sentinels.
    pub fn from_inner(inner: Vec<T>) -> Self {
        let n = inner.len();
        let mut tokens = Vec::with_capacity(n + 2);
        tokens.push(T::bos());
        tokens.extend(inner);
        tokens.push(T::eos());
        EditState {
            tokens,
            anchors: vec![None; n + 2],
            iteration: 0,
        }
    }

    /// Tokens without sentinels.
    pub fn inner(&self) -> &[T] {
        &self.tokens[1..self.tokens.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    fn check(&self) -> Result<()> {
        let ok = self.tokens.len() >= 2
            && self.tokens[0] == T::bos()
            && self.tokens[self.tokens.len() - 1] == T::eos()
            && self.anchors.len() == self.tokens.len();
        if ok {
            Ok(())
        } else {
            Err(ApeError::Contract {
                phase: "state",
                message: "state must be bracketed by sentinels with one anchor per token".into(),
            })
        }
    }
}

impl EditState<Token> {
    pub fn to_sentence(&self) -> Sentence {
        Sentence(self.inner().to_vec())
    }
}

/// One round of edits: per-token deletions, per-slot placeholder counts and
/// the fill symbol of each placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditActions<T = Token> {
    pub deletions: Vec<bool>,
    pub insert_counts: Vec<usize>,
    pub fills: Vec<T>,
}

impl<T> EditActions<T> {
    /// Actions that change nothing on a state of `len` tokens.
    pub fn noop(len: usize) -> Self {
        EditActions {
            deletions: vec![false; len],
            insert_counts: vec![0; len.saturating_sub(1)],
            fills: Vec::new(),
        }
    }

    pub fn num_deletions(&self) -> usize {
        self.deletions.iter().filter(|d| **d).count()
    }

    pub fn num_insertions(&self) -> usize {
        self.insert_counts.iter().sum()
    }
}

/// Insert/delete-only distance table: `d[i][j]` edits turn `cur[i..]` into
/// `reference[j..]`.
fn suffix_table<T: PartialEq>(cur: &[T], reference: &[T]) -> Vec<Vec<u32>> {
    let (n, m) = (cur.len(), reference.len());
    let mut d = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..=n).rev() {
        for j in (0..=m).rev() {
            d[i][j] = if i == n {
                (m - j) as u32
            } else if j == m {
                (n - i) as u32
            } else {
                let mut best = 1 + d[i + 1][j].min(d[i][j + 1]);
                if cur[i] == reference[j] {
                    best = best.min(d[i + 1][j + 1]);
                }
                best
            };
        }
    }
    d
}

/// Expert edits turning `current` into `reference` (both without
/// sentinels). Traceback prefers keep, then delete, then insert.
pub fn oracle_edits<T: EditSymbol>(current: &[T], reference: &[T]) -> EditActions<T> {
    let d = suffix_table(current, reference);
    let (n, m) = (current.len(), reference.len());
    let mut deletions = Vec::with_capacity(n + 2);
    deletions.push(false);
    let mut insert_counts = vec![0usize];
    let mut fills = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        if i < n && j < m && current[i] == reference[j] && d[i][j] == d[i + 1][j + 1] {
            deletions.push(false);
            insert_counts.push(0);
            i += 1;
            j += 1;
        } else if i < n && d[i][j] == 1 + d[i + 1][j] {
            deletions.push(true);
            i += 1;
        } else {
            *insert_counts.last_mut().expect("non-empty") += 1;
            fills.push(reference[j].clone());
            j += 1;
        }
    }
    deletions.push(false);
    EditActions {
        deletions,
        insert_counts,
        fills,
    }
}

/// Insert/delete distance, i.e. `|a| + |b| - 2·LCS`.
pub fn indel_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    suffix_table(a, b)[0][0] as usize
}

fn contract(phase: &'static str, message: String) -> ApeError {
    ApeError::Contract { phase, message }
}

/// Deletion phase only.
pub fn apply_deletions<T: EditSymbol>(state: &EditState<T>, deletions: &[bool]) -> Result<EditState<T>> {
    state.check()?;
    if deletions.len() != state.len() {
        return Err(contract(
            "delete",
            format!("{} decisions for {} tokens", deletions.len(), state.len()),
        ));
    }
    if deletions[0] || deletions[state.len() - 1] {
        return Err(contract("delete", "sentinels cannot be deleted".into()));
    }
    let (tokens, anchors) = state
        .tokens
        .iter()
        .zip(&state.anchors)
        .zip(deletions)
        .filter(|(_, del)| !**del)
        .map(|((t, a), _)| (t.clone(), *a))
        .unzip();
    Ok(EditState {
        tokens,
        anchors,
        iteration: state.iteration,
    })
}

/// Placeholder insertion phase.
pub fn apply_insertions<T: EditSymbol>(state: &EditState<T>, counts: &[usize]) -> Result<EditState<T>> {
    if counts.len() + 1 != state.len() {
        return Err(contract(
            "insert",
            format!("{} slot counts for {} tokens", counts.len(), state.len()),
        ));
    }
    let extra: usize = counts.iter().sum();
    let mut tokens = Vec::with_capacity(state.len() + extra);
    let mut anchors = Vec::with_capacity(state.len() + extra);
    for (k, tok) in state.tokens.iter().enumerate() {
        tokens.push(tok.clone());
        anchors.push(state.anchors[k]);
        if let Some(&c) = counts.get(k) {
            tokens.extend(std::iter::repeat_n(T::placeholder(), c));
            anchors.extend(std::iter::repeat_n(None, c));
        }
    }
    Ok(EditState {
        tokens,
        anchors,
        iteration: state.iteration,
    })
}

/// Fill phase: placeholders are replaced left to right.
pub fn apply_fills<T: EditSymbol>(state: &EditState<T>, fills: &[T]) -> Result<EditState<T>> {
    let plh = T::placeholder();
    let n_plh = state.tokens.iter().filter(|t| **t == plh).count();
    if n_plh != fills.len() {
        return Err(contract(
            "fill",
            format!("{} fills for {n_plh} placeholders", fills.len()),
        ));
    }
    let mut it = fills.iter();
    let tokens = state
        .tokens
        .iter()
        .map(|t| {
            if *t == plh {
                it.next().expect("counted").clone()
            } else {
                t.clone()
            }
        })
        .collect();
    Ok(EditState {
        tokens,
        anchors: state.anchors.clone(),
        iteration: state.iteration,
    })
}

/// Applies delete, insert and fill in order and advances the iteration.
pub fn apply_edits<T: EditSymbol>(state: &EditState<T>, actions: &EditActions<T>) -> Result<EditState<T>> {
    let s = apply_deletions(state, &actions.deletions)?;
    let s = apply_insertions(&s, &actions.insert_counts)?;
    let mut s = apply_fills(&s, &actions.fills)?;
    s.iteration += 1;
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    Blank,
    Mt,
    Constraints,
}

impl FromStr for InitStrategy {
    type Err = ApeError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blank" => Ok(InitStrategy::Blank),
            "mt" => Ok(InitStrategy::Mt),
            "constraints" => Ok(InitStrategy::Constraints),
            _ => Err(ApeError::Argument(format!(
                "unknown init strategy {s:?} (expected blank, mt or constraints)"
            ))),
        }
    }
}

impl fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitStrategy::Blank => "blank",
            InitStrategy::Mt => "mt",
            InitStrategy::Constraints => "constraints",
        })
    }
}

/// Initial decoder state. Constraint targets are ordered by where their
/// source phrase first occurs in `src` and concatenated.
pub fn init_state(
    strategy: InitStrategy,
    mt: Option<&Sentence>,
    constraints: Option<&ConstraintSet>,
    src: Option<&Sentence>,
) -> Result<EditState<Token>> {
    match strategy {
        InitStrategy::Blank => Ok(EditState::blank()),
        InitStrategy::Mt => {
            let mt = mt.ok_or_else(|| ApeError::Argument("MT initialisation needs an MT sentence".into()))?;
            Ok(EditState::from_inner(mt.0.clone()))
        }
        InitStrategy::Constraints => {
            let c = constraints
                .ok_or_else(|| ApeError::Argument("constraint initialisation needs constraints".into()))?;
            let ordered = match src {
                Some(s) => c.sorted_by_source(s),
                None => c.clone(),
            };
            let mut inner = Vec::new();
            let mut inner_anchors = Vec::new();
            for (k, con) in ordered.iter().enumerate() {
                inner.extend(con.tgt.0.iter().cloned());
                inner_anchors.extend(std::iter::repeat_n(Some(k), con.tgt.len()));
            }
            let mut state = EditState::from_inner(inner);
            state.anchors[1..state.tokens.len() - 1].copy_from_slice(&inner_anchors);
            Ok(state)
        }
    }
}

/// One line of the edit trace: `iter=<n> <phase>: <tokens>`.
pub fn trace_line<T: fmt::Display>(iteration: usize, phase: &str, tokens: &[T]) -> String {
    let body: Vec<String> = tokens.iter().map(ToString::to_string).collect();
    format!("iter={iteration} {phase}: {}", body.join(" "))
}
