use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sentence, Token};
use crate::error::{ApeError, Result};

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
pub const PLH_ID: u32 = 4;
pub const NUM_SPECIAL: u32 = 5;

const SPECIALS: [&str; NUM_SPECIAL as usize] = ["<pad>", "<s>", "</s>", "<unk>", "<plh>"];

/// Joint source/target vocabulary with reserved special ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Specials first, then words by descending frequency (ties by text).
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for s in sentences {
            for t in s.tokens() {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut words: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !SPECIALS.contains(w))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w.to_string()))
            .collect::<Vec<_>>();
        Vocab::from(tokens)
    }

    /// Every sentence of every column, plus constraint phrases.
    pub fn from_corpora(corpora: &[&Corpus]) -> Self {
        let mut all: Vec<&Sentence> = Vec::new();
        for c in corpora {
            for t in c.iter() {
                all.extend([&t.src, &t.mt, &t.pe]);
                for k in &t.constraints {
                    all.extend([&k.src, &k.tgt]);
                }
            }
        }
        Vocab::build(all)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= NUM_SPECIAL as usize
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn word(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or("<unk>", String::as_str)
    }

    pub fn encode(&self, s: &Sentence) -> Vec<u32> {
        s.tokens().iter().map(|t| self.id(t.as_str())).collect()
    }

    /// Drops padding and sentence markers.
    pub fn decode(&self, ids: &[u32]) -> Sentence {
        Sentence(
            ids.iter()
                .filter(|&&i| !matches!(i, PAD_ID | BOS_ID | EOS_ID))
                .map(|&i| Token::new(self.word(i)).expect("vocabulary entries are tokens"))
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.len() < NUM_SPECIAL as usize
            || self.tokens[..NUM_SPECIAL as usize] != SPECIALS.map(String::from)
        {
            return Err(ApeError::Checkpoint("vocabulary lacks the reserved specials".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_and_order() {
        let v = Vocab::build([&Sentence::from_text("b a b c")]);
        assert_eq!(v.len(), 8);
        assert_eq!(v.id("b"), NUM_SPECIAL);
        assert_eq!(v.id("a"), NUM_SPECIAL + 1);
        assert_eq!(v.id("zzz"), UNK_ID);
        let ids = v.encode(&Sentence::from_text("c a"));
        assert_eq!(v.decode(&ids).to_string(), "c a");
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        back.validate().unwrap();
    }
}
