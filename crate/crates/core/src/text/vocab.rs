//! Frequency-ranked vocabulary with fixed special ids.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const NUM_SPECIALS: usize = 4;

pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Word counts; shards can be counted independently and merged.
#[derive(Clone, Debug, Default)]
pub struct WordCounts(HashMap<String, u64>);

impl WordCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_tokens<'a>(&mut self, tokens: impl IntoIterator<Item = &'a String>) {
        for t in tokens {
            *self.0.entry(t.clone()).or_insert(0) += 1;
        }
    }

    pub fn merge(mut self, other: WordCounts) -> Self {
        for (w, c) in other.0 {
            *self.0.entry(w).or_insert(0) += c;
        }
        self
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps the `cap - 4` most frequent words after the four specials.
    /// Equal counts are ordered lexicographically.
    pub fn build(counts: &WordCounts, cap: usize) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::contract("cannot build a vocabulary from an empty corpus"));
        }
        if cap < NUM_SPECIALS + 1 {
            return Err(Error::contract(format!(
                "vocabulary cap {cap} leaves no room for words"
            )));
        }
        let mut ranked: Vec<(&String, u64)> = counts
            .0
            .iter()
            .filter(|(w, _)| !SPECIAL_TOKENS.contains(&w.as_str()))
            .map(|(w, c)| (w, *c))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let words = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().take(cap - NUM_SPECIALS).map(|(w, _)| w.clone()))
            .collect();
        Self::from_words(words)
    }

    /// Rebuilds a vocabulary from its id-ordered word list.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < NUM_SPECIALS
            || words.iter().zip(SPECIAL_TOKENS).any(|(w, s)| w != s)
        {
            return Err(Error::Format("vocabulary must start with the special tokens".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary word `{w}`")));
            }
        }
        Ok(Vocabulary { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn id_or_unk(&self, word: &str) -> usize {
        self.id(word).unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Hex SHA-256 over the id-ordered words.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update([0u8]);
        }
        crate::hyper::hex(&h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(text: &[&str]) -> WordCounts {
        let mut c = WordCounts::new();
        for t in text {
            let toks: Vec<String> = t.split_whitespace().map(String::from).collect();
            c.add_tokens(&toks);
        }
        c
    }

    #[test]
    fn frequency_order() {
        let v = Vocabulary::build(&counts(&["a a b"]), 100).unwrap();
        assert_eq!(v.len(), 6);
        assert!(v.id("a").unwrap() < v.id("b").unwrap());
        assert_eq!(v.word(UNK), Some("<unk>"));
        assert_eq!(v.id("<s>"), Some(BOS));
        assert_eq!(v.id("</s>"), Some(EOS));
    }

    #[test]
    fn ties_break_lexicographically_and_cap_applies() {
        let v = Vocabulary::build(&counts(&["y x z z"]), 6).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("z"), Some(4));
        assert_eq!(v.id("x"), Some(5));
        assert_eq!(v.id("y"), None);
    }

    #[test]
    fn empty_corpus_and_tiny_cap_fail() {
        assert!(Vocabulary::build(&WordCounts::new(), 10).is_err());
        assert!(Vocabulary::build(&counts(&["a"]), 4).is_err());
    }

    #[test]
    fn merged_shards_equal_single_pass() {
        let whole = Vocabulary::build(&counts(&["a b c a", "b b d"]), 50).unwrap();
        let merged = counts(&["a b c a"]).merge(counts(&["b b d"]));
        assert_eq!(Vocabulary::build(&merged, 50).unwrap(), whole);
    }

    #[test]
    fn from_words_validates() {
        assert!(Vocabulary::from_words(vec!["x".into()]).is_err());
        let v = Vocabulary::build(&counts(&["a"]), 10).unwrap();
        let again = Vocabulary::from_words(v.words().to_vec()).unwrap();
        assert_eq!(again.fingerprint(), v.fingerprint());
    }
}
