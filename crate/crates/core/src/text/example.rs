//! Encoded training examples with per-review copy vocabularies.

use std::collections::HashMap;

use super::tokenize::{normalize_summary, tokenize};
use super::vocab::{Vocabulary, EOS, UNK};

/// A tokenized, filtered record before id encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenizedRecord {
    pub review: Vec<String>,
    pub summary: Vec<String>,
    /// External label in `1..=K`.
    pub rating: usize,
}

impl TokenizedRecord {
    /// Caps the review at `max_src` tokens and the summary at `max_tgt`.
    /// Must run before the dynamic vocabulary is built, so that dropped
    /// tokens never become copy candidates.
    pub fn truncate(mut self, max_src: usize, max_tgt: usize) -> Self {
        self.review.truncate(max_src);
        self.summary.truncate(max_tgt);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub id: u64,
    /// Source ids over the fixed vocabulary (OOV → UNK).
    pub src_ids: Vec<usize>,
    /// Source ids over the vocabulary extended with this review's OOV words.
    pub src_ext_ids: Vec<usize>,
    /// This review's OOV words; word `k` has extended id `|V| + k`.
    pub oov_words: Vec<String>,
    /// Target ids over the fixed vocabulary, ending with EOS.
    pub tgt_ids: Vec<usize>,
    /// Copy-aware target ids, ending with EOS.
    pub tgt_ext_ids: Vec<usize>,
    /// Reference summary tokens (truncated, without EOS).
    pub tgt_words: Vec<String>,
    /// Internal label in `0..K`.
    pub label: usize,
}

/// Source ids, extended ids and the ordered OOV list of a review.
pub fn build_dynamic_vocab(
    src_words: &[String],
    vocab: &Vocabulary,
) -> (Vec<usize>, Vec<usize>, Vec<String>) {
    let base = vocab.len();
    let mut oov_index: HashMap<&str, usize> = HashMap::new();
    let mut oov_words = Vec::new();
    let mut ids = Vec::with_capacity(src_words.len());
    let mut ext = Vec::with_capacity(src_words.len());
    for w in src_words {
        match vocab.id(w) {
            Some(id) => {
                ids.push(id);
                ext.push(id);
            }
            None => {
                let k = *oov_index.entry(w.as_str()).or_insert_with(|| {
                    oov_words.push(w.clone());
                    oov_words.len() - 1
                });
                ids.push(UNK);
                ext.push(base + k);
            }
        }
    }
    (ids, ext, oov_words)
}

/// Target ids with EOS appended. Words outside the vocabulary map to their
/// copy id when the review contains them, and to UNK otherwise.
pub fn encode_target(
    tgt_words: &[String],
    vocab: &Vocabulary,
    oov_words: &[String],
) -> (Vec<usize>, Vec<usize>) {
    let mut ids = Vec::with_capacity(tgt_words.len() + 1);
    let mut ext = Vec::with_capacity(tgt_words.len() + 1);
    for w in tgt_words {
        match vocab.id(w) {
            Some(id) => {
                ids.push(id);
                ext.push(id);
            }
            None => {
                ids.push(UNK);
                ext.push(
                    oov_words
                        .iter()
                        .position(|o| o == w)
                        .map_or(UNK, |k| vocab.len() + k),
                );
            }
        }
    }
    ids.push(EOS);
    ext.push(EOS);
    (ids, ext)
}

impl Example {
    /// Encodes an already truncated record.
    pub fn encode(id: u64, record: &TokenizedRecord, vocab: &Vocabulary) -> Self {
        let (src_ids, src_ext_ids, oov_words) = build_dynamic_vocab(&record.review, vocab);
        let (tgt_ids, tgt_ext_ids) = encode_target(&record.summary, vocab, &oov_words);
        Example {
            id,
            src_ids,
            src_ext_ids,
            oov_words,
            tgt_ids,
            tgt_ext_ids,
            tgt_words: record.summary.clone(),
            label: record.rating - 1,
        }
    }

    /// Tokenizes, truncates and encodes raw text without filtering, for
    /// inference on unseen reviews. A missing summary encodes as EOS alone.
    pub fn from_text(
        id: u64,
        review: &str,
        summary: Option<&str>,
        rating: usize,
        vocab: &Vocabulary,
        max_src: usize,
        max_tgt: usize,
    ) -> Self {
        let record = TokenizedRecord {
            review: tokenize(review),
            summary: summary.map(|s| normalize_summary(tokenize(s))).unwrap_or_default(),
            rating: rating.max(1),
        }
        .truncate(max_src, max_tgt);
        Example::encode(id, &record, vocab)
    }

    /// Size of the dynamic vocabulary `|V| + #OOV`.
    pub fn ext_vocab_size(&self, vocab_len: usize) -> usize {
        vocab_len + self.oov_words.len()
    }

    /// Renders an extended id through the vocabulary and this review's OOVs.
    pub fn render<'a>(&'a self, id: usize, vocab: &'a Vocabulary) -> &'a str {
        if id < vocab.len() {
            vocab.word(id).unwrap_or("<unk>")
        } else {
            self.oov_words
                .get(id - vocab.len())
                .map_or("<unk>", String::as_str)
        }
    }

    /// Source tokens recovered from the extended ids.
    pub fn source_words(&self, vocab: &Vocabulary) -> Vec<String> {
        self.src_ext_ids
            .iter()
            .map(|&id| self.render(id, vocab).to_string())
            .collect()
    }

    /// External label in `1..=K`.
    pub fn rating(&self) -> usize {
        self.label + 1
    }
}
