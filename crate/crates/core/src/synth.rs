//! Synthetic review corpora with known labels and planted copy targets.
//!
//! Each review has two parts separated by the marker word `overall`. The first
//! part mixes filler words with the summary's salient words (in summary
//! order), an occasional distractor sentiment word from another class, and
//! the planted out-of-vocabulary words. The second part holds sentiment words
//! of the true class, always outnumbering the distractors, so counting
//! lexicon hits recovers the label. The summary is the ordered salient words.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::text::{tokenize, RawRecord};

pub const MARKER: &str = "overall";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_examples: usize,
    pub num_classes: usize,
    /// Neutral words used as padding.
    pub filler_words: usize,
    /// Content words that summaries are made of.
    pub topic_words: usize,
    /// Sentiment words per class.
    pub lexicon_size: usize,
    /// Fraction of summary words that are planted source OOVs.
    pub copy_rate: f64,
    /// Probability that the summary carries a sentiment word of the true class.
    pub summary_sentiment_rate: f64,
    /// Probability that a review contains a distractor sentiment word.
    pub distractor_rate: f64,
    /// Inclusive range of true-class sentiment words beyond the distractor count.
    pub sentiment_words: (usize, usize),
    /// Inclusive review length range in tokens.
    pub review_len: (usize, usize),
    /// Inclusive summary length range in words (before the final period).
    pub summary_len: (usize, usize),
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_examples: 500,
            num_classes: 5,
            filler_words: 60,
            topic_words: 40,
            lexicon_size: 6,
            copy_rate: 0.0,
            summary_sentiment_rate: 0.5,
            distractor_rate: 0.3,
            sentiment_words: (1, 2),
            review_len: (18, 28),
            summary_len: (3, 5),
            seed: 0,
        }
    }
}

pub fn filler_word(j: usize) -> String {
    format!("w{j}")
}

pub fn topic_word(j: usize) -> String {
    format!("t{j}")
}

/// Sentiment word `j` of 0-based class `k`.
pub fn lexicon_word(k: usize, j: usize) -> String {
    format!("s{k}q{j}")
}

/// Planted word `j` of example `i`; unique across the corpus.
pub fn planted_word(i: usize, j: usize) -> String {
    format!("zz{i}q{j}")
}

pub fn is_planted(word: &str) -> bool {
    word.starts_with("zz")
}

/// 0-based class of a lexicon word.
pub fn lexicon_class(word: &str, num_classes: usize) -> Option<usize> {
    let rest = word.strip_prefix('s')?;
    let (k, j) = rest.split_once('q')?;
    let k: usize = k.parse().ok()?;
    j.parse::<usize>().ok()?;
    (k < num_classes).then_some(k)
}

impl SyntheticSpec {
    /// Reads a TOML file; absent keys keep their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.num_classes < 2 {
            return bad("need at least two classes");
        }
        if self.filler_words == 0 || self.topic_words == 0 || self.lexicon_size == 0 {
            return bad("word pools must be nonempty");
        }
        for (name, r) in [
            ("copy_rate", self.copy_rate),
            ("summary_sentiment_rate", self.summary_sentiment_rate),
            ("distractor_rate", self.distractor_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.summary_len.0 < 1 || self.summary_len.0 > self.summary_len.1 {
            return bad("invalid summary length range");
        }
        if self.sentiment_words.0 < 1 || self.sentiment_words.0 > self.sentiment_words.1 {
            return bad("invalid sentiment word range");
        }
        if self.review_len.0 > self.review_len.1 {
            return bad("invalid review length range");
        }
        if self.topic_words < self.summary_len.1 {
            return bad("fewer topic words than the longest summary");
        }
        Ok(())
    }

    /// Every word the generator can emit except the planted ones.
    pub fn regular_words(&self) -> Vec<String> {
        let mut w: Vec<String> = (0..self.filler_words).map(filler_word).collect();
        w.extend((0..self.topic_words).map(topic_word));
        for k in 0..self.num_classes {
            w.extend((0..self.lexicon_size).map(|j| lexicon_word(k, j)));
        }
        w.push(MARKER.into());
        w.push(".".into());
        w
    }

    /// Generates the corpus; example `i` depends only on `(seed, i)`.
    pub fn generate(&self) -> Result<Vec<RawRecord>> {
        self.validate()?;
        Ok((0..self.num_examples).map(|i| self.example(i)).collect())
    }

    fn example(&self, i: usize) -> RawRecord {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.seed, i as u64]));
        let k = rng.gen_range(0..self.num_classes);
        let len = rng.gen_range(self.summary_len.0..=self.summary_len.1);
        let n_planted = ((self.copy_rate * len as f64).round() as usize).min(len);

        let mut topics: Vec<usize> = (0..self.topic_words).collect();
        topics.shuffle(&mut rng);
        let mut summary: Vec<String> = topics[..len].iter().map(|&t| topic_word(t)).collect();
        let mut slots: Vec<usize> = (0..len).collect();
        slots.shuffle(&mut rng);
        for (j, &s) in slots[..n_planted].iter().enumerate() {
            summary[s] = planted_word(i, j);
        }
        if n_planted < len && rng.gen::<f64>() < self.summary_sentiment_rate {
            let s = slots[n_planted];
            summary[s] = lexicon_word(k, rng.gen_range(0..self.lexicon_size));
        }

        let filler = |rng: &mut ChaCha8Rng| filler_word(rng.gen_range(0..self.filler_words));
        let mut part_a: Vec<String> = Vec::new();
        for w in &summary {
            for _ in 0..rng.gen_range(0..=2) {
                part_a.push(filler(&mut rng));
            }
            part_a.push(w.clone());
        }
        let distractors = usize::from(rng.gen::<f64>() < self.distractor_rate);
        for _ in 0..distractors {
            let other = (k + rng.gen_range(1..self.num_classes)) % self.num_classes;
            let pos = rng.gen_range(0..=part_a.len());
            part_a.insert(pos, lexicon_word(other, rng.gen_range(0..self.lexicon_size)));
        }

        let mut part_b: Vec<String> = Vec::new();
        let n_true = distractors + rng.gen_range(self.sentiment_words.0..=self.sentiment_words.1);
        for _ in 0..n_true {
            part_b.push(lexicon_word(k, rng.gen_range(0..self.lexicon_size)));
        }
        let target = rng.gen_range(self.review_len.0..=self.review_len.1);
        while part_a.len() + 1 + part_b.len() < target {
            let pos = rng.gen_range(0..=part_b.len());
            part_b.insert(pos, filler(&mut rng));
        }

        let mut review = part_a;
        review.push(MARKER.into());
        review.extend(part_b);
        RawRecord {
            id: Some(i.to_string()),
            review_text: review.join(" "),
            summary_text: summary.join(" "),
            rating: (k + 1) as f64,
        }
    }
}

/// Rating `1..=K` by majority vote over lexicon words, ties to the lowest class.
pub fn counting_baseline(review_text: &str, num_classes: usize) -> usize {
    let mut counts = vec![0usize; num_classes];
    for w in tokenize(review_text) {
        if let Some(k) = lexicon_class(&w, num_classes) {
            counts[k] += 1;
        }
    }
    let mut best = 0;
    for k in 1..num_classes {
        if counts[k] > counts[best] {
            best = k;
        }
    }
    best + 1
}

pub fn write_jsonl(records: &[RawRecord], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        let line = json!({
            "id": r.id,
            "reviewText": r.review_text,
            "summary": r.summary_text,
            "overall": r.rating,
        });
        serde_json::to_writer(&mut out, &line).expect("json serializes");
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}
