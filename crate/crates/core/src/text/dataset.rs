//! Prepared dataset container, corpus statistics and the preparation pipeline.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic       8 bytes  b"DVDATA\0\0"
//! version     u32      DATASET_VERSION
//! header_len  u64
//! header      JSON: {"vocab": [...], "hyperparams_hash": "..", "num_classes": K,
//!                    "seed": s, "counts": {"train": n, "valid": n, "test": n}}
//! examples    train, then valid, then test; each is `u32 byte_len` + payload
//! payload:
//!   u64 id, u32 label (0-based),
//!   u32 n, n × u32 src_ids, n × u32 src_ext_ids,
//!   u32 m, m × string oov_words,
//!   u32 t, t × u32 tgt_ids, t × u32 tgt_ext_ids,
//!   u32 r, r × string tgt_words
//! string: u32 byte length + UTF-8 bytes
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::example::{Example, TokenizedRecord};
use super::jsonl::RawRecord;
use super::split::{split_dataset, SplitSizes};
use super::tokenize::{filter_record, normalize_summary, tokenize, FilterRules};
use super::vocab::{Vocabulary, WordCounts};
use crate::error::{Error, Result};
use crate::hyper::HyperParams;
use crate::par::{map_indexed, Parallelism};

pub const DATASET_MAGIC: &[u8; 8] = b"DVDATA\0\0";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub hyper_hash: String,
    pub num_classes: usize,
    pub seed: u64,
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[Example] {
        match s {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        let header = json!({
            "vocab": self.vocab.words(),
            "hyperparams_hash": self.hyper_hash,
            "num_classes": self.num_classes,
            "seed": self.seed,
            "counts": {"train": self.train.len(), "valid": self.valid.len(), "test": self.test.len()},
        });
        let hb = serde_json::to_vec(&header).expect("header serializes");
        out.extend_from_slice(&(hb.len() as u64).to_le_bytes());
        out.extend_from_slice(&hb);
        for ex in self.train.iter().chain(&self.valid).chain(&self.test) {
            let payload = encode_example(ex);
            out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != DATASET_MAGIC {
            return Err(Error::Format("not a dataset file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let hlen = r.u64()? as usize;
        let header: serde_json::Value = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| Error::Format(format!("dataset header: {e}")))?;
        let words: Vec<String> = serde_json::from_value(header["vocab"].clone())
            .map_err(|e| Error::Format(format!("dataset vocabulary: {e}")))?;
        let vocab = Vocabulary::from_words(words)?;
        let count = |k: &str| -> Result<usize> {
            header["counts"][k]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::Format(format!("dataset header lacks count `{k}`")))
        };
        let (nt, nv, ns) = (count("train")?, count("valid")?, count("test")?);
        let mut read_n = |n: usize| -> Result<Vec<Example>> {
            (0..n)
                .map(|_| {
                    let len = r.u32()? as usize;
                    decode_example(r.take(len)?)
                })
                .collect()
        };
        let train = read_n(nt)?;
        let valid = read_n(nv)?;
        let test = read_n(ns)?;
        Ok(Dataset {
            vocab,
            hyper_hash: header["hyperparams_hash"].as_str().unwrap_or_default().to_string(),
            num_classes: header["num_classes"].as_u64().unwrap_or(0) as usize,
            seed: header["seed"].as_u64().unwrap_or(0),
            train,
            valid,
            test,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn encode_example(ex: &Example) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&ex.id.to_le_bytes());
    put_u32(&mut out, ex.label);
    put_u32(&mut out, ex.src_ids.len());
    for &i in ex.src_ids.iter().chain(&ex.src_ext_ids) {
        put_u32(&mut out, i);
    }
    put_u32(&mut out, ex.oov_words.len());
    for w in &ex.oov_words {
        put_str(&mut out, w);
    }
    put_u32(&mut out, ex.tgt_ids.len());
    for &i in ex.tgt_ids.iter().chain(&ex.tgt_ext_ids) {
        put_u32(&mut out, i);
    }
    put_u32(&mut out, ex.tgt_words.len());
    for w in &ex.tgt_words {
        put_str(&mut out, w);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("truncated dataset file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn ids(&mut self, n: usize) -> Result<Vec<usize>> {
        (0..n).map(|_| self.u32().map(|v| v as usize)).collect()
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("dataset string is not UTF-8".into()))
    }

    fn strings(&mut self) -> Result<Vec<String>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.string()).collect()
    }
}

fn decode_example(bytes: &[u8]) -> Result<Example> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let id = r.u64()?;
    let label = r.u32()? as usize;
    let n = r.u32()? as usize;
    let src_ids = r.ids(n)?;
    let src_ext_ids = r.ids(n)?;
    let oov_words = r.strings()?;
    let t = r.u32()? as usize;
    let tgt_ids = r.ids(t)?;
    let tgt_ext_ids = r.ids(t)?;
    let tgt_words = r.strings()?;
    Ok(Example {
        id,
        src_ids,
        src_ext_ids,
        oov_words,
        tgt_ids,
        tgt_ext_ids,
        tgt_words,
        label,
    })
}

/// Dataset statistics in the layout of a corpus summary table, computed on the
/// training split before truncation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub avg_review_len: f64,
    pub avg_summary_len: f64,
    /// Fraction of summary tokens that also occur in their review.
    pub copy_ratio: f64,
    /// Fraction of training records per rating `1..=K`.
    pub rating_distribution: Vec<f64>,
    pub input_records: usize,
    pub malformed_lines: usize,
    pub rejected: BTreeMap<String, usize>,
    pub vocab_size: usize,
}

impl CorpusStats {
    pub fn compute(train: &[TokenizedRecord], num_classes: usize) -> Self {
        let n = train.len().max(1) as f64;
        let mut copied = 0usize;
        let mut summary_tokens = 0usize;
        let mut hist = vec![0usize; num_classes];
        for r in train {
            let src: std::collections::HashSet<&String> = r.review.iter().collect();
            copied += r.summary.iter().filter(|w| src.contains(w)).count();
            summary_tokens += r.summary.len();
            if (1..=num_classes).contains(&r.rating) {
                hist[r.rating - 1] += 1;
            }
        }
        CorpusStats {
            train: train.len(),
            valid: 0,
            test: 0,
            avg_review_len: train.iter().map(|r| r.review.len()).sum::<usize>() as f64 / n,
            avg_summary_len: train.iter().map(|r| r.summary.len()).sum::<usize>() as f64 / n,
            copy_ratio: if summary_tokens == 0 {
                0.0
            } else {
                copied as f64 / summary_tokens as f64
            },
            rating_distribution: hist.iter().map(|&c| c as f64 / n).collect(),
            input_records: 0,
            malformed_lines: 0,
            rejected: BTreeMap::new(),
            vocab_size: 0,
        }
    }

    pub fn render_table(&self) -> String {
        let mut s = String::new();
        s.push_str("training  validation  testing  avg_review_len  avg_summary_len  copy_ratio");
        for k in 1..=self.rating_distribution.len() {
            s.push_str(&format!("  rating_{k}"));
        }
        s.push('\n');
        s.push_str(&format!(
            "{:<8}  {:<10}  {:<7}  {:<14.1}  {:<15.1}  {:<10.1}",
            self.train,
            self.valid,
            self.test,
            self.avg_review_len,
            self.avg_summary_len,
            self.copy_ratio * 100.0
        ));
        for p in &self.rating_distribution {
            s.push_str(&format!("  {:<8.1}", p * 100.0));
        }
        s.push('\n');
        if !self.rejected.is_empty() {
            s.push_str("rejected:");
            for (k, v) in &self.rejected {
                s.push_str(&format!(" {k}={v}"));
            }
            s.push('\n');
        }
        s
    }
}

/// How to partition the filtered records.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SplitSpec {
    /// Validation and test each take this fraction.
    Fraction(f64),
    Sizes(SplitSizes),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrepConfig {
    pub hp: HyperParams,
    pub rules: FilterRules,
    pub seed: u64,
    pub split: SplitSpec,
    pub parallelism: Parallelism,
}

impl PrepConfig {
    pub fn new(hp: HyperParams, seed: u64) -> Self {
        let rules = FilterRules {
            num_classes: hp.num_classes,
            ..FilterRules::default()
        };
        PrepConfig {
            hp,
            rules,
            seed,
            split: SplitSpec::Fraction(0.05),
            parallelism: Parallelism::default(),
        }
    }
}

/// Tokenize → normalize → filter → split → vocabulary → truncate → encode.
pub fn prepare(raw: &[RawRecord], cfg: &PrepConfig) -> Result<(Dataset, CorpusStats)> {
    cfg.hp.validate()?;
    if raw.is_empty() {
        return Err(Error::contract("no input records"));
    }
    let processed = map_indexed(raw, cfg.parallelism, |_, r| {
        let review = tokenize(&r.review_text);
        let summary = normalize_summary(tokenize(&r.summary_text));
        filter_record(review.len(), summary.len(), r.rating, &cfg.rules).map(|rating| {
            TokenizedRecord {
                review,
                summary,
                rating,
            }
        })
    });
    let mut rejected: BTreeMap<String, usize> = BTreeMap::new();
    let mut kept: Vec<(u64, TokenizedRecord)> = Vec::new();
    for (i, p) in processed.into_iter().enumerate() {
        match p {
            Ok(rec) => kept.push((i as u64, rec)),
            Err(reason) => *rejected.entry(reason.as_str().to_string()).or_insert(0) += 1,
        }
    }
    if kept.is_empty() {
        return Err(Error::contract(format!(
            "no records survived filtering (rejected: {rejected:?})"
        )));
    }
    let sizes = match cfg.split {
        SplitSpec::Fraction(f) => SplitSizes::from_fraction(kept.len(), f),
        SplitSpec::Sizes(s) => s,
    };
    let splits = split_dataset(kept, cfg.seed, sizes)?;

    let mut counts = WordCounts::new();
    for (_, r) in &splits.train {
        counts.add_tokens(&r.review);
        counts.add_tokens(&r.summary);
    }
    let vocab = Vocabulary::build(&counts, cfg.hp.vocab_cap)?;

    let train_records: Vec<TokenizedRecord> = splits.train.iter().map(|(_, r)| r.clone()).collect();
    let mut stats = CorpusStats::compute(&train_records, cfg.hp.num_classes);
    stats.valid = splits.valid.len();
    stats.test = splits.test.len();
    stats.input_records = raw.len();
    stats.rejected = rejected;
    stats.vocab_size = vocab.len();

    let encode = |part: Vec<(u64, TokenizedRecord)>| -> Vec<Example> {
        map_indexed(&part, cfg.parallelism, |_, (id, r)| {
            let r = r.clone().truncate(cfg.hp.max_src_len, cfg.hp.max_tgt_len);
            Example::encode(*id, &r, &vocab)
        })
    };
    let dataset = Dataset {
        train: encode(splits.train),
        valid: encode(splits.valid),
        test: encode(splits.test),
        hyper_hash: cfg.hp.hash(),
        num_classes: cfg.hp.num_classes,
        seed: cfg.seed,
        vocab,
    };
    Ok((dataset, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(review_len: usize, summary: &str, rating: f64) -> RawRecord {
        let review: Vec<String> = (0..review_len).map(|i| format!("w{}", i % 7)).collect();
        RawRecord {
            id: None,
            review_text: review.join(" "),
            summary_text: summary.to_string(),
            rating,
        }
    }

    fn corpus() -> Vec<RawRecord> {
        let mut v = Vec::new();
        for i in 0..30 {
            v.push(raw(16 + i, "w1 w2 w3", (i % 5 + 1) as f64));
        }
        v.push(raw(3, "w1 w2 w3", 5.0));
        v.push(raw(20, "w1", 5.0));
        v.push(raw(20, "w1 w2 w3", 4.5));
        v
    }

    fn cfg() -> PrepConfig {
        let mut hp = HyperParams::default();
        hp.vocab_cap = 8;
        PrepConfig::new(hp, 3)
    }

    #[test]
    fn pipeline_counts_rejections() {
        let (ds, stats) = prepare(&corpus(), &cfg()).unwrap();
        assert_eq!(stats.rejected["review_too_short"], 1);
        assert_eq!(stats.rejected["summary_too_short"], 1);
        assert_eq!(stats.rejected["invalid_rating"], 1);
        assert_eq!(ds.train.len() + ds.valid.len() + ds.test.len(), 30);
        assert_eq!(ds.vocab.len(), 8);
        assert!((stats.copy_ratio - 0.75).abs() < 1e-12, "{}", stats.copy_ratio);
        assert!((stats.avg_summary_len - 4.0).abs() < 1e-12);
        let total: f64 = stats.rating_distribution.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(stats.render_table().contains("copy_ratio"));
    }

    #[test]
    fn serialization_is_deterministic_and_round_trips() {
        let (a, _) = prepare(&corpus(), &cfg()).unwrap();
        let (b, _) = prepare(&corpus(), &cfg()).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let back = Dataset::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn empty_input_fails() {
        assert!(prepare(&[], &cfg()).is_err());
        assert!(prepare(&[raw(3, "a b c", 1.0)], &cfg()).is_err());
    }

    #[test]
    fn truncated_file_is_format_error() {
        let (a, _) = prepare(&corpus(), &cfg()).unwrap();
        let bytes = a.to_bytes();
        assert!(matches!(
            Dataset::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
    }
}
