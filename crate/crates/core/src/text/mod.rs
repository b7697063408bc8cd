//! Review ingestion, tokenization, filtering, vocabularies and dataset files.

mod dataset;
mod example;
mod jsonl;
mod split;
mod tokenize;
mod vocab;

pub use dataset::{prepare, CorpusStats, Dataset, PrepConfig, Split, SplitSpec, DATASET_MAGIC, DATASET_VERSION};
pub use example::{build_dynamic_vocab, encode_target, Example, TokenizedRecord};
pub use jsonl::{parse_line, read_jsonl, read_records, FieldMap, JsonlRead, RawRecord};
pub use split::{split_dataset, SplitSizes, Splits};
pub use tokenize::{filter_record, normalize_summary, tokenize, FilterRules, RejectReason};
pub use vocab::{Vocabulary, WordCounts, BOS, EOS, NUM_SPECIALS, PAD, SPECIAL_TOKENS, UNK};
