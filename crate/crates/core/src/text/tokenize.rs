//! Deterministic word tokenizer and summary/record filters.
//!
//! Rules, applied in order:
//! 1. lowercase the text;
//! 2. split on runs of whitespace;
//! 3. within each chunk, every character that is neither alphanumeric nor an
//!    intra-word apostrophe or hyphen becomes its own token. An apostrophe or
//!    hyphen is intra-word when both neighbours are alphanumeric
//!    (`don't`, `well-made`).

use std::fmt;

pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for chunk in lower.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut word = String::new();
        for (i, &c) in chars.iter().enumerate() {
            let joiner = (c == '\'' || c == '-' || c == '’')
                && i > 0
                && chars[i - 1].is_alphanumeric()
                && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
            if c.is_alphanumeric() || joiner {
                word.push(c);
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_string());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// Appends `"."` unless the summary already ends with sentence punctuation.
pub fn normalize_summary(mut words: Vec<String>) -> Vec<String> {
    match words.last().map(String::as_str) {
        Some(".") | Some("!") | Some("?") => {}
        _ => words.push(".".to_string()),
    }
    words
}

/// Length and label bounds for keeping a record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterRules {
    pub min_review: usize,
    pub max_review: usize,
    pub min_summary: usize,
    pub num_classes: usize,
}

impl Default for FilterRules {
    fn default() -> Self {
        FilterRules {
            min_review: 16,
            max_review: 800,
            min_summary: 4,
            num_classes: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RejectReason {
    ReviewTooShort,
    ReviewTooLong,
    SummaryTooShort,
    InvalidRating,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::ReviewTooShort => "review_too_short",
            RejectReason::ReviewTooLong => "review_too_long",
            RejectReason::SummaryTooShort => "summary_too_short",
            RejectReason::InvalidRating => "invalid_rating",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Decides whether a tokenized record is kept. Lengths are token counts after
/// tokenization (and, for the summary, after [`normalize_summary`]). Ratings
/// must be integral and within `1..=K`; nothing is clamped.
pub fn filter_record(
    review_len: usize,
    summary_len: usize,
    rating: f64,
    rules: &FilterRules,
) -> Result<usize, RejectReason> {
    if review_len < rules.min_review {
        return Err(RejectReason::ReviewTooShort);
    }
    if review_len > rules.max_review {
        return Err(RejectReason::ReviewTooLong);
    }
    if summary_len < rules.min_summary {
        return Err(RejectReason::SummaryTooShort);
    }
    let valid = rating.is_finite()
        && rating.fract() == 0.0
        && rating >= 1.0
        && rating <= rules.num_classes as f64;
    if !valid {
        return Err(RejectReason::InvalidRating);
    }
    Ok(rating as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(tokenize("Great Product!"), words(&["great", "product", "!"]));
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(tokenize("a  b"), words(&["a", "b"]));
        assert_eq!(
            tokenize("Don't buy the well-made 'thing', ok?"),
            words(&["don't", "buy", "the", "well-made", "'", "thing", "'", ",", "ok", "?"])
        );
        assert_eq!(tokenize("-5 stars..."), words(&["-", "5", "stars", ".", ".", "."]));
        assert_eq!(tokenize("a,b"), words(&["a", ",", "b"]));
    }

    #[test]
    fn summary_normalization() {
        assert_eq!(normalize_summary(words(&["good", "buy"])), words(&["good", "buy", "."]));
        assert_eq!(normalize_summary(words(&["great", "!"])), words(&["great", "!"]));
        assert_eq!(normalize_summary(vec![]), words(&["."]));
    }

    #[test]
    fn filter_boundaries() {
        let r = FilterRules::default();
        assert_eq!(filter_record(15, 4, 5.0, &r), Err(RejectReason::ReviewTooShort));
        assert_eq!(filter_record(16, 4, 5.0, &r), Ok(5));
        assert_eq!(filter_record(800, 4, 1.0, &r), Ok(1));
        assert_eq!(filter_record(801, 4, 1.0, &r), Err(RejectReason::ReviewTooLong));
        assert_eq!(filter_record(20, 3, 3.0, &r), Err(RejectReason::SummaryTooShort));
        assert_eq!(filter_record(20, 4, 4.5, &r), Err(RejectReason::InvalidRating));
        assert_eq!(filter_record(20, 4, 6.0, &r), Err(RejectReason::InvalidRating));
        assert_eq!(filter_record(20, 4, 0.0, &r), Err(RejectReason::InvalidRating));
    }

    #[test]
    fn filter_exhaustive_length_grid() {
        let r = FilterRules::default();
        for review in 0..=820 {
            for summary in 0..=8 {
                let kept = filter_record(review, summary, 3.0, &r).is_ok();
                let expect = (16..=800).contains(&review) && summary >= 4;
                assert_eq!(kept, expect, "review={review} summary={summary}");
            }
        }
    }

    #[test]
    fn reason_names_are_stable() {
        assert_eq!(RejectReason::ReviewTooShort.to_string(), "review_too_short");
        assert_eq!(RejectReason::SummaryTooShort.as_str(), "summary_too_short");
    }
}
