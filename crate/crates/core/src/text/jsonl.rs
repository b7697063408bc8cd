//! JSON-lines review ingestion.

use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub id: Option<String>,
    pub review_text: String,
    pub summary_text: String,
    /// Raw rating; validated to an integer in `1..=K` by the filter.
    pub rating: f64,
}

/// Names of the JSON fields holding each part of a record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldMap {
    pub review: String,
    pub summary: String,
    pub rating: String,
    pub id: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        FieldMap {
            review: "reviewText".into(),
            summary: "summary".into(),
            rating: "overall".into(),
            id: "id".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct JsonlRead {
    pub records: Vec<RawRecord>,
    /// Non-blank lines that were skipped.
    pub malformed: usize,
    /// Non-blank lines seen.
    pub lines: usize,
}

fn rating_of(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn id_of(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Parses one line; `None` when it is not an object carrying the required fields.
pub fn parse_line(line: &str, fields: &FieldMap) -> Option<RawRecord> {
    let v: Value = serde_json::from_str(line).ok()?;
    let obj = v.as_object()?;
    let review = obj.get(&fields.review)?.as_str()?;
    let summary = obj.get(&fields.summary)?.as_str()?;
    let rating = rating_of(obj.get(&fields.rating)?)?;
    Some(RawRecord {
        id: obj.get(&fields.id).and_then(id_of),
        review_text: review.to_string(),
        summary_text: summary.to_string(),
        rating,
    })
}

/// Reads records from any line source. Fails when more than half of the
/// non-blank lines are malformed.
pub fn read_records<R: BufRead>(reader: R, fields: &FieldMap, origin: &Path) -> Result<JsonlRead> {
    let mut out = JsonlRead::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.lines += 1;
        match parse_line(&line, fields) {
            Some(r) => out.records.push(r),
            None => {
                out.malformed += 1;
                warn!("{}:{}: skipping malformed record", origin.display(), lineno + 1);
            }
        }
    }
    if out.malformed * 2 > out.lines {
        return Err(Error::Format(format!(
            "{}: {} of {} lines are malformed",
            origin.display(),
            out.malformed,
            out.lines
        )));
    }
    Ok(out)
}

pub fn read_jsonl(path: &Path, fields: &FieldMap) -> Result<JsonlRead> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(BufReader::new(file), fields, path)
}
