//! Initializing the embedding table from a word-vector text file.
//!
//! Each line is a word followed by its vector components separated by
//! whitespace. A leading `<count> <dim>` line, as written by word2vec, is
//! skipped.

use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::text::Vocabulary;

/// Overwrites embedding rows of vocabulary words found in the reader.
/// Returns how many rows were replaced.
pub fn apply_pretrained<R: BufRead>(model: &mut Model, vocab: &Vocabulary, reader: R, origin: &Path) -> Result<usize> {
    let dim = model.hp.embed_dim;
    let id = model.params.embedding;
    let mut replaced = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        if lineno == 0 && values.len() == 1 && word.parse::<usize>().is_ok() {
            continue;
        }
        let Some(row) = vocab.id(word) else { continue };
        if values.len() != dim {
            return Err(Error::Dimension {
                op: "apply_pretrained",
                lhs: vec![dim],
                rhs: vec![values.len()],
            });
        }
        let parsed: Vec<f64> = values
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("{}:{}: {e}", origin.display(), lineno + 1)))?;
        model.store.get_mut(id).data_mut()[row * dim..(row + 1) * dim].copy_from_slice(&parsed);
        replaced += 1;
    }
    Ok(replaced)
}

pub fn load_pretrained(model: &mut Model, vocab: &Vocabulary, path: &Path) -> Result<usize> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    apply_pretrained(model, vocab, BufReader::new(file), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Ablations;
    use crate::text::WordCounts;
    use crate::HyperParams;

    fn setup() -> (Model, Vocabulary) {
        let mut c = WordCounts::new();
        c.add_tokens(&["good".to_string(), "bad".to_string()]);
        let vocab = Vocabulary::build(&c, 10).unwrap();
        let hp = HyperParams::default().with_dims(3, 4);
        (Model::new(hp, Ablations::none(), vocab.len(), 0).unwrap(), vocab)
    }

    #[test]
    fn rows_are_replaced() {
        let (mut m, v) = setup();
        let text = "2 3\ngood 1 2 3\nunseen 0 0 0\n";
        let n = apply_pretrained(&mut m, &v, text.as_bytes(), Path::new("mem")).unwrap();
        assert_eq!(n, 1);
        let row = v.id("good").unwrap();
        let e = m.store.get(m.params.embedding).data();
        assert_eq!(&e[row * 3..row * 3 + 3], &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn wrong_width_is_a_dimension_error() {
        let (mut m, v) = setup();
        let e = apply_pretrained(&mut m, &v, "bad 1 2\n".as_bytes(), Path::new("mem"));
        assert!(matches!(e, Err(Error::Dimension { .. })));
    }
}
