//! Column-format sequence files: whitespace-separated columns, one token
//! per line, blank line between sequences.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

use super::{Example, LabeledDataset, Provenance, Scheme, UNK};

/// Load a column file, building the token vocabulary (UNK at index 0) and
/// label vocabulary from the file itself. Ragged rows are rejected with
/// their line number.
pub fn load_conll(
    path: &Path,
    token_column: usize,
    label_column: usize,
    scheme: Scheme,
) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path)?;
    let mut token_vocab: BTreeMap<String, usize> = BTreeMap::new();
    token_vocab.insert("<unk>".into(), UNK);
    let mut label_vocab: Vec<String> = Vec::new();
    let mut label_index: BTreeMap<String, usize> = BTreeMap::new();

    let mut examples = Vec::new();
    let mut tokens: Vec<usize> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let min_columns = token_column.max(label_column) + 1;

    let mut raw_strings: Vec<Vec<String>> = Vec::new();
    let mut cur_strings: Vec<String> = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !tokens.is_empty() {
                examples.push(Example { tokens: std::mem::take(&mut tokens), labels: std::mem::take(&mut labels) });
                raw_strings.push(std::mem::take(&mut cur_strings));
            }
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < min_columns {
            return Err(Error::Data(format!(
                "{}:{}: row has {} columns, need at least {}",
                path.display(),
                lineno + 1,
                cols.len(),
                min_columns
            )));
        }
        let tok = cols[token_column].to_string();
        let lab = cols[label_column].to_string();
        let next_tok = token_vocab.len();
        let tid = *token_vocab.entry(tok.clone()).or_insert(next_tok);
        let lid = *label_index.entry(lab.clone()).or_insert_with(|| {
            label_vocab.push(lab.clone());
            label_vocab.len() - 1
        });
        tokens.push(tid);
        labels.push(lid);
        cur_strings.push(tok);
    }
    if !tokens.is_empty() {
        examples.push(Example { tokens, labels });
        raw_strings.push(cur_strings);
    }
    if examples.is_empty() {
        return Err(Error::Data(format!("{}: no sequences found", path.display())));
    }
    Ok(LabeledDataset {
        examples,
        token_vocab,
        label_vocab,
        scheme,
        provenance: Provenance::File { path: path.display().to_string() },
    })
}

/// Write a dataset back out in two-column format (token label).
pub fn write_conll(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let index_to_token: BTreeMap<usize, &str> =
        ds.token_vocab.iter().map(|(s, &i)| (i, s.as_str())).collect();
    let mut out = String::new();
    for ex in &ds.examples {
        for (t, l) in ex.tokens.iter().zip(&ex.labels) {
            let tok = index_to_token
                .get(t)
                .ok_or_else(|| Error::Data(format!("token id {t} has no string form")))?;
            out.push_str(tok);
            out.push(' ');
            out.push_str(&ds.label_vocab[*l]);
            out.push('\n');
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
