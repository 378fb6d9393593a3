//! Tab-separated `id<TAB>text<TAB>sequence` records, one per line.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tokenizer::encode_protein;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRecord {
    pub id: String,
    pub text: String,
    pub sequence: String,
}

impl PairRecord {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        sequence: impl Into<String>,
    ) -> Self {
        PairRecord {
            id: id.into(),
            text: text.into(),
            sequence: sequence.into(),
        }
    }
}

fn clean_field(field: &str) -> bool {
    !field.contains(['\t', '\n', '\r'])
}

pub fn parse_pairs(content: &str, path: &str) -> Result<Vec<PairRecord>> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parse_err = |msg: String| Error::Parse {
            path: path.into(),
            line: line_no,
            msg,
        };
        if fields.len() != 3 {
            return Err(parse_err(format!(
                "expected 3 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let sequence = fields[2].trim();
        if sequence.is_empty() {
            return Err(parse_err("empty sequence".into()));
        }
        encode_protein(sequence, None, false).map_err(|e| parse_err(e.to_string()))?;
        out.push(PairRecord::new(
            fields[0],
            fields[1],
            sequence.to_ascii_uppercase(),
        ));
    }
    Ok(out)
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<PairRecord>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path)?;
    parse_pairs(&content, &path.display().to_string())
}

pub fn format_pairs(records: &[PairRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        if ![&r.id, &r.text, &r.sequence].iter().all(|f| clean_field(f)) {
            return Err(Error::invalid(format!(
                "record '{}' holds a tab or newline",
                r.id
            )));
        }
        if r.sequence.is_empty() {
            return Err(Error::invalid(format!(
                "record '{}' has an empty sequence",
                r.id
            )));
        }
        out.push_str(&format!("{}\t{}\t{}\n", r.id, r.text, r.sequence));
    }
    Ok(out)
}

pub fn write_pairs(path: impl AsRef<Path>, records: &[PairRecord]) -> Result<()> {
    fs::write(path, format_pairs(records)?)?;
    Ok(())
}
