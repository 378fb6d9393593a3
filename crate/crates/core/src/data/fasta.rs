//! FASTA output (`>id description` header, sequence on one line) and a
//! matching reader.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FastaRecord {
    pub id: String,
    pub description: String,
    pub sequence: String,
}

pub fn format_fasta(records: &[FastaRecord]) -> String {
    let mut out = String::new();
    for r in records {
        if r.description.is_empty() {
            out.push_str(&format!(">{}\n{}\n", r.id, r.sequence));
        } else {
            out.push_str(&format!(">{} {}\n{}\n", r.id, r.description, r.sequence));
        }
    }
    out
}

pub fn write_fasta(path: impl AsRef<Path>, records: &[FastaRecord]) -> Result<()> {
    fs::write(path, format_fasta(records))?;
    Ok(())
}

/// Multi-line sequences are joined; blank lines and `;` comment lines are
/// skipped.
pub fn parse_fasta(content: &str, path: &str) -> Result<Vec<FastaRecord>> {
    let mut out: Vec<FastaRecord> = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with(';') {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            let (id, description) = header.split_once(' ').unwrap_or((header, ""));
            out.push(FastaRecord {
                id: id.to_string(),
                description: description.to_string(),
                sequence: String::new(),
            });
        } else {
            let rec = out.last_mut().ok_or_else(|| Error::Parse {
                path: path.into(),
                line: i + 1,
                msg: "sequence line before the first header".into(),
            })?;
            rec.sequence.push_str(line.trim());
        }
    }
    Ok(out)
}

pub fn read_fasta(path: impl AsRef<Path>) -> Result<Vec<FastaRecord>> {
    let path = path.as_ref();
    parse_fasta(&fs::read_to_string(path)?, &path.display().to_string())
}
