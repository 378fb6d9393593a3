//! Per-sequence score tables: `id<TAB>score` lines under an optional
//! `id<TAB>score` header, with `#` comment lines allowed anywhere.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub fn format_scores(rows: &[(String, f64)]) -> String {
    let mut out = String::from("id\tscore\n");
    for (id, v) in rows {
        out.push_str(&format!("{id}\t{v}\n"));
    }
    out
}

pub fn parse_scores(content: &str, path: &str) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') || line == "id\tscore" {
            continue;
        }
        let err = |msg: &str| Error::Parse {
            path: path.into(),
            line: i + 1,
            msg: msg.into(),
        };
        let (id, v) = line
            .split_once('\t')
            .ok_or_else(|| err("expected id<TAB>score"))?;
        let v: f64 = v.trim().parse().map_err(|_| err("score is not a number"))?;
        out.push((id.to_string(), v));
    }
    Ok(out)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<(String, f64)>> {
    let path = path.as_ref();
    parse_scores(&fs::read_to_string(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_comments() {
        let rows = vec![("a".to_string(), 1.0), ("b".to_string(), 0.25)];
        let text = format!("# seed=3\n{}", format_scores(&rows));
        assert_eq!(parse_scores(&text, "s").unwrap(), rows);
        assert!(parse_scores("a\tx\n", "s").is_err());
        assert!(parse_scores("a 1\n", "s").is_err());
    }
}
