//! Evaluation reports: `metric<TAB>setting<TAB>value` rows under a
//! provenance header, a JSON summary and an aligned plain-text table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, ARTIFACT_VERSION};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

impl Provenance {
    pub fn of(config: &RunConfig) -> Self {
        Provenance {
            config_hash: config.hash(),
            seed: config.seed,
            version: ARTIFACT_VERSION.to_string(),
        }
    }

    /// `#`-prefixed lines for text outputs.
    pub fn header_lines(&self, comment: char) -> String {
        format!(
            "{comment} config_hash={}\n{comment} seed={}\n{comment} version={}\n",
            self.config_hash, self.seed, self.version
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub metric: String,
    pub setting: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub provenance: Provenance,
    pub rows: Vec<Row>,
}

/// Values are printed with a fixed precision so reruns compare byte for byte.
fn fmt_value(v: f64) -> String {
    format!("{v:.6}")
}

impl Report {
    pub fn new(provenance: Provenance) -> Self {
        Report {
            provenance,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, metric: impl Into<String>, setting: impl Into<String>, value: f64) {
        self.rows.push(Row {
            metric: metric.into(),
            setting: setting.into(),
            value,
        });
    }

    pub fn get(&self, metric: &str, setting: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.setting == setting)
            .map(|r| r.value)
    }

    pub fn to_tsv(&self) -> Result<String> {
        let mut out = self.provenance.header_lines('#');
        out.push_str("metric\tsetting\tvalue\n");
        for r in &self.rows {
            if [&r.metric, &r.setting]
                .iter()
                .any(|f| f.contains(['\t', '\n']))
            {
                return Err(Error::invalid(format!(
                    "report field contains a tab or newline: {:?}",
                    r.metric
                )));
            }
            let _ = writeln!(out, "{}\t{}\t{}", r.metric, r.setting, fmt_value(r.value));
        }
        Ok(out)
    }

    pub fn from_tsv(content: &str) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::Parse {
            path: "report".into(),
            line,
            msg: msg.into(),
        };
        let mut prov = Provenance {
            config_hash: String::new(),
            seed: 0,
            version: String::new(),
        };
        let mut rows = Vec::new();
        let mut seen_header = false;
        for (i, line) in content.lines().enumerate() {
            if let Some(meta) = line.strip_prefix('#') {
                match meta.trim().split_once('=') {
                    Some(("config_hash", v)) => prov.config_hash = v.into(),
                    Some(("seed", v)) => {
                        prov.seed = v.parse().map_err(|_| err(i + 1, "bad seed"))?
                    }
                    Some(("version", v)) => prov.version = v.into(),
                    _ => {}
                }
                continue;
            }
            if !seen_header {
                if line != "metric\tsetting\tvalue" {
                    return Err(err(i + 1, "missing column header"));
                }
                seen_header = true;
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(err(i + 1, "expected 3 tab-separated fields"));
            }
            let value = f[2]
                .parse()
                .map_err(|_| err(i + 1, "value is not a number"))?;
            rows.push(Row {
                metric: f[0].into(),
                setting: f[1].into(),
                value,
            });
        }
        Ok(Report {
            provenance: prov,
            rows,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_text(&self) -> String {
        let w_metric = self
            .rows
            .iter()
            .map(|r| r.metric.len())
            .chain([6])
            .max()
            .unwrap_or(6);
        let w_setting = self
            .rows
            .iter()
            .map(|r| r.setting.len())
            .chain([7])
            .max()
            .unwrap_or(7);
        let mut out = self.provenance.header_lines('#');
        let _ = writeln!(
            out,
            "{:<w_metric$}  {:<w_setting$}  {:>10}",
            "metric", "setting", "value"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<w_metric$}  {:<w_setting$}  {:>10}",
                r.metric,
                r.setting,
                fmt_value(r.value)
            );
        }
        out
    }

    /// Writes `path` as TSV plus `.json` and `.txt` siblings.
    pub fn write_all(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()?)?;
        fs::write(path.with_extension("json"), self.to_json())?;
        fs::write(path.with_extension("txt"), self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_round_trip() {
        let mut r = Report::new(Provenance::of(&RunConfig::default()));
        r.push("retrieval_accuracy", "ar/facilitator/T=4", 0.75);
        r.push("hit_ratio", "lambda=0.9", 0.5);
        let back = Report::from_tsv(&r.to_tsv().unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_text().contains("ar/facilitator/T=4"));
        assert_eq!(back.get("hit_ratio", "lambda=0.9"), Some(0.5));
    }

    #[test]
    fn tabs_in_fields_are_rejected() {
        let mut r = Report::new(Provenance::of(&RunConfig::default()));
        r.push("a\tb", "x", 1.0);
        assert!(r.to_tsv().is_err());
    }
}
