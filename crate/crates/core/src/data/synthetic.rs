//! Synthetic text-protein corpus with planted motifs.
//!
//! Each property owns a short motif made of residues that the background
//! distribution never emits, so motif counts identify properties exactly.
//! A record picks one or two properties, its text joins one template per
//! property, and its sequence carries every chosen motif at least once.

use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::pairs::PairRecord;
use crate::error::{Error, Result};
use crate::evaluation::motif_count;
use crate::nn::seeded_rng;
use crate::tokenizer::is_canonical;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Property {
    pub name: String,
    pub templates: Vec<String>,
    pub motif: String,
    /// Multiplies the base insertion rate; must exceed 1.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticRules {
    pub properties: Vec<Property>,
    /// Background residues, drawn uniformly.
    pub background: String,
    /// Per-position insertion probability before enrichment.
    pub base_rate: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub max_properties: usize,
}

fn property(name: &str, motif: &str, templates: &[&str]) -> Property {
    Property {
        name: name.into(),
        templates: templates.iter().map(|t| t.to_string()).collect(),
        motif: motif.into(),
        weight: 4.0,
    }
}

impl Default for SyntheticRules {
    fn default() -> Self {
        SyntheticRules {
            properties: vec![
                property(
                    "zipper",
                    "WW",
                    &[
                        "contains a tryptophan zipper",
                        "tryptophan zipper fold",
                        "stabilized by a tryptophan zipper",
                    ],
                ),
                property(
                    "disulfide",
                    "CC",
                    &[
                        "rich in disulfide bridges",
                        "forms disulfide bonds",
                        "disulfide stabilized core",
                    ],
                ),
                property(
                    "metal",
                    "HH",
                    &[
                        "binds metal ions",
                        "histidine metal binding site",
                        "coordinates metal through histidine",
                    ],
                ),
                property(
                    "methionine",
                    "MM",
                    &[
                        "methionine rich segment",
                        "contains methionine repeats",
                        "oxidation sensitive methionine patch",
                    ],
                ),
            ],
            background: "ADEFGIKLNPQRSTVY".into(),
            base_rate: 0.02,
            min_len: 20,
            max_len: 36,
            max_properties: 2,
        }
    }
}

impl SyntheticRules {
    pub fn from_json(text: &str) -> Result<Self> {
        let r: SyntheticRules = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.properties.is_empty() {
            return bad("at least one property is required".into());
        }
        if self.max_properties == 0 || self.max_properties > self.properties.len() {
            return bad(format!(
                "max_properties must be in 1..={}",
                self.properties.len()
            ));
        }
        for (i, p) in self.properties.iter().enumerate() {
            if p.motif.is_empty() || !p.motif.chars().all(is_canonical) {
                return bad(format!("motif '{}' must be canonical residues", p.motif));
            }
            if !(p.weight > 1.0) {
                return bad(format!("enrichment weight of '{}' must exceed 1", p.name));
            }
            if p.templates.is_empty() {
                return bad(format!("property '{}' has no text templates", p.name));
            }
            if self.properties[..i].iter().any(|q| q.motif == p.motif) {
                return bad(format!("motif '{}' appears twice", p.motif));
            }
        }
        if self.background.is_empty() || !self.background.chars().all(is_canonical) {
            return bad("background must be non-empty canonical residues".into());
        }
        if !(0.0..=1.0).contains(&self.base_rate) {
            return bad("base_rate must be a probability".into());
        }
        let longest = self
            .properties
            .iter()
            .map(|p| p.motif.len())
            .max()
            .unwrap_or(0);
        if self.min_len > self.max_len || self.min_len < self.max_properties * longest {
            return bad(format!(
                "length range {}..={} cannot hold {} motifs of length {longest}",
                self.min_len, self.max_len, self.max_properties
            ));
        }
        Ok(())
    }

    /// Insertion probability per position for property `k`.
    pub fn insertion_rate(&self, k: usize) -> f64 {
        (self.properties[k].weight * self.base_rate).min(1.0)
    }

    /// Property index whose templates contain `text`, if any.
    pub fn property_of_template(&self, text: &str) -> Option<usize> {
        self.properties
            .iter()
            .position(|p| p.templates.iter().any(|t| t == text))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRecord {
    pub record: PairRecord,
    /// Indices into the rule set's properties.
    pub labels: Vec<usize>,
}

fn place(seq: &mut [char], used: &mut [bool], start: usize, motif: &[char]) {
    for (j, &c) in motif.iter().enumerate() {
        seq[start + j] = c;
        used[start + j] = true;
    }
}

fn free(used: &[bool], start: usize, len: usize) -> bool {
    start + len <= used.len() && !used[start..start + len].iter().any(|&u| u)
}

pub fn generate_synthetic(
    rules: &SyntheticRules,
    n: usize,
    seed: u64,
) -> Result<Vec<SyntheticRecord>> {
    rules.validate()?;
    if n == 0 {
        return Err(Error::invalid("number of records must be at least 1"));
    }
    let mut rng = seeded_rng(seed);
    let background: Vec<char> = rules.background.chars().collect();
    let motifs: Vec<Vec<char>> = rules
        .properties
        .iter()
        .map(|p| p.motif.chars().collect())
        .collect();
    let all: Vec<usize> = (0..rules.properties.len()).collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let count = rng.random_range(1..=rules.max_properties);
        let mut labels: Vec<usize> = all.choose_multiple(&mut rng, count).copied().collect();
        let len = rng.random_range(rules.min_len..=rules.max_len);
        let mut seq: Vec<char> = (0..len)
            .map(|_| *background.choose(&mut rng).expect("non-empty"))
            .collect();
        let mut used = vec![false; len];
        let mut placed = vec![false; rules.properties.len()];
        for pos in 0..len {
            let mut order = labels.clone();
            order.shuffle(&mut rng);
            for k in order {
                if rng.random::<f64>() < rules.insertion_rate(k)
                    && free(&used, pos, motifs[k].len())
                {
                    place(&mut seq, &mut used, pos, &motifs[k]);
                    placed[k] = true;
                    break;
                }
            }
        }
        for &k in &labels {
            if placed[k] {
                continue;
            }
            let windows: Vec<usize> = (0..len)
                .filter(|&s| free(&used, s, motifs[k].len()))
                .collect();
            let start = *windows.choose(&mut rng).ok_or_else(|| {
                Error::invalid(format!(
                    "no room left for motif '{}'",
                    rules.properties[k].motif
                ))
            })?;
            place(&mut seq, &mut used, start, &motifs[k]);
        }
        let text = labels
            .iter()
            .map(|&k| {
                rules.properties[k]
                    .templates
                    .choose(&mut rng)
                    .expect("non-empty")
                    .as_str()
            })
            .collect::<Vec<_>>()
            .join(" ");
        labels.sort_unstable();
        out.push(SyntheticRecord {
            record: PairRecord::new(
                format!("syn{i:05}"),
                text,
                seq.into_iter().collect::<String>(),
            ),
            labels,
        });
    }
    Ok(out)
}

/// Motif counts of `sequence` for every property.
pub fn motif_profile(rules: &SyntheticRules, sequence: &str) -> Vec<usize> {
    rules
        .properties
        .iter()
        .map(|p| motif_count(sequence, &p.motif))
        .collect()
}

/// `id<TAB>name,name` lines; readers skip `#` comment lines.
pub fn format_labels(rules: &SyntheticRules, records: &[SyntheticRecord]) -> String {
    records
        .iter()
        .map(|r| {
            let names: Vec<&str> = r
                .labels
                .iter()
                .map(|&k| rules.properties[k].name.as_str())
                .collect();
            format!("{}\t{}\n", r.record.id, names.join(","))
        })
        .collect()
}

pub fn parse_labels(rules: &SyntheticRules, content: &str) -> Result<Vec<(String, Vec<usize>)>> {
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            let err = |msg: String| Error::Parse {
                path: "labels".into(),
                line: i + 1,
                msg,
            };
            let (id, names) = l
                .split_once('\t')
                .ok_or_else(|| err("missing tab".into()))?;
            let labels = names
                .split(',')
                .filter(|n| !n.is_empty())
                .map(|n| {
                    rules
                        .properties
                        .iter()
                        .position(|p| p.name == n)
                        .ok_or_else(|| err(format!("unknown property '{n}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((id.to_string(), labels))
        })
        .collect()
}

pub fn write_labels(
    path: impl AsRef<Path>,
    rules: &SyntheticRules,
    records: &[SyntheticRecord],
) -> Result<()> {
    fs::write(path, format_labels(rules, records))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_under_seed() {
        let r = SyntheticRules::default();
        assert_eq!(
            generate_synthetic(&r, 50, 3).unwrap(),
            generate_synthetic(&r, 50, 3).unwrap()
        );
        assert_ne!(
            generate_synthetic(&r, 50, 3).unwrap(),
            generate_synthetic(&r, 50, 4).unwrap()
        );
    }

    #[test]
    fn labels_match_motifs_exactly() {
        let r = SyntheticRules::default();
        for rec in generate_synthetic(&r, 500, 1).unwrap() {
            let profile = motif_profile(&r, &rec.record.sequence);
            for (k, &c) in profile.iter().enumerate() {
                assert_eq!(c > 0, rec.labels.contains(&k), "{rec:?}");
            }
            let len = rec.record.sequence.len();
            assert!((r.min_len..=r.max_len).contains(&len));
        }
    }

    #[test]
    fn saturated_rate_fills_every_window() {
        let mut r = SyntheticRules {
            max_properties: 1,
            ..Default::default()
        };
        for p in &mut r.properties {
            p.weight = 1e9;
        }
        for rec in generate_synthetic(&r, 20, 2).unwrap() {
            let motif = &r.properties[rec.labels[0]].motif;
            let seq = &rec.record.sequence;
            let whole = seq.len() / motif.len() * motif.len();
            assert_eq!(&seq[..whole], motif.repeat(seq.len() / motif.len()));
        }
    }

    #[test]
    fn rejects_bad_rules() {
        let r = SyntheticRules {
            min_len: 3,
            ..Default::default()
        };
        assert!(generate_synthetic(&r, 1, 0).is_err());
        let mut r = SyntheticRules::default();
        r.properties[1].motif = "WW".into();
        assert!(r.validate().is_err());
        let mut r = SyntheticRules::default();
        r.properties[0].weight = 1.0;
        assert!(r.validate().is_err());
        assert!(generate_synthetic(&SyntheticRules::default(), 0, 0).is_err());
    }

    #[test]
    fn labels_round_trip() {
        let r = SyntheticRules::default();
        let recs = generate_synthetic(&r, 10, 5).unwrap();
        let parsed = parse_labels(&r, &format_labels(&r, &recs)).unwrap();
        for (rec, (id, labels)) in recs.iter().zip(parsed) {
            assert_eq!(rec.record.id, id);
            assert_eq!(rec.labels, labels);
        }
    }

    #[test]
    fn rules_json_round_trip() {
        let r = SyntheticRules::default();
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(SyntheticRules::from_json(&text).unwrap(), r);
    }
}
