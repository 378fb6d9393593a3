//! Retrieval accuracy, hit ratio, best-of-N selection and rule-based
//! sequence scorers.

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::clap::{cosine, ClapModel};
use crate::error::{Error, Result};
use crate::nn::seeded_rng;
use crate::scalar::Scalar;

/// Overlapping occurrences of `motif` in `sequence`.
pub fn motif_count(sequence: &str, motif: &str) -> usize {
    let (s, m) = (sequence.as_bytes(), motif.as_bytes());
    if m.is_empty() || m.len() > s.len() {
        return 0;
    }
    s.windows(m.len()).filter(|w| *w == m).count()
}

/// Fraction of residues that belong to `set`; `0` for an empty sequence.
pub fn composition_fraction(sequence: &str, set: &str) -> f64 {
    let n = sequence.chars().count();
    if n == 0 {
        return 0.0;
    }
    sequence.chars().filter(|c| set.contains(*c)).count() as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleScorer {
    MotifCount(String),
    Composition(String),
}

impl OracleScorer {
    pub fn score(&self, sequence: &str) -> f64 {
        match self {
            OracleScorer::MotifCount(m) => motif_count(sequence, m) as f64,
            OracleScorer::Composition(set) => composition_fraction(sequence, set),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Higher,
    Lower,
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "higher" => Ok(Direction::Higher),
            "lower" => Ok(Direction::Lower),
            other => Err(Error::invalid(format!("unknown direction '{other}'"))),
        }
    }
}

/// Fraction of pairs whose score moved strictly in `direction`.
pub fn hit_ratio<S: Scalar>(before: &[S], after: &[S], direction: Direction) -> Result<f64> {
    if before.len() != after.len() {
        return Err(Error::shape("hit_ratio", &[before.len()], &[after.len()]));
    }
    if before.is_empty() {
        return Err(Error::invalid("hit ratio of an empty list"));
    }
    let hits = before
        .iter()
        .zip(after)
        .filter(|(b, a)| match direction {
            Direction::Higher => a > b,
            Direction::Lower => a < b,
        })
        .count();
    Ok(hits as f64 / before.len() as f64)
}

/// Which side supplies the `T - 1` negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Candidates {
    /// Each generated protein is scored against its own prompt and `T - 1`
    /// other prompts.
    #[default]
    Prompts,
    /// Each prompt is scored against its own generated protein and the
    /// proteins generated for `T - 1` other prompts.
    Proteins,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalTask {
    pub t: usize,
    pub seed: u64,
    pub candidates: Candidates,
}

impl RetrievalTask {
    pub fn new(t: usize, seed: u64) -> Self {
        RetrievalTask {
            t,
            seed,
            candidates: Candidates::Prompts,
        }
    }
}

/// `text[i]` is the representation of prompt `i`, `protein[i]` that of the
/// sequence generated for it. A pair counts as a success only when the true
/// match has the strictly largest cosine similarity among the `T` options.
pub fn retrieval_accuracy<S: Scalar>(
    text: &[Vec<S>],
    protein: &[Vec<S>],
    task: &RetrievalTask,
) -> Result<f64> {
    if text.len() != protein.len() {
        return Err(Error::shape(
            "retrieval_accuracy",
            &[text.len()],
            &[protein.len()],
        ));
    }
    if task.t < 2 {
        return Err(Error::invalid("retrieval needs T >= 2"));
    }
    let n = text.len();
    if n < task.t {
        return Err(Error::invalid(format!(
            "{n} prompts cannot supply T = {} options",
            task.t
        )));
    }
    let mut rng = seeded_rng(task.seed);
    let mut hits = 0;
    for i in 0..n {
        let (anchor, pool) = match task.candidates {
            Candidates::Prompts => (&protein[i], text),
            Candidates::Proteins => (&text[i], protein),
        };
        let positive = cosine(anchor, &pool[i]);
        let negatives = sample_indices(&mut rng, n - 1, task.t - 1);
        let beaten = negatives.iter().all(|j| {
            let j = if j >= i { j + 1 } else { j };
            cosine(anchor, &pool[j]) < positive
        });
        if beaten {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Index of the largest score; ties go to the first occurrence.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectBy {
    /// Similarity between the candidate and a text prompt.
    #[default]
    Prompt,
    /// Similarity between the candidate and a reference protein.
    Protein,
}

/// Picks the candidate most similar to `target` and returns its index and
/// score.
pub fn best_of_n(
    candidates: &[String],
    target: &str,
    mode: SelectBy,
    clap: &ClapModel,
) -> Result<(usize, f64)> {
    if candidates.is_empty() {
        return Err(Error::invalid("best-of-N needs at least one candidate"));
    }
    let scores = match mode {
        SelectBy::Prompt => {
            let t = clap.embed_text(target)?;
            candidates
                .iter()
                .map(|c| Ok(cosine(&t, &clap.embed_protein(c)?)))
                .collect::<Result<Vec<_>>>()?
        }
        SelectBy::Protein => {
            let p = clap.embed_protein(target)?;
            candidates
                .iter()
                .map(|c| Ok(cosine(&p, &clap.embed_protein(c)?)))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let i = argmax_first(&scores).expect("non-empty");
    Ok((i, scores[i]))
}
