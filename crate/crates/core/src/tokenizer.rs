//! Token vocabularies for protein sequences and text prompts.
//!
//! The protein table is fixed at 30 entries: four special tokens followed by
//! the letters A-Z. Letters outside the 20 canonical amino acids collapse to
//! `X`. The text side is a word-level vocabulary built from a corpus.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
/// Absorbing state of the diffusion decoder.
pub const MASK: usize = 3;
pub const UNK: usize = 3;

pub const PROTEIN_VOCAB_SIZE: usize = 30;
pub const FIRST_LETTER: usize = 4;

pub const CANONICAL: &str = "ACDEFGHIKLMNPQRSTVWY";

const PROTEIN_SPECIALS: [&str; 4] = ["[PAD]", "[CLS]", "[SEP]", "[MASK]"];
const TEXT_SPECIALS: [&str; 4] = ["[PAD]", "[CLS]", "[SEP]", "[UNK]"];

pub fn letter_id(c: char) -> usize {
    FIRST_LETTER + (c as u8 - b'A') as usize
}

pub fn id_letter(id: usize) -> Option<char> {
    (FIRST_LETTER..PROTEIN_VOCAB_SIZE)
        .contains(&id)
        .then(|| (b'A' + (id - FIRST_LETTER) as u8) as char)
}

pub fn is_canonical(c: char) -> bool {
    CANONICAL.contains(c)
}

/// Ids of the canonical residues plus `X`, the only letters the encoder
/// emits.
pub fn residue_ids() -> Vec<usize> {
    let mut ids: Vec<usize> = CANONICAL.chars().map(letter_id).collect();
    ids.push(letter_id('X'));
    ids.sort_unstable();
    ids
}

pub fn protein_symbol(id: usize) -> Option<String> {
    match id {
        0..=3 => Some(PROTEIN_SPECIALS[id].to_string()),
        _ => id_letter(id).map(String::from),
    }
}

/// Integer token ids with padding bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Self {
        TokenSequence { ids }
    }

    /// Number of non-pad tokens.
    pub fn len(&self) -> usize {
        self.ids.iter().filter(|&&i| i != PAD).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mask(&self) -> Vec<bool> {
        self.ids.iter().map(|&i| i != PAD).collect()
    }

    /// The ids with trailing padding removed.
    pub fn unpadded(&self) -> &[usize] {
        let end = self
            .ids
            .iter()
            .rposition(|&i| i != PAD)
            .map_or(0, |p| p + 1);
        &self.ids[..end]
    }
}

fn pad_to(mut ids: Vec<usize>, max_len: Option<usize>) -> Vec<usize> {
    if let Some(n) = max_len {
        ids.resize(n, PAD);
    }
    ids
}

/// Maps a residue string to ids. Non-canonical letters become `X`; anything
/// other than an ASCII letter is rejected. With `max_len`, the result is
/// truncated (keeping room for specials) and padded to exactly that length.
pub fn encode_protein(
    sequence: &str,
    max_len: Option<usize>,
    add_specials: bool,
) -> Result<TokenSequence> {
    let (positions, chars): (Vec<usize>, Vec<char>) = sequence
        .chars()
        .enumerate()
        .filter(|(_, c)| !c.is_ascii_alphabetic())
        .unzip();
    if !positions.is_empty() {
        return Err(Error::InvalidResidues { positions, chars });
    }
    let x = letter_id('X');
    let mut body: Vec<usize> = sequence
        .chars()
        .map(|c| c.to_ascii_uppercase())
        .map(|c| if is_canonical(c) { letter_id(c) } else { x })
        .collect();
    let reserved = if add_specials { 2 } else { 0 };
    if let Some(n) = max_len {
        if n < reserved {
            return Err(Error::invalid(format!(
                "max_len {n} leaves no room for special tokens"
            )));
        }
        body.truncate(n - reserved);
    }
    let ids = if add_specials {
        let mut ids = Vec::with_capacity(body.len() + 2);
        ids.push(CLS);
        ids.extend(body);
        ids.push(SEP);
        ids
    } else {
        body
    };
    Ok(TokenSequence::new(pad_to(ids, max_len)))
}

/// Inverse of [`encode_protein`]: specials are dropped and `[MASK]` renders
/// as `?`.
pub fn decode_protein(tokens: &[usize]) -> Result<String> {
    let mut out = String::with_capacity(tokens.len());
    for &id in tokens {
        match id {
            PAD | CLS | SEP => {}
            MASK => out.push('?'),
            _ => out.push(id_letter(id).ok_or(Error::TokenOutOfRange {
                id,
                size: PROTEIN_VOCAB_SIZE,
            })?),
        }
    }
    Ok(out)
}

/// Upper-cases and collapses non-canonical letters to `X`.
pub fn canonicalize(sequence: &str) -> String {
    sequence
        .chars()
        .map(|c| c.to_ascii_uppercase())
        .map(|c| if is_canonical(c) { c } else { 'X' })
        .collect()
}

/// Lower-cased words split on whitespace and punctuation.
pub fn split_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Word-level text vocabulary. Ids 0-3 are `[PAD] [CLS] [SEP] [UNK]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextVocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TextVocabulary {
    /// Builds from a corpus, keeping at most `max_size` entries (specials
    /// included). Words are ordered by frequency, then lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::invalid(
                "cannot build a vocabulary from an empty corpus",
            ));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for doc in corpus {
            for w in split_words(doc.as_ref()) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let keep = max_size.saturating_sub(TEXT_SPECIALS.len());
        let tokens = TEXT_SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().take(keep).map(|(w, _)| w))
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        TextVocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// `[CLS] words... [SEP]`, truncated and padded to `max_len` when given.
    pub fn encode(&self, text: &str, max_len: Option<usize>) -> TokenSequence {
        let mut ids = vec![CLS];
        ids.extend(split_words(text).map(|w| self.id(&w)));
        if let Some(n) = max_len {
            ids.truncate(n.max(2) - 1);
        }
        ids.push(SEP);
        TokenSequence::new(pad_to(ids, max_len))
    }

    /// `token<TAB>id` lines.
    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            s.push_str(t);
            s.push('\t');
            s.push_str(&i.to_string());
            s.push('\n');
        }
        s
    }

    pub fn from_lines(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::Config(format!("vocabulary line {}: missing tab", n + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::Config(format!("vocabulary line {}: bad id {id:?}", n + 1)))?;
            if id != tokens.len() {
                return Err(Error::Config(format!(
                    "vocabulary line {}: id {id} out of order",
                    n + 1
                )));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < TEXT_SPECIALS.len() || tokens[..4] != TEXT_SPECIALS {
            return Err(Error::Config(
                "vocabulary does not start with the special tokens".into(),
            ));
        }
        Ok(Self::from_tokens(tokens))
    }
}

/// Encodes a text into an existing vocabulary.
pub fn encode_text(text: &str, vocab: &TextVocabulary, max_len: Option<usize>) -> TokenSequence {
    vocab.encode(text, max_len)
}
