//! Word-level vocabulary: lowercase, split on whitespace, keep punctuation
//! as single-character tokens.
//!
//! Ids 0..=3 are reserved for the specials PAD, UNK, MASK, and SUM. Their
//! surface forms use the angle brackets U+27E8/U+27E9, which the splitter
//! always breaks apart, so raw corpus text can never encode to a special id.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const MASK_ID: usize = 2;
pub const SUM_ID: usize = 3;
pub const NUM_SPECIALS: usize = 4;

pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["\u{27E8}PAD\u{27E9}", "\u{27E8}UNK\u{27E9}", "\u{27E8}MASK\u{27E9}", "\u{27E8}SUM\u{27E9}"];

/// Immutable token <-> id mapping. Safe to share across threads once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

/// Lowercase and split: alphanumeric runs become word tokens, every other
/// non-whitespace character becomes its own single-character token.
pub fn split_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                word.push(lc);
            }
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Canonical form of a text: its tokens joined by single spaces.
pub fn normalize(text: &str) -> String {
    split_tokens(text).join(" ")
}

/// Count token frequencies over a corpus and keep those with frequency at
/// least `min_freq`. Ids are assigned after the specials, by descending
/// frequency with lexicographic order breaking ties.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], min_freq: usize) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut freq: HashMap<String, usize> = HashMap::new();
    for line in corpus {
        for tok in split_tokens(line.as_ref()) {
            *freq.entry(tok).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = freq
        .into_iter()
        .filter(|(_, count)| *count >= min_freq)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut id_to_token: Vec<String> =
        SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    id_to_token.extend(kept.into_iter().map(|(tok, _)| tok));
    Ok(Vocab::from_tokens(id_to_token))
}

impl Vocab {
    fn from_tokens(id_to_token: Vec<String>) -> Self {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(id, tok)| (tok.clone(), id))
            .collect();
        Vocab {
            token_to_id,
            id_to_token,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // specials are always present
    }

    /// Id for a single already-normalized token; UNK when absent.
    pub fn lookup(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.id_to_token
            .get(id)
            .map(String::as_str)
            .ok_or(Error::TokenIdOutOfRange {
                id,
                vocab_size: self.len(),
            })
    }

    /// Tokenize raw text and map each token to its id (UNK for unknown).
    ///
    /// Specials can never be produced here: their surface forms contain
    /// bracket characters that the splitter isolates.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        split_tokens(text)
            .iter()
            .map(|tok| self.lookup(tok))
            .collect()
    }

    /// Inverse of `encode` up to normalization; rejects out-of-range ids.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut parts = Vec::with_capacity(ids.len());
        for &id in ids {
            parts.push(self.token(id)?);
        }
        Ok(parts.join(" "))
    }

    /// Serialize as one token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for tok in &self.id_to_token {
            let _ = writeln!(text, "{tok}");
        }
        std::fs::write(path, text)
            .map_err(|e| Error::io(format!("writing vocab to {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading vocab from {}", path.display()), e))?;
        let tokens: Vec<String> = text.lines().map(|l| l.to_string()).collect();
        if tokens.len() < NUM_SPECIALS {
            return Err(Error::InvalidConfig(format!(
                "vocab file {} has fewer than {} lines",
                path.display(),
                NUM_SPECIALS
            )));
        }
        for (i, expected) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens[i] != *expected {
                return Err(Error::InvalidConfig(format!(
                    "vocab file {}: line {} must be the special `{}`",
                    path.display(),
                    i,
                    expected
                )));
            }
        }
        Ok(Vocab::from_tokens(tokens))
    }

    pub(crate) fn from_token_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_SPECIALS {
            return Err(Error::CorruptCheckpoint(
                "vocabulary shorter than the special prefix".into(),
            ));
        }
        Ok(Vocab::from_tokens(tokens))
    }

    pub(crate) fn token_list(&self) -> &[String] {
        &self.id_to_token
    }
}
