use std::collections::HashMap;
use std::fs;
use std::ops::Deref;
use std::path::Path;

use crate::error::{invalid, Error, Result};

pub const BLANK: usize = 0;
pub const UNK: usize = 1;
pub const PAD: usize = 2;
pub const BOS: usize = 3;
pub const EOS: usize = 4;

pub const RESERVED_TOKENS: [&str; 5] = ["<blank>", "<unk>", "<pad>", "<bos>", "<eos>"];

/// Ordered gloss ids; a CTC target or a decoded sentence.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GlossSequence(pub Vec<usize>);

impl GlossSequence {
    pub fn new(ids: Vec<usize>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    /// Number of adjacent equal pairs; each one forces a blank between them.
    pub fn adjacent_repeats(&self) -> usize {
        self.0.windows(2).filter(|w| w[0] == w[1]).count()
    }
}

impl Deref for GlossSequence {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for GlossSequence {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

/// Token ↔ id bijection. Ids `0..5` are the reserved tokens; corpus tokens
/// follow in first-occurrence order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn with_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for tok in RESERVED_TOKENS.into_iter().chain(tokens) {
            if !v.index.contains_key(tok) {
                v.index.insert(tok.to_string(), v.tokens.len());
                v.tokens.push(tok.to_string());
            }
        }
        v
    }

    /// Builds a vocabulary from whitespace-tokenized gloss texts.
    pub fn build<S: AsRef<str>>(corpus: &[S]) -> Result<Self> {
        if corpus.is_empty() {
            return invalid("cannot build a vocabulary from an empty corpus");
        }
        Ok(Self::with_tokens(corpus.iter().flat_map(|s| s.as_ref().split_whitespace())))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Non-reserved ids.
    pub fn gloss_ids(&self) -> std::ops::Range<usize> {
        RESERVED_TOKENS.len()..self.tokens.len()
    }

    pub fn encode(&self, text: &str) -> GlossSequence {
        GlossSequence(text.split_whitespace().map(|t| self.id(t)).collect())
    }

    pub fn decode(&self, seq: &[usize]) -> String {
        seq.iter()
            .map(|&i| self.token(i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Checks that a target contains only in-range, non-blank ids.
    pub fn validate(&self, seq: &[usize]) -> Result<()> {
        match seq.iter().find(|&&i| i == BLANK || i >= self.len()) {
            Some(bad) => invalid(format!("gloss id {bad} is blank or outside the vocabulary of {}", self.len())),
            None => Ok(()),
        }
    }

    /// One non-reserved token per line; line `i` holds id `5 + i`.
    pub fn to_text(&self) -> String {
        self.tokens[RESERVED_TOKENS.len()..].iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut v = Self::with_tokens([]);
        for (i, line) in text.lines().enumerate() {
            let tok = line.trim_end_matches('\r');
            if tok.is_empty() || tok.contains(char::is_whitespace) || v.index.contains_key(tok) {
                return Err(Error::Format(format!("vocabulary line {}: invalid or duplicate token {tok:?}", i + 1)));
            }
            v.index.insert(tok.to_string(), v.tokens.len());
            v.tokens.push(tok.to_string());
        }
        Ok(v)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_occurrence_order() {
        let v = Vocabulary::build(&["A B", "B C"]).unwrap();
        assert_eq!(v.len(), 8);
        assert_eq!((v.id("A"), v.id("B"), v.id("C")), (5, 6, 7));
        assert_eq!(v.token(BLANK), Some("<blank>"));
        assert_eq!(v, Vocabulary::build(&["A B", "B C"]).unwrap());
    }

    #[test]
    fn unknown_tokens_and_empty_corpus() {
        let v = Vocabulary::build(&["A B"]).unwrap();
        assert_eq!(v.encode("A Z B").ids(), &[5, UNK, 6]);
        assert!(Vocabulary::build::<&str>(&[]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let v = Vocabulary::build(&["x y z", "w x"]).unwrap();
        let text = v.to_text();
        assert_eq!(text, "x\ny\nz\nw\n");
        let back = Vocabulary::from_text(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_text(), text);
        assert!(Vocabulary::from_text("a\na\n").is_err());
    }

    #[test]
    fn validate_rejects_blank() {
        let v = Vocabulary::build(&["A B"]).unwrap();
        assert!(v.validate(&[5, 6]).is_ok());
        assert!(v.validate(&[5, BLANK]).is_err());
        assert!(v.validate(&[7]).is_err());
    }

    #[test]
    fn repeats() {
        assert_eq!(GlossSequence::new(vec![5, 5, 6, 6, 6]).adjacent_repeats(), 3);
    }
}
