//! Token vocabulary with fixed special-token ids.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
pub const MASK: usize = 3;
pub const STOP: usize = 4;
pub const NUM_SPECIAL: usize = 5;

pub const SPECIAL_TOKENS: [&str; NUM_SPECIAL] = ["[PAD]", "[CLS]", "[SEP]", "[MASK]", "[STOP]"];

#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Build a vocabulary from the non-special tokens; the five special
    /// tokens always occupy ids 0..5 in a fixed order.
    pub fn new<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        for w in words {
            tokens.push(w.as_ref().to_string());
        }
        let mut ids = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Vocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // always holds the special tokens
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        self.ids
            .get(token)
            .copied()
            .ok_or_else(|| Error::Vocab(format!("unknown token {token:?}")))
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Vocab(format!("id {id} out of range (V={})", self.len())))
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < NUM_SPECIAL
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter().map(|&i| self.token(i).map(String::from)).collect()
    }

    /// Newline-delimited tokens; line number = id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        for t in &self.tokens {
            writeln!(f, "{t}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let mut tokens = Vec::new();
        for line in BufReader::new(f).lines() {
            tokens.push(line?);
        }
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Format(format!(
                    "vocabulary file must start with the special tokens, line {i} is {:?}",
                    tokens.get(i)
                )));
            }
        }
        Vocabulary::new(&tokens[NUM_SPECIAL..])
    }
}
