// SPDX-License-Identifier: MIT OR Apache-2.0

//! Closed word-level tokenizer.
//!
//! Every whitespace-separated word is one token. The English possessive
//! suffix `'s` is split off into its own token, so the last token of a
//! subject written as `John Smith's` is always `Smith`.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const POSSESSIVE: &str = "'s";

/// Token id type.
pub type TokenId = u32;

/// Ids of the special tokens; they always occupy the first four slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specials {
    pub pad: TokenId,
    pub bos: TokenId,
    pub eos: TokenId,
    pub unk: TokenId,
}

/// Token index range covered by one whitespace-separated input word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSpan {
    pub word: String,
    pub tokens: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<TokenId>,
    pub spans: Vec<WordSpan>,
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vec<String>,
    token_to_id: HashMap<String, TokenId>,
    specials: Specials,
}

impl PartialEq for Tokenizer {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab
    }
}

impl Tokenizer {
    /// Builds a tokenizer whose vocabulary is the specials followed by the
    /// sorted, de-duplicated words (the possessive token is always present).
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set: BTreeSet<String> = BTreeSet::new();
        set.insert(POSSESSIVE.to_string());
        for w in words {
            for piece in split_word(w.as_ref()) {
                set.insert(piece.to_string());
            }
        }
        let mut vocab = vec![PAD.to_string(), BOS.to_string(), EOS.to_string(), UNK.to_string()];
        vocab.extend(set.into_iter().filter(|w| !is_special(w)));
        Self::from_vocab(vocab).expect("specials are placed first")
    }

    /// Rebuilds a tokenizer from a stored vocabulary list.
    pub fn from_vocab(vocab: Vec<String>) -> Result<Self> {
        if vocab.len() < 4 || vocab[..4] != [PAD, BOS, EOS, UNK] {
            return Err(Error::Config("vocabulary must start with <pad> <bos> <eos> <unk>".into()));
        }
        let mut token_to_id = HashMap::with_capacity(vocab.len());
        for (i, w) in vocab.iter().enumerate() {
            if token_to_id.insert(w.clone(), i as TokenId).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry {w:?}")));
            }
        }
        Ok(Self { vocab, token_to_id, specials: Specials { pad: 0, bos: 1, eos: 2, unk: 3 } })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn specials(&self) -> Specials {
        self.specials
    }

    pub fn id(&self, token: &str) -> Result<TokenId> {
        self.token_to_id.get(token).copied().ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, word: &str) -> bool {
        split_word(word).iter().all(|p| self.token_to_id.contains_key(*p))
    }

    /// Encodes text. Unknown words are an error, never mapped to `<unk>`.
    pub fn encode(&self, text: &str) -> Result<Encoding> {
        let mut ids = Vec::new();
        let mut spans = Vec::new();
        for word in text.split_whitespace() {
            let start = ids.len();
            for piece in split_word(word) {
                ids.push(self.id(piece)?);
            }
            spans.push(WordSpan { word: word.to_string(), tokens: start..ids.len() });
        }
        Ok(Encoding { ids, spans })
    }

    pub fn encode_ids(&self, text: &str) -> Result<Vec<TokenId>> {
        Ok(self.encode(text)?.ids)
    }

    /// Decodes ids to text, re-attaching possessives to the preceding word.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for &id in ids {
            let tok = self.token(id).unwrap_or(UNK);
            if tok == POSSESSIVE && !out.is_empty() {
                out.push_str(tok);
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(tok);
        }
        out
    }
}

fn is_special(w: &str) -> bool {
    matches!(w, PAD | BOS | EOS | UNK)
}

/// Splits a trailing possessive off a word: `Smith's` -> [`Smith`, `'s`].
fn split_word(word: &str) -> Vec<&str> {
    match word.strip_suffix(POSSESSIVE) {
        Some(stem) if !stem.is_empty() => vec![stem, POSSESSIVE],
        _ => vec![word],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok() -> Tokenizer {
        Tokenizer::from_words(["John", "Smith", "father", "is", "Bob"])
    }

    #[test]
    fn empty_text_is_empty_sequence() {
        let enc = tok().encode("").unwrap();
        assert!(enc.ids.is_empty());
        assert!(enc.spans.is_empty());
    }

    #[test]
    fn possessive_is_its_own_token() {
        let t = tok();
        let enc = t.encode("John Smith 's father is Bob").unwrap();
        assert_eq!(enc.ids.len(), 6);
        assert_eq!(enc.spans[1].word, "Smith");
        assert_eq!(enc.spans[1].tokens.end - 1, 1);

        let glued = t.encode("John Smith's father is Bob").unwrap();
        assert_eq!(glued.ids, enc.ids);
        assert_eq!(glued.spans[1].tokens, 1..3);
        assert_eq!(t.decode(&enc.ids), "John Smith's father is Bob");
    }

    #[test]
    fn unknown_word_is_named() {
        match tok().encode("John Doe") {
            Err(Error::UnknownToken(w)) => assert_eq!(w, "Doe"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ids_are_dense_and_specials_first() {
        let t = tok();
        assert_eq!(t.vocab()[..4], [PAD, BOS, EOS, UNK]);
        for (i, w) in t.vocab().iter().enumerate() {
            assert_eq!(t.id(w).unwrap(), i as TokenId);
        }
        let rebuilt = Tokenizer::from_vocab(t.vocab().to_vec()).unwrap();
        assert_eq!(rebuilt, t);
    }
}
