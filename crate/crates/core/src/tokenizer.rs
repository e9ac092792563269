//! SMILES tokenization and the token vocabulary.
//!
//! Tokens are bracket atoms `[...]`, the two-letter elements `Cl` and `Br`,
//! single-letter organic and aromatic atoms, `*`, bond symbols, parentheses,
//! ring digits (each its own token), `%NN` and `.`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const PAD: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<bos>", "<eos>", "<pad>", "<unk>"];

/// Splits a SMILES string into tokens. Concatenating the tokens gives back
/// the input exactly.
pub fn tokenize(smiles: &str) -> Result<Vec<&str>> {
    let bytes = smiles.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let unknown = |offset: usize| Error::UnknownCharacter {
        ch: smiles[offset..].chars().next().unwrap_or('?'),
        offset,
    };
    while i < bytes.len() {
        let len = match bytes[i] {
            b'[' => match bytes[i..].iter().position(|&b| b == b']') {
                Some(close) if bytes[i + 1..i + close].iter().all(|b| b.is_ascii_graphic() && *b != b'[') => {
                    close + 1
                }
                _ => return Err(unknown(i)),
            },
            b'C' if bytes.get(i + 1) == Some(&b'l') => 2,
            b'B' if bytes.get(i + 1) == Some(&b'r') => 2,
            b'%' => {
                if bytes.len() >= i + 3 && bytes[i + 1].is_ascii_digit() && bytes[i + 2].is_ascii_digit() {
                    3
                } else {
                    return Err(unknown(i));
                }
            }
            b'B' | b'C' | b'N' | b'O' | b'P' | b'S' | b'F' | b'I' | b'b' | b'c' | b'n' | b'o'
            | b'p' | b's' | b'*' => 1,
            b'-' | b'=' | b'#' | b':' | b'/' | b'\\' | b'(' | b')' | b'.' => 1,
            b'0'..=b'9' => 1,
            _ => return Err(unknown(i)),
        };
        out.push(&smiles[i..i + len]);
        i += len;
    }
    Ok(out)
}

/// Token id sequence, framed by BOS and EOS when produced by [`encode`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<usize>,
    pub source: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabDoc", into = "VocabDoc")]
pub struct Vocab {
    tokens: Vec<String>,
    id_of: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabDoc {
    tokens: Vec<String>,
}

impl TryFrom<VocabDoc> for Vocab {
    type Error = String;

    fn try_from(doc: VocabDoc) -> Result<Self, String> {
        Vocab::from_tokens(doc.tokens)
    }
}

impl From<Vocab> for VocabDoc {
    fn from(v: Vocab) -> Self {
        VocabDoc { tokens: v.tokens }
    }
}

impl Vocab {
    /// Vocabulary from an ordered token list whose first four entries are
    /// the reserved tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, String> {
        if tokens.len() < RESERVED.len() + 1 || tokens[..4] != RESERVED {
            return Err("token list must start with <bos>, <eos>, <pad>, <unk> and hold at least one more token".into());
        }
        let mut id_of = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if id_of.insert(t.clone(), i).is_some() {
                return Err(format!("duplicate token {t:?}"));
            }
        }
        Ok(Vocab { tokens, id_of })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("vocab serializes")
    }
}

/// Reserved tokens followed by every corpus token, most frequent first,
/// ties broken lexicographically.
pub fn build_vocab<S: AsRef<str>>(corpus: impl IntoIterator<Item = S>) -> Result<Vocab> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut lines = 0;
    for smiles in corpus {
        lines += 1;
        for t in tokenize(smiles.as_ref())? {
            *counts.entry(t.to_string()).or_default() += 1;
        }
    }
    if lines == 0 || counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(t, _)| t))
        .collect();
    Ok(Vocab::from_tokens(tokens).expect("reserved prefix and distinct tokens"))
}

/// `BOS, tokens.., EOS`; tokens missing from the vocabulary become UNK.
pub fn encode(smiles: &str, vocab: &Vocab) -> Result<TokenSeq> {
    let mut ids = vec![BOS];
    ids.extend(tokenize(smiles)?.into_iter().map(|t| vocab.id(t).unwrap_or(UNK)));
    ids.push(EOS);
    Ok(TokenSeq {
        ids,
        source: Some(smiles.to_string()),
    })
}

/// Like [`encode`] but fails on tokens missing from the vocabulary.
pub fn encode_strict(smiles: &str, vocab: &Vocab) -> Result<TokenSeq> {
    let mut ids = vec![BOS];
    for t in tokenize(smiles)? {
        ids.push(vocab.id(t).ok_or_else(|| Error::UnknownToken(t.to_string()))?);
    }
    ids.push(EOS);
    Ok(TokenSeq {
        ids,
        source: Some(smiles.to_string()),
    })
}

/// Text of a token sequence. A leading BOS is skipped, decoding stops at
/// EOS, PAD is dropped and UNK is written as `<unk>`.
pub fn decode(ids: &[usize], vocab: &Vocab) -> Result<String> {
    let mut out = String::new();
    for (pos, &id) in ids.iter().enumerate() {
        match id {
            BOS if pos == 0 => {}
            EOS => break,
            PAD => {}
            _ => out.push_str(vocab.token(id).ok_or(Error::UnknownId(id))?),
        }
    }
    Ok(out)
}
