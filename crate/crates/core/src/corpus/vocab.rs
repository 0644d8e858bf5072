use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{Dataset, Payload};

pub const BOS: u32 = 0;
pub const SEP: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

/// Surface forms of the reserved tokens, in id order.
pub const SPECIAL_TOKENS: [&str; 4] = ["[bos]", "[sep]", "[eos]", "[unk]"];

/// Whitespace tokenizer with lowercase normalization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

pub(crate) fn is_special(token: &str) -> bool {
    SPECIAL_TOKENS.iter().any(|s| s.eq_ignore_ascii_case(token))
}

/// Token id mapping: reserved specials first, then corpus tokens in sorted
/// order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn build<'a>(datasets: impl IntoIterator<Item = &'a Dataset>) -> Self {
        let mut words = BTreeSet::new();
        for d in datasets {
            for ex in d {
                if let Payload::Segments(segs) = &ex.payload {
                    for tok in segs.iter().flatten() {
                        words.insert(tok.clone());
                    }
                }
            }
        }
        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(words)
            .collect::<Vec<_>>();
        Self::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of a token; unknown words map to [`UNK`].
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    /// Token stream for a payload: segments joined by SEP, no BOS/EOS.
    pub fn encode(&self, segments: &[Vec<String>]) -> Vec<u32> {
        let mut out = Vec::new();
        for (i, seg) in segments.iter().enumerate() {
            if i > 0 {
                out.push(SEP);
            }
            out.extend(seg.iter().map(|t| self.id(t)));
        }
        out
    }

    /// Splits a SEP-delimited id stream back into segments.
    pub fn decode(&self, ids: &[u32]) -> Vec<Vec<String>> {
        ids.split(|&t| t == SEP)
            .map(|seg| seg.iter().map(|&t| self.token(t).to_string()).collect())
            .collect()
    }
}
