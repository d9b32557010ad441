use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const UNK: &str = "<unk>";
pub const PAD: &str = "<pad>";
pub const UNK_ID: usize = 0;
pub const PAD_ID: usize = 1;

const EXTRA_PUNCT: &[char] = &['“', '”', '‘', '’', '«', '»', '…', '–', '—', '¡', '¿'];

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || EXTRA_PUNCT.contains(&c)
}

/// Lowercases, splits on whitespace and trims punctuation from both ends of
/// each token. Input with no tokens yields a single [`UNK`].
pub fn tokenize(text: &str) -> Vec<String> {
    let tokens: Vec<String> = text
        .split_whitespace()
        .map(|t| t.trim_matches(is_punct).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect();
    if tokens.is_empty() {
        vec![UNK.to_string()]
    } else {
        tokens
    }
}

/// Dense token indices with `<unk>` at 0 and `<pad>` at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Collects every token in `texts`; regular tokens are indexed in sorted order.
    pub fn build<'a, I>(texts: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut seen = BTreeSet::new();
        for text in texts {
            for tok in tokenize(text) {
                if tok != UNK && tok != PAD {
                    seen.insert(tok);
                }
            }
        }
        let tokens = [UNK.to_string(), PAD.to_string()]
            .into_iter()
            .chain(seen)
            .collect();
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.tokens.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(deserializer)?;
        if tokens.len() < 2 || tokens[UNK_ID] != UNK || tokens[PAD_ID] != PAD {
            return Err(serde::de::Error::custom(
                "vocabulary must start with <unk>, <pad>",
            ));
        }
        let vocab = Self::from_tokens(tokens);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(serde::de::Error::custom("duplicate vocabulary token"));
        }
        Ok(vocab)
    }
}
