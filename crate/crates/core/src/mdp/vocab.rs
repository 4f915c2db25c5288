use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::MdpError;

/// Index into a [`Vocabulary`].
pub type TokenId = usize;

/// Reserved end-of-action token string.
pub const EOA: &str = "<eoa>";

/// A finite, ordered token alphabet.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new<I, S>(tokens: I) -> Result<Self, MdpError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.len() < 2 {
            return Err(MdpError::VocabularyTooSmall(tokens.len()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(MdpError::DuplicateToken(t.clone()));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn eoa(&self) -> Option<TokenId> {
        self.id(EOA)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, words: &[&str]) -> Result<Vec<TokenId>, MdpError> {
        words
            .iter()
            .map(|w| self.id(w).ok_or_else(|| MdpError::UnknownToken((*w).to_string())))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("<?>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// First 16 hex digits of SHA-256 over the NUL-separated token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl Eq for Vocabulary {}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = MdpError;

    fn try_from(tokens: Vec<String>) -> Result<Self, Self::Error> {
        Vocabulary::new(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_and_string_mapping_is_a_bijection() {
        let v = Vocabulary::new(["walk", "to", "kitchen", EOA]).unwrap();
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t), Some(i));
            assert_eq!(v.token(i), Some(t.as_str()));
        }
        assert_eq!(v.eoa(), Some(3));
        assert_eq!(v.encode(&["to", "walk"]).unwrap(), vec![1, 0]);
        assert_eq!(v.decode(&[0, 1, 2]), "walk to kitchen");
    }

    #[test]
    fn rejects_duplicates_and_tiny_alphabets() {
        assert!(matches!(
            Vocabulary::new(["a", "b", "a"]),
            Err(MdpError::DuplicateToken(_))
        ));
        assert!(matches!(
            Vocabulary::new(["a"]),
            Err(MdpError::VocabularyTooSmall(1))
        ));
        let v = Vocabulary::new(["a", "b"]).unwrap();
        assert!(matches!(v.encode(&["c"]), Err(MdpError::UnknownToken(_))));
    }

    #[test]
    fn hash_is_order_sensitive_and_stable() {
        let a = Vocabulary::new(["a", "b"]).unwrap();
        let b = Vocabulary::new(["b", "a"]).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), Vocabulary::new(["a", "b"]).unwrap().hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn serde_round_trip_rebuilds_the_index() {
        let v = Vocabulary::new(["x", "y", "z"]).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"["x","y","z"]"#);
        let back: Vocabulary = serde_json::from_str(&s).unwrap();
        assert_eq!(back.id("z"), Some(2));
    }
}
