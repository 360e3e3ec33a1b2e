use std::collections::HashMap;

use crate::error::{Error, Result};

pub type SymbolId = u32;

pub const BOS: SymbolId = 0;
pub const EOS: SymbolId = 1;
pub const UNK: SymbolId = 2;

pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

/// Dense bijection between token strings and ids.
///
/// Ids 0, 1 and 2 are always `<s>`, `</s>` and `<unk>`. Distribution vectors
/// throughout the crate are indexed by id, with the `</s>` slot holding the
/// sentence-end probability and the `<s>` slot always zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolTable {
    tokens: Vec<String>,
    index: HashMap<String, SymbolId>,
}

impl Default for SymbolTable {
    fn default() -> Self {
        Self::new()
    }
}

impl SymbolTable {
    pub fn new() -> Self {
        let mut t = SymbolTable {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for tok in [BOS_TOKEN, EOS_TOKEN, UNK_TOKEN] {
            t.add(tok);
        }
        t
    }

    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut t = Self::new();
        for tok in tokens {
            t.add(tok.as_ref());
        }
        t
    }

    /// Vocabulary of the `max_size` most frequent tokens with count ≥ `min_count`
    /// (ties by token string), in that order after the reserved ids.
    pub fn from_corpus<S: AsRef<str>>(
        corpus: &[Vec<S>],
        min_count: u64,
        max_size: Option<usize>,
    ) -> Self {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for sent in corpus {
            for tok in sent {
                *counts.entry(tok.as_ref()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_count && !is_reserved_token(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        if let Some(m) = max_size {
            ranked.truncate(m);
        }
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t))
    }

    pub fn add(&mut self, token: &str) -> SymbolId {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as SymbolId;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn get(&self, token: &str) -> Option<SymbolId> {
        self.index.get(token).copied()
    }

    /// Id of `token`, mapping unknown tokens to `<unk>`.
    pub fn id(&self, token: &str) -> SymbolId {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: SymbolId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn try_token(&self, id: SymbolId) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or_else(|| Error::Contract(format!("symbol id {id} out of range")))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Predictable labels: `<unk>` and every word (excludes `<s>` and `</s>`).
    pub fn labels(&self) -> impl Iterator<Item = SymbolId> {
        UNK..self.tokens.len() as SymbolId
    }

    /// Word ids only (excludes all reserved tokens).
    pub fn words(&self) -> impl Iterator<Item = SymbolId> {
        UNK + 1..self.tokens.len() as SymbolId
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, sentence: &[S]) -> Vec<SymbolId> {
        sentence.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[SymbolId]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }
}

pub fn is_reserved_token(token: &str) -> bool {
    matches!(token, BOS_TOKEN | EOS_TOKEN | UNK_TOKEN)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids() {
        let t = SymbolTable::from_tokens(["a", "b", "a"]);
        assert_eq!(t.len(), 5);
        assert_eq!(t.get(BOS_TOKEN), Some(BOS));
        assert_eq!(t.get(EOS_TOKEN), Some(EOS));
        assert_eq!(t.get(UNK_TOKEN), Some(UNK));
        assert_eq!(t.id("zzz"), UNK);
        assert_eq!(t.token(t.id("b")), "b");
        assert_eq!(t.labels().count(), 3);
    }

    #[test]
    fn corpus_vocab_is_ranked() {
        let corpus = vec![vec!["b", "a", "b"], vec!["c", "b", "a"]];
        let t = SymbolTable::from_corpus(&corpus, 1, Some(2));
        assert_eq!(t.tokens()[3..], ["b".to_string(), "a".to_string()]);
    }
}
