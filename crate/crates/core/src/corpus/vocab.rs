use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type TokenId = usize;

pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";

/// Bidirectional token/id map with per-id stop-word flags.
///
/// Ids are dense. `<unk>` is id 0 and `<eos>` is id 1; the remaining ids
/// follow descending corpus frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyData", into = "VocabularyData")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    stop_flags: Vec<bool>,
    // Position of each non-stop id in the bag-of-words vector.
    bow_slots: Vec<Option<usize>>,
    bow_tokens: Vec<TokenId>,
    unk_id: TokenId,
    eos_id: TokenId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VocabularyData {
    pub tokens: Vec<String>,
    pub stop: Vec<bool>,
}

impl TryFrom<VocabularyData> for Vocabulary {
    type Error = Error;

    fn try_from(d: VocabularyData) -> Result<Self> {
        Vocabulary::from_parts(d.tokens, d.stop)
    }
}

impl From<Vocabulary> for VocabularyData {
    fn from(v: Vocabulary) -> Self {
        VocabularyData {
            tokens: v.tokens,
            stop: v.stop_flags,
        }
    }
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit token list. Both special tokens
    /// must be present and `<eos>` must not be flagged as a stop word.
    pub fn from_parts(tokens: Vec<String>, stop_flags: Vec<bool>) -> Result<Self> {
        if tokens.len() != stop_flags.len() {
            return Err(Error::Validation(format!(
                "{} tokens but {} stop flags",
                tokens.len(),
                stop_flags.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate token {t:?}")));
            }
        }
        let unk_id = *index
            .get(UNK)
            .ok_or_else(|| Error::Validation(format!("vocabulary lacks {UNK}")))?;
        let eos_id = *index
            .get(EOS)
            .ok_or_else(|| Error::Validation(format!("vocabulary lacks {EOS}")))?;
        if stop_flags[eos_id] {
            return Err(Error::Validation(format!("{EOS} cannot be a stop word")));
        }
        let mut bow_slots = vec![None; tokens.len()];
        let mut bow_tokens = Vec::new();
        for (id, stop) in stop_flags.iter().enumerate() {
            if !stop {
                bow_slots[id] = Some(bow_tokens.len());
                bow_tokens.push(id);
            }
        }
        Ok(Self {
            tokens,
            index,
            stop_flags,
            bow_slots,
            bow_tokens,
            unk_id,
            eos_id,
        })
    }

    /// Vocabulary size C, stop words included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Size of the bag-of-words space (non-stop ids).
    pub fn bow_len(&self) -> usize {
        self.bow_tokens.len()
    }

    pub fn unk_id(&self) -> TokenId {
        self.unk_id
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn stop_flags(&self) -> &[bool] {
        &self.stop_flags
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or `<unk>` when it is out of vocabulary.
    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(self.unk_id)
    }

    pub fn is_stop(&self, id: TokenId) -> bool {
        self.stop_flags[id]
    }

    pub fn bow_slot(&self, id: TokenId) -> Option<usize> {
        self.bow_slots[id]
    }

    /// Token id occupying each bag-of-words slot.
    pub fn bow_tokens(&self) -> &[TokenId] {
        &self.bow_tokens
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.tokens[i].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn is_stopword(token: &str, stopwords: &BTreeSet<String>) -> bool {
    stopwords.contains(token) || stopwords.contains(&token.to_lowercase())
}

/// Keeps the `max_size - 2` most frequent tokens plus `<unk>` and `<eos>`.
/// Frequency ties are broken by lexicographic token order. Literal
/// occurrences of the special token strings in the stream are not counted.
pub fn build_vocabulary<I, S>(
    stream: I,
    max_size: usize,
    stopwords: &BTreeSet<String>,
) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if max_size < 2 {
        return Err(Error::Config(format!(
            "vocabulary needs room for {UNK} and {EOS}; max_size {max_size} < 2"
        )));
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut seen_any = false;
    for tok in stream {
        let tok = tok.as_ref();
        seen_any = true;
        if tok == UNK || tok == EOS {
            continue;
        }
        *counts.entry(tok.to_string()).or_default() += 1;
    }
    if !seen_any {
        return Err(Error::Validation("empty corpus".into()));
    }

    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - 2);

    let mut tokens = vec![UNK.to_string(), EOS.to_string()];
    tokens.extend(ranked.into_iter().map(|(t, _)| t));
    let stop = tokens
        .iter()
        .map(|t| t != EOS && is_stopword(t, stopwords))
        .collect();
    Vocabulary::from_parts(tokens, stop)
}
