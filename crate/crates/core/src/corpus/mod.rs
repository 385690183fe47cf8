//! Corpus ingestion: stop-word lists, vocabularies, sentence-block
//! documents and their bag-of-words vectors.

mod synthetic;
mod vocab;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

pub use synthetic::{
    generate_synthetic_corpus, SyntheticConfig, SyntheticCorpus, TopicSpec, STOP_WORDS, TOPIC_A_WORDS,
    TOPIC_B_WORDS,
};
pub use vocab::{build_vocabulary, TokenId, Vocabulary, VocabularyData, EOS, UNK};

use crate::{Error, Result};

/// Reads a stop-word list: one token per line, blank lines ignored,
/// lowercased and deduplicated.
pub fn load_stopwords(path: impl AsRef<Path>) -> Result<BTreeSet<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_stopwords(&text))
}

pub fn parse_stopwords(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Whitespace tokens of every line, in order.
pub fn tokens(raw: &str) -> impl Iterator<Item = &str> {
    raw.split_whitespace()
}

/// A token sequence with its stop indicators and bag of words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedDocument {
    pub ids: Vec<TokenId>,
    pub stop: Vec<bool>,
    /// Term frequencies over the vocabulary's non-stop ids.
    pub bow: Vec<u32>,
}

impl EncodedDocument {
    pub fn from_ids(ids: Vec<TokenId>, vocab: &Vocabulary) -> Self {
        let stop = ids.iter().map(|&i| vocab.is_stop(i)).collect();
        let mut bow = vec![0u32; vocab.bow_len()];
        for &i in &ids {
            if let Some(slot) = vocab.bow_slot(i) {
                bow[slot] += 1;
            }
        }
        Self { ids, stop, bow }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    pub name: String,
    pub documents: Vec<EncodedDocument>,
}

impl CorpusSplit {
    pub fn num_tokens(&self) -> usize {
        self.documents.iter().map(EncodedDocument::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

/// Token ids of one whitespace-tokenized sentence, `<eos>` appended.
pub fn encode_sentence(sentence: &str, vocab: &Vocabulary) -> Vec<TokenId> {
    let mut ids: Vec<TokenId> = sentence
        .split_whitespace()
        .map(|t| vocab.id_or_unk(t))
        .collect();
    ids.push(vocab.eos_id());
    ids
}

/// Groups consecutive `block_size` sentences (one per non-blank line) into
/// documents. A trailing partial block becomes a shorter document.
pub fn encode_documents(
    raw: &str,
    vocab: &Vocabulary,
    block_size: usize,
    name: &str,
) -> Result<CorpusSplit> {
    if block_size == 0 {
        return Err(Error::Config("block size must be at least 1".into()));
    }
    let sentences: Vec<&str> = raw.lines().filter(|l| !l.trim().is_empty()).collect();
    let documents = sentences
        .chunks(block_size)
        .map(|block| {
            let ids = block
                .iter()
                .flat_map(|s| encode_sentence(s, vocab))
                .collect();
            EncodedDocument::from_ids(ids, vocab)
        })
        .collect();
    Ok(CorpusSplit {
        name: name.to_string(),
        documents,
    })
}

/// Parses a label file of `doc_index<TAB>label` lines.
pub fn parse_labels(text: &str) -> Result<Vec<(usize, String)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, line)| {
            let (idx, label) = line.split_once('\t').ok_or_else(|| {
                Error::Validation(format!("label line {} lacks a tab: {line:?}", n + 1))
            })?;
            let idx = idx.trim().parse().map_err(|_| {
                Error::Validation(format!("label line {} has a bad index {idx:?}", n + 1))
            })?;
            Ok((idx, label.trim().to_string()))
        })
        .collect()
}

pub fn format_labels<S: AsRef<str>>(labels: &[S]) -> String {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{i}\t{}\n", l.as_ref()))
        .collect()
}
