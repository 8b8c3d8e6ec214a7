//! Corpus ingestion, word tokenization and vocabulary construction.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const TASK: usize = 4;
pub const SEP: usize = 5;

/// Number of reserved ids at the bottom of every vocabulary.
pub const NUM_SPECIALS: usize = 6;

const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["<pad>", "<s>", "</s>", "<unk>", "<task>", "<sep>"];

/// A corpus record: identifier plus tokenized document and reference summary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub document: Vec<String>,
    pub summary: Vec<String>,
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    document: String,
    summary: String,
}

/// Splits text into lowercase word tokens.
///
/// Input is NFC-normalized and lowercased, split on whitespace, and every
/// character that is neither alphanumeric nor whitespace becomes a token of its
/// own (`"cat."` gives `["cat", "."]`).
pub fn split_words(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().collect::<String>().to_lowercase();
    let mut out = Vec::new();
    let mut current = String::new();
    for c in normalized.chars() {
        if c.is_alphanumeric() {
            current.push(c);
            continue;
        }
        if !current.is_empty() {
            out.push(std::mem::take(&mut current));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Reads a JSON-lines corpus. Blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(raw.id.clone()) {
            return Err(Error::validation(format!(
                "duplicate document id `{}` at line {line_no}",
                raw.id
            )));
        }
        let document = split_words(&raw.document);
        if document.is_empty() {
            return Err(Error::validation(format!(
                "document `{}` at line {line_no} is empty",
                raw.id
            )));
        }
        docs.push(Document {
            id: raw.id,
            document,
            summary: split_words(&raw.summary),
        });
    }
    Ok(docs)
}

/// Token ids for a word sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSeq(pub Vec<usize>);

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for TokenSeq {
    fn from(ids: Vec<usize>) -> Self {
        TokenSeq(ids)
    }
}

/// Word/id mapping. Ids `0..6` are the reserved specials
/// PAD, BOS, EOS, UNK, TASK, SEP in that order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    word_to_id: HashMap<String, usize>,
    id_to_word: Vec<String>,
}

impl Vocabulary {
    /// Vocabulary with specials followed by `words` in the given order.
    /// Duplicates and words spelled like a special are rejected.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self::specials_only();
        for w in words {
            let w = w.into();
            if vocab.word_to_id.contains_key(&w) {
                return Err(Error::validation(format!("duplicate vocabulary word `{w}`")));
            }
            vocab.word_to_id.insert(w.clone(), vocab.id_to_word.len());
            vocab.id_to_word.push(w);
        }
        Ok(vocab)
    }

    fn specials_only() -> Self {
        let id_to_word: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        let word_to_id = id_to_word
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocabulary {
            word_to_id,
            id_to_word,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        // specials are always present
        false
    }

    /// Non-special words in id order.
    pub fn words(&self) -> &[String] {
        &self.id_to_word[NUM_SPECIALS..]
    }

    /// Id of a non-special word.
    pub fn id(&self, word: &str) -> Option<usize> {
        self.word_to_id
            .get(word)
            .copied()
            .filter(|&id| id >= NUM_SPECIALS)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.id_to_word.get(id).map(String::as_str)
    }

    pub fn tokenize<S: AsRef<str>>(&self, words: &[S]) -> TokenSeq {
        TokenSeq(
            words
                .iter()
                .map(|w| self.id(w.as_ref()).unwrap_or(UNK))
                .collect(),
        )
    }

    /// Maps ids back to words; specials render as their bracketed names.
    pub fn detokenize(&self, tokens: &[usize]) -> Vec<String> {
        tokens
            .iter()
            .map(|&id| self.word(id).unwrap_or(SPECIAL_NAMES[UNK]).to_string())
            .collect()
    }
}

/// Builds a vocabulary from document and summary words ranked by frequency,
/// ties broken lexicographically ascending. At most `max_size - 6` words are
/// admitted after the specials.
pub fn build_vocabulary(docs: &[Document], max_size: usize) -> Vocabulary {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for doc in docs {
        for w in doc.document.iter().chain(&doc.summary) {
            *counts.entry(w.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(w, _)| !SPECIAL_NAMES.contains(w))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size.saturating_sub(NUM_SPECIALS));
    Vocabulary::from_words(ranked.into_iter().map(|(w, _)| w))
        .expect("ranked words are distinct")
}

/// Convenience wrapper over [`Vocabulary::tokenize`].
pub fn tokenize<S: AsRef<str>>(text: &[S], vocab: &Vocabulary) -> TokenSeq {
    vocab.tokenize(text)
}
