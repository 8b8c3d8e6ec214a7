//! Seeded synthetic corpora for experiments and tests.
//!
//! Each document mixes common filler words with a few rare topic words that
//! recur several times; its summary lists the topic words in order of first
//! appearance. The matching background dictionary counts filler words as
//! frequent and topic words as rare, so TF-IDF keyword selection recovers the
//! topics.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::keywords::BackgroundDictionary;
use crate::seed;

const FILLER: [&str; 24] = [
    "the", "of", "and", "to", "a", "in", "is", "that", "we", "it", "for", "on", "was", "with",
    "so", "but", "then", "they", "this", "there", "what", "about", "think", "okay",
];

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub documents: usize,
    /// Number of words per document.
    pub document_length: usize,
    /// Topic words per document (and thus summary length).
    pub topics_per_document: usize,
    /// How often each topic word occurs in its document.
    pub topic_repeats: usize,
    /// Size of the topic-word pool.
    pub topic_pool: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            documents: 300,
            document_length: 40,
            topics_per_document: 3,
            topic_repeats: 3,
            topic_pool: 60,
            seed: 0,
        }
    }
}

/// Deterministic two-syllable word for index `i` (`bada`, `bade`, ...).
pub fn topic_word(i: usize) -> String {
    let syllables = ONSETS.len() * VOWELS.len();
    let a = i % syllables;
    let b = (i / syllables) % syllables;
    let c = i / (syllables * syllables);
    let mut w = String::new();
    for s in [b, a] {
        w.push_str(ONSETS[s / VOWELS.len()]);
        w.push_str(VOWELS[s % VOWELS.len()]);
    }
    if c > 0 {
        w.push_str(&c.to_string());
    }
    w
}

pub fn corpus(spec: &SyntheticSpec) -> Result<Vec<Document>> {
    let topical = spec.topics_per_document * spec.topic_repeats;
    if topical > spec.document_length {
        return Err(Error::validation("topic words do not fit in the document length"));
    }
    if spec.topics_per_document > spec.topic_pool {
        return Err(Error::validation("topic pool smaller than topics per document"));
    }
    let pool: Vec<String> = (0..spec.topic_pool).map(topic_word).collect();
    let mut rng = seed::rng(seed::derive(spec.seed, "synthetic", &[]));
    let mut docs = Vec::with_capacity(spec.documents);
    for d in 0..spec.documents {
        let topics: Vec<&String> = pool.choose_multiple(&mut rng, spec.topics_per_document).collect();
        let mut words: Vec<String> = Vec::with_capacity(spec.document_length);
        for t in &topics {
            words.extend(std::iter::repeat_n((*t).clone(), spec.topic_repeats));
        }
        while words.len() < spec.document_length {
            words.push(FILLER[rng.random_range(0..FILLER.len())].to_string());
        }
        words.shuffle(&mut rng);
        let mut seen = HashSet::new();
        let summary: Vec<String> = words
            .iter()
            .filter(|w| topics.contains(w) && seen.insert(w.as_str()))
            .cloned()
            .collect();
        docs.push(Document {
            id: format!("doc{d:04}"),
            document: words,
            summary,
        });
    }
    Ok(docs)
}

/// Background counts: filler words frequent, topic words rare, plus a long
/// tail of unrelated words so the dictionary is not dominated by the corpus.
pub fn background(spec: &SyntheticSpec) -> BackgroundDictionary {
    let mut entries: Vec<(String, u64)> = FILLER
        .iter()
        .enumerate()
        .map(|(i, w)| (w.to_string(), 50_000 / (i as u64 + 1)))
        .collect();
    for i in 0..spec.topic_pool {
        entries.push((topic_word(i), 2 + (i as u64 % 5)));
    }
    for i in 0..500 {
        entries.push((format!("tail{i}"), 10 + i as u64));
    }
    BackgroundDictionary::from_counts(entries).expect("synthetic entries are distinct")
}

/// Writes documents as JSON-lines (`id`, `document`, `summary`).
pub fn write_corpus(docs: &[Document], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for d in docs {
        let line = serde_json::json!({
            "id": d.id,
            "document": d.document.join(" "),
            "summary": d.summary.join(" "),
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_corpus;
    use crate::keywords::tfidf_select;

    #[test]
    fn topic_words_are_distinct() {
        let words: HashSet<String> = (0..4000).map(topic_word).collect();
        assert_eq!(words.len(), 4000);
        assert_eq!(topic_word(0), "baba");
    }

    #[test]
    fn tfidf_recovers_topics() {
        let spec = SyntheticSpec {
            documents: 5,
            ..SyntheticSpec::default()
        };
        let bg = background(&spec);
        for doc in corpus(&spec).unwrap() {
            let mut kw = tfidf_select(&doc.document, &bg, spec.topics_per_document).words;
            let mut summary = doc.summary.clone();
            kw.sort();
            summary.sort();
            assert_eq!(kw, summary);
        }
    }

    #[test]
    fn round_trips_through_jsonl() {
        let spec = SyntheticSpec {
            documents: 4,
            ..SyntheticSpec::default()
        };
        let docs = corpus(&spec).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_corpus(&docs, f.path()).unwrap();
        assert_eq!(load_corpus(f.path()).unwrap(), docs);
        assert_eq!(corpus(&spec).unwrap(), docs);
    }
}
