//! Keyword selection and keyword-prefixed inputs.
//!
//! Selected keywords are placed after the task token at the front of the
//! encoder input, and every one of those positions receives global attention.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::corpus::{TokenSeq, Vocabulary, SEP, TASK};
use crate::error::{Error, Result};
use crate::seed;

/// Word counts from a large reference text, used in place of corpus
/// document frequencies.
#[derive(Debug, Clone, Default)]
pub struct BackgroundDictionary {
    counts: HashMap<String, u64>,
    total: u64,
}

impl BackgroundDictionary {
    pub fn from_counts<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut dict = BackgroundDictionary::default();
        for (word, count) in entries {
            let word = word.into();
            if count == 0 {
                return Err(Error::validation(format!(
                    "background count for `{word}` must be at least 1"
                )));
            }
            if dict.counts.insert(word.clone(), count).is_some() {
                return Err(Error::validation(format!("duplicate background word `{word}`")));
            }
            dict.total += count;
        }
        Ok(dict)
    }

    /// Parses `word<TAB>count` lines. Blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: idx + 1,
                message,
            };
            let (word, count) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected `word<TAB>count`".into()))?;
            let count: u64 = count
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("bad count `{count}`: {e}")))?;
            if !seen.insert(word.to_string()) {
                return Err(parse_err(format!("duplicate word `{word}`")));
            }
            entries.push((word.to_string(), count));
        }
        Self::from_counts(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn count(&self, word: &str) -> Option<u64> {
        self.counts.get(word).copied()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn vocab_size(&self) -> usize {
        self.counts.len()
    }

    /// Serializes as `word<TAB>count` lines sorted by word.
    pub fn to_tsv(&self) -> String {
        let mut entries: Vec<_> = self.counts.iter().collect();
        entries.sort();
        entries
            .into_iter()
            .map(|(w, c)| format!("{w}\t{c}\n"))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeywordSource {
    Tfidf,
    Random,
    Gibberish,
    /// TF-IDF over the reference summary.
    Oracle,
}

impl fmt::Display for KeywordSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KeywordSource::Tfidf => "tfidf",
            KeywordSource::Random => "random",
            KeywordSource::Gibberish => "gibberish",
            KeywordSource::Oracle => "oracle",
        })
    }
}

impl FromStr for KeywordSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tfidf" => Ok(KeywordSource::Tfidf),
            "random" => Ok(KeywordSource::Random),
            "gibberish" => Ok(KeywordSource::Gibberish),
            "oracle" => Ok(KeywordSource::Oracle),
            other => Err(Error::validation(format!("unknown keyword source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeywordConfig {
    pub k: usize,
    pub source: KeywordSource,
    pub seed: u64,
}

impl Default for KeywordConfig {
    fn default() -> Self {
        KeywordConfig {
            k: 10,
            source: KeywordSource::Tfidf,
            seed: 0,
        }
    }
}

/// Ordered keywords. `scores` is populated only for TF-IDF based sources.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordSet {
    pub words: Vec<String>,
    pub source: KeywordSource,
    pub scores: Vec<f64>,
}

impl KeywordSet {
    pub fn empty(source: KeywordSource) -> Self {
        KeywordSet {
            words: Vec::new(),
            source,
            scores: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Top-`k` words of `doc` by `tf(w) * ln(total / count(w))`. Words missing
/// from the background dictionary are dropped. Ties break lexicographically.
pub fn tfidf_select<S: AsRef<str>>(doc: &[S], bg: &BackgroundDictionary, k: usize) -> KeywordSet {
    let mut tf: HashMap<&str, u64> = HashMap::new();
    for w in doc {
        *tf.entry(w.as_ref()).or_default() += 1;
    }
    let total = bg.total() as f64;
    let mut scored: Vec<(&str, f64)> = tf
        .into_iter()
        .filter_map(|(w, n)| {
            let count = bg.count(w)?;
            Some((w, n as f64 * (total / count as f64).ln()))
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    scored.truncate(k);
    KeywordSet {
        words: scored.iter().map(|(w, _)| w.to_string()).collect(),
        scores: scored.iter().map(|&(_, s)| s).collect(),
        source: KeywordSource::Tfidf,
    }
}

/// `k` distinct words of `doc` sampled uniformly without replacement.
pub fn random_select<S: AsRef<str>>(doc: &[S], k: usize, seed: u64) -> KeywordSet {
    let mut seen = HashSet::new();
    let distinct: Vec<&str> = doc
        .iter()
        .map(AsRef::as_ref)
        .filter(|w| seen.insert(*w))
        .collect();
    let mut rng = seed::rng(seed);
    let words = distinct
        .choose_multiple(&mut rng, k)
        .map(|w| w.to_string())
        .collect();
    KeywordSet {
        words,
        source: KeywordSource::Random,
        scores: Vec::new(),
    }
}

/// `k` nonsense words over `a-z`. Lengths follow Binomial(10, 0.5) with zero
/// redrawn.
pub fn gibberish_generate(k: usize, seed: u64) -> KeywordSet {
    let mut rng = seed::rng(seed);
    let lengths = Binomial::new(10, 0.5).expect("valid binomial parameters");
    let words = (0..k)
        .map(|_| {
            let len = loop {
                let n = lengths.sample(&mut rng);
                if n > 0 {
                    break n as usize;
                }
            };
            (0..len)
                .map(|_| char::from(b'a' + rng.random_range(0..26u8)))
                .collect()
        })
        .collect();
    KeywordSet {
        words,
        source: KeywordSource::Gibberish,
        scores: Vec::new(),
    }
}

/// TF-IDF selection run over the reference summary.
pub fn oracle_select<S: AsRef<str>>(
    summary: &[S],
    bg: &BackgroundDictionary,
    k: usize,
) -> KeywordSet {
    KeywordSet {
        source: KeywordSource::Oracle,
        ..tfidf_select(summary, bg, k)
    }
}

/// Dispatches on `cfg.source`. `summary` is only consulted by the oracle.
pub fn select<S: AsRef<str>>(
    doc: &[S],
    summary: &[S],
    bg: &BackgroundDictionary,
    cfg: &KeywordConfig,
) -> KeywordSet {
    match cfg.source {
        KeywordSource::Tfidf => tfidf_select(doc, bg, cfg.k),
        KeywordSource::Random => random_select(doc, cfg.k, cfg.seed),
        KeywordSource::Gibberish => gibberish_generate(cfg.k, cfg.seed),
        KeywordSource::Oracle => oracle_select(summary, bg, cfg.k),
    }
}

/// Builds `[TASK] keywords.. [SEP] doc..` and the global positions: the task
/// token and every keyword. Without keywords the result is `[TASK] doc..`
/// with only position 0 global.
pub fn prefix_and_mark(
    doc_tokens: &TokenSeq,
    keywords: &KeywordSet,
    vocab: &Vocabulary,
) -> (TokenSeq, Vec<usize>) {
    let mut ids = Vec::with_capacity(doc_tokens.len() + keywords.len() + 2);
    ids.push(TASK);
    if !keywords.is_empty() {
        ids.extend(vocab.tokenize(&keywords.words).0);
        ids.push(SEP);
    }
    ids.extend_from_slice(doc_tokens.as_slice());
    let globals = (0..=keywords.len()).collect();
    (TokenSeq(ids), globals)
}
