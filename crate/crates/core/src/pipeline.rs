//! Turns corpus documents into model examples: keyword selection, prefixing,
//! tokenization and truncation to the model's position budget.

use crate::corpus::{Document, TokenSeq, Vocabulary, NUM_SPECIALS};
use crate::error::{Error, Result};
use crate::keywords::{self, BackgroundDictionary, KeywordConfig, KeywordSet};
use crate::model::Example;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub example: Example,
    pub keywords: KeywordSet,
}

/// Keyword configuration used for one document. Random and gibberish
/// selections get a per-document seed derived from the configured one.
pub fn document_keyword_config(cfg: &KeywordConfig, doc_id: &str) -> KeywordConfig {
    KeywordConfig {
        seed: seed::derive(cfg.seed, doc_id, &[]),
        ..*cfg
    }
}

pub fn prepare(
    doc: &Document,
    vocab: &Vocabulary,
    background: &BackgroundDictionary,
    kw: &KeywordConfig,
    max_positions: usize,
) -> Result<Prepared> {
    let keywords = keywords::select(
        &doc.document,
        &doc.summary,
        background,
        &document_keyword_config(kw, &doc.id),
    );
    let overhead = if keywords.is_empty() { 1 } else { keywords.len() + 2 };
    if overhead >= max_positions {
        return Err(Error::validation(format!(
            "{} keywords leave no room for the document within {max_positions} positions",
            keywords.len()
        )));
    }
    let budget = max_positions - overhead;
    let mut doc_tokens = vocab.tokenize(&doc.document);
    doc_tokens.0.truncate(budget);
    let (input, globals) = keywords::prefix_and_mark(&doc_tokens, &keywords, vocab);

    let mut target = vocab.tokenize(&doc.summary);
    target.0.truncate(max_positions - 1);
    Ok(Prepared {
        example: Example {
            input,
            globals,
            target,
        },
        keywords,
    })
}

/// Detokenized text with special tokens dropped.
pub fn render(tokens: &TokenSeq, vocab: &Vocabulary) -> String {
    let words: Vec<usize> = tokens
        .as_slice()
        .iter()
        .copied()
        .filter(|&t| t >= NUM_SPECIALS)
        .collect();
    vocab.detokenize(&words).join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SEP, TASK};
    use crate::keywords::KeywordSource;

    #[test]
    fn truncates_document_to_fit() {
        let vocab = Vocabulary::from_words(["a", "b", "c", "x"]).unwrap();
        let doc = Document {
            id: "d".into(),
            document: ["a", "b", "c", "a", "b", "c"].map(String::from).to_vec(),
            summary: ["x", "a", "b", "c"].map(String::from).to_vec(),
        };
        let bg = BackgroundDictionary::from_counts([("a", 1), ("b", 50), ("c", 50)]).unwrap();
        let kw = KeywordConfig {
            k: 1,
            source: KeywordSource::Tfidf,
            seed: 0,
        };
        let p = prepare(&doc, &vocab, &bg, &kw, 5).unwrap();
        assert_eq!(p.example.input.0, [TASK, 6, SEP, 6, 7]);
        assert_eq!(p.example.globals, [0, 1]);
        assert_eq!(p.example.target.len(), 4);
        assert!(prepare(&doc, &vocab, &bg, &kw, 3).is_err());
        assert_eq!(render(&p.example.target, &vocab), "x a b c");
    }
}
