//! Beam-search generation.
//!
//! Hypotheses start from BOS. Lengths count generated tokens after BOS,
//! including a final EOS. Finished hypotheses are ranked by
//! `cum_log_prob / len^length_penalty`.

use std::cmp::Ordering;

use crate::corpus::{TokenSeq, BOS, EOS};
use crate::error::{Error, Result};
use crate::model::{log_softmax, Seq2Seq};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GenerationConfig {
    pub num_beams: usize,
    pub max_length: usize,
    pub min_length: usize,
    pub length_penalty: f64,
    pub early_stopping: bool,
    /// Size of n-grams that may not repeat inside a hypothesis; 0 disables.
    pub no_repeat_ngram: usize,
}

impl GenerationConfig {
    pub fn arxiv() -> Self {
        GenerationConfig {
            num_beams: 4,
            max_length: 512,
            min_length: 100,
            length_penalty: 1.6,
            early_stopping: true,
            no_repeat_ngram: 3,
        }
    }

    pub fn ami() -> Self {
        GenerationConfig {
            num_beams: 3,
            max_length: 768,
            min_length: 100,
            length_penalty: 1.3,
            ..Self::arxiv()
        }
    }

    pub fn icsi() -> Self {
        GenerationConfig {
            max_length: 1024,
            min_length: 512,
            ..Self::arxiv()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_beams == 0 {
            return Err(Error::validation("num_beams must be at least 1"));
        }
        if self.min_length == 0 || self.min_length > self.max_length {
            return Err(Error::validation(format!(
                "need 1 <= min_length ({}) <= max_length ({})",
                self.min_length, self.max_length
            )));
        }
        if !self.length_penalty.is_finite() {
            return Err(Error::validation("length penalty must be finite"));
        }
        Ok(())
    }
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self::arxiv()
    }
}

/// Source of next-token log-probabilities for a BOS-initiated prefix.
pub trait NextTokenScorer {
    fn vocab_size(&self) -> usize;
    fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

/// A model paired with one encoded input.
pub struct EncodedSource<'a> {
    model: &'a Seq2Seq,
    source: Vec<usize>,
    encoded: Matrix,
}

impl<'a> EncodedSource<'a> {
    pub fn new(model: &'a Seq2Seq, input: &[usize], globals: &[usize]) -> Result<Self> {
        Ok(EncodedSource {
            model,
            source: input.to_vec(),
            encoded: model.encode(input, globals)?,
        })
    }
}

impl NextTokenScorer for EncodedSource<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let logits = self.model.decode(&self.encoded, &self.source, prefix)?;
        Ok(log_softmax(logits.row(logits.rows() - 1)))
    }
}

pub fn length_penalized_score(cum_log_prob: f64, len: usize, alpha: f64) -> f64 {
    cum_log_prob / (len as f64).powf(alpha)
}

/// Tokens that would complete an n-gram already present in `tokens`.
pub fn banned_tokens(tokens: &[usize], n: usize) -> Vec<usize> {
    if n == 0 || tokens.len() < n {
        return Vec::new();
    }
    let tail = &tokens[tokens.len() - (n - 1)..];
    let mut banned: Vec<usize> = tokens
        .windows(n)
        .filter(|gram| &gram[..n - 1] == tail)
        .map(|gram| gram[n - 1])
        .collect();
    banned.sort_unstable();
    banned.dedup();
    banned
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    /// BOS followed by generated tokens.
    pub tokens: Vec<usize>,
    pub cum_log_prob: f64,
}

impl BeamHypothesis {
    pub fn generated_len(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn is_finished(&self, max_length: usize) -> bool {
        self.tokens.last() == Some(&EOS) || self.generated_len() >= max_length
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamOutput {
    pub best: BeamHypothesis,
    pub score: f64,
    /// Set when some hypothesis had every continuation banned and EOS was
    /// emitted regardless.
    pub forced_eos: bool,
}

impl BeamOutput {
    /// Generated tokens with BOS and a trailing EOS stripped.
    pub fn content(&self) -> &[usize] {
        let t = &self.best.tokens[1..];
        t.strip_suffix(&[EOS]).unwrap_or(t)
    }
}

pub fn beam_search<S: NextTokenScorer + ?Sized>(
    scorer: &S,
    cfg: &GenerationConfig,
) -> Result<BeamOutput> {
    cfg.validate()?;
    let vocab = scorer.vocab_size();
    if EOS >= vocab {
        return Err(Error::validation("vocabulary has no EOS token"));
    }
    let mut live = vec![BeamHypothesis {
        tokens: vec![BOS],
        cum_log_prob: 0.0,
    }];
    let mut finished: Vec<BeamHypothesis> = Vec::new();
    let mut forced_eos = false;

    while !live.is_empty() {
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (b, hyp) in live.iter().enumerate() {
            let raw = scorer.next_log_probs(&hyp.tokens)?;
            if raw.len() != vocab {
                return Err(Error::Contract(format!(
                    "scorer returned {} log-probabilities for vocabulary {vocab}",
                    raw.len()
                )));
            }
            let mut lp = raw.clone();
            if hyp.generated_len() < cfg.min_length {
                lp[EOS] = f64::NEG_INFINITY;
            }
            for t in banned_tokens(&hyp.tokens[1..], cfg.no_repeat_ngram) {
                lp[t] = f64::NEG_INFINITY;
            }
            if lp.iter().all(|v| *v == f64::NEG_INFINITY) {
                log::warn!(
                    "every continuation banned after {} tokens; forcing EOS",
                    hyp.generated_len()
                );
                forced_eos = true;
                lp[EOS] = raw[EOS];
            }
            candidates.extend(
                lp.iter()
                    .enumerate()
                    .filter(|(_, v)| **v > f64::NEG_INFINITY)
                    .map(|(t, v)| (hyp.cum_log_prob + v, t, b)),
            );
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        candidates.truncate(cfg.num_beams);

        let mut next = Vec::with_capacity(candidates.len());
        for (cum, t, b) in candidates {
            let mut tokens = live[b].tokens.clone();
            tokens.push(t);
            let hyp = BeamHypothesis {
                tokens,
                cum_log_prob: cum,
            };
            if hyp.is_finished(cfg.max_length) {
                finished.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        live = next;
        if cfg.early_stopping && finished.len() >= cfg.num_beams {
            break;
        }
    }

    let mut best: Option<(f64, BeamHypothesis)> = None;
    for hyp in finished {
        let s = length_penalized_score(hyp.cum_log_prob, hyp.generated_len(), cfg.length_penalty);
        if best.as_ref().is_none_or(|(bs, _)| s > *bs) {
            best = Some((s, hyp));
        }
    }
    let (score, best) = best.ok_or_else(|| Error::Contract("beam search finished nothing".into()))?;
    Ok(BeamOutput {
        best,
        score,
        forced_eos,
    })
}

/// Encodes `input` and runs beam search; returns the generated tokens
/// without BOS/EOS.
pub fn generate(
    model: &Seq2Seq,
    input: &TokenSeq,
    globals: &[usize],
    cfg: &GenerationConfig,
) -> Result<TokenSeq> {
    if input.is_empty() {
        return Err(Error::validation("generation input is empty"));
    }
    let source = EncodedSource::new(model, input.as_slice(), globals)?;
    let out = beam_search(&source, cfg)?;
    Ok(TokenSeq(out.content().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed table of next-token preferences keyed by prefix length.
    struct Table(Vec<Vec<f64>>);

    impl NextTokenScorer for Table {
        fn vocab_size(&self) -> usize {
            self.0[0].len()
        }

        fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
            let row = &self.0[(prefix.len() - 1).min(self.0.len() - 1)];
            Ok(log_softmax(row))
        }
    }

    fn cfg(beams: usize, max: usize, min: usize) -> GenerationConfig {
        GenerationConfig {
            num_beams: beams,
            max_length: max,
            min_length: min,
            length_penalty: 1.0,
            early_stopping: false,
            no_repeat_ngram: 0,
        }
    }

    #[test]
    fn penalty_formula() {
        assert_eq!(length_penalized_score(-2.0, 5, 0.0), -2.0);
        assert!((length_penalized_score(-2.0, 4, 1.6) + 0.217_637_640_824_031).abs() < 1e-12);
        assert_eq!(length_penalized_score(-1.3, 1, 1.6), -1.3);
    }

    #[test]
    fn banned_trigram() {
        // a b c a b -> c would repeat (a, b, c)
        assert_eq!(banned_tokens(&[10, 11, 12, 10, 11], 3), [12]);
        assert!(banned_tokens(&[10, 11], 3).is_empty());
        assert!(banned_tokens(&[10, 11, 12, 10, 11], 0).is_empty());
    }

    #[test]
    fn greedy_when_single_beam() {
        // EOS=2 favored only at step 3
        let table = Table(vec![
            vec![-9.0, -9.0, -9.0, 0.0, 1.0, 0.5],
            vec![-9.0, -9.0, -9.0, 2.0, 0.0, 0.5],
            vec![-9.0, -9.0, 3.0, 0.0, 0.0, 0.5],
        ]);
        let out = beam_search(&table, &cfg(1, 10, 1)).unwrap();
        assert_eq!(out.best.tokens, [BOS, 4, 3, EOS]);
        assert_eq!(out.content(), [4, 3]);
    }

    #[test]
    fn min_and_max_length_respected() {
        // EOS strongly preferred from the start
        let table = Table(vec![vec![-9.0, -9.0, 5.0, 0.0, 0.0]]);
        let out = beam_search(&table, &cfg(2, 6, 3)).unwrap();
        assert_eq!(out.content().len(), 3);
        let never_eos = Table(vec![vec![-9.0, -9.0, -50.0, 1.0, 0.0]]);
        let out = beam_search(&never_eos, &cfg(2, 4, 1)).unwrap();
        assert_eq!(out.best.generated_len(), 4);
        assert_eq!(out.content().len(), 4);
    }

    #[test]
    fn forced_eos_when_everything_banned() {
        // only token 3 is allowed besides EOS; after "3 3" the bigram ban leaves nothing
        let table = Table(vec![vec![f64::NEG_INFINITY, f64::NEG_INFINITY, -1.0, 0.0]]);
        let mut c = cfg(1, 10, 8);
        c.no_repeat_ngram = 2;
        let out = beam_search(&table, &c).unwrap();
        assert!(out.forced_eos);
        assert_eq!(out.best.tokens, [BOS, 3, 3, EOS]);
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0, 4, 1).validate().is_err());
        assert!(cfg(1, 4, 5).validate().is_err());
        assert!(cfg(1, 4, 0).validate().is_err());
        assert!(GenerationConfig::icsi().validate().is_ok());
        assert_eq!(GenerationConfig::ami().length_penalty, 1.3);
    }
}
