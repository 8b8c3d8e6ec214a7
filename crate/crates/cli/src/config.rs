//! Flat `key = value` experiment configuration.
//!
//! Values are applied in order: built-in defaults, then the config file, then
//! `--set key=value` overrides and dedicated flags. `to_text` writes every key,
//! so a resolved file reproduces a run on its own.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use kwattn::train::FewShotPlan;
use kwattn::{seed, DecoderOrder, GenerationConfig, KeywordConfig, KeywordSource, ModelConfig};
use kwattn::TrainConfig;

/// A key or value the user got wrong. Reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub train_corpus: Option<PathBuf>,
    pub val_corpus: Option<PathBuf>,
    pub background: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub vocab_max_size: usize,
    /// `vocab_size` is ignored; it comes from the vocabulary at run time.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub generation: GenerationConfig,
    pub keywords: KeywordConfig,
    pub fewshot: FewShotPlan,
    /// Keyword counts compared by `fewshot`.
    pub keyword_counts: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            train_corpus: None,
            val_corpus: None,
            background: None,
            output_dir: None,
            vocab_max_size: 50_000,
            model: ModelConfig::toy(0),
            train: TrainConfig::default(),
            generation: GenerationConfig::default(),
            keywords: KeywordConfig::default(),
            fewshot: FewShotPlan::default(),
            keyword_counts: vec![0, 10, 20],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, UsageError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| UsageError(format!("bad value `{value}` for `{key}`: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, UsageError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join(values: &[usize]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), UsageError> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "train_corpus" => self.train_corpus = opt_path(v),
            "val_corpus" => self.val_corpus = opt_path(v),
            "background" => self.background = opt_path(v),
            "output_dir" => self.output_dir = opt_path(v),
            "vocab.max_size" => self.vocab_max_size = parse(key, v)?,

            "model.d_model" => self.model.d_model = parse(key, v)?,
            "model.n_heads" => self.model.n_heads = parse(key, v)?,
            "model.d_ff" => self.model.d_ff = parse(key, v)?,
            "model.encoder_layers" => self.model.encoder_layers = parse(key, v)?,
            "model.decoder_layers" => self.model.decoder_layers = parse(key, v)?,
            "model.max_positions" => self.model.max_positions = parse(key, v)?,
            "model.half_width" => self.model.half_width = parse(key, v)?,
            "model.dilation" => self.model.dilation = parse(key, v)?,
            "model.layernorm_epsilon" => self.model.layernorm_epsilon = parse(key, v)?,
            "model.decoder_order" => self.model.decoder_order = parse::<DecoderOrder>(key, v)?,

            "train.learning_rate" => self.train.learning_rate = parse(key, v)?,
            "train.beta1" => self.train.beta1 = parse(key, v)?,
            "train.beta2" => self.train.beta2 = parse(key, v)?,
            "train.epsilon" => self.train.epsilon = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,

            "generate.num_beams" => self.generation.num_beams = parse(key, v)?,
            "generate.max_length" => self.generation.max_length = parse(key, v)?,
            "generate.min_length" => self.generation.min_length = parse(key, v)?,
            "generate.length_penalty" => self.generation.length_penalty = parse(key, v)?,
            "generate.early_stopping" => self.generation.early_stopping = parse(key, v)?,
            "generate.no_repeat_ngram" => self.generation.no_repeat_ngram = parse(key, v)?,

            "keywords.k" => self.keywords.k = parse(key, v)?,
            "keywords.source" => self.keywords.source = parse::<KeywordSource>(key, v)?,

            "fewshot.sample_sizes" => self.fewshot.sample_sizes = parse_list(key, v)?,
            "fewshot.repetitions" => self.fewshot.repetitions = parse(key, v)?,
            "fewshot.eval_size" => self.fewshot.eval_size = parse(key, v)?,
            "fewshot.keyword_counts" => self.keyword_counts = parse_list(key, v)?,
            other => return Err(UsageError(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let t = &self.train;
        let g = &self.generation;
        vec![
            ("seed", self.seed.to_string()),
            ("train_corpus", path_text(&self.train_corpus)),
            ("val_corpus", path_text(&self.val_corpus)),
            ("background", path_text(&self.background)),
            ("output_dir", path_text(&self.output_dir)),
            ("vocab.max_size", self.vocab_max_size.to_string()),
            ("model.d_model", m.d_model.to_string()),
            ("model.n_heads", m.n_heads.to_string()),
            ("model.d_ff", m.d_ff.to_string()),
            ("model.encoder_layers", m.encoder_layers.to_string()),
            ("model.decoder_layers", m.decoder_layers.to_string()),
            ("model.max_positions", m.max_positions.to_string()),
            ("model.half_width", m.half_width.to_string()),
            ("model.dilation", m.dilation.to_string()),
            ("model.layernorm_epsilon", m.layernorm_epsilon.to_string()),
            ("model.decoder_order", m.decoder_order.to_string()),
            ("train.learning_rate", t.learning_rate.to_string()),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.epsilon", t.epsilon.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("generate.num_beams", g.num_beams.to_string()),
            ("generate.max_length", g.max_length.to_string()),
            ("generate.min_length", g.min_length.to_string()),
            ("generate.length_penalty", g.length_penalty.to_string()),
            ("generate.early_stopping", g.early_stopping.to_string()),
            ("generate.no_repeat_ngram", g.no_repeat_ngram.to_string()),
            ("keywords.k", self.keywords.k.to_string()),
            ("keywords.source", self.keywords.source.to_string()),
            ("fewshot.sample_sizes", join(&self.fewshot.sample_sizes)),
            ("fewshot.repetitions", self.fewshot.repetitions.to_string()),
            ("fewshot.eval_size", self.fewshot.eval_size.to_string()),
            ("fewshot.keyword_counts", join(&self.keyword_counts)),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), UsageError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| UsageError(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| UsageError(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_override(&mut self, assignment: &str) -> Result<(), UsageError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| UsageError(format!("override `{assignment}` is not `key=value`")))?;
        self.set(k.trim(), v)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)
            .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).with_context(|| format!("writing {}", path.display()))
    }

    /// Seed for a named purpose, derived from the single run seed.
    pub fn sub_seed(&self, name: &str) -> u64 {
        seed::derive(self.seed, name, &[])
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.sub_seed("shuffle"),
            ..self.train
        }
    }

    pub fn keyword_config(&self) -> KeywordConfig {
        KeywordConfig {
            seed: self.sub_seed("keywords"),
            ..self.keywords
        }
    }

    pub fn fewshot_plan(&self) -> FewShotPlan {
        FewShotPlan {
            base_seed: self.seed,
            ..self.fewshot.clone()
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            vocab_size,
            ..self.model.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        match field {
            Some(p) => Ok(p),
            None => bail!(UsageError(format!("`{key}` is not set (config key or flag)"))),
        }
    }
}
