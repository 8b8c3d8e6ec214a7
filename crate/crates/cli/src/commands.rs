use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kwattn::corpus::{self, Document, Vocabulary};
use kwattn::keywords::{self, BackgroundDictionary, KeywordConfig, KeywordSource};
use kwattn::model::{checkpoint, Example};
use kwattn::pattern::{build_pattern, PatternKind, PatternSpec};
use kwattn::train::{self, FewShotData, FewShotRow, REPORT_HEADER};
use kwattn::{beam, pipeline, rouge, Seq2Seq};

use crate::config::{ExperimentConfig, UsageError};
use crate::ConfigArgs;

const VOCAB_FILE: &str = "vocab.txt";
const CHECKPOINT_DIR: &str = "checkpoint";
const RESOLVED_FILE: &str = "resolved.conf";

fn resolve(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(b) = &args.background {
        cfg.background = Some(b.clone());
    }
    Ok(cfg)
}

fn load_corpus(path: &Path) -> Result<Vec<Document>> {
    corpus::load_corpus(path).with_context(|| format!("reading corpus {}", path.display()))
}

fn load_background(path: &Path) -> Result<BackgroundDictionary> {
    BackgroundDictionary::load(path).with_context(|| format!("reading background {}", path.display()))
}

fn needs_background(source: KeywordSource) -> bool {
    matches!(source, KeywordSource::Tfidf | KeywordSource::Oracle)
}

/// The configured background dictionary, or an empty one when the keyword
/// source does not consult it.
fn background_for(cfg: &ExperimentConfig, kw_counts: &[usize]) -> Result<BackgroundDictionary> {
    match &cfg.background {
        Some(p) => load_background(p),
        None if needs_background(cfg.keywords.source) && kw_counts.iter().any(|&k| k > 0) => {
            bail!(UsageError(format!(
                "keyword source `{}` needs a background dictionary (--background)",
                cfg.keywords.source
            )))
        }
        None => Ok(BackgroundDictionary::default()),
    }
}

fn output_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.require(&cfg.output_dir, "output_dir")?.to_path_buf();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn sibling_conf(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".resolved.conf");
    PathBuf::from(name)
}

fn prepare_examples(
    docs: &[Document],
    vocab: &Vocabulary,
    bg: &BackgroundDictionary,
    kw: &KeywordConfig,
    max_positions: usize,
) -> Result<Vec<Example>> {
    docs.iter()
        .map(|d| {
            pipeline::prepare(d, vocab, bg, kw, max_positions)
                .map(|p| p.example)
                .with_context(|| format!("preparing document `{}`", d.id))
        })
        .collect()
}

pub fn train(
    args: &ConfigArgs,
    train: Option<PathBuf>,
    val: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = resolve(args)?;
    cfg.train_corpus = train.or(cfg.train_corpus);
    cfg.val_corpus = val.or(cfg.val_corpus);
    cfg.output_dir = out.or(cfg.output_dir);

    let train_docs = load_corpus(cfg.require(&cfg.train_corpus, "train_corpus")?)?;
    let val_docs = load_corpus(cfg.require(&cfg.val_corpus, "val_corpus")?)?;
    let bg = background_for(&cfg, &[cfg.keywords.k])?;
    let all: Vec<Document> = train_docs.iter().chain(&val_docs).cloned().collect();
    let vocab = corpus::build_vocabulary(&all, cfg.vocab_max_size);
    let model_cfg = cfg.model_config(vocab.len())?;
    let kw = cfg.keyword_config();
    let train_set = prepare_examples(&train_docs, &vocab, &bg, &kw, model_cfg.max_positions)?;
    let val_set = prepare_examples(&val_docs, &vocab, &bg, &kw, model_cfg.max_positions)?;

    let dir = output_dir(&cfg)?;
    let model = Seq2Seq::new(model_cfg, cfg.sub_seed("init"))?;
    log::info!(
        "training {} parameters on {} examples",
        model.params.num_parameters(),
        train_set.len()
    );
    let outcome = train::train(model, &train_set, &val_set, &cfg.train_config())?;

    checkpoint::save(&outcome.best, dir.join(CHECKPOINT_DIR))?;
    write(&dir.join(VOCAB_FILE), &(vocab.words().join("\n") + "\n"))?;
    write(&dir.join("loss.csv"), &outcome.log_csv())?;
    cfg.write(&dir.join(RESOLVED_FILE))?;
    println!(
        "best epoch {} of {} ({} steps); wrote {}",
        outcome.best_epoch,
        outcome.log.len(),
        outcome.steps,
        dir.display()
    );
    Ok(())
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
    Ok(Vocabulary::from_words(text.lines().filter(|l| !l.is_empty()))?)
}

pub fn generate(args: &ConfigArgs, model_dir: &Path, corpus_path: &Path, out: &Path) -> Result<()> {
    if out == corpus_path {
        bail!(UsageError("--out must differ from --corpus".into()));
    }
    let mut cfg = resolve(args)?;
    let docs = load_corpus(corpus_path)?;
    let model = checkpoint::load(model_dir.join(CHECKPOINT_DIR))
        .with_context(|| format!("loading model from {}", model_dir.display()))?;
    let vocab = load_vocab(&model_dir.join(VOCAB_FILE))?;
    if vocab.len() != model.config.vocab_size {
        bail!(
            "vocabulary has {} entries but the checkpoint expects {}",
            vocab.len(),
            model.config.vocab_size
        );
    }
    cfg.model = model.config.clone();
    let bg = background_for(&cfg, &[cfg.keywords.k])?;
    let kw = cfg.keyword_config();

    let mut lines = String::new();
    for doc in &docs {
        let prep = pipeline::prepare(doc, &vocab, &bg, &kw, model.config.max_positions)
            .with_context(|| format!("preparing document `{}`", doc.id))?;
        let tokens = beam::generate(&model, &prep.example.input, &prep.example.globals, &cfg.generation)?;
        let line = serde_json::json!({ "id": doc.id, "generated": pipeline::render(&tokens, &vocab) });
        lines.push_str(&line.to_string());
        lines.push('\n');
    }
    write(out, &lines)?;
    cfg.write(&sibling_conf(out))?;
    log::info!("generated {} summaries", docs.len());
    Ok(())
}

/// `id -> text` from JSON lines; the text is `generated` if present, else
/// `summary`.
fn read_texts(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(line)
            .with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        let id = v["id"]
            .as_str()
            .with_context(|| format!("{}: line {}: missing string `id`", path.display(), i + 1))?;
        let body = v
            .get("generated")
            .or_else(|| v.get("summary"))
            .and_then(|s| s.as_str())
            .with_context(|| {
                format!("{}: line {}: needs `generated` or `summary`", path.display(), i + 1)
            })?;
        out.push((id.to_string(), body.to_string()));
    }
    Ok(out)
}

pub fn evaluate(cand: &Path, reference: &Path) -> Result<()> {
    let candidates: HashMap<String, String> = read_texts(cand)?.into_iter().collect();
    let refs = read_texts(reference)?;
    let mut pairs = Vec::with_capacity(refs.len());
    for (id, r) in &refs {
        let c = candidates
            .get(id)
            .with_context(|| format!("{}: no candidate for id `{id}`", cand.display()))?;
        pairs.push((rouge::tokenize(c), rouge::tokenize(r)));
    }
    if candidates.len() > refs.len() {
        log::warn!("{} candidates have no reference", candidates.len() - refs.len());
    }
    let s = rouge::corpus_rouge(&pairs)?;
    println!(
        "R-1/R-2/R-L: {:.1}/{:.1}/{:.1}",
        100.0 * s.rouge1.f_measure,
        100.0 * s.rouge2.f_measure,
        100.0 * s.rouge_l.f_measure
    );
    Ok(())
}

pub fn keywords(
    input: &Path,
    background: Option<&Path>,
    summary: Option<&Path>,
    k: usize,
    source: &str,
    seed: u64,
) -> Result<()> {
    let source: KeywordSource = source.parse().map_err(|e| UsageError(format!("{e}")))?;
    let read_words = |p: &Path| -> Result<Vec<String>> {
        let text = fs::read_to_string(p).with_context(|| format!("{}", p.display()))?;
        Ok(corpus::split_words(&text))
    };
    let doc = read_words(input)?;
    let summary = match summary {
        Some(p) => read_words(p)?,
        None if source == KeywordSource::Oracle => {
            bail!(UsageError("the oracle source needs --summary".into()))
        }
        None => Vec::new(),
    };
    let bg = match background {
        Some(p) => load_background(p)?,
        None if needs_background(source) => {
            bail!(UsageError(format!("keyword source `{source}` needs --background")))
        }
        None => BackgroundDictionary::default(),
    };
    let set = keywords::select(&doc, &summary, &bg, &KeywordConfig { k, source, seed });
    let mut out = String::new();
    for (i, w) in set.words.iter().enumerate() {
        match set.scores.get(i) {
            Some(s) => writeln!(out, "{w}\t{s:.6}")?,
            None => writeln!(out, "{w}\t-")?,
        }
    }
    print!("{out}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn pattern(
    kind: &str,
    n: usize,
    half_width: usize,
    dilation: usize,
    globals: Vec<usize>,
    random_globals: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let kind: PatternKind = kind.parse().map_err(|e| UsageError(format!("{e}")))?;
    let spec = PatternSpec {
        kind,
        n,
        half_width,
        dilation,
        globals: globals.clone(),
        random_globals,
        seed,
    };
    let pattern = build_pattern(&spec).map_err(|e| UsageError(e.to_string()))?;
    pattern.export_mask(out)?;
    let list = globals.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
    let conf = format!(
        "kind = {kind}\nn = {n}\nhalf_width = {half_width}\ndilation = {dilation}\n\
         globals = {list}\nrandom_globals = {random_globals}\nseed = {seed}\n"
    );
    write(&sibling_conf(out), &conf)?;
    println!("{} attended pairs of {}", pattern.pair_count(), n * n);
    Ok(())
}

fn draws_csv_line(keyword_count: usize, d: &train::SampleDraw) -> String {
    format!(
        "{keyword_count},{},{},{},{}\n",
        d.sample_size,
        d.repetition,
        d.train_ids.join(" "),
        d.eval_ids.join(" ")
    )
}

pub fn fewshot(
    args: &ConfigArgs,
    train_path: Option<PathBuf>,
    val_path: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = resolve(args)?;
    cfg.train_corpus = train_path.or(cfg.train_corpus);
    cfg.val_corpus = val_path.or(cfg.val_corpus);
    cfg.output_dir = out.or(cfg.output_dir);
    if cfg.keyword_counts.is_empty() {
        bail!(UsageError("fewshot.keyword_counts is empty".into()));
    }

    let train_docs = load_corpus(cfg.require(&cfg.train_corpus, "train_corpus")?)?;
    let val_docs = load_corpus(cfg.require(&cfg.val_corpus, "val_corpus")?)?;
    let bg = background_for(&cfg, &cfg.keyword_counts)?;
    let all: Vec<Document> = train_docs.iter().chain(&val_docs).cloned().collect();
    let vocab = corpus::build_vocabulary(&all, cfg.vocab_max_size);
    let model_cfg = cfg.model_config(vocab.len())?;
    let dir = output_dir(&cfg)?;

    let data = FewShotData {
        train: &train_docs,
        val: &val_docs,
        vocab: &vocab,
        background: &bg,
        model: &model_cfg,
    };
    let plan = cfg.fewshot_plan();
    let mut rows: Vec<FewShotRow> = Vec::new();
    let mut draws = String::from("keyword_count,sample_size,repetition,train_ids,eval_ids\n");
    for &k in &cfg.keyword_counts {
        let kw = KeywordConfig {
            k,
            ..cfg.keyword_config()
        };
        log::info!("keyword count {k}");
        let report = train::few_shot_run(&data, &plan, &kw, &cfg.train_config(), &cfg.generation)?;
        for d in &report.draws {
            log::info!(
                "k={k} size={} rep={} train ids: {}",
                d.sample_size,
                d.repetition,
                d.train_ids.join(" ")
            );
            draws.push_str(&draws_csv_line(k, d));
        }
        rows.extend(report.rows);
    }
    rows.sort_by_key(|r| r.sample_size);
    let report = format!("{REPORT_HEADER}{}", train::report_rows_csv(&rows));

    write(&dir.join("report.csv"), &report)?;
    write(&dir.join("draws.csv"), &draws)?;
    cfg.write(&dir.join(RESOLVED_FILE))?;
    print!("{report}");
    Ok(())
}
