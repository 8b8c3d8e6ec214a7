//! Adam, the epoch loop with validation-loss model selection, and the
//! zero/few-shot experiment harness.

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;

use crate::beam::{generate, GenerationConfig};
use crate::corpus::{Document, Vocabulary};
use crate::error::{Error, Result};
use crate::keywords::{BackgroundDictionary, KeywordConfig};
use crate::model::{Example, ModelConfig, ModelParams, Seq2Seq};
use crate::pipeline::{self, Prepared};
use crate::rouge::{self, RougeTriple};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 5,
            batch_size: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::validation("Adam betas must lie strictly between 0 and 1"));
        }
        if !(self.epsilon > 0.0) || !(self.learning_rate >= 0.0) {
            return Err(Error::validation("learning rate and epsilon must be non-negative"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::validation("batch size and epochs must be at least 1"));
        }
        Ok(())
    }
}

/// Adam moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        OptimizerState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update over flat slices; `t` is the step number
/// after incrementing (first step is 1).
pub fn adam_update(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &TrainConfig,
) {
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Applies one Adam step to every parameter array. Non-finite gradients abort
/// before anything is modified.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<()> {
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient(name));
    }
    state.t += 1;
    let t = state.t;
    let p = params.tensors_mut();
    let g = grads.tensors();
    let m = state.m.tensors_mut();
    let v = state.v.tensors_mut();
    for ((((_, p), (_, g)), (_, m)), (_, v)) in p.into_iter().zip(g).zip(m).zip(v) {
        adam_update(p.data_mut(), g.data(), m.data_mut(), v.data_mut(), t, cfg);
    }
    Ok(())
}

/// Mean loss and mean gradient over `batch`. Per-example work runs in
/// parallel; accumulation is in example order.
pub fn batch_gradient(model: &Seq2Seq, batch: &[Example]) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    let per_example: Vec<(f64, ModelParams)> = batch
        .par_iter()
        .map(|ex| model.loss_and_gradient(ex))
        .collect::<Result<_>>()?;
    let mut iter = per_example.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        grads.add_scaled(&g, 1.0);
    }
    let inv = 1.0 / batch.len() as f64;
    grads.scale(inv);
    Ok((loss * inv, grads))
}

/// Mean per-example loss.
pub fn mean_loss(model: &Seq2Seq, set: &[Example]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::validation("empty example set"));
    }
    let losses: Vec<f64> = set
        .par_iter()
        .map(|ex| model.loss(ex))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / set.len() as f64)
}

/// Model plus optimizer state.
pub struct Trainer {
    pub model: Seq2Seq,
    pub state: OptimizerState,
    pub config: TrainConfig,
}

impl Trainer {
    pub fn new(model: Seq2Seq, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let state = OptimizerState::new(&model.params);
        Ok(Trainer {
            model,
            state,
            config,
        })
    }

    /// One optimizer step on `batch`; returns the pre-update batch loss.
    pub fn step(&mut self, batch: &[Example]) -> Result<f64> {
        let (loss, grads) = batch_gradient(&self.model, batch)?;
        adam_step(&mut self.model.params, &grads, &mut self.state, &self.config)?;
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Seq2Seq,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    pub steps: u64,
}

impl TrainOutcome {
    /// `epoch,train_loss,val_loss` with a header row.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.log {
            out.push_str(&format!("{},{:.6},{:.6}\n", e.epoch, e.train_loss, e.val_loss));
        }
        out
    }
}

/// 1-based index of the smallest loss; the earliest wins ties.
pub fn select_best_epoch(val_losses: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &l) in val_losses.iter().enumerate() {
        if best.is_none_or(|(_, b)| l < b) {
            best = Some((i, l));
        }
    }
    best.map(|(i, _)| i + 1)
}

/// Fine-tunes for `cfg.epochs` epochs, evaluating validation loss after each,
/// and returns the parameters of the epoch with the lowest validation loss.
pub fn train(
    model: Seq2Seq,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    if val_set.is_empty() {
        return Err(Error::validation("validation set is empty"));
    }
    let mut trainer = Trainer::new(model, *cfg)?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Seq2Seq)> = None;
    for epoch in 1..=cfg.epochs {
        let mut rng = seed::rng(seed::derive(cfg.seed, "shuffle", &[epoch as u64]));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            total += trainer.step(&batch)?;
            batches += 1;
        }
        let val_loss = mean_loss(&trainer.model, val_set)?;
        log::debug!("epoch {epoch}: val loss {val_loss:.6}");
        log.push(EpochLog {
            epoch,
            train_loss: total / batches as f64,
            val_loss,
        });
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, trainer.model.clone()));
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        log,
        steps: trainer.state.t,
    })
}

/// Sample sizes, repetition count and seed for the few-shot protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotPlan {
    pub sample_sizes: Vec<usize>,
    pub repetitions: usize,
    pub base_seed: u64,
    /// Upper bound on the evaluation draw per repetition.
    pub eval_size: usize,
}

impl Default for FewShotPlan {
    fn default() -> Self {
        FewShotPlan {
            sample_sizes: vec![0, 10, 100],
            repetitions: 5,
            base_seed: 0,
            eval_size: 100,
        }
    }
}

impl FewShotPlan {
    pub fn repetition_seed(&self, repetition: usize) -> u64 {
        self.base_seed.wrapping_add(repetition as u64)
    }

    /// Training indices for `(repetition, sample_size)`; a function of the plan
    /// seed, repetition and sample size only.
    pub fn train_draw(&self, repetition: usize, sample_size: usize, available: usize) -> Vec<usize> {
        let s = self.repetition_seed(repetition);
        let mut rng = seed::rng(seed::derive(s, "sample-train", &[sample_size as u64]));
        index::sample(&mut rng, available, sample_size.min(available)).into_vec()
    }

    /// Evaluation indices for `repetition`, shared by every sample size.
    pub fn eval_draw(&self, repetition: usize, available: usize) -> Vec<usize> {
        let s = self.repetition_seed(repetition);
        let mut rng = seed::rng(seed::derive(s, "sample-eval", &[]));
        index::sample(&mut rng, available, self.eval_size.min(available)).into_vec()
    }

    pub fn init_seed(&self, repetition: usize) -> u64 {
        seed::derive(self.repetition_seed(repetition), "init", &[])
    }
}

/// Everything a few-shot run shares across repetitions.
pub struct FewShotData<'a> {
    pub train: &'a [Document],
    pub val: &'a [Document],
    pub vocab: &'a Vocabulary,
    pub background: &'a BackgroundDictionary,
    pub model: &'a ModelConfig,
}

/// Document ids drawn for one `(sample size, repetition)` cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleDraw {
    pub sample_size: usize,
    pub repetition: usize,
    pub train_ids: Vec<String>,
    pub eval_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotRow {
    pub sample_size: usize,
    pub keyword_count: usize,
    /// Mean over repetitions.
    pub mean: RougeTriple,
    pub per_repetition: Vec<RougeTriple>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotReport {
    pub rows: Vec<FewShotRow>,
    pub draws: Vec<SampleDraw>,
}

fn prepare_all(
    docs: &[Document],
    indices: &[usize],
    data: &FewShotData<'_>,
    kw: &KeywordConfig,
) -> Result<Vec<Prepared>> {
    indices
        .iter()
        .map(|&i| pipeline::prepare(&docs[i], data.vocab, data.background, kw, data.model.max_positions))
        .collect()
}

/// Generates summaries for `eval` and returns mean ROUGE against the
/// reference summaries.
pub fn evaluate_generation(
    model: &Seq2Seq,
    eval: &[(&Document, Prepared)],
    vocab: &Vocabulary,
    gen: &GenerationConfig,
) -> Result<RougeTriple> {
    let scores: Vec<RougeTriple> = eval
        .par_iter()
        .map(|(doc, prep)| {
            let out = generate(model, &prep.example.input, &prep.example.globals, gen)?;
            let candidate = pipeline::render(&out, vocab);
            Ok(rouge::score_text(&candidate, &doc.summary.join(" ")))
        })
        .collect::<Result<_>>()?;
    if scores.is_empty() {
        return Err(Error::validation("no evaluation examples"));
    }
    Ok(rouge::mean(&scores))
}

/// Runs the zero/few-shot protocol for one keyword configuration.
///
/// Repetition `r` uses seed `base_seed + r` for its training and evaluation
/// draws and for model initialization, so every keyword configuration sees
/// identical samples. Sample size 0 evaluates the initialized model without
/// any update.
pub fn few_shot_run(
    data: &FewShotData<'_>,
    plan: &FewShotPlan,
    keyword_cfg: &KeywordConfig,
    train_cfg: &TrainConfig,
    gen_cfg: &GenerationConfig,
) -> Result<FewShotReport> {
    if data.val.is_empty() || plan.eval_size == 0 {
        return Err(Error::validation("few-shot evaluation needs at least one example"));
    }
    if plan.repetitions == 0 {
        return Err(Error::validation("few-shot plan needs at least one repetition"));
    }
    train_cfg.validate()?;
    gen_cfg.validate()?;

    let cells: Vec<Vec<(RougeTriple, SampleDraw)>> = (0..plan.repetitions)
        .into_par_iter()
        .map(|rep| {
            let kw = KeywordConfig {
                seed: seed::derive(plan.repetition_seed(rep), "keywords", &[keyword_cfg.seed]),
                ..*keyword_cfg
            };
            let eval_idx = plan.eval_draw(rep, data.val.len());
            let eval_prep = prepare_all(data.val, &eval_idx, data, &kw)?;
            let eval: Vec<(&Document, Prepared)> = eval_idx
                .iter()
                .map(|&i| &data.val[i])
                .zip(eval_prep)
                .collect();
            let val_examples: Vec<Example> = eval.iter().map(|(_, p)| p.example.clone()).collect();

            plan.sample_sizes
                .iter()
                .map(|&size| {
                    let train_idx = plan.train_draw(rep, size, data.train.len());
                    let init = Seq2Seq::new(data.model.clone(), plan.init_seed(rep))?;
                    let model = if train_idx.is_empty() {
                        init
                    } else {
                        let examples: Vec<Example> = prepare_all(data.train, &train_idx, data, &kw)?
                            .into_iter()
                            .map(|p| p.example)
                            .collect();
                        let cfg = TrainConfig {
                            seed: seed::derive(plan.repetition_seed(rep), "shuffle", &[size as u64]),
                            ..*train_cfg
                        };
                        train(init, &examples, &val_examples, &cfg)?.best
                    };
                    let score = evaluate_generation(&model, &eval, data.vocab, gen_cfg)?;
                    let draw = SampleDraw {
                        sample_size: size,
                        repetition: rep,
                        train_ids: train_idx.iter().map(|&i| data.train[i].id.clone()).collect(),
                        eval_ids: eval_idx.iter().map(|&i| data.val[i].id.clone()).collect(),
                    };
                    Ok((score, draw))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(plan.sample_sizes.len());
    let mut draws = Vec::new();
    for (si, &size) in plan.sample_sizes.iter().enumerate() {
        let per_repetition: Vec<RougeTriple> = cells.iter().map(|rep| rep[si].0).collect();
        rows.push(FewShotRow {
            sample_size: size,
            keyword_count: keyword_cfg.k,
            mean: rouge::mean(&per_repetition),
            per_repetition,
        });
    }
    for rep in &cells {
        draws.extend(rep.iter().map(|(_, d)| d.clone()));
    }
    Ok(FewShotReport { rows, draws })
}

/// `sample_size,keyword_count,rouge1,rouge2,rougeL` rows, F-measures ×100 to
/// one decimal, without a header.
pub fn report_rows_csv(rows: &[FewShotRow]) -> String {
    rows.iter()
        .map(|r| {
            format!(
                "{},{},{:.1},{:.1},{:.1}\n",
                r.sample_size,
                r.keyword_count,
                100.0 * r.mean.rouge1.f_measure,
                100.0 * r.mean.rouge2.f_measure,
                100.0 * r.mean.rouge_l.f_measure
            )
        })
        .collect()
}

pub const REPORT_HEADER: &str = "sample_size,keyword_count,rouge1,rouge2,rougeL\n";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_is_learning_rate() {
        let cfg = TrainConfig::default();
        let (mut theta, mut m, mut v) = ([0.0], [0.0], [0.0]);
        adam_update(&mut theta, &[1.0], &mut m, &mut v, 1, &cfg);
        assert!((theta[0] + 5e-5 / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_is_noop() {
        let cfg = TrainConfig::default();
        let (mut theta, mut m, mut v) = ([0.25, -1.0], [0.0; 2], [0.0; 2]);
        adam_update(&mut theta, &[0.0, 0.0], &mut m, &mut v, 1, &cfg);
        assert_eq!(theta, [0.25, -1.0]);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let (mut theta, mut m, mut v) = ([0.5], [0.0], [0.0]);
        for t in 1..=5 {
            adam_update(&mut theta, &[3.0], &mut m, &mut v, t, &cfg);
        }
        assert_eq!(theta, [0.5]);
    }

    #[test]
    fn best_epoch_selection() {
        assert_eq!(select_best_epoch(&[3.0, 2.5, 2.7, 2.4, 2.6]), Some(4));
        assert_eq!(select_best_epoch(&[2.0, 2.0]), Some(1));
        assert_eq!(select_best_epoch(&[]), None);
    }

    #[test]
    fn draws_are_capped_and_seeded() {
        let plan = FewShotPlan::default();
        assert_eq!(plan.train_draw(0, 10, 7).len(), 7);
        assert_eq!(plan.train_draw(2, 10, 50), plan.train_draw(2, 10, 50));
        assert_ne!(plan.train_draw(1, 10, 50), plan.train_draw(2, 10, 50));
        assert!(plan.train_draw(0, 0, 50).is_empty());
        assert_eq!(plan.eval_draw(0, 300).len(), 100);
    }

    #[test]
    fn invalid_train_config() {
        let bad = TrainConfig {
            beta1: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
