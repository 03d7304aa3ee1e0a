//! Training loop: per-dialogue gradient steps with Adam, dialogue-level
//! dataset splits, early stopping on validation weighted F1 with best-state
//! restore, evaluation, and the ablation driver comparing pipeline variants.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::model::{run_dialogue, ModelConfig, ModelParams, Variant};

/// Adam optimizer state, aligned with the model's fixed tensor order.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, sizes: &[usize]) -> Result<Adam> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::invalid("Adam epsilon must be positive"));
        }
        Ok(Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        })
    }

    /// One update over all tensors; `grads` must align with `tensors`.
    pub fn step(&mut self, tensors: &mut [&mut Tensor], grads: &[Vec<f64>]) -> Result<()> {
        if tensors.len() != grads.len() || tensors.len() != self.m.len() {
            return Err(Error::invalid("optimizer state misaligned with parameters"));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, tensor) in tensors.iter_mut().enumerate() {
            let g = &grads[i];
            if g.len() != tensor.numel() {
                return Err(Error::invalid("gradient length misaligned with parameter"));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, value) in tensor.data_mut().iter_mut().enumerate() {
                let gj = g[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *value -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                if !value.is_finite() {
                    return Err(Error::NonFinite { op: "adam" });
                }
            }
        }
        Ok(())
    }
}

/// Dialogue-level split fractions.
#[derive(Debug, Clone, Copy)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { train: 0.7, val: 0.15, test: 0.15, seed: 7 }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("split fractions must lie in [0, 1]"));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("split fractions must sum to 1"));
        }
        if self.train <= 0.0 {
            return Err(Error::invalid("training fraction must be positive"));
        }
        Ok(())
    }
}

/// Shuffle dialogue indices and cut them into train, validation, and test
/// index lists. Fully determined by the split seed.
pub fn split_dialogues(n: usize, cfg: &SplitConfig) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    idx.shuffle(&mut rng);
    let n_val = (n as f64 * cfg.val).round() as usize;
    let n_test = (n as f64 * cfg.test).round() as usize;
    if n_val + n_test >= n {
        return Err(Error::invalid(format!(
            "split leaves no training dialogues (n={n}, val={n_val}, test={n_test})"
        )));
    }
    let n_train = n - n_val - n_test;
    let train = idx[..n_train].to_vec();
    let val = idx[n_train..n_train + n_val].to_vec();
    let test = idx[n_train + n_val..].to_vec();
    Ok((train, val, test))
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Seeds parameter initialization and epoch shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 10,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // zero epochs is legal and returns the initialization unchanged
        if self.patience == 0 {
            return Err(Error::invalid("patience must be positive"));
        }
        Adam::new(self.lr, self.beta1, self.beta2, self.eps, &[]).map(|_| ())
    }
}

/// Loss and validation scores of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_total: f64,
    pub train_contrastive: f64,
    pub train_classification: f64,
    pub val_accuracy: f64,
    pub val_weighted_f1: f64,
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
    /// Epoch (1-based) whose parameters were restored.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Predictions and metrics of one dataset pass.
pub struct EvalOutput {
    pub metrics: Metrics,
    /// Predicted class per utterance, aligned with the dataset's dialogues.
    pub predictions: Vec<Vec<usize>>,
}

/// Forward pass over a dataset without gradient work.
pub fn evaluate(params: &ModelParams, cfg: &ModelConfig, ds: &Dataset) -> Result<EvalOutput> {
    ds.validate()?;
    let mut predictions = Vec::with_capacity(ds.dialogues.len());
    let mut gold = Vec::new();
    let mut pred_flat = Vec::new();
    for d in &ds.dialogues {
        let mut tape = Tape::new();
        let ids = params.register(&mut tape);
        let out = run_dialogue(&mut tape, params, &ids, cfg, d, &ds.scheme)?;
        gold.extend(d.utterances.iter().map(|u| u.label));
        pred_flat.extend(out.predictions.iter().copied());
        predictions.push(out.predictions);
    }
    let metrics = Metrics::from_pairs(&gold, &pred_flat, ds.scheme.n_classes())?;
    Ok(EvalOutput { metrics, predictions })
}

/// Train on `train_set`, validating each epoch on `val_set` (or on the
/// training set when no validation split exists). Keeps the best-scoring
/// parameters and restores them at the end.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    train_set.validate()?;
    if let Some(v) = val_set {
        v.validate()?;
        if v.scheme != train_set.scheme {
            return Err(Error::invalid("validation split uses a different label scheme"));
        }
    }

    let n_speakers = val_set
        .map(|v| v.n_speakers())
        .unwrap_or(0)
        .max(train_set.n_speakers());
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut params = ModelParams::init(
        model_cfg,
        train_set.dims,
        n_speakers,
        train_set.scheme.n_classes(),
        &mut rng,
    )?;
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.numel()).collect();
    let mut opt = Adam::new(train_cfg.lr, train_cfg.beta1, train_cfg.beta2, train_cfg.eps, &sizes)?;

    let eval_set = val_set.unwrap_or(train_set);
    let mut history = Vec::with_capacity(train_cfg.epochs);
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = params.clone();
    let mut stopped_early = false;

    let mut order: Vec<usize> = (0..train_set.dialogues.len()).collect();
    for epoch in 1..=train_cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum_total = 0.0;
        let mut sum_mmd = 0.0;
        let mut sum_cls = 0.0;
        for &di in &order {
            let dialogue = &train_set.dialogues[di];
            let step = (|| -> Result<(f64, f64, f64)> {
                let mut tape = Tape::new();
                let ids = params.register(&mut tape);
                let out = run_dialogue(&mut tape, &params, &ids, model_cfg, dialogue, &train_set.scheme)?;
                let grads = tape.backward(out.total)?;
                let flat: Vec<Vec<f64>> = ids
                    .leaves
                    .iter()
                    .map(|&leaf| {
                        grads
                            .get(leaf)
                            .map(|t| t.data().to_vec())
                            .unwrap_or_else(|| vec![0.0; tape.value(leaf).numel()])
                    })
                    .collect();
                let values = (
                    tape.value(out.total).item(),
                    tape.value(out.contrastive).item(),
                    tape.value(out.classification).item(),
                );
                let mut tensors = params.tensors_mut();
                opt.step(&mut tensors, &flat)?;
                Ok(values)
            })();
            let (t, m, c) = step.map_err(|e| Error::Training {
                epoch,
                dialogue: dialogue.id.clone(),
                source: Box::new(e),
            })?;
            sum_total += t;
            sum_mmd += m;
            sum_cls += c;
        }
        let n_dialogues = train_set.dialogues.len() as f64;
        let eval_out = evaluate(&params, model_cfg, eval_set).map_err(|e| Error::Training {
            epoch,
            dialogue: String::from("<evaluation>"),
            source: Box::new(e),
        })?;
        let stats = EpochStats {
            epoch,
            train_total: sum_total / n_dialogues,
            train_contrastive: sum_mmd / n_dialogues,
            train_classification: sum_cls / n_dialogues,
            val_accuracy: eval_out.metrics.accuracy,
            val_weighted_f1: eval_out.metrics.weighted_f1,
        };
        let f1 = stats.val_weighted_f1;
        history.push(stats);
        if f1 > best_f1 {
            best_f1 = f1;
            best_epoch = epoch;
            best_params = params.clone();
        } else if epoch - best_epoch >= train_cfg.patience {
            stopped_early = true;
            break;
        }
    }

    Ok(TrainOutcome { params: best_params, history, best_epoch, stopped_early })
}

/// One variant's aggregate scores over the ablation seeds.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: Variant,
    pub per_seed_accuracy: Vec<f64>,
    pub per_seed_weighted_f1: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_weighted_f1: f64,
    pub std_weighted_f1: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// The variants an ablation compares, in report order.
pub const ABLATION_VARIANTS: [Variant; 3] =
    [Variant::Full, Variant::NoContrastive, Variant::NoTwoStage];

/// One (variant, seed) run of the ablation grid: split with the seed, train
/// the variant with the same seed, and score on the test split (falling back
/// to validation, then training data). Returns (accuracy, weighted F1).
/// Runs are independent, so callers may execute grid cells concurrently.
pub fn ablation_run(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    split_cfg: &SplitConfig,
    ds: &Dataset,
    variant: Variant,
    seed: u64,
) -> Result<(f64, f64)> {
    let split = SplitConfig { seed, ..*split_cfg };
    let (tr, va, te) = split_dialogues(ds.dialogues.len(), &split)?;
    let train_ds = ds.subset(&tr)?;
    let val_ds = if va.is_empty() { None } else { Some(ds.subset(&va)?) };
    let eval_ds = if !te.is_empty() {
        ds.subset(&te)?
    } else if let Some(v) = &val_ds {
        v.clone()
    } else {
        train_ds.clone()
    };
    let m_cfg = ModelConfig { variant, ..model_cfg.clone() };
    let t_cfg = TrainConfig { seed, ..train_cfg.clone() };
    let outcome = train(&m_cfg, &t_cfg, &train_ds, val_ds.as_ref())?;
    let eval_out = evaluate(&outcome.params, &m_cfg, &eval_ds)?;
    Ok((eval_out.metrics.accuracy, eval_out.metrics.weighted_f1))
}

/// Aggregate per-seed scores into report rows, aligned with
/// [`ABLATION_VARIANTS`]; `scores[v][s]` is variant `v` under seed `s`.
pub fn ablation_rows(scores: &[Vec<(f64, f64)>]) -> Result<Vec<AblationRow>> {
    if scores.len() != ABLATION_VARIANTS.len() || scores.iter().any(|s| s.is_empty()) {
        return Err(Error::invalid("ablation scores misaligned with the variant grid"));
    }
    Ok(ABLATION_VARIANTS
        .iter()
        .zip(scores)
        .map(|(&variant, runs)| {
            let accs: Vec<f64> = runs.iter().map(|r| r.0).collect();
            let f1s: Vec<f64> = runs.iter().map(|r| r.1).collect();
            let (mean_accuracy, std_accuracy) = mean_std(&accs);
            let (mean_weighted_f1, std_weighted_f1) = mean_std(&f1s);
            AblationRow {
                variant,
                per_seed_accuracy: accs,
                per_seed_weighted_f1: f1s,
                mean_accuracy,
                std_accuracy,
                mean_weighted_f1,
                std_weighted_f1,
            }
        })
        .collect())
}

/// Train and score every variant over the given seeds. Each seed fixes one
/// dataset split (shared by all variants) and the initialization, so the
/// comparison is paired.
pub fn ablate(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    split_cfg: &SplitConfig,
    ds: &Dataset,
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::invalid("ablation needs at least one seed"));
    }
    let mut scores = Vec::with_capacity(ABLATION_VARIANTS.len());
    for variant in ABLATION_VARIANTS {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            runs.push(ablation_run(model_cfg, train_cfg, split_cfg, ds, variant, seed)?);
        }
        scores.push(runs);
    }
    ablation_rows(&scores)
}
