use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cosine_lr, AdamW, LossBreakdown, Mode, Model, ModelConfig, Targets};
use crate::augment::{augment_train, AugmentConfig, TrainSample};
use crate::error::{Error, Result};
use crate::imagecore::{LabeledInstances, Mask, Raster};
use crate::loss::{class_weights, ClassPrior, LossWeights};
use crate::metrics::evaluate;
use crate::postprocess::{postprocess, PostprocessConfig};
use crate::rng;
use crate::sampler::{class_fractions, draw_epoch, occupancy, sampling_distribution, SamplingDistribution};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Draw images by class-occupancy importance instead of uniformly.
    pub importance_sampling: bool,
    /// Weight the semantic loss by `(1 - prior)^rho` instead of uniformly.
    pub loss_weighting: bool,
    pub rho: f64,
    pub smoothing: f64,
    pub focal_gamma: Option<f64>,
    pub prior_decay: f64,
    pub augment: AugmentConfig,
    /// Validate every this many steps; 0 validates only after the last step.
    pub eval_every: usize,
    pub postprocess: PostprocessConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            lr: 3e-3,
            lr_min: 1e-5,
            weight_decay: 1e-4,
            seed: 0,
            importance_sampling: true,
            loss_weighting: true,
            rho: 3.0,
            smoothing: 0.05,
            focal_gamma: None,
            prior_decay: 0.99,
            augment: AugmentConfig::default(),
            eval_every: 0,
            postprocess: PostprocessConfig::default(),
        }
    }
}

/// One training-log line; `val_mpq` is set on validation steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub loss: LossBreakdown<f64>,
    pub val_mpq: Option<f64>,
}

impl LogRow {
    pub const CSV_HEADER: &'static str = "step,lr,semantic,instance_ce,vector_l2,total,val_mpq";

    pub fn csv(&self) -> String {
        let l = &self.loss;
        let v = self.val_mpq.map_or(String::new(), |v| format!("{v:.6}"));
        format!("{},{:e},{:.6},{:.6},{:.6},{:.6},{}", self.step, self.lr, l.semantic, l.instance_ce, l.vector_l2, l.total, v)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Parameters with the best validation mPQ+ (the last ones without a
    /// validation set).
    pub model: Model<T>,
    pub best_step: usize,
    pub best_val_mpq: Option<f64>,
    pub log: Vec<LogRow>,
    pub prior: ClassPrior<T>,
}

/// Mean validation mPQ+ of eval-mode predictions after post-processing.
pub fn validation_mpq<T: Scalar>(model: &Model<T>, val: &[(Raster<T>, LabeledInstances)], pp: &PostprocessConfig) -> Result<f64> {
    let preds: Vec<Result<LabeledInstances>> = val
        .par_iter()
        .map(|(img, _)| {
            let (sem, tri) = model.probabilities(img, Mode::Eval)?;
            postprocess(&sem, &tri, pp)
        })
        .collect();
    let mut pairs = Vec::with_capacity(val.len());
    for (p, (_, gt)) in preds.into_iter().zip(val) {
        pairs.push((p?, gt.clone()));
    }
    Ok(evaluate(&pairs, model.num_classes(), None)?.pq.mpq)
}

fn to_f64<T: Scalar>(l: &LossBreakdown<T>) -> LossBreakdown<f64> {
    LossBreakdown { semantic: l.semantic.as_f64(), instance_ce: l.instance_ce.as_f64(), vector_l2: l.vector_l2.as_f64(), total: l.total.as_f64() }
}

/// Trains a fresh model. Each epoch draws `len(train)` image indices from the
/// sampling distribution; every step augments a batch, updates the class
/// prior with the batch occupancy, and takes one AdamW step at the cosine
/// learning rate.
pub fn train<T: Scalar>(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train: &[TrainSample<T>],
    val: &[(Raster<T>, LabeledInstances)],
) -> Result<TrainOutcome<T>> {
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut model = Model::<T>::new(model_cfg.clone())?;
    let c = model.num_classes();
    let maps: Vec<_> = train.iter().map(|s| s.semantic.clone()).collect();
    let occ = occupancy::<f64>(&maps, c)?;
    let dist = if cfg.importance_sampling { sampling_distribution(&occ)? } else { SamplingDistribution::uniform(train.len()) };
    let all: Vec<usize> = (0..train.len()).collect();
    let mut prior = ClassPrior::new(occ.mean_of(&all).into_iter().map(T::lit).collect(), T::lit(cfg.prior_decay))?;
    let mut opt = AdamW::<T>::new(model.num_params(), cfg.weight_decay);

    let mut queue: Vec<usize> = Vec::new();
    let mut epoch = 0u64;
    let mut log = Vec::with_capacity(cfg.steps);
    let mut best: Option<(f64, usize, Model<T>)> = None;
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if queue.is_empty() {
                queue = draw_epoch(&dist, train.len(), rng::derive(cfg.seed, epoch))?;
                queue.reverse();
                epoch += 1;
            }
            batch.push(queue.pop().expect("queue refilled"));
        }
        let samples = batch
            .iter()
            .enumerate()
            .map(|(j, &n)| augment_train(&train[n], &cfg.augment, rng::derive(cfg.seed ^ 0xa5a5, (step * cfg.batch_size + j) as u64)))
            .collect::<Result<Vec<_>>>()?;
        let mut batch_occ = vec![T::zero(); c];
        for s in &samples {
            for (acc, v) in batch_occ.iter_mut().zip(class_fractions::<T>(&s.semantic, c)?) {
                *acc += v / T::from_usize_lossy(samples.len());
            }
        }
        prior = prior.ema_update(&batch_occ)?;
        let smoothing = T::lit(cfg.smoothing);
        let mut weights = if cfg.loss_weighting { class_weights(&prior, T::lit(cfg.rho), smoothing) } else { LossWeights::uniform(c, smoothing) };
        weights.focal_gamma = cfg.focal_gamma.map(T::lit);

        let fgs: Vec<Mask> = samples.iter().map(|s| s.instances.foreground()).collect();
        let items: Vec<_> = samples
            .iter()
            .zip(&fgs)
            .enumerate()
            .map(|(j, (s, fg))| {
                let t = Targets { semantic: &s.semantic, three_label: &s.three_label, vectors: &s.vectors, foreground: fg };
                (&s.image, t, Mode::Train(rng::derive(cfg.seed ^ 0x5a5a, (step * cfg.batch_size + j) as u64)))
            })
            .collect();
        let (loss, grad) = model.backward_batch(&items, &weights).map_err(|e| match e {
            Error::NonFinite(_) => Error::Divergence { step, detail: format!("non-finite network output: {e}") },
            other => other,
        })?;
        if !loss.total.is_finite() || grad.params().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step, detail: format!("non-finite loss or gradient (loss {:?})", to_f64(&loss)) });
        }
        let lr = cosine_lr(step, cfg.steps, cfg.lr, cfg.lr_min);
        opt.update(&mut model, &grad, lr);

        let last = step + 1 == cfg.steps;
        let validate = !val.is_empty() && (last || (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0));
        let val_mpq = if validate { Some(validation_mpq(&model, val, &cfg.postprocess)?) } else { None };
        if let Some(score) = val_mpq {
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, step, model.clone()));
            }
        }
        log.push(LogRow { step, lr, loss: to_f64(&loss), val_mpq });
    }
    let (model, best_step, best_val_mpq) = match best {
        Some((score, step, m)) => (m, step, Some(score)),
        None => (model, cfg.steps.saturating_sub(1), None),
    };
    Ok(TrainOutcome { model, best_step, best_val_mpq, log, prior })
}
