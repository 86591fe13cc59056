use serde::{Deserialize, Serialize};

use super::optim::{AdamW, OptimConfig, OptimState};
use super::{gather, EpochMetric, StepTrace};
use crate::bench::{he_init, Dataset, Split};
use crate::error::{Error, Result};
use crate::rng::{shuffled_indices, sub_seed};
use crate::tensor::ops::{cross_entropy, cross_entropy_backward};
use crate::vit::{backward_full, forward, forward_cached, ModelConfig, ModelParams};

/// Budget for one supervised training run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBudget {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

/// Result of a training run. Parameters are f32-quantized.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub steps: Vec<StepTrace>,
    pub epochs: Vec<EpochMetric>,
}

/// Top-1 accuracy in percent over a split, evaluated in batches.
/// The result does not depend on `batch_size`.
pub fn evaluate(
    params: &ModelParams,
    cfg: &ModelConfig,
    split: &Split,
    batch_size: usize,
) -> Result<f64> {
    if batch_size == 0 {
        return Err(Error::Input("evaluate requires batch_size >= 1".into()));
    }
    if split.images.is_empty() {
        return Err(Error::Input("evaluate requires a non-empty split".into()));
    }
    let idx: Vec<usize> = (0..split.images.len()).collect();
    let mut hits = 0usize;
    for chunk in idx.chunks(batch_size) {
        let (images, labels) = gather(split, chunk);
        let logits = forward(&images, params, cfg)?;
        hits += logits
            .predictions()
            .iter()
            .zip(&labels)
            .filter(|(p, y)| p == y)
            .count();
    }
    Ok(100.0 * hits as f64 / split.images.len() as f64)
}

pub(crate) fn check_dataset(cfg: &ModelConfig, dataset: &Dataset) -> Result<()> {
    if cfg.classes != dataset.classes
        || cfg.image_size != dataset.image_size
        || cfg.channels != dataset.channels
    {
        return Err(Error::Input(format!(
            "model expects {} classes and {}x{}x{} input, dataset has {} classes and {}x{}x{}",
            cfg.classes,
            cfg.image_size,
            cfg.image_size,
            cfg.channels,
            dataset.classes,
            dataset.image_size,
            dataset.image_size,
            dataset.channels
        )));
    }
    Ok(())
}

/// Cross-entropy training with AdamW and a cosine learning-rate schedule.
/// Batches are reshuffled every epoch from a stream derived off `seed`;
/// a trailing partial batch is kept. Returned parameters are quantized.
pub fn train_model(
    mut params: ModelParams,
    cfg: &ModelConfig,
    dataset: &Dataset,
    budget: &TrainBudget,
    seed: u64,
) -> Result<TrainOutcome> {
    check_dataset(cfg, dataset)?;
    params.validate(cfg)?;
    if budget.batch_size == 0 {
        return Err(Error::Input("training requires batch_size >= 1".into()));
    }
    if budget.epochs == 0 {
        params.quantize_f32();
        return Ok(TrainOutcome { params, steps: Vec::new(), epochs: Vec::new() });
    }
    let n = dataset.train.images.len();
    let batches_per_epoch = n.div_ceil(budget.batch_size);
    let total_steps = budget.epochs * batches_per_epoch;
    let optim = AdamW::new(OptimConfig {
        learning_rate: budget.learning_rate,
        weight_decay: budget.weight_decay,
        total_steps,
    })?;
    let mut state = {
        let tensors = params.tensors();
        let refs: Vec<&_> = tensors.iter().map(|(_, t)| *t).collect();
        OptimState::like(&refs)
    };
    let mut shuffle_rng = crate::rng::seeded(sub_seed(seed, "shuffle"));
    let mut steps = Vec::with_capacity(total_steps);
    let mut epochs = Vec::with_capacity(budget.epochs);
    let mut step = 0usize;
    for epoch in 0..budget.epochs {
        let order = shuffled_indices(&mut shuffle_rng, n);
        let mut top1_sum = 0.0;
        let mut batch_count = 0usize;
        for chunk in order.chunks(budget.batch_size) {
            let (images, labels) = gather(&dataset.train, chunk);
            let (logits, cache) = forward_cached(&images, &params, cfg)?;
            let loss = cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    step,
                    message: format!("non-finite loss {loss}"),
                });
            }
            let top1 = logits.top1(&labels);
            let d_logits = cross_entropy_backward(&logits, &labels)?;
            let grads = backward_full(&d_logits, &cache, &params, cfg)?;
            {
                let grad_tensors = grads.tensors();
                let grad_refs: Vec<&_> = grad_tensors.iter().map(|(_, t)| *t).collect();
                let mut param_refs = params.tensors_mut();
                optim.step(step, &mut param_refs, &grad_refs, &mut state)?;
            }
            steps.push(StepTrace {
                step,
                epoch,
                loss_kl: 0.0,
                loss_ce: loss,
                loss_total: loss,
                top1,
            });
            top1_sum += top1;
            batch_count += 1;
            step += 1;
        }
        let val_top1 = evaluate(&params, cfg, &dataset.val, budget.batch_size)?;
        epochs.push(EpochMetric {
            epoch,
            train_top1: top1_sum / batch_count as f64,
            val_top1,
        });
    }
    params.quantize_f32();
    Ok(TrainOutcome { params, steps, epochs })
}

/// He-initializes a model off a sub-stream of `seed`, then trains it.
pub fn train_teacher(
    cfg: &ModelConfig,
    dataset: &Dataset,
    budget: &TrainBudget,
    seed: u64,
) -> Result<TrainOutcome> {
    let params = he_init(cfg, sub_seed(seed, "init"));
    train_model(params, cfg, dataset, budget, seed)
}
