use rand_chacha::ChaCha8Rng;

use super::optim::{AdamW, OptimConfig, OptimState};
use super::train::check_dataset;
use super::{factor_grads, gather, masked_scalers_mut, StepTrace};
use crate::bench::{he_init, Dataset};
use crate::error::{Error, Result};
use crate::learngene::{apply_materialized, materialize, scalers_init, ScalerSet, TemplateBank};
use crate::rng::{seeded, shuffled_indices, sub_seed, trunc_normal};
use crate::tensor::ops::{cross_entropy, cross_entropy_backward};
use crate::vit::{backward_full, forward_cached, ComponentMask, ModelConfig, ModelParams};

/// Scheme for the parameters a fit does not take from the bank.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaseInit {
    /// Truncated normal, std 0.02, for every weight outside the bank;
    /// zero biases, identity norms.
    Random,
    /// Full He initialization of the whole model.
    He,
}

/// Budget for fitting fresh scalers against a frozen bank.
#[derive(Clone, Debug)]
pub struct DecompressConfig {
    pub target: ModelConfig,
    pub fit_iterations: usize,
    /// Training examples visible to the fit; the subset is drawn once.
    pub fit_subset_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

/// Result of a scaler fit. Scalers and parameters are f32-quantized, and
/// the masked weight slots of `params` equal the quantized recomposition
/// of the returned factors.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub scalers: ScalerSet,
    pub params: ModelParams,
    pub steps: Vec<StepTrace>,
}

fn trunc02(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> crate::tensor::Matrix {
    trunc_normal(rng, rows, cols, 0.02)
}

/// Random scaffold: std-0.02 truncated normal for the patch embedding,
/// class token, position table, head, and any weight slot not covered by
/// `mask`; biases zero, norms identity. One sample stream, fixed order.
fn random_base(cfg: &ModelConfig, mask: ComponentMask, seed: u64) -> ModelParams {
    let d = cfg.embed_dim;
    let mut params = ModelParams::zeros(cfg);
    let mut rng = seeded(seed);
    params.patch_weight = trunc02(&mut rng, cfg.patch_dim(), d);
    params.cls = trunc02(&mut rng, 1, d);
    params.pos = trunc02(&mut rng, cfg.tokens(), d);
    for layer in params.layers.iter_mut() {
        if !mask.att {
            layer.w_qkv = trunc02(&mut rng, d, 3 * d);
        }
        if !mask.proj {
            layer.w_proj = trunc02(&mut rng, d, d);
        }
        if !mask.fc {
            layer.w_fc1 = trunc02(&mut rng, d, cfg.mlp_hidden);
            layer.w_fc2 = trunc02(&mut rng, cfg.mlp_hidden, d);
        }
    }
    params.head_weight = trunc02(&mut rng, d, cfg.classes);
    params
}

/// Builds a ready-to-train model from a bank and a fitted scaler set:
/// composed weights in every templated slot, random scaffold elsewhere.
pub fn initialize_target(
    bank: &TemplateBank,
    scalers: &ScalerSet,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<ModelParams> {
    scalers.validate(bank, cfg)?;
    let mut params = random_base(cfg, ComponentMask::ALL, seed);
    let layers = materialize(bank, scalers)?;
    apply_materialized(&mut params, &layers, ComponentMask::ALL)?;
    params.quantize_f32();
    Ok(params)
}

/// `fit_scalers_masked` with every slot templated and a random scaffold.
pub fn fit_scalers(
    bank: &TemplateBank,
    cfg: &DecompressConfig,
    dataset: &Dataset,
) -> Result<FitOutcome> {
    fit_scalers_masked(bank, cfg, dataset, ComponentMask::ALL, BaseInit::Random)
}

/// Fits fresh scalers for the masked weight slots against a frozen bank.
/// Masked slots are recomposed from the factors before every step and only
/// their scalers receive composed-weight gradients; every other parameter
/// keeps its initial draw. Freezing the base matters: the fitted scalers
/// must carry signal on their own, because the model they are later
/// delivered into rebuilds the same base from the seed rather than any
/// state the fit evolved. The bank itself is never modified.
pub fn fit_scalers_masked(
    bank: &TemplateBank,
    cfg: &DecompressConfig,
    dataset: &Dataset,
    mask: ComponentMask,
    base: BaseInit,
) -> Result<FitOutcome> {
    if !mask.any() {
        return Err(Error::Input(
            "scaler fit requires at least one templated component".into(),
        ));
    }
    check_dataset(&cfg.target, dataset)?;
    if cfg.batch_size == 0 {
        return Err(Error::Input("scaler fit requires batch_size >= 1".into()));
    }
    if cfg.fit_subset_size == 0 {
        return Err(Error::Input("scaler fit requires fit_subset_size >= 1".into()));
    }
    let mut scalers = scalers_init(bank, &cfg.target, sub_seed(cfg.seed, "scalers"))?;
    let mut params = match base {
        BaseInit::Random => random_base(&cfg.target, mask, sub_seed(cfg.seed, "init")),
        BaseInit::He => he_init(&cfg.target, sub_seed(cfg.seed, "init")),
    };
    let mut steps = Vec::with_capacity(cfg.fit_iterations);
    if cfg.fit_iterations > 0 {
        let optim = AdamW::new(OptimConfig {
            learning_rate: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            total_steps: cfg.fit_iterations,
        })?;
        let mut scaler_state = {
            let fg = factor_grads(&ModelParams::zeros(&cfg.target), bank, &scalers, mask, false)?;
            let refs: Vec<&_> = fg.scalers.iter().collect();
            OptimState::like(&refs)
        };
        let n = dataset.train.images.len();
        let m = cfg.fit_subset_size.min(n);
        let subset: Vec<usize> = if m == n {
            (0..n).collect()
        } else {
            let mut rng = seeded(sub_seed(cfg.seed, "subset"));
            shuffled_indices(&mut rng, n)[..m].to_vec()
        };
        let mut shuffle_rng = seeded(sub_seed(cfg.seed, "shuffle"));
        let mut order: Vec<usize> = Vec::new();
        let mut pos = 0usize;
        let mut pass = 0usize;
        for step in 0..cfg.fit_iterations {
            if pos >= order.len() {
                let perm = shuffled_indices(&mut shuffle_rng, m);
                order = perm.iter().map(|i| subset[*i]).collect();
                pos = 0;
                pass += 1;
            }
            let end = (pos + cfg.batch_size).min(order.len());
            let chunk = &order[pos..end];
            pos = end;
            let (images, labels) = gather(&dataset.train, chunk);
            let layers = materialize(bank, &scalers)?;
            apply_materialized(&mut params, &layers, mask)?;
            let (logits, cache) = forward_cached(&images, &params, &cfg.target)?;
            let loss = cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Training { step, message: format!("non-finite loss {loss}") });
            }
            let top1 = logits.top1(&labels);
            let d_logits = cross_entropy_backward(&logits, &labels)?;
            let grads = backward_full(&d_logits, &cache, &params, &cfg.target)?;
            let fg = factor_grads(&grads, bank, &scalers, mask, false)?;
            {
                let mut slots = masked_scalers_mut(&mut scalers, mask);
                let grad_refs: Vec<&_> = fg.scalers.iter().collect();
                optim.step(step, &mut slots, &grad_refs, &mut scaler_state)?;
            }
            steps.push(StepTrace {
                step,
                epoch: pass - 1,
                loss_kl: 0.0,
                loss_ce: loss,
                loss_total: loss,
                top1,
            });
        }
    }
    scalers.quantize_f32();
    let layers = materialize(bank, &scalers)?;
    apply_materialized(&mut params, &layers, mask)?;
    params.quantize_f32();
    Ok(FitOutcome { scalers, params, steps })
}
