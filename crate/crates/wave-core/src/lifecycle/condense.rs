use super::decompress::initialize_target;
use super::optim::{AdamW, OptimConfig, OptimState};
use super::train::{check_dataset, evaluate};
use super::{factor_grads, gather, masked_scalers_mut, trainable_direct, trainable_direct_mut, EpochMetric, StepTrace};
use crate::bench::Dataset;
use crate::error::{Error, Result};
use crate::learngene::{
    apply_materialized, materialize, scalers_init, Provenance, ScalerSet, TemplateBank,
};
use crate::rng::{seeded, shuffled_indices, sub_seed};
use crate::tensor::ops::{cross_entropy, cross_entropy_backward, kl_soft, kl_soft_backward};
use crate::tensor::{Logits, Matrix};
use crate::vit::{backward_full, forward, forward_cached, ComponentMask, ModelConfig, ModelParams};

/// Budget and shape of a condensation run.
#[derive(Clone, Debug)]
pub struct CondenseConfig {
    /// Auxiliary model trained against the teacher. Every weight slot is
    /// composed from the bank; its width fixes the scaler shapes.
    pub aux: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Softening temperature for the teacher-matching term.
    pub temperature: f64,
    pub seed: u64,
    /// Recorded in the bank's provenance, typically the teacher checkpoint
    /// hash. Not interpreted.
    pub teacher_tag: String,
}

/// Result of a condensation run. Bank, scalers and the auxiliary model are
/// f32-quantized and mutually consistent.
#[derive(Clone, Debug)]
pub struct CondenseOutcome {
    pub bank: TemplateBank,
    pub scalers: ScalerSet,
    pub aux_params: ModelParams,
    pub steps: Vec<StepTrace>,
    pub epochs: Vec<EpochMetric>,
}

/// Distillation loss parts: temperature-softened teacher matching plus
/// plain cross-entropy on the labels, and the gradient of their sum with
/// respect to the student logits.
#[derive(Clone, Debug)]
pub struct DistillParts {
    pub total: f64,
    pub kl: f64,
    pub ce: f64,
    pub grad: Matrix,
}

pub fn distill_loss(
    z_teacher: &Logits,
    z_student: &Logits,
    labels: &[usize],
    tau: f64,
) -> Result<DistillParts> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::Input(format!("temperature must be positive, got {tau}")));
    }
    let kl = kl_soft(z_teacher, z_student, tau)?;
    let ce = cross_entropy(z_student, labels)?;
    let mut grad = kl_soft_backward(z_teacher, z_student, tau)?;
    grad.add_assign(&cross_entropy_backward(z_student, labels)?);
    Ok(DistillParts { total: kl + ce, kl, ce, grad })
}

/// Condenses a trained teacher into the given template bank by
/// distillation through an auxiliary model. Templates, scalers and the
/// non-templated auxiliary tensors all train; the auxiliary weight slots
/// are recomposed from the factors before every step, so the bank absorbs
/// everything the gradient pushes into the weights. The input bank is not
/// modified; the trained copy is returned.
pub fn condense(
    teacher: &ModelParams,
    teacher_cfg: &ModelConfig,
    bank: &TemplateBank,
    dataset: &Dataset,
    cfg: &CondenseConfig,
) -> Result<CondenseOutcome> {
    teacher.validate(teacher_cfg)?;
    check_dataset(teacher_cfg, dataset)?;
    check_dataset(&cfg.aux, dataset)?;
    if cfg.epochs == 0 {
        return Err(Error::Input("condensation requires epochs >= 1".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Input("condensation requires batch_size >= 1".into()));
    }
    if cfg.temperature <= 0.0 || !cfg.temperature.is_finite() {
        return Err(Error::Input(format!(
            "temperature must be positive, got {}",
            cfg.temperature
        )));
    }
    let mask = ComponentMask::ALL;
    let mut bank = bank.clone();
    let mut scalers = scalers_init(&bank, &cfg.aux, sub_seed(cfg.seed, "scalers"))?;
    let mut aux = initialize_target(&bank, &scalers, &cfg.aux, sub_seed(cfg.seed, "aux_init"))?;
    let n = dataset.train.images.len();
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    // The teacher is frozen, so its logits per training example are
    // computed once and reused every epoch.
    let teacher_logits = {
        let idx: Vec<usize> = (0..n).collect();
        let mut all = Matrix::zeros(n, teacher_cfg.classes);
        for chunk in idx.chunks(cfg.batch_size) {
            let (images, _) = gather(&dataset.train, chunk);
            let z = forward(&images, teacher, teacher_cfg)?;
            for (r, i) in chunk.iter().enumerate() {
                all.copy_row_from(*i, z.0.row(r));
            }
        }
        all
    };
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let optim = AdamW::new(OptimConfig {
        learning_rate: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        total_steps: cfg.epochs * batches_per_epoch,
    })?;
    let mut template_state = {
        let refs: Vec<&_> = bank.tensors().iter().map(|(_, t)| *t).collect();
        OptimState::like(&refs)
    };
    let mut scaler_state = {
        let fg = factor_grads(&ModelParams::zeros(&cfg.aux), &bank, &scalers, mask, false)?;
        let refs: Vec<&_> = fg.scalers.iter().collect();
        OptimState::like(&refs)
    };
    let mut direct_state = OptimState::like(&trainable_direct(&aux, mask));
    let mut shuffle_rng = seeded(sub_seed(cfg.seed, "shuffle"));
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let order = shuffled_indices(&mut shuffle_rng, n);
        let mut top1_sum = 0.0;
        let mut batch_count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (images, labels) = gather(&dataset.train, chunk);
            let mut z_t = Matrix::zeros(chunk.len(), teacher_cfg.classes);
            for (r, i) in chunk.iter().enumerate() {
                z_t.copy_row_from(r, teacher_logits.row(*i));
            }
            let layers = materialize(&bank, &scalers)?;
            apply_materialized(&mut aux, &layers, mask)?;
            let (z_a, cache) = forward_cached(&images, &aux, &cfg.aux)?;
            let parts = distill_loss(&Logits(z_t), &z_a, &labels, cfg.temperature)?;
            if !parts.total.is_finite() {
                return Err(Error::Training {
                    step,
                    message: format!("non-finite loss {}", parts.total),
                });
            }
            let top1 = z_a.top1(&labels);
            let grads = backward_full(&parts.grad, &cache, &aux, &cfg.aux)?;
            let fg = factor_grads(&grads, &bank, &scalers, mask, true)?;
            {
                let mut t_refs = bank.tensors_mut();
                let g_refs: Vec<&_> = fg.templates.iter().collect();
                optim.step(step, &mut t_refs, &g_refs, &mut template_state)?;
            }
            {
                let mut s_refs = masked_scalers_mut(&mut scalers, mask);
                let g_refs: Vec<&_> = fg.scalers.iter().collect();
                optim.step(step, &mut s_refs, &g_refs, &mut scaler_state)?;
            }
            {
                let d_grads = trainable_direct(&grads, mask);
                let mut d_refs = trainable_direct_mut(&mut aux, mask);
                optim.step(step, &mut d_refs, &d_grads, &mut direct_state)?;
            }
            steps.push(StepTrace {
                step,
                epoch,
                loss_kl: parts.kl,
                loss_ce: parts.ce,
                loss_total: parts.total,
                top1,
            });
            top1_sum += top1;
            batch_count += 1;
            step += 1;
        }
        let layers = materialize(&bank, &scalers)?;
        apply_materialized(&mut aux, &layers, mask)?;
        let val_top1 = evaluate(&aux, &cfg.aux, &dataset.val, cfg.batch_size)?;
        epochs.push(EpochMetric {
            epoch,
            train_top1: top1_sum / batch_count as f64,
            val_top1,
        });
    }
    bank.quantize_f32();
    scalers.quantize_f32();
    let layers = materialize(&bank, &scalers)?;
    apply_materialized(&mut aux, &layers, mask)?;
    aux.quantize_f32();
    bank.provenance = Some(Provenance {
        teacher_sha256: cfg.teacher_tag.clone(),
        condense_epochs: cfg.epochs,
        condense_seed: cfg.seed,
    });
    Ok(CondenseOutcome { bank, scalers, aux_params: aux, steps, epochs })
}
