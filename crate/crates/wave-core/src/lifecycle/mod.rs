//! Training loops for the whole life cycle: direct training, condensation
//! of a teacher into a template bank, and scaler-only decompression of the
//! bank into new models.

mod condense;
mod decompress;
mod optim;
mod train;

pub use condense::{condense, distill_loss, CondenseConfig, CondenseOutcome, DistillParts};
pub use decompress::{
    fit_scalers, fit_scalers_masked, initialize_target, BaseInit, DecompressConfig, FitOutcome,
};
pub use optim::{AdamW, OptimConfig, OptimState};
pub use train::{evaluate, train_model, train_teacher, TrainBudget, TrainOutcome};

use crate::bench::Split;
use crate::error::Result;
use crate::kron::{grad_scalers, grad_templates};
use crate::learngene::{ScalerSet, TemplateBank, TemplateGroup, WeightSlot};
use crate::tensor::Matrix;
use crate::vit::{ComponentMask, Image, ModelParams};

/// One optimizer step of any loop. `loss_kl` is zero for plain
/// cross-entropy training; `top1` is the batch accuracy in percent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepTrace {
    pub step: usize,
    pub epoch: usize,
    pub loss_kl: f64,
    pub loss_ce: f64,
    pub loss_total: f64,
    pub top1: f64,
}

/// Accuracy after one epoch. `train_top1` is the mean of the epoch's batch
/// accuracies; `val_top1` is measured on the validation split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetric {
    pub epoch: usize,
    pub train_top1: f64,
    pub val_top1: f64,
}

/// CSV encoding of a step trace, one row per optimizer step.
pub fn trace_csv(steps: &[StepTrace]) -> String {
    let mut out = String::from("step,epoch,loss_kl,loss_ce,loss_total,top1\n");
    for s in steps {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.step, s.epoch, s.loss_kl, s.loss_ce, s.loss_total, s.top1
        ));
    }
    out
}

/// Clones out a batch by index list.
pub(crate) fn gather(split: &Split, idx: &[usize]) -> (Vec<Image>, Vec<usize>) {
    let images = idx.iter().map(|i| split.images[*i].clone()).collect();
    let labels = idx.iter().map(|i| split.labels[*i]).collect();
    (images, labels)
}

/// Tensors trained directly (by their own gradient) when the masked weight
/// slots are driven by factors instead: everything except the masked
/// per-layer weight matrices. Order is fixed and mirrored by
/// `trainable_direct`.
pub(crate) fn trainable_direct_mut(
    p: &mut ModelParams,
    mask: ComponentMask,
) -> Vec<&mut Matrix> {
    let mut out: Vec<&mut Matrix> =
        vec![&mut p.patch_weight, &mut p.patch_bias, &mut p.cls, &mut p.pos];
    for l in p.layers.iter_mut() {
        out.push(&mut l.ln1_gamma);
        out.push(&mut l.ln1_beta);
        if !mask.att {
            out.push(&mut l.w_qkv);
        }
        out.push(&mut l.b_qkv);
        if !mask.proj {
            out.push(&mut l.w_proj);
        }
        out.push(&mut l.b_proj);
        out.push(&mut l.ln2_gamma);
        out.push(&mut l.ln2_beta);
        if !mask.fc {
            out.push(&mut l.w_fc1);
        }
        out.push(&mut l.b_fc1);
        if !mask.fc {
            out.push(&mut l.w_fc2);
        }
        out.push(&mut l.b_fc2);
    }
    out.push(&mut p.final_gamma);
    out.push(&mut p.final_beta);
    out.push(&mut p.head_weight);
    out.push(&mut p.head_bias);
    out
}

/// Immutable twin of `trainable_direct_mut`, used on gradient containers.
pub(crate) fn trainable_direct(p: &ModelParams, mask: ComponentMask) -> Vec<&Matrix> {
    let mut out: Vec<&Matrix> = vec![&p.patch_weight, &p.patch_bias, &p.cls, &p.pos];
    for l in p.layers.iter() {
        out.push(&l.ln1_gamma);
        out.push(&l.ln1_beta);
        if !mask.att {
            out.push(&l.w_qkv);
        }
        out.push(&l.b_qkv);
        if !mask.proj {
            out.push(&l.w_proj);
        }
        out.push(&l.b_proj);
        out.push(&l.ln2_gamma);
        out.push(&l.ln2_beta);
        if !mask.fc {
            out.push(&l.w_fc1);
        }
        out.push(&l.b_fc1);
        if !mask.fc {
            out.push(&l.w_fc2);
        }
        out.push(&l.b_fc2);
    }
    out.push(&p.final_gamma);
    out.push(&p.final_beta);
    out.push(&p.head_weight);
    out.push(&p.head_bias);
    out
}

/// Scaler matrices of the masked slots, layer-major, slots in fixed order.
/// Mirrored by the gradient order of `factor_grads`.
pub(crate) fn masked_scalers_mut(set: &mut ScalerSet, mask: ComponentMask) -> Vec<&mut Matrix> {
    let mut out = Vec::new();
    for layer in set.layers.iter_mut() {
        if mask.att {
            for s in layer.qkv.iter_mut() {
                out.push(&mut s.0);
            }
        }
        if mask.proj {
            for s in layer.proj.iter_mut() {
                out.push(&mut s.0);
            }
        }
        if mask.fc {
            for s in layer.fc1.iter_mut() {
                out.push(&mut s.0);
            }
            for s in layer.fc2.iter_mut() {
                out.push(&mut s.0);
            }
        }
    }
    out
}

/// Gradients pushed from composed-weight gradients onto the factors.
pub(crate) struct FactorGrads {
    /// Aligned with `TemplateBank::tensors_mut` (att, proj, mlp groups);
    /// empty when templates were not requested.
    pub templates: Vec<Matrix>,
    /// Aligned with `masked_scalers_mut` under the same mask.
    pub scalers: Vec<Matrix>,
}

/// Splits the gradients of the masked composed weights into per-template
/// and per-scaler gradients. Template gradients accumulate over layers and
/// slots in a fixed order.
pub(crate) fn factor_grads(
    model_grads: &ModelParams,
    bank: &TemplateBank,
    scalers: &ScalerSet,
    mask: ComponentMask,
    with_templates: bool,
) -> Result<FactorGrads> {
    let t = bank.template_size();
    let counts = bank.counts();
    let mut t_att = vec![Matrix::zeros(t, t); counts.att];
    let mut t_proj = vec![Matrix::zeros(t, t); counts.proj];
    let mut t_mlp = vec![Matrix::zeros(t, t); counts.mlp];
    let mut scaler_grads = Vec::new();
    for (l, layer) in scalers.layers.iter().enumerate() {
        let upstream = |slot: WeightSlot| -> &Matrix {
            match slot {
                WeightSlot::Qkv => &model_grads.layers[l].w_qkv,
                WeightSlot::Proj => &model_grads.layers[l].w_proj,
                WeightSlot::Fc1 => &model_grads.layers[l].w_fc1,
                WeightSlot::Fc2 => &model_grads.layers[l].w_fc2,
            }
        };
        for slot in WeightSlot::ALL {
            if !slot.in_mask(mask) {
                continue;
            }
            let up = upstream(slot);
            let group = bank.group(slot.template_group());
            scaler_grads.extend(grad_scalers(up, group)?);
            if with_templates {
                let dt = grad_templates(up, layer.slot(slot))?;
                let acc = match slot.template_group() {
                    TemplateGroup::Att => &mut t_att,
                    TemplateGroup::Proj => &mut t_proj,
                    TemplateGroup::Mlp => &mut t_mlp,
                };
                for (a, d) in acc.iter_mut().zip(dt) {
                    a.add_assign(&d);
                }
            }
        }
    }
    let templates = if with_templates {
        t_att.into_iter().chain(t_proj).chain(t_mlp).collect()
    } else {
        Vec::new()
    };
    Ok(FactorGrads { templates, scalers: scaler_grads })
}
