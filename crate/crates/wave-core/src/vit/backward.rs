//! Backward pass over the cached activations. Gradients are returned in a
//! ModelParams-shaped container and accumulated sample by sample in batch
//! order, so the reduction order is fixed.

use super::forward::{col_block, CacheStamp, ForwardCache, LayerTrace, SampleTrace};
use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::ops::{
    gelu_backward, layer_norm_backward, matmul, matmul_nt, matmul_tn, softmax_rows_backward,
};
use crate::tensor::Matrix;

/// Sums rows of m into a 1 x cols matrix (bias gradient).
fn row_sum(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for r in 0..m.rows() {
        let src = m.row(r);
        let dst = out.row_mut(0);
        for j in 0..src.len() {
            dst[j] += src[j];
        }
    }
    out
}

/// Backward of y = x*w + b. Returns dx and accumulates dw, db.
fn linear_backward(
    upstream: &Matrix,
    x: &Matrix,
    w: &Matrix,
    dw: &mut Matrix,
    db: &mut Matrix,
) -> Result<Matrix> {
    dw.add_assign(&matmul_tn(x, upstream)?);
    db.add_assign(&row_sum(upstream));
    matmul_nt(upstream, w)
}

fn msa_backward(
    upstream: &Matrix,
    trace: &LayerTrace,
    layer: &super::LayerParams,
    grads: &mut super::LayerParams,
    cfg: &ModelConfig,
) -> Result<Matrix> {
    let d = cfg.embed_dim;
    let dh = cfg.head_dim;
    let scale = 1.0 / (dh as f64).sqrt();
    // Output projection.
    let d_concat = linear_backward(
        upstream,
        &trace.msa.concat,
        &layer.w_proj,
        &mut grads.w_proj,
        &mut grads.b_proj,
    )?;
    // Per-head attention.
    let qkv = &trace.msa.qkv;
    let mut d_qkv = Matrix::zeros(qkv.rows(), qkv.cols());
    for h in 0..cfg.heads {
        let q = col_block(qkv, h * dh, dh);
        let k = col_block(qkv, d + h * dh, dh);
        let v = col_block(qkv, 2 * d + h * dh, dh);
        let probs = &trace.msa.head_probs[h];
        let d_out_h = col_block(&d_concat, h * dh, dh);
        // out_h = probs * v
        let d_probs = matmul_nt(&d_out_h, &v)?;
        let d_v = matmul_tn(probs, &d_out_h)?;
        // probs = softmax(scores), scores = q k^T * scale
        let mut d_scores = softmax_rows_backward(&d_probs, probs);
        d_scores.scale(scale);
        let d_q = matmul(&d_scores, &k)?;
        let d_k = matmul_tn(&d_scores, &q)?;
        super::forward::add_col_block(&mut d_qkv, h * dh, &d_q);
        super::forward::add_col_block(&mut d_qkv, d + h * dh, &d_k);
        super::forward::add_col_block(&mut d_qkv, 2 * d + h * dh, &d_v);
    }
    // QKV projection takes ln1 output as input.
    linear_backward(&d_qkv, &trace.ln1_out, &layer.w_qkv, &mut grads.w_qkv, &mut grads.b_qkv)
}

fn sample_backward(
    d_logits_row: &[f64],
    trace: &SampleTrace,
    params: &ModelParams,
    grads: &mut ModelParams,
    cfg: &ModelConfig,
) -> Result<()> {
    let d = cfg.embed_dim;
    let tokens = cfg.tokens();
    let d_logits = Matrix::from_vec(1, cfg.classes, d_logits_row.to_vec())?;
    // Head.
    let d_cls = linear_backward(
        &d_logits,
        &trace.cls_out,
        &params.head_weight,
        &mut grads.head_weight,
        &mut grads.head_bias,
    )?;
    // Final norm sees the full token matrix; only the cls row carries grad.
    let mut d_normed = Matrix::zeros(tokens, d);
    d_normed.copy_row_from(0, d_cls.row(0));
    let (mut d_x, dg, db) = layer_norm_backward(&d_normed, &trace.final_ln, &params.final_gamma);
    grads.final_gamma.add_assign(&dg);
    grads.final_beta.add_assign(&db);
    // Blocks in reverse.
    for (layer, ltrace, lgrads) in itertools_rev(&params.layers, &trace.layers, &mut grads.layers) {
        // x_out = x_mid + mlp(ln2(x_mid)); d_x is d_x_out here.
        let d_mlp_out = d_x.clone();
        // fc2.
        let d_act = linear_backward(
            &d_mlp_out,
            &ltrace.mlp.act,
            &layer.w_fc2,
            &mut lgrads.w_fc2,
            &mut lgrads.b_fc2,
        )?;
        let d_pre = gelu_backward(&d_act, &ltrace.mlp.pre);
        let d_ln2_out = linear_backward(
            &d_pre,
            &ltrace.ln2_out,
            &layer.w_fc1,
            &mut lgrads.w_fc1,
            &mut lgrads.b_fc1,
        )?;
        let (d_mid_ln, dg2, db2) = layer_norm_backward(&d_ln2_out, &ltrace.ln2, &layer.ln2_gamma);
        lgrads.ln2_gamma.add_assign(&dg2);
        lgrads.ln2_beta.add_assign(&db2);
        // d_x_mid = residual plus the norm path.
        let mut d_x_mid = d_x;
        d_x_mid.add_assign(&d_mid_ln);
        // x_mid = x_in + msa(ln1(x_in)); d_att_out = d_x_mid.
        let d_ln1_out = msa_backward(&d_x_mid, ltrace, layer, lgrads, cfg)?;
        let (d_in_ln, dg1, db1) = layer_norm_backward(&d_ln1_out, &ltrace.ln1, &layer.ln1_gamma);
        lgrads.ln1_gamma.add_assign(&dg1);
        lgrads.ln1_beta.add_assign(&db1);
        let mut d_x_in = d_x_mid;
        d_x_in.add_assign(&d_in_ln);
        d_x = d_x_in;
    }
    // Embedding: tokens = [cls; patches*W + b] + pos.
    grads.pos.add_assign(&d_x);
    {
        let dst = grads.cls.row_mut(0);
        let src = d_x.row(0);
        for j in 0..d {
            dst[j] += src[j];
        }
    }
    let mut d_proj = Matrix::zeros(cfg.patches(), d);
    for i in 0..cfg.patches() {
        d_proj.copy_row_from(i, d_x.row(i + 1));
    }
    grads.patch_weight.add_assign(&matmul_tn(&trace.patch_vectors, &d_proj)?);
    grads.patch_bias.add_assign(&row_sum(&d_proj));
    Ok(())
}

/// Zips layers, traces and gradient slots in reverse block order.
fn itertools_rev<'a>(
    layers: &'a [super::LayerParams],
    traces: &'a [LayerTrace],
    grads: &'a mut [super::LayerParams],
) -> impl Iterator<Item = (&'a super::LayerParams, &'a LayerTrace, &'a mut super::LayerParams)> {
    layers
        .iter()
        .rev()
        .zip(traces.iter().rev())
        .zip(grads.iter_mut().rev())
        .map(|((l, t), g)| (l, t, g))
}

/// Gradients of a scalar loss w.r.t. every parameter, given the gradient of
/// that loss w.r.t. the logits (batch x classes) and the cache from
/// `forward_cached` on the same batch and parameters.
pub fn backward_full(
    loss_grad: &Matrix,
    cache: &ForwardCache,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<ModelParams> {
    let want = CacheStamp { config: cfg.clone(), batch: cache.samples.len() };
    if cache.stamp != want {
        return Err(Error::State(
            "forward cache was built for a different configuration".into(),
        ));
    }
    if loss_grad.shape() != (cache.samples.len(), cfg.classes) {
        return Err(Error::State(format!(
            "loss gradient is {}x{}, cache holds {} samples of {} classes",
            loss_grad.rows(),
            loss_grad.cols(),
            cache.samples.len(),
            cfg.classes
        )));
    }
    params.validate(cfg)?;
    let mut grads = ModelParams::zeros(cfg);
    // Gradient containers start at zero everywhere, including norm gains.
    for t in grads.tensors_mut() {
        t.scale(0.0);
    }
    for (i, trace) in cache.samples.iter().enumerate() {
        sample_backward(loss_grad.row(i), trace, params, &mut grads, cfg)?;
    }
    Ok(grads)
}
