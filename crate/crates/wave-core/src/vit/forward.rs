//! Forward pass. Samples run one at a time; a batch is a loop over samples
//! with logits collected row-wise, so batch composition never changes
//! per-sample arithmetic.

use super::{Image, LayerParams, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::ops::{
    gelu, layer_norm_cached, matmul, matmul_nt, softmax_rows, LayerNormCache,
};
use crate::tensor::{Logits, Matrix};

/// x (n x d_in) * w (d_in x d_out) + b broadcast over rows.
pub(crate) fn linear(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut out = matmul(x, w)?;
    if b.shape() != (1, w.cols()) {
        return Err(Error::Shape(format!(
            "linear: bias is {}x{}, weight has {} output columns",
            b.rows(),
            b.cols(),
            w.cols()
        )));
    }
    let brow = b.row(0);
    for r in 0..out.rows() {
        let orow = out.row_mut(r);
        for j in 0..orow.len() {
            orow[j] += brow[j];
        }
    }
    Ok(out)
}

/// Copies columns [c0, c0+width) into a fresh matrix.
pub(crate) fn col_block(m: &Matrix, c0: usize, width: usize) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), width);
    for r in 0..m.rows() {
        out.row_mut(r).copy_from_slice(&m.row(r)[c0..c0 + width]);
    }
    out
}

/// dst[:, c0..c0+width] += src.
pub(crate) fn add_col_block(dst: &mut Matrix, c0: usize, src: &Matrix) {
    for r in 0..src.rows() {
        let srow = src.row(r);
        let drow = dst.row_mut(r);
        for j in 0..srow.len() {
            drow[c0 + j] += srow[j];
        }
    }
}

/// Attention internals kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct MsaTrace {
    pub qkv: Matrix,
    /// Post-softmax attention per head, tokens x tokens.
    pub head_probs: Vec<Matrix>,
    /// Concatenated per-head outputs before the output projection.
    pub concat: Matrix,
}

/// Multi-head self-attention over already-normalized tokens x (T x D).
/// Fused QKV projection, per-head scaled dot-product, concat, output
/// projection. No norm or residual here; the block adds those.
pub(crate) fn msa_traced(
    x: &Matrix,
    layer: &LayerParams,
    cfg: &ModelConfig,
) -> Result<(Matrix, MsaTrace)> {
    let d = cfg.embed_dim;
    if x.cols() != d {
        return Err(Error::Shape(format!(
            "msa_forward: input has {} columns, embed_dim is {d}",
            x.cols()
        )));
    }
    let qkv = linear(x, &layer.w_qkv, &layer.b_qkv)?;
    let dh = cfg.head_dim;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut concat = Matrix::zeros(x.rows(), d);
    let mut head_probs = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let q = col_block(&qkv, h * dh, dh);
        let k = col_block(&qkv, d + h * dh, dh);
        let v = col_block(&qkv, 2 * d + h * dh, dh);
        let mut scores = matmul_nt(&q, &k)?;
        scores.scale(scale);
        let probs = softmax_rows(&scores);
        let out_h = matmul(&probs, &v)?;
        add_col_block(&mut concat, h * dh, &out_h);
        head_probs.push(probs);
    }
    let out = linear(&concat, &layer.w_proj, &layer.b_proj)?;
    Ok((out, MsaTrace { qkv, head_probs, concat }))
}

/// Multi-head self-attention sublayer (no norm, no residual).
pub fn msa_forward(x: &Matrix, layer: &LayerParams, cfg: &ModelConfig) -> Result<Matrix> {
    Ok(msa_traced(x, layer, cfg)?.0)
}

/// MLP internals kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct MlpTrace {
    pub pre: Matrix,
    pub act: Matrix,
}

pub(crate) fn mlp_traced(x: &Matrix, layer: &LayerParams) -> Result<(Matrix, MlpTrace)> {
    let pre = linear(x, &layer.w_fc1, &layer.b_fc1)?;
    let act = gelu(&pre);
    let out = linear(&act, &layer.w_fc2, &layer.b_fc2)?;
    Ok((out, MlpTrace { pre, act }))
}

/// Block MLP sublayer: fc1, GELU, fc2 (no norm, no residual).
pub fn mlp_forward(x: &Matrix, layer: &LayerParams) -> Result<Matrix> {
    Ok(mlp_traced(x, layer)?.0)
}

/// Cuts an image into patches, projects them, prepends the class token and
/// adds position embeddings. Returns tokens x D. Patches are enumerated
/// row-major over the patch grid; within a patch the flattening order is
/// (y, x, channel).
pub fn patchify_embed(image: &Image, params: &ModelParams, cfg: &ModelConfig) -> Result<Matrix> {
    let (tokens, vectors) = patchify_embed_traced(image, params, cfg)?;
    drop(vectors);
    Ok(tokens)
}

pub(crate) fn patchify_embed_traced(
    image: &Image,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<(Matrix, Matrix)> {
    if image.height != cfg.image_size || image.width != cfg.image_size {
        return Err(Error::Shape(format!(
            "patchify: image is {}x{}, config expects {}x{}",
            image.height, image.width, cfg.image_size, cfg.image_size
        )));
    }
    if image.channels != cfg.channels {
        return Err(Error::Shape(format!(
            "patchify: image has {} channels, config expects {}",
            image.channels, cfg.channels
        )));
    }
    let p = cfg.patch_size;
    let per_side = cfg.image_size / p;
    let pd = cfg.patch_dim();
    let mut vectors = Matrix::zeros(cfg.patches(), pd);
    for py in 0..per_side {
        for px in 0..per_side {
            let row = vectors.row_mut(py * per_side + px);
            let mut idx = 0;
            for y in 0..p {
                for x in 0..p {
                    for c in 0..image.channels {
                        row[idx] = image.get(py * p + y, px * p + x, c);
                        idx += 1;
                    }
                }
            }
        }
    }
    let projected = linear(&vectors, &params.patch_weight, &params.patch_bias)?;
    let d = cfg.embed_dim;
    let mut tokens = Matrix::zeros(cfg.tokens(), d);
    tokens.copy_row_from(0, params.cls.row(0));
    for i in 0..cfg.patches() {
        tokens.copy_row_from(i + 1, projected.row(i));
    }
    if params.pos.shape() != (cfg.tokens(), d) {
        return Err(Error::Shape(format!(
            "patchify: pos table is {}x{}, expected {}x{d}",
            params.pos.rows(),
            params.pos.cols(),
            cfg.tokens()
        )));
    }
    tokens.add_assign(&params.pos);
    Ok((tokens, vectors))
}

/// Everything the backward pass needs from one block.
#[derive(Clone, Debug)]
pub(crate) struct LayerTrace {
    pub ln1: LayerNormCache,
    pub ln1_out: Matrix,
    pub msa: MsaTrace,
    pub ln2: LayerNormCache,
    pub ln2_out: Matrix,
    pub mlp: MlpTrace,
}

#[derive(Clone, Debug)]
pub(crate) struct SampleTrace {
    /// Flattened patch vectors, patches x patch_dim.
    pub patch_vectors: Matrix,
    pub layers: Vec<LayerTrace>,
    pub final_ln: LayerNormCache,
    /// Normalized class token, 1 x D.
    pub cls_out: Matrix,
}

/// Matches a cache to the (config, batch) it was built for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct CacheStamp {
    pub config: ModelConfig,
    pub batch: usize,
}

/// Activations recorded by `forward_cached`, consumed by `backward_full`.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub(crate) samples: Vec<SampleTrace>,
    pub(crate) stamp: CacheStamp,
}

fn sample_forward(
    image: &Image,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<(Vec<f64>, SampleTrace)> {
    let (tokens, patch_vectors) = patchify_embed_traced(image, params, cfg)?;
    let mut x = tokens;
    let mut layers = Vec::with_capacity(cfg.depth);
    for layer in &params.layers {
        let (ln1_out, ln1) = layer_norm_cached(&x, &layer.ln1_gamma, &layer.ln1_beta)?;
        let (att, msa) = msa_traced(&ln1_out, layer, cfg)?;
        x.add_assign(&att);
        let (ln2_out, ln2) = layer_norm_cached(&x, &layer.ln2_gamma, &layer.ln2_beta)?;
        let (mlp_out, mlp) = mlp_traced(&ln2_out, layer)?;
        x.add_assign(&mlp_out);
        layers.push(LayerTrace { ln1, ln1_out, msa, ln2, ln2_out, mlp });
    }
    let (normed, final_ln) = layer_norm_cached(&x, &params.final_gamma, &params.final_beta)?;
    let cls_out = Matrix::from_vec(1, cfg.embed_dim, normed.row(0).to_vec())?;
    let logits_row = linear(&cls_out, &params.head_weight, &params.head_bias)?;
    let trace = SampleTrace { patch_vectors, layers, final_ln, cls_out };
    Ok((logits_row.row(0).to_vec(), trace))
}

/// Batch forward. Returns one logits row per image.
pub fn forward(images: &[Image], params: &ModelParams, cfg: &ModelConfig) -> Result<Logits> {
    Ok(forward_cached(images, params, cfg)?.0)
}

/// Batch forward that records every activation needed by `backward_full`.
pub fn forward_cached(
    images: &[Image],
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<(Logits, ForwardCache)> {
    if images.is_empty() {
        return Err(Error::Input("forward requires at least one image".into()));
    }
    params.validate(cfg)?;
    let mut logits = Matrix::zeros(images.len(), cfg.classes);
    let mut samples = Vec::with_capacity(images.len());
    for (i, image) in images.iter().enumerate() {
        let (row, trace) = sample_forward(image, params, cfg)?;
        logits.copy_row_from(i, &row);
        samples.push(trace);
    }
    let stamp = CacheStamp { config: cfg.clone(), batch: images.len() };
    Ok((Logits(logits), ForwardCache { samples, stamp }))
}
