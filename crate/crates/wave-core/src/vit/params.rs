//! Parameter containers with a stable named-tensor enumeration.
//!
//! The enumeration order is the contract for serialization, optimizer state
//! and gradient containers: `tensors` and `tensors_mut` walk the exact same
//! sequence.

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// One transformer block.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub ln1_gamma: Matrix,
    pub ln1_beta: Matrix,
    /// Fused attention input projection, D x 3D (query, key, value).
    pub w_qkv: Matrix,
    pub b_qkv: Matrix,
    /// Attention output projection, D x D.
    pub w_proj: Matrix,
    pub b_proj: Matrix,
    pub ln2_gamma: Matrix,
    pub ln2_beta: Matrix,
    /// Block MLP, D x D' then D' x D.
    pub w_fc1: Matrix,
    pub b_fc1: Matrix,
    pub w_fc2: Matrix,
    pub b_fc2: Matrix,
}

impl LayerParams {
    pub fn zeros(cfg: &ModelConfig) -> LayerParams {
        let d = cfg.embed_dim;
        let h = cfg.mlp_hidden;
        LayerParams {
            ln1_gamma: Matrix::filled(1, d, 1.0),
            ln1_beta: Matrix::zeros(1, d),
            w_qkv: Matrix::zeros(d, 3 * d),
            b_qkv: Matrix::zeros(1, 3 * d),
            w_proj: Matrix::zeros(d, d),
            b_proj: Matrix::zeros(1, d),
            ln2_gamma: Matrix::filled(1, d, 1.0),
            ln2_beta: Matrix::zeros(1, d),
            w_fc1: Matrix::zeros(d, h),
            b_fc1: Matrix::zeros(1, h),
            w_fc2: Matrix::zeros(h, d),
            b_fc2: Matrix::zeros(1, d),
        }
    }
}

/// All parameters of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// Patch embedding, (patch_size^2 * channels) x D.
    pub patch_weight: Matrix,
    pub patch_bias: Matrix,
    /// Class token, 1 x D.
    pub cls: Matrix,
    /// Learned position embeddings, tokens x D.
    pub pos: Matrix,
    pub layers: Vec<LayerParams>,
    pub final_gamma: Matrix,
    pub final_beta: Matrix,
    /// Classifier head, D x classes.
    pub head_weight: Matrix,
    pub head_bias: Matrix,
}

impl ModelParams {
    /// Zero weights, identity norms. Shapes follow the config exactly.
    pub fn zeros(cfg: &ModelConfig) -> ModelParams {
        let d = cfg.embed_dim;
        ModelParams {
            patch_weight: Matrix::zeros(cfg.patch_dim(), d),
            patch_bias: Matrix::zeros(1, d),
            cls: Matrix::zeros(1, d),
            pos: Matrix::zeros(cfg.tokens(), d),
            layers: (0..cfg.depth).map(|_| LayerParams::zeros(cfg)).collect(),
            final_gamma: Matrix::filled(1, d, 1.0),
            final_beta: Matrix::zeros(1, d),
            head_weight: Matrix::zeros(d, cfg.classes),
            head_bias: Matrix::zeros(1, cfg.classes),
        }
    }

    /// Checks every tensor shape against the config.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.layers.len() != cfg.depth {
            return Err(Error::Shape(format!(
                "{} layers for depth {}",
                self.layers.len(),
                cfg.depth
            )));
        }
        let want = ModelParams::zeros(cfg);
        for ((name, have), (_, w)) in self.tensors().iter().zip(want.tensors().iter()) {
            if have.shape() != w.shape() {
                return Err(Error::Shape(format!(
                    "tensor {name} is {}x{}, expected {}x{}",
                    have.rows(),
                    have.cols(),
                    w.rows(),
                    w.cols()
                )));
            }
        }
        Ok(())
    }

    /// Named tensors in the canonical order.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> = vec![
            ("patch.weight".into(), &self.patch_weight),
            ("patch.bias".into(), &self.patch_bias),
            ("cls".into(), &self.cls),
            ("pos".into(), &self.pos),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.ln1.gamma"), &layer.ln1_gamma));
            out.push((format!("layer{l}.ln1.beta"), &layer.ln1_beta));
            out.push((format!("layer{l}.attn.qkv.weight"), &layer.w_qkv));
            out.push((format!("layer{l}.attn.qkv.bias"), &layer.b_qkv));
            out.push((format!("layer{l}.attn.proj.weight"), &layer.w_proj));
            out.push((format!("layer{l}.attn.proj.bias"), &layer.b_proj));
            out.push((format!("layer{l}.ln2.gamma"), &layer.ln2_gamma));
            out.push((format!("layer{l}.ln2.beta"), &layer.ln2_beta));
            out.push((format!("layer{l}.mlp.fc1.weight"), &layer.w_fc1));
            out.push((format!("layer{l}.mlp.fc1.bias"), &layer.b_fc1));
            out.push((format!("layer{l}.mlp.fc2.weight"), &layer.w_fc2));
            out.push((format!("layer{l}.mlp.fc2.bias"), &layer.b_fc2));
        }
        out.push(("final.gamma".into(), &self.final_gamma));
        out.push(("final.beta".into(), &self.final_beta));
        out.push(("head.weight".into(), &self.head_weight));
        out.push(("head.bias".into(), &self.head_bias));
        out
    }

    /// Mutable tensors, same order as `tensors`.
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = vec![
            &mut self.patch_weight,
            &mut self.patch_bias,
            &mut self.cls,
            &mut self.pos,
        ];
        for layer in self.layers.iter_mut() {
            out.push(&mut layer.ln1_gamma);
            out.push(&mut layer.ln1_beta);
            out.push(&mut layer.w_qkv);
            out.push(&mut layer.b_qkv);
            out.push(&mut layer.w_proj);
            out.push(&mut layer.b_proj);
            out.push(&mut layer.ln2_gamma);
            out.push(&mut layer.ln2_beta);
            out.push(&mut layer.w_fc1);
            out.push(&mut layer.b_fc1);
            out.push(&mut layer.w_fc2);
            out.push(&mut layer.b_fc2);
        }
        out.push(&mut self.final_gamma);
        out.push(&mut self.final_beta);
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    /// Rounds every tensor through f32 so containers round-trip exactly.
    pub fn quantize_f32(&mut self) {
        for t in self.tensors_mut() {
            t.quantize_f32();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vit::param_count_all;

    fn cfg() -> ModelConfig {
        ModelConfig::new(2, 16, 2, 8, 64, 8, 32, 1, 10).unwrap()
    }

    #[test]
    fn enumeration_orders_agree() {
        let mut p = ModelParams::zeros(&cfg());
        let names: Vec<String> = p.tensors().iter().map(|(n, _)| n.clone()).collect();
        let shapes: Vec<(usize, usize)> = p.tensors().iter().map(|(_, m)| m.shape()).collect();
        let mut_shapes: Vec<(usize, usize)> =
            p.tensors_mut().iter().map(|m| m.shape()).collect();
        assert_eq!(shapes, mut_shapes);
        assert_eq!(names.len(), 4 + 2 * 12 + 4);
        assert_eq!(names[4], "layer0.ln1.gamma");
        assert_eq!(names.last().unwrap(), "head.bias");
    }

    #[test]
    fn count_matches_closed_form() {
        let c = cfg();
        let p = ModelParams::zeros(&c);
        assert_eq!(p.count(), param_count_all(&c));
    }

    #[test]
    fn validate_catches_layer_mismatch() {
        let c = cfg();
        let mut p = ModelParams::zeros(&c);
        assert!(p.validate(&c).is_ok());
        p.layers.pop();
        assert!(p.validate(&c).is_err());
        let mut q = ModelParams::zeros(&c);
        q.head_weight = Matrix::zeros(3, 3);
        assert!(q.validate(&c).is_err());
    }
}
