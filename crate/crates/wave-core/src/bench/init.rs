//! Baseline initialization: He-scaled normal weights, zero biases, identity
//! norms, truncated-normal class token and position table.

use crate::rng;
use crate::tensor::Matrix;
use crate::vit::{ModelConfig, ModelParams};

/// Spread for the class token and position embeddings.
const TOKEN_INIT_STD: f64 = 0.02;

/// He initialization. Weight matrices draw from N(0, 2 / fan_in) with
/// fan_in the input dimension (rows, under the x*W convention); biases are
/// zero, norm scales one. Sampling follows the canonical tensor order on a
/// single stream, so (config, seed) pins every value.
pub fn he_init(cfg: &ModelConfig, seed: u64) -> ModelParams {
    fn he(stream: &mut rand_chacha::ChaCha8Rng, m: &mut Matrix) {
        let fan_in = m.rows();
        let std = (2.0 / fan_in as f64).sqrt();
        let (r, c) = m.shape();
        *m = rng::normal(stream, r, c, std);
    }
    let mut params = ModelParams::zeros(cfg);
    let mut stream = rng::seeded(seed);
    he(&mut stream, &mut params.patch_weight);
    params.cls = rng::trunc_normal(&mut stream, 1, cfg.embed_dim, TOKEN_INIT_STD);
    params.pos = rng::trunc_normal(&mut stream, cfg.tokens(), cfg.embed_dim, TOKEN_INIT_STD);
    for l in 0..cfg.depth {
        he(&mut stream, &mut params.layers[l].w_qkv);
        he(&mut stream, &mut params.layers[l].w_proj);
        he(&mut stream, &mut params.layers[l].w_fc1);
        he(&mut stream, &mut params.layers[l].w_fc2);
    }
    he(&mut stream, &mut params.head_weight);
    params
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig::new(2, 32, 4, 8, 128, 8, 32, 1, 10).unwrap()
    }

    #[test]
    fn he_init_is_deterministic() {
        let a = he_init(&cfg(), 3);
        let b = he_init(&cfg(), 3);
        assert_eq!(a, b);
        let c = he_init(&cfg(), 4);
        assert_ne!(a, c);
    }

    #[test]
    fn he_init_scales_with_fan_in() {
        let p = he_init(&cfg(), 5);
        // w_fc2 has fan_in 128: expect std near sqrt(2/128).
        let vals = p.layers[0].w_fc2.as_slice();
        let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
        let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        let want = (2.0 / 128.0f64).sqrt();
        assert!((var.sqrt() - want).abs() / want < 0.1, "{} vs {want}", var.sqrt());
        // Biases zero, norms one.
        assert!(p.layers[0].b_qkv.as_slice().iter().all(|v| *v == 0.0));
        assert!(p.final_gamma.as_slice().iter().all(|v| *v == 1.0));
        // Everything f32-exact for lossless persistence.
        for (_, t) in p.tensors() {
            for v in t.as_slice() {
                assert_eq!(*v, *v as f32 as f64);
            }
        }
    }
}
