//! Minimal vision transformer: patch embedding, pre-norm residual blocks
//! with multi-head self-attention and a GELU MLP, class-token readout.

mod backward;
mod forward;
mod params;

pub use backward::backward_full;
pub use forward::{
    forward, forward_cached, mlp_forward, msa_forward, patchify_embed, ForwardCache,
};
pub use params::{LayerParams, ModelParams};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Grayscale or multi-channel image, row-major (y, x, channel).
#[derive(Clone, Debug)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Image {
        Image { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }
}

/// Complete shape description of a model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of transformer blocks. Zero is allowed (embedding plus head).
    pub depth: usize,
    /// Token width D.
    pub embed_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Hidden width of the block MLP.
    pub mlp_hidden: usize,
    pub patch_size: usize,
    pub image_size: usize,
    pub channels: usize,
    pub classes: usize,
}

impl ModelConfig {
    pub fn new(
        depth: usize,
        embed_dim: usize,
        heads: usize,
        head_dim: usize,
        mlp_hidden: usize,
        patch_size: usize,
        image_size: usize,
        channels: usize,
        classes: usize,
    ) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            depth,
            embed_dim,
            heads,
            head_dim,
            mlp_hidden,
            patch_size,
            image_size,
            channels,
            classes,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("mlp_hidden", self.mlp_hidden),
            ("patch_size", self.patch_size),
            ("image_size", self.image_size),
            ("channels", self.channels),
        ] {
            if v == 0 {
                return Err(Error::Input(format!("{name} must be at least 1")));
            }
        }
        if self.classes < 2 {
            return Err(Error::Input(format!(
                "classes must be at least 2, got {}",
                self.classes
            )));
        }
        if self.embed_dim != self.heads * self.head_dim {
            return Err(Error::Input(format!(
                "embed_dim {} must equal heads {} times head_dim {}",
                self.embed_dim, self.heads, self.head_dim
            )));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::Input(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        Ok(())
    }

    /// Number of image patches.
    pub fn patches(&self) -> usize {
        let per_side = self.image_size / self.patch_size;
        per_side * per_side
    }

    /// Sequence length: patches plus the class token.
    pub fn tokens(&self) -> usize {
        self.patches() + 1
    }

    /// Flattened patch length: patch_size^2 * channels.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }
}

/// Selects which per-layer weight groups participate in an operation:
/// fused attention input projection (att), attention output projection
/// (proj), and the block MLP pair (fc).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ComponentMask {
    pub att: bool,
    pub proj: bool,
    pub fc: bool,
}

impl ComponentMask {
    pub const ALL: ComponentMask = ComponentMask { att: true, proj: true, fc: true };
    pub const NONE: ComponentMask = ComponentMask { att: false, proj: false, fc: false };

    pub fn any(&self) -> bool {
        self.att || self.proj || self.fc
    }

    /// Canonical text form: "none" or a plus-joined subset of att, proj, fc.
    pub fn label(&self) -> String {
        if !self.any() {
            return "none".to_string();
        }
        let mut parts = Vec::new();
        if self.att {
            parts.push("att");
        }
        if self.proj {
            parts.push("proj");
        }
        if self.fc {
            parts.push("fc");
        }
        parts.join("+")
    }

    pub fn parse(s: &str) -> Result<ComponentMask> {
        if s == "none" {
            return Ok(ComponentMask::NONE);
        }
        if s == "all" {
            return Ok(ComponentMask::ALL);
        }
        let mut mask = ComponentMask::NONE;
        for part in s.split('+') {
            match part {
                "att" => mask.att = true,
                "proj" => mask.proj = true,
                "fc" => mask.fc = true,
                other => {
                    return Err(Error::Input(format!(
                        "unknown component '{other}' in mask '{s}'"
                    )))
                }
            }
        }
        Ok(mask)
    }

    /// All eight subsets in a fixed order, none first, all last.
    pub fn all_subsets() -> Vec<ComponentMask> {
        let mut out = Vec::with_capacity(8);
        for bits in 0..8u8 {
            out.push(ComponentMask {
                att: bits & 1 != 0,
                proj: bits & 2 != 0,
                fc: bits & 4 != 0,
            });
        }
        out
    }
}

/// Parameter count of the selected per-layer weight groups across all
/// layers. Biases and norms are excluded; they are never templated.
pub fn param_count(config: &ModelConfig, mask: ComponentMask) -> usize {
    let d = config.embed_dim;
    let h = config.mlp_hidden;
    let mut per_layer = 0;
    if mask.att {
        per_layer += d * 3 * d;
    }
    if mask.proj {
        per_layer += d * d;
    }
    if mask.fc {
        per_layer += 2 * d * h;
    }
    config.depth * per_layer
}

/// Total parameter count of a model with this configuration, every tensor
/// included.
pub fn param_count_all(config: &ModelConfig) -> usize {
    let d = config.embed_dim;
    let h = config.mlp_hidden;
    let tokens = config.tokens();
    let embed = config.patch_dim() * d + d + d + tokens * d;
    let per_layer = 2 * d          // ln1
        + d * 3 * d + 3 * d        // qkv
        + d * d + d                // proj
        + 2 * d                    // ln2
        + d * h + h                // fc1
        + h * d + d;               // fc2
    let head = 2 * d + d * config.classes + config.classes;
    embed + config.depth * per_layer + head
}
