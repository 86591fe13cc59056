//! The template bank and its pairing with per-model scalers.
//!
//! A bank holds three groups of square t x t templates: one group for the
//! fused attention input projection, one for the attention output
//! projection, one shared by both MLP weights. A target model decompresses
//! from the bank by fitting one scaler per (layer, weight slot, template)
//! and composing weights as sums of Kronecker products.

mod container;

pub use container::{
    decode_bank, decode_checkpoint, decode_scalers, encode_bank, encode_checkpoint,
    encode_scalers, load_bank, load_checkpoint, load_scalers, save_bank, save_checkpoint,
    save_scalers, write_atomic, CheckpointMeta, ScalersMeta, CONTAINER_MAGIC,
};

use crate::error::{Error, Result};
use crate::kron::{compose_weight, Scaler, Template};
use crate::rng;
use crate::tensor::Matrix;
use crate::vit::{ComponentMask, ModelConfig, ModelParams};
use serde::{Deserialize, Serialize};

/// Init spread for templates and for non-templated weights of a
/// decompressed model.
pub const TEMPLATE_INIT_STD: f64 = 0.02;

/// Template group, by the weight slot family it serves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TemplateGroup {
    /// Fused QKV projections.
    Att,
    /// Attention output projections.
    Proj,
    /// Both MLP weights.
    Mlp,
}

/// Number of templates per group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankCounts {
    pub att: usize,
    pub proj: usize,
    pub mlp: usize,
}

/// Where a bank's templates came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    /// Hash of the teacher checkpoint the bank was condensed from.
    pub teacher_sha256: String,
    pub condense_epochs: usize,
    pub condense_seed: u64,
}

/// Shared bank of square weight templates.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateBank {
    template_size: usize,
    att: Vec<Template>,
    proj: Vec<Template>,
    mlp: Vec<Template>,
    pub seed: u64,
    pub provenance: Option<Provenance>,
}

impl TemplateBank {
    /// Builds a bank from existing template groups, checking that every
    /// template is square with the stated size and that no group is empty.
    pub fn new(
        template_size: usize,
        att: Vec<Template>,
        proj: Vec<Template>,
        mlp: Vec<Template>,
        seed: u64,
        provenance: Option<Provenance>,
    ) -> Result<TemplateBank> {
        if template_size == 0 {
            return Err(Error::Input("template_size must be at least 1".into()));
        }
        for (group, ts) in [("att", &att), ("proj", &proj), ("mlp", &mlp)] {
            if ts.is_empty() {
                return Err(Error::Input(format!("bank group {group} is empty")));
            }
            for (i, t) in ts.iter().enumerate() {
                if t.0.shape() != (template_size, template_size) {
                    return Err(Error::Shape(format!(
                        "template {group}.{i} is {}x{}, bank size is {template_size}",
                        t.t1(),
                        t.t2()
                    )));
                }
                if !t.0.is_finite() {
                    return Err(Error::Input(format!(
                        "template {group}.{i} has non-finite entries"
                    )));
                }
            }
        }
        Ok(TemplateBank { template_size, att, proj, mlp, seed, provenance })
    }

    pub fn template_size(&self) -> usize {
        self.template_size
    }

    pub fn counts(&self) -> BankCounts {
        BankCounts { att: self.att.len(), proj: self.proj.len(), mlp: self.mlp.len() }
    }

    pub fn group(&self, g: TemplateGroup) -> &[Template] {
        match g {
            TemplateGroup::Att => &self.att,
            TemplateGroup::Proj => &self.proj,
            TemplateGroup::Mlp => &self.mlp,
        }
    }

    pub fn group_mut(&mut self, g: TemplateGroup) -> &mut [Template] {
        match g {
            TemplateGroup::Att => &mut self.att,
            TemplateGroup::Proj => &mut self.proj,
            TemplateGroup::Mlp => &mut self.mlp,
        }
    }

    /// Named templates in serialization order: att group, proj group, mlp
    /// group, each indexed from zero.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (prefix, group) in [("att", &self.att), ("proj", &self.proj), ("mlp", &self.mlp)] {
            for (i, t) in group.iter().enumerate() {
                out.push((format!("{prefix}.{i}"), &t.0));
            }
        }
        out
    }

    /// Mutable template matrices, same order as `tensors`.
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.att
            .iter_mut()
            .chain(self.proj.iter_mut())
            .chain(self.mlp.iter_mut())
            .map(|t| &mut t.0)
            .collect()
    }

    /// Rounds all templates through f32.
    pub fn quantize_f32(&mut self) {
        for t in self.tensors_mut() {
            t.quantize_f32();
        }
    }
}

/// Fresh bank with truncated-normal templates (std 0.02, cut at two
/// standard deviations). Sampling order is att, proj, mlp on one stream.
pub fn bank_init(template_size: usize, counts: BankCounts, seed: u64) -> Result<TemplateBank> {
    if counts.att == 0 || counts.proj == 0 || counts.mlp == 0 {
        return Err(Error::Input(format!(
            "every bank group needs at least one template, got att {}, proj {}, mlp {}",
            counts.att, counts.proj, counts.mlp
        )));
    }
    if template_size == 0 {
        return Err(Error::Input("template_size must be at least 1".into()));
    }
    let mut stream = rng::seeded(seed);
    let mut make = |n: usize| -> Vec<Template> {
        (0..n)
            .map(|_| {
                Template(rng::trunc_normal(
                    &mut stream,
                    template_size,
                    template_size,
                    TEMPLATE_INIT_STD,
                ))
            })
            .collect()
    };
    let att = make(counts.att);
    let proj = make(counts.proj);
    let mlp = make(counts.mlp);
    TemplateBank::new(template_size, att, proj, mlp, seed, None)
}

/// Per-layer templated weight slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightSlot {
    Qkv,
    Proj,
    Fc1,
    Fc2,
}

impl WeightSlot {
    pub const ALL: [WeightSlot; 4] = [WeightSlot::Qkv, WeightSlot::Proj, WeightSlot::Fc1, WeightSlot::Fc2];

    pub fn template_group(self) -> TemplateGroup {
        match self {
            WeightSlot::Qkv => TemplateGroup::Att,
            WeightSlot::Proj => TemplateGroup::Proj,
            WeightSlot::Fc1 | WeightSlot::Fc2 => TemplateGroup::Mlp,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WeightSlot::Qkv => "qkv",
            WeightSlot::Proj => "proj",
            WeightSlot::Fc1 => "fc1",
            WeightSlot::Fc2 => "fc2",
        }
    }

    /// Whether the mask covers this slot.
    pub fn in_mask(self, mask: ComponentMask) -> bool {
        match self {
            WeightSlot::Qkv => mask.att,
            WeightSlot::Proj => mask.proj,
            WeightSlot::Fc1 | WeightSlot::Fc2 => mask.fc,
        }
    }

    /// Target weight shape for this slot.
    pub fn weight_shape(self, cfg: &ModelConfig) -> (usize, usize) {
        let d = cfg.embed_dim;
        let h = cfg.mlp_hidden;
        match self {
            WeightSlot::Qkv => (d, 3 * d),
            WeightSlot::Proj => (d, d),
            WeightSlot::Fc1 => (d, h),
            WeightSlot::Fc2 => (h, d),
        }
    }
}

/// Scaler shape for one weight slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotShape {
    pub s1: usize,
    pub s2: usize,
    /// Number of scalers, equal to the template count of the slot's group.
    pub count: usize,
}

/// Scaler shapes for every slot of a (bank, target) pairing. Shapes are the
/// same for every layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScalerShapes {
    pub qkv: SlotShape,
    pub proj: SlotShape,
    pub fc1: SlotShape,
    pub fc2: SlotShape,
}

impl ScalerShapes {
    pub fn slot(&self, s: WeightSlot) -> SlotShape {
        match s {
            WeightSlot::Qkv => self.qkv,
            WeightSlot::Proj => self.proj,
            WeightSlot::Fc1 => self.fc1,
            WeightSlot::Fc2 => self.fc2,
        }
    }

    /// Scaler parameters across all slots of one layer.
    pub fn params_per_layer(&self) -> usize {
        WeightSlot::ALL
            .iter()
            .map(|s| {
                let sh = self.slot(*s);
                sh.count * sh.s1 * sh.s2
            })
            .sum()
    }
}

/// Computes the scaler shape table for decompressing `cfg` from `bank`.
/// Fails with a named dimension when the target widths do not tile by the
/// template size.
pub fn scaler_shapes(bank: &TemplateBank, cfg: &ModelConfig) -> Result<ScalerShapes> {
    scaler_shapes_raw(bank.template_size, bank.counts(), cfg)
}

/// Shape table from raw bank geometry, for callers that only have metadata.
pub fn scaler_shapes_raw(
    t: usize,
    counts: BankCounts,
    cfg: &ModelConfig,
) -> Result<ScalerShapes> {
    if t == 0 {
        return Err(Error::Input("template_size must be at least 1".into()));
    }
    for (name, dim) in [("embed_dim", cfg.embed_dim), ("mlp_hidden", cfg.mlp_hidden)] {
        if dim % t != 0 {
            return Err(Error::Incompatible(format!(
                "{name} {dim} is not divisible by template size {t}"
            )));
        }
    }
    let slot = |s: WeightSlot| -> SlotShape {
        let (rows, cols) = s.weight_shape(cfg);
        let count = match s.template_group() {
            TemplateGroup::Att => counts.att,
            TemplateGroup::Proj => counts.proj,
            TemplateGroup::Mlp => counts.mlp,
        };
        SlotShape { s1: rows / t, s2: cols / t, count }
    };
    Ok(ScalerShapes {
        qkv: slot(WeightSlot::Qkv),
        proj: slot(WeightSlot::Proj),
        fc1: slot(WeightSlot::Fc1),
        fc2: slot(WeightSlot::Fc2),
    })
}

/// Scalers for one layer, one vector per weight slot.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerScalers {
    pub qkv: Vec<Scaler>,
    pub proj: Vec<Scaler>,
    pub fc1: Vec<Scaler>,
    pub fc2: Vec<Scaler>,
}

impl LayerScalers {
    pub fn slot(&self, s: WeightSlot) -> &[Scaler] {
        match s {
            WeightSlot::Qkv => &self.qkv,
            WeightSlot::Proj => &self.proj,
            WeightSlot::Fc1 => &self.fc1,
            WeightSlot::Fc2 => &self.fc2,
        }
    }
}

/// All scalers of one target model, outer index is the layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalerSet {
    pub layers: Vec<LayerScalers>,
}

impl ScalerSet {
    /// Named scaler matrices: layer0.qkv.0, layer0.qkv.1, ..., layer0.proj.0,
    /// ..., layer1.qkv.0, ...
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for slot in WeightSlot::ALL {
                for (i, s) in layer.slot(slot).iter().enumerate() {
                    out.push((format!("layer{l}.{}.{i}", slot.name()), &s.0));
                }
            }
        }
        out
    }

    /// Mutable scaler matrices, same order as `tensors`.
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for layer in self.layers.iter_mut() {
            for s in layer.qkv.iter_mut() {
                out.push(&mut s.0);
            }
            for s in layer.proj.iter_mut() {
                out.push(&mut s.0);
            }
            for s in layer.fc1.iter_mut() {
                out.push(&mut s.0);
            }
            for s in layer.fc2.iter_mut() {
                out.push(&mut s.0);
            }
        }
        out
    }

    /// Total scaler parameter count.
    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn quantize_f32(&mut self) {
        for t in self.tensors_mut() {
            t.quantize_f32();
        }
    }

    /// Checks the set against a (bank, target) pairing.
    pub fn validate(&self, bank: &TemplateBank, cfg: &ModelConfig) -> Result<()> {
        let shapes = scaler_shapes(bank, cfg)?;
        if self.layers.len() != cfg.depth {
            return Err(Error::Shape(format!(
                "scaler set has {} layers, target depth is {}",
                self.layers.len(),
                cfg.depth
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            for slot in WeightSlot::ALL {
                let want = shapes.slot(slot);
                let have = layer.slot(slot);
                if have.len() != want.count {
                    return Err(Error::Shape(format!(
                        "layer {l} slot {} has {} scalers, bank provides {} templates",
                        slot.name(),
                        have.len(),
                        want.count
                    )));
                }
                for (i, s) in have.iter().enumerate() {
                    if s.0.shape() != (want.s1, want.s2) {
                        return Err(Error::Shape(format!(
                            "scaler layer{l}.{}.{i} is {}x{}, expected {}x{}",
                            slot.name(),
                            s.s1(),
                            s.s2(),
                            want.s1,
                            want.s2
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Fresh scalers for decompressing `cfg` from `bank`. Each slot's entries
/// are N(0, std^2) with std = 1 / (count * sqrt(s1 * s2)), which keeps the
/// composed weight variance on the order of the template variance.
pub fn scalers_init(bank: &TemplateBank, cfg: &ModelConfig, seed: u64) -> Result<ScalerSet> {
    let shapes = scaler_shapes(bank, cfg)?;
    let mut stream = rng::seeded(seed);
    let mut layers = Vec::with_capacity(cfg.depth);
    for _ in 0..cfg.depth {
        let mut make = |sh: SlotShape| -> Vec<Scaler> {
            let std = 1.0 / (sh.count as f64 * ((sh.s1 * sh.s2) as f64).sqrt());
            (0..sh.count)
                .map(|_| Scaler(rng::normal(&mut stream, sh.s1, sh.s2, std)))
                .collect()
        };
        let qkv = make(shapes.qkv);
        let proj = make(shapes.proj);
        let fc1 = make(shapes.fc1);
        let fc2 = make(shapes.fc2);
        layers.push(LayerScalers { qkv, proj, fc1, fc2 });
    }
    Ok(ScalerSet { layers })
}

/// Composed templated weights for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterializedLayer {
    pub w_qkv: Matrix,
    pub w_proj: Matrix,
    pub w_fc1: Matrix,
    pub w_fc2: Matrix,
}

/// Composes every templated weight of every layer from bank plus scalers.
pub fn materialize(bank: &TemplateBank, scalers: &ScalerSet) -> Result<Vec<MaterializedLayer>> {
    let mut out = Vec::with_capacity(scalers.layers.len());
    for layer in &scalers.layers {
        let w_qkv = compose_weight(bank.group(TemplateGroup::Att), &layer.qkv)?;
        let w_proj = compose_weight(bank.group(TemplateGroup::Proj), &layer.proj)?;
        let w_fc1 = compose_weight(bank.group(TemplateGroup::Mlp), &layer.fc1)?;
        let w_fc2 = compose_weight(bank.group(TemplateGroup::Mlp), &layer.fc2)?;
        out.push(MaterializedLayer { w_qkv, w_proj, w_fc1, w_fc2 });
    }
    Ok(out)
}

/// Installs materialized weights into the masked slots of a model.
pub fn apply_materialized(
    params: &mut ModelParams,
    layers: &[MaterializedLayer],
    mask: ComponentMask,
) -> Result<()> {
    if params.layers.len() != layers.len() {
        return Err(Error::Shape(format!(
            "{} materialized layers for a model of depth {}",
            layers.len(),
            params.layers.len()
        )));
    }
    for (dst, src) in params.layers.iter_mut().zip(layers) {
        if mask.att {
            if dst.w_qkv.shape() != src.w_qkv.shape() {
                return Err(Error::Shape(format!(
                    "materialized qkv is {}x{}, model slot is {}x{}",
                    src.w_qkv.rows(),
                    src.w_qkv.cols(),
                    dst.w_qkv.rows(),
                    dst.w_qkv.cols()
                )));
            }
            dst.w_qkv = src.w_qkv.clone();
        }
        if mask.proj {
            dst.w_proj = src.w_proj.clone();
        }
        if mask.fc {
            dst.w_fc1 = src.w_fc1.clone();
            dst.w_fc2 = src.w_fc2.clone();
        }
    }
    Ok(())
}

/// Parameters that move from the bank into any target: the templates.
pub fn transferred_param_count(bank: &TemplateBank) -> usize {
    let c = bank.counts();
    (c.att + c.proj + c.mlp) * bank.template_size * bank.template_size
}

/// True when every masked weight slot of `params` is bit-identical to the
/// f32-quantized recomposition of the factors. Holds for any model whose
/// templated slots were installed from already-quantized factors.
pub fn quantized_recompose_matches(
    bank: &TemplateBank,
    scalers: &ScalerSet,
    params: &ModelParams,
    mask: ComponentMask,
) -> Result<bool> {
    if scalers.layers.len() != params.layers.len() {
        return Err(Error::Shape(format!(
            "scalers cover {} layers, model has {}",
            scalers.layers.len(),
            params.layers.len()
        )));
    }
    let layers = materialize(bank, scalers)?;
    let matches = |slot: &Matrix, composed: &Matrix| -> bool {
        if slot.shape() != composed.shape() {
            return false;
        }
        let mut q = composed.clone();
        q.quantize_f32();
        q.as_slice() == slot.as_slice()
    };
    for (got, mat) in params.layers.iter().zip(&layers) {
        if mask.att && !matches(&got.w_qkv, &mat.w_qkv) {
            return Ok(false);
        }
        if mask.proj && !matches(&got.w_proj, &mat.w_proj) {
            return Ok(false);
        }
        if mask.fc && !(matches(&got.w_fc1, &mat.w_fc1) && matches(&got.w_fc2, &mat.w_fc2)) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kron::{compose_weight_bruteforce, kron_product};
    use crate::vit::param_count;

    fn cfg(depth: usize, d: usize, t_mul: usize) -> ModelConfig {
        ModelConfig::new(depth, d, d / 8, 8, t_mul * d, 8, 32, 1, 10).unwrap()
    }

    fn counts() -> BankCounts {
        BankCounts { att: 3, proj: 2, mlp: 4 }
    }

    #[test]
    fn bank_init_is_deterministic_and_bounded() {
        let a = bank_init(8, counts(), 5).unwrap();
        let b = bank_init(8, counts(), 5).unwrap();
        assert_eq!(a, b);
        let c = bank_init(8, counts(), 6).unwrap();
        assert_ne!(a, c);
        for (_, m) in a.tensors() {
            for v in m.as_slice() {
                assert!(v.abs() <= 2.0 * TEMPLATE_INIT_STD + 1e-9);
            }
        }
        assert_eq!(a.tensors().len(), 9);
    }

    #[test]
    fn bank_rejects_empty_or_mixed_groups() {
        assert!(bank_init(8, BankCounts { att: 0, proj: 1, mlp: 1 }, 1).is_err());
        assert!(bank_init(0, counts(), 1).is_err());
        let good = bank_init(4, counts(), 1).unwrap();
        let mut mixed = good.group(TemplateGroup::Att).to_vec();
        mixed[0] = Template(Matrix::zeros(3, 4));
        assert!(TemplateBank::new(
            4,
            mixed,
            good.group(TemplateGroup::Proj).to_vec(),
            good.group(TemplateGroup::Mlp).to_vec(),
            1,
            None
        )
        .is_err());
    }

    #[test]
    fn shape_table_matches_dimension_algebra() {
        let bank = bank_init(8, counts(), 1).unwrap();
        let c = cfg(2, 32, 4);
        let s = scaler_shapes(&bank, &c).unwrap();
        assert_eq!(s.qkv, SlotShape { s1: 4, s2: 12, count: 3 });
        assert_eq!(s.proj, SlotShape { s1: 4, s2: 4, count: 2 });
        assert_eq!(s.fc1, SlotShape { s1: 4, s2: 16, count: 4 });
        assert_eq!(s.fc2, SlotShape { s1: 16, s2: 4, count: 4 });
    }

    #[test]
    fn incompatible_width_names_the_dimension() {
        let bank = bank_init(32, counts(), 1).unwrap();
        let c = ModelConfig::new(2, 48, 6, 8, 192, 8, 32, 1, 10).unwrap();
        let err = scaler_shapes(&bank, &c).unwrap_err();
        match err {
            Error::Incompatible(msg) => {
                assert!(msg.contains("embed_dim"), "{msg}");
                assert!(msg.contains("48") && msg.contains("32"), "{msg}");
            }
            other => panic!("expected Incompatible, got {other:?}"),
        }
    }

    #[test]
    fn scalers_init_shapes_std_and_determinism() {
        let bank = bank_init(8, counts(), 1).unwrap();
        let c = cfg(3, 32, 4);
        let a = scalers_init(&bank, &c, 2).unwrap();
        let b = scalers_init(&bank, &c, 2).unwrap();
        assert_eq!(a, b);
        a.validate(&bank, &c).unwrap();
        assert_eq!(a.layers.len(), 3);
        // Empirical std of the largest slot should sit near the formula.
        let sh = scaler_shapes(&bank, &c).unwrap().fc2;
        let want_std = 1.0 / (sh.count as f64 * ((sh.s1 * sh.s2) as f64).sqrt());
        let mut all = Vec::new();
        for layer in &a.layers {
            for s in &layer.fc2 {
                all.extend_from_slice(s.0.as_slice());
            }
        }
        let mean: f64 = all.iter().sum::<f64>() / all.len() as f64;
        let var: f64 = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / all.len() as f64;
        assert!(
            (var.sqrt() - want_std).abs() / want_std < 0.15,
            "std {} vs {want_std}",
            var.sqrt()
        );
    }

    #[test]
    fn materialize_matches_bruteforce_composition() {
        let bank = bank_init(4, counts(), 3).unwrap();
        let c = cfg(2, 16, 2);
        let scalers = scalers_init(&bank, &c, 7).unwrap();
        let mats = materialize(&bank, &scalers).unwrap();
        assert_eq!(mats.len(), 2);
        for (l, m) in mats.iter().enumerate() {
            assert_eq!(m.w_qkv.shape(), (16, 48));
            assert_eq!(m.w_fc2.shape(), (32, 16));
            let brute =
                compose_weight_bruteforce(bank.group(TemplateGroup::Att), &scalers.layers[l].qkv)
                    .unwrap();
            assert!(m.w_qkv.max_abs_diff(&brute) < 1e-12);
        }
    }

    #[test]
    fn single_template_unit_scaler_tiles_the_template() {
        // One 2x2 template, scaler of ones: W = T (x) ones = tiled copies.
        let t = Template(Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let bank = TemplateBank::new(2, vec![t.clone()], vec![t.clone()], vec![t.clone()], 0, None)
            .unwrap();
        let c = ModelConfig::new(1, 4, 1, 4, 4, 8, 32, 1, 10).unwrap();
        let shapes = scaler_shapes(&bank, &c).unwrap();
        let ones = |sh: SlotShape| -> Vec<Scaler> {
            (0..sh.count).map(|_| Scaler(Matrix::filled(sh.s1, sh.s2, 1.0))).collect()
        };
        let set = ScalerSet {
            layers: vec![LayerScalers {
                qkv: ones(shapes.qkv),
                proj: ones(shapes.proj),
                fc1: ones(shapes.fc1),
                fc2: ones(shapes.fc2),
            }],
        };
        let m = materialize(&bank, &set).unwrap();
        let want = kron_product(&t.0, &Matrix::filled(2, 2, 1.0));
        assert!(m[0].w_proj.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn transfer_ratio_shrinks_with_width() {
        let bank = bank_init(16, BankCounts { att: 4, proj: 4, mlp: 4 }, 1).unwrap();
        let transferred = transferred_param_count(&bank);
        assert_eq!(transferred, 12 * 256);
        let c = cfg(4, 64, 4);
        let templated = param_count(&c, ComponentMask::ALL);
        assert!((transferred as f64) / (templated as f64) < 0.25);
    }

    #[test]
    fn apply_materialized_respects_mask() {
        let bank = bank_init(4, counts(), 3).unwrap();
        let c = cfg(2, 16, 2);
        let scalers = scalers_init(&bank, &c, 7).unwrap();
        let mats = materialize(&bank, &scalers).unwrap();
        let mut params = ModelParams::zeros(&c);
        apply_materialized(
            &mut params,
            &mats,
            crate::vit::ComponentMask { att: true, proj: false, fc: false },
        )
        .unwrap();
        assert_eq!(params.layers[0].w_qkv, mats[0].w_qkv);
        assert_eq!(params.layers[0].w_proj, Matrix::zeros(16, 16));
        assert_eq!(params.layers[0].w_fc1, Matrix::zeros(16, 32));
    }
}
