use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::init::he_init;
use crate::error::{Error, Result};
use crate::learngene::{apply_materialized, materialize, TemplateBank};
use crate::lifecycle::{
    evaluate, fit_scalers_masked, initialize_target, train_model, BaseInit, DecompressConfig,
    TrainBudget,
};
use crate::rng::sub_seed;
use crate::vit::{ComponentMask, ModelConfig, ModelParams};

/// How a swept model gets its starting weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Fit fresh scalers against the bank, compose, then train.
    #[serde(rename = "wave")]
    Wave,
    /// He initialization, then the same training budget.
    #[serde(rename = "he")]
    HeInit,
    /// He initialization with the longer direct-pretraining budget.
    #[serde(rename = "direct-pt")]
    DirectPt,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Wave => "wave",
            Method::HeInit => "he",
            Method::DirectPt => "direct-pt",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "wave" => Ok(Method::Wave),
            "he" => Ok(Method::HeInit),
            "direct-pt" => Ok(Method::DirectPt),
            other => Err(Error::Input(format!(
                "unknown method {other:?}, expected wave, he or direct-pt"
            ))),
        }
    }
}

/// Shared budgets for every cell of an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budgets {
    /// Training epochs for wave and He cells.
    pub train_epochs: usize,
    /// Training epochs for direct-pt cells, normally larger.
    pub direct_pt_epochs: usize,
    /// Optimizer steps of the scaler fit preceding wave cells.
    pub fit_iterations: usize,
    /// Training examples visible to the scaler fit.
    pub fit_subset_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Batch size for the scaler fit; defaults to `batch_size`.
    #[serde(default)]
    pub fit_batch_size: Option<usize>,
    /// Learning rate for the scaler fit; defaults to `learning_rate`.
    #[serde(default)]
    pub fit_learning_rate: Option<f64>,
}

impl Budgets {
    pub fn fit_batch(&self) -> usize {
        self.fit_batch_size.unwrap_or(self.batch_size)
    }

    pub fn fit_lr(&self) -> f64 {
        self.fit_learning_rate.unwrap_or(self.learning_rate)
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::Wave, Method::HeInit, Method::DirectPt]
}

/// One experiment: a grid of (axis value, method, seed) cells over a base
/// model shape. Depth cells use `depths`, width cells use `widths`; the
/// other dimension stays at the base value.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub base: ModelConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub depths: Vec<usize>,
    #[serde(default)]
    pub widths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub budgets: Budgets,
    /// When false, wall_time is reported as zero so reports are
    /// byte-identical across runs.
    #[serde(default)]
    pub record_wall_time: bool,
}

/// One report row: accuracy of one cell on one split after one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub method: String,
    pub depth: usize,
    pub width: usize,
    pub components_mask: String,
    pub seed: u64,
    pub epoch: usize,
    pub split: String,
    pub top1: f64,
    pub params_transferred: usize,
    pub wall_time: f64,
}

pub const REPORT_HEADER: &str =
    "run_id,method,depth,width,components_mask,seed,epoch,split,top1,params_transferred,wall_time";

/// CSV encoding of report rows, stably sorted by (run_id, epoch).
pub fn report_csv(rows: &[MetricsRow]) -> String {
    let mut sorted: Vec<&MetricsRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.run_id.cmp(&b.run_id).then(a.epoch.cmp(&b.epoch)));
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in sorted {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.run_id,
            r.method,
            r.depth,
            r.width,
            r.components_mask,
            r.seed,
            r.epoch,
            r.split,
            r.top1,
            r.params_transferred,
            r.wall_time
        ));
    }
    out
}

/// Writes the CSV report atomically.
pub fn write_report(rows: &[MetricsRow], path: &std::path::Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Input("report has no rows".into()));
    }
    crate::learngene::write_atomic(path, report_csv(rows).as_bytes())
}

/// Scales the base shape to a cell's depth and width. Head size and the
/// MLP widening ratio carry over from the base.
pub fn cell_config(base: &ModelConfig, depth: usize, width: usize) -> Result<ModelConfig> {
    if base.mlp_hidden % base.embed_dim != 0 {
        return Err(Error::Incompatible(format!(
            "base mlp_hidden {} is not a multiple of embed_dim {}, cannot scale width",
            base.mlp_hidden, base.embed_dim
        )));
    }
    if width % base.head_dim != 0 {
        return Err(Error::Incompatible(format!(
            "width {} is not a multiple of head size {}",
            width, base.head_dim
        )));
    }
    let ratio = base.mlp_hidden / base.embed_dim;
    ModelConfig::new(
        depth,
        width,
        width / base.head_dim,
        base.head_dim,
        width * ratio,
        base.patch_size,
        base.image_size,
        base.channels,
        base.classes,
    )
}

/// Template parameters shipped into a cell: the templates of the groups
/// its mask composes from.
fn transferred_for(bank: &TemplateBank, mask: ComponentMask) -> usize {
    let c = bank.counts();
    let t2 = bank.template_size() * bank.template_size();
    let mut n = 0;
    if mask.att {
        n += c.att * t2;
    }
    if mask.proj {
        n += c.proj * t2;
    }
    if mask.fc {
        n += c.mlp * t2;
    }
    n
}

struct Cell {
    method: Method,
    depth: usize,
    width: usize,
    mask: ComponentMask,
    seed: u64,
}

impl Cell {
    fn run_id(&self) -> String {
        format!(
            "{}-d{}-w{}-{}-s{}",
            self.method.label(),
            self.depth,
            self.width,
            self.mask.label(),
            self.seed
        )
    }
}

/// Starting parameters for a cell, and how many parameters the bank
/// contributed. Wave cells fit scalers against the frozen bank, then the
/// deliverable model is rebuilt from the seed: composed weights in the
/// masked slots, the same frozen base draw everywhere else, so the rebuild
/// equals the fit's final state. Wave cells with an empty mask reduce to
/// the He baseline, bit for bit.
fn cell_init(
    cell: &Cell,
    bank: Option<&TemplateBank>,
    cfg: &ModelConfig,
    dataset: &Dataset,
    budgets: &Budgets,
) -> Result<(ModelParams, usize)> {
    match cell.method {
        Method::HeInit | Method::DirectPt => {
            Ok((he_init(cfg, sub_seed(cell.seed, "init")), 0))
        }
        Method::Wave => {
            if !cell.mask.any() {
                return Ok((he_init(cfg, sub_seed(cell.seed, "init")), 0));
            }
            let bank = bank.ok_or_else(|| {
                Error::Input("wave cells need a template bank".into())
            })?;
            let dc = DecompressConfig {
                target: cfg.clone(),
                fit_iterations: budgets.fit_iterations,
                fit_subset_size: budgets.fit_subset_size,
                batch_size: budgets.fit_batch(),
                learning_rate: budgets.fit_lr(),
                weight_decay: 0.0,
                seed: cell.seed,
            };
            let params = if cell.mask == ComponentMask::ALL {
                let fit = fit_scalers_masked(bank, &dc, dataset, cell.mask, BaseInit::Random)?;
                initialize_target(bank, &fit.scalers, cfg, sub_seed(cell.seed, "init"))?
            } else {
                // Ablation cells live on a He scaffold so the empty mask
                // degenerates to the He baseline exactly.
                let fit = fit_scalers_masked(bank, &dc, dataset, cell.mask, BaseInit::He)?;
                let mut params = he_init(cfg, sub_seed(cell.seed, "init"));
                let layers = materialize(bank, &fit.scalers)?;
                apply_materialized(&mut params, &layers, cell.mask)?;
                params.quantize_f32();
                params
            };
            Ok((params, transferred_for(bank, cell.mask)))
        }
    }
}

fn run_cell(
    spec: &ExperimentSpec,
    bank: Option<&TemplateBank>,
    dataset: &Dataset,
    cell: &Cell,
) -> Result<Vec<MetricsRow>> {
    let cfg = cell_config(&spec.base, cell.depth, cell.width)?;
    let started = Instant::now();
    let (params, transferred) = cell_init(cell, bank, &cfg, dataset, &spec.budgets)?;
    let epochs = match cell.method {
        Method::DirectPt => spec.budgets.direct_pt_epochs,
        _ => spec.budgets.train_epochs,
    };
    let budget = TrainBudget {
        epochs,
        batch_size: spec.budgets.batch_size,
        learning_rate: spec.budgets.learning_rate,
        weight_decay: spec.budgets.weight_decay,
    };
    let outcome = train_model(params, &cfg, dataset, &budget, cell.seed)?;
    let wall_time = if spec.record_wall_time {
        started.elapsed().as_secs_f64()
    } else {
        0.0
    };
    let row = |epoch: usize, split: &str, top1: f64| MetricsRow {
        run_id: cell.run_id(),
        method: cell.method.label().to_string(),
        depth: cell.depth,
        width: cell.width,
        components_mask: cell.mask.label(),
        seed: cell.seed,
        epoch,
        split: split.to_string(),
        top1,
        params_transferred: transferred,
        wall_time,
    };
    let mut rows = Vec::new();
    if outcome.epochs.is_empty() {
        let val = evaluate(&outcome.params, &cfg, &dataset.val, budget.batch_size)?;
        rows.push(row(0, "val", val));
    } else {
        for e in &outcome.epochs {
            rows.push(row(e.epoch, "train", e.train_top1));
            rows.push(row(e.epoch, "val", e.val_top1));
        }
    }
    Ok(rows)
}

fn check_spec(spec: &ExperimentSpec, bank: Option<&TemplateBank>) -> Result<()> {
    spec.base.validate()?;
    if spec.seeds.is_empty() {
        return Err(Error::Input("experiment needs at least one seed".into()));
    }
    if spec.methods.is_empty() {
        return Err(Error::Input("experiment needs at least one method".into()));
    }
    if spec.methods.contains(&Method::Wave) && bank.is_none() {
        return Err(Error::Input("wave cells need a template bank".into()));
    }
    Ok(())
}

fn run_grid(
    spec: &ExperimentSpec,
    bank: Option<&TemplateBank>,
    dataset: &Dataset,
    cells: Vec<Cell>,
) -> Result<Vec<MetricsRow>> {
    // Surface shape problems for every cell before spending time on any.
    for cell in &cells {
        cell_config(&spec.base, cell.depth, cell.width)?;
    }
    let mut rows = Vec::new();
    for cell in &cells {
        // A cell that fails past validation leaves one error row; the rest
        // of the grid still runs.
        match run_cell(spec, bank, dataset, cell) {
            Ok(cell_rows) => rows.extend(cell_rows),
            Err(_) => rows.push(MetricsRow {
                run_id: cell.run_id(),
                method: cell.method.label().to_string(),
                depth: cell.depth,
                width: cell.width,
                components_mask: cell.mask.label(),
                seed: cell.seed,
                epoch: 0,
                split: "error".to_string(),
                top1: 0.0,
                params_transferred: 0,
                wall_time: 0.0,
            }),
        }
    }
    Ok(rows)
}

/// Varies depth at the base width. Wave cells compose every slot.
pub fn run_depth_sweep(
    spec: &ExperimentSpec,
    bank: Option<&TemplateBank>,
    dataset: &Dataset,
) -> Result<Vec<MetricsRow>> {
    check_spec(spec, bank)?;
    if spec.depths.is_empty() {
        return Err(Error::Input("depth sweep needs a non-empty depths list".into()));
    }
    let mut cells = Vec::new();
    for &depth in &spec.depths {
        for &method in &spec.methods {
            for &seed in &spec.seeds {
                let mask = match method {
                    Method::Wave => ComponentMask::ALL,
                    _ => ComponentMask::NONE,
                };
                cells.push(Cell { method, depth, width: spec.base.embed_dim, mask, seed });
            }
        }
    }
    run_grid(spec, bank, dataset, cells)
}

/// Varies width at the base depth. Wave cells compose every slot.
pub fn run_width_sweep(
    spec: &ExperimentSpec,
    bank: Option<&TemplateBank>,
    dataset: &Dataset,
) -> Result<Vec<MetricsRow>> {
    check_spec(spec, bank)?;
    if spec.widths.is_empty() {
        return Err(Error::Input("width sweep needs a non-empty widths list".into()));
    }
    let mut cells = Vec::new();
    for &width in &spec.widths {
        for &method in &spec.methods {
            for &seed in &spec.seeds {
                let mask = match method {
                    Method::Wave => ComponentMask::ALL,
                    _ => ComponentMask::NONE,
                };
                cells.push(Cell { method, depth: spec.base.depth, width, mask, seed });
            }
        }
    }
    run_grid(spec, bank, dataset, cells)
}

/// All eight component subsets at the base shape, as wave cells over a He
/// scaffold. The empty subset degenerates to the plain He baseline.
pub fn run_component_ablation(
    spec: &ExperimentSpec,
    bank: &TemplateBank,
    dataset: &Dataset,
) -> Result<Vec<MetricsRow>> {
    spec.base.validate()?;
    if spec.seeds.is_empty() {
        return Err(Error::Input("experiment needs at least one seed".into()));
    }
    let mut cells = Vec::new();
    for mask in ComponentMask::all_subsets() {
        for &seed in &spec.seeds {
            cells.push(Cell {
                method: Method::Wave,
                depth: spec.base.depth,
                width: spec.base.embed_dim,
                mask,
                seed,
            });
        }
    }
    run_grid(spec, Some(bank), dataset, cells)
}
