//! One function per subcommand plus the manifest plumbing they share.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use wave_core::bench::{
    cell_config, report_csv, run_component_ablation, run_depth_sweep, run_width_sweep, Dataset,
    MetricsRow,
};
use wave_core::learngene::{
    load_bank, load_checkpoint, scaler_shapes, write_atomic, CheckpointMeta, ScalersMeta,
    TemplateBank,
};
use wave_core::lifecycle::{
    condense, evaluate, fit_scalers, initialize_target, trace_csv, train_model, train_teacher,
    CondenseConfig, DecompressConfig, StepTrace,
};
use wave_core::rng::sub_seed;
use wave_core::vit::ModelConfig;
use wave_core::{Error, Result};

use crate::config::{load_config, require_file, RunConfig};

/// Everything a subcommand needs beyond its own flags.
pub struct Ctx {
    pub command: &'static str,
    pub config: RunConfig,
    pub out: PathBuf,
    pub seed: u64,
    pub seed_source: &'static str,
    /// Worker threads; 1 is the bit-exact mode, where recorded wall times
    /// are zeroed so identical reruns produce identical artifacts.
    pub threads: usize,
    started: Instant,
}

impl Ctx {
    pub fn new(
        command: &'static str,
        config_path: &Path,
        seed: Option<u64>,
        out_flag: Option<PathBuf>,
        threads: usize,
    ) -> Result<Ctx> {
        let config = load_config(config_path)?;
        let out = config.out_dir(out_flag)?;
        let (seed, seed_source) = match seed {
            Some(s) => (s, "flag"),
            None => {
                let s: u64 = rand::random();
                println!("seed: {s} (generated; pass --seed {s} to reproduce)");
                (s, "generated")
            }
        };
        Ok(Ctx { command, config, out, seed, seed_source, threads, started: Instant::now() })
    }

    fn artifact_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

#[derive(Serialize)]
struct ArtifactRecord {
    path: String,
    sha256: String,
}

/// Provenance record written at the end of every successful run.
#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    seed: u64,
    seed_source: &'a str,
    hash_algorithm: &'a str,
    config: &'a RunConfig,
    inputs: BTreeMap<String, ArtifactRecord>,
    artifacts: BTreeMap<String, ArtifactRecord>,
    metrics: BTreeMap<String, f64>,
    wall_time_seconds: f64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Collects artifacts and metrics during a run, then writes the manifest.
struct Recorder {
    inputs: BTreeMap<String, ArtifactRecord>,
    artifacts: BTreeMap<String, ArtifactRecord>,
    metrics: BTreeMap<String, f64>,
}

impl Recorder {
    fn new() -> Recorder {
        Recorder { inputs: BTreeMap::new(), artifacts: BTreeMap::new(), metrics: BTreeMap::new() }
    }

    fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        let sha256 = hash_file(path)?;
        self.inputs.insert(
            name.to_string(),
            ArtifactRecord { path: path.display().to_string(), sha256 },
        );
        Ok(())
    }

    /// Writes one artifact atomically and records its hash.
    fn write(&mut self, ctx: &Ctx, name: &str, bytes: &[u8]) -> Result<()> {
        let path = ctx.artifact_path(name);
        write_atomic(&path, bytes)?;
        self.artifacts.insert(
            name.to_string(),
            ArtifactRecord { path: path.display().to_string(), sha256: sha256_hex(bytes) },
        );
        Ok(())
    }

    fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    fn finish(self, ctx: &Ctx) -> Result<()> {
        let manifest = RunManifest {
            command: ctx.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: ctx.seed,
            seed_source: ctx.seed_source,
            hash_algorithm: "sha256",
            config: &ctx.config,
            inputs: self.inputs,
            artifacts: self.artifacts,
            metrics: self.metrics,
            wall_time_seconds: if ctx.threads == 1 {
                0.0
            } else {
                ctx.started.elapsed().as_secs_f64()
            },
        };
        let json = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| Error::Input(format!("manifest serialization: {e}")))?;
        write_atomic(&ctx.artifact_path("manifest.json"), &json)
    }
}

fn ensure_out_dir(ctx: &Ctx) -> Result<()> {
    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))
}

fn load_dataset(ctx: &Ctx) -> Result<Dataset> {
    let section = ctx.config.need_dataset()?;
    section.check_paths()?;
    section.load()
}

fn encode_bank_file(bank: &TemplateBank) -> Result<Vec<u8>> {
    wave_core::learngene::encode_bank(bank)
}

fn steps_csv(steps: &[StepTrace]) -> Vec<u8> {
    trace_csv(steps).into_bytes()
}

/// Rows for a single model's per-epoch accuracies, in report format.
fn epoch_rows(
    run_id: &str,
    method: &str,
    cfg: &ModelConfig,
    seed: u64,
    epochs: &[wave_core::lifecycle::EpochMetric],
    final_val: Option<f64>,
) -> Vec<MetricsRow> {
    let row = |epoch: usize, split: &str, top1: f64| MetricsRow {
        run_id: run_id.to_string(),
        method: method.to_string(),
        depth: cfg.depth,
        width: cfg.embed_dim,
        components_mask: "-".to_string(),
        seed,
        epoch,
        split: split.to_string(),
        top1,
        params_transferred: 0,
        wall_time: 0.0,
    };
    let mut rows = Vec::new();
    for e in epochs {
        rows.push(row(e.epoch, "train", e.train_top1));
        rows.push(row(e.epoch, "val", e.val_top1));
    }
    if let Some(v) = final_val {
        if epochs.is_empty() {
            rows.push(row(0, "val", v));
        }
    }
    rows
}

pub fn cmd_teach(ctx: &Ctx) -> Result<()> {
    let model = ctx.config.need_model()?.clone();
    let budget = *ctx.config.need_train()?;
    let data = load_dataset(ctx)?;
    ensure_out_dir(ctx)?;

    let outcome = train_teacher(&model, &data, &budget, ctx.seed)?;
    let val_top1 = evaluate(&outcome.params, &model, &data.val, budget.batch_size)?;

    let mut rec = Recorder::new();
    let meta = CheckpointMeta { config: model, method: "teacher".to_string(), seed: ctx.seed };
    let bytes = wave_core::learngene::encode_checkpoint(&outcome.params, &meta)?;
    rec.write(ctx, "teacher.wave", &bytes)?;
    rec.write(ctx, "trace.csv", &steps_csv(&outcome.steps))?;
    rec.metric("val_top1", val_top1);
    if let Some(last) = outcome.epochs.last() {
        rec.metric("train_top1", last.train_top1);
    }
    rec.finish(ctx)?;
    println!("teacher val top-1: {val_top1:.2}");
    Ok(())
}

pub fn cmd_condense(ctx: &Ctx, teacher: &Path) -> Result<()> {
    require_file(teacher, "teacher checkpoint")?;
    let bank_section = ctx.config.need_bank()?.clone();
    let section = ctx.config.need_condense()?.clone();
    let data = load_dataset(ctx)?;
    ensure_out_dir(ctx)?;

    let mut rec = Recorder::new();
    rec.input("teacher", teacher)?;
    let teacher_tag = rec.inputs["teacher"].sha256.clone();
    let (teacher_params, teacher_meta) = load_checkpoint(teacher)?;

    let seed_bank = wave_core::learngene::bank_init(
        bank_section.template_size,
        bank_section.counts,
        sub_seed(ctx.seed, "bank"),
    )?;
    let ccfg = CondenseConfig {
        aux: section.aux,
        epochs: section.epochs,
        batch_size: section.batch_size,
        learning_rate: section.learning_rate,
        weight_decay: section.weight_decay,
        temperature: section.temperature,
        seed: ctx.seed,
        teacher_tag,
    };
    let outcome = condense(&teacher_params, &teacher_meta.config, &seed_bank, &data, &ccfg)?;

    rec.write(ctx, "bank.wave", &encode_bank_file(&outcome.bank)?)?;
    rec.write(ctx, "trace.csv", &steps_csv(&outcome.steps))?;
    if let Some(last) = outcome.epochs.last() {
        rec.metric("aux_val_top1", last.val_top1);
    }
    if let Some(last) = outcome.steps.last() {
        rec.metric("final_loss", last.loss_total);
    }
    rec.finish(ctx)?;
    println!("bank written: {}", ctx.artifact_path("bank.wave").display());
    Ok(())
}

pub fn cmd_init(
    ctx: &Ctx,
    bank_path: &Path,
    depth: Option<usize>,
    width: Option<usize>,
    fit_iters: Option<usize>,
) -> Result<()> {
    require_file(bank_path, "bank file")?;
    let model = ctx.config.need_model()?.clone();
    let section = ctx.config.need_decompress()?.clone();

    let mut rec = Recorder::new();
    rec.input("bank", bank_path)?;
    let hash_before = rec.inputs["bank"].sha256.clone();
    let bank = load_bank(bank_path)?;

    let target = cell_config(
        &model,
        depth.unwrap_or(model.depth),
        width.unwrap_or(model.embed_dim),
    )?;
    // Shape compatibility is checked before the dataset is even opened.
    scaler_shapes(&bank, &target)?;

    let data = load_dataset(ctx)?;
    ensure_out_dir(ctx)?;

    let dcfg = DecompressConfig {
        target: target.clone(),
        fit_iterations: fit_iters.unwrap_or(section.fit_iterations),
        fit_subset_size: section.fit_subset_size,
        batch_size: section.batch_size,
        learning_rate: section.learning_rate,
        weight_decay: section.weight_decay,
        seed: ctx.seed,
    };
    let fit = fit_scalers(&bank, &dcfg, &data)?;
    let params = initialize_target(&bank, &fit.scalers, &target, sub_seed(ctx.seed, "init"))?;

    // The bank is read-only for this whole command.
    if hash_file(bank_path)? != hash_before {
        return Err(Error::State("bank file changed during scaler fit".into()));
    }

    let val_top1 = evaluate(&params, &target, &data.val, dcfg.batch_size)?;
    let meta = CheckpointMeta { config: target.clone(), method: "wave".to_string(), seed: ctx.seed };
    rec.write(ctx, "model.wave", &wave_core::learngene::encode_checkpoint(&params, &meta)?)?;
    let smeta = ScalersMeta {
        config: target,
        template_size: bank.template_size(),
        counts: bank.counts(),
        seed: ctx.seed,
    };
    rec.write(ctx, "scalers.wave", &wave_core::learngene::encode_scalers(&fit.scalers, &smeta)?)?;
    rec.write(ctx, "trace.csv", &steps_csv(&fit.steps))?;
    rec.metric("init_val_top1", val_top1);
    if let Some(last) = fit.steps.last() {
        rec.metric("final_fit_loss", last.loss_total);
    }
    rec.finish(ctx)?;
    println!("initialized val top-1: {val_top1:.2}");
    Ok(())
}

pub fn cmd_train(ctx: &Ctx, checkpoint: &Path) -> Result<()> {
    require_file(checkpoint, "checkpoint")?;
    let budget = *ctx.config.need_train()?;
    let data = load_dataset(ctx)?;
    ensure_out_dir(ctx)?;

    let mut rec = Recorder::new();
    rec.input("checkpoint", checkpoint)?;
    let (params, meta) = load_checkpoint(checkpoint)?;
    let outcome = train_model(params, &meta.config, &data, &budget, ctx.seed)?;
    let val_top1 = evaluate(&outcome.params, &meta.config, &data.val, budget.batch_size)?;

    let new_meta = CheckpointMeta {
        config: meta.config.clone(),
        method: meta.method.clone(),
        seed: ctx.seed,
    };
    rec.write(
        ctx,
        "model.wave",
        &wave_core::learngene::encode_checkpoint(&outcome.params, &new_meta)?,
    )?;
    rec.write(ctx, "trace.csv", &steps_csv(&outcome.steps))?;
    let run_id = format!("train-{}-s{}", meta.method, ctx.seed);
    let rows = epoch_rows(&run_id, &meta.method, &meta.config, ctx.seed, &outcome.epochs, Some(val_top1));
    rec.write(ctx, "metrics.csv", report_csv(&rows).as_bytes())?;
    rec.metric("val_top1", val_top1);
    rec.finish(ctx)?;
    println!("trained val top-1: {val_top1:.2}");
    Ok(())
}

pub fn cmd_eval(ctx: &Ctx, checkpoint: &Path) -> Result<()> {
    require_file(checkpoint, "checkpoint")?;
    let data = load_dataset(ctx)?;
    ensure_out_dir(ctx)?;
    let batch = ctx.config.train.as_ref().map(|t| t.batch_size).unwrap_or(64);

    let mut rec = Recorder::new();
    rec.input("checkpoint", checkpoint)?;
    let (params, meta) = load_checkpoint(checkpoint)?;
    let val_top1 = evaluate(&params, &meta.config, &data.val, batch)?;

    let run_id = format!("eval-{}-s{}", meta.method, ctx.seed);
    let rows = epoch_rows(&run_id, &meta.method, &meta.config, ctx.seed, &[], Some(val_top1));
    rec.write(ctx, "metrics.csv", report_csv(&rows).as_bytes())?;
    rec.metric("val_top1", val_top1);
    rec.finish(ctx)?;
    println!("val top-1: {val_top1:.2}");
    Ok(())
}

fn load_optional_bank(
    rec: &mut Recorder,
    bank_path: Option<&Path>,
) -> Result<Option<TemplateBank>> {
    match bank_path {
        Some(p) => {
            require_file(p, "bank file")?;
            rec.input("bank", p)?;
            Ok(Some(load_bank(p)?))
        }
        None => Ok(None),
    }
}

pub fn cmd_sweep(ctx: &Ctx, bank_path: Option<&Path>) -> Result<()> {
    let model = ctx.config.need_model()?.clone();
    let section = ctx.config.need_experiment()?.clone();
    let spec = section.to_spec(model);
    let axis_depth = !spec.depths.is_empty();
    let axis_width = !spec.widths.is_empty();
    if axis_depth == axis_width {
        return Err(Error::Input(
            "sweep needs exactly one non-empty axis: `experiment.depths` or `experiment.widths`"
                .into(),
        ));
    }

    let mut rec = Recorder::new();
    let bank = load_optional_bank(&mut rec, bank_path)?;
    let data = load_dataset(ctx)?;
    ensure_out_dir(ctx)?;

    let rows = if axis_depth {
        run_depth_sweep(&spec, bank.as_ref(), &data)?
    } else {
        run_width_sweep(&spec, bank.as_ref(), &data)?
    };
    rec.write(ctx, "report.csv", report_csv(&rows).as_bytes())?;
    rec.metric("rows", rows.len() as f64);
    rec.finish(ctx)?;
    println!("{} rows -> {}", rows.len(), ctx.artifact_path("report.csv").display());
    Ok(())
}

pub fn cmd_ablate(ctx: &Ctx, bank_path: &Path) -> Result<()> {
    let model = ctx.config.need_model()?.clone();
    let section = ctx.config.need_experiment()?.clone();
    let spec = section.to_spec(model);

    let mut rec = Recorder::new();
    require_file(bank_path, "bank file")?;
    rec.input("bank", bank_path)?;
    let bank = load_bank(bank_path)?;
    let data = load_dataset(ctx)?;
    ensure_out_dir(ctx)?;

    let rows = run_component_ablation(&spec, &bank, &data)?;
    rec.write(ctx, "report.csv", report_csv(&rows).as_bytes())?;
    rec.metric("rows", rows.len() as f64);
    rec.finish(ctx)?;
    println!("{} rows -> {}", rows.len(), ctx.artifact_path("report.csv").display());
    Ok(())
}
