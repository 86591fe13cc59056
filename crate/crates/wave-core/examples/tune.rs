// Scratch validation harness: runs the acceptance fixture through the
// production sweep paths end to end and prints per-cell means.

use std::time::Instant;

use wave_core::bench::{
    run_component_ablation, run_depth_sweep, run_width_sweep, synthetic, Budgets, ExperimentSpec,
    Method, MetricsRow, SyntheticSpec,
};
use wave_core::learngene::{bank_init, BankCounts};
use wave_core::lifecycle::{condense, evaluate, train_teacher, CondenseConfig, TrainBudget};
use wave_core::vit::ModelConfig;

fn final_val(rows: &[MetricsRow]) -> Vec<&MetricsRow> {
    let mut out: Vec<&MetricsRow> = Vec::new();
    for r in rows.iter().filter(|r| r.split == "val") {
        if let Some(existing) = out
            .iter_mut()
            .find(|e| e.run_id == r.run_id)
        {
            if r.epoch > existing.epoch {
                *existing = r;
            }
        } else {
            out.push(r);
        }
    }
    out
}

fn mean_where(rows: &[&MetricsRow], f: impl Fn(&MetricsRow) -> bool) -> f64 {
    let picked: Vec<f64> = rows.iter().filter(|r| f(r)).map(|r| r.top1).collect();
    picked.iter().sum::<f64>() / picked.len() as f64
}

fn main() {
    let t0 = Instant::now();
    let data = synthetic(&SyntheticSpec {
        classes: 4,
        train_samples: 2048,
        val_samples: 512,
        image_size: 16,
        channels: 1,
        noise_std: 0.25,
        seed: 101,
    })
    .unwrap();

    let teacher_cfg = ModelConfig::new(4, 64, 8, 8, 128, 4, 16, 1, 4).unwrap();
    let teacher = train_teacher(
        &teacher_cfg,
        &data,
        &TrainBudget { epochs: 3, batch_size: 32, learning_rate: 3e-3, weight_decay: 0.01 },
        1001,
    )
    .unwrap();
    let tv = evaluate(&teacher.params, &teacher_cfg, &data.val, 256).unwrap();
    println!("[{:6.1}s] teacher val {tv:.1}", t0.elapsed().as_secs_f64());

    let bank0 = bank_init(16, BankCounts { att: 32, proj: 32, mlp: 32 }, 77).unwrap();
    let ccfg = CondenseConfig {
        aux: ModelConfig::new(3, 32, 4, 8, 64, 4, 16, 1, 4).unwrap(),
        epochs: 3,
        batch_size: 32,
        learning_rate: 1e-2,
        weight_decay: 0.01,
        temperature: 2.0,
        seed: 55,
        teacher_tag: "tune".into(),
    };
    let cond = condense(&teacher.params, &teacher_cfg, &bank0, &data, &ccfg).unwrap();
    let av = evaluate(&cond.aux_params, &ccfg.aux, &data.val, 256).unwrap();
    println!("[{:6.1}s] aux val {av:.1}", t0.elapsed().as_secs_f64());
    let bank = cond.bank;

    let spec = ExperimentSpec {
        base: ModelConfig::new(2, 32, 4, 8, 64, 4, 16, 1, 4).unwrap(),
        methods: vec![Method::Wave, Method::HeInit],
        depths: vec![2, 4],
        widths: vec![16, 32, 48],
        seeds: vec![1, 2, 3],
        budgets: Budgets {
            train_epochs: 1,
            direct_pt_epochs: 4,
            fit_iterations: 300,
            fit_subset_size: 2048,
            batch_size: 256,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            fit_batch_size: Some(64),
            fit_learning_rate: Some(3e-3),
        },
        record_wall_time: false,
    };

    let depth_rows = run_depth_sweep(&spec, Some(&bank), &data).unwrap();
    let dv = final_val(&depth_rows);
    for d in [2usize, 4] {
        let w = mean_where(&dv, |r| r.method == "wave" && r.depth == d);
        let h = mean_where(&dv, |r| r.method == "he" && r.depth == d);
        println!(
            "[{:6.1}s] depth {d}: wave {w:.1} he {h:.1} gap {:+.1}",
            t0.elapsed().as_secs_f64(),
            w - h
        );
    }

    let width_rows = run_width_sweep(&spec, Some(&bank), &data).unwrap();
    let wv = final_val(&width_rows);
    for wd in [16usize, 32, 48] {
        let w = mean_where(&wv, |r| r.method == "wave" && r.width == wd);
        let h = mean_where(&wv, |r| r.method == "he" && r.width == wd);
        println!(
            "[{:6.1}s] width {wd}: wave {w:.1} he {h:.1} gap {:+.1}",
            t0.elapsed().as_secs_f64(),
            w - h
        );
    }

    let ab_rows = run_component_ablation(&spec, &bank, &data).unwrap();
    let av2 = final_val(&ab_rows);
    for mask in ["att+proj+fc", "att", "proj", "fc", "none"] {
        let m = mean_where(&av2, |r| r.components_mask == mask);
        println!("[{:6.1}s] mask {mask}: {m:.1}", t0.elapsed().as_secs_f64());
    }

    // all-off rows must match the plain He rows from the depth sweep.
    for seed in [1u64, 2, 3] {
        let he: Vec<(usize, String, f64)> = depth_rows
            .iter()
            .filter(|r| r.method == "he" && r.depth == 2 && r.seed == seed)
            .map(|r| (r.epoch, r.split.clone(), r.top1))
            .collect();
        let off: Vec<(usize, String, f64)> = ab_rows
            .iter()
            .filter(|r| r.components_mask == "none" && r.seed == seed)
            .map(|r| (r.epoch, r.split.clone(), r.top1))
            .collect();
        assert_eq!(he, off, "all-off diverged from He at seed {seed}");
    }
    println!("[{:6.1}s] all-off == he rows exactly; done", t0.elapsed().as_secs_f64());
}
