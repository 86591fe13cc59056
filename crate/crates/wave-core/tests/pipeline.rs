//! Cross-module runs of the whole lifecycle: teach, condense, fit, compose,
//! train, with containers in between.

use wave_core::bench::{synthetic, SyntheticSpec};
use wave_core::learngene::{
    bank_init, encode_bank, load_bank, load_checkpoint, load_scalers, materialize,
    quantized_recompose_matches, save_bank, save_checkpoint, save_scalers, scalers_init,
    BankCounts, CheckpointMeta, ScalersMeta,
};
use wave_core::lifecycle::{
    condense, evaluate, fit_scalers, train_model, train_teacher, CondenseConfig, DecompressConfig,
    TrainBudget,
};
use wave_core::vit::{ComponentMask, ModelConfig};

fn dataset() -> wave_core::bench::Dataset {
    synthetic(&SyntheticSpec {
        classes: 4,
        train_samples: 48,
        val_samples: 16,
        image_size: 16,
        channels: 1,
        noise_std: 0.3,
        seed: 11,
    })
    .unwrap()
}

fn teacher_cfg() -> ModelConfig {
    ModelConfig::new(2, 24, 3, 8, 48, 8, 16, 1, 4).unwrap()
}

fn target_cfg() -> ModelConfig {
    ModelConfig::new(2, 16, 2, 8, 32, 8, 16, 1, 4).unwrap()
}

fn run_lifecycle(dir: &std::path::Path) -> (Vec<u8>, f64) {
    let data = dataset();
    let tcfg = teacher_cfg();
    let budget = TrainBudget {
        epochs: 1,
        batch_size: 16,
        learning_rate: 3e-3,
        weight_decay: 0.01,
    };
    let teacher = train_teacher(&tcfg, &data, &budget, 5).unwrap();

    let seed_bank = bank_init(8, BankCounts { att: 2, proj: 1, mlp: 2 }, 7).unwrap();
    let ccfg = CondenseConfig {
        aux: ModelConfig::new(2, 16, 2, 8, 32, 8, 16, 1, 4).unwrap(),
        epochs: 1,
        batch_size: 16,
        learning_rate: 1e-3,
        weight_decay: 0.0,
        temperature: 1.0,
        seed: 13,
        teacher_tag: "teacher-test".to_string(),
    };
    let condensed = condense(&teacher.params, &tcfg, &seed_bank, &data, &ccfg).unwrap();

    let bank_path = dir.join("bank.wave");
    save_bank(&bank_path, &condensed.bank).unwrap();
    let bank = load_bank(&bank_path).unwrap();
    assert_eq!(bank, condensed.bank);

    let dcfg = DecompressConfig {
        target: target_cfg(),
        fit_iterations: 12,
        fit_subset_size: 32,
        batch_size: 16,
        learning_rate: 1e-2,
        weight_decay: 0.0,
        seed: 17,
    };
    let fit = fit_scalers(&bank, &dcfg, &data).unwrap();

    // The bank on disk must be untouched by the fit.
    let after = std::fs::read(&bank_path).unwrap();
    assert_eq!(encode_bank(&bank).unwrap(), after);

    let params =
        wave_core::lifecycle::initialize_target(&bank, &fit.scalers, &dcfg.target, 19).unwrap();
    assert!(
        quantized_recompose_matches(&bank, &fit.scalers, &params, ComponentMask::ALL).unwrap()
    );

    let trained = train_model(params, &dcfg.target, &data, &budget, 23).unwrap();
    let top1 = evaluate(&trained.params, &dcfg.target, &data.val, 16).unwrap();
    (after, top1)
}

#[test]
fn lifecycle_is_deterministic_end_to_end() {
    let dir = std::env::temp_dir().join("wave-pipeline-a");
    std::fs::create_dir_all(&dir).unwrap();
    let (bank_a, top1_a) = run_lifecycle(&dir);
    let (bank_b, top1_b) = run_lifecycle(&dir);
    assert_eq!(bank_a, bank_b);
    assert_eq!(top1_a, top1_b);
    assert!((0.0..=100.0).contains(&top1_a));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn materialize_survives_container_roundtrip() {
    let dir = std::env::temp_dir().join("wave-pipeline-b");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = target_cfg();
    let mut bank = bank_init(8, BankCounts { att: 3, proj: 2, mlp: 3 }, 29).unwrap();
    bank.quantize_f32();
    let mut scalers = scalers_init(&bank, &cfg, 31).unwrap();
    scalers.quantize_f32();
    let before = materialize(&bank, &scalers).unwrap();

    let bank_path = dir.join("bank.wave");
    let scalers_path = dir.join("scalers.wave");
    save_bank(&bank_path, &bank).unwrap();
    let meta = ScalersMeta {
        config: cfg.clone(),
        template_size: bank.template_size(),
        counts: bank.counts(),
        seed: 31,
    };
    save_scalers(&scalers_path, &scalers, &meta).unwrap();

    let bank2 = load_bank(&bank_path).unwrap();
    let (scalers2, meta2) = load_scalers(&scalers_path).unwrap();
    assert_eq!(meta2.counts, bank.counts());
    let after = materialize(&bank2, &scalers2).unwrap();

    assert_eq!(before.len(), after.len());
    for (a, b) in before.iter().zip(&after) {
        assert_eq!(a.w_qkv, b.w_qkv);
        assert_eq!(a.w_proj, b.w_proj);
        assert_eq!(a.w_fc1, b.w_fc1);
        assert_eq!(a.w_fc2, b.w_fc2);
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn checkpoint_roundtrip_preserves_evaluation() {
    let dir = std::env::temp_dir().join("wave-pipeline-c");
    std::fs::create_dir_all(&dir).unwrap();
    let data = dataset();
    let cfg = target_cfg();
    let budget = TrainBudget {
        epochs: 1,
        batch_size: 16,
        learning_rate: 3e-3,
        weight_decay: 0.0,
    };
    let trained = train_teacher(&cfg, &data, &budget, 37).unwrap();
    let top1 = evaluate(&trained.params, &cfg, &data.val, 16).unwrap();

    let path = dir.join("model.wave");
    let meta = CheckpointMeta { config: cfg.clone(), method: "he_init".to_string(), seed: 37 };
    save_checkpoint(&path, &trained.params, &meta).unwrap();
    let (params2, meta2) = load_checkpoint(&path).unwrap();
    assert_eq!(meta2.method, "he_init");
    assert_eq!(evaluate(&params2, &cfg, &data.val, 16).unwrap(), top1);
    std::fs::remove_dir_all(&dir).ok();
}
