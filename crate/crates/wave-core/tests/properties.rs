//! Randomized invariants over the public surface.

use proptest::prelude::*;

use wave_core::bench::{report_csv, MetricsRow, REPORT_HEADER};
use wave_core::kron::{block_partition, compose_weight, kron_product, Scaler, Template};
use wave_core::learngene::{
    bank_init, decode_bank, encode_bank, scaler_shapes, transferred_param_count, BankCounts,
};
use wave_core::lifecycle::distill_loss;
use wave_core::rng;
use wave_core::tensor::ops::{cross_entropy, kl_soft, matmul, softmax_rows};
use wave_core::tensor::{Logits, Matrix};
use wave_core::vit::{forward, Image, ModelConfig, ModelParams};

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(lo..hi, rows * cols)
        .prop_map(move |data| Matrix::from_vec(rows, cols, data).unwrap())
}

fn factor_pairs() -> impl Strategy<Value = (Vec<Template>, Vec<Scaler>)> {
    (1usize..=3, 1usize..=3, 1usize..=3, 1usize..=3, 1usize..=3).prop_flat_map(
        |(count, t1, t2, s1, s2)| {
            (
                prop::collection::vec(matrix(t1, t2, -2.0, 2.0), count),
                prop::collection::vec(matrix(s1, s2, -2.0, 2.0), count),
            )
                .prop_map(|(ts, ss)| {
                    (
                        ts.into_iter().map(Template).collect::<Vec<_>>(),
                        ss.into_iter().map(Scaler).collect::<Vec<_>>(),
                    )
                })
        },
    )
}

proptest! {
    #[test]
    fn compose_matches_kron_sum((templates, scalers) in factor_pairs()) {
        let composed = compose_weight(&templates, &scalers).unwrap();
        let mut oracle = kron_product(&templates[0].0, &scalers[0].0);
        for (t, s) in templates.iter().zip(&scalers).skip(1) {
            oracle.add_assign(&kron_product(&t.0, &s.0));
        }
        prop_assert!(composed.max_abs_diff(&oracle) < 1e-9);
    }

    #[test]
    fn compose_shape_law((templates, scalers) in factor_pairs()) {
        let w = compose_weight(&templates, &scalers).unwrap();
        let (t1, t2) = templates[0].0.shape();
        let (s1, s2) = scalers[0].0.shape();
        prop_assert_eq!(w.shape(), (t1 * s1, t2 * s2));
    }

    #[test]
    fn compose_is_bilinear(
        (templates, scalers) in factor_pairs(),
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
    ) {
        let base = compose_weight(&templates, &scalers).unwrap();

        // Linear in templates for fixed scalers.
        let scaled_t: Vec<Template> = templates
            .iter()
            .map(|t| {
                let mut m = t.0.clone();
                m.scale(alpha);
                Template(m)
            })
            .collect();
        let left = compose_weight(&scaled_t, &scalers).unwrap();
        let mut right = base.clone();
        right.scale(alpha);
        prop_assert!(left.max_abs_diff(&right) < 1e-9);

        // Linear in scalers for fixed templates, including sums.
        let scaled_s: Vec<Scaler> = scalers
            .iter()
            .map(|s| {
                let mut m = s.0.clone();
                m.scale(beta);
                Scaler(m)
            })
            .collect();
        let summed: Vec<Scaler> = scalers
            .iter()
            .zip(&scaled_s)
            .map(|(a, b)| {
                let mut m = a.0.clone();
                m.add_assign(&b.0);
                Scaler(m)
            })
            .collect();
        let lhs = compose_weight(&templates, &summed).unwrap();
        let mut rhs = compose_weight(&templates, &scaled_s).unwrap();
        rhs.add_assign(&base);
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-9);
    }

    #[test]
    fn kron_entries_match_index_oracle(
        a in (1usize..=3, 1usize..=3).prop_flat_map(|(r, c)| matrix(r, c, -2.0, 2.0)),
        b in (1usize..=3, 1usize..=3).prop_flat_map(|(r, c)| matrix(r, c, -2.0, 2.0)),
    ) {
        let k = kron_product(&a, &b);
        let (rb, cb) = b.shape();
        prop_assert_eq!(k.shape(), (a.rows() * rb, a.cols() * cb));
        for r in 0..k.rows() {
            for c in 0..k.cols() {
                let expect = a.get(r / rb, c / cb) * b.get(r % rb, c % cb);
                prop_assert_eq!(k.get(r, c), expect);
            }
        }
    }

    #[test]
    fn partition_reassemble_roundtrip(
        (w, b1, b2, g1, g2) in (1usize..=3, 1usize..=3, 1usize..=4, 1usize..=4)
            .prop_flat_map(|(g1, g2, b1, b2)| {
                matrix(g1 * b1, g2 * b2, -5.0, 5.0).prop_map(move |w| (w, b1, b2, g1, g2))
            }),
    ) {
        let grid = block_partition(&w, b1, b2).unwrap();
        prop_assert_eq!(grid.grid_shape(), (g1, g2));
        prop_assert_eq!(grid.block_shape(), (b1, b2));
        prop_assert_eq!(grid.reassemble(), w);
    }

    #[test]
    fn softmax_rows_sum_to_one(
        x in (1usize..=5, 1usize..=6).prop_flat_map(|(r, c)| matrix(r, c, -50.0, 50.0)),
    ) {
        let p = softmax_rows(&x);
        for r in 0..p.rows() {
            let sum: f64 = p.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9, "row {} sums to {}", r, sum);
            prop_assert!(p.row(r).iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn kl_soft_nonnegative_and_zero_on_match(
        zt in (2usize..=4, 2usize..=5).prop_flat_map(|(r, c)| matrix(r, c, -8.0, 8.0)),
        delta in prop::collection::vec(-4.0f64..4.0, 20),
        tau in 0.5f64..4.0,
    ) {
        let mut zs = zt.clone();
        for (i, v) in zs.as_mut_slice().iter_mut().enumerate() {
            *v += delta[i % delta.len()];
        }
        let kl = kl_soft(&Logits(zt.clone()), &Logits(zs), tau).unwrap();
        prop_assert!(kl >= -1e-9, "kl = {}", kl);
        let same = kl_soft(&Logits(zt.clone()), &Logits(zt), tau).unwrap();
        prop_assert!(same.abs() < 1e-12, "kl at equal inputs = {}", same);
    }

    #[test]
    fn matmul_is_associative(
        (a, b, c) in (1usize..=4, 1usize..=4, 1usize..=4, 1usize..=4).prop_flat_map(
            |(m, k, n, p)| {
                (matrix(m, k, -2.0, 2.0), matrix(k, n, -2.0, 2.0), matrix(n, p, -2.0, 2.0))
            },
        ),
    ) {
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        let scale = 1.0 + left.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(left.max_abs_diff(&right) / scale < 1e-5);
    }

    #[test]
    fn distill_loss_decomposes(
        (zt, zs) in (2usize..=3, 3usize..=4).prop_flat_map(|(r, c)| {
            (matrix(r, c, -4.0, 4.0), matrix(r, c, -4.0, 4.0))
        }),
        tau in 0.5f64..3.0,
    ) {
        let labels: Vec<usize> = (0..zt.rows()).map(|i| i % zt.cols()).collect();
        let parts = distill_loss(&Logits(zt.clone()), &Logits(zs.clone()), &labels, tau).unwrap();
        let kl = kl_soft(&Logits(zt.clone()), &Logits(zs.clone()), tau).unwrap();
        let ce = cross_entropy(&Logits(zs.clone()), &labels).unwrap();
        prop_assert_eq!(parts.kl, kl);
        prop_assert_eq!(parts.ce, ce);
        prop_assert_eq!(parts.total, kl + ce);
        prop_assert_eq!(parts.grad.shape(), zs.shape());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // Scalers stay a small fraction of the weights they compose whenever the
    // template is reasonably sized. The bound below fails for tiny templates
    // (t = 8 with eight templates per group reaches 12.5%), so the domain
    // starts at t = 16.
    #[test]
    fn scaler_budget_stays_under_five_percent(
        t_pick in 0usize..3,
        m in 1usize..=4,
        h in 1usize..=8,
        depth in 2usize..=4,
        att in 1usize..=8,
        proj in 1usize..=8,
        mlp in 1usize..=8,
    ) {
        let t = [16, 24, 32][t_pick];
        let cfg = ModelConfig::new(depth, t * m, m, t, t * h, 4, 8, 1, 3).unwrap();
        let bank = bank_init(t, BankCounts { att, proj, mlp }, 9).unwrap();
        let shapes = scaler_shapes(&bank, &cfg).unwrap();
        let scaler_params = shapes.params_per_layer() * depth;
        let d = cfg.embed_dim;
        let templated = depth * (d * 3 * d + d * d + 2 * d * cfg.mlp_hidden);
        prop_assert!(
            (scaler_params as f64) < 0.05 * templated as f64,
            "{} scaler params vs {} templated",
            scaler_params,
            templated
        );
    }

    #[test]
    fn transferred_count_ignores_targets(
        t in 2usize..=6,
        att in 1usize..=4,
        proj in 1usize..=4,
        mlp in 1usize..=4,
    ) {
        let bank = bank_init(t, BankCounts { att, proj, mlp }, 3).unwrap();
        prop_assert_eq!(transferred_param_count(&bank), (att + proj + mlp) * t * t);
    }

    #[test]
    fn bank_encoding_roundtrips(
        t in 1usize..=5,
        att in 1usize..=3,
        proj in 1usize..=3,
        mlp in 1usize..=3,
        seed in 0u64..1000,
    ) {
        let mut bank = bank_init(t, BankCounts { att, proj, mlp }, seed).unwrap();
        bank.quantize_f32();
        let bytes = encode_bank(&bank).unwrap();
        let back = decode_bank(&bytes).unwrap();
        prop_assert_eq!(back, bank);
    }

    #[test]
    fn batch_permutation_permutes_logits(
        seed in 0u64..500,
        rotate in 1usize..4,
    ) {
        let cfg = ModelConfig::new(1, 8, 1, 8, 16, 4, 8, 1, 3).unwrap();
        let mut stream = rng::seeded(seed);
        let params = {
            let mut p = ModelParams::zeros(&cfg);
            for m in p.tensors_mut() {
                *m = rng::trunc_normal(&mut stream, m.rows(), m.cols(), 0.05);
            }
            p
        };
        let images: Vec<Image> = (0..4)
            .map(|_| {
                let pix = rng::trunc_normal(&mut stream, 8, 8, 1.0);
                Image { height: 8, width: 8, channels: 1, data: pix.as_slice().to_vec() }
            })
            .collect();
        let base = forward(&images, &params, &cfg).unwrap();
        let mut rotated = images.clone();
        rotated.rotate_left(rotate);
        let moved = forward(&rotated, &params, &cfg).unwrap();
        for i in 0..images.len() {
            let j = (i + rotate) % images.len();
            prop_assert_eq!(base.0.row(j), moved.0.row(i));
        }
    }
}

fn arb_row() -> impl Strategy<Value = MetricsRow> {
    (
        prop::sample::select(vec!["a", "b", "c", "run-9", "zz"]),
        0usize..6,
        prop::sample::select(vec!["train", "val"]),
        0.0f64..100.0,
    )
        .prop_map(|(id, epoch, split, top1)| MetricsRow {
            run_id: id.to_string(),
            method: "he".to_string(),
            depth: 2,
            width: 16,
            components_mask: "none".to_string(),
            seed: 7,
            epoch,
            split: split.to_string(),
            top1,
            params_transferred: 0,
            wall_time: 0.0,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn report_rows_sort_stably(rows in prop::collection::vec(arb_row(), 1..100)) {
        let csv = report_csv(&rows);
        let mut lines = csv.lines();
        prop_assert_eq!(lines.next().unwrap(), REPORT_HEADER);

        // Independent oracle: stable sort of row indices by (run_id, epoch).
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by(|&i, &j| {
            rows[i].run_id.cmp(&rows[j].run_id).then(rows[i].epoch.cmp(&rows[j].epoch))
        });
        for &i in &order {
            let line = lines.next().unwrap();
            let r = &rows[i];
            let expect = format!(
                "{},{},{},{},{},{},{},{},{},{},{}",
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
            );
            prop_assert_eq!(line, expect);
        }
        prop_assert!(lines.next().is_none());
    }
}
