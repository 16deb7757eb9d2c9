use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sriqa::dataset::{sample_id, ContentClass, GroupKey, SampleRecord, Split};
use sriqa::imaging::{cubic_weight, extract_patches, resize_bicubic, ImageRGB, ScaleFactor, CUBIC_A};
use sriqa::labeling::{attach_labels, fit_decay, label_curve, screen_outliers, Anchor, DecayCurve, SubjectScores};
use sriqa::metrics::{krcc, plcc, srcc};
use sriqa::model::{build_model, fuse, pool_features, FusionMethod, ModelConfig, PatchInput, PoolingMode};
use sriqa::tensor::{layer_forward, loss_mse_l2, AdamState, LayerSpec, Tensor4};
use sriqa::trainer::split_dataset;

fn vec_strategy(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, len)
}

fn pair_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-50.0f64..50.0, n),
            prop::collection::vec(-50.0f64..50.0, n),
        )
    })
}

fn non_constant(v: &[f64]) -> bool {
    v.iter().any(|&a| a != v[0])
}

fn record(content: &str, t: u32) -> SampleRecord {
    let f = ScaleFactor::new(2.0).unwrap();
    let id = sample_id(content, "bicubic", f, t);
    SampleRecord {
        hr_path: format!("images/{id}.ppm").into(),
        lr_path: format!("images/{id}__lr.ppm").into(),
        sample_id: id,
        content_id: content.into(),
        content_class: ContentClass::Scenery,
        sr_method: "bicubic".into(),
        factor: f,
        iteration: t,
        imos: None,
        split: Split::Unassigned,
    }
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 64,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn maxpool_commutes_with_shift(seed in any::<u64>(), shift in -10.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..2 * 4 * 6 * 3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let x = Tensor4::from_vec([2, 4, 6, 3], data).unwrap();
        let (a, _) = layer_forward(&LayerSpec::Maxpool2, None, &x, false, &mut rng).unwrap();
        let (b, _) = layer_forward(&LayerSpec::Maxpool2, None, &x.map(|v| v + shift), false, &mut rng).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!((q - shift - p).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point(params in vec_strategy(1..30), steps in 1usize..20) {
        let mut p = params.clone();
        let zero = vec![0.0; p.len()];
        let mut adam = AdamState::new(1e-3, &p);
        for _ in 0..steps {
            adam.apply(&mut p, &zero).unwrap();
        }
        prop_assert_eq!(p, params);
    }

    #[test]
    fn cubic_weights_sum_to_one(phase in 0.0f64..1.0) {
        let s: f64 = (-1..=2).map(|k| cubic_weight(phase - k as f64, CUBIC_A)).sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn horizontally_constant_rows_stay_constant(
        h in 2usize..12, w in 2usize..12, ow in 1usize..20, oh in 1usize..20, seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<[u8; 3]> = (0..h).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let img = ImageRGB::from_fn(w, h, |_, y| rows[y]);
        let out = resize_bicubic(&img, ow, oh).unwrap();
        for y in 0..oh {
            for x in 1..ow {
                prop_assert_eq!(out.pixel(x, y), out.pixel(0, y));
            }
        }
    }

    #[test]
    fn patch_count_follows_floor_rule(w in 8usize..300, h in 8usize..300, size in 8usize..64) {
        let img = ImageRGB::filled(w, h, [1, 2, 3]);
        match extract_patches(&img, size) {
            Ok(t) => prop_assert_eq!(t.n(), (w / size) * (h / size)),
            Err(_) => prop_assert!(w < size || h < size),
        }
    }

    #[test]
    fn pooled_min_mean_max_ordered(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * 8 * 8 * 2).map(|_| rng.random_range(-3.0..3.0)).collect();
        let p = pool_features(&Tensor4::from_vec([n, 8, 8, 2], data).unwrap(), PoolingMode::Joint).unwrap();
        let t = &p.tensor;
        for j in 0..t.item_len() {
            prop_assert!(t.item(2)[j] <= t.item(0)[j] + 1e-12);
            prop_assert!(t.item(0)[j] <= t.item(1)[j] + 1e-12);
        }
    }

    #[test]
    fn difference_fusion_is_antisymmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pooled = || {
            let data: Vec<f64> = (0..3 * 8 * 8 * 2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let t = Tensor4::from_vec([3, 8, 8, 2], data).unwrap();
            pool_features(&t, PoolingMode::Joint).unwrap()
        };
        let (a, b) = (pooled(), pooled());
        let ab = fuse(&a, &b, FusionMethod::Difference).unwrap();
        let ba = fuse(&b, &a, FusionMethod::Difference).unwrap();
        for (x, y) in ab.data().iter().zip(ba.data()) {
            prop_assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn penalty_raises_loss(pred in vec_strategy(1..8), w in vec_strategy(1..20), lambda in 1e-6f64..1.0) {
        prop_assume!(w.iter().any(|&v| v != 0.0));
        let gt = vec![0.5; pred.len()];
        let a = loss_mse_l2(&pred, &gt, [w.as_slice()], 0.0).unwrap().loss;
        let b = loss_mse_l2(&pred, &gt, [w.as_slice()], lambda).unwrap().loss;
        prop_assert!(b > a);
    }

    #[test]
    fn split_is_content_disjoint(seed in any::<u64>(), contents in 2usize..30, ratio in 0.05f64..0.95) {
        let recs: Vec<SampleRecord> = (0..contents)
            .flat_map(|c| (1..=3).map(move |t| record(&format!("c{c:02}"), t)))
            .collect();
        let (train, test) = split_dataset(&recs, ratio, seed).unwrap();
        prop_assert_eq!(train.len() + test.len(), recs.len());
        for r in &train {
            prop_assert!(test.iter().all(|q| q.content_id != r.content_id));
        }
        let (train2, _) = split_dataset(&recs, ratio, seed).unwrap();
        prop_assert_eq!(train, train2);
    }

    #[test]
    fn single_anchor_round_trip(b in 0.01f64..2.0, k in 1u32..10) {
        let curve = label_curve(b, k);
        let fitted = fit_decay(&[Anchor { k, imos: curve[k as usize] }]).unwrap();
        prop_assert!((fitted - b).abs() < 1e-12);
    }

    #[test]
    fn curves_strictly_decrease(b in 1e-3f64..3.0, t_max in 2u32..12) {
        let c = label_curve(b, t_max);
        prop_assert_eq!(c.len(), t_max as usize + 1);
        prop_assert_eq!(c[0], 1.0);
        for w in c.windows(2) {
            prop_assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn screening_ignores_subject_order(seed in any::<u64>(), n in 5usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut panel: Vec<SubjectScores> = (0..n)
            .map(|s| SubjectScores {
                subject_id: format!("s{s:02}"),
                scores: (0..4)
                    .map(|k| (format!("x{k}"), (rng.random_range(0..=100) as f64) / 10.0))
                    .collect::<BTreeMap<_, _>>(),
            })
            .collect();
        let a = screen_outliers(&panel);
        panel.reverse();
        let b = screen_outliers(&panel);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "screening outcome depends on order"),
        }
    }

    #[test]
    fn attach_labels_idempotent(b in 0.05f64..1.0, t_max in 1u32..9) {
        let recs: Vec<SampleRecord> = (1..=t_max).map(|t| record("c", t)).collect();
        let curve = DecayCurve { group: GroupKey { content_id: "c".into(), sr_method: "bicubic".into(), factor: recs[0].factor }, b };
        let once = attach_labels(&recs, std::slice::from_ref(&curve)).unwrap();
        let twice = attach_labels(&once, &[curve]).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn plcc_affine_invariance((x, y) in pair_strategy(), a in 0.1f64..10.0, c in -10.0f64..10.0) {
        prop_assume!(non_constant(&x) && non_constant(&y));
        let r = plcc(&x, &y).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| a * v + c).collect();
        prop_assert!((plcc(&xs, &y).unwrap() - r).abs() < 1e-9);
        let neg: Vec<f64> = x.iter().map(|v| -a * v).collect();
        prop_assert!((plcc(&neg, &y).unwrap() + r).abs() < 1e-9);
        prop_assert!((plcc(&y, &x).unwrap() - r).abs() < 1e-12);
    }

    #[test]
    fn rank_coefficients_monotone_invariant((x, y) in pair_strategy()) {
        prop_assume!(non_constant(&x) && non_constant(&y));
        let warped: Vec<f64> = x.iter().map(|v| (v / 10.0).exp() + v.powi(3)).collect();
        prop_assert!((srcc(&warped, &y).unwrap() - srcc(&x, &y).unwrap()).abs() < 1e-12);
        prop_assert!((krcc(&warped, &y).unwrap() - krcc(&x, &y).unwrap()).abs() < 1e-12);
        prop_assert!((srcc(&y, &x).unwrap() - srcc(&x, &y).unwrap()).abs() < 1e-12);
        prop_assert!((krcc(&y, &x).unwrap() - krcc(&x, &y).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn inverted_dropout_preserves_expectation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor4::from_vec([1, 1, 1, 4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
    let trials = 10_000;
    let mut sum = [0.0; 4];
    for _ in 0..trials {
        let (y, _) = layer_forward(&LayerSpec::Dropout { p: 0.5 }, None, &x, true, &mut rng).unwrap();
        for (s, v) in sum.iter_mut().zip(y.data()) {
            *s += v;
        }
    }
    for (s, v) in sum.iter().zip(x.data()) {
        let mean = s / trials as f64;
        // Each draw is 0 or 2v: standard deviation |v|.
        let se = v.abs() / (trials as f64).sqrt();
        assert!((mean - v).abs() <= 3.0 * se, "{mean} vs {v}");
    }
}

#[test]
fn prediction_ignores_patch_order() {
    let config = ModelConfig {
        width_c: 8,
        head_units: vec![16, 8, 1],
        ..ModelConfig::default()
    };
    let model = build_model(&config, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let hr = ImageRGB::from_fn(256, 128, |_, _| [rng.random(), rng.random(), rng.random()]);
    let lr = ImageRGB::from_fn(128, 64, |_, _| [rng.random(), rng.random(), rng.random()]);
    let input = PatchInput::from_images(&hr, Some(&lr)).unwrap();
    let shuffled = PatchInput {
        hr: input.hr.select(&[1, 0]).unwrap(),
        lr: Some(input.lr.as_ref().unwrap().select(&[7, 3, 5, 1, 0, 2, 6, 4]).unwrap()),
    };
    let a = model.predict_patches(&input).unwrap();
    let b = model.predict_patches(&shuffled).unwrap();
    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
}
