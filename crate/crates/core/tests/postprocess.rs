mod common;

use common::{is_greedy_nms_fixed_point, random_detections, rng, soft_nms_loop};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use reasdet_core::postprocess::{iou, nms, soft_nms, soft_nms_with_stats};
use reasdet_core::{BBox, Detection, SuppressionConfig, SuppressionMode};

fn config(mode: SuppressionMode, sigma: f64, eta0: f64) -> SuppressionConfig {
    SuppressionConfig {
        mode,
        sigma,
        eta0,
        ..SuppressionConfig::default()
    }
}

fn modes() -> impl Strategy<Value = SuppressionMode> {
    prop_oneof![
        Just(SuppressionMode::Hard),
        Just(SuppressionMode::Gaussian),
        Just(SuppressionMode::Linear)
    ]
}

fn by_score(dets: &[Detection]) -> Vec<Detection> {
    let mut v = dets.to_vec();
    v.sort_by(|a, b| b.score.total_cmp(&a.score));
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn scores_never_rise_and_boxes_never_move(
        seed in any::<u64>(),
        n in 0usize..40,
        mode in modes(),
        sigma in 0.05f64..2.0,
        eta0 in 0.1f64..0.9,
    ) {
        let dets = random_detections(&mut rng(seed), n, 3);
        let out = soft_nms(&dets, &config(mode, sigma, eta0)).unwrap();
        prop_assert!(out.len() <= dets.len());
        let mut used = vec![false; dets.len()];
        for d in &out {
            let src = (0..dets.len())
                .find(|&i| !used[i] && dets[i].bbox == d.bbox && dets[i].class_id == d.class_id && d.score <= dets[i].score);
            prop_assert!(src.is_some(), "{d:?} has no source detection");
            used[src.unwrap()] = true;
        }
        prop_assert!(out.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn gaussian_matches_loop_oracle(seed in any::<u64>(), n in 0usize..30, sigma in 0.05f64..2.0) {
        let dets = random_detections(&mut rng(seed), n, 2);
        let cfg = config(SuppressionMode::Gaussian, sigma, 0.5);
        let got = soft_nms(&dets, &cfg).unwrap();
        let want = soft_nms_loop(&dets, sigma, 0.5, false, cfg.score_floor);
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            prop_assert_eq!(g.bbox, w.bbox);
            prop_assert!((g.score - w.score).abs() <= 1e-9);
        }
    }

    #[test]
    fn linear_matches_loop_oracle(seed in any::<u64>(), n in 0usize..30, eta0 in 0.1f64..0.9) {
        let dets = random_detections(&mut rng(seed), n, 2);
        let cfg = config(SuppressionMode::Linear, 0.5, eta0);
        let got = soft_nms(&dets, &cfg).unwrap();
        let want = soft_nms_loop(&dets, 0.5, eta0, true, cfg.score_floor);
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g.score - w.score).abs() <= 1e-9);
        }
    }

    #[test]
    fn hard_nms_is_an_idempotent_fixed_point(seed in any::<u64>(), n in 0usize..40, eta0 in 0.1f64..0.9) {
        let dets = random_detections(&mut rng(seed), n, 3);
        let once = nms(&dets, eta0);
        prop_assert!(is_greedy_nms_fixed_point(&dets, &once, eta0));
        prop_assert_eq!(nms(&once, eta0), once.clone());
        let hard = soft_nms(&dets, &config(SuppressionMode::Hard, 0.5, eta0)).unwrap();
        prop_assert_eq!(hard, once);
    }

    #[test]
    fn classes_are_suppressed_independently(seed in any::<u64>(), n in 0usize..30, mode in modes()) {
        let dets = random_detections(&mut rng(seed), n, 3);
        let cfg = config(mode, 0.5, 0.5);
        let all = soft_nms(&dets, &cfg).unwrap();
        for class in 0..3 {
            let only: Vec<Detection> = dets.iter().copied().filter(|d| d.class_id == class).collect();
            let alone = soft_nms(&only, &cfg).unwrap();
            let within: Vec<Detection> = all.iter().copied().filter(|d| d.class_id == class).collect();
            prop_assert_eq!(alone, within);
        }
    }

    #[test]
    fn disjoint_boxes_pass_through(seed in any::<u64>(), n in 0usize..20, mode in modes()) {
        let mut r = rng(seed);
        let mut dets: Vec<Detection> = (0..n)
            .map(|i| {
                let x = 20.0 * i as f64;
                let bbox = BBox::new(x, 0.0, x + 10.0, 10.0).unwrap();
                Detection::new(bbox, rand::Rng::random_range(&mut r, 0.0..=1.0), 0).unwrap()
            })
            .collect();
        dets.shuffle(&mut r);
        let out = soft_nms_with_stats(&dets, &config(mode, 0.5, 0.5)).unwrap();
        prop_assert_eq!(out.detections, by_score(&dets));
        prop_assert_eq!((out.decayed, out.discarded), (0, 0));
    }

    #[test]
    fn iou_is_symmetric_and_bounded(seed in any::<u64>()) {
        let dets = random_detections(&mut rng(seed), 2, 1);
        let (a, b) = (dets[0].bbox, dets[1].bbox);
        let o = iou(&a, &b);
        prop_assert_eq!(o, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&o));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }
}

#[test]
fn identical_pair_decays_to_the_gaussian_weight() {
    let b = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
    let pair = [
        Detection::new(b, 0.9, 0).unwrap(),
        Detection::new(b, 0.8, 0).unwrap(),
    ];
    let out = soft_nms(&pair, &SuppressionConfig::default()).unwrap();
    assert_eq!(out[0].score, 0.9);
    assert!((out[1].score - 0.8 * (-2.0f64).exp()).abs() <= 1e-12);
}

#[test]
fn invalid_configs_are_rejected() {
    let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
    let dets = [Detection::new(b, 0.5, 0).unwrap()];
    for cfg in [
        config(SuppressionMode::Gaussian, 0.0, 0.5),
        config(SuppressionMode::Gaussian, 0.5, 1.5),
        SuppressionConfig {
            score_floor: -0.1,
            ..SuppressionConfig::default()
        },
    ] {
        assert!(soft_nms(&dets, &cfg).is_err(), "{cfg:?}");
    }
}
