use image::{Rgb, RgbImage};
use proptest::prelude::*;
use reasdet_core::augment::{apply, expand_dataset, luma, ExpandConfig, RECIPE};
use reasdet_core::dataio::{
    labels_from_boxes, parse_voc_xml, parse_yolo_labels, parse_yolo_lines, read_predictions,
    write_predictions, write_yolo_labels, YoloLabel,
};
use reasdet_core::{AugmentOp, BBox, Detection, GroundTruthBox, ImageRecord, PredictionRecord};

/// Records with half-pixel box coordinates, so flips are exact in binary.
fn record() -> impl Strategy<Value = ImageRecord> {
    (1u32..=24, 1u32..=24, any::<u64>())
        .prop_flat_map(|(w, h, seed)| {
            let corner = (0..=2 * w, 0..=2 * w, 0..=2 * h, 0..=2 * h);
            (Just((w, h, seed)), prop::collection::vec(corner, 0..5))
        })
        .prop_map(|((w, h, seed), corners)| {
            let pixels = RgbImage::from_fn(w, h, |x, y| {
                let v = seed
                    .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    .wrapping_add(u64::from(x * 131 + y * 7919));
                Rgb([(v >> 8) as u8, (v >> 24) as u8, (v >> 40) as u8])
            });
            let annotations = corners
                .into_iter()
                .enumerate()
                .map(|(i, (a, b, c, d))| GroundTruthBox {
                    image_id: "img".into(),
                    bbox: BBox::new(
                        a.min(b) as f64 / 2.0,
                        c.min(d) as f64 / 2.0,
                        a.max(b) as f64 / 2.0,
                        c.max(d) as f64 / 2.0,
                    )
                    .unwrap(),
                    class_id: i as u32 % 3,
                })
                .collect();
            ImageRecord::new("img", pixels, annotations).unwrap()
        })
}

fn op() -> impl Strategy<Value = AugmentOp> {
    prop_oneof![
        Just(AugmentOp::HFlip),
        Just(AugmentOp::Grayscale),
        (0.1f64..=50.0).prop_map(|std| AugmentOp::Noise { std }),
        (0.5f64..=2.0).prop_map(|factor| AugmentOp::Contrast { factor }),
        (-80.0f64..=80.0).prop_map(|delta| AugmentOp::Brightness { delta }),
    ]
}

fn reference(op: AugmentOp, v: u8) -> Option<u8> {
    let clamp = |x: f64| x.round().clamp(0.0, 255.0) as u8;
    match op {
        AugmentOp::Contrast { factor } => Some(clamp(127.5 + factor * (f64::from(v) - 127.5))),
        AugmentOp::Brightness { delta } => Some(clamp(f64::from(v) + delta)),
        _ => None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn ops_keep_size_and_box_count(rec in record(), op in op(), seed in any::<u64>()) {
        let out = apply(op, &rec, seed).unwrap();
        prop_assert_eq!(out.pixels.dimensions(), rec.pixels.dimensions());
        prop_assert_eq!(out.annotations.len(), rec.annotations.len());
        prop_assert!(out.validate().is_ok());
        if op != AugmentOp::HFlip {
            prop_assert_eq!(&out.annotations, &rec.annotations);
        }
        if reference(op, 0).is_some() {
            for (a, b) in rec.pixels.iter().zip(out.pixels.iter()) {
                prop_assert_eq!(Some(*b), reference(op, *a));
            }
        }
    }

    #[test]
    fn hflip_is_an_involution(rec in record()) {
        let once = apply(AugmentOp::HFlip, &rec, 0).unwrap();
        for (a, b) in rec.annotations.iter().zip(&once.annotations) {
            prop_assert_eq!(a.bbox.area(), b.bbox.area());
        }
        prop_assert_eq!(apply(AugmentOp::HFlip, &once, 0).unwrap(), rec);
    }

    #[test]
    fn grayscale_is_idempotent(rec in record()) {
        let once = apply(AugmentOp::Grayscale, &rec, 0).unwrap();
        prop_assert!(once.pixels.pixels().all(|p| p[0] == p[1] && p[1] == p[2]));
        prop_assert_eq!(apply(AugmentOp::Grayscale, &once, 0).unwrap(), once);
    }

    #[test]
    fn noise_depends_only_on_the_seed(rec in record(), seed in any::<u64>()) {
        let op = AugmentOp::Noise { std: 10.0 };
        prop_assert_eq!(apply(op, &rec, seed).unwrap(), apply(op, &rec, seed).unwrap());
    }

    #[test]
    fn expansion_ignores_order_and_workers(recs in prop::collection::vec(record(), 1..6), seed in any::<u64>()) {
        let recs: Vec<ImageRecord> = recs
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.renamed(format!("im{i}")))
            .collect();
        let cfg = ExpandConfig { workers: Some(1), ..ExpandConfig::new(seed) };
        let serial = expand_dataset(&recs, &cfg).unwrap();
        prop_assert_eq!(serial.len(), RECIPE.len() * recs.len());
        let parallel = expand_dataset(&recs, &ExpandConfig { workers: Some(4), ..cfg }).unwrap();
        prop_assert_eq!(&parallel, &serial);
        let reversed: Vec<ImageRecord> = recs.iter().rev().cloned().collect();
        let mut back = expand_dataset(&reversed, &cfg).unwrap();
        back.sort_by(|a, b| a.record.image_id.cmp(&b.record.image_id));
        let mut fwd = serial.clone();
        fwd.sort_by(|a, b| a.record.image_id.cmp(&b.record.image_id));
        prop_assert_eq!(back, fwd);
    }

    #[test]
    fn yolo_round_trip_is_byte_stable(
        labels in prop::collection::vec((0u32..80, 0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0), 0..20),
    ) {
        let text: String = labels
            .iter()
            .map(|(c, cx, cy, w, h)| format!("{c} {cx:.6} {cy:.6} {w:.6} {h:.6}\n"))
            .collect();
        let parsed: Vec<YoloLabel> = parse_yolo_lines(&text).unwrap().into_iter().map(|(_, l)| l).collect();
        prop_assert_eq!(write_yolo_labels(&parsed), text);
    }

    #[test]
    fn interior_labels_survive_pixel_conversion(
        labels in prop::collection::vec((0u32..80, 0.2f64..=0.8, 0.2f64..=0.8, 0.01f64..=0.4, 0.01f64..=0.4), 1..20),
        width in 16u32..2000,
        height in 16u32..2000,
    ) {
        let text: String = labels
            .iter()
            .map(|(c, cx, cy, w, h)| format!("{c} {cx:.6} {cy:.6} {w:.6} {h:.6}\n"))
            .collect();
        let originals: Vec<YoloLabel> = parse_yolo_lines(&text).unwrap().into_iter().map(|(_, l)| l).collect();
        let parsed = parse_yolo_labels(&text, "img", width, height).unwrap();
        prop_assert!(parsed.rejected.is_empty());
        for (a, b) in originals.iter().zip(labels_from_boxes(&parsed.boxes, width, height)) {
            prop_assert_eq!(a.class_id, b.class_id);
            for (x, y) in [(a.cx, b.cx), (a.cy, b.cy), (a.w, b.w), (a.h, b.h)] {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn prediction_round_trip_is_byte_stable(
        rows in prop::collection::vec((0usize..4, 0u32..5, 0u32..=1_000_000, 0u32..100_000, 0u32..100_000, 0u32..100_000, 0u32..100_000), 0..30),
    ) {
        let records: Vec<PredictionRecord> = rows
            .iter()
            .map(|&(img, class, score, a, b, c, d)| {
                let v = |u: u32| f64::from(u) / 100.0;
                let bbox = BBox::new(v(a.min(b)), v(c.min(d)), v(a.max(b)), v(c.max(d))).unwrap();
                let det = Detection::new(bbox, f64::from(score) / 1e6, class).unwrap();
                PredictionRecord::new(format!("img{img}"), det)
            })
            .collect();
        let text = write_predictions(&records).unwrap();
        let back = read_predictions(&text).unwrap();
        prop_assert_eq!(back.len(), records.len());
        prop_assert_eq!(write_predictions(&back).unwrap(), text);
    }

    #[test]
    fn luma_of_gray_is_the_gray_level(v in any::<u8>()) {
        prop_assert_eq!(luma(v, v, v), v);
    }
}

#[test]
fn hflip_maps_box_edges() {
    let pixels = RgbImage::new(100, 20);
    let gt = GroundTruthBox {
        image_id: "a".into(),
        bbox: BBox::new(10.0, 0.0, 30.0, 5.0).unwrap(),
        class_id: 0,
    };
    let rec = ImageRecord::new("a", pixels, vec![gt]).unwrap();
    let out = apply(AugmentOp::HFlip, &rec, 0).unwrap();
    assert_eq!(
        out.annotations[0].bbox,
        BBox::new(70.0, 0.0, 90.0, 5.0).unwrap()
    );
}

#[test]
fn out_of_range_ops_are_rejected() {
    let rec = ImageRecord::new("a", RgbImage::new(4, 4), vec![]).unwrap();
    for op in [
        AugmentOp::Noise { std: 0.0 },
        AugmentOp::Noise { std: 51.0 },
        AugmentOp::Contrast { factor: 2.5 },
        AugmentOp::Brightness { delta: -81.0 },
    ] {
        assert!(apply(op, &rec, 0).is_err(), "{op}");
    }
}

#[test]
fn parse_errors_carry_locations() {
    let err = read_predictions("a 0 0.5 0 0 1 1\nb 0 1.5 0 0 1 1\n").unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
    let err = parse_yolo_labels("0 0.5 0.5 0.1 0.1\n0 0.5 0.5 0.1\n", "x", 10, 10).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
    let names = vec!["pest".to_owned()];
    let xml = "<annotation><object><name>pest</name><bndbox><xmin>5</xmin><ymin>1</ymin>\
               <xmax>2</xmax><ymax>4</ymax></bndbox></object></annotation>";
    let err = parse_voc_xml(xml, "x", &names).unwrap_err();
    assert!(err.to_string().contains("object"), "{err}");
}

#[test]
fn zero_area_labels_are_counted_not_dropped_silently() {
    let parsed = parse_yolo_labels("0 0.5 0.5 0.0 0.2\n1 0.5 0.5 0.2 0.2\n", "x", 10, 10).unwrap();
    assert_eq!(parsed.boxes.len(), 1);
    assert_eq!(parsed.rejected.len(), 1);
}
