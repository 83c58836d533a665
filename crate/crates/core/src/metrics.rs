//! Detection evaluation: greedy matching, precision/recall, average
//! precision over the precision-recall curve, and mAP over IoU thresholds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postprocess::{iou, BBox, Detection};

/// IoU threshold of the headline precision/recall and mAP@.50.
pub const OPERATING_IOU: f64 = 0.5;
/// Score threshold of the reported precision/recall operating point.
pub const DEFAULT_CONFIDENCE: f64 = 0.25;

/// The ten IoU thresholds `r / 20` for `r = 10..=19`.
pub fn sweep_thresholds() -> Vec<f64> {
    (10..20).map(|r| r as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub image_id: String,
    pub bbox: BBox,
    pub class_id: u32,
}

/// A detection attributed to an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    pub detection: Detection,
}

impl PredictionRecord {
    pub fn new(image_id: impl Into<String>, detection: Detection) -> Self {
        Self {
            image_id: image_id.into(),
            detection,
        }
    }

    pub fn score(&self) -> f64 {
        self.detection.score
    }
}

/// Outcome of [`match_detections`], indexed like its inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchOutcome {
    pub true_positive: Vec<bool>,
    /// Ground-truth index each prediction claimed.
    pub matched_gt: Vec<Option<usize>>,
    pub false_negatives: usize,
}

/// Greedy matching within one image and class. Predictions are visited in
/// descending score (ties by input order); each claims the unmatched ground
/// truth of highest IoU (ties to the earliest) if that IoU reaches
/// `iou_threshold`.
pub fn match_detections(
    preds: &[PredictionRecord],
    gts: &[GroundTruthBox],
    iou_threshold: f64,
) -> Result<MatchOutcome> {
    let mut images = preds
        .iter()
        .map(|p| &p.image_id)
        .chain(gts.iter().map(|g| &g.image_id));
    if let Some(first) = images.next() {
        if let Some(other) = images.find(|id| *id != first) {
            return Err(Error::MixedImages(first.clone(), other.clone()));
        }
    }
    let mut classes = preds
        .iter()
        .map(|p| p.detection.class_id)
        .chain(gts.iter().map(|g| g.class_id));
    if let Some(first) = classes.next() {
        if let Some(other) = classes.find(|c| *c != first) {
            return Err(Error::MixedClasses(first, other));
        }
    }
    let boxes: Vec<BBox> = gts.iter().map(|g| g.bbox).collect();
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .score()
            .total_cmp(&preds[a].score())
            .then(a.cmp(&b))
    });
    let mut matched_gt = vec![None; preds.len()];
    let mut taken = vec![false; gts.len()];
    for i in order {
        if let Some(g) = best_match(&preds[i].detection.bbox, &boxes, &taken, iou_threshold) {
            taken[g] = true;
            matched_gt[i] = Some(g);
        }
    }
    let matched = matched_gt.iter().flatten().count();
    Ok(MatchOutcome {
        true_positive: matched_gt.iter().map(Option::is_some).collect(),
        matched_gt,
        false_negatives: gts.len() - matched,
    })
}

fn best_match(pred: &BBox, gts: &[BBox], taken: &[bool], threshold: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (g, gt) in gts.iter().enumerate() {
        if taken[g] {
            continue;
        }
        let o = iou(pred, gt);
        if o >= threshold && best.is_none_or(|(_, b)| o > b) {
            best = Some((g, o));
        }
    }
    best.map(|(g, _)| g)
}

/// `(TP / (TP + FP), TP / (TP + FN))`, each 0 when its denominator is 0.
pub fn precision_recall(tp: usize, fp: usize, fn_: usize) -> (f64, f64) {
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    (ratio(tp, tp + fp), ratio(tp, tp + fn_))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// `(recall, precision)` after each distinct score level, highest first.
    pub points: Vec<(f64, f64)>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl PrCurve {
    /// Builds the curve from `(score, is_true_positive)` pairs and the number
    /// of ground-truth boxes. Predictions sharing a score enter together, so
    /// the curve does not depend on how ties are ordered.
    pub fn from_scored(items: &[(f64, bool)], positives: usize) -> Self {
        let mut sorted = items.to_vec();
        sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
        let (mut tp, mut fp) = (0, 0);
        let mut points = Vec::new();
        for (i, &(score, hit)) in sorted.iter().enumerate() {
            if hit {
                tp += 1;
            } else {
                fp += 1;
            }
            let group_ends = sorted.get(i + 1).is_none_or(|next| next.0 != score);
            if group_ends {
                let (p, r) = precision_recall(tp, fp, positives.saturating_sub(tp));
                points.push((r, p));
            }
        }
        Self {
            points,
            tp,
            fp,
            fn_: positives.saturating_sub(tp),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interpolation {
    /// Monotone precision envelope integrated over every recall step.
    #[default]
    AllPoints,
    /// Envelope sampled at recall 0, 0.01, ..., 1.
    Points101,
}

/// Area under the precision envelope of `curve`.
pub fn average_precision(curve: &PrCurve, interpolation: Interpolation) -> f64 {
    if curve.points.is_empty() {
        return 0.0;
    }
    let mut envelope: Vec<(f64, f64)> = curve.points.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i].1 = envelope[i].1.max(envelope[i + 1].1);
    }
    let ap = match interpolation {
        Interpolation::AllPoints => {
            let mut prev = 0.0;
            let mut area = 0.0;
            for &(r, p) in &envelope {
                area += (r - prev) * p;
                prev = r;
            }
            area
        }
        Interpolation::Points101 => {
            let mut sum = 0.0;
            for k in 0..=100 {
                let level = k as f64 / 100.0;
                // the envelope is non-increasing in recall: take the first point past the level
                if let Some(&(_, p)) = envelope.iter().find(|(r, _)| *r >= level - 1e-12) {
                    sum += p;
                }
            }
            sum / 101.0
        }
    };
    ap.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub confidence: f64,
    pub interpolation: Interpolation,
    /// When set, class ids at or above this are an error.
    pub num_classes: Option<u32>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: sweep_thresholds(),
            confidence: DEFAULT_CONFIDENCE,
            interpolation: Interpolation::AllPoints,
            num_classes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: u32,
    pub gt_count: usize,
    /// AP at each configured threshold.
    pub ap: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
    /// Mean of `map_per_threshold`; mAP@.50:.95 for the default sweep.
    pub map50_95: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub thresholds: Vec<f64>,
    pub map_per_threshold: Vec<f64>,
    pub classes: Vec<ClassReport>,
}

impl fmt::Display for EvalReport {
    /// One `key value` pair per line, keys matching the serialized fields.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "precision {:.6}", self.precision)?;
        writeln!(f, "recall {:.6}", self.recall)?;
        writeln!(f, "map50 {:.6}", self.map50)?;
        writeln!(f, "map50_95 {:.6}", self.map50_95)?;
        writeln!(f, "tp {}", self.tp)?;
        writeln!(f, "fp {}", self.fp)?;
        writeln!(f, "fn {}", self.fn_)?;
        for (t, m) in self.thresholds.iter().zip(&self.map_per_threshold) {
            writeln!(f, "map@{t:.2} {m:.6}")?;
        }
        for c in &self.classes {
            writeln!(f, "class {} gt_count {}", c.class_id, c.gt_count)?;
            for (t, ap) in self.thresholds.iter().zip(&c.ap) {
                writeln!(f, "ap[{}]@{t:.2} {ap:.6}", c.class_id)?;
            }
        }
        Ok(())
    }
}

/// Predictions and ground truth of one `(image, class)` pair, in the
/// canonical order evaluation uses.
struct Group<'a> {
    preds: Vec<&'a PredictionRecord>,
    gts: Vec<&'a GroundTruthBox>,
}

fn box_key(b: &BBox) -> [f64; 4] {
    [b.x1, b.y1, b.x2, b.y2]
}

fn cmp_boxes(a: &BBox, b: &BBox) -> std::cmp::Ordering {
    box_key(a)
        .iter()
        .zip(box_key(b).iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

fn group<'a>(
    preds: &'a [PredictionRecord],
    gts: &'a [GroundTruthBox],
) -> BTreeMap<(&'a str, u32), Group<'a>> {
    let mut groups: BTreeMap<(&str, u32), Group> = BTreeMap::new();
    for p in preds {
        groups
            .entry((p.image_id.as_str(), p.detection.class_id))
            .or_insert_with(|| Group {
                preds: vec![],
                gts: vec![],
            })
            .preds
            .push(p);
    }
    for g in gts {
        groups
            .entry((g.image_id.as_str(), g.class_id))
            .or_insert_with(|| Group {
                preds: vec![],
                gts: vec![],
            })
            .gts
            .push(g);
    }
    // Canonical order makes the result independent of input order: identical
    // records are interchangeable, everything else is ordered by content.
    for g in groups.values_mut() {
        g.preds.sort_by(|a, b| {
            b.score()
                .total_cmp(&a.score())
                .then_with(|| cmp_boxes(&a.detection.bbox, &b.detection.bbox))
        });
        g.gts.sort_by(|a, b| cmp_boxes(&a.bbox, &b.bbox));
    }
    groups
}

/// Per-group true-positive flags at one threshold, in canonical order.
fn match_groups(groups: &BTreeMap<(&str, u32), Group>, threshold: f64) -> Vec<Vec<bool>> {
    groups
        .values()
        .map(|g| {
            let boxes: Vec<BBox> = g.gts.iter().map(|b| b.bbox).collect();
            let mut taken = vec![false; boxes.len()];
            g.preds
                .iter()
                .map(
                    |p| match best_match(&p.detection.bbox, &boxes, &taken, threshold) {
                        Some(i) => {
                            taken[i] = true;
                            true
                        }
                        None => false,
                    },
                )
                .collect()
        })
        .collect()
}

/// Evaluates `preds` against `gts`: per class and threshold, matches are
/// pooled over images into a precision-recall curve and its AP. mAP averages
/// over classes that have ground truth.
pub fn evaluate(
    preds: &[PredictionRecord],
    gts: &[GroundTruthBox],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if cfg.thresholds.is_empty() {
        return Err(Error::Config(
            "at least one IoU threshold is required".into(),
        ));
    }
    if let Some(t) = cfg.thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(Error::Config(format!(
            "IoU threshold {t} is outside (0, 1]"
        )));
    }
    if let Some(n) = cfg.num_classes {
        if let Some(g) = gts.iter().find(|g| g.class_id >= n) {
            return Err(Error::UnknownClass {
                image_id: g.image_id.clone(),
                class_id: g.class_id,
            });
        }
        if let Some(p) = preds.iter().find(|p| p.detection.class_id >= n) {
            return Err(Error::UnknownClass {
                image_id: p.image_id.clone(),
                class_id: p.detection.class_id,
            });
        }
    }

    let groups = group(preds, gts);
    let mut gt_count: BTreeMap<u32, usize> = BTreeMap::new();
    for g in gts {
        *gt_count.entry(g.class_id).or_default() += 1;
    }
    let classes: BTreeSet<u32> = gt_count.keys().copied().collect();

    let mut all_thresholds = cfg.thresholds.clone();
    all_thresholds.push(OPERATING_IOU);
    let flags: Vec<Vec<Vec<bool>>> = all_thresholds
        .par_iter()
        .map(|&t| match_groups(&groups, t))
        .collect();

    let ap_at = |flags: &[Vec<bool>]| -> BTreeMap<u32, f64> {
        let mut scored: BTreeMap<u32, Vec<(f64, bool)>> = BTreeMap::new();
        for ((&(_, class), g), hits) in groups.iter().zip(flags) {
            let entry = scored.entry(class).or_default();
            entry.extend(g.preds.iter().map(|p| p.score()).zip(hits.iter().copied()));
        }
        classes
            .iter()
            .map(|&c| {
                let items = scored.get(&c).map(Vec::as_slice).unwrap_or(&[]);
                let curve = PrCurve::from_scored(items, gt_count[&c]);
                (c, average_precision(&curve, cfg.interpolation))
            })
            .collect()
    };
    let mean = |aps: &BTreeMap<u32, f64>| {
        if aps.is_empty() {
            0.0
        } else {
            aps.values().sum::<f64>() / aps.len() as f64
        }
    };

    let per_threshold: Vec<BTreeMap<u32, f64>> = flags[..cfg.thresholds.len()]
        .iter()
        .map(|f| ap_at(f))
        .collect();
    let map_per_threshold: Vec<f64> = per_threshold.iter().map(mean).collect();
    let operating = &flags[cfg.thresholds.len()];
    let map50 = mean(&ap_at(operating));

    let mut tp = 0;
    let mut fp = 0;
    for (g, hits) in groups.values().zip(operating) {
        for (p, &hit) in g.preds.iter().zip(hits) {
            if p.score() >= cfg.confidence {
                if hit {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
    }
    let fn_ = gts.len() - tp;
    let (precision, recall) = precision_recall(tp, fp, fn_);

    Ok(EvalReport {
        precision,
        recall,
        map50,
        map50_95: map_per_threshold.iter().sum::<f64>() / map_per_threshold.len() as f64,
        tp,
        fp,
        fn_,
        thresholds: cfg.thresholds.clone(),
        map_per_threshold,
        classes: classes
            .iter()
            .map(|&c| ClassReport {
                class_id: c,
                gt_count: gt_count[&c],
                ap: per_threshold.iter().map(|m| m[&c]).collect(),
            })
            .collect(),
    })
}
