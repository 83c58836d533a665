//! Naive reference implementations shared by the integration suites. Each one
//! follows the textbook definition directly and shares no code with the
//! crate beyond its plain data types.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reasdet_core::blocks::{Module, RfaConv, NORM_EPS};
use reasdet_core::postprocess::iou;
use reasdet_core::{BBox, ConvSpec, Detection, GroundTruthBox, PredictionRecord, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn at(shape: &[usize], idx: [usize; 4]) -> usize {
    ((idx[0] * shape[1] + idx[1]) * shape[2] + idx[2]) * shape[3] + idx[3]
}

/// Input value at a possibly out-of-range position; `None` outside.
fn sample(x: &Tensor<f64>, n: usize, c: usize, y: isize, xx: isize) -> Option<f64> {
    let s = x.shape();
    if y < 0 || xx < 0 || y >= s[2] as isize || xx >= s[3] as isize {
        return None;
    }
    Some(x.data()[at(s, [n, c, y as usize, xx as usize])])
}

fn out_extent(len: usize, k: usize, s: usize, p: usize, d: usize) -> usize {
    (len + 2 * p - d * (k - 1) - 1) / s + 1
}

/// Direct seven-loop grouped convolution.
pub fn naive_conv(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    bias: Option<&Tensor<f64>>,
    spec: &ConvSpec,
) -> Tensor<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let (n, c_in, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (c_out, cg, k) = (ws[0], ws[1], ws[2]);
    let groups = spec.groups;
    assert_eq!(cg * groups, c_in);
    let (s, p, d) = (spec.stride, spec.padding, spec.dilation);
    let (ho, wo) = (out_extent(h, k, s, p, d), out_extent(wd, k, s, p, d));
    let per_group_out = c_out / groups;
    let mut out = vec![0.0; n * c_out * ho * wo];
    for b in 0..n {
        for co in 0..c_out {
            let g = co / per_group_out;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.map_or(0.0, |t| t.data()[co]);
                    for ci in 0..cg {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky * d) as isize - p as isize;
                                let ix = (ox * s + kx * d) as isize - p as isize;
                                if let Some(v) = sample(x, b, g * cg + ci, iy, ix) {
                                    acc += v * w.data()[at(ws, [co, ci, ky, kx])];
                                }
                            }
                        }
                    }
                    out[at(&[n, c_out, ho, wo], [b, co, oy, ox])] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, c_out, ho, wo], out).unwrap()
}

/// Receptive-field gather: plane `c * k² + j` holds tap `j` of channel `c`.
pub fn naive_unfold(x: &Tensor<f64>, spec: &ConvSpec) -> Tensor<f64> {
    let xs = x.shape();
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (k, s, p, d) = (spec.kernel, spec.stride, spec.padding, spec.dilation);
    let (ho, wo) = (out_extent(h, k, s, p, d), out_extent(w, k, s, p, d));
    let shape = [n, c * k * k, ho, wo];
    let mut out = vec![0.0; shape.iter().product()];
    for b in 0..n {
        for ch in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let iy = (oy * s + ky * d) as isize - p as isize;
                            let ix = (ox * s + kx * d) as isize - p as isize;
                            out[at(&shape, [b, ch * k * k + ky * k + kx, oy, ox])] =
                                sample(x, b, ch, iy, ix).unwrap_or(0.0);
                        }
                    }
                }
            }
        }
    }
    Tensor::new(shape.to_vec(), out).unwrap()
}

/// Window maximum over in-range positions.
pub fn naive_max_pool(x: &Tensor<f64>, k: usize, s: usize, p: usize) -> Tensor<f64> {
    let xs = x.shape();
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (ho, wo) = ((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1);
    let shape = [n, c, ho, wo];
    let mut out = Vec::with_capacity(shape.iter().product());
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * s + ky) as isize - p as isize;
                            let ix = (ox * s + kx) as isize - p as isize;
                            if let Some(v) = sample(x, b, ch, iy, ix) {
                                best = best.max(v);
                            }
                        }
                    }
                    out.push(best);
                }
            }
        }
    }
    Tensor::new(shape.to_vec(), out).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn param<'a>(m: &'a RfaConv<f64>, suffix: &str) -> &'a [f64] {
    m.params()
        .into_iter()
        .find(|p| p.name.ends_with(suffix))
        .unwrap_or_else(|| panic!("no parameter ending in {suffix}"))
        .value
        .data()
}

/// Receptive-field attention written as the explicit weighted sum
/// `y = Σ_j softmax_j(g(pool(x))) · relu(norm(w_j · window_j(x)))` for a block
/// without projection. Returns the output and the attention maps.
pub fn rfaconv_loop(m: &RfaConv<f64>, x: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
    assert!(m.projection.is_none());
    let (k, s) = (m.config.kernel, m.config.stride);
    let kk = k * k;
    let p = (k - 1) / 2;
    let xs = x.shape();
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (ho, wo) = (out_extent(h, k, s, p, 1), out_extent(w, k, s, p, 1));
    let (tw, tb) = (param(m, "transform.weight"), param(m, "transform.bias"));
    let (aw, ab) = (param(m, "attention.weight"), param(m, "attention.bias"));
    let (scale, shift) = (param(m, "norm.scale"), param(m, "norm.shift"));
    let (mean, var) = (param(m, "norm.mean"), param(m, "norm.var"));

    let mut y = vec![0.0; n * c * ho * wo];
    let attn_shape = [n * c, kk, ho, wo];
    let mut attn = vec![0.0; n * c * kk * ho * wo];
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let window = |ky: usize, kx: usize| {
                        sample(
                            x,
                            b,
                            ch,
                            (oy * s + ky) as isize - p as isize,
                            (ox * s + kx) as isize - p as isize,
                        )
                        .unwrap_or(0.0)
                    };
                    let mut pooled = 0.0;
                    for ky in 0..k {
                        for kx in 0..k {
                            pooled += window(ky, kx);
                        }
                    }
                    pooled /= kk as f64;
                    let logits: Vec<f64> = (0..kk)
                        .map(|j| aw[ch * kk + j] * pooled + ab[ch * kk + j])
                        .collect();
                    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = logits.iter().map(|l| (l - top).exp()).sum();
                    let mut acc = 0.0;
                    for j in 0..kk {
                        let o = ch * kk + j;
                        let mut f = tb[o];
                        for ky in 0..k {
                            for kx in 0..k {
                                f += tw[o * kk + ky * k + kx] * window(ky, kx);
                            }
                        }
                        let f = scale[o] * (f - mean[o]) / (var[o] + NORM_EPS).sqrt() + shift[o];
                        let a = (logits[j] - top).exp() / z;
                        attn[at(&attn_shape, [b * c + ch, j, oy, ox])] = a;
                        acc += a * f.max(0.0);
                    }
                    y[at(&[n, c, ho, wo], [b, ch, oy, ox])] = acc;
                }
            }
        }
    }
    (
        Tensor::new(vec![n, c, ho, wo], y).unwrap(),
        Tensor::new(vec![n, c, kk, ho, wo], attn).unwrap(),
    )
}

/// Soft suppression written as the textbook loop over a working set.
pub fn soft_nms_loop(
    dets: &[Detection],
    sigma: f64,
    eta0: f64,
    linear: bool,
    floor: f64,
) -> Vec<Detection> {
    let mut work: Vec<Option<f64>> = dets.iter().map(|d| Some(d.score)).collect();
    let mut out = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..dets.len() {
            if let Some(s) = work[i] {
                if best.is_none_or(|b| s > work[b].unwrap()) {
                    best = Some(i);
                }
            }
        }
        let Some(m) = best else { break };
        let sm = work[m].take().unwrap();
        out.push(Detection {
            score: sm,
            ..dets[m]
        });
        for i in 0..dets.len() {
            let Some(s) = work[i] else { continue };
            if dets[i].class_id != dets[m].class_id {
                continue;
            }
            let o = iou(&dets[m].bbox, &dets[i].bbox);
            let weight = if linear {
                if o >= eta0 {
                    1.0 - o
                } else {
                    1.0
                }
            } else {
                (-o * o / sigma).exp()
            };
            let s = s * weight;
            work[i] = if s < floor && s < dets[i].score {
                None
            } else {
                Some(s)
            };
        }
    }
    out
}

/// Checks that `kept` is the greedy hard-suppression fixed point: members are
/// not suppressed by a higher-ranked member, non-members are.
pub fn is_greedy_nms_fixed_point(dets: &[Detection], kept: &[Detection], eta0: f64) -> bool {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let rank: BTreeMap<usize, usize> = order.iter().enumerate().map(|(r, &i)| (i, r)).collect();
    // identify kept members by rank position
    let mut members = BTreeSet::new();
    let mut next = 0;
    for &i in &order {
        if next < kept.len() && kept[next] == dets[i] {
            members.insert(i);
            next += 1;
        }
    }
    if next != kept.len() {
        return false;
    }
    (0..dets.len()).all(|i| {
        let suppressed = members.iter().any(|&j| {
            rank[&j] < rank[&i]
                && dets[j].class_id == dets[i].class_id
                && iou(&dets[j].bbox, &dets[i].bbox) > eta0
        });
        suppressed != members.contains(&i)
    })
}

fn box_order(a: &BBox, b: &BBox) -> std::cmp::Ordering {
    [a.x1, a.y1, a.x2, a.y2]
        .iter()
        .zip([b.x1, b.y1, b.x2, b.y2].iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// True-positive count among `preds` (one image and class), restricted to
/// scores at or above `cutoff`, by the greedy highest-IoU rule.
fn greedy_tp(preds: &[&PredictionRecord], gts: &[&GroundTruthBox], cutoff: f64, t: f64) -> usize {
    let mut ps: Vec<&&PredictionRecord> = preds.iter().filter(|p| p.score() >= cutoff).collect();
    ps.sort_by(|a, b| {
        b.score()
            .total_cmp(&a.score())
            .then_with(|| box_order(&a.detection.bbox, &b.detection.bbox))
    });
    let mut gs: Vec<&&GroundTruthBox> = gts.iter().collect();
    gs.sort_by(|a, b| box_order(&a.bbox, &b.bbox));
    let mut used = vec![false; gs.len()];
    let mut tp = 0;
    for p in ps {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gs.iter().enumerate() {
            let o = iou(&p.detection.bbox, &gt.bbox);
            if !used[g] && o >= t && best.is_none_or(|(_, bo)| o > bo) {
                best = Some((g, o));
            }
        }
        if let Some((g, _)) = best {
            used[g] = true;
            tp += 1;
        }
    }
    tp
}

/// All-points AP of one class by enumerating every score cutoff and
/// recomputing the matching from scratch at each.
pub fn staircase_ap(preds: &[PredictionRecord], gts: &[GroundTruthBox], class: u32, t: f64) -> f64 {
    let preds: Vec<&PredictionRecord> = preds
        .iter()
        .filter(|p| p.detection.class_id == class)
        .collect();
    let gts: Vec<&GroundTruthBox> = gts.iter().filter(|g| g.class_id == class).collect();
    let positives = gts.len();
    assert!(positives > 0);
    let images: BTreeSet<&str> = preds.iter().map(|p| p.image_id.as_str()).collect();
    let mut cutoffs: Vec<f64> = preds.iter().map(|p| p.score()).collect();
    cutoffs.sort_by(|a, b| b.total_cmp(a));
    cutoffs.dedup();
    let mut steps = Vec::new();
    for &c in &cutoffs {
        let mut tp = 0;
        for img in &images {
            let ip: Vec<&PredictionRecord> = preds
                .iter()
                .copied()
                .filter(|p| p.image_id == *img)
                .collect();
            let ig: Vec<&GroundTruthBox> =
                gts.iter().copied().filter(|g| g.image_id == *img).collect();
            tp += greedy_tp(&ip, &ig, c, t);
        }
        let n = preds.iter().filter(|p| p.score() >= c).count();
        steps.push((tp as f64 / positives as f64, tp as f64 / n as f64));
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..steps.len() {
        let best_p = steps[i..].iter().map(|s| s.1).fold(0.0, f64::max);
        ap += (steps[i].0 - prev_recall) * best_p;
        prev_recall = steps[i].0;
    }
    ap
}

/// mAP over classes that have ground truth.
pub fn staircase_map(preds: &[PredictionRecord], gts: &[GroundTruthBox], t: f64) -> f64 {
    let classes: BTreeSet<u32> = gts.iter().map(|g| g.class_id).collect();
    if classes.is_empty() {
        return 0.0;
    }
    classes
        .iter()
        .map(|&c| staircase_ap(preds, gts, c, t))
        .sum::<f64>()
        / classes.len() as f64
}

/// Micro precision and recall counting only predictions at or above
/// `confidence`, matched at IoU `t`.
pub fn operating_point(
    preds: &[PredictionRecord],
    gts: &[GroundTruthBox],
    confidence: f64,
    t: f64,
) -> (f64, f64) {
    let mut keys: BTreeSet<(&str, u32)> = preds
        .iter()
        .map(|p| (p.image_id.as_str(), p.detection.class_id))
        .collect();
    keys.extend(gts.iter().map(|g| (g.image_id.as_str(), g.class_id)));
    let mut tp = 0;
    for (img, class) in keys {
        let ip: Vec<&PredictionRecord> = preds
            .iter()
            .filter(|p| p.image_id == img && p.detection.class_id == class)
            .collect();
        let ig: Vec<&GroundTruthBox> = gts
            .iter()
            .filter(|g| g.image_id == img && g.class_id == class)
            .collect();
        tp += greedy_tp(&ip, &ig, confidence, t);
    }
    let n = preds.iter().filter(|p| p.score() >= confidence).count();
    let p = if n == 0 { 0.0 } else { tp as f64 / n as f64 };
    let r = if gts.is_empty() {
        0.0
    } else {
        tp as f64 / gts.len() as f64
    };
    (p, r)
}

/// Random box inside a `extent`-sized frame, on a quarter-pixel grid so that
/// overlaps and ties occur.
pub fn random_box(rng: &mut ChaCha8Rng, extent: f64) -> BBox {
    let q = |v: f64| (v * 4.0).round() / 4.0;
    let x1 = q(rng.random_range(0.0..extent * 0.8));
    let y1 = q(rng.random_range(0.0..extent * 0.8));
    let w = q(rng.random_range(1.0..extent * 0.4));
    let h = q(rng.random_range(1.0..extent * 0.4));
    BBox::new(x1, y1, (x1 + w).min(extent), (y1 + h).min(extent)).unwrap()
}

/// A tiny evaluation instance: up to `images` images with up to `max_boxes`
/// ground-truth boxes each, and predictions that jitter, duplicate or miss
/// them plus some clutter. Scores come from a coarse grid to force ties.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    images: usize,
    max_boxes: usize,
    classes: u32,
) -> (Vec<PredictionRecord>, Vec<GroundTruthBox>) {
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    let n_img = rng.random_range(1..=images);
    for i in 0..n_img {
        let id = format!("img{i}");
        for _ in 0..rng.random_range(0..=max_boxes) {
            let bbox = random_box(rng, 40.0);
            let class_id = rng.random_range(0..classes);
            gts.push(GroundTruthBox {
                image_id: id.clone(),
                bbox,
                class_id,
            });
            for _ in 0..rng.random_range(0..=2) {
                let j =
                    |v: f64, r: &mut ChaCha8Rng| (v + r.random_range(-3.0..3.0)).clamp(0.0, 40.0);
                let (a, b) = (j(bbox.x1, rng), j(bbox.x2, rng));
                let (c, d) = (j(bbox.y1, rng), j(bbox.y2, rng));
                let jittered = BBox::new(a.min(b), c.min(d), a.max(b), c.max(d)).unwrap();
                let score = (rng.random_range(0..=20) as f64) / 20.0;
                preds.push(PredictionRecord::new(
                    id.clone(),
                    Detection::new(jittered, score, class_id).unwrap(),
                ));
            }
        }
        for _ in 0..rng.random_range(0..=2) {
            let bbox = random_box(rng, 40.0);
            let score = (rng.random_range(0..=20) as f64) / 20.0;
            let class_id = rng.random_range(0..classes);
            preds.push(PredictionRecord::new(
                id.clone(),
                Detection::new(bbox, score, class_id).unwrap(),
            ));
        }
    }
    (preds, gts)
}

pub fn random_detections(rng: &mut ChaCha8Rng, n: usize, classes: u32) -> Vec<Detection> {
    (0..n)
        .map(|_| {
            let bbox = random_box(rng, 50.0);
            Detection::new(
                bbox,
                rng.random_range(0.0..=1.0),
                rng.random_range(0..classes),
            )
            .unwrap()
        })
        .collect()
}
