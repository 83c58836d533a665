//! Box overlap and duplicate suppression.
//!
//! [`nms`] is classic greedy suppression. [`soft_nms`] keeps overlapping
//! detections but decays their scores, either with a Gaussian penalty
//! `s * exp(-iou² / sigma)` applied to every remaining box, or linearly with
//! `s * (1 - iou)` once the overlap reaches `eta0`. Suppression is always
//! per class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `(x_min, y_min, x_max, y_max)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!("non-finite box {b:?}")));
        }
        if x1 > x2 || y1 > y2 {
            return Err(Error::Config(format!("box corners out of order {b:?}")));
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub class_id: u32,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64, class_id: u32) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Config(format!("score {score} outside [0, 1]")));
        }
        Ok(Self {
            bbox,
            score,
            class_id,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuppressionMode {
    Hard,
    Gaussian,
    Linear,
}

impl std::str::FromStr for SuppressionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Self::Hard),
            "gaussian" => Ok(Self::Gaussian),
            "linear" => Ok(Self::Linear),
            other => Err(Error::Config(format!("unknown suppression mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuppressionConfig {
    /// IoU threshold for hard suppression and the linear decay.
    pub eta0: f64,
    /// Width of the Gaussian penalty.
    pub sigma: f64,
    pub mode: SuppressionMode,
    /// Detections whose decayed score drops below this are discarded.
    pub score_floor: f64,
}

impl SuppressionConfig {
    pub const DEFAULT_ETA0: f64 = 0.5;
    pub const DEFAULT_SIGMA: f64 = 0.5;
    pub const DEFAULT_SCORE_FLOOR: f64 = 0.001;

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta0) {
            return Err(Error::Config(format!("eta0 {} outside [0, 1]", self.eta0)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!(
                "sigma {} must be positive",
                self.sigma
            )));
        }
        if self.score_floor.is_nan() || self.score_floor < 0.0 {
            return Err(Error::Config(format!(
                "score floor {} must be non-negative",
                self.score_floor
            )));
        }
        Ok(())
    }
}

impl Default for SuppressionConfig {
    fn default() -> Self {
        Self {
            eta0: Self::DEFAULT_ETA0,
            sigma: Self::DEFAULT_SIGMA,
            mode: SuppressionMode::Gaussian,
            score_floor: Self::DEFAULT_SCORE_FLOOR,
        }
    }
}

/// Indices sorted by descending score, ties by input position.
fn rank(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

/// Greedy hard suppression: a detection survives unless a higher-ranked
/// survivor of its class overlaps it with IoU above `eta0`.
pub fn nms(dets: &[Detection], eta0: f64) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for i in rank(dets) {
        let d = dets[i];
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou(&k.bbox, &d.bbox) > eta0);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

/// Result of [`soft_nms_with_stats`].
#[derive(Debug, Clone, PartialEq)]
pub struct SuppressionOutcome {
    /// Survivors in selection order (non-increasing score).
    pub detections: Vec<Detection>,
    /// Survivors whose score was lowered.
    pub decayed: usize,
    /// Inputs removed, by hard suppression or by falling below the floor.
    pub discarded: usize,
}

pub fn soft_nms(dets: &[Detection], cfg: &SuppressionConfig) -> Result<Vec<Detection>> {
    soft_nms_with_stats(dets, cfg).map(|o| o.detections)
}

pub fn soft_nms_with_stats(
    dets: &[Detection],
    cfg: &SuppressionConfig,
) -> Result<SuppressionOutcome> {
    cfg.validate()?;
    // (input index, current score)
    let mut pending: Vec<(usize, f64)> = dets.iter().map(|d| d.score).enumerate().collect();
    let mut out = Vec::with_capacity(dets.len());
    let mut decayed = 0;

    while !pending.is_empty() {
        let best = pending
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(pos, _)| pos)
            .expect("pending is non-empty");
        let (idx, score) = pending.remove(best);
        let chosen = &dets[idx];
        out.push(Detection { score, ..*chosen });
        if score < chosen.score {
            decayed += 1;
        }

        pending.retain_mut(|(i, s)| {
            let other = &dets[*i];
            if other.class_id != chosen.class_id {
                return true;
            }
            let overlap = iou(&chosen.bbox, &other.bbox);
            match cfg.mode {
                SuppressionMode::Hard => return overlap <= cfg.eta0,
                SuppressionMode::Gaussian => {
                    *s *= (-(overlap * overlap) / cfg.sigma).exp();
                }
                SuppressionMode::Linear => {
                    if overlap >= cfg.eta0 {
                        *s *= 1.0 - overlap;
                    }
                }
            }
            !(*s < cfg.score_floor && *s < other.score)
        });
    }

    Ok(SuppressionOutcome {
        discarded: dets.len() - out.len(),
        detections: out,
        decayed,
    })
}
