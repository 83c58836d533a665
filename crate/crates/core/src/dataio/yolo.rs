use super::{fmt6, Rejected};
use crate::error::{Error, Location, Result};
use crate::metrics::GroundTruthBox;
use crate::postprocess::BBox;

/// One `class cx cy w h` line, coordinates relative to the image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YoloLabel {
    pub class_id: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl YoloLabel {
    pub fn to_pixels(&self, width: f64, height: f64) -> BBox {
        BBox {
            x1: ((self.cx - self.w / 2.0) * width).clamp(0.0, width),
            y1: ((self.cy - self.h / 2.0) * height).clamp(0.0, height),
            x2: ((self.cx + self.w / 2.0) * width).clamp(0.0, width),
            y2: ((self.cy + self.h / 2.0) * height).clamp(0.0, height),
        }
    }
}

/// Parses label lines without converting them. Blank lines are skipped.
/// Returns `(line number, label)` pairs.
pub fn parse_yolo_lines(text: &str) -> Result<Vec<(usize, YoloLabel)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(Error::parse_line(
                n,
                format!("expected `class cx cy w h`, got {} fields", fields.len()),
            ));
        }
        let class_id = fields[0]
            .parse()
            .map_err(|_| Error::parse_line(n, format!("invalid class id {:?}", fields[0])))?;
        let mut vals = [0.0; 4];
        for (v, s) in vals.iter_mut().zip(&fields[1..]) {
            *v = s
                .parse::<f64>()
                .map_err(|_| Error::parse_line(n, format!("invalid number {s:?}")))?;
            if !(0.0..=1.0).contains(v) {
                return Err(Error::parse_line(
                    n,
                    format!("normalized value {s} is outside [0, 1]"),
                ));
            }
        }
        let [cx, cy, w, h] = vals;
        out.push((
            n,
            YoloLabel {
                class_id,
                cx,
                cy,
                w,
                h,
            },
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelParse {
    pub boxes: Vec<GroundTruthBox>,
    pub rejected: Vec<Rejected>,
}

/// Parses a YOLO label file into pixel boxes clamped to the image. Boxes
/// left without area are reported in `rejected`, not returned.
pub fn parse_yolo_labels(
    text: &str,
    image_id: &str,
    width: u32,
    height: u32,
) -> Result<LabelParse> {
    if width == 0 || height == 0 {
        return Err(Error::Config(format!("image {image_id:?} has zero size")));
    }
    let (w, h) = (width as f64, height as f64);
    let mut boxes = Vec::new();
    let mut rejected = Vec::new();
    for (line, label) in parse_yolo_lines(text)? {
        let bbox = label.to_pixels(w, h);
        if bbox.area() <= 0.0 {
            rejected.push(Rejected {
                location: Location::Line(line),
                reason: "zero-area box".into(),
            });
            continue;
        }
        boxes.push(GroundTruthBox {
            image_id: image_id.to_owned(),
            bbox,
            class_id: label.class_id,
        });
    }
    Ok(LabelParse { boxes, rejected })
}

/// Normalizes pixel boxes back to labels.
pub fn labels_from_boxes(boxes: &[GroundTruthBox], width: u32, height: u32) -> Vec<YoloLabel> {
    let (w, h) = (width as f64, height as f64);
    boxes
        .iter()
        .map(|g| {
            let b = g.bbox;
            YoloLabel {
                class_id: g.class_id,
                cx: ((b.x1 + b.x2) / 2.0 / w).clamp(0.0, 1.0),
                cy: ((b.y1 + b.y2) / 2.0 / h).clamp(0.0, 1.0),
                w: (b.width() / w).clamp(0.0, 1.0),
                h: (b.height() / h).clamp(0.0, 1.0),
            }
        })
        .collect()
}

pub fn write_yolo_labels(labels: &[YoloLabel]) -> String {
    let mut out = String::new();
    for l in labels {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            l.class_id,
            fmt6(l.cx),
            fmt6(l.cy),
            fmt6(l.w),
            fmt6(l.h)
        ));
    }
    out
}
