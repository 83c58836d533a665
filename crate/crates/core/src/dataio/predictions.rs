use super::fmt6;
use crate::error::{Error, Result};
use crate::metrics::PredictionRecord;
use crate::postprocess::{BBox, Detection};

/// Parses `image_id class score x1 y1 x2 y2` lines; blank lines and lines
/// starting with `#` are skipped.
pub fn read_predictions(text: &str) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(Error::parse_line(
                n,
                format!(
                    "expected `image_id class score x1 y1 x2 y2`, got {} fields",
                    fields.len()
                ),
            ));
        }
        let class_id = fields[1]
            .parse()
            .map_err(|_| Error::parse_line(n, format!("invalid class id {:?}", fields[1])))?;
        let mut vals = [0.0; 5];
        for (v, s) in vals.iter_mut().zip(&fields[2..]) {
            *v = s
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse_line(n, format!("invalid number {s:?}")))?;
        }
        let [score, x1, y1, x2, y2] = vals;
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::parse_line(
                n,
                format!("score {score} is outside [0, 1]"),
            ));
        }
        let bbox = BBox::new(x1, y1, x2, y2).map_err(|e| Error::parse_line(n, e.to_string()))?;
        let detection = Detection::new(bbox, score, class_id)
            .map_err(|e| Error::parse_line(n, e.to_string()))?;
        out.push(PredictionRecord::new(fields[0], detection));
    }
    Ok(out)
}

/// Writes records ordered by image id, then descending score (stable).
pub fn write_predictions(records: &[PredictionRecord]) -> Result<String> {
    let mut order: Vec<&PredictionRecord> = records.iter().collect();
    order.sort_by(|a, b| {
        a.image_id
            .cmp(&b.image_id)
            .then(b.score().total_cmp(&a.score()))
    });
    let mut out = String::new();
    for r in order {
        if r.image_id.is_empty() || r.image_id.contains(char::is_whitespace) {
            return Err(Error::Config(format!(
                "image id {:?} cannot be written: empty or contains whitespace",
                r.image_id
            )));
        }
        let d = &r.detection;
        let b = d.bbox;
        out.push_str(&format!(
            "{} {} {} {} {} {} {}\n",
            r.image_id,
            d.class_id,
            fmt6(d.score),
            fmt6(b.x1),
            fmt6(b.y1),
            fmt6(b.x2),
            fmt6(b.y2)
        ));
    }
    Ok(out)
}
