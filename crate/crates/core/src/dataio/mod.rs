//! Label and prediction files: YOLO text labels, Pascal-VOC XML, and the
//! whitespace-separated prediction format
//! `image_id class score x1 y1 x2 y2`.
//!
//! Reals are written with six decimals and no exponent, so a parse followed
//! by a write reproduces canonical input byte for byte.

mod predictions;
mod voc;
mod yolo;

pub use predictions::{read_predictions, write_predictions};
pub use voc::{parse_voc_xml, VocAnnotation, VocMeta};
pub use yolo::{
    labels_from_boxes, parse_yolo_labels, parse_yolo_lines, write_yolo_labels, LabelParse,
    YoloLabel,
};

use crate::error::Location;

/// Canonical real formatting.
pub fn fmt6(v: f64) -> String {
    // adding 0.0 turns -0.0 into 0.0
    let s = format!("{:.6}", v + 0.0);
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

/// A ground-truth box dropped because it has no area.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejected {
    pub location: Location,
    pub reason: String,
}
