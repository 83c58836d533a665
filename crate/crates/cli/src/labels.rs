use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use reasdet_core::dataio::{parse_voc_xml, parse_yolo_labels, LabelParse, Rejected};

pub const IMAGE_EXTENSIONS: [&str; 2] = ["png", "ppm"];

pub fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
}

pub fn stem(path: &Path) -> anyhow::Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .with_context(|| format!("{} has no usable file name", path.display()))
}

/// Files in `dir` with one of `extensions`, sorted by name.
pub fn list(dir: &Path, extensions: &[&str]) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && extension(&path).is_some_and(|e| extensions.contains(&e.as_str())) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// The label file next to `stem` in `dir`: `.txt` (YOLO) first, then `.xml`.
pub fn sibling_label(dir: &Path, stem: &str) -> Option<PathBuf> {
    ["txt", "xml"]
        .iter()
        .map(|e| dir.join(format!("{stem}.{e}")))
        .find(|p| p.is_file())
}

pub fn sibling_image(dir: &Path, stem: &str) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|e| dir.join(format!("{stem}.{e}")))
        .find(|p| p.is_file())
}

/// Parses a label file, choosing the format by extension. YOLO labels need
/// the image size; VOC labels need class names.
pub fn load(
    path: &Path,
    image_id: &str,
    size: Option<(u32, u32)>,
    classes: &[String],
) -> anyhow::Result<LabelParse> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = match extension(path).as_deref() {
        Some("txt") => {
            let Some((w, h)) = size else {
                bail!(
                    "{}: image size unknown; pass --image-size or add the image",
                    path.display()
                );
            };
            parse_yolo_labels(&text, image_id, w, h)
        }
        Some("xml") => {
            if classes.is_empty() {
                bail!("{}: VOC labels need --classes", path.display());
            }
            parse_voc_xml(&text, image_id, classes).map(|a| LabelParse {
                boxes: a.boxes,
                rejected: a.rejected,
            })
        }
        _ => bail!("{}: unsupported label format", path.display()),
    };
    parsed.with_context(|| format!("in {}", path.display()))
}

pub fn report_rejected(path: &Path, rejected: &[Rejected]) {
    for r in rejected {
        eprintln!(
            "warning: {}: {}: {} dropped",
            path.display(),
            r.location,
            r.reason
        );
    }
}
