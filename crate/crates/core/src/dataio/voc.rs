use roxmltree::{Document, Node};

use super::Rejected;
use crate::error::{Error, Location, Result};
use crate::metrics::GroundTruthBox;
use crate::postprocess::BBox;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VocMeta {
    pub filename: Option<String>,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub depth: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocAnnotation {
    pub meta: VocMeta,
    pub boxes: Vec<GroundTruthBox>,
    pub rejected: Vec<Rejected>,
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|n| n.has_tag_name(name))
}

fn text_of<'a>(node: Node<'a, '_>, name: &str, path: &str) -> Result<&'a str> {
    child(node, name)
        .and_then(|n| n.text())
        .map(str::trim)
        .ok_or_else(|| Error::parse_element(format!("{path}/{name}"), "missing required element"))
}

fn optional_u32(node: Option<Node>, name: &str, path: &str) -> Result<Option<u32>> {
    let Some(node) = node else { return Ok(None) };
    match child(node, name).and_then(|n| n.text()) {
        None => Ok(None),
        Some(t) => t.trim().parse().map(Some).map_err(|_| {
            Error::parse_element(format!("{path}/{name}"), format!("invalid integer {t:?}"))
        }),
    }
}

/// Parses a VOC annotation. Object names map to class ids through their
/// position in `class_names`.
pub fn parse_voc_xml(text: &str, image_id: &str, class_names: &[String]) -> Result<VocAnnotation> {
    let doc = Document::parse(text)
        .map_err(|e| Error::parse_element("annotation", format!("malformed XML: {e}")))?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(Error::parse_element(
            root.tag_name().name(),
            "root element must be <annotation>",
        ));
    }
    let size = child(root, "size");
    let meta = VocMeta {
        filename: child(root, "filename")
            .and_then(|n| n.text())
            .map(|t| t.trim().to_owned()),
        width: optional_u32(size, "width", "annotation/size")?,
        height: optional_u32(size, "height", "annotation/size")?,
        depth: optional_u32(size, "depth", "annotation/size")?,
    };

    let mut boxes = Vec::new();
    let mut rejected = Vec::new();
    for (i, obj) in root
        .children()
        .filter(|n| n.has_tag_name("object"))
        .enumerate()
    {
        let path = format!("annotation/object[{}]", i + 1);
        let name = text_of(obj, "name", &path)?;
        let class_id = class_names.iter().position(|c| c == name).ok_or_else(|| {
            Error::parse_element(format!("{path}/name"), format!("unknown class {name:?}"))
        })?;
        let bb_path = format!("{path}/bndbox");
        let bndbox = child(obj, "bndbox")
            .ok_or_else(|| Error::parse_element(&bb_path, "missing required element"))?;
        let mut coords = [0.0; 4];
        for (v, key) in coords.iter_mut().zip(["xmin", "ymin", "xmax", "ymax"]) {
            let t = text_of(bndbox, key, &bb_path)?;
            *v = t
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::parse_element(
                        format!("{bb_path}/{key}"),
                        format!("non-numeric coordinate {t:?}"),
                    )
                })?;
        }
        let [x1, y1, x2, y2] = coords;
        if x1 > x2 || y1 > y2 {
            return Err(Error::parse_element(
                &path,
                format!("object {name:?} has min > max ({x1}, {y1}, {x2}, {y2})"),
            ));
        }
        let bbox = BBox { x1, y1, x2, y2 };
        if bbox.area() <= 0.0 {
            rejected.push(Rejected {
                location: Location::Element(path),
                reason: "zero-area box".into(),
            });
            continue;
        }
        boxes.push(GroundTruthBox {
            image_id: image_id.to_owned(),
            bbox,
            class_id: class_id as u32,
        });
    }
    Ok(VocAnnotation {
        meta,
        boxes,
        rejected,
    })
}
