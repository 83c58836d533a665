use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args as ClapArgs, ValueEnum};
use reasdet_core::dataio::read_predictions;
use reasdet_core::metrics::{evaluate, Interpolation, DEFAULT_CONFIDENCE};
use reasdet_core::EvalConfig;

use crate::labels;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InterpolationArg {
    AllPoints,
    #[value(name = "101")]
    Points101,
}

impl From<InterpolationArg> for Interpolation {
    fn from(a: InterpolationArg) -> Self {
        match a {
            InterpolationArg::AllPoints => Interpolation::AllPoints,
            InterpolationArg::Points101 => Interpolation::Points101,
        }
    }
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    let w: u32 = w.parse().map_err(|_| format!("invalid width {w:?}"))?;
    let h: u32 = h.parse().map_err(|_| format!("invalid height {h:?}"))?;
    if w == 0 || h == 0 {
        return Err("width and height must be positive".into());
    }
    Ok((w, h))
}

#[derive(ClapArgs, Debug)]
pub struct Args {
    /// Prediction file (`image_id class score x1 y1 x2 y2` per line).
    #[arg(long, short)]
    pub predictions: PathBuf,

    /// Directory of ground-truth labels, one `<image_id>.txt` or `.xml` each.
    #[arg(long)]
    pub gt_dir: PathBuf,

    /// IoU thresholds for the AP sweep.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.5,0.55,0.6,0.65,0.7,0.75,0.8,0.85,0.9,0.95"
    )]
    pub thresholds: Vec<f64>,

    /// Minimum score counted for precision and recall.
    #[arg(long, default_value_t = DEFAULT_CONFIDENCE)]
    pub confidence: f64,

    /// Comma-separated class names, needed for VOC labels.
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<String>,

    /// Reject class ids at or above this count.
    #[arg(long)]
    pub num_classes: Option<u32>,

    /// Precision envelope sampling.
    #[arg(long, value_enum, default_value_t = InterpolationArg::AllPoints)]
    pub interpolation: InterpolationArg,

    /// Drop predictions whose image has no label file instead of failing.
    #[arg(long)]
    pub allow_missing: bool,

    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,

    /// Image size for YOLO labels without a sibling image.
    #[arg(long, value_parser = parse_size, value_name = "WxH")]
    pub image_size: Option<(u32, u32)>,
}

pub fn run(args: &Args) -> crate::Outcome {
    if !(0.0..=1.0).contains(&args.confidence) {
        bail!("--confidence {} is outside [0, 1]", args.confidence);
    }
    let text = fs::read_to_string(&args.predictions)
        .with_context(|| format!("reading {}", args.predictions.display()))?;
    let mut preds =
        read_predictions(&text).with_context(|| format!("in {}", args.predictions.display()))?;

    let mut gts = Vec::new();
    let mut known = BTreeSet::new();
    for path in labels::list(&args.gt_dir, &["txt", "xml"])? {
        let id = labels::stem(&path)?;
        if !known.insert(id.clone()) {
            bail!(
                "{}: image {id:?} has both .txt and .xml labels",
                args.gt_dir.display()
            );
        }
        let size = match labels::sibling_image(&args.gt_dir, &id) {
            Some(img) => Some(
                image::image_dimensions(&img)
                    .with_context(|| format!("reading {}", img.display()))?,
            ),
            None => args.image_size,
        };
        let parsed = labels::load(&path, &id, size, &args.classes)?;
        labels::report_rejected(&path, &parsed.rejected);
        gts.extend(parsed.boxes);
    }

    let missing: BTreeSet<&str> = preds
        .iter()
        .map(|p| p.image_id.as_str())
        .filter(|id| !known.contains(*id))
        .collect();
    if !missing.is_empty() {
        let severity = if args.allow_missing {
            "warning"
        } else {
            "error"
        };
        for id in &missing {
            eprintln!("{severity}: no ground truth for image {id:?}");
        }
        if !args.allow_missing {
            return Ok(false);
        }
        let missing: BTreeSet<String> = missing.into_iter().map(str::to_owned).collect();
        preds.retain(|p| !missing.contains(&p.image_id));
    }

    let cfg = EvalConfig {
        thresholds: args.thresholds.clone(),
        confidence: args.confidence,
        interpolation: args.interpolation.into(),
        num_classes: args.num_classes,
    };
    let report = evaluate(&preds, &gts, &cfg)?;
    print!("{report}");
    if let Some(path) = &args.json {
        let json = serde_json::to_string_pretty(&report)?;
        fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(true)
}
