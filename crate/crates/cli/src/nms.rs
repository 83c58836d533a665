use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args as ClapArgs;
use reasdet_core::dataio::{read_predictions, write_predictions};
use reasdet_core::postprocess::soft_nms_with_stats;
use reasdet_core::{PredictionRecord, SuppressionConfig, SuppressionMode};

#[derive(ClapArgs, Debug)]
pub struct Args {
    /// Prediction file (`image_id class score x1 y1 x2 y2` per line).
    #[arg(long, short)]
    pub input: PathBuf,

    /// Where to write the surviving predictions.
    #[arg(long, short)]
    pub output: PathBuf,

    /// Decay rule: hard, gaussian or linear.
    #[arg(long, default_value = "gaussian")]
    pub mode: SuppressionMode,

    /// IoU threshold for hard suppression and linear decay.
    #[arg(long, default_value_t = SuppressionConfig::DEFAULT_ETA0)]
    pub eta0: f64,

    /// Width of the Gaussian decay.
    #[arg(long, default_value_t = SuppressionConfig::DEFAULT_SIGMA)]
    pub sigma: f64,

    /// Decayed predictions scoring below this are dropped.
    #[arg(long, default_value_t = SuppressionConfig::DEFAULT_SCORE_FLOOR)]
    pub score_floor: f64,
}

pub fn run(args: &Args) -> crate::Outcome {
    let cfg = SuppressionConfig {
        eta0: args.eta0,
        sigma: args.sigma,
        mode: args.mode,
        score_floor: args.score_floor,
    };
    cfg.validate()?;
    let text = fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let records =
        read_predictions(&text).with_context(|| format!("in {}", args.input.display()))?;

    let mut by_image: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for r in &records {
        by_image
            .entry(r.image_id.as_str())
            .or_default()
            .push(r.detection);
    }
    let (mut decayed, mut discarded) = (0, 0);
    let mut kept = Vec::with_capacity(records.len());
    for (image_id, dets) in by_image {
        let outcome = soft_nms_with_stats(&dets, &cfg)?;
        decayed += outcome.decayed;
        discarded += outcome.discarded;
        kept.extend(
            outcome
                .detections
                .into_iter()
                .map(|d| PredictionRecord::new(image_id, d)),
        );
    }
    fs::write(&args.output, write_predictions(&kept)?)
        .with_context(|| format!("writing {}", args.output.display()))?;
    println!(
        "kept {} decayed {decayed} discarded {discarded}",
        kept.len()
    );
    Ok(true)
}
