use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args as ClapArgs;
use rayon::prelude::*;
use reasdet_core::augment::{encode_png, expand_dataset, read_image, ExpandConfig};
use reasdet_core::dataio::{labels_from_boxes, write_yolo_labels};
use reasdet_core::ImageRecord;
use sha2::{Digest, Sha256};

use crate::labels;

pub const MANIFEST: &str = "manifest.txt";

#[derive(ClapArgs, Debug)]
pub struct Args {
    /// Directory of `.png`/`.ppm` images with sibling `.txt` or `.xml` labels.
    #[arg(long, short)]
    pub input: PathBuf,

    /// Output directory; created if missing.
    #[arg(long, short)]
    pub output: PathBuf,

    /// Also copy each original into the output.
    #[arg(long)]
    pub include_originals: bool,

    /// Worker threads [default: one per core].
    #[arg(long)]
    pub workers: Option<usize>,

    /// Comma-separated class names, needed for VOC labels.
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<String>,
}

fn load_record(image: &Path, classes: &[String]) -> anyhow::Result<ImageRecord> {
    let id = labels::stem(image)?;
    let pixels = read_image(image).with_context(|| format!("reading {}", image.display()))?;
    let dir = image.parent().unwrap_or(Path::new("."));
    let Some(label) = labels::sibling_label(dir, &id) else {
        bail!("{}: no sibling .txt or .xml label file", image.display());
    };
    let parsed = labels::load(&label, &id, Some(pixels.dimensions()), classes)?;
    labels::report_rejected(&label, &parsed.rejected);
    ImageRecord::new(id, pixels, parsed.boxes).with_context(|| format!("in {}", image.display()))
}

pub fn run(args: &Args, seed: u64) -> crate::Outcome {
    if args.workers == Some(0) {
        bail!("--workers must be at least 1");
    }
    let images = labels::list(&args.input, &labels::IMAGE_EXTENSIONS)?;
    if images.is_empty() {
        bail!("no images found in {}", args.input.display());
    }
    let mut records = Vec::with_capacity(images.len());
    let mut failed = false;
    for image in &images {
        match load_record(image, &args.classes) {
            Ok(r) => records.push(r),
            Err(e) => {
                eprintln!("error: {e:#}");
                failed = true;
            }
        }
    }
    if failed {
        return Ok(false);
    }

    let cfg = ExpandConfig {
        seed,
        include_originals: args.include_originals,
        workers: args.workers,
    };
    let variants = expand_dataset(&records, &cfg)?;
    fs::create_dir_all(&args.output)
        .with_context(|| format!("creating {}", args.output.display()))?;

    let write_all = || {
        variants
            .par_iter()
            .map(|v| -> anyhow::Result<String> {
                let rec = &v.record;
                let png = encode_png(&rec.pixels)?;
                let name = format!("{}.png", rec.image_id);
                let path = args.output.join(&name);
                fs::write(&path, &png).with_context(|| format!("writing {}", path.display()))?;
                let labels = labels_from_boxes(&rec.annotations, rec.width(), rec.height());
                let label_path = args.output.join(format!("{}.txt", rec.image_id));
                fs::write(&label_path, write_yolo_labels(&labels))
                    .with_context(|| format!("writing {}", label_path.display()))?;
                Ok(crate::hex(&Sha256::digest(&png)))
            })
            .collect::<anyhow::Result<Vec<_>>>()
    };
    let digests = match args.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()?
            .install(write_all)?,
        None => write_all()?,
    };

    let mut manifest = String::new();
    for (v, digest) in variants.iter().zip(&digests) {
        writeln!(
            manifest,
            "{} {} {}.png {digest}",
            v.original_id, v.tag, v.record.image_id
        )?;
    }
    let path = args.output.join(MANIFEST);
    fs::write(&path, &manifest).with_context(|| format!("writing {}", path.display()))?;
    println!(
        "images {} outputs {} manifest_sha256 {}",
        records.len(),
        variants.len(),
        crate::hex(&Sha256::digest(manifest.as_bytes()))
    );
    Ok(true)
}
