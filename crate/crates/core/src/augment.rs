//! Box-aware photometric and flip augmentation, and the fixed seven-variant
//! dataset expansion.

use std::fmt;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::GroundTruthBox;
use crate::postprocess::BBox;

/// An 8-bit RGB image with its annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub pixels: RgbImage,
    pub annotations: Vec<GroundTruthBox>,
}

impl ImageRecord {
    pub fn new(
        image_id: impl Into<String>,
        pixels: RgbImage,
        annotations: Vec<GroundTruthBox>,
    ) -> Result<Self> {
        let rec = Self {
            image_id: image_id.into(),
            pixels,
            annotations,
        };
        rec.validate()?;
        Ok(rec)
    }

    /// Renames the record and its annotations.
    pub fn renamed(mut self, image_id: String) -> Self {
        for a in &mut self.annotations {
            a.image_id.clone_from(&image_id);
        }
        self.image_id = image_id;
        self
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.width() as f64, self.height() as f64);
        if w < 1.0 || h < 1.0 {
            return Err(Error::Config(format!("image {:?} is empty", self.image_id)));
        }
        for a in &self.annotations {
            let b = a.bbox;
            if b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > w || b.y2 > h || b.x1 > b.x2 || b.y1 > b.y2 {
                return Err(Error::Config(format!(
                    "box {b:?} of image {:?} lies outside its {w}x{h} frame",
                    self.image_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentOp {
    HFlip,
    Grayscale,
    /// Additive zero-mean Gaussian noise, in 8-bit units.
    Noise {
        std: f64,
    },
    Contrast {
        factor: f64,
    },
    Brightness {
        delta: f64,
    },
}

impl AugmentOp {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            AugmentOp::HFlip | AugmentOp::Grayscale => true,
            AugmentOp::Noise { std } => std > 0.0 && std <= 50.0,
            AugmentOp::Contrast { factor } => (0.5..=2.0).contains(&factor),
            AugmentOp::Brightness { delta } => (-80.0..=80.0).contains(&delta),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "augmentation parameter out of range: {self}"
            )))
        }
    }
}

impl fmt::Display for AugmentOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugmentOp::HFlip => write!(f, "hflip"),
            AugmentOp::Grayscale => write!(f, "grayscale"),
            AugmentOp::Noise { std } => write!(f, "noise(std={std})"),
            AugmentOp::Contrast { factor } => write!(f, "contrast(factor={factor})"),
            AugmentOp::Brightness { delta } => write!(f, "brightness(delta={delta})"),
        }
    }
}

/// The seven expansion variants and their id tags.
pub const RECIPE: [(&str, AugmentOp); 7] = [
    ("hflip", AugmentOp::HFlip),
    ("gray", AugmentOp::Grayscale),
    ("noise", AugmentOp::Noise { std: 10.0 }),
    ("contrast_hi", AugmentOp::Contrast { factor: 1.3 }),
    ("contrast_lo", AugmentOp::Contrast { factor: 0.7 }),
    ("bright_hi", AugmentOp::Brightness { delta: 40.0 }),
    ("bright_lo", AugmentOp::Brightness { delta: -40.0 }),
];

/// Tag of originals kept by [`expand_dataset`].
pub const ORIGINAL_TAG: &str = "orig";

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Rec.601 luma rounded half up, in integer arithmetic.
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

fn map_channels(img: &RgbImage, f: impl Fn(u8) -> u8) -> RgbImage {
    let mut out = img.clone();
    for v in out.iter_mut() {
        *v = f(*v);
    }
    out
}

/// Applies `op`; `seed` drives the noise samples.
pub fn apply(op: AugmentOp, rec: &ImageRecord, seed: u64) -> Result<ImageRecord> {
    op.validate()?;
    rec.validate()?;
    let mut annotations = rec.annotations.clone();
    let pixels = match op {
        AugmentOp::HFlip => {
            let w = rec.width() as f64;
            for a in &mut annotations {
                let b = a.bbox;
                a.bbox = BBox {
                    x1: w - b.x2,
                    x2: w - b.x1,
                    ..b
                };
            }
            image::imageops::flip_horizontal(&rec.pixels)
        }
        AugmentOp::Grayscale => {
            let mut out = rec.pixels.clone();
            for p in out.pixels_mut() {
                let y = luma(p[0], p[1], p[2]);
                p.0 = [y, y, y];
            }
            out
        }
        AugmentOp::Noise { std } => {
            let normal = Normal::new(0.0, std)
                .map_err(|e| Error::Config(format!("noise std {std}: {e}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = rec.pixels.clone();
            for v in out.iter_mut() {
                *v = clamp_u8(*v as f64 + normal.sample(&mut rng));
            }
            out
        }
        AugmentOp::Contrast { factor } => map_channels(&rec.pixels, |v| {
            clamp_u8(127.5 + factor * (v as f64 - 127.5))
        }),
        AugmentOp::Brightness { delta } => {
            map_channels(&rec.pixels, |v| clamp_u8(v as f64 + delta))
        }
    };
    Ok(ImageRecord {
        image_id: rec.image_id.clone(),
        pixels,
        annotations,
    })
}

/// Seed of one `(image, variant)` pair: the first eight bytes of
/// `sha256(seed_le || image_id || 0 || tag)`.
pub fn record_seed(seed: u64, image_id: &str, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(image_id.as_bytes());
    h.update([0u8]);
    h.update(tag.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

pub fn variant_id(image_id: &str, tag: &str) -> String {
    format!("{image_id}_{tag}")
}

/// One output of [`expand_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub original_id: String,
    pub tag: &'static str,
    pub record: ImageRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpandConfig {
    pub seed: u64,
    pub include_originals: bool,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl ExpandConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            include_originals: false,
            workers: None,
        }
    }
}

fn expand_one(rec: &ImageRecord, cfg: &ExpandConfig) -> Result<Vec<Variant>> {
    let mut out = Vec::with_capacity(RECIPE.len() + 1);
    if cfg.include_originals {
        rec.validate()?;
        let record = rec.clone().renamed(variant_id(&rec.image_id, ORIGINAL_TAG));
        out.push(Variant {
            original_id: rec.image_id.clone(),
            tag: ORIGINAL_TAG,
            record,
        });
    }
    for (tag, op) in RECIPE {
        let record = apply(op, rec, record_seed(cfg.seed, &rec.image_id, tag))?
            .renamed(variant_id(&rec.image_id, tag));
        out.push(Variant {
            original_id: rec.image_id.clone(),
            tag,
            record,
        });
    }
    Ok(out)
}

/// Seven variants per record in [`RECIPE`] order (preceded by the original
/// when requested), in input order. Output does not depend on the worker
/// count.
pub fn expand_dataset(records: &[ImageRecord], cfg: &ExpandConfig) -> Result<Vec<Variant>> {
    if records.is_empty() {
        return Err(Error::Empty("no images to expand"));
    }
    let run = || -> Result<Vec<Variant>> {
        let nested = records
            .par_iter()
            .map(|r| expand_one(r, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(nested.into_iter().flatten().collect())
    };
    match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(run),
        None => run(),
    }
}

/// Reads a PNG or binary PPM as 8-bit RGB.
pub fn read_image(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

/// Encodes as PNG.
pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}
