//! Saving and loading blocks: one tensor fixture per parameter plus a
//! plain-text `manifest.txt` holding the block kind, its hyperparameters and
//! the parameter-to-file table.
//!
//! ```text
//! kind multiseam
//! channels 8
//! kernel 3
//! reduction 16
//! patch_scales 1,2,4
//! param seam.p1.embed.weight seam.p1.embed.weight.rdt
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::{
    BottleneckKind, C3Config, Module, MultiSeam, Param, ParamInit, RfaConfig, RfaConv, RfeBlock,
    SeamConfig, Sppf, SppfConfig, C3,
};
use crate::error::{Error, Result};
use crate::tensor::{fixture, Binder, Element, Var};

pub const MANIFEST: &str = "manifest.txt";

/// Kind and hyperparameters of a standalone block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockSpec {
    RfaConv(RfaConfig),
    Rfe { channels: usize },
    C3Rfem(C3Config),
    MultiSeam(SeamConfig),
    Sppf(SppfConfig),
}

impl BlockSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            BlockSpec::RfaConv(_) => "rfaconv",
            BlockSpec::Rfe { .. } => "rfe",
            BlockSpec::C3Rfem(_) => "c3rfem",
            BlockSpec::MultiSeam(_) => "multiseam",
            BlockSpec::Sppf(_) => "sppf",
        }
    }

    /// Hyperparameter lines of the manifest.
    pub fn to_manifest(&self) -> String {
        let mut out = format!("kind {}\n", self.kind());
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} {v}");
        };
        match self {
            BlockSpec::RfaConv(c) => {
                kv("channels", c.channels.to_string());
                kv("kernel", c.kernel.to_string());
                kv("stride", c.stride.to_string());
                kv(
                    "out_channels",
                    c.out_channels.map_or("none".into(), |v| v.to_string()),
                );
            }
            BlockSpec::Rfe { channels } => kv("channels", channels.to_string()),
            BlockSpec::C3Rfem(c) => {
                kv("c_in", c.c_in.to_string());
                kv("c_out", c.c_out.to_string());
                kv("depth", c.depth.to_string());
                kv("shortcut", c.shortcut.to_string());
            }
            BlockSpec::MultiSeam(c) => {
                kv("channels", c.channels.to_string());
                kv("kernel", c.kernel.to_string());
                kv("reduction", c.reduction.to_string());
                let scales: Vec<String> = c.patch_scales.iter().map(usize::to_string).collect();
                kv("patch_scales", scales.join(","));
            }
            BlockSpec::Sppf(c) => {
                kv("c_in", c.c_in.to_string());
                kv("c_out", c.c_out.to_string());
                kv("pool", c.pool.to_string());
            }
        }
        out
    }

    /// Parses the hyperparameter lines of a manifest; `param` lines are
    /// ignored here.
    pub fn from_manifest(text: &str) -> Result<Self> {
        let mut fields = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once(char::is_whitespace).ok_or_else(|| {
                Error::parse_line(i + 1, format!("expected `key value`, got {line:?}"))
            })?;
            if key != "param" {
                fields.insert(key.to_owned(), (i + 1, value.trim().to_owned()));
            }
        }
        let get = |key: &str| -> Result<&(usize, String)> {
            fields
                .get(key)
                .ok_or_else(|| Error::parse_line(0, format!("manifest is missing `{key}`")))
        };
        fn num<V: FromStr>(entry: &(usize, String)) -> Result<V> {
            entry
                .1
                .parse()
                .map_err(|_| Error::parse_line(entry.0, format!("invalid value {:?}", entry.1)))
        }
        let usize_of = |key: &str| get(key).and_then(num::<usize>);
        let spec = match get("kind")?.1.as_str() {
            "rfaconv" => BlockSpec::RfaConv(RfaConfig {
                channels: usize_of("channels")?,
                kernel: usize_of("kernel")?,
                stride: usize_of("stride")?,
                out_channels: match get("out_channels")? {
                    (_, v) if v == "none" => None,
                    entry => Some(num(entry)?),
                },
            }),
            "rfe" => BlockSpec::Rfe {
                channels: usize_of("channels")?,
            },
            "c3rfem" => BlockSpec::C3Rfem(
                C3Config::new(usize_of("c_in")?, usize_of("c_out")?, BottleneckKind::Rfe)
                    .with_depth(usize_of("depth")?)
                    .with_shortcut(get("shortcut").and_then(num::<bool>)?),
            ),
            "multiseam" => {
                let entry = get("patch_scales")?;
                let scales = entry
                    .1
                    .split(',')
                    .map(|s| {
                        s.trim().parse().map_err(|_| {
                            Error::parse_line(entry.0, format!("invalid patch scale {s:?}"))
                        })
                    })
                    .collect::<Result<Vec<usize>>>()?;
                BlockSpec::MultiSeam(SeamConfig {
                    channels: usize_of("channels")?,
                    kernel: usize_of("kernel")?,
                    reduction: usize_of("reduction")?,
                    patch_scales: scales,
                })
            }
            "sppf" => BlockSpec::Sppf(SppfConfig {
                c_in: usize_of("c_in")?,
                c_out: usize_of("c_out")?,
                pool: usize_of("pool")?,
            }),
            other => {
                let line = get("kind")?.0;
                return Err(Error::parse_line(
                    line,
                    format!("unknown block kind {other:?}"),
                ));
            }
        };
        Ok(spec)
    }

    pub fn build<T: Element>(&self, seed: u64) -> Result<AnyBlock<T>> {
        let init = &mut ParamInit::new(seed);
        let prefix = self.kind();
        Ok(match self {
            BlockSpec::RfaConv(c) => AnyBlock::RfaConv(RfaConv::new(*c, init, prefix)?),
            BlockSpec::Rfe { channels } => AnyBlock::Rfe(RfeBlock::new(*channels, init, prefix)?),
            BlockSpec::C3Rfem(c) => AnyBlock::C3(C3::new(*c, init, prefix)?),
            BlockSpec::MultiSeam(c) => {
                AnyBlock::MultiSeam(MultiSeam::new(c.clone(), init, prefix)?)
            }
            BlockSpec::Sppf(c) => AnyBlock::Sppf(Sppf::new(*c, init, prefix)?),
        })
    }
}

/// Any standalone block, dispatched by kind.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum AnyBlock<T: Element> {
    RfaConv(RfaConv<T>),
    Rfe(RfeBlock<T>),
    C3(C3<T>),
    MultiSeam(MultiSeam<T>),
    Sppf(Sppf<T>),
}

impl<T: Element> AnyBlock<T> {
    pub fn spec(&self) -> BlockSpec {
        match self {
            AnyBlock::RfaConv(m) => BlockSpec::RfaConv(m.config),
            AnyBlock::Rfe(m) => BlockSpec::Rfe {
                channels: m.channels,
            },
            AnyBlock::C3(m) => BlockSpec::C3Rfem(m.config),
            AnyBlock::MultiSeam(m) => BlockSpec::MultiSeam(m.config.clone()),
            AnyBlock::Sppf(m) => BlockSpec::Sppf(m.config),
        }
    }

    fn inner(&self) -> &dyn Module<T> {
        match self {
            AnyBlock::RfaConv(m) => m,
            AnyBlock::Rfe(m) => m,
            AnyBlock::C3(m) => m,
            AnyBlock::MultiSeam(m) => m,
            AnyBlock::Sppf(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Module<T> {
        match self {
            AnyBlock::RfaConv(m) => m,
            AnyBlock::Rfe(m) => m,
            AnyBlock::C3(m) => m,
            AnyBlock::MultiSeam(m) => m,
            AnyBlock::Sppf(m) => m,
        }
    }
}

impl<T: Element> Module<T> for AnyBlock<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.inner().visit_params(f)
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.inner_mut().visit_params_mut(f)
    }

    fn forward_bound(&self, b: &Binder<T>, x: &Var<T>) -> Result<Var<T>> {
        self.inner().forward_bound(b, x)
    }
}

fn file_name(param: &str) -> String {
    format!("{param}.rdt")
}

/// Writes the manifest and one fixture per parameter into `dir`.
pub fn save<T: Element>(block: &AnyBlock<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = block.spec().to_manifest();
    for p in block.params() {
        let file = file_name(&p.name);
        fs::write(dir.join(&file), fixture::encode(&p.value))?;
        let _ = writeln!(manifest, "param {} {file}", p.name);
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

/// Rebuilds a block from `dir`. Every parameter of the block must be listed
/// with a tensor of the expected shape.
pub fn load<T: Element>(dir: &Path) -> Result<AnyBlock<T>> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let mut block = BlockSpec::from_manifest(&text)?.build::<T>(0)?;
    let mut files = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        if parts.next() != Some("param") {
            continue;
        }
        match (parts.next(), parts.next(), parts.next()) {
            (Some(name), Some(file), None) => {
                files.insert(name.to_owned(), (i + 1, file.to_owned()));
            }
            _ => return Err(Error::parse_line(i + 1, "expected `param <name> <file>`")),
        }
    }
    let mut result = Ok(());
    block.visit_params_mut(&mut |p| {
        if result.is_err() {
            return;
        }
        result = (|| {
            let (line, file) = files.remove(&p.name).ok_or_else(|| {
                Error::parse_line(0, format!("manifest has no entry for {}", p.name))
            })?;
            let value = fixture::decode::<T>(&fs::read(dir.join(&file))?)?;
            if value.shape() != p.value.shape() {
                return Err(Error::parse_line(
                    line,
                    format!(
                        "{} has shape {:?}, expected {:?}",
                        p.name,
                        value.shape(),
                        p.value.shape()
                    ),
                ));
            }
            p.value = value;
            Ok(())
        })();
    });
    result?;
    if let Some((name, (line, _))) = files.into_iter().next() {
        return Err(Error::parse_line(line, format!("unknown parameter {name}")));
    }
    Ok(block)
}
