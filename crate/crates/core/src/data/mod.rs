//! Synthetic datasets and manifest-based loading of image/mask pairs.

mod synthetic;

pub use synthetic::{
    synthesize, synthesize_one, target_mask, SyntheticConfig, SyntheticKind, Target, MASK_PEAK_FRACTION,
};

use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One image with its binary mask, both (1, 1, h, w).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    pub image: Tensor,
    pub mask: Tensor,
    pub split: Split,
}

/// Samples grouped by split.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn from_samples(samples: Vec<Sample>) -> Self {
        let mut d = Dataset::default();
        for s in samples {
            match s.split {
                Split::Train => d.train.push(s),
                Split::Val => d.val.push(s),
                Split::Test => d.test.push(s),
            }
        }
        d
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Fraction of mask pixels over all samples.
    pub fn foreground_fraction(&self) -> f64 {
        let all = self.train.iter().chain(&self.val).chain(&self.test);
        let (mut fg, mut total) = (0.0, 0usize);
        for s in all {
            fg += s.mask.sum();
            total += s.mask.numel();
        }
        if total == 0 {
            0.0
        } else {
            fg / total as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    pub mask: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub root: PathBuf,
}

fn load_error(entry: &str, reason: impl Into<String>) -> Error {
    Error::Load {
        entry: entry.to_string(),
        reason: reason.into(),
    }
}

fn open_image(path: &Path, entry: &str) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(load_error(entry, format!("missing file {}", path.display())));
    }
    image::open(path).map_err(|e| load_error(entry, format!("cannot decode {}: {e}", path.display())))
}

/// Grayscale image scaled to [0, 1] (8- and 16-bit sources).
pub fn read_image(path: &Path) -> Result<Tensor> {
    let entry = path.display().to_string();
    let img = open_image(path, &entry)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        other => other
            .to_luma16()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
    };
    Tensor::new([1, 1, h, w], data)
}

/// Binary mask; accepted pixel values are 0 and 1 or the format maximum.
pub fn read_mask(path: &Path) -> Result<Tensor> {
    let entry = path.display().to_string();
    let img = open_image(path, &entry)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (raw, max): (Vec<u32>, u32) = match img {
        DynamicImage::ImageLuma8(b) => (b.into_raw().into_iter().map(u32::from).collect(), 255),
        DynamicImage::ImageLuma16(b) => (b.into_raw().into_iter().map(u32::from).collect(), 65535),
        other => (other.to_luma8().into_raw().into_iter().map(u32::from).collect(), 255),
    };
    let mut data = Vec::with_capacity(raw.len());
    for (i, v) in raw.into_iter().enumerate() {
        data.push(match v {
            0 => 0.0,
            1 => 1.0,
            m if m == max => 1.0,
            other => {
                return Err(load_error(
                    &entry,
                    format!("mask is not binary: value {other} at pixel ({}, {})", i / w, i % w),
                ))
            }
        });
    }
    Tensor::new([1, 1, h, w], data)
}

fn io_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("cannot write {}: {other}", path.display())),
    }
}

fn plane_dims(t: &Tensor) -> Result<(u32, u32)> {
    let s = t.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::param(format!("can only write single-plane images, got {s}")));
    }
    Ok((s.w as u32, s.h as u32))
}

/// Writes values in [0, 1] as a 16-bit grayscale PNG.
pub fn write_png16(path: &Path, t: &Tensor) -> Result<()> {
    let (w, h) = plane_dims(t)?;
    let data: Vec<u16> = t
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(w, h, data).expect("sized");
    buf.save(path).map_err(|e| io_err(path, e))
}

/// Writes a binary mask as an 8-bit 0/255 PNG.
pub fn write_mask_png(path: &Path, t: &Tensor) -> Result<()> {
    let (w, h) = plane_dims(t)?;
    let data: Vec<u8> = t.data().iter().map(|&v| if v > 0.5 { 255 } else { 0 }).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(w, h, data).expect("sized");
    buf.save(path).map_err(|e| io_err(path, e))
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("manifest {}: {e}", path.display())))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Loads and validates one pair; errors name the entry.
    pub fn load_pair(&self, entry: &ManifestEntry) -> Result<(Tensor, Tensor)> {
        let wrap = |e: Error| match e {
            Error::Load { reason, .. } => load_error(&entry.image, reason),
            other => load_error(&entry.image, other.to_string()),
        };
        let image = read_image(&self.resolve(&entry.image)).map_err(wrap)?;
        let mask = read_mask(&self.resolve(&entry.mask)).map_err(wrap)?;
        if image.shape() != mask.shape() {
            return Err(load_error(
                &entry.image,
                format!("image is {} but mask is {}", image.shape(), mask.shape()),
            ));
        }
        Ok((image, mask))
    }

    pub fn load_all(&self) -> Result<Dataset> {
        let mut samples = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let (image, mask) = self.load_pair(e)?;
            let name = Path::new(&e.image)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| e.image.clone());
            samples.push(Sample {
                name,
                image,
                mask,
                split: e.split,
            });
        }
        Ok(Dataset::from_samples(samples))
    }
}

/// Writes `images/<name>.png`, `masks/<name>.png` and `manifest.json` under
/// `dir`, returning the manifest.
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<DatasetManifest> {
    let images = dir.join("images");
    let masks = dir.join("masks");
    for d in [&images, &masks] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let img = format!("images/{}.png", s.name);
        let mask = format!("masks/{}.png", s.name);
        write_png16(&dir.join(&img), &s.image)?;
        write_mask_png(&dir.join(&mask), &s.mask)?;
        entries.push(ManifestEntry {
            image: img,
            mask,
            split: s.split,
        });
    }
    let manifest = DatasetManifest {
        entries,
        root: dir.to_path_buf(),
    };
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Synthesizes a dataset and writes it to `dir`.
pub fn generate(cfg: &SyntheticConfig, dir: &Path) -> Result<(DatasetManifest, Vec<Sample>)> {
    let samples = synthesize(cfg)?;
    let manifest = write_dataset(dir, &samples)?;
    Ok((manifest, samples))
}
