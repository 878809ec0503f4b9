//! Datasets for the collaborators: seeded synthetic blobs, the grayscale
//! transform used for the colour-imbalance experiment, IID partitioning, IDX
//! ingestion and the `FWDA` container.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{argmax, Tensor};
use crate::rng::{derive_seed, seeded_rng};
use crate::wire::{to_u32, ByteReader};

/// How the input columns map onto image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelLayout {
    Flat,
    /// Pixel-interleaved `[r, g, b]` triples, `height × width` pixels.
    Rgb {
        height: usize,
        width: usize,
    },
    /// Luminance images. `channels` is 3 when the luminance is replicated
    /// over an RGB layout and 1 for single-channel sources.
    Gray {
        height: usize,
        width: usize,
        channels: usize,
    },
}

/// Inputs with one-hot targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Tensor,
    pub targets: Tensor,
    pub layout: ChannelLayout,
}

impl LabeledDataset {
    pub fn new(inputs: Tensor, targets: Tensor, layout: ChannelLayout) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::dim("target rows", inputs.rows(), targets.rows()));
        }
        for r in 0..targets.rows() {
            let row = targets.row(r);
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != row.len() {
                return Err(Error::Argument(format!("target row {r} is not one-hot")));
            }
        }
        Ok(Self {
            inputs,
            targets,
            layout,
        })
    }

    pub fn from_labels(
        inputs: Tensor,
        labels: &[usize],
        classes: usize,
        layout: ChannelLayout,
    ) -> Result<Self> {
        if labels.is_empty() || labels.len() != inputs.rows() {
            return Err(Error::dim("label count", inputs.rows(), labels.len()));
        }
        let mut t = vec![0.0f32; labels.len() * classes];
        for (r, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(Error::Argument(format!(
                    "label {l} out of range for {classes} classes"
                )));
            }
            t[r * classes + l] = 1.0;
        }
        Self::new(inputs, Tensor::matrix(labels.len(), classes, t)?, layout)
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn classes(&self) -> usize {
        self.targets.cols()
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.len())
            .map(|r| argmax(self.targets.row(r)))
            .collect()
    }

    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        Ok(Self {
            inputs: self.inputs.select_rows(rows)?,
            targets: self.targets.select_rows(rows)?,
            layout: self.layout,
        })
    }
}

/// `k` Gaussian clusters in `d` dimensions. Centers are uniform in `[0, 1]^d`;
/// each point adds `spread · N(0, 1)` noise per component. Class sizes differ
/// by at most one.
pub fn gen_blobs(n: usize, d: usize, k: usize, spread: f32, seed: u64) -> Result<LabeledDataset> {
    if k < 2 || n < k || d == 0 {
        return Err(Error::Argument(format!(
            "need k >= 2, n >= k and d > 0 (n={n}, d={d}, k={k})"
        )));
    }
    let mut center_rng = seeded_rng(derive_seed(seed, 0));
    let centers: Vec<f32> = (0..k * d).map(|_| center_rng.random::<f32>()).collect();

    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(&mut seeded_rng(derive_seed(seed, 1)));

    let mut noise = seeded_rng(derive_seed(seed, 2));
    let mut x = Vec::with_capacity(n * d);
    for &l in &labels {
        for &c in &centers[l * d..(l + 1) * d] {
            let z: f32 = noise.sample(StandardNormal);
            x.push(c + spread * z);
        }
    }
    LabeledDataset::from_labels(Tensor::matrix(n, d, x)?, &labels, k, ChannelLayout::Flat)
}

/// Amplitude of the per-channel colour offset in [`gen_image_blobs`].
pub const IMAGE_TINT: f32 = 0.1;

/// Class-clustered `height × width` RGB images.
///
/// Each class has a per-pixel intensity in `[0, 1]` plus a small colour
/// offset per channel (uniform in `±IMAGE_TINT`). Half the noise variance is
/// shared by the three channels of a pixel and half is per channel, for a
/// per-component standard deviation of `spread`. As in natural images most of
/// the class signal survives grayscale conversion.
pub fn gen_image_blobs(
    n: usize,
    height: usize,
    width: usize,
    k: usize,
    spread: f32,
    seed: u64,
) -> Result<LabeledDataset> {
    let pixels = height * width;
    if k < 2 || n < k || pixels == 0 {
        return Err(Error::Argument(format!(
            "need k >= 2, n >= k and a non-empty image (n={n}, {height}x{width}, k={k})"
        )));
    }
    let mut center_rng = seeded_rng(derive_seed(seed, 0));
    let mut centers = Vec::with_capacity(k * pixels * 3);
    for _ in 0..k * pixels {
        let base: f32 = center_rng.random();
        for _ in 0..3 {
            centers.push(base + IMAGE_TINT * (2.0 * center_rng.random::<f32>() - 1.0));
        }
    }

    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(&mut seeded_rng(derive_seed(seed, 1)));

    let mut noise = seeded_rng(derive_seed(seed, 2));
    let mut x = Vec::with_capacity(n * pixels * 3);
    for &l in &labels {
        for px in centers[l * pixels * 3..(l + 1) * pixels * 3].chunks_exact(3) {
            let shared: f32 = noise.sample(StandardNormal);
            for &c in px {
                let own: f32 = noise.sample(StandardNormal);
                x.push(c + spread * std::f32::consts::FRAC_1_SQRT_2 * (shared + own));
            }
        }
    }
    LabeledDataset::from_labels(
        Tensor::matrix(n, pixels * 3, x)?,
        &labels,
        k,
        ChannelLayout::Rgb { height, width },
    )
}

/// Luminance `0.299 R + 0.587 G + 0.114 B`, written back to all three
/// channels so the input width is unchanged.
pub fn to_grayscale(ds: &LabeledDataset) -> Result<LabeledDataset> {
    let ChannelLayout::Rgb { height, width } = ds.layout else {
        return Err(Error::Argument(format!(
            "grayscale needs an RGB layout, got {:?}",
            ds.layout
        )));
    };
    let mut inputs = ds.inputs.clone();
    for px in inputs.data_mut().chunks_exact_mut(3) {
        let y = luminance(px[0], px[1], px[2]);
        px.fill(y);
    }
    Ok(LabeledDataset {
        inputs,
        targets: ds.targets.clone(),
        layout: ChannelLayout::Gray {
            height,
            width,
            channels: 3,
        },
    })
}

fn luminance(r: f32, g: f32, b: f32) -> f32 {
    // f64 keeps R == G == B a fixed point after rounding back to f32.
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) as f32
}

/// Shuffled disjoint split into `n_parts` pieces whose sizes differ by at
/// most one.
pub fn partition(ds: &LabeledDataset, n_parts: usize, seed: u64) -> Result<Vec<LabeledDataset>> {
    if n_parts == 0 || n_parts > ds.len() {
        return Err(Error::Argument(format!(
            "cannot split {} rows into {n_parts} parts",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut seeded_rng(seed));
    let base = ds.len() / n_parts;
    let extra = ds.len() % n_parts;
    let mut parts = Vec::with_capacity(n_parts);
    let mut start = 0;
    for i in 0..n_parts {
        let size = base + usize::from(i < extra);
        parts.push(ds.select(&order[start..start + size])?);
        start += size;
    }
    Ok(parts)
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Reads an IDX image/label file pair (MNIST layout).
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledDataset> {
    parse_idx(&std::fs::read(images_path)?, &std::fs::read(labels_path)?)
}

/// Parses IDX images (`u8` pixels scaled by 1/255) and labels (one-hot).
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    let mut r = ByteReader::new(images);
    let magic = r.u32_be("image magic")?;
    if magic != IDX_IMAGES {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad image magic {magic:#010x}"),
        });
    }
    let n = r.u32_be("image count")? as usize;
    let rows = r.u32_be("image rows")? as usize;
    let cols = r.u32_be("image columns")? as usize;
    let d = rows * cols;
    if n == 0 || d == 0 {
        return Err(r.error("empty image set"));
    }
    let pixels = r.take(n * d, "pixels")?;
    r.finish()?;
    let x: Vec<f32> = pixels.iter().map(|&p| p as f32 / 255.0).collect();

    let mut r = ByteReader::new(labels);
    let magic = r.u32_be("label magic")?;
    if magic != IDX_LABELS {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad label magic {magic:#010x}"),
        });
    }
    let at = r.offset();
    let m = r.u32_be("label count")? as usize;
    if m != n {
        return Err(Error::Parse {
            offset: at,
            message: format!("{m} labels for {n} images"),
        });
    }
    let raw = r.take(m, "labels")?;
    r.finish()?;
    let labels: Vec<usize> = raw.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    LabeledDataset::from_labels(
        Tensor::matrix(n, d, x)?,
        &labels,
        classes.max(2),
        ChannelLayout::Gray {
            height: rows,
            width: cols,
            channels: 1,
        },
    )
}

pub const FWDA_MAGIC: &[u8; 4] = b"FWDA";

/// `FWDA` container: magic, `u32 n`, `u32 d`, `u32 k`, `n·d` f32 inputs,
/// `n` u8 labels, all little-endian. The channel layout is not stored.
pub fn write_fwda(ds: &LabeledDataset) -> Result<Vec<u8>> {
    if ds.classes() > 256 {
        return Err(Error::Argument("FWDA stores labels as u8".into()));
    }
    let mut out = Vec::with_capacity(16 + ds.inputs.data().len() * 4 + ds.len());
    out.extend_from_slice(FWDA_MAGIC);
    out.extend_from_slice(&to_u32(ds.len(), "row count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(ds.input_dim(), "input dim")?.to_le_bytes());
    out.extend_from_slice(&to_u32(ds.classes(), "class count")?.to_le_bytes());
    crate::wire::put_f32s(&mut out, ds.inputs.data());
    out.extend(ds.labels().into_iter().map(|l| l as u8));
    Ok(out)
}

pub fn read_fwda(bytes: &[u8]) -> Result<LabeledDataset> {
    let mut r = ByteReader::new(bytes);
    r.magic(FWDA_MAGIC)?;
    let n = r.u32_le("row count")? as usize;
    let d = r.u32_le("input dim")? as usize;
    let k = r.u32_le("class count")? as usize;
    if n == 0 || d == 0 || k < 2 {
        return Err(r.error(format!("invalid dimensions n={n} d={d} k={k}")));
    }
    let x = r.f32_vec(n * d, "inputs")?;
    let at = r.offset();
    let labels: Vec<usize> = r.take(n, "labels")?.iter().map(|&l| l as usize).collect();
    r.finish()?;
    LabeledDataset::from_labels(Tensor::matrix(n, d, x)?, &labels, k, ChannelLayout::Flat).map_err(
        |e| Error::Parse {
            offset: at,
            message: e.to_string(),
        },
    )
}

pub fn save_fwda(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_fwda(ds)?)?;
    Ok(())
}

pub fn load_fwda(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    read_fwda(&std::fs::read(path)?)
}
