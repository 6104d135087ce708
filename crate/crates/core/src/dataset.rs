//! Labeled edge samples, augmentation, clip-level splits and the `LDEM`
//! binary container.
//!
//! Container layout, little-endian:
//!
//! ```text
//! "LDEM" | u32 version=1 | u32 sample_count | u32 height=64 | u32 width=64
//! f32 pixel_size_nm | u8 tag_len | tag bytes | u8 augmented
//! per sample: u32 clip_id | u8 edge | u8 aug | f32 threshold | 4096 x f32 pixels
//! ```

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::config::LithoConfig;
use crate::d4::D4;
use crate::geometry::{Clip, Edge};
use crate::optics::{golden_threshold, shift_clip_window, simulate_aerial, AerialImage, OpticsError, IMAGE_LEN, IMAGE_SIDE};
use crate::rng::SplitMix64;

const MAGIC: &[u8; 4] = b"LDEM";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset is already augmented")]
    AlreadyAugmented,
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
    #[error("split needs an un-augmented dataset")]
    SplitAugmented,
    #[error("corrupt dataset file: {0}")]
    CorruptFile(String),
    #[error("dataset I/O failed: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error(transparent)]
    Optics(#[from] OpticsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSample {
    pub image: AerialImage,
    pub threshold: f32,
    pub clip_id: u32,
    pub edge: Edge,
    pub aug: D4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<DataSample>,
    pub litho_tag: String,
    pub augmented: bool,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct clip ids in order of first appearance.
    pub fn clip_ids(&self) -> Vec<u32> {
        let mut seen = HashSet::new();
        self.samples
            .iter()
            .map(|s| s.clip_id)
            .filter(|id| seen.insert(*id))
            .collect()
    }

    pub fn thresholds(&self) -> Vec<f32> {
        self.samples.iter().map(|s| s.threshold).collect()
    }

    /// Samples at the given indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            litho_tag: self.litho_tag.clone(),
            augmented: self.augmented,
        }
    }

    fn with_clips(&self, clips: &HashSet<u32>) -> Dataset {
        Dataset {
            samples: self
                .samples
                .iter()
                .filter(|s| clips.contains(&s.clip_id))
                .cloned()
                .collect(),
            litho_tag: self.litho_tag.clone(),
            augmented: self.augmented,
        }
    }
}

/// Four edge samples per clip, ordered by (clip, edge).
pub fn build_dataset(clips: &[Clip], litho: &LithoConfig) -> Result<Dataset, DatasetError> {
    let mut samples = Vec::with_capacity(4 * clips.len());
    for (id, clip) in clips.iter().enumerate() {
        for edge in Edge::ALL {
            let image = simulate_aerial(&shift_clip_window(clip, edge), &litho.optics)?;
            let threshold = golden_threshold(&image, &litho.resist);
            samples.push(DataSample {
                image,
                threshold,
                clip_id: id as u32,
                edge,
                aug: D4::IDENTITY,
            });
        }
    }
    Ok(Dataset {
        samples,
        litho_tag: litho.tag.clone(),
        augmented: false,
    })
}

/// Replaces every sample by its eight square-symmetry images, labels copied.
pub fn augment(ds: &Dataset) -> Result<Dataset, DatasetError> {
    if ds.augmented {
        return Err(DatasetError::AlreadyAugmented);
    }
    let mut samples = Vec::with_capacity(8 * ds.len());
    for s in &ds.samples {
        for g in D4::all() {
            samples.push(DataSample {
                image: s.image.transformed(g),
                aug: s.aug.then(g),
                ..s.clone()
            });
        }
    }
    Ok(Dataset {
        samples,
        litho_tag: ds.litho_tag.clone(),
        augmented: true,
    })
}

/// Clip-level split with nested fractions.
///
/// A seeded master permutation of the clips fixes the 50% training pool and
/// the test half. A fraction up to one half takes a prefix of that pool and
/// always tests on the same half; larger fractions test on the complement of
/// their own prefix.
pub fn split(ds: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset), DatasetError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(DatasetError::BadFraction(train_frac));
    }
    if ds.augmented {
        return Err(DatasetError::SplitAugmented);
    }
    let ids = ds.clip_ids();
    let mut order = ids.clone();
    SplitMix64::new(seed).shuffle(&mut order);
    let n_train = (train_frac * ids.len() as f64).floor() as usize;
    let n_pool = ids.len() / 2;
    let train: HashSet<u32> = order[..n_train].iter().copied().collect();
    let test: HashSet<u32> = if n_train <= n_pool {
        order[n_pool..].iter().copied().collect()
    } else {
        order[n_train..].iter().copied().collect()
    };
    Ok((ds.with_clips(&train), ds.with_clips(&test)))
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let tag = ds.litho_tag.as_bytes();
    if tag.len() > u8::MAX as usize {
        return Err(DatasetError::CorruptFile("litho tag longer than 255 bytes".into()));
    }
    let pixel_size = ds.samples.first().map_or(0.0, |s| s.image.pixel_size);
    let mut buf = Vec::with_capacity(32 + ds.len() * (10 + 4 * IMAGE_LEN));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(IMAGE_SIDE as u32).to_le_bytes());
    buf.extend_from_slice(&(IMAGE_SIDE as u32).to_le_bytes());
    buf.extend_from_slice(&pixel_size.to_le_bytes());
    buf.push(tag.len() as u8);
    buf.extend_from_slice(tag);
    buf.push(u8::from(ds.augmented));
    for s in &ds.samples {
        buf.extend_from_slice(&s.clip_id.to_le_bytes());
        buf.push(s.edge.code());
        buf.push(s.aug.code());
        buf.extend_from_slice(&s.threshold.to_le_bytes());
        for p in &s.image.pixels {
            buf.extend_from_slice(&p.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DatasetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            DatasetError::CorruptFile(format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, DatasetError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn f32(&mut self) -> Result<f32, DatasetError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let buf = std::fs::read(path)?;
    decode_dataset(&buf)
}

pub fn decode_dataset(buf: &[u8]) -> Result<Dataset, DatasetError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(DatasetError::CorruptFile("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(DatasetError::CorruptFile(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let (h, w) = (r.u32()?, r.u32()?);
    if h as usize != IMAGE_SIDE || w as usize != IMAGE_SIDE {
        return Err(DatasetError::CorruptFile(format!("image shape {h}x{w}")));
    }
    let pixel_size = r.f32()?;
    let tag_len = r.u8()? as usize;
    let litho_tag = String::from_utf8(r.take(tag_len)?.to_vec())
        .map_err(|_| DatasetError::CorruptFile("tag is not UTF-8".into()))?;
    let augmented = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(DatasetError::CorruptFile(format!("augmented flag {v}"))),
    };
    let per_sample = 10 + 4 * IMAGE_LEN;
    if buf.len() - r.pos != count * per_sample {
        return Err(DatasetError::CorruptFile(format!(
            "{} payload bytes for {count} samples",
            buf.len() - r.pos
        )));
    }
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let clip_id = r.u32()?;
        let edge = Edge::from_code(r.u8()?).ok_or_else(|| DatasetError::CorruptFile("edge code".into()))?;
        let aug = D4::from_code(r.u8()?).ok_or_else(|| DatasetError::CorruptFile("symmetry code".into()))?;
        let threshold = r.f32()?;
        let pixels = (0..IMAGE_LEN).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
        samples.push(DataSample {
            image: AerialImage::new(pixels, pixel_size),
            threshold,
            clip_id,
            edge,
            aug,
        });
    }
    Ok(Dataset {
        samples,
        litho_tag,
        augmented,
    })
}
