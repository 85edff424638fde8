//! MNIST IDX ingestion, dataset containers, per-class representative
//! selection, and seeded evaluation sampling.
//!
//! All parsing works on in-memory byte buffers; file access is a thin
//! convenience layer on top. Sampling uses ChaCha8 so that a given seed
//! reproduces the same indices on every platform.

use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Images are 28x28 grayscale.
pub const IMAGE_SIDE: usize = 28;
/// Flattened pixel count per image.
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
/// Digit classes 0..=9.
pub const NUM_CLASSES: usize = 10;

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file: need {needed} bytes, have {have}")]
    TruncatedFile { needed: usize, have: usize },
    #[error("unsupported dimensions {rows}x{cols}, expected 28x28")]
    BadDims { rows: u32, cols: u32 },
    #[error("label {value} at index {index} out of range 0..=9")]
    BadLabel { index: usize, value: u8 },
    #[error("{extra} trailing bytes after declared payload")]
    TrailingBytes { extra: usize },
    #[error("class {0} absent from dataset")]
    MissingClass(usize),
    #[error("requested {n} samples from a dataset of {available}")]
    SampleTooLarge { n: usize, available: usize },
    #[error("images ({images}) and labels ({labels}) counts differ")]
    LengthMismatch { images: usize, labels: usize },
    #[error("pixel {value} at offset {index} invalid for domain {domain:?}")]
    PixelOutOfDomain {
        index: usize,
        value: f64,
        domain: PixelDomain,
    },
    #[error("expected a {expected:?} image, found {found:?}")]
    WrongDomain {
        expected: PixelDomain,
        found: PixelDomain,
    },
    #[error("non-integral pixel {0} cannot be serialized to IDX bytes")]
    NonIntegralPixel(f64),
    #[error("image has {0} pixels, expected {IMAGE_PIXELS}")]
    WrongPixelCount(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Value domain an [`Image`] lives in.
///
/// `Raw255` is the attack search space: real values in `[0, 255]`. Images
/// parsed from IDX files are integral, but perturbed candidates produced by
/// the attacks are generally not, so integrality is only enforced when
/// serializing back to bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelDomain {
    /// Values in `[0.0, 255.0]`.
    Raw255,
    /// Values in `[0.0, 1.0]`.
    Unit,
    /// Values in `{0.0, 1.0}`.
    Binary,
}

/// A 28x28 grayscale image: 784 row-major pixels plus their value domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    domain: PixelDomain,
    pixels: Vec<f64>,
}

impl Image {
    /// Builds an image, validating length and the domain's value range.
    pub fn new(domain: PixelDomain, pixels: Vec<f64>) -> Result<Self, DataError> {
        if pixels.len() != IMAGE_PIXELS {
            return Err(DataError::WrongPixelCount(pixels.len()));
        }
        for (index, &value) in pixels.iter().enumerate() {
            let ok = match domain {
                PixelDomain::Raw255 => value.is_finite() && (0.0..=255.0).contains(&value),
                PixelDomain::Unit => value.is_finite() && (0.0..=1.0).contains(&value),
                PixelDomain::Binary => value == 0.0 || value == 1.0,
            };
            if !ok {
                return Err(DataError::PixelOutOfDomain {
                    index,
                    value,
                    domain,
                });
            }
        }
        Ok(Self { domain, pixels })
    }

    /// Raw255 image from one 784-byte IDX record.
    pub fn from_raw_bytes(bytes: &[u8]) -> Result<Self, DataError> {
        if bytes.len() != IMAGE_PIXELS {
            return Err(DataError::WrongPixelCount(bytes.len()));
        }
        Ok(Self {
            domain: PixelDomain::Raw255,
            pixels: bytes.iter().map(|&b| f64::from(b)).collect(),
        })
    }

    pub fn domain(&self) -> PixelDomain {
        self.domain
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// Pixel at `(row, col)`, row-major.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * IMAGE_SIDE + col]
    }

    /// Rescales into the `Unit` domain. Raw255 divides by 255; Unit and
    /// Binary values are already in `[0, 1]` and pass through.
    pub fn to_unit(&self) -> Image {
        match self.domain {
            PixelDomain::Raw255 => Image {
                domain: PixelDomain::Unit,
                pixels: self.pixels.iter().map(|&p| p / 255.0).collect(),
            },
            PixelDomain::Unit | PixelDomain::Binary => Image {
                domain: PixelDomain::Unit,
                pixels: self.pixels.clone(),
            },
        }
    }

    /// Replaces one pixel, keeping the domain. Panics if the value is
    /// outside the domain or the index is out of bounds.
    pub fn with_pixel(&self, index: usize, value: f64) -> Image {
        let mut pixels = self.pixels.clone();
        pixels[index] = value;
        Image::new(self.domain, pixels).expect("replacement pixel outside image domain")
    }
}

/// Which half of the corpus a [`Dataset`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// A labeled image collection in file order.
///
/// Pixels are stored as the original bytes (u8, 784 per image) to keep a
/// 60k-image corpus at ~47 MB; [`Dataset::image`] materializes `f64` images
/// on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    pixels: Vec<u8>,
    labels: Vec<u8>,
    split: Split,
}

impl Dataset {
    /// Builds a dataset from parsed images and labels. Images must be
    /// integral Raw255 (as produced by [`parse_idx_images`]).
    pub fn new(images: Vec<Image>, labels: Vec<u8>, split: Split) -> Result<Self, DataError> {
        if images.len() != labels.len() {
            return Err(DataError::LengthMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        for (index, &label) in labels.iter().enumerate() {
            if label > 9 {
                return Err(DataError::BadLabel {
                    index,
                    value: label,
                });
            }
        }
        let mut pixels = Vec::with_capacity(images.len() * IMAGE_PIXELS);
        for image in &images {
            if image.domain != PixelDomain::Raw255 {
                return Err(DataError::WrongDomain {
                    expected: PixelDomain::Raw255,
                    found: image.domain,
                });
            }
            for &p in &image.pixels {
                if p.fract() != 0.0 {
                    return Err(DataError::NonIntegralPixel(p));
                }
                pixels.push(p as u8);
            }
        }
        Ok(Self {
            pixels,
            labels,
            split,
        })
    }

    /// Parses a dataset straight from IDX image and label byte buffers.
    pub fn from_idx_bytes(
        image_bytes: &[u8],
        label_bytes: &[u8],
        split: Split,
    ) -> Result<Self, DataError> {
        let images = parse_idx_images(image_bytes)?;
        let labels = parse_idx_labels(label_bytes)?;
        Dataset::new(images, labels, split)
    }

    /// Loads a dataset from a pair of IDX files on disk.
    pub fn from_idx_files(
        images_path: &Path,
        labels_path: &Path,
        split: Split,
    ) -> Result<Self, DataError> {
        let image_bytes = fs::read(images_path)?;
        let label_bytes = fs::read(labels_path)?;
        Dataset::from_idx_bytes(&image_bytes, &label_bytes, split)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// The `i`-th image as an integral Raw255 image.
    pub fn image(&self, i: usize) -> Image {
        let bytes = &self.pixels[i * IMAGE_PIXELS..(i + 1) * IMAGE_PIXELS];
        Image::from_raw_bytes(bytes).expect("stored image has exactly 784 bytes")
    }

    /// The raw bytes of the `i`-th image.
    pub fn raw_pixels(&self, i: usize) -> &[u8] {
        &self.pixels[i * IMAGE_PIXELS..(i + 1) * IMAGE_PIXELS]
    }

    pub fn label(&self, i: usize) -> usize {
        usize::from(self.labels[i])
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

/// Parses an IDX image file: big-endian magic `0x00000803`, count, rows=28,
/// cols=28, then `count * 784` unsigned bytes. Rejects trailing bytes so
/// that serialization round-trips byte-for-byte.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Image>, DataError> {
    if bytes.len() < 16 {
        return Err(DataError::TruncatedFile {
            needed: 16,
            have: bytes.len(),
        });
    }
    let magic = BigEndian::read_u32(&bytes[0..4]);
    if magic != IDX_IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            expected: IDX_IMAGE_MAGIC,
            found: magic,
        });
    }
    let count = BigEndian::read_u32(&bytes[4..8]) as usize;
    let rows = BigEndian::read_u32(&bytes[8..12]);
    let cols = BigEndian::read_u32(&bytes[12..16]);
    if rows != IMAGE_SIDE as u32 || cols != IMAGE_SIDE as u32 {
        return Err(DataError::BadDims { rows, cols });
    }
    let needed = 16 + count * IMAGE_PIXELS;
    if bytes.len() < needed {
        return Err(DataError::TruncatedFile {
            needed,
            have: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(DataError::TrailingBytes {
            extra: bytes.len() - needed,
        });
    }
    bytes[16..]
        .chunks_exact(IMAGE_PIXELS)
        .map(Image::from_raw_bytes)
        .collect()
}

/// Parses an IDX label file: big-endian magic `0x00000801`, count, then
/// `count` unsigned bytes, each in 0..=9.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    if bytes.len() < 8 {
        return Err(DataError::TruncatedFile {
            needed: 8,
            have: bytes.len(),
        });
    }
    let magic = BigEndian::read_u32(&bytes[0..4]);
    if magic != IDX_LABEL_MAGIC {
        return Err(DataError::BadMagic {
            expected: IDX_LABEL_MAGIC,
            found: magic,
        });
    }
    let count = BigEndian::read_u32(&bytes[4..8]) as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(DataError::TruncatedFile {
            needed,
            have: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(DataError::TrailingBytes {
            extra: bytes.len() - needed,
        });
    }
    let labels = bytes[8..].to_vec();
    for (index, &value) in labels.iter().enumerate() {
        if value > 9 {
            return Err(DataError::BadLabel { index, value });
        }
    }
    Ok(labels)
}

/// Serializes integral Raw255 images back to IDX bytes. Inverse of
/// [`parse_idx_images`].
pub fn serialize_idx_images(images: &[Image]) -> Result<Vec<u8>, DataError> {
    let mut out = Vec::with_capacity(16 + images.len() * IMAGE_PIXELS);
    out.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    out.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    for image in images {
        if image.domain != PixelDomain::Raw255 {
            return Err(DataError::WrongDomain {
                expected: PixelDomain::Raw255,
                found: image.domain,
            });
        }
        for &p in &image.pixels {
            if p.fract() != 0.0 {
                return Err(DataError::NonIntegralPixel(p));
            }
            out.push(p as u8);
        }
    }
    Ok(out)
}

/// Serializes labels back to IDX bytes. Inverse of [`parse_idx_labels`].
pub fn serialize_idx_labels(labels: &[u8]) -> Result<Vec<u8>, DataError> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for (index, &value) in labels.iter().enumerate() {
        if value > 9 {
            return Err(DataError::BadLabel { index, value });
        }
        out.push(value);
    }
    Ok(out)
}

/// The first dataset image of each class, in dataset (file) order.
#[derive(Debug, Clone)]
pub struct RepresentativeSet {
    reps: Vec<Image>,
    source_indices: [usize; NUM_CLASSES],
}

impl RepresentativeSet {
    pub fn reps(&self) -> &[Image] {
        &self.reps
    }

    pub fn rep(&self, class: usize) -> &Image {
        &self.reps[class]
    }

    pub fn source_indices(&self) -> &[usize; NUM_CLASSES] {
        &self.source_indices
    }

    /// Rebuilds a set from images and the dataset indices they came from.
    /// Used when loading a persisted model bundle.
    pub fn from_parts(
        reps: Vec<Image>,
        source_indices: [usize; NUM_CLASSES],
    ) -> Result<Self, DataError> {
        if reps.len() != NUM_CLASSES {
            return Err(DataError::MissingClass(reps.len()));
        }
        Ok(Self {
            reps,
            source_indices,
        })
    }
}

/// Selects the representative image of each class: the dataset image at the
/// smallest index whose label is that class.
pub fn select_representatives(dataset: &Dataset) -> Result<RepresentativeSet, DataError> {
    let mut found: [Option<usize>; NUM_CLASSES] = [None; NUM_CLASSES];
    let mut remaining = NUM_CLASSES;
    for (i, &label) in dataset.labels().iter().enumerate() {
        let slot = &mut found[usize::from(label)];
        if slot.is_none() {
            *slot = Some(i);
            remaining -= 1;
            if remaining == 0 {
                break;
            }
        }
    }
    let mut source_indices = [0usize; NUM_CLASSES];
    let mut reps = Vec::with_capacity(NUM_CLASSES);
    for (class, slot) in found.iter().enumerate() {
        let index = slot.ok_or(DataError::MissingClass(class))?;
        source_indices[class] = index;
        reps.push(dataset.image(index));
    }
    Ok(RepresentativeSet {
        reps,
        source_indices,
    })
}

/// One evaluation item: image, its true label, and its dataset index.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub image: Image,
    pub label: usize,
    pub dataset_index: usize,
}

/// A seeded evaluation subset drawn without replacement.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub items: Vec<EvalItem>,
    pub seed: u64,
}

/// Seeded Fisher-Yates permutation of `0..len` using ChaCha8. The
/// evaluation subset is the prefix of this permutation, which lets callers
/// extend a subset deterministically by walking further along it.
pub fn seeded_index_permutation(len: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
    indices
}

/// Draws `n` distinct dataset indices with a seeded generator. The same
/// `(dataset order, n, seed)` always yields the same items.
pub fn sample_eval_subset(dataset: &Dataset, n: usize, seed: u64) -> Result<EvalSet, DataError> {
    if n > dataset.len() {
        return Err(DataError::SampleTooLarge {
            n,
            available: dataset.len(),
        });
    }
    let permutation = seeded_index_permutation(dataset.len(), seed);
    let items = permutation[..n]
        .iter()
        .map(|&i| EvalItem {
            image: dataset.image(i),
            label: dataset.label(i),
            dataset_index: i,
        })
        .collect();
    Ok(EvalSet { items, seed })
}
