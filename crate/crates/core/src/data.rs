//! MNIST IDX parsing and dataset construction with the optional no-signal class.
//!
//! IDX layout (all integers big-endian):
//!
//! ```text
//! bytes 0-3   magic: 0x00000801 (labels, 2049) or 0x00000803 (images, 2051)
//! bytes 4-7   item count
//! bytes 8-15  rows, cols            (images only)
//! payload     one unsigned byte per label / pixel, row-major
//! ```
//!
//! Gzip-wrapped files (leading bytes `1F 8B`) are inflated before parsing.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
/// Label of the no-signal (black image) class.
pub const EMPTY_CLASS: u8 = 10;

pub const LABEL_MAGIC: u32 = 2049;
pub const IMAGE_MAGIC: u32 = 2051;

const GZIP_MAGIC: [u8; 2] = [0x1F, 0x8B];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unknown IDX magic number {0}")]
    UnknownMagic(u32),
    #[error("truncated IDX payload: header declares {declared} bytes, {available} available")]
    TruncatedPayload { declared: usize, available: usize },
    #[error("images must be 28x28, found {rows}x{cols}")]
    BadDimension { rows: usize, cols: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} is out of range for {num_classes} classes")]
    LabelOutOfRange { label: u8, num_classes: usize },
    #[error("expected {expected} IDX data in {path}")]
    WrongKind {
        expected: &'static str,
        path: String,
    },
    #[error("gzip decode failed: {0}")]
    Gzip(std::io::Error),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A set of normalized grayscale images stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` values in `[0, 1]`.
    pub pixels: Vec<f32>,
}

impl ImageSet {
    pub fn image(&self, index: usize) -> &[f32] {
        let len = self.rows * self.cols;
        &self.pixels[index * len..(index + 1) * len]
    }
}

/// Decoded contents of one IDX file.
#[derive(Debug, Clone, PartialEq)]
pub enum IdxTensor {
    Images(ImageSet),
    Labels(Vec<u8>),
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(DataError::TruncatedPayload {
            declared: offset + 4,
            available: bytes.len(),
        })
}

/// Parses an IDX payload (raw or gzip-compressed).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor, DataError> {
    if bytes.starts_with(&GZIP_MAGIC) {
        let mut inflated = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut inflated)
            .map_err(DataError::Gzip)?;
        return parse_raw_idx(&inflated);
    }
    parse_raw_idx(bytes)
}

fn parse_raw_idx(bytes: &[u8]) -> Result<IdxTensor, DataError> {
    let magic = read_u32(bytes, 0)?;
    match magic {
        LABEL_MAGIC => {
            let count = read_u32(bytes, 4)? as usize;
            let payload = checked_payload(bytes, 8, count)?;
            if let Some(&label) = payload.iter().find(|&&l| l > 9) {
                return Err(DataError::LabelOutOfRange {
                    label,
                    num_classes: 10,
                });
            }
            Ok(IdxTensor::Labels(payload.to_vec()))
        }
        IMAGE_MAGIC => {
            let count = read_u32(bytes, 4)? as usize;
            let rows = read_u32(bytes, 8)? as usize;
            let cols = read_u32(bytes, 12)? as usize;
            if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
                return Err(DataError::BadDimension { rows, cols });
            }
            let payload = checked_payload(bytes, 16, count * rows * cols)?;
            let pixels = payload.iter().map(|&b| f32::from(b) / 255.0).collect();
            Ok(IdxTensor::Images(ImageSet {
                count,
                rows,
                cols,
                pixels,
            }))
        }
        other => Err(DataError::UnknownMagic(other)),
    }
}

fn checked_payload(bytes: &[u8], header: usize, len: usize) -> Result<&[u8], DataError> {
    let declared = header + len;
    if bytes.len() < declared {
        return Err(DataError::TruncatedPayload {
            declared,
            available: bytes.len(),
        });
    }
    Ok(&bytes[header..declared])
}

/// Serializes images as IDX, quantizing each pixel to `round(255 * p)`.
pub fn encode_images(images: &ImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.count as u32).to_be_bytes());
    out.extend_from_slice(&(images.rows as u32).to_be_bytes());
    out.extend_from_slice(&(images.cols as u32).to_be_bytes());
    out.extend(images.pixels.iter().map(|&p| quantize(p)));
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Maps a `[0, 1]` intensity to a byte, clamping out-of-range values.
pub fn quantize(p: f32) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn read_idx_file(path: &Path) -> Result<IdxTensor, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_idx(&bytes)
}

pub fn read_images(path: &Path) -> Result<ImageSet, DataError> {
    match read_idx_file(path)? {
        IdxTensor::Images(images) => Ok(images),
        IdxTensor::Labels(_) => Err(DataError::WrongKind {
            expected: "image",
            path: path.display().to_string(),
        }),
    }
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>, DataError> {
    match read_idx_file(path)? {
        IdxTensor::Labels(labels) => Ok(labels),
        IdxTensor::Images(_) => Err(DataError::WrongKind {
            expected: "label",
            path: path.display().to_string(),
        }),
    }
}

/// Locations of the four MNIST files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub val_images: PathBuf,
    pub val_labels: PathBuf,
}

impl MnistFiles {
    /// Standard file names inside `dir`, preferring raw files over `.gz`.
    pub fn in_dir(dir: &Path) -> Self {
        let pick = |stem: &str| {
            let raw = dir.join(stem);
            let gz = dir.join(format!("{stem}.gz"));
            if !raw.exists() && gz.exists() {
                gz
            } else {
                raw
            }
        };
        Self {
            train_images: pick("train-images-idx3-ubyte"),
            train_labels: pick("train-labels-idx1-ubyte"),
            val_images: pick("t10k-images-idx3-ubyte"),
            val_labels: pick("t10k-labels-idx1-ubyte"),
        }
    }

    pub fn all(&self) -> [&Path; 4] {
        [
            &self.train_images,
            &self.train_labels,
            &self.val_images,
            &self.val_labels,
        ]
    }

    /// First listed file that does not exist.
    pub fn first_missing(&self) -> Option<&Path> {
        self.all().into_iter().find(|p| !p.is_file())
    }

    pub fn load(
        &self,
        split: Split,
        include_empty: bool,
        empty_count: usize,
        seed: u64,
    ) -> Result<Dataset, DataError> {
        let (images, labels) = match split {
            Split::Train => (&self.train_images, &self.train_labels),
            Split::Validation => (&self.val_images, &self.val_labels),
        };
        build_dataset(
            &read_images(images)?,
            &read_labels(labels)?,
            include_empty,
            empty_count,
            split,
            seed,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

/// Borrowed view of one example.
#[derive(Debug, Clone, Copy)]
pub struct LabeledExample<'a> {
    pub image: &'a [f32],
    pub label: u8,
}

/// Labeled examples in a fixed (shuffled) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pixels: Vec<f32>,
    labels: Vec<u8>,
    num_classes: usize,
    split: Split,
}

impl Dataset {
    /// Builds a dataset from raw parts, checking label range and pixel layout.
    pub fn from_parts(
        pixels: Vec<f32>,
        labels: Vec<u8>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self, DataError> {
        if pixels.len() != labels.len() * IMAGE_PIXELS {
            return Err(DataError::CountMismatch {
                images: pixels.len() / IMAGE_PIXELS,
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| usize::from(l) >= num_classes) {
            return Err(DataError::LabelOutOfRange { label, num_classes });
        }
        Ok(Self {
            pixels,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn image(&self, index: usize) -> &[f32] {
        &self.pixels[index * IMAGE_PIXELS..(index + 1) * IMAGE_PIXELS]
    }

    pub fn label(&self, index: usize) -> u8 {
        self.labels[index]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn example(&self, index: usize) -> LabeledExample<'_> {
        LabeledExample {
            image: self.image(index),
            label: self.labels[index],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = LabeledExample<'_>> + '_ {
        (0..self.len()).map(move |i| self.example(i))
    }

    /// Keeps the first `n` examples (or all, if fewer).
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            pixels: self.pixels[..n * IMAGE_PIXELS].to_vec(),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }
}

/// Combines digit images and labels, optionally appending `empty_count` black
/// images labeled [`EMPTY_CLASS`], then shuffles with `seed`.
pub fn build_dataset(
    images: &ImageSet,
    labels: &[u8],
    include_empty: bool,
    empty_count: usize,
    split: Split,
    seed: u64,
) -> Result<Dataset, DataError> {
    if images.count != labels.len() {
        return Err(DataError::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    if images.rows != IMAGE_SIDE || images.cols != IMAGE_SIDE {
        return Err(DataError::BadDimension {
            rows: images.rows,
            cols: images.cols,
        });
    }
    let extra = if include_empty { empty_count } else { 0 };
    let total = labels.len() + extra;

    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut pixels = vec![0.0f32; total * IMAGE_PIXELS];
    let mut out_labels = vec![EMPTY_CLASS; total];
    for (dst, &src) in order.iter().enumerate() {
        // sources past the digit range are the black no-signal images
        if src < labels.len() {
            pixels[dst * IMAGE_PIXELS..(dst + 1) * IMAGE_PIXELS].copy_from_slice(images.image(src));
            out_labels[dst] = labels[src];
        }
    }
    let num_classes = if include_empty { 11 } else { 10 };
    Dataset::from_parts(pixels, out_labels, num_classes, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn image_header(count: u32) -> Vec<u8> {
        let mut h = vec![0, 0, 8, 3];
        h.extend_from_slice(&count.to_be_bytes());
        h.extend_from_slice(&28u32.to_be_bytes());
        h.extend_from_slice(&28u32.to_be_bytes());
        h
    }

    #[test]
    fn full_intensity_image_normalizes_to_one() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 28, 0, 0, 0, 28];
        bytes.extend(std::iter::repeat_n(255u8, 784));
        match parse_idx(&bytes).unwrap() {
            IdxTensor::Images(set) => {
                assert_eq!(set.count, 1);
                assert!(set.pixels.iter().all(|&p| p == 1.0));
            }
            other => panic!("expected images, got {other:?}"),
        }
    }

    #[test]
    fn magic_2050_is_rejected() {
        let bytes = [0, 0, 8, 2, 0, 0, 0, 0];
        assert!(matches!(
            parse_idx(&bytes),
            Err(DataError::UnknownMagic(2050))
        ));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut bytes = image_header(2);
        bytes.extend(std::iter::repeat_n(0u8, 784 + 10));
        assert!(matches!(
            parse_idx(&bytes),
            Err(DataError::TruncatedPayload { .. })
        ));
        assert!(matches!(
            parse_idx(&[0, 0, 8]),
            Err(DataError::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn non_28_images_are_rejected() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 27, 0, 0, 0, 28];
        bytes.extend(std::iter::repeat_n(0u8, 27 * 28));
        assert!(matches!(
            parse_idx(&bytes),
            Err(DataError::BadDimension { rows: 27, cols: 28 })
        ));
    }

    #[test]
    fn labels_parse_and_gzip_is_detected() {
        use flate2::write::GzEncoder;
        use std::io::Write;

        let raw = encode_labels(&[3, 1, 4, 1, 5]);
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&raw).unwrap();
        let gz = enc.finish().unwrap();
        assert_eq!(&gz[..2], &[0x1F, 0x8B]);
        assert_eq!(parse_idx(&gz).unwrap(), parse_idx(&raw).unwrap());
        assert_eq!(
            parse_idx(&raw).unwrap(),
            IdxTensor::Labels(vec![3, 1, 4, 1, 5])
        );
    }

    #[test]
    fn label_above_nine_is_rejected() {
        let raw = encode_labels(&[3, 10]);
        assert!(matches!(
            parse_idx(&raw),
            Err(DataError::LabelOutOfRange { label: 10, .. })
        ));
    }

    fn synthetic(count: usize) -> (ImageSet, Vec<u8>) {
        let mut pixels: Vec<f32> = (0..count * IMAGE_PIXELS)
            .map(|i| ((i * 7 + 3) % 256) as f32 / 255.0)
            .collect();
        // first pixel tags the image so every image is distinct
        for k in 0..count {
            pixels[k * IMAGE_PIXELS] = k as f32 / 255.0;
        }
        let labels = (0..count).map(|i| (i % 10) as u8).collect();
        (
            ImageSet {
                count,
                rows: 28,
                cols: 28,
                pixels,
            },
            labels,
        )
    }

    #[test]
    fn empty_class_is_appended_as_black_images() {
        let (images, labels) = synthetic(60);
        let ds = build_dataset(&images, &labels, true, 6, Split::Train, 1).unwrap();
        assert_eq!(ds.len(), 66);
        assert_eq!(ds.num_classes(), 11);
        let empties: Vec<_> = ds.iter().filter(|e| e.label == EMPTY_CLASS).collect();
        assert_eq!(empties.len(), 6);
        assert!(empties.iter().all(|e| e.image.iter().all(|&p| p == 0.0)));
    }

    #[test]
    fn without_empty_class_there_are_ten_classes() {
        let (images, labels) = synthetic(60);
        let ds = build_dataset(&images, &labels, false, 6, Split::Train, 1).unwrap();
        assert_eq!(ds.len(), 60);
        assert_eq!(ds.num_classes(), 10);
        assert!(ds.labels().iter().all(|&l| l < 10));
    }

    #[test]
    fn zero_empty_count_still_has_eleven_classes() {
        let (images, labels) = synthetic(20);
        let ds = build_dataset(&images, &labels, true, 0, Split::Validation, 1).unwrap();
        assert_eq!(ds.num_classes(), 11);
        assert!(!ds.labels().contains(&EMPTY_CLASS));
        assert_eq!(ds.split(), Split::Validation);
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let (images, labels) = synthetic(20);
        assert!(matches!(
            build_dataset(&images, &labels[..19], true, 2, Split::Train, 1),
            Err(DataError::CountMismatch {
                images: 20,
                labels: 19
            })
        ));
    }

    #[test]
    fn shuffle_is_seed_deterministic() {
        let (images, labels) = synthetic(50);
        let a = build_dataset(&images, &labels, true, 5, Split::Train, 9).unwrap();
        let b = build_dataset(&images, &labels, true, 5, Split::Train, 9).unwrap();
        let c = build_dataset(&images, &labels, true, 5, Split::Train, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.labels(), c.labels());
        // shuffling keeps each image with its label
        for e in a.iter().filter(|e| e.label != EMPTY_CLASS) {
            let src = (0..50).find(|&i| images.image(i) == e.image).unwrap();
            assert_eq!(labels[src], e.label);
        }
    }

    proptest! {
        #[test]
        fn idx_round_trip_is_bit_exact(
            bytes in proptest::collection::vec(any::<u8>(), IMAGE_PIXELS * 3),
            labels in proptest::collection::vec(0u8..10, 0..40),
        ) {
            let set = ImageSet {
                count: 3,
                rows: 28,
                cols: 28,
                pixels: bytes.iter().map(|&b| f32::from(b) / 255.0).collect(),
            };
            let encoded = encode_images(&set);
            prop_assert_eq!(&encoded[16..], &bytes[..]);
            prop_assert_eq!(parse_idx(&encoded).unwrap(), IdxTensor::Images(set));
            prop_assert_eq!(parse_idx(&encode_labels(&labels)).unwrap(), IdxTensor::Labels(labels));
        }
    }
}
