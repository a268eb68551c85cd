//! Fixtures shared by the benchmarks.

use stochres_core::rng::seeded;
use stochres_core::{build_dataset, Dataset, Dims, ImageSet, LstmParams, Split};

/// Sparse digit-like images: a bright 12x12 block at a position that varies
/// with the index, everything else black.
pub fn synthetic_images(count: usize) -> (ImageSet, Vec<u8>) {
    let mut pixels = vec![0.0f32; count * 784];
    for i in 0..count {
        let (r0, c0) = (4 + i % 8, 4 + (i / 8) % 8);
        for r in r0..r0 + 12 {
            for c in c0..c0 + 12 {
                pixels[i * 784 + r * 28 + c] = ((r + c + i) % 7) as f32 / 6.0;
            }
        }
    }
    let labels = (0..count).map(|i| (i % 10) as u8).collect();
    let set = ImageSet {
        count,
        rows: 28,
        cols: 28,
        pixels,
    };
    (set, labels)
}

pub fn synthetic_valset(count: usize, empties: usize) -> Dataset {
    let (images, labels) = synthetic_images(count);
    build_dataset(&images, &labels, empties > 0, empties, Split::Validation, 3)
        .expect("valid fixture")
}

pub fn mnist_model(classes: usize) -> LstmParams<f32> {
    LstmParams::init(Dims::mnist(classes), &mut seeded(11))
}
