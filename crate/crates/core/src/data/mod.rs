//! Datasets: PPM image folders described by a manifest, the synthetic
//! fine-grained generator, and deterministic batching.

mod manifest;
mod ppm;
mod synth;

pub use manifest::{load_dataset, read_classes, read_manifest, write_dataset, Manifest};
pub use ppm::{decode_ppm, encode_ppm, load_ppm, quantize, save_ppm};
pub use synth::{synth_finegrained, SynthSpec, Synthetic, MIN_SYNTH_SIZE};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: usize,
    pub id: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub classes: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}

/// Sample indices grouped into batches. The order depends only on
/// `(seed, epoch)`; the last batch may be short.
pub fn batches(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
