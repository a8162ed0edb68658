//! Manifests, PPM decoding, batching, and synthetic data.

pub mod batch;
pub mod manifest;
pub mod ppm;
pub mod synth;

pub use batch::{make_batches, shuffled_batches, Batches, Dataset};
pub use manifest::{load_manifest, Manifest, MANIFEST_HEADER};
pub use ppm::{decode_ppm, encode_ppm, load_image_ppm, save_image_ppm, Normalization};
pub use synth::{generate_synthetic, synth_pixels};
