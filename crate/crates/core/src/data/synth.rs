//! Two-class synthetic textures: class 0 is smooth low-frequency blobs,
//! class 1 a checkerboard. Both are mean-centred per channel at 128 and get
//! the same Gaussian noise, so intensity alone does not separate them.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::data::manifest::Manifest;
use crate::data::ppm::encode_ppm;
use crate::error::{Error, Result};
use crate::tensor::{rng_for, Rng};

const NOISE_SIGMA: f64 = 16.0;
const CHECKER_PERIODS: [usize; 3] = [4, 6, 8];

fn center_channels(field: &mut [f64], hw: usize) {
    for c in 0..3 {
        let plane = &mut field[c * hw * hw..(c + 1) * hw * hw];
        let mean = plane.iter().sum::<f64>() / plane.len() as f64;
        plane.iter_mut().for_each(|v| *v -= mean);
    }
}

fn blobs(hw: usize, rng: &mut Rng) -> Vec<f64> {
    let mut field = vec![0.0; 3 * hw * hw];
    let k = rng.random_range(3..=6);
    let side = hw as f64;
    for _ in 0..k {
        let (cx, cy) = (rng.random_range(0.0..side), rng.random_range(0.0..side));
        let sigma = rng.random_range(side / 8.0..side / 4.0);
        // random sign keeps the per-pixel expectation flat
        let amp = rng.random_range(30.0..60.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let gains: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.6..1.0));
        for y in 0..hw {
            for x in 0..hw {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let v = amp * (-d2 / (2.0 * sigma * sigma)).exp();
                for (c, g) in gains.iter().enumerate() {
                    field[(c * hw + y) * hw + x] += g * v;
                }
            }
        }
    }
    center_channels(&mut field, hw);
    field
}

fn checker(hw: usize, rng: &mut Rng) -> Vec<f64> {
    let period = CHECKER_PERIODS[rng.random_range(0..CHECKER_PERIODS.len())];
    let half = period / 2;
    let (px, py) = (rng.random_range(0..period), rng.random_range(0..period));
    let amp = rng.random_range(30.0..60.0);
    let gains: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.6..1.0));
    let mut field = vec![0.0; 3 * hw * hw];
    for y in 0..hw {
        for x in 0..hw {
            let sx = ((x + px) / half) % 2;
            let sy = ((y + py) / half) % 2;
            let v = if sx == sy { amp } else { -amp };
            for (c, g) in gains.iter().enumerate() {
                field[(c * hw + y) * hw + x] = g * v;
            }
        }
    }
    center_channels(&mut field, hw);
    field
}

/// Interleaved RGB bytes of one synthetic image.
pub fn synth_pixels(label: u8, hw: usize, rng: &mut Rng) -> Vec<u8> {
    let field = if label == 0 { blobs(hw, rng) } else { checker(hw, rng) };
    let mut px = vec![0u8; hw * hw * 3];
    for y in 0..hw {
        for x in 0..hw {
            for c in 0..3 {
                let noise: f64 = StandardNormal.sample(rng);
                let v = 128.0 + field[(c * hw + y) * hw + x] + NOISE_SIGMA * noise;
                px[(y * hw + x) * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    px
}

/// Writes `2 * n_per_class` P6 images plus `manifest.csv` into `out_dir`.
pub fn generate_synthetic(n_per_class: usize, hw: usize, seed: u64, out_dir: &Path) -> Result<Manifest> {
    if n_per_class == 0 {
        return Err(Error::InvalidInput("n_per_class must be >= 1".into()));
    }
    if hw < 16 {
        return Err(Error::InvalidInput(format!("hw must be >= 16, got {hw}")));
    }
    fs::create_dir_all(out_dir)?;
    let mut entries = Vec::with_capacity(2 * n_per_class);
    for label in 0..2u8 {
        let prefix = if label == 0 { "msi" } else { "mss" };
        for i in 0..n_per_class {
            let stream = (label as usize * n_per_class + i) as u64;
            let px = synth_pixels(label, hw, &mut rng_for(seed, stream));
            let name = format!("{prefix}_{i:05}.ppm");
            fs::write(out_dir.join(&name), encode_ppm(hw, hw, &px))?;
            entries.push((name, label));
        }
    }
    let manifest = Manifest::new(out_dir, entries)?;
    manifest.write(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
