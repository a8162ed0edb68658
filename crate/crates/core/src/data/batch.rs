use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::manifest::Manifest;
use crate::data::ppm::{load_image_ppm, Normalization};
use crate::error::{Error, Result};
use crate::tensor::{rng_for, Rng, Tensor};

/// Splits a seeded permutation of `0..n` into consecutive batches. The final
/// partial batch is kept unless `drop_last`.
pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut Rng, drop_last: bool) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size)
        .filter(|c| !drop_last || c.len() == batch_size)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Lazily decoded batches over a manifest, in seeded order.
pub struct Batches<'a> {
    manifest: &'a Manifest,
    plan: std::vec::IntoIter<Vec<usize>>,
    hw: usize,
    norm: Normalization,
}

impl Iterator for Batches<'_> {
    type Item = Result<(Tensor, Vec<u8>)>;

    fn next(&mut self) -> Option<Self::Item> {
        let idx = self.plan.next()?;
        Some(load_records(self.manifest, &idx, self.hw, &self.norm).map(|ds| {
            let labels = ds.labels.clone();
            (ds.into_images(), labels)
        }))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.plan.size_hint()
    }
}

pub fn make_batches<'a>(
    manifest: &'a Manifest,
    batch_size: usize,
    seed: u64,
    drop_last: bool,
    hw: usize,
    norm: Normalization,
) -> Result<Batches<'a>> {
    if batch_size == 0 {
        return Err(Error::InvalidInput("batch_size must be >= 1".into()));
    }
    let plan = shuffled_batches(manifest.len(), batch_size, &mut rng_for(seed, 7), drop_last);
    Ok(Batches { manifest, plan: plan.into_iter(), hw, norm })
}

fn load_records(manifest: &Manifest, idx: &[usize], hw: usize, norm: &Normalization) -> Result<Dataset> {
    // decode in parallel; collect preserves order
    let images: Vec<Tensor> = idx
        .par_iter()
        .map(|&i| load_image_ppm(&manifest.resolve(&manifest.entries[i].0), hw, norm))
        .collect::<Result<_>>()?;
    let labels = idx.iter().map(|&i| manifest.entries[i].1).collect();
    let mut data = Vec::with_capacity(idx.len() * 3 * hw * hw);
    for t in images {
        data.extend_from_slice(t.data());
    }
    Dataset::new(vec![3, hw, hw], data, labels)
}

/// Samples held in memory as one contiguous buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sample_shape: Vec<usize>,
    data: Vec<f64>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(sample_shape: Vec<usize>, data: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        if per == 0 || data.len() != per * labels.len() {
            return Err(Error::mismatch(format!(
                "dataset: {} values for {} samples of shape {sample_shape:?}",
                data.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidLabel(bad as f64));
        }
        Ok(Self { sample_shape, data, labels })
    }

    /// `images` is `[N, ...]`.
    pub fn from_tensor(images: &Tensor, labels: Vec<u8>) -> Result<Self> {
        let shape = images.shape();
        if shape.is_empty() || shape[0] != labels.len() {
            return Err(Error::mismatch(format!("dataset: images {shape:?} vs {} labels", labels.len())));
        }
        Self::new(shape[1..].to_vec(), images.data().to_vec(), labels)
    }

    /// Decodes every manifest entry as a `[3, hw, hw]` image.
    pub fn from_manifest(manifest: &Manifest, hw: usize, norm: &Normalization) -> Result<Self> {
        let idx: Vec<usize> = (0..manifest.len()).collect();
        load_records(manifest, &idx, hw, norm)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    fn batch_shape(&self, n: usize) -> Vec<usize> {
        let mut s = vec![n];
        s.extend_from_slice(&self.sample_shape);
        s
    }

    fn into_images(self) -> Tensor {
        let shape = self.batch_shape(self.len());
        Tensor::new(&shape, self.data).expect("dataset buffer size")
    }

    /// Gathers samples `idx` into an input batch and a `[n, 1]` label column.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Tensor) {
        let per: usize = self.sample_shape.iter().product();
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        let x = Tensor::new(&self.batch_shape(idx.len()), data).expect("batch shape");
        let y = Tensor::new(&[idx.len(), 1], idx.iter().map(|&i| self.labels[i] as f64).collect())
            .expect("label shape");
        (x, y)
    }

    /// Consecutive unshuffled batches covering every sample once.
    pub fn sequential_batches(&self, batch_size: usize) -> Vec<Vec<usize>> {
        (0..self.len()).collect::<Vec<_>>().chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }
}
