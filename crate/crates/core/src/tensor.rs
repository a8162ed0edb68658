//! Dense row-major `f64` tensors in NCHW layout and the linear-algebra
//! primitives the layers are built on.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Seedable generator used everywhere randomness is needed.
pub type Rng = ChaCha8Rng;

/// Identifier of [`Rng`]'s algorithm, recorded in checkpoints.
pub const RNG_ALGORITHM: &str = "chacha8";

/// Generator for `seed` on an independent `stream`.
pub fn rng_for(seed: u64, stream: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitKind {
    Zeros,
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
    /// Normal with mean 0 and variance `2 / fan_in`.
    KaimingNormal { fan_in: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitSpec {
    pub kind: InitKind,
    pub seed: u64,
}

impl InitSpec {
    pub fn zeros() -> Self {
        Self { kind: InitKind::Zeros, seed: 0 }
    }

    pub fn constant(v: f64) -> Self {
        Self { kind: InitKind::Constant(v), seed: 0 }
    }

    pub fn uniform(lo: f64, hi: f64, seed: u64) -> Self {
        Self { kind: InitKind::Uniform { lo, hi }, seed }
    }

    pub fn kaiming_normal(fan_in: usize, seed: u64) -> Self {
        Self { kind: InitKind::KaimingNormal { fan_in }, seed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "shape must have at least one dimension".into(),
        });
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "every dimension must be at least 1".into(),
        });
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("{} elements supplied", data.len()),
            });
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    /// Builds a tensor from a shape and init spec. Equal seeds give bitwise
    /// equal tensors.
    pub fn create(shape: &[usize], init: &InitSpec) -> Result<Self> {
        let n = check_shape(shape)?;
        let data = match init.kind {
            InitKind::Zeros => vec![0.0; n],
            InitKind::Constant(v) => vec![v; n],
            InitKind::Uniform { lo, hi } => {
                if !(lo < hi) {
                    return Err(Error::InvalidSpec(format!("uniform bounds {lo} >= {hi}")));
                }
                let mut rng = rng_for(init.seed, 0);
                (0..n).map(|_| rng.random_range(lo..hi)).collect()
            }
            InitKind::KaimingNormal { fan_in } => {
                if fan_in == 0 {
                    return Err(Error::InvalidSpec("kaiming fan_in must be positive".into()));
                }
                let std = (2.0 / fan_in as f64).sqrt();
                let mut rng = rng_for(init.seed, 0);
                (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * std
                    })
                    .collect()
            }
        };
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::create(shape, &InitSpec::zeros()).expect("zeros: invalid shape")
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::create(shape, &InitSpec::constant(v)).expect("full: invalid shape")
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn zeros_like(&self) -> Self {
        Self { shape: self.shape.clone(), data: vec![0.0; self.data.len()] }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(N, C, H, W)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::mismatch(format!(
                "expected a rank-4 NCHW tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [r, c] => Ok((r, c)),
            _ => Err(Error::mismatch(format!(
                "expected a rank-2 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::mismatch(format!(
                "add: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::mismatch(format!(
                "cannot reshape {:?} ({} elements) into {:?} ({} elements)",
                self.shape,
                self.data.len(),
                shape,
                n
            )));
        }
        Ok(Self { shape: shape.to_vec(), data: self.data.clone() })
    }

    /// Consuming reshape, avoids the copy.
    pub fn into_shape(mut self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::mismatch(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::mismatch(format!(
                "{axes:?} is not a permutation of {rank} axes"
            )));
        }
        let in_strides = strides(&self.shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let mut out = vec![0.0; self.data.len()];
        let mut idx = vec![0usize; rank];
        for slot in out.iter_mut() {
            let src: usize = idx.iter().zip(axes).map(|(&i, &a)| i * in_strides[a]).sum();
            *slot = self.data[src];
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Self { shape: out_shape, data: out })
    }

    pub fn transpose(&self) -> Result<Self> {
        self.dims2()?;
        self.permute(&[1, 0])
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

/// Flat index of `(n, c, h, w)` in an `[N, C, H, W]` tensor.
#[inline]
pub fn flat_index(dims: (usize, usize, usize, usize), n: usize, c: usize, h: usize, w: usize) -> usize {
    let (_, cc, hh, ww) = dims;
    ((n * cc + c) * hh + h) * ww + w
}

/// Inverse of [`flat_index`].
#[inline]
pub fn unflatten_index(dims: (usize, usize, usize, usize), mut i: usize) -> (usize, usize, usize, usize) {
    let (_, cc, hh, ww) = dims;
    let w = i % ww;
    i /= ww;
    let h = i % hh;
    i /= hh;
    let c = i % cc;
    (i / cc, c, h, w)
}

/// `c = op(a) · op(b)` (or `c += ...` when `accumulate`), where `op` is an
/// optional transpose. `a` is stored `[m, k]` (or `[k, m]` when transposed),
/// `b` is `[k, n]` (or `[n, k]`), `c` is `[m, n]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover exactly the m×k, k×n and m×n index ranges
    // addressed by the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Matrix product of `[M, K]` and `[K, N]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::mismatch(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, &mut out, false);
    Tensor::new(&[m, n], out)
}

/// Per-channel mean and population variance over the N, H and W axes.
pub fn channel_moments(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    let count = (n * plane) as f64;
    let data = x.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            let off = (b * c + ch) * plane;
            s += data[off..off + plane].iter().sum::<f64>();
        }
        let mu = s / count;
        let mut ss = 0.0;
        for b in 0..n {
            let off = (b * c + ch) * plane;
            ss += data[off..off + plane].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = ss / count;
    }
    Ok((Tensor::new(&[c], mean)?, Tensor::new(&[c], var)?))
}
