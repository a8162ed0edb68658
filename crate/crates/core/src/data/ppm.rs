//! Binary PPM (P6, maxval 255) decoding into normalized CHW tensors.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel standardization applied after scaling bytes to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self { mean: [0.5; 3], std: [0.5; 3] }
    }
}

impl Normalization {
    pub fn apply(&self, byte: u8, channel: usize) -> f64 {
        (byte as f64 / 255.0 - self.mean[channel]) / self.std[channel]
    }

    /// Inverse of [`apply`](Self::apply) back to the `[0, 1]` scale.
    pub fn unapply(&self, v: f64, channel: usize) -> f64 {
        v * self.std[channel] + self.mean[channel]
    }
}

pub struct PpmImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub pixels: Vec<u8>,
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize, path: &Path) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::PpmHeader { path: path.to_path_buf(), reason: "unexpected end of header".into() });
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, path: &Path, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos, path)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|&v: &usize| v > 0)
        .ok_or_else(|| Error::PpmHeader { path: path.to_path_buf(), reason: format!("invalid {what}") })
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<PpmImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::PpmMagic(path.to_path_buf()));
    }
    let mut pos = 2;
    let width = header_number(bytes, &mut pos, path, "width")?;
    let height = header_number(bytes, &mut pos, path, "height")?;
    let maxval = header_number(bytes, &mut pos, path, "maxval")?;
    if maxval != 255 {
        return Err(Error::PpmHeader { path: path.to_path_buf(), reason: format!("maxval {maxval}, expected 255") });
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(Error::PpmTruncated(path.to_path_buf()));
    }
    Ok(PpmImage { width, height, pixels: bytes[pos..pos + need].to_vec() })
}

pub fn encode_ppm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height * 3, "encode_ppm: pixel buffer size");
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// HWC bytes to a normalized `[3, H, W]` tensor.
pub fn image_to_tensor(img: &PpmImage, norm: &Normalization) -> Tensor {
    let (h, w) = (img.height, img.width);
    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data[(c * h + y) * w + x] = norm.apply(img.pixels[(y * w + x) * 3 + c], c);
            }
        }
    }
    Tensor::new(&[3, h, w], data).expect("image tensor shape")
}

/// Normalized `[3, H, W]` tensor back to HWC bytes (rounded, saturating).
pub fn tensor_to_pixels(t: &Tensor, norm: &Normalization) -> Result<(usize, usize, Vec<u8>)> {
    let (c, h, w) = match *t.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::mismatch(format!("image tensor must be [3, H, W], got {:?}", t.shape()))),
    };
    if c != 3 {
        return Err(Error::mismatch(format!("image tensor has {c} channels")));
    }
    let mut px = vec![0u8; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = norm.unapply(t.data()[(ch * h + y) * w + x], ch) * 255.0;
                px[(y * w + x) * 3 + ch] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok((w, h, px))
}

/// Loads a square P6 image of side `expected_hw` as a normalized tensor.
pub fn load_image_ppm(path: &Path, expected_hw: usize, norm: &Normalization) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let img = decode_ppm(&bytes, path)?;
    if img.width != expected_hw || img.height != expected_hw {
        return Err(Error::PpmDimensions {
            path: path.to_path_buf(),
            expected: expected_hw,
            width: img.width,
            height: img.height,
        });
    }
    Ok(image_to_tensor(&img, norm))
}

pub fn save_image_ppm(path: &Path, t: &Tensor, norm: &Normalization) -> Result<()> {
    let (w, h, px) = tensor_to_pixels(t, norm)?;
    fs::write(path, encode_ppm(w, h, &px))?;
    Ok(())
}
