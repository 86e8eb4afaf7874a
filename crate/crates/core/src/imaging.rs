//! Byte-to-image conversion and the bilinear resize feeding the classifier.
//!
//! A file of `n` bytes becomes a square grayscale image of side
//! `ceil(sqrt(n))`, filled row-major with `byte / 255` and zero-padded.
//! [`resize`] maps it to the model's fixed input side with corner-aligned
//! bilinear interpolation. Resize is linear in the pixels, so
//! [`resize_transpose`] is its exact adjoint and carries input gradients
//! back to byte positions.

use std::io::Write;

use crate::bytes::{ByteSequence, Provenance};
use crate::error::{Error, Result};

/// Default model input side.
pub const DEFAULT_SIDE: usize = 64;

/// Square B2IMG image plus the byte count it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pixels: Vec<f64>,
    side: usize,
    source_len: usize,
}

impl GrayImage {
    /// Build from raw pixels; checks the sizing and padding invariants.
    pub fn from_parts(pixels: Vec<f64>, side: usize, source_len: usize) -> Result<Self> {
        if pixels.len() != side * side {
            return Err(Error::Shape(format!(
                "{} pixels for side {side}",
                pixels.len()
            )));
        }
        if source_len == 0 || side != image_side(source_len) {
            return Err(Error::Shape(format!(
                "side {side} does not fit source length {source_len}"
            )));
        }
        if pixels[source_len..].iter().any(|&p| p != 0.0) {
            return Err(Error::Shape("non-zero padding pixel".into()));
        }
        Ok(Self {
            pixels,
            side,
            source_len,
        })
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }
}

/// Fixed-side image as consumed by the classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ResizedImage {
    pixels: Vec<f64>,
    side: usize,
}

impl ResizedImage {
    pub fn from_pixels(pixels: Vec<f64>, side: usize) -> Result<Self> {
        if pixels.len() != side * side {
            return Err(Error::Shape(format!(
                "{} pixels for side {side}",
                pixels.len()
            )));
        }
        Ok(Self { pixels, side })
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn side(&self) -> usize {
        self.side
    }
}

/// Side of the square image holding `n` bytes: `ceil(sqrt(n))`.
pub fn image_side(n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let mut s = (n as f64).sqrt() as usize;
    // float sqrt can be off by one for large n
    while s * s < n {
        s += 1;
    }
    while s > 1 && (s - 1) * (s - 1) >= n {
        s -= 1;
    }
    s
}

pub fn bytes_to_image(x: &[u8]) -> Result<GrayImage> {
    if x.is_empty() {
        return Err(Error::Precondition(
            "cannot image an empty byte sequence".into(),
        ));
    }
    let side = image_side(x.len());
    let mut pixels = vec![0.0; side * side];
    for (p, &b) in pixels.iter_mut().zip(x) {
        *p = f64::from(b) / 255.0;
    }
    Ok(GrayImage {
        pixels,
        side,
        source_len: x.len(),
    })
}

/// Round a `[0, 1]` intensity to the nearest byte, ties upward.
pub fn intensity_to_byte(p: f64) -> u8 {
    // the small bias keeps exact halves such as 0.5·255 from rounding down
    // after representation error
    (p.clamp(0.0, 1.0) * 255.0 + 0.5 + 1e-9).floor().min(255.0) as u8
}

pub fn image_to_bytes(img: &GrayImage) -> ByteSequence {
    let data = img.pixels[..img.source_len]
        .iter()
        .map(|&p| intensity_to_byte(p))
        .collect();
    ByteSequence::new(data, Provenance::Original)
}

/// One output coordinate's two source taps along an axis.
#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    w_hi: f64,
}

fn axis_taps(src: usize, dst: usize) -> Vec<Tap> {
    (0..dst)
        .map(|o| {
            let pos = if dst == 1 {
                (src - 1) as f64 / 2.0
            } else {
                (o * (src - 1)) as f64 / (dst - 1) as f64
            };
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            Tap {
                lo,
                hi,
                w_hi: pos - lo as f64,
            }
        })
        .collect()
}

fn check_sides(side: usize, target: usize) -> Result<()> {
    if target == 0 || side == 0 {
        return Err(Error::Shape(format!(
            "resize between sides {side} and {target}"
        )));
    }
    Ok(())
}

fn resize_raw(pixels: &[f64], side: usize, target: usize) -> Vec<f64> {
    if side == target {
        return pixels.to_vec();
    }
    let taps = axis_taps(side, target);
    let mut out = vec![0.0; target * target];
    for (oy, ty) in taps.iter().enumerate() {
        let r0 = &pixels[ty.lo * side..(ty.lo + 1) * side];
        let r1 = &pixels[ty.hi * side..(ty.hi + 1) * side];
        let wy1 = ty.w_hi;
        let wy0 = 1.0 - wy1;
        let row = &mut out[oy * target..(oy + 1) * target];
        for (o, tx) in row.iter_mut().zip(&taps) {
            let wx1 = tx.w_hi;
            let wx0 = 1.0 - wx1;
            *o = wy0 * (wx0 * r0[tx.lo] + wx1 * r0[tx.hi]) + wy1 * (wx0 * r1[tx.lo] + wx1 * r1[tx.hi]);
        }
    }
    out
}

fn resize_transpose_raw(grad: &[f64], target: usize, side: usize) -> Vec<f64> {
    if side == target {
        return grad.to_vec();
    }
    let taps = axis_taps(side, target);
    let mut out = vec![0.0; side * side];
    for (oy, ty) in taps.iter().enumerate() {
        let wy1 = ty.w_hi;
        let wy0 = 1.0 - wy1;
        for (ox, tx) in taps.iter().enumerate() {
            let g = grad[oy * target + ox];
            let wx1 = tx.w_hi;
            let wx0 = 1.0 - wx1;
            out[ty.lo * side + tx.lo] += g * wy0 * wx0;
            out[ty.lo * side + tx.hi] += g * wy0 * wx1;
            out[ty.hi * side + tx.lo] += g * wy1 * wx0;
            out[ty.hi * side + tx.hi] += g * wy1 * wx1;
        }
    }
    out
}

/// Corner-aligned bilinear resize to `target × target`.
pub fn resize(img: &GrayImage, target: usize) -> Result<ResizedImage> {
    check_sides(img.side, target)?;
    Ok(ResizedImage {
        pixels: resize_raw(&img.pixels, img.side, target),
        side: target,
    })
}

/// Adjoint of [`resize`]: maps an `S × S` gradient onto a `side × side` grid.
pub fn resize_transpose(grad: &[f64], target: usize, side: usize) -> Result<Vec<f64>> {
    check_sides(side, target)?;
    if grad.len() != target * target {
        return Err(Error::Shape(format!(
            "gradient has {} entries, expected {target}×{target}",
            grad.len()
        )));
    }
    Ok(resize_transpose_raw(grad, target, side))
}

/// Full imaging path used by every model input: bytes → B2IMG → resize.
///
/// An empty sequence (possible after preprocessing) images as a single
/// zero pixel.
pub fn bytes_to_input(x: &[u8], target: usize) -> Result<ResizedImage> {
    if x.is_empty() {
        let zero = GrayImage {
            pixels: vec![0.0],
            side: 1,
            source_len: 1,
        };
        return resize(&zero, target);
    }
    resize(&bytes_to_image(x)?, target)
}

/// Write pixels as a binary PGM (P5, maxval 255).
pub fn write_pgm<W: Write>(mut w: W, pixels: &[f64], side: usize) -> std::io::Result<()> {
    write!(w, "P5\n{side} {side}\n255\n")?;
    let raw: Vec<u8> = pixels.iter().map(|&p| intensity_to_byte(p)).collect();
    w.write_all(&raw)
}
