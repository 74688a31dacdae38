//! Sign binarization, the straight-through gradient rule and 1-bit packing.
//!
//! A [`BinaryTensor`] keeps real-valued latents; everything downstream only
//! ever sees `sign(latent)`. Gradients flow back through the sign as if it were
//! the identity, but only while the latent sits inside `[-1, 1]`.

use rand::Rng;

use crate::error::{Error, FormatError, Result};

/// Latents start in `(-LATENT_INIT_SCALE, LATENT_INIT_SCALE)`.
pub const LATENT_INIT_SCALE: f32 = 1e-4;

/// `+1` for `latent >= 0`, `-1` otherwise.
#[inline(always)]
pub fn sign(latent: f32) -> f32 {
    if latent >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Gradient mask of the straight-through estimator (inclusive at |θ| = 1).
#[inline(always)]
pub fn ste_mask(latent: f32) -> bool {
    latent.abs() <= 1.0
}

pub fn sign_forward(latent: &[f32]) -> Result<Vec<f32>> {
    latent
        .iter()
        .enumerate()
        .map(|(index, &v)| {
            if v.is_nan() {
                Err(Error::NanLatent { index })
            } else {
                Ok(sign(v))
            }
        })
        .collect()
}

pub fn ste_backward(upstream: &[f32], latent: &[f32]) -> Result<Vec<f32>> {
    if upstream.len() != latent.len() {
        return Err(Error::Dimension {
            what: "ste_backward",
            expected: latent.len(),
            found: upstream.len(),
        });
    }
    Ok(upstream
        .iter()
        .zip(latent)
        .map(|(&g, &t)| if ste_mask(t) { g } else { 0.0 })
        .collect())
}

/// Real-valued latent parameters whose forward view is their sign.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryTensor {
    pub latent: Vec<f32>,
    pub grads: Vec<f64>,
    pub shape: Vec<usize>,
}

impl BinaryTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            latent: vec![0.0; n],
            grads: vec![0.0; n],
            shape: shape.to_vec(),
        }
    }

    pub fn random<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.latent {
            *v = rng.random_range(-LATENT_INIT_SCALE..LATENT_INIT_SCALE);
        }
        t
    }

    /// Rebuild from stored signs: the latent of each entry is its sign.
    pub fn from_signs(shape: &[usize], signs: Vec<f32>) -> Self {
        let n = signs.len();
        Self {
            latent: signs,
            grads: vec![0.0; n],
            shape: shape.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.latent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latent.is_empty()
    }

    #[inline(always)]
    pub fn binary(&self, i: usize) -> f32 {
        sign(self.latent[i])
    }

    pub fn signs(&self) -> Vec<f32> {
        self.latent.iter().map(|&v| sign(v)).collect()
    }

    /// Accumulate `upstream` (gradient w.r.t. the binary value) into the latent
    /// gradient through the STE mask.
    #[inline(always)]
    pub fn accumulate(&mut self, i: usize, upstream: f64) {
        if ste_mask(self.latent[i]) {
            self.grads[i] += upstream;
        }
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn pack(&self) -> PackedBits {
        let mut bytes = vec![0u8; self.latent.len().div_ceil(8)];
        for (i, &v) in self.latent.iter().enumerate() {
            if v >= 0.0 {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        PackedBits {
            bit_count: self.latent.len(),
            bytes,
        }
    }
}

/// ±1 values at one bit each: `+1 -> 1`, `-1 -> 0`, LSB first, zero padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedBits {
    pub bit_count: usize,
    pub bytes: Vec<u8>,
}

impl PackedBits {
    pub fn new(bit_count: usize, bytes: Vec<u8>) -> Result<Self, FormatError> {
        let expected = bit_count.div_ceil(8);
        if bytes.len() != expected {
            return Err(FormatError::PackedLength {
                bits: bit_count,
                expected,
                found: bytes.len(),
            });
        }
        Ok(Self { bit_count, bytes })
    }

    pub fn zeros(bit_count: usize) -> Self {
        Self {
            bit_count,
            bytes: vec![0; bit_count.div_ceil(8)],
        }
    }

    #[inline(always)]
    pub fn get(&self, i: usize) -> bool {
        self.bytes[i >> 3] >> (i & 7) & 1 == 1
    }

    #[inline(always)]
    pub fn set(&mut self, i: usize, on: bool) {
        if on {
            self.bytes[i >> 3] |= 1 << (i & 7);
        } else {
            self.bytes[i >> 3] &= !(1 << (i & 7));
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }
}

pub fn pack_bits(signs: &[f32]) -> Result<PackedBits> {
    let mut packed = PackedBits::zeros(signs.len());
    for (index, &value) in signs.iter().enumerate() {
        if value == 1.0 {
            packed.set(index, true);
        } else if value != -1.0 {
            return Err(Error::NotASign { index, value });
        }
    }
    Ok(packed)
}

pub fn unpack_bits(packed: &PackedBits) -> Result<Vec<f32>> {
    let expected = packed.bit_count.div_ceil(8);
    if packed.bytes.len() != expected {
        return Err(FormatError::PackedLength {
            bits: packed.bit_count,
            expected,
            found: packed.bytes.len(),
        }
        .into());
    }
    Ok((0..packed.bit_count)
        .map(|i| if packed.get(i) { 1.0 } else { -1.0 })
        .collect())
}
