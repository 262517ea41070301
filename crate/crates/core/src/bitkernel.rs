//! Bit-packed XNOR/popcount kernels.
//!
//! A `{0, 1}` bit stands for the sign value `2b - 1`, so for two packed
//! vectors of length `n` the `±1` dot product is `2 * popcount(XNOR) - n`.
//!
//! Layout: bit `i` lives in word `i / 64` at position `i % 64` (LSB first).
//! Bits at positions `>= n` in the last word are kept at zero, and every
//! kernel masks them again before counting.

use rayon::prelude::*;
use thiserror::Error;

const WORD_BITS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KernelError {
    #[error("cannot pack an empty bit sequence")]
    Empty,
    #[error("entry {index} is {value}, expected a bit")]
    NotABit { index: usize, value: u8 },
    #[error("entry {index} is not a sign value (+1 or -1)")]
    NotASign { index: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad geometry: {0}")]
    BadGeometry(String),
}

fn words_for(n: usize) -> usize {
    n.div_ceil(WORD_BITS)
}

/// Mask selecting the live bits of the last word of an `n`-bit vector.
fn tail_mask(n: usize) -> u64 {
    match n % WORD_BITS {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

/// Number of positions where the two word slices agree, over `n` bits.
fn agreements(a: &[u64], b: &[u64], n: usize) -> u32 {
    let last = a.len() - 1;
    let mut count = 0;
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        let mut same = !(x ^ y);
        if i == last {
            same &= tail_mask(n);
        }
        count += same.count_ones();
    }
    count
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitVector {
    n: usize,
    words: Vec<u64>,
}

impl BitVector {
    /// Packs a `{0, 1}` sequence.
    pub fn pack(bits: &[u8]) -> Result<Self, KernelError> {
        if bits.is_empty() {
            return Err(KernelError::Empty);
        }
        let mut words = vec![0u64; words_for(bits.len())];
        for (i, &b) in bits.iter().enumerate() {
            match b {
                0 => {}
                1 => words[i / WORD_BITS] |= 1 << (i % WORD_BITS),
                value => return Err(KernelError::NotABit { index: i, value }),
            }
        }
        Ok(Self { n: bits.len(), words })
    }

    /// Packs a `±1` sequence (`+1 -> 1`, `-1 -> 0`).
    pub fn from_signs(signs: &[f64]) -> Result<Self, KernelError> {
        let bits = signs_to_bits(signs)?;
        Self::pack(&bits)
    }

    pub fn unpack(&self) -> Vec<u8> {
        (0..self.n).map(|i| self.get(i) as u8).collect()
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.n, "bit index {i} out of range for length {}", self.n);
        self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn count_ones(&self) -> u32 {
        let last = self.words.len() - 1;
        self.words
            .iter()
            .enumerate()
            .map(|(i, &w)| if i == last { w & tail_mask(self.n) } else { w }.count_ones())
            .sum()
    }

    /// Overwrites the pad bits with `garbage`. Only for testing that kernels
    /// ignore pad contents.
    #[doc(hidden)]
    pub fn corrupt_padding(&mut self, garbage: u64) {
        let mask = tail_mask(self.n);
        if let Some(last) = self.words.last_mut() {
            *last = (*last & mask) | (garbage & !mask);
        }
    }
}

fn signs_to_bits(signs: &[f64]) -> Result<Vec<u8>, KernelError> {
    signs
        .iter()
        .enumerate()
        .map(|(index, &s)| {
            if s == 1.0 {
                Ok(1)
            } else if s == -1.0 {
                Ok(0)
            } else {
                Err(KernelError::NotASign { index })
            }
        })
        .collect()
}

/// Row-major packed bit matrix; each row padded to whole words on its own.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedMatrix {
    rows: usize,
    cols: usize,
    row_words: usize,
    data: Vec<u64>,
}

impl PackedMatrix {
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self, KernelError> {
        let first = rows.first().ok_or(KernelError::Empty)?.as_ref().len();
        if first == 0 {
            return Err(KernelError::Empty);
        }
        let row_words = words_for(first);
        let mut data = Vec::with_capacity(rows.len() * row_words);
        for r in rows {
            let r = r.as_ref();
            if r.len() != first {
                return Err(KernelError::LengthMismatch { left: first, right: r.len() });
            }
            data.extend_from_slice(&BitVector::pack(r)?.words);
        }
        Ok(Self { rows: rows.len(), cols: first, row_words, data })
    }

    /// Packs a row-major `rows x cols` matrix of `±1` values.
    pub fn from_signs(signs: &[f64], rows: usize, cols: usize) -> Result<Self, KernelError> {
        if rows == 0 || cols == 0 {
            return Err(KernelError::Empty);
        }
        if signs.len() != rows * cols {
            return Err(KernelError::LengthMismatch { left: rows * cols, right: signs.len() });
        }
        let bits = signs_to_bits(signs)?;
        let rows: Vec<&[u8]> = bits.chunks(cols).collect();
        Self::from_rows(&rows)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row_words(&self, r: usize) -> &[u64] {
        &self.data[r * self.row_words..(r + 1) * self.row_words]
    }

    pub fn row(&self, r: usize) -> BitVector {
        BitVector { n: self.cols, words: self.row_words(r).to_vec() }
    }

    #[doc(hidden)]
    pub fn corrupt_padding(&mut self, garbage: u64) {
        let mask = tail_mask(self.cols);
        for r in 0..self.rows {
            let last = &mut self.data[(r + 1) * self.row_words - 1];
            *last = (*last & mask) | (garbage & !mask);
        }
    }
}

/// Result of a binary product: exact integer sums and their `beta` scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledOutput {
    /// `±1` dot products before scaling.
    pub raw: Vec<i64>,
    /// `beta[channel] * raw`.
    pub values: Vec<f64>,
    /// Per-output-channel scale.
    pub betas: Vec<f64>,
}

/// Count of positions where `a` and `b` agree.
pub fn xnor_popcount(a: &BitVector, b: &BitVector) -> Result<u32, KernelError> {
    if a.n != b.n {
        return Err(KernelError::LengthMismatch { left: a.n, right: b.n });
    }
    Ok(agreements(&a.words, &b.words, a.n))
}

/// `±1` dot product `2 * xnor_popcount(a, b) - n`.
pub fn binary_dot(a: &BitVector, b: &BitVector) -> Result<i64, KernelError> {
    let same = xnor_popcount(a, b)? as i64;
    Ok(2 * same - a.n as i64)
}

/// `out[j] = betas[j] * (2 * popcount(XNOR(W[j], x)) - n)`.
///
/// Rows are processed in parallel; results do not depend on the worker count
/// since each row is an independent integer reduction.
pub fn binary_matvec(w: &PackedMatrix, x: &BitVector, betas: &[f64]) -> Result<ScaledOutput, KernelError> {
    if w.cols != x.n {
        return Err(KernelError::ShapeMismatch(format!("matrix has {} columns, vector has {} bits", w.cols, x.n)));
    }
    if betas.len() != w.rows {
        return Err(KernelError::ShapeMismatch(format!("{} betas for {} rows", betas.len(), w.rows)));
    }
    let n = x.n as i64;
    let raw: Vec<i64> = (0..w.rows)
        .into_par_iter()
        .map(|r| 2 * agreements(w.row_words(r), &x.words, x.n) as i64 - n)
        .collect();
    let values = raw.iter().zip(betas).map(|(&v, &b)| b * v as f64).collect();
    Ok(ScaledOutput { raw, values, betas: betas.to_vec() })
}

/// Geometry of a 2D convolution over a `channels x height x width` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn validate(&self) -> Result<(), KernelError> {
        let bad = |m: &str| Err(KernelError::BadGeometry(m.to_string()));
        if self.in_channels == 0 || self.height == 0 || self.width == 0 {
            return bad("input dimensions must be positive");
        }
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return bad("kernel dimensions must be positive");
        }
        if self.stride == 0 {
            return bad("stride must be positive");
        }
        if self.kernel_h > self.height + 2 * self.padding || self.kernel_w > self.width + 2 * self.padding {
            return bad("kernel larger than padded input");
        }
        Ok(())
    }

    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    /// Bits per filter, `in_channels * kernel_h * kernel_w`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }
}

/// Packs the receptive field of output pixel `(oy, ox)` in `(c, ky, kx)`
/// order. Padding positions become bit 0, i.e. `-1`.
fn pack_patch(act_bits: &[u8], g: &ConvGeometry, oy: usize, ox: usize, words: &mut [u64]) {
    words.fill(0);
    let mut i = 0;
    for c in 0..g.in_channels {
        for ky in 0..g.kernel_h {
            let y = (oy * g.stride + ky) as isize - g.padding as isize;
            for kx in 0..g.kernel_w {
                let x = (ox * g.stride + kx) as isize - g.padding as isize;
                if y >= 0 && x >= 0 && (y as usize) < g.height && (x as usize) < g.width {
                    let a = act_bits[(c * g.height + y as usize) * g.width + x as usize];
                    words[i / WORD_BITS] |= (a as u64) << (i % WORD_BITS);
                }
                i += 1;
            }
        }
    }
}

/// Binary convolution through patch packing and XNOR/popcount.
///
/// `weights` holds one row per output filter, laid out `(c, ky, kx)`;
/// `activations` is a `±1` tensor in `(c, y, x)` order. Zero padding is
/// realized as bit 0, which is `-1` under sign semantics. The output is
/// `(filter, oy, ox)` row-major, scaled by `betas[filter]`.
pub fn binary_conv2d(
    weights: &PackedMatrix,
    activations: &[f64],
    betas: &[f64],
    geometry: &ConvGeometry,
) -> Result<ScaledOutput, KernelError> {
    geometry.validate()?;
    let g = *geometry;
    if weights.cols != g.patch_len() {
        return Err(KernelError::ShapeMismatch(format!(
            "filters have {} bits, geometry needs {}",
            weights.cols,
            g.patch_len()
        )));
    }
    let expected = g.in_channels * g.height * g.width;
    if activations.len() != expected {
        return Err(KernelError::ShapeMismatch(format!(
            "{} activations for a {}x{}x{} input",
            activations.len(),
            g.in_channels,
            g.height,
            g.width
        )));
    }
    if betas.len() != weights.rows {
        return Err(KernelError::ShapeMismatch(format!("{} betas for {} filters", betas.len(), weights.rows)));
    }
    let act_bits = signs_to_bits(activations)?;
    let (oh, ow) = (g.out_height(), g.out_width());
    let pixels = oh * ow;
    let wpr = words_for(g.patch_len());
    let mut patches = vec![0u64; pixels * wpr];
    for (p, chunk) in patches.chunks_mut(wpr).enumerate() {
        pack_patch(&act_bits, &g, p / ow, p % ow, chunk);
    }
    let n = g.patch_len() as i64;
    let raw: Vec<i64> = (0..weights.rows)
        .into_par_iter()
        .flat_map_iter(|f| {
            let filter = weights.row_words(f);
            patches
                .chunks(wpr)
                .map(move |patch| 2 * agreements(filter, patch, g.patch_len()) as i64 - n)
                .collect::<Vec<_>>()
        })
        .collect();
    let values = raw
        .iter()
        .enumerate()
        .map(|(i, &v)| betas[i / pixels] * v as f64)
        .collect();
    Ok(ScaledOutput { raw, values, betas: betas.to_vec() })
}
