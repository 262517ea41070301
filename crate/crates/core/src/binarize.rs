//! Magnitude-based weight binarization.
//!
//! Weights are encoded into `{0, 1}` codes by *magnitude rank* instead of by
//! sign. The optimal code maximizes the cosine between the code and `|w|`;
//! it always consists of the `k` largest magnitudes for some `k`, so a single
//! sort plus a prefix-sum scan finds it. The half-half code fixes
//! `k = ceil(n / 2)` and only needs a selection.
//!
//! Ordering convention used everywhere in this module: larger magnitude
//! first, and on equal magnitudes the lower index first.

use std::cmp::Ordering;
use std::ops::Deref;

use thiserror::Error;

/// Largest length accepted by [`brute_force_binarize`].
pub const BRUTE_FORCE_MAX_LEN: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BinarizeError {
    #[error("weight vector is empty")]
    Empty,
    #[error("weight {index} is not finite")]
    NonFinite { index: usize },
    #[error("every weight is zero; the objective is undefined")]
    AllZero,
    #[error("brute force is limited to n <= {BRUTE_FORCE_MAX_LEN}, got {n}")]
    TooLarge { n: usize },
    #[error("binary code has no ones")]
    EmptyCode,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("direction vector has zero norm")]
    ZeroDirection,
    #[error("invalid arguments: {0}")]
    InvalidArgs(String),
    #[error("k = {k} out of range for n = {n}")]
    OutOfRange { k: usize, n: usize },
}

/// A real-valued filter weight vector. Non-empty, all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Result<Self, BinarizeError> {
        if values.is_empty() {
            return Err(BinarizeError::Empty);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(BinarizeError::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self, BinarizeError> {
        Self::new(values.to_vec())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn is_all_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

impl Deref for WeightVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A `{0, 1}` code together with its number of ones.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryCode {
    bits: Vec<u8>,
    ones: usize,
}

impl BinaryCode {
    /// Builds a code from raw bits; every entry must be 0 or 1.
    pub fn from_bits(bits: Vec<u8>) -> Result<Self, BinarizeError> {
        if let Some(i) = bits.iter().position(|&b| b > 1) {
            return Err(BinarizeError::InvalidArgs(format!(
                "bit {i} is {}, expected 0 or 1",
                bits[i]
            )));
        }
        let ones = bits.iter().filter(|&&b| b == 1).count();
        Ok(Self { bits, ones })
    }

    /// Code with ones exactly at `positions`.
    fn with_ones(n: usize, positions: impl IntoIterator<Item = usize>) -> Self {
        let mut bits = vec![0u8; n];
        let mut ones = 0;
        for p in positions {
            if bits[p] == 0 {
                bits[p] = 1;
                ones += 1;
            }
        }
        Self { bits, ones }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn ones(&self) -> usize {
        self.ones
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Maps `{0, 1}` to `{-1, +1}` via `2b - 1`.
    pub fn to_signs(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b == 1 { 1.0 } else { -1.0 }).collect()
    }

    pub fn plus_fraction(&self) -> f64 {
        self.ones as f64 / self.bits.len() as f64
    }
}

impl std::fmt::Display for BinaryCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &b in &self.bits {
            f.write_str(if b == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Sign code with a scalar scale, the classical `lambda * sign(w)` baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct SignCode {
    pub bits: Vec<i8>,
    pub scale: f64,
}

impl SignCode {
    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }
}

fn magnitude_order(w: &[f64], a: usize, b: usize) -> Ordering {
    w[b].abs().total_cmp(&w[a].abs()).then(a.cmp(&b))
}

/// Indices of `w` sorted by descending magnitude, ties by ascending index.
pub fn magnitude_rank(w: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..w.len()).collect();
    idx.sort_unstable_by(|&a, &b| magnitude_order(w, a, b));
    idx
}

/// Scans `L_k = S_k / sqrt(k)` over the sorted magnitudes and returns the
/// smallest maximizing `k` together with the sorted index order.
fn best_prefix(w: &[f64]) -> (usize, Vec<usize>) {
    let order = magnitude_rank(w);
    let mut prefix = 0.0;
    let mut best_k = 1;
    let mut best = f64::NEG_INFINITY;
    for (i, &j) in order.iter().enumerate() {
        prefix += w[j].abs();
        let k = i + 1;
        let score = prefix / (k as f64).sqrt();
        if score > best {
            best = score;
            best_k = k;
        }
    }
    (best_k, order)
}

/// Globally optimal `{0, 1}` code for the angle-alignment objective.
///
/// Sorts `|w|` once and picks the prefix length maximizing
/// `sum_{i<=k} |w|_(i) / sqrt(k)`; exact ties resolve to the smallest `k`.
pub fn optimal_binarize(w: &WeightVector) -> Result<BinaryCode, BinarizeError> {
    if w.is_all_zero() {
        return Err(BinarizeError::AllZero);
    }
    let (k, order) = best_prefix(w);
    Ok(BinaryCode::with_ones(w.len(), order[..k].iter().copied()))
}

/// Ones at the `ceil(n/2)` largest magnitudes, found by selection.
///
/// Never fails: an all-zero vector resolves purely by index, giving ones in
/// the first half.
pub fn half_half_binarize(w: &WeightVector) -> BinaryCode {
    let n = w.len();
    let k = n.div_ceil(2);
    let mut idx: Vec<usize> = (0..n).collect();
    if k < n {
        idx.select_nth_unstable_by(k - 1, |&a, &b| magnitude_order(w, a, b));
    }
    BinaryCode::with_ones(n, idx[..k].iter().copied())
}

/// Exhaustive search over all `2^n - 1` nonzero codes. Test oracle.
pub fn brute_force_binarize(w: &WeightVector) -> Result<BinaryCode, BinarizeError> {
    let n = w.len();
    if n > BRUTE_FORCE_MAX_LEN {
        return Err(BinarizeError::TooLarge { n });
    }
    if w.is_all_zero() {
        return Err(BinarizeError::AllZero);
    }
    let mags: Vec<f64> = w.iter().map(|v| v.abs()).collect();
    let mut best_mask = 0u32;
    let mut best_score = f64::NEG_INFINITY;
    let mut best_ones = usize::MAX;
    for mask in 1u32..(1u32 << n) {
        let ones = mask.count_ones() as usize;
        let sum: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| mags[i]).sum();
        let score = sum / (ones as f64).sqrt();
        if score > best_score || (score == best_score && ones < best_ones) {
            best_score = score;
            best_ones = ones;
            best_mask = mask;
        }
    }
    Ok(BinaryCode::with_ones(n, (0..n).filter(|i| best_mask >> i & 1 == 1)))
}

/// Cosine between `code` and `|w|`, in `[0, 1]`.
pub fn objective_value(w: &WeightVector, code: &BinaryCode) -> Result<f64, BinarizeError> {
    if code.len() != w.len() {
        return Err(BinarizeError::LengthMismatch { left: w.len(), right: code.len() });
    }
    if code.ones() == 0 {
        return Err(BinarizeError::EmptyCode);
    }
    let norm = w.norm();
    if norm == 0.0 {
        return Err(BinarizeError::AllZero);
    }
    let dot: f64 = w.iter().zip(code.bits()).filter(|(_, &b)| b == 1).map(|(v, _)| v.abs()).sum();
    Ok((dot / ((code.ones() as f64).sqrt() * norm)).min(1.0))
}

/// `sign(w)` with `sign(0) = +1`, scaled by `mean(|w|)`.
pub fn sign_binarize_scaled(w: &WeightVector) -> SignCode {
    let bits = w.iter().map(|&v| if v >= 0.0 { 1 } else { -1 }).collect();
    let scale = w.iter().map(|v| v.abs()).sum::<f64>() / w.len() as f64;
    SignCode { bits, scale }
}

/// `min_lambda ||lambda * v - w||^2 = ||w||^2 sin^2(theta)`.
pub fn quantization_error(w: &[f64], v: &[f64]) -> Result<f64, BinarizeError> {
    if w.len() != v.len() {
        return Err(BinarizeError::LengthMismatch { left: w.len(), right: v.len() });
    }
    let vv: f64 = v.iter().map(|x| x * x).sum();
    if vv == 0.0 {
        return Err(BinarizeError::ZeroDirection);
    }
    let ww: f64 = w.iter().map(|x| x * x).sum();
    let wv: f64 = w.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((ww - wv * wv / vv).max(0.0))
}

/// Cosine similarity of two equal-length vectors; zero if either is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Angle range, in degrees, between a code with `k` ones and any code that
/// differs from it in `r` bits.
pub fn angle_bounds(k: usize, r: usize) -> Result<(f64, f64), BinarizeError> {
    if k == 0 {
        return Err(BinarizeError::InvalidArgs("k must be positive".into()));
    }
    if r > k {
        return Err(BinarizeError::InvalidArgs(format!("r = {r} exceeds k = {k}")));
    }
    let (k, r) = (k as f64, r as f64);
    let lo = (k / (k + r)).sqrt().min(1.0).acos().to_degrees();
    let hi = ((k - r) / k).sqrt().min(1.0).acos().to_degrees();
    Ok((lo, hi))
}

/// `L_k (sqrt(k+1) - sqrt(k)) - m_{k+1}` where `m_i` is the i-th largest
/// magnitude and `L_k = (m_1 + .. + m_k) / sqrt(k)`.
///
/// Positive exactly when extending the code from `k` to `k + 1` ones lowers
/// the objective.
pub fn inequality_margin(w: &WeightVector, k: usize) -> Result<f64, BinarizeError> {
    let n = w.len();
    if k == 0 || k >= n {
        return Err(BinarizeError::OutOfRange { k, n });
    }
    let order = magnitude_rank(w);
    let prefix: f64 = order[..k].iter().map(|&i| w[i].abs()).sum();
    let lk = prefix / (k as f64).sqrt();
    let next = w[order[k]].abs();
    Ok(lk * ((k as f64 + 1.0).sqrt() - (k as f64).sqrt()) - next)
}

/// `L_k` for the optimal prefix length, reported by the analysis tooling.
pub fn optimal_prefix_score(w: &WeightVector) -> Result<f64, BinarizeError> {
    if w.is_all_zero() {
        return Err(BinarizeError::AllZero);
    }
    let (k, order) = best_prefix(w);
    let sum: f64 = order[..k].iter().map(|&i| w[i].abs()).sum();
    Ok(sum / (k as f64).sqrt())
}
