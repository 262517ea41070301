//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use siman_core::data::Sample;

/// Central-difference step and tolerance for gradient checks.
pub const FD_STEP: f64 = 1e-3;
pub const FD_TOL: f64 = 1e-4;

pub fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xs[i];
            xs[i] = orig + FD_STEP;
            let up = f(&xs);
            xs[i] = orig - FD_STEP;
            let down = f(&xs);
            xs[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, or the absolute difference when both
/// vectors vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Exhaustive search over every nonempty `{0,1}` code for the best
/// `cos(|w|, b)`.
pub fn exhaustive_best(w: &[f64]) -> f64 {
    let abs: Vec<f64> = w.iter().map(|v| v.abs()).collect();
    let norm = abs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut best = f64::NEG_INFINITY;
    for mask in 1u32..(1 << w.len()) {
        let (mut dot, mut k) = (0.0, 0);
        for (i, a) in abs.iter().enumerate() {
            if mask >> i & 1 == 1 {
                dot += a;
                k += 1;
            }
        }
        best = best.max(dot / ((k as f64).sqrt() * norm));
    }
    best
}

pub fn pm(b: u8) -> i64 {
    2 * b as i64 - 1
}

pub fn float_dot(a: &[u8], b: &[u8]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (pm(x) * pm(y)) as f64).sum()
}

/// Direct float convolution of `{0,1}`-coded filters over a `±1` input,
/// with `-1` padding. Output layout `(filter, oy, ox)`.
#[allow(clippy::too_many_arguments)]
pub fn float_conv(
    w: &[Vec<u8>],
    act: &[f64],
    (c, h, wd): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (wd + 2 * padding - kw) / stride + 1;
    let mut out = Vec::with_capacity(w.len() * oh * ow);
    for f in w {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0.0;
                for ch in 0..c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let y = (oy * stride + ky) as isize - padding as isize;
                            let x = (ox * stride + kx) as isize - padding as isize;
                            let a = if y < 0 || x < 0 || y as usize >= h || x as usize >= wd {
                                -1.0
                            } else {
                                act[(ch * h + y as usize) * wd + x as usize]
                            };
                            s += pm(f[(ch * kh + ky) * kw + kx]) as f64 * a;
                        }
                    }
                }
                out.push(s);
            }
        }
    }
    out
}

/// Softmax regression trained by full-batch gradient descent: the float
/// reference model for the synthetic task. Returns test accuracy.
pub fn logistic_reference(train_set: &[Sample], test_set: &[Sample], classes: usize) -> f64 {
    let d = train_set[0].pixels.len();
    let logits = |w: &[f64], b: &[f64], x: &[f64]| -> Vec<f64> {
        (0..classes).map(|k| b[k] + w[k * d..(k + 1) * d].iter().zip(x).map(|(p, q)| p * q).sum::<f64>()).collect()
    };
    let mut w = vec![0.0; classes * d];
    let mut b = vec![0.0; classes];
    for _ in 0..200 {
        let mut gw = vec![0.0; classes * d];
        let mut gb = vec![0.0; classes];
        for s in train_set {
            let z = logits(&w, &b, &s.pixels);
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let sum: f64 = e.iter().sum();
            for k in 0..classes {
                let g = e[k] / sum - if k == s.label { 1.0 } else { 0.0 };
                gb[k] += g;
                for (gw, x) in gw[k * d..(k + 1) * d].iter_mut().zip(&s.pixels) {
                    *gw += g * x;
                }
            }
        }
        let n = train_set.len() as f64;
        w.iter_mut().zip(&gw).for_each(|(w, g)| *w -= 0.1 * g / n);
        b.iter_mut().zip(&gb).for_each(|(b, g)| *b -= 0.1 * g / n);
    }
    let correct = test_set
        .iter()
        .filter(|s| {
            let z = logits(&w, &b, &s.pixels);
            let best = (0..classes).fold(0, |i, k| if z[k] > z[i] { k } else { i });
            best == s.label
        })
        .count();
    correct as f64 / test_set.len() as f64
}

/// Splits class-grouped samples into the first `train_per_class` of each
/// class and the rest.
pub fn split_per_class(all: Vec<Sample>, per_class: usize, train_per_class: usize) -> (Vec<Sample>, Vec<Sample>) {
    let (mut tr, mut te) = (vec![], vec![]);
    for chunk in all.chunks(per_class) {
        tr.extend_from_slice(&chunk[..train_per_class]);
        te.extend_from_slice(&chunk[train_per_class..]);
    }
    (tr, te)
}
