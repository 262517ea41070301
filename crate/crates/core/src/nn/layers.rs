//! Forward/backward primitives over NCHW batches.

use super::tensor::{gemm, Tensor};
use super::NnError;

pub const BN_EPS: f64 = 1e-5;

/// `+1` where `x >= 0`, `-1` otherwise.
pub fn sign_activation(x: &Tensor) -> Tensor {
    x.map(|v| if v >= 0.0 { 1.0 } else { -1.0 })
}

/// Piecewise-polynomial surrogate derivative of `sign`:
/// `2 + 2x` on `[-1, 0)`, `2 - 2x` on `[0, 1)`, zero elsewhere.
pub fn sign_surrogate_grad(x: f64) -> f64 {
    if (-1.0..0.0).contains(&x) {
        2.0 + 2.0 * x
    } else if (0.0..1.0).contains(&x) {
        2.0 - 2.0 * x
    } else {
        0.0
    }
}

pub fn activation_grad_mask(x: &Tensor) -> Tensor {
    x.map(sign_surrogate_grad)
}

/// Straight-through weight gradient: the gradient with respect to the
/// binarized proxy is passed to the real-valued weights unchanged.
pub fn ste_weight_grad(upstream: &Tensor, weight_shape: &[usize]) -> Result<Tensor, NnError> {
    if upstream.shape() != weight_shape {
        return Err(NnError::ShapeMismatch(format!(
            "gradient shape {:?} does not match weights {:?}",
            upstream.shape(),
            weight_shape
        )));
    }
    Ok(upstream.clone())
}

fn dims4(x: &Tensor) -> Result<[usize; 4], NnError> {
    match *x.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        ref s => Err(NnError::ShapeMismatch(format!("expected NCHW tensor, got {s:?}"))),
    }
}

/// Cached state of a convolution forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    input_shape: [usize; 4],
    kernel: (usize, usize),
    stride: usize,
    padding: usize,
    out_hw: (usize, usize),
    /// One `patch_len x (oh * ow)` matrix per image, concatenated.
    cols: Vec<f64>,
}

/// Unfolds one image into a `(c, ky, kx) x (oy, ox)` matrix; out-of-range
/// taps take `pad_value`.
#[allow(clippy::too_many_arguments)]
fn im2col(img: &[f64], c: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize, pad_value: f64, out: &mut [f64]) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let p = oh * ow;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let dst = &mut out[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let y = (oy * stride + ky) as isize - pad as isize;
                    for ox in 0..ow {
                        let x = (ox * stride + kx) as isize - pad as isize;
                        dst[oy * ow + ox] = if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                            img[(ci * h + y as usize) * w + x as usize]
                        } else {
                            pad_value
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize, img: &mut [f64]) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let p = oh * ow;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let y = (oy * stride + ky) as isize - pad as isize;
                    if y < 0 || y as usize >= h {
                        continue;
                    }
                    for ox in 0..ow {
                        let x = (ox * stride + kx) as isize - pad as isize;
                        if x >= 0 && (x as usize) < w {
                            img[(ci * h + y as usize) * w + x as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2D convolution of an NCHW batch with `[out, in, kh, kw]` weights.
/// Padded taps read `pad_value`.
pub fn conv2d_forward(
    x: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
    pad_value: f64,
) -> Result<(Tensor, ConvCache), NnError> {
    let [n, c, h, w] = dims4(x)?;
    let [o, wc, kh, kw] = dims4(weight)?;
    if wc != c {
        return Err(NnError::ShapeMismatch(format!("weights expect {wc} input channels, got {c}")));
    }
    if stride == 0 || kh > h + 2 * padding || kw > w + 2 * padding {
        return Err(NnError::ShapeMismatch("convolution geometry does not fit the input".into()));
    }
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let (k, p) = (c * kh * kw, oh * ow);
    let mut cols = vec![0.0; n * k * p];
    let mut out = vec![0.0; n * o * p];
    for b in 0..n {
        let img = &x.data()[b * c * h * w..(b + 1) * c * h * w];
        let col = &mut cols[b * k * p..(b + 1) * k * p];
        im2col(img, c, h, w, kh, kw, stride, padding, pad_value, col);
        gemm(o, k, p, weight.data(), false, col, false, &mut out[b * o * p..(b + 1) * o * p], false);
    }
    let cache = ConvCache {
        input_shape: [n, c, h, w],
        kernel: (kh, kw),
        stride,
        padding,
        out_hw: (oh, ow),
        cols,
    };
    Ok((Tensor::new(vec![n, o, oh, ow], out)?, cache))
}

/// Returns `(grad_input, grad_weight)`.
pub fn conv2d_backward(grad_out: &Tensor, weight: &Tensor, cache: &ConvCache) -> Result<(Tensor, Tensor), NnError> {
    let [n, c, h, w] = cache.input_shape;
    let (kh, kw) = cache.kernel;
    let o = weight.dim(0);
    let (k, p) = (c * kh * kw, cache.out_hw.0 * cache.out_hw.1);
    if grad_out.shape() != [n, o, cache.out_hw.0, cache.out_hw.1] {
        return Err(NnError::ShapeMismatch(format!("unexpected gradient shape {:?}", grad_out.shape())));
    }
    let mut grad_w = vec![0.0; o * k];
    let mut grad_x = vec![0.0; n * c * h * w];
    let mut dcols = vec![0.0; k * p];
    for b in 0..n {
        let g = &grad_out.data()[b * o * p..(b + 1) * o * p];
        let col = &cache.cols[b * k * p..(b + 1) * k * p];
        gemm(o, p, k, g, false, col, true, &mut grad_w, true);
        gemm(k, o, p, weight.data(), true, g, false, &mut dcols, false);
        col2im(&dcols, c, h, w, kh, kw, cache.stride, cache.padding, &mut grad_x[b * c * h * w..(b + 1) * c * h * w]);
    }
    Ok((Tensor::new(vec![n, c, h, w], grad_x)?, Tensor::new(weight.shape().to_vec(), grad_w)?))
}

/// Cached state of a training-mode batch-norm pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: [usize; 4],
}

/// Training-mode batch norm over `(N, H, W)` per channel. Updates the running
/// statistics with `momentum` (unbiased variance, as is conventional).
pub fn batchnorm_forward_train(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &mut [f64],
    running_var: &mut [f64],
    momentum: f64,
) -> Result<(Tensor, BnCache), NnError> {
    let [n, c, h, w] = dims4(x)?;
    if gamma.len() != c || beta.len() != c || running_mean.len() != c || running_var.len() != c {
        return Err(NnError::ShapeMismatch(format!("batch norm over {c} channels got mismatched parameters")));
    }
    let hw = h * w;
    let m = (n * hw) as f64;
    let data = x.data();
    let mut out = vec![0.0; data.len()];
    let mut xhat = vec![0.0; data.len()];
    let mut inv_std = vec![0.0; c];
    for ch in 0..c {
        let mut sum = 0.0;
        for b in 0..n {
            sum += data[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().sum::<f64>();
        }
        let mean = sum / m;
        let mut sq = 0.0;
        for b in 0..n {
            sq += data[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        }
        let var = sq / m;
        let is = 1.0 / (var + BN_EPS).sqrt();
        inv_std[ch] = is;
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                let xh = (data[i] - mean) * is;
                xhat[i] = xh;
                out[i] = gamma[ch] * xh + beta[ch];
            }
        }
        let unbiased = if m > 1.0 { sq / (m - 1.0) } else { var };
        running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * mean;
        running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * unbiased;
    }
    Ok((Tensor::new(x.shape().to_vec(), out)?, BnCache { xhat, inv_std, shape: [n, c, h, w] }))
}

pub fn batchnorm_forward_eval(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> Result<Tensor, NnError> {
    let [n, c, h, w] = dims4(x)?;
    if gamma.len() != c || beta.len() != c || running_mean.len() != c || running_var.len() != c {
        return Err(NnError::ShapeMismatch(format!("batch norm over {c} channels got mismatched parameters")));
    }
    let hw = h * w;
    let mut out = x.data().to_vec();
    for b in 0..n {
        for ch in 0..c {
            let scale = gamma[ch] / (running_var[ch] + BN_EPS).sqrt();
            let shift = beta[ch] - running_mean[ch] * scale;
            for v in &mut out[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                *v = *v * scale + shift;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batchnorm_backward(grad_out: &Tensor, gamma: &[f64], cache: &BnCache) -> Result<(Tensor, Vec<f64>, Vec<f64>), NnError> {
    let [n, c, h, w] = cache.shape;
    if grad_out.shape() != cache.shape {
        return Err(NnError::ShapeMismatch(format!("unexpected gradient shape {:?}", grad_out.shape())));
    }
    let hw = h * w;
    let m = (n * hw) as f64;
    let g = grad_out.data();
    let mut dx = vec![0.0; g.len()];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ch in 0..c {
        let (mut sum_g, mut sum_gx) = (0.0, 0.0);
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                sum_g += g[i];
                sum_gx += g[i] * cache.xhat[i];
            }
        }
        dgamma[ch] = sum_gx;
        dbeta[ch] = sum_g;
        let k = gamma[ch] * cache.inv_std[ch];
        let (mean_g, mean_gx) = (sum_g / m, sum_gx / m);
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                dx[i] = k * (g[i] - mean_g - cache.xhat[i] * mean_gx);
            }
        }
    }
    Ok((Tensor::new(grad_out.shape().to_vec(), dx)?, dgamma, dbeta))
}

/// Mean over spatial positions: `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor, NnError> {
    let [n, c, h, w] = dims4(x)?;
    let hw = h * w;
    let out = x.data().chunks(hw).map(|s| s.iter().sum::<f64>() / hw as f64).collect();
    Tensor::new(vec![n, c], out)
}

pub fn global_avg_pool_backward(grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor, NnError> {
    let hw: usize = input_shape[2..].iter().product();
    let data = grad_out.data().iter().flat_map(|&g| std::iter::repeat_n(g / hw as f64, hw)).collect();
    Tensor::new(input_shape.to_vec(), data)
}

/// `y = x W^T + b` with `W: [out, in]`.
pub fn linear_forward(x: &Tensor, weight: &Tensor, bias: &[f64]) -> Result<Tensor, NnError> {
    let (n, d) = (x.dim(0), x.len() / x.dim(0));
    let (o, wd) = (weight.dim(0), weight.dim(1));
    if d != wd || bias.len() != o {
        return Err(NnError::ShapeMismatch(format!("linear layer {o}x{wd} applied to {d} features")));
    }
    let mut out = vec![0.0; n * o];
    for row in out.chunks_mut(o) {
        row.copy_from_slice(bias);
    }
    gemm(n, d, o, x.data(), false, weight.data(), true, &mut out, true);
    Tensor::new(vec![n, o], out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn linear_backward(grad_out: &Tensor, x: &Tensor, weight: &Tensor) -> Result<(Tensor, Tensor, Vec<f64>), NnError> {
    let (n, d) = (x.dim(0), x.len() / x.dim(0));
    let o = weight.dim(0);
    if grad_out.shape() != [n, o] {
        return Err(NnError::ShapeMismatch(format!("unexpected gradient shape {:?}", grad_out.shape())));
    }
    let mut dx = vec![0.0; n * d];
    gemm(n, o, d, grad_out.data(), false, weight.data(), false, &mut dx, false);
    let mut dw = vec![0.0; o * d];
    gemm(o, n, d, grad_out.data(), true, x.data(), false, &mut dw, false);
    let mut db = vec![0.0; o];
    for row in grad_out.data().chunks(o) {
        for (acc, g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), dx)?, Tensor::new(weight.shape().to_vec(), dw)?, db))
}

/// Mean softmax cross-entropy. Returns `(loss, grad_logits, correct)`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor, usize), NnError> {
    let (n, k) = (logits.dim(0), logits.dim(1));
    if labels.len() != n {
        return Err(NnError::ShapeMismatch(format!("{} labels for {n} rows", labels.len())));
    }
    let mut grad = vec![0.0; n * k];
    let mut loss = 0.0;
    let mut correct = 0;
    for (i, (row, &y)) in logits.data().chunks(k).zip(labels).enumerate() {
        if y >= k {
            return Err(NnError::ShapeMismatch(format!("label {y} out of range for {k} classes")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[y];
        for j in 0..k {
            let p = (row[j] - log_z).exp();
            grad[i * k + j] = (p - if j == y { 1.0 } else { 0.0 }) / n as f64;
        }
        if argmax(row) == y {
            correct += 1;
        }
    }
    Ok((loss / n as f64, Tensor::new(vec![n, k], grad)?, correct))
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
