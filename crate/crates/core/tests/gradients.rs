//! Central finite differences against the analytic backward passes.
//!
//! Each check contracts the layer output with a fixed random tensor `r` so
//! the scalar loss is `sum(out * r)`, perturbs every input coordinate by
//! the step, and compares whole gradient vectors by relative L2 error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use siman_core::nn::*;

mod common;
use common::{numeric_grad, rel_err, FD_TOL};

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn contract(a: &Tensor, r: &Tensor) -> f64 {
    a.data().iter().zip(r.data()).map(|(x, y)| x * y).sum()
}

fn check(name: &str, analytic: &[f64], numeric: &[f64]) {
    let e = rel_err(analytic, numeric);
    assert!(e <= FD_TOL, "{name}: relative error {e:.3e}");
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &(stride, padding) in &[(1, 1), (2, 1), (1, 0), (2, 0)] {
        let x = rand_tensor(&mut rng, &[2, 3, 5, 5]);
        let w = rand_tensor(&mut rng, &[4, 3, 3, 3]);
        let (y, cache) = conv2d_forward(&x, &w, stride, padding, 0.0).unwrap();
        let r = rand_tensor(&mut rng, y.shape());
        let (gx, gw) = conv2d_backward(&r, &w, &cache).unwrap();
        let fx = |d: &[f64]| {
            let x = Tensor::new(x.shape().to_vec(), d.to_vec()).unwrap();
            contract(&conv2d_forward(&x, &w, stride, padding, 0.0).unwrap().0, &r)
        };
        let fw = |d: &[f64]| {
            let w = Tensor::new(w.shape().to_vec(), d.to_vec()).unwrap();
            contract(&conv2d_forward(&x, &w, stride, padding, 0.0).unwrap().0, &r)
        };
        check("conv dx", gx.data(), &numeric_grad(x.data(), fx));
        check("conv dw", gw.data(), &numeric_grad(w.data(), fw));
    }
}

#[test]
fn conv2d_gradients_with_nonzero_padding_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, &[1, 2, 4, 4]);
    let w = rand_tensor(&mut rng, &[3, 2, 3, 3]);
    let (y, cache) = conv2d_forward(&x, &w, 1, 1, -1.0).unwrap();
    let r = rand_tensor(&mut rng, y.shape());
    let (gx, gw) = conv2d_backward(&r, &w, &cache).unwrap();
    let fx = |d: &[f64]| contract(&conv2d_forward(&Tensor::new(vec![1, 2, 4, 4], d.to_vec()).unwrap(), &w, 1, 1, -1.0).unwrap().0, &r);
    let fw = |d: &[f64]| contract(&conv2d_forward(&x, &Tensor::new(vec![3, 2, 3, 3], d.to_vec()).unwrap(), 1, 1, -1.0).unwrap().0, &r);
    check("conv dx", gx.data(), &numeric_grad(x.data(), fx));
    check("conv dw", gw.data(), &numeric_grad(w.data(), fw));
}

#[test]
fn batchnorm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[4, 3, 3, 3]);
    let gamma: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..1.5)).collect();
    let beta: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
    let run = |x: &Tensor, g: &[f64], b: &[f64]| {
        let (mut rm, mut rv) = (vec![0.0; 3], vec![1.0; 3]);
        batchnorm_forward_train(x, g, b, &mut rm, &mut rv, BN_MOMENTUM).unwrap()
    };
    let (y, cache) = run(&x, &gamma, &beta);
    let r = rand_tensor(&mut rng, y.shape());
    let (gx, gg, gb) = batchnorm_backward(&r, &gamma, &cache).unwrap();
    let fx = |d: &[f64]| contract(&run(&Tensor::new(x.shape().to_vec(), d.to_vec()).unwrap(), &gamma, &beta).0, &r);
    let fg = |d: &[f64]| contract(&run(&x, d, &beta).0, &r);
    let fb = |d: &[f64]| contract(&run(&x, &gamma, d).0, &r);
    check("bn dx", gx.data(), &numeric_grad(x.data(), fx));
    check("bn dgamma", &gg, &numeric_grad(&gamma, fg));
    check("bn dbeta", &gb, &numeric_grad(&beta, fb));
}

#[test]
fn linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, &[5, 7]);
    let w = rand_tensor(&mut rng, &[3, 7]);
    let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = linear_forward(&x, &w, &b).unwrap();
    let r = rand_tensor(&mut rng, y.shape());
    let (gx, gw, gb) = linear_backward(&r, &x, &w).unwrap();
    let fx = |d: &[f64]| contract(&linear_forward(&Tensor::new(vec![5, 7], d.to_vec()).unwrap(), &w, &b).unwrap(), &r);
    let fw = |d: &[f64]| contract(&linear_forward(&x, &Tensor::new(vec![3, 7], d.to_vec()).unwrap(), &b).unwrap(), &r);
    let fb = |d: &[f64]| contract(&linear_forward(&x, &w, d).unwrap(), &r);
    check("linear dx", gx.data(), &numeric_grad(x.data(), fx));
    check("linear dw", gw.data(), &numeric_grad(w.data(), fw));
    check("linear db", &gb, &numeric_grad(&b, fb));
}

#[test]
fn global_avg_pool_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, &[2, 3, 4, 4]);
    let y = global_avg_pool(&x).unwrap();
    let r = rand_tensor(&mut rng, y.shape());
    let gx = global_avg_pool_backward(&r, x.shape()).unwrap();
    let fx = |d: &[f64]| contract(&global_avg_pool(&Tensor::new(x.shape().to_vec(), d.to_vec()).unwrap()).unwrap(), &r);
    check("gap dx", gx.data(), &numeric_grad(x.data(), fx));
}

#[test]
fn cross_entropy_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let logits = rand_tensor(&mut rng, &[6, 4]).map(|v| 3.0 * v);
    let labels = [0, 3, 1, 2, 2, 0];
    let (_, g, _) = softmax_cross_entropy(&logits, &labels).unwrap();
    let f = |d: &[f64]| softmax_cross_entropy(&Tensor::new(vec![6, 4], d.to_vec()).unwrap(), &labels).unwrap().0;
    check("ce dlogits", g.data(), &numeric_grad(logits.data(), f));
}

#[test]
fn float_head_of_network_gradients() {
    // stem conv -> bn -> gap -> linear -> cross-entropy, chained by hand
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&mut rng, &[3, 2, 4, 4]);
    let w = rand_tensor(&mut rng, &[4, 2, 3, 3]);
    let lw = rand_tensor(&mut rng, &[3, 4]);
    let (gamma, beta) = (vec![1.0; 4], vec![0.0; 4]);
    let labels = [0, 1, 2];
    let loss = |w: &Tensor| {
        let (c, cc) = conv2d_forward(&x, w, 1, 1, 0.0).unwrap();
        let (mut rm, mut rv) = (vec![0.0; 4], vec![1.0; 4]);
        let (b, bc) = batchnorm_forward_train(&c, &gamma, &beta, &mut rm, &mut rv, BN_MOMENTUM).unwrap();
        let p = global_avg_pool(&b).unwrap();
        let l = linear_forward(&p, &lw, &[0.0; 3]).unwrap();
        let (v, g, _) = softmax_cross_entropy(&l, &labels).unwrap();
        (v, g, p, b, bc, cc)
    };
    let (_, g, p, b, bc, cc) = loss(&w);
    let (gp, _, _) = linear_backward(&g, &p, &lw).unwrap();
    let gb = global_avg_pool_backward(&gp, b.shape()).unwrap();
    let (gc, _, _) = batchnorm_backward(&gb, &gamma, &bc).unwrap();
    let (_, gw) = conv2d_backward(&gc, &w, &cc).unwrap();
    let f = |d: &[f64]| loss(&Tensor::new(w.shape().to_vec(), d.to_vec()).unwrap()).0;
    check("chain dw", gw.data(), &numeric_grad(w.data(), f));
}

#[test]
fn activation_mask_branch_values() {
    let xs = [-2.0, -1.0, -0.5, 0.0, 0.5, 0.999, 1.0, 2.0];
    let expected = [0.0, 2.0 + 2.0 * -1.0, 2.0 + 2.0 * -0.5, 2.0, 2.0 - 2.0 * 0.5, 2.0 - 2.0 * 0.999, 0.0, 0.0];
    let m = activation_grad_mask(&Tensor::new(vec![8], xs.to_vec()).unwrap());
    assert_eq!(m.data(), &expected);
    assert_eq!(m.data()[2], 1.0);
    assert_eq!(m.data()[3], 2.0);
}

#[test]
fn surrogate_is_derivative_of_polynomial() {
    // F(x) = 2x + x^2 on [-1, 0), 2x - x^2 on [0, 1)
    let f = |x: f64| if x < -1.0 { -1.0 } else if x < 0.0 { 2.0 * x + x * x } else if x < 1.0 { 2.0 * x - x * x } else { 1.0 };
    for i in 0..200 {
        let x = -1.5 + 3.0 * i as f64 / 199.0 + 1e-4;
        let num = (f(x + 1e-6) - f(x - 1e-6)) / 2e-6;
        assert!((num - sign_surrogate_grad(x)).abs() < 1e-5, "x = {x}");
    }
}
