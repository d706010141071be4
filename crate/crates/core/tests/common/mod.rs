//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use plotleak::nn::{ActivationKind, FeedforwardNet, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let values = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, values).unwrap()
}

/// Random net with nonzero biases.
pub fn random_net(dims: &[usize], act: ActivationKind, rng: &mut ChaCha8Rng) -> FeedforwardNet {
    let mut net = FeedforwardNet::new(dims, act, rng).unwrap();
    for layer in net.layers_mut() {
        for b in &mut layer.bias {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    net
}

fn act(kind: ActivationKind, z: f64) -> f64 {
    match kind {
        ActivationKind::Relu => z.max(0.0),
        ActivationKind::Elu => {
            if z > 0.0 {
                z
            } else {
                z.exp() - 1.0
            }
        }
        ActivationKind::Tanh => z.tanh(),
    }
}

/// Triple-loop forward pass returning probabilities, row by row.
pub fn naive_forward(net: &FeedforwardNet, x: &[f64]) -> Vec<f64> {
    let layers = net.layers();
    let mut a = x.to_vec();
    for (k, l) in layers.iter().enumerate() {
        let mut z = vec![0.0; l.fan_out()];
        for (j, zj) in z.iter_mut().enumerate() {
            let mut s = l.bias[j];
            for (i, ai) in a.iter().enumerate() {
                s += ai * l.weight.get(i, j);
            }
            *zj = s;
        }
        a = if k + 1 < layers.len() {
            z.iter().map(|&v| act(net.activation(), v)).collect()
        } else {
            z
        };
    }
    let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = a.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Mean cross-entropy computed through the naive forward pass.
pub fn naive_loss(net: &FeedforwardNet, batch: &Matrix, labels: &[usize]) -> f64 {
    let total: f64 = (0..batch.rows())
        .map(|r| -naive_forward(net, batch.row(r))[labels[r]].max(1e-12).ln())
        .sum();
    total / batch.rows() as f64
}

/// Relative error used for gradient checks; pairs where both values are
/// below `floor` are compared absolutely against `floor`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let d = (a - b).abs();
    let scale = a.abs().max(b.abs());
    if scale < floor {
        d / floor
    } else {
        d / scale
    }
}

pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Worst relative error of `backward` against central differences over
/// every weight and bias.
pub fn backward_fd_error(net: &FeedforwardNet, batch: &Matrix, labels: &[usize]) -> f64 {
    let pass = net.forward(batch).unwrap();
    let grads = net.backward(&pass, labels).unwrap();
    let mut worst: f64 = 0.0;
    for (k, g) in grads.layers.iter().enumerate() {
        for idx in 0..g.weight.as_slice().len() {
            let num = central_difference(
                |v| {
                    let mut n = net.clone();
                    n.layers_mut()[k].weight.as_mut_slice()[idx] = v;
                    naive_loss(&n, batch, labels)
                },
                net.layers()[k].weight.as_slice()[idx],
                1e-5,
            );
            worst = worst.max(rel_err(g.weight.as_slice()[idx], num, 1e-6));
        }
        for idx in 0..g.bias.len() {
            let num = central_difference(
                |v| {
                    let mut n = net.clone();
                    n.layers_mut()[k].bias[idx] = v;
                    naive_loss(&n, batch, labels)
                },
                net.layers()[k].bias[idx],
                1e-5,
            );
            worst = worst.max(rel_err(g.bias[idx], num, 1e-6));
        }
    }
    worst
}

/// Worst relative error of `input_gradient` against central differences.
pub fn input_fd_error(net: &FeedforwardNet, sample: &[f64], label: usize) -> f64 {
    let g = net.input_gradient(sample, label).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..sample.len() {
        let num = central_difference(
            |v| {
                let mut x = sample.to_vec();
                x[i] = v;
                -naive_forward(net, &x)[label].max(1e-12).ln()
            },
            sample[i],
            1e-5,
        );
        worst = worst.max(rel_err(g[i], num, 1e-6));
    }
    worst
}

/// Student-t low-dimensional affinities by direct double loop.
pub fn naive_q(y: &Matrix) -> Vec<Vec<f64>> {
    let n = y.rows();
    let mut w = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let mut d = 0.0;
                for c in 0..y.cols() {
                    d += (y.get(i, c) - y.get(j, c)).powi(2);
                }
                w[i][j] = 1.0 / (1.0 + d);
                total += w[i][j];
            }
        }
    }
    for row in &mut w {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    w
}

/// Box-filter downsampling of a gray image with round-half-up.
pub fn naive_downsample(gray: &[u8], w: usize, h: usize, ow: usize, oh: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(ow * oh);
    for oy in 0..oh {
        for ox in 0..ow {
            // source x lies in cell i iff i·W < (x+1)·w ≤ (i+1)·W
            let cell = |x: usize, src: usize, dst: usize| ((x + 1) * dst).div_ceil(src) - 1;
            let inside = |x: usize, y: usize| cell(x, w, ow) == ox && cell(y, h, oh) == oy;
            let members: Vec<f64> = (0..h)
                .flat_map(|y| (0..w).map(move |x| (x, y)))
                .filter(|&(x, y)| inside(x, y))
                .map(|(x, y)| gray[y * w + x] as f64)
                .collect();
            let mean = members.iter().sum::<f64>() / members.len() as f64;
            out.push((mean + 0.5).floor() as u8);
        }
    }
    out
}
