#![allow(dead_code)]

pub mod invariants;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensor_factor::{Matrix, Tensor, TensorSeries};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_series(dims: &[usize], len: usize, rng: &mut ChaCha8Rng) -> TensorSeries {
    let d: usize = dims.iter().product();
    let data = Matrix::from_fn(d, len, |_, _| rng.random_range(-1.0..1.0));
    TensorSeries::new(dims.to_vec(), data).unwrap()
}

/// All multi-indices of `dims`, first index fastest.
pub fn multi_indices(dims: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = dims.iter().product();
    (0..total)
        .map(|mut lin| {
            dims.iter()
                .map(|&d| {
                    let i = lin % d;
                    lin /= d;
                    i
                })
                .collect()
        })
        .collect()
}

/// Column of `mat_k` holding the fiber through `idx`: the remaining indices,
/// lowest mode fastest.
fn rest_index(idx: &[usize], dims: &[usize], mode: usize) -> usize {
    let mut j = 0;
    for k in (0..dims.len()).rev() {
        if k != mode {
            j = j * dims[k] + idx[k];
        }
    }
    j
}

fn value(x: &TensorSeries, t: usize, idx: &[usize]) -> f64 {
    let slice: Tensor = x.slice(t);
    slice.get(idx)
}

/// TOPUP matrix straight from its definition: entry `(i, j, i', j', h)` is
/// `Σ_t X_{t-h}[i, j] X_t[i', j'] / (T - h)`.
pub fn topup_oracle(x: &TensorSeries, mode: usize, h0: usize) -> Matrix {
    let dims = x.shape();
    let d: usize = dims.iter().product();
    let dk = dims[mode];
    let w = d / dk;
    let len = x.len();
    let idx = multi_indices(dims);
    let mut out = Matrix::zeros(dk, w * d * h0);
    for h in 1..=h0 {
        for a in &idx {
            for b in &idx {
                let mut s = 0.0;
                for t in h..len {
                    s += value(x, t - h, a) * value(x, t, b);
                }
                let col = rest_index(a, dims, mode)
                    + w * (b[mode] + dk * rest_index(b, dims, mode))
                    + (h - 1) * w * d;
                out[(a[mode], col)] = s / (len - h) as f64;
            }
        }
    }
    out
}

/// TIPUP matrix straight from its definition:
/// `V*_h[i, i'] = Σ_t Σ_j X_{t-h}[i, j] X_t[i', j] / (T - h)`.
pub fn tipup_oracle(x: &TensorSeries, mode: usize, h0: usize) -> Matrix {
    let dims = x.shape();
    let dk = dims[mode];
    let len = x.len();
    let idx = multi_indices(dims);
    let mut out = Matrix::zeros(dk, dk * h0);
    for h in 1..=h0 {
        for a in &idx {
            for i2 in 0..dk {
                let mut b = a.clone();
                b[mode] = i2;
                let mut s = 0.0;
                for t in h..len {
                    s += value(x, t - h, a) * value(x, t, &b);
                }
                out[(a[mode], (h - 1) * dk + i2)] += s / (len - h) as f64;
            }
        }
    }
    out
}

pub fn median(mut v: Vec<f64>) -> f64 {
    tensor_factor::experiment::median(&mut v)
}
