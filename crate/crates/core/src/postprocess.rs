//! Interpretation aids for estimated loadings: varimax rotation, column
//! normalization, integer display and moving averages of factor series.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, TensorSeries};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarimaxOptions {
    /// Normalize rows to unit length before rotating (Kaiser).
    pub kaiser: bool,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for VarimaxOptions {
    fn default() -> Self {
        VarimaxOptions {
            kaiser: false,
            tol: 1e-10,
            max_sweeps: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarimaxResult {
    /// `L R`, with the largest-magnitude entry of every column positive.
    pub loadings: Matrix,
    /// Orthogonal `r × r` matrix `R`; rotated factors are `Rᵀ f_t`.
    pub rotation: Matrix,
    pub sweeps: usize,
    pub converged: bool,
    /// Criterion of the (row-normalized, if Kaiser) matrix before the first
    /// sweep and after each sweep.
    pub criterion_trace: Vec<f64>,
}

/// Varimax rotation by pairwise planar rotations of columns.
pub fn varimax(l: &Matrix, opts: &VarimaxOptions) -> Result<VarimaxResult> {
    if l.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("loading matrix"));
    }
    let (p, r) = l.shape();
    let norms: Vec<f64> = l.row_iter().map(|row| row.norm()).collect();
    let mut x = l.clone();
    if opts.kaiser {
        for (i, &n) in norms.iter().enumerate() {
            if n > 0.0 {
                x.row_mut(i).unscale_mut(n);
            }
        }
    }
    let mut rot = Matrix::identity(r, r);
    let mut sweeps = 0;
    let mut converged = r < 2;
    let mut trace = vec![varimax_criterion(&x)];
    while !converged && sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut largest = 0.0f64;
        for i in 0..r {
            for j in i + 1..r {
                let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
                for row in 0..p {
                    let (xi, xj) = (x[(row, i)], x[(row, j)]);
                    let u = xi * xi - xj * xj;
                    let v = 2.0 * xi * xj;
                    a += u;
                    b += v;
                    c += u * u - v * v;
                    d += 2.0 * u * v;
                }
                let pf = p as f64;
                let phi = 0.25 * (d - 2.0 * a * b / pf).atan2(c - (a * a - b * b) / pf);
                largest = largest.max(phi.abs());
                if phi.abs() > 0.0 {
                    let (s, co) = phi.sin_cos();
                    for m in [&mut x, &mut rot] {
                        for row in 0..m.nrows() {
                            let (xi, xj) = (m[(row, i)], m[(row, j)]);
                            m[(row, i)] = co * xi + s * xj;
                            m[(row, j)] = -s * xi + co * xj;
                        }
                    }
                }
            }
        }
        trace.push(varimax_criterion(&x));
        converged = largest < opts.tol;
    }
    if opts.kaiser {
        for (i, &n) in norms.iter().enumerate() {
            if n > 0.0 {
                x.row_mut(i).scale_mut(n);
            }
        }
    }
    for j in 0..r {
        let col = x.column(j);
        let (imax, _) = col.iter().enumerate().fold((0, -1.0), |acc, (i, v)| {
            if v.abs() > acc.1 {
                (i, v.abs())
            } else {
                acc
            }
        });
        if col[imax] < 0.0 {
            x.column_mut(j).neg_mut();
            rot.column_mut(j).neg_mut();
        }
    }
    Ok(VarimaxResult {
        loadings: x,
        rotation: rot,
        sweeps,
        converged,
        criterion_trace: trace,
    })
}

/// Varimax criterion `Σ_j [Σ_i l_ij⁴ - (Σ_i l_ij²)² / p]`, the objective the
/// rotation maximizes (up to the constant 1/p).
pub fn varimax_criterion(l: &Matrix) -> f64 {
    let p = l.nrows() as f64;
    l.column_iter()
        .map(|c| {
            let s2: f64 = c.iter().map(|v| v * v).sum();
            let s4: f64 = c.iter().map(|v| v.powi(4)).sum();
            s4 - s2 * s2 / p
        })
        .sum()
}

/// Divides each column by its sum. Columns whose sum is (numerically) zero are
/// left unchanged and flagged.
pub fn normalize_columns(m: &Matrix) -> (Matrix, Vec<bool>) {
    let mut out = m.clone();
    let mut flagged = vec![false; m.ncols()];
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let s: f64 = col.sum();
        if s.abs() < 1e-12 {
            flagged[j] = true;
        } else {
            col /= s;
        }
    }
    (out, flagged)
}

/// How loadings are turned into integers for display.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisplayMode {
    /// `trunc(scale · l)`.
    Scaled(f64),
    /// `round(100 · l / Σ_i l_i)` per column.
    Percent,
}

/// Integer display of a loading matrix; row-major rows.
pub fn display_integers(m: &Matrix, mode: DisplayMode) -> (Vec<Vec<i64>>, Vec<bool>) {
    let (vals, flagged) = match mode {
        DisplayMode::Scaled(s) => (m.map(|v| (v * s).trunc()), vec![false; m.ncols()]),
        DisplayMode::Percent => {
            let (n, f) = normalize_columns(m);
            (n.map(|v| (100.0 * v).round()), f)
        }
    };
    let rows = vals
        .row_iter()
        .map(|row| row.iter().map(|&v| v as i64).collect())
        .collect();
    (rows, flagged)
}

/// Trailing moving average: entry `i` averages `v[i..i + window]`.
pub fn moving_average(v: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window > v.len() {
        return Err(Error::InvalidSpec(format!(
            "window {window} for a series of length {}",
            v.len()
        )));
    }
    let w = window as f64;
    let mut sum: f64 = v[..window].iter().sum();
    let mut out = Vec::with_capacity(v.len() - window + 1);
    out.push(sum / w);
    for i in window..v.len() {
        sum += v[i] - v[i - window];
        out.push(sum / w);
    }
    Ok(out)
}

/// Trailing moving average over time of every entry of a series.
pub fn moving_average_series(x: &TensorSeries, window: usize) -> Result<TensorSeries> {
    let len = x.len();
    if window == 0 || window > len {
        return Err(Error::InvalidSpec(format!(
            "window {window} for a series of length {len}"
        )));
    }
    let data = x.data();
    let mut out = Matrix::zeros(data.nrows(), len - window + 1);
    let mut sum = data.columns(0, window).column_sum();
    out.set_column(0, &(&sum / window as f64));
    for t in window..len {
        sum += data.column(t) - data.column(t - window);
        out.set_column(t + 1 - window, &(&sum / window as f64));
    }
    TensorSeries::new(x.shape().to_vec(), out)
}
