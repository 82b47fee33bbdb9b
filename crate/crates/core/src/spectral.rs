//! Truncated left singular subspaces, projections and spectral norms.
//!
//! Two routes compute left singular vectors: the eigendecomposition of the
//! Gram matrix `m mᵀ` (cheap when `m` is short and wide, which is always
//! the case for the lagged cross-product matrices) and a one-sided Jacobi
//! SVD working on `m` directly. They are independent algorithms and the
//! tests hold them against each other.

use nalgebra::{DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Leading left singular vectors and their singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// `n × count`, orthonormal columns.
    pub left_vectors: Matrix,
    /// Non-increasing, non-negative.
    pub singular_values: Vec<f64>,
}

/// Full eigen-decomposition of a symmetric PSD Gram matrix, sorted descending.
#[derive(Debug, Clone)]
pub struct GramSpectrum {
    pub vectors: Matrix,
    pub values: Vec<f64>,
}

impl GramSpectrum {
    pub fn new(gram: &Matrix) -> Result<Self> {
        if !gram.is_square() {
            return Err(Error::Dimension(format!(
                "Gram matrix must be square, got {}x{}",
                gram.nrows(),
                gram.ncols()
            )));
        }
        if gram.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Gram matrix"));
        }
        let sym = (gram + gram.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let n = gram.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut vectors = Matrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        canonicalize_signs(&mut vectors);
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        Ok(GramSpectrum { vectors, values })
    }

    /// Singular values of the underlying factor `m` with `m mᵀ = gram`,
    /// truncated to `len` entries.
    ///
    /// Eigenvalues within rounding error of zero (`n ε λ_max`) map to zero
    /// rather than to the square root of the rounding error.
    pub fn singular_ladder(&self, len: usize) -> Vec<f64> {
        let top = self.values.first().copied().unwrap_or(0.0).max(0.0);
        let floor = self.values.len() as f64 * f64::EPSILON * top;
        self.values
            .iter()
            .take(len)
            .map(|&v| if v <= floor { 0.0 } else { v.sqrt() })
            .collect()
    }

    pub fn top(&self, count: usize) -> Result<SvdResult> {
        let n = self.values.len();
        if count == 0 || count > n {
            return Err(Error::Rank {
                rank: count,
                max: n,
            });
        }
        Ok(SvdResult {
            left_vectors: self.vectors.columns(0, count).into_owned(),
            singular_values: self.singular_ladder(count),
        })
    }
}

/// Flips each column so its first non-negligible coordinate is positive.
pub fn canonicalize_signs(u: &mut Matrix) {
    for mut col in u.column_iter_mut() {
        let scale = col.amax();
        if scale == 0.0 {
            continue;
        }
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-10 * scale) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

fn check_count(m: &Matrix, count: usize) -> Result<()> {
    let max = m.nrows().min(m.ncols());
    if count == 0 || count > max {
        return Err(Error::Rank { rank: count, max });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix"));
    }
    Ok(())
}

/// Top `count` left singular vectors of `m`.
///
/// Uses the Gram route when `m` has at least twice as many columns as rows,
/// the direct Jacobi route otherwise.
pub fn top_left_singular(m: &Matrix, count: usize) -> Result<SvdResult> {
    if m.ncols() >= 2 * m.nrows() {
        top_left_singular_gram(m, count)
    } else {
        top_left_singular_direct(m, count)
    }
}

/// Gram route: eigenvectors of `m mᵀ`.
pub fn top_left_singular_gram(m: &Matrix, count: usize) -> Result<SvdResult> {
    check_count(m, count)?;
    GramSpectrum::new(&(m * m.transpose()))?.top(count)
}

/// Direct route: one-sided (Hestenes) Jacobi on the columns of `mᵀ`.
///
/// Rotating the `n` columns of `mᵀ` until they are mutually orthogonal gives
/// `mᵀ V = W Σ`, so the accumulated rotation `V` holds the left singular
/// vectors of `m` and the column norms are the singular values.
pub fn top_left_singular_direct(m: &Matrix, count: usize) -> Result<SvdResult> {
    check_count(m, count)?;
    let n = m.nrows();
    let mut a = m.transpose();
    let mut v = Matrix::identity(n, n);
    const MAX_SWEEPS: usize = 100;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let alpha = a.column(i).norm_squared();
                let beta = a.column(j).norm_squared();
                let gamma = a.column(i).dot(&a.column(j));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut a, i, j, c, s);
                rotate_columns(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let mut left = Matrix::zeros(n, count);
    for (dst, &src) in order.iter().take(count).enumerate() {
        left.set_column(dst, &v.column(src));
    }
    canonicalize_signs(&mut left);
    Ok(SvdResult {
        left_vectors: left,
        singular_values: order.iter().take(count).map(|&i| norms[i]).collect(),
    })
}

fn rotate_columns(m: &mut Matrix, i: usize, j: usize, c: f64, s: f64) {
    for r in 0..m.nrows() {
        let x = m[(r, i)];
        let y = m[(r, j)];
        m[(r, i)] = c * x - s * y;
        m[(r, j)] = s * x + c * y;
    }
}

/// Largest deviation of `uᵀu` from the identity.
pub fn orthonormality_error(u: &Matrix) -> f64 {
    let g = u.transpose() * u;
    let n = g.nrows();
    (&g - Matrix::identity(n, n)).amax()
}

/// Orthogonal projection `U Uᵀ` onto the span of orthonormal columns.
pub fn projection_from_basis(u: &Matrix) -> Result<Matrix> {
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("basis"));
    }
    let err = orthonormality_error(u);
    if err > 1e-8 {
        return Err(Error::Basis(err));
    }
    Ok(u * u.transpose())
}

/// Orthonormal basis of the column space of a full-column-rank matrix.
pub fn orthonormalize(a: &Matrix) -> Matrix {
    let mut q = a.clone().qr().q();
    canonicalize_signs(&mut q);
    q
}

/// Projection onto the column space of an arbitrary full-column-rank matrix,
/// `A (AᵀA)⁻¹ Aᵀ`.
pub fn projection_onto(a: &Matrix) -> Matrix {
    let q = a.clone().qr().q();
    &q * q.transpose()
}

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 50_000;
const POWER_SEED: u64 = 0x005e_ed0f_5bec;

/// Largest singular value by power iteration on `mᵀm` (or `m mᵀ`, whichever is smaller).
///
/// The start vector comes from a fixed RNG stream so the result is reproducible.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix"));
    }
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(0.0);
    }
    let wide = m.ncols() > m.nrows();
    let n = if wide { m.nrows() } else { m.ncols() };
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    v.normalize_mut();

    // applies the n×n operator (m mᵀ or mᵀ m) to v
    let apply = |v: &DVector<f64>| -> DVector<f64> {
        if wide {
            m * (m.tr_mul(v))
        } else {
            m.tr_mul(&(m * v))
        }
    };

    let mut estimate = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let w = apply(&v);
        let rayleigh = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = w / norm;
        if (rayleigh - estimate).abs() <= POWER_TOL * rayleigh.abs() {
            estimate = rayleigh;
            break;
        }
        estimate = rayleigh;
    }
    // final Rayleigh quotient on the converged vector
    let w = apply(&v);
    Ok(v.dot(&w).max(estimate).max(0.0).sqrt())
}

/// Spectral norm of a symmetric matrix via a dense eigendecomposition.
pub fn symmetric_spectral_norm(m: &Matrix) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.amax()
}

/// Spectral distance `‖P − Q‖_S` between two projections.
pub fn projection_distance(p: &Matrix, q: &Matrix) -> f64 {
    symmetric_spectral_norm(&(p - q))
}

/// Symmetric square root of a symmetric PSD matrix.
pub fn sym_sqrt(m: &Matrix) -> Result<Matrix> {
    let spec = GramSpectrum::new(m)?;
    if let Some(&min) = spec.values.last() {
        let scale = spec.values[0].abs().max(1.0);
        if min < -1e-10 * scale {
            return Err(Error::InvalidSpec(format!(
                "matrix is not positive semi-definite (eigenvalue {min:.3e})"
            )));
        }
    }
    let root = DVector::from_iterator(
        spec.values.len(),
        spec.values.iter().map(|v| v.max(0.0).sqrt()),
    );
    let scaled = &spec.vectors * Matrix::from_diagonal(&root);
    Ok(scaled * spec.vectors.transpose())
}
