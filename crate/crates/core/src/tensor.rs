//! Dense order-K tensors and tensor time series.
//!
//! Storage is canonical "first index fastest": the entry at multi-index
//! `(i_1, .., i_K)` lives at `i_1 + d_1 (i_2 + d_2 (i_3 + ...))`. With that
//! layout `vec(x)` is the raw buffer, and the mode-k unfolding places the
//! fiber of multi-index `j` (the non-k indices, lowest mode fastest) in
//! column `j`.
//!
//! Mode indices are zero-based throughout the Rust API.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Splits `dims` around `mode` into (product of lower dims, d_mode, product of higher dims).
fn split_dims(dims: &[usize], mode: usize) -> (usize, usize, usize) {
    let left = dims[..mode].iter().product();
    let right = dims[mode + 1..].iter().product();
    (left, dims[mode], right)
}

fn check_mode(dims: &[usize], mode: usize) -> Result<()> {
    if mode >= dims.len() {
        return Err(Error::ModeIndex {
            mode,
            order: dims.len(),
        });
    }
    Ok(())
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(Error::Dimension("a tensor needs at least one mode".into()));
    }
    if let Some(k) = dims.iter().position(|&d| d == 0) {
        return Err(Error::Dimension(format!("mode {k} has zero length")));
    }
    Ok(dims.iter().product())
}

/// Mode-`mode` unfolding of a raw canonical buffer.
pub(crate) fn unfold_raw(data: &[f64], dims: &[usize], mode: usize) -> Matrix {
    let (left, dk, right) = split_dims(dims, mode);
    if left == 1 {
        // mode 0: the buffer already is the unfolding
        return Matrix::from_column_slice(dk, right, data);
    }
    let mut out = vec![0.0; data.len()];
    for r in 0..right {
        for i in 0..dk {
            let src = &data[left * (i + dk * r)..left * (i + dk * r + 1)];
            for (l, &v) in src.iter().enumerate() {
                out[i + dk * (l + left * r)] = v;
            }
        }
    }
    Matrix::from_vec(dk, left * right, out)
}

/// Inverse of [`unfold_raw`].
pub(crate) fn refold_raw(m: &Matrix, dims: &[usize], mode: usize) -> Vec<f64> {
    let (left, dk, right) = split_dims(dims, mode);
    if left == 1 {
        return m.as_slice().to_vec();
    }
    let src = m.as_slice();
    let mut out = vec![0.0; src.len()];
    for r in 0..right {
        for i in 0..dk {
            let dst = &mut out[left * (i + dk * r)..left * (i + dk * r + 1)];
            for (l, v) in dst.iter_mut().enumerate() {
                *v = src[i + dk * (l + left * r)];
            }
        }
    }
    out
}

/// `x ×_mode a` on a raw canonical buffer. `a` is `m × d_mode`.
pub(crate) fn mode_product_raw(data: &[f64], dims: &[usize], a: &Matrix, mode: usize) -> Vec<f64> {
    let (left, dk, right) = split_dims(dims, mode);
    let m = a.nrows();
    let mut out = vec![0.0; left * m * right];
    if left == 1 {
        let x = DMatrixView::from_slice(data, dk, right);
        let mut o = DMatrixViewMut::from_slice(&mut out, m, right);
        o.gemm(1.0, a, &x, 0.0);
        return out;
    }
    let at = a.transpose();
    for r in 0..right {
        let slab = DMatrixView::from_slice(&data[r * left * dk..(r + 1) * left * dk], left, dk);
        let mut o = DMatrixViewMut::from_slice(&mut out[r * left * m..(r + 1) * left * m], left, m);
        o.gemm(1.0, &slab, &at, 0.0);
    }
    out
}

/// Dense order-K real tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = check_dims(&dims)?;
        if data.len() != len {
            return Err(Error::Dimension(format!(
                "data length {} does not match dims {:?} (expected {len})",
                data.len(),
                dims
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = check_dims(&dims)?;
        Ok(Tensor {
            dims,
            data: vec![0.0; len],
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = check_dims(&dims)?;
        let mut idx = vec![0usize; dims.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            for (i, d) in idx.iter_mut().zip(&dims) {
                *i += 1;
                if *i < *d {
                    break;
                }
                *i = 0;
            }
        }
        Ok(Tensor { dims, data })
    }

    /// Order-1 tensor holding a single value.
    pub fn scalar(v: f64) -> Self {
        Tensor {
            dims: vec![1],
            data: vec![v],
        }
    }

    pub fn from_vector(v: &[f64]) -> Result<Self> {
        Tensor::new(vec![v.len()], v.to_vec())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        idx.iter()
            .zip(&self.dims)
            .rev()
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    /// Mode-`mode` unfolding: a `d_mode × d/d_mode` matrix whose columns are mode fibers.
    pub fn unfold(&self, mode: usize) -> Result<Matrix> {
        check_mode(&self.dims, mode)?;
        Ok(unfold_raw(&self.data, &self.dims, mode))
    }

    /// Inverse of [`Tensor::unfold`].
    pub fn refold(m: &Matrix, mode: usize, dims: &[usize]) -> Result<Tensor> {
        let len = check_dims(dims)?;
        check_mode(dims, mode)?;
        if m.nrows() != dims[mode] || m.nrows() * m.ncols() != len {
            return Err(Error::Dimension(format!(
                "cannot refold a {}x{} matrix at mode {mode} into dims {:?}",
                m.nrows(),
                m.ncols(),
                dims
            )));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data: refold_raw(m, dims, mode),
        })
    }

    /// Mode-`mode` product `x ×_mode a` for an `m × d_mode` matrix `a`.
    pub fn mode_product(&self, a: &Matrix, mode: usize) -> Result<Tensor> {
        check_mode(&self.dims, mode)?;
        if a.ncols() != self.dims[mode] {
            return Err(Error::Dimension(format!(
                "mode-{mode} product needs {} columns, matrix has {}",
                self.dims[mode],
                a.ncols()
            )));
        }
        let mut dims = self.dims.clone();
        dims[mode] = a.nrows();
        check_dims(&dims)?;
        let data = mode_product_raw(&self.data, &self.dims, a, mode);
        Ok(Tensor { dims, data })
    }

    /// Applies `x ×_1 a_1 ×_2 a_2 ...`, one matrix per mode.
    pub fn multi_mode_product(&self, mats: &[Matrix]) -> Result<Tensor> {
        if mats.len() != self.order() {
            return Err(Error::Dimension(format!(
                "need {} matrices, got {}",
                self.order(),
                mats.len()
            )));
        }
        mats.iter()
            .enumerate()
            .try_fold(self.clone(), |acc, (k, a)| acc.mode_product(a, k))
    }

    /// Stacks mode-1 fibers in order of the remaining modes.
    pub fn vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.data)
    }

    /// Tensor product `x ⊗ y` of order `K_x + K_y`.
    pub fn outer(&self, other: &Tensor) -> Tensor {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        let mut data = Vec::with_capacity(self.len() * other.len());
        for &y in &other.data {
            data.extend(self.data.iter().map(|&x| x * y));
        }
        Tensor { dims, data }
    }
}

/// Kronecker product `m_0 ⊗ m_1 ⊗ ... ⊗ m_last` in the order given.
///
/// With canonical storage, `vec(F ×_1 A_1 ... ×_K A_K) = kronecker(&[A_K, .., A_1]) vec(F)`.
pub fn kronecker(mats: &[Matrix]) -> Matrix {
    match mats.split_first() {
        None => Matrix::identity(1, 1),
        Some((first, rest)) => rest.iter().fold(first.clone(), |acc, m| acc.kronecker(m)),
    }
}

/// Time-ordered sequence of equally shaped tensors.
///
/// Slices are stored as the columns of a `d × T` matrix, which is also the
/// canonical storage of the stacked order-(K+1) tensor with time last.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSeries {
    shape: Vec<usize>,
    data: Matrix,
}

impl TensorSeries {
    pub fn new(shape: Vec<usize>, data: Matrix) -> Result<Self> {
        let d = check_dims(&shape)?;
        if data.nrows() != d {
            return Err(Error::Dimension(format!(
                "series rows {} do not match shape {:?}",
                data.nrows(),
                shape
            )));
        }
        if data.ncols() == 0 {
            return Err(Error::Dimension("a series needs at least one slice".into()));
        }
        Ok(TensorSeries { shape, data })
    }

    pub fn zeros(shape: Vec<usize>, len: usize) -> Result<Self> {
        let d = check_dims(&shape)?;
        TensorSeries::new(shape, Matrix::zeros(d, len))
    }

    pub fn from_slices(slices: &[Tensor]) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::Dimension("a series needs at least one slice".into()))?;
        let shape = first.dims().to_vec();
        let d = first.len();
        let mut data = Matrix::zeros(d, slices.len());
        for (t, s) in slices.iter().enumerate() {
            if s.dims() != shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "slice {t} has dims {:?}, expected {:?}",
                    s.dims(),
                    shape
                )));
            }
            data.column_mut(t).copy_from_slice(s.as_slice());
        }
        Ok(TensorSeries { shape, data })
    }

    /// Splits an order-(K+1) tensor with time as its last mode.
    pub fn from_stacked(y: Tensor) -> Result<Self> {
        if y.order() < 2 {
            return Err(Error::Dimension(
                "a stacked series needs a time mode plus at least one data mode".into(),
            ));
        }
        let mut dims = y.dims.clone();
        let len = dims.pop().unwrap();
        let d = dims.iter().product();
        TensorSeries::new(dims, Matrix::from_vec(d, len, y.data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    /// Number of time points T.
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    /// Number of entries per slice, d = Π d_k.
    pub fn slice_len(&self) -> usize {
        self.data.nrows()
    }

    /// `d × T` matrix with column t holding vec(X_t).
    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Matrix {
        &mut self.data
    }

    pub fn into_matrix(self) -> Matrix {
        self.data
    }

    pub fn slice_data(&self, t: usize) -> &[f64] {
        let d = self.slice_len();
        &self.data.as_slice()[t * d..(t + 1) * d]
    }

    pub fn slice(&self, t: usize) -> Tensor {
        Tensor {
            dims: self.shape.clone(),
            data: self.slice_data(t).to_vec(),
        }
    }

    pub fn slices(&self) -> impl Iterator<Item = Tensor> + '_ {
        (0..self.len()).map(move |t| self.slice(t))
    }

    /// The stacked order-(K+1) tensor Y with time as the last mode.
    pub fn stacked(&self) -> Tensor {
        let mut dims = self.shape.clone();
        dims.push(self.len());
        Tensor {
            dims,
            data: self.data.as_slice().to_vec(),
        }
    }

    fn stacked_dims(&self) -> Vec<usize> {
        let mut dims = self.shape.clone();
        dims.push(self.len());
        dims
    }

    /// Mode-`mode` unfolding of the stacked tensor: `d_mode × (d_{-mode} T)`.
    ///
    /// Columns `[t d_{-mode}, (t+1) d_{-mode})` hold mat_mode(X_t).
    pub fn unfold_stacked(&self, mode: usize) -> Result<Matrix> {
        check_mode(&self.shape, mode)?;
        Ok(unfold_raw(self.data.as_slice(), &self.stacked_dims(), mode))
    }

    /// `X_t ×_mode a` for every t.
    pub fn mode_product(&self, a: &Matrix, mode: usize) -> Result<TensorSeries> {
        check_mode(&self.shape, mode)?;
        if a.ncols() != self.shape[mode] {
            return Err(Error::Dimension(format!(
                "mode-{mode} product needs {} columns, matrix has {}",
                self.shape[mode],
                a.ncols()
            )));
        }
        let mut shape = self.shape.clone();
        shape[mode] = a.nrows();
        let d = check_dims(&shape)?;
        let data = mode_product_raw(self.data.as_slice(), &self.stacked_dims(), a, mode);
        Ok(TensorSeries {
            shape,
            data: Matrix::from_vec(d, self.len(), data),
        })
    }

    /// Applies one matrix per mode; `None` leaves that mode untouched.
    pub fn multi_mode_product(&self, mats: &[Option<&Matrix>]) -> Result<TensorSeries> {
        if mats.len() != self.order() {
            return Err(Error::Dimension(format!(
                "need {} matrices, got {}",
                self.order(),
                mats.len()
            )));
        }
        let mut out = self.clone();
        for (k, a) in mats.iter().enumerate() {
            if let Some(a) = a {
                out = out.mode_product(a, k)?;
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn scale(&mut self, c: f64) {
        self.data *= c;
    }

    /// Subtracts the temporal mean of every entry.
    pub fn demeaned(&self) -> TensorSeries {
        let mut data = self.data.clone();
        let mean = self.data.column_mean();
        for mut col in data.column_iter_mut() {
            col -= &mean;
        }
        TensorSeries {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
