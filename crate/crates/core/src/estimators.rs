//! Loading-space estimators for tensor factor models.
//!
//! TOPUP and TIPUP both aggregate lagged cross-products of the mode-k
//! unfoldings over `h = 1..h0`; positive lags remove the contemporaneous
//! covariance of white noise. TOPUP keeps every fiber pair (outer product),
//! TIPUP sums matching fibers first (inner product). UP is the static
//! baseline that ignores time and runs an SVD on the unfolded stacked tensor.
//!
//! All estimators work on the `d_k × d_k` Gram matrix of the relevant
//! unfolding; the left singular vectors of the unfolding are its leading
//! eigenvectors.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrixView;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{projection_distance, projection_from_basis, GramSpectrum};
use crate::tensor::{unfold_raw, Matrix, TensorSeries};

/// Above this slice size the TOPUP cross-product is never held in memory at once.
const TOPUP_MATERIALIZE_LIMIT: usize = 1000;
/// Target number of entries per streamed TOPUP slab.
const TOPUP_SLAB_ENTRIES: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Topup,
    Tipup,
    #[serde(rename = "itopup")]
    ITopup,
    #[serde(rename = "itipup")]
    ITipup,
    Up,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Topup,
        Method::Tipup,
        Method::ITopup,
        Method::ITipup,
        Method::Up,
    ];

    /// The non-iterative estimator an iterative method starts from and reuses per sweep.
    pub fn base(self) -> Method {
        match self {
            Method::ITopup => Method::Topup,
            Method::ITipup => Method::Tipup,
            m => m,
        }
    }

    pub fn is_iterative(self) -> bool {
        matches!(self, Method::ITopup | Method::ITipup)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Topup => "topup",
            Method::Tipup => "tipup",
            Method::ITopup => "itopup",
            Method::ITipup => "itipup",
            Method::Up => "up",
        }
    }

    pub fn iterative(self) -> Method {
        match self {
            Method::Topup => Method::ITopup,
            Method::Tipup => Method::ITipup,
            m => m,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.name() == lower)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown method '{s}'")))
    }
}

/// What to estimate and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub ranks: Vec<usize>,
    pub h0: usize,
    pub method: Method,
    /// Sweeps for iterative methods. Zero returns the initial estimate.
    pub max_iter: usize,
    /// Stop once no projection moves by more than this in spectral norm.
    pub iter_tol: f64,
    /// Accept `h0 > T/4` with a warning instead of an error.
    #[serde(default)]
    pub allow_long_lag: bool,
}

impl ModelSpec {
    pub fn new(ranks: Vec<usize>, h0: usize, method: Method) -> Self {
        ModelSpec {
            ranks,
            h0,
            method,
            max_iter: 50,
            iter_tol: 1e-8,
            allow_long_lag: false,
        }
    }

    pub fn with_iterations(mut self, max_iter: usize, iter_tol: f64) -> Self {
        self.max_iter = max_iter;
        self.iter_tol = iter_tol;
        self
    }

    pub fn allowing_long_lag(mut self) -> Self {
        self.allow_long_lag = true;
        self
    }

    pub fn validate(&self, x: &TensorSeries) -> Result<()> {
        let shape = x.shape();
        if self.ranks.len() != shape.len() {
            return Err(Error::InvalidSpec(format!(
                "{} ranks given for an order-{} series",
                self.ranks.len(),
                shape.len()
            )));
        }
        for (&r, &d) in self.ranks.iter().zip(shape) {
            if r == 0 || r > d {
                return Err(Error::Rank { rank: r, max: d });
            }
        }
        if self.method != Method::Up {
            check_lag(x.len(), self.h0)?;
            if 4 * self.h0 > x.len() {
                if self.allow_long_lag {
                    log::warn!(
                        "h0 = {} exceeds T/4 = {:.2}; estimates may be unreliable",
                        self.h0,
                        x.len() as f64 / 4.0
                    );
                } else {
                    return Err(Error::InvalidSpec(format!(
                        "h0 = {} exceeds T/4 for T = {} (set allow_long_lag to override)",
                        self.h0,
                        x.len()
                    )));
                }
            }
        }
        if self.iter_tol.is_nan() || self.iter_tol < 0.0 {
            return Err(Error::InvalidSpec("iter_tol must be non-negative".into()));
        }
        Ok(())
    }
}

fn check_lag(len: usize, h0: usize) -> Result<()> {
    if h0 == 0 || h0 >= len {
        return Err(Error::Lag { h0, len });
    }
    Ok(())
}

fn check_mode(x: &TensorSeries, mode: usize) -> Result<()> {
    if mode >= x.order() {
        return Err(Error::ModeIndex {
            mode,
            order: x.order(),
        });
    }
    Ok(())
}

/// Estimated loading spaces plus extracted factors.
#[derive(Debug, Clone)]
pub struct FactorEstimate {
    /// Orthonormal `d_k × r_k` bases Û_k.
    pub bases: Vec<Matrix>,
    /// P̂_k = Û_k Û_kᵀ.
    pub projections: Vec<Matrix>,
    /// Singular values of the mode-k estimator matrix, non-increasing.
    pub singular_ladders: Vec<Vec<f64>>,
    /// F̂_t = X_t ×_1 Û_1ᵀ ... ×_K Û_Kᵀ.
    pub factors: TensorSeries,
    pub method: Method,
    pub h0: usize,
    pub iterations_used: usize,
}

impl FactorEstimate {
    pub fn order(&self) -> usize {
        self.bases.len()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.bases.iter().map(|b| b.ncols()).collect()
    }
}

/// Explicit mode-1 unfolding of the order-5 TOPUP tensor for mode `mode`,
/// a `d_k × (d_{-k} d h0)` matrix.
///
/// Block `h` (columns `[(h-1) d_{-k} d, h d_{-k} d)`) is the unfolding of
/// `Σ_t mat_k(X_{t-h}) ⊗ mat_k(X_t) / (T-h)`, column index
/// `j + d_{-k}(i' + d_k j')` for the entry `(i, j, i', j')`.
pub fn topup_matrix(x: &TensorSeries, mode: usize, h0: usize) -> Result<Matrix> {
    check_mode(x, mode)?;
    check_lag(x.len(), h0)?;
    let d = x.slice_len();
    let dk = x.shape()[mode];
    let len = x.len();
    // columns vec(mat_k(X_t)), which is the raw buffer of the stacked unfolding
    let z = Matrix::from_vec(d, len, x.unfold_stacked(mode)?.data.as_vec().clone());
    let mut out = Matrix::zeros(dk, (d / dk) * d * h0);
    for h in 1..=h0 {
        let n = len - h;
        let cross = z.columns(0, n) * z.columns(h, n).transpose() / n as f64;
        let block = DMatrixView::from_slice(cross.as_slice(), dk, (d / dk) * d);
        out.columns_mut((h - 1) * (d / dk) * d, (d / dk) * d)
            .copy_from(&block);
    }
    Ok(out)
}

/// TIPUP matrix for mode `mode`: `[V*_1, ..., V*_h0]`, `d_k × d_k h0`, with
/// `V*_h = Σ_t mat_k(X_{t-h}) mat_k(X_t)ᵀ / (T-h)`.
pub fn tipup_matrix(x: &TensorSeries, mode: usize, h0: usize) -> Result<Matrix> {
    check_mode(x, mode)?;
    check_lag(x.len(), h0)?;
    let dk = x.shape()[mode];
    let blocks = tipup_blocks(x, mode, h0)?;
    let mut out = Matrix::zeros(dk, dk * h0);
    for (h, b) in blocks.iter().enumerate() {
        out.columns_mut(h * dk, dk).copy_from(b);
    }
    Ok(out)
}

fn tipup_blocks(x: &TensorSeries, mode: usize, h0: usize) -> Result<Vec<Matrix>> {
    let u = x.unfold_stacked(mode)?;
    let w = x.slice_len() / x.shape()[mode];
    let len = x.len();
    Ok((1..=h0)
        .map(|h| {
            let n = len - h;
            u.columns(0, w * n) * u.columns(w * h, w * n).transpose() / n as f64
        })
        .collect())
}

/// Gram matrix `Ŵ*_k = Σ_h V*_h V*_hᵀ` of the TIPUP matrix.
pub fn tipup_gram(x: &TensorSeries, mode: usize, h0: usize) -> Result<Matrix> {
    check_mode(x, mode)?;
    check_lag(x.len(), h0)?;
    let dk = x.shape()[mode];
    Ok(tipup_blocks(x, mode, h0)?
        .iter()
        .fold(Matrix::zeros(dk, dk), |acc, v| acc + v * v.transpose()))
}

/// Gram matrix `Ŵ_k` of the TOPUP matrix for one mode.
pub fn topup_gram(x: &TensorSeries, mode: usize, h0: usize) -> Result<Matrix> {
    check_mode(x, mode)?;
    let mut modes = vec![false; x.order()];
    modes[mode] = true;
    Ok(topup_grams_for(x, h0, &modes)?.swap_remove(0))
}

/// TOPUP Gram matrices for every mode from one pass over the lagged cross-products.
pub fn topup_grams(x: &TensorSeries, h0: usize) -> Result<Vec<Matrix>> {
    topup_grams_for(x, h0, &vec![true; x.order()])
}

/// Accumulates `Ŵ_k` for the selected modes.
///
/// The lag-h cross-product `Σ_t vec(X_{t-h}) vec(X_t)ᵀ / (T-h)` is a `d × d`
/// matrix whose rows carry the first tensor's multi-index; `Ŵ_k` sums
/// `mat_k(c) mat_k(c)ᵀ` over its columns `c`, so the columns can be produced
/// and consumed in slabs without ever storing the whole thing.
fn topup_grams_for(x: &TensorSeries, h0: usize, modes: &[bool]) -> Result<Vec<Matrix>> {
    check_lag(x.len(), h0)?;
    let d = x.slice_len();
    let len = x.len();
    let shape = x.shape();
    let slab = if d <= TOPUP_MATERIALIZE_LIMIT {
        d
    } else {
        (TOPUP_SLAB_ENTRIES / d).max(1)
    };
    let selected: Vec<usize> = (0..x.order()).filter(|&k| modes[k]).collect();
    let mut grams: Vec<Matrix> = selected
        .iter()
        .map(|&k| Matrix::zeros(shape[k], shape[k]))
        .collect();
    let data = x.data();
    let mut dims = shape.to_vec();
    dims.push(0);
    for h in 1..=h0 {
        let n = len - h;
        let lead = data.columns(0, n);
        let lagged = data.columns(h, n);
        let scale = 1.0 / (n as f64 * n as f64);
        let mut start = 0;
        while start < d {
            let width = slab.min(d - start);
            let cross = lead * lagged.rows(start, width).transpose();
            *dims.last_mut().unwrap() = width;
            for (g, &k) in grams.iter_mut().zip(&selected) {
                let u = unfold_raw(cross.as_slice(), &dims, k);
                g.gemm(scale, &u, &u.transpose(), 1.0);
            }
            start += width;
        }
    }
    Ok(grams)
}

/// Gram matrix of the mode-k unfolding of the stacked tensor (UP baseline).
pub fn up_gram(x: &TensorSeries, mode: usize) -> Result<Matrix> {
    let u = x.unfold_stacked(mode)?;
    Ok(&u * u.transpose())
}

/// Number of singular values the mode-k estimator matrix has.
fn ladder_len(x: &TensorSeries, mode: usize, method: Method, h0: usize) -> usize {
    let d = x.slice_len();
    let dk = x.shape()[mode];
    let cols = match method.base() {
        Method::Topup => (d / dk) * d * h0,
        Method::Tipup => dk * h0,
        _ => (d / dk) * x.len(),
    };
    dk.min(cols)
}

fn mode_grams(x: &TensorSeries, method: Method, h0: usize, modes: &[bool]) -> Result<Vec<Matrix>> {
    match method.base() {
        Method::Topup => topup_grams_for(x, h0, modes),
        Method::Tipup => (0..x.order())
            .filter(|&k| modes[k])
            .map(|k| tipup_gram(x, k, h0))
            .collect(),
        _ => (0..x.order())
            .filter(|&k| modes[k])
            .map(|k| up_gram(x, k))
            .collect(),
    }
}

/// Per-mode estimator spectra (eigen-decomposed Gram matrices).
pub fn mode_spectra(x: &TensorSeries, method: Method, h0: usize) -> Result<Vec<GramSpectrum>> {
    mode_grams(x, method, h0, &vec![true; x.order()])?
        .iter()
        .map(GramSpectrum::new)
        .collect()
}

fn extract_factors(x: &TensorSeries, bases: &[Matrix]) -> Result<TensorSeries> {
    let ts: Vec<Matrix> = bases.iter().map(|b| b.transpose()).collect();
    let refs: Vec<Option<&Matrix>> = ts.iter().map(Some).collect();
    x.multi_mode_product(&refs)
}

fn check_data(x: &TensorSeries) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::NonFinite("input series"));
    }
    if x.data().iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("series is identically zero".into()));
    }
    Ok(())
}

fn estimate_once(x: &TensorSeries, spec: &ModelSpec, method: Method) -> Result<FactorEstimate> {
    let spectra = mode_spectra(x, method, spec.h0)?;
    let mut bases = Vec::with_capacity(x.order());
    let mut projections = Vec::with_capacity(x.order());
    let mut ladders = Vec::with_capacity(x.order());
    for (k, spectrum) in spectra.iter().enumerate() {
        let basis = spectrum.top(spec.ranks[k])?.left_vectors;
        projections.push(projection_from_basis(&basis)?);
        bases.push(basis);
        ladders.push(spectrum.singular_ladder(ladder_len(x, k, method, spec.h0)));
    }
    let factors = extract_factors(x, &bases)?;
    Ok(FactorEstimate {
        bases,
        projections,
        singular_ladders: ladders,
        factors,
        method,
        h0: spec.h0,
        iterations_used: 0,
    })
}

/// Non-iterative loading-space estimate; iterative methods are forwarded to
/// [`estimate_iterative`].
pub fn estimate(x: &TensorSeries, spec: &ModelSpec) -> Result<FactorEstimate> {
    if spec.method.is_iterative() {
        return estimate_iterative(x, spec);
    }
    spec.validate(x)?;
    check_data(x)?;
    estimate_once(x, spec, spec.method)
}

/// iTOPUP / iTIPUP.
///
/// Starts from the non-iterative estimate, then sweeps k = 1..K in order,
/// re-estimating mode k from `X_t ×_{j≠k} Û_jᵀ` with the most recent bases.
/// Stops when no projection moves by `iter_tol` or more in a sweep, or after
/// `max_iter` sweeps.
pub fn estimate_iterative(x: &TensorSeries, spec: &ModelSpec) -> Result<FactorEstimate> {
    if !spec.method.is_iterative() {
        return Err(Error::InvalidSpec(format!(
            "{} is not an iterative method",
            spec.method
        )));
    }
    spec.validate(x)?;
    check_data(x)?;
    let base = spec.method.base();
    let mut est = estimate_once(x, spec, base)?;
    est.method = spec.method;
    let order = x.order();
    for sweep in 1..=spec.max_iter {
        let mut moved: f64 = 0.0;
        for k in 0..order {
            let ts: Vec<Option<Matrix>> = (0..order)
                .map(|j| (j != k).then(|| est.bases[j].transpose()))
                .collect();
            let refs: Vec<Option<&Matrix>> = ts.iter().map(Option::as_ref).collect();
            let compressed = x.multi_mode_product(&refs)?;
            let mut modes = vec![false; order];
            modes[k] = true;
            let gram = mode_grams(&compressed, base, spec.h0, &modes)?.swap_remove(0);
            let spectrum = GramSpectrum::new(&gram)?;
            let basis = spectrum.top(spec.ranks[k])?.left_vectors;
            let projection = projection_from_basis(&basis)?;
            moved = moved.max(projection_distance(&projection, &est.projections[k]));
            est.singular_ladders[k] =
                spectrum.singular_ladder(ladder_len(&compressed, k, base, spec.h0));
            est.bases[k] = basis;
            est.projections[k] = projection;
        }
        est.iterations_used = sweep;
        if moved < spec.iter_tol {
            break;
        }
    }
    est.factors = extract_factors(x, &est.bases)?;
    Ok(est)
}

/// Low-rank signal `M̂_t = F̂_t ×_1 Û_1 ... ×_K Û_K = X_t ×_k P̂_k`.
pub fn reconstruct_signal(est: &FactorEstimate) -> Result<TensorSeries> {
    let refs: Vec<Option<&Matrix>> = est.bases.iter().map(Some).collect();
    est.factors.multi_mode_product(&refs)
}

/// Diagnostic attached to a selected rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankFlag {
    /// A clear gap was found.
    Clear,
    /// The ladder vanishes beyond its first entry (or entirely); rank 1 returned.
    Degenerate,
    /// The best eigenvalue ratio is below [`WEAK_GAP_RATIO`]; no convincing signal.
    WeakGap,
}

/// Best ratios below this are reported as [`RankFlag::WeakGap`].
pub const WEAK_GAP_RATIO: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSelection {
    pub ranks: Vec<usize>,
    pub flags: Vec<RankFlag>,
    /// Best ladder ratio per mode (infinite when the ladder drops to zero).
    pub ratios: Vec<f64>,
}

/// Eigenvalue-ratio rank choice: `argmax_{1≤m≤len/2} ladder[m]/ladder[m+1]` (1-based).
///
/// Entries below `1e-12 × ladder[0]` count as zero; a zero denominator gives
/// an infinite ratio and ties go to the smallest m.
pub fn rank_from_ladder(ladder: &[f64]) -> (usize, RankFlag, f64) {
    let top = ladder.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return (1, RankFlag::Degenerate, f64::NAN);
    }
    let floor = 1e-12 * top;
    let clean: Vec<f64> = ladder
        .iter()
        .map(|&v| if v.abs() <= floor { 0.0 } else { v })
        .collect();
    if clean.len() < 2 || clean[1] == 0.0 {
        return (1, RankFlag::Degenerate, f64::INFINITY);
    }
    let max_m = (clean.len() / 2).max(1);
    let mut best = (1, f64::NEG_INFINITY);
    for m in 1..=max_m.min(clean.len() - 1) {
        let ratio = if clean[m] == 0.0 {
            f64::INFINITY
        } else {
            clean[m - 1] / clean[m]
        };
        if ratio > best.1 {
            best = (m, ratio);
        }
    }
    let flag = if best.1 < WEAK_GAP_RATIO {
        RankFlag::WeakGap
    } else {
        RankFlag::Clear
    };
    (best.0, flag, best.1)
}

/// Per-mode ranks from the estimator ladders of `method` (iterative methods use their base).
pub fn select_ranks(x: &TensorSeries, h0: usize, method: Method) -> Result<RankSelection> {
    if method.base() != Method::Up {
        check_lag(x.len(), h0)?;
    }
    check_data(x)?;
    let spectra = mode_spectra(x, method, h0)?;
    let mut sel = RankSelection {
        ranks: Vec::new(),
        flags: Vec::new(),
        ratios: Vec::new(),
    };
    for (k, s) in spectra.iter().enumerate() {
        let ladder = s.singular_ladder(ladder_len(x, k, method, h0));
        let (r, flag, ratio) = rank_from_ladder(&ladder);
        sel.ranks.push(r);
        sel.flags.push(flag);
        sel.ratios.push(ratio);
    }
    Ok(sel)
}
