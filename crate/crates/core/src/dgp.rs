//! Simulated tensor factor series: `X_t = λ (F_t ×_1 A_1 ... ×_K A_K) + E_t`
//! with independent AR(1) factor entries and Kronecker-structured white noise
//! `E_t = Z_t ×_1 Ψ_1^{1/2} ... ×_K Ψ_K^{1/2}`.
//!
//! Loadings, factors and noise are drawn from separate ChaCha streams of the
//! same seed, so e.g. changing the noise correlation leaves the factors alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::sym_sqrt;
use crate::tensor::{Matrix, TensorSeries};

const LOADING_STREAM: u64 = 0;
const FACTOR_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// How loading matrices are drawn from i.i.d. N(0,1) entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadingMode {
    /// Every column scaled to unit norm.
    #[default]
    GaussianNormalized,
    /// Columns orthonormalized by QR.
    Orthonormal,
}

fn default_noise_scale() -> f64 {
    1.0
}

fn default_burn_in() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub dims: Vec<usize>,
    pub ranks: Vec<usize>,
    /// Signal strength λ; zero gives pure noise.
    pub lambda: f64,
    /// AR(1) coefficient per factor entry (in canonical order), or a single
    /// value shared by all entries.
    pub ar_coeffs: Vec<f64>,
    /// Off-diagonal ρ of the equicorrelated Ψ_k (unit diagonal).
    pub noise_offdiag: f64,
    /// Multiplies the noise; zero gives an exactly low-rank series.
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    /// Series length T.
    pub len: usize,
    pub seed: u64,
    #[serde(default)]
    pub loading_mode: LoadingMode,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

impl DgpSpec {
    /// Rank-one matrix model `λ u_1 f_t u_2ᵀ + E_t` with Ψ_1 = Ψ_2.
    pub fn rank_one(
        d1: usize,
        d2: usize,
        lambda: f64,
        phi: f64,
        rho: f64,
        len: usize,
        seed: u64,
    ) -> Self {
        DgpSpec {
            dims: vec![d1, d2],
            ranks: vec![1, 1],
            lambda,
            ar_coeffs: vec![phi],
            noise_offdiag: rho,
            noise_scale: 1.0,
            len,
            seed,
            loading_mode: LoadingMode::GaussianNormalized,
            burn_in: default_burn_in(),
        }
    }

    pub fn factor_count(&self) -> usize {
        self.ranks.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.len() != self.ranks.len() {
            return Err(Error::InvalidSpec(format!(
                "dims {:?} and ranks {:?} must be non-empty and of equal length",
                self.dims, self.ranks
            )));
        }
        for (&d, &r) in self.dims.iter().zip(&self.ranks) {
            if d == 0 || r == 0 || r > d {
                return Err(Error::InvalidSpec(format!(
                    "rank {r} is not within 1..={d}"
                )));
            }
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "lambda = {} must be >= 0",
                self.lambda
            )));
        }
        let n = self.factor_count();
        if self.ar_coeffs.len() != 1 && self.ar_coeffs.len() != n {
            return Err(Error::InvalidSpec(format!(
                "{} AR coefficients given for {n} factor entries",
                self.ar_coeffs.len()
            )));
        }
        if let Some(phi) = self.ar_coeffs.iter().find(|p| p.is_nan() || p.abs() >= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "AR coefficient {phi} is not stationary"
            )));
        }
        if !(0.0..1.0).contains(&self.noise_offdiag) {
            return Err(Error::InvalidSpec(format!(
                "noise_offdiag = {} must lie in [0, 1)",
                self.noise_offdiag
            )));
        }
        if self.noise_scale.is_nan() || self.noise_scale < 0.0 {
            return Err(Error::InvalidSpec("noise_scale must be >= 0".into()));
        }
        if self.len == 0 {
            return Err(Error::InvalidSpec("series length must be positive".into()));
        }
        Ok(())
    }

    fn ar_coeff(&self, i: usize) -> f64 {
        if self.ar_coeffs.len() == 1 {
            self.ar_coeffs[0]
        } else {
            self.ar_coeffs[i]
        }
    }
}

/// Everything needed to score an estimate against the generating model.
#[derive(Debug, Clone)]
pub struct Truth {
    pub loadings: Vec<Matrix>,
    pub factors: TensorSeries,
    /// λ (F_t ×_k A_k), the noise-free signal.
    pub signal: TensorSeries,
}

/// RNG for one named sub-stream of a seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for replicate `replicate` of experiment cell `cell`.
///
/// Depends only on its arguments, so any scheduling of replicates across
/// workers reproduces the same ensemble.
pub fn replicate_seed(base: u64, cell: u64, replicate: u64) -> u64 {
    mix(mix(mix(base) ^ cell) ^ replicate)
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn gen_loadings(spec: &DgpSpec) -> Result<Vec<Matrix>> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, LOADING_STREAM);
    Ok(spec
        .dims
        .iter()
        .zip(&spec.ranks)
        .map(|(&d, &r)| {
            let raw = normal_matrix(&mut rng, d, r);
            match spec.loading_mode {
                LoadingMode::GaussianNormalized => {
                    let mut a = raw;
                    for mut col in a.column_iter_mut() {
                        let n = col.norm();
                        col /= n;
                    }
                    a
                }
                LoadingMode::Orthonormal => {
                    let qr = raw.qr();
                    let r_diag = qr.r().diagonal();
                    let mut q = qr.q();
                    for (j, mut col) in q.column_iter_mut().enumerate() {
                        if r_diag[j] < 0.0 {
                            col.neg_mut();
                        }
                    }
                    q
                }
            }
        })
        .collect())
}

/// Independent stationary AR(1) series, one per factor entry.
///
/// Each starts from its stationary law N(0, 1/(1-φ²)) and runs `burn_in`
/// unrecorded steps before the T recorded ones.
pub fn gen_factor_series(spec: &DgpSpec) -> Result<TensorSeries> {
    spec.validate()?;
    let n = spec.factor_count();
    let mut rng = stream_rng(spec.seed, FACTOR_STREAM);
    let phis: Vec<f64> = (0..n).map(|i| spec.ar_coeff(i)).collect();
    let mut state: Vec<f64> = phis
        .iter()
        .map(|&phi| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z / (1.0 - phi * phi).sqrt()
        })
        .collect();
    let mut step = |state: &mut Vec<f64>| {
        for (f, &phi) in state.iter_mut().zip(&phis) {
            let e: f64 = StandardNormal.sample(&mut rng);
            *f = phi * *f + e;
        }
    };
    for _ in 0..spec.burn_in {
        step(&mut state);
    }
    let mut data = Matrix::zeros(n, spec.len);
    for t in 0..spec.len {
        step(&mut state);
        data.column_mut(t).copy_from_slice(&state);
    }
    TensorSeries::new(spec.ranks.clone(), data)
}

/// Equicorrelated covariance with unit diagonal and off-diagonal `rho`.
pub fn equicorrelated(d: usize, rho: f64) -> Matrix {
    Matrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { rho })
}

pub fn gen_noise_series(spec: &DgpSpec) -> Result<TensorSeries> {
    spec.validate()?;
    let d: usize = spec.dims.iter().product();
    let mut rng = stream_rng(spec.seed, NOISE_STREAM);
    let z = normal_matrix(&mut rng, d, spec.len);
    let mut noise = TensorSeries::new(spec.dims.clone(), z)?;
    if spec.noise_offdiag != 0.0 {
        for (k, &dk) in spec.dims.iter().enumerate() {
            let root = sym_sqrt(&equicorrelated(dk, spec.noise_offdiag))?;
            noise = noise.mode_product(&root, k)?;
        }
    }
    if spec.noise_scale != 1.0 {
        noise.scale(spec.noise_scale);
    }
    Ok(noise)
}

/// Generates the observed series together with its ground truth.
pub fn gen_series(spec: &DgpSpec) -> Result<(TensorSeries, Truth)> {
    let loadings = gen_loadings(spec)?;
    let factors = gen_factor_series(spec)?;
    let refs: Vec<Option<&Matrix>> = loadings.iter().map(Some).collect();
    let mut signal = factors.multi_mode_product(&refs)?;
    signal.scale(spec.lambda);
    let mut x = signal.clone();
    if spec.noise_scale != 0.0 {
        let noise = gen_noise_series(spec)?;
        *x.data_mut() += noise.data();
    }
    Ok((
        x,
        Truth {
            loadings,
            factors,
            signal,
        },
    ))
}

/// Sample autocovariances `Σ_{t>h} f_{t-h} f_t / (T-h)` for `h = 0..=h0`.
pub fn factor_autocov(f: &[f64], h0: usize) -> Vec<f64> {
    let n = f.len();
    (0..=h0.min(n.saturating_sub(1)))
        .map(|h| {
            let s: f64 = f[..n - h].iter().zip(&f[h..]).map(|(a, b)| a * b).sum();
            s / (n - h) as f64
        })
        .collect()
}
