//! Signal-strength quantities that drive the error bounds, loss functions
//! and the theoretical rates.
//!
//! Quantities are computed from a series that is taken to be the signal
//! `M_t`: the true signal when it is known (simulation), or the observed
//! series as a plug-in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{tipup_gram, topup_grams, Method};
use crate::spectral::{projection_distance, spectral_norm, symmetric_spectral_norm, GramSpectrum};
use crate::tensor::{Matrix, TensorSeries};

/// Whether a report was computed from the true signal or the observed data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportSource {
    Signal,
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    /// `‖Θ*_{k,0}‖_S`, top eigenvalue of `Σ_t mat_k(M_t) mat_k(M_t)ᵀ / T`.
    pub theta_star_norm: f64,
    /// `‖Θ_{k,0}‖_op`, the spectral norm of `Σ_t vec(M_t) vec(M_t)ᵀ / T`.
    pub theta_op_norm: f64,
    /// `tr(Θ*_{k,0}) = Σ_t ‖M_t‖²_F / T`.
    pub theta_trace: f64,
    /// Singular values τ_{k,j} of the population TOPUP matrix.
    pub tau: Vec<f64>,
    /// Singular values τ*_{k,j} of the population TIPUP matrix.
    pub tau_star: Vec<f64>,
    /// `λ_k = (τ_{k,r_k} / √h0)^{1/2}`.
    pub lambda: f64,
    /// `λ*_k = (τ*_{k,r_k} / √h0)^{1/2}`.
    pub lambda_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub source: ReportSource,
    pub h0: usize,
    pub ranks: Vec<usize>,
    pub modes: Vec<ModeReport>,
    /// `Σ_t ⟨M_{t-h}, M_t⟩ / (T-h)` for `h = 0..=h0`.
    pub signal_autocov: Vec<f64>,
}

/// `Σ_t vec(mat_k(M_{t-h})) vec(mat_k(M_t))ᵀ / (T-h)`, a `d × d` matrix.
///
/// For `h = 0` this is Θ_{k,0} arranged as a matrix with rows and columns
/// indexed by `(i, j)` of `mat_k`.
pub fn theta_matrix(m: &TensorSeries, mode: usize, h: usize) -> Result<Matrix> {
    let len = m.len();
    if h >= len {
        return Err(Error::Lag { h0: h, len });
    }
    let d = m.slice_len();
    let u = m.unfold_stacked(mode)?;
    let z = Matrix::from_column_slice(d, len, u.as_slice());
    let n = len - h;
    Ok(z.columns(0, n) * z.columns(h, n).transpose() / n as f64)
}

fn ladder(gram: &Matrix, len: usize) -> Result<Vec<f64>> {
    Ok(GramSpectrum::new(gram)?.singular_ladder(len))
}

fn signal_autocov(m: &TensorSeries, h0: usize) -> Vec<f64> {
    let data = m.data();
    let len = m.len();
    (0..=h0)
        .map(|h| {
            let n = len - h;
            let s: f64 = (0..n)
                .map(|t| data.column(t).dot(&data.column(t + h)))
                .sum();
            s / n as f64
        })
        .collect()
}

/// Signal-strength report for the series `m` at lag window `h0` and ranks.
pub fn theory_report(
    m: &TensorSeries,
    ranks: &[usize],
    h0: usize,
    source: ReportSource,
) -> Result<TheoryReport> {
    if ranks.len() != m.order() {
        return Err(Error::Dimension(format!(
            "{} ranks for an order-{} series",
            ranks.len(),
            m.order()
        )));
    }
    if h0 == 0 || h0 >= m.len() {
        return Err(Error::Lag { h0, len: m.len() });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("signal series"));
    }
    let len = m.len() as f64;
    let d = m.slice_len();
    let data = m.data();
    let op = spectral_norm(data)?.powi(2) / len;
    let trace = data.norm_squared() / len;
    let grams = topup_grams(m, h0)?;
    let root_h0 = (h0 as f64).sqrt();
    let mut modes = Vec::with_capacity(m.order());
    for (k, gram) in grams.iter().enumerate() {
        let dk = m.shape()[k];
        let r = ranks[k];
        if r == 0 || r > dk {
            return Err(Error::Rank { rank: r, max: dk });
        }
        let u = m.unfold_stacked(k)?;
        let star = symmetric_spectral_norm(&(&u * u.transpose() / len));
        let tau = ladder(gram, dk.min((d / dk) * d * h0))?;
        let tau_star = ladder(&tipup_gram(m, k, h0)?, dk.min(dk * h0))?;
        let strength = |t: &[f64]| t.get(r - 1).map_or(0.0, |v| (v / root_h0).sqrt());
        modes.push(ModeReport {
            theta_star_norm: star,
            theta_op_norm: op,
            theta_trace: trace,
            lambda: strength(&tau),
            lambda_star: strength(&tau_star),
            tau,
            tau_star,
        });
    }
    Ok(TheoryReport {
        source,
        h0,
        ranks: ranks.to_vec(),
        modes,
        signal_autocov: signal_autocov(m, h0),
    })
}

/// Sine of the angle between two unit vectors, `(1 - (ûᵀu)²)^{1/2}`.
pub fn loss_sine(u_hat: &[f64], u: &[f64]) -> Result<f64> {
    if u_hat.len() != u.len() {
        return Err(Error::Dimension(format!(
            "vectors of length {} and {}",
            u_hat.len(),
            u.len()
        )));
    }
    let c: f64 = u_hat.iter().zip(u).map(|(a, b)| a * b).sum();
    Ok((1.0 - c * c).max(0.0).sqrt())
}

/// `‖P̂ - P‖_S` between two projections.
pub fn loss_projection(p_hat: &Matrix, p: &Matrix) -> Result<f64> {
    if p_hat.shape() != p.shape() || p.nrows() != p.ncols() {
        return Err(Error::Dimension(format!(
            "projections of shape {:?} and {:?}",
            p_hat.shape(),
            p.shape()
        )));
    }
    Ok(projection_distance(p_hat, p))
}

/// The two terms of the theoretical error rate for the rank-one matrix
/// model, in the order (linear in 1/λ, quadratic in 1/λ).
///
/// TIPUP: `(√d1 / (√T λ), √(d1 d2) / (√T λ²))`;
/// TOPUP: `(√(d1 d2) / (√T λ), √(d1 d2²) / (√T λ²))`.
/// Iterated methods use the rate of their base method.
pub fn predicted_rate(
    method: Method,
    d1: f64,
    d2: f64,
    lambda: f64,
    len: f64,
) -> Result<(f64, f64)> {
    let rt = len.sqrt();
    match method.base() {
        Method::Tipup => Ok((
            d1.sqrt() / (rt * lambda),
            (d1 * d2).sqrt() / (rt * lambda * lambda),
        )),
        Method::Topup => Ok((
            (d1 * d2).sqrt() / (rt * lambda),
            (d1 * d2 * d2).sqrt() / (rt * lambda * lambda),
        )),
        other => Err(Error::InvalidSpec(format!(
            "no theoretical rate for {other}"
        ))),
    }
}
