//! Fit of the two-term rate model
//!
//! `log2 L ≈ log2(c1 d1^c2 d2^c3 λ^c4 T^c5 + c6 d1^c7 d2^c8 λ^c9 T^c10)`
//!
//! to averaged Monte-Carlo losses, by multi-start damped Gauss-Newton on the
//! squared residuals in log2 scale. `c1` and `c6` are fitted on the log scale
//! so they stay positive.
//!
//! When every record has `d1 = d2`, only `c2 + c3` and `c7 + c8` are
//! identified; the fitted sums are then split so that `c2 - c3` and
//! `c7 - c8` equal their theoretical values, which leaves the objective
//! unchanged.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::predicted_rate;
use crate::error::{Error, Result};
use crate::estimators::Method;
use crate::tensor::Matrix;

const LN2: f64 = std::f64::consts::LN_2;

/// One design point with the mean loss over its replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRecord {
    pub d1: f64,
    pub d2: f64,
    pub lambda: f64,
    #[serde(rename = "T")]
    pub len: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFitResult {
    /// `c1..c10`; `c1, c6 > 0` and `c4 >= c9` (block 1 decays slower in λ).
    pub coefficients: [f64; 10],
    /// Sum of squared log2 residuals.
    pub residual_sse: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    /// Index of the start that produced the fit; 0 is the theoretical start.
    pub start_index: usize,
    /// Objective at the start and after every accepted step of that start.
    pub objective_trace: Vec<f64>,
    /// False when all records have `d1 = d2`, so the `c2/c3` and `c7/c8`
    /// splits come from the theoretical exponents rather than the data.
    pub split_identified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
    pub starts: usize,
    /// Starting exponents `(c2..c5, c7..c10)`, used as start 0.
    pub theory: [f64; 8],
    pub seed: u64,
}

impl FitOptions {
    /// Defaults with the theoretical exponents of `method` as the first start.
    pub fn for_method(method: Method) -> Self {
        let theory = match method.base() {
            Method::Topup => [0.5, 0.5, -1.0, -0.5, 0.5, 1.0, -2.0, -0.5],
            _ => [0.5, 0.0, -1.0, -0.5, 0.5, 0.5, -2.0, -0.5],
        };
        FitOptions {
            grad_tol: 1e-9,
            max_iter: 500,
            starts: 12,
            theory,
            seed: 0x07a7_ef17,
        }
    }
}

struct Design {
    /// Rows `(log2 d1, log2 d2, log2 λ, log2 T)`.
    x: Vec<[f64; 4]>,
    y: Vec<f64>,
}

fn check_records(records: &[RateRecord]) -> Result<Design> {
    if records.len() < 20 {
        return Err(Error::FitData(format!(
            "{} records, at least 20 are needed",
            records.len()
        )));
    }
    let mut x = Vec::with_capacity(records.len());
    let mut y = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let vals = [r.d1, r.d2, r.lambda, r.len, r.mean_loss];
        if vals.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::FitData(format!(
                "record {i} has a non-positive or non-finite field"
            )));
        }
        x.push([r.d1.log2(), r.d2.log2(), r.lambda.log2(), r.len.log2()]);
        y.push(r.mean_loss.log2());
    }
    let distinct = |col: usize| {
        let mut v: Vec<f64> = x.iter().map(|row| row[col]).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    };
    if distinct(2) < 3 || distinct(3) < 3 {
        return Err(Error::FitData(
            "need at least 3 distinct values of both λ and T".into(),
        ));
    }
    Ok(Design { x, y })
}

/// Parameter vector layout: `[ln c1, c2..c5, ln c6, c7..c10]`.
fn predict(theta: &[f64; 10], x: &[f64; 4]) -> (f64, f64, f64) {
    let s1 = theta[0] / LN2 + (0..4).map(|j| theta[1 + j] * x[j]).sum::<f64>();
    let s2 = theta[5] / LN2 + (0..4).map(|j| theta[6 + j] * x[j]).sum::<f64>();
    let hi = s1.max(s2);
    let gap = -(s1 - s2).abs();
    let yhat = hi + (1.0 + gap.exp2()).log2();
    // weight of the first term in the sum
    let w1 = 1.0 / (1.0 + (s2 - s1).exp2());
    (yhat, w1, 1.0 - w1)
}

fn sse(theta: &[f64; 10], d: &Design) -> f64 {
    d.x.iter()
        .zip(&d.y)
        .map(|(x, y)| (predict(theta, x).0 - y).powi(2))
        .sum()
}

/// Residuals and Jacobian of the residuals.
fn linearize(theta: &[f64; 10], d: &Design) -> (Vec<f64>, Matrix) {
    let n = d.y.len();
    let mut r = Vec::with_capacity(n);
    let mut jac = Matrix::zeros(n, 10);
    for (i, (x, y)) in d.x.iter().zip(&d.y).enumerate() {
        let (yhat, w1, w2) = predict(theta, x);
        r.push(yhat - y);
        jac[(i, 0)] = w1 / LN2;
        jac[(i, 5)] = w2 / LN2;
        for j in 0..4 {
            jac[(i, 1 + j)] = w1 * x[j];
            jac[(i, 6 + j)] = w2 * x[j];
        }
    }
    (r, jac)
}

struct Run {
    theta: [f64; 10],
    sse: f64,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    gradient_norm: f64,
}

fn levenberg_marquardt(start: [f64; 10], d: &Design, opts: &FitOptions) -> Run {
    let mut theta = start;
    let mut cost = sse(&theta, d);
    let mut trace = vec![cost];
    let mut mu = 1e-3;
    let mut gnorm = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let (r, jac) = linearize(&theta, d);
        let rv = nalgebra::DVector::from_vec(r);
        let grad = jac.transpose() * &rv;
        gnorm = grad.norm();
        if gnorm < opts.grad_tol {
            break;
        }
        iterations += 1;
        let jtj = jac.transpose() * &jac;
        let mut accepted = false;
        while mu < 1e12 {
            let mut a = jtj.clone();
            for j in 0..10 {
                a[(j, j)] += mu * jtj[(j, j)].max(1e-12);
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    mu *= 4.0;
                    continue;
                }
            };
            let mut trial = theta;
            for j in 0..10 {
                trial[j] += step[j];
            }
            let c = sse(&trial, d);
            if c.is_finite() && c < cost {
                theta = trial;
                cost = c;
                trace.push(c);
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                break;
            }
            mu *= 4.0;
        }
        if !accepted {
            break;
        }
    }
    Run {
        theta,
        sse: cost,
        trace,
        iterations,
        converged: gnorm < opts.grad_tol,
        gradient_norm: gnorm,
    }
}

fn starts(opts: &FitOptions) -> Vec<[f64; 10]> {
    let t = opts.theory;
    let theory = [0.0, t[0], t[1], t[2], t[3], 0.0, t[4], t[5], t[6], t[7]];
    let mut swapped = theory;
    swapped[..5].copy_from_slice(&theory[5..]);
    swapped[5..].copy_from_slice(&theory[..5]);
    let mut out = vec![theory, swapped, [0.0; 10]];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let noise = Normal::new(0.0, 0.5).unwrap();
    while out.len() < opts.starts.max(8) {
        let mut s = theory;
        for v in s.iter_mut() {
            *v += noise.sample(&mut rng);
        }
        out.push(s);
    }
    out
}

fn canonical(theta: [f64; 10]) -> [f64; 10] {
    let mut c = theta;
    c[0] = theta[0].exp();
    c[5] = theta[5].exp();
    if c[3] < c[8] {
        let first: [f64; 5] = c[..5].try_into().unwrap();
        c.copy_within(5..10, 0);
        c[5..].copy_from_slice(&first);
    }
    c
}

/// Fits the rate model with explicit options.
pub fn fit_rate_model_with(records: &[RateRecord], opts: &FitOptions) -> Result<RateFitResult> {
    let design = check_records(records)?;
    let runs: Vec<Run> = starts(opts)
        .into_par_iter()
        .map(|s| levenberg_marquardt(s, &design, opts))
        .collect();
    let mut best = 0;
    for (i, run) in runs.iter().enumerate().skip(1) {
        let b = runs[best].sse;
        if run.sse < b - 1e-8 * b.max(f64::MIN_POSITIVE) {
            best = i;
        }
    }
    let run = &runs[best];
    if !run.sse.is_finite() {
        return Err(Error::FitData("rate fit diverged from every start".into()));
    }
    let mut coefficients = canonical(run.theta);
    let split_identified = records.iter().any(|r| r.d1 != r.d2);
    if !split_identified {
        let t = opts.theory;
        for (at, diff) in [(1, t[0] - t[1]), (6, t[4] - t[5])] {
            let sum = coefficients[at] + coefficients[at + 1];
            coefficients[at] = 0.5 * (sum + diff);
            coefficients[at + 1] = 0.5 * (sum - diff);
        }
    }
    Ok(RateFitResult {
        coefficients,
        residual_sse: run.sse,
        iterations: run.iterations,
        converged: run.converged,
        gradient_norm: run.gradient_norm,
        start_index: best,
        objective_trace: run.trace.clone(),
        split_identified,
    })
}

/// Fits the rate model starting from the theoretical exponents of `method`.
pub fn fit_rate_model(records: &[RateRecord], method: Method) -> Result<RateFitResult> {
    fit_rate_model_with(records, &FitOptions::for_method(method))
}

/// Model value `log2 L` at a design point for canonical coefficients.
pub fn rate_model_log2(c: &[f64; 10], r: &RateRecord) -> f64 {
    let mut theta = *c;
    theta[0] = c[0].ln();
    theta[5] = c[5].ln();
    predict(
        &theta,
        &[r.d1.log2(), r.d2.log2(), r.lambda.log2(), r.len.log2()],
    )
    .0
}

/// Sum of squared log2 residuals of canonical coefficients `c` on `records`.
pub fn rate_objective(c: &[f64; 10], records: &[RateRecord]) -> f64 {
    records
        .iter()
        .map(|r| (rate_model_log2(c, r) - r.mean_loss.log2()).powi(2))
        .sum()
}

/// A point of the empirical-versus-theoretical rate surface, all in log2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    /// First (1/λ) rate term.
    pub x: f64,
    /// Second (1/λ²) rate term.
    pub y: f64,
    /// Mean observed loss.
    pub z: f64,
    /// Number of records averaged into this point.
    pub count: usize,
}

/// Log2 rate terms of `method` against log2 mean loss, averaged over records
/// that share the same rate terms, sorted by `(x, y)`.
pub fn emit_rate_surface(records: &[RateRecord], method: Method) -> Result<Vec<SurfacePoint>> {
    let mut pts = Vec::with_capacity(records.len());
    for r in records {
        if r.mean_loss.is_nan() || r.mean_loss <= 0.0 {
            return Err(Error::FitData("mean loss must be positive".into()));
        }
        let (a, b) = predicted_rate(method, r.d1, r.d2, r.lambda, r.len)?;
        pts.push((a.log2(), b.log2(), r.mean_loss.log2()));
    }
    pts.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
    let mut out: Vec<SurfacePoint> = Vec::new();
    for (x, y, z) in pts {
        match out.last_mut() {
            Some(last) if (last.x - x).abs() < 1e-9 && (last.y - y).abs() < 1e-9 => {
                last.z += z;
                last.count += 1;
            }
            _ => out.push(SurfacePoint { x, y, z, count: 1 }),
        }
    }
    for p in &mut out {
        p.z /= p.count as f64;
    }
    Ok(out)
}
