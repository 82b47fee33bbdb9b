//! Monte-Carlo runner: generate, estimate with every method, record losses.
//!
//! Each (cell, replicate) pair is an independent task whose seed is derived
//! from the base seed, so results do not depend on how tasks are scheduled.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{gen_series, replicate_seed, DgpSpec, LoadingMode};
use crate::diagnostics::loss_projection;
use crate::error::{Error, Result};
use crate::estimators::{estimate, Method, ModelSpec};
use crate::spectral::projection_onto;

/// Largest slice size `simulate` accepts without `--force`.
pub const MAX_SLICE_LEN: usize = 1 << 14;
/// Longest series `simulate` accepts without `--force`.
pub const MAX_SERIES_LEN: usize = 1 << 15;

fn default_h0() -> Vec<usize> {
    vec![1]
}

fn default_methods() -> Vec<Method> {
    vec![Method::Topup, Method::Tipup]
}

fn default_max_iter() -> usize {
    50
}

fn default_iter_tol() -> f64 {
    1e-8
}

fn default_one() -> f64 {
    1.0
}

/// The simulation grid. Cells are the Cartesian product of `lens`, `dims`
/// and `lambdas`; every method is run for every lag window in `h0`
/// (UP once, as it uses no lags).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentGrid {
    /// Series lengths T.
    pub lens: Vec<usize>,
    /// Tensor shapes, e.g. `[[16, 16]]`.
    pub dims: Vec<Vec<usize>>,
    pub lambdas: Vec<f64>,
    /// Ranks shared by every shape.
    pub ranks: Vec<usize>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_h0")]
    pub h0: Vec<usize>,
    /// AR coefficients, one or one per factor entry.
    pub ar_coeffs: Vec<f64>,
    #[serde(default)]
    pub noise_offdiag: f64,
    #[serde(default = "default_one")]
    pub noise_scale: f64,
    #[serde(default)]
    pub loading_mode: LoadingMode,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_iter_tol")]
    pub iter_tol: f64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// Grid coordinates of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub len: usize,
    pub dims: Vec<usize>,
    pub lambda: f64,
}

impl ExperimentGrid {
    pub fn from_toml(text: &str) -> Result<Self> {
        let grid: ExperimentGrid =
            toml::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("grid serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.into()));
        if self.lens.is_empty() || self.dims.is_empty() || self.lambdas.is_empty() {
            return bad("grid needs at least one T, one shape and one λ");
        }
        if self.lens.contains(&0) || self.lambdas.iter().any(|&l| l.is_nan() || l <= 0.0) {
            return bad("grid values must be positive");
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1");
        }
        if self.methods.is_empty() {
            return bad("no methods listed");
        }
        if self.h0.is_empty() || self.h0.contains(&0) {
            return bad("h0 values must be positive");
        }
        for cell in self.cells() {
            self.dgp_spec(&cell, 0).validate()?;
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for dims in &self.dims {
            for &lambda in &self.lambdas {
                for &len in &self.lens {
                    out.push(Cell {
                        index: out.len(),
                        len,
                        dims: dims.clone(),
                        lambda,
                    });
                }
            }
        }
        out
    }

    /// Cells beyond the desk-scale limits.
    pub fn oversized(&self) -> Vec<Cell> {
        self.cells()
            .into_iter()
            .filter(|c| c.dims.iter().product::<usize>() > MAX_SLICE_LEN || c.len > MAX_SERIES_LEN)
            .collect()
    }

    pub fn dgp_spec(&self, cell: &Cell, seed: u64) -> DgpSpec {
        DgpSpec {
            dims: cell.dims.clone(),
            ranks: self.ranks.clone(),
            lambda: cell.lambda,
            ar_coeffs: self.ar_coeffs.clone(),
            noise_offdiag: self.noise_offdiag,
            noise_scale: self.noise_scale,
            len: cell.len,
            seed,
            loading_mode: self.loading_mode,
            burn_in: 200,
        }
    }

    /// `(method, h0)` pairs run on every replicate; UP carries h0 = 0.
    pub fn fits(&self) -> Vec<(Method, usize)> {
        let mut out = Vec::new();
        for &m in &self.methods {
            if m == Method::Up {
                out.push((m, 0));
            } else {
                out.extend(self.h0.iter().map(|&h| (m, h)));
            }
        }
        out
    }
}

/// One loss of one fit on one replicate. `loss` is empty when the fit failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub cell: usize,
    pub replicate: usize,
    pub seed: u64,
    #[serde(rename = "T")]
    pub len: usize,
    pub dims: String,
    pub lambda: f64,
    pub method: Method,
    pub h0: usize,
    /// One-based mode number.
    pub mode: usize,
    pub loss: Option<f64>,
    pub iterations: usize,
    pub error: Option<String>,
}

/// Aggregate over replicates of one (cell, method, h0, mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cell: usize,
    #[serde(rename = "T")]
    pub len: usize,
    pub dims: String,
    pub lambda: f64,
    pub method: Method,
    pub h0: usize,
    pub mode: usize,
    pub replicates: usize,
    pub failures: usize,
    pub mean: f64,
    pub median: f64,
}

fn dims_label(dims: &[usize]) -> String {
    dims.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

fn run_replicate(grid: &ExperimentGrid, cell: &Cell, replicate: usize) -> Vec<ReplicateRow> {
    let seed = replicate_seed(grid.seed, cell.index as u64, replicate as u64);
    let row = |method, h0, mode, loss, iterations, error| ReplicateRow {
        cell: cell.index,
        replicate,
        seed,
        len: cell.len,
        dims: dims_label(&cell.dims),
        lambda: cell.lambda,
        method,
        h0,
        mode,
        loss,
        iterations,
        error,
    };
    let order = cell.dims.len();
    let fits = grid.fits();
    let (x, truth) = match gen_series(&grid.dgp_spec(cell, seed)) {
        Ok(v) => v,
        Err(e) => {
            return fits
                .iter()
                .flat_map(|&(m, h)| (1..=order).map(move |k| (m, h, k)))
                .map(|(m, h, k)| row(m, h, k, None, 0, Some(e.to_string())))
                .collect()
        }
    };
    let targets: Vec<_> = truth.loadings.iter().map(projection_onto).collect();
    let mut out = Vec::with_capacity(fits.len() * order);
    for (method, h0) in fits {
        let spec = ModelSpec {
            ranks: grid.ranks.clone(),
            h0: h0.max(1),
            method,
            max_iter: grid.max_iter,
            iter_tol: grid.iter_tol,
            allow_long_lag: false,
        };
        match estimate(&x, &spec) {
            Ok(est) => {
                for (k, target) in targets.iter().enumerate() {
                    let loss = loss_projection(&est.projections[k], target);
                    let (loss, err) = match loss {
                        Ok(l) => (Some(l), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    out.push(row(method, h0, k + 1, loss, est.iterations_used, err));
                }
            }
            Err(e) => {
                for k in 0..order {
                    out.push(row(method, h0, k + 1, None, 0, Some(e.to_string())));
                }
            }
        }
    }
    out
}

/// Runs every replicate of every cell; rows are in (cell, replicate, fit,
/// mode) order whatever the size of the thread pool.
pub fn run_experiment(grid: &ExperimentGrid) -> Result<Vec<ReplicateRow>> {
    grid.validate()?;
    let cells = grid.cells();
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..grid.replicates).map(move |r| (c, r)))
        .collect();
    let rows: Vec<Vec<ReplicateRow>> = tasks
        .par_iter()
        .map(|&(c, r)| run_replicate(grid, &cells[c], r))
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Mean and median per (cell, method, h0, mode), in first-appearance order.
pub fn summarize(rows: &[ReplicateRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(usize, Method, usize, usize)> = Vec::new();
    let mut groups: std::collections::HashMap<(usize, Method, usize, usize), Vec<&ReplicateRow>> =
        std::collections::HashMap::new();
    for r in rows {
        let key = (r.cell, r.method, r.h0, r.mode);
        groups
            .entry(key)
            .or_insert_with(|| {
                keys.push(key);
                Vec::new()
            })
            .push(r);
    }
    keys.iter()
        .map(|key| {
            let g = &groups[key];
            let mut losses: Vec<f64> = g.iter().filter_map(|r| r.loss).collect();
            let mean = losses.iter().sum::<f64>() / losses.len() as f64;
            let first = g[0];
            SummaryRow {
                cell: first.cell,
                len: first.len,
                dims: first.dims.clone(),
                lambda: first.lambda,
                method: first.method,
                h0: first.h0,
                mode: first.mode,
                replicates: g.len(),
                failures: g.len() - losses.len(),
                mean,
                median: median(&mut losses),
            }
        })
        .collect()
}

pub fn write_table<T: Serialize, W: std::io::Write>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table<T: serde::de::DeserializeOwned, R: std::io::Read>(reader: R) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}
