//! Series and matrix files.
//!
//! Long CSV: a comment line `# order=K dims=d1,..,dK [T=n]`, an optional
//! column-name row, then rows `t,i1,..,iK,value` with 1-based indices.
//! Cells that never appear are zero and marked unobserved.
//!
//! Dense binary: magic `TFTS`, u32 version, u32 K, K u64 dims, u64 T, then
//! the d·T values as little-endian f64 in canonical order, slice by slice.
//! A series with unobserved cells is followed by `MASK` and one byte per
//! value (1 observed, 0 not); without it every cell counts as observed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, TensorSeries};

const MAGIC: &[u8; 4] = b"TFTS";
const VERSION: u32 = 1;
const MASK_MAGIC: &[u8; 4] = b"MASK";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesFormat {
    LongCsv,
    DenseBinary,
}

impl SeriesFormat {
    /// `.csv` is long CSV; anything else is dense binary.
    pub fn from_path(path: &Path) -> SeriesFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => SeriesFormat::LongCsv,
            _ => SeriesFormat::DenseBinary,
        }
    }
}

impl std::str::FromStr for SeriesFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "long-csv" | "csv" => Ok(SeriesFormat::LongCsv),
            "dense-binary" | "binary" => Ok(SeriesFormat::DenseBinary),
            _ => Err(Error::InvalidSpec(format!("unknown series format {s:?}"))),
        }
    }
}

/// A series with its observation mask (same layout as the data).
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSeries {
    pub series: TensorSeries,
    pub observed: Vec<bool>,
}

impl LoadedSeries {
    pub fn fully_observed(series: TensorSeries) -> Self {
        let n = series.data().len();
        LoadedSeries {
            series,
            observed: vec![true; n],
        }
    }

    pub fn missing(&self) -> usize {
        self.observed.iter().filter(|o| !**o).count()
    }
}

pub fn load_series(path: &Path, format: SeriesFormat) -> Result<LoadedSeries> {
    let file = BufReader::new(File::open(path)?);
    match format {
        SeriesFormat::LongCsv => read_long_csv(file),
        SeriesFormat::DenseBinary => read_dense_masked(file),
    }
}

pub fn save_series(path: &Path, series: &TensorSeries, format: SeriesFormat) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    match format {
        SeriesFormat::LongCsv => write_long_csv(&mut file, series)?,
        SeriesFormat::DenseBinary => write_dense(&mut file, series)?,
    }
    file.flush()?;
    Ok(())
}

/// Saves a series with its mask; long CSV omits the unobserved cells.
pub fn save_loaded(path: &Path, loaded: &LoadedSeries, format: SeriesFormat) -> Result<()> {
    check_mask(loaded)?;
    let mut file = BufWriter::new(File::create(path)?);
    match format {
        SeriesFormat::LongCsv => write_cells(&mut file, &loaded.series, Some(&loaded.observed))?,
        SeriesFormat::DenseBinary => write_dense_masked(&mut file, loaded)?,
    }
    file.flush()?;
    Ok(())
}

fn check_mask(loaded: &LoadedSeries) -> Result<()> {
    if loaded.observed.len() != loaded.series.data().len() {
        return Err(Error::Dimension(format!(
            "mask has {} entries for {} values",
            loaded.observed.len(),
            loaded.series.data().len()
        )));
    }
    Ok(())
}

struct Header {
    dims: Vec<usize>,
    len: Option<usize>,
}

fn parse_header(line: &str) -> Result<Header> {
    let body = line.trim().strip_prefix('#').ok_or_else(|| Error::Ingest {
        row: 1,
        msg: "expected a '# order=K dims=...' header line".into(),
    })?;
    let bad = |msg: String| Error::Ingest { row: 1, msg };
    let (mut order, mut dims, mut len) = (None, None, None);
    for tok in body.split_whitespace() {
        let (key, val) = tok
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header token {tok:?}")))?;
        match key {
            "order" | "K" => {
                order = Some(
                    val.parse::<usize>()
                        .map_err(|e| bad(format!("order: {e}")))?,
                )
            }
            "dims" => {
                dims = Some(
                    val.split(',')
                        .map(|v| v.trim().parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| bad(format!("dims: {e}")))?,
                )
            }
            "T" => len = Some(val.parse::<usize>().map_err(|e| bad(format!("T: {e}")))?),
            _ => return Err(bad(format!("unknown header key {key:?}"))),
        }
    }
    let dims = dims.ok_or_else(|| bad("header declares no dims".into()))?;
    if let Some(k) = order {
        if k != dims.len() {
            return Err(bad(format!("order={k} but {} dims", dims.len())));
        }
    }
    if dims.is_empty() || dims.contains(&0) {
        return Err(bad("dims must be positive".into()));
    }
    Ok(Header { dims, len })
}

/// Reads a long CSV series.
///
/// Row numbers in errors count physical lines, the header line being 1.
pub fn read_long_csv<R: Read>(reader: R) -> Result<LoadedSeries> {
    let mut reader = BufReader::new(reader);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let header = parse_header(&first)?;
    let order = header.dims.len();
    let d: usize = header.dims.iter().product();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut cells: Vec<(usize, usize, f64, u64)> = Vec::new();
    let mut max_t = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line() + 1);
        if rec.get(0) == Some("t") {
            continue;
        }
        if rec.len() != order + 2 {
            return Err(Error::Ingest {
                row: row as usize,
                msg: format!("expected {} fields, found {}", order + 2, rec.len()),
            });
        }
        let ingest = |msg: String| Error::Ingest {
            row: row as usize,
            msg,
        };
        let mut idx = Vec::with_capacity(order + 1);
        for (j, field) in rec.iter().take(order + 1).enumerate() {
            let v: usize = field
                .parse()
                .map_err(|_| ingest(format!("field {} is not an index: {field:?}", j + 1)))?;
            let bound = if j == 0 {
                header.len.unwrap_or(usize::MAX)
            } else {
                header.dims[j - 1]
            };
            if v == 0 || v > bound {
                return Err(ingest(format!(
                    "index {v} in field {} is out of range",
                    j + 1
                )));
            }
            idx.push(v - 1);
        }
        let value: f64 = rec[order + 1]
            .parse()
            .map_err(|_| ingest(format!("value {:?} is not a number", &rec[order + 1])))?;
        let mut lin = 0;
        for k in (0..order).rev() {
            lin = lin * header.dims[k] + idx[k + 1];
        }
        max_t = max_t.max(idx[0] + 1);
        cells.push((idx[0], lin, value, row));
    }
    let len = header.len.unwrap_or(max_t);
    if len == 0 {
        return Err(Error::Ingest {
            row: 1,
            msg: "series has no time points".into(),
        });
    }
    let mut data = Matrix::zeros(d, len);
    let mut observed = vec![false; d * len];
    for (t, lin, value, row) in cells {
        let flat = t * d + lin;
        if observed[flat] {
            log::warn!("row {row}: duplicate cell, keeping the later value");
        }
        observed[flat] = true;
        data[(lin, t)] = value;
    }
    Ok(LoadedSeries {
        series: TensorSeries::new(header.dims, data)?,
        observed,
    })
}

pub fn write_long_csv<W: Write>(writer: &mut W, series: &TensorSeries) -> Result<()> {
    write_cells(writer, series, None)
}

/// Long CSV rows for every cell, or only the observed ones given a mask.
fn write_cells<W: Write>(
    writer: &mut W,
    series: &TensorSeries,
    observed: Option<&[bool]>,
) -> Result<()> {
    let d = series.slice_len();
    let dims = series.shape();
    let dims_str: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
    writeln!(
        writer,
        "# order={} dims={} T={}",
        dims.len(),
        dims_str.join(","),
        series.len()
    )?;
    let mut w = csv::Writer::from_writer(writer);
    let mut names = vec!["t".to_string()];
    names.extend((1..=dims.len()).map(|k| format!("i{k}")));
    names.push("value".into());
    w.write_record(&names)?;
    let mut idx = vec![0usize; dims.len()];
    for t in 0..series.len() {
        for (lin, v) in series.slice_data(t).iter().enumerate() {
            if observed.is_some_and(|o| !o[t * d + lin]) {
                continue;
            }
            let mut rem = lin;
            for (k, &dk) in dims.iter().enumerate() {
                idx[k] = rem % dk;
                rem /= dk;
            }
            let mut rec = Vec::with_capacity(dims.len() + 2);
            rec.push((t + 1).to_string());
            rec.extend(idx.iter().map(|i| (i + 1).to_string()));
            // shortest representation that round-trips
            rec.push(format!("{v:?}"));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_dense<W: Write>(w: &mut W, series: &TensorSeries) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(series.order() as u32)?;
    for &d in series.shape() {
        w.write_u64::<LittleEndian>(d as u64)?;
    }
    w.write_u64::<LittleEndian>(series.len() as u64)?;
    for &v in series.data().iter() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

/// Dense binary with the mask trailer when some cell is unobserved.
pub fn write_dense_masked<W: Write>(w: &mut W, loaded: &LoadedSeries) -> Result<()> {
    check_mask(loaded)?;
    write_dense(w, &loaded.series)?;
    if loaded.missing() > 0 {
        w.write_all(MASK_MAGIC)?;
        let bytes: Vec<u8> = loaded.observed.iter().map(|&o| o as u8).collect();
        w.write_all(&bytes)?;
    }
    Ok(())
}

/// Dense binary with its optional mask trailer.
pub fn read_dense_masked<R: Read>(mut r: R) -> Result<LoadedSeries> {
    let series = read_dense(&mut r)?;
    let mut tag = Vec::with_capacity(4);
    (&mut r).take(4).read_to_end(&mut tag)?;
    if tag.is_empty() {
        return Ok(LoadedSeries::fully_observed(series));
    }
    if tag != MASK_MAGIC {
        return Err(Error::Format("unexpected bytes after the values".into()));
    }
    let mut bytes = vec![0u8; series.data().len()];
    r.read_exact(&mut bytes)?;
    let observed = bytes
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(Error::Format(format!("mask byte {b}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    if r.read(&mut [0u8])? != 0 {
        return Err(Error::Format("unexpected bytes after the mask".into()));
    }
    Ok(LoadedSeries { series, observed })
}

pub fn read_dense<R: Read>(mut r: R) -> Result<TensorSeries> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a TFTS file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported TFTS version {version}")));
    }
    let order = r.read_u32::<LittleEndian>()? as usize;
    if order == 0 || order > 64 {
        return Err(Error::Format(format!("implausible order {order}")));
    }
    let dims = (0..order)
        .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize))
        .collect::<std::io::Result<Vec<_>>>()?;
    let len = r.read_u64::<LittleEndian>()? as usize;
    let total = dims
        .iter()
        .try_fold(len, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n > 0 && n < (1 << 40))
        .ok_or_else(|| Error::Format(format!("implausible shape {dims:?} x {len}")))?;
    let mut data = vec![0.0; total];
    r.read_f64_into::<LittleEndian>(&mut data)?;
    let d = total / len;
    TensorSeries::new(dims, Matrix::from_vec(d, len, data))
}

/// Headerless numeric CSV, one matrix row per line.
pub fn write_matrix_csv<W: Write>(writer: W, m: &Matrix) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(reader: R) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Ingest {
                row: i + 1,
                msg: e.to_string(),
            })?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Ingest {
                    row: i + 1,
                    msg: format!("{} columns, expected {}", row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, |r| r.len());
    if ncols == 0 {
        return Err(Error::Format("empty matrix file".into()));
    }
    Ok(Matrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.into_iter().flatten(),
    ))
}

pub fn load_matrix(path: &Path) -> Result<Matrix> {
    read_matrix_csv(File::open(path)?)
}

pub fn save_matrix(path: &Path, m: &Matrix) -> Result<()> {
    write_matrix_csv(File::create(path)?, m)
}
