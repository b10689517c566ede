//! Path containers, windowing, normalization, weighted historical volatility
//! and CSV ingestion.
//!
//! A [`PathSet`] stores `n_paths × n_steps × dim` values row-major: path `i`,
//! time `t`, channel `c` lives at `(i * n_steps + t) * dim + c`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NormScheme {
    #[default]
    None,
    DivideByStart,
    AffineToBall,
}

/// How a [`PathSet`] was normalized, with enough state to undo it.
///
/// * `DivideByStart`: `shift` holds the per-path, per-channel start values and
///   `scale` their mean (used to lift freshly generated paths to data scale).
/// * `AffineToBall`: `x_norm = (x - shift) / scale` with `shift` the mean path
///   and `scale` the largest centred path norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct NormalizationRecord {
    pub scheme: NormScheme,
    pub scale: f64,
    pub shift: Vec<f64>,
}

impl NormalizationRecord {
    pub fn none() -> Self {
        Self { scheme: NormScheme::None, scale: 1.0, shift: Vec::new() }
    }

    /// Exact inverse of the normalization that produced `paths`.
    pub fn invert(&self, paths: &PathSet) -> Result<PathSet> {
        let mut out = paths.clone();
        match self.scheme {
            NormScheme::None => {}
            NormScheme::DivideByStart => {
                let d = paths.dim;
                if self.shift.len() != paths.n_paths * d {
                    return Err(Error::Shape(format!(
                        "record holds {} start values, path set needs {}",
                        self.shift.len(),
                        paths.n_paths * d
                    )));
                }
                for i in 0..paths.n_paths {
                    let starts = &self.shift[i * d..(i + 1) * d];
                    for (k, v) in out.path_mut(i).iter_mut().enumerate() {
                        *v *= starts[k % d];
                    }
                }
            }
            NormScheme::AffineToBall => self.affine_inverse(&mut out)?,
        }
        out.normalization = NormalizationRecord::none();
        Ok(out)
    }

    /// Lifts newly generated normalized paths back to data scale.
    pub fn to_data_scale(&self, paths: &PathSet) -> Result<PathSet> {
        let mut out = paths.clone();
        match self.scheme {
            NormScheme::None => {}
            NormScheme::DivideByStart => out.values.iter_mut().for_each(|v| *v *= self.scale),
            NormScheme::AffineToBall => self.affine_inverse(&mut out)?,
        }
        out.normalization = NormalizationRecord::none();
        Ok(out)
    }

    fn affine_inverse(&self, paths: &mut PathSet) -> Result<()> {
        let len = paths.n_steps * paths.dim;
        if self.shift.len() != len {
            return Err(Error::Shape(format!("shift has {} entries, paths have {len}", self.shift.len())));
        }
        for i in 0..paths.n_paths {
            for (v, s) in paths.path_mut(i).iter_mut().zip(&self.shift) {
                *v = *v * self.scale + s;
            }
        }
        Ok(())
    }
}

/// A set of equally long multichannel paths; the empirical measure of the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub values: Vec<f64>,
    pub n_paths: usize,
    pub n_steps: usize,
    pub dim: usize,
    /// Years per step.
    pub dt: f64,
    pub label: String,
    pub normalization: NormalizationRecord,
}

impl PathSet {
    pub fn new(values: Vec<f64>, n_paths: usize, n_steps: usize, dim: usize, dt: f64) -> Result<Self> {
        if n_paths == 0 || n_steps == 0 || dim == 0 {
            return Err(Error::Shape(format!("empty path set {n_paths}x{n_steps}x{dim}")));
        }
        if values.len() != n_paths * n_steps * dim {
            return Err(Error::Shape(format!(
                "{} values for {n_paths}x{n_steps}x{dim}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("non-finite value at flat index {pos}")));
        }
        Ok(Self { values, n_paths, n_steps, dim, dt, label: String::new(), normalization: NormalizationRecord::none() })
    }

    /// Builds a one-channel set from individual paths of equal length.
    pub fn from_paths(paths: &[Vec<f64>], dt: f64) -> Result<Self> {
        let t = paths.first().map(Vec::len).unwrap_or(0);
        if paths.iter().any(|p| p.len() != t) {
            return Err(Error::Shape("paths of unequal length".into()));
        }
        Self::new(paths.concat(), paths.len(), t, 1, dt)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Flattened length of one path (`n_steps * dim`).
    pub fn path_len(&self) -> usize {
        self.n_steps * self.dim
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let l = self.path_len();
        &self.values[i * l..(i + 1) * l]
    }

    pub fn path_mut(&mut self, i: usize) -> &mut [f64] {
        let l = self.path_len();
        &mut self.values[i * l..(i + 1) * l]
    }

    pub fn get(&self, i: usize, t: usize, c: usize) -> f64 {
        self.values[(i * self.n_steps + t) * self.dim + c]
    }

    pub fn paths(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.path_len())
    }

    /// Single channel `c` as a new one-channel set.
    pub fn channel(&self, c: usize) -> PathSet {
        let values = self.values.iter().skip(c).step_by(self.dim).copied().collect();
        PathSet { values, dim: 1, label: self.label.clone(), normalization: NormalizationRecord::none(), ..*self }
    }

    /// Paths selected by index, in the given order.
    pub fn select(&self, idx: &[usize]) -> PathSet {
        let values = idx.iter().flat_map(|&i| self.path(i).iter().copied()).collect();
        PathSet { values, n_paths: idx.len(), label: self.label.clone(), normalization: NormalizationRecord::none(), ..*self }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// A path paired with the condition it was generated under.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedSample {
    pub path: Vec<f64>,
    pub condition: Vec<f64>,
}

impl ConditionedSample {
    pub fn new(path: Vec<f64>, condition: Vec<f64>) -> Result<Self> {
        if condition.is_empty() || condition.iter().any(|c| !c.is_finite()) {
            return Err(Error::Parameter("condition must be non-empty and finite".into()));
        }
        Ok(Self { path, condition })
    }
}

/// Sliding windows of length `window_len` over `series`, in chronological order.
pub fn make_windows(series: &[f64], window_len: usize, stride: usize, dt: f64) -> Result<PathSet> {
    if window_len == 0 || stride == 0 {
        return Err(Error::Parameter("window_len and stride must be >= 1".into()));
    }
    if series.len() < window_len {
        return Err(Error::Length(format!("series of length {} shorter than window {window_len}", series.len())));
    }
    let count = (series.len() - window_len) / stride + 1;
    let mut values = Vec::with_capacity(count * window_len);
    for w in 0..count {
        values.extend_from_slice(&series[w * stride..w * stride + window_len]);
    }
    PathSet::new(values, count, window_len, 1, dt)
}

/// Divides every path (channel-wise) by its starting value.
pub fn normalize_by_start(paths: &PathSet) -> Result<PathSet> {
    let d = paths.dim;
    let mut starts = Vec::with_capacity(paths.n_paths * d);
    let mut out = paths.clone();
    for i in 0..paths.n_paths {
        let start: Vec<f64> = paths.path(i)[..d].to_vec();
        if start.iter().any(|&s| s == 0.0) {
            return Err(Error::ZeroStart { index: i });
        }
        for (k, v) in out.path_mut(i).iter_mut().enumerate() {
            *v /= start[k % d];
        }
        starts.extend(start);
    }
    let scale = starts.iter().sum::<f64>() / starts.len() as f64;
    out.normalization = NormalizationRecord { scheme: NormScheme::DivideByStart, scale, shift: starts };
    Ok(out)
}

/// Centres on the mean path and scales so every path has Euclidean norm ≤ 1.
pub fn normalize_to_ball(paths: &PathSet) -> Result<PathSet> {
    let len = paths.path_len();
    let mut shift = vec![0.0; len];
    for p in paths.paths() {
        shift.iter_mut().zip(p).for_each(|(s, v)| *s += v);
    }
    shift.iter_mut().for_each(|s| *s /= paths.n_paths as f64);
    let mut out = paths.clone();
    let mut radius = 0.0f64;
    for i in 0..paths.n_paths {
        let p = out.path_mut(i);
        p.iter_mut().zip(&shift).for_each(|(v, s)| *v -= s);
        radius = radius.max(p.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    // Degenerate (all identical) sets map to the origin.
    let scale = if radius > 0.0 { radius } else { 1.0 };
    out.values.iter_mut().for_each(|v| *v /= scale);
    out.normalization = NormalizationRecord { scheme: NormScheme::AffineToBall, scale, shift };
    Ok(out)
}

/// Applies the named normalization scheme.
pub fn normalize(paths: &PathSet, scheme: NormScheme) -> Result<PathSet> {
    match scheme {
        NormScheme::None => Ok(paths.clone()),
        NormScheme::DivideByStart => normalize_by_start(paths),
        NormScheme::AffineToBall => normalize_to_ball(paths),
    }
}

/// Power-law kernel `K(k) ∝ (k + delta)^(-alpha)` on `k = 0..=horizon`, summing to 1.
pub fn hist_vol_kernel(alpha: f64, delta: f64, horizon: usize) -> Result<Vec<f64>> {
    if alpha <= 1.0 || !alpha.is_finite() {
        return Err(Error::Parameter(format!("alpha must exceed 1, got {alpha}")));
    }
    if delta <= 0.0 || !delta.is_finite() {
        return Err(Error::Parameter(format!("delta must be positive, got {delta}")));
    }
    let raw: Vec<f64> = (0..=horizon).map(|k| (k as f64 + delta).powf(-alpha)).collect();
    let z: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / z).collect())
}

/// Weighted historical volatility `Σ_i = sqrt(Σ_k K(k) r²_{i-k})`.
///
/// The kernel is truncated at `truncation` lags. Near the start of the series
/// only the available history is used and the kernel is renormalized over it.
pub fn weighted_hist_vol(returns: &[f64], alpha: f64, delta: f64, truncation: usize) -> Result<Vec<f64>> {
    if truncation == 0 {
        return Err(Error::Parameter("truncation must be >= 1".into()));
    }
    let kernel = hist_vol_kernel(alpha, delta, truncation)?;
    let out = (0..returns.len())
        .map(|i| {
            let lags = i.min(truncation);
            let (mut acc, mut mass) = (0.0, 0.0);
            for (k, w) in kernel.iter().enumerate().take(lags + 1) {
                acc += w * returns[i - k] * returns[i - k];
                mass += w;
            }
            (acc / mass).sqrt()
        })
        .collect();
    Ok(out)
}

/// Realized volatility `sqrt(Σ (Δ log S)² / (n Δt))` of one price path.
pub fn realized_vol(prices: &[f64], dt: f64) -> f64 {
    let n = prices.len().saturating_sub(1);
    if n == 0 {
        return 0.0;
    }
    let ss: f64 = prices.windows(2).map(|w| (w[1] / w[0]).ln().powi(2)).sum();
    (ss / (n as f64 * dt)).sqrt()
}

/// Simple returns `S_{j+1}/S_j − 1`.
pub fn simple_returns(prices: &[f64]) -> Vec<f64> {
    prices.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
}

pub fn log_returns(prices: &[f64]) -> Vec<f64> {
    prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect()
}

/// Reads one numeric column of a headered CSV in file order.
///
/// Returns the values together with the number of data rows read. Rows are
/// numbered from 1 for the first data row after the header; blank rows are
/// skipped but still counted.
pub fn load_series_csv(path: impl AsRef<Path>, column: &str) -> Result<(Vec<f64>, usize)> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = loop {
        match lines.next() {
            Some(line) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
            None => return Err(Error::EmptyData),
        }
    };
    let col = split_csv(&header)
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| Error::MissingColumn(column.to_string()))?;
    let mut values = Vec::new();
    for (n, line) in lines.enumerate() {
        let row = n + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cells = split_csv(&line);
        let cell = cells
            .get(col)
            .ok_or_else(|| Error::CsvRow { row, msg: format!("missing cell for column `{column}`") })?;
        let v: f64 = cell
            .trim()
            .parse()
            .map_err(|_| Error::CsvRow { row, msg: format!("cannot parse `{}` as a number", cell.trim()) })?;
        if !v.is_finite() {
            return Err(Error::CsvRow { row, msg: format!("non-finite value `{}`", cell.trim()) });
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::EmptyData);
    }
    let n = values.len();
    Ok((values, n))
}

fn split_csv(line: &str) -> Vec<String> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(line.as_bytes());
    rdr.records()
        .next()
        .and_then(|r| r.ok())
        .map(|r| r.iter().map(str::to_string).collect())
        .unwrap_or_default()
}

/// Column names of the wide PathSet layout.
fn wide_header(n_steps: usize, dim: usize) -> Vec<String> {
    let mut h = vec!["id".to_string()];
    for c in 0..dim {
        for t in 0..n_steps {
            h.push(if dim == 1 { format!("t{t}") } else { format!("c{c}_t{t}") });
        }
    }
    h
}

/// Writes the wide one-row-per-path layout `id,t0,...,t{T-1}`; with several
/// channels the columns are grouped per channel as `c{k}_t{j}`.
pub fn write_paths_csv(paths: &PathSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", wide_header(paths.n_steps, paths.dim).join(","))?;
    for i in 0..paths.n_paths {
        let mut row = vec![i.to_string()];
        for c in 0..paths.dim {
            for t in 0..paths.n_steps {
                row.push(format!("{:e}", paths.get(i, t, c)));
            }
        }
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the wide layout written by [`write_paths_csv`].
pub fn read_paths_csv(path: impl AsRef<Path>, dt: f64) -> Result<PathSet> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("id") || header.len() < 2 {
        return Err(Error::CsvRow { row: 0, msg: "expected header `id,t0,...`".into() });
    }
    let cols = header.len() - 1;
    let dim = if header[1].starts_with('c') {
        header[1..].iter().filter_map(|h| h.split('_').next()).collect::<std::collections::BTreeSet<_>>().len()
    } else {
        1
    };
    if cols % dim != 0 {
        return Err(Error::Shape(format!("{cols} value columns for {dim} channels")));
    }
    let n_steps = cols / dim;
    let mut values = Vec::new();
    let mut n_paths = 0;
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::CsvRow { row: n + 1, msg: format!("{} cells, expected {}", rec.len(), header.len()) });
        }
        let mut row = vec![0.0; cols];
        for (j, cell) in rec.iter().skip(1).enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::CsvRow { row: n + 1, msg: format!("cannot parse `{cell}`") })?;
            // file column j = channel-major, stored time-major
            let (c, t) = (j / n_steps, j % n_steps);
            row[t * dim + c] = v;
        }
        values.extend(row);
        n_paths += 1;
    }
    if n_paths == 0 {
        return Err(Error::EmptyData);
    }
    PathSet::new(values, n_paths, n_steps, dim, dt)
}
