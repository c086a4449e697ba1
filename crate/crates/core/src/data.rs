//! CSV ingestion and preprocessing: missing values, IQR clipping, z-score
//! standardization, chronological splitting, windowing and K-fold blocks.
//!
//! Pipeline order used by [`prepare`]:
//! missing values → row split → IQR fit on training rows → z-score fit on
//! training rows → apply to all rows. Windows are then cut inside each split
//! segment, so no window straddles a boundary.

use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Parsed CSV with explicit missing markers.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    pub timestamps: Vec<NaiveDateTime>,
    pub columns: Vec<String>,
    /// Column-major values; `None` marks a missing entry.
    pub values: Vec<Vec<Option<f64>>>,
    pub target: String,
}

impl RawSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

/// A fully observed multivariate series.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesFrame {
    pub timestamps: Vec<NaiveDateTime>,
    pub columns: Vec<String>,
    /// Column-major values.
    pub values: Vec<Vec<f64>>,
    pub target: usize,
}

impl TimeSeriesFrame {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn target_name(&self) -> &str {
        &self.columns[self.target]
    }

    pub fn target_values(&self) -> &[f64] {
        &self.values[self.target]
    }
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    for f in FORMATS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, f) {
            return Some(dt);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

/// Reads a CSV whose first column is an ISO-8601 timestamp and whose other
/// columns are numeric. Empty fields and `NaN` are recorded as missing.
pub fn load_csv(path: &Path, target: &str) -> Result<RawSeries> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, target, &path.display().to_string())
}

pub fn read_csv(reader: impl std::io::Read, target: &str, source: &str) -> Result<RawSeries> {
    let parse_err = |row: usize, column: &str, message: String| Error::Parse {
        path: source.to_string(),
        row,
        column: column.to_string(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(0, "header", e.to_string()))?
        .clone();
    if headers.len() < 2 {
        return Err(parse_err(
            0,
            "header",
            "expected a timestamp column and at least one value column".into(),
        ));
    }
    let columns: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if !columns.iter().any(|c| c == target) {
        return Err(Error::Config(format!(
            "target column '{target}' not found in {source} (columns: {})",
            columns.join(", ")
        )));
    }
    let mut timestamps = Vec::new();
    let mut values: Vec<Vec<Option<f64>>> = vec![Vec::new(); columns.len()];
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| parse_err(row, "*", e.to_string()))?;
        if rec.len() != headers.len() {
            return Err(parse_err(
                row,
                "*",
                format!("expected {} fields, found {}", headers.len(), rec.len()),
            ));
        }
        let ts = parse_timestamp(&rec[0]).ok_or_else(|| {
            parse_err(
                row,
                &headers[0],
                format!("unparseable timestamp '{}'", &rec[0]),
            )
        })?;
        if let Some(prev) = timestamps.last() {
            if ts == *prev {
                return Err(Error::Monotonicity {
                    path: source.to_string(),
                    row,
                    detail: format!("duplicate timestamp {}", format_timestamp(&ts)),
                });
            }
            if ts < *prev {
                return Err(Error::Monotonicity {
                    path: source.to_string(),
                    row,
                    detail: format!(
                        "{} precedes {}",
                        format_timestamp(&ts),
                        format_timestamp(prev)
                    ),
                });
            }
        }
        timestamps.push(ts);
        for (c, field) in rec.iter().skip(1).enumerate() {
            let v = if field.is_empty() || field.eq_ignore_ascii_case("nan") {
                None
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| parse_err(row, &columns[c], format!("not a number: '{field}'")))?;
                if !v.is_finite() {
                    return Err(parse_err(
                        row,
                        &columns[c],
                        format!("non-finite value '{field}'"),
                    ));
                }
                Some(v)
            };
            values[c].push(v);
        }
    }
    Ok(RawSeries {
        timestamps,
        columns,
        values,
        target: target.to_string(),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MissingReport {
    pub rows_dropped_leading: usize,
    pub rows_dropped_trailing: usize,
    /// Per column: (name, values interpolated).
    pub interpolated: Vec<(String, usize)>,
    /// Per column: (name, missing fraction over the input rows).
    pub missing_fraction: Vec<(String, f64)>,
}

impl MissingReport {
    pub fn total_interpolated(&self) -> usize {
        self.interpolated.iter().map(|(_, n)| n).sum()
    }
}

/// Drops leading/trailing rows with any missing entry and linearly
/// interpolates interior gaps. Refuses when a column's missing fraction
/// exceeds `max_fraction`, unless `allow_excess` is set.
pub fn handle_missing(
    s: &RawSeries,
    max_fraction: f64,
    allow_excess: bool,
) -> Result<(TimeSeriesFrame, MissingReport)> {
    let n = s.len();
    if n == 0 {
        return Err(Error::InsufficientData {
            required: 1,
            found: 0,
        });
    }
    let fractions: Vec<(String, f64)> = s
        .columns
        .iter()
        .zip(&s.values)
        .map(|(name, col)| {
            let missing = col.iter().filter(|v| v.is_none()).count();
            (name.clone(), missing as f64 / n as f64)
        })
        .collect();
    if !allow_excess && fractions.iter().any(|(_, f)| *f > max_fraction) {
        return Err(Error::ExcessMissing {
            threshold: max_fraction,
            fractions,
        });
    }

    let complete = |r: usize| s.values.iter().all(|col| col[r].is_some());
    let start = (0..n).find(|&r| complete(r));
    let Some(start) = start else {
        return Err(Error::InsufficientData {
            required: 1,
            found: 0,
        });
    };
    let end = (0..n).rev().find(|&r| complete(r)).expect("start exists") + 1;

    let mut values = Vec::with_capacity(s.columns.len());
    let mut interpolated = Vec::with_capacity(s.columns.len());
    for (name, col) in s.columns.iter().zip(&s.values) {
        let seg = &col[start..end];
        let mut out = Vec::with_capacity(seg.len());
        let mut filled = 0;
        let mut last_obs = 0usize;
        for (i, v) in seg.iter().enumerate() {
            match v {
                Some(x) => {
                    out.push(*x);
                    last_obs = i;
                }
                None => {
                    let next = (i + 1..seg.len())
                        .find(|&j| seg[j].is_some())
                        .expect("segment ends on an observed row");
                    let (a, b) = (seg[last_obs].unwrap(), seg[next].unwrap());
                    let w = (i - last_obs) as f64 / (next - last_obs) as f64;
                    out.push(a + w * (b - a));
                    filled += 1;
                }
            }
        }
        values.push(out);
        interpolated.push((name.clone(), filled));
    }
    let target = s
        .columns
        .iter()
        .position(|c| *c == s.target)
        .ok_or_else(|| Error::Config(format!("target column '{}' not present", s.target)))?;
    Ok((
        TimeSeriesFrame {
            timestamps: s.timestamps[start..end].to_vec(),
            columns: s.columns.clone(),
            values,
            target,
        },
        MissingReport {
            rows_dropped_leading: start,
            rows_dropped_trailing: n - end,
            interpolated,
            missing_fraction: fractions,
        },
    ))
}

/// Type-7 sample quantile (linear interpolation between order statistics).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnFences {
    pub column: String,
    /// `None` when the column's IQR is zero and it was left untouched.
    pub fences: Option<(f64, f64)>,
    pub clipped: usize,
}

/// Clips every column to `[Q1 − k·IQR, Q3 + k·IQR]`, with quartiles computed
/// on `fit_rows` and the fences applied to all rows.
pub fn iqr_clip(
    frame: &TimeSeriesFrame,
    k: f64,
    fit_rows: Range<usize>,
) -> Result<(TimeSeriesFrame, Vec<ColumnFences>)> {
    if fit_rows.is_empty() || fit_rows.end > frame.len() {
        return Err(Error::Parameter(format!(
            "IQR fit rows {fit_rows:?} invalid for a series of {} rows",
            frame.len()
        )));
    }
    if !(k >= 0.0) {
        return Err(Error::Parameter(format!(
            "IQR multiplier must be >= 0, got {k}"
        )));
    }
    let mut out = frame.clone();
    let mut report = Vec::with_capacity(frame.columns.len());
    for (c, col) in out.values.iter_mut().enumerate() {
        let mut sorted = col[fit_rows.clone()].to_vec();
        sorted.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&sorted, 0.25);
        let q3 = quantile_sorted(&sorted, 0.75);
        let iqr = q3 - q1;
        let name = frame.columns[c].clone();
        if iqr == 0.0 {
            log::warn!("column '{name}' has zero IQR on the fit rows; outlier clipping skipped");
            report.push(ColumnFences {
                column: name,
                fences: None,
                clipped: 0,
            });
            continue;
        }
        let (lo, hi) = (q1 - k * iqr, q3 + k * iqr);
        let mut clipped = 0;
        for v in col.iter_mut() {
            if *v < lo || *v > hi {
                *v = v.clamp(lo, hi);
                clipped += 1;
            }
        }
        report.push(ColumnFences {
            column: name,
            fences: Some((lo, hi)),
            clipped,
        });
    }
    Ok((out, report))
}

/// Clips each column to previously computed fences; returns the clipped count.
pub fn clip_to_fences(
    frame: &TimeSeriesFrame,
    fences: &[Option<(f64, f64)>],
) -> (TimeSeriesFrame, usize) {
    let mut out = frame.clone();
    let mut clipped = 0;
    for (col, fence) in out.values.iter_mut().zip(fences) {
        if let Some((lo, hi)) = fence {
            for v in col.iter_mut() {
                if *v < *lo || *v > *hi {
                    *v = v.clamp(*lo, *hi);
                    clipped += 1;
                }
            }
        }
    }
    (out, clipped)
}

/// Per-column mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationParams {
    pub columns: Vec<String>,
    pub target: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationParams {
    pub fn validate(&self) -> Result<()> {
        let n = self.columns.len();
        if n == 0 || self.mean.len() != n || self.std.len() != n {
            return Err(Error::Config(format!(
                "normalization has {} columns, {} means and {} stds",
                n,
                self.mean.len(),
                self.std.len()
            )));
        }
        if let Some(i) = self.std.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::ConstantColumn(self.columns[i].clone()));
        }
        self.target_index()?;
        Ok(())
    }

    pub fn target_index(&self) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| *c == self.target)
            .ok_or_else(|| {
                Error::Config(format!(
                    "normalization lacks target column '{}'",
                    self.target
                ))
            })
    }

    pub fn index_of(&self, column: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == column)
            .ok_or_else(|| Error::Config(format!("unknown column '{column}'")))
    }
}

pub fn zscore_fit(frame: &TimeSeriesFrame, fit_rows: Range<usize>) -> Result<NormalizationParams> {
    if fit_rows.is_empty() || fit_rows.end > frame.len() {
        return Err(Error::Parameter(format!(
            "z-score fit rows {fit_rows:?} invalid for a series of {} rows",
            frame.len()
        )));
    }
    let n = fit_rows.len() as f64;
    let mut mean = Vec::with_capacity(frame.columns.len());
    let mut std = Vec::with_capacity(frame.columns.len());
    for (name, col) in frame.columns.iter().zip(&frame.values) {
        let rows = &col[fit_rows.clone()];
        let m = rows.iter().sum::<f64>() / n;
        let var = rows.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        let s = var.sqrt();
        if !(s > 0.0) || s <= m.abs() * 1e-14 {
            return Err(Error::ConstantColumn(name.clone()));
        }
        mean.push(m);
        std.push(s);
    }
    Ok(NormalizationParams {
        columns: frame.columns.clone(),
        target: frame.target_name().to_string(),
        mean,
        std,
    })
}

fn check_columns(frame: &TimeSeriesFrame, p: &NormalizationParams) -> Result<()> {
    if frame.columns != p.columns {
        return Err(Error::Incompatible {
            field: "columns".into(),
            expected: p.columns.join(","),
            found: frame.columns.join(","),
        });
    }
    Ok(())
}

pub fn zscore_apply(frame: &TimeSeriesFrame, p: &NormalizationParams) -> Result<TimeSeriesFrame> {
    check_columns(frame, p)?;
    let mut out = frame.clone();
    for (c, col) in out.values.iter_mut().enumerate() {
        for v in col.iter_mut() {
            *v = (*v - p.mean[c]) / p.std[c];
        }
    }
    Ok(out)
}

pub fn zscore_invert(values: &[f64], p: &NormalizationParams, column: usize) -> Vec<f64> {
    values
        .iter()
        .map(|v| v * p.std[column] + p.mean[column])
        .collect()
}

/// Supervised `(window, target)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    /// `[N × L × F]`.
    pub inputs: Tensor,
    /// `[N × H]`, target column only.
    pub targets: Tensor,
    /// Frame row at which each window starts.
    pub source_rows: Vec<usize>,
    pub window_len: usize,
    pub horizon: usize,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.source_rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.inputs.last_dim()
    }

    /// Gathers the given windows into a new dataset.
    pub fn select(&self, indices: &[usize]) -> Result<WindowedDataset> {
        if indices.is_empty() {
            return Err(Error::InsufficientData {
                required: 1,
                found: 0,
            });
        }
        let (l, f, h) = (self.window_len, self.n_features(), self.horizon);
        let mut x = Vec::with_capacity(indices.len() * l * f);
        let mut y = Vec::with_capacity(indices.len() * h);
        for &i in indices {
            x.extend_from_slice(&self.inputs.data()[i * l * f..(i + 1) * l * f]);
            y.extend_from_slice(&self.targets.data()[i * h..(i + 1) * h]);
        }
        let n = indices.len();
        Ok(WindowedDataset {
            inputs: Tensor::new(vec![n, l, f], x)?,
            targets: Tensor::new(vec![n, h], y)?,
            source_rows: indices.iter().map(|&i| self.source_rows[i]).collect(),
            window_len: l,
            horizon: h,
        })
    }

    pub fn select_range(&self, r: Range<usize>) -> Result<WindowedDataset> {
        self.select(&r.collect::<Vec<_>>())
    }

    fn concat(parts: &[WindowedDataset]) -> WindowedDataset {
        let first = &parts[0];
        let (l, f, h) = (first.window_len, first.n_features(), first.horizon);
        let n: usize = parts.iter().map(|p| p.len()).sum();
        let mut x = Vec::with_capacity(n * l * f);
        let mut y = Vec::with_capacity(n * h);
        let mut rows = Vec::with_capacity(n);
        for p in parts {
            x.extend_from_slice(p.inputs.data());
            y.extend_from_slice(p.targets.data());
            rows.extend_from_slice(&p.source_rows);
        }
        WindowedDataset {
            inputs: Tensor::new(vec![n, l, f], x).expect("consistent parts"),
            targets: Tensor::new(vec![n, h], y).expect("consistent parts"),
            source_rows: rows,
            window_len: l,
            horizon: h,
        }
    }
}

/// Windows over rows `rows` of `frame`: window `i` covers `[s, s+L)` and its
/// target is the target column over `[s+L, s+L+H)`, with `s = rows.start + i·stride`.
pub fn make_windows_in(
    frame: &TimeSeriesFrame,
    rows: Range<usize>,
    window_len: usize,
    horizon: usize,
    stride: usize,
) -> Result<WindowedDataset> {
    if window_len == 0 || horizon == 0 || stride == 0 {
        return Err(Error::Parameter(
            "window length, horizon and stride must be >= 1".into(),
        ));
    }
    let need = window_len + horizon;
    if rows.len() < need || rows.end > frame.len() {
        return Err(Error::InsufficientData {
            required: need,
            found: rows.len(),
        });
    }
    let f = frame.n_features();
    let starts: Vec<usize> = (rows.start..=rows.end - need).step_by(stride).collect();
    let mut x = Vec::with_capacity(starts.len() * window_len * f);
    let mut y = Vec::with_capacity(starts.len() * horizon);
    for &s in &starts {
        for r in s..s + window_len {
            for col in &frame.values {
                x.push(col[r]);
            }
        }
        y.extend_from_slice(&frame.values[frame.target][s + window_len..s + need]);
    }
    Ok(WindowedDataset {
        inputs: Tensor::new(vec![starts.len(), window_len, f], x)?,
        targets: Tensor::new(vec![starts.len(), horizon], y)?,
        source_rows: starts,
        window_len,
        horizon,
    })
}

pub fn make_windows(
    frame: &TimeSeriesFrame,
    window_len: usize,
    horizon: usize,
    stride: usize,
) -> Result<WindowedDataset> {
    make_windows_in(frame, 0..frame.len(), window_len, horizon, stride)
}

/// Disjoint, ordered index ranges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

pub const DEFAULT_SPLIT: [f64; 3] = [0.7, 0.2, 0.1];

/// `train = ⌊f₀·n⌋`, `validation = ⌊f₁·n⌋`, `test` = the remainder; every part non-empty.
pub fn chronological_split(n: usize, fractions: [f64; 3]) -> Result<SplitIndices> {
    if fractions.iter().any(|f| !(*f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    if n < 3 {
        return Err(Error::InsufficientData {
            required: 3,
            found: n,
        });
    }
    let part = |f: f64| (f * n as f64 + 1e-9).floor() as usize;
    let n_train = part(fractions[0]);
    let n_val = part(fractions[1]);
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Parameter(format!(
            "split of {n} items leaves an empty part ({n_train}/{n_val}/{})",
            n.saturating_sub(n_train + n_val)
        )));
    }
    Ok(SplitIndices {
        train: 0..n_train,
        validation: n_train..n_train + n_val,
        test: n_train + n_val..n,
    })
}

/// Contiguous blocked folds; the first `n mod K` folds hold one extra item.
pub fn kfold(n: usize, k: usize) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 || k > n {
        return Err(Error::Parameter(format!(
            "K must satisfy 2 <= K <= n ({n}), got {k}"
        )));
    }
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for j in 0..k {
        let size = base + usize::from(j < extra);
        let val: Vec<usize> = (start..start + size).collect();
        let train: Vec<usize> = (0..start).chain(start + size..n).collect();
        folds.push((train, val));
        start += size;
    }
    Ok(folds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepOptions {
    pub split: [f64; 3],
    pub max_missing_fraction: f64,
    pub allow_excess_missing: bool,
    pub iqr_k: f64,
}

impl Default for PrepOptions {
    fn default() -> Self {
        PrepOptions {
            split: DEFAULT_SPLIT,
            max_missing_fraction: 0.03,
            allow_excess_missing: false,
            iqr_k: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub input_rows: usize,
    pub rows_dropped: usize,
    pub values_interpolated: usize,
    pub values_clipped: usize,
    pub missing: MissingReport,
    pub fences: Vec<ColumnFences>,
    pub normalization: NormalizationParams,
    pub row_splits: SplitIndices,
}

/// A cleaned, standardized series with its chronological row segments.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub frame: TimeSeriesFrame,
    pub norm: NormalizationParams,
    pub row_splits: SplitIndices,
}

/// Windowed view of [`PreparedData`]: train windows first, then validation, then test.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub windows: WindowedDataset,
    pub splits: SplitIndices,
}

impl SplitDataset {
    pub fn train(&self) -> Result<WindowedDataset> {
        self.windows.select_range(self.splits.train.clone())
    }

    pub fn validation(&self) -> Result<WindowedDataset> {
        self.windows.select_range(self.splits.validation.clone())
    }

    pub fn test(&self) -> Result<WindowedDataset> {
        self.windows.select_range(self.splits.test.clone())
    }
}

pub fn prepare(raw: &RawSeries, opts: &PrepOptions) -> Result<(PreparedData, PreprocessSummary)> {
    let (frame, missing) =
        handle_missing(raw, opts.max_missing_fraction, opts.allow_excess_missing)?;
    let row_splits = chronological_split(frame.len(), opts.split)?;
    let (clipped, fences) = iqr_clip(&frame, opts.iqr_k, row_splits.train.clone())?;
    let norm = zscore_fit(&clipped, row_splits.train.clone())?;
    let standardized = zscore_apply(&clipped, &norm)?;
    let summary = PreprocessSummary {
        input_rows: raw.len(),
        rows_dropped: missing.rows_dropped_leading + missing.rows_dropped_trailing,
        values_interpolated: missing.total_interpolated(),
        values_clipped: fences.iter().map(|f| f.clipped).sum(),
        missing,
        fences,
        normalization: norm.clone(),
        row_splits: row_splits.clone(),
    };
    Ok((
        PreparedData {
            frame: standardized,
            norm,
            row_splits,
        },
        summary,
    ))
}

/// Same cleaning as [`prepare`] but standardized with previously fitted parameters.
pub fn prepare_with(
    raw: &RawSeries,
    opts: &PrepOptions,
    norm: &NormalizationParams,
) -> Result<PreparedData> {
    let (frame, _) = handle_missing(raw, opts.max_missing_fraction, opts.allow_excess_missing)?;
    let row_splits = chronological_split(frame.len(), opts.split)?;
    let (clipped, _) = iqr_clip(&frame, opts.iqr_k, row_splits.train.clone())?;
    let standardized = zscore_apply(&clipped, norm)?;
    Ok(PreparedData {
        frame: standardized,
        norm: norm.clone(),
        row_splits,
    })
}

impl PreparedData {
    /// Cuts windows separately inside each row segment.
    pub fn windows(
        &self,
        window_len: usize,
        horizon: usize,
        stride: usize,
    ) -> Result<SplitDataset> {
        let segs = [
            &self.row_splits.train,
            &self.row_splits.validation,
            &self.row_splits.test,
        ];
        let parts = segs
            .iter()
            .map(|r| make_windows_in(&self.frame, (*r).clone(), window_len, horizon, stride))
            .collect::<Result<Vec<_>>>()?;
        let (a, b) = (parts[0].len(), parts[1].len());
        let n = a + b + parts[2].len();
        Ok(SplitDataset {
            windows: WindowedDataset::concat(&parts),
            splits: SplitIndices {
                train: 0..a,
                validation: a..a + b,
                test: a + b..n,
            },
        })
    }

    /// All stride windows over the whole series, ignoring segment boundaries.
    pub fn all_windows(
        &self,
        window_len: usize,
        horizon: usize,
        stride: usize,
    ) -> Result<WindowedDataset> {
        make_windows(&self.frame, window_len, horizon, stride)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(vals: &[Option<f64>]) -> RawSeries {
        let t0 = parse_timestamp("2024-01-01T00:00:00").unwrap();
        RawSeries {
            timestamps: (0..vals.len())
                .map(|i| t0 + chrono::Duration::hours(i as i64))
                .collect(),
            columns: vec!["y".into()],
            values: vec![vals.to_vec()],
            target: "y".into(),
        }
    }

    fn frame(vals: &[f64]) -> TimeSeriesFrame {
        let r = raw(&vals.iter().map(|v| Some(*v)).collect::<Vec<_>>());
        handle_missing(&r, 0.0, false).unwrap().0
    }

    #[test]
    fn csv_parsing() {
        let text = "time,load,temp\n2024-01-01T00:00:00,1.5,3\n2024-01-01T01:00:00,,NaN\n2024-01-01 02:00,2.5,4\n";
        let s = read_csv(text.as_bytes(), "load", "mem").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.values[0], vec![Some(1.5), None, Some(2.5)]);
        assert_eq!(s.values[1][1], None);

        let bad = "time,load\n2024-01-01T01:00:00,1\n2024-01-01T00:00:00,2\n";
        let err = read_csv(bad.as_bytes(), "load", "mem").unwrap_err();
        assert!(matches!(err, Error::Monotonicity { row: 2, .. }), "{err}");

        let dup = "time,load\n2024-01-01,1\n2024-01-01,2\n";
        assert!(matches!(
            read_csv(dup.as_bytes(), "load", "mem"),
            Err(Error::Monotonicity { .. })
        ));

        let num = "time,load\n2024-01-01,abc\n";
        let err = read_csv(num.as_bytes(), "load", "mem").unwrap_err();
        assert!(
            matches!(&err, Error::Parse { row: 1, column, .. } if column == "load"),
            "{err}"
        );

        let ts = "time,load\nyesterday,1\n";
        assert!(matches!(
            read_csv(ts.as_bytes(), "load", "mem"),
            Err(Error::Parse { .. })
        ));
        assert!(read_csv("time,load\n".as_bytes(), "other", "mem").is_err());
    }

    #[test]
    fn missing_value_rules() {
        let (f, rep) = handle_missing(&raw(&[Some(1.0), None, Some(3.0)]), 0.5, false).unwrap();
        assert_eq!(f.values[0], vec![1.0, 2.0, 3.0]);
        assert_eq!(rep.total_interpolated(), 1);

        let (f, rep) = handle_missing(&raw(&[None, Some(5.0), Some(6.0)]), 0.5, false).unwrap();
        assert_eq!(f.values[0], vec![5.0, 6.0]);
        assert_eq!(rep.rows_dropped_leading, 1);
        assert_eq!(f.len(), 2);

        let mut v: Vec<Option<f64>> = (0..100).map(|i| Some(i as f64)).collect();
        for i in [10, 20, 30, 40] {
            v[i] = None;
        }
        match handle_missing(&raw(&v), 0.03, false) {
            Err(Error::ExcessMissing { fractions, .. }) => assert_eq!(fractions[0].1, 0.04),
            other => panic!("expected refusal, got {other:?}"),
        }
        let (f, _) = handle_missing(&raw(&v), 0.03, true).unwrap();
        assert_eq!(f.values[0][20], 20.0);
        v[40] = Some(40.0);
        assert!(handle_missing(&raw(&v), 0.03, false).is_ok());
    }

    #[test]
    fn iqr_examples() {
        let f = frame(&[1.0, 2.0, 3.0, 4.0, 100.0]);
        let (c, rep) = iqr_clip(&f, 1.5, 0..5).unwrap();
        assert_eq!(c.values[0], vec![1.0, 2.0, 3.0, 4.0, 7.0]);
        assert_eq!(rep[0].fences, Some((-1.0, 7.0)));
        let (c, _) = iqr_clip(&f, 0.0, 0..5).unwrap();
        assert_eq!(c.values[0], vec![2.0, 2.0, 3.0, 4.0, 4.0]);
        let calm = frame(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(iqr_clip(&calm, 1.5, 0..5).unwrap().0, calm);
        let flat = frame(&[2.0, 2.0, 2.0, 9.0]);
        let (c, rep) = iqr_clip(&flat, 1.5, 0..3).unwrap();
        assert_eq!(c, flat);
        assert_eq!(rep[0].fences, None);
    }

    #[test]
    fn zscore_examples() {
        let f = frame(&[2.0, 4.0, 6.0, 100.0]);
        let p = zscore_fit(&f, 0..3).unwrap();
        assert_eq!(p.mean[0], 4.0);
        assert!((p.std[0] - 1.632993161855452).abs() < 1e-12);
        let z = zscore_apply(&f, &p).unwrap();
        let back = zscore_invert(&z.values[0], &p, 0);
        for (a, b) in back.iter().zip(&f.values[0]) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(matches!(
            zscore_fit(&frame(&[3.0, 3.0, 3.0]), 0..3),
            Err(Error::ConstantColumn(_))
        ));
    }

    #[test]
    fn window_counts() {
        let f = frame(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let w = make_windows(&f, 3, 1, 1).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w.targets.data(), &[3.0, 4.0]);
        assert_eq!(make_windows(&f, 4, 1, 1).unwrap().len(), 1);
        assert!(matches!(
            make_windows(&f, 5, 1, 1),
            Err(Error::InsufficientData {
                required: 6,
                found: 5
            })
        ));
        let f7 = frame(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = make_windows(&f7, 3, 1, 2).unwrap();
        assert_eq!(w.source_rows, vec![0, 2]);
    }

    #[test]
    fn split_examples() {
        let s = chronological_split(10, DEFAULT_SPLIT).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (7, 2, 1));
        let s = chronological_split(100, DEFAULT_SPLIT).unwrap();
        assert_eq!(
            (s.train.len(), s.validation.len(), s.test.len()),
            (70, 20, 10)
        );
        assert!(chronological_split(3, DEFAULT_SPLIT).is_err());
        assert!(chronological_split(2, DEFAULT_SPLIT).is_err());
        assert!(chronological_split(10, [0.5, 0.5, 0.1]).is_err());
    }

    #[test]
    fn kfold_examples() {
        let folds = kfold(10, 5).unwrap();
        assert!(folds.iter().all(|(_, v)| v.len() == 2));
        let sizes: Vec<usize> = kfold(10, 3).unwrap().iter().map(|(_, v)| v.len()).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        assert!(kfold(10, 10).unwrap().iter().all(|(_, v)| v.len() == 1));
        assert!(kfold(10, 1).is_err() && kfold(10, 11).is_err());
    }

    #[test]
    fn prepared_windows_respect_segments() {
        let vals: Vec<f64> = (0..60)
            .map(|i| (i as f64 * 0.3).sin() + 0.01 * i as f64)
            .collect();
        let r = raw(&vals.iter().map(|v| Some(*v)).collect::<Vec<_>>());
        let (prep, summary) = prepare(&r, &PrepOptions::default()).unwrap();
        assert_eq!(summary.values_interpolated, 0);
        let ds = prep.windows(4, 2, 1).unwrap();
        let train_end = prep.row_splits.train.end;
        for i in ds.splits.validation.clone().chain(ds.splits.test.clone()) {
            assert!(ds.windows.source_rows[i] >= train_end);
        }
        for i in ds.splits.train.clone() {
            assert!(ds.windows.source_rows[i] + 4 + 2 <= train_end);
        }
    }

    proptest! {
        #[test]
        fn kfold_partitions(n in 2usize..200, k_frac in 0.0..1.0f64) {
            let k = 2 + ((n - 2) as f64 * k_frac) as usize;
            let folds = kfold(n, k).unwrap();
            let mut seen = vec![0usize; n];
            let sizes: Vec<usize> = folds.iter().map(|(_, v)| v.len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for (train, val) in &folds {
                prop_assert_eq!(train.len() + val.len(), n);
                for &i in val { seen[i] += 1; }
                prop_assert!(train.iter().all(|i| !val.contains(i)));
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }

        #[test]
        fn iqr_clip_idempotent(vals in prop::collection::vec(-1e3..1e3f64, 4..60), k in 0.0..3.0f64) {
            let f = frame(&vals);
            let fit = 0..vals.len() / 2 + 1;
            let (once, rep) = iqr_clip(&f, k, fit).unwrap();
            let fences: Vec<_> = rep.iter().map(|r| r.fences).collect();
            if let Some((lo, hi)) = fences[0] {
                prop_assert!(once.values[0].iter().all(|v| *v >= lo && *v <= hi));
            }
            let (twice, n) = clip_to_fences(&once, &fences);
            prop_assert_eq!(n, 0);
            prop_assert_eq!(twice, once);
        }

        #[test]
        fn standardized_training_rows(vals in prop::collection::vec(-1e3..1e3f64, 5..80)) {
            let f = frame(&vals);
            let fit = 0..vals.len() - 2;
            prop_assume!(zscore_fit(&f, fit.clone()).is_ok());
            let p = zscore_fit(&f, fit.clone()).unwrap();
            prop_assume!(p.std[0] > 1e-6);
            let z = zscore_apply(&f, &p).unwrap();
            let rows = &z.values[0][fit.clone()];
            let n = rows.len() as f64;
            let m = rows.iter().sum::<f64>() / n;
            let s = (rows.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((s - 1.0).abs() < 1e-9);
        }

        #[test]
        fn interpolation_preserves_observed(vals in prop::collection::vec(prop::option::weighted(0.8, -10.0..10.0f64), 3..50)) {
            prop_assume!(vals.iter().any(|v| v.is_some()));
            let (f, rep) = handle_missing(&raw(&vals), 1.0, false).unwrap();
            let start = rep.rows_dropped_leading;
            for (i, v) in f.values[0].iter().enumerate() {
                prop_assert!(v.is_finite());
                if let Some(orig) = vals[start + i] {
                    prop_assert_eq!(*v, orig);
                }
            }
        }
    }
}
