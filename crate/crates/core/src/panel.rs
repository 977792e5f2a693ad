//! Multivariate time-series panels, standardization, lag embedding and the
//! chronological train / validation / test split.
//!
//! Time is always an absolute, zero-based row index into the full panel: row
//! `t` of a panel holds the observation for period `t`. Derived matrices
//! (lag matrices, component series, residual targets) carry the absolute time
//! of their first row so that `y_{t+h}` is aligned by time and never by
//! positional offset.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CcfError, Result};

/// Smallest number of aligned `(t, t+h)` pairs a fit may use.
pub const MIN_EFFECTIVE_SAMPLE: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    values: DMatrix<f64>,
    labels: Vec<String>,
    t0: Option<String>,
}

impl TimeSeriesPanel {
    /// Builds a panel from a `T x n` matrix (rows are periods).
    pub fn new(values: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(CcfError::DataQuality(format!(
                "panel needs at least 2 periods, got {}",
                values.nrows()
            )));
        }
        if values.ncols() == 0 {
            return Err(CcfError::DataQuality("panel has no series".into()));
        }
        if labels.len() != values.ncols() {
            return Err(CcfError::Dimension(format!(
                "{} labels for {} series",
                labels.len(),
                values.ncols()
            )));
        }
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (row, col) = (idx % values.nrows(), idx / values.nrows());
            return Err(CcfError::DataQuality(format!(
                "non-finite value in series `{}` at period {}",
                labels[col], row
            )));
        }
        Ok(Self {
            values,
            labels,
            t0: None,
        })
    }

    /// Panel with generated labels `s0, s1, ...`.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let labels = (0..values.ncols()).map(|i| format!("s{i}")).collect();
        Self::new(values, labels)
    }

    pub fn with_t0(mut self, t0: impl Into<String>) -> Self {
        self.t0 = Some(t0.into());
        self
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn t0(&self) -> Option<&str> {
        self.t0.as_deref()
    }

    pub fn n_periods(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_series(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == name)
    }

    /// Sub-panel holding the named columns, in the order given.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| CcfError::MissingColumn(n.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let values = self.values.select_columns(idx.iter());
        Ok(Self {
            values,
            labels: names.to_vec(),
            t0: self.t0.clone(),
        })
    }

    /// Reads a wide CSV: a header of series names, one row per period. A
    /// leading column named `date` is kept only as the first-period tag.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        let skip = usize::from(header.get(0).is_some_and(|h| h.eq_ignore_ascii_case("date")));
        let labels: Vec<String> = header.iter().skip(skip).map(str::to_string).collect();
        if let Some(dup) = labels.iter().enumerate().find_map(|(i, l)| labels[..i].contains(l).then_some(l)) {
            return Err(CcfError::DataQuality(format!("duplicate column `{dup}`")));
        }
        let mut data = Vec::new();
        let mut t0 = None;
        let mut rows = 0;
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            if skip == 1 && r == 0 {
                t0 = record.get(0).map(str::to_string);
            }
            for (i, field) in record.iter().skip(skip).enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    CcfError::DataQuality(format!(
                        "row {} column `{}`: `{field}` is not a number",
                        r + 1,
                        labels[i]
                    ))
                })?;
                data.push(v);
            }
            rows += 1;
        }
        let values = DMatrix::from_row_slice(rows, labels.len(), &data);
        let panel = Self::new(values, labels)?;
        Ok(match t0 {
            Some(t) => panel.with_t0(t),
            None => panel,
        })
    }

    pub fn read_csv(path: &std::path::Path) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    /// Writes the panel in the layout [`TimeSeriesPanel::from_csv_reader`]
    /// reads, without a date column.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.labels)?;
        for row in self.values.row_iter() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Periods `[start, end)`.
    pub fn rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_periods() {
            return Err(CcfError::IndexOutOfRange {
                index: end,
                lo: start + 1,
                hi: self.n_periods(),
            });
        }
        Ok(Self {
            values: self.values.rows(start, end - start).into_owned(),
            labels: self.labels.clone(),
            t0: if start == 0 { self.t0.clone() } else { None },
        })
    }
}

/// Per-series location and scale used by [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationInfo {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    /// Columns with zero sample variance; centered only.
    #[serde(default)]
    pub constant_columns: Vec<usize>,
}

impl StandardizationInfo {
    /// Sample means and standard deviations (n - 1 denominator) of each
    /// column of `values`.
    pub fn fit(values: &DMatrix<f64>) -> Result<Self> {
        let t = values.nrows();
        if t < 2 {
            return Err(CcfError::DataQuality(format!(
                "standardization needs at least 2 periods, got {t}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CcfError::DataQuality(
                "non-finite value in panel".into(),
            ));
        }
        let mut means = Vec::with_capacity(values.ncols());
        let mut scales = Vec::with_capacity(values.ncols());
        let mut constant_columns = Vec::new();
        for (j, col) in values.column_iter().enumerate() {
            let mean = col.iter().sum::<f64>() / t as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1) as f64;
            let sd = var.sqrt();
            means.push(mean);
            if sd <= 1e-14 * mean.abs().max(1.0) {
                log::warn!("series {j} is constant; centering without scaling");
                constant_columns.push(j);
                scales.push(1.0);
            } else {
                scales.push(sd);
            }
        }
        Ok(Self {
            means,
            scales,
            constant_columns,
        })
    }

    pub fn n_series(&self) -> usize {
        self.means.len()
    }

    fn check_width(&self, n: usize) -> Result<()> {
        if n != self.means.len() {
            return Err(CcfError::Dimension(format!(
                "standardization fitted on {} series, applied to {}",
                self.means.len(),
                n
            )));
        }
        Ok(())
    }

    pub fn apply(&self, values: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_width(values.ncols())?;
        let mut out = values.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (mu, sd) = (self.means[j], self.scales[j]);
            col.apply(|v| *v = (*v - mu) / sd);
        }
        Ok(out)
    }

    pub fn invert(&self, values: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_width(values.ncols())?;
        let mut out = values.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (mu, sd) = (self.means[j], self.scales[j]);
            col.apply(|v| *v = *v * sd + mu);
        }
        Ok(out)
    }

    /// De-standardizes one observation vector.
    pub fn invert_vector(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_width(v.len())?;
        Ok(DVector::from_iterator(
            v.len(),
            v.iter()
                .enumerate()
                .map(|(j, x)| x * self.scales[j] + self.means[j]),
        ))
    }
}

/// Standardizes every column to sample mean 0 and variance 1.
pub fn standardize(panel: &TimeSeriesPanel) -> Result<(TimeSeriesPanel, StandardizationInfo)> {
    let info = StandardizationInfo::fit(panel.values())?;
    let values = info.apply(panel.values())?;
    Ok((
        TimeSeriesPanel {
            values,
            labels: panel.labels.clone(),
            t0: panel.t0.clone(),
        },
        info,
    ))
}

/// Matrix whose row `r` belongs to absolute time `first_time + r`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedMatrix {
    pub first_time: usize,
    pub data: DMatrix<f64>,
}

impl TimedMatrix {
    pub fn last_time(&self) -> usize {
        self.first_time + self.data.nrows() - 1
    }

    /// Rows for absolute times `first..=last`.
    pub fn slice(&self, first: usize, last: usize) -> Result<TimedMatrix> {
        if first < self.first_time || last > self.last_time() || first > last {
            return Err(CcfError::IndexOutOfRange {
                index: if first < self.first_time { first } else { last },
                lo: self.first_time,
                hi: self.last_time(),
            });
        }
        Ok(TimedMatrix {
            first_time: first,
            data: self
                .data
                .rows(first - self.first_time, last - first + 1)
                .into_owned(),
        })
    }

    /// Row for absolute time `t`.
    pub fn row_at(&self, t: usize) -> Result<DVector<f64>> {
        if t < self.first_time || t > self.last_time() {
            return Err(CcfError::IndexOutOfRange {
                index: t,
                lo: self.first_time,
                hi: self.last_time(),
            });
        }
        Ok(self.data.row(t - self.first_time).transpose())
    }
}

/// Targets indexed by forecast origin: row for origin `t` holds `y_{t+h}`.
pub fn horizon_targets(y: &DMatrix<f64>, h: usize) -> Result<TimedMatrix> {
    if h >= y.nrows() {
        return Err(CcfError::EmptySample(format!(
            "horizon {h} leaves no targets in {} periods",
            y.nrows()
        )));
    }
    Ok(TimedMatrix {
        first_time: 0,
        data: y.rows(h, y.nrows() - h).into_owned(),
    })
}

/// Stacked regressors `x_t = (z_t', z_{t-1}', ..., z_{t-c}')'` for
/// `t = c, ..., T-1`. Column block `j` holds lag `j`.
pub fn build_lag_matrix(panel: &TimeSeriesPanel, c: usize) -> Result<TimedMatrix> {
    lag_matrix(panel.values(), c, c, panel.n_periods() - 1)
}

/// Lag matrix restricted to absolute times `first..=last`.
pub fn lag_matrix(z: &DMatrix<f64>, c: usize, first: usize, last: usize) -> Result<TimedMatrix> {
    let t_total = z.nrows();
    if c >= t_total {
        return Err(CcfError::EmptySample(format!(
            "lag count {c} leaves no rows in a panel of {t_total} periods"
        )));
    }
    if first < c || last >= t_total || first > last {
        return Err(CcfError::IndexOutOfRange {
            index: if first < c { first } else { last },
            lo: c,
            hi: t_total - 1,
        });
    }
    let m = z.ncols();
    let rows = last - first + 1;
    let mut data = DMatrix::zeros(rows, m * (c + 1));
    for lag in 0..=c {
        data.view_mut((0, lag * m), (rows, m))
            .copy_from(&z.rows(first - lag, rows));
    }
    Ok(TimedMatrix {
        first_time: first,
        data,
    })
}

/// A univariate series carrying the absolute time of its first value.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedSeries {
    pub first_time: usize,
    pub values: Vec<f64>,
}

impl IndexedSeries {
    pub fn last_time(&self) -> usize {
        self.first_time + self.values.len() - 1
    }
}

/// Window `(f_t, f_{t-1}, ..., f_{t-k})'`.
pub fn component_window(f: &IndexedSeries, k: usize, t: usize) -> Result<DVector<f64>> {
    if f.values.is_empty() || t < f.first_time + k || t > f.last_time() {
        return Err(CcfError::IndexOutOfRange {
            index: t,
            lo: f.first_time + k,
            hi: f.first_time + f.values.len().saturating_sub(1),
        });
    }
    let r = t - f.first_time;
    Ok(DVector::from_iterator(k + 1, (0..=k).map(|j| f.values[r - j])))
}

/// Lag structure of one core component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagDesign {
    /// Lags of the explanatory vector stacked into `x_t`.
    pub c: usize,
    /// Lags of the component series entering the forecast equation.
    pub k: usize,
    /// Forecast horizon.
    pub h: usize,
    /// Raw explanatory dimension.
    pub m: usize,
}

impl LagDesign {
    pub fn new(c: usize, k: usize, h: usize, m: usize) -> Self {
        Self { c, k, h, m }
    }

    /// Stacked dimension `m (c + 1)`.
    pub fn p(&self) -> usize {
        self.m * (self.c + 1)
    }

    /// First forecast origin with a complete window.
    pub fn first_origin(&self) -> usize {
        self.c + self.k
    }

    /// Number of aligned pairs in a panel of `t_total` periods.
    pub fn n_effective(&self, t_total: usize) -> usize {
        t_total.saturating_sub(self.h + self.c + self.k)
    }

    pub fn check_sample(&self, t_total: usize) -> Result<()> {
        let n = self.n_effective(t_total);
        if n < MIN_EFFECTIVE_SAMPLE {
            return Err(CcfError::EmptySample(format!(
                "T - h - c - k = {n} < {MIN_EFFECTIVE_SAMPLE} (T={t_total}, h={}, c={}, k={})",
                self.h, self.c, self.k
            )));
        }
        Ok(())
    }
}

/// Segment lengths of the chronological three-way split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub alpha: f64,
    pub t1: usize,
    pub t2: usize,
    pub t3: usize,
}

impl SplitSpec {
    /// `T1 = floor(alpha T)`, `T2 = floor((T - T1) / 2)`, `T3 = T - T1 - T2`.
    ///
    /// Halving the remainder keeps the two validation segments within one
    /// period of each other (264 periods at 0.7 split as 184/40/40).
    pub fn new(t_total: usize, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CcfError::Config(format!(
                "split fraction must lie in (0, 1), got {alpha}"
            )));
        }
        // Guard against representation error, e.g. 0.7 * 200 = 139.999...
        let t1 = (alpha * t_total as f64 + 1e-9).floor() as usize;
        let t2 = t_total.saturating_sub(t1) / 2;
        if t1 == 0 || t2 == 0 || t1 + t2 >= t_total {
            return Err(CcfError::Config(format!(
                "split of {t_total} periods with alpha {alpha} leaves an empty segment"
            )));
        }
        Ok(Self {
            alpha,
            t1,
            t2,
            t3: t_total - t1 - t2,
        })
    }

    pub fn total(&self) -> usize {
        self.t1 + self.t2 + self.t3
    }

    /// End (exclusive) of the first validation segment.
    pub fn val1_end(&self) -> usize {
        self.t1 + self.t2
    }
}

/// Splits a panel into training, first validation and second validation
/// segments.
pub fn split(
    panel: &TimeSeriesPanel,
    alpha: f64,
) -> Result<(TimeSeriesPanel, TimeSeriesPanel, TimeSeriesPanel)> {
    let spec = SplitSpec::new(panel.n_periods(), alpha)?;
    Ok((
        panel.rows(0, spec.t1)?,
        panel.rows(spec.t1, spec.val1_end())?,
        panel.rows(spec.val1_end(), spec.total())?,
    ))
}
