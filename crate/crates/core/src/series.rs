//! Univariate labeled time series: CSV ingestion, validation, min-max
//! normalisation, anomaly injection and synthetic generators.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDateTime;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    /// Integer index or epoch seconds.
    pub timestamp: i64,
    pub value: f64,
    pub is_anomaly: Option<bool>,
}

impl SeriesPoint {
    pub fn new(timestamp: i64, value: f64) -> Self {
        Self {
            timestamp,
            value,
            is_anomaly: None,
        }
    }

    pub fn labeled(timestamp: i64, value: f64, is_anomaly: bool) -> Self {
        Self {
            timestamp,
            value,
            is_anomaly: Some(is_anomaly),
        }
    }
}

/// Affine map `x -> (x - min) / (max - min)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub min: f64,
    pub max: f64,
}

impl NormalizationParams {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) {
            return Err(Error::invalid("normalization bounds must be finite"));
        }
        if max <= min {
            return Err(Error::ConstantSeries);
        }
        Ok(Self { min, max })
    }

    /// Fits min/max over `values`.
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySeries);
        }
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        Self::new(min, max)
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    #[inline]
    pub fn invert(&self, y: f64) -> f64 {
        y * (self.max - self.min) + self.min
    }

    /// Maps a scale (difference of two normalised values) back to raw units.
    #[inline]
    pub fn invert_scale(&self, d: f64) -> f64 {
        d * (self.max - self.min)
    }
}

/// An ordered, validated univariate series.
///
/// Timestamps are strictly increasing, every value is finite and the series
/// holds at least one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    name: String,
    points: Vec<SeriesPoint>,
    normalization: Option<NormalizationParams>,
}

impl TimeSeries {
    pub fn new(name: impl Into<String>, points: Vec<SeriesPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySeries);
        }
        for (i, p) in points.iter().enumerate() {
            if !p.value.is_finite() {
                return Err(Error::NonFinite { row: i + 1 });
            }
            if i > 0 && p.timestamp <= points[i - 1].timestamp {
                return Err(Error::NonMonotonic { row: i + 1 });
            }
        }
        Ok(Self {
            name: name.into(),
            points,
            normalization: None,
        })
    }

    /// Builds an unlabeled series with timestamps `0..values.len()`.
    pub fn from_values(name: impl Into<String>, values: &[f64]) -> Result<Self> {
        let points = values
            .iter()
            .enumerate()
            .map(|(i, &v)| SeriesPoint::new(i as i64, v))
            .collect();
        Self::new(name, points)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn points(&self) -> &[SeriesPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn normalization(&self) -> Option<NormalizationParams> {
        self.normalization
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    pub fn labels(&self) -> Vec<Option<bool>> {
        self.points.iter().map(|p| p.is_anomaly).collect()
    }

    pub fn has_labels(&self) -> bool {
        self.points.iter().any(|p| p.is_anomaly.is_some())
    }

    /// Indices of points labeled anomalous.
    pub fn anomaly_indices(&self) -> Vec<usize> {
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_anomaly == Some(true))
            .map(|(i, _)| i)
            .collect()
    }

    /// Copy with every unset label replaced by `label`.
    pub fn with_missing_labels(&self, label: bool) -> Self {
        let mut out = self.clone();
        for p in &mut out.points {
            p.is_anomaly.get_or_insert(label);
        }
        out
    }

    /// Copy with every label set to `false` and every anomalous point's value
    /// replaced by the median of its non-anomalous neighbours.
    pub fn without_anomalies(&self) -> Self {
        let values = self.values();
        let mut out = self.clone();
        let flagged: Vec<bool> = self
            .points
            .iter()
            .map(|p| p.is_anomaly == Some(true))
            .collect();
        for (i, p) in out.points.iter_mut().enumerate() {
            if flagged[i] {
                let lo = i.saturating_sub(LOCAL_MEDIAN_HALF_WIDTH);
                let hi = (i + LOCAL_MEDIAN_HALF_WIDTH + 1).min(values.len());
                let neighbours: Vec<f64> = (lo..hi)
                    .filter(|&j| !flagged[j])
                    .map(|j| values[j])
                    .collect();
                if !neighbours.is_empty() {
                    p.value = median(&neighbours);
                }
            }
            p.is_anomaly = Some(false);
        }
        out
    }

    /// Replaces values, keeping timestamps and labels.
    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a series of length {}",
                values.len(),
                self.len()
            )));
        }
        let points = self
            .points
            .iter()
            .zip(values)
            .map(|(p, &v)| SeriesPoint { value: v, ..*p })
            .collect();
        let mut out = Self::new(self.name.clone(), points)?;
        out.normalization = self.normalization;
        Ok(out)
    }

    /// Leading `len` points as a new series.
    pub fn prefix(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.len() {
            return Err(Error::invalid(format!(
                "prefix length {len} outside 1..={}",
                self.len()
            )));
        }
        let mut out = Self::new(self.name.clone(), self.points[..len].to_vec())?;
        out.normalization = self.normalization;
        Ok(out)
    }
}

/// Min-max normalisation fitted over the whole series.
pub fn normalize(series: &TimeSeries) -> Result<TimeSeries> {
    if series.len() < 2 {
        return Err(Error::InsufficientData(
            "normalization needs at least two points".into(),
        ));
    }
    let params = NormalizationParams::fit(&series.values())?;
    normalize_with(series, params)
}

/// Applies previously fitted parameters, e.g. ones fitted on a training prefix.
pub fn normalize_with(series: &TimeSeries, params: NormalizationParams) -> Result<TimeSeries> {
    let values: Vec<f64> = series.points.iter().map(|p| params.apply(p.value)).collect();
    let mut out = series.with_values(&values)?;
    out.normalization = Some(params);
    Ok(out)
}

/// Undoes [`normalize`]; a series without parameters is returned unchanged.
pub fn denormalize(series: &TimeSeries) -> Result<TimeSeries> {
    match series.normalization {
        None => Ok(series.clone()),
        Some(params) => {
            let values: Vec<f64> = series.points.iter().map(|p| params.invert(p.value)).collect();
            let mut out = series.with_values(&values)?;
            out.normalization = None;
            Ok(out)
        }
    }
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub timestamp: String,
    pub value: String,
    /// Read when present in the header; absent columns leave labels unset.
    pub label: Option<String>,
}

impl CsvSchema {
    pub fn new(timestamp: &str, value: &str, label: Option<&str>) -> Self {
        Self {
            timestamp: timestamp.to_string(),
            value: value.to_string(),
            label: label.map(str::to_string),
        }
    }

    /// NAB layout: `timestamp,value`.
    pub fn nab() -> Self {
        Self::new("timestamp", "value", None)
    }

    /// Yahoo Webscope layout: `timestamp,value,is_anomaly`.
    pub fn yahoo() -> Self {
        Self::new("timestamp", "value", Some("is_anomaly"))
    }
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self::yahoo()
    }
}

fn parse_timestamp(cell: &str) -> Option<i64> {
    let cell = cell.trim();
    if let Ok(i) = cell.parse::<i64>() {
        return Some(i);
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(cell, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

fn parse_label(cell: &str) -> std::result::Result<Option<bool>, ()> {
    match cell.trim() {
        "" => Ok(None),
        "0" | "false" | "False" | "FALSE" => Ok(Some(false)),
        "1" | "true" | "True" | "TRUE" => Ok(Some(true)),
        other => match other.parse::<f64>() {
            Ok(0.0) => Ok(Some(false)),
            Ok(1.0) => Ok(Some(true)),
            _ => Err(()),
        },
    }
}

/// Reads a CSV file with a header row. Lines starting with `#` are skipped.
/// Row numbers in errors count data rows from 1.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<TimeSeries> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_csv(&name, &text, schema)
}

/// Parses CSV text; see [`load_csv`].
pub fn parse_csv(name: &str, text: &str, schema: &CsvSchema) -> Result<TimeSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let find = |col: &str| headers.iter().position(|h| h == col);
    let ts_col = find(&schema.timestamp).ok_or_else(|| Error::MissingColumn(schema.timestamp.clone()))?;
    let value_col = find(&schema.value).ok_or_else(|| Error::MissingColumn(schema.value.clone()))?;
    let label_col = schema.label.as_deref().and_then(find);

    let mut points = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let cell = |col: usize| record.get(col).unwrap_or("");
        let ts_cell = cell(ts_col);
        let timestamp = parse_timestamp(ts_cell).ok_or_else(|| Error::ParseCell {
            row,
            column: schema.timestamp.clone(),
            cell: ts_cell.to_string(),
        })?;
        let v_cell = cell(value_col);
        let value: f64 = v_cell.parse().map_err(|_| Error::ParseCell {
            row,
            column: schema.value.clone(),
            cell: v_cell.to_string(),
        })?;
        if !value.is_finite() {
            return Err(Error::NonFinite { row });
        }
        let is_anomaly = match label_col {
            None => None,
            Some(col) => parse_label(cell(col)).map_err(|_| Error::ParseCell {
                row,
                column: schema.label.clone().unwrap_or_default(),
                cell: cell(col).to_string(),
            })?,
        };
        if let Some(prev) = points.last().map(|p: &SeriesPoint| p.timestamp) {
            if timestamp <= prev {
                return Err(Error::NonMonotonic { row });
            }
        }
        points.push(SeriesPoint {
            timestamp,
            value,
            is_anomaly,
        });
    }
    TimeSeries::new(name, points)
}

/// Serialises a series as `timestamp,value[,is_anomaly]`. The label column is
/// written when any point carries a label; unset labels become empty cells.
pub fn to_csv_string(series: &TimeSeries, schema: &CsvSchema) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let label_col = if series.has_labels() {
        Some(schema.label.clone().unwrap_or_else(|| "is_anomaly".into()))
    } else {
        None
    };
    let mut header = vec![schema.timestamp.clone(), schema.value.clone()];
    header.extend(label_col.iter().cloned());
    writer.write_record(&header)?;
    for p in series.points() {
        let mut row = vec![p.timestamp.to_string(), format!("{:?}", p.value)];
        if label_col.is_some() {
            row.push(match p.is_anomaly {
                Some(true) => "1".into(),
                Some(false) => "0".into(),
                None => String::new(),
            });
        }
        writer.write_record(&row)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::invalid(format!("csv flush failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

pub fn write_csv(series: &TimeSeries, path: impl AsRef<Path>, schema: &CsvSchema) -> Result<()> {
    write_atomic(path, to_csv_string(series, schema)?.as_bytes())
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

const LOCAL_MEDIAN_HALF_WIDTH: usize = 5;

/// Parameters for spike injection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectionSpec {
    pub count: usize,
    /// Spike height in units of the series' global standard deviation.
    pub magnitude: f64,
    pub seed: u64,
    /// Indices below this are never touched (the training prefix).
    pub protected_prefix: usize,
}

impl InjectionSpec {
    /// Protects the leading 40% of a series of length `len`.
    pub fn new(count: usize, magnitude: f64, seed: u64, len: usize) -> Self {
        Self {
            count,
            magnitude,
            seed,
            protected_prefix: (len as f64 * 0.4).ceil() as usize,
        }
    }
}

/// Replaces `spec.count` points with spikes of height `magnitude * sigma`
/// around the local rolling median, with a seeded random sign, and labels
/// them anomalous. Points without a label become labeled normal. `sigma` is the population standard deviation of the input,
/// floored at `max(0.1 * |median|, 1e-3)` so constant series still get spikes.
pub fn inject_anomalies(series: &TimeSeries, spec: &InjectionSpec) -> Result<TimeSeries> {
    let n = series.len();
    if spec.count >= n {
        return Err(Error::invalid(format!(
            "count {} must be below series length {n}",
            spec.count
        )));
    }
    if !(spec.magnitude > 0.0) || !spec.magnitude.is_finite() {
        return Err(Error::invalid("magnitude must be positive"));
    }
    if spec.count == 0 {
        return Ok(series.clone());
    }
    if spec.count * 20 >= n {
        return Err(Error::invalid(format!(
            "count {} is not below 5% of series length {n}",
            spec.count
        )));
    }

    let values = series.values();
    let (_, std) = mean_std(&values);
    let sigma = std.max(0.1 * median(&values).abs()).max(1e-3);

    let eligible: Vec<usize> = (spec.protected_prefix.min(n)..n)
        .filter(|&i| series.points[i].is_anomaly != Some(true))
        .collect();
    if eligible.len() < spec.count {
        return Err(Error::InsufficientData(format!(
            "{} eligible indices for {} injections",
            eligible.len(),
            spec.count
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut chosen: Vec<usize> = eligible.choose_multiple(&mut rng, spec.count).copied().collect();
    chosen.sort_unstable();

    let mut out = series.with_missing_labels(false);
    for idx in chosen {
        let lo = idx.saturating_sub(LOCAL_MEDIAN_HALF_WIDTH);
        let hi = (idx + LOCAL_MEDIAN_HALF_WIDTH + 1).min(n);
        let local = median(&values[lo..hi]);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let p = &mut out.points[idx];
        p.value = local + sign * spec.magnitude * sigma;
        p.is_anomaly = Some(true);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SyntheticKind {
    /// Sine with seeded period and phase, amplitude 0.9, uniform noise in ±0.1.
    Sine,
    /// Linear trend of 0.02 per step with uniform noise in ±0.25.
    TrendNoise,
    /// Markov switching between levels 0 and 3 with Gaussian noise.
    Bimodal,
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine" => Ok(Self::Sine),
            "trend+noise" | "trend" => Ok(Self::TrendNoise),
            "bimodal" => Ok(Self::Bimodal),
            other => Err(Error::invalid(format!("unknown synthetic kind `{other}`"))),
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sine => "sine",
            Self::TrendNoise => "trend+noise",
            Self::Bimodal => "bimodal",
        })
    }
}

pub fn generate_synthetic(kind: SyntheticKind, length: usize, seed: u64) -> Result<TimeSeries> {
    if length < 100 {
        return Err(Error::invalid(format!(
            "synthetic length must be at least 100, got {length}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = match kind {
        SyntheticKind::Sine => {
            let period = rng.random_range(40.0..80.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (0..length)
                .map(|i| {
                    let s = 0.9 * (std::f64::consts::TAU * i as f64 / period + phase).sin();
                    s + rng.random_range(-0.1..=0.1)
                })
                .collect()
        }
        SyntheticKind::TrendNoise => (0..length)
            .map(|i| 0.02 * i as f64 + rng.random_range(-0.25..=0.25))
            .collect(),
        SyntheticKind::Bimodal => {
            let noise = Normal::new(0.0, 0.3).expect("valid normal");
            let mut high = rng.random_bool(0.5);
            (0..length)
                .map(|_| {
                    if rng.random_bool(0.02) {
                        high = !high;
                    }
                    let level = if high { 3.0 } else { 0.0 };
                    level + noise.sample(&mut rng)
                })
                .collect()
        }
    };
    TimeSeries::from_values(format!("{kind}-{seed}"), &values)
}
