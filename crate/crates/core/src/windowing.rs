//! Sliding periods split into disjoint windows, and the supervised quantile
//! pairs built from them.
//!
//! A period `T_k` is the `t` consecutive points starting at `k`. It is cut into
//! `w` disjoint windows of `m = t / w` points. The input for period `k` is the
//! vector of per-window sample quantiles; its label is the sample quantile of
//! the period shifted by one position, `T_{k+1}`. Indices here are 0-based, so
//! the first period covers `x[0..t]` and its label covers `x[1..=t]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    period_len: usize,
    window_count: usize,
}

impl WindowConfig {
    /// `period_len` must be a multiple of `window_count`.
    pub fn new(period_len: usize, window_count: usize) -> Result<Self> {
        if window_count == 0 || period_len < window_count {
            return Err(Error::invalid(format!(
                "need period_len >= window_count >= 1, got t={period_len}, w={window_count}"
            )));
        }
        if !period_len.is_multiple_of(window_count) {
            return Err(Error::invalid(format!(
                "period_len {period_len} is not divisible by window_count {window_count}"
            )));
        }
        Ok(Self {
            period_len,
            window_count,
        })
    }

    /// From a `window/period` pair as listed per dataset, e.g. `84/168`.
    pub fn from_window_and_period(window_len: usize, period_len: usize) -> Result<Self> {
        if window_len == 0 || !period_len.is_multiple_of(window_len) {
            return Err(Error::invalid(format!(
                "period_len {period_len} is not a multiple of window_len {window_len}"
            )));
        }
        Self::new(period_len, period_len / window_len)
    }

    pub fn period_len(&self) -> usize {
        self.period_len
    }

    pub fn window_count(&self) -> usize {
        self.window_count
    }

    pub fn window_len(&self) -> usize {
        self.period_len / self.window_count
    }

    /// Number of pairs a series of length `n` yields.
    pub fn pair_count(&self, n: usize) -> usize {
        n.saturating_sub(self.period_len)
    }

    /// Index ranges of the `w` windows of the period starting at `k`.
    pub fn windows(&self, k: usize) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let m = self.window_len();
        (0..self.window_count).map(move |j| k + j * m..k + (j + 1) * m)
    }
}

impl Default for WindowConfig {
    /// `t = 9`, `w = 3`.
    fn default() -> Self {
        Self {
            period_len: 9,
            window_count: 3,
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("tau {tau} outside [0, 1]")));
    }
    Ok(())
}

/// Linear interpolation between order statistics: with sorted `s`,
/// `h = (N - 1) * tau` and the result is `s[floor(h)] + frac(h) * (s[floor(h)+1] - s[floor(h)])`.
pub fn sample_quantile(data: &[f64], tau: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptySeries);
    }
    check_tau(tau)?;
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: i + 1 });
    }
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, tau))
}

pub(crate) fn quantile_sorted(sorted: &[f64], tau: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * tau;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

fn quantile_of(values: &[f64], tau: f64, scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend_from_slice(values);
    scratch.sort_by(f64::total_cmp);
    quantile_sorted(scratch, tau)
}

/// Per-`tau` supervised pairs for one quantile forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTrainingSet {
    pub tau: f64,
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    /// 0-based start index `k` of each pair's period.
    pub origin_indices: Vec<usize>,
}

impl QuantileTrainingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Keeps only pairs for which `keep(origin_index)` holds.
    pub fn retain_origins(&mut self, mut keep: impl FnMut(usize) -> bool) {
        let mask: Vec<bool> = self.origin_indices.iter().map(|&k| keep(k)).collect();
        let mut it = mask.iter();
        self.inputs.retain(|_| *it.next().unwrap());
        let mut it = mask.iter();
        self.labels.retain(|_| *it.next().unwrap());
        let mut it = mask.iter();
        self.origin_indices.retain(|_| *it.next().unwrap());
    }
}

/// Per-window quantile vector of the period starting at `k`.
fn window_quantiles(values: &[f64], cfg: &WindowConfig, k: usize, tau: f64, scratch: &mut Vec<f64>) -> Vec<f64> {
    cfg.windows(k)
        .map(|r| quantile_of(&values[r], tau, scratch))
        .collect()
}

fn check_len(n: usize, cfg: &WindowConfig) -> Result<()> {
    if n < cfg.period_len() + 1 {
        return Err(Error::InsufficientData(format!(
            "series of length {n} is shorter than period_len + 1 = {}",
            cfg.period_len() + 1
        )));
    }
    Ok(())
}

/// Builds the `n - t` pairs of a raw value slice.
pub fn training_pairs(values: &[f64], cfg: &WindowConfig, tau: f64) -> Result<QuantileTrainingSet> {
    check_tau(tau)?;
    check_len(values.len(), cfg)?;
    let t = cfg.period_len();
    let count = cfg.pair_count(values.len());
    let mut scratch = Vec::with_capacity(t);
    let mut inputs = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for k in 0..count {
        inputs.push(window_quantiles(values, cfg, k, tau, &mut scratch));
        labels.push(quantile_of(&values[k + 1..k + 1 + t], tau, &mut scratch));
    }
    Ok(QuantileTrainingSet {
        tau,
        inputs,
        labels,
        origin_indices: (0..count).collect(),
    })
}

pub fn build_training_set(series: &TimeSeries, cfg: &WindowConfig, tau: f64) -> Result<QuantileTrainingSet> {
    training_pairs(&series.values(), cfg, tau)
}

/// Input vector paired with the raw observation it is checked against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionPair {
    pub input: Vec<f64>,
    pub observed_next: f64,
    /// 0-based index of the observation, `k + t`.
    pub observed_index: usize,
}

/// For period `k` the observation is `x[k + t]`, the newest point of `T_{k+1}`.
pub fn detection_pairs_from_values(values: &[f64], cfg: &WindowConfig, tau: f64) -> Result<Vec<DetectionPair>> {
    check_tau(tau)?;
    check_len(values.len(), cfg)?;
    let t = cfg.period_len();
    let mut scratch = Vec::with_capacity(t);
    Ok((0..cfg.pair_count(values.len()))
        .map(|k| DetectionPair {
            input: window_quantiles(values, cfg, k, tau, &mut scratch),
            observed_next: values[k + t],
            observed_index: k + t,
        })
        .collect())
}

pub fn detection_pairs(series: &TimeSeries, cfg: &WindowConfig, tau: f64) -> Result<Vec<DetectionPair>> {
    detection_pairs_from_values(&series.values(), cfg, tau)
}
