//! Anomaly detectors built on per-quantile LSTM forecasters.
//!
//! - [`DetectorKind::QuantileLstm`] forecasts `q_low` and `q_high` of the next
//!   period and flags observations outside that band.
//! - [`DetectorKind::IqrLstm`] forecasts the quartiles and the median and flags
//!   observations beyond `median ± k * IQR`.
//! - [`DetectorKind::MedianLstm`] forecasts the median only, and thresholds the
//!   observed-minus-predicted difference stream per block of `t` differences at
//!   `mu_p ± w * sigma_p`.
//!
//! All rules use strict inequalities. Detectors never read anomaly labels;
//! callers that want labeled stretches kept out of training pass their indices
//! to [`FittedDetector::fit_excluding`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{predict_batch, train, EpochTrace, LstmModel, TrainConfig};
use crate::series::{mean_std, NormalizationParams, TimeSeries};
use crate::windowing::{detection_pairs_from_values, training_pairs, WindowConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DetectorKind {
    QuantileLstm,
    IqrLstm,
    MedianLstm,
}

impl DetectorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::QuantileLstm => "quantile",
            Self::IqrLstm => "iqr",
            Self::MedianLstm => "median",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantile" | "quantile-lstm" => Ok(Self::QuantileLstm),
            "iqr" | "iqr-lstm" => Ok(Self::IqrLstm),
            "median" | "median-lstm" => Ok(Self::MedianLstm),
            other => Err(Error::invalid(format!("unknown detector `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    pub q_low: f64,
    pub q_high: f64,
    /// Fence width in IQR units for the IQR detector.
    pub iqr_multiplier: f64,
    /// Threshold width in standard deviations for the median detector.
    pub median_w: f64,
    pub window: WindowConfig,
    /// Leading fraction of the series used to train the forecasters.
    pub train_fraction: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            kind: DetectorKind::QuantileLstm,
            q_low: 0.1,
            q_high: 0.9,
            iqr_multiplier: 1.5,
            median_w: 2.0,
            window: WindowConfig::default(),
            train_fraction: 0.4,
        }
    }
}

impl DetectorConfig {
    pub fn with_kind(kind: DetectorKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q_low > 0.0 && self.q_low < 0.5) {
            return Err(Error::invalid(format!("q_low {} outside (0, 0.5)", self.q_low)));
        }
        if !(self.q_high > 0.5 && self.q_high < 1.0) {
            return Err(Error::invalid(format!("q_high {} outside (0.5, 1)", self.q_high)));
        }
        if !(self.iqr_multiplier > 0.0) || !self.iqr_multiplier.is_finite() {
            return Err(Error::invalid("iqr_multiplier must be positive"));
        }
        if !(self.median_w > 0.0) || !self.median_w.is_finite() {
            return Err(Error::invalid("median_w must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::invalid("train_fraction must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Quantile levels of the member forecasters.
    pub fn taus(&self) -> Vec<f64> {
        match self.kind {
            DetectorKind::QuantileLstm => vec![self.q_low, self.q_high],
            DetectorKind::IqrLstm => vec![0.25, 0.5, 0.75],
            DetectorKind::MedianLstm => vec![0.5],
        }
    }

    /// Number of leading points used for training in a series of length `n`.
    pub fn train_len(&self, n: usize) -> usize {
        ((n as f64 * self.train_fraction).round() as usize).min(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorVerdict {
    pub index: usize,
    pub observed: f64,
    pub predicted_low: Option<f64>,
    pub predicted_high: Option<f64>,
    pub predicted_median: Option<f64>,
    pub score: f64,
    pub is_anomaly: bool,
    pub rule: String,
}

/// Per-block thresholds of the median detector, in difference units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianThresholds {
    pub block_index: usize,
    pub mu_p: f64,
    pub sigma_p: f64,
    pub upper: f64,
    pub lower: f64,
}

impl MedianThresholds {
    pub fn new(block_index: usize, mu_p: f64, sigma_p: f64, w: f64) -> Self {
        Self {
            block_index,
            mu_p,
            sigma_p,
            upper: mu_p + w * sigma_p,
            lower: mu_p - w * sigma_p,
        }
    }
}

pub const RULE_INSIDE: &str = "inside band";
pub const RULE_ABOVE_HIGH: &str = "above q_high";
pub const RULE_BELOW_LOW: &str = "below q_low";
pub const RULE_ABOVE_FENCE: &str = "above upper fence";
pub const RULE_BELOW_FENCE: &str = "below lower fence";
pub const RULE_DIFF_ABOVE: &str = "difference above upper threshold";
pub const RULE_DIFF_BELOW: &str = "difference below lower threshold";
pub const RULE_DIFF_INSIDE: &str = "difference within thresholds";

/// Orders a band, reporting whether a swap was needed.
fn repair(low: f64, high: f64) -> (f64, f64, bool) {
    if low > high {
        (high, low, true)
    } else {
        (low, high, false)
    }
}

/// Signed distance beyond `[low, high]` in units of the band width (raw units
/// when the band has zero width); zero inside.
fn band_score(observed: f64, low: f64, high: f64) -> f64 {
    let width = high - low;
    let scale = if width > 0.0 { width } else { 1.0 };
    if observed > high {
        (observed - high) / scale
    } else if observed < low {
        -(low - observed) / scale
    } else {
        0.0
    }
}

/// `(index, observed)` pairs checked against forecast bands.
pub type Observation = (usize, f64);

/// Quantile-band verdicts for given forecasts. Returns the verdicts and the
/// number of crossed bands that were repaired by swapping.
pub fn quantile_verdicts(observations: &[Observation], low: &[f64], high: &[f64]) -> Result<(Vec<DetectorVerdict>, usize)> {
    check_lengths(observations.len(), &[low.len(), high.len()])?;
    let mut repairs = 0;
    let verdicts = observations
        .iter()
        .zip(low.iter().zip(high))
        .map(|(&(index, x), (&lo, &hi))| {
            let (lo, hi, swapped) = repair(lo, hi);
            repairs += usize::from(swapped);
            let (is_anomaly, rule) = if x > hi {
                (true, RULE_ABOVE_HIGH)
            } else if x < lo {
                (true, RULE_BELOW_LOW)
            } else {
                (false, RULE_INSIDE)
            };
            DetectorVerdict {
                index,
                observed: x,
                predicted_low: Some(lo),
                predicted_high: Some(hi),
                predicted_median: None,
                score: band_score(x, lo, hi),
                is_anomaly,
                rule: rule.to_string(),
            }
        })
        .collect();
    Ok((verdicts, repairs))
}

/// IQR-fence verdicts: flagged when `x > median + k * (q75 - q25)` or
/// `x < median - k * (q75 - q25)`. The reported band is the fence pair.
pub fn iqr_verdicts(
    observations: &[Observation],
    q25: &[f64],
    median: &[f64],
    q75: &[f64],
    multiplier: f64,
) -> Result<(Vec<DetectorVerdict>, usize)> {
    check_lengths(observations.len(), &[q25.len(), median.len(), q75.len()])?;
    let mut repairs = 0;
    let verdicts = observations
        .iter()
        .enumerate()
        .map(|(k, &(index, x))| {
            let (lo_q, hi_q, swapped) = repair(q25[k], q75[k]);
            repairs += usize::from(swapped);
            let iqr = hi_q - lo_q;
            let upper = median[k] + multiplier * iqr;
            let lower = median[k] - multiplier * iqr;
            let (is_anomaly, rule) = if x > upper {
                (true, RULE_ABOVE_FENCE)
            } else if x < lower {
                (true, RULE_BELOW_FENCE)
            } else {
                (false, RULE_INSIDE)
            };
            DetectorVerdict {
                index,
                observed: x,
                predicted_low: Some(lower),
                predicted_high: Some(upper),
                predicted_median: Some(median[k]),
                score: band_score(x, lower, upper),
                is_anomaly,
                rule: rule.to_string(),
            }
        })
        .collect();
    Ok((verdicts, repairs))
}

/// Thresholds for consecutive blocks of `block_len` differences; a trailing
/// partial block gets its own statistics. `sigma_p` is the population
/// standard deviation.
pub fn median_thresholds(differences: &[f64], block_len: usize, w: f64) -> Vec<MedianThresholds> {
    differences
        .chunks(block_len.max(1))
        .enumerate()
        .map(|(p, block)| {
            let (mu, sigma) = mean_std(block);
            MedianThresholds::new(p, mu, sigma, w)
        })
        .collect()
}

/// Median-difference verdicts for given median forecasts.
pub fn median_verdicts(
    observations: &[Observation],
    median: &[f64],
    block_len: usize,
    w: f64,
) -> Result<(Vec<DetectorVerdict>, Vec<MedianThresholds>)> {
    check_lengths(observations.len(), &[median.len()])?;
    if block_len == 0 {
        return Err(Error::invalid("block length must be positive"));
    }
    let diffs: Vec<f64> = observations.iter().zip(median).map(|(&(_, x), m)| x - m).collect();
    let thresholds = median_thresholds(&diffs, block_len, w);
    let verdicts = observations
        .iter()
        .zip(median)
        .zip(&diffs)
        .enumerate()
        .map(|(k, ((&(index, x), &m), &d))| {
            let th = &thresholds[k / block_len];
            let (is_anomaly, rule) = if d > th.upper {
                (true, RULE_DIFF_ABOVE)
            } else if d < th.lower {
                (true, RULE_DIFF_BELOW)
            } else {
                (false, RULE_DIFF_INSIDE)
            };
            let score = if th.sigma_p > 0.0 { (d - th.mu_p) / th.sigma_p } else { 0.0 };
            DetectorVerdict {
                index,
                observed: x,
                predicted_low: Some(m + th.lower),
                predicted_high: Some(m + th.upper),
                predicted_median: Some(m),
                score,
                is_anomaly,
                rule: rule.to_string(),
            }
        })
        .collect();
    Ok((verdicts, thresholds))
}

fn check_lengths(n: usize, others: &[usize]) -> Result<()> {
    if others.iter().any(|&m| m != n) {
        return Err(Error::ShapeMismatch(format!(
            "{n} observations but forecast lengths {others:?}"
        )));
    }
    Ok(())
}

/// One trained forecaster.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedMember {
    pub tau: f64,
    pub model: LstmModel,
    pub traces: Vec<EpochTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedDetector {
    pub config: DetectorConfig,
    pub train_config: TrainConfig,
    /// Fitted on the training prefix and applied to every series passed to `detect`.
    pub normalization: NormalizationParams,
    pub train_len: usize,
    pub members: Vec<FittedMember>,
}

/// Output of [`FittedDetector::detect`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub verdicts: Vec<DetectorVerdict>,
    /// Median detector only.
    pub thresholds: Vec<MedianThresholds>,
    pub band_repairs: usize,
}

impl Detection {
    pub fn flagged(&self) -> usize {
        self.verdicts.iter().filter(|v| v.is_anomaly).count()
    }
}

/// Min-max over the training prefix; a constant prefix maps to zero.
fn prefix_normalization(values: &[f64]) -> Result<NormalizationParams> {
    match NormalizationParams::fit(values) {
        Ok(p) => Ok(p),
        Err(Error::ConstantSeries) => NormalizationParams::new(values[0], values[0] + 1.0),
        Err(e) => Err(e),
    }
}

const MIN_TRAINING_PAIRS: usize = 10;

impl FittedDetector {
    pub fn fit(series: &TimeSeries, cfg: &DetectorConfig, train_cfg: &TrainConfig) -> Result<Self> {
        Self::fit_excluding(series, cfg, train_cfg, &[])
    }

    /// Fits while dropping every training pair whose span (its period plus the
    /// shifted label period) touches an index in `excluded`.
    pub fn fit_excluding(
        series: &TimeSeries,
        cfg: &DetectorConfig,
        train_cfg: &TrainConfig,
        excluded: &[usize],
    ) -> Result<Self> {
        cfg.validate()?;
        train_cfg.validate()?;
        let t = cfg.window.period_len();
        let train_len = cfg.train_len(series.len());
        if train_len < t + MIN_TRAINING_PAIRS {
            return Err(Error::InsufficientData(format!(
                "training prefix of {train_len} points yields fewer than {MIN_TRAINING_PAIRS} pairs for period length {t}"
            )));
        }
        let raw = series.values();
        let normalization = prefix_normalization(&raw[..train_len])?;
        let prefix: Vec<f64> = raw[..train_len].iter().map(|&v| normalization.apply(v)).collect();

        let taus = cfg.taus();
        let mut sets = Vec::with_capacity(taus.len());
        for &tau in &taus {
            let mut set = training_pairs(&prefix, &cfg.window, tau)?;
            if !excluded.is_empty() {
                set.retain_origins(|k| !excluded.iter().any(|&e| e >= k && e <= k + t));
            }
            if set.len() < MIN_TRAINING_PAIRS {
                return Err(Error::InsufficientData(format!(
                    "{} training pairs left after exclusions",
                    set.len()
                )));
            }
            sets.push(set);
        }

        let init = LstmModel::init(&train_cfg.model, train_cfg.seed)?;
        // Members are independent; each gets its own thread.
        let results: Vec<Result<(LstmModel, Vec<EpochTrace>)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = sets
                .iter()
                .map(|set| {
                    let init = &init;
                    scope.spawn(move || train(init, set, train_cfg))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training thread panicked"))
                .collect()
        });
        let mut members = Vec::with_capacity(taus.len());
        for (tau, res) in taus.into_iter().zip(results) {
            let (model, traces) = res?;
            members.push(FittedMember { tau, model, traces });
        }
        Ok(Self {
            config: *cfg,
            train_config: *train_cfg,
            normalization,
            train_len,
            members,
        })
    }

    fn member(&self, tau: f64) -> Result<&FittedMember> {
        self.members
            .iter()
            .find(|m| m.tau == tau)
            .ok_or_else(|| Error::invalid(format!("no forecaster for tau {tau}")))
    }

    /// Raw-scale forecasts of `tau` for every detection pair, with the
    /// observations they are checked against.
    pub fn forecast(&self, series: &TimeSeries, tau: f64) -> Result<(Vec<Observation>, Vec<f64>)> {
        let member = self.member(tau)?;
        let normalized: Vec<f64> = series.points().iter().map(|p| self.normalization.apply(p.value)).collect();
        let pairs = detection_pairs_from_values(&normalized, &self.config.window, tau)?;
        let inputs: Vec<Vec<f64>> = pairs.iter().map(|p| p.input.clone()).collect();
        let preds = predict_batch(&member.model, &inputs)?;
        let observations = pairs
            .iter()
            .map(|p| (p.observed_index, series.points()[p.observed_index].value))
            .collect();
        Ok((observations, preds.into_iter().map(|y| self.normalization.invert(y)).collect()))
    }

    /// One verdict per detection pair over the whole series.
    pub fn detect(&self, series: &TimeSeries) -> Result<Detection> {
        let cfg = &self.config;
        match cfg.kind {
            DetectorKind::QuantileLstm => {
                let (obs, low) = self.forecast(series, cfg.q_low)?;
                let (_, high) = self.forecast(series, cfg.q_high)?;
                let (verdicts, band_repairs) = quantile_verdicts(&obs, &low, &high)?;
                Ok(Detection { verdicts, thresholds: Vec::new(), band_repairs })
            }
            DetectorKind::IqrLstm => {
                let (obs, q25) = self.forecast(series, 0.25)?;
                let (_, med) = self.forecast(series, 0.5)?;
                let (_, q75) = self.forecast(series, 0.75)?;
                let (verdicts, band_repairs) = iqr_verdicts(&obs, &q25, &med, &q75, cfg.iqr_multiplier)?;
                Ok(Detection { verdicts, thresholds: Vec::new(), band_repairs })
            }
            DetectorKind::MedianLstm => {
                let (obs, med) = self.forecast(series, 0.5)?;
                let (verdicts, thresholds) = median_verdicts(&obs, &med, cfg.window.period_len(), cfg.median_w)?;
                Ok(Detection { verdicts, thresholds, band_repairs: 0 })
            }
        }
    }
}

fn ensure_kind(fitted: &FittedDetector, kind: DetectorKind) -> Result<()> {
    if fitted.config.kind != kind {
        return Err(Error::invalid(format!(
            "detector is {}, expected {kind}",
            fitted.config.kind
        )));
    }
    Ok(())
}

fn with_kind(cfg: &DetectorConfig, kind: DetectorKind) -> DetectorConfig {
    DetectorConfig { kind, ..*cfg }
}

pub fn fit_quantile_lstm(series: &TimeSeries, cfg: &DetectorConfig, train_cfg: &TrainConfig) -> Result<FittedDetector> {
    FittedDetector::fit(series, &with_kind(cfg, DetectorKind::QuantileLstm), train_cfg)
}

pub fn detect_quantile(fitted: &FittedDetector, series: &TimeSeries) -> Result<Vec<DetectorVerdict>> {
    ensure_kind(fitted, DetectorKind::QuantileLstm)?;
    Ok(fitted.detect(series)?.verdicts)
}

pub fn fit_iqr_lstm(series: &TimeSeries, cfg: &DetectorConfig, train_cfg: &TrainConfig) -> Result<FittedDetector> {
    FittedDetector::fit(series, &with_kind(cfg, DetectorKind::IqrLstm), train_cfg)
}

pub fn detect_iqr(fitted: &FittedDetector, series: &TimeSeries) -> Result<Vec<DetectorVerdict>> {
    ensure_kind(fitted, DetectorKind::IqrLstm)?;
    Ok(fitted.detect(series)?.verdicts)
}

pub fn fit_median_lstm(series: &TimeSeries, cfg: &DetectorConfig, train_cfg: &TrainConfig) -> Result<FittedDetector> {
    FittedDetector::fit(series, &with_kind(cfg, DetectorKind::MedianLstm), train_cfg)
}

pub fn detect_median(fitted: &FittedDetector, series: &TimeSeries) -> Result<(Vec<DetectorVerdict>, Vec<MedianThresholds>)> {
    ensure_kind(fitted, DetectorKind::MedianLstm)?;
    let d = fitted.detect(series)?;
    Ok((d.verdicts, d.thresholds))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:?}"))
}

/// `index,observed,low,high,median,score,is_anomaly,rule`
pub fn verdicts_to_csv(verdicts: &[DetectorVerdict]) -> String {
    let mut s = String::from("index,observed,low,high,median,score,is_anomaly,rule\n");
    for v in verdicts {
        s.push_str(&format!(
            "{},{:?},{},{},{},{:?},{},{}\n",
            v.index,
            v.observed,
            opt(v.predicted_low),
            opt(v.predicted_high),
            opt(v.predicted_median),
            v.score,
            u8::from(v.is_anomaly),
            v.rule
        ));
    }
    s
}

/// Reads the layout written by [`verdicts_to_csv`]; `#` lines are skipped.
pub fn verdicts_from_csv(text: &str) -> Result<Vec<DetectorVerdict>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let cell = |col: usize, name: &str| -> Result<&str> {
            record.get(col).ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let bad = |name: &str, c: &str| Error::ParseCell { row, column: name.to_string(), cell: c.to_string() };
        let num = |col: usize, name: &str| -> Result<f64> {
            let c = cell(col, name)?;
            c.parse().map_err(|_| bad(name, c))
        };
        let opt_num = |col: usize, name: &str| -> Result<Option<f64>> {
            let c = cell(col, name)?;
            if c.is_empty() {
                Ok(None)
            } else {
                c.parse().map(Some).map_err(|_| bad(name, c))
            }
        };
        let idx = cell(0, "index")?;
        let flag = cell(6, "is_anomaly")?;
        out.push(DetectorVerdict {
            index: idx.parse().map_err(|_| bad("index", idx))?,
            observed: num(1, "observed")?,
            predicted_low: opt_num(2, "low")?,
            predicted_high: opt_num(3, "high")?,
            predicted_median: opt_num(4, "median")?,
            score: num(5, "score")?,
            is_anomaly: match flag {
                "0" => false,
                "1" => true,
                _ => return Err(bad("is_anomaly", flag)),
            },
            rule: cell(7, "rule")?.to_string(),
        });
    }
    Ok(out)
}

/// `block,mu,sigma,upper,lower`
pub fn thresholds_to_csv(thresholds: &[MedianThresholds]) -> String {
    let mut s = String::from("block,mu,sigma,upper,lower\n");
    for t in thresholds {
        s.push_str(&format!(
            "{},{:?},{:?},{:?},{:?}\n",
            t.block_index, t.mu_p, t.sigma_p, t.upper, t.lower
        ));
    }
    s
}
