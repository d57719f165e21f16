//! Scoring and analysis: point-wise precision/recall, empirical probability
//! bounds of labeled anomalies beyond quantile thresholds, threshold sweeps,
//! false-alarm counts on anomaly-free data and the Elliot vs parameterised
//! Elliot ablation.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detectors::{Detection, DetectorConfig, DetectorVerdict, FittedDetector};
use crate::error::{Error, Result};
use crate::lstm::{Activation, ActivationKind, TrainConfig, DEFAULT_PEF_ALPHA};
use crate::series::TimeSeries;
use crate::windowing::quantile_sorted;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum MatchPolicy {
    /// A flag counts only on the labeled index itself.
    #[default]
    ExactIndex,
    /// A flag within `±k` positions of a labeled anomaly counts for it.
    Window(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub detector: String,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    pub precision: f64,
    pub recall: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_counts(dataset: &str, detector: &str, tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        Self {
            dataset: dataset.to_string(),
            detector: detector.to_string(),
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            true_negatives: tn,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
        }
    }

    pub fn with_detector(mut self, detector: impl Into<String>) -> Self {
        self.detector = detector.into();
        self
    }

    pub fn evaluated(&self) -> usize {
        self.true_positives + self.false_positives + self.false_negatives + self.true_negatives
    }
}

/// Scores verdicts against the labels of `truth` over the indices the
/// verdicts cover. Every covered point must carry a label.
///
/// With [`MatchPolicy::Window`], a labeled anomaly is a true positive when
/// any flag lies within the window, and a flag is a false positive when no
/// labeled anomaly does; true negatives are the remaining unflagged normal
/// points, so the four counts may not sum to the span length.
pub fn score(verdicts: &[DetectorVerdict], truth: &TimeSeries, policy: MatchPolicy) -> Result<EvalReport> {
    let points = truth.points();
    let mut span = BTreeSet::new();
    let mut flagged = BTreeSet::new();
    for v in verdicts {
        let label = points
            .get(v.index)
            .ok_or_else(|| Error::invalid(format!("verdict index {} beyond series length {}", v.index, points.len())))?
            .is_anomaly
            .ok_or_else(|| Error::Unlabeled(format!("index {} of `{}` has no label", v.index, truth.name())))?;
        let _ = label;
        if !span.insert(v.index) {
            return Err(Error::invalid(format!("duplicate verdict for index {}", v.index)));
        }
        if v.is_anomaly {
            flagged.insert(v.index);
        }
    }
    let actual: BTreeSet<usize> = span.iter().copied().filter(|&i| points[i].is_anomaly == Some(true)).collect();

    let (tp, fp, fn_, tn) = match policy {
        MatchPolicy::ExactIndex => {
            let tp = flagged.intersection(&actual).count();
            let fp = flagged.len() - tp;
            let fn_ = actual.len() - tp;
            (tp, fp, fn_, span.len() - tp - fp - fn_)
        }
        MatchPolicy::Window(k) => {
            let near = |set: &BTreeSet<usize>, i: usize| set.range(i.saturating_sub(k)..=i + k).next().is_some();
            let tp = actual.iter().filter(|&&a| near(&flagged, a)).count();
            let fn_ = actual.len() - tp;
            let fp = flagged.iter().filter(|&&f| !near(&actual, f)).count();
            let tn = span.iter().filter(|i| !flagged.contains(i) && !actual.contains(i)).count();
            (tp, fp, fn_, tn)
        }
    };
    Ok(EvalReport::from_counts(truth.name(), "", tp, fp, fn_, tn))
}

/// Keeps verdicts at or after `start` (the evaluation span after training).
pub fn verdicts_from(verdicts: &[DetectorVerdict], start: usize) -> Vec<DetectorVerdict> {
    verdicts.iter().filter(|v| v.index >= start).cloned().collect()
}

pub const HIGH_THRESHOLDS: [f64; 3] = [0.95, 0.9, 0.75];
pub const LOW_THRESHOLDS: [f64; 2] = [0.25, 0.10];

/// Labeled anomalies beyond one quantile threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdProbability {
    pub tau: f64,
    /// Empirical quantile of the whole series at `tau`.
    pub threshold: f64,
    pub count: usize,
    /// `count / n`.
    pub per_point: f64,
    /// `count / anomaly_count` (0 when there are no anomalies).
    pub per_anomaly: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityBoundRow {
    pub dataset: String,
    pub n: usize,
    pub anomaly_count: usize,
    /// For `tau` in 0.95, 0.9, 0.75: anomalies strictly above the quantile.
    pub p_above: Vec<ThresholdProbability>,
    /// For `tau` in 0.25, 0.10: anomalies strictly below the quantile.
    pub p_below: Vec<ThresholdProbability>,
    pub tau_high: f64,
    pub tau_low: f64,
    /// `p_above(tau_high) + p_below(tau_low)`, per point.
    pub p_anomaly: f64,
    /// Same sum, per anomaly.
    pub p_anomaly_per_anomaly: f64,
    /// Anomalies beyond either configured threshold, counted directly.
    pub union_count: usize,
}

impl ProbabilityBoundRow {
    pub fn above(&self, tau: f64) -> Option<&ThresholdProbability> {
        self.p_above.iter().find(|p| p.tau == tau)
    }

    pub fn below(&self, tau: f64) -> Option<&ThresholdProbability> {
        self.p_below.iter().find(|p| p.tau == tau)
    }
}

/// Fraction of points that are labeled anomalies lying beyond each empirical
/// quantile of the series, under both normalisations.
pub fn probability_bound(series: &TimeSeries, tau_high: f64, tau_low: f64) -> Result<ProbabilityBoundRow> {
    if !series.has_labels() {
        return Err(Error::Unlabeled(format!("`{}` carries no labels", series.name())));
    }
    if !(0.0..=1.0).contains(&tau_low) || !(0.0..=1.0).contains(&tau_high) || tau_low >= tau_high {
        return Err(Error::invalid(format!("need 0 <= tau_low < tau_high <= 1, got {tau_low}, {tau_high}")));
    }
    let values = series.values();
    let n = values.len();
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let anomalies: Vec<f64> = series
        .points()
        .iter()
        .filter(|p| p.is_anomaly == Some(true))
        .map(|p| p.value)
        .collect();
    let a = anomalies.len();
    let probability = |tau: f64, above: bool| {
        let threshold = quantile_sorted(&sorted, tau);
        let count = anomalies
            .iter()
            .filter(|&&v| if above { v > threshold } else { v < threshold })
            .count();
        ThresholdProbability {
            tau,
            threshold,
            count,
            per_point: ratio(count, n),
            per_anomaly: ratio(count, a),
        }
    };
    let mut highs: Vec<f64> = HIGH_THRESHOLDS.to_vec();
    if !highs.contains(&tau_high) {
        highs.push(tau_high);
    }
    let mut lows: Vec<f64> = LOW_THRESHOLDS.to_vec();
    if !lows.contains(&tau_low) {
        lows.push(tau_low);
    }
    let p_above: Vec<_> = highs.into_iter().map(|t| probability(t, true)).collect();
    let p_below: Vec<_> = lows.into_iter().map(|t| probability(t, false)).collect();
    let hi = p_above.iter().find(|p| p.tau == tau_high).copied().expect("configured high present");
    let lo = p_below.iter().find(|p| p.tau == tau_low).copied().expect("configured low present");
    let union_count = anomalies
        .iter()
        .filter(|&&v| v > hi.threshold || v < lo.threshold)
        .count();
    Ok(ProbabilityBoundRow {
        dataset: series.name().to_string(),
        n,
        anomaly_count: a,
        p_above,
        p_below,
        tau_high,
        tau_low,
        p_anomaly: hi.per_point + lo.per_point,
        p_anomaly_per_anomaly: hi.per_anomaly + lo.per_anomaly,
        union_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundNormalization {
    PerPoint,
    PerAnomaly,
}

/// Published per-dataset bounds: `P(E>0.95), P(E>0.9), P(E>0.75), P(F<0.25), P(F<0.10)`.
pub const REFERENCE_BOUNDS: &[(&str, [f64; 5])] = &[
    ("AWS Dataset_1", [0.0, 0.01, 0.004, 0.0, 0.0]),
    ("AWS Dataset_2", [0.0, 0.1, 0.1, 0.0, 0.0]),
    ("AWS Dataset_3", [0.0, 0.007, 0.0032, 0.0, 0.0]),
    ("Yahoo Dataset_1", [0.0, 0.014, 0.005, 0.0, 0.0]),
    ("Yahoo Dataset_2", [0.0, 0.105, 0.062, 0.0, 0.0]),
    ("Yahoo Dataset_3", [0.0, 0.103, 0.076, 0.0, 0.0]),
    ("Yahoo Dataset_4", [0.0, 0.014, 0.0055, 0.0, 0.0]),
    ("Yahoo Dataset_5", [0.0, 0.043, 0.016, 0.0, 0.0]),
    ("Yahoo Dataset_6", [0.0, 0.028, 0.011, 0.0, 0.0]),
    ("Yahoo Dataset_7", [0.0, 0.047, 0.018, 0.0069, 0.017]),
    ("Yahoo Dataset_8", [0.0, 0.011, 0.004, 0.016, 0.041]),
    ("Yahoo Dataset_9", [0.0, 0.017, 0.0069, 0.011, 0.029]),
    ("Sensor Dataset_1", [0.0, 0.0344, 0.0135, 0.0, 0.0]),
    ("Sensor Dataset_2", [0.0, 0.0, 0.0, 0.013, 0.033]),
    ("GE Dataset_1", [0.0, 0.003, 0.002, 0.0, 0.0]),
    ("GE Dataset_2", [0.0, 0.05, 0.042, 0.0, 0.0]),
];

pub fn reference_bounds(name: &str) -> Option<[f64; 5]> {
    REFERENCE_BOUNDS
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, v)| *v)
}

/// Which normalisation of `row` lies closer (L1) to `reference`.
pub fn closest_normalization(row: &ProbabilityBoundRow, reference: &[f64; 5]) -> Option<BoundNormalization> {
    let pick = |f: fn(&ThresholdProbability) -> f64| -> Option<[f64; 5]> {
        Some([
            f(row.above(0.95)?),
            f(row.above(0.9)?),
            f(row.above(0.75)?),
            f(row.below(0.25)?),
            f(row.below(0.10)?),
        ])
    };
    let per_point = pick(|p| p.per_point)?;
    let per_anomaly = pick(|p| p.per_anomaly)?;
    let dist = |v: [f64; 5]| v.iter().zip(reference).map(|(a, b)| (a - b).abs()).sum::<f64>();
    Some(if dist(per_point) <= dist(per_anomaly) {
        BoundNormalization::PerPoint
    } else {
        BoundNormalization::PerAnomaly
    })
}

/// A `(q_low, q_high)` cell of a threshold sweep, with its verbatim label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantilePair {
    pub label: String,
    pub q_low: f64,
    pub q_high: f64,
}

impl QuantilePair {
    pub fn new(q_low: f64, q_high: f64) -> Self {
        Self {
            label: format!("{q_high} and {q_low}"),
            q_low,
            q_high,
        }
    }

    /// From two percentages in either order, e.g. `99.25` and `0.75`.
    pub fn from_percentiles(a: f64, b: f64) -> Result<Self> {
        let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
        if !(lo > 0.0 && hi < 100.0 && lo < hi) {
            return Err(Error::invalid(format!("percentile pair ({a}, {b}) outside (0, 100)")));
        }
        Ok(Self {
            label: format!("{a} and {b}"),
            q_low: lo / 100.0,
            q_high: hi / 100.0,
        })
    }
}

/// Parses `"(99.25,0.75);(99.75,0.25)"` into percentile pairs.
pub fn parse_percentile_grid(spec: &str) -> Result<Vec<QuantilePair>> {
    let cells: Vec<&str> = spec.split(';').map(str::trim).filter(|c| !c.is_empty()).collect();
    if cells.is_empty() {
        return Err(Error::invalid("empty sweep grid"));
    }
    cells
        .into_iter()
        .map(|cell| {
            let inner = cell.trim_start_matches('(').trim_end_matches(')');
            let (a, b) = inner
                .split_once(',')
                .ok_or_else(|| Error::invalid(format!("grid cell `{cell}` is not `(high,low)`")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::invalid(format!("grid cell `{cell}` holds a non-number")))
            };
            QuantilePair::from_percentiles(parse(a)?, parse(b)?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub pair: QuantilePair,
    pub report: EvalReport,
}

/// Scores one verdict set per grid cell. `factory` produces the verdicts of
/// the evaluated span for a cell.
pub fn threshold_sweep<F>(truth: &TimeSeries, grid: &[QuantilePair], policy: MatchPolicy, mut factory: F) -> Result<Vec<SweepRow>>
where
    F: FnMut(&QuantilePair) -> Result<Vec<DetectorVerdict>>,
{
    if grid.is_empty() {
        return Err(Error::invalid("empty sweep grid"));
    }
    grid.iter()
        .map(|pair| {
            let verdicts = factory(pair)?;
            let report = score(&verdicts, truth, policy)?.with_detector(pair.label.clone());
            Ok(SweepRow { pair: pair.clone(), report })
        })
        .collect()
}

/// Number of flagged points among `verdicts`.
pub fn count_flags(verdicts: &[DetectorVerdict]) -> usize {
    verdicts.iter().filter(|v| v.is_anomaly).count()
}

/// Flags raised on an anomaly-free series; every flag is a false alarm.
pub fn false_alarm_count<F>(series: &TimeSeries, factory: F) -> Result<usize>
where
    F: FnOnce(&TimeSeries) -> Result<Vec<DetectorVerdict>>,
{
    if !series.anomaly_indices().is_empty() {
        return Err(Error::invalid(format!("`{}` still holds labeled anomalies", series.name())));
    }
    Ok(count_flags(&factory(series)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalseAlarmRow {
    pub dataset: String,
    pub false_alarms: usize,
    pub evaluated: usize,
}

impl FalseAlarmRow {
    pub fn rate(&self) -> f64 {
        ratio(self.false_alarms, self.evaluated)
    }
}

pub fn average_false_alarms(rows: &[FalseAlarmRow]) -> f64 {
    if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.false_alarms as f64).sum::<f64>() / rows.len() as f64
    }
}

/// Fits on the training prefix (labeled anomalies kept out of training
/// pairs), detects over the whole series and scores the span after training.
pub fn evaluate_detector(
    series: &TimeSeries,
    cfg: &DetectorConfig,
    train_cfg: &TrainConfig,
    policy: MatchPolicy,
) -> Result<(EvalReport, FittedDetector, Detection)> {
    let fitted = FittedDetector::fit_excluding(series, cfg, train_cfg, &series.anomaly_indices())?;
    let detection = fitted.detect(series)?;
    let span = verdicts_from(&detection.verdicts, fitted.train_len);
    let report = score(&span, series, policy)?.with_detector(cfg.kind.as_str());
    Ok((report, fitted, detection))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub dataset: String,
    pub elliot: EvalReport,
    pub param_elliot: EvalReport,
    pub initial_alpha: f64,
    pub final_alpha: f64,
}

/// Two end-to-end runs differing only in the cell activation.
pub fn ablation_ef_vs_pef(series: &TimeSeries, cfg: &DetectorConfig, train_cfg: &TrainConfig) -> Result<AblationReport> {
    let initial_alpha = match train_cfg.model.cell_activation.kind {
        ActivationKind::ParamElliot => train_cfg.model.cell_activation.alpha,
        _ => DEFAULT_PEF_ALPHA,
    };
    let arm = |activation: Activation| {
        let mut tc = *train_cfg;
        tc.model.cell_activation = activation;
        evaluate_detector(series, cfg, &tc, MatchPolicy::ExactIndex)
    };
    let (elliot, _, _) = arm(Activation::elliot())?;
    let (pef, fitted, _) = arm(Activation::param_elliot(initial_alpha))?;
    let final_alpha = fitted.members[0].model.alpha().unwrap_or(initial_alpha);
    Ok(AblationReport {
        dataset: series.name().to_string(),
        elliot: elliot.with_detector(format!("{}/elliot", cfg.kind)),
        param_elliot: pef.with_detector(format!("{}/param_elliot", cfg.kind)),
        initial_alpha,
        final_alpha,
    })
}

pub fn eval_reports_to_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("dataset,detector,tp,fp,fn,tn,precision,recall\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:?},{:?}",
            r.dataset, r.detector, r.true_positives, r.false_positives, r.false_negatives, r.true_negatives, r.precision, r.recall
        );
    }
    s
}

pub fn eval_reports_to_table(reports: &[EvalReport]) -> String {
    let mut s = format!("{:<24} {:<24} {:>9} {:>9} {:>6} {:>6} {:>6}\n", "Dataset", "Detector", "Precision", "Recall", "TP", "FP", "FN");
    for r in reports {
        let _ = writeln!(
            s,
            "{:<24} {:<24} {:>9.3} {:>9.3} {:>6} {:>6} {:>6}",
            r.dataset, r.detector, r.precision, r.recall, r.true_positives, r.false_positives, r.false_negatives
        );
    }
    s
}

pub fn probability_rows_to_csv(rows: &[ProbabilityBoundRow]) -> String {
    let mut s = String::from("dataset,normalization,P(E>0.95),P(E>0.9),P(E>0.75),P(F<0.25),P(F<0.10),P(A),tau_high,tau_low\n");
    for r in rows {
        for (name, f, pa) in [
            ("per_point", (|p: &ThresholdProbability| p.per_point) as fn(&ThresholdProbability) -> f64, r.p_anomaly),
            ("per_anomaly", |p: &ThresholdProbability| p.per_anomaly, r.p_anomaly_per_anomaly),
        ] {
            let get = |p: Option<&ThresholdProbability>| p.map_or(f64::NAN, f);
            let _ = writeln!(
                s,
                "{},{},{:?},{:?},{:?},{:?},{:?},{:?},{},{}",
                r.dataset,
                name,
                get(r.above(0.95)),
                get(r.above(0.9)),
                get(r.above(0.75)),
                get(r.below(0.25)),
                get(r.below(0.10)),
                pa,
                r.tau_high,
                r.tau_low
            );
        }
    }
    s
}

pub fn probability_rows_to_table(rows: &[ProbabilityBoundRow]) -> String {
    let mut s = format!(
        "{:<24} {:<12} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
        "Dataset", "Per", "P(E>.95)", "P(E>.9)", "P(E>.75)", "P(F<.25)", "P(F<.10)", "P(A)"
    );
    for r in rows {
        for (name, per_point) in [("point", true), ("anomaly", false)] {
            let f = |p: Option<&ThresholdProbability>| {
                p.map_or(f64::NAN, |p| if per_point { p.per_point } else { p.per_anomaly })
            };
            let pa = if per_point { r.p_anomaly } else { r.p_anomaly_per_anomaly };
            let _ = writeln!(
                s,
                "{:<24} {:<12} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
                r.dataset,
                name,
                f(r.above(0.95)),
                f(r.above(0.9)),
                f(r.above(0.75)),
                f(r.below(0.25)),
                f(r.below(0.10)),
                pa
            );
        }
    }
    s
}

pub fn sweep_rows_to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("dataset,thresholds,q_low,q_high,tp,fp,fn,tn,precision,recall\n");
    for r in rows {
        let e = &r.report;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{:?},{:?}",
            e.dataset, r.pair.label, r.pair.q_low, r.pair.q_high, e.true_positives, e.false_positives, e.false_negatives, e.true_negatives, e.precision, e.recall
        );
    }
    s
}

pub fn ablation_to_csv(rows: &[AblationReport]) -> String {
    let mut s = String::from("dataset,elliot_precision,elliot_recall,pef_precision,pef_recall,initial_alpha,final_alpha\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:?},{:?},{:?},{:?},{:?},{:?}",
            r.dataset, r.elliot.precision, r.elliot.recall, r.param_elliot.precision, r.param_elliot.recall, r.initial_alpha, r.final_alpha
        );
    }
    s
}
