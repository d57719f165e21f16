use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use quantile_lstm::detectors::{thresholds_to_csv, verdicts_from_csv, verdicts_to_csv, Detection, FittedMember};
use quantile_lstm::evaluation::{
    ablation_to_csv, closest_normalization, BoundNormalization, eval_reports_to_csv, eval_reports_to_table, evaluate_detector,
    parse_percentile_grid, probability_bound, probability_rows_to_csv, probability_rows_to_table, reference_bounds,
    score, sweep_rows_to_csv, verdicts_from, AblationReport, SweepRow, ablation_ef_vs_pef,
};
use quantile_lstm::lstm::{load_model_with_meta, save_model_with_meta, Activation, ActivationKind, ModelConfig, GATE_NAMES};
use quantile_lstm::series::{
    generate_synthetic, inject_anomalies, load_csv, to_csv_string, write_atomic, InjectionSpec, SyntheticKind,
};
use quantile_lstm::{
    CsvSchema, DetectorConfig, DetectorKind, EvalReport, FittedDetector, MatchPolicy, NormalizationParams,
    ProbabilityBoundRow, TimeSeries, TrainConfig, WindowConfig,
};

use crate::config::Settings;
use crate::svg::{line_plot, Line};
use crate::CliError;

pub const DATA_DIR_ENV: &str = "QLSTM_DATA_DIR";
const MODEL_PREFIX: &str = "model-q";
const MODEL_SUFFIX: &str = ".qlstm";

fn data_defaults() -> Vec<(&'static str, String)> {
    let schema = CsvSchema::default();
    vec![
        ("data", String::new()),
        ("timestamp-col", schema.timestamp),
        ("value-col", schema.value),
        ("label-col", schema.label.unwrap_or_else(|| "none".into())),
    ]
}

fn detector_defaults() -> Vec<(&'static str, String)> {
    let d = DetectorConfig::default();
    vec![
        ("detector", d.kind.to_string()),
        ("q-low", d.q_low.to_string()),
        ("q-high", d.q_high.to_string()),
        ("iqr-k", d.iqr_multiplier.to_string()),
        ("median-w", d.median_w.to_string()),
        ("period", d.window.period_len().to_string()),
        ("windows", d.window.window_count().to_string()),
        ("train-fraction", d.train_fraction.to_string()),
    ]
}

fn training_defaults() -> Vec<(&'static str, String)> {
    let t = TrainConfig::default();
    vec![
        ("epochs", t.epochs.to_string()),
        ("lr", t.learning_rate.to_string()),
        ("hidden", t.model.hidden_size.to_string()),
        ("layers", t.model.num_layers.to_string()),
        ("activation", t.model.cell_activation.kind.as_str().to_string()),
        ("alpha", t.model.cell_activation.alpha.to_string()),
        ("candidate-alpha", t.model.separate_candidate_alpha.to_string()),
        ("clip-norm", t.clip_norm.map_or_else(|| "none".into(), |c| c.to_string())),
        ("seed", t.seed.to_string()),
    ]
}

fn settings(command: &'static str, groups: &[Vec<(&'static str, String)>]) -> Settings {
    let flat: Vec<(&str, &str)> = groups.iter().flatten().map(|(k, v)| (*k, v.as_str())).collect();
    Settings::new(command, &flat)
}

fn own(pairs: &[(&'static str, &str)]) -> Vec<(&'static str, String)> {
    pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
}

pub fn synth_settings() -> Settings {
    settings(
        "synth",
        &[own(&[("kind", "sine"), ("length", "2000"), ("seed", "0"), ("inject", "0"), ("magnitude", "5")])],
    )
}

pub fn train_settings() -> Settings {
    settings(
        "train",
        &[data_defaults(), detector_defaults(), training_defaults(), own(&[("trace", "false"), ("svg", "false")])],
    )
}

pub fn detect_settings() -> Settings {
    settings("detect", &[data_defaults(), own(&[("models", ""), ("svg", "false")])])
}

pub fn eval_settings() -> Settings {
    settings(
        "eval",
        &[data_defaults(), detector_defaults(), training_defaults(), own(&[("verdicts", ""), ("match-window", "0")])],
    )
}

pub fn probe_settings() -> Settings {
    settings("probe", &[data_defaults(), own(&[("tau-high", "0.9"), ("tau-low", "0.1"), ("reference", "")])])
}

pub const DEFAULT_GRID: &str = "(99.25,0.75);(99.75,0.25);(99.9,0.1)";

pub fn sweep_settings() -> Settings {
    settings(
        "sweep",
        &[
            data_defaults(),
            detector_defaults(),
            training_defaults(),
            own(&[("grid", DEFAULT_GRID), ("match-window", "0")]),
        ],
    )
}

pub fn ablate_settings() -> Settings {
    settings("ablate", &[data_defaults(), detector_defaults(), training_defaults()])
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Relative paths are tried against the working directory, then the data
/// directory named by the environment.
fn resolve_input(raw: &str) -> PathBuf {
    let p = PathBuf::from(raw);
    if p.is_relative() && !p.exists() {
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
            let candidate = Path::new(&dir).join(&p);
            if candidate.exists() {
                return candidate;
            }
        }
    }
    p
}

fn schema(s: &Settings) -> CsvSchema {
    let label = s.raw("label-col");
    CsvSchema::new(
        s.raw("timestamp-col"),
        s.raw("value-col"),
        (label != "none" && !label.is_empty()).then_some(label),
    )
}

fn load_datasets(s: &Settings) -> Result<Vec<TimeSeries>, CliError> {
    s.require("data")?;
    let schema = schema(s);
    s.list("data")
        .iter()
        .map(|raw| load_csv(resolve_input(raw), &schema).map_err(config_err))
        .collect()
}

fn load_single(s: &Settings) -> Result<TimeSeries, CliError> {
    let mut all = load_datasets(s)?;
    if all.len() != 1 {
        return Err(CliError::Config(format!("`{}` takes exactly one data file", s.command())));
    }
    Ok(all.remove(0))
}

fn detector_config(s: &Settings) -> Result<DetectorConfig, CliError> {
    let window = WindowConfig::new(s.get("period")?, s.get("windows")?).map_err(config_err)?;
    let cfg = DetectorConfig {
        kind: s.get::<DetectorKind>("detector")?,
        q_low: s.get("q-low")?,
        q_high: s.get("q-high")?,
        iqr_multiplier: s.get("iqr-k")?,
        median_w: s.get("median-w")?,
        window,
        train_fraction: s.get("train-fraction")?,
    };
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

fn train_config(s: &Settings) -> Result<TrainConfig, CliError> {
    let kind: ActivationKind = s.get("activation")?;
    let cell_activation = match kind {
        ActivationKind::ParamElliot => Activation::param_elliot(s.get("alpha")?),
        other => Activation::from_kind(other),
    };
    let clip_norm = match s.raw("clip-norm") {
        "none" | "" => None,
        _ => Some(s.get("clip-norm")?),
    };
    let cfg = TrainConfig {
        learning_rate: s.get("lr")?,
        epochs: s.get("epochs")?,
        seed: s.get("seed")?,
        record_traces: true,
        clip_norm,
        model: ModelConfig {
            hidden_size: s.get("hidden")?,
            num_layers: s.get("layers")?,
            cell_activation,
            separate_candidate_alpha: s.get("candidate-alpha")?,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };
    cfg.validate().map_err(config_err)?;
    if cfg.model.hidden_size == 0 || cfg.model.num_layers == 0 {
        return Err(CliError::Config("hidden and layers must be at least 1".into()));
    }
    Ok(cfg)
}

fn match_policy(s: &Settings) -> Result<MatchPolicy, CliError> {
    Ok(match s.get::<usize>("match-window")? {
        0 => MatchPolicy::ExactIndex,
        k => MatchPolicy::Window(k),
    })
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

struct Out<'a> {
    dir: &'a Path,
    settings: &'a Settings,
}

impl<'a> Out<'a> {
    fn new(dir: &'a Path, settings: &'a Settings) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir, settings })
    }

    fn write(&self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        write_atomic(&path, body.as_bytes()).map_err(config_err)?;
        Ok(path)
    }

    /// CSV or text with the config echo as leading `#@` lines.
    fn write_echoed(&self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        self.write(name, &format!("{}{body}", self.settings.echo_lines()))
    }

    fn write_json(&self, name: &str, mut body: Value) -> Result<PathBuf, CliError> {
        if let Value::Object(map) = &mut body {
            map.insert("config".into(), Value::Object(self.settings.to_json_map()));
        }
        let mut text = serde_json::to_string_pretty(&body).map_err(config_err)?;
        text.push('\n');
        self.write(name, &text)
    }

    fn write_svg(&self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let comment: String = self
            .settings
            .entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {}\n", v.replace("--", "- -")))
            .collect();
        self.write(name, &format!("<!--\n{comment}-->\n{body}"))
    }
}

pub fn synth(s: &Settings, out: &Path) -> Result<(), CliError> {
    let kind: SyntheticKind = s.get("kind")?;
    let length: usize = s.get("length")?;
    let seed: u64 = s.get("seed")?;
    let inject: usize = s.get("inject")?;
    let magnitude: f64 = s.get("magnitude")?;
    let mut series = generate_synthetic(kind, length, seed).map_err(config_err)?;
    if inject > 0 {
        series = inject_anomalies(&series, &InjectionSpec::new(inject, magnitude, seed, length)).map_err(config_err)?;
    }
    let body = to_csv_string(&series, &CsvSchema::default()).map_err(config_err)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Config(format!("cannot create {}: {e}", parent.display())))?;
    }
    write_atomic(out, format!("{}{body}", s.echo_lines()).as_bytes()).map_err(config_err)?;
    println!("wrote {} ({} points, {} injected)", out.display(), series.len(), series.anomaly_indices().len());
    Ok(())
}

fn model_file(tau: f64) -> String {
    format!("{MODEL_PREFIX}{tau}{MODEL_SUFFIX}")
}

fn trace_csv(member: &FittedMember) -> String {
    let mut s = format!("epoch,{},alpha,loss\n", GATE_NAMES.join(","));
    for t in &member.traces {
        let gates: Vec<String> = t.gate_mean_abs.iter().map(|g| format!("{g:?}")).collect();
        let _ = writeln!(s, "{},{},{:?},{:?}", t.epoch, gates.join(","), t.alpha_value, t.loss_value);
    }
    s
}

fn trace_svg(member: &FittedMember) -> String {
    let series = |f: &dyn Fn(&quantile_lstm::EpochTrace) -> f64| -> Vec<(f64, f64)> {
        member.traces.iter().map(|t| (t.epoch as f64, f(t))).collect()
    };
    let mut lines: Vec<Line> = GATE_NAMES
        .iter()
        .enumerate()
        .map(|(g, name)| Line { label: name, points: series(&|t| t.gate_mean_abs[g]) })
        .collect();
    lines.push(Line { label: "alpha", points: series(&|t| t.alpha_value) });
    lines.push(Line { label: "loss", points: series(&|t| t.loss_value) });
    line_plot(&format!("training trace, tau = {}", member.tau), &lines, &[])
}

pub fn train(s: &Settings, out_dir: &Path) -> Result<(), CliError> {
    let series = load_single(s)?;
    let det = detector_config(s)?;
    let tc = train_config(s)?;
    let fitted = FittedDetector::fit(&series, &det, &tc)?;
    let out = Out::new(out_dir, s)?;
    let trace: bool = s.get("trace")?;
    let svg: bool = s.get("svg")?;

    let mut members = Vec::new();
    for m in &fitted.members {
        let mut meta = s.model_meta();
        meta.insert("tau".into(), m.tau.to_string());
        meta.insert("train_len".into(), fitted.train_len.to_string());
        meta.insert("normalization.min".into(), fitted.normalization.min.to_string());
        meta.insert("normalization.max".into(), fitted.normalization.max.to_string());
        let name = model_file(m.tau);
        save_model_with_meta(&m.model, &meta, out_dir.join(&name)).map_err(|e| CliError::ModelIo(e.to_string()))?;
        if trace {
            out.write_echoed(&format!("trace-q{}.csv", m.tau), &trace_csv(m))?;
        }
        if svg {
            out.write_svg(&format!("trace-q{}.svg", m.tau), &trace_svg(m))?;
        }
        let first = m.traces.first();
        members.push(json!({
            "tau": m.tau,
            "model_file": name,
            "initial_loss": first.map(|t| t.loss_value),
            "final_loss": m.traces.last().map(|t| t.loss_value),
            "final_alpha": m.model.alpha(),
        }));
    }
    out.write_json(
        "train.json",
        json!({
            "dataset": series.name(),
            "points": series.len(),
            "train_len": fitted.train_len,
            "normalization": {"min": fitted.normalization.min, "max": fitted.normalization.max},
            "members": members,
        }),
    )?;
    println!("trained {} forecaster(s) for {} into {}", fitted.members.len(), det.kind, out_dir.display());
    Ok(())
}

fn meta_value<'m>(meta: &'m BTreeMap<String, String>, key: &str, file: &Path) -> Result<&'m str, CliError> {
    meta.get(key)
        .map(String::as_str)
        .ok_or_else(|| CliError::ModelIo(format!("{}: missing `meta.{key}`", file.display())))
}

fn meta_parse<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str, file: &Path) -> Result<T, CliError> {
    let raw = meta_value(meta, key, file)?;
    raw.parse()
        .map_err(|_| CliError::ModelIo(format!("{}: bad `meta.{key}` value `{raw}`", file.display())))
}

/// Rebuilds a fitted detector from the model files in `dir`.
fn load_detector(dir: &Path) -> Result<FittedDetector, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::ModelIo(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(MODEL_PREFIX) && n.ends_with(MODEL_SUFFIX))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::ModelIo(format!("no model files in {}", dir.display())));
    }
    let mut loaded = Vec::new();
    for f in &files {
        let (model, meta) = load_model_with_meta(f).map_err(|e| CliError::ModelIo(format!("{}: {e}", f.display())))?;
        loaded.push((f.clone(), model, meta));
    }
    let (first_file, first_meta) = (loaded[0].0.clone(), loaded[0].2.clone());
    let (first_file, first_meta) = (&first_file, &first_meta);
    let mut train_settings = train_settings();
    for (k, v) in first_meta {
        if let Some(key) = k.strip_prefix(crate::config::MODEL_META_PREFIX) {
            if key != "command" {
                train_settings
                    .flag(key, Some(v))
                    .map_err(|e| CliError::ModelIo(format!("{}: {}", first_file.display(), e.message())))?;
            }
        }
    }
    let config = detector_config(&train_settings)?;
    let train_config = train_config(&train_settings)?;
    let normalization = NormalizationParams::new(
        meta_parse(first_meta, "normalization.min", first_file)?,
        meta_parse(first_meta, "normalization.max", first_file)?,
    )
    .map_err(|e| CliError::ModelIo(e.to_string()))?;
    let train_len: usize = meta_parse(first_meta, "train_len", first_file)?;

    let mut members = Vec::new();
    for (f, model, meta) in loaded {
        if meta.iter().filter(|(k, _)| k.starts_with(crate::config::MODEL_META_PREFIX)).ne(first_meta
            .iter()
            .filter(|(k, _)| k.starts_with(crate::config::MODEL_META_PREFIX)))
        {
            return Err(CliError::ModelIo(format!("{} was trained with a different configuration", f.display())));
        }
        let tau: f64 = meta_parse(&meta, "tau", &f)?;
        members.push(FittedMember { tau, model, traces: Vec::new() });
    }
    let mut want = config.taus();
    let mut have: Vec<f64> = members.iter().map(|m| m.tau).collect();
    want.sort_by(f64::total_cmp);
    have.sort_by(f64::total_cmp);
    if want != have {
        return Err(CliError::ModelIo(format!(
            "{} detector needs forecasters for {want:?}, found {have:?}",
            config.kind
        )));
    }
    members.sort_by(|a, b| a.tau.total_cmp(&b.tau));
    Ok(FittedDetector { config, train_config, normalization, train_len, members })
}

fn bands_svg(series: &TimeSeries, det: &Detection) -> String {
    let observed: Vec<(f64, f64)> = series.values().iter().enumerate().map(|(i, &v)| (i as f64, v)).collect();
    let band = |f: fn(&quantile_lstm::DetectorVerdict) -> Option<f64>| -> Vec<(f64, f64)> {
        det.verdicts.iter().filter_map(|v| f(v).map(|y| (v.index as f64, y))).collect()
    };
    let flags: Vec<(f64, f64)> = det
        .verdicts
        .iter()
        .filter(|v| v.is_anomaly)
        .map(|v| (v.index as f64, v.observed))
        .collect();
    let mut lines = vec![
        Line { label: "observed", points: observed },
        Line { label: "low", points: band(|v| v.predicted_low) },
        Line { label: "high", points: band(|v| v.predicted_high) },
    ];
    let median = band(|v| v.predicted_median);
    if !median.is_empty() {
        lines.push(Line { label: "median", points: median });
    }
    line_plot(&format!("{}: bands and flags", series.name()), &lines, &flags)
}

pub fn detect(s: &Settings, out_dir: &Path) -> Result<(), CliError> {
    let models = s.require("models")?;
    let series = load_single(s)?;
    let fitted = load_detector(&resolve_input(models))?;
    let detection = fitted.detect(&series)?;
    let out = Out::new(out_dir, s)?;
    out.write_echoed("verdicts.csv", &verdicts_to_csv(&detection.verdicts))?;
    if fitted.config.kind == DetectorKind::MedianLstm {
        out.write_echoed("thresholds.csv", &thresholds_to_csv(&detection.thresholds))?;
    }
    if s.get::<bool>("svg")? {
        out.write_svg("bands.svg", &bands_svg(&series, &detection))?;
    }
    let in_test = verdicts_from(&detection.verdicts, fitted.train_len);
    out.write_json(
        "detect.json",
        json!({
            "dataset": series.name(),
            "detector": fitted.config.kind.as_str(),
            "verdicts": detection.verdicts.len(),
            "flagged": detection.flagged(),
            "flagged_after_training": in_test.iter().filter(|v| v.is_anomaly).count(),
            "train_len": fitted.train_len,
            "band_repairs": detection.band_repairs,
            "model_config": model_config_echo(&fitted),
        }),
    )?;
    println!(
        "{}: {} of {} points flagged ({} band repairs)",
        series.name(),
        detection.flagged(),
        detection.verdicts.len(),
        detection.band_repairs
    );
    Ok(())
}

fn model_config_echo(f: &FittedDetector) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("detector".into(), json!(f.config.kind.as_str()));
    m.insert("taus".into(), json!(f.config.taus()));
    m.insert("q_low".into(), json!(f.config.q_low));
    m.insert("q_high".into(), json!(f.config.q_high));
    m.insert("iqr_k".into(), json!(f.config.iqr_multiplier));
    m.insert("median_w".into(), json!(f.config.median_w));
    m.insert("period".into(), json!(f.config.window.period_len()));
    m.insert("windows".into(), json!(f.config.window.window_count()));
    m.insert("seed".into(), json!(f.train_config.seed));
    m
}

fn reports_json(reports: &[EvalReport]) -> Value {
    serde_json::to_value(reports).unwrap_or(Value::Null)
}

pub fn eval(s: &Settings, out_dir: &Path, jobs: usize) -> Result<(), CliError> {
    let policy = match_policy(s)?;
    let datasets = load_datasets(s)?;
    let reports: Vec<EvalReport> = if s.raw("verdicts").is_empty() {
        let det = detector_config(s)?;
        let tc = train_config(s)?;
        pool(jobs)?.install(|| {
            datasets
                .par_iter()
                .map(|d| evaluate_detector(d, &det, &tc, policy).map(|(r, _, _)| r))
                .collect::<Result<Vec<_>, _>>()
        })?
    } else {
        if datasets.len() != 1 {
            return Err(CliError::Config("--verdicts scores exactly one data file".into()));
        }
        let path = resolve_input(s.raw("verdicts"));
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let verdicts = verdicts_from_csv(&text).map_err(config_err)?;
        vec![score(&verdicts, &datasets[0], policy)?.with_detector("verdicts")]
    };
    let out = Out::new(out_dir, s)?;
    let table = eval_reports_to_table(&reports);
    out.write_echoed("eval.csv", &eval_reports_to_csv(&reports))?;
    out.write_echoed("eval.txt", &table)?;
    out.write_json("eval.json", json!({ "reports": reports_json(&reports) }))?;
    print!("{table}");
    Ok(())
}

pub fn probe(s: &Settings, out_dir: &Path, jobs: usize) -> Result<(), CliError> {
    let tau_high: f64 = s.get("tau-high")?;
    let tau_low: f64 = s.get("tau-low")?;
    let datasets = load_datasets(s)?;
    let rows: Vec<ProbabilityBoundRow> = pool(jobs)?.install(|| {
        datasets
            .par_iter()
            .map(|d| probability_bound(d, tau_high, tau_low))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let explicit = s.raw("reference");
    let mut comparisons = Vec::new();
    let mut text = probability_rows_to_table(&rows);
    for row in &rows {
        let name = if explicit.is_empty() { row.dataset.as_str() } else { explicit };
        if let Some(reference) = reference_bounds(name) {
            let closest = match closest_normalization(row, &reference) {
                Some(BoundNormalization::PerPoint) => "per point",
                Some(BoundNormalization::PerAnomaly) => "per anomaly",
                None => "n/a",
            };
            let _ = writeln!(
                text,
                "{:<24} {:<12} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}   closest: {}",
                name, "published", reference[0], reference[1], reference[2], reference[3], reference[4], closest
            );
            comparisons.push(json!({
                "dataset": row.dataset,
                "reference": name,
                "published": reference,
                "closest": closest,
            }));
        }
    }
    let out = Out::new(out_dir, s)?;
    out.write_echoed("probe.csv", &probability_rows_to_csv(&rows))?;
    out.write_echoed("probe.txt", &text)?;
    out.write_json(
        "probe.json",
        json!({ "rows": serde_json::to_value(&rows).unwrap_or(Value::Null), "comparisons": comparisons }),
    )?;
    print!("{text}");
    Ok(())
}

pub fn sweep(s: &Settings, out_dir: &Path, jobs: usize) -> Result<(), CliError> {
    let grid = parse_percentile_grid(s.raw("grid")).map_err(config_err)?;
    let policy = match_policy(s)?;
    let base = DetectorConfig { kind: DetectorKind::QuantileLstm, ..detector_config(s)? };
    let tc = train_config(s)?;
    let datasets = load_datasets(s)?;
    let cells: Vec<(&TimeSeries, _)> = datasets.iter().flat_map(|d| grid.iter().map(move |p| (d, p))).collect();
    let rows: Vec<SweepRow> = pool(jobs)?.install(|| {
        cells
            .par_iter()
            .map(|&(d, pair)| {
                let cfg = DetectorConfig { q_low: pair.q_low, q_high: pair.q_high, ..base };
                cfg.validate()?;
                let (report, _, _) = evaluate_detector(d, &cfg, &tc, policy)?;
                Ok(SweepRow { pair: pair.clone(), report: report.with_detector(pair.label.clone()) })
            })
            .collect::<quantile_lstm::Result<Vec<_>>>()
    })?;
    let out = Out::new(out_dir, s)?;
    let mut table = format!("{:<24} {:<18} {:>9} {:>9}\n", "Dataset", "Thresholds", "Precision", "Recall");
    for r in &rows {
        let _ = writeln!(table, "{:<24} {:<18} {:>9.3} {:>9.3}", r.report.dataset, r.pair.label, r.report.precision, r.report.recall);
    }
    out.write_echoed("sweep.csv", &sweep_rows_to_csv(&rows))?;
    out.write_echoed("sweep.txt", &table)?;
    out.write_json("sweep.json", json!({ "rows": serde_json::to_value(&rows).unwrap_or(Value::Null) }))?;
    print!("{table}");
    Ok(())
}

pub fn ablate(s: &Settings, out_dir: &Path, jobs: usize) -> Result<(), CliError> {
    let det = detector_config(s)?;
    let tc = train_config(s)?;
    let datasets = load_datasets(s)?;
    let rows: Vec<AblationReport> = pool(jobs)?.install(|| {
        datasets
            .par_iter()
            .map(|d| ablation_ef_vs_pef(d, &det, &tc))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut table = format!(
        "{:<24} {:>9} {:>9} {:>9} {:>9} {:>8} {:>8}\n",
        "Dataset", "EF prec", "EF rec", "PEF prec", "PEF rec", "alpha0", "alpha"
    );
    for r in &rows {
        let _ = writeln!(
            table,
            "{:<24} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>8.4} {:>8.4}",
            r.dataset, r.elliot.precision, r.elliot.recall, r.param_elliot.precision, r.param_elliot.recall, r.initial_alpha, r.final_alpha
        );
    }
    let out = Out::new(out_dir, s)?;
    out.write_echoed("ablation.csv", &ablation_to_csv(&rows))?;
    out.write_echoed("ablation.txt", &table)?;
    out.write_json("ablation.json", json!({ "rows": serde_json::to_value(&rows).unwrap_or(Value::Null) }))?;
    print!("{table}");
    Ok(())
}
