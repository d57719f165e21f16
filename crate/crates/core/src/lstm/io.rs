//! Versioned text format for [`LstmModel`].
//!
//! One `key = value` pair per line; `#` starts a comment. Floats are written
//! with 17 significant digits, so a save/load round trip is bit-exact.
//! Keys under `meta.` carry free-form run metadata.
//!
//! ```text
//! format = quantile-lstm-model
//! version = 1
//! num_layers = 1
//! output_size = 1
//! gate_activation = sigmoid
//! layer.0.input_size = 1
//! layer.0.hidden_size = 16
//! layer.0.cell_activation = param_elliot
//! layer.0.alpha = 1.5000000000000000e0
//! layer.0.candidate_alpha = none
//! layer.0.w_f = ...
//! w_v = ...
//! b_v = ...
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::activation::{Activation, ActivationKind};
use super::model::{LstmLayer, LstmModel};
use crate::error::{Error, Result};
use crate::series::write_atomic;

pub const MODEL_FORMAT: &str = "quantile-lstm-model";
pub const MODEL_VERSION: u32 = 1;

const GATE_KEYS: [&str; 8] = ["w_f", "w_i", "w_c", "w_o", "b_f", "b_i", "b_c", "b_o"];

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ")
}

/// Renders the model with optional `meta.*` entries.
pub fn model_to_text(model: &LstmModel, meta: &BTreeMap<String, String>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "format = {MODEL_FORMAT}");
    let _ = writeln!(s, "version = {MODEL_VERSION}");
    for (k, v) in meta {
        let _ = writeln!(s, "meta.{k} = {}", v.replace('\n', " "));
    }
    let _ = writeln!(s, "num_layers = {}", model.layers.len());
    let _ = writeln!(s, "output_size = {}", model.output_size());
    let _ = writeln!(s, "gate_activation = sigmoid");
    for (l, layer) in model.layers.iter().enumerate() {
        let _ = writeln!(s, "layer.{l}.input_size = {}", layer.input_size);
        let _ = writeln!(s, "layer.{l}.hidden_size = {}", layer.hidden_size);
        let _ = writeln!(s, "layer.{l}.cell_activation = {}", layer.cell_activation.kind);
        let _ = writeln!(s, "layer.{l}.alpha = {}", fmt_f64(layer.cell_activation.alpha));
        let _ = writeln!(
            s,
            "layer.{l}.candidate_alpha = {}",
            layer.candidate_alpha.map_or_else(|| "none".to_string(), fmt_f64)
        );
        let params = [
            &layer.w_f, &layer.w_i, &layer.w_c, &layer.w_o, &layer.b_f, &layer.b_i, &layer.b_c, &layer.b_o,
        ];
        for (key, p) in GATE_KEYS.iter().zip(params) {
            let _ = writeln!(s, "layer.{l}.{key} = {}", fmt_vec(p));
        }
    }
    let _ = writeln!(s, "w_v = {}", fmt_vec(&model.w_v));
    let _ = writeln!(s, "b_v = {}", fmt_vec(&model.b_v));
    let _ = writeln!(s, "end = true");
    s
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
    last_line: usize,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut last_line = 0;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            last_line = line_no;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::ModelParse {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            map.insert(k.trim().to_string(), (line_no, v.trim().to_string()));
        }
        Ok(Self { map, last_line })
    }

    fn get(&self, key: &str) -> Result<(usize, &str)> {
        self.map
            .get(key)
            .map(|(l, v)| (*l, v.as_str()))
            .ok_or_else(|| Error::ModelParse {
                line: self.last_line,
                message: format!("missing key `{key}`"),
            })
    }

    fn usize(&self, key: &str) -> Result<usize> {
        let (line, v) = self.get(key)?;
        v.parse().map_err(|_| Error::ModelParse {
            line,
            message: format!("`{key}` is not a non-negative integer: `{v}`"),
        })
    }

    fn f64(&self, key: &str) -> Result<f64> {
        let (line, v) = self.get(key)?;
        parse_f64(v).ok_or_else(|| Error::ModelParse {
            line,
            message: format!("`{key}` is not a finite number: `{v}`"),
        })
    }

    fn vec(&self, key: &str, len: usize) -> Result<Vec<f64>> {
        let (line, v) = self.get(key)?;
        let values: Option<Vec<f64>> = v.split_whitespace().map(parse_f64).collect();
        let values = values.ok_or_else(|| Error::ModelParse {
            line,
            message: format!("`{key}` holds a non-numeric entry"),
        })?;
        if values.len() != len {
            return Err(Error::ModelParse {
                line,
                message: format!("`{key}` has {} values, expected {len}", values.len()),
            });
        }
        Ok(values)
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses a model and its `meta.*` entries.
pub fn model_from_text(text: &str) -> Result<(LstmModel, BTreeMap<String, String>)> {
    let e = Entries::parse(text)?;
    let (line, format) = e.get("format")?;
    if format != MODEL_FORMAT {
        return Err(Error::ModelParse {
            line,
            message: format!("unknown format `{format}`"),
        });
    }
    let (_, version) = e.get("version")?;
    if version != MODEL_VERSION.to_string() {
        return Err(Error::VersionMismatch {
            found: version.to_string(),
            expected: MODEL_VERSION.to_string(),
        });
    }
    // A file cut short loses its trailing sentinel.
    e.get("end")?;
    let (line, gate) = e.get("gate_activation")?;
    if gate != "sigmoid" {
        return Err(Error::ModelParse {
            line,
            message: format!("gates must be sigmoid, got `{gate}`"),
        });
    }

    let num_layers = e.usize("num_layers")?;
    let output_size = e.usize("output_size")?;
    let mut layers = Vec::with_capacity(num_layers);
    for l in 0..num_layers {
        let key = |k: &str| format!("layer.{l}.{k}");
        let input_size = e.usize(&key("input_size"))?;
        let hidden_size = e.usize(&key("hidden_size"))?;
        let (line, kind) = e.get(&key("cell_activation"))?;
        let kind: ActivationKind = kind.parse().map_err(|_| Error::ModelParse {
            line,
            message: format!("unknown activation `{kind}`"),
        })?;
        let alpha = e.f64(&key("alpha"))?;
        let candidate_alpha = match e.get(&key("candidate_alpha"))? {
            (_, "none") => None,
            _ => Some(e.f64(&key("candidate_alpha"))?),
        };
        let mut layer = LstmLayer::zeros(input_size, hidden_size, Activation { kind, alpha });
        layer.candidate_alpha = candidate_alpha;
        let mlen = hidden_size * (input_size + hidden_size);
        layer.w_f = e.vec(&key("w_f"), mlen)?;
        layer.w_i = e.vec(&key("w_i"), mlen)?;
        layer.w_c = e.vec(&key("w_c"), mlen)?;
        layer.w_o = e.vec(&key("w_o"), mlen)?;
        layer.b_f = e.vec(&key("b_f"), hidden_size)?;
        layer.b_i = e.vec(&key("b_i"), hidden_size)?;
        layer.b_c = e.vec(&key("b_c"), hidden_size)?;
        layer.b_o = e.vec(&key("b_o"), hidden_size)?;
        layers.push(layer);
    }
    let hidden = layers.last().map_or(0, |l| l.hidden_size);
    let model = LstmModel {
        layers,
        w_v: e.vec("w_v", output_size * hidden)?,
        b_v: e.vec("b_v", output_size)?,
    };
    model.validate().map_err(|err| Error::ModelParse {
        line: e.last_line,
        message: err.to_string(),
    })?;

    let meta = e
        .map
        .iter()
        .filter_map(|(k, (_, v))| k.strip_prefix("meta.").map(|k| (k.to_string(), v.clone())))
        .collect();
    Ok((model, meta))
}

pub fn save_model(model: &LstmModel, path: impl AsRef<Path>) -> Result<()> {
    save_model_with_meta(model, &BTreeMap::new(), path)
}

pub fn save_model_with_meta(model: &LstmModel, meta: &BTreeMap<String, String>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, model_to_text(model, meta).as_bytes())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LstmModel> {
    load_model_with_meta(path).map(|(m, _)| m)
}

pub fn load_model_with_meta(path: impl AsRef<Path>) -> Result<(LstmModel, BTreeMap<String, String>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_text(&text)
}
