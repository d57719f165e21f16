use serde::{Deserialize, Serialize};

use super::model::{Gradients, LstmModel, ModelConfig};
use crate::error::{Error, Result};
use crate::windowing::QuantileTrainingSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    /// Mean of `(prediction - label)^2` over the training set.
    SquaredError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Seeds weight initialisation.
    pub seed: u64,
    pub loss: Loss,
    pub record_traces: bool,
    /// Global-norm gradient clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 300,
            seed: 0,
            loss: Loss::SquaredError,
            record_traces: false,
            clip_norm: Some(5.0),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::invalid("clip_norm must be positive"));
            }
        }
        Ok(())
    }
}

/// Per-epoch instrumentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    /// Mean absolute activation of the forget, input, candidate and output gates.
    pub gate_mean_abs: [f64; 4],
    /// Slope of the first layer's cell activation after this epoch's update.
    pub alpha_value: f64,
    /// Training loss before this epoch's update.
    pub loss_value: f64,
}

pub const GATE_NAMES: [&str; 4] = ["forget", "input", "candidate", "output"];

fn to_sequences(inputs: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
    inputs
        .iter()
        .map(|row| row.iter().map(|&x| vec![x]).collect())
        .collect()
}

/// Loss and summed gradient over the whole set for the current parameters.
pub fn batch_gradient(
    model: &LstmModel,
    sequences: &[Vec<Vec<f64>>],
    labels: &[f64],
) -> Result<(f64, Gradients, [f64; 4])> {
    let n = labels.len() as f64;
    let mut grads = Gradients::zeros_like(model);
    let mut loss = 0.0;
    let mut gate_sums = [0.0; 4];
    let mut gate_n = 0;
    for (seq, &y) in sequences.iter().zip(labels) {
        let (pred, tape) = model.forward(seq)?;
        let err = pred[0] - y;
        loss += err * err / n;
        model.backward_into(&tape, &[2.0 * err / n], &mut grads)?;
        let (sums, count) = tape.gate_abs_sums();
        gate_sums.iter_mut().zip(sums).for_each(|(a, b)| *a += b);
        gate_n += count;
    }
    let gate_means = gate_sums.map(|s| s / gate_n.max(1) as f64);
    Ok((loss, grads, gate_means))
}

/// Full-batch gradient descent on squared error. Every parameter, the
/// activation slope included, moves by `-learning_rate * gradient`.
pub fn train(
    model: &LstmModel,
    data: &QuantileTrainingSet,
    cfg: &TrainConfig,
) -> Result<(LstmModel, Vec<EpochTrace>)> {
    cfg.validate()?;
    model.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    if model.input_size() != 1 || model.output_size() != 1 {
        return Err(Error::ShapeMismatch(
            "quantile training expects a scalar-input, scalar-output model".into(),
        ));
    }
    if data.labels.iter().chain(data.inputs.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite training data"));
    }
    let sequences = to_sequences(&data.inputs);
    let mut model = model.clone();
    let mut params = model.to_flat();
    let mut traces = Vec::with_capacity(if cfg.record_traces { cfg.epochs } else { 0 });

    for epoch in 0..cfg.epochs {
        let (loss, grads, gate_means) = batch_gradient(&model, &sequences, &data.labels)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        let mut g = grads.to_flat();
        if let Some(max_norm) = cfg.clip_norm {
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > max_norm {
                let s = max_norm / norm;
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
        params
            .iter_mut()
            .zip(&g)
            .for_each(|(p, d)| *p -= cfg.learning_rate * d);
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch, loss: f64::NAN });
        }
        model.set_flat(&params)?;
        if cfg.record_traces {
            traces.push(EpochTrace {
                epoch,
                gate_mean_abs: gate_means,
                alpha_value: model.layers[0].cell_activation.alpha,
                loss_value: loss,
            });
        }
    }
    Ok((model, traces))
}

/// Predictions for a batch of window-quantile vectors.
pub fn predict_batch(model: &LstmModel, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
    to_sequences(inputs)
        .iter()
        .map(|seq| model.predict(seq).map(|p| p[0]))
        .collect()
}

/// Mean squared error of `model` on `data`.
pub fn evaluate_loss(model: &LstmModel, data: &QuantileTrainingSet) -> Result<f64> {
    let preds = predict_batch(model, &data.inputs)?;
    let n = preds.len() as f64;
    Ok(preds.iter().zip(&data.labels).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / n)
}
