//! LSTM parameters, forward pass and backpropagation through time.
//!
//! Per step, with `z = [h_{t-1}, x_t]`:
//!
//! ```text
//! f = sigmoid(W_f z + b_f)     i = sigmoid(W_i z + b_i)     o = sigmoid(W_o z + b_o)
//! c_hat = act_cand(W_c z + b_c)
//! C_t = f * C_{t-1} + i * c_hat
//! h_t = o * act(C_t)
//! ```
//!
//! `act` is the layer's cell activation. For the parameterised Elliot it is
//! `alpha * C / (1 + |C|)`, so `dh/dalpha = o * C / (1 + |C|)`. `act_cand` is
//! the same function, with its own `alpha` when the layer carries a separate
//! candidate slope. The prediction is the linear head `v = W_v h_T + b_v`
//! applied to the top layer's last hidden state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::activation::{sigmoid, Activation, ActivationKind};
use crate::error::{Error, Result};

/// One LSTM layer. Weight matrices are row-major `hidden_size x (hidden_size + input_size)`,
/// with the recurrent columns first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_f: Vec<f64>,
    pub w_i: Vec<f64>,
    pub w_c: Vec<f64>,
    pub w_o: Vec<f64>,
    pub b_f: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_c: Vec<f64>,
    pub b_o: Vec<f64>,
    pub cell_activation: Activation,
    /// Separate slope for the candidate activation; `None` shares `cell_activation.alpha`.
    pub candidate_alpha: Option<f64>,
}

impl LstmLayer {
    pub fn zeros(input_size: usize, hidden_size: usize, cell_activation: Activation) -> Self {
        let cols = input_size + hidden_size;
        let m = || vec![0.0; hidden_size * cols];
        let b = || vec![0.0; hidden_size];
        Self {
            input_size,
            hidden_size,
            w_f: m(),
            w_i: m(),
            w_c: m(),
            w_o: m(),
            b_f: b(),
            b_i: b(),
            b_c: b(),
            b_o: b(),
            cell_activation,
            candidate_alpha: None,
        }
    }

    pub fn cols(&self) -> usize {
        self.input_size + self.hidden_size
    }

    pub fn candidate_activation(&self) -> Activation {
        Activation {
            alpha: self.candidate_alpha.unwrap_or(self.cell_activation.alpha),
            ..self.cell_activation
        }
    }

    fn matrices(&self) -> [&Vec<f64>; 4] {
        [&self.w_f, &self.w_i, &self.w_c, &self.w_o]
    }

    fn biases(&self) -> [&Vec<f64>; 4] {
        [&self.b_f, &self.b_i, &self.b_c, &self.b_o]
    }

    fn param_slices_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.w_f,
            &mut self.w_i,
            &mut self.w_c,
            &mut self.w_o,
            &mut self.b_f,
            &mut self.b_i,
            &mut self.b_c,
            &mut self.b_o,
        ]
    }
}

/// Stacked LSTM layers with a linear output head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub layers: Vec<LstmLayer>,
    /// Row-major `output_size x hidden_size` of the top layer.
    pub w_v: Vec<f64>,
    pub b_v: Vec<f64>,
}

/// Architecture of a freshly initialised model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_size: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub output_size: usize,
    pub cell_activation: Activation,
    pub separate_candidate_alpha: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 1,
            hidden_size: 16,
            num_layers: 1,
            output_size: 1,
            cell_activation: Activation::param_elliot(super::activation::DEFAULT_PEF_ALPHA),
            separate_candidate_alpha: false,
        }
    }
}

impl LstmModel {
    /// Weights uniform in `±1/sqrt(hidden_size)`, biases zero.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        if cfg.input_size == 0 || cfg.hidden_size == 0 || cfg.num_layers == 0 || cfg.output_size == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if cfg.separate_candidate_alpha && cfg.cell_activation.kind != ActivationKind::ParamElliot {
            return Err(Error::invalid(
                "a separate candidate alpha requires the param_elliot activation",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (cfg.hidden_size as f64).sqrt();
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let input = if l == 0 { cfg.input_size } else { cfg.hidden_size };
            let mut layer = LstmLayer::zeros(input, cfg.hidden_size, cfg.cell_activation);
            for w in [&mut layer.w_f, &mut layer.w_i, &mut layer.w_c, &mut layer.w_o] {
                w.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
            }
            if cfg.separate_candidate_alpha {
                layer.candidate_alpha = Some(cfg.cell_activation.alpha);
            }
            layers.push(layer);
        }
        let w_v = (0..cfg.output_size * cfg.hidden_size)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let model = Self {
            layers,
            w_v,
            b_v: vec![0.0; cfg.output_size],
        };
        model.validate()?;
        Ok(model)
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.top().hidden_size
    }

    pub fn output_size(&self) -> usize {
        self.b_v.len()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    fn top(&self) -> &LstmLayer {
        self.layers.last().expect("model has at least one layer")
    }

    /// The trainable slope of the first layer's cell activation, if any.
    pub fn alpha(&self) -> Option<f64> {
        let a = self.layers[0].cell_activation;
        a.is_trainable().then_some(a.alpha)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::ShapeMismatch("model has no layers".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let expected_input = if l == 0 { layer.input_size } else { self.layers[l - 1].hidden_size };
            if layer.input_size != expected_input || layer.hidden_size == 0 || layer.input_size == 0 {
                return Err(Error::ShapeMismatch(format!("layer {l} has inconsistent sizes")));
            }
            let mlen = layer.hidden_size * layer.cols();
            if layer.matrices().iter().any(|m| m.len() != mlen)
                || layer.biases().iter().any(|b| b.len() != layer.hidden_size)
            {
                return Err(Error::ShapeMismatch(format!("layer {l} parameter lengths")));
            }
            if layer.candidate_alpha.is_some() && !layer.cell_activation.is_trainable() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l} has a candidate alpha without param_elliot"
                )));
            }
        }
        if self.b_v.is_empty() || self.w_v.len() != self.b_v.len() * self.hidden_size() {
            return Err(Error::ShapeMismatch("output head shape".into()));
        }
        if self.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite model parameter"));
        }
        Ok(())
    }

    /// All trainable parameters in a fixed order: per layer `W_f, W_i, W_c, W_o,
    /// b_f, b_i, b_c, b_o`, then `alpha` (param_elliot only), then the
    /// candidate alpha (when separate); finally `W_v, b_v`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            for m in layer.matrices() {
                out.extend_from_slice(m);
            }
            for b in layer.biases() {
                out.extend_from_slice(b);
            }
            if layer.cell_activation.is_trainable() {
                out.push(layer.cell_activation.alpha);
            }
            if let Some(a) = layer.candidate_alpha {
                out.push(a);
            }
        }
        out.extend_from_slice(&self.w_v);
        out.extend_from_slice(&self.b_v);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut pos = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[pos..pos + dst.len()]);
            pos += dst.len();
        };
        for layer in &mut self.layers {
            for p in layer.param_slices_mut() {
                take(p);
            }
            if layer.cell_activation.is_trainable() {
                let mut a = [0.0];
                take(&mut a);
                layer.cell_activation.alpha = a[0];
            }
            if let Some(ca) = layer.candidate_alpha.as_mut() {
                let mut a = [0.0];
                take(&mut a);
                *ca = a[0];
            }
        }
        take(&mut self.w_v);
        take(&mut self.b_v);
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let per_layer: usize = self
            .layers
            .iter()
            .map(|l| {
                4 * l.hidden_size * l.cols()
                    + 4 * l.hidden_size
                    + usize::from(l.cell_activation.is_trainable())
                    + usize::from(l.candidate_alpha.is_some())
            })
            .sum();
        per_layer + self.w_v.len() + self.b_v.len()
    }

    /// Runs the sequence and keeps every intermediate needed by [`LstmModel::backward`].
    pub fn forward(&self, sequence: &[Vec<f64>]) -> Result<(Vec<f64>, Tape)> {
        if sequence.is_empty() {
            return Err(Error::ShapeMismatch("empty input sequence".into()));
        }
        let input_size = self.input_size();
        if let Some(bad) = sequence.iter().position(|x| x.len() != input_size) {
            return Err(Error::ShapeMismatch(format!(
                "step {bad} has {} features, model expects {input_size}",
                sequence[bad].len()
            )));
        }
        let steps = sequence.len();
        let mut layer_tapes = Vec::with_capacity(self.layers.len());
        let mut below: Vec<f64> = sequence.iter().flatten().copied().collect();
        for layer in &self.layers {
            let tape = layer_forward(layer, &below, steps);
            below = tape.h.clone();
            layer_tapes.push(tape);
        }
        let h_top = last_step(&below, steps, self.hidden_size());
        let prediction = self.head(h_top);
        Ok((
            prediction,
            Tape {
                steps,
                layers: layer_tapes,
            },
        ))
    }

    pub fn predict(&self, sequence: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.forward(sequence).map(|(p, _)| p)
    }

    fn head(&self, h: &[f64]) -> Vec<f64> {
        let hidden = h.len();
        self.b_v
            .iter()
            .enumerate()
            .map(|(r, b)| b + dot(&self.w_v[r * hidden..(r + 1) * hidden], h))
            .collect()
    }

    /// Gradients of a loss `J` given `dJ/dv` for the prediction `v` of `tape`.
    pub fn backward(&self, tape: &Tape, d_prediction: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(tape, d_prediction, &mut grads)?;
        Ok(grads)
    }

    /// As [`LstmModel::backward`], accumulating into `grads`.
    pub fn backward_into(&self, tape: &Tape, d_prediction: &[f64], grads: &mut Gradients) -> Result<()> {
        if tape.layers.len() != self.layers.len()
            || tape
                .layers
                .iter()
                .zip(&self.layers)
                .any(|(t, l)| t.hidden_size != l.hidden_size || t.input_size != l.input_size)
        {
            return Err(Error::ShapeMismatch("tape was not produced by this model".into()));
        }
        if d_prediction.len() != self.output_size() {
            return Err(Error::ShapeMismatch(format!(
                "{} output gradients for {} outputs",
                d_prediction.len(),
                self.output_size()
            )));
        }
        if grads.layers.len() != self.layers.len() || grads.w_v.len() != self.w_v.len() {
            return Err(Error::ShapeMismatch("gradient buffer shape".into()));
        }
        let steps = tape.steps;
        let hidden = self.hidden_size();
        let top = tape.layers.last().expect("non-empty tape");
        let h_last = last_step(&top.h, steps, hidden);

        // dJ/dh flowing into each step of the current layer from above.
        let mut dh_ext = vec![0.0; steps * hidden];
        let last = &mut dh_ext[(steps - 1) * hidden..];
        for (r, &dv) in d_prediction.iter().enumerate() {
            if dv == 0.0 {
                continue;
            }
            grads.b_v[r] += dv;
            let row = &self.w_v[r * hidden..(r + 1) * hidden];
            let g_row = &mut grads.w_v[r * hidden..(r + 1) * hidden];
            for j in 0..hidden {
                g_row[j] += dv * h_last[j];
                last[j] += dv * row[j];
            }
        }

        for (l, layer) in self.layers.iter().enumerate().rev() {
            let dx = layer_backward(layer, &tape.layers[l], &dh_ext, &mut grads.layers[l]);
            dh_ext = dx;
        }
        Ok(())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn last_step(buf: &[f64], steps: usize, width: usize) -> &[f64] {
    &buf[(steps - 1) * width..steps * width]
}

/// Cached values of one layer over all steps, each `steps x hidden_size`
/// (`z` is `steps x cols`).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTape {
    pub input_size: usize,
    pub hidden_size: usize,
    pub z: Vec<f64>,
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub o: Vec<f64>,
    pub c_hat: Vec<f64>,
    /// Candidate pre-activation `W_c z + b_c`.
    pub a_c: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    pub steps: usize,
    pub layers: Vec<LayerTape>,
}

impl Tape {
    /// Mean absolute value of each gate `[f, i, c_hat, o]` over all layers,
    /// steps and units.
    pub fn gate_abs_sums(&self) -> ([f64; 4], usize) {
        let mut sums = [0.0; 4];
        let mut n = 0;
        for t in &self.layers {
            for (s, buf) in sums.iter_mut().zip([&t.f, &t.i, &t.c_hat, &t.o]) {
                *s += buf.iter().map(|v| v.abs()).sum::<f64>();
            }
            n += t.f.len();
        }
        (sums, n)
    }
}

fn layer_forward(layer: &LstmLayer, inputs: &[f64], steps: usize) -> LayerTape {
    let hs = layer.hidden_size;
    let is = layer.input_size;
    let cols = layer.cols();
    let act = layer.cell_activation;
    let cand = layer.candidate_activation();
    let mut tape = LayerTape {
        input_size: is,
        hidden_size: hs,
        z: vec![0.0; steps * cols],
        f: vec![0.0; steps * hs],
        i: vec![0.0; steps * hs],
        o: vec![0.0; steps * hs],
        c_hat: vec![0.0; steps * hs],
        a_c: vec![0.0; steps * hs],
        c: vec![0.0; steps * hs],
        h: vec![0.0; steps * hs],
    };
    for t in 0..steps {
        {
            let z = &mut tape.z[t * cols..(t + 1) * cols];
            if t > 0 {
                z[..hs].copy_from_slice(&tape.h[(t - 1) * hs..t * hs]);
            }
            z[hs..].copy_from_slice(&inputs[t * is..(t + 1) * is]);
        }
        let z = &tape.z[t * cols..(t + 1) * cols];
        for j in 0..hs {
            let row = j * cols..(j + 1) * cols;
            let f = sigmoid(dot(&layer.w_f[row.clone()], z) + layer.b_f[j]);
            let i = sigmoid(dot(&layer.w_i[row.clone()], z) + layer.b_i[j]);
            let o = sigmoid(dot(&layer.w_o[row.clone()], z) + layer.b_o[j]);
            let a_c = dot(&layer.w_c[row], z) + layer.b_c[j];
            let c_hat = cand.eval(a_c);
            let c_prev = if t > 0 { tape.c[(t - 1) * hs + j] } else { 0.0 };
            let c = f * c_prev + i * c_hat;
            let k = t * hs + j;
            tape.f[k] = f;
            tape.i[k] = i;
            tape.o[k] = o;
            tape.a_c[k] = a_c;
            tape.c_hat[k] = c_hat;
            tape.c[k] = c;
            tape.h[k] = o * act.eval(c);
        }
    }
    tape
}

/// Backpropagates one layer given `dJ/dh_t` from above for every step; returns
/// `dJ/dx_t` for every step (`steps x input_size`).
fn layer_backward(layer: &LstmLayer, tape: &LayerTape, dh_ext: &[f64], g: &mut LayerGradients) -> Vec<f64> {
    let hs = layer.hidden_size;
    let is = layer.input_size;
    let cols = layer.cols();
    let steps = dh_ext.len() / hs;
    let act = layer.cell_activation;
    let cand = layer.candidate_activation();
    let mut dx = vec![0.0; steps * is];
    let mut dh_rec = vec![0.0; hs];
    let mut dc_rec = vec![0.0; hs];
    let mut da = [vec![0.0; hs], vec![0.0; hs], vec![0.0; hs], vec![0.0; hs]];
    let mut dz = vec![0.0; cols];

    for t in (0..steps).rev() {
        for j in 0..hs {
            let k = t * hs + j;
            let (f, i, o, c_hat, c) = (tape.f[k], tape.i[k], tape.o[k], tape.c_hat[k], tape.c[k]);
            let c_prev = if t > 0 { tape.c[k - hs] } else { 0.0 };
            let dh = dh_ext[k] + dh_rec[j];
            let d_o = dh * act.eval(c);
            let dc = dh * o * act.grad(c) + dc_rec[j];
            g.alpha += dh * o * act.alpha_grad(c);
            let dc_hat = dc * i;
            let cand_alpha_grad = dc_hat * cand.alpha_grad(tape.a_c[k]);
            if layer.candidate_alpha.is_some() {
                g.candidate_alpha += cand_alpha_grad;
            } else {
                g.alpha += cand_alpha_grad;
            }
            da[0][j] = dc * c_prev * f * (1.0 - f);
            da[1][j] = dc * c_hat * i * (1.0 - i);
            da[2][j] = dc_hat * cand.grad(tape.a_c[k]);
            da[3][j] = d_o * o * (1.0 - o);
            dc_rec[j] = dc * f;
        }

        let z = &tape.z[t * cols..(t + 1) * cols];
        dz.iter_mut().for_each(|v| *v = 0.0);
        let weights = layer.matrices();
        let (gw, gb) = g.gate_buffers_mut();
        for gate in 0..4 {
            let w = weights[gate];
            for j in 0..hs {
                let d = da[gate][j];
                if d == 0.0 {
                    continue;
                }
                gb[gate][j] += d;
                let row = j * cols..(j + 1) * cols;
                for ((gwv, &zv), (dzv, &wv)) in gw[gate][row.clone()]
                    .iter_mut()
                    .zip(z)
                    .zip(dz.iter_mut().zip(&w[row]))
                {
                    *gwv += d * zv;
                    *dzv += d * wv;
                }
            }
        }
        dh_rec.copy_from_slice(&dz[..hs]);
        dx[t * is..(t + 1) * is].copy_from_slice(&dz[hs..]);
    }
    dx
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub w_f: Vec<f64>,
    pub w_i: Vec<f64>,
    pub w_c: Vec<f64>,
    pub w_o: Vec<f64>,
    pub b_f: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_c: Vec<f64>,
    pub b_o: Vec<f64>,
    /// `dJ/dalpha` of the cell activation; includes the candidate's share when
    /// the slope is shared.
    pub alpha: f64,
    pub candidate_alpha: f64,
}

impl LayerGradients {
    fn gate_buffers_mut(&mut self) -> ([&mut Vec<f64>; 4], [&mut Vec<f64>; 4]) {
        (
            [&mut self.w_f, &mut self.w_i, &mut self.w_c, &mut self.w_o],
            [&mut self.b_f, &mut self.b_i, &mut self.b_c, &mut self.b_o],
        )
    }
}

/// Same shape as [`LstmModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
    pub w_v: Vec<f64>,
    pub b_v: Vec<f64>,
    trainable_alpha: Vec<(bool, bool)>,
}

impl Gradients {
    pub fn zeros_like(model: &LstmModel) -> Self {
        let layers = model
            .layers
            .iter()
            .map(|l| {
                let m = vec![0.0; l.hidden_size * l.cols()];
                let b = vec![0.0; l.hidden_size];
                LayerGradients {
                    w_f: m.clone(),
                    w_i: m.clone(),
                    w_c: m.clone(),
                    w_o: m,
                    b_f: b.clone(),
                    b_i: b.clone(),
                    b_c: b.clone(),
                    b_o: b,
                    alpha: 0.0,
                    candidate_alpha: 0.0,
                }
            })
            .collect();
        Self {
            layers,
            w_v: vec![0.0; model.w_v.len()],
            b_v: vec![0.0; model.b_v.len()],
            trainable_alpha: model
                .layers
                .iter()
                .map(|l| (l.cell_activation.is_trainable(), l.candidate_alpha.is_some()))
                .collect(),
        }
    }

    /// Flattened in the order of [`LstmModel::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (g, &(alpha, cand)) in self.layers.iter().zip(&self.trainable_alpha) {
            for v in [&g.w_f, &g.w_i, &g.w_c, &g.w_o, &g.b_f, &g.b_i, &g.b_c, &g.b_o] {
                out.extend_from_slice(v);
            }
            if alpha {
                out.push(g.alpha);
            }
            if cand {
                out.push(g.candidate_alpha);
            }
        }
        out.extend_from_slice(&self.w_v);
        out.extend_from_slice(&self.b_v);
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.layers {
            for v in [&mut g.w_f, &mut g.w_i, &mut g.w_c, &mut g.w_o, &mut g.b_f, &mut g.b_i, &mut g.b_c, &mut g.b_o] {
                v.iter_mut().for_each(|x| *x *= factor);
            }
            g.alpha *= factor;
            g.candidate_alpha *= factor;
        }
        self.w_v.iter_mut().for_each(|x| *x *= factor);
        self.b_v.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in [
                (&mut a.w_f, &b.w_f),
                (&mut a.w_i, &b.w_i),
                (&mut a.w_c, &b.w_c),
                (&mut a.w_o, &b.w_o),
                (&mut a.b_f, &b.b_f),
                (&mut a.b_i, &b.b_i),
                (&mut a.b_c, &b.b_c),
                (&mut a.b_o, &b.b_o),
            ] {
                x.iter_mut().zip(y).for_each(|(p, q)| *p += q);
            }
            a.alpha += b.alpha;
            a.candidate_alpha += b.candidate_alpha;
        }
        self.w_v.iter_mut().zip(&other.w_v).for_each(|(p, q)| *p += q);
        self.b_v.iter_mut().zip(&other.b_v).for_each(|(p, q)| *p += q);
    }
}
