//! Small ReLU feed-forward classifier with hand-written reverse mode.
//!
//! Losses:
//! - NLL: mean `-log softmax(f(x) / T)_y`
//! - energy regularizer: `mean_in max(0, E_in - m_in)^2 + mean_out max(0, m_out - E_out)^2`
//! - total: `nll + lambda * energy_reg`
//! - outlier exposure: mean cross-entropy from the uniform distribution to the softmax
//!
//! Every loss reduces to a per-sample gradient with respect to the logits,
//! which is then pushed through the layers in a fixed sample order so the
//! result is bit-reproducible.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Prng};
use crate::scores::{energy_slice, logsumexp, softmax_slice, LogitVector, Temperature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// `[d_in, h_1, ..., K]`.
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpConfig {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        let cfg = Self {
            layer_sizes,
            activation: Activation::Relu,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::invalid(
                "an MLP needs at least input and output sizes",
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }
}

/// One affine map. `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.inputs).zip(&self.bias) {
            let dot: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            out.push(dot + b);
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub layers: Vec<Dense>,
}

/// Gradient of a scalar loss, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    /// Parameters in checkpoint order: per layer, weights then bias.
    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }
}

fn flatten(layers: &[Dense]) -> Vec<f64> {
    let mut v = Vec::new();
    for l in layers {
        v.extend_from_slice(&l.weights);
        v.extend_from_slice(&l.bias);
    }
    v
}

/// Inputs plus optional labels. Outlier batches carry no labels.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Batch {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Option<Vec<usize>>,
}

impl Batch {
    pub fn labeled(inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.len(),
                got: labels.len(),
            });
        }
        Ok(Self {
            inputs,
            labels: Some(labels),
        })
    }

    pub fn unlabeled(inputs: Vec<Vec<f64>>) -> Self {
        Self {
            inputs,
            labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn select(&self, idx: &[usize]) -> Batch {
        Batch {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }

    fn require_labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::invalid("loss requires a labeled batch"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub m_in: f64,
    pub m_out: f64,
    pub lr0: f64,
    pub epochs: usize,
    pub batch_in: usize,
    pub batch_out: usize,
    pub seed: u64,
    pub temp: Temperature,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            m_in: -23.0,
            m_out: -5.0,
            lr0: 0.001,
            epochs: 10,
            batch_in: 128,
            batch_out: 256,
            seed: 0,
            temp: Temperature::ONE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.m_in.is_finite() && self.m_out.is_finite()) || self.m_in > self.m_out {
            return Err(Error::invalid(format!(
                "margins must satisfy m_in <= m_out (got m_in={}, m_out={})",
                self.m_in, self.m_out
            )));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::invalid(format!(
                "lr0 must be positive, got {}",
                self.lr0
            )));
        }
        if self.batch_in == 0 || self.batch_out == 0 {
            return Err(Error::invalid("batch sizes must be positive"));
        }
        Ok(())
    }
}

/// What to differentiate.
#[derive(Debug, Clone, Copy)]
pub enum LossSpec<'a> {
    Nll {
        batch: &'a Batch,
        temp: Temperature,
    },
    EnergyReg {
        in_batch: &'a Batch,
        out_batch: &'a Batch,
        m_in: f64,
        m_out: f64,
    },
    Total {
        in_batch: &'a Batch,
        out_batch: &'a Batch,
        cfg: &'a TrainConfig,
    },
    Oe {
        out_batch: &'a Batch,
        temp: Temperature,
    },
    /// `E(x, y) = -f_y(x)` for a single input.
    LabelEnergy {
        x: &'a [f64],
        label: usize,
    },
}

struct Trace {
    /// Input to each layer; `acts[0]` is the network input.
    acts: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

pub fn init(config: &MlpConfig, seed: u64) -> Result<MlpModel> {
    config.validate()?;
    let mut rng = Prng::new(seed, stream::INIT);
    let layers = config
        .layer_sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut layer = Dense::zeros(fan_in, fan_out);
            for v in &mut layer.weights {
                *v = rng.uniform_in(-a, a);
            }
            layer
        })
        .collect();
    Ok(MlpModel {
        config: config.clone(),
        layers,
    })
}

impl MlpModel {
    /// Builds a model from explicit layers, checking shapes against `config`.
    pub fn from_layers(config: MlpConfig, layers: Vec<Dense>) -> Result<Self> {
        config.validate()?;
        if layers.len() != config.layer_sizes.len() - 1 {
            return Err(Error::DimensionMismatch {
                expected: config.layer_sizes.len() - 1,
                got: layers.len(),
            });
        }
        for (l, w) in layers.iter().zip(config.layer_sizes.windows(2)) {
            if l.inputs != w[0]
                || l.outputs != w[1]
                || l.weights.len() != w[0] * w[1]
                || l.bias.len() != w[1]
            {
                return Err(Error::invalid(format!(
                    "layer shape {}x{} does not match config {}x{}",
                    l.outputs, l.inputs, w[1], w[0]
                )));
            }
        }
        let model = Self { config, layers };
        if model.params_flat().iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("model parameters must be finite"));
        }
        Ok(model)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = Vec::with_capacity(layer.outputs);
            layer.apply(&cur, &mut next);
            if i < last {
                for v in &mut next {
                    *v = v.max(0.0);
                }
            }
            acts.push(std::mem::replace(&mut cur, next));
        }
        Trace { acts, logits: cur }
    }

    fn raw_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.trace(x).logits)
    }

    pub fn forward(&self, x: &[f64]) -> Result<LogitVector> {
        LogitVector::new(self.raw_logits(x)?)
    }

    /// Activations feeding the output layer (the input itself for a
    /// single-layer model).
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut tr = self.trace(x);
        Ok(tr.acts.pop().unwrap())
    }

    /// Arg-max class, lowest index on ties.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(self.forward(x)?.argmax())
    }

    /// Accumulates `d loss / d params` for one sample given `d loss / d logits`.
    fn backprop(&self, trace: &Trace, dlogits: &[f64], grads: &mut Gradients) {
        let mut delta = dlogits.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.acts[i];
            let g = &mut grads.layers[i];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, &a) in row.iter_mut().zip(input) {
                    *gw += d * a;
                }
            }
            if i == 0 {
                break;
            }
            // Input of layer i is relu(pre) of layer i-1; relu'(0) = 0 and
            // acts > 0 exactly where pre > 0.
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            for (p, &a) in prev.iter_mut().zip(input) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
}

fn check_batch(model: &MlpModel, batch: &Batch, what: &str) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid(format!("{what} batch is empty")));
    }
    for x in &batch.inputs {
        model.check_input(x)?;
    }
    if let Some(labels) = &batch.labels {
        if labels.len() != batch.len() {
            return Err(Error::DimensionMismatch {
                expected: batch.len(),
                got: labels.len(),
            });
        }
        let k = model.config.num_classes();
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::IndexOutOfRange { index: bad, len: k });
        }
    }
    Ok(())
}

/// Mean `-log softmax(f(x) / T)_y`.
pub fn nll_loss(model: &MlpModel, batch: &Batch, temp: Temperature) -> Result<f64> {
    check_batch(model, batch, "in-distribution")?;
    let labels = batch.require_labels()?;
    let t = temp.get();
    let mut sum = 0.0;
    for (x, &y) in batch.inputs.iter().zip(labels) {
        let f = model.raw_logits(x)?;
        let scaled: Vec<f64> = f.iter().map(|v| v / t).collect();
        sum += logsumexp(&scaled) - scaled[y];
    }
    Ok(sum / batch.len() as f64)
}

/// The same quantity written through label energies:
/// `E(x, y) / T + log sum_j exp(-E(x, j) / T)`.
pub fn nll_loss_free_energy(model: &MlpModel, batch: &Batch, temp: Temperature) -> Result<f64> {
    check_batch(model, batch, "in-distribution")?;
    let labels = batch.require_labels()?;
    let t = temp.get();
    let mut sum = 0.0;
    for (x, &y) in batch.inputs.iter().zip(labels) {
        let energies: Vec<f64> = model.raw_logits(x)?.iter().map(|f| -f).collect();
        let neg_scaled: Vec<f64> = energies.iter().map(|e| -e / t).collect();
        sum += energies[y] / t + logsumexp(&neg_scaled);
    }
    Ok(sum / batch.len() as f64)
}

pub fn energy_reg_loss(
    model: &MlpModel,
    in_batch: &Batch,
    out_batch: &Batch,
    m_in: f64,
    m_out: f64,
) -> Result<f64> {
    check_batch(model, in_batch, "in-distribution")?;
    check_batch(model, out_batch, "outlier")?;
    let mut sum_in = 0.0;
    for x in &in_batch.inputs {
        let e = energy_slice(&model.raw_logits(x)?, 1.0);
        sum_in += (e - m_in).max(0.0).powi(2);
    }
    let mut sum_out = 0.0;
    for x in &out_batch.inputs {
        let e = energy_slice(&model.raw_logits(x)?, 1.0);
        sum_out += (m_out - e).max(0.0).powi(2);
    }
    Ok(sum_in / in_batch.len() as f64 + sum_out / out_batch.len() as f64)
}

pub fn total_loss(
    model: &MlpModel,
    in_batch: &Batch,
    out_batch: &Batch,
    cfg: &TrainConfig,
) -> Result<f64> {
    let nll = nll_loss(model, in_batch, cfg.temp)?;
    let reg = energy_reg_loss(model, in_batch, out_batch, cfg.m_in, cfg.m_out)?;
    Ok(nll + cfg.lambda * reg)
}

/// Mean `log sum_j exp(f_j) - (1/K) sum_j f_j` at temperature `T`.
pub fn oe_loss(model: &MlpModel, out_batch: &Batch, temp: Temperature) -> Result<f64> {
    check_batch(model, out_batch, "outlier")?;
    let t = temp.get();
    let mut sum = 0.0;
    for x in &out_batch.inputs {
        let scaled: Vec<f64> = model.raw_logits(x)?.iter().map(|v| v / t).collect();
        let mean = scaled.iter().sum::<f64>() / scaled.len() as f64;
        sum += logsumexp(&scaled) - mean;
    }
    Ok(sum / out_batch.len() as f64)
}

// Per-sample logit gradients. Each adds `scale * d loss_i / d logits` into `out`.

fn nll_dlogits(logits: &[f64], y: usize, t: f64, scale: f64, out: &mut [f64]) -> f64 {
    let mut p = vec![0.0; logits.len()];
    softmax_slice(logits, t, &mut p);
    for (j, (o, pj)) in out.iter_mut().zip(&p).enumerate() {
        let onehot = if j == y { 1.0 } else { 0.0 };
        *o += scale * (pj - onehot) / t;
    }
    let scaled: Vec<f64> = logits.iter().map(|v| v / t).collect();
    logsumexp(&scaled) - scaled[y]
}

/// Squared hinge on the T=1 energy. `sign = +1` for the in-distribution
/// branch `max(0, E - m)^2`, `-1` for the outlier branch `max(0, m - E)^2`.
fn hinge_dlogits(logits: &[f64], margin: f64, sign: f64, scale: f64, out: &mut [f64]) -> f64 {
    let e = energy_slice(logits, 1.0);
    let gap = sign * (e - margin);
    if gap <= 0.0 {
        return 0.0;
    }
    // dE/df = -softmax(f)
    let mut p = vec![0.0; logits.len()];
    softmax_slice(logits, 1.0, &mut p);
    let coef = 2.0 * gap * sign;
    for (o, pj) in out.iter_mut().zip(&p) {
        *o += scale * coef * -pj;
    }
    gap * gap
}

fn oe_dlogits(logits: &[f64], t: f64, scale: f64, out: &mut [f64]) -> f64 {
    let k = logits.len() as f64;
    let mut p = vec![0.0; logits.len()];
    softmax_slice(logits, t, &mut p);
    for (o, pj) in out.iter_mut().zip(&p) {
        *o += scale * (pj - 1.0 / k) / t;
    }
    let scaled: Vec<f64> = logits.iter().map(|v| v / t).collect();
    logsumexp(&scaled) - scaled.iter().sum::<f64>() / k
}

/// Loss value and exact gradient for `spec`.
pub fn backward(model: &MlpModel, spec: &LossSpec<'_>) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros_like(model);
    let k = model.config.num_classes();
    let mut dl = vec![0.0; k];
    let loss = match *spec {
        LossSpec::Nll { batch, temp } => {
            check_batch(model, batch, "in-distribution")?;
            let labels = batch.require_labels()?;
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for (x, &y) in batch.inputs.iter().zip(labels) {
                let tr = model.trace(x);
                dl.fill(0.0);
                loss += nll_dlogits(&tr.logits, y, temp.get(), scale, &mut dl);
                model.backprop(&tr, &dl, &mut grads);
            }
            loss / batch.len() as f64
        }
        LossSpec::EnergyReg {
            in_batch,
            out_batch,
            m_in,
            m_out,
        } => {
            check_batch(model, in_batch, "in-distribution")?;
            check_batch(model, out_batch, "outlier")?;
            let (si, so) = (1.0 / in_batch.len() as f64, 1.0 / out_batch.len() as f64);
            let (mut li, mut lo) = (0.0, 0.0);
            for x in &in_batch.inputs {
                let tr = model.trace(x);
                dl.fill(0.0);
                li += hinge_dlogits(&tr.logits, m_in, 1.0, si, &mut dl);
                model.backprop(&tr, &dl, &mut grads);
            }
            for x in &out_batch.inputs {
                let tr = model.trace(x);
                dl.fill(0.0);
                lo += hinge_dlogits(&tr.logits, m_out, -1.0, so, &mut dl);
                model.backprop(&tr, &dl, &mut grads);
            }
            li / in_batch.len() as f64 + lo / out_batch.len() as f64
        }
        LossSpec::Total {
            in_batch,
            out_batch,
            cfg,
        } => {
            check_batch(model, in_batch, "in-distribution")?;
            check_batch(model, out_batch, "outlier")?;
            let labels = in_batch.require_labels()?;
            let (si, so) = (1.0 / in_batch.len() as f64, 1.0 / out_batch.len() as f64);
            let (mut nll, mut li, mut lo) = (0.0, 0.0, 0.0);
            let mut reg = vec![0.0; k];
            for (x, &y) in in_batch.inputs.iter().zip(labels) {
                let tr = model.trace(x);
                dl.fill(0.0);
                reg.fill(0.0);
                nll += nll_dlogits(&tr.logits, y, cfg.temp.get(), si, &mut dl);
                li += hinge_dlogits(&tr.logits, cfg.m_in, 1.0, si, &mut reg);
                for (d, r) in dl.iter_mut().zip(&reg) {
                    *d += cfg.lambda * r;
                }
                model.backprop(&tr, &dl, &mut grads);
            }
            for x in &out_batch.inputs {
                let tr = model.trace(x);
                reg.fill(0.0);
                lo += hinge_dlogits(&tr.logits, cfg.m_out, -1.0, so, &mut reg);
                for (d, r) in dl.iter_mut().zip(&reg) {
                    *d = cfg.lambda * r;
                }
                model.backprop(&tr, &dl, &mut grads);
            }
            nll / in_batch.len() as f64
                + cfg.lambda * (li / in_batch.len() as f64 + lo / out_batch.len() as f64)
        }
        LossSpec::Oe { out_batch, temp } => {
            check_batch(model, out_batch, "outlier")?;
            let scale = 1.0 / out_batch.len() as f64;
            let mut loss = 0.0;
            for x in &out_batch.inputs {
                let tr = model.trace(x);
                dl.fill(0.0);
                loss += oe_dlogits(&tr.logits, temp.get(), scale, &mut dl);
                model.backprop(&tr, &dl, &mut grads);
            }
            loss / out_batch.len() as f64
        }
        LossSpec::LabelEnergy { x, label } => {
            model.check_input(x)?;
            if label >= k {
                return Err(Error::IndexOutOfRange {
                    index: label,
                    len: k,
                });
            }
            let tr = model.trace(x);
            dl[label] = -1.0;
            model.backprop(&tr, &dl, &mut grads);
            -tr.logits[label]
        }
    };
    Ok((loss, grads))
}

/// Cosine annealing from `lr0` at step 0 to zero at `total_steps`, no restarts.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::invalid(format!(
            "cosine schedule step {step} out of range for {total_steps} total steps"
        )));
    }
    let frac = step as f64 / total_steps as f64;
    Ok(lr0 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
}

/// One optimizer step's record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub nll: f64,
    pub energy_reg: f64,
    pub total: f64,
}

impl LogRow {
    pub const CSV_HEADER: &'static str = "epoch,step,lr,nll,energy_reg,total";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.step, self.lr, self.nll, self.energy_reg, self.total
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(LogRow::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    /// Mean total loss of each epoch, in epoch order.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.rows {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0));
            }
            out[r.epoch].0 += r.total;
            out[r.epoch].1 += 1;
        }
        out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }
}

/// Cycles through a reshuffled permutation of `0..n`, reshuffling on wrap.
struct Sampler {
    perm: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn new(n: usize, rng: &mut Prng) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        Self { perm, pos: 0 }
    }

    fn take(&mut self, count: usize, rng: &mut Prng) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.pos == self.perm.len() {
                rng.shuffle(&mut self.perm);
                self.pos = 0;
            }
            out.push(self.perm[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn sgd_step(model: &mut MlpModel, grads: &Gradients, lr: f64) {
    for (l, g) in model.layers.iter_mut().zip(&grads.layers) {
        for (w, gw) in l.weights.iter_mut().zip(&g.weights) {
            *w -= lr * gw;
        }
        for (b, gb) in l.bias.iter_mut().zip(&g.bias) {
            *b -= lr * gb;
        }
    }
}

fn run(
    model: &MlpModel,
    in_data: &Batch,
    out_data: Option<&Batch>,
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainLog)> {
    cfg.validate()?;
    check_batch(model, in_data, "in-distribution training")?;
    in_data.require_labels()?;
    if let Some(out) = out_data {
        check_batch(model, out, "outlier training")?;
    }
    let mut model = model.clone();
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok((model, log));
    }

    let steps_per_epoch = in_data.len().div_ceil(cfg.batch_in);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut rng = Prng::new(cfg.seed, stream::SHUFFLE);
    let mut in_perm: Vec<usize> = (0..in_data.len()).collect();
    let mut out_sampler = out_data.map(|o| Sampler::new(o.len(), &mut rng));

    let mut step = 0;
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut in_perm);
        for chunk in in_perm.chunks(cfg.batch_in) {
            let lr = cosine_lr(step, total_steps, cfg.lr0)?;
            let in_batch = in_data.select(chunk);
            let row = match (out_data, out_sampler.as_mut()) {
                (Some(out), Some(sampler)) => {
                    let out_batch = out.select(&sampler.take(cfg.batch_out, &mut rng));
                    let (total, grads) = backward(
                        &model,
                        &LossSpec::Total {
                            in_batch: &in_batch,
                            out_batch: &out_batch,
                            cfg,
                        },
                    )?;
                    let nll = nll_loss(&model, &in_batch, cfg.temp)?;
                    let reg = energy_reg_loss(&model, &in_batch, &out_batch, cfg.m_in, cfg.m_out)?;
                    check_finite(total, epoch, step)?;
                    sgd_step(&mut model, &grads, lr);
                    LogRow {
                        epoch,
                        step,
                        lr,
                        nll,
                        energy_reg: reg,
                        total,
                    }
                }
                _ => {
                    let (nll, grads) = backward(
                        &model,
                        &LossSpec::Nll {
                            batch: &in_batch,
                            temp: cfg.temp,
                        },
                    )?;
                    check_finite(nll, epoch, step)?;
                    sgd_step(&mut model, &grads, lr);
                    LogRow {
                        epoch,
                        step,
                        lr,
                        nll,
                        energy_reg: 0.0,
                        total: nll,
                    }
                }
            };
            if model
                .layers
                .iter()
                .any(|l| l.weights.iter().chain(&l.bias).any(|p| !p.is_finite()))
            {
                return Err(Error::Numerical(format!(
                    "parameters became non-finite at epoch {epoch}, step {step}"
                )));
            }
            log.rows.push(row);
            step += 1;
        }
    }
    Ok((model, log))
}

fn check_finite(loss: f64, epoch: usize, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "training diverged: loss {loss} at epoch {epoch}, step {step}"
        )))
    }
}

/// Energy-bounded fine-tuning: SGD on `nll + lambda * energy_reg` with a
/// cosine-decayed learning rate.
pub fn finetune(
    model: &MlpModel,
    in_data: &Batch,
    out_data: &Batch,
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainLog)> {
    run(model, in_data, Some(out_data), cfg)
}

/// Plain cross-entropy training, no outlier data.
pub fn pretrain(
    model: &MlpModel,
    in_data: &Batch,
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainLog)> {
    let cfg = TrainConfig {
        lambda: 0.0,
        ..cfg.clone()
    };
    run(model, in_data, None, &cfg)
}

/// Fraction of labeled samples whose arg-max prediction matches the label.
pub fn accuracy(model: &MlpModel, data: &Batch) -> Result<f64> {
    let labels = data.require_labels()?;
    if data.is_empty() {
        return Err(Error::invalid("accuracy of an empty dataset"));
    }
    let mut hits = 0usize;
    for (x, &y) in data.inputs.iter().zip(labels) {
        if model.predict(x)? == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// T=1 energies of every input, in order.
pub fn energies(model: &MlpModel, data: &Batch) -> Result<Vec<f64>> {
    data.inputs
        .iter()
        .map(|x| Ok(energy_slice(&model.raw_logits(x)?, 1.0)))
        .collect()
}

// ---------------------------------------------------------------------------
// Checkpoints

pub const CHECKPOINT_FORMAT: &str = "energy-ood-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerBlob {
    /// Little-endian f64, row-major `outputs x inputs`, hex encoded.
    weights_f64le: String,
    bias_f64le: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    layers: Vec<LayerBlob>,
    pub train_config: Option<TrainConfig>,
}

fn encode_f64s(v: &[f64]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    hex::encode(bytes)
}

fn decode_f64s(s: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = hex::decode(s).map_err(|e| Error::invalid(format!("bad parameter blob: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(Error::DimensionMismatch {
            expected: expected * 8,
            got: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

impl Checkpoint {
    pub fn new(model: &MlpModel, train_config: Option<TrainConfig>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            layer_sizes: model.config.layer_sizes.clone(),
            layers: model
                .layers
                .iter()
                .map(|l| LayerBlob {
                    weights_f64le: encode_f64s(&l.weights),
                    bias_f64le: encode_f64s(&l.bias),
                })
                .collect(),
            train_config,
        }
    }

    pub fn model(&self) -> Result<MlpModel> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let config = MlpConfig::new(self.layer_sizes.clone())?;
        if self.layers.len() != config.layer_sizes.len() - 1 {
            return Err(Error::DimensionMismatch {
                expected: config.layer_sizes.len() - 1,
                got: self.layers.len(),
            });
        }
        let layers = self
            .layers
            .iter()
            .zip(config.layer_sizes.windows(2))
            .map(|(blob, w)| {
                Ok(Dense {
                    inputs: w[0],
                    outputs: w[1],
                    weights: decode_f64s(&blob.weights_f64le, w[0] * w[1])?,
                    bias: decode_f64s(&blob.bias_f64le, w[1])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MlpModel::from_layers(config, layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}
