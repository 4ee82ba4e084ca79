//! Small fully-connected networks with hand-written backpropagation.
//!
//! Hidden layers use a shared activation, the output layer is linear, and
//! dropout (inverted, so Eval needs no rescaling) masks hidden activations
//! in [`Mode::Train`]. Weights are stored row-major as `out x in`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    w: Vec<f64>,
    b: Vec<f64>,
    inputs: usize,
    outputs: usize,
}

impl Dense {
    pub fn new(w: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        let outputs = b.len();
        if outputs == 0 || w.len() != outputs {
            return Err(Error::InvalidParameter(format!(
                "layer has {} weight rows but {} biases",
                w.len(),
                outputs
            )));
        }
        let inputs = w[0].len();
        if inputs == 0 || w.iter().any(|row| row.len() != inputs) {
            return Err(Error::InvalidParameter("ragged weight matrix".into()));
        }
        let w: Vec<f64> = w.into_iter().flatten().collect();
        if w.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer weights"));
        }
        Ok(Self { w, b, inputs, outputs })
    }

    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: vec![0.0; inputs * outputs],
            b: vec![0.0; outputs],
            inputs,
            outputs,
        }
    }

    fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot limit");
        Self {
            w: (0..inputs * outputs).map(|_| dist.sample(rng)).collect(),
            b: vec![0.0; outputs],
            inputs,
            outputs,
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.w[row * self.inputs + col]
    }

    pub fn bias(&self) -> &[f64] {
        &self.b
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.w.chunks_exact(self.inputs).zip(&self.b).map(|(row, b)| {
            b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
        }));
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.w.chunks_exact(self.inputs).map(<[f64]>::to_vec).collect()
    }
}

/// Multilayer perceptron: hidden layers share `act`, output is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    act: Activation,
    dropout: f64,
}

impl Mlp {
    pub fn from_layers(layers: Vec<Dense>, act: Activation, dropout: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("network has no layers".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidParameter(format!("dropout must be in [0, 1), got {dropout}")));
        }
        for pair in layers.windows(2) {
            ensure_dim(pair[0].outputs, pair[1].inputs)?;
        }
        Ok(Self { layers, act, dropout })
    }

    /// Glorot-uniform initialized network with `hidden.len()` hidden layers.
    pub fn init<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        act: Activation,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let widths = layer_widths(input, hidden, output)?;
        let layers = widths.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect();
        Self::from_layers(layers, act, dropout)
    }

    /// Network whose every weight and bias is zero.
    pub fn zeros(input: usize, hidden: &[usize], output: usize, act: Activation) -> Result<Self> {
        let widths = layer_widths(input, hidden, output)?;
        let layers = widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Self::from_layers(layers, act, 0.0)
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.act
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All weights and biases, layer by layer, in the order of [`Gradients::flat`].
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b).copied())
            .collect()
    }

    /// Copy of this network with parameters replaced from a flat vector.
    pub fn with_parameters(&self, flat: &[f64]) -> Result<Self> {
        ensure_dim(self.parameter_count(), flat.len())?;
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        let mut next = self.clone();
        let mut it = flat.iter().copied();
        for l in &mut next.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|v| *v = it.next().expect("length checked"));
        }
        Ok(next)
    }

    pub fn forward<R: Rng + ?Sized>(&self, x: &[f64], mode: Mode, rng: &mut R) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x, mode, rng)?.output().to_vec())
    }

    /// Eval-mode forward pass; needs no randomness.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_dim(self.input_width(), x.len())?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.affine(&cur, &mut next);
            if k < last {
                next.iter_mut().for_each(|v| *v = self.act.apply(*v));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Forward pass that keeps the intermediates needed by [`Mlp::backward`].
    pub fn forward_trace<R: Rng + ?Sized>(&self, x: &[f64], mode: Mode, rng: &mut R) -> Result<Trace> {
        ensure_dim(self.input_width(), x.len())?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(last);
        inputs.push(x.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.affine(&inputs[k], &mut z);
            if k == last {
                inputs.push(z.clone());
            } else {
                let mut h: Vec<f64> = z.iter().map(|v| self.act.apply(*v)).collect();
                let mask = if mode == Mode::Train && self.dropout > 0.0 {
                    let keep = 1.0 - self.dropout;
                    let m: Vec<f64> = (0..h.len())
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    h.iter_mut().zip(&m).for_each(|(v, m)| *v *= m);
                    Some(m)
                } else {
                    None
                };
                masks.push(mask);
                inputs.push(h);
            }
            pre.push(z);
        }
        Ok(Trace { inputs, pre, masks })
    }

    /// Backpropagates `grad_out` (dL/d output) through the traced pass.
    ///
    /// Returns parameter gradients and dL/d input.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let mut grads = Gradients::zeros_like(self);
        let d_input = self.backward_into(trace, grad_out, &mut grads, 1.0)?;
        Ok((grads, d_input))
    }

    /// Accumulates `scale * gradient` into `grads`; returns dL/d input.
    pub fn backward_into(
        &self,
        trace: &Trace,
        grad_out: &[f64],
        grads: &mut Gradients,
        scale: f64,
    ) -> Result<Vec<f64>> {
        ensure_dim(self.output_width(), grad_out.len())?;
        let last = self.layers.len() - 1;
        let mut delta = grad_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            if k < last {
                let h = &trace.inputs[k + 1];
                let z = &trace.pre[k];
                match &trace.masks[k] {
                    Some(mask) => {
                        for i in 0..delta.len() {
                            let y = self.act.apply(z[i]);
                            delta[i] *= mask[i] * self.act.derivative(z[i], y);
                        }
                    }
                    None => {
                        for i in 0..delta.len() {
                            delta[i] *= self.act.derivative(z[i], h[i]);
                        }
                    }
                }
            }
            let x = &trace.inputs[k];
            let g = &mut grads.layers[k];
            for (o, d) in delta.iter().enumerate() {
                let d = d * scale;
                g.b[o] += d;
                let row = &mut g.w[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(x).for_each(|(gw, xi)| *gw += d * xi);
            }
            let mut prev = vec![0.0; layer.inputs];
            for (o, d) in delta.iter().enumerate() {
                let row = &layer.w[o * layer.inputs..(o + 1) * layer.inputs];
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
            }
            delta = prev;
        }
        Ok(delta)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            layers: self
                .layers
                .iter()
                .map(|l| LayerDoc { w: l.rows(), b: l.b.clone() })
                .collect(),
            act: self.act,
            dropout: self.dropout,
        }
    }

    pub fn from_checkpoint(doc: Checkpoint) -> Result<Self> {
        let layers = doc
            .layers
            .into_iter()
            .map(|l| Dense::new(l.w, l.b))
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers, doc.act, doc.dropout)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_checkpoint(doc)
    }

    fn apply_update(&mut self, update: &Gradients) {
        for (layer, u) in self.layers.iter_mut().zip(&update.layers) {
            layer.w.iter_mut().zip(&u.w).for_each(|(w, d)| *w += d);
            layer.b.iter_mut().zip(&u.b).for_each(|(b, d)| *b += d);
        }
    }
}

fn layer_widths(input: usize, hidden: &[usize], output: usize) -> Result<Vec<usize>> {
    let mut widths = Vec::with_capacity(hidden.len() + 2);
    widths.push(input);
    widths.extend_from_slice(hidden);
    widths.push(output);
    if widths.contains(&0) {
        return Err(Error::InvalidParameter("layer widths must be positive".into()));
    }
    Ok(widths)
}

/// Serialized network: `{"layers":[{"w":[[..]],"b":[..]}],"act":"tanh","dropout":0.1}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layers: Vec<LayerDoc>,
    pub act: Activation,
    pub dropout: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerDoc {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        &self.inputs[self.inputs.len() - 1]
    }
}

/// Parameter-shaped buffer for gradients or moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn weight(&self, layer: usize, row: usize, col: usize) -> f64 {
        self.layers[layer].weight(row, col)
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.layers[layer].b
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b).copied())
            .collect()
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|v| *v *= factor);
        }
    }

    fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            optimizer: Optimizer::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("epochs and batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Optimizer moments for one network.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    optimizer: Optimizer,
    learning_rate: f64,
    m: Gradients,
    v: Gradients,
    t: u64,
}

impl OptimizerState {
    pub fn new(net: &Mlp, cfg: &TrainConfig) -> Self {
        Self {
            optimizer: cfg.optimizer,
            learning_rate: cfg.learning_rate,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            t: 0,
        }
    }

    /// Applies one descent step along `grads` to `net`.
    pub fn apply(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.t += 1;
        let mut update = grads.clone();
        match self.optimizer {
            Optimizer::Sgd => update.scale(-self.learning_rate),
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                let lr = self.learning_rate;
                for (((u, g), m), v) in update
                    .layers
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut self.m.layers)
                    .zip(&mut self.v.layers)
                {
                    let params = u.w.iter_mut().chain(u.b.iter_mut());
                    let gs = g.w.iter().chain(&g.b);
                    let ms = m.w.iter_mut().chain(m.b.iter_mut());
                    let vs = v.w.iter_mut().chain(v.b.iter_mut());
                    for (((u, g), m), v) in params.zip(gs).zip(ms).zip(vs) {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *u = -lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
        }
        net.apply_update(&update);
    }
}

/// Supervised loss on a network output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Sum of squared errors over output components.
    SquaredError,
    /// Softmax cross-entropy; the target is a one-hot (or soft) distribution.
    SoftmaxCrossEntropy,
}

impl Loss {
    /// Returns the loss value and dL/d output.
    pub fn evaluate(self, output: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
        match self {
            Loss::SquaredError => {
                let diff: Vec<f64> = output.iter().zip(target).map(|(o, t)| o - t).collect();
                let loss = diff.iter().map(|d| d * d).sum();
                (loss, diff.iter().map(|d| 2.0 * d).collect())
            }
            Loss::SoftmaxCrossEntropy => {
                let p = softmax(output);
                let loss = -target
                    .iter()
                    .zip(&p)
                    .filter(|(t, _)| **t > 0.0)
                    .map(|(t, p)| t * p.max(1e-300).ln())
                    .sum::<f64>();
                let total: f64 = target.iter().sum();
                (loss, p.iter().zip(target).map(|(p, t)| total * p - t).collect())
            }
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// One optimizer step on the mean loss over `batch`.
///
/// `batch_index` only labels the error when the loss is not finite.
pub fn train_step<R: Rng + ?Sized>(
    net: &mut Mlp,
    state: &mut OptimizerState,
    batch: &[(&[f64], &[f64])],
    loss: Loss,
    batch_index: usize,
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let mut grads = Gradients::zeros_like(net);
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (x, y) in batch {
        let trace = net.forward_trace(x, Mode::Train, rng)?;
        ensure_dim(net.output_width(), y.len())?;
        let (l, g) = loss.evaluate(trace.output(), y);
        total += l;
        net.backward_into(&trace, &g, &mut grads, scale)?;
    }
    let mean = total * scale;
    if !mean.is_finite() || !grads.is_finite() {
        return Err(Error::NonFiniteLoss { batch: batch_index });
    }
    state.apply(net, &grads);
    Ok(mean)
}

/// Minibatch training over `data`; returns the mean loss of every epoch.
pub fn fit<R: Rng + ?Sized>(
    net: &mut Mlp,
    data: &[(Vec<f64>, Vec<f64>)],
    loss: Loss,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidParameter("no training samples".into()));
    }
    let mut state = OptimizerState::new(net, cfg);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut batch_index = 0;
    for _ in 0..cfg.epochs {
        shuffle(&mut order, rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f64], &[f64])> =
                chunk.iter().map(|&i| (data[i].0.as_slice(), data[i].1.as_slice())).collect();
            epoch_loss += train_step(net, &mut state, &batch, loss, batch_index, rng)? * chunk.len() as f64;
            batch_index += 1;
        }
        history.push(epoch_loss / data.len() as f64);
    }
    Ok(history)
}

/// Mean loss over `data` in Eval mode.
pub fn evaluate_loss(net: &Mlp, data: &[(Vec<f64>, Vec<f64>)], loss: Loss) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in data {
        total += loss.evaluate(&net.predict(x)?, y).0;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Fisher-Yates shuffle driven by the caller's rng.
pub fn shuffle<T, R: Rng + ?Sized>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(3, &[4, 4], 2, Activation::Tanh).unwrap();
        assert_eq!(net.predict(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_net() {
        let layer = Dense::new(vec![vec![1.0]], vec![0.0]).unwrap();
        let net = Mlp::from_layers(vec![layer], Activation::Tanh, 0.0).unwrap();
        assert_eq!(net.forward(&[2.0], Mode::Eval, &mut rng(0)).unwrap(), vec![2.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let net = Mlp::zeros(3, &[4], 2, Activation::Tanh).unwrap();
        assert!(matches!(net.predict(&[1.0]), Err(Error::DimensionMismatch { .. })));
        let a = Dense::new(vec![vec![1.0, 2.0]], vec![0.0]).unwrap();
        let b = Dense::new(vec![vec![1.0, 2.0]], vec![0.0]).unwrap();
        assert!(Mlp::from_layers(vec![a, b], Activation::Tanh, 0.0).is_err());
    }

    #[test]
    fn linear_layer_gradient_closed_form() {
        let layer = Dense::new(vec![vec![0.5, -1.0], vec![2.0, 0.25]], vec![0.1, -0.2]).unwrap();
        let net = Mlp::from_layers(vec![layer], Activation::Tanh, 0.0).unwrap();
        let x = [0.3, -0.7];
        let y = [1.0, 0.5];
        let trace = net.forward_trace(&x, Mode::Eval, &mut rng(0)).unwrap();
        let (_, g) = Loss::SquaredError.evaluate(trace.output(), &y);
        let (grads, _) = net.backward(&trace, &g).unwrap();
        let out = trace.output();
        for o in 0..2 {
            let r = 2.0 * (out[o] - y[o]);
            assert!((grads.bias(0)[o] - r).abs() < 1e-14);
            for i in 0..2 {
                assert!((grads.weight(0, o, i) - r * x[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn eval_forward_is_pure_and_train_is_seeded() {
        let net = Mlp::init(4, &[8, 8], 3, Activation::Tanh, 0.3, &mut rng(7)).unwrap();
        let x = [0.1, 0.2, -0.3, 0.4];
        assert_eq!(net.forward(&x, Mode::Eval, &mut rng(1)).unwrap(), net.forward(&x, Mode::Eval, &mut rng(2)).unwrap());
        assert_eq!(net.forward(&x, Mode::Train, &mut rng(3)).unwrap(), net.forward(&x, Mode::Train, &mut rng(3)).unwrap());
        assert_eq!(net.predict(&x).unwrap(), net.forward(&x, Mode::Eval, &mut rng(0)).unwrap());
    }

    #[test]
    fn softmax_cross_entropy_gradient() {
        let (loss, g) = Loss::SoftmaxCrossEntropy.evaluate(&[0.0, 0.0], &[1.0, 0.0]);
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert!((g[0] + 0.5).abs() < 1e-15 && (g[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = Mlp::init(3, &[5], 2, Activation::Relu, 0.1, &mut rng(3)).unwrap();
        let text = net.to_json();
        let back = Mlp::from_json(&text).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.to_json(), text);
        assert!(text.contains("\"act\":\"relu\""));
    }

    #[test]
    fn non_finite_loss_names_batch() {
        let layer = Dense::new(vec![vec![1e200]], vec![0.0]).unwrap();
        let mut net = Mlp::from_layers(vec![layer], Activation::Tanh, 0.0).unwrap();
        let cfg = TrainConfig::default();
        let mut state = OptimizerState::new(&net, &cfg);
        let x = [1e200];
        let y = [0.0];
        let err = train_step(&mut net, &mut state, &[(&x, &y)], Loss::SquaredError, 7, &mut rng(0)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { batch: 7 }));
    }
}
