use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::tsne::EmbeddingSet;

/// Probabilities are clamped here before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Elu,
    Tanh,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 3] = [Self::Relu, Self::Elu, Self::Tanh];

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Self::Relu => z.max(0.0),
            Self::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Self::Tanh => z.tanh(),
        }
    }

    /// Derivative given both the pre-activation `z` and output `a`.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Self::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    a + 1.0
                }
            }
            Self::Tanh => 1.0 - a * a,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Elu => "elu",
            Self::Tanh => "tanh",
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "elu" => Ok(Self::Elu),
            "tanh" => Ok(Self::Tanh),
            other => Err(Error::InvalidArgument(format!("unknown activation {other:?}"))),
        }
    }
}

/// One affine layer: `y = x · weight + bias`, weight shaped `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(fan_in, fan_out),
            bias: vec![0.0; fan_out],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    fn affine(&self, input: &Matrix) -> Result<Matrix> {
        let mut z = input.matmul(&self.weight)?;
        z.add_row_vector(&self.bias)?;
        Ok(z)
    }
}

/// Dense feedforward classifier; every layer but the last applies the
/// hidden activation, the last produces logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedforwardNet {
    layers: Vec<Dense>,
    activation: ActivationKind,
    class_count: usize,
}

/// Per-parameter gradients, shaped exactly like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Input to every layer; `inputs[0]` is the batch itself.
    pub inputs: Vec<Matrix>,
    /// Pre-activation values of each hidden layer.
    pub pre_activations: Vec<Matrix>,
    pub logits: Matrix,
    pub probabilities: Matrix,
}

impl FeedforwardNet {
    /// Glorot-uniform initialized net with layer widths `dims`
    /// (`dims[0]` inputs, `dims.last()` classes).
    pub fn new<R: Rng + ?Sized>(dims: &[usize], activation: ActivationKind, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "network dims must have >= 2 positive entries, got {dims:?}"
            )));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut layer = Dense::zeros(fan_in, fan_out);
                for v in layer.weight.as_mut_slice() {
                    *v = rng.random_range(-limit..=limit);
                }
                layer
            })
            .collect();
        Ok(Self {
            layers,
            activation,
            class_count: *dims.last().unwrap(),
        })
    }

    pub fn from_layers(layers: Vec<Dense>, activation: ActivationKind) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::shape(
                    "FeedforwardNet::from_layers",
                    format!("layer {} input = {}", k + 1, pair[0].fan_out()),
                    pair[1].fan_in(),
                ));
            }
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.fan_out() {
                return Err(Error::shape(
                    "FeedforwardNet::from_layers",
                    format!("layer {k} bias length {}", l.fan_out()),
                    l.bias.len(),
                ));
            }
        }
        let class_count = layers.last().unwrap().fan_out();
        Ok(Self {
            layers,
            activation,
            class_count,
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn activation(&self) -> ActivationKind {
        self.activation
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Dense::fan_out))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, batch: &Matrix) -> Result<ForwardPass> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape("forward", self.input_dim(), batch.cols()));
        }
        let hidden = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(hidden);
        inputs.push(batch.clone());
        for layer in &self.layers[..hidden] {
            let z = layer.affine(inputs.last().unwrap())?;
            let mut a = z.clone();
            let act = self.activation;
            a.map_inplace(|v| act.apply(v));
            pre_activations.push(z);
            inputs.push(a);
        }
        let logits = self.layers[hidden].affine(inputs.last().unwrap())?;
        let probabilities = softmax_rows(&logits);
        Ok(ForwardPass {
            inputs,
            pre_activations,
            logits,
            probabilities,
        })
    }

    pub fn predict_proba(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward(batch)?.probabilities)
    }

    pub fn predict(&self, batch: &Matrix) -> Result<Vec<usize>> {
        let p = self.predict_proba(batch)?;
        Ok((0..p.rows()).map(|r| argmax(p.row(r))).collect())
    }

    pub fn accuracy(&self, batch: &Matrix, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Ok(0.0);
        }
        let pred = self.predict(batch)?;
        let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len() as f64)
    }

    /// Gradients of the mean cross-entropy over the batch.
    pub fn backward(&self, pass: &ForwardPass, labels: &[usize]) -> Result<Gradients> {
        let (grads, _) = self.backprop(pass, labels, false, true)?;
        Ok(grads)
    }

    /// Per-row gradient of each row's own cross-entropy with respect to its
    /// input features.
    pub fn input_gradients(&self, batch: &Matrix, labels: &[usize]) -> Result<Matrix> {
        let pass = self.forward(batch)?;
        let (_, input_grad) = self.backprop(&pass, labels, true, false)?;
        Ok(input_grad.expect("requested"))
    }

    /// `∂ cross_entropy / ∂ sample` for one sample.
    pub fn input_gradient(&self, sample: &[f64], label: usize) -> Result<Vec<f64>> {
        let batch = Matrix::from_vec(1, sample.len(), sample.to_vec())?;
        Ok(self.input_gradients(&batch, &[label])?.into_vec())
    }

    fn check_cache(&self, pass: &ForwardPass, labels: &[usize]) -> Result<()> {
        let n = pass.probabilities.rows();
        let layer_count = self.layers.len();
        if pass.inputs.len() != layer_count || pass.pre_activations.len() != layer_count - 1 {
            return Err(Error::shape(
                "backward (stale cache)",
                format!("{layer_count} layer inputs"),
                pass.inputs.len(),
            ));
        }
        for (k, (input, layer)) in pass.inputs.iter().zip(&self.layers).enumerate() {
            if input.cols() != layer.fan_in() || input.rows() != n {
                return Err(Error::shape(
                    "backward (stale cache)",
                    format!("layer {k} input {n}x{}", layer.fan_in()),
                    format!("{}x{}", input.rows(), input.cols()),
                ));
            }
        }
        if pass.probabilities.cols() != self.class_count {
            return Err(Error::shape(
                "backward (stale cache)",
                self.class_count,
                pass.probabilities.cols(),
            ));
        }
        if labels.len() != n {
            return Err(Error::shape("backward labels", n, labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.class_count) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {} classes",
                self.class_count
            )));
        }
        Ok(())
    }

    fn backprop(
        &self,
        pass: &ForwardPass,
        labels: &[usize],
        want_input: bool,
        mean: bool,
    ) -> Result<(Gradients, Option<Matrix>)> {
        self.check_cache(pass, labels)?;
        let n = labels.len();
        let scale = if mean { 1.0 / n.max(1) as f64 } else { 1.0 };
        let mut delta = pass.probabilities.clone();
        for (r, &l) in labels.iter().enumerate() {
            let row = delta.row_mut(r);
            row[l] -= 1.0;
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut input_grad = None;
        for k in (0..self.layers.len()).rev() {
            grads.push(Dense {
                weight: pass.inputs[k].t_matmul(&delta)?,
                bias: delta.column_sums(),
            });
            if k == 0 && !want_input {
                break;
            }
            let mut upstream = delta.matmul_t(&self.layers[k].weight)?;
            if k == 0 {
                input_grad = Some(upstream);
                break;
            }
            let z = &pass.pre_activations[k - 1];
            let a = &pass.inputs[k];
            for ((u, &zv), &av) in upstream
                .as_mut_slice()
                .iter_mut()
                .zip(z.as_slice())
                .zip(a.as_slice())
            {
                *u *= self.activation.derivative(zv, av);
            }
            delta = upstream;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, input_grad))
    }

    /// Post-activation output of the last hidden layer.
    pub fn penultimate(&self, samples: &Matrix) -> Result<Matrix> {
        if self.layers.len() < 2 {
            return Err(Error::InvalidArgument(
                "penultimate embeddings need a net with at least 2 layers".into(),
            ));
        }
        let mut pass = self.forward(samples)?;
        Ok(pass.inputs.pop().unwrap())
    }

    pub fn penultimate_embeddings(&self, samples: &Matrix, labels: &[usize]) -> Result<EmbeddingSet> {
        EmbeddingSet::new(self.penultimate(samples)?, labels.to_vec())
    }

    /// Versioned text record; floats use Rust's shortest round-trip formatting
    /// so parsing restores every bit.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("plotleak-net v1\n");
        out.push_str(&format!("activation {}\n", self.activation));
        let dims: Vec<String> = self.dims().iter().map(usize::to_string).collect();
        out.push_str(&format!("dims {}\n", dims.join(" ")));
        for layer in &self.layers {
            push_floats(&mut out, layer.weight.as_slice());
            push_floats(&mut out, &layer.bias);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |why: &str| Error::InvalidArgument(format!("malformed net record: {why}"));
        let mut lines = text.lines();
        if lines.next() != Some("plotleak-net v1") {
            return Err(bad("missing or unsupported version header"));
        }
        let activation = lines
            .next()
            .and_then(|l| l.strip_prefix("activation "))
            .ok_or_else(|| bad("activation line"))?
            .parse()?;
        let dims: Vec<usize> = lines
            .next()
            .and_then(|l| l.strip_prefix("dims "))
            .ok_or_else(|| bad("dims line"))?
            .split_whitespace()
            .map(|d| d.parse().map_err(|_| bad("dims value")))
            .collect::<Result<_>>()?;
        if dims.len() < 2 {
            return Err(bad("fewer than 2 dims"));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let weight = parse_floats(lines.next().ok_or_else(|| bad("weight line"))?)?;
            let bias = parse_floats(lines.next().ok_or_else(|| bad("bias line"))?)?;
            if bias.len() != w[1] {
                return Err(bad("bias length"));
            }
            layers.push(Dense {
                weight: Matrix::from_vec(w[0], w[1], weight)?,
                bias,
            });
        }
        Self::from_layers(layers, activation)
    }
}

fn push_floats(out: &mut String, values: &[f64]) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        out.push_str(&format!("{v:?}"));
    }
    out.push('\n');
}

fn parse_floats(line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad float {t:?}")))
        })
        .collect()
}

pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean of `-ln p[label]` over the batch, with `p` clamped at [`LOG_CLAMP`].
pub fn cross_entropy(probabilities: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.len() != probabilities.rows() {
        return Err(Error::shape("cross_entropy", probabilities.rows(), labels.len()));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (r, &l) in labels.iter().enumerate() {
        if l >= probabilities.cols() {
            return Err(Error::InvalidArgument(format!(
                "label {l} out of range for {} classes",
                probabilities.cols()
            )));
        }
        total -= probabilities.get(r, l).max(LOG_CLAMP).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
