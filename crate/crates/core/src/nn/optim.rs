use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::net::{Dense, FeedforwardNet, Gradients};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::InvalidArgument(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Mutable optimizer state for one parameter set. Accumulators are stored
/// per parameter tensor in layer order: weight, bias, weight, bias, ...
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    pub learning_rate: f64,
    step_count: u64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn sgd(net: &FeedforwardNet, learning_rate: f64, momentum: f64) -> Self {
        let first = if momentum != 0.0 { zeros_like(net.layers()) } else { Vec::new() };
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            step_count: 0,
            momentum,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 0.0,
            first,
            second: Vec::new(),
        }
    }

    /// Adam with the usual defaults `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn adam(net: &FeedforwardNet, learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            step_count: 0,
            momentum: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first: zeros_like(net.layers()),
            second: zeros_like(net.layers()),
        }
    }

    pub fn new(kind: OptimizerKind, net: &FeedforwardNet, learning_rate: f64, momentum: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::sgd(net, learning_rate, momentum),
            OptimizerKind::Adam => Self::adam(net, learning_rate),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update in place.
    pub fn step(&mut self, net: &mut FeedforwardNet, grads: &Gradients) -> Result<()> {
        check_shapes(net.layers(), &grads.layers)?;
        if !self.first.is_empty() && self.first.len() != 2 * net.layers().len() {
            return Err(Error::shape(
                "optimizer_step accumulators",
                2 * net.layers().len(),
                self.first.len(),
            ));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let lr = self.learning_rate;
        let params = net
            .layers_mut()
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()]);
        let gs = grads
            .layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()]);
        match self.kind {
            OptimizerKind::Sgd => {
                if self.momentum == 0.0 {
                    for (p, g) in params.zip(gs) {
                        for (pv, gv) in p.iter_mut().zip(g) {
                            *pv -= lr * gv;
                        }
                    }
                } else {
                    let mu = self.momentum;
                    for ((p, g), v) in params.zip(gs).zip(self.first.iter_mut()) {
                        for ((pv, gv), vv) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                            *vv = mu * *vv + gv;
                            *pv -= lr * *vv;
                        }
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for (((p, g), m), v) in params
                    .zip(gs)
                    .zip(self.first.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    for (((pv, &gv), mv), vv) in
                        p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *mv = b1 * *mv + (1.0 - b1) * gv;
                        *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                        let m_hat = *mv / c1;
                        let v_hat = *vv / c2;
                        *pv -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

fn zeros_like(layers: &[Dense]) -> Vec<Vec<f64>> {
    layers
        .iter()
        .flat_map(|l| [vec![0.0; l.weight.as_slice().len()], vec![0.0; l.bias.len()]])
        .collect()
}

fn check_shapes(params: &[Dense], grads: &[Dense]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape("optimizer_step", params.len(), grads.len()));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.weight.rows() != g.weight.rows()
            || p.weight.cols() != g.weight.cols()
            || p.bias.len() != g.bias.len()
        {
            return Err(Error::shape(
                "optimizer_step",
                format!("{}x{}", p.weight.rows(), p.weight.cols()),
                format!("{}x{}", g.weight.rows(), g.weight.cols()),
            ));
        }
    }
    Ok(())
}
