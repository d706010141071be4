use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::affinity::{
    conditional_affinities, conditional_affinities_lenient, symmetrize, AffinityMatrix,
};
use super::{EmbeddingSet, TsneLayout};
use crate::error::{Error, Result};
use crate::nn::Matrix;

const INIT_STD: f64 = 1e-4;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum_early: f64,
    pub momentum_late: f64,
    pub momentum_switch_iter: usize,
    pub seed: u64,
    /// Fail when a row cannot reach the target perplexity instead of keeping
    /// the closest bandwidth.
    pub strict_perplexity: bool,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 500,
            learning_rate: 200.0,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            momentum_early: 0.5,
            momentum_late: 0.8,
            momentum_switch_iter: 250,
            seed: 0,
            strict_perplexity: false,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.perplexity > 1.0 && self.perplexity < n as f64) {
            return Err(Error::InvalidArgument(format!(
                "perplexity {} must lie in (1, {n})",
                self.perplexity
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("t-SNE needs at least one iteration".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("t-SNE learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Joint input affinities for a set of embeddings.
pub fn input_affinities(points: &Matrix, config: &TsneConfig) -> Result<AffinityMatrix> {
    let cond = if config.strict_perplexity {
        conditional_affinities(points, config.perplexity)?
    } else {
        let c = conditional_affinities_lenient(points, config.perplexity)?;
        if !c.missed_rows.is_empty() {
            log::debug!(
                "{} of {} rows could not reach perplexity {}",
                c.missed_rows.len(),
                points.rows(),
                config.perplexity
            );
        }
        c
    };
    symmetrize(&cond.rows)
}

pub fn fit(embeddings: &EmbeddingSet, config: &TsneConfig) -> Result<TsneLayout> {
    Ok(fit_traced(embeddings, config, false)?.0)
}

/// Runs the descent; with `trace` set also returns `KL(P || Q)` (against the
/// unexaggerated P) after every iteration.
pub fn fit_traced(
    embeddings: &EmbeddingSet,
    config: &TsneConfig,
    trace: bool,
) -> Result<(TsneLayout, Vec<f64>)> {
    let n = embeddings.len();
    config.validate(n)?;
    let p = input_affinities(embeddings.points(), config)?;
    let (coords, kl) = descend(&p, config, trace)?;
    Ok((
        TsneLayout::new(coords, embeddings.labels().to_vec())?,
        kl,
    ))
}

/// Momentum gradient descent with per-coordinate adaptive gains and early
/// exaggeration, from a seeded Gaussian start.
pub fn descend(p: &AffinityMatrix, config: &TsneConfig, trace: bool) -> Result<(Matrix, Vec<f64>)> {
    let n = p.n();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0; 2]; n];
    let mut grad = vec![[0.0; 2]; n];
    let mut num = vec![0.0; n * n];
    let pm = p.as_matrix().as_slice();
    let mut kl_trace = Vec::new();

    for iter in 0..config.iterations {
        let exaggeration = if iter < config.exaggeration_iters {
            config.exaggeration
        } else {
            1.0
        };
        let momentum = if iter < config.momentum_switch_iter {
            config.momentum_early
        } else {
            config.momentum_late
        };

        let mut total = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                total += 2.0 * v;
            }
        }
        for g in grad.iter_mut() {
            *g = [0.0; 2];
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let v = num[i * n + j];
                let f = (exaggeration * pm[i * n + j] - v / total) * v;
                let fx = f * (y[i][0] - y[j][0]);
                let fy = f * (y[i][1] - y[j][1]);
                grad[i][0] += fx;
                grad[i][1] += fy;
                grad[j][0] -= fx;
                grad[j][1] -= fy;
            }
        }

        for i in 0..n {
            for d in 0..2 {
                let g = 4.0 * grad[i][d];
                if !g.is_finite() {
                    return Err(Error::NonFinite {
                        what: "t-SNE gradient",
                        step: iter,
                    });
                }
                let gain = &mut gains[i][d];
                if (g > 0.0) != (update[i][d] > 0.0) {
                    *gain += 0.2;
                } else {
                    *gain *= 0.8;
                }
                if *gain < MIN_GAIN {
                    *gain = MIN_GAIN;
                }
                update[i][d] = momentum * update[i][d] - config.learning_rate * *gain * g;
                y[i][d] += update[i][d];
            }
        }
        let mean = y.iter().fold([0.0; 2], |acc, v| [acc[0] + v[0], acc[1] + v[1]]);
        let (mx, my) = (mean[0] / n as f64, mean[1] / n as f64);
        for v in y.iter_mut() {
            v[0] -= mx;
            v[1] -= my;
        }
        if y.iter().any(|v| !(v[0].is_finite() && v[1].is_finite())) {
            return Err(Error::NonFinite {
                what: "t-SNE layout",
                step: iter,
            });
        }

        if trace {
            kl_trace.push(layout_kl(pm, &y));
        }
    }
    let coords = Matrix::from_vec(n, 2, y.into_iter().flatten().collect())?;
    Ok((coords, kl_trace))
}

fn layout_kl(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            total += 2.0 / (1.0 + dx * dx + dy * dy);
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pv = p[i * n + j];
            if i != j && pv > 0.0 {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let q = 1.0 / (1.0 + dx * dx + dy * dy) / total;
                kl += pv * (pv / q).ln();
            }
        }
    }
    kl
}
