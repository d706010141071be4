//! FGSM transfer attacks: craft adversarial examples on a surrogate chosen
//! with the help of inferred hyperparameters, then measure how often they
//! fool the black-box target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{FeedforwardNet, LabeledSet, Matrix};
use crate::seed;
use crate::shadow::{sample_rows, DatasetBundle, FixedAssignment, ModelRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvConfig {
    pub epsilons: Vec<f64>,
    /// Samples drawn from the target-test split per target and repetition.
    pub sample_count: usize,
    pub repetitions: usize,
}

impl Default for AdvConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.1, 0.2, 0.3],
            sample_count: 100,
            repetitions: 5,
        }
    }
}

impl AdvConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epsilons.is_empty() {
            problems.push("downstream.epsilons is empty".to_string());
        }
        for &e in &self.epsilons {
            if !(e > 0.0 && e.is_finite()) {
                problems.push(format!("downstream.epsilons entry {e} must be positive"));
            }
        }
        if self.sample_count == 0 || self.repetitions == 0 {
            problems.push("downstream.sample_count and repetitions must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// How the surrogate model is picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateSelection {
    /// The target itself (white-box upper bound).
    WhiteBox,
    /// A shadow model matching the inferred hyperparameters.
    Inferred,
    /// Any shadow model.
    Random,
}

impl SurrogateSelection {
    pub const ALL: [SurrogateSelection; 3] = [Self::WhiteBox, Self::Inferred, Self::Random];

    pub fn name(self) -> &'static str {
        match self {
            Self::WhiteBox => "white_box",
            Self::Inferred => "inferred",
            Self::Random => "random",
        }
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps >= 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("epsilon {eps} must be finite and >= 0")))
    }
}

fn step(x: f64, g: f64, eps: f64, (lo, hi): (f64, f64)) -> f64 {
    let s = if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    };
    (x + eps * s).clamp(lo, hi)
}

/// `x + eps · sign(∇ₓ loss)`, clamped per feature to `clamp`.
pub fn fgsm(net: &FeedforwardNet, sample: &[f64], label: usize, eps: f64, clamp: &[(f64, f64)]) -> Result<Vec<f64>> {
    check_eps(eps)?;
    if clamp.len() != sample.len() {
        return Err(Error::shape("fgsm clamp", sample.len(), clamp.len()));
    }
    let g = net.input_gradient(sample, label)?;
    Ok(sample
        .iter()
        .zip(&g)
        .zip(clamp)
        .map(|((&x, &g), &c)| step(x, g, eps, c))
        .collect())
}

/// Row-wise FGSM over a batch.
pub fn fgsm_batch(net: &FeedforwardNet, batch: &Matrix, labels: &[usize], eps: f64, clamp: &[(f64, f64)]) -> Result<Matrix> {
    check_eps(eps)?;
    if clamp.len() != batch.cols() {
        return Err(Error::shape("fgsm clamp", batch.cols(), clamp.len()));
    }
    let g = net.input_gradients(batch, labels)?;
    let mut out = batch.clone();
    for r in 0..batch.rows() {
        let grow = g.row(r);
        for (c, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = step(*v, grow[c], eps, clamp[c]);
        }
    }
    Ok(out)
}

/// The chosen surrogate and whether the nearest-match fallback was used.
#[derive(Debug, Clone, Copy)]
pub struct SurrogateChoice<'a> {
    pub record: &'a ModelRecord,
    pub fallback: bool,
}

/// Picks a surrogate for `target`. Inferred mode draws uniformly among
/// shadows matching every inferred value; if none match, among those
/// agreeing on the most inferred values.
pub fn select_surrogate<'a, R: Rng + ?Sized>(
    target: &'a ModelRecord,
    shadows: &'a [ModelRecord],
    inferred: &FixedAssignment,
    mode: SurrogateSelection,
    rng: &mut R,
) -> Result<SurrogateChoice<'a>> {
    if mode == SurrogateSelection::WhiteBox {
        return Ok(SurrogateChoice {
            record: target,
            fallback: false,
        });
    }
    if shadows.is_empty() {
        return Err(Error::InvalidArgument("no shadow models to pick a surrogate from".into()));
    }
    if mode == SurrogateSelection::Random {
        return Ok(SurrogateChoice {
            record: &shadows[rng.random_range(0..shadows.len())],
            fallback: false,
        });
    }
    let scores: Vec<usize> = shadows.iter().map(|s| inferred.agreement(&s.label)).collect();
    let best = *scores.iter().max().expect("nonempty");
    let pool: Vec<&ModelRecord> = shadows
        .iter()
        .zip(&scores)
        .filter(|(_, &s)| s == best)
        .map(|(r, _)| r)
        .collect();
    Ok(SurrogateChoice {
        record: pool[rng.random_range(0..pool.len())],
        fallback: best < inferred.pinned_count(),
    })
}

/// Misclassification rates at one epsilon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferRate {
    pub epsilon: f64,
    /// Over samples the target classified correctly before the attack.
    pub rate: f64,
    /// Over all samples.
    pub unfiltered_rate: f64,
    pub filtered_count: usize,
    pub misclassified: usize,
}

/// Crafts on `surrogate`, scores on `target`, for every epsilon.
pub fn transfer_eval(
    target: &FeedforwardNet,
    surrogate: &FeedforwardNet,
    samples: &LabeledSet,
    epsilons: &[f64],
    clamp: &[(f64, f64)],
) -> Result<Vec<TransferRate>> {
    let clean = target.predict(&samples.features)?;
    let correct: Vec<bool> = clean.iter().zip(&samples.labels).map(|(p, l)| p == l).collect();
    let filtered_count = correct.iter().filter(|&&c| c).count();
    epsilons
        .par_iter()
        .map(|&eps| {
            let adv = fgsm_batch(surrogate, &samples.features, &samples.labels, eps, clamp)?;
            let pred = target.predict(&adv)?;
            let wrong: Vec<bool> = pred.iter().zip(&samples.labels).map(|(p, l)| p != l).collect();
            let misclassified = wrong.iter().zip(&correct).filter(|(&w, &c)| w && c).count();
            let all_wrong = wrong.iter().filter(|&&w| w).count();
            Ok(TransferRate {
                epsilon: eps,
                rate: ratio(misclassified, filtered_count),
                unfiltered_rate: ratio(all_wrong, samples.len()),
                filtered_count,
                misclassified,
            })
        })
        .collect()
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// One row of the downstream results.
#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamRow {
    pub mode: SurrogateSelection,
    pub epsilon: f64,
    pub repetition: usize,
    /// Pooled over targets: misclassified / correctly classified beforehand.
    pub rate: f64,
    pub unfiltered_rate: f64,
    /// Targets whose inferred surrogate came from the fallback.
    pub fallbacks: usize,
}

/// Per-dimension observed range of every split.
pub fn feature_clamp(bundle: &DatasetBundle) -> Vec<(f64, f64)> {
    let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY); bundle.dims()];
    for split in bundle.splits() {
        for (o, (lo, hi)) in out.iter_mut().zip(split.feature_range()) {
            o.0 = o.0.min(lo);
            o.1 = o.1.max(hi);
        }
    }
    out
}

/// Every (mode, epsilon, repetition) over all targets. `inferred[i]` holds
/// the attack's predictions for `targets[i]`.
pub fn run_downstream(
    bundle: &DatasetBundle,
    targets: &[ModelRecord],
    shadows: &[ModelRecord],
    inferred: &[FixedAssignment],
    config: &AdvConfig,
    master_seed: u64,
) -> Result<Vec<DownstreamRow>> {
    config.validate()?;
    if inferred.len() != targets.len() {
        return Err(Error::shape("run_downstream inferred", targets.len(), inferred.len()));
    }
    let clamp = feature_clamp(bundle);
    let test = &bundle.target_test;
    let count = config.sample_count.min(test.len());
    let jobs: Vec<(usize, usize)> = (0..config.repetitions)
        .flat_map(|r| (0..targets.len()).map(move |t| (r, t)))
        .collect();
    // (rep, target) -> per mode: (fallback, per-eps rates)
    let per_job = jobs
        .par_iter()
        .map(|&(rep, t)| {
            let job_seed = seed::derive(master_seed, &[rep as u64, t as u64]);
            let samples = test.subset(&sample_rows(test.len(), count, job_seed));
            SurrogateSelection::ALL
                .iter()
                .enumerate()
                .map(|(m, &mode)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(job_seed, &[m as u64 + 1]));
                    let choice = select_surrogate(&targets[t], shadows, &inferred[t], mode, &mut rng)?;
                    let rates = transfer_eval(&targets[t].net, &choice.record.net, &samples, &config.epsilons, &clamp)?;
                    Ok((choice.fallback, rates))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (m, &mode) in SurrogateSelection::ALL.iter().enumerate() {
        for (e, &epsilon) in config.epsilons.iter().enumerate() {
            for rep in 0..config.repetitions {
                let (mut wrong, mut base, mut fallbacks, mut unfiltered) = (0, 0, 0, 0.0);
                for t in 0..targets.len() {
                    let (fallback, rates) = &per_job[rep * targets.len() + t][m];
                    wrong += rates[e].misclassified;
                    base += rates[e].filtered_count;
                    unfiltered += rates[e].unfiltered_rate * count as f64;
                    fallbacks += *fallback as usize;
                }
                rows.push(DownstreamRow {
                    mode,
                    epsilon,
                    repetition: rep,
                    rate: ratio(wrong, base),
                    unfiltered_rate: unfiltered / (count * targets.len()) as f64,
                    fallbacks,
                });
            }
        }
    }
    Ok(rows)
}
