use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LabeledSet, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassShape {
    /// Gaussian blob around a random center.
    Blobs,
    /// Concentric rings in the first two dimensions, Gaussian elsewhere.
    Rings,
}

/// Recipe for a seeded synthetic classification dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dims: usize,
    pub samples_per_class: usize,
    /// Per-feature std of samples around their (sub)cluster center.
    pub dispersion: f64,
    /// Std of class centers around the origin.
    pub center_scale: f64,
    /// Sub-clusters per class; each sample picks one uniformly.
    pub subclusters: usize,
    /// Std of sub-cluster centers around their class center.
    pub subcluster_spread: f64,
    pub shape: ClassShape,
    /// Min-max scale every feature into `[0, 1]` after generation.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            dims: 16,
            samples_per_class: 900,
            dispersion: 1.0,
            center_scale: 1.0,
            subclusters: 1,
            subcluster_spread: 0.0,
            shape: ClassShape::Blobs,
            normalize: true,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.classes < 2 {
            problems.push(format!("classes = {} (need >= 2)", self.classes));
        }
        if self.dims < 2 {
            problems.push(format!("dims = {} (need >= 2)", self.dims));
        }
        if self.samples_per_class == 0 {
            problems.push("samples_per_class = 0".into());
        }
        if self.subclusters == 0 {
            problems.push("subclusters = 0".into());
        }
        if !(self.dispersion >= 0.0 && self.center_scale >= 0.0 && self.subcluster_spread >= 0.0) {
            problems.push("dispersion, center_scale and subcluster_spread must be >= 0".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(problems.join("; ")))
        }
    }
}

/// Balanced, seeded synthetic samples ordered class by class.
pub fn make_synthetic_dataset(spec: &SyntheticSpec) -> Result<LabeledSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.classes * spec.samples_per_class;
    let mut values = Vec::with_capacity(n * spec.dims);
    let mut labels = Vec::with_capacity(n);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let centers: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..spec.dims).map(|_| spec.center_scale * gauss(&mut rng)).collect())
        .collect();
    for (c, center) in centers.iter().enumerate() {
        let subs: Vec<Vec<f64>> = (0..spec.subclusters)
            .map(|_| {
                center
                    .iter()
                    .map(|&m| m + spec.subcluster_spread * gauss(&mut rng))
                    .collect()
            })
            .collect();
        for _ in 0..spec.samples_per_class {
            let sub = &subs[if spec.subclusters > 1 {
                rand::Rng::random_range(&mut rng, 0..spec.subclusters)
            } else {
                0
            }];
            match spec.shape {
                ClassShape::Blobs => {
                    for &m in sub {
                        values.push(m + spec.dispersion * gauss(&mut rng));
                    }
                }
                ClassShape::Rings => {
                    let angle = rand::Rng::random_range(&mut rng, 0.0..std::f64::consts::TAU);
                    let radius = (c + 1) as f64;
                    values.push(radius * angle.cos() + spec.dispersion * gauss(&mut rng));
                    values.push(radius * angle.sin() + spec.dispersion * gauss(&mut rng));
                    for _ in 2..spec.dims {
                        values.push(spec.dispersion * gauss(&mut rng));
                    }
                }
            }
            labels.push(c);
        }
    }
    let mut features = Matrix::from_vec(n, spec.dims, values)?;
    if spec.normalize {
        normalize_unit_range(&mut features);
    }
    LabeledSet::new(features, labels, spec.classes)
}

/// Min-max scales each column into `[0, 1]`; constant columns become 0.5.
pub fn normalize_unit_range(features: &mut Matrix) {
    for c in 0..features.cols() {
        let (lo, hi) = (0..features.rows()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            let v = features.get(r, c);
            (lo.min(v), hi.max(v))
        });
        for r in 0..features.rows() {
            let v = features.get(r, c);
            features.set(r, c, if hi > lo { (v - lo) / (hi - lo) } else { 0.5 });
        }
    }
}

/// The four disjoint splits every experiment runs on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub shadow_train: LabeledSet,
    pub shadow_test: LabeledSet,
    pub target_train: LabeledSet,
    pub target_test: LabeledSet,
}

impl DatasetBundle {
    pub fn splits(&self) -> [&LabeledSet; 4] {
        [&self.shadow_train, &self.shadow_test, &self.target_train, &self.target_test]
    }

    pub fn class_count(&self) -> usize {
        self.shadow_train.class_count
    }

    pub fn dims(&self) -> usize {
        self.shadow_train.dims()
    }
}

/// Stratified, seeded split into shadow-train, shadow-test, target-train and
/// target-test. Each class contributes `⌊f·n_c⌋` samples to every split and
/// its few leftovers go one per split to whichever splits are furthest below
/// their overall target size, so both the per-class and the per-split counts
/// land within one of proportional.
pub fn partition(samples: &LabeledSet, fractions: [f64; 4], seed: u64) -> Result<DatasetBundle> {
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 || fractions.iter().any(|&f| !(f >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "partition fractions must be non-negative and sum to 1, got {fractions:?}"
        )));
    }
    let n = samples.len();
    let targets = largest_remainder(n, &fractions);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); samples.class_count];
    for (row, &l) in samples.labels.iter().enumerate() {
        by_class[l].push(row);
    }
    let mut assigned: [Vec<usize>; 4] = Default::default();
    let mut deficit: Vec<i64> = targets.iter().map(|&t| t as i64).collect();
    let mut per_class_counts = Vec::with_capacity(by_class.len());
    for rows in &by_class {
        let nc = rows.len();
        let counts: Vec<usize> = fractions.iter().map(|f| (f * nc as f64).floor() as usize).collect();
        for (d, &c) in deficit.iter_mut().zip(&counts) {
            *d -= c as i64;
        }
        per_class_counts.push(counts);
    }
    for (c, rows) in by_class.iter_mut().enumerate() {
        let nc = rows.len();
        let counts = &mut per_class_counts[c];
        let leftover = nc - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| {
            let fa = fractions[a] * nc as f64 - (fractions[a] * nc as f64).floor();
            let fb = fractions[b] * nc as f64 - (fractions[b] * nc as f64).floor();
            deficit[b]
                .cmp(&deficit[a])
                .then(fb.total_cmp(&fa))
                .then(a.cmp(&b))
        });
        for &k in order.iter().filter(|&&k| fractions[k] > 0.0).take(leftover) {
            counts[k] += 1;
            deficit[k] -= 1;
        }
        rows.shuffle(&mut rng);
        let mut start = 0;
        for (k, &cnt) in counts.iter().enumerate() {
            if cnt == 0 {
                return Err(Error::InvalidArgument(format!(
                    "class {c} would be empty in split {k}"
                )));
            }
            assigned[k].extend_from_slice(&rows[start..start + cnt]);
            start += cnt;
        }
    }
    let mut splits = assigned.into_iter().map(|mut rows| {
        rows.sort_unstable();
        samples.subset(&rows)
    });
    Ok(DatasetBundle {
        shadow_train: splits.next().unwrap(),
        shadow_test: splits.next().unwrap(),
        target_train: splits.next().unwrap(),
        target_test: splits.next().unwrap(),
    })
}

fn largest_remainder(n: usize, fractions: &[f64; 4]) -> [usize; 4] {
    let mut out = fractions.map(|f| (f * n as f64).floor() as usize);
    let mut rest = n - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| {
        let fa = fractions[a] * n as f64 - out[a] as f64;
        let fb = fractions[b] * n as f64 - out[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        out[k] += 1;
        rest -= 1;
    }
    out
}

/// Draws `count` row positions without replacement.
pub fn sample_rows(len: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<usize> = (0..len).collect();
    if count >= len {
        return rows;
    }
    let (chosen, _) = rows.partial_shuffle(&mut rng, count);
    let mut chosen = chosen.to_vec();
    chosen.sort_unstable();
    chosen
}
