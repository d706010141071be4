use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::{downsample, to_grayscale, PlotRaster};
use crate::shadow::{FixedAssignment, HyperparamPool, InferenceTarget, ModelRecord, Role};

/// Which published plot the attack reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    Tsne,
    /// Loss curves drawn with axes and tick marks.
    LossAxes,
    /// Loss curves without axes.
    LossPlain,
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [Self::Tsne, Self::LossAxes, Self::LossPlain];

    pub fn name(self) -> &'static str {
        match self {
            Self::Tsne => "tsne",
            Self::LossAxes => "loss_axes",
            Self::LossPlain => "loss_plain",
        }
    }

    pub fn is_loss(self) -> bool {
        !matches!(self, Self::Tsne)
    }
}

impl fmt::Display for PlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown plot kind {s:?}")))
    }
}

/// Mixed: every record. Fixed: only records whose non-target
/// hyperparameters equal the pinned values.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Mixed,
    Fixed(FixedAssignment),
}

impl Setting {
    pub fn admits(&self, record: &ModelRecord, target: InferenceTarget) -> bool {
        match self {
            Self::Mixed => true,
            Self::Fixed(f) => f.matches(&record.label, target),
        }
    }

    pub fn tag(&self) -> String {
        match self {
            Self::Mixed => "mixed".into(),
            Self::Fixed(f) => format!("fixed({})", f.tag()),
        }
    }
}

/// Where an attack sample came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Provenance {
    pub model_id: String,
    pub role: Role,
    pub plot_kind: PlotKind,
    pub variant: usize,
    /// Defense tag, `none` for an undefended plot.
    pub defense: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSample {
    /// Downsampled grayscale plot.
    pub raster: PlotRaster,
    pub label: usize,
    pub provenance: Provenance,
}

impl AttackSample {
    pub fn features(&self) -> Vec<f64> {
        self.raster.ink_features()
    }
}

/// Labeled plots for one inference target.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackDataset {
    pub target: InferenceTarget,
    pub candidates: Vec<String>,
    pub samples: Vec<AttackSample>,
}

impl AttackDataset {
    pub fn class_count(&self) -> usize {
        self.candidates.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples per candidate, in candidate order.
    pub fn class_balance(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn classes_present(&self) -> usize {
        self.class_balance().iter().filter(|&&c| c > 0).count()
    }

    pub fn model_ids(&self) -> BTreeSet<&str> {
        self.samples.iter().map(|s| s.provenance.model_id.as_str()).collect()
    }

    /// Permutes labels across source models: every plot of a model gets the
    /// label of another model, so class marginals are kept but the link
    /// between plot and label is broken.
    pub fn with_shuffled_labels(&self, seed: u64) -> AttackDataset {
        let mut per_model: Vec<(&str, usize)> = Vec::new();
        for s in &self.samples {
            if !per_model.iter().any(|(id, _)| *id == s.provenance.model_id) {
                per_model.push((&s.provenance.model_id, s.label));
            }
        }
        per_model.sort();
        let mut labels: Vec<usize> = per_model.iter().map(|p| p.1).collect();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let lookup = |id: &str| {
            let i = per_model.binary_search_by(|p| p.0.cmp(id)).expect("id present");
            labels[i]
        };
        let samples = self
            .samples
            .iter()
            .map(|s| AttackSample {
                label: lookup(&s.provenance.model_id),
                ..s.clone()
            })
            .collect();
        AttackDataset {
            samples,
            ..self.clone()
        }
    }

    /// Concatenation of datasets over the same target and candidate list.
    pub fn concat(parts: &[&AttackDataset]) -> Result<AttackDataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        for p in parts {
            if p.target != first.target || p.candidates != first.candidates {
                return Err(Error::InvalidArgument(format!(
                    "label spaces differ: {} {:?} vs {} {:?}",
                    first.target, first.candidates, p.target, p.candidates
                )));
            }
        }
        Ok(AttackDataset {
            target: first.target,
            candidates: first.candidates.clone(),
            samples: parts.iter().flat_map(|p| p.samples.iter().cloned()).collect(),
        })
    }
}

/// Grayscale, then block-average to `side × side`.
pub fn prepare_raster(raster: &PlotRaster, side: usize) -> Result<PlotRaster> {
    downsample(&to_grayscale(raster), side, side)
}

/// One sample per admitted record and plot variant. `plot(record, variant)`
/// supplies the (possibly defended) full-size raster; it runs in parallel
/// and the output keeps record-then-variant order.
#[allow(clippy::too_many_arguments)]
pub fn build_attack_dataset<F>(
    records: &[ModelRecord],
    pool: &HyperparamPool,
    target: InferenceTarget,
    setting: &Setting,
    plot_kind: PlotKind,
    variants: usize,
    defense: &str,
    side: usize,
    plot: F,
) -> Result<AttackDataset>
where
    F: Fn(&ModelRecord, usize) -> Result<PlotRaster> + Sync,
{
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to build an attack dataset from".into()));
    }
    if variants == 0 {
        return Err(Error::InvalidArgument("plot variants must be >= 1".into()));
    }
    let candidates = pool.candidate_names(target);
    if candidates.len() < 2 {
        return Err(Error::DegenerateSetting { classes: candidates.len() });
    }
    let admitted: Vec<(&ModelRecord, usize)> = records
        .iter()
        .filter(|r| setting.admits(r, target))
        .map(|r| {
            pool.label_index(&r.label, target)
                .map(|l| (r, l))
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("record {} label {} outside the pool", r.id, r.label))
                })
        })
        .collect::<Result<_>>()?;
    let present: BTreeSet<usize> = admitted.iter().map(|a| a.1).collect();
    if present.len() < 2 {
        return Err(Error::DegenerateSetting { classes: present.len() });
    }
    let jobs: Vec<(&ModelRecord, usize, usize)> = admitted
        .iter()
        .flat_map(|&(r, l)| (0..variants).map(move |v| (r, l, v)))
        .collect();
    let samples = jobs
        .par_iter()
        .map(|&(r, label, variant)| {
            Ok(AttackSample {
                raster: prepare_raster(&plot(r, variant)?, side)?,
                label,
                provenance: Provenance {
                    model_id: r.id.clone(),
                    role: r.role,
                    plot_kind,
                    variant,
                    defense: defense.to_string(),
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AttackDataset {
        target,
        candidates,
        samples,
    })
}
