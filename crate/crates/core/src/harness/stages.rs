use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::ExperimentConfig;
use crate::adversarial::{run_downstream, SurrogateSelection};
use crate::attack::{
    adaptive_train, build_attack_dataset, evaluate, query_baseline, select_query_set, train_attack_model,
    AttackDataset, AttackModel, ConfusionMatrix, PlotKind, QueryMode, Setting,
};
use crate::defense::{l2_utility, LossDefense, TsneDefense};
use crate::error::{Error, Result};
use crate::nn::{population_std, FeedforwardNet};
use crate::render::{render_loss, render_scatter, LossPlotConfig, PlotRaster};
use crate::seed;
use crate::shadow::{
    load_record, make_synthetic_dataset, partition, sample_rows, save_record, train_member, train_population,
    AttemptOutcome, DatasetBundle, FixedAssignment, InferenceTarget, ModelRecord, PopulationSpec, Role,
};
use crate::tsne::{fit, knn_utility, TsneConfig, TsneLayout};

const BUNDLE_FILE: &str = "data/bundle.json";
const NONE: &str = "none";

// Seed-path keys.
const KEY_DATA: u64 = 1;
const KEY_PARTITION: u64 = 2;
const KEY_TSNE_ROWS: u64 = 3;
const KEY_TSNE_SEED: u64 = 4;
const KEY_DEFENSE: u64 = 5;
const KEY_CONTROL: u64 = 6;

/// Shared state for the stage bodies.
pub(crate) struct Ctx<'a> {
    pub config: &'a ExperimentConfig,
    pub root: &'a Path,
    pub stage_seed: u64,
    pub work: Vec<String>,
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        io(dir, fs::create_dir_all(dir))?;
    }
    io(path, fs::write(path, contents))
}

fn save_png(raster: &PlotRaster, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        io(dir, fs::create_dir_all(dir))?;
    }
    raster.write_png(path)
}

fn read_file(path: &Path) -> Result<String> {
    io(path, fs::read_to_string(path))
}

/// File-system-safe form of a tag.
pub fn slug(tag: &str) -> String {
    tag.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-._".contains(c) { c } else { '_' })
        .collect()
}

fn f(v: f64) -> String {
    format!("{v:.6}")
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    (values.iter().sum::<f64>() / values.len() as f64, population_std(values))
}

fn plot_dir(root: &Path, defense: Option<&str>, kind: PlotKind, role: Role) -> PathBuf {
    let base = match defense {
        None => root.join("plots/original"),
        Some(tag) => root.join("plots/defended").join(slug(tag)),
    };
    base.join(kind.name()).join(role.name())
}

/// Path of one rendered plot.
pub fn plot_path(root: &Path, defense: Option<&str>, kind: PlotKind, record: &ModelRecord, variant: usize) -> PathBuf {
    let dir = plot_dir(root, defense, kind, record.role);
    match kind {
        PlotKind::Tsne => dir.join(&record.id).join(format!("v{variant}.png")),
        _ => dir.join(format!("{}.png", record.id)),
    }
}

fn layout_path(root: &Path, defense: Option<&str>, record: &ModelRecord, variant: usize) -> PathBuf {
    plot_dir(root, defense, PlotKind::Tsne, record.role)
        .join(&record.id)
        .join(format!("v{variant}.csv"))
}

pub(crate) fn load_bundle(root: &Path) -> Result<DatasetBundle> {
    Ok(serde_json::from_str(&read_file(&root.join(BUNDLE_FILE))?)?)
}

fn population_file(root: &Path, role: Role) -> PathBuf {
    root.join("models").join(role.name()).join("population.txt")
}

fn model_dir(root: &Path, role: Role, id: &str) -> PathBuf {
    root.join("models").join(role.name()).join(id)
}

/// `(slot, attempt, id)` rows of a population file.
fn read_population_file(root: &Path, role: Role) -> Result<Option<Vec<(usize, usize, String)>>> {
    let path = population_file(root, role);
    if !path.exists() {
        return Ok(None);
    }
    let corrupt = |line: &str| Error::Corrupt {
        path: path.clone(),
        reason: format!("bad population row {line:?}"),
    };
    read_file(&path)?
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|line| {
            let p: Vec<&str> = line.split(',').collect();
            if p.len() != 3 {
                return Err(corrupt(line));
            }
            Ok((
                p[0].parse().map_err(|_| corrupt(line))?,
                p[1].parse().map_err(|_| corrupt(line))?,
                p[2].to_string(),
            ))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

pub(crate) fn load_population(root: &Path, role: Role) -> Result<Vec<ModelRecord>> {
    let rows = read_population_file(root, role)?.ok_or_else(|| Error::Corrupt {
        path: population_file(root, role),
        reason: "population file missing".into(),
    })?;
    rows.iter()
        .map(|(_, _, id)| load_record(&model_dir(root, role, id)))
        .collect()
}

fn population_spec(config: &ExperimentConfig, role: Role) -> PopulationSpec {
    let p = &config.population;
    PopulationSpec {
        role,
        count: match role {
            Role::Shadow => p.shadow_count,
            Role::Target => p.target_count,
        },
        filter_threshold: p.filter_threshold,
        retry_factor: p.retry_factor,
        master_seed: config.seed,
    }
}

pub(crate) fn gen_data(ctx: &mut Ctx) -> Result<()> {
    let c = ctx.config;
    let spec = crate::shadow::SyntheticSpec {
        seed: seed::derive(c.seed, &[KEY_DATA]),
        ..c.dataset.clone()
    };
    let data = make_synthetic_dataset(&spec)?;
    let bundle = partition(&data, c.partition.fractions, seed::derive(c.seed, &[KEY_PARTITION]))?;
    write_file(&ctx.root.join(BUNDLE_FILE), serde_json::to_string(&bundle)?)?;
    let sizes: Vec<usize> = bundle.splits().iter().map(|s| s.len()).collect();
    ctx.work.push(format!("generated {} samples split {sizes:?}", data.len()));
    Ok(())
}

/// Trains both populations. Models listed in an existing population file
/// are reused when they load and verify; any that do not are retrained from
/// their recorded attempt index.
pub(crate) fn train_shadows(ctx: &mut Ctx) -> Result<()> {
    let c = ctx.config;
    let bundle = load_bundle(ctx.root)?;
    let mut summary = String::from("role,slot,attempt,id,activation,hidden_layers,optimizer,batch_size,test_accuracy\n");
    for role in [Role::Shadow, Role::Target] {
        let spec = population_spec(c, role);
        let records = match read_population_file(ctx.root, role)? {
            Some(rows) if rows.len() == spec.count => {
                let loaded: Vec<Result<(ModelRecord, bool)>> = rows
                    .par_iter()
                    .map(|(_, attempt, id)| {
                        let dir = model_dir(ctx.root, role, id);
                        match load_record(&dir) {
                            Ok(r) if r.attempt == *attempt && r.id == *id => Ok((r, false)),
                            _ => {
                                let r = retrain(&bundle, c, &spec, *attempt, id)?;
                                if dir.exists() {
                                    io(&dir, fs::remove_dir_all(&dir))?;
                                }
                                save_record(&dir, &r)?;
                                Ok((r, true))
                            }
                        }
                    })
                    .collect();
                let mut records = Vec::with_capacity(rows.len());
                for r in loaded {
                    let (r, retrained) = r?;
                    if retrained {
                        ctx.work.push(format!("retrained {role}/{}", r.id));
                    }
                    records.push(r);
                }
                records
            }
            _ => {
                let (records, stats) = train_population(&bundle, &c.pool, &c.training, &spec)?;
                for r in &records {
                    save_record(&model_dir(ctx.root, role, &r.id), r)?;
                    ctx.work.push(format!("trained {role}/{}", r.id));
                }
                let mut pop = String::from("slot,attempt,id\n");
                for (slot, r) in records.iter().enumerate() {
                    writeln!(pop, "{slot},{},{}", r.attempt, r.id).unwrap();
                }
                write_file(&population_file(ctx.root, role), pop)?;
                ctx.work.push(format!(
                    "{role}: {} attempts, {} rejected",
                    stats.attempts,
                    stats.rejected.len()
                ));
                records
            }
        };
        for (slot, r) in records.iter().enumerate() {
            let l = &r.label;
            writeln!(
                summary,
                "{role},{slot},{},{},{},{},{},{},{}",
                r.attempt,
                r.id,
                l.activation,
                l.hidden_layers,
                l.optimizer,
                l.batch_size,
                f(r.test_accuracy)
            )
            .unwrap();
        }
    }
    write_file(&ctx.root.join("models/summary.csv"), summary)
}

fn retrain(bundle: &DatasetBundle, c: &ExperimentConfig, spec: &PopulationSpec, attempt: usize, id: &str) -> Result<ModelRecord> {
    match train_member(bundle, &c.pool, &c.training, spec, attempt)? {
        AttemptOutcome::Accepted(r) if r.id == id => Ok(*r),
        _ => Err(Error::Corrupt {
            path: PathBuf::from(format!("models/{}/{id}", spec.role)),
            reason: format!("retraining attempt {attempt} did not reproduce model {id}"),
        }),
    }
}

fn tsne_config(c: &ExperimentConfig, record: &ModelRecord, variant: usize) -> TsneConfig {
    TsneConfig {
        seed: seed::derive(record.seed, &[KEY_TSNE_SEED, variant as u64]),
        ..c.tsne.clone()
    }
}

/// The embedding set behind variant `variant` of a model's t-SNE plot.
fn plot_embeddings(c: &ExperimentConfig, bundle: &DatasetBundle, record: &ModelRecord, variant: usize) -> Result<crate::tsne::EmbeddingSet> {
    let test = record.role.test_split(bundle);
    let rows = sample_rows(
        test.len(),
        c.plots.tsne_samples,
        seed::derive(record.seed, &[KEY_TSNE_ROWS, variant as u64]),
    );
    let sub = test.subset(&rows);
    record.net.penultimate_embeddings(&sub.features, &sub.labels)
}

fn loss_config(c: &ExperimentConfig, kind: PlotKind) -> LossPlotConfig {
    LossPlotConfig {
        with_axes: kind == PlotKind::LossAxes,
        ..c.loss_plot.clone()
    }
}

fn all_records(root: &Path) -> Result<Vec<ModelRecord>> {
    let mut records = load_population(root, Role::Shadow)?;
    records.extend(load_population(root, Role::Target)?);
    Ok(records)
}

pub(crate) fn render_plots(ctx: &mut Ctx) -> Result<()> {
    let c = ctx.config;
    let root = ctx.root;
    let bundle = load_bundle(root)?;
    let records = all_records(root)?;
    for &kind in &c.plots.kinds {
        let jobs: Vec<(&ModelRecord, usize)> = records
            .iter()
            .flat_map(|r| (0..c.plots.variants(kind, r.role)).map(move |v| (r, v)))
            .collect();
        jobs.par_iter()
            .map(|&(r, v)| {
                let raster = match kind {
                    PlotKind::Tsne => {
                        let emb = plot_embeddings(c, &bundle, r, v)?;
                        let layout = fit(&emb, &tsne_config(c, r, v))?;
                        write_file(&layout_path(root, None, r, v), layout.to_csv())?;
                        render_scatter(&layout, &c.render)?
                    }
                    _ => render_loss(&r.loss_curve, &loss_config(c, kind))?,
                };
                save_png(&raster, &plot_path(root, None, kind, r, v))
            })
            .collect::<Result<Vec<()>>>()?;
        ctx.work.push(format!("rendered {} {kind} plots", jobs.len()));
    }
    Ok(())
}

/// Roles whose plots get a defended copy: targets always, shadows when the
/// defense feeds adaptive training.
fn defended_roles(c: &ExperimentConfig, tag: &str) -> Vec<Role> {
    if c.adaptive.includes(tag) {
        vec![Role::Shadow, Role::Target]
    } else {
        vec![Role::Target]
    }
}

fn defense_salt(c: &ExperimentConfig, record: &ModelRecord, variant: usize) -> u64 {
    seed::derive(c.seed, &[KEY_DEFENSE, seed::label_key(&record.id), variant as u64])
}

fn defended_layout(
    c: &ExperimentConfig,
    root: &Path,
    bundle: &DatasetBundle,
    record: &ModelRecord,
    variant: usize,
    defense: &TsneDefense,
) -> Result<TsneLayout> {
    let d = defense.reseeded(defense_salt(c, record, variant));
    if d.acts_on_embeddings() {
        let emb = plot_embeddings(c, bundle, record, variant)?;
        let emb = emb.with_points(d.apply_to_embeddings(emb.points())?)?;
        fit(&emb, &tsne_config(c, record, variant))
    } else {
        let layout = TsneLayout::from_csv(&read_file(&layout_path(root, None, record, variant))?)?;
        layout.with_coords(d.apply_to_coordinates(layout.coords())?)
    }
}

fn defended_curve(c: &ExperimentConfig, record: &ModelRecord, defense: &LossDefense) -> Result<crate::nn::LossCurve> {
    defense.reseeded(defense_salt(c, record, 0)).apply(&record.loss_curve)
}

pub(crate) fn defend(ctx: &mut Ctx) -> Result<()> {
    let c = ctx.config;
    let root = ctx.root;
    let bundle = load_bundle(root)?;
    let records = all_records(root)?;
    let k = c.attack.knn_k;
    let targets: Vec<&ModelRecord> = records.iter().filter(|r| r.role == Role::Target).collect();

    if c.plots.kinds.contains(&PlotKind::Tsne) {
        let mut csv = String::from("defense,knn,knn_std,knn_drop,plots\n");
        let base: Vec<f64> = targets
            .par_iter()
            .flat_map(|&r| (0..c.plots.target_variants).into_par_iter().map(move |v| (r, v)))
            .map(|(r, v)| {
                let layout = TsneLayout::from_csv(&read_file(&layout_path(root, None, r, v))?)?;
                Ok(knn_utility(layout.coords(), layout.labels(), k))
            })
            .collect::<Result<_>>()?;
        let (base_mean, base_std) = mean_std(&base);
        writeln!(csv, "{NONE},{},{},{},{}", f(base_mean), f(base_std), f(0.0), base.len()).unwrap();
        for d in &c.defenses.tsne {
            let tag = d.tag();
            let roles = defended_roles(c, &tag);
            let jobs: Vec<(&ModelRecord, usize)> = records
                .iter()
                .filter(|r| roles.contains(&r.role))
                .flat_map(|r| (0..c.plots.variants(PlotKind::Tsne, r.role)).map(move |v| (r, v)))
                .collect();
            let knn: Vec<Option<f64>> = jobs
                .par_iter()
                .map(|&(r, v)| {
                    let layout = defended_layout(c, root, &bundle, r, v, d)?;
                    write_file(&layout_path(root, Some(&tag), r, v), layout.to_csv())?;
                    save_png(&render_scatter(&layout, &c.render)?, &plot_path(root, Some(&tag), PlotKind::Tsne, r, v))?;
                    Ok((r.role == Role::Target).then(|| knn_utility(layout.coords(), layout.labels(), k)))
                })
                .collect::<Result<_>>()?;
            let knn: Vec<f64> = knn.into_iter().flatten().collect();
            let (m, s) = mean_std(&knn);
            writeln!(csv, "{tag},{},{},{},{}", f(m), f(s), f(base_mean - m), knn.len()).unwrap();
            ctx.work.push(format!("defended {} t-SNE plots with {tag}", jobs.len()));
        }
        write_file(&root.join("metrics/utility/tsne.csv"), csv)?;
    }

    let loss_kinds: Vec<PlotKind> = c.plots.kinds.iter().copied().filter(|k| k.is_loss()).collect();
    if !loss_kinds.is_empty() {
        let mut csv = String::from("defense,l2,l2_std,curves\n");
        writeln!(csv, "{NONE},{},{},{}", f(0.0), f(0.0), targets.len()).unwrap();
        for d in &c.defenses.loss {
            let tag = d.tag();
            let roles = defended_roles(c, &tag);
            let chosen: Vec<&ModelRecord> = records.iter().filter(|r| roles.contains(&r.role)).collect();
            let l2: Vec<Option<f64>> = chosen
                .par_iter()
                .map(|&r| {
                    let curve = defended_curve(c, r, d)?;
                    for &kind in &loss_kinds {
                        save_png(&render_loss(&curve, &loss_config(c, kind))?, &plot_path(root, Some(&tag), kind, r, 0))?;
                    }
                    (r.role == Role::Target)
                        .then(|| l2_utility(&r.loss_curve, &curve))
                        .transpose()
                })
                .collect::<Result<_>>()?;
            let l2: Vec<f64> = l2.into_iter().flatten().collect();
            let (m, s) = mean_std(&l2);
            writeln!(csv, "{tag},{},{},{}", f(m), f(s), l2.len()).unwrap();
            ctx.work.push(format!("defended {} loss curves with {tag}", chosen.len()));
        }
        write_file(&root.join("metrics/utility/loss.csv"), csv)?;
    }
    Ok(())
}

/// Defense tags applicable to a plot kind.
fn defenses_for(c: &ExperimentConfig, kind: PlotKind) -> Vec<String> {
    match kind {
        PlotKind::Tsne => c.defenses.tsne.iter().map(|d| d.tag()).collect(),
        _ => c.defenses.loss.iter().map(|d| d.tag()).collect(),
    }
}

/// Attack dataset from plots on disk; `Ok(None)` when the setting leaves
/// fewer than two classes.
fn dataset_from_disk(
    c: &ExperimentConfig,
    root: &Path,
    records: &[ModelRecord],
    target: InferenceTarget,
    setting: &Setting,
    kind: PlotKind,
    defense: Option<&str>,
) -> Result<Option<AttackDataset>> {
    let Some(first) = records.first() else {
        return Ok(None);
    };
    let variants = c.plots.variants(kind, first.role);
    let built = build_attack_dataset(
        records,
        &c.pool,
        target,
        setting,
        kind,
        variants,
        defense.unwrap_or(NONE),
        c.attack.model.input_side,
        |r, v| PlotRaster::read_png(&plot_path(root, defense, kind, r, v)),
    );
    match built {
        Ok(d) => Ok(Some(d)),
        Err(Error::DegenerateSetting { classes }) => {
            log::warn!(
                "{target}/{}/{kind}: only {classes} class(es) among {} models; skipped",
                setting.tag(),
                first.role
            );
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// One (inference target, setting, plot kind) combination.
#[derive(Debug, Clone)]
pub(crate) struct Condition {
    pub target: InferenceTarget,
    pub setting: Setting,
    pub kind: PlotKind,
}

impl Condition {
    fn dir(&self, root: &Path) -> PathBuf {
        root.join("attack")
            .join(self.target.name())
            .join(slug(&self.setting.tag()))
            .join(self.kind.name())
    }

    fn key(&self, rep: usize) -> Vec<u64> {
        vec![
            seed::label_key(self.target.name()),
            seed::label_key(&self.setting.tag()),
            seed::label_key(self.kind.name()),
            rep as u64,
        ]
    }

    fn label(&self) -> String {
        format!("{},{},{}", self.target, csv_field(&self.setting.tag()), self.kind)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn conditions(c: &ExperimentConfig) -> Vec<Condition> {
    let mut out = Vec::new();
    for &target in &c.attack.targets {
        for setting in &c.attack.settings {
            for &kind in &c.plots.kinds {
                out.push(Condition {
                    target,
                    setting: setting.clone(),
                    kind,
                });
            }
        }
    }
    out
}

fn model_file(dir: &Path, control: bool, rep: usize) -> PathBuf {
    dir.join(format!("{}{rep}.txt", if control { "control" } else { "rep" }))
}

pub(crate) fn train_attack(ctx: &mut Ctx) -> Result<()> {
    let c = ctx.config;
    let root = ctx.root;
    let shadows = load_population(root, Role::Shadow)?;
    for cond in conditions(c) {
        let dir = cond.dir(root);
        let Some(data) = dataset_from_disk(c, root, &shadows, cond.target, &cond.setting, cond.kind, None)? else {
            write_file(&dir.join("status.txt"), "degenerate\n")?;
            continue;
        };
        let mut jobs: Vec<(bool, usize)> = (0..c.attack.repetitions).map(|r| (false, r)).collect();
        if c.attack.shuffled_control {
            jobs.extend((0..c.attack.repetitions).map(|r| (true, r)));
        }
        let trained: Vec<(bool, usize, AttackModel)> = jobs
            .par_iter()
            .map(|&(control, rep)| {
                let s = seed::derive(ctx.stage_seed, &cond.key(rep));
                let model = if control {
                    let shuffled = data.with_shuffled_labels(seed::derive(s, &[KEY_CONTROL]));
                    train_attack_model(&shuffled, &c.attack.model, seed::derive(s, &[KEY_CONTROL, 1]))?
                } else {
                    train_attack_model(&data, &c.attack.model, s)?
                };
                Ok((control, rep, model))
            })
            .collect::<Result<_>>()?;
        let mut val = String::from("model,run,validation_accuracy\n");
        for (control, rep, model) in &trained {
            write_file(&model_file(&dir, *control, *rep), model.net.to_text())?;
            let v = model.validation_accuracy.map(f).unwrap_or_default();
            writeln!(val, "{},{rep},{v}", if *control { "control" } else { "attack" }).unwrap();
        }
        write_file(&dir.join("validation.csv"), val)?;
        write_file(&dir.join("status.txt"), "trained\n")?;
        let balance: Vec<String> = data
            .candidates
            .iter()
            .zip(data.class_balance())
            .map(|(n, k)| format!("{n}={k}"))
            .collect();
        ctx.work.push(format!(
            "trained {} attack models for {} on {} plots ({})",
            trained.len(),
            cond.label(),
            data.len(),
            balance.join(" ")
        ));
    }
    Ok(())
}

fn load_attack_model(path: &Path, candidates: &[String]) -> Result<AttackModel> {
    Ok(AttackModel {
        net: FeedforwardNet::from_text(&read_file(path)?)?,
        candidates: candidates.to_vec(),
        validation_accuracy: None,
    })
}

/// Per-run accuracies and the run-summed confusion matrix.
struct Scores {
    runs: Vec<f64>,
    confusion: ConfusionMatrix,
}

fn score(models: &[AttackModel], data: &AttackDataset) -> Result<Scores> {
    let results: Vec<(f64, ConfusionMatrix)> = models.par_iter().map(|m| evaluate(m, data)).collect::<Result<_>>()?;
    let mut confusion = ConfusionMatrix::new(data.class_count());
    for (_, cm) in &results {
        confusion.merge(cm)?;
    }
    Ok(Scores {
        runs: results.iter().map(|r| r.0).collect(),
        confusion,
    })
}

const SUMMARY_HEADER: &str = "target,setting,plot,defense,accuracy,std,runs\n";

pub(crate) fn evaluate_stage(ctx: &mut Ctx) -> Result<()> {
    let c = ctx.config;
    let root = ctx.root;
    let out = root.join("metrics/evaluate");
    let shadows = load_population(root, Role::Shadow)?;
    let targets = load_population(root, Role::Target)?;
    let mut runs = String::from("run,target,setting,plot,defense,accuracy\n");
    let mut summary = String::from(SUMMARY_HEADER);
    let mut control = String::from("target,setting,plot,accuracy,std,runs,chance\n");
    let mut balance = String::from("target,setting,plot,candidate,shadow_plots,target_plots\n");
    // model id -> inferred values, from the first mixed t-SNE condition (or
    // the first condition at all) of each inference target
    let mut inferred: BTreeMap<(String, InferenceTarget), String> = BTreeMap::new();
    let mut inferred_from: BTreeMap<InferenceTarget, bool> = BTreeMap::new();

    for cond in conditions(c) {
        let dir = cond.dir(root);
        if read_file(&dir.join("status.txt"))?.trim() != "trained" {
            continue;
        }
        let Some(shadow_data) = dataset_from_disk(c, root, &shadows, cond.target, &cond.setting, cond.kind, None)? else {
            continue;
        };
        let Some(target_data) = dataset_from_disk(c, root, &targets, cond.target, &cond.setting, cond.kind, None)? else {
            continue;
        };
        let candidates = target_data.candidates.clone();
        for ((name, s), t) in candidates.iter().zip(shadow_data.class_balance()).zip(target_data.class_balance()) {
            writeln!(balance, "{},{name},{s},{t}", cond.label()).unwrap();
        }
        let models: Vec<AttackModel> = (0..c.attack.repetitions)
            .map(|r| load_attack_model(&model_file(&dir, false, r), &candidates))
            .collect::<Result<_>>()?;

        let mut sets = vec![(NONE.to_string(), target_data)];
        for tag in defenses_for(c, cond.kind) {
            if let Some(d) = dataset_from_disk(c, root, &targets, cond.target, &cond.setting, cond.kind, Some(&tag))? {
                sets.push((tag, d));
            }
        }
        for (tag, data) in &sets {
            let s = score(&models, data)?;
            for (r, a) in s.runs.iter().enumerate() {
                writeln!(runs, "{r},{},{tag},{}", cond.label(), f(*a)).unwrap();
            }
            let (m, sd) = mean_std(&s.runs);
            writeln!(summary, "{},{tag},{},{},{}", cond.label(), f(m), f(sd), s.runs.len()).unwrap();
            let name = format!(
                "{}__{}__{}__{}.csv",
                cond.target,
                slug(&cond.setting.tag()),
                cond.kind,
                slug(tag)
            );
            write_file(&out.join("confusion").join(name), s.confusion.to_csv(&candidates))?;
        }

        if c.attack.shuffled_control {
            let controls: Vec<AttackModel> = (0..c.attack.repetitions)
                .map(|r| load_attack_model(&model_file(&dir, true, r), &candidates))
                .collect::<Result<_>>()?;
            let s = score(&controls, &sets[0].1)?;
            let (m, sd) = mean_std(&s.runs);
            writeln!(
                control,
                "{},{},{},{},{}",
                cond.label(),
                f(m),
                f(sd),
                s.runs.len(),
                f(1.0 / candidates.len() as f64)
            )
            .unwrap();
        }

        let preferred = cond.setting == Setting::Mixed && cond.kind == PlotKind::Tsne;
        let seen = inferred_from.get(&cond.target).copied();
        if seen.is_none() || (preferred && seen == Some(false)) {
            inferred_from.insert(cond.target, preferred);
            for (id, value) in majority_votes(&models, &sets[0].1)? {
                inferred.insert((id, cond.target), value);
            }
        }
        ctx.work.push(format!("evaluated {}", cond.label()));
    }

    let mut inf = String::from("model_id,target,value\n");
    for ((id, t), v) in &inferred {
        writeln!(inf, "{id},{t},{v}").unwrap();
    }
    write_file(&out.join("attack_runs.csv"), runs)?;
    write_file(&out.join("attack.csv"), summary)?;
    write_file(&out.join("control.csv"), control)?;
    write_file(&out.join("class_balance.csv"), balance)?;
    write_file(&out.join("inferred.csv"), inf)
}

/// Most frequent prediction per source model over every run and plot
/// variant; ties go to the lower candidate index.
fn majority_votes(models: &[AttackModel], data: &AttackDataset) -> Result<Vec<(String, String)>> {
    let mut votes: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for m in models {
        for (s, p) in data.samples.iter().zip(m.predict(data)?) {
            votes
                .entry(&s.provenance.model_id)
                .or_insert_with(|| vec![0; data.class_count()])[p] += 1;
        }
    }
    Ok(votes
        .into_iter()
        .map(|(id, counts)| {
            let best = counts
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            (id.to_string(), data.candidates[best].clone())
        })
        .collect())
}

pub(crate) fn adaptive(ctx: &mut Ctx) -> Result<()> {
    let c = ctx.config;
    let root = ctx.root;
    let shadows = load_population(root, Role::Shadow)?;
    let targets = load_population(root, Role::Target)?;
    let mut runs = String::from("run,target,setting,plot,defense,accuracy\n");
    let mut summary = String::from(SUMMARY_HEADER);
    for cond in conditions(c) {
        let train_tags: Vec<String> = defenses_for(c, cond.kind)
            .into_iter()
            .filter(|t| c.adaptive.includes(t))
            .collect();
        if train_tags.is_empty() {
            continue;
        }
        let load = |records: &[ModelRecord], tag: Option<&str>| {
            dataset_from_disk(c, root, records, cond.target, &cond.setting, cond.kind, tag)
        };
        let Some(original) = load(&shadows, None)? else { continue };
        let defended: Vec<AttackDataset> = train_tags
            .iter()
            .map(|t| load(&shadows, Some(t)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let Some(target_none) = load(&targets, None)? else { continue };
        let mut sets = vec![(NONE.to_string(), target_none)];
        for tag in defenses_for(c, cond.kind) {
            if let Some(d) = load(&targets, Some(&tag))? {
                sets.push((tag, d));
            }
        }
        let models: Vec<AttackModel> = (0..c.attack.repetitions)
            .into_par_iter()
            .map(|rep| adaptive_train(&original, &defended, &c.attack.model, seed::derive(ctx.stage_seed, &cond.key(rep))))
            .collect::<Result<_>>()?;
        for (tag, data) in &sets {
            let s = score(&models, data)?;
            for (r, a) in s.runs.iter().enumerate() {
                writeln!(runs, "{r},{},{tag},{}", cond.label(), f(*a)).unwrap();
            }
            let (m, sd) = mean_std(&s.runs);
            writeln!(summary, "{},{tag},{},{},{}", cond.label(), f(m), f(sd), s.runs.len()).unwrap();
        }
        ctx.work.push(format!(
            "adaptive {} trained on none+{}",
            cond.label(),
            train_tags.join("+")
        ));
    }
    let out = root.join("metrics/adaptive");
    write_file(&out.join("adaptive_runs.csv"), runs)?;
    write_file(&out.join("adaptive.csv"), summary)
}

pub(crate) fn query(ctx: &mut Ctx) -> Result<()> {
    let c = ctx.config;
    let root = ctx.root;
    let bundle = load_bundle(root)?;
    let shadows = load_population(root, Role::Shadow)?;
    let targets = load_population(root, Role::Target)?;
    let q = &c.query.attack;
    let queries = select_query_set(&bundle.shadow_test, q.query_count, seed::derive(ctx.stage_seed, &[0]))?;
    let mut runs = String::from("run,target,mode,accuracy\n");
    let mut summary = String::from("target,mode,accuracy,std,runs\n");
    for &target in &c.attack.targets {
        for mode in [QueryMode::Posterior, QueryMode::LabelOnly] {
            let accs: Vec<f64> = (0..c.attack.repetitions)
                .into_par_iter()
                .map(|rep| {
                    let s = seed::derive(ctx.stage_seed, &[seed::label_key(target.name()), rep as u64]);
                    query_baseline(&shadows, &targets, &c.pool, target, &queries, mode, q, s).map(|r| r.0)
                })
                .collect::<Result<_>>()?;
            for (r, a) in accs.iter().enumerate() {
                writeln!(runs, "{r},{target},{},{}", mode.name(), f(*a)).unwrap();
            }
            let (m, sd) = mean_std(&accs);
            writeln!(summary, "{target},{},{},{},{}", mode.name(), f(m), f(sd), accs.len()).unwrap();
        }
        ctx.work.push(format!("query baseline for {target}"));
    }
    let out = root.join("metrics/query");
    write_file(&out.join("query_runs.csv"), runs)?;
    write_file(&out.join("query.csv"), summary)
}

fn read_inferred(root: &Path, targets: &[ModelRecord]) -> Result<Vec<FixedAssignment>> {
    let path = root.join("metrics/evaluate/inferred.csv");
    let text = read_file(&path)?;
    let mut by_id: BTreeMap<String, FixedAssignment> = BTreeMap::new();
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let p: Vec<&str> = line.split(',').collect();
        let bad = || Error::Corrupt {
            path: path.clone(),
            reason: format!("bad row {line:?}"),
        };
        if p.len() != 3 {
            return Err(bad());
        }
        let entry = by_id.entry(p[0].to_string()).or_default();
        match p[1].parse::<InferenceTarget>()? {
            InferenceTarget::Activation => entry.activation = Some(p[2].parse()?),
            InferenceTarget::HiddenLayers => entry.hidden_layers = Some(p[2].parse().map_err(|_| bad())?),
            InferenceTarget::Optimizer => entry.optimizer = Some(p[2].parse()?),
            InferenceTarget::BatchSize => entry.batch_size = Some(p[2].parse().map_err(|_| bad())?),
        }
    }
    Ok(targets
        .iter()
        .map(|t| by_id.get(&t.id).cloned().unwrap_or_default())
        .collect())
}

pub(crate) fn downstream(ctx: &mut Ctx) -> Result<()> {
    let c = ctx.config;
    let root = ctx.root;
    let bundle = load_bundle(root)?;
    let shadows = load_population(root, Role::Shadow)?;
    let targets = load_population(root, Role::Target)?;
    let inferred = read_inferred(root, &targets)?;
    let rows = run_downstream(&bundle, &targets, &shadows, &inferred, &c.downstream.adv, ctx.stage_seed)?;
    let mut main = String::from("mode,epsilon,repetition,rate\n");
    let mut detail = String::from("mode,epsilon,repetition,unfiltered_rate,fallbacks\n");
    let mut summary = String::from("mode,epsilon,rate,std,unfiltered_rate,repetitions\n");
    for r in &rows {
        writeln!(main, "{},{},{},{}", r.mode.name(), r.epsilon, r.repetition, f(r.rate)).unwrap();
        writeln!(
            detail,
            "{},{},{},{},{}",
            r.mode.name(),
            r.epsilon,
            r.repetition,
            f(r.unfiltered_rate),
            r.fallbacks
        )
        .unwrap();
    }
    for mode in SurrogateSelection::ALL {
        for &eps in &c.downstream.adv.epsilons {
            let sel: Vec<_> = rows.iter().filter(|r| r.mode == mode && r.epsilon == eps).collect();
            let rates: Vec<f64> = sel.iter().map(|r| r.rate).collect();
            let unf: Vec<f64> = sel.iter().map(|r| r.unfiltered_rate).collect();
            let (m, sd) = mean_std(&rates);
            writeln!(summary, "{},{eps},{},{},{},{}", mode.name(), f(m), f(sd), f(mean_std(&unf).0), sel.len()).unwrap();
        }
    }
    let out = root.join("metrics/downstream");
    write_file(&out.join("downstream.csv"), main)?;
    write_file(&out.join("downstream_detail.csv"), detail)?;
    write_file(&out.join("downstream_summary.csv"), summary)?;
    ctx.work.push(format!("{} downstream rows", rows.len()));
    Ok(())
}

/// Parsed CSV: header plus rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = read_file(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("").split(',').map(String::from).collect();
    let rows = lines.filter(|l| !l.is_empty()).map(split_csv_line).collect();
    Ok((header, rows))
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(ch) = chars.next() {
        match ch {
            '"' if quoted && chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            '"' => quoted = !quoted,
            ',' if !quoted => out.push(std::mem::take(&mut cur)),
            _ => cur.push(ch),
        }
    }
    out.push(cur);
    out
}

pub(crate) fn report(ctx: &mut Ctx) -> Result<()> {
    let c = ctx.config;
    let root = ctx.root;
    let m = root.join("metrics");
    let mut csv = String::from("table,target,setting,plot,condition,value,std\n");
    let mut md = String::from("# Results\n");
    let mut push_rows = |table: &str, file: PathBuf, md: &mut String, pick: &dyn Fn(&[String]) -> [String; 6]| -> Result<()> {
        if !file.exists() {
            return Ok(());
        }
        let (_, rows) = read_csv(&file)?;
        writeln!(md, "\n## {table}\n\n| target | setting | plot | condition | value | std |\n|---|---|---|---|---|---|").unwrap();
        for r in rows {
            let v = pick(&r);
            writeln!(csv, "{table},{}", v.iter().map(|s| csv_field(s)).collect::<Vec<_>>().join(",")).unwrap();
            writeln!(md, "| {} |", v.join(" | ")).unwrap();
        }
        Ok(())
    };
    let attack_row = |r: &[String]| [r[0].clone(), r[1].clone(), r[2].clone(), r[3].clone(), r[4].clone(), r[5].clone()];
    push_rows("attack", m.join("evaluate/attack.csv"), &mut md, &attack_row)?;
    push_rows(
        "control",
        m.join("evaluate/control.csv"),
        &mut md,
        &|r| [r[0].clone(), r[1].clone(), r[2].clone(), format!("shuffled (chance {})", r[6]), r[3].clone(), r[4].clone()],
    )?;
    if c.adaptive.enabled {
        push_rows("adaptive", m.join("adaptive/adaptive.csv"), &mut md, &attack_row)?;
    }
    push_rows(
        "tsne_utility",
        m.join("utility/tsne.csv"),
        &mut md,
        &|r| ["-".into(), "-".into(), "tsne".into(), format!("knn {}", r[0]), r[1].clone(), r[2].clone()],
    )?;
    push_rows(
        "loss_utility",
        m.join("utility/loss.csv"),
        &mut md,
        &|r| ["-".into(), "-".into(), "loss".into(), format!("l2 {}", r[0]), r[1].clone(), r[2].clone()],
    )?;
    if c.query.enabled {
        push_rows(
            "query",
            m.join("query/query.csv"),
            &mut md,
            &|r| [r[0].clone(), "mixed".into(), "-".into(), r[1].clone(), r[2].clone(), r[3].clone()],
        )?;
    }
    if c.downstream.enabled {
        push_rows(
            "downstream",
            m.join("downstream/downstream_summary.csv"),
            &mut md,
            &|r| ["-".into(), r[0].clone(), "-".into(), format!("eps={}", r[1]), r[2].clone(), r[3].clone()],
        )?;
    }
    write_file(&m.join("report/summary.csv"), csv)?;
    write_file(&m.join("report/summary.md"), md)?;
    ctx.work.push("wrote metrics/report/summary.csv".into());
    Ok(())
}
