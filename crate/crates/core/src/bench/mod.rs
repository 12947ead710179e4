//! End-to-end synthetic benchmark: generate individuals, split them, train a
//! tiny embedder with and without degradation augmentation, and evaluate each
//! model on clean and degraded queries.

mod embedder;
mod synth;

pub use embedder::{pooled_input, Activations, TinyEmbedder, INPUT_DIM, MAX_PARAMETERS, POOL_SIDE};
pub use synth::{
    generate_dataset, identity_name, image_name, ncc, EncounterSpec, StripeBand, SynthConfig, SyntheticDataset,
    SyntheticIdentity,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::curricular::{curricular_loss_grad, update_t, CosineBatch, CurricularState, LossParams};
use crate::degrade::{degrade_image, par_map_ordered, DegradationConfig, PipelineKind};
use crate::retrieval::{evaluate, identity_map, search, EmbeddingMatrix, RankedResult};
use crate::rng::{derive_seed, seeded};
use crate::split::{split_dataset, IdGroup, ManifestRecord, Role, SplitAssignment, SplitConfig};
use crate::{Error, Result};

use embedder::{dot, random_unit_rows};

/// A training augmentation or a query condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    None,
    Simple,
    Diverse,
    DiversePlus,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::None, Condition::Simple, Condition::Diverse, Condition::DiversePlus];

    pub fn pipeline(self) -> Option<PipelineKind> {
        match self {
            Condition::None => None,
            Condition::Simple => Some(PipelineKind::Simple),
            Condition::Diverse => Some(PipelineKind::Diverse),
            Condition::DiversePlus => Some(PipelineKind::DiversePlus),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Condition::None => "none",
            Condition::Simple => "simple",
            Condition::Diverse => "diverse",
            Condition::DiversePlus => "diverse-plus",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "clean" => Ok(Condition::None),
            "simple" => Ok(Condition::Simple),
            "diverse" => Ok(Condition::Diverse),
            "diverse-plus" | "diverse+" | "diverse_plus" => Ok(Condition::DiversePlus),
            other => Err(Error::param(format!("unknown condition `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub n_identities: usize,
    pub images_per_identity: usize,
    pub unseen_fraction: f64,
    pub train_pipelines: Vec<Condition>,
    pub query_conditions: Vec<Condition>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub dim: usize,
    pub loss: LossParams,
    pub ema_momentum: f64,
    /// Chance that a training sample is swapped for a degraded variant.
    pub degrade_probability: f64,
    /// Degraded variants precomputed per training image and pipeline.
    pub variants_per_image: usize,
    pub master_seed: u64,
    pub workers: usize,
    pub synth: SynthConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_identities: 100,
            images_per_identity: 20,
            unseen_fraction: 0.2,
            train_pipelines: Condition::ALL.to_vec(),
            query_conditions: vec![Condition::None, Condition::Diverse, Condition::DiversePlus],
            epochs: 30,
            learning_rate: 0.05,
            batch_size: 32,
            momentum: 0.9,
            weight_decay: 5e-4,
            hidden: 64,
            dim: 64,
            loss: LossParams::default(),
            ema_momentum: 0.99,
            degrade_probability: 0.5,
            variants_per_image: 2,
            master_seed: 0,
            workers: 1,
            synth: SynthConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            (self.n_identities, "n_identities"),
            (self.images_per_identity, "images_per_identity"),
            (self.epochs, "epochs"),
            (self.batch_size, "batch_size"),
            (self.hidden, "hidden"),
            (self.dim, "dim"),
            (self.variants_per_image, "variants_per_image"),
        ];
        for (v, name) in positive {
            if v == 0 {
                return Err(Error::param(format!("{name} must be positive")));
            }
        }
        if !(self.unseen_fraction > 0.0 && self.unseen_fraction < 1.0) {
            return Err(Error::param("unseen_fraction must lie in (0, 1)"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::param("momentum must lie in [0, 1) and weight_decay be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.degrade_probability) {
            return Err(Error::param("degrade_probability must lie in [0, 1]"));
        }
        if self.train_pipelines.is_empty() || self.query_conditions.is_empty() {
            return Err(Error::param("train_pipelines and query_conditions must be non-empty"));
        }
        if self.query_conditions.contains(&Condition::Simple) {
            return Err(Error::param("query conditions are none, diverse and diverse-plus"));
        }
        self.loss.validate()?;
        CurricularState::new(self.ema_momentum)?;
        self.synth.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: BenchConfig = toml::from_str(text).map_err(|e| Error::param(format!("bench config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn split_config(&self) -> SplitConfig {
        SplitConfig {
            seed: derive_seed(self.master_seed, "bench/split"),
            unseen_id_fraction: self.unseen_fraction,
            ..SplitConfig::default()
        }
    }
}

/// Pooled network inputs for every image, plus the degraded variants each role needs.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub manifest: Vec<ManifestRecord>,
    pub assignment: SplitAssignment,
    pub clean: Vec<Vec<f64>>,
    /// Per training pipeline: for each image, its variants (empty unless a training image).
    pub train_variants: BTreeMap<Condition, Vec<Vec<Vec<f64>>>>,
    /// Per degraded query condition: for each image, its degraded input (empty unless a query).
    pub query_inputs: BTreeMap<Condition, Vec<Vec<f64>>>,
}

#[derive(Default)]
struct PerImage {
    clean: Vec<f64>,
    variants: Vec<Vec<Vec<f64>>>,
    queries: Vec<Vec<f64>>,
}

/// Renders every image once and degrades it as its split role requires.
pub fn prepare_data(config: &BenchConfig) -> Result<PreparedData> {
    config.validate()?;
    let data = generate_dataset(config.n_identities, config.images_per_identity, &config.synth, config.master_seed)?;
    let assignment = split_dataset(&data.manifest, &config.split_config())?;
    let roles = assignment.roles();
    let degrade_cfg = DegradationConfig::default();
    let train_kinds: Vec<(Condition, PipelineKind)> =
        config.train_pipelines.iter().filter_map(|c| c.pipeline().map(|k| (*c, k))).collect();
    let query_kinds: Vec<(Condition, PipelineKind)> =
        config.query_conditions.iter().filter_map(|c| c.pipeline().map(|k| (*c, k))).collect();
    let indices: Vec<usize> = (0..data.len()).collect();
    let per_image = par_map_ordered(&indices, config.workers, |&i| -> Result<PerImage> {
        let id = &data.manifest[i].image_id;
        let img = data.render(i);
        let mut out = PerImage { clean: pooled_input(&img)?, ..Default::default() };
        match roles.get(id.as_str()) {
            Some(Role::TrainAndDatabase) => {
                for (cond, kind) in &train_kinds {
                    let seed = derive_seed(config.master_seed, &format!("bench/train/{cond}"));
                    let vars = (0..config.variants_per_image)
                        .map(|v| degrade_image(&degrade_cfg, &format!("{id}/{v}"), &img, *kind, seed).and_then(|(d, _)| pooled_input(&d)))
                        .collect::<Result<Vec<_>>>()?;
                    out.variants.push(vars);
                }
            }
            Some(Role::Query) => {
                for (cond, kind) in &query_kinds {
                    let seed = derive_seed(config.master_seed, &format!("bench/query/{cond}"));
                    let (d, _) = degrade_image(&degrade_cfg, id, &img, *kind, seed)?;
                    out.queries.push(pooled_input(&d)?);
                }
            }
            _ => {}
        }
        Ok(out)
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut clean = Vec::with_capacity(per_image.len());
    let mut train_variants: BTreeMap<Condition, Vec<Vec<Vec<f64>>>> = train_kinds.iter().map(|(c, _)| (*c, Vec::new())).collect();
    let mut query_inputs: BTreeMap<Condition, Vec<Vec<f64>>> = query_kinds.iter().map(|(c, _)| (*c, Vec::new())).collect();
    for p in per_image {
        clean.push(p.clean);
        let mut vars = p.variants.into_iter();
        for (c, _) in &train_kinds {
            train_variants.get_mut(c).expect("key").push(vars.next().unwrap_or_default());
        }
        let mut qs = p.queries.into_iter();
        for (c, _) in &query_kinds {
            query_inputs.get_mut(c).expect("key").push(qs.next().unwrap_or_default());
        }
    }
    Ok(PreparedData { manifest: data.manifest, assignment, clean, train_variants, query_inputs })
}

/// The optimizer's view: seen-identity training images only.
#[derive(Clone, Debug)]
pub struct TrainingSet<'a> {
    pub image_ids: Vec<&'a str>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub clean: Vec<&'a [f64]>,
    pub variants: Vec<&'a [Vec<f64>]>,
}

impl<'a> TrainingSet<'a> {
    pub fn new(data: &'a PreparedData, pipeline: Condition) -> Result<Self> {
        let groups = data.assignment.groups();
        let roles = data.assignment.roles();
        let bank = match pipeline {
            Condition::None => None,
            c => Some(data.train_variants.get(&c).ok_or_else(|| Error::param(format!("no variants prepared for {c}")))?),
        };
        let mut classes: BTreeMap<&str, usize> = BTreeMap::new();
        let mut set = TrainingSet { image_ids: vec![], labels: vec![], n_classes: 0, clean: vec![], variants: vec![] };
        for (i, rec) in data.manifest.iter().enumerate() {
            let id = rec.image_id.as_str();
            if roles.get(id) != Some(&Role::TrainAndDatabase) || groups.get(id) != Some(&IdGroup::SeenIds) {
                continue;
            }
            let next = classes.len();
            let label = *classes.entry(rec.identity_id.as_str()).or_insert(next);
            set.image_ids.push(id);
            set.labels.push(label);
            set.clean.push(&data.clean[i]);
            set.variants.push(bank.map_or(&[][..], |b| &b[i][..]));
        }
        set.n_classes = classes.len();
        if set.image_ids.is_empty() {
            return Err(Error::Training("no training images".into()));
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub embedder: TinyEmbedder,
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    pub final_t: f64,
    /// Every image id the loader handed to the optimizer.
    pub touched: BTreeSet<String>,
}

fn sgd_step(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, momentum: f64, decay: f64) {
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + decay * *p;
        *p -= lr * *v;
    }
}

/// CurricularFace training with SGD, momentum and a cosine learning-rate schedule.
pub fn train_embedder(set: &TrainingSet, config: &BenchConfig, seed: u64) -> Result<TrainedModel> {
    config.validate()?;
    let mut rng = seeded(seed);
    let mut model = TinyEmbedder::new(config.hidden, config.dim, &mut rng)?;
    let mut classes = random_unit_rows(set.n_classes, config.dim, &mut rng);
    let mut velocity = model.zeros_like();
    let mut class_velocity = vec![0.0; classes.len()];
    let mut state = CurricularState::new(config.ema_momentum)?;
    let batch = config.batch_size.min(set.len());
    let steps_per_epoch = set.len().div_ceil(batch);
    let total = (config.epochs * steps_per_epoch) as f64;
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut touched = BTreeSet::new();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    let dim = config.dim;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let lr = config.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total).cos());
            let inputs: Vec<&[f64]> = chunk
                .iter()
                .map(|&i| {
                    let vars = set.variants[i];
                    if !vars.is_empty() && rng.random::<f64>() < config.degrade_probability {
                        &vars[rng.random_range(0..vars.len())][..]
                    } else {
                        set.clean[i]
                    }
                })
                .collect();
            touched.extend(chunk.iter().map(|&i| set.image_ids[i].to_string()));
            let acts: Vec<Activations> = inputs.iter().map(|x| model.forward(x)).collect();
            let norms: Vec<f64> = classes.chunks_exact(dim).map(|w| dot(w, w).sqrt().max(1e-12)).collect();
            let unit_classes: Vec<f64> = classes.chunks_exact(dim).zip(&norms).flat_map(|(w, n)| w.iter().map(move |v| v / n)).collect();
            let mut cosines = Vec::with_capacity(chunk.len() * set.n_classes);
            for a in &acts {
                for w in unit_classes.chunks_exact(dim) {
                    cosines.push(dot(w, &a.unit).clamp(-1.0, 1.0));
                }
            }
            let labels: Vec<usize> = chunk.iter().map(|&i| set.labels[i]).collect();
            let cb = CosineBatch::new(set.n_classes, cosines, labels)?;
            let (loss, g) = curricular_loss_grad(&cb, &config.loss, &state)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("loss became {loss} at step {step}")));
            }
            state = update_t(&state, &cb.positive_cosines());
            epoch_loss += loss;

            let mut grads = model.zeros_like();
            let mut d_classes = vec![0.0; classes.len()];
            for (b, a) in acts.iter().enumerate() {
                let row = &g[b * set.n_classes..(b + 1) * set.n_classes];
                let mut d_unit = vec![0.0; dim];
                for (c, &gc) in row.iter().enumerate() {
                    if gc == 0.0 {
                        continue;
                    }
                    let w = &unit_classes[c * dim..(c + 1) * dim];
                    let dw = &mut d_classes[c * dim..(c + 1) * dim];
                    for k in 0..dim {
                        d_unit[k] += gc * w[k];
                        dw[k] += gc * a.unit[k];
                    }
                }
                model.backward(inputs[b], a, &d_unit, &mut grads);
            }
            for (c, n) in norms.iter().enumerate() {
                let w = &unit_classes[c * dim..(c + 1) * dim];
                let dw = &mut d_classes[c * dim..(c + 1) * dim];
                let proj = dot(dw, w);
                dw.iter_mut().zip(w).for_each(|(d, u)| *d = (*d - proj * u) / n);
            }
            let decays = [config.weight_decay, 0.0, config.weight_decay, 0.0];
            for ((p, (gr, vel)), decay) in model
                .tensors_mut()
                .into_iter()
                .zip(grads.tensors_mut().into_iter().zip(velocity.tensors_mut()))
                .zip(decays)
            {
                sgd_step(p, gr, vel, lr, config.momentum, decay);
            }
            sgd_step(&mut classes, &d_classes, &mut class_velocity, lr, config.momentum, 0.0);
            if !model.is_finite() {
                return Err(Error::Training(format!("parameters became non-finite at step {step}")));
            }
            step += 1;
        }
        epoch_losses.push(epoch_loss / steps_per_epoch as f64);
    }
    Ok(TrainedModel { embedder: model, epoch_losses, steps: step, final_t: state.t, touched })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub train_pipeline: Condition,
    pub query_condition: Condition,
    /// `all`, `seen` or `unseen`.
    pub stratum: String,
    pub n_queries: usize,
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub rank20: f64,
    pub map: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub pipeline: Condition,
    pub steps: usize,
    pub final_loss: f64,
    pub final_t: f64,
    pub training_images: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub master_seed: u64,
    pub database_size: usize,
    pub training: Vec<TrainingSummary>,
    pub records: Vec<GridRecord>,
}

impl GridReport {
    pub fn get(&self, train: Condition, query: Condition, stratum: &str) -> Option<&GridRecord> {
        self.records
            .iter()
            .find(|r| r.train_pipeline == train && r.query_condition == query && r.stratum == stratum)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn embed_rows(model: &TinyEmbedder, ids: Vec<String>, inputs: &[&[f64]]) -> Result<EmbeddingMatrix> {
    let rows: Vec<f64> = inputs.iter().flat_map(|x| model.embed(x)).collect();
    EmbeddingMatrix::new(ids, model.dim, rows)
}

/// Retrieval of each query condition against the clean database, split by identity group.
pub fn evaluate_model(model: &TinyEmbedder, data: &PreparedData, conditions: &[Condition], train: Condition) -> Result<Vec<GridRecord>> {
    let roles = data.assignment.roles();
    let groups = data.assignment.groups();
    let identity_of = identity_map(&data.manifest);
    let (mut db_ids, mut db_inputs, mut q_idx) = (vec![], vec![], vec![]);
    for (i, rec) in data.manifest.iter().enumerate() {
        match roles.get(rec.image_id.as_str()) {
            Some(r) if r.in_database() => {
                db_ids.push(rec.image_id.clone());
                db_inputs.push(&data.clean[i][..]);
            }
            Some(Role::Query) => q_idx.push(i),
            _ => {}
        }
    }
    let database = embed_rows(model, db_ids, &db_inputs)?;
    let mut records = Vec::new();
    for &cond in conditions {
        let inputs: Vec<&[f64]> = match cond {
            Condition::None => q_idx.iter().map(|&i| &data.clean[i][..]).collect(),
            c => {
                let bank = data.query_inputs.get(&c).ok_or_else(|| Error::param(format!("no queries prepared for {c}")))?;
                q_idx.iter().map(|&i| &bank[i][..]).collect()
            }
        };
        let q_ids: Vec<String> = q_idx.iter().map(|&i| data.manifest[i].image_id.clone()).collect();
        let queries = embed_rows(model, q_ids, &inputs)?;
        let results = search(&queries, &database, database.len())?;
        for stratum in ["all", "seen", "unseen"] {
            let subset: Vec<RankedResult> = results
                .iter()
                .filter(|r| match stratum {
                    "seen" => groups.get(r.query_id.as_str()) == Some(&IdGroup::SeenIds),
                    "unseen" => groups.get(r.query_id.as_str()) == Some(&IdGroup::UnseenIds),
                    _ => true,
                })
                .cloned()
                .collect();
            if subset.is_empty() {
                continue;
            }
            let m = evaluate(&subset, &identity_of, &[1, 5, 10, 20], 20.min(database.len()))?;
            let at = |k: usize| m.rank_k.get(&k).copied().unwrap_or(1.0);
            records.push(GridRecord {
                train_pipeline: train,
                query_condition: cond,
                stratum: stratum.into(),
                n_queries: m.n_queries,
                rank1: at(1),
                rank5: at(5),
                rank10: at(10),
                rank20: at(20),
                map: m.map,
            });
        }
    }
    Ok(records)
}

/// Trains one model per training pipeline and evaluates each on every query condition.
pub fn run_experiment_grid(config: &BenchConfig) -> Result<GridReport> {
    let data = prepare_data(config)?;
    let mut training = Vec::new();
    let mut records = Vec::new();
    for &pipeline in &config.train_pipelines {
        let set = TrainingSet::new(&data, pipeline)?;
        let model = train_embedder(&set, config, derive_seed(config.master_seed, &format!("bench/model/{pipeline}")))?;
        training.push(TrainingSummary {
            pipeline,
            steps: model.steps,
            final_loss: model.epoch_losses.last().copied().unwrap_or(f64::NAN),
            final_t: model.final_t,
            training_images: set.len(),
        });
        records.extend(evaluate_model(&model.embedder, &data, &config.query_conditions, pipeline)?);
    }
    let database_size = data.assignment.entries.iter().filter(|e| e.role.in_database()).count();
    Ok(GridReport { master_seed: config.master_seed, database_size, training, records })
}
