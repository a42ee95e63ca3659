//! Desk-scale trainer for the contrastive objective.
//!
//! Audio inputs are bag-of-units vectors of the mined spans and image inputs
//! are the patch grids. Two linear maps project both into a shared space
//! where the attention similarity is computed; the maps are the only
//! parameters. Gradients of the objective w.r.t. the projected embeddings
//! are chained into the maps and applied with Adam.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{loss, loss_gradient, similarity_with, ContrastiveBatch, LossOptions, Scorer};
use crate::corpus::{ClusterId, EmbeddingFile, ImageGrid, UnitCorpus};
use crate::error::{Error, Result};
use crate::pairgen::{
    build_validation_triplets, derive_seed, sample_batch, AudioRef, MinedPair, PairPools, PairSet,
};

/// L2-normalized counts of segment IDs (runs of equal frames count once).
pub fn unit_histogram(frames: &[ClusterId], vocab_size: u32) -> Result<Vec<f64>> {
    if frames.is_empty() {
        return Err(Error::domain("cannot featurize an empty span"));
    }
    let mut counts = vec![0.0; vocab_size as usize];
    let mut prev = None;
    for &f in frames {
        if prev != Some(f) {
            *counts
                .get_mut(f as usize)
                .ok_or_else(|| Error::validation(format!("unit {f} outside vocabulary")))? += 1.0;
        }
        prev = Some(f);
    }
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    Ok(counts.into_iter().map(|c| c / norm).collect())
}

/// Linear maps from audio features and image patch features into a shared
/// embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    pub embed_dim: usize,
    pub audio_in: usize,
    pub image_in: usize,
    /// `embed_dim x audio_in`, row-major.
    pub audio_proj: Vec<f64>,
    /// `embed_dim x image_in`, row-major.
    pub image_proj: Vec<f64>,
}

fn matvec(m: &[f64], cols: usize, x: &[f64]) -> Vec<f64> {
    m.chunks_exact(cols)
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

impl ProjectionModel {
    pub fn random(embed_dim: usize, audio_in: usize, image_in: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect::<Vec<f64>>()
        };
        let audio_proj = draw(embed_dim * audio_in);
        let image_proj = draw(embed_dim * image_in);
        Self {
            embed_dim,
            audio_in,
            image_in,
            audio_proj,
            image_proj,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.audio_proj
            .iter()
            .chain(&self.image_proj)
            .all(|v| v.is_finite())
    }

    pub fn embed_audio(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.audio_in {
            return Err(Error::domain(format!(
                "audio input has dimension {}, model expects {}",
                x.len(),
                self.audio_in
            )));
        }
        Ok(matvec(&self.audio_proj, self.audio_in, x))
    }

    pub fn embed_grid(&self, grid: &ImageGrid) -> Result<ImageGrid> {
        if grid.dim() != self.image_in {
            return Err(Error::domain(format!(
                "image {} has cell dimension {}, model expects {}",
                grid.image_id,
                grid.dim(),
                self.image_in
            )));
        }
        let cells: Vec<f64> = grid
            .cells()
            .flat_map(|c| matvec(&self.image_proj, self.image_in, c))
            .collect();
        Ok(
            ImageGrid::new(grid.image_id.clone(), grid.grid_size(), self.embed_dim, cells)?
                .with_labels(grid.class_labels.iter().cloned()),
        )
    }

    /// Rows of both maps as records `audio_projection/<row>/<in_dim>` and
    /// `image_projection/<row>/<in_dim>`, zero-padded to the wider input.
    pub fn to_embedding_file(&self) -> EmbeddingFile {
        let width = self.audio_in.max(self.image_in);
        let mut ids = Vec::with_capacity(2 * self.embed_dim);
        let mut values = Vec::with_capacity(2 * self.embed_dim * width);
        for (name, m, cols) in [
            ("audio_projection", &self.audio_proj, self.audio_in),
            ("image_projection", &self.image_proj, self.image_in),
        ] {
            for (r, row) in m.chunks_exact(cols).enumerate() {
                ids.push(format!("{name}/{r}/{cols}"));
                values.extend(row.iter().map(|&v| v as f32));
                values.extend(std::iter::repeat_n(0.0f32, width - cols));
            }
        }
        EmbeddingFile {
            ids,
            dim: width,
            grid_size: None,
            values,
        }
    }

    pub fn from_embedding_file(file: &EmbeddingFile) -> Result<Self> {
        let bad = |id: &str| Error::validation(format!("unexpected model record {id:?}"));
        let mut audio = Vec::new();
        let mut image = Vec::new();
        let (mut audio_in, mut image_in) = (None, None);
        for (i, id) in file.ids.iter().enumerate() {
            let parts: Vec<&str> = id.split('/').collect();
            let [name, row, cols] = parts.as_slice() else {
                return Err(bad(id));
            };
            let row: usize = row.parse().map_err(|_| bad(id))?;
            let cols: usize = cols.parse().map_err(|_| bad(id))?;
            if cols > file.dim {
                return Err(bad(id));
            }
            let (target, width) = match *name {
                "audio_projection" => (&mut audio, &mut audio_in),
                "image_projection" => (&mut image, &mut image_in),
                _ => return Err(bad(id)),
            };
            if *width.get_or_insert(cols) != cols || row != target.len() / cols.max(1) {
                return Err(bad(id));
            }
            target.extend(file.record(i)[..cols].iter().map(|&v| v as f64));
        }
        let (Some(audio_in), Some(image_in)) = (audio_in, image_in) else {
            return Err(Error::validation("model file lacks a projection"));
        };
        let embed_dim = audio.len() / audio_in;
        if image.len() / image_in != embed_dim {
            return Err(Error::validation("projections disagree on embedding dimension"));
        }
        Ok(Self {
            embed_dim,
            audio_in,
            image_in,
            audio_proj: audio,
            image_proj: image,
        })
    }
}

/// Scores raw audio features against raw image grids through a model.
#[derive(Debug, Clone, Copy)]
pub struct ProjectedScorer<'a> {
    pub model: &'a ProjectionModel,
    pub opts: LossOptions,
}

impl Scorer for ProjectedScorer<'_> {
    fn score(&self, audio: &[f64], image: &ImageGrid) -> Result<f64> {
        let a = self.model.embed_audio(audio)?;
        let v = self.model.embed_grid(image)?;
        Ok(similarity_with(&a, &v, self.opts.clamp)?.clamped)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub seed: u64,
    pub embed_dim: usize,
    pub anchors_per_step: usize,
    /// Validation runs every this many steps.
    pub eval_every: usize,
    /// Stop after this many validations without improvement.
    pub patience: usize,
    pub init_scale: f64,
    pub loss: LossOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 0.1,
            n_pos: 5,
            n_neg: 11,
            seed: 0,
            embed_dim: 16,
            anchors_per_step: 4,
            eval_every: 25,
            patience: 40,
            init_scale: 3.0,
            loss: LossOptions {
                straight_through: true,
                soft_routing: Some(5.0),
                ..LossOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainPair {
    pub class_label: String,
    pub audio: usize,
    pub image: usize,
}

/// Everything the trainer reads, resolved to table indices.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub audio_inputs: Vec<Vec<f64>>,
    pub image_inputs: Vec<ImageGrid>,
    pub train: Vec<TrainPair>,
    pub validation: Vec<TrainPair>,
    /// Image indices with no few-shot class.
    pub background: Vec<usize>,
    /// (audio, image, positive image, negative image)
    pub triplets: Vec<(usize, usize, usize, usize)>,
}

/// Featurizes mined spans and resolves image IDs against `grids`.
pub fn build_train_data(
    pairs: &PairSet,
    units: &UnitCorpus,
    grids: &[ImageGrid],
    background_ids: &[String],
    seed: u64,
) -> Result<TrainData> {
    let grid_index: HashMap<&str, usize> = grids
        .iter()
        .enumerate()
        .map(|(i, g)| (g.image_id.as_str(), i))
        .collect();
    let mut image_inputs: Vec<ImageGrid> = Vec::new();
    let mut image_slot: BTreeMap<String, usize> = BTreeMap::new();
    let mut audio_inputs: Vec<Vec<f64>> = Vec::new();
    let mut audio_slot: BTreeMap<String, usize> = BTreeMap::new();

    let mut image_idx = |id: &str| -> Result<usize> {
        if let Some(&i) = image_slot.get(id) {
            return Ok(i);
        }
        let &g = grid_index
            .get(id)
            .ok_or_else(|| Error::validation(format!("no grid for image {id}")))?;
        image_inputs.push(grids[g].clone());
        image_slot.insert(id.to_string(), image_inputs.len() - 1);
        Ok(image_inputs.len() - 1)
    };
    let mut audio_idx = |r: &AudioRef| -> Result<usize> {
        let key = r.key();
        if let Some(&i) = audio_slot.get(&key) {
            return Ok(i);
        }
        let seq = units.get(r.utterance_id()).ok_or_else(|| {
            Error::validation(format!("utterance {} not in unit corpus", r.utterance_id()))
        })?;
        let (start, end) = r.frame_span().unwrap_or((0, seq.frames.len()));
        let frames = seq.frames.get(start..end).ok_or_else(|| {
            Error::validation(format!("span {start}..{end} outside {}", r.utterance_id()))
        })?;
        audio_inputs.push(unit_histogram(frames, units.vocab_size())?);
        audio_slot.insert(key, audio_inputs.len() - 1);
        Ok(audio_inputs.len() - 1)
    };

    let mut resolve = |list: &[MinedPair]| -> Result<Vec<TrainPair>> {
        list.iter()
            .map(|p| {
                Ok(TrainPair {
                    class_label: p.class_label.clone(),
                    audio: audio_idx(&p.audio)?,
                    image: image_idx(&p.image_id)?,
                })
            })
            .collect()
    };
    let train = resolve(&pairs.train)?;
    let validation = resolve(&pairs.validation)?;

    let classes: std::collections::BTreeSet<&str> =
        pairs.train.iter().map(|p| p.class_label.as_str()).collect();
    let mut background = Vec::with_capacity(background_ids.len());
    for id in background_ids {
        let i = image_idx(id)?;
        if let Some(label) = grids[grid_index[id.as_str()]]
            .class_labels
            .iter()
            .find(|l| classes.contains(l.as_str()))
        {
            return Err(Error::validation(format!(
                "background image {id} carries few-shot class {label}"
            )));
        }
        background.push(i);
    }

    let triplets = if pairs.validation.is_empty() {
        Vec::new()
    } else {
        build_validation_triplets(&pairs.validation, seed)?
            .into_iter()
            .map(|t| {
                let p = &validation[t.anchor];
                Ok((
                    p.audio,
                    p.image,
                    image_idx(&t.positive_image)?,
                    image_idx(&t.negative_image)?,
                ))
            })
            .collect::<Result<_>>()?
    };

    Ok(TrainData {
        audio_inputs,
        image_inputs,
        train,
        validation,
        background,
        triplets,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation accuracy (or the last ones when
    /// there is no validation set).
    pub model: ProjectionModel,
    /// Mean minibatch loss per step.
    pub loss_history: Vec<f64>,
    /// (step, validation triplet accuracy)
    pub validation_history: Vec<(usize, f64)>,
    pub best_step: usize,
    pub best_accuracy: Option<f64>,
    pub stopped_early: bool,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Fraction of triplets where both the paired image and the positive image
/// outscore the negative image.
pub fn triplet_accuracy(model: &ProjectionModel, data: &TrainData, opts: LossOptions) -> Result<f64> {
    if data.triplets.is_empty() {
        return Err(Error::domain("no validation triplets"));
    }
    let scorer = ProjectedScorer { model, opts };
    let mut hits = 0usize;
    for &(a, v, vp, vn) in &data.triplets {
        let x = &data.audio_inputs[a];
        let s = scorer.score(x, &data.image_inputs[v])?;
        let sp = scorer.score(x, &data.image_inputs[vp])?;
        let sn = scorer.score(x, &data.image_inputs[vn])?;
        hits += (s > sn && sp > sn) as usize;
    }
    Ok(hits as f64 / data.triplets.len() as f64)
}

/// A batch with its local tables: (batch, audio ids, image ids, projected
/// audio, projected grids).
type LocalBatch = (ContrastiveBatch, Vec<usize>, Vec<usize>, Vec<Vec<f64>>, Vec<ImageGrid>);

/// Builds the batch for one anchor with projected local tables.
fn projected_batch(
    model: &ProjectionModel,
    data: &TrainData,
    plan: &crate::pairgen::BatchPlan,
) -> Result<LocalBatch> {
    let mut audio_global = Vec::new();
    let mut image_global = Vec::new();
    let mut a_local = |g: usize| match audio_global.iter().position(|&x| x == g) {
        Some(i) => i,
        None => {
            audio_global.push(g);
            audio_global.len() - 1
        }
    };
    let mut v_local = |g: usize| match image_global.iter().position(|&x| x == g) {
        Some(i) => i,
        None => {
            image_global.push(g);
            image_global.len() - 1
        }
    };
    let pair = |i: usize| &data.train[i];
    let anchor = pair(plan.anchor);
    let batch = ContrastiveBatch {
        anchor: (a_local(anchor.audio), v_local(anchor.image)),
        positives: plan
            .positives
            .iter()
            .map(|&i| (a_local(pair(i).audio), v_local(pair(i).image)))
            .collect(),
        negatives: plan
            .negatives
            .iter()
            .map(|&(i, b)| {
                (
                    a_local(pair(i).audio),
                    v_local(pair(i).image),
                    v_local(data.background[b]),
                )
            })
            .collect(),
    };
    let audio = audio_global
        .iter()
        .map(|&g| model.embed_audio(&data.audio_inputs[g]))
        .collect::<Result<_>>()?;
    let images = image_global
        .iter()
        .map(|&g| model.embed_grid(&data.image_inputs[g]))
        .collect::<Result<_>>()?;
    Ok((batch, audio_global, image_global, audio, images))
}

/// Objective averaged over a fixed set of anchors, for monitoring.
pub fn batch_loss(
    model: &ProjectionModel,
    data: &TrainData,
    plans: &[crate::pairgen::BatchPlan],
    opts: LossOptions,
) -> Result<f64> {
    let mut total = 0.0;
    for plan in plans {
        let (batch, _, _, audio, images) = projected_batch(model, data, plan)?;
        total += loss(&batch, &audio, &images, opts)?;
    }
    Ok(total / plans.len().max(1) as f64)
}

/// Adds the gradient of one batch's loss w.r.t. both projections into
/// `g_audio` and `g_image` and returns the loss.
fn accumulate_gradient(
    model: &ProjectionModel,
    data: &TrainData,
    plan: &crate::pairgen::BatchPlan,
    opts: LossOptions,
    g_audio: &mut [f64],
    g_image: &mut [f64],
) -> Result<f64> {
    let (audio_in, image_in, e) = (model.audio_in, model.image_in, model.embed_dim);
    let (batch, audio_global, image_global, audio, images) = projected_batch(model, data, plan)?;
    let (l, grads) = loss_gradient(&batch, &audio, &images, opts)?;
    for (local, ga) in &grads.audio {
        let x = &data.audio_inputs[audio_global[*local]];
        for (r, &g) in ga.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (w, xi) in g_audio[r * audio_in..(r + 1) * audio_in].iter_mut().zip(x) {
                *w += g * xi;
            }
        }
    }
    for (local, gv) in &grads.images {
        let grid = &data.image_inputs[image_global[*local]];
        for (cell, gc) in gv.chunks_exact(e).enumerate() {
            if gc.iter().all(|&g| g == 0.0) {
                continue;
            }
            let x = grid.cell(cell);
            for (r, &g) in gc.iter().enumerate() {
                for (w, xi) in g_image[r * image_in..(r + 1) * image_in].iter_mut().zip(x) {
                    *w += g * xi;
                }
            }
        }
    }
    Ok(l)
}

pub fn train_toy(data: &TrainData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if data.train.is_empty() {
        return Err(Error::domain("no training pairs"));
    }
    if cfg.anchors_per_step == 0 || cfg.eval_every == 0 || cfg.embed_dim == 0 {
        return Err(Error::domain("anchors_per_step, eval_every and embed_dim must be positive"));
    }
    let audio_in = data.audio_inputs[0].len();
    let image_in = data.image_inputs[0].dim();
    let mut model = ProjectionModel::random(
        cfg.embed_dim,
        audio_in,
        image_in,
        cfg.init_scale,
        derive_seed(cfg.seed, &[0]),
    );
    let pools = PairPools::new(data.train.iter().map(|p| p.class_label.as_str()));
    let mut adam_audio = Adam::new(model.audio_proj.len());
    let mut adam_image = Adam::new(model.image_proj.len());

    let mut outcome = TrainOutcome {
        model: model.clone(),
        loss_history: Vec::with_capacity(cfg.steps),
        validation_history: Vec::new(),
        best_step: 0,
        best_accuracy: None,
        stopped_early: false,
    };
    let mut since_best = 0usize;

    for step in 0..cfg.steps {
        if !model.is_finite() {
            return Err(Error::Divergence {
                step,
                loss: f64::NAN,
            });
        }
        let mut g_audio = vec![0.0; model.audio_proj.len()];
        let mut g_image = vec![0.0; model.image_proj.len()];
        let mut step_loss = 0.0;
        let mut pick = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1, step as u64]));
        for k in 0..cfg.anchors_per_step {
            let anchor = rand::RngExt::random_range(&mut pick, 0..data.train.len());
            let plan = sample_batch(
                &pools,
                anchor,
                data.background.len(),
                cfg.n_pos,
                cfg.n_neg,
                derive_seed(cfg.seed, &[2, step as u64, k as u64]),
            )?;
            let l = accumulate_gradient(&model, data, &plan, cfg.loss, &mut g_audio, &mut g_image)?;
            step_loss += l;
        }
        let scale = 1.0 / cfg.anchors_per_step as f64;
        step_loss *= scale;
        if !step_loss.is_finite() {
            return Err(Error::Divergence {
                step,
                loss: step_loss,
            });
        }
        outcome.loss_history.push(step_loss);
        g_audio.iter_mut().for_each(|g| *g *= scale);
        g_image.iter_mut().for_each(|g| *g *= scale);
        adam_audio.step(&mut model.audio_proj, &g_audio, cfg.lr);
        adam_image.step(&mut model.image_proj, &g_image, cfg.lr);

        let last = step + 1 == cfg.steps;
        if data.triplets.is_empty() || !((step + 1) % cfg.eval_every == 0 || last) {
            continue;
        }
        let acc = triplet_accuracy(&model, data, cfg.loss)?;
        outcome.validation_history.push((step + 1, acc));
        if outcome.best_accuracy.is_none_or(|b| acc > b) {
            outcome.best_accuracy = Some(acc);
            outcome.best_step = step + 1;
            outcome.model = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                outcome.stopped_early = true;
                break;
            }
        }
    }
    if data.triplets.is_empty() {
        outcome.best_step = outcome.loss_history.len();
        outcome.model = model;
    }
    Ok(outcome)
}
