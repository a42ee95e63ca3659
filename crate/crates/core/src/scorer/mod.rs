//! Word-to-image attention scoring and the contrastive objective.
//!
//! The audio embedding is dotted with every grid cell of the image; the
//! maximum of those attention weights, limited to `[0, 100]`, is the
//! similarity S. Positive pairs are pushed to S = 100 and negatives to 0.

mod train;

pub use train::{
    batch_loss, build_train_data, train_toy, triplet_accuracy, unit_histogram, ProjectedScorer,
    ProjectionModel, TrainConfig, TrainData, TrainOutcome, TrainPair,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::ImageGrid;
use crate::error::{Error, Result};

pub const S_MAX: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub weights: Vec<f64>,
    /// Smallest index attaining the maximum weight.
    pub argmax: usize,
}

impl AttentionMap {
    pub fn max(&self) -> f64 {
        self.weights[self.argmax]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn attention(audio: &[f64], grid: &ImageGrid) -> Result<AttentionMap> {
    if audio.len() != grid.dim() {
        return Err(Error::domain(format!(
            "audio embedding has dimension {}, image {} has {}",
            audio.len(),
            grid.image_id,
            grid.dim()
        )));
    }
    let weights: Vec<f64> = grid.cells().map(|c| dot(audio, c)).collect();
    let mut argmax = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > weights[argmax] {
            argmax = i;
        }
    }
    Ok(AttentionMap { weights, argmax })
}

/// How raw similarity is limited to `[0, 100]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClampMode {
    /// `min(100, max(0, raw))`, zero gradient outside the open interval.
    #[default]
    Hard,
    /// `100 * sigmoid((raw - 50) / 25)`; unit slope at the midpoint.
    Sigmoid,
}

impl ClampMode {
    pub fn apply(self, raw: f64) -> f64 {
        match self {
            ClampMode::Hard => raw.clamp(0.0, S_MAX),
            ClampMode::Sigmoid => S_MAX / (1.0 + (-(raw - 50.0) / 25.0).exp()),
        }
    }

    /// dS/draw at `raw`.
    pub fn derivative(self, raw: f64) -> f64 {
        match self {
            ClampMode::Hard => {
                if raw > 0.0 && raw < S_MAX {
                    1.0
                } else {
                    0.0
                }
            }
            ClampMode::Sigmoid => {
                let s = self.apply(raw);
                s * (1.0 - s / S_MAX) / 25.0
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub raw: f64,
    pub clamped: f64,
}

pub fn similarity(audio: &[f64], grid: &ImageGrid) -> Result<Similarity> {
    similarity_with(audio, grid, ClampMode::Hard)
}

pub fn similarity_with(audio: &[f64], grid: &ImageGrid, clamp: ClampMode) -> Result<Similarity> {
    let raw = attention(audio, grid)?.max();
    Ok(Similarity {
        raw,
        clamped: clamp.apply(raw),
    })
}

/// Anything that assigns a clamped similarity to an (audio, image) pair.
pub trait Scorer: Sync {
    fn score(&self, audio: &[f64], image: &ImageGrid) -> Result<f64>;
}

/// Plain attention similarity on embeddings that already share a space.
#[derive(Debug, Clone, Copy, Default)]
pub struct AttentionScorer {
    pub clamp: ClampMode,
}

impl Scorer for AttentionScorer {
    fn score(&self, audio: &[f64], image: &ImageGrid) -> Result<f64> {
        Ok(similarity_with(audio, image, self.clamp)?.clamped)
    }
}

/// How the bracketed lists of the objective are reduced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ListReduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossOptions {
    #[serde(default)]
    pub reduction: ListReduction,
    #[serde(default)]
    pub clamp: ClampMode,
    /// Pass gradients through the clamp as if it were the identity. The
    /// loss value is unchanged; saturated terms keep receiving gradient.
    #[serde(default)]
    pub straight_through: bool,
    /// Spread each term's gradient over all cells with weights
    /// `softmax(attention / t)` instead of sending it to the argmax cell.
    /// The loss value is unchanged.
    #[serde(default)]
    pub soft_routing: Option<f64>,
}

/// One anchor with its positives and negatives, as indices into an audio
/// table and an image table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastiveBatch {
    /// (audio, image)
    pub anchor: (usize, usize),
    /// (audio, image) pairs sharing the anchor's class.
    pub positives: Vec<(usize, usize)>,
    /// (audio, image, background image) from other classes.
    pub negatives: Vec<(usize, usize, usize)>,
}

impl ContrastiveBatch {
    pub fn anchor_only(audio: usize, image: usize) -> Self {
        Self {
            anchor: (audio, image),
            positives: Vec::new(),
            negatives: Vec::new(),
        }
    }

    /// Every S term as (audio, image, target, weight).
    fn terms(&self, reduction: ListReduction) -> Vec<(usize, usize, f64, f64)> {
        let w = |m: f64| match reduction {
            ListReduction::Mean => 1.0 / m,
            ListReduction::Sum => 1.0,
        };
        let (a, v) = self.anchor;
        let mut terms = vec![(a, v, S_MAX, 1.0)];
        for &(ap, vp) in &self.positives {
            terms.push((a, vp, S_MAX, w(2.0)));
            terms.push((ap, v, S_MAX, w(2.0)));
        }
        for &(an, vn, vbg) in &self.negatives {
            terms.push((an, v, 0.0, w(3.0)));
            terms.push((a, vn, 0.0, w(3.0)));
            terms.push((a, vbg, 0.0, w(3.0)));
        }
        terms
    }

    fn check(&self, audio: &[Vec<f64>], images: &[ImageGrid]) -> Result<()> {
        let a_ok = |i: usize| i < audio.len();
        let v_ok = |i: usize| i < images.len();
        let ok = a_ok(self.anchor.0)
            && v_ok(self.anchor.1)
            && self.positives.iter().all(|&(a, v)| a_ok(a) && v_ok(v))
            && self
                .negatives
                .iter()
                .all(|&(a, v, b)| a_ok(a) && v_ok(v) && v_ok(b));
        if ok {
            Ok(())
        } else {
            Err(Error::validation("batch refers to a missing embedding"))
        }
    }
}

pub fn loss(
    batch: &ContrastiveBatch,
    audio: &[Vec<f64>],
    images: &[ImageGrid],
    opts: LossOptions,
) -> Result<f64> {
    batch.check(audio, images)?;
    let mut total = 0.0;
    for (a, v, target, weight) in batch.terms(opts.reduction) {
        let s = similarity_with(&audio[a], &images[v], opts.clamp)?.clamped;
        total += weight * (s - target) * (s - target);
    }
    Ok(total)
}

/// Sparse gradients keyed by table index. Image gradients are flattened
/// `G^2 * d` vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub audio: BTreeMap<usize, Vec<f64>>,
    pub images: BTreeMap<usize, Vec<f64>>,
}

/// Loss and its gradient. The max routes gradient only to the argmax cell
/// (lowest index on ties).
pub fn loss_gradient(
    batch: &ContrastiveBatch,
    audio: &[Vec<f64>],
    images: &[ImageGrid],
    opts: LossOptions,
) -> Result<(f64, Gradients)> {
    batch.check(audio, images)?;
    let mut total = 0.0;
    let mut grads = Gradients::default();
    for (a, v, target, weight) in batch.terms(opts.reduction) {
        let grid = &images[v];
        let att = attention(&audio[a], grid)?;
        let raw = att.max();
        let s = opts.clamp.apply(raw);
        total += weight * (s - target) * (s - target);
        let slope = if opts.straight_through {
            1.0
        } else {
            opts.clamp.derivative(raw)
        };
        let ds = 2.0 * weight * (s - target) * slope;

        let d = grid.dim();
        let ga = grads.audio.entry(a).or_insert_with(|| vec![0.0; d]);
        let gv = grads
            .images
            .entry(v)
            .or_insert_with(|| vec![0.0; grid.as_slice().len()]);
        if ds == 0.0 {
            continue;
        }
        let routes: Vec<(usize, f64)> = match opts.soft_routing {
            Some(t) => {
                let m = att.max();
                let e: Vec<f64> = att.weights.iter().map(|w| ((w - m) / t).exp()).collect();
                let z: f64 = e.iter().sum();
                e.into_iter().enumerate().map(|(i, x)| (i, x / z)).collect()
            }
            None => vec![(att.argmax, 1.0)],
        };
        for (cell_idx, share) in routes {
            let g = ds * share;
            for (ga, c) in ga.iter_mut().zip(grid.cell(cell_idx)) {
                *ga += g * c;
            }
            let off = cell_idx * d;
            for (gv, x) in gv[off..off + d].iter_mut().zip(&audio[a]) {
                *gv += g * x;
            }
        }
    }
    Ok((total, grads))
}
