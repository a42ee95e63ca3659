//! Word-image pair construction, contrastive batch sampling and validation
//! triplets. Every function here is a pure function of its inputs and seed.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::SupportSet;
use crate::error::{Error, Result};
use crate::qbe::ClassRanking;
use crate::visminer::ImageRanking;

/// Mixes a base seed with a path of integers (SplitMix64 finalizer).
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(base.wrapping_add(0x9e37_79b9_7f4a_7c15)), |acc, &p| {
        mix(acc ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15))
    })
}

fn str_seed(s: &str) -> u64 {
    // FNV-1a; stable across platforms and releases
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AudioRef {
    /// A matched span inside an unlabelled utterance.
    Span {
        utterance_id: String,
        span: (usize, usize),
    },
    /// A ground-truth isolated word from the support set.
    Support {
        audio_id: String,
        utterance_id: String,
    },
}

impl AudioRef {
    pub fn utterance_id(&self) -> &str {
        match self {
            AudioRef::Span { utterance_id, .. } | AudioRef::Support { utterance_id, .. } => {
                utterance_id
            }
        }
    }

    /// `None` means the whole utterance.
    pub fn frame_span(&self) -> Option<(usize, usize)> {
        match self {
            AudioRef::Span { span, .. } => Some(*span),
            AudioRef::Support { .. } => None,
        }
    }

    pub fn key(&self) -> String {
        match self {
            AudioRef::Span { utterance_id, span } => {
                format!("span:{utterance_id}:{}:{}", span.0, span.1)
            }
            AudioRef::Support { audio_id, .. } => format!("support:{audio_id}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    Mined,
    Support,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinedPair {
    #[serde(rename = "class")]
    pub class_label: String,
    pub audio: AudioRef,
    pub image_id: String,
    pub source: PairSource,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSet {
    pub train: Vec<MinedPair>,
    pub validation: Vec<MinedPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairConfig {
    pub val_fraction: f64,
    pub seed: u64,
    /// Pair audio and images by a seeded permutation instead of rank index.
    pub shuffle_pairing: bool,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            val_fraction: 0.1,
            seed: 17,
            shuffle_pairing: false,
        }
    }
}

/// Pairs the i-th ranked audio span of each class with the i-th ranked image
/// of the same class and splits the pairs into train and validation sets.
pub fn build_pairs(
    audio: &[ClassRanking],
    images: &[ImageRanking],
    cfg: &PairConfig,
) -> Result<PairSet> {
    if !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(Error::domain(format!(
            "validation fraction {} outside [0, 1)",
            cfg.val_fraction
        )));
    }
    let audio_by: BTreeMap<&str, &ClassRanking> =
        audio.iter().map(|r| (r.class_label.as_str(), r)).collect();
    let image_by: BTreeMap<&str, &ImageRanking> =
        images.iter().map(|r| (r.class_label.as_str(), r)).collect();
    for class in audio_by.keys().chain(image_by.keys()) {
        if !(audio_by.contains_key(class) && image_by.contains_key(class)) {
            return Err(Error::validation(format!(
                "class {class} is present in only one of the rankings"
            )));
        }
    }

    let mut set = PairSet::default();
    for (class, ar) in &audio_by {
        let mut imgs: Vec<&str> = image_by[class]
            .ranked
            .iter()
            .map(|r| r.image_id.as_str())
            .collect();
        if cfg.shuffle_pairing {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1, str_seed(class)]));
            imgs.shuffle(&mut rng);
        }
        let pairs: Vec<MinedPair> = ar
            .ranked
            .iter()
            .zip(imgs)
            .map(|(a, img)| MinedPair {
                class_label: class.to_string(),
                audio: AudioRef::Span {
                    utterance_id: a.utterance_id.clone(),
                    span: a.span,
                },
                image_id: img.to_string(),
                source: PairSource::Mined,
            })
            .collect();

        let n_val = (cfg.val_fraction * pairs.len() as f64).round() as usize;
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[2, str_seed(class)]));
        order.shuffle(&mut rng);
        let val: BTreeSet<usize> = order[..n_val].iter().copied().collect();
        for (i, p) in pairs.into_iter().enumerate() {
            if val.contains(&i) {
                set.validation.push(p);
            } else {
                set.train.push(p);
            }
        }
    }
    Ok(set)
}

/// The support set itself as word-image pairs.
pub fn support_pairs(support: &SupportSet) -> Vec<MinedPair> {
    support
        .entries
        .iter()
        .map(|e| MinedPair {
            class_label: e.class_label.clone(),
            audio: AudioRef::Support {
                audio_id: e.audio_id.clone(),
                utterance_id: e.utterance_id.clone(),
            },
            image_id: e.image_id.clone(),
            source: PairSource::Support,
        })
        .collect()
}

/// Pair indices grouped by class.
#[derive(Debug, Clone)]
pub struct PairPools {
    class_of: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl PairPools {
    pub fn new<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        let mut names: BTreeMap<&str, usize> = BTreeMap::new();
        let mut class_of = Vec::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        for (i, label) in labels.into_iter().enumerate() {
            let next = names.len();
            let c = *names.entry(label).or_insert(next);
            if c == members.len() {
                members.push(Vec::new());
            }
            members[c].push(i);
            class_of.push(c);
        }
        Self { class_of, members }
    }

    pub fn len(&self) -> usize {
        self.class_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_of.is_empty()
    }

    pub fn same_class(&self, a: usize, b: usize) -> bool {
        self.class_of[a] == self.class_of[b]
    }
}

/// Indices for one contrastive batch: pairs index the pool's pair list,
/// the second element of each negative indexes the background pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub anchor: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<(usize, usize)>,
}

/// Samples positives from the anchor's class (anchor excluded), negative
/// pairs from all other classes and background images, each uniformly
/// without replacement.
pub fn sample_batch(
    pools: &PairPools,
    anchor: usize,
    background_len: usize,
    n_pos: usize,
    n_neg: usize,
    seed: u64,
) -> Result<BatchPlan> {
    if anchor >= pools.len() {
        return Err(Error::domain(format!("anchor {anchor} outside pair pool")));
    }
    let class = pools.class_of[anchor];
    let positives: Vec<usize> = pools.members[class]
        .iter()
        .copied()
        .filter(|&i| i != anchor)
        .collect();
    let negatives: Vec<usize> = (0..pools.len())
        .filter(|&i| pools.class_of[i] != class)
        .collect();
    let check = |role: &str, needed: usize, available: usize| {
        if available < needed {
            Err(Error::Insufficient {
                role: role.to_string(),
                needed,
                available,
            })
        } else {
            Ok(())
        }
    };
    check("positives", n_pos, positives.len())?;
    check("negatives", n_neg, negatives.len())?;
    check("background negatives", n_neg, background_len)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = index::sample(&mut rng, positives.len(), n_pos)
        .into_iter()
        .map(|i| positives[i])
        .collect();
    let neg: Vec<usize> = index::sample(&mut rng, negatives.len(), n_neg)
        .into_iter()
        .map(|i| negatives[i])
        .collect();
    let bg = index::sample(&mut rng, background_len, n_neg).into_vec();
    Ok(BatchPlan {
        anchor,
        positives: pos,
        negatives: neg.into_iter().zip(bg).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationTriplet {
    /// Index of the (a, v) pair in the validation list.
    pub anchor: usize,
    pub positive_image: String,
    pub negative_image: String,
}

/// For every validation pair, draws a different image of the same class and
/// an image of another class.
pub fn build_validation_triplets(val: &[MinedPair], seed: u64) -> Result<Vec<ValidationTriplet>> {
    let classes: BTreeSet<&str> = val.iter().map(|p| p.class_label.as_str()).collect();
    if classes.len() < 2 {
        return Err(Error::domain(
            "validation triplets need pairs from at least two classes",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    val.iter()
        .enumerate()
        .map(|(i, p)| {
            let same: Vec<&str> = val
                .iter()
                .filter(|q| q.class_label == p.class_label && q.image_id != p.image_id)
                .map(|q| q.image_id.as_str())
                .collect();
            if same.is_empty() {
                return Err(Error::Insufficient {
                    role: format!("positive images of class {}", p.class_label),
                    needed: 1,
                    available: 0,
                });
            }
            let other: Vec<&str> = val
                .iter()
                .filter(|q| q.class_label != p.class_label)
                .map(|q| q.image_id.as_str())
                .collect();
            let positive_image = same[rng.random_range(0..same.len())].to_string();
            let negative_image = other[rng.random_range(0..other.len())].to_string();
            Ok(ValidationTriplet {
                anchor: i,
                positive_image,
                negative_image,
            })
        })
        .collect()
}
