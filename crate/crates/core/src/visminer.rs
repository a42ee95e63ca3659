//! Image mining by cosine similarity to the support images.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{GlobalImageEmbedding, SupportSet};
use crate::error::{Error, Result};

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::domain(format!(
            "cosine of vectors with dimensions {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::domain("cosine similarity of a zero vector"));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// How the K support similarities of one pool image are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedImage {
    pub image_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRanking {
    pub class_label: String,
    pub ranked: Vec<RankedImage>,
}

/// Ranks every non-support image in `store` per support class.
///
/// The store must hold the support images' embeddings as well; those images
/// are excluded from the candidates.
pub fn mine_images(
    support: &SupportSet,
    store: &[GlobalImageEmbedding],
    n: usize,
    aggregation: Aggregation,
) -> Result<Vec<ImageRanking>> {
    if n == 0 {
        return Err(Error::domain("ranking depth n must be positive"));
    }
    let by_id: HashMap<&str, &GlobalImageEmbedding> =
        store.iter().map(|e| (e.image_id.as_str(), e)).collect();
    let support_ids: BTreeSet<&str> = support.image_ids();
    let candidates: Vec<&GlobalImageEmbedding> = store
        .iter()
        .filter(|e| !support_ids.contains(e.image_id.as_str()))
        .collect();

    let mut rankings = Vec::new();
    for class in support.classes() {
        let refs: Vec<&GlobalImageEmbedding> = support
            .entries_for(&class)
            .map(|e| {
                by_id.get(e.image_id.as_str()).copied().ok_or_else(|| {
                    Error::validation(format!(
                        "support image {} missing from embedding store",
                        e.image_id
                    ))
                })
            })
            .collect::<Result<_>>()?;

        let score = |cand: &GlobalImageEmbedding| -> Result<RankedImage> {
            let sims = refs
                .iter()
                .map(|r| cosine_similarity(&cand.vector, &r.vector))
                .collect::<Result<Vec<f64>>>()?;
            let similarity = match aggregation {
                Aggregation::Max => sims.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Aggregation::Mean => sims.iter().sum::<f64>() / sims.len() as f64,
            };
            Ok(RankedImage {
                image_id: cand.image_id.clone(),
                similarity,
            })
        };

        #[cfg(feature = "parallel")]
        let mut ranked: Vec<RankedImage> = {
            use rayon::prelude::*;
            candidates.par_iter().map(|c| score(c)).collect::<Result<_>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let mut ranked: Vec<RankedImage> =
            candidates.iter().map(|c| score(c)).collect::<Result<_>>()?;

        ranked.sort_by(|a, b| {
            b.similarity
                .total_cmp(&a.similarity)
                .then_with(|| a.image_id.cmp(&b.image_id))
        });
        ranked.truncate(n);
        rankings.push(ImageRanking {
            class_label: class,
            ranked,
        });
    }
    Ok(rankings)
}

/// Serialized form: class -> ranked list.
pub fn rankings_to_map(rankings: &[ImageRanking]) -> BTreeMap<String, Vec<RankedImage>> {
    rankings
        .iter()
        .map(|r| (r.class_label.clone(), r.ranked.clone()))
        .collect()
}

pub fn rankings_from_map(map: BTreeMap<String, Vec<RankedImage>>) -> Vec<ImageRanking> {
    map.into_iter()
        .map(|(class_label, ranked)| ImageRanking {
            class_label,
            ranked,
        })
        .collect()
}
