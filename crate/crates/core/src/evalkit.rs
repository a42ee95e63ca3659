//! Few-shot evaluation: episode sampling, L-way classification accuracy and
//! P@N retrieval with averaged queries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::index;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AudioEmbedding, ImageGrid};
use crate::error::{Error, Result};
use crate::pairgen::derive_seed;
use crate::scorer::Scorer;

pub const DEFAULT_EPISODES: usize = 1000;
pub const DEFAULT_QUERIES_PER_CLASS: usize = 20;

/// Held-out queries grouped by class plus labelled images.
#[derive(Debug, Clone, Default)]
pub struct EvalCorpus {
    pub queries: BTreeMap<String, Vec<AudioEmbedding>>,
    pub images: Vec<ImageGrid>,
}

impl EvalCorpus {
    /// Groups queries by `class_hint`; unlabelled queries are rejected.
    pub fn new(queries: Vec<AudioEmbedding>, images: Vec<ImageGrid>) -> Result<Self> {
        let mut by_class: BTreeMap<String, Vec<AudioEmbedding>> = BTreeMap::new();
        for q in queries {
            let class = q
                .class_hint
                .clone()
                .ok_or_else(|| Error::validation(format!("query {} has no class label", q.id)))?;
            by_class.entry(class).or_default().push(q);
        }
        let mut seen = BTreeSet::new();
        for img in &images {
            if !seen.insert(img.image_id.as_str()) {
                return Err(Error::validation(format!("duplicate image {}", img.image_id)));
            }
        }
        Ok(Self {
            queries: by_class,
            images,
        })
    }

    pub fn classes(&self) -> Vec<&str> {
        self.queries.keys().map(String::as_str).collect()
    }

    /// Number of images carrying `class`.
    pub fn label_count(&self, class: &str) -> usize {
        self.images.iter().filter(|i| i.has_label(class)).count()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeMode {
    /// One image per class whose labels include no other episode class.
    #[default]
    Classification,
    /// Images may carry several labels; a hit is any label matching the query.
    MultiLabel,
}

/// One few-shot trial, as indices into an [`EvalCorpus`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Episode {
    pub classes: Vec<String>,
    /// `queries[i]` indexes the query pool of `classes[i]`.
    pub queries: Vec<usize>,
    /// Image indices, sorted by image ID.
    pub matching_set: Vec<usize>,
}

pub fn sample_episodes(
    corpus: &EvalCorpus,
    l: usize,
    count: usize,
    seed: u64,
    mode: EpisodeMode,
) -> Result<Vec<Episode>> {
    let all: Vec<&str> = corpus.classes();
    if l < 2 {
        return Err(Error::domain(format!("an episode needs at least 2 classes, got {l}")));
    }
    if all.len() < l {
        return Err(Error::Insufficient {
            role: "episode classes".into(),
            needed: l,
            available: all.len(),
        });
    }
    (0..count)
        .map(|e| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[e as u64]));
            let mut chosen: Vec<&str> = index::sample(&mut rng, all.len(), l)
                .into_iter()
                .map(|i| all[i])
                .collect();
            chosen.sort_unstable();
            let mut queries = Vec::with_capacity(l);
            let mut used = BTreeSet::new();
            let mut images = Vec::with_capacity(l);
            for class in &chosen {
                let pool = &corpus.queries[*class];
                if pool.is_empty() {
                    return Err(Error::Insufficient {
                        role: format!("queries of class {class}"),
                        needed: 1,
                        available: 0,
                    });
                }
                queries.push(index::sample(&mut rng, pool.len(), 1).index(0));

                let candidates: Vec<usize> = corpus
                    .images
                    .iter()
                    .enumerate()
                    .filter(|(i, img)| {
                        !used.contains(i)
                            && img.has_label(class)
                            && (mode == EpisodeMode::MultiLabel
                                || chosen.iter().all(|c| c == class || !img.has_label(c)))
                    })
                    .map(|(i, _)| i)
                    .collect();
                let Some(&pick) = candidates.choose(&mut rng) else {
                    return Err(Error::Insufficient {
                        role: format!("images of class {class}"),
                        needed: 1,
                        available: 0,
                    });
                };
                used.insert(pick);
                images.push(pick);
            }
            images.sort_by(|&a, &b| corpus.images[a].image_id.cmp(&corpus.images[b].image_id));
            Ok(Episode {
                classes: chosen.into_iter().map(String::from).collect(),
                queries,
                matching_set: images,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub class_label: String,
    pub predicted_image: String,
    pub correct: bool,
}

/// Index of the highest score, the first one on ties.
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn classify_episode(
    corpus: &EvalCorpus,
    episode: &Episode,
    scorer: &dyn Scorer,
) -> Result<Vec<Prediction>> {
    episode
        .classes
        .iter()
        .zip(&episode.queries)
        .map(|(class, &q)| {
            let query = &corpus.queries[class][q];
            let scores = episode
                .matching_set
                .iter()
                .map(|&i| scorer.score(&query.vector, &corpus.images[i]))
                .collect::<Result<Vec<f64>>>()?;
            let img = &corpus.images[episode.matching_set[argmax(&scores)]];
            Ok(Prediction {
                class_label: class.clone(),
                predicted_image: img.image_id.clone(),
                correct: img.has_label(class),
            })
        })
        .collect()
}

/// Per-class and overall accuracy, with classes in sorted order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub episodes: usize,
    pub accuracy: f64,
    pub per_class: BTreeMap<String, f64>,
}

pub fn classification_accuracy(
    corpus: &EvalCorpus,
    episodes: &[Episode],
    scorer: &dyn Scorer,
) -> Result<ClassificationReport> {
    if episodes.is_empty() {
        return Err(Error::domain("accuracy over no episodes"));
    }
    #[cfg(feature = "parallel")]
    let preds: Vec<Vec<Prediction>> = {
        use rayon::prelude::*;
        episodes
            .par_iter()
            .map(|e| classify_episode(corpus, e, scorer))
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let preds: Vec<Vec<Prediction>> = episodes
        .iter()
        .map(|e| classify_episode(corpus, e, scorer))
        .collect::<Result<_>>()?;

    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let (mut hits, mut total) = (0usize, 0usize);
    for p in preds.iter().flatten() {
        let t = tally.entry(p.class_label.clone()).or_default();
        t.0 += p.correct as usize;
        t.1 += 1;
        hits += p.correct as usize;
        total += 1;
    }
    Ok(ClassificationReport {
        episodes: episodes.len(),
        accuracy: hits as f64 / total as f64,
        per_class: tally
            .into_iter()
            .map(|(c, (h, n))| (c, h as f64 / n as f64))
            .collect(),
    })
}

/// Image indices by descending score, ties by ascending image ID.
pub fn rank_images(
    query: &[f64],
    images: &[ImageGrid],
    scorer: &dyn Scorer,
) -> Result<Vec<(usize, f64)>> {
    #[cfg(feature = "parallel")]
    let scores: Vec<f64> = {
        use rayon::prelude::*;
        images
            .par_iter()
            .map(|i| scorer.score(query, i))
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let scores: Vec<f64> = images
        .iter()
        .map(|i| scorer.score(query, i))
        .collect::<Result<_>>()?;
    let mut ranked: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| images[a.0].image_id.cmp(&images[b.0].image_id))
    });
    Ok(ranked)
}

/// Fraction of the first `n` ranked items that are relevant.
pub fn precision_at_n(relevant_in_rank_order: &[bool], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::domain("P@N with N = 0"));
    }
    let hits = relevant_in_rank_order.iter().take(n).filter(|&&r| r).count();
    Ok(hits as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRetrieval {
    pub n: usize,
    pub p_at_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub queries_per_class: usize,
    /// Unweighted mean over classes.
    pub aggregate: f64,
    pub per_class: BTreeMap<String, ClassRetrieval>,
}

/// Elementwise mean of the query vectors.
pub fn mean_query(queries: &[&AudioEmbedding]) -> Result<Vec<f64>> {
    let first = queries
        .first()
        .ok_or_else(|| Error::domain("mean of no queries"))?;
    let mut acc = vec![0.0; first.vector.len()];
    for q in queries {
        if q.vector.len() != acc.len() {
            return Err(Error::validation(format!(
                "query {} has dimension {}, expected {}",
                q.id,
                q.vector.len(),
                acc.len()
            )));
        }
        for (a, v) in acc.iter_mut().zip(&q.vector) {
            *a += v;
        }
    }
    let k = queries.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Ok(acc)
}

/// For every class, averages `queries_per_class` sampled queries, ranks the
/// whole image pool and reports P@N with N the class's label count.
pub fn retrieval_eval(
    corpus: &EvalCorpus,
    scorer: &dyn Scorer,
    queries_per_class: usize,
    seed: u64,
) -> Result<RetrievalReport> {
    if queries_per_class == 0 {
        return Err(Error::domain("queries per class must be positive"));
    }
    if corpus.queries.is_empty() {
        return Err(Error::domain("retrieval over no classes"));
    }
    let mut per_class = BTreeMap::new();
    for (ci, (class, pool)) in corpus.queries.iter().enumerate() {
        if pool.len() < queries_per_class {
            return Err(Error::Insufficient {
                role: format!("queries of class {class}"),
                needed: queries_per_class,
                available: pool.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[ci as u64]));
        let mut picks = index::sample(&mut rng, pool.len(), queries_per_class).into_vec();
        picks.sort_unstable();
        let chosen: Vec<&AudioEmbedding> = picks.iter().map(|&i| &pool[i]).collect();
        let query = mean_query(&chosen)?;

        let n = corpus.label_count(class);
        if n == 0 {
            return Err(Error::domain(format!("no image in the pool depicts {class}")));
        }
        let ranked = rank_images(&query, &corpus.images, scorer)?;
        let relevant: Vec<bool> = ranked
            .iter()
            .map(|&(i, _)| corpus.images[i].has_label(class))
            .collect();
        per_class.insert(
            class.clone(),
            ClassRetrieval {
                n,
                p_at_n: precision_at_n(&relevant, n)?,
            },
        );
    }
    let aggregate =
        per_class.values().map(|r: &ClassRetrieval| r.p_at_n).sum::<f64>() / per_class.len() as f64;
    Ok(RetrievalReport {
        queries_per_class,
        aggregate,
        per_class,
    })
}

/// A per-class metric table with its unweighted class mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTable {
    pub metric: String,
    pub aggregate: f64,
    pub per_class: BTreeMap<String, f64>,
}

pub fn per_class_report(metric: &str, values: &BTreeMap<String, f64>) -> Result<ClassTable> {
    if values.is_empty() {
        return Err(Error::domain("report over no classes"));
    }
    Ok(ClassTable {
        metric: metric.to_string(),
        aggregate: values.values().sum::<f64>() / values.len() as f64,
        per_class: values.clone(),
    })
}

impl ClassTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes") + "\n"
    }

    /// `class,<metric>` rows followed by an `aggregate` row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("class,{}\n", self.metric);
        for (c, v) in &self.per_class {
            let _ = writeln!(out, "{},{v}", csv_field(c));
        }
        let _ = writeln!(out, "aggregate,{}", self.aggregate);
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl From<&ClassificationReport> for ClassTable {
    fn from(r: &ClassificationReport) -> Self {
        ClassTable {
            metric: "accuracy".into(),
            aggregate: r.accuracy,
            per_class: r.per_class.clone(),
        }
    }
}

impl From<&RetrievalReport> for ClassTable {
    fn from(r: &RetrievalReport) -> Self {
        ClassTable {
            metric: "p_at_n".into(),
            aggregate: r.aggregate,
            per_class: r.per_class.iter().map(|(c, v)| (c.clone(), v.p_at_n)).collect(),
        }
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::domain("mean of no values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Two-sided 95% normal-approximation interval of a binomial proportion.
pub fn binomial_interval(p: f64, trials: usize) -> (f64, f64) {
    let half = 1.96 * (p * (1.0 - p) / trials as f64).sqrt();
    (p - half, p + half)
}
