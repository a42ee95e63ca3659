//! Stage functions shared by the CLI and the end-to-end run:
//! segment, mine audio, mine images, pair, train, evaluate.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    read_json, read_string_map, write_bytes, write_json, AudioEmbedding, Captions, EmbeddingFile,
    ImageGrid, SupportSet, UnitCorpus, DEFAULT_VOCAB_SIZE,
};
use crate::error::{Error, Result};
use crate::evalkit::{
    classification_accuracy, retrieval_eval, sample_episodes, ClassificationReport, EpisodeMode,
    EvalCorpus, RetrievalReport, DEFAULT_EPISODES, DEFAULT_QUERIES_PER_CLASS,
};
use crate::pairgen::{build_pairs, support_pairs, PairConfig, PairSet};
use crate::qbe::{self, mining_precision, rank_for_class, search, ClassRanking, Normalization, Scoring};
use crate::scorer::{
    build_train_data, train_toy, unit_histogram, ProjectedScorer, ProjectionModel, TrainConfig,
    TrainOutcome,
};
use crate::segmenter::{self, segment, SegmentSequence};
use crate::synth::Splits;
use crate::visminer::{self, mine_images, Aggregation, ImageRanking};

/// Input files of a run. [`DataPaths::in_dir`] gives the layout that
/// `synth` writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub units: PathBuf,
    pub support: PathBuf,
    /// Optional: enables mining precision.
    pub captions: PathBuf,
    pub global: PathBuf,
    pub grids: PathBuf,
    pub image_labels: PathBuf,
    pub splits: PathBuf,
}

impl DataPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            units: dir.join("units.jsonl"),
            support: dir.join("support.json"),
            captions: dir.join("captions.json"),
            global: dir.join("global.bin"),
            grids: dir.join("grids.bin"),
            image_labels: dir.join("image_labels.json"),
            splits: dir.join("splits.json"),
        }
    }

    fn required(&self) -> [&Path; 6] {
        [
            &self.units,
            &self.support,
            &self.global,
            &self.grids,
            &self.image_labels,
            &self.splits,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub pairs: u64,
    pub train: u64,
    pub episodes: u64,
    pub retrieval: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            pairs: 17,
            train: 0,
            episodes: 7,
            retrieval: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Expected shots per class; checked against the support set when set.
    pub shots: Option<usize>,
    /// Classes per episode.
    pub l: usize,
    /// Ranking depth for both miners.
    pub n: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub scoring: Scoring,
    pub normalization: Normalization,
    pub aggregation: Aggregation,
    pub val_fraction: f64,
    pub shuffle_pairing: bool,
    /// Add the support pairs themselves to the training set.
    pub train_on_support: bool,
    pub episodes: usize,
    pub queries_per_class: usize,
    pub seeds: Seeds,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            shots: None,
            l: 5,
            n: qbe::DEFAULT_TOP_N,
            n_pos: 5,
            n_neg: 11,
            scoring: Scoring::default(),
            normalization: Normalization::default(),
            aggregation: Aggregation::default(),
            val_fraction: 0.1,
            shuffle_pairing: false,
            train_on_support: true,
            episodes: DEFAULT_EPISODES,
            queries_per_class: DEFAULT_QUERIES_PER_CLASS,
            seeds: Seeds::default(),
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// The desk-scale synthetic setting: K = 5, L = 5, n = 100.
    pub fn synthetic_preset() -> Self {
        Self {
            shots: Some(5),
            n: qbe::SMALL_POOL_TOP_N,
            episodes: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots == Some(0) {
            return Err(Error::validation("K must be at least 1"));
        }
        if self.l < 2 {
            return Err(Error::validation("L must be at least 2"));
        }
        if self.n == 0 {
            return Err(Error::validation("n must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::validation("validation fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    fn pair_config(&self) -> PairConfig {
        PairConfig {
            val_fraction: self.val_fraction,
            seed: self.seeds.pairs,
            shuffle_pairing: self.shuffle_pairing,
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            n_pos: self.n_pos,
            n_neg: self.n_neg,
            seed: self.seeds.train,
            ..self.train.clone()
        }
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

pub fn segment_all(units: &UnitCorpus) -> Result<Vec<SegmentSequence>> {
    units.sequences().iter().map(segment).collect()
}

/// QbE mining: every support word searches `collection`, and the K result
/// lists of each class are merged into one ranking of depth `n`.
pub fn mine_audio(
    support: &SupportSet,
    segments: &[SegmentSequence],
    collection_ids: &[String],
    n: usize,
    scoring: &Scoring,
    norm: Normalization,
) -> Result<Vec<ClassRanking>> {
    let by_id: BTreeMap<&str, &SegmentSequence> =
        segments.iter().map(|s| (s.utterance_id.as_str(), s)).collect();
    let lookup = |id: &str| {
        by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::validation(format!("no segments for utterance {id}")))
    };
    let collection: Vec<SegmentSequence> = collection_ids
        .iter()
        .map(|id| lookup(id).cloned())
        .collect::<Result<_>>()?;
    support.check_disjoint(collection_ids.iter().map(String::as_str))?;
    support
        .classes()
        .iter()
        .map(|class| {
            let results = support
                .entries_for(class)
                .map(|e| search(lookup(&e.utterance_id)?, &collection, scoring, norm))
                .collect::<Result<Vec<_>>>()?;
            rank_for_class(class, &results, n)
        })
        .collect()
}

/// Grid file plus `id -> labels` map.
pub fn load_grids(grids: &Path, labels: Option<&Path>) -> Result<Vec<ImageGrid>> {
    let mut out = EmbeddingFile::read(grids, true)?.to_grids()?;
    if let Some(path) = labels {
        let map = read_string_map(path)?;
        for g in &mut out {
            if let Some(l) = map.get(&g.image_id) {
                g.class_labels = l.iter().cloned().collect();
            }
        }
    }
    Ok(out)
}

/// Whole-utterance unit histograms, labelled with their class.
pub fn query_features(
    units: &UnitCorpus,
    queries: &BTreeMap<String, String>,
) -> Result<Vec<AudioEmbedding>> {
    queries
        .iter()
        .map(|(id, class)| {
            let seq = units
                .get(id)
                .ok_or_else(|| Error::validation(format!("query {id} not in unit corpus")))?;
            Ok(AudioEmbedding {
                id: id.clone(),
                vector: unit_histogram(&seq.frames, units.vocab_size())?,
                class_hint: Some(class.clone()),
            })
        })
        .collect()
}

/// Test queries and test images as an evaluation corpus.
pub fn eval_corpus(
    units: &UnitCorpus,
    grids: &[ImageGrid],
    splits: &Splits,
    support: &SupportSet,
) -> Result<EvalCorpus> {
    support.check_disjoint(
        splits
            .test_queries
            .keys()
            .chain(&splits.test_images)
            .map(String::as_str),
    )?;
    let wanted: BTreeSet<&str> = splits.test_images.iter().map(String::as_str).collect();
    let images: Vec<ImageGrid> = grids
        .iter()
        .filter(|g| wanted.contains(g.image_id.as_str()))
        .cloned()
        .collect();
    if images.len() != wanted.len() {
        return Err(Error::validation("some test images have no grid"));
    }
    EvalCorpus::new(query_features(units, &splits.test_queries)?, images)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub best_step: usize,
    pub best_accuracy: Option<f64>,
    pub stopped_early: bool,
    pub steps_run: usize,
    pub loss_history: Vec<f64>,
    pub validation_history: Vec<(usize, f64)>,
}

impl From<&TrainOutcome> for TrainLog {
    fn from(o: &TrainOutcome) -> Self {
        Self {
            best_step: o.best_step,
            best_accuracy: o.best_accuracy,
            stopped_early: o.stopped_early,
            steps_run: o.loss_history.len(),
            loss_history: o.loss_history.clone(),
            validation_history: o.validation_history.clone(),
        }
    }
}

/// Everything a run produced, in memory.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub audio_rankings: Vec<ClassRanking>,
    pub image_rankings: Vec<ImageRanking>,
    pub mining_precision: Option<BTreeMap<String, f64>>,
    pub pairs: PairSet,
    pub model: ProjectionModel,
    pub train_log: TrainLog,
    pub classification: ClassificationReport,
    pub retrieval: RetrievalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mining_precision: Option<f64>,
    pub train_pairs: usize,
    pub validation_pairs: usize,
    pub best_step: usize,
    pub validation_accuracy: Option<f64>,
    pub classification_accuracy: f64,
    pub retrieval_p_at_n: f64,
}

impl PipelineOutput {
    pub fn summary(&self) -> Summary {
        Summary {
            mining_precision: self
                .mining_precision
                .as_ref()
                .map(|m| m.values().sum::<f64>() / m.len() as f64),
            train_pairs: self.pairs.train.len(),
            validation_pairs: self.pairs.validation.len(),
            best_step: self.train_log.best_step,
            validation_accuracy: self.train_log.best_accuracy,
            classification_accuracy: self.classification.accuracy,
            retrieval_p_at_n: self.retrieval.aggregate,
        }
    }
}

/// Output file names inside the run directory.
pub mod files {
    pub const SEGMENTS: &str = "segments.jsonl";
    pub const RANKED_AUDIO: &str = "ranked_audio.json";
    pub const RANKED_IMAGES: &str = "ranked_images.json";
    pub const MINING: &str = "mining_precision.json";
    pub const PAIRS: &str = "pairs.json";
    pub const MODEL: &str = "model.bin";
    pub const TRAIN_LOG: &str = "train_log.json";
    pub const CLASSIFY: &str = "classify.json";
    pub const RETRIEVE: &str = "retrieve.json";
    pub const SUMMARY: &str = "summary.json";
}

/// Runs every stage in order. When `out_dir` is given each intermediate is
/// written there as soon as its stage finishes.
pub fn run_pipeline(
    data: &DataPaths,
    cfg: &PipelineConfig,
    out_dir: Option<&Path>,
) -> Result<PipelineOutput> {
    stage("config", cfg.validate())?;
    for p in data.required() {
        if !p.exists() {
            return Err(Error::Stage {
                stage: "config",
                source: Box::new(Error::validation(format!(
                    "input {} does not exist",
                    p.display()
                ))),
            });
        }
    }
    let save = |name: &str, bytes: Vec<u8>| -> Result<()> {
        match out_dir {
            Some(dir) => write_bytes(&dir.join(name), &bytes),
            None => Ok(()),
        }
    };
    fn save_json<T: Serialize>(out_dir: Option<&Path>, name: &str, value: &T) -> Result<()> {
        match out_dir {
            Some(dir) => write_json(&dir.join(name), value),
            None => Ok(()),
        }
    }

    let (units, support, splits) = stage("load", (|| {
        let units = UnitCorpus::load(&data.units, DEFAULT_VOCAB_SIZE)?;
        let support = SupportSet::load(&data.support)?;
        support.resolve_units(&units)?;
        if let Some(k) = cfg.shots {
            if support.shots != k {
                return Err(Error::validation(format!(
                    "support set has {} shots, config expects {k}",
                    support.shots
                )));
            }
        }
        let splits: Splits = read_json(&data.splits)?;
        Ok((units, support, splits))
    })())?;

    let segments = stage("segment", (|| {
        let segs = segment_all(&units)?;
        save(files::SEGMENTS, segmenter::to_jsonl(&segs).into_bytes())?;
        Ok(segs)
    })())?;

    let (audio_rankings, precision) = stage("mine-audio", (|| {
        let rankings = mine_audio(
            &support,
            &segments,
            &splits.mining_utterances,
            cfg.n,
            &cfg.scoring,
            cfg.normalization,
        )?;
        save_json(out_dir, files::RANKED_AUDIO, &qbe::rankings_to_map(&rankings))?;
        let precision = if data.captions.exists() {
            let captions = Captions::load(&data.captions)?;
            let p: BTreeMap<String, f64> = rankings
                .iter()
                .map(|r| Ok((r.class_label.clone(), mining_precision(r, &captions, &r.class_label)?)))
                .collect::<Result<_>>()?;
            save_json(out_dir, files::MINING, &p)?;
            Some(p)
        } else {
            None
        };
        Ok((rankings, precision))
    })())?;

    let image_rankings = stage("mine-image", (|| {
        let store = EmbeddingFile::read(&data.global, false)?.to_global();
        support.resolve_images(store.iter().map(|e| e.image_id.as_str()))?;
        let rankings = mine_images(&support, &store, cfg.n, cfg.aggregation)?;
        save_json(out_dir, files::RANKED_IMAGES, &visminer::rankings_to_map(&rankings))?;
        Ok(rankings)
    })())?;

    let pairs = stage("build-pairs", (|| {
        let mut pairs = build_pairs(&audio_rankings, &image_rankings, &cfg.pair_config())?;
        if cfg.train_on_support {
            pairs.train.extend(support_pairs(&support));
        }
        save_json(out_dir, files::PAIRS, &pairs)?;
        Ok(pairs)
    })())?;

    let grids = stage("load", load_grids(&data.grids, Some(&data.image_labels)))?;

    let (model, train_log) = stage("train-toy", (|| {
        let tc = cfg.train_config();
        let td = build_train_data(&pairs, &units, &grids, &splits.background_images, tc.seed)?;
        let outcome = train_toy(&td, &tc)?;
        if let Some(dir) = out_dir {
            outcome.model.to_embedding_file().write(dir.join(files::MODEL))?;
        }
        let log = TrainLog::from(&outcome);
        save_json(out_dir, files::TRAIN_LOG, &log)?;
        Ok((outcome.model, log))
    })())?;

    let corpus = stage("evaluate", eval_corpus(&units, &grids, &splits, &support))?;
    let scorer = ProjectedScorer {
        model: &model,
        opts: cfg.train.loss,
    };

    let classification = stage("eval-classify", (|| {
        let episodes = sample_episodes(
            &corpus,
            cfg.l,
            cfg.episodes,
            cfg.seeds.episodes,
            EpisodeMode::Classification,
        )?;
        let report = classification_accuracy(&corpus, &episodes, &scorer)?;
        save_json(out_dir, files::CLASSIFY, &report)?;
        Ok(report)
    })())?;

    let retrieval = stage("eval-retrieve", (|| {
        let report = retrieval_eval(&corpus, &scorer, cfg.queries_per_class, cfg.seeds.retrieval)?;
        save_json(out_dir, files::RETRIEVE, &report)?;
        Ok(report)
    })())?;

    let out = PipelineOutput {
        audio_rankings,
        image_rankings,
        mining_precision: precision,
        pairs,
        model,
        train_log,
        classification,
        retrieval,
    };
    stage("summary", save_json(out_dir, files::SUMMARY, &out.summary()))?;
    Ok(out)
}

/// Runs `f` on a pool of `threads` workers (all cores when `None`).
#[cfg(feature = "parallel")]
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    let pool = b
        .build()
        .map_err(|e| Error::domain(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<T: Send>(_threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    Ok(f())
}
