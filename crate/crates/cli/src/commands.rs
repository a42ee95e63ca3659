use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::Value;

use wordmine::corpus::{
    read_json, write_bytes, write_json, write_pgm, BinaryMask, Captions, EmbeddingFile, SupportSet,
    UnitCorpus, DEFAULT_VOCAB_SIZE,
};
use wordmine::evalkit::{
    classification_accuracy, retrieval_eval, sample_episodes, ClassTable, EpisodeMode,
};
use wordmine::localizer::{binarize, iou, saliency, to_gray};
use wordmine::pairgen::{build_pairs, support_pairs, PairConfig, PairSet};
use wordmine::pipeline::{self, eval_corpus, load_grids, run_pipeline, DataPaths, PipelineConfig};
use wordmine::qbe::{self, mining_precision, Normalization, Scoring};
use wordmine::scorer::{
    build_train_data, similarity_with, train_toy, ClampMode, LossOptions, ProjectedScorer,
    ProjectionModel, TrainConfig,
};
use wordmine::segmenter;
use wordmine::synth::{generate_synthetic, SynthConfig};
use wordmine::visminer::{self, mine_images, Aggregation};

use crate::{Agg, Clamp, Command, DataArgs, Format, Norm, Preset};

impl DataArgs {
    fn paths(&self) -> Result<DataPaths> {
        let base = match &self.data {
            Some(dir) => DataPaths::in_dir(dir),
            None => {
                let missing = [
                    ("--units", &self.units),
                    ("--support", &self.support),
                    ("--grids", &self.grids),
                    ("--labels", &self.labels),
                    ("--splits", &self.splits),
                ]
                .iter()
                .filter(|(_, p)| p.is_none())
                .map(|(f, _)| *f)
                .collect::<Vec<_>>();
                if !missing.is_empty() {
                    return Err(wordmine::Error::Validation(format!(
                        "without --data these inputs are required: {}",
                        missing.join(", ")
                    ))
                    .into());
                }
                DataPaths::in_dir(Path::new(""))
            }
        };
        let pick = |o: &Option<PathBuf>, d: PathBuf| o.clone().unwrap_or(d);
        Ok(DataPaths {
            units: pick(&self.units, base.units),
            support: pick(&self.support, base.support),
            grids: pick(&self.grids, base.grids),
            image_labels: pick(&self.labels, base.image_labels),
            splits: pick(&self.splits, base.splits),
            ..base
        })
    }
}

/// A JSON list of IDs, or an object holding such a list under `key`.
fn read_id_list(path: &Path, key: &str) -> Result<Vec<String>> {
    let v: Value = read_json(path)?;
    let list = match &v {
        Value::Object(map) => map
            .get(key)
            .ok_or_else(|| validation(format!("{}: no {key:?} list", path.display())))?,
        other => other,
    };
    Ok(serde_json::from_value(list.clone()).map_err(wordmine::Error::from)?)
}

fn validation(msg: impl Into<String>) -> wordmine::Error {
    wordmine::Error::Validation(msg.into())
}

fn emit(table: &ClassTable, format: Format, out: Option<&Path>) -> Result<()> {
    let text = match format {
        Format::Json => table.to_json(),
        Format::Csv => table.to_csv(),
    };
    match out {
        Some(p) => write_bytes(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn pick(ids: &[String], want: Option<&str>, what: &str) -> Result<usize> {
    match want {
        Some(id) => ids
            .iter()
            .position(|x| x == id)
            .ok_or_else(|| validation(format!("no {what} with id {id}")).into()),
        None if ids.is_empty() => Err(validation(format!("{what} file is empty")).into()),
        None => Ok(0),
    }
}

fn load_model(path: &Path) -> Result<ProjectionModel> {
    Ok(ProjectionModel::from_embedding_file(&EmbeddingFile::read(path, false)?)?)
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Segment { units, out, vocab } => {
            let corpus = UnitCorpus::load(&units, vocab)?;
            let segs = pipeline::segment_all(&corpus)?;
            write_bytes(&out, segmenter::to_jsonl(&segs).as_bytes())?;
            eprintln!("segmented {} utterances", segs.len());
        }

        Command::MineAudio {
            support,
            units,
            segments,
            n,
            scoring,
            normalization,
            collection,
            captions,
            out,
        } => {
            let scoring: Scoring = scoring.parse()?;
            let norm = match normalization {
                Norm::QueryLength => Normalization::QueryLength,
                Norm::None => Normalization::None,
            };
            let support = SupportSet::load(&support)?;
            let corpus = UnitCorpus::load(&units, DEFAULT_VOCAB_SIZE)?;
            support.resolve_units(&corpus)?;
            let text = fs::read_to_string(&segments)
                .map_err(|e| wordmine::Error::Io { path: segments.clone(), source: e })?;
            let segs = segmenter::parse_jsonl(&text, &segments.display().to_string())?;
            let ids = match collection {
                Some(p) => read_id_list(&p, "mining_utterances")?,
                None => {
                    let skip: BTreeSet<&str> = support.utterance_ids();
                    segs.iter()
                        .map(|s| s.utterance_id.clone())
                        .filter(|id| !skip.contains(id.as_str()))
                        .collect()
                }
            };
            let rankings = pipeline::mine_audio(&support, &segs, &ids, n, &scoring, norm)?;
            write_json(&out, &qbe::rankings_to_map(&rankings))?;
            if let Some(p) = captions {
                let caps = Captions::load(&p)?;
                let mut table = BTreeMap::new();
                for r in &rankings {
                    table.insert(r.class_label.clone(), mining_precision(r, &caps, &r.class_label)?);
                }
                let t = wordmine::evalkit::per_class_report("mining_precision", &table)?;
                print!("{}", t.to_json());
            }
        }

        Command::MineImage {
            support,
            pool,
            n,
            aggregation,
            out,
        } => {
            let support = SupportSet::load(&support)?;
            let store = EmbeddingFile::read(&pool, false)?.to_global();
            support.resolve_images(store.iter().map(|e| e.image_id.as_str()))?;
            let agg = match aggregation {
                Agg::Max => Aggregation::Max,
                Agg::Mean => Aggregation::Mean,
            };
            let rankings = mine_images(&support, &store, n, agg)?;
            write_json(&out, &visminer::rankings_to_map(&rankings))?;
        }

        Command::BuildPairs {
            audio,
            images,
            val_frac,
            seed,
            shuffle,
            support,
            out,
        } => {
            let audio = qbe::rankings_from_map(read_json(&audio)?);
            let images = visminer::rankings_from_map(read_json(&images)?);
            let cfg = PairConfig {
                val_fraction: val_frac,
                seed,
                shuffle_pairing: shuffle,
            };
            let mut pairs = build_pairs(&audio, &images, &cfg)?;
            if let Some(p) = support {
                pairs.train.extend(support_pairs(&SupportSet::load(&p)?));
            }
            write_json(&out, &pairs)?;
            eprintln!("{} train, {} validation pairs", pairs.train.len(), pairs.validation.len());
        }

        Command::Score {
            audio,
            grid,
            audio_id,
            image_id,
            clamp,
            format,
        } => {
            let audio = EmbeddingFile::read(&audio, false)?.to_audio();
            let grids = EmbeddingFile::read(&grid, true)?.to_grids()?;
            let clamp = match clamp {
                Clamp::Hard => ClampMode::Hard,
                Clamp::Sigmoid => ClampMode::Sigmoid,
            };
            #[derive(Serialize)]
            struct Row<'a> {
                audio_id: &'a str,
                image_id: &'a str,
                raw: f64,
                clamped: f64,
                argmax_cell: usize,
            }
            let mut rows = Vec::new();
            for a in audio.iter().filter(|a| audio_id.as_ref().is_none_or(|x| *x == a.id)) {
                for g in grids.iter().filter(|g| image_id.as_ref().is_none_or(|x| *x == g.image_id)) {
                    let s = similarity_with(&a.vector, g, clamp)?;
                    let att = wordmine::scorer::attention(&a.vector, g)?;
                    rows.push(Row {
                        audio_id: &a.id,
                        image_id: &g.image_id,
                        raw: s.raw,
                        clamped: s.clamped,
                        argmax_cell: att.argmax,
                    });
                }
            }
            if rows.is_empty() {
                bail!(validation("no audio/image pair matched the given ids"));
            }
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&rows)?),
                Format::Csv => {
                    println!("audio_id,image_id,raw,clamped,argmax_cell");
                    for r in &rows {
                        println!("{},{},{},{},{}", r.audio_id, r.image_id, r.raw, r.clamped, r.argmax_cell);
                    }
                }
            }
        }

        Command::TrainToy {
            pairs,
            config,
            data,
            out,
            log,
        } => {
            let cfg: TrainConfig = match config {
                Some(p) => read_json(&p)?,
                None => TrainConfig::default(),
            };
            let paths = data.paths()?;
            let pairs: PairSet = read_json(&pairs)?;
            let units = UnitCorpus::load(&paths.units, DEFAULT_VOCAB_SIZE)?;
            let grids = load_grids(&paths.grids, Some(&paths.image_labels))?;
            let background = read_id_list(&paths.splits, "background_images")?;
            let td = build_train_data(&pairs, &units, &grids, &background, cfg.seed)?;
            let outcome = train_toy(&td, &cfg)?;
            outcome.model.to_embedding_file().write(&out)?;
            if let Some(p) = log {
                write_json(&p, &pipeline::TrainLog::from(&outcome))?;
            }
            eprintln!(
                "best step {} validation accuracy {}",
                outcome.best_step,
                outcome.best_accuracy.map_or("n/a".into(), |a| format!("{a:.3}"))
            );
        }

        Command::EvalClassify {
            model,
            data,
            episodes,
            l,
            seed,
            multi_label,
            format,
            out,
        } => {
            let model = load_model(&model)?;
            let corpus = load_eval(&data)?;
            let mode = if multi_label {
                EpisodeMode::MultiLabel
            } else {
                EpisodeMode::Classification
            };
            let eps = sample_episodes(&corpus, l, episodes, seed, mode)?;
            let scorer = ProjectedScorer {
                model: &model,
                opts: LossOptions::default(),
            };
            let report = classification_accuracy(&corpus, &eps, &scorer)?;
            emit(&ClassTable::from(&report), format, out.as_deref())?;
        }

        Command::EvalRetrieve {
            model,
            data,
            queries_per_class,
            seed,
            format,
            out,
        } => {
            let model = load_model(&model)?;
            let corpus = load_eval(&data)?;
            let scorer = ProjectedScorer {
                model: &model,
                opts: LossOptions::default(),
            };
            let report = retrieval_eval(&corpus, &scorer, queries_per_class, seed)?;
            emit(&ClassTable::from(&report), format, out.as_deref())?;
        }

        Command::Localize {
            grid,
            audio,
            mask,
            quantile,
            audio_id,
            image_id,
            saliency: saliency_out,
        } => {
            let a = EmbeddingFile::read(&audio, false)?.to_audio();
            let g = EmbeddingFile::read(&grid, true)?.to_grids()?;
            let ai = pick(&a.iter().map(|x| x.id.clone()).collect::<Vec<_>>(), audio_id.as_deref(), "audio")?;
            let gi = pick(&g.iter().map(|x| x.image_id.clone()).collect::<Vec<_>>(), image_id.as_deref(), "image")?;
            let truth = BinaryMask::read_pgm(&mask)?;
            let map = saliency(&a[ai].vector, &g[gi], truth.height, truth.width)?;
            let pred = binarize(&map, quantile)?;
            println!("{}", iou(&pred, &truth)?);
            if let Some(p) = saliency_out {
                write_pgm(&p, map.width, map.height, &to_gray(&map))?;
            }
        }

        Command::Synth {
            out,
            config,
            seed,
            noise,
        } => {
            let mut cfg: SynthConfig = match config {
                Some(p) => read_json(&p)?,
                None => SynthConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(p) = noise {
                cfg.noise = p;
            }
            let bundle = generate_synthetic(&cfg)?;
            bundle.write(&out)?;
            eprintln!("wrote synthetic corpus to {}", out.display());
        }

        Command::Pipeline {
            data,
            config,
            preset,
            out,
            shots,
            l,
            n,
            n_pos,
            n_neg,
            scoring,
            val_frac,
            steps,
            episodes,
            queries_per_class,
            pair_seed,
            train_seed,
            episode_seed,
            retrieval_seed,
        } => {
            let base = match preset {
                Preset::Default => PipelineConfig::default(),
                Preset::Synthetic => PipelineConfig::synthetic_preset(),
            };
            let mut cfg = match config {
                Some(p) => overlay(&base, &read_json(&p)?)?,
                None => base,
            };
            // flags win over the file
            macro_rules! set {
                ($flag:expr, $field:expr) => {
                    if let Some(v) = $flag {
                        $field = v;
                    }
                };
            }
            if shots.is_some() {
                cfg.shots = shots;
            }
            set!(l, cfg.l);
            set!(n, cfg.n);
            set!(n_pos, cfg.n_pos);
            set!(n_neg, cfg.n_neg);
            set!(val_frac, cfg.val_fraction);
            set!(steps, cfg.train.steps);
            set!(episodes, cfg.episodes);
            set!(queries_per_class, cfg.queries_per_class);
            set!(pair_seed, cfg.seeds.pairs);
            set!(train_seed, cfg.seeds.train);
            set!(episode_seed, cfg.seeds.episodes);
            set!(retrieval_seed, cfg.seeds.retrieval);
            if let Some(s) = scoring {
                cfg.scoring = s.parse()?;
            }
            let paths = data.paths()?;
            fs::create_dir_all(&out)
                .map_err(|e| wordmine::Error::Io { path: out.clone(), source: e })?;
            write_json(&out.join("config.json"), &cfg)?;
            let result = run_pipeline(&paths, &cfg, Some(&out))?;
            println!("{}", serde_json::to_string_pretty(&result.summary())?);
        }
    }
    Ok(())
}

fn load_eval(data: &DataArgs) -> Result<wordmine::evalkit::EvalCorpus> {
    let paths = data.paths()?;
    let units = UnitCorpus::load(&paths.units, DEFAULT_VOCAB_SIZE)?;
    let grids = load_grids(&paths.grids, Some(&paths.image_labels))?;
    let splits = wordmine::synth::Splits::load(&paths.splits)?;
    let support = if paths.support.exists() || data.support.is_some() {
        SupportSet::load(&paths.support)?
    } else {
        SupportSet {
            shots: 1,
            entries: Vec::new(),
        }
    };
    Ok(eval_corpus(&units, &grids, &splits, &support)?)
}

/// Applies the keys of `patch` over `base`, recursing into objects.
fn overlay(base: &PipelineConfig, patch: &Value) -> Result<PipelineConfig> {
    fn merge(a: &mut Value, b: &Value) {
        match (a, b) {
            (Value::Object(a), Value::Object(b)) => {
                for (k, v) in b {
                    merge(a.entry(k.clone()).or_insert(Value::Null), v);
                }
            }
            (a, b) => *a = b.clone(),
        }
    }
    if !patch.is_object() {
        return Err(anyhow!(validation("pipeline config must be a JSON object")));
    }
    let mut v = serde_json::to_value(base)?;
    merge(&mut v, patch);
    serde_json::from_value(v)
        .map_err(wordmine::Error::from)
        .context("pipeline config")
}
