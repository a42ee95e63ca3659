//! Synthetic corpora with known ground truth.
//!
//! Every word class gets a template string of unit IDs drawn from its own
//! slice of the vocabulary. Utterances are background units with noisy
//! copies of the templates planted inside; images are grids of background
//! cells with class-signature cells planted at random positions, and global
//! image embeddings are the sum of class centroids plus noise. Imposter
//! classes share the same construction and supply background images.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    write_json, BinaryMask, ClusterId, EmbeddingFile, GlobalImageEmbedding, ImageGrid,
    SupportEntry, SupportSet, UnitCorpus, UnitSequence, DEFAULT_FRAME_RATE_HZ,
};
use crate::error::{Error, Result};
use crate::pairgen::derive_seed;
use crate::pipeline::DataPaths;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub classes: Vec<String>,
    /// Classes that never appear in the support set.
    pub imposters: Vec<String>,
    pub vocab_size: u32,
    pub units_per_word: usize,
    /// Inclusive range of frames per unit.
    pub min_frames: usize,
    pub max_frames: usize,
    /// Probability that a template unit is replaced by a background unit.
    pub noise: f64,
    pub shots: usize,
    pub mining_utterances: usize,
    pub mining_images: usize,
    pub test_queries_per_class: usize,
    pub test_images_per_class: usize,
    pub test_imposter_images: usize,
    pub background_images: usize,
    pub grid_size: usize,
    pub image_dim: usize,
    pub global_dim: usize,
    /// Per-component standard deviation of grid cell noise.
    pub cell_noise: f64,
    /// Per-component standard deviation of global embedding noise.
    pub global_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        Self {
            classes: names(&["broccoli", "fire hydrant", "kite", "sheep", "zebra"]),
            imposters: names(&["bus", "clock", "pizza", "train", "umbrella"]),
            vocab_size: 100,
            units_per_word: 6,
            min_frames: 2,
            max_frames: 5,
            noise: 0.1,
            shots: 5,
            mining_utterances: 300,
            mining_images: 300,
            test_queries_per_class: 40,
            test_images_per_class: 20,
            test_imposter_images: 50,
            background_images: 100,
            grid_size: 7,
            image_dim: 16,
            global_dim: 16,
            cell_noise: 0.3,
            global_noise: 0.15,
            seed: 1,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::validation(m));
        if !(0.0..1.0).contains(&self.noise) {
            return fail(format!("noise {} outside [0, 1)", self.noise));
        }
        if self.classes.len() < 2 {
            return fail("need at least two classes".into());
        }
        let mut names: Vec<&String> = self.classes.iter().chain(&self.imposters).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return fail("class names must be distinct".into());
        }
        let words = self.classes.len() + self.imposters.len();
        if (self.vocab_size as usize) < words * self.units_per_word + 2 {
            return fail(format!(
                "vocabulary of {} cannot hold {words} words of {} units plus background",
                self.vocab_size, self.units_per_word
            ));
        }
        if self.units_per_word == 0 || self.min_frames == 0 || self.min_frames > self.max_frames {
            return fail("units per word and frame range must be positive".into());
        }
        if self.grid_size == 0 || self.image_dim == 0 || self.global_dim == 0 || self.shots == 0 {
            return fail("grid size, dimensions and shots must be positive".into());
        }
        if self.grid_size * self.grid_size < 3 * 2 {
            return fail("grid too small to plant objects".into());
        }
        if (self.background_images > 0 || self.test_imposter_images > 0) && self.imposters.is_empty() {
            return fail("background and imposter images need imposter classes".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedWord {
    #[serde(rename = "class")]
    pub class_label: String,
    /// Half-open frame span.
    pub span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedObject {
    #[serde(rename = "class")]
    pub class_label: String,
    /// Row-major grid cells holding the object's signature.
    pub cells: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Planting {
    pub utterances: BTreeMap<String, Vec<PlantedWord>>,
    pub images: BTreeMap<String, Vec<PlantedObject>>,
}

impl Planting {
    pub fn utterance_has(&self, id: &str, class: &str) -> bool {
        self.utterances
            .get(id)
            .is_some_and(|w| w.iter().any(|p| p.class_label == class))
    }
}

/// Which IDs belong to which role.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub mining_utterances: Vec<String>,
    pub mining_images: Vec<String>,
    pub background_images: Vec<String>,
    /// Isolated test words: utterance ID -> class.
    pub test_queries: BTreeMap<String, String>,
    pub test_images: Vec<String>,
}

impl Splits {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        crate::corpus::read_json(path.as_ref())
    }
}

#[derive(Debug, Clone)]
pub struct SynthBundle {
    pub config: SynthConfig,
    pub units: UnitCorpus,
    pub captions: BTreeMap<String, Vec<String>>,
    pub support: SupportSet,
    /// Support and mining images.
    pub global: Vec<GlobalImageEmbedding>,
    /// Every image, labelled.
    pub grids: Vec<ImageGrid>,
    pub splits: Splits,
    pub planting: Planting,
}

fn f32_round(x: f64) -> f64 {
    x as f32 as f64
}

fn gaussian(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

fn unit_vector(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let v = gaussian(rng, n, 1.0);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

struct Words<'a> {
    cfg: &'a SynthConfig,
    /// Template per class, classes first, then imposters.
    templates: Vec<Vec<ClusterId>>,
    background: Vec<ClusterId>,
}

impl Words<'_> {
    fn push_unit(&self, frames: &mut Vec<ClusterId>, unit: ClusterId, rng: &mut impl Rng) {
        let n = rng.random_range(self.cfg.min_frames..=self.cfg.max_frames);
        frames.extend(std::iter::repeat_n(unit, n));
    }

    fn background_unit(&self, prev: Option<ClusterId>, rng: &mut impl Rng) -> ClusterId {
        loop {
            let u = self.background[rng.random_range(0..self.background.len())];
            if Some(u) != prev {
                return u;
            }
        }
    }

    fn word(&self, frames: &mut Vec<ClusterId>, class: usize, rng: &mut impl Rng) -> (usize, usize) {
        let start = frames.len();
        for &t in &self.templates[class] {
            let unit = if rng.random::<f64>() < self.cfg.noise {
                self.background_unit(frames.last().copied(), rng)
            } else {
                t
            };
            self.push_unit(frames, unit, rng);
        }
        (start, frames.len())
    }

    fn filler(&self, frames: &mut Vec<ClusterId>, rng: &mut impl Rng) {
        for _ in 0..rng.random_range(2..=5) {
            let u = self.background_unit(frames.last().copied(), rng);
            self.push_unit(frames, u, rng);
        }
    }
}

struct Images<'a> {
    cfg: &'a SynthConfig,
    signatures: Vec<Vec<f64>>,
    centroids: Vec<Vec<f64>>,
    bias: Vec<f64>,
    names: Vec<&'a str>,
}

impl Images<'_> {
    fn grid(&self, id: &str, labels: &[usize], rng: &mut impl Rng) -> Result<(ImageGrid, Vec<PlantedObject>)> {
        let (g, d) = (self.cfg.grid_size, self.cfg.image_dim);
        let mut cells: Vec<f64> = Vec::with_capacity(g * g * d);
        for _ in 0..g * g {
            let noise = gaussian(rng, d, self.cfg.cell_noise);
            cells.extend(self.bias.iter().zip(noise).map(|(b, n)| b + n));
        }
        let mut free: Vec<usize> = (0..g * g).collect();
        free.shuffle(rng);
        let mut objects = Vec::new();
        for &c in labels {
            // one or two cells per object
            let take = rng.random_range(1..=2).min(free.len());
            let planted: Vec<usize> = free.drain(..take).collect();
            for &cell in &planted {
                let noise = gaussian(rng, d, self.cfg.cell_noise);
                for (k, n) in noise.into_iter().enumerate() {
                    cells[cell * d + k] = self.signatures[c][k] + n;
                }
            }
            let mut sorted = planted;
            sorted.sort_unstable();
            objects.push(PlantedObject {
                class_label: self.names[c].to_string(),
                cells: sorted,
            });
        }
        let cells = cells.into_iter().map(f32_round).collect();
        let grid = ImageGrid::new(id, g, d, cells)?
            .with_labels(labels.iter().map(|&c| self.names[c]));
        Ok((grid, objects))
    }

    fn global(&self, id: &str, labels: &[usize], rng: &mut impl Rng) -> GlobalImageEmbedding {
        let mut v = gaussian(rng, self.cfg.global_dim, self.cfg.global_noise);
        for &c in labels {
            for (x, m) in v.iter_mut().zip(&self.centroids[c]) {
                *x += m;
            }
        }
        GlobalImageEmbedding {
            image_id: id.to_string(),
            vector: v.into_iter().map(f32_round).collect(),
        }
    }
}

const FILLER: [&str; 6] = ["a", "the", "photo", "of", "near", "with"];

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthBundle> {
    cfg.validate()?;
    let n_classes = cfg.classes.len();
    let n_words = n_classes + cfg.imposters.len();
    let names: Vec<&str> = cfg.classes.iter().chain(&cfg.imposters).map(String::as_str).collect();
    let stream = |tag: u64| ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[tag]));

    let mut vocab: Vec<ClusterId> = (0..cfg.vocab_size).collect();
    vocab.shuffle(&mut stream(0));
    let templates = vocab
        .chunks(cfg.units_per_word)
        .take(n_words)
        .map(<[ClusterId]>::to_vec)
        .collect();
    let words = Words {
        cfg,
        templates,
        background: vocab[n_words * cfg.units_per_word..].to_vec(),
    };

    let mut rng = stream(1);
    let images = Images {
        cfg,
        signatures: (0..n_words)
            .map(|_| unit_vector(&mut rng, cfg.image_dim).iter().map(|x| 3.0 * x).collect())
            .collect(),
        centroids: (0..n_words).map(|_| unit_vector(&mut rng, cfg.global_dim)).collect(),
        bias: unit_vector(&mut rng, cfg.image_dim),
        names: names.clone(),
    };

    let mut seqs = Vec::new();
    let mut captions = BTreeMap::new();
    let mut planting = Planting::default();
    let mut splits = Splits::default();
    let mut global = Vec::new();
    let mut grids = Vec::new();
    let mut entries = Vec::new();

    let mut add_image = |id: String,
                         labels: &[usize],
                         with_global: bool,
                         rng: &mut ChaCha8Rng,
                         grids: &mut Vec<ImageGrid>,
                         planting: &mut Planting|
     -> Result<String> {
        let (grid, objects) = images.grid(&id, labels, rng)?;
        if with_global {
            global.push(images.global(&id, labels, rng));
        }
        grids.push(grid);
        planting.images.insert(id.clone(), objects);
        Ok(id)
    };

    // support set: isolated words with single-object images
    let mut rng = stream(2);
    for (c, &name) in names.iter().enumerate().take(n_classes) {
        for k in 0..cfg.shots {
            let uid = format!("support_{c}_{k}");
            let mut frames = Vec::new();
            let span = words.word(&mut frames, c, &mut rng);
            planting.utterances.insert(
                uid.clone(),
                vec![PlantedWord {
                    class_label: name.into(),
                    span,
                }],
            );
            seqs.push(UnitSequence::new(uid.clone(), frames));
            let iid = add_image(format!("support_img_{c}_{k}"), &[c], true, &mut rng, &mut grids, &mut planting)?;
            entries.push(SupportEntry {
                class_label: name.into(),
                audio_id: uid.clone(),
                utterance_id: uid,
                image_id: iid,
            });
        }
    }

    let class_pairs: Vec<(usize, usize)> = (0..n_classes)
        .flat_map(|a| (a + 1..n_classes).map(move |b| (a, b)))
        .collect();
    let imposter = |rng: &mut ChaCha8Rng| n_classes + rng.random_range(0..cfg.imposters.len());

    // mining utterances: two classes each, cycling over class pairs
    let mut rng = stream(3);
    for i in 0..cfg.mining_utterances {
        let (a, b) = class_pairs[i % class_pairs.len()];
        let mut order = vec![a, b];
        order.shuffle(&mut rng);
        if !cfg.imposters.is_empty() && rng.random::<bool>() {
            order.push(imposter(&mut rng));
        }
        let uid = format!("mine_utt_{i:04}");
        let mut frames = Vec::new();
        let mut planted = Vec::new();
        let mut caption: Vec<&str> = vec![FILLER[rng.random_range(0..2)], FILLER[2], FILLER[3]];
        for &w in &order {
            words.filler(&mut frames, &mut rng);
            let span = words.word(&mut frames, w, &mut rng);
            planted.push(PlantedWord {
                class_label: names[w].into(),
                span,
            });
            caption.push(FILLER[rng.random_range(0..2)]);
            caption.push(names[w]);
            caption.push(FILLER[4 + rng.random_range(0..2)]);
        }
        words.filler(&mut frames, &mut rng);
        caption.pop();
        captions.insert(uid.clone(), vec![caption.join(" ")]);
        planting.utterances.insert(uid.clone(), planted);
        seqs.push(UnitSequence::new(uid.clone(), frames));
        splits.mining_utterances.push(uid);
    }

    // mining images: two classes each, sometimes with an imposter
    let mut rng = stream(4);
    for i in 0..cfg.mining_images {
        let (a, b) = class_pairs[i % class_pairs.len()];
        let mut labels = vec![a, b];
        if !cfg.imposters.is_empty() && rng.random::<f64>() < 0.3 {
            labels.push(imposter(&mut rng));
        }
        let id = add_image(format!("mine_img_{i:04}"), &labels, true, &mut rng, &mut grids, &mut planting)?;
        splits.mining_images.push(id);
    }

    let imposter_labels = |rng: &mut ChaCha8Rng| {
        let first = imposter(rng);
        let second = imposter(rng);
        if second == first || rng.random::<bool>() {
            vec![first]
        } else {
            vec![first, second]
        }
    };

    let mut rng = stream(5);
    for i in 0..cfg.background_images {
        let labels = imposter_labels(&mut rng);
        let id = add_image(format!("bg_img_{i:04}"), &labels, false, &mut rng, &mut grids, &mut planting)?;
        splits.background_images.push(id);
    }

    // held-out isolated words and images
    let mut rng = stream(6);
    for (c, &name) in names.iter().enumerate().take(n_classes) {
        for k in 0..cfg.test_queries_per_class {
            let uid = format!("test_{c}_{k:03}");
            let mut frames = Vec::new();
            let span = words.word(&mut frames, c, &mut rng);
            planting.utterances.insert(
                uid.clone(),
                vec![PlantedWord {
                    class_label: name.into(),
                    span,
                }],
            );
            seqs.push(UnitSequence::new(uid.clone(), frames));
            splits.test_queries.insert(uid, name.into());
        }
        for k in 0..cfg.test_images_per_class {
            let id = add_image(format!("test_img_{c}_{k:03}"), &[c], false, &mut rng, &mut grids, &mut planting)?;
            splits.test_images.push(id);
        }
    }
    for i in 0..cfg.test_imposter_images {
        let labels = imposter_labels(&mut rng);
        let id = add_image(format!("test_img_x_{i:03}"), &labels, false, &mut rng, &mut grids, &mut planting)?;
        splits.test_images.push(id);
    }

    Ok(SynthBundle {
        config: cfg.clone(),
        units: UnitCorpus::new(cfg.vocab_size, Some(DEFAULT_FRAME_RATE_HZ), seqs)?,
        captions,
        support: SupportSet::new(cfg.shots, entries)?,
        global,
        grids,
        splits,
        planting,
    })
}

impl SynthBundle {
    pub fn image_labels(&self) -> BTreeMap<String, Vec<String>> {
        self.grids
            .iter()
            .map(|g| (g.image_id.clone(), g.class_labels.iter().cloned().collect()))
            .collect()
    }

    /// Writes every file of the standard data layout into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<DataPaths> {
        let paths = DataPaths::in_dir(dir.as_ref());
        self.units.write(&paths.units)?;
        self.support.write(&paths.support)?;
        write_json(&paths.captions, &self.captions)?;
        EmbeddingFile::from_global(&self.global)?.write(&paths.global)?;
        EmbeddingFile::from_grids(&self.grids)?.write(&paths.grids)?;
        write_json(&paths.image_labels, &self.image_labels())?;
        write_json(&paths.splits, &self.splits)?;
        write_json(&dir.as_ref().join(PLANTING_FILE), &self.planting)?;
        write_json(&dir.as_ref().join(CONFIG_FILE), &self.config)?;
        Ok(paths)
    }
}

pub const PLANTING_FILE: &str = "planting.json";
pub const CONFIG_FILE: &str = "synth_config.json";

/// Pixels within one grid spacing (Chebyshev distance) of the grid point of
/// `cell` under corner-aligned upsampling to `h x w`.
pub fn blob_mask(cell: usize, g: usize, h: usize, w: usize) -> BinaryMask {
    let (gy, gx) = (cell / g, cell % g);
    let step = |n: usize| if g > 1 { (n - 1) as f64 / (g - 1) as f64 } else { n as f64 };
    let (sy, sx) = (step(h), step(w));
    let (cy, cx) = (gy as f64 * sy, gx as f64 * sx);
    BinaryMask::from_fn(h, w, |y, x| {
        (y as f64 - cy).abs() < sy && (x as f64 - cx).abs() < sx
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::segment;

    fn small() -> SynthConfig {
        SynthConfig {
            mining_utterances: 20,
            mining_images: 20,
            test_queries_per_class: 3,
            test_images_per_class: 2,
            test_imposter_images: 4,
            background_images: 5,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a.units, b.units);
        assert_eq!(a.grids, b.grids);
        assert_eq!(a.global, b.global);
        let c = generate_synthetic(&SynthConfig { seed: 2, ..small() }).unwrap();
        assert_ne!(a.units, c.units);
    }

    #[test]
    fn noiseless_plants_exact_templates() {
        let cfg = SynthConfig { noise: 0.0, ..small() };
        let b = generate_synthetic(&cfg).unwrap();
        let support = b.units.get("support_0_0").unwrap();
        let template = crate::segmenter::segment_ids(&segment(support).unwrap());
        assert_eq!(template.len(), cfg.units_per_word);
        for id in &b.splits.mining_utterances {
            let utt = b.units.get(id).unwrap();
            for w in &b.planting.utterances[id] {
                let ids = crate::segmenter::segment_ids(&segment(&UnitSequence::new(
                    "x",
                    utt.frames[w.span.0..w.span.1].to_vec(),
                ))
                .unwrap());
                if w.class_label == cfg.classes[0] {
                    assert_eq!(ids, template);
                }
            }
        }
    }

    #[test]
    fn degenerate_noise_rejected() {
        assert!(generate_synthetic(&SynthConfig { noise: 1.0, ..small() }).is_err());
        assert!(generate_synthetic(&SynthConfig { vocab_size: 20, ..small() }).is_err());
    }

    #[test]
    fn roles_and_labels() {
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(b.support.entries.len(), 25);
        assert_eq!(b.global.len(), 25 + 20);
        assert_eq!(b.grids.len(), 25 + 20 + 5 + 10 + 4);
        let classes = &b.config.classes;
        for g in &b.grids {
            if b.splits.background_images.contains(&g.image_id) {
                assert!(classes.iter().all(|c| !g.has_label(c)));
            }
        }
        for id in &b.splits.mining_utterances {
            let caption = &b.captions[id][0];
            for w in &b.planting.utterances[id] {
                assert!(caption.contains(&w.class_label), "{caption}");
            }
        }
    }

    #[test]
    fn blob_mask_size() {
        // 7x7 over 224: spacing 223/6 = 37.17 around row 111.5 covers rows 75..=148
        let m = blob_mask(24, 7, 224, 224);
        assert_eq!(m.count(), 74 * 74);
    }
}
