//! Data model and file formats: discrete-unit corpora, embedding tables,
//! image grids, captions, support sets and PGM masks.
//!
//! Everything downstream consumes these types. Loaded collections are
//! immutable once constructed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ClusterId = u32;

/// Frame rate assumed when a corpus header does not carry one (20 ms frames).
pub const DEFAULT_FRAME_RATE_HZ: f64 = 50.0;
pub const DEFAULT_VOCAB_SIZE: u32 = 100;
/// Side of the attention grid; the image encoder emits 7x7 = 49 cells.
pub const DEFAULT_GRID_SIZE: usize = 7;
pub const DEFAULT_IMAGE_SIZE: usize = 224;

/// Per-frame cluster IDs for one utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSequence {
    #[serde(rename = "id")]
    pub utterance_id: String,
    pub frames: Vec<ClusterId>,
}

impl UnitSequence {
    pub fn new(utterance_id: impl Into<String>, frames: Vec<ClusterId>) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            frames,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub cluster_id: ClusterId,
    pub start_frame: usize,
    pub length_frames: usize,
}

impl Segment {
    pub fn end_frame(&self) -> usize {
        self.start_frame + self.length_frames
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusHeader {
    vocab_size: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_rate_hz: Option<f64>,
}

/// A collection of unit sequences sharing one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitCorpus {
    vocab_size: u32,
    frame_rate_hz: Option<f64>,
    sequences: Vec<UnitSequence>,
    index: HashMap<String, usize>,
}

impl UnitCorpus {
    pub fn new(
        vocab_size: u32,
        frame_rate_hz: Option<f64>,
        sequences: Vec<UnitSequence>,
    ) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::validation("vocab_size must be positive"));
        }
        if let Some(rate) = frame_rate_hz {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(Error::validation(format!("invalid frame_rate_hz {rate}")));
            }
        }
        let mut index = HashMap::with_capacity(sequences.len());
        for (i, seq) in sequences.iter().enumerate() {
            if let Some(&bad) = seq.frames.iter().find(|&&f| f >= vocab_size) {
                return Err(Error::validation(format!(
                    "utterance {}: frame value {bad} outside vocabulary of size {vocab_size}",
                    seq.utterance_id
                )));
            }
            if index.insert(seq.utterance_id.clone(), i).is_some() {
                return Err(Error::validation(format!(
                    "duplicate utterance id {}",
                    seq.utterance_id
                )));
            }
        }
        Ok(Self {
            vocab_size,
            frame_rate_hz,
            sequences,
            index,
        })
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    /// Rate declared in the header, if any.
    pub fn frame_rate_hz(&self) -> Option<f64> {
        self.frame_rate_hz
    }

    pub fn sequences(&self) -> &[UnitSequence] {
        &self.sequences
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn get(&self, utterance_id: &str) -> Option<&UnitSequence> {
        self.index.get(utterance_id).map(|&i| &self.sequences[i])
    }

    /// Converts a frame index to seconds when the header declared a rate.
    pub fn frame_to_seconds(&self, frame: usize) -> Option<f64> {
        self.frame_rate_hz.map(|r| frame as f64 / r)
    }

    /// Parses newline-delimited JSON. An optional header line carrying
    /// `vocab_size` may precede the records; without it `default_vocab` applies.
    pub fn parse<R: Read>(reader: R, source: &str, default_vocab: u32) -> Result<Self> {
        let mut header: Option<CorpusHeader> = None;
        let mut sequences = Vec::new();
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(|e| Error::io(source, e))?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: source.to_string(),
                line: lineno + 1,
                message,
            };
            let value: serde_json::Value =
                serde_json::from_str(trimmed).map_err(|e| parse_err(e.to_string()))?;
            if value.get("vocab_size").is_some() {
                if header.is_some() || !sequences.is_empty() {
                    return Err(parse_err("header must be the first line".into()));
                }
                header =
                    Some(serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?);
                continue;
            }
            let seq: UnitSequence =
                serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
            sequences.push(seq);
        }
        let (vocab, rate) = match header {
            Some(h) => (h.vocab_size, h.frame_rate_hz),
            None => (default_vocab, None),
        };
        Self::new(vocab, rate, sequences)
    }

    pub fn load(path: impl AsRef<Path>, default_vocab: u32) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(file, &path.display().to_string(), default_vocab)
    }

    /// Canonical serialization: header line followed by one compact record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&CorpusHeader {
            vocab_size: self.vocab_size,
            frame_rate_hz: self.frame_rate_hz,
        })
        .expect("header serializes");
        out.push('\n');
        for seq in &self.sequences {
            out.push_str(&serde_json::to_string(seq).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_bytes(path.as_ref(), self.to_jsonl().as_bytes())
    }
}

/// A single word-level audio embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioEmbedding {
    pub id: String,
    pub vector: Vec<f64>,
    pub class_hint: Option<String>,
}

/// G x G grid of d-dimensional patch embeddings, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    pub image_id: String,
    grid_size: usize,
    dim: usize,
    cells: Vec<f64>,
    pub class_labels: BTreeSet<String>,
}

impl ImageGrid {
    pub fn new(
        image_id: impl Into<String>,
        grid_size: usize,
        dim: usize,
        cells: Vec<f64>,
    ) -> Result<Self> {
        let image_id = image_id.into();
        if grid_size == 0 || dim == 0 {
            return Err(Error::validation(format!(
                "image {image_id}: grid size and dimension must be positive"
            )));
        }
        if cells.len() != grid_size * grid_size * dim {
            return Err(Error::validation(format!(
                "image {image_id}: expected {} values for a {grid_size}x{grid_size}x{dim} grid, got {}",
                grid_size * grid_size * dim,
                cells.len()
            )));
        }
        if cells.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!("image {image_id}: non-finite value")));
        }
        Ok(Self {
            image_id,
            grid_size,
            dim,
            cells,
            class_labels: BTreeSet::new(),
        })
    }

    pub fn with_labels<I, S>(mut self, labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.class_labels = labels.into_iter().map(Into::into).collect();
        self
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_cells(&self) -> usize {
        self.grid_size * self.grid_size
    }

    pub fn cell(&self, i: usize) -> &[f64] {
        &self.cells[i * self.dim..(i + 1) * self.dim]
    }

    pub fn cell_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.cells[i * self.dim..(i + 1) * self.dim]
    }

    pub fn cells(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.cells.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.cells
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.cells
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.class_labels.contains(label)
    }
}

/// One vector per image, used for cosine-based image mining.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalImageEmbedding {
    pub image_id: String,
    pub vector: Vec<f64>,
}

/// Raw contents of an `FSME` embedding file plus its sidecar ID index.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub ids: Vec<String>,
    pub dim: usize,
    /// Present for grid files.
    pub grid_size: Option<usize>,
    pub values: Vec<f32>,
}

const MAGIC: &[u8; 4] = b"FSME";

#[derive(Serialize, Deserialize)]
struct IdIndex {
    ids: Vec<String>,
}

/// `images.bin` -> `images.ids.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("ids.json")
}

impl EmbeddingFile {
    pub fn record_len(&self) -> usize {
        self.dim * self.grid_size.map_or(1, |g| g * g)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn record(&self, i: usize) -> &[f32] {
        let n = self.record_len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.values.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        if let Some(g) = self.grid_size {
            out.extend_from_slice(&(g as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes the binary payload. IDs are filled with placeholders; `read`
    /// attaches the real ones from the sidecar.
    pub fn decode(bytes: &[u8], grid: bool) -> Result<Self> {
        let mut cursor = bytes;
        let mut take_u32 = |what: &str| -> Result<u32> {
            if cursor.len() < 4 {
                return Err(Error::validation(format!("truncated file: missing {what}")));
            }
            let (head, rest) = cursor.split_at(4);
            cursor = rest;
            Ok(u32::from_le_bytes(head.try_into().unwrap()))
        };
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::validation("bad magic bytes, expected FSME"));
        }
        take_u32("magic")?;
        let count = take_u32("record count")? as usize;
        let dim = take_u32("dimension")? as usize;
        let grid_size = if grid {
            Some(take_u32("grid size")? as usize)
        } else {
            None
        };
        if dim == 0 || grid_size == Some(0) {
            return Err(Error::validation("dimension and grid size must be positive"));
        }
        let per_record = dim * grid_size.map_or(1, |g| g * g);
        let expected = count * per_record * 4;
        if cursor.len() < expected {
            return Err(Error::validation(format!(
                "truncated file: header declares {} floats, payload holds {}",
                count * per_record,
                cursor.len() / 4
            )));
        }
        if cursor.len() > expected {
            return Err(Error::validation(format!(
                "{} trailing bytes after payload",
                cursor.len() - expected
            )));
        }
        let values: Vec<f32> = cursor
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite value in record {}",
                pos / per_record
            )));
        }
        Ok(Self {
            ids: (0..count).map(|i| i.to_string()).collect(),
            dim,
            grid_size,
            values,
        })
    }

    pub fn read(path: impl AsRef<Path>, grid: bool) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut file = Self::decode(&bytes, grid)?;
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let index: IdIndex = serde_json::from_str(&text)?;
        if index.ids.len() != file.ids.len() {
            return Err(Error::validation(format!(
                "{}: {} ids for {} records",
                side.display(),
                index.ids.len(),
                file.ids.len()
            )));
        }
        let unique: BTreeSet<&String> = index.ids.iter().collect();
        if unique.len() != index.ids.len() {
            return Err(Error::validation(format!("{}: duplicate ids", side.display())));
        }
        file.ids = index.ids;
        Ok(file)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_bytes(path, &self.encode())?;
        let index = serde_json::to_string(&IdIndex {
            ids: self.ids.clone(),
        })?;
        write_bytes(&sidecar_path(path), index.as_bytes())
    }

    fn rows_f64(&self) -> impl Iterator<Item = (&String, Vec<f64>)> {
        (0..self.len()).map(move |i| {
            (
                &self.ids[i],
                self.record(i).iter().map(|&v| v as f64).collect(),
            )
        })
    }

    pub fn to_audio(&self) -> Vec<AudioEmbedding> {
        self.rows_f64()
            .map(|(id, vector)| AudioEmbedding {
                id: id.clone(),
                vector,
                class_hint: None,
            })
            .collect()
    }

    pub fn to_global(&self) -> Vec<GlobalImageEmbedding> {
        self.rows_f64()
            .map(|(id, vector)| GlobalImageEmbedding {
                image_id: id.clone(),
                vector,
            })
            .collect()
    }

    pub fn to_grids(&self) -> Result<Vec<ImageGrid>> {
        let g = self
            .grid_size
            .ok_or_else(|| Error::validation("not a grid file"))?;
        self.rows_f64()
            .map(|(id, cells)| ImageGrid::new(id.clone(), g, self.dim, cells))
            .collect()
    }

    fn from_rows<'a>(
        rows: impl Iterator<Item = (&'a str, &'a [f64])>,
        dim: usize,
        grid_size: Option<usize>,
    ) -> Self {
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for (id, row) in rows {
            ids.push(id.to_string());
            values.extend(row.iter().map(|&v| v as f32));
        }
        Self {
            ids,
            dim,
            grid_size,
            values,
        }
    }

    pub fn from_audio(items: &[AudioEmbedding]) -> Result<Self> {
        let dim = common_dim(items.iter().map(|a| a.vector.len()))?;
        Ok(Self::from_rows(
            items.iter().map(|a| (a.id.as_str(), a.vector.as_slice())),
            dim,
            None,
        ))
    }

    pub fn from_global(items: &[GlobalImageEmbedding]) -> Result<Self> {
        let dim = common_dim(items.iter().map(|a| a.vector.len()))?;
        Ok(Self::from_rows(
            items.iter().map(|a| (a.image_id.as_str(), a.vector.as_slice())),
            dim,
            None,
        ))
    }

    pub fn from_grids(items: &[ImageGrid]) -> Result<Self> {
        let dim = common_dim(items.iter().map(|g| g.dim()))?;
        let g = items.first().map_or(1, |g| g.grid_size());
        if items.iter().any(|i| i.grid_size() != g) {
            return Err(Error::validation("grids with differing grid sizes"));
        }
        Ok(Self::from_rows(
            items.iter().map(|i| (i.image_id.as_str(), i.as_slice())),
            dim,
            Some(g),
        ))
    }
}

fn common_dim(mut dims: impl Iterator<Item = usize>) -> Result<usize> {
    let Some(first) = dims.next() else {
        return Ok(1);
    };
    if first == 0 {
        return Err(Error::validation("zero-dimensional embedding"));
    }
    if dims.any(|d| d != first) {
        return Err(Error::validation("embeddings with differing dimensions"));
    }
    Ok(first)
}

/// Lowercased whitespace tokens per utterance or image ID.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Captions {
    tokens: BTreeMap<String, Vec<String>>,
}

fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

impl Captions {
    pub fn from_map(map: BTreeMap<String, Vec<String>>) -> Self {
        let tokens = map
            .into_iter()
            .map(|(id, parts)| (id, parts.iter().flat_map(|p| tokenize(p)).collect()))
            .collect();
        Self { tokens }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_map(read_string_map(path.as_ref())?))
    }

    pub fn tokens(&self, id: &str) -> Option<&[String]> {
        self.tokens.get(id).map(Vec::as_slice)
    }

    /// Whether the keyword (possibly several words) occurs as a contiguous
    /// token run anywhere in the caption. `None` if the ID has no caption.
    pub fn contains(&self, id: &str, keyword: &str) -> Option<bool> {
        let tokens = self.tokens.get(id)?;
        let needle: Vec<String> = tokenize(keyword).collect();
        if needle.is_empty() {
            return Some(false);
        }
        Some(tokens.windows(needle.len()).any(|w| w == needle.as_slice()))
    }
}

/// Reads a JSON object mapping IDs to lists of strings.
pub fn read_string_map(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportEntry {
    #[serde(rename = "class")]
    pub class_label: String,
    pub audio_id: String,
    pub utterance_id: String,
    pub image_id: String,
}

/// K ground-truth word-image examples for each of L classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportSet {
    pub shots: usize,
    pub entries: Vec<SupportEntry>,
}

impl SupportSet {
    pub fn new(shots: usize, entries: Vec<SupportEntry>) -> Result<Self> {
        let set = Self { shots, entries };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(Error::validation("support set needs at least one shot per class"));
        }
        let mut per_class: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &self.entries {
            *per_class.entry(&e.class_label).or_default() += 1;
        }
        for (class, count) in &per_class {
            if *count != self.shots {
                return Err(Error::validation(format!(
                    "class {class} has {count} support entries, expected {}",
                    self.shots
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: Self = serde_json::from_str(&text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_bytes(path.as_ref(), serde_json::to_string_pretty(self)?.as_bytes())
    }

    /// Class labels in sorted order.
    pub fn classes(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.entries.iter().map(|e| &e.class_label).collect();
        set.into_iter().cloned().collect()
    }

    pub fn num_classes(&self) -> usize {
        self.classes().len()
    }

    pub fn entries_for<'a>(&'a self, class: &'a str) -> impl Iterator<Item = &'a SupportEntry> {
        self.entries.iter().filter(move |e| e.class_label == class)
    }

    pub fn utterance_ids(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.utterance_id.as_str()).collect()
    }

    pub fn image_ids(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.image_id.as_str()).collect()
    }

    /// Fails if any referenced utterance is missing from the corpus.
    pub fn resolve_units(&self, corpus: &UnitCorpus) -> Result<()> {
        for e in &self.entries {
            if corpus.get(&e.utterance_id).is_none() {
                return Err(Error::validation(format!(
                    "support utterance {} not found in unit corpus",
                    e.utterance_id
                )));
            }
        }
        Ok(())
    }

    /// Fails if any referenced image is missing from `known_ids`.
    pub fn resolve_images<'a>(&self, known_ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let known: BTreeSet<&str> = known_ids.into_iter().collect();
        for e in &self.entries {
            if !known.contains(e.image_id.as_str()) {
                return Err(Error::validation(format!(
                    "support image {} not found in embedding store",
                    e.image_id
                )));
            }
        }
        Ok(())
    }

    /// Fails if the support set shares any ID with an evaluation collection.
    pub fn check_disjoint<'a>(&self, eval_ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let own: BTreeSet<&str> = self
            .entries
            .iter()
            .flat_map(|e| [e.audio_id.as_str(), e.utterance_id.as_str(), e.image_id.as_str()])
            .collect();
        for id in eval_ids {
            if own.contains(id) {
                return Err(Error::validation(format!(
                    "{id} appears in both the support set and the evaluation data"
                )));
            }
        }
        Ok(())
    }
}

/// Binary H x W mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::validation(format!(
                "mask data has {} pixels, expected {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (y, x)))
            .map(|(y, x)| f(y, x))
            .collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (width, height, pixels) = decode_pgm(&bytes)?;
        Ok(Self {
            height,
            width,
            data: pixels.iter().map(|&p| p != 0).collect(),
        })
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let pixels: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        write_pgm(path.as_ref(), self.width, self.height, &pixels)
    }
}

/// Decodes a binary (P5) PGM with maxval <= 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::validation("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::validation(format!("unsupported PGM magic {}", fields[0])));
    }
    let num = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::validation(format!("bad PGM header field {s:?}")))
    };
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::validation(format!("unsupported PGM maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() != width * height {
        return Err(Error::validation(format!(
            "PGM raster has {} bytes, expected {}",
            raster.len(),
            width * height
        )));
    }
    Ok((width, height, raster.to_vec()))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    write_bytes(path, &out)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str, vocab: u32) -> Result<UnitCorpus> {
        UnitCorpus::parse(text.as_bytes(), "test", vocab)
    }

    #[test]
    fn parses_single_record() {
        let c = parse(r#"{"id":"u1","frames":[3,3,5]}"#, 100).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.get("u1").unwrap().frames.len(), 3);
        assert_eq!(c.vocab_size(), 100);
        assert_eq!(c.frame_rate_hz(), None);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let c = parse("", 100).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn frame_at_vocab_size_is_rejected() {
        let err = parse(r#"{"id":"u1","frames":[1,100]}"#, 100).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn header_sets_vocab_and_rate() {
        let text = "{\"vocab_size\":8,\"frame_rate_hz\":50}\n{\"id\":\"a\",\"frames\":[7]}\n";
        let c = parse(text, 100).unwrap();
        assert_eq!(c.vocab_size(), 8);
        assert_eq!(c.frame_to_seconds(25), Some(0.5));
        assert!(parse("{\"vocab_size\":8}\n{\"id\":\"a\",\"frames\":[8]}", 100).is_err());
    }

    #[test]
    fn malformed_record_reports_line() {
        let text = "{\"id\":\"a\",\"frames\":[1]}\n\n{\"id\":\"b\",\"frames\":[1,}\n";
        match parse(text, 100).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "{\"id\":\"a\",\"frames\":[1]}\n{\"id\":\"a\",\"frames\":[2]}";
        assert!(parse(text, 100).is_err());
    }

    fn flat_file(count: u32, dim: u32, floats: usize) -> Vec<u8> {
        let mut b = b"FSME".to_vec();
        b.extend(count.to_le_bytes());
        b.extend(dim.to_le_bytes());
        for i in 0..floats {
            b.extend((i as f32).to_le_bytes());
        }
        b
    }

    #[test]
    fn decodes_flat_embeddings() {
        let f = EmbeddingFile::decode(&flat_file(2, 4, 8), false).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f.dim, 4);
        assert_eq!(f.record(1), &[4.0, 5.0, 6.0, 7.0]);
        assert_eq!(f.to_audio()[0].vector.len(), 4);
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let err = EmbeddingFile::decode(&flat_file(1, 4, 3), false).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn non_finite_value_is_an_error() {
        let mut b = flat_file(1, 2, 1);
        b.extend(f32::NAN.to_le_bytes());
        assert!(EmbeddingFile::decode(&b, false).is_err());
    }

    #[test]
    fn grid_file_has_g_squared_rows() {
        let (g, d) = (7usize, 16usize);
        let mut b = b"FSME".to_vec();
        b.extend(1u32.to_le_bytes());
        b.extend((d as u32).to_le_bytes());
        b.extend((g as u32).to_le_bytes());
        for _ in 0..g * g * d {
            b.extend(0.5f32.to_le_bytes());
        }
        let f = EmbeddingFile::decode(&b, true).unwrap();
        let grids = f.to_grids().unwrap();
        assert_eq!(grids[0].num_cells(), 49);
        assert_eq!(grids[0].cells().count(), 49);
        assert_eq!(grids[0].cell(48).len(), 16);
    }

    #[test]
    fn embedding_file_with_sidecar_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.bin");
        let grid = ImageGrid::new("img", 2, 3, (0..12).map(|i| i as f64).collect()).unwrap();
        let file = EmbeddingFile::from_grids(std::slice::from_ref(&grid)).unwrap();
        file.write(&path).unwrap();
        assert!(dir.path().join("a.ids.json").exists());
        let back = EmbeddingFile::read(&path, true).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_grids().unwrap()[0].as_slice(), grid.as_slice());
    }

    #[test]
    fn captions_match_multiword_keywords_anywhere() {
        let mut map = BTreeMap::new();
        map.insert("u".to_string(), vec!["A red Fire hydrant on the street".to_string()]);
        let caps = Captions::from_map(map);
        assert_eq!(caps.contains("u", "fire hydrant"), Some(true));
        assert_eq!(caps.contains("u", "hydrant fire"), Some(false));
        assert_eq!(caps.contains("u", "street"), Some(true));
        assert_eq!(caps.contains("missing", "street"), None);
    }

    #[test]
    fn support_set_requires_k_per_class() {
        let e = |c: &str, i: usize| SupportEntry {
            class_label: c.into(),
            audio_id: format!("a{c}{i}"),
            utterance_id: format!("u{c}{i}"),
            image_id: format!("v{c}{i}"),
        };
        assert!(SupportSet::new(2, vec![e("x", 0), e("x", 1), e("y", 0)]).is_err());
        let s = SupportSet::new(1, vec![e("x", 0), e("y", 0)]).unwrap();
        assert_eq!(s.classes(), vec!["x", "y"]);
        assert!(s.check_disjoint(["vx0"]).is_err());
        assert!(s.check_disjoint(["other"]).is_ok());
        assert!(s.resolve_images(["vx0"]).is_err());
        assert!(s.resolve_images(["vx0", "vy0"]).is_ok());
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let mask = BinaryMask::from_fn(3, 5, |y, x| (x + y) % 2 == 0);
        mask.write_pgm(&path).unwrap();
        assert_eq!(BinaryMask::read_pgm(&path).unwrap(), mask);
    }

    proptest! {
        #[test]
        fn canonical_corpus_round_trips_byte_identically(
            seqs in prop::collection::vec(prop::collection::vec(0u32..50, 1..20), 0..8),
            rate in prop::option::of(1u32..200),
        ) {
            let sequences = seqs
                .into_iter()
                .enumerate()
                .map(|(i, f)| UnitSequence::new(format!("utt{i}"), f))
                .collect();
            let corpus = UnitCorpus::new(50, rate.map(f64::from), sequences).unwrap();
            let text = corpus.to_jsonl();
            let back = parse(&text, 7).unwrap();
            prop_assert_eq!(back.to_jsonl(), text);
            prop_assert_eq!(back, corpus);
        }
    }
}
