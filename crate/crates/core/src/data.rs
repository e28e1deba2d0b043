//! Corpus types and the on-disk formats: a JSONL file with one image per line, a
//! little-endian f32 feature blob, and a small JSON manifest tying them together.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phrase::tokenize;

/// Boxes may overflow the image by this many pixels before load rejects them.
pub const CLAMP_TOLERANCE: f64 = 1.0;

/// Corner-format box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoxCoords {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoxCoords {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BoxCoords { x1, y1, x2, y2 };
        b.check()?;
        Ok(b)
    }

    fn check(&self) -> Result<()> {
        let all = [self.x1, self.y1, self.x2, self.y2];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite box {self:?}")));
        }
        if !(self.x1 < self.x2 && self.y1 < self.y2) {
            return Err(Error::Argument(format!(
                "degenerate box [{}, {}, {}, {}]",
                self.x1, self.y1, self.x2, self.y2
            )));
        }
        if all.iter().any(|&v| v < 0.0) {
            return Err(Error::Argument(format!("negative box coordinate {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Tightest box enclosing both.
    pub fn union(&self, other: &BoxCoords) -> BoxCoords {
        BoxCoords {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }
}

impl TryFrom<[f64; 4]> for BoxCoords {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        // Range checks happen against the image at load time; only shape is enforced here.
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Schema(format!("non-finite box {v:?}")));
        }
        Ok(BoxCoords {
            x1: v[0],
            y1: v[1],
            x2: v[2],
            y2: v[3],
        })
    }
}

impl From<BoxCoords> for [f64; 4] {
    fn from(b: BoxCoords) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub bbox: BoxCoords,
    pub feature: Vec<f32>,
    pub label: String,
    pub detector_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhraseRecord {
    /// Character (not byte) offset of the first character.
    pub first_char: usize,
    /// Exclusive character offset.
    pub last_char: usize,
    pub tokens: Vec<String>,
    pub head: Option<String>,
    pub gt_boxes: Option<Vec<BoxCoords>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub text: String,
    pub phrases: Vec<PhraseRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageExample {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub proposals: Vec<Proposal>,
    pub sentences: Vec<Sentence>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub examples: Vec<ImageExample>,
    pub feature_dim: usize,
    pub split: Split,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn phrase_count(&self) -> usize {
        self.examples
            .iter()
            .flat_map(|e| &e.sentences)
            .map(|s| s.phrases.len())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub corpus: PathBuf,
    pub features: PathBuf,
    pub feature_dim: usize,
    #[serde(default = "default_split")]
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
}

fn default_split() -> Split {
    Split::Train
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        m.corpus = base.join(&m.corpus);
        m.features = base.join(&m.features);
        m.embeddings = m.embeddings.map(|p| base.join(p));
        Ok(m)
    }
}

// Wire records, one-to-one with the JSONL schema.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageRecord {
    image_id: String,
    width: u32,
    height: u32,
    proposals: Vec<ProposalRecord>,
    sentences: Vec<SentenceRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProposalRecord {
    #[serde(rename = "box")]
    bbox: BoxCoords,
    label: String,
    score: f64,
    feat: FeatRef,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatRef {
    offset: usize,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SentenceRecord {
    text: String,
    phrases: Vec<PhraseWire>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhraseWire {
    first: usize,
    last: usize,
    head: Option<String>,
    gt_boxes: Option<Vec<BoxCoords>>,
}

/// Characters `first..last` of `text`, or None when out of range.
pub fn char_slice(text: &str, first: usize, last: usize) -> Option<&str> {
    if first >= last {
        return None;
    }
    let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
    let start = indices.nth(first)?;
    let end = indices.nth(last - first - 1)?;
    Some(&text[start..end])
}

fn read_blob(path: &Path) -> Result<Vec<f32>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Schema(format!(
            "feature blob {} has {} bytes, not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn clamp_box(b: BoxCoords, width: f64, height: f64, image_id: &str) -> Result<BoxCoords> {
    let invalid = |message: String| Error::Validation {
        image_id: image_id.to_string(),
        message,
    };
    let [x1, y1, x2, y2]: [f64; 4] = b.into();
    if x1 < -CLAMP_TOLERANCE
        || y1 < -CLAMP_TOLERANCE
        || x2 > width + CLAMP_TOLERANCE
        || y2 > height + CLAMP_TOLERANCE
    {
        return Err(invalid(format!(
            "box [{x1}, {y1}, {x2}, {y2}] lies outside the {width}x{height} image"
        )));
    }
    let clamped = BoxCoords {
        x1: x1.clamp(0.0, width),
        y1: y1.clamp(0.0, height),
        x2: x2.clamp(0.0, width),
        y2: y2.clamp(0.0, height),
    };
    clamped
        .check()
        .map_err(|_| invalid(format!("invalid box [{x1}, {y1}, {x2}, {y2}]")))?;
    Ok(clamped)
}

fn resolve_image(rec: ImageRecord, blob: &[f32], dim: usize) -> Result<ImageExample> {
    let id = rec.image_id.clone();
    let invalid = |message: String| Error::Validation {
        image_id: id.clone(),
        message,
    };
    if rec.width == 0 || rec.height == 0 {
        return Err(invalid("image dimensions must be positive".into()));
    }
    if rec.proposals.is_empty() {
        return Err(invalid("image has no proposals".into()));
    }
    let (w, h) = (f64::from(rec.width), f64::from(rec.height));

    let mut proposals = Vec::with_capacity(rec.proposals.len());
    for p in rec.proposals {
        if p.feat.count != dim {
            return Err(Error::Schema(format!(
                "image {}: feature count {} does not match declared dimension {}",
                rec.image_id, p.feat.count, dim
            )));
        }
        let end = p.feat.offset.saturating_add(p.feat.count);
        if end > blob.len() {
            return Err(Error::Schema(format!(
                "image {}: feature range {}..{} exceeds blob of {} floats",
                rec.image_id,
                p.feat.offset,
                end,
                blob.len()
            )));
        }
        if p.label.trim().is_empty() {
            return Err(invalid("proposal with empty label".into()));
        }
        if !(0.0..=1.0).contains(&p.score) {
            return Err(invalid(format!("detector score {} outside [0,1]", p.score)));
        }
        proposals.push(Proposal {
            bbox: clamp_box(p.bbox, w, h, &rec.image_id)?,
            feature: blob[p.feat.offset..end].to_vec(),
            label: p.label,
            detector_score: p.score,
        });
    }

    let mut sentences = Vec::with_capacity(rec.sentences.len());
    for s in rec.sentences {
        let mut phrases = Vec::with_capacity(s.phrases.len());
        for ph in s.phrases {
            let span = char_slice(&s.text, ph.first, ph.last).ok_or_else(|| {
                invalid(format!(
                    "phrase span {}..{} invalid for sentence {:?}",
                    ph.first, ph.last, s.text
                ))
            })?;
            let tokens = tokenize(span);
            if tokens.is_empty() {
                return Err(invalid(format!("phrase {span:?} has no tokens")));
            }
            let gt_boxes = ph
                .gt_boxes
                .map(|boxes| {
                    boxes
                        .into_iter()
                        .map(|b| clamp_box(b, w, h, &rec.image_id))
                        .collect::<Result<Vec<_>>>()
                })
                .transpose()?;
            phrases.push(PhraseRecord {
                first_char: ph.first,
                last_char: ph.last,
                tokens,
                head: ph.head.filter(|h| !h.is_empty()),
                gt_boxes,
            });
        }
        sentences.push(Sentence {
            text: s.text,
            phrases,
        });
    }

    Ok(ImageExample {
        image_id: rec.image_id,
        width: rec.width,
        height: rec.height,
        proposals,
        sentences,
    })
}

pub fn load_corpus(manifest_path: &Path) -> Result<Corpus> {
    let manifest = Manifest::read(manifest_path)?;
    load_with_manifest(&manifest)
}

pub fn load_with_manifest(manifest: &Manifest) -> Result<Corpus> {
    if manifest.feature_dim == 0 {
        return Err(Error::Schema("feature_dim must be positive".into()));
    }
    let path = &manifest.corpus;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            lines.push((i + 1, line));
        }
    }
    if lines.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let blob = read_blob(&manifest.features)?;
    let dim = manifest.feature_dim;

    let examples = lines
        .into_par_iter()
        .map(|(lineno, line)| {
            let rec: ImageRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.clone(),
                line: lineno,
                message: e.to_string(),
            })?;
            resolve_image(rec, &blob, dim)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Corpus {
        examples,
        feature_dim: dim,
        split: manifest.split,
    })
}

/// Writes `<stem>.jsonl`, `<stem>.feats.bin` and `<stem>.manifest.json` into `dir`
/// and returns the manifest path.
pub fn save_corpus(
    corpus: &Corpus,
    dir: &Path,
    stem: &str,
    embeddings: Option<&Path>,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let jsonl_name = format!("{stem}.jsonl");
    let blob_name = format!("{stem}.feats.bin");
    let manifest_path = dir.join(format!("{stem}.manifest.json"));

    let jsonl_path = dir.join(&jsonl_name);
    let blob_path = dir.join(&blob_name);
    let mut jsonl =
        BufWriter::new(File::create(&jsonl_path).map_err(|e| Error::io(&jsonl_path, e))?);
    let mut blob = BufWriter::new(File::create(&blob_path).map_err(|e| Error::io(&blob_path, e))?);

    let mut offset = 0usize;
    for ex in &corpus.examples {
        let mut proposals = Vec::with_capacity(ex.proposals.len());
        for p in &ex.proposals {
            if p.feature.len() != corpus.feature_dim {
                return Err(Error::Schema(format!(
                    "image {}: feature length {} != {}",
                    ex.image_id,
                    p.feature.len(),
                    corpus.feature_dim
                )));
            }
            for v in &p.feature {
                blob.write_all(&v.to_le_bytes())
                    .map_err(|e| Error::io(&blob_path, e))?;
            }
            proposals.push(ProposalRecord {
                bbox: p.bbox,
                label: p.label.clone(),
                score: p.detector_score,
                feat: FeatRef {
                    offset,
                    count: p.feature.len(),
                },
            });
            offset += p.feature.len();
        }
        let rec = ImageRecord {
            image_id: ex.image_id.clone(),
            width: ex.width,
            height: ex.height,
            proposals,
            sentences: ex
                .sentences
                .iter()
                .map(|s| SentenceRecord {
                    text: s.text.clone(),
                    phrases: s
                        .phrases
                        .iter()
                        .map(|p| PhraseWire {
                            first: p.first_char,
                            last: p.last_char,
                            head: p.head.clone(),
                            gt_boxes: p.gt_boxes.clone(),
                        })
                        .collect(),
                })
                .collect(),
        };
        let line = serde_json::to_string(&rec).expect("corpus records serialize");
        writeln!(jsonl, "{line}").map_err(|e| Error::io(&jsonl_path, e))?;
    }
    jsonl.flush().map_err(|e| Error::io(&jsonl_path, e))?;
    blob.flush().map_err(|e| Error::io(&blob_path, e))?;

    let manifest = Manifest {
        corpus: jsonl_name.into(),
        features: blob_name.into(),
        feature_dim: corpus.feature_dim,
        split: corpus.split,
        embeddings: embeddings.map(Path::to_path_buf),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

/// Seeded uniform sample of `ceil(fraction * n)` examples, kept in original order.
pub fn subsample_training(corpus: &Corpus, fraction: f64, seed: u64) -> Result<Corpus> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Argument(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let n = corpus.examples.len();
    let keep = ((fraction * n as f64).ceil() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, keep).into_vec();
    idx.sort_unstable();
    Ok(Corpus {
        examples: idx.into_iter().map(|i| corpus.examples[i].clone()).collect(),
        feature_dim: corpus.feature_dim,
        split: corpus.split,
    })
}
