//! Synthetic grounding corpora with known region-phrase ground truth.
//!
//! Every image is a 100x100 canvas. Each target proposal gets one phrase, either
//! "the <concept>" or, when two proposals share a concept, "the <concept> on the
//! <left|right|top|bottom>". Detector labels can be corrupted with `label_noise`;
//! detector features always encode the true concept, so a trained model can recover
//! from label noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BoxCoords, Corpus, ImageExample, PhraseRecord, Proposal, Sentence, Split};
use crate::embeddings::FixedEmbeddingTable;
use crate::error::{Error, Result};
use crate::evaluation::iou;
use crate::model::spatial_features;
use crate::phrase::tokenize;

pub const CANVAS: f64 = 100.0;
pub const MIN_SIDE: f64 = 10.0;
pub const MAX_SIDE: f64 = 40.0;
/// Minimum centre separation between two same-concept targets on the axis that
/// disambiguates them.
pub const MIN_SEPARATION: f64 = 10.0;

pub const DEFAULT_CONCEPTS: [&str; 24] = [
    "dog", "cat", "horse", "bird", "car", "bus", "bicycle", "boat", "chair", "table", "lamp", "cup",
    "bottle", "tree", "flower", "house", "window", "door", "ball", "hat", "shirt", "bag", "phone", "book",
];

pub const FUNCTION_WORDS: [&str; 7] = ["the", "on", "and", "left", "right", "top", "bottom"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub n_images: usize,
    pub val_images: usize,
    pub test_images: usize,
    pub proposals_per_image: usize,
    pub phrases_per_image: usize,
    pub concepts: Vec<String>,
    pub label_noise: f64,
    pub duplicate_rate: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_images: 200,
            val_images: 50,
            test_images: 50,
            proposals_per_image: 6,
            phrases_per_image: 2,
            concepts: DEFAULT_CONCEPTS.iter().map(|s| s.to_string()).collect(),
            label_noise: 0.0,
            duplicate_rate: 0.0,
            feature_dim: 16,
            feature_noise: 0.1,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self, fixed: &FixedEmbeddingTable) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, p) in [("label_noise", self.label_noise), ("duplicate_rate", self.duplicate_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.proposals_per_image == 0 || self.phrases_per_image == 0 {
            return bad("proposals_per_image and phrases_per_image must be positive".into());
        }
        if self.phrases_per_image > self.proposals_per_image {
            return bad("more phrases than proposals per image".into());
        }
        if self.concepts.len() < self.proposals_per_image {
            return bad(format!(
                "{} concepts cannot label {} distinct proposals",
                self.concepts.len(),
                self.proposals_per_image
            ));
        }
        if self.feature_dim == 0 || !(self.feature_noise >= 0.0) {
            return bad("feature_dim must be positive and feature_noise non-negative".into());
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.concepts {
            if tokenize(c) != [c.clone()] {
                return bad(format!("concept {c:?} must be a single lowercase token"));
            }
            if !fixed.contains(c) {
                return bad(format!("concept {c:?} is missing from the embedding table"));
            }
            if !seen.insert(c) {
                return bad(format!("concept {c:?} listed twice"));
            }
        }
        Ok(())
    }
}

/// Random Gaussian embeddings for the default concepts and the template words.
pub fn synthetic_embedding_table(concepts: &[String], dim: usize, seed: u64) -> FixedEmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe3b0_c442);
    let words = concepts.iter().map(String::as_str).chain(FUNCTION_WORDS);
    let entries: Vec<(String, Vec<f64>)> = words
        .map(|w| {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            (w.to_string(), v)
        })
        .collect();
    FixedEmbeddingTable::from_entries(dim, entries).expect("rows have the table dimension")
}

fn random_box<R: Rng>(rng: &mut R) -> BoxCoords {
    let w = rng.random_range(MIN_SIDE..=MAX_SIDE);
    let h = rng.random_range(MIN_SIDE..=MAX_SIDE);
    let x = rng.random_range(0.0..=CANVAS - w);
    let y = rng.random_range(0.0..=CANVAS - h);
    BoxCoords::new(x, y, x + w, y + h).expect("sampled boxes are valid")
}

fn overlaps(b: &BoxCoords, placed: &[BoxCoords]) -> bool {
    placed.iter().any(|p| iou(b, p).unwrap_or(1.0) >= 0.5)
}

/// Spatial word that tells `a` apart from `b`, if they are far enough apart.
fn disambiguate(a: &BoxCoords, b: &BoxCoords) -> Option<(&'static str, &'static str)> {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    let (dx, dy) = (bx - ax, by - ay);
    if dx.abs() >= dy.abs() {
        (dx.abs() >= MIN_SEPARATION).then_some(if dx > 0.0 { ("left", "right") } else { ("right", "left") })
    } else {
        (dy.abs() >= MIN_SEPARATION).then_some(if dy > 0.0 { ("top", "bottom") } else { ("bottom", "top") })
    }
}

struct Encoder {
    matrix: Vec<Vec<f64>>,
    noise: Normal<f64>,
}

impl Encoder {
    fn new(config: &GenConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0f3a_7c11);
        let inputs = config.concepts.len() + 5;
        let matrix = (0..config.feature_dim)
            .map(|_| (0..inputs).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        Encoder {
            matrix,
            noise: Normal::new(0.0, config.feature_noise).expect("noise sigma is non-negative"),
        }
    }

    fn encode<R: Rng>(&self, concept: usize, n_concepts: usize, b: &BoxCoords, rng: &mut R) -> Vec<f32> {
        let spatial = spatial_features(b, CANVAS, CANVAS).expect("canvas is non-empty");
        self.matrix
            .iter()
            .map(|row| {
                let v = row[concept] + row[n_concepts..].iter().zip(&spatial).map(|(w, s)| w * s).sum::<f64>();
                (v + self.noise.sample(rng)) as f32
            })
            .collect()
    }
}

fn image_seed(seed: u64, split: Split, index: usize) -> u64 {
    let tag = match split {
        Split::Train => 1u64,
        Split::Val => 2,
        Split::Test => 3,
    };
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (tag << 56) ^ index as u64
}

fn generate_image(config: &GenConfig, encoder: &Encoder, split: Split, index: usize) -> ImageExample {
    let mut rng = ChaCha8Rng::seed_from_u64(image_seed(config.seed, split, index));
    let n_props = config.proposals_per_image;
    let n_targets = config.phrases_per_image;
    let duplicate = n_targets >= 2 && rng.random_bool(config.duplicate_rate);

    let n_distinct = if duplicate { n_props - 1 } else { n_props };
    let concepts: Vec<usize> = rand::seq::index::sample(&mut rng, config.concepts.len(), n_distinct).into_vec();
    // slot i holds the true concept of proposal i; slots 0..n_targets are targets
    let mut truth: Vec<usize> = Vec::with_capacity(n_props);
    if duplicate {
        truth.push(concepts[0]);
        truth.push(concepts[0]);
        truth.extend(&concepts[1..]);
    } else {
        truth.extend(&concepts);
    }

    let mut boxes: Vec<BoxCoords> = Vec::with_capacity(n_props);
    let mut terms: Vec<Option<&'static str>> = vec![None; n_props];
    'place: loop {
        boxes.clear();
        for _ in 0..n_props {
            let mut placed = false;
            for _ in 0..200 {
                let b = random_box(&mut rng);
                if !overlaps(&b, &boxes) {
                    boxes.push(b);
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'place;
            }
        }
        if duplicate {
            match disambiguate(&boxes[0], &boxes[1]) {
                Some((a, b)) => {
                    terms[0] = Some(a);
                    terms[1] = Some(b);
                }
                None => continue 'place,
            }
        }
        break;
    }

    let mut order: Vec<usize> = (0..n_props).collect();
    order.shuffle(&mut rng);
    let n_concepts = config.concepts.len();
    let proposals: Vec<Proposal> = order
        .iter()
        .map(|&slot| {
            let label_idx = if rng.random_bool(config.label_noise) {
                rng.random_range(0..n_concepts)
            } else {
                truth[slot]
            };
            Proposal {
                bbox: boxes[slot],
                feature: encoder.encode(truth[slot], n_concepts, &boxes[slot], &mut rng),
                label: config.concepts[label_idx].clone(),
                detector_score: rng.random_range(0.5..1.0),
            }
        })
        .collect();

    let mut targets: Vec<usize> = (0..n_targets).collect();
    targets.shuffle(&mut rng);
    let mut text = String::new();
    let mut phrases = Vec::with_capacity(n_targets);
    for (n, &slot) in targets.iter().enumerate() {
        if n > 0 {
            text.push_str(" and ");
        }
        let concept = &config.concepts[truth[slot]];
        let phrase_text = match terms[slot] {
            Some(term) => format!("the {concept} on the {term}"),
            None => format!("the {concept}"),
        };
        let first = text.chars().count();
        text.push_str(&phrase_text);
        phrases.push(PhraseRecord {
            first_char: first,
            last_char: first + phrase_text.chars().count(),
            tokens: tokenize(&phrase_text),
            head: None,
            gt_boxes: Some(vec![boxes[slot]]),
        });
    }

    ImageExample {
        image_id: format!("{split}-{index:06}"),
        width: CANVAS as u32,
        height: CANVAS as u32,
        proposals,
        sentences: vec![Sentence { text, phrases }],
    }
}

fn generate_split(config: &GenConfig, encoder: &Encoder, split: Split, n: usize) -> Corpus {
    Corpus {
        examples: (0..n)
            .into_par_iter()
            .map(|i| generate_image(config, encoder, split, i))
            .collect(),
        feature_dim: config.feature_dim,
        split,
    }
}

/// Train, validation and test corpora; identical output for identical config.
pub fn generate(config: &GenConfig, fixed: &FixedEmbeddingTable) -> Result<(Corpus, Corpus, Corpus)> {
    config.validate(fixed)?;
    let encoder = Encoder::new(config);
    Ok((
        generate_split(config, &encoder, Split::Train, config.n_images),
        generate_split(config, &encoder, Split::Val, config.val_images),
        generate_split(config, &encoder, Split::Test, config.test_images),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> GenConfig {
        GenConfig {
            n_images: 30,
            val_images: 5,
            test_images: 5,
            duplicate_rate: 0.5,
            label_noise: 0.3,
            ..GenConfig::default()
        }
    }

    fn table(c: &GenConfig) -> FixedEmbeddingTable {
        synthetic_embedding_table(&c.concepts, 8, c.seed)
    }

    #[test]
    fn deterministic() {
        let c = config();
        let t = table(&c);
        assert_eq!(generate(&c, &t).unwrap(), generate(&c, &t).unwrap());
    }

    #[test]
    fn every_phrase_has_exactly_one_matching_proposal() {
        let c = config();
        let (train, _, _) = generate(&c, &table(&c)).unwrap();
        for ex in &train.examples {
            assert_eq!(ex.proposals.len(), c.proposals_per_image);
            let s = &ex.sentences[0];
            assert_eq!(s.phrases.len(), c.phrases_per_image);
            for p in &s.phrases {
                let gt = p.gt_boxes.as_ref().unwrap();
                assert_eq!(gt.len(), 1);
                assert_eq!(ex.proposals.iter().filter(|q| q.bbox == gt[0]).count(), 1);
                let span = crate::data::char_slice(&s.text, p.first_char, p.last_char).unwrap();
                assert_eq!(tokenize(span), p.tokens);
            }
        }
    }

    #[test]
    fn rejects_unknown_concepts_and_bad_probabilities() {
        let mut c = config();
        let t = table(&c);
        c.concepts.push("spaceship".into());
        assert!(matches!(generate(&c, &t), Err(Error::Config(_))));
        let c = GenConfig { label_noise: 1.5, ..config() };
        assert!(generate(&c, &t).is_err());
    }
}
