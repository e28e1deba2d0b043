//! Per-image and per-sentence quantities that do not depend on trained parameters,
//! computed once and reused by training and evaluation.

use rayon::prelude::*;

use crate::concept::{concept_scores_from_embeddings, proposal_relations, ConceptScores};
use crate::data::{Corpus, ImageExample};
use crate::embeddings::FixedEmbeddingTable;
use crate::error::Result;
use crate::linalg::Matrix;
use crate::model::{spatial_features, ModelParams, SPATIAL_DIM};
use crate::phrase::{AnalyzedPhrase, Lexicon, SpatialVector};
use crate::prediction::learned_scores;
use crate::training::sentence_signature;

#[derive(Debug, Clone)]
pub struct PreparedImage {
    pub spatials: Vec<[f64; SPATIAL_DIM]>,
    pub relations: Vec<SpatialVector>,
    pub label_vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct PreparedSentence {
    pub phrases: Vec<AnalyzedPhrase>,
    pub head_vectors: Vec<Vec<f64>>,
    /// Mean fixed embedding signature; None for sentences without phrases.
    pub signature: Option<Vec<f64>>,
}

impl PreparedSentence {
    pub fn token_lists(&self) -> Vec<&[String]> {
        self.phrases.iter().map(|p| p.tokens.as_slice()).collect()
    }

    pub fn codes(&self) -> Vec<SpatialVector> {
        self.phrases.iter().map(|p| p.s_t).collect()
    }
}

#[derive(Debug, Clone)]
pub struct PreparedCorpus<'a> {
    pub corpus: &'a Corpus,
    pub images: Vec<PreparedImage>,
    /// `sentences[i][s]` for sentence `s` of image `i`.
    pub sentences: Vec<Vec<PreparedSentence>>,
}

pub fn prepare_image(ex: &ImageExample, fixed: &FixedEmbeddingTable) -> Result<PreparedImage> {
    let (w, h) = (f64::from(ex.width), f64::from(ex.height));
    let spatials = ex
        .proposals
        .iter()
        .map(|p| spatial_features(&p.bbox, w, h))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedImage {
        spatials,
        relations: proposal_relations(&ex.proposals, w, h),
        label_vectors: ex.proposals.iter().map(|p| fixed.lookup(&p.label).vector).collect(),
    })
}

impl<'a> PreparedCorpus<'a> {
    pub fn new(corpus: &'a Corpus, fixed: &FixedEmbeddingTable, lexicon: &Lexicon) -> Result<Self> {
        let per_image = corpus
            .examples
            .par_iter()
            .map(|ex| {
                let image = prepare_image(ex, fixed)?;
                let sentences = ex
                    .sentences
                    .iter()
                    .map(|s| {
                        let phrases = s
                            .phrases
                            .iter()
                            .map(|p| lexicon.analyze(&p.tokens, p.head.as_deref()))
                            .collect::<Result<Vec<_>>>()?;
                        let head_vectors = phrases.iter().map(|p| fixed.lookup(&p.head).vector).collect();
                        let signature = if s.phrases.is_empty() {
                            None
                        } else {
                            Some(sentence_signature(&s.phrases, fixed)?)
                        };
                        Ok(PreparedSentence {
                            phrases,
                            head_vectors,
                            signature,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((image, sentences))
            })
            .collect::<Result<Vec<_>>>()?;
        let (images, sentences) = per_image.into_iter().unzip();
        Ok(PreparedCorpus {
            corpus,
            images,
            sentences,
        })
    }

    /// Concept scores of sentence `(image, sentence)` against the proposals of `target`.
    pub fn concept(&self, image: usize, sentence: usize, target: usize, spatial_mask: bool) -> ConceptScores {
        let s = &self.sentences[image][sentence];
        let t = &self.images[target];
        concept_scores_from_embeddings(&s.head_vectors, &s.codes(), &t.label_vectors, &t.relations, spatial_mask)
    }

    /// Learned scores of sentence `(image, sentence)` against its own image.
    pub fn learned(&self, params: &ModelParams, image: usize, sentence: usize) -> Result<Matrix> {
        let s = &self.sentences[image][sentence];
        let (visual, _) = params.visual_forward(&self.corpus.examples[image].proposals, &self.images[image].spatials)?;
        let (textual, _) = params.textual_forward_all(&s.token_lists())?;
        learned_scores(&visual, &textual)
    }
}
