//! Untrained concept scores: word-embedding similarity between each phrase head and
//! each proposal label, masked to -1 where the phrase names a location the proposal
//! does not hold relative to other proposals of the same label.

use std::collections::HashMap;

use crate::data::Proposal;
use crate::embeddings::{cosine_unchecked, FixedEmbeddingTable};
use crate::linalg::Matrix;
use crate::phrase::{AnalyzedPhrase, SpatialVector};

/// Centre tolerance as a fraction of the image dimension.
pub const CENTER_TOLERANCE: f64 = 0.1;

/// m x p concept scores; entries are cosines in [-1, 1] or exactly -1 when masked.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptScores(pub Matrix);

impl ConceptScores {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Relative-position codes for proposals, computed within groups sharing a label.
/// Singleton groups get the zero code.
pub fn proposal_relations(proposals: &[Proposal], image_w: f64, image_h: f64) -> Vec<SpatialVector> {
    let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
    for (k, p) in proposals.iter().enumerate() {
        groups.entry(p.label.as_str()).or_default().push(k);
    }
    let centers: Vec<(f64, f64)> = proposals.iter().map(|p| p.bbox.center()).collect();
    let mut out = vec![SpatialVector::zeros(); proposals.len()];

    for members in groups.values().filter(|m| m.len() >= 2) {
        let xs: Vec<f64> = members.iter().map(|&k| centers[k].0).collect();
        let ys: Vec<f64> = members.iter().map(|&k| centers[k].1).collect();
        let axis = |vals: &[f64], extent: f64, lo: usize, hi: usize, mid: usize, out: &mut Vec<SpatialVector>| {
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sorted = vals.to_vec();
            sorted.sort_by(f64::total_cmp);
            let med = median(&sorted);
            for (&k, &v) in members.iter().zip(vals) {
                if v == min {
                    out[k].set(lo);
                }
                if v == max {
                    out[k].set(hi);
                }
                if (v - med).abs() <= CENTER_TOLERANCE * extent {
                    out[k].set(mid);
                }
            }
        };
        axis(&xs, image_w, SpatialVector::LEFT, SpatialVector::RIGHT, SpatialVector::H_CENTER, &mut out);
        axis(&ys, image_h, SpatialVector::TOP, SpatialVector::BOTTOM, SpatialVector::V_CENTER, &mut out);
    }
    out
}

/// Whether the spatial mask lets a (phrase, proposal) pair through: phrases without
/// locative terms are never masked, otherwise the codes must share a slot.
pub fn mask_allows(s_t: &SpatialVector, s_v: &SpatialVector) -> bool {
    s_t.is_zero() || s_t.dot(s_v) > 0
}

pub fn concept_scores(
    phrases: &[AnalyzedPhrase],
    proposals: &[Proposal],
    relations: &[SpatialVector],
    fixed: &FixedEmbeddingTable,
    spatial_mask: bool,
) -> ConceptScores {
    assert_eq!(relations.len(), proposals.len(), "relations must align with proposals");
    let heads: Vec<Vec<f64>> = phrases.iter().map(|p| fixed.lookup(&p.head).vector).collect();
    let codes: Vec<SpatialVector> = phrases.iter().map(|p| p.s_t).collect();
    let labels: Vec<Vec<f64>> = proposals.iter().map(|p| fixed.lookup(&p.label).vector).collect();
    concept_scores_from_embeddings(&heads, &codes, &labels, relations, spatial_mask)
}

/// Same as [`concept_scores`] with the head and label embeddings already looked up.
pub fn concept_scores_from_embeddings(
    heads: &[Vec<f64>],
    phrase_codes: &[SpatialVector],
    labels: &[Vec<f64>],
    relations: &[SpatialVector],
    spatial_mask: bool,
) -> ConceptScores {
    let mut s = Matrix::zeros(heads.len(), labels.len());
    for (j, (head, s_t)) in heads.iter().zip(phrase_codes).enumerate() {
        for (k, label) in labels.iter().enumerate() {
            let value = if !spatial_mask || mask_allows(s_t, &relations[k]) {
                cosine_unchecked(head, label)
            } else {
                -1.0
            };
            s.set(j, k, value);
        }
    }
    ConceptScores(s)
}
