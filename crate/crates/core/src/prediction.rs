//! Fusion of learned and concept scores, and argmax grounding.

use crate::concept::ConceptScores;
use crate::embeddings::cosine_unchecked;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// `P[j][k] = cos(visual_k, textual_j)`.
pub fn learned_scores(visual: &Matrix, textual: &Matrix) -> Result<Matrix> {
    if visual.cols() != textual.cols() {
        return Err(Error::Argument(format!(
            "visual dimension {} differs from textual dimension {}",
            visual.cols(),
            textual.cols()
        )));
    }
    let mut p = Matrix::zeros(textual.rows(), visual.rows());
    for (j, t) in textual.iter_rows().enumerate() {
        for (k, v) in visual.iter_rows().enumerate() {
            p.set(j, k, cosine_unchecked(v, t));
        }
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedScores {
    pub matrix: Matrix,
    pub omega: f64,
}

pub fn check_omega(omega: f64) -> Result<()> {
    if (0.0..=1.0).contains(&omega) {
        Ok(())
    } else {
        Err(Error::Argument(format!("omega must lie in [0, 1], got {omega}")))
    }
}

/// `omega * P + (1 - omega) * S`, elementwise.
pub fn refine(learned: &Matrix, concept: &ConceptScores, omega: f64) -> Result<RefinedScores> {
    check_omega(omega)?;
    let s = concept.matrix();
    if learned.shape() != s.shape() {
        return Err(Error::Argument(format!(
            "learned scores {:?} and concept scores {:?} differ in shape",
            learned.shape(),
            s.shape()
        )));
    }
    let data = learned
        .as_slice()
        .iter()
        .zip(s.as_slice())
        .map(|(&p, &c)| fuse(p, c, omega))
        .collect();
    Ok(RefinedScores {
        matrix: Matrix::from_vec(s.rows(), s.cols(), data),
        omega,
    })
}

#[inline]
pub(crate) fn fuse(p: f64, s: f64, omega: f64) -> f64 {
    // Exact at the boundaries so omega=0/1 reproduce S/P bit for bit.
    if omega == 0.0 {
        s
    } else if omega == 1.0 {
        p
    } else {
        omega * p + (1.0 - omega) * s
    }
}

/// First index of the maximum; None for an empty row.
pub fn argmax(row: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, &v) in row.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best.map(|(k, _)| k)
}

/// Proposal chosen for phrase `phrase_index`; ties go to the lowest proposal index.
pub fn ground(scores: &RefinedScores, phrase_index: usize) -> Result<usize> {
    let m = &scores.matrix;
    if phrase_index >= m.rows() {
        return Err(Error::Argument(format!(
            "phrase index {phrase_index} out of range for {} phrases",
            m.rows()
        )));
    }
    argmax(m.row(phrase_index)).ok_or_else(|| Error::State("no proposals to ground to".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn refined(row: Vec<f64>) -> RefinedScores {
        RefinedScores {
            matrix: Matrix::from_rows(&[row]),
            omega: 0.5,
        }
    }

    #[test]
    fn learned_score_cases() {
        let v = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]);
        let t = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 0.0]]);
        let p = learned_scores(&v, &t).unwrap();
        assert!((p.get(0, 0) - 1.0).abs() < 1e-12);
        assert_eq!(p.get(1, 1), 0.0);
        assert!(learned_scores(&v, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn learned_scores_match_brute_force() {
        let v = Matrix::from_rows(&[vec![0.3, -1.1, 2.0], vec![0.9, 0.4, -0.2]]);
        let t = Matrix::from_rows(&[vec![-0.5, 0.8, 0.1], vec![1.7, 0.2, 0.6]]);
        let p = learned_scores(&v, &t).unwrap();
        for j in 0..2 {
            for k in 0..2 {
                let (a, b) = (v.row(k), t.row(j));
                let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((p.get(j, k) - d / (na * nb)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn refine_boundaries_and_interior() {
        let p = Matrix::from_rows(&[vec![0.8, -0.3]]);
        let s = ConceptScores(Matrix::from_rows(&[vec![0.4, -1.0]]));
        assert_eq!(refine(&p, &s, 1.0).unwrap().matrix, p);
        assert_eq!(refine(&p, &s, 0.0).unwrap().matrix, s.0);
        let mid = refine(&p, &s, 0.4).unwrap();
        assert!((mid.matrix.get(0, 0) - 0.56).abs() < 1e-12);
        assert!(refine(&p, &s, 1.2).is_err());
        assert!(refine(&p, &s, -0.1).is_err());
        assert!(refine(&Matrix::zeros(2, 2), &s, 0.5).is_err());
    }

    #[test]
    fn ground_cases() {
        assert_eq!(ground(&refined(vec![0.1, 0.9, 0.3]), 0).unwrap(), 1);
        assert_eq!(ground(&refined(vec![0.5, 0.5]), 0).unwrap(), 0);
        assert_eq!(ground(&refined(vec![-1.0, -1.0, -1.0]), 0).unwrap(), 0);
        assert!(ground(&refined(vec![]), 0).is_err());
        assert!(ground(&refined(vec![1.0]), 3).is_err());
    }

    proptest! {
        #[test]
        fn refined_bounded_and_convex(
            p in prop::collection::vec(-1.0f64..=1.0, 6),
            s in prop::collection::vec(-1.0f64..=1.0, 6),
            omega in 0.0f64..=1.0,
        ) {
            let pm = Matrix::from_vec(2, 3, p);
            let sm = ConceptScores(Matrix::from_vec(2, 3, s));
            let r = refine(&pm, &sm, omega).unwrap();
            for i in 0..6 {
                let (a, b, c) = (pm.as_slice()[i], sm.0.as_slice()[i], r.matrix.as_slice()[i]);
                prop_assert!(c.abs() <= a.abs().max(b.abs()) + 1e-12);
                prop_assert!(c >= a.min(b) - 1e-12 && c <= a.max(b) + 1e-12);
            }
        }
    }
}
