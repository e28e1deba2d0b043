//! IoU and pointing-game metrics, corpus evaluation, omega sweeps and the component
//! ablation table.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BoxCoords, Corpus};
use crate::embeddings::FixedEmbeddingTable;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::ModelParams;
use crate::phrase::Lexicon;
use crate::prediction::{argmax, check_omega, fuse};
use crate::prepared::PreparedCorpus;

pub const IOU_THRESHOLD: f64 = 0.5;

pub fn iou(a: &BoxCoords, b: &BoxCoords) -> Result<f64> {
    for bx in [a, b] {
        if !(bx.area() > 0.0) {
            return Err(Error::Argument(format!("degenerate box {bx:?}")));
        }
    }
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return Ok(0.0);
    }
    let union = a.area() + b.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Whether the centre of `pred` lies inside `gt`, boundary included.
pub fn pointing_hit(pred: &BoxCoords, gt: &BoxCoords) -> bool {
    let (cx, cy) = pred.center();
    cx >= gt.x1 && cx <= gt.x2 && cy >= gt.y1 && cy <= gt.y2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GtMode {
    /// Merge all ground-truth boxes of a phrase into their enclosing box.
    #[default]
    Union,
    /// A hit against any single ground-truth box counts.
    AnyBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub omega: f64,
    pub spatial_mask: bool,
    pub gt_mode: GtMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            omega: 0.5,
            spatial_mask: true,
            gt_mode: GtMode::Union,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseResult {
    pub image_id: String,
    pub sentence: usize,
    pub phrase: usize,
    pub chosen: usize,
    pub chosen_box: BoxCoords,
    pub best_iou: f64,
    pub hit: bool,
    pub pointing_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub pointing_accuracy: f64,
    pub scored: usize,
    pub hits: usize,
    pub pointing_hits: usize,
    pub unscored: usize,
    pub omega: f64,
    pub spatial_mask: bool,
    pub gt_mode: GtMode,
    pub checkpoint: Option<String>,
    pub records: Vec<PhraseResult>,
}

/// Score matrices for every sentence of a corpus, ready to be fused for any omega.
#[derive(Debug, Clone)]
pub struct ScoredCorpus<'a> {
    corpus: &'a Corpus,
    /// `[image][sentence]` -> (S with mask, S without mask, P)
    entries: Vec<Vec<SentenceScores>>,
}

#[derive(Debug, Clone)]
struct SentenceScores {
    masked: Matrix,
    unmasked: Matrix,
    learned: Option<Matrix>,
}

impl<'a> ScoredCorpus<'a> {
    pub fn new(prepared: &PreparedCorpus<'a>, params: Option<&ModelParams>) -> Result<Self> {
        let entries = (0..prepared.images.len())
            .into_par_iter()
            .map(|i| {
                (0..prepared.sentences[i].len())
                    .map(|s| {
                        Ok(SentenceScores {
                            masked: prepared.concept(i, s, i, true).0,
                            unmasked: prepared.concept(i, s, i, false).0,
                            learned: params.map(|p| prepared.learned(p, i, s)).transpose()?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScoredCorpus {
            corpus: prepared.corpus,
            entries,
        })
    }

    pub fn has_learned(&self) -> bool {
        self.entries.iter().flatten().all(|e| e.learned.is_some())
    }

    /// Proposal chosen for every phrase, in corpus order.
    pub fn choices(&self, omega: f64, spatial_mask: bool) -> Result<Vec<Vec<Vec<usize>>>> {
        check_omega(omega)?;
        self.entries
            .iter()
            .map(|sentences| {
                sentences
                    .iter()
                    .map(|e| {
                        let s = if spatial_mask { &e.masked } else { &e.unmasked };
                        let p = match (&e.learned, omega) {
                            (_, 0.0) => None,
                            (Some(p), _) => Some(p),
                            (None, _) => {
                                return Err(Error::State(
                                    "learned scores requested without model parameters".into(),
                                ))
                            }
                        };
                        Ok((0..s.rows())
                            .map(|j| {
                                let row: Vec<f64> = match p {
                                    Some(p) => s.row(j).iter().zip(p.row(j)).map(|(&sv, &pv)| fuse(pv, sv, omega)).collect(),
                                    None => s.row(j).to_vec(),
                                };
                                argmax(&row).expect("images have at least one proposal")
                            })
                            .collect())
                    })
                    .collect()
            })
            .collect()
    }

    pub fn report(&self, options: &EvalOptions) -> Result<EvalReport> {
        let choices = self.choices(options.omega, options.spatial_mask)?;
        Ok(score_choices(self.corpus, &choices, options))
    }
}

/// Compares chosen proposals with the ground truth.
pub fn score_choices(corpus: &Corpus, choices: &[Vec<Vec<usize>>], options: &EvalOptions) -> EvalReport {
    let mut records = Vec::new();
    let mut unscored = 0;
    for (ex, per_sentence) in corpus.examples.iter().zip(choices) {
        for (si, (sentence, chosen)) in ex.sentences.iter().zip(per_sentence).enumerate() {
            for (pi, (phrase, &k)) in sentence.phrases.iter().zip(chosen).enumerate() {
                let gts = match &phrase.gt_boxes {
                    Some(g) if !g.is_empty() => g,
                    _ => {
                        unscored += 1;
                        continue;
                    }
                };
                let pred = ex.proposals[k].bbox;
                let (best_iou, pointing) = match options.gt_mode {
                    GtMode::Union => {
                        let merged = gts[1..].iter().fold(gts[0], |acc, b| acc.union(b));
                        (iou(&pred, &merged).unwrap_or(0.0), pointing_hit(&pred, &merged))
                    }
                    GtMode::AnyBox => (
                        gts.iter().map(|g| iou(&pred, g).unwrap_or(0.0)).fold(0.0, f64::max),
                        gts.iter().any(|g| pointing_hit(&pred, g)),
                    ),
                };
                records.push(PhraseResult {
                    image_id: ex.image_id.clone(),
                    sentence: si,
                    phrase: pi,
                    chosen: k,
                    chosen_box: pred,
                    best_iou,
                    hit: best_iou >= IOU_THRESHOLD,
                    pointing_hit: pointing,
                });
            }
        }
    }
    let scored = records.len();
    let hits = records.iter().filter(|r| r.hit).count();
    let pointing_hits = records.iter().filter(|r| r.pointing_hit).count();
    assert!(
        records.iter().all(|r| !r.hit || r.pointing_hit),
        "an IoU hit without a pointing hit is geometrically impossible"
    );
    let ratio = |n: usize| if scored == 0 { 0.0 } else { n as f64 / scored as f64 };
    EvalReport {
        accuracy: ratio(hits),
        pointing_accuracy: ratio(pointing_hits),
        scored,
        hits,
        pointing_hits,
        unscored,
        omega: options.omega,
        spatial_mask: options.spatial_mask,
        gt_mode: options.gt_mode,
        checkpoint: None,
        records,
    }
}

/// Evaluates grounding on a corpus. Without parameters only the concept scores are
/// used and the reported omega is 0.
pub fn evaluate(
    corpus: &Corpus,
    params: Option<&ModelParams>,
    fixed: &FixedEmbeddingTable,
    lexicon: &Lexicon,
    options: &EvalOptions,
) -> Result<EvalReport> {
    check_omega(options.omega)?;
    let prepared = PreparedCorpus::new(corpus, fixed, lexicon)?;
    evaluate_prepared(&prepared, params, options)
}

pub fn evaluate_prepared(
    prepared: &PreparedCorpus<'_>,
    params: Option<&ModelParams>,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let mut options = *options;
    if params.is_none() {
        options.omega = 0.0;
    }
    let scored = ScoredCorpus::new(prepared, params.filter(|_| options.omega > 0.0))?;
    scored.report(&options)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub omega: f64,
    pub accuracy: f64,
    pub pointing_accuracy: f64,
}

/// One evaluation per omega over a single shared forward pass.
pub fn sweep_omega(scored: &ScoredCorpus<'_>, omegas: &[f64], spatial_mask: bool, gt_mode: GtMode) -> Result<Vec<SweepRow>> {
    if omegas.is_empty() {
        return Err(Error::Argument("omega list is empty".into()));
    }
    for &w in omegas {
        check_omega(w)?;
    }
    omegas
        .iter()
        .map(|&omega| {
            let r = scored.report(&EvalOptions {
                omega,
                spatial_mask,
                gt_mode,
            })?;
            Ok(SweepRow {
                omega,
                accuracy: r.accuracy,
                pointing_accuracy: r.pointing_accuracy,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub concept: bool,
    pub trained: bool,
    pub position: bool,
    pub omega: f64,
    pub accuracy: f64,
    pub pointing_accuracy: f64,
}

/// Five configurations: trained-only, concept-only, concept+position,
/// concept+trained, and all components.
pub fn ablation(scored: &ScoredCorpus<'_>, omega: f64, gt_mode: GtMode) -> Result<Vec<AblationRow>> {
    check_omega(omega)?;
    let rows = [
        (false, true, false, 1.0),
        (true, false, false, 0.0),
        (true, false, true, 0.0),
        (true, true, false, omega),
        (true, true, true, omega),
    ];
    rows.iter()
        .map(|&(concept, trained, position, w)| {
            let r = scored.report(&EvalOptions {
                omega: w,
                spatial_mask: position,
                gt_mode,
            })?;
            Ok(AblationRow {
                concept,
                trained,
                position,
                omega: w,
                accuracy: r.accuracy,
                pointing_accuracy: r.pointing_accuracy,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BoxCoords {
        BoxCoords::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_cases() {
        assert_eq!(iou(&b(1.0, 1.0, 5.0, 4.0), &b(1.0, 1.0, 5.0, 4.0)).unwrap(), 1.0);
        assert_eq!(iou(&b(0.0, 0.0, 1.0, 1.0), &b(2.0, 2.0, 3.0, 3.0)).unwrap(), 0.0);
        assert!((iou(&b(0.0, 0.0, 2.0, 2.0), &b(1.0, 0.0, 3.0, 2.0)).unwrap() - 2.0 / 6.0).abs() < 1e-9);
        let flat = BoxCoords { x1: 1.0, y1: 1.0, x2: 1.0, y2: 3.0 };
        assert!(iou(&flat, &b(0.0, 0.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn pointing_cases() {
        assert!(pointing_hit(&b(2.0, 2.0, 6.0, 6.0), &b(2.0, 2.0, 6.0, 6.0)));
        assert!(!pointing_hit(&b(50.0, 50.0, 60.0, 60.0), &b(0.0, 0.0, 10.0, 10.0)));
        assert!(pointing_hit(&b(0.0, 0.0, 10.0, 10.0), &b(4.0, 4.0, 20.0, 20.0)));
        // centre on the boundary counts
        assert!(pointing_hit(&b(0.0, 0.0, 8.0, 8.0), &b(4.0, 4.0, 20.0, 20.0)));
    }

    fn arb_box() -> impl Strategy<Value = BoxCoords> {
        (0.0f64..90.0, 0.0f64..90.0, 0.5f64..60.0, 0.5f64..60.0)
            .prop_map(|(x, y, w, h)| b(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_properties(a in arb_box(), c in arb_box()) {
            let ac = iou(&a, &c).unwrap();
            prop_assert_eq!(ac, iou(&c, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ac));
            prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
            if ac >= IOU_THRESHOLD {
                prop_assert!(pointing_hit(&a, &c));
            }
        }
    }
}
