//! Contrastive image-sentence training. Each positive `(image, sentence)` is paired
//! with the batch member whose sentence signature is closest, and the loss is
//! `-f_pair(image, sentence) + f_pair(negative image, sentence)`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::concept::ConceptScores;
use crate::data::{Corpus, PhraseRecord};
use crate::embeddings::{cosine_unchecked, EmbeddingInit, FixedEmbeddingTable, TrainableEmbeddingTable};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_prepared, EvalOptions, GtMode};
use crate::linalg::{axpy, dot, Matrix};
use crate::model::{Gradients, ModelParams, Precision, DEFAULT_MAX_PHRASE_LEN};
use crate::phrase::Lexicon;
use crate::prediction::{check_omega, fuse, learned_scores};
use crate::prepared::PreparedCorpus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// How refined scores are turned into the non-negative quantities the pair ratio uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreShift {
    /// `(score + 1) / 2`, mapping [-1, 1] onto [0, 1].
    #[default]
    Affine,
    /// Scores used as they are; the ratio can be ill-defined.
    Raw,
}

impl ScoreShift {
    fn apply(self, x: f64) -> f64 {
        match self {
            ScoreShift::Affine => (x + 1.0) / 2.0,
            ScoreShift::Raw => x,
        }
    }

    fn slope(self) -> f64 {
        match self {
            ScoreShift::Affine => 0.5,
            ScoreShift::Raw => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignatureSource {
    #[default]
    Fixed,
    Trainable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub omega: f64,
    pub seed: u64,
    pub fraction: f64,
    pub epsilon_norm: f64,
    pub optimizer: OptimizerKind,
    pub score_shift: ScoreShift,
    pub signature: SignatureSource,
    pub spatial_mask: bool,
    pub precision: Precision,
    /// Global gradient-norm clip; off when None.
    pub clip_norm: Option<f64>,
    pub embedding_init: EmbeddingInit,
    pub max_phrase_len: usize,
    pub gt_mode: GtMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            epochs: 30,
            batch_size: 32,
            omega: 0.5,
            seed: 0,
            fraction: 1.0,
            epsilon_norm: 1e-8,
            optimizer: OptimizerKind::Sgd,
            score_shift: ScoreShift::Affine,
            signature: SignatureSource::Fixed,
            spatial_mask: true,
            precision: Precision::F64,
            clip_norm: None,
            embedding_init: EmbeddingInit::CopyFixed,
            max_phrase_len: DEFAULT_MAX_PHRASE_LEN,
            gt_mode: GtMode::Union,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return bad(format!("fraction must lie in (0, 1], got {}", self.fraction));
        }
        if !(self.epsilon_norm >= 0.0) {
            return bad("epsilon_norm must be non-negative".into());
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip_norm must be positive".into());
        }
        if self.max_phrase_len == 0 {
            return bad("max_phrase_len must be positive".into());
        }
        check_omega(self.omega).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Mean over phrases of the mean fixed embedding of each phrase's tokens.
pub fn sentence_signature(phrases: &[PhraseRecord], fixed: &FixedEmbeddingTable) -> Result<Vec<f64>> {
    let token_lists: Vec<&[String]> = phrases.iter().map(|p| p.tokens.as_slice()).collect();
    signature_with(&token_lists, fixed.dim(), |t| fixed.lookup(t).vector)
}

fn signature_with(phrases: &[&[String]], dim: usize, embed: impl Fn(&str) -> Vec<f64>) -> Result<Vec<f64>> {
    let used: Vec<&[String]> = phrases.iter().copied().filter(|t| !t.is_empty()).collect();
    if used.is_empty() {
        return Err(Error::Argument("sentence signature needs at least one token".into()));
    }
    let mut sig = vec![0.0; dim];
    for tokens in &used {
        let mut mean = vec![0.0; dim];
        for t in tokens.iter() {
            axpy(1.0, &embed(t), &mut mean);
        }
        axpy(1.0 / tokens.len() as f64, &mean, &mut sig);
    }
    sig.iter_mut().for_each(|v| *v /= used.len() as f64);
    Ok(sig)
}

/// Batch member whose signature is most similar to the positive's, skipping members
/// showing the same image. Ties go to the lowest index.
pub fn select_negative(signatures: &[Vec<f64>], image_ids: &[&str], positive: usize) -> Result<usize> {
    let b = signatures.len();
    if b < 2 || image_ids.len() != b {
        return Err(Error::Argument(format!(
            "negative selection needs a batch of at least 2 aligned members, got {b}"
        )));
    }
    if positive >= b {
        return Err(Error::Argument(format!("positive index {positive} outside batch of {b}")));
    }
    let anchor = &signatures[positive];
    let mut best: Option<(usize, f64)> = None;
    for (i, sig) in signatures.iter().enumerate() {
        if i == positive || image_ids[i] == image_ids[positive] {
            continue;
        }
        let sim = cosine_unchecked(sig, anchor);
        if best.is_none_or(|(_, s)| sim > s) {
            best = Some((i, sim));
        }
    }
    best.map(|(i, _)| i).ok_or_else(|| {
        Error::Sampling(format!(
            "every batch member shares image {} with the positive",
            image_ids[positive]
        ))
    })
}

/// `f_pair` from refined scores: mean over phrases of the largest normalized score.
pub fn pair_similarity_from_refined(refined: &Matrix, shift: ScoreShift, eps: f64) -> f64 {
    let m = refined.rows();
    if m == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for row in refined.iter_rows() {
        let q: Vec<f64> = row.iter().map(|&x| shift.apply(x)).collect();
        let z: f64 = q.iter().sum::<f64>() + eps;
        total += q.iter().map(|&x| x / z).fold(f64::NEG_INFINITY, f64::max);
    }
    total / m as f64
}

/// `f_pair` together with its gradients with respect to visual and textual features.
#[derive(Debug, Clone)]
pub struct PairTerm {
    pub value: f64,
    pub d_visual: Matrix,
    pub d_textual: Matrix,
}

pub fn pair_term(
    visual: &Matrix,
    textual: &Matrix,
    concept: &ConceptScores,
    omega: f64,
    shift: ScoreShift,
    eps: f64,
) -> Result<PairTerm> {
    let p = learned_scores(visual, textual)?;
    let s = concept.matrix();
    let (m, np) = p.shape();
    if s.shape() != (m, np) {
        return Err(Error::Argument("concept and learned scores differ in shape".into()));
    }
    let mut d_visual = Matrix::zeros(visual.rows(), visual.cols());
    let mut d_textual = Matrix::zeros(textual.rows(), textual.cols());
    if m == 0 || np == 0 {
        return Ok(PairTerm { value: 0.0, d_visual, d_textual });
    }
    let v_norms: Vec<f64> = visual.iter_rows().map(|r| dot(r, r).sqrt()).collect();
    let t_norms: Vec<f64> = textual.iter_rows().map(|r| dot(r, r).sqrt()).collect();
    let inv_m = 1.0 / m as f64;
    let mut value = 0.0;
    let mut q = vec![0.0; np];
    for j in 0..m {
        for k in 0..np {
            q[k] = shift.apply(fuse(p.get(j, k), s.get(j, k), omega));
        }
        let z = q.iter().sum::<f64>() + eps;
        let mut best = 0;
        for k in 1..np {
            if q[k] / z > q[best] / z {
                best = k;
            }
        }
        value += q[best] / z * inv_m;
        if omega == 0.0 {
            continue;
        }
        let t = textual.row(j);
        for k in 0..np {
            let d_q = inv_m * (if k == best { 1.0 / z } else { 0.0 } - q[best] / (z * z));
            let d_p = d_q * shift.slope() * omega;
            if d_p == 0.0 || v_norms[k] < 1e-12 || t_norms[j] < 1e-12 {
                continue;
            }
            let v = visual.row(k);
            let cos = p.get(j, k);
            let nn = v_norms[k] * t_norms[j];
            // d cos / dv = t/(|v||t|) - cos v/|v|^2, symmetrically for t
            let dv = d_visual.row_mut(k);
            axpy(d_p / nn, t, dv);
            axpy(-d_p * cos / (v_norms[k] * v_norms[k]), v, dv);
            let dt = d_textual.row_mut(j);
            axpy(d_p / nn, v, dt);
            axpy(-d_p * cos / (t_norms[j] * t_norms[j]), t, dt);
        }
    }
    Ok(PairTerm { value, d_visual, d_textual })
}

/// Scoring settings shared by every loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossSettings {
    pub omega: f64,
    pub shift: ScoreShift,
    pub eps: f64,
    pub spatial_mask: bool,
}

impl LossSettings {
    pub fn from_config(c: &TrainConfig) -> Self {
        LossSettings {
            omega: c.omega,
            shift: c.score_shift,
            eps: c.epsilon_norm,
            spatial_mask: c.spatial_mask,
        }
    }
}

/// Loss of `(image, sentence)` against the negative image, plus its gradient when
/// `grads` is given.
pub fn pair_loss(
    prepared: &PreparedCorpus<'_>,
    params: &ModelParams,
    settings: &LossSettings,
    image: usize,
    sentence: usize,
    negative_image: usize,
    grads: Option<&mut Gradients>,
) -> Result<f64> {
    let corpus = prepared.corpus;
    if corpus.examples[image].image_id == corpus.examples[negative_image].image_id {
        return Err(Error::Argument("negative image must differ from the positive image".into()));
    }
    let sent = &prepared.sentences[image][sentence];
    let (textual, traces) = params.textual_forward_all(&sent.token_lists())?;
    let (vis_pos, cache_pos) =
        params.visual_forward(&corpus.examples[image].proposals, &prepared.images[image].spatials)?;
    let (vis_neg, cache_neg) = params.visual_forward(
        &corpus.examples[negative_image].proposals,
        &prepared.images[negative_image].spatials,
    )?;
    let s_pos = prepared.concept(image, sentence, image, settings.spatial_mask);
    let s_neg = prepared.concept(image, sentence, negative_image, settings.spatial_mask);
    let (w, shift, eps) = (settings.omega, settings.shift, settings.eps);
    let pos = pair_term(&vis_pos, &textual, &s_pos, w, shift, eps)?;
    let neg = pair_term(&vis_neg, &textual, &s_neg, w, shift, eps)?;
    let loss = -pos.value + neg.value;

    if let Some(grads) = grads {
        let mut d_pos = pos.d_visual;
        d_pos.as_mut_slice().iter_mut().for_each(|v| *v = -*v);
        params.visual_backward(&cache_pos, &d_pos, grads)?;
        params.visual_backward(&cache_neg, &neg.d_visual, grads)?;
        let mut d_text = neg.d_textual;
        axpy(-1.0, pos.d_textual.as_slice(), d_text.as_mut_slice());
        for (j, trace) in traces.iter().enumerate() {
            params.textual_backward(trace, d_text.row(j), grads)?;
        }
    }
    Ok(loss)
}

/// SGD or Adam over every parameter block. Embedding rows only move when they have
/// a gradient.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step: u64,
    moments: Option<AdamMoments>,
}

#[derive(Debug, Clone)]
struct AdamMoments {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    m_emb: Matrix,
    v_emb: Matrix,
    last_emb_step: Vec<u64>,
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            step: 0,
            moments: None,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients) {
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.dense_blocks_mut().into_iter().zip(grads.dense_blocks()) {
                    axpy(-lr, g, p);
                }
                let emb = params.embeddings.matrix_mut();
                for (&row, g) in &grads.embeddings {
                    axpy(-lr, g, emb.row_mut(row));
                }
            }
            OptimizerKind::Adam => {
                let t = self.step;
                let moments = self.moments.get_or_insert_with(|| AdamMoments {
                    m: grads.dense_blocks().iter().map(|b| vec![0.0; b.len()]).collect(),
                    v: grads.dense_blocks().iter().map(|b| vec![0.0; b.len()]).collect(),
                    m_emb: Matrix::zeros(params.embeddings.len(), params.embeddings.dim()),
                    v_emb: Matrix::zeros(params.embeddings.len(), params.embeddings.dim()),
                    last_emb_step: vec![0; params.embeddings.len()],
                });
                let c1 = 1.0 - ADAM_B1.powi(t as i32);
                let c2 = 1.0 - ADAM_B2.powi(t as i32);
                let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                    for i in 0..p.len() {
                        m[i] = ADAM_B1 * m[i] + (1.0 - ADAM_B1) * g[i];
                        v[i] = ADAM_B2 * v[i] + (1.0 - ADAM_B2) * g[i] * g[i];
                        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                    }
                };
                for (((p, g), m), v) in params
                    .dense_blocks_mut()
                    .into_iter()
                    .zip(grads.dense_blocks())
                    .zip(&mut moments.m)
                    .zip(&mut moments.v)
                {
                    update(p, g, m, v);
                }
                let emb = params.embeddings.matrix_mut();
                for (&row, g) in &grads.embeddings {
                    // lazily decay moments over the steps this row sat idle
                    let idle = t - moments.last_emb_step[row] - 1;
                    if idle > 0 {
                        let d1 = ADAM_B1.powi(idle as i32);
                        let d2 = ADAM_B2.powi(idle as i32);
                        moments.m_emb.row_mut(row).iter_mut().for_each(|x| *x *= d1);
                        moments.v_emb.row_mut(row).iter_mut().for_each(|x| *x *= d2);
                    }
                    moments.last_emb_step[row] = t;
                    update(
                        emb.row_mut(row),
                        g,
                        moments.m_emb.row_mut(row),
                        moments.v_emb.row_mut(row),
                    );
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_accuracy: f64,
    pub val_pointing_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_params: ModelParams,
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    pub log: Vec<EpochLog>,
    pub checkpoint: Option<PathBuf>,
}

/// Builds the trainable vocabulary from every label and phrase token of `corpora`
/// and initializes all parameters from `seed`.
pub fn init_params(
    corpora: &[&Corpus],
    fixed: &FixedEmbeddingTable,
    config: &TrainConfig,
) -> Result<ModelParams> {
    let feature_dim = corpora
        .first()
        .map(|c| c.feature_dim)
        .ok_or_else(|| Error::Argument("no corpus to build a vocabulary from".into()))?;
    if corpora.iter().any(|c| c.feature_dim != feature_dim) {
        return Err(Error::Schema("corpora disagree on feature dimension".into()));
    }
    let mut tokens = Vec::new();
    for c in corpora {
        for ex in &c.examples {
            for p in &ex.proposals {
                tokens.extend(crate::phrase::tokenize(&p.label));
            }
            for s in &ex.sentences {
                for ph in &s.phrases {
                    tokens.extend(ph.tokens.iter().cloned());
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_e11b);
    let emb = TrainableEmbeddingTable::build(tokens, fixed, config.embedding_init, &mut rng);
    let mut params = ModelParams::init(emb, fixed.dim(), feature_dim, config.seed)?;
    params.max_phrase_len = config.max_phrase_len;
    if config.precision == Precision::F32 {
        params.round_to_f32();
    }
    Ok(params)
}

struct Member {
    image: usize,
    sentence: usize,
}

fn make_batches<R: Rng>(prepared: &PreparedCorpus<'_>, batch_size: usize, rng: &mut R) -> Vec<Vec<Member>> {
    // one sentence per image per epoch, so an image appears at most once per batch
    let mut members: Vec<Member> = prepared
        .sentences
        .iter()
        .enumerate()
        .filter_map(|(i, sents)| {
            let usable: Vec<usize> = (0..sents.len()).filter(|&s| sents[s].signature.is_some()).collect();
            if usable.is_empty() {
                None
            } else {
                Some(Member {
                    image: i,
                    sentence: usable[rng.random_range(0..usable.len())],
                })
            }
        })
        .collect();
    members.shuffle(rng);
    let mut batches: Vec<Vec<Member>> = Vec::new();
    let mut it = members.into_iter().peekable();
    while it.peek().is_some() {
        batches.push(it.by_ref().take(batch_size).collect());
    }
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(tail);
    }
    batches
}

fn batch_signatures(
    prepared: &PreparedCorpus<'_>,
    params: &ModelParams,
    source: SignatureSource,
    batch: &[Member],
) -> Result<Vec<Vec<f64>>> {
    batch
        .iter()
        .map(|m| {
            let s = &prepared.sentences[m.image][m.sentence];
            match source {
                SignatureSource::Fixed => Ok(s.signature.clone().expect("usable sentences have signatures")),
                SignatureSource::Trainable => {
                    signature_with(&s.token_lists(), params.g(), |t| params.embeddings.lookup(t).to_vec())
                }
            }
        })
        .collect()
}

/// One optimizer step over a batch; returns the mean batch loss.
fn train_batch(
    prepared: &PreparedCorpus<'_>,
    params: &mut ModelParams,
    optimizer: &mut Optimizer,
    config: &TrainConfig,
    batch: &[Member],
) -> Result<f64> {
    let settings = LossSettings::from_config(config);
    let signatures = batch_signatures(prepared, params, config.signature, batch)?;
    let ids: Vec<&str> = batch
        .iter()
        .map(|m| prepared.corpus.examples[m.image].image_id.as_str())
        .collect();
    let negatives = (0..batch.len())
        .map(|i| select_negative(&signatures, &ids, i))
        .collect::<Result<Vec<_>>>()?;

    let shared: &ModelParams = params;
    let per_member = batch
        .par_iter()
        .zip(&negatives)
        .map(|(m, &neg)| {
            let mut g = Gradients::zeros_like(shared);
            let loss = pair_loss(prepared, shared, &settings, m.image, m.sentence, batch[neg].image, Some(&mut g))?;
            Ok((loss, g))
        })
        .collect::<Result<Vec<_>>>()?;

    // fixed member order keeps the reduction reproducible
    let mut grads = Gradients::zeros_like(params);
    let mut loss = 0.0;
    for (l, g) in &per_member {
        loss += l;
        grads.add_assign(g);
    }
    let inv = 1.0 / batch.len() as f64;
    loss *= inv;
    grads.scale(inv);
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Divergence(format!("non-finite loss {loss}")));
    }
    if let Some(max) = config.clip_norm {
        let n = grads.norm_squared().sqrt();
        if n > max {
            grads.scale(max / n);
        }
    }
    optimizer.step(params, &grads);
    if config.precision == Precision::F32 {
        params.round_to_f32();
    }
    Ok(loss)
}

/// Trains from `init`, selecting the epoch with the best validation accuracy. When
/// `out_dir` is given, writes `train_log.jsonl` and `checkpoint_best.bin` there.
pub fn train(
    train_corpus: &Corpus,
    val_corpus: &Corpus,
    fixed: &FixedEmbeddingTable,
    lexicon: &Lexicon,
    config: &TrainConfig,
    init: ModelParams,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let train_corpus = crate::data::subsample_training(train_corpus, config.fraction, config.seed)?;
    let prepared = PreparedCorpus::new(&train_corpus, fixed, lexicon)?;
    let prepared_val = PreparedCorpus::new(val_corpus, fixed, lexicon)?;
    let eval_options = EvalOptions {
        omega: config.omega,
        spatial_mask: config.spatial_mask,
        gt_mode: config.gt_mode,
    };

    let mut log_writer = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("train_log.jsonl");
            Some((BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?), path))
        }
        None => None,
    };
    let checkpoint = out_dir.map(|d| d.join("checkpoint_best.bin"));
    if let Some(path) = &checkpoint {
        save_checkpoint(path, &init, config.seed, 0)?;
    }

    let mut params = init;
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut best_val: Option<f64> = None;
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let batches = make_batches(&prepared, config.batch_size, &mut rng);
        if batches.is_empty() || batches[0].len() < 2 {
            return Err(Error::Argument("training needs at least two usable image-sentence pairs".into()));
        }
        let mut total = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let loss = train_batch(&prepared, &mut params, &mut optimizer, config, batch).map_err(|e| match e {
                Error::Divergence(m) => Error::Divergence(format!("epoch {epoch}, batch {bi}: {m}")),
                other => other,
            })?;
            total += loss;
        }
        let mean_loss = total / batches.len() as f64;
        let report = evaluate_prepared(&prepared_val, Some(&params), &eval_options)?;
        let entry = EpochLog {
            epoch,
            mean_loss,
            val_accuracy: report.accuracy,
            val_pointing_accuracy: report.pointing_accuracy,
        };
        if let Some((w, path)) = log_writer.as_mut() {
            let line = serde_json::to_string(&entry).expect("log entry serializes");
            writeln!(w, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
            w.flush().map_err(|e| Error::io(path.as_path(), e))?;
        }
        if best_val.is_none_or(|b| report.accuracy > b) {
            best_val = Some(report.accuracy);
            best_epoch = epoch;
            best_params = params.clone();
            if let Some(path) = &checkpoint {
                save_checkpoint(path, &best_params, config.seed, epoch)?;
            }
        }
        log.push(entry);
    }
    Ok(TrainOutcome {
        best_params,
        best_epoch,
        best_val_accuracy: best_val,
        log,
        checkpoint,
    })
}
