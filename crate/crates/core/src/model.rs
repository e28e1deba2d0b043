//! Trained branches. The visual branch projects `[spatial(5) ‖ detector feature(v)]`
//! to `g` dims and adds the trainable embedding of the proposal label; the textual
//! branch runs a single-layer LSTM over trainable word embeddings and keeps the last
//! hidden state. Gradients are derived by hand.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{BoxCoords, Proposal};
use crate::embeddings::TrainableEmbeddingTable;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, sigmoid, Matrix};

pub const SPATIAL_DIM: usize = 5;
pub const DEFAULT_MAX_PHRASE_LEN: usize = 12;

/// Gate order used throughout: input, forget, output, candidate.
pub const GATES: usize = 4;
const GATE_I: usize = 0;
const GATE_F: usize = 1;
const GATE_O: usize = 2;
const GATE_C: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// `(x1/W, y1/H, x2/W, y2/H, area/(W*H))`.
pub fn spatial_features(b: &BoxCoords, image_w: f64, image_h: f64) -> Result<[f64; SPATIAL_DIM]> {
    if !(image_w > 0.0 && image_h > 0.0) {
        return Err(Error::Argument(format!(
            "image dimensions must be positive, got {image_w}x{image_h}"
        )));
    }
    Ok([
        b.x1 / image_w,
        b.y1 / image_h,
        b.x2 / image_w,
        b.y2 / image_h,
        b.area() / (image_w * image_h),
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// One `tau x (g + tau)` matrix per gate, acting on `[x ‖ h_prev]`.
    pub weights: [Matrix; GATES],
    pub biases: [Vec<f64>; GATES],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub proj_w: Matrix,
    pub proj_b: Vec<f64>,
    pub lstm: LstmParams,
    pub embeddings: TrainableEmbeddingTable,
    pub max_phrase_len: usize,
}

fn xavier<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Matrix::from_vec(rows, cols, data)
}

impl ModelParams {
    /// Seeded initialization; `tau` must equal the embedding dimension `g`.
    pub fn init(embeddings: TrainableEmbeddingTable, tau: usize, v: usize, seed: u64) -> Result<Self> {
        let g = embeddings.dim();
        if g == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if g != tau {
            return Err(Error::Config(format!(
                "visual and textual dimensions must match for cosine scoring (g={g}, tau={tau})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let proj_w = xavier(&mut rng, g, SPATIAL_DIM + v, SPATIAL_DIM + v, g);
        let weights = std::array::from_fn(|_| xavier(&mut rng, tau, g + tau, g + tau, tau));
        let mut biases: [Vec<f64>; GATES] = std::array::from_fn(|_| vec![0.0; tau]);
        biases[GATE_F].iter_mut().for_each(|b| *b = 1.0);
        Ok(ModelParams {
            proj_w,
            proj_b: vec![0.0; g],
            lstm: LstmParams { weights, biases },
            embeddings,
            max_phrase_len: DEFAULT_MAX_PHRASE_LEN,
        })
    }

    pub fn g(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn tau(&self) -> usize {
        self.lstm.biases[0].len()
    }

    pub fn v(&self) -> usize {
        self.proj_w.cols() - SPATIAL_DIM
    }

    /// Checks internal shape consistency (used after deserialization).
    pub fn validate(&self) -> Result<()> {
        let g = self.g();
        let tau = self.tau();
        if g != tau {
            return Err(Error::Config(format!("g={g} differs from tau={tau}")));
        }
        if self.proj_w.rows() != g || self.proj_b.len() != g || self.proj_w.cols() < SPATIAL_DIM {
            return Err(Error::Config("projection shape mismatch".into()));
        }
        for (w, b) in self.lstm.weights.iter().zip(&self.lstm.biases) {
            if w.shape() != (tau, g + tau) || b.len() != tau {
                return Err(Error::Config("recurrent parameter shape mismatch".into()));
            }
        }
        if self.max_phrase_len == 0 {
            return Err(Error::Config("max phrase length must be positive".into()));
        }
        Ok(())
    }

    /// Parameter blocks in their fixed serialization order.
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = vec![
            ("proj_w", self.proj_w.as_slice()),
            ("proj_b", &self.proj_b),
        ];
        for (name, w) in LSTM_W_NAMES.iter().zip(&self.lstm.weights) {
            out.push((name, w.as_slice()));
        }
        for (name, b) in LSTM_B_NAMES.iter().zip(&self.lstm.biases) {
            out.push((name, b));
        }
        out.push(("embeddings", self.embeddings.matrix().as_slice()));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.proj_w.as_mut_slice(), &mut self.proj_b];
        for w in &mut self.lstm.weights {
            out.push(w.as_mut_slice());
        }
        for b in &mut self.lstm.biases {
            out.push(b);
        }
        out.push(self.embeddings.matrix_mut().as_mut_slice());
        out
    }

    /// Every block except the embedding matrix.
    pub fn dense_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.blocks_mut();
        out.pop();
        out
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }

    pub fn round_to_f32(&mut self) {
        for block in self.blocks_mut() {
            for v in block.iter_mut() {
                *v = f64::from(*v as f32);
            }
        }
    }

    fn visual_input(&self, p: &Proposal, spatial: &[f64; SPATIAL_DIM]) -> Result<Vec<f64>> {
        if p.feature.len() != self.v() {
            return Err(Error::Argument(format!(
                "proposal feature length {} does not match model input {}",
                p.feature.len(),
                self.v()
            )));
        }
        let mut x = Vec::with_capacity(SPATIAL_DIM + p.feature.len());
        x.extend_from_slice(spatial);
        x.extend(p.feature.iter().map(|&f| f64::from(f)));
        Ok(x)
    }

    /// One visual feature row per proposal.
    pub fn visual_forward(
        &self,
        proposals: &[Proposal],
        spatials: &[[f64; SPATIAL_DIM]],
    ) -> Result<(Matrix, VisualCache)> {
        if proposals.len() != spatials.len() {
            return Err(Error::Argument("one spatial vector per proposal required".into()));
        }
        let g = self.g();
        let mut out = Matrix::zeros(proposals.len(), g);
        let mut inputs = Vec::with_capacity(proposals.len());
        let mut label_rows = Vec::with_capacity(proposals.len());
        for (k, (p, s)) in proposals.iter().zip(spatials).enumerate() {
            let x = self.visual_input(p, s)?;
            let rows = self.embeddings.label_rows(&p.label);
            let row = out.row_mut(k);
            self.proj_w.matvec(&x, row);
            axpy(1.0, &self.proj_b, row);
            axpy(1.0, &self.embeddings.mean_rows(&rows), row);
            inputs.push(x);
            label_rows.push(rows);
        }
        debug_assert!(out.is_finite() || !self.is_finite());
        Ok((out, VisualCache { inputs, label_rows }))
    }

    /// Last hidden state of the LSTM run over the (truncated) phrase.
    pub fn textual_forward(&self, tokens: &[String]) -> Result<(Vec<f64>, LstmTrace)> {
        if tokens.is_empty() {
            return Err(Error::Argument("cannot encode an empty phrase".into()));
        }
        let g = self.g();
        let tau = self.tau();
        let mut h = vec![0.0; tau];
        let mut c = vec![0.0; tau];
        let mut steps = Vec::with_capacity(tokens.len().min(self.max_phrase_len));
        for token in tokens.iter().take(self.max_phrase_len) {
            let row = self.embeddings.row_id(token);
            let mut z = Vec::with_capacity(g + tau);
            z.extend_from_slice(self.embeddings.row(row));
            z.extend_from_slice(&h);

            let mut gates: [Vec<f64>; GATES] = std::array::from_fn(|_| vec![0.0; tau]);
            for (gi, gate) in gates.iter_mut().enumerate() {
                self.lstm.weights[gi].matvec(&z, gate);
                axpy(1.0, &self.lstm.biases[gi], gate);
                if gi == GATE_C {
                    gate.iter_mut().for_each(|a| *a = a.tanh());
                } else {
                    gate.iter_mut().for_each(|a| *a = sigmoid(*a));
                }
            }
            let c_prev = c.clone();
            let mut tanh_c = vec![0.0; tau];
            for u in 0..tau {
                c[u] = gates[GATE_F][u] * c_prev[u] + gates[GATE_I][u] * gates[GATE_C][u];
                tanh_c[u] = c[u].tanh();
                h[u] = gates[GATE_O][u] * tanh_c[u];
            }
            steps.push(LstmStep {
                row,
                z,
                gates,
                c_prev,
                tanh_c,
            });
        }
        Ok((h, LstmTrace { steps }))
    }

    /// Textual features for several phrases, one row each.
    pub fn textual_forward_all(&self, phrases: &[&[String]]) -> Result<(Matrix, Vec<LstmTrace>)> {
        let mut out = Matrix::zeros(phrases.len(), self.tau());
        let mut traces = Vec::with_capacity(phrases.len());
        for (j, tokens) in phrases.iter().enumerate() {
            let (h, trace) = self.textual_forward(tokens)?;
            out.row_mut(j).copy_from_slice(&h);
            traces.push(trace);
        }
        Ok((out, traces))
    }

    /// Accumulates gradients of the visual branch given `d_out` (p x g).
    pub fn visual_backward(&self, cache: &VisualCache, d_out: &Matrix, grads: &mut Gradients) -> Result<()> {
        if cache.inputs.len() != d_out.rows() || d_out.cols() != self.g() {
            return Err(Error::State(format!(
                "visual backward got {}x{} upstream gradients for a forward pass over {} proposals",
                d_out.rows(),
                d_out.cols(),
                cache.inputs.len()
            )));
        }
        for (k, (x, rows)) in cache.inputs.iter().zip(&cache.label_rows).enumerate() {
            let d = d_out.row(k);
            grads.proj_w.add_outer(d, x);
            axpy(1.0, d, &mut grads.proj_b);
            let share = 1.0 / rows.len() as f64;
            for &r in rows {
                grads.add_embedding(r, share, d);
            }
        }
        Ok(())
    }

    /// Backpropagation through time for one phrase given `d_h` on the last hidden state.
    pub fn textual_backward(&self, trace: &LstmTrace, d_h: &[f64], grads: &mut Gradients) -> Result<()> {
        if trace.steps.is_empty() {
            return Err(Error::State("textual backward without a recorded forward pass".into()));
        }
        let g = self.g();
        let tau = self.tau();
        if d_h.len() != tau {
            return Err(Error::State(format!("upstream gradient has length {}, expected {tau}", d_h.len())));
        }
        let mut dh = d_h.to_vec();
        let mut dc = vec![0.0; tau];
        let mut da: [Vec<f64>; GATES] = std::array::from_fn(|_| vec![0.0; tau]);
        let mut dz = vec![0.0; g + tau];
        for step in trace.steps.iter().rev() {
            let [i, f, o, cand] = &step.gates;
            for u in 0..tau {
                let d_o = dh[u] * step.tanh_c[u];
                dc[u] += dh[u] * o[u] * (1.0 - step.tanh_c[u] * step.tanh_c[u]);
                let d_i = dc[u] * cand[u];
                let d_f = dc[u] * step.c_prev[u];
                let d_cand = dc[u] * i[u];
                da[GATE_I][u] = d_i * i[u] * (1.0 - i[u]);
                da[GATE_F][u] = d_f * f[u] * (1.0 - f[u]);
                da[GATE_O][u] = d_o * o[u] * (1.0 - o[u]);
                da[GATE_C][u] = d_cand * (1.0 - cand[u] * cand[u]);
                dc[u] *= f[u];
            }
            dz.iter_mut().for_each(|v| *v = 0.0);
            for gi in 0..GATES {
                grads.lstm_w[gi].add_outer(&da[gi], &step.z);
                axpy(1.0, &da[gi], &mut grads.lstm_b[gi]);
                self.lstm.weights[gi].matvec_t_acc(&da[gi], &mut dz);
            }
            grads.add_embedding(step.row, 1.0, &dz[..g]);
            dh.copy_from_slice(&dz[g..]);
        }
        Ok(())
    }
}

const LSTM_W_NAMES: [&str; GATES] = ["lstm_w_input", "lstm_w_forget", "lstm_w_output", "lstm_w_cell"];
const LSTM_B_NAMES: [&str; GATES] = ["lstm_b_input", "lstm_b_forget", "lstm_b_output", "lstm_b_cell"];

/// Activations kept by [`ModelParams::visual_forward`].
#[derive(Debug, Clone, Default)]
pub struct VisualCache {
    inputs: Vec<Vec<f64>>,
    label_rows: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
struct LstmStep {
    row: usize,
    z: Vec<f64>,
    gates: [Vec<f64>; GATES],
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Activations kept by [`ModelParams::textual_forward`].
#[derive(Debug, Clone, Default)]
pub struct LstmTrace {
    steps: Vec<LstmStep>,
}

/// Gradients for every parameter of [`ModelParams`]. Embedding gradients are kept
/// per touched row; rows absent from the map have exactly zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub proj_w: Matrix,
    pub proj_b: Vec<f64>,
    pub lstm_w: [Matrix; GATES],
    pub lstm_b: [Vec<f64>; GATES],
    pub embeddings: BTreeMap<usize, Vec<f64>>,
    embedding_dim: usize,
}

impl Gradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Gradients {
            proj_w: Matrix::zeros(p.proj_w.rows(), p.proj_w.cols()),
            proj_b: vec![0.0; p.proj_b.len()],
            lstm_w: std::array::from_fn(|i| Matrix::zeros(p.lstm.weights[i].rows(), p.lstm.weights[i].cols())),
            lstm_b: std::array::from_fn(|i| vec![0.0; p.lstm.biases[i].len()]),
            embeddings: BTreeMap::new(),
            embedding_dim: p.embeddings.dim(),
        }
    }

    fn add_embedding(&mut self, row: usize, scale: f64, d: &[f64]) {
        let dim = self.embedding_dim;
        let acc = self.embeddings.entry(row).or_insert_with(|| vec![0.0; dim]);
        axpy(scale, d, acc);
    }

    /// Every block except the embeddings, in [`ModelParams::blocks`] order.
    pub fn dense_blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.proj_w.as_slice(), &self.proj_b];
        out.extend(self.lstm_w.iter().map(Matrix::as_slice));
        out.extend(self.lstm_b.iter().map(Vec::as_slice));
        out
    }

    pub fn dense_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.proj_w.as_mut_slice(), &mut self.proj_b];
        out.extend(self.lstm_w.iter_mut().map(Matrix::as_mut_slice));
        out.extend(self.lstm_b.iter_mut().map(Vec::as_mut_slice));
        out
    }

    /// All blocks materialized densely, aligned with [`ModelParams::blocks`].
    pub fn to_dense(&self, vocab_len: usize) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.dense_blocks().into_iter().map(<[f64]>::to_vec).collect();
        let mut emb = vec![0.0; vocab_len * self.embedding_dim];
        for (&row, g) in &self.embeddings {
            emb[row * self.embedding_dim..(row + 1) * self.embedding_dim].copy_from_slice(g);
        }
        out.push(emb);
        out
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.dense_blocks_mut().into_iter().zip(other.dense_blocks()) {
            axpy(1.0, b, a);
        }
        for (&row, g) in &other.embeddings {
            self.add_embedding(row, 1.0, g);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for block in self.dense_blocks_mut() {
            block.iter_mut().for_each(|v| *v *= factor);
        }
        for g in self.embeddings.values_mut() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn norm_squared(&self) -> f64 {
        let dense: f64 = self.dense_blocks().iter().map(|b| dot(b, b)).sum();
        dense + self.embeddings.values().map(|g| dot(g, g)).sum::<f64>()
    }

    pub fn is_finite(&self) -> bool {
        self.dense_blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
            && self.embeddings.values().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{EmbeddingInit, FixedEmbeddingTable};

    fn toy_params(g: usize, v: usize, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = ["a", "dog", "cat", "red", "on", "the", "left"];
        let fixed = FixedEmbeddingTable::from_entries(
            g,
            words.iter().map(|w| (*w, (0..g).map(|_| rng.random_range(-1.0..1.0)).collect())),
        )
        .unwrap();
        let emb = TrainableEmbeddingTable::build(
            words.iter().map(|w| w.to_string()),
            &fixed,
            EmbeddingInit::CopyFixed,
            &mut rng,
        );
        ModelParams::init(emb, g, v, seed).unwrap()
    }

    fn proposal(label: &str, b: [f64; 4], feat: Vec<f32>) -> Proposal {
        Proposal {
            bbox: BoxCoords::new(b[0], b[1], b[2], b[3]).unwrap(),
            feature: feat,
            label: label.into(),
            detector_score: 1.0,
        }
    }

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn spatial_feature_cases() {
        let f = |b: [f64; 4]| spatial_features(&BoxCoords::new(b[0], b[1], b[2], b[3]).unwrap(), 100.0, 100.0).unwrap();
        assert_eq!(f([0.0, 0.0, 100.0, 100.0]), [0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(f([0.0, 0.0, 50.0, 50.0]), [0.0, 0.0, 0.5, 0.5, 0.25]);
        assert_eq!(f([25.0, 25.0, 75.0, 75.0]), [0.25, 0.25, 0.75, 0.75, 0.25]);
        let b = BoxCoords::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(spatial_features(&b, 0.0, 10.0).is_err());
    }

    #[test]
    fn rejects_mismatched_dims() {
        let p = toy_params(4, 3, 1);
        let emb = p.embeddings.clone();
        assert!(ModelParams::init(emb, 5, 3, 1).is_err());
    }

    #[test]
    fn zero_projection_gives_label_embedding() {
        let mut p = toy_params(4, 3, 2);
        p.proj_w = Matrix::zeros(4, 8);
        p.proj_b = vec![0.0; 4];
        let props = [proposal("dog", [0.0, 0.0, 10.0, 10.0], vec![1.0, 2.0, 3.0])];
        let s = [spatial_features(&props[0].bbox, 100.0, 100.0).unwrap()];
        let (hv, _) = p.visual_forward(&props, &s).unwrap();
        assert_eq!(hv.row(0), p.embeddings.lookup("dog"));
    }

    #[test]
    fn identity_projection_reproduces_spatial() {
        let mut p = toy_params(5, 3, 2);
        let mut w = Matrix::zeros(5, 8);
        for i in 0..5 {
            w.set(i, i, 1.0);
        }
        p.proj_w = w;
        p.proj_b = vec![0.0; 5];
        // OOV label -> zero embedding row
        let props = [proposal("zebra", [25.0, 25.0, 75.0, 75.0], vec![9.0, 9.0, 9.0])];
        let s = [spatial_features(&props[0].bbox, 100.0, 100.0).unwrap()];
        let (hv, _) = p.visual_forward(&props, &s).unwrap();
        assert_eq!(hv.row(0), &[0.25, 0.25, 0.75, 0.75, 0.25]);
    }

    #[test]
    fn visual_rows_are_independent() {
        let p = toy_params(4, 2, 3);
        let props = vec![
            proposal("dog", [0.0, 0.0, 10.0, 10.0], vec![0.5, 1.0]),
            proposal("cat", [5.0, 5.0, 30.0, 40.0], vec![-0.5, 2.0]),
            proposal("dog", [0.0, 0.0, 10.0, 10.0], vec![0.5, 1.0]),
        ];
        let s: Vec<_> = props.iter().map(|q| spatial_features(&q.bbox, 100.0, 100.0).unwrap()).collect();
        let (hv, _) = p.visual_forward(&props, &s).unwrap();
        assert_eq!(hv.row(0), hv.row(2));
        let (hv2, _) = p.visual_forward(&props[1..], &s[1..]).unwrap();
        assert_eq!(hv2.row(0), hv.row(1));
        assert_eq!(hv2.row(1), hv.row(2));
    }

    #[test]
    fn zero_recurrent_weights_give_zero_output() {
        let mut p = toy_params(4, 2, 4);
        for w in &mut p.lstm.weights {
            *w = Matrix::zeros(4, 8);
        }
        for b in &mut p.lstm.biases {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
        let (h, _) = p.textual_forward(&toks("dog")).unwrap();
        assert_eq!(h, vec![0.0; 4]);
        assert!(p.textual_forward(&[]).is_err());
    }

    #[test]
    fn truncation_and_order_sensitivity() {
        let p = toy_params(4, 2, 5);
        let long: Vec<String> = toks("a red dog on the left a red cat on the left");
        assert_eq!(long.len(), 12);
        let mut longer = long.clone();
        longer.push("dog".into());
        assert_eq!(p.textual_forward(&long).unwrap().0, p.textual_forward(&longer).unwrap().0);

        let a = p.textual_forward(&toks("red dog")).unwrap().0;
        let b = p.textual_forward(&toks("dog red")).unwrap().0;
        assert_ne!(a, b);
    }

    #[test]
    fn backward_requires_forward() {
        let p = toy_params(4, 2, 6);
        let mut grads = Gradients::zeros_like(&p);
        assert!(matches!(
            p.textual_backward(&LstmTrace::default(), &[1.0; 4], &mut grads),
            Err(Error::State(_))
        ));
        assert!(matches!(
            p.visual_backward(&VisualCache::default(), &Matrix::zeros(2, 4), &mut grads),
            Err(Error::State(_))
        ));
    }

    /// Scalar objective r . h_t(tokens) + q . h_v(props) checked against central differences.
    #[test]
    fn branch_gradients_match_finite_differences() {
        let p = toy_params(3, 2, 7);
        let props = vec![
            proposal("dog", [0.0, 0.0, 10.0, 10.0], vec![0.5, 1.0]),
            proposal("red", [5.0, 5.0, 30.0, 40.0], vec![-0.5, 2.0]),
        ];
        let s: Vec<_> = props.iter().map(|q| spatial_features(&q.bbox, 100.0, 100.0).unwrap()).collect();
        let tokens = toks("the red dog");
        let r = [0.3, -1.2, 0.7];
        let q = Matrix::from_rows(&[vec![1.0, 0.5, -0.25], vec![-0.7, 0.2, 0.9]]);
        let objective = |p: &ModelParams| {
            let (h, _) = p.textual_forward(&tokens).unwrap();
            let (hv, _) = p.visual_forward(&props, &s).unwrap();
            dot(&r, &h) + dot(q.as_slice(), hv.as_slice())
        };

        let mut grads = Gradients::zeros_like(&p);
        let (_, trace) = p.textual_forward(&tokens).unwrap();
        p.textual_backward(&trace, &r, &mut grads).unwrap();
        let (_, cache) = p.visual_forward(&props, &s).unwrap();
        p.visual_backward(&cache, &q, &mut grads).unwrap();

        let h = 1e-5;
        let analytic = grads.to_dense(p.embeddings.len());
        for (bi, block) in analytic.iter().enumerate() {
            for (i, &a) in block.iter().enumerate() {
                let mut plus = p.clone();
                plus.blocks_mut()[bi][i] += h;
                let mut minus = p.clone();
                minus.blocks_mut()[bi][i] -= h;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
                assert!(
                    (a - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()),
                    "block {bi} index {i}: analytic {a} numeric {numeric}"
                );
            }
        }
        // "cat", "on", "left", "a" and the OOV row are untouched
        for token in ["cat", "on", "left", "a", "<unk>"] {
            let row = p.embeddings.row_id(token);
            assert!(!grads.embeddings.contains_key(&row), "{token}");
        }
    }
}
