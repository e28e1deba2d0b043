//! Word embeddings: the frozen prior table used by the concept scores and negative
//! mining, and the trainable table shared by proposal labels and phrase words.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OovPolicy {
    /// Exact, then lowercase, then mean of hyphen-separated parts, then zero.
    #[default]
    Backoff,
    /// Exact match or zero.
    Zero,
}

/// Result of a table lookup. `oov` is set when nothing in the table matched and the
/// vector is all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Lookup {
    pub vector: Vec<f64>,
    pub oov: bool,
}

#[derive(Debug, Clone)]
pub struct FixedEmbeddingTable {
    dim: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
    oov_policy: OovPolicy,
}

impl FixedEmbeddingTable {
    pub fn new(dim: usize, oov_policy: OovPolicy) -> Self {
        FixedEmbeddingTable {
            dim,
            tokens: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
            oov_policy,
        }
    }

    /// Builds a table from in-memory rows; later duplicates are ignored.
    pub fn from_entries<I, S>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut table = FixedEmbeddingTable::new(dim, OovPolicy::default());
        for (token, v) in entries {
            if v.len() != dim {
                return Err(Error::Argument(format!(
                    "embedding of length {} for dimension {dim}",
                    v.len()
                )));
            }
            table.insert(token.into(), &v);
        }
        Ok(table)
    }

    fn insert(&mut self, token: String, v: &[f64]) {
        if self.index.contains_key(&token) {
            return;
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.vectors.extend_from_slice(v);
    }

    pub fn with_oov_policy(mut self, policy: OovPolicy) -> Self {
        self.oov_policy = policy;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Stored row for an exact token match.
    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index
            .get(token)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    fn lookup_word(&self, word: &str) -> Option<Vec<f64>> {
        if let Some(v) = self.get(word) {
            return Some(v.to_vec());
        }
        if self.oov_policy == OovPolicy::Zero {
            return None;
        }
        let lower = word.to_lowercase();
        if let Some(v) = self.get(&lower) {
            return Some(v.to_vec());
        }
        if lower.contains('-') {
            return self.mean_of(lower.split('-').filter(|p| !p.is_empty()), |t, w| t.get(w).map(<[f64]>::to_vec));
        }
        None
    }

    fn mean_of<'a>(
        &self,
        words: impl Iterator<Item = &'a str>,
        f: impl Fn(&Self, &str) -> Option<Vec<f64>>,
    ) -> Option<Vec<f64>> {
        let mut acc = vec![0.0; self.dim];
        let mut n = 0usize;
        for w in words {
            if let Some(v) = f(self, w) {
                for (a, x) in acc.iter_mut().zip(&v) {
                    *a += x;
                }
                n += 1;
            }
        }
        if n == 0 {
            return None;
        }
        let inv = 1.0 / n as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Some(acc)
    }

    /// Embedding of a token or multiword label. Multiword input is the mean of its
    /// in-vocabulary words; unmatched input yields the zero vector with `oov` set.
    pub fn lookup(&self, token: &str) -> Lookup {
        let words: Vec<&str> = token.split_whitespace().collect();
        let found = match words.len() {
            0 => None,
            1 => self.lookup_word(words[0]),
            _ => self.mean_of(words.iter().copied(), |t, w| t.lookup_word(w)),
        };
        match found {
            Some(vector) => Lookup { vector, oov: false },
            None => Lookup {
                vector: vec![0.0; self.dim],
                oov: true,
            },
        }
    }

    /// Writes the whitespace text format read by [`load_fixed_table`].
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (i, token) in self.tokens.iter().enumerate() {
            let row = &self.vectors[i * self.dim..(i + 1) * self.dim];
            let nums: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{token} {}", nums.join(" ")).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads `token v1 ... vg` lines. `max_vocab` truncates after that many distinct tokens.
pub fn load_fixed_table(
    path: &Path,
    expected_g: usize,
    max_vocab: Option<usize>,
) -> Result<FixedEmbeddingTable> {
    if expected_g == 0 {
        return Err(Error::Argument("embedding dimension must be positive".into()));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = FixedEmbeddingTable::new(expected_g, OovPolicy::default());
    let mut row = Vec::with_capacity(expected_g);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        if max_vocab.is_some_and(|m| table.len() >= m) {
            break;
        }
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        row.clear();
        for p in parts {
            row.push(
                p.parse::<f64>()
                    .map_err(|e| parse_err(format!("bad number {p:?}: {e}")))?,
            );
        }
        if row.len() != expected_g {
            return Err(parse_err(format!(
                "expected {expected_g} values for {token:?}, found {}",
                row.len()
            )));
        }
        table.insert(token.to_string(), &row);
    }
    Ok(table)
}

/// Dimension of a text-format table, read from its first non-empty line.
pub fn infer_dim(path: &Path) -> Result<usize> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let n = line.split_whitespace().count();
        if n == 0 {
            continue;
        }
        if n < 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "token without values".into(),
            });
        }
        return Ok(n - 1);
    }
    Err(Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: "empty embedding file".into(),
    })
}

/// Cosine similarity; 0 when either vector has norm below 1e-12.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(cosine_unchecked(a, b))
}

pub(crate) fn cosine_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

pub const OOV_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingInit {
    /// Copy rows of the fixed table; zero for tokens it does not cover.
    #[default]
    CopyFixed,
    /// Uniform in +-0.1.
    Random,
}

/// Trainable embeddings. Row 0 is the shared OOV row; one row per vocabulary token
/// follows. Proposal labels and phrase words resolve through the same rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableEmbeddingTable {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    matrix: Matrix,
}

impl TrainableEmbeddingTable {
    pub fn new(vocab: Vec<String>, matrix: Matrix) -> Result<Self> {
        if vocab.first().map(String::as_str) != Some(OOV_TOKEN) {
            return Err(Error::Argument("vocabulary must start with the OOV row".into()));
        }
        if matrix.rows() != vocab.len() {
            return Err(Error::Argument(format!(
                "{} embedding rows for {} vocabulary entries",
                matrix.rows(),
                vocab.len()
            )));
        }
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(TrainableEmbeddingTable {
            vocab,
            index,
            matrix,
        })
    }

    pub fn build<R: Rng>(
        tokens: impl IntoIterator<Item = String>,
        fixed: &FixedEmbeddingTable,
        init: EmbeddingInit,
        rng: &mut R,
    ) -> Self {
        let set: BTreeSet<String> = tokens.into_iter().filter(|t| t != OOV_TOKEN).collect();
        let mut vocab = Vec::with_capacity(set.len() + 1);
        vocab.push(OOV_TOKEN.to_string());
        vocab.extend(set);
        let g = fixed.dim();
        let mut matrix = Matrix::zeros(vocab.len(), g);
        for (i, token) in vocab.iter().enumerate().skip(1) {
            match init {
                EmbeddingInit::CopyFixed => {
                    let found = fixed.lookup(token);
                    matrix.row_mut(i).copy_from_slice(&found.vector);
                }
                EmbeddingInit::Random => {
                    for v in matrix.row_mut(i) {
                        *v = rng.random_range(-0.1..0.1);
                    }
                }
            }
        }
        TrainableEmbeddingTable::new(vocab, matrix).expect("vocabulary built with OOV row")
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.matrix
    }

    pub fn row_id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.matrix.row(id)
    }

    /// Row ids for a proposal label; multiword labels use one row per word.
    pub fn label_rows(&self, label: &str) -> Vec<usize> {
        let ids: Vec<usize> = crate::phrase::tokenize(label)
            .iter()
            .map(|t| self.row_id(t))
            .collect();
        if ids.is_empty() {
            vec![0]
        } else {
            ids
        }
    }

    /// Mean of the given rows.
    pub fn mean_rows(&self, ids: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        let inv = 1.0 / ids.len() as f64;
        for &id in ids {
            for (o, v) in out.iter_mut().zip(self.row(id)) {
                *o += v * inv;
            }
        }
        out
    }

    pub fn lookup(&self, token: &str) -> &[f64] {
        self.row(self.row_id(token))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> FixedEmbeddingTable {
        FixedEmbeddingTable::from_entries(
            2,
            [
                ("traffic", vec![1.0, 3.0]),
                ("light", vec![2.0, -1.0]),
                ("dog", vec![0.5, 0.25]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn parses_text_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        std::fs::write(&p, "a 1 2 3 4\nb 0 0 0 1\nc 1e-3 -2 0.5 7\na 9 9 9 9\n").unwrap();
        let t = load_fixed_table(&p, 4, None).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.get("a").unwrap(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t.get("c").unwrap(), &[1e-3, -2.0, 0.5, 7.0]);

        let t = load_fixed_table(&p, 4, Some(2)).unwrap();
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn short_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        std::fs::write(&p, "a 1 2 3 4\nb 1 2 3\n").unwrap();
        match load_fixed_table(&p, 4, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn lookup_policies() {
        let t = toy();
        assert_eq!(t.lookup("dog"), Lookup { vector: vec![0.5, 0.25], oov: false });
        assert_eq!(t.lookup("Dog").vector, vec![0.5, 0.25]);
        // (1,3) and (2,-1) averaged by hand.
        assert_eq!(t.lookup("traffic light").vector, vec![1.5, 1.0]);
        assert_eq!(t.lookup("traffic-light").vector, vec![1.5, 1.0]);
        assert_eq!(t.lookup("zebra"), Lookup { vector: vec![0.0, 0.0], oov: true });
        assert!(t.lookup("zebra crossing").oov);

        let strict = toy().with_oov_policy(OovPolicy::Zero);
        assert!(strict.lookup("Dog").oov);
        assert_eq!(strict.lookup("Dog").vector, vec![0.0, 0.0]);
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine(&[1.0, 2.0, -3.0], &[1.0, 2.0, -3.0]).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn trainable_rows_are_shared_between_labels_and_words() {
        let fixed = toy();
        let mut rng = rand::rng();
        let mut t = TrainableEmbeddingTable::build(
            ["dog".to_string(), "traffic".into(), "light".into(), "zebra".into()],
            &fixed,
            EmbeddingInit::CopyFixed,
            &mut rng,
        );
        assert_eq!(t.vocab()[0], OOV_TOKEN);
        assert_eq!(t.lookup("dog"), &[0.5, 0.25]);
        assert_eq!(t.lookup("zebra"), &[0.0, 0.0]);
        assert_eq!(t.row_id("unseen"), 0);
        assert_eq!(t.label_rows("traffic light").len(), 2);

        let label_row = t.label_rows("dog")[0];
        t.matrix_mut().row_mut(label_row)[0] = 7.0;
        assert_eq!(t.lookup("dog")[0], 7.0);
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in prop::collection::vec(-10.0f64..10.0, 5),
            b in prop::collection::vec(-10.0f64..10.0, 5),
        ) {
            let ab = cosine(&a, &b).unwrap();
            prop_assert_eq!(ab, cosine(&b, &a).unwrap());
            prop_assert!((-1.0..=1.0).contains(&ab));
            if crate::linalg::norm(&a) > 1e-3 {
                for lambda in [0.5, 3.0, 100.0] {
                    let scaled: Vec<f64> = a.iter().map(|x| x * lambda).collect();
                    prop_assert!((cosine(&scaled, &b).unwrap() - ab).abs() < 1e-6);
                }
            }
        }
    }
}
