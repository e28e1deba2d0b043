//! Checkpoints: one line of JSON header, then every parameter block as little-endian
//! f64 in [`ModelParams::blocks`] order.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embeddings::TrainableEmbeddingTable;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{LstmParams, ModelParams, GATES, SPATIAL_DIM};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub g: usize,
    pub tau: usize,
    pub v: usize,
    pub max_phrase_len: usize,
    pub vocab: Vec<String>,
    pub seed: u64,
    pub epoch: usize,
    pub blocks: Vec<(String, usize)>,
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, seed: u64, epoch: usize) -> Result<()> {
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        g: params.g(),
        tau: params.tau(),
        v: params.v(),
        max_phrase_len: params.max_phrase_len,
        vocab: params.embeddings.vocab().to_vec(),
        seed,
        epoch,
        blocks: params
            .blocks()
            .iter()
            .map(|(name, b)| (name.to_string(), b.len()))
            .collect(),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let json = serde_json::to_string(&header).expect("header serializes");
    w.write_all(json.as_bytes()).map_err(io)?;
    w.write_all(b"\n").map_err(io)?;
    for (_, block) in params.blocks() {
        for v in block {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, ModelParams)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line).map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader = serde_json::from_slice(&line)
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            header.format_version
        )));
    }
    let (g, tau, v) = (header.g, header.tau, header.v);
    let expected = [
        g * (SPATIAL_DIM + v),
        g,
        tau * (g + tau),
        tau * (g + tau),
        tau * (g + tau),
        tau * (g + tau),
        tau,
        tau,
        tau,
        tau,
        header.vocab.len() * g,
    ];
    let sizes: Vec<usize> = header.blocks.iter().map(|(_, n)| *n).collect();
    if sizes != expected {
        return Err(Error::Checkpoint(format!(
            "block sizes {sizes:?} do not match dimensions g={g} tau={tau} v={v}"
        )));
    }
    let mut blocks = Vec::with_capacity(expected.len());
    for n in expected {
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: truncated parameters: {e}", path.display())))?;
        blocks.push(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect::<Vec<f64>>(),
        );
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }

    let mut it = blocks.into_iter();
    let mut next = || it.next().expect("block count checked");
    let proj_w = Matrix::from_vec(g, SPATIAL_DIM + v, next());
    let proj_b = next();
    let weights: [Matrix; GATES] = std::array::from_fn(|_| Matrix::from_vec(tau, g + tau, next()));
    let biases: [Vec<f64>; GATES] = std::array::from_fn(|_| next());
    let embeddings =
        TrainableEmbeddingTable::new(header.vocab.clone(), Matrix::from_vec(header.vocab.len(), g, next()))?;
    let params = ModelParams {
        proj_w,
        proj_b,
        lstm: LstmParams { weights, biases },
        embeddings,
        max_phrase_len: header.max_phrase_len,
    };
    params.validate()?;
    Ok((header, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{EmbeddingInit, FixedEmbeddingTable};

    #[test]
    fn round_trip_is_bit_exact() {
        let fixed = FixedEmbeddingTable::from_entries(3, [("dog", vec![0.1, -0.2, 1.0 / 3.0])]).unwrap();
        let emb = TrainableEmbeddingTable::build(["dog".to_string()], &fixed, EmbeddingInit::CopyFixed, &mut rand::rng());
        let params = ModelParams::init(emb, 3, 4, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save_checkpoint(&path, &params, 11, 3).unwrap();
        let (header, loaded) = load_checkpoint(&path).unwrap();
        assert_eq!(header.epoch, 3);
        assert_eq!(header.vocab, vec!["<unk>".to_string(), "dog".into()]);
        assert_eq!(loaded, params);

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
