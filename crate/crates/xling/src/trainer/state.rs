//! Full-precision training state for interrupt/resume.
//!
//! Unlike model checkpoints (f32, weights only), the train state keeps f64
//! weights, optimizer moments and bookkeeping so a resumed run reproduces
//! the uninterrupted metrics stream exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::LangId;
use crate::model::{ModelConfig, ModelParams};

use super::msample::AugmentedDataset;
use super::pipeline::MetricsRecord;
use super::TrainError;

const MAGIC: &[u8; 8] = b"XLINGTRS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainStateMeta {
    pub step: usize,
    pub adam_t: u64,
    pub rungs_done: usize,
    pub metrics: Vec<MetricsRecord>,
    pub augmentation: Option<AugmentedDataset>,
    pub expansion_log: Vec<LangId>,
}

pub struct TrainState {
    pub params: ModelParams,
    pub adam_m: Vec<Vec<f64>>,
    pub adam_v: Vec<Vec<f64>>,
    pub meta: TrainStateMeta,
}

fn push_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn read_f64s(body: &[u8], at: &mut usize, n: usize) -> Result<Vec<f64>, TrainError> {
    let need = n * 8;
    if *at + need > body.len() {
        return Err(corrupt("truncated tensor data"));
    }
    let out = body[*at..*at + need]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    *at += need;
    Ok(out)
}

fn corrupt(msg: &str) -> TrainError {
    TrainError::Config(format!("train state corrupt: {msg}"))
}

pub fn save_train_state(state: &TrainState, path: &Path) -> Result<(), TrainError> {
    let cfg = &state.params.config;
    let meta_json = serde_json::to_vec(&state.meta)
        .map_err(|e| TrainError::Config(format!("meta serialization: {e}")))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        cfg.layers,
        cfg.model_dim,
        cfg.heads,
        cfg.ffn_dim,
        cfg.context_len,
        cfg.vocab_size,
    ] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta_json);
    for block in &state.params.blocks {
        push_f64s(&mut buf, &block.data);
    }
    for m in &state.adam_m {
        push_f64s(&mut buf, m);
    }
    for v in &state.adam_v {
        push_f64s(&mut buf, v);
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_train_state(path: &Path) -> Result<TrainState, TrainError> {
    let buf = fs::read(path)?;
    if buf.len() < 8 + 4 + 24 + 8 + 32 {
        return Err(corrupt("file too short"));
    }
    let (body, digest) = buf.split_at(buf.len() - 32);
    if digest != Sha256::digest(body).as_slice() {
        return Err(corrupt("checksum mismatch"));
    }
    if &body[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(TrainError::Config(format!(
            "train state version {version} unsupported"
        )));
    }
    let mut fields = [0usize; 6];
    for (i, f) in fields.iter_mut().enumerate() {
        let at = 12 + i * 4;
        *f = u32::from_le_bytes(body[at..at + 4].try_into().unwrap()) as usize;
    }
    let config = ModelConfig {
        layers: fields[0],
        model_dim: fields[1],
        heads: fields[2],
        ffn_dim: fields[3],
        context_len: fields[4],
        vocab_size: fields[5],
    };
    let mut at = 36;
    let meta_len = u64::from_le_bytes(body[at..at + 8].try_into().unwrap()) as usize;
    at += 8;
    if at + meta_len > body.len() {
        return Err(corrupt("truncated metadata"));
    }
    let meta: TrainStateMeta = serde_json::from_slice(&body[at..at + meta_len])
        .map_err(|e| corrupt(&format!("metadata parse: {e}")))?;
    at += meta_len;

    let mut params = ModelParams::zeros_like_config(config);
    for block in &mut params.blocks {
        block.data = read_f64s(body, &mut at, block.len())?;
    }
    let mut adam_m = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        adam_m.push(read_f64s(body, &mut at, block.len())?);
    }
    let mut adam_v = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        adam_v.push(read_f64s(body, &mut at, block.len())?);
    }
    if at != body.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(TrainState {
        params,
        adam_m,
        adam_v,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cfg = ModelConfig {
            layers: 1,
            model_dim: 8,
            heads: 2,
            ffn_dim: 16,
            context_len: 8,
            vocab_size: 9,
        };
        let params = ModelParams::init(cfg, 2).unwrap();
        let m: Vec<Vec<f64>> = params.blocks.iter().map(|b| vec![0.25; b.len()]).collect();
        let v: Vec<Vec<f64>> = params.blocks.iter().map(|b| vec![0.5; b.len()]).collect();
        let state = TrainState {
            params: params.clone(),
            adam_m: m.clone(),
            adam_v: v.clone(),
            meta: TrainStateMeta {
                step: 42,
                adam_t: 42,
                rungs_done: 2,
                metrics: vec![],
                augmentation: None,
                expansion_log: vec![LangId(1), LangId(3)],
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.trs");
        save_train_state(&state, &path).unwrap();
        let got = load_train_state(&path).unwrap();
        assert_eq!(got.params, params);
        assert_eq!(got.adam_m, m);
        assert_eq!(got.adam_v, v);
        assert_eq!(got.meta.step, 42);
        assert_eq!(got.meta.rungs_done, 2);
        assert_eq!(got.meta.expansion_log, vec![LangId(1), LangId(3)]);
    }

    #[test]
    fn corruption_is_detected() {
        let cfg = ModelConfig {
            layers: 1,
            model_dim: 8,
            heads: 2,
            ffn_dim: 16,
            context_len: 8,
            vocab_size: 9,
        };
        let params = ModelParams::init(cfg, 2).unwrap();
        let state = TrainState {
            adam_m: params.blocks.iter().map(|b| vec![0.0; b.len()]).collect(),
            adam_v: params.blocks.iter().map(|b| vec![0.0; b.len()]).collect(),
            params,
            meta: TrainStateMeta {
                step: 0,
                adam_t: 0,
                rungs_done: 0,
                metrics: vec![],
                augmentation: None,
                expansion_log: vec![],
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.trs");
        save_train_state(&state, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 3;
        bytes[mid] ^= 1;
        std::fs::write(&path, bytes).unwrap();
        assert!(load_train_state(&path).is_err());
    }
}
