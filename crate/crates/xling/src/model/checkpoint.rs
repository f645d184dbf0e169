//! Binary checkpoint format.
//!
//! Layout: 8-byte magic, u32 version, six u32 config fields, then every
//! parameter block as little-endian f32 in the documented block order, and a
//! trailing sha256 digest over everything before it.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::params::{ModelConfig, ModelParams};
use super::ModelError;

const MAGIC: &[u8; 8] = b"XLINGCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), ModelError> {
    let cfg = &params.config;
    let mut buf = Vec::with_capacity(64 + params.num_parameters() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
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
    for block in &params.blocks {
        for &x in &block.data {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, ModelError> {
    let buf = fs::read(path)?;
    if buf.len() < 8 + 4 + 24 + 32 {
        return Err(ModelError::Corruption("file too short".into()));
    }
    let (body, digest) = buf.split_at(buf.len() - 32);
    let expect = Sha256::digest(body);
    if digest != expect.as_slice() {
        return Err(ModelError::Corruption("checksum mismatch".into()));
    }
    if &body[..8] != MAGIC {
        return Err(ModelError::Corruption("bad magic".into()));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
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
    config.validate()?;
    let mut params = ModelParams::zeros_like_config(config);
    let expected_len = 36 + params.num_parameters() * 4;
    if body.len() != expected_len {
        return Err(ModelError::Corruption(format!(
            "payload length {} does not match config (expected {})",
            body.len(),
            expected_len
        )));
    }
    let mut at = 36;
    for block in &mut params.blocks {
        for x in &mut block.data {
            *x = f32::from_le_bytes(body[at..at + 4].try_into().unwrap()) as f64;
            at += 4;
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelParams {
        let cfg = ModelConfig {
            layers: 2,
            model_dim: 8,
            heads: 2,
            ffn_dim: 16,
            context_len: 12,
            vocab_size: 10,
        };
        ModelParams::init(cfg, 3).unwrap()
    }

    #[test]
    fn round_trip_is_f32_exact() {
        let p = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&p, &path).unwrap();
        let q = load_checkpoint(&path).unwrap();
        assert_eq!(p.config, q.config);
        for (a, b) in p.blocks.iter().zip(q.blocks.iter()) {
            for (x, y) in a.data.iter().zip(b.data.iter()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        // Saving the loaded params again is byte-identical.
        let path2 = dir.path().join("m2.ckpt");
        save_checkpoint(&q, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn corruption_is_detected() {
        let p = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&p, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(ModelError::Corruption(_)) => {}
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_reported() {
        let p = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&p, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 99;
        // Re-seal the checksum so only the version differs.
        let body_len = bytes.len() - 32;
        let digest = sha2::Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&digest);
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(ModelError::VersionMismatch { found: 99, .. }) => {}
            other => panic!("expected version mismatch, got {other:?}"),
        }
    }
}
