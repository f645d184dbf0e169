//! Parameter storage for the micro decoder-only model.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub context_len: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    pub fn defaults(vocab_size: usize) -> Self {
        ModelConfig {
            layers: 4,
            model_dim: 128,
            heads: 4,
            ffn_dim: 512,
            context_len: 512,
            vocab_size,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.model_dim % self.heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.layers == 0 || self.vocab_size < 4 || self.context_len == 0 {
            return Err(ModelError::InvalidConfig("degenerate model shape".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

/// One named parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Tensor {
            name: name.into(),
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Per-layer block offsets inside `ModelParams::blocks`.
pub const LAYER_BLOCKS: usize = 8;
pub const B_LN1: usize = 0;
pub const B_WQ: usize = 1;
pub const B_WK: usize = 2;
pub const B_WV: usize = 3;
pub const B_WO: usize = 4;
pub const B_LN2: usize = 5;
pub const B_W1: usize = 6;
pub const B_W2: usize = 7;

/// All weights of the model in a fixed, documented block order:
/// token embedding, position embedding, `layers` x (norm1, wq, wk, wv, wo,
/// norm2, w1, w2), final norm, output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub blocks: Vec<Tensor>,
}

impl ModelParams {
    pub fn block_layout(config: &ModelConfig) -> Vec<(String, usize, usize)> {
        let d = config.model_dim;
        let f = config.ffn_dim;
        let mut layout = vec![
            ("tok_emb".to_string(), config.vocab_size, d),
            ("pos_emb".to_string(), config.context_len, d),
        ];
        for l in 0..config.layers {
            layout.push((format!("layer{l}.norm1"), 1, d));
            layout.push((format!("layer{l}.wq"), d, d));
            layout.push((format!("layer{l}.wk"), d, d));
            layout.push((format!("layer{l}.wv"), d, d));
            layout.push((format!("layer{l}.wo"), d, d));
            layout.push((format!("layer{l}.norm2"), 1, d));
            layout.push((format!("layer{l}.w1"), d, f));
            layout.push((format!("layer{l}.w2"), f, d));
        }
        layout.push(("final_norm".to_string(), 1, d));
        layout.push(("out_proj".to_string(), d, config.vocab_size));
        layout
    }

    pub fn zeros_like_config(config: ModelConfig) -> Self {
        let blocks = Self::block_layout(&config)
            .into_iter()
            .map(|(name, r, c)| Tensor::zeros(name, r, c))
            .collect();
        ModelParams { config, blocks }
    }

    /// Gaussian init scaled by fan-in; norms start at one.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = Self::zeros_like_config(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for block in &mut params.blocks {
            if block.name.contains("norm") {
                block.data.fill(1.0);
            } else {
                let std = if block.name == "tok_emb" || block.name == "pos_emb" {
                    0.02
                } else {
                    (1.0 / block.rows as f64).sqrt() * 0.5
                };
                for v in &mut block.data {
                    *v = gauss(&mut rng) * std;
                }
            }
        }
        Ok(params)
    }

    pub fn layer_block(&self, layer: usize, offset: usize) -> &Tensor {
        &self.blocks[2 + layer * LAYER_BLOCKS + offset]
    }

    pub fn tok_emb(&self) -> &Tensor {
        &self.blocks[0]
    }

    pub fn pos_emb(&self) -> &Tensor {
        &self.blocks[1]
    }

    pub fn final_norm(&self) -> &Tensor {
        &self.blocks[self.blocks.len() - 2]
    }

    pub fn out_proj(&self) -> &Tensor {
        &self.blocks[self.blocks.len() - 1]
    }

    pub fn num_parameters(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| b.data.iter().all(|v| v.is_finite()))
    }
}

/// Gradient buffers shaped like the parameters.
pub fn zero_grads(params: &ModelParams) -> Vec<Tensor> {
    params
        .blocks
        .iter()
        .map(|b| Tensor::zeros(b.name.clone(), b.rows, b.cols))
        .collect()
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_matches_blocks() {
        let cfg = ModelConfig::defaults(100);
        let p = ModelParams::init(cfg, 1).unwrap();
        let layout = ModelParams::block_layout(&cfg);
        assert_eq!(p.blocks.len(), layout.len());
        for (b, (name, r, c)) in p.blocks.iter().zip(layout.iter()) {
            assert_eq!(&b.name, name);
            assert_eq!((b.rows, b.cols), (*r, *c));
        }
        assert!(p.all_finite());
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::defaults(50);
        let a = ModelParams::init(cfg, 9).unwrap();
        let b = ModelParams::init(cfg, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn indivisible_heads_rejected() {
        let mut cfg = ModelConfig::defaults(50);
        cfg.model_dim = 130;
        assert!(ModelParams::init(cfg, 1).is_err());
    }
}
