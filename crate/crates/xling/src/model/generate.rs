//! Incremental decoding with a key/value cache.
//!
//! A prompt is prefilled once; cloned caches let many sampled continuations
//! share that work.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::linalg::{axpy, dot, softmax_inplace};
use super::params::{ModelParams, B_LN1, B_LN2, B_W1, B_W2, B_WK, B_WO, B_WQ, B_WV};
use super::vocab::Vocabulary;
use super::ModelError;

const RMS_EPS: f64 = 1e-6;

/// Per-layer cached keys and values for all positions decoded so far.
#[derive(Clone)]
pub struct KvCache {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    pub len: usize,
}

impl KvCache {
    pub fn new(params: &ModelParams) -> Self {
        let cap = params.config.context_len * params.config.model_dim;
        KvCache {
            keys: vec![Vec::with_capacity(cap); params.config.layers],
            values: vec![Vec::with_capacity(cap); params.config.layers],
            len: 0,
        }
    }
}

fn rmsnorm_vec(x: &[f64], gain: &[f64], out: &mut [f64]) {
    let d = x.len();
    let ms = dot(x, x) / d as f64;
    let inv = 1.0 / (ms + RMS_EPS).sqrt();
    for j in 0..d {
        out[j] = gain[j] * x[j] * inv;
    }
}

/// Advances the cache by one token and returns the next-token logits.
pub fn step(params: &ModelParams, cache: &mut KvCache, id: u32) -> Result<Vec<f64>, ModelError> {
    let cfg = &params.config;
    let d = cfg.model_dim;
    let heads = cfg.heads;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let t = cache.len;
    if t >= cfg.context_len {
        return Err(ModelError::ContextOverflow {
            len: t + 1,
            context_len: cfg.context_len,
        });
    }
    let id = id as usize;
    if id >= cfg.vocab_size {
        return Err(ModelError::UnknownToken(format!("id {id}")));
    }

    let tok = &params.tok_emb().data;
    let pos = &params.pos_emb().data;
    let mut x = vec![0.0; d];
    for j in 0..d {
        x[j] = tok[id * d + j] + pos[t * d + j];
    }

    let mut n = vec![0.0; d];
    let mut q = vec![0.0; d];
    let mut scores = vec![0.0; t + 1];
    for l in 0..cfg.layers {
        rmsnorm_vec(&x, &params.layer_block(l, B_LN1).data, &mut n);
        // Row-vector times weight matrix: reuse the dx kernel as y = n W
        // needs W column access; instead accumulate axpy over rows of W.
        q.fill(0.0);
        let wq = &params.layer_block(l, B_WQ).data;
        let wk = &params.layer_block(l, B_WK).data;
        let wv = &params.layer_block(l, B_WV).data;
        for (k_row, &s) in n.iter().enumerate() {
            if s != 0.0 {
                axpy(&mut q, &wq[k_row * d..(k_row + 1) * d], s);
            }
        }
        let key_store = &mut cache.keys[l];
        let val_store = &mut cache.values[l];
        let base = key_store.len();
        key_store.resize(base + d, 0.0);
        val_store.resize(base + d, 0.0);
        for (k_row, &s) in n.iter().enumerate() {
            if s != 0.0 {
                axpy(&mut key_store[base..base + d], &wk[k_row * d..(k_row + 1) * d], s);
                axpy(&mut val_store[base..base + d], &wv[k_row * d..(k_row + 1) * d], s);
            }
        }

        let mut ctx = vec![0.0; d];
        for h in 0..heads {
            let off = h * hd;
            let qh = &q[off..off + hd];
            for u in 0..=t {
                scores[u] = dot(qh, &key_store[u * d + off..u * d + off + hd]) * scale;
            }
            softmax_inplace(&mut scores[..t + 1]);
            for u in 0..=t {
                axpy(
                    &mut ctx[off..off + hd],
                    &val_store[u * d + off..u * d + off + hd],
                    scores[u],
                );
            }
        }
        let wo = &params.layer_block(l, B_WO).data;
        for (k_row, &s) in ctx.iter().enumerate() {
            if s != 0.0 {
                axpy(&mut x, &wo[k_row * d..(k_row + 1) * d], s);
            }
        }

        let f = cfg.ffn_dim;
        rmsnorm_vec(&x, &params.layer_block(l, B_LN2).data, &mut n);
        let w1 = &params.layer_block(l, B_W1).data;
        let w2 = &params.layer_block(l, B_W2).data;
        let mut a1 = vec![0.0; f];
        for (k_row, &s) in n.iter().enumerate() {
            if s != 0.0 {
                axpy(&mut a1, &w1[k_row * f..(k_row + 1) * f], s);
            }
        }
        for (k_row, a) in a1.iter().enumerate() {
            if *a > 0.0 {
                axpy(&mut x, &w2[k_row * d..(k_row + 1) * d], *a);
            }
        }
    }

    let mut nf = vec![0.0; d];
    rmsnorm_vec(&x, &params.final_norm().data, &mut nf);
    let vocab = cfg.vocab_size;
    let mut logits = vec![0.0; vocab];
    // out_proj is d x vocab; logits = nf W via axpy over rows of W.
    let wout = &params.out_proj().data;
    for (k_row, &s) in nf.iter().enumerate() {
        if s != 0.0 {
            axpy(&mut logits, &wout[k_row * vocab..(k_row + 1) * vocab], s);
        }
    }
    cache.len = t + 1;
    Ok(logits)
}

/// Feeds a whole prompt through the cache, returning the last logits.
/// On an empty cache this runs one batched forward pass (much faster than
/// stepping token by token) and seeds the cache from its keys and values.
pub fn prefill(
    params: &ModelParams,
    cache: &mut KvCache,
    ids: &[u32],
) -> Result<Vec<f64>, ModelError> {
    if ids.is_empty() {
        return Err(ModelError::InvalidConfig("empty prompt".into()));
    }
    if cache.len != 0 {
        let mut logits = Vec::new();
        for &id in ids {
            logits = step(params, cache, id)?;
        }
        return Ok(logits);
    }
    let fwd = super::net::forward_cached(params, ids)?;
    for l in 0..params.config.layers {
        let (k, v) = super::net::cache_kv(&fwd, l);
        cache.keys[l].extend_from_slice(k);
        cache.values[l].extend_from_slice(v);
    }
    cache.len = ids.len();
    let vocab = params.config.vocab_size;
    Ok(fwd.logits[(ids.len() - 1) * vocab..ids.len() * vocab].to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeMode {
    Greedy,
    /// Softmax sampling at the given temperature.
    Temperature(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub max_new: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generated {
    /// Sampled token ids, end-of-sequence excluded.
    pub ids: Vec<u32>,
    /// True when the context window closed before end-of-sequence.
    pub truncated: bool,
}

fn pick(logits: &[f64], mode: DecodeMode, rng: &mut ChaCha8Rng) -> u32 {
    match mode {
        DecodeMode::Greedy => argmax(logits),
        DecodeMode::Temperature(tau) => {
            let mut probs: Vec<f64> = logits.iter().map(|&l| l / tau).collect();
            softmax_inplace(&mut probs);
            let r: f64 = rng.gen();
            let mut cum = 0.0;
            for (i, p) in probs.iter().enumerate() {
                cum += p;
                if r < cum {
                    return i as u32;
                }
            }
            argmax(logits)
        }
    }
}

fn argmax(logits: &[f64]) -> u32 {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in logits.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best as u32
}

fn decode_from(
    params: &ModelParams,
    mut cache: KvCache,
    mut logits: Vec<f64>,
    vocab: &Vocabulary,
    decode: &DecodeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Generated, ModelError> {
    let eos = vocab.eos_id();
    let mut out = Vec::new();
    let mut truncated = false;
    for _ in 0..decode.max_new {
        let next = pick(&logits, decode.mode, rng);
        if next == eos {
            return Ok(Generated {
                ids: out,
                truncated: false,
            });
        }
        out.push(next);
        if cache.len >= params.config.context_len {
            truncated = true;
            break;
        }
        logits = step(params, &mut cache, next)?;
    }
    if cache.len >= params.config.context_len {
        truncated = true;
    }
    Ok(Generated {
        ids: out,
        truncated,
    })
}

/// Generates one continuation of the prompt.
pub fn generate(
    params: &ModelParams,
    vocab: &Vocabulary,
    prompt_ids: &[u32],
    decode: &DecodeConfig,
) -> Result<Generated, ModelError> {
    let mut cache = KvCache::new(params);
    let logits = prefill(params, &mut cache, prompt_ids)?;
    let mut rng = ChaCha8Rng::seed_from_u64(decode.seed);
    decode_from(params, cache, logits, vocab, decode, &mut rng)
}

/// Generates `k` continuations sharing one prompt prefill. Each sample gets
/// an independent RNG stream, so results do not depend on `k`.
pub fn generate_many(
    params: &ModelParams,
    vocab: &Vocabulary,
    prompt_ids: &[u32],
    k: usize,
    decode: &DecodeConfig,
) -> Result<Vec<Generated>, ModelError> {
    let mut cache = KvCache::new(params);
    let logits = prefill(params, &mut cache, prompt_ids)?;
    let mut outs = Vec::with_capacity(k);
    for i in 0..k {
        let mut rng = ChaCha8Rng::seed_from_u64(decode.seed);
        rng.set_stream(i as u64);
        outs.push(decode_from(
            params,
            cache.clone(),
            logits.clone(),
            vocab,
            decode,
            &mut rng,
        )?);
    }
    Ok(outs)
}
