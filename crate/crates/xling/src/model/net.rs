//! Forward pass, exact manual backward pass, and the masked NLL loss.
//!
//! Architecture: learned token + position embeddings, pre-norm blocks with
//! multi-head causal attention and a ReLU feed-forward, RMS norms, untied
//! output projection. All math is f64 so finite-difference checks are sharp.

use super::linalg::{axpy, dot, matmul, matmul_dw, matmul_dx, softmax_inplace};
use super::params::{
    zero_grads, ModelParams, Tensor, B_LN1, B_LN2, B_W1, B_W2, B_WK, B_WO, B_WQ, B_WV,
    LAYER_BLOCKS,
};
use super::ModelError;

const RMS_EPS: f64 = 1e-6;

pub struct LayerCache {
    x_in: Vec<f64>,
    r1: Vec<f64>,
    n1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention probabilities, one L x L lower-triangular matrix per head.
    probs: Vec<f64>,
    ctx: Vec<f64>,
    h_mid: Vec<f64>,
    r2: Vec<f64>,
    n2: Vec<f64>,
    a1: Vec<f64>,
    act: Vec<f64>,
}

pub struct Cache {
    pub len: usize,
    layers: Vec<LayerCache>,
    x_final: Vec<f64>,
    rf: Vec<f64>,
    nf: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Key and value rows (len x model_dim) of one layer; lets an incremental
/// decode cache be seeded from a batched prompt forward pass.
pub fn cache_kv(cache: &Cache, layer: usize) -> (&[f64], &[f64]) {
    (&cache.layers[layer].k, &cache.layers[layer].v)
}

pub struct ForwardOutput {
    /// (len x vocab) row-major.
    pub logits: Vec<f64>,
    /// Post-block hidden states per layer, each (len x model_dim).
    pub hidden_states: Option<Vec<Vec<f64>>>,
}

fn rmsnorm_rows(x: &[f64], gain: &[f64], len: usize, d: usize, out: &mut [f64], r: &mut [f64]) {
    for t in 0..len {
        let row = &x[t * d..(t + 1) * d];
        let ms: f64 = dot(row, row) / d as f64;
        let inv = 1.0 / (ms + RMS_EPS).sqrt();
        r[t] = inv;
        for j in 0..d {
            out[t * d + j] = gain[j] * row[j] * inv;
        }
    }
}

/// dx += backward of y = gain (*) x * r; also accumulates dgain.
fn rmsnorm_backward(
    x: &[f64],
    gain: &[f64],
    r: &[f64],
    dy: &[f64],
    len: usize,
    d: usize,
    dx: &mut [f64],
    dgain: &mut [f64],
) {
    for t in 0..len {
        let row = &x[t * d..(t + 1) * d];
        let dyr = &dy[t * d..(t + 1) * d];
        let inv = r[t];
        let mut proj = 0.0;
        for j in 0..d {
            dgain[j] += dyr[j] * row[j] * inv;
            proj += dyr[j] * gain[j] * row[j];
        }
        let scale = inv * inv * inv * proj / d as f64;
        for j in 0..d {
            dx[t * d + j] += inv * gain[j] * dyr[j] - scale * row[j];
        }
    }
}

/// Full forward pass retaining every activation needed for the backward pass.
pub fn forward_cached(params: &ModelParams, ids: &[u32]) -> Result<Cache, ModelError> {
    let cfg = &params.config;
    let len = ids.len();
    if len == 0 {
        return Err(ModelError::InvalidConfig("empty sequence".into()));
    }
    if len > cfg.context_len {
        return Err(ModelError::ContextOverflow {
            len,
            context_len: cfg.context_len,
        });
    }
    let d = cfg.model_dim;
    let heads = cfg.heads;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();

    let tok = params.tok_emb();
    let pos = params.pos_emb();
    let mut x = vec![0.0; len * d];
    for (t, &id) in ids.iter().enumerate() {
        let id = id as usize;
        if id >= cfg.vocab_size {
            return Err(ModelError::UnknownToken(format!("id {id}")));
        }
        for j in 0..d {
            x[t * d + j] = tok.data[id * d + j] + pos.data[t * d + j];
        }
    }

    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let g1 = &params.layer_block(l, B_LN1).data;
        let wq = &params.layer_block(l, B_WQ).data;
        let wk = &params.layer_block(l, B_WK).data;
        let wv = &params.layer_block(l, B_WV).data;
        let wo = &params.layer_block(l, B_WO).data;
        let g2 = &params.layer_block(l, B_LN2).data;
        let w1 = &params.layer_block(l, B_W1).data;
        let w2 = &params.layer_block(l, B_W2).data;
        let f = cfg.ffn_dim;

        let x_in = x.clone();
        let mut n1 = vec![0.0; len * d];
        let mut r1 = vec![0.0; len];
        rmsnorm_rows(&x_in, g1, len, d, &mut n1, &mut r1);

        let mut q = vec![0.0; len * d];
        let mut k = vec![0.0; len * d];
        let mut v = vec![0.0; len * d];
        matmul(&n1, len, d, wq, d, &mut q);
        matmul(&n1, len, d, wk, d, &mut k);
        matmul(&n1, len, d, wv, d, &mut v);

        let mut probs = vec![0.0; heads * len * len];
        let mut ctx = vec![0.0; len * d];
        for h in 0..heads {
            let off = h * hd;
            let pmat = &mut probs[h * len * len..(h + 1) * len * len];
            for t in 0..len {
                let qrow = &q[t * d + off..t * d + off + hd];
                let srow = &mut pmat[t * len..t * len + t + 1];
                for (u, s) in srow.iter_mut().enumerate() {
                    *s = dot(qrow, &k[u * d + off..u * d + off + hd]) * scale;
                }
                softmax_inplace(srow);
                let crow = &mut ctx[t * d + off..t * d + off + hd];
                for (u, p) in pmat[t * len..t * len + t + 1].iter().enumerate() {
                    axpy(crow, &v[u * d + off..u * d + off + hd], *p);
                }
            }
        }

        let mut attn_out = vec![0.0; len * d];
        matmul(&ctx, len, d, wo, d, &mut attn_out);
        let mut h_mid = x_in.clone();
        for (hm, a) in h_mid.iter_mut().zip(attn_out.iter()) {
            *hm += a;
        }

        let mut n2 = vec![0.0; len * d];
        let mut r2 = vec![0.0; len];
        rmsnorm_rows(&h_mid, g2, len, d, &mut n2, &mut r2);

        let mut a1 = vec![0.0; len * f];
        matmul(&n2, len, d, w1, f, &mut a1);
        let act: Vec<f64> = a1.iter().map(|&z| if z > 0.0 { z } else { 0.0 }).collect();
        let mut ffn_out = vec![0.0; len * d];
        matmul(&act, len, f, w2, d, &mut ffn_out);

        x = h_mid.clone();
        for (xv, fo) in x.iter_mut().zip(ffn_out.iter()) {
            *xv += fo;
        }

        layers.push(LayerCache {
            x_in,
            r1,
            n1,
            q,
            k,
            v,
            probs,
            ctx,
            h_mid,
            r2,
            n2,
            a1,
            act,
        });
    }

    let gf = &params.final_norm().data;
    let mut nf = vec![0.0; len * d];
    let mut rf = vec![0.0; len];
    rmsnorm_rows(&x, gf, len, d, &mut nf, &mut rf);
    let mut logits = vec![0.0; len * cfg.vocab_size];
    matmul(&nf, len, d, &params.out_proj().data, cfg.vocab_size, &mut logits);

    Ok(Cache {
        len,
        layers,
        x_final: x,
        rf,
        nf,
        logits,
    })
}

/// Causal forward pass. Hidden states are the post-block activations of each
/// layer; the last entry is the final-norm output used for probes.
pub fn forward(
    params: &ModelParams,
    ids: &[u32],
    want_hidden: bool,
) -> Result<ForwardOutput, ModelError> {
    let cache = forward_cached(params, ids)?;
    let hidden_states = want_hidden.then(|| {
        let mut hs: Vec<Vec<f64>> = Vec::with_capacity(params.config.layers + 1);
        for l in 0..params.config.layers {
            let next_in = if l + 1 < params.config.layers {
                cache.layers[l + 1].x_in.clone()
            } else {
                cache.x_final.clone()
            };
            hs.push(next_in);
        }
        hs.push(cache.nf.clone());
        hs
    });
    Ok(ForwardOutput {
        logits: cache.logits,
        hidden_states,
    })
}

/// Backpropagates an arbitrary dL/dlogits through the network, accumulating
/// into `grads` (shaped like the parameter blocks).
pub fn backward_from_dlogits(
    params: &ModelParams,
    ids: &[u32],
    cache: &Cache,
    dlogits: &[f64],
    grads: &mut [Tensor],
) {
    let cfg = &params.config;
    let len = cache.len;
    let d = cfg.model_dim;
    let heads = cfg.heads;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let vocab = cfg.vocab_size;
    let n_blocks = grads.len();

    // Output projection and final norm.
    matmul_dw(&cache.nf, len, d, dlogits, vocab, &mut grads[n_blocks - 1].data);
    let mut dnf = vec![0.0; len * d];
    matmul_dx(dlogits, len, vocab, &params.out_proj().data, d, &mut dnf);
    let mut dx = vec![0.0; len * d];
    rmsnorm_backward(
        &cache.x_final,
        &params.final_norm().data,
        &cache.rf,
        &dnf,
        len,
        d,
        &mut dx,
        &mut grads[n_blocks - 2].data,
    );

    for l in (0..cfg.layers).rev() {
        let lc = &cache.layers[l];
        let f = cfg.ffn_dim;
        let base = 2 + l * LAYER_BLOCKS;
        let wq = &params.layer_block(l, B_WQ).data;
        let wk = &params.layer_block(l, B_WK).data;
        let wv = &params.layer_block(l, B_WV).data;
        let wo = &params.layer_block(l, B_WO).data;
        let w1 = &params.layer_block(l, B_W1).data;
        let w2 = &params.layer_block(l, B_W2).data;

        // FFN path: x_out = h_mid + relu(n2 W1) W2.
        matmul_dw(&lc.act, len, f, &dx, d, &mut grads[base + B_W2].data);
        let mut dact = vec![0.0; len * f];
        matmul_dx(&dx, len, d, w2, f, &mut dact);
        for (da, &z) in dact.iter_mut().zip(lc.a1.iter()) {
            if z <= 0.0 {
                *da = 0.0;
            }
        }
        matmul_dw(&lc.n2, len, d, &dact, f, &mut grads[base + B_W1].data);
        let mut dn2 = vec![0.0; len * d];
        matmul_dx(&dact, len, f, w1, d, &mut dn2);
        let mut dh_mid = dx.clone();
        rmsnorm_backward(
            &lc.h_mid,
            &params.layer_block(l, B_LN2).data,
            &lc.r2,
            &dn2,
            len,
            d,
            &mut dh_mid,
            &mut grads[base + B_LN2].data,
        );

        // Attention path: h_mid = x_in + (softmax(qk^T) v) Wo.
        matmul_dw(&lc.ctx, len, d, &dh_mid, d, &mut grads[base + B_WO].data);
        let mut dctx = vec![0.0; len * d];
        matmul_dx(&dh_mid, len, d, wo, d, &mut dctx);

        let mut dq = vec![0.0; len * d];
        let mut dk = vec![0.0; len * d];
        let mut dv = vec![0.0; len * d];
        let mut dp = vec![0.0; len];
        for h in 0..heads {
            let off = h * hd;
            let pmat = &lc.probs[h * len * len..(h + 1) * len * len];
            for t in 0..len {
                let prow = &pmat[t * len..t * len + t + 1];
                let dctx_row = &dctx[t * d + off..t * d + off + hd];
                let mut dot_pd = 0.0;
                for u in 0..=t {
                    let val = dot(dctx_row, &lc.v[u * d + off..u * d + off + hd]);
                    dp[u] = val;
                    dot_pd += prow[u] * val;
                    axpy(
                        &mut dv[u * d + off..u * d + off + hd],
                        dctx_row,
                        prow[u],
                    );
                }
                let qrow = &lc.q[t * d + off..t * d + off + hd];
                let dqrow = &mut dq[t * d + off..t * d + off + hd];
                for u in 0..=t {
                    let ds = prow[u] * (dp[u] - dot_pd) * scale;
                    if ds != 0.0 {
                        axpy(dqrow, &lc.k[u * d + off..u * d + off + hd], ds);
                        axpy(&mut dk[u * d + off..u * d + off + hd], qrow, ds);
                    }
                }
            }
        }

        matmul_dw(&lc.n1, len, d, &dq, d, &mut grads[base + B_WQ].data);
        matmul_dw(&lc.n1, len, d, &dk, d, &mut grads[base + B_WK].data);
        matmul_dw(&lc.n1, len, d, &dv, d, &mut grads[base + B_WV].data);
        let mut dn1 = vec![0.0; len * d];
        matmul_dx(&dq, len, d, wq, d, &mut dn1);
        matmul_dx(&dk, len, d, wk, d, &mut dn1);
        matmul_dx(&dv, len, d, wv, d, &mut dn1);

        let mut dx_in = dh_mid;
        rmsnorm_backward(
            &lc.x_in,
            &params.layer_block(l, B_LN1).data,
            &lc.r1,
            &dn1,
            len,
            d,
            &mut dx_in,
            &mut grads[base + B_LN1].data,
        );
        dx = dx_in;
    }

    // Embeddings.
    for (t, &id) in ids.iter().enumerate() {
        let id = id as usize;
        axpy(
            &mut grads[0].data[id * d..(id + 1) * d],
            &dx[t * d..(t + 1) * d],
            1.0,
        );
        axpy(
            &mut grads[1].data[t * d..(t + 1) * d],
            &dx[t * d..(t + 1) * d],
            1.0,
        );
    }
}

/// One batch row: next-token targets with a response-region loss mask.
#[derive(Debug, Clone)]
pub struct BatchRow {
    pub input_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    pub mask: Vec<bool>,
}

impl BatchRow {
    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Masked mean negative log-likelihood and exact gradients for a batch.
/// The mean runs over all masked positions of the whole batch, so
/// duplicating every row leaves the loss unchanged.
pub fn loss_and_grads(
    params: &ModelParams,
    batch: &[BatchRow],
) -> Result<(f64, Vec<Tensor>), ModelError> {
    let total_masked: usize = batch.iter().map(|r| r.masked_count()).sum();
    if total_masked == 0 {
        return Err(ModelError::DegenerateBatch);
    }
    let mut grads = zero_grads(params);
    let mut loss_sum = 0.0;
    for row in batch {
        let cache = forward_cached(params, &row.input_ids)?;
        let (row_loss, dlogits) =
            nll_dlogits(&cache.logits, &row.target_ids, &row.mask, params.config.vocab_size, total_masked);
        loss_sum += row_loss;
        backward_from_dlogits(params, &row.input_ids, &cache, &dlogits, &mut grads);
    }
    Ok((loss_sum / total_masked as f64, grads))
}

/// Loss contribution (sum of masked NLL) and dL/dlogits for one row, where L
/// is the batch-level mean (1/total_masked scaling baked in).
pub fn nll_dlogits(
    logits: &[f64],
    target_ids: &[u32],
    mask: &[bool],
    vocab: usize,
    total_masked: usize,
) -> (f64, Vec<f64>) {
    let len = target_ids.len();
    let mut dlogits = vec![0.0; len * vocab];
    let mut loss_sum = 0.0;
    let inv = 1.0 / total_masked as f64;
    for t in 0..len {
        if !mask[t] {
            continue;
        }
        let row = &logits[t * vocab..(t + 1) * vocab];
        let drow = &mut dlogits[t * vocab..(t + 1) * vocab];
        drow.copy_from_slice(row);
        softmax_inplace(drow);
        let target = target_ids[t] as usize;
        loss_sum += -(drow[target].max(1e-300)).ln();
        for v in drow.iter_mut() {
            *v *= inv;
        }
        drow[target] -= inv;
    }
    (loss_sum, dlogits)
}

/// Softmax distributions of the masked logit rows, in position order.
pub fn softmax_rows(logits: &[f64], vocab: usize, mask: &[bool]) -> Vec<Vec<f64>> {
    let mut rows = Vec::new();
    for (t, m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let mut row = logits[t * vocab..(t + 1) * vocab].to_vec();
        softmax_inplace(&mut row);
        rows.push(row);
    }
    rows
}

/// Forward-only masked mean NLL; the oracle side of gradient checks.
pub fn loss_only(params: &ModelParams, batch: &[BatchRow]) -> Result<f64, ModelError> {
    let total_masked: usize = batch.iter().map(|r| r.masked_count()).sum();
    if total_masked == 0 {
        return Err(ModelError::DegenerateBatch);
    }
    let mut loss_sum = 0.0;
    for row in batch {
        let cache = forward_cached(params, &row.input_ids)?;
        let vocab = params.config.vocab_size;
        for t in 0..row.target_ids.len() {
            if !row.mask[t] {
                continue;
            }
            let mut probs = cache.logits[t * vocab..(t + 1) * vocab].to_vec();
            softmax_inplace(&mut probs);
            loss_sum += -(probs[row.target_ids[t] as usize].max(1e-300)).ln();
        }
    }
    Ok(loss_sum / total_masked as f64)
}


/// Sentence probe: final-norm hidden state at the first prompt position,
/// unit-normalized.
pub fn sentence_representation(
    params: &ModelParams,
    prompt_ids: &[u32],
    position: usize,
) -> Result<Vec<f64>, ModelError> {
    let cache = forward_cached(params, prompt_ids)?;
    let d = params.config.model_dim;
    let pos = position.min(cache.len - 1);
    let mut v = cache.nf[pos * d..(pos + 1) * d].to_vec();
    let norm = dot(&v, &v).sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    Ok(v)
}
