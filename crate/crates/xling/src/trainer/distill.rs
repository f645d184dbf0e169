//! Cross-lingual distillation: token-level cross-entropy from a constant
//! high-resource teacher distribution to the low-resource student.

use crate::model::{
    backward_from_dlogits, forward_cached, loss_and_grads, softmax_rows, ModelParams, Tensor,
};

use super::example::{ParallelPair, TrainingExample};
use super::optim::Adam;
use super::TrainError;

/// L_d = -(1/n) sum_t sum_v P_high[t][v] * ln P_low[t][v] over masked rows.
/// Both sequences are per-token probability rows of equal width.
pub fn distill_loss(
    p_high: &[Vec<f64>],
    p_low: &[Vec<f64>],
    mask: &[bool],
) -> Result<f64, TrainError> {
    if p_high.len() != p_low.len() || p_high.len() != mask.len() {
        return Err(TrainError::Pairing(format!(
            "length mismatch: {} vs {} vs mask {}",
            p_high.len(),
            p_low.len(),
            mask.len()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((ph, pl), m) in p_high.iter().zip(p_low.iter()).zip(mask.iter()) {
        if !m {
            continue;
        }
        if ph.len() != pl.len() {
            return Err(TrainError::Pairing("distribution widths differ".into()));
        }
        n += 1;
        for (h, l) in ph.iter().zip(pl.iter()) {
            if *h > 0.0 {
                sum -= h * l.max(1e-300).ln();
            }
        }
    }
    if n == 0 {
        return Err(TrainError::Pairing("no masked positions".into()));
    }
    Ok(sum / n as f64)
}

/// Teacher distributions: softmax rows of the high-resource branch at its
/// masked (response) positions. Computed without gradients and then held
/// constant.
pub fn teacher_distributions(
    params: &ModelParams,
    high: &TrainingExample,
) -> Result<Vec<Vec<f64>>, TrainError> {
    let row = high.batch_row();
    let cache = forward_cached(params, &row.input_ids)?;
    Ok(softmax_rows(
        &cache.logits,
        params.config.vocab_size,
        &row.mask,
    ))
}

/// Student-side distillation loss of one pair against fixed teacher rows.
pub fn student_distill_loss(
    params: &ModelParams,
    low: &TrainingExample,
    teacher: &[Vec<f64>],
) -> Result<f64, TrainError> {
    let row = low.batch_row();
    let cache = forward_cached(params, &row.input_ids)?;
    let student = softmax_rows(&cache.logits, params.config.vocab_size, &row.mask);
    let mask = vec![true; student.len()];
    distill_loss(teacher, &student, &mask)
}

/// Accumulates `scale` times the gradient of the per-pair distillation loss
/// into `grads`. dL_d/dz_low[t] = (1/n)(softmax(z_low[t]) - P_high[t]).
fn student_distill_backward(
    params: &ModelParams,
    low: &TrainingExample,
    teacher: &[Vec<f64>],
    scale: f64,
    grads: &mut [Tensor],
) -> Result<f64, TrainError> {
    let row = low.batch_row();
    let cache = forward_cached(params, &row.input_ids)?;
    let vocab = params.config.vocab_size;
    let n = teacher.len();
    if n != row.masked_count() {
        return Err(TrainError::Pairing(format!(
            "teacher rows {} vs student masked positions {}",
            n,
            row.masked_count()
        )));
    }
    let mut dlogits = vec![0.0; row.input_ids.len() * vocab];
    let mut loss = 0.0;
    let mut k = 0usize;
    let inv = 1.0 / n as f64;
    for (t, m) in row.mask.iter().enumerate() {
        if !m {
            continue;
        }
        let drow = &mut dlogits[t * vocab..(t + 1) * vocab];
        drow.copy_from_slice(&cache.logits[t * vocab..(t + 1) * vocab]);
        crate::model::linalg::softmax_inplace(drow);
        let trow = &teacher[k];
        for (d, h) in drow.iter_mut().zip(trow.iter()) {
            if *h > 0.0 {
                loss -= h * d.max(1e-300).ln();
            }
        }
        for (d, h) in drow.iter_mut().zip(trow.iter()) {
            *d = scale * inv * (*d - *h);
        }
        k += 1;
    }
    backward_from_dlogits(params, &row.input_ids, &cache, &dlogits, grads);
    Ok(loss * inv)
}

/// Mean distillation loss over pairs with gradients (teacher constant),
/// scaled by `scale` into `grads`.
pub fn distill_loss_and_grads(
    params: &ModelParams,
    pairs: &[ParallelPair],
    scale: f64,
    grads: &mut [Tensor],
) -> Result<f64, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::Pairing("no parallel pairs".into()));
    }
    let per_pair = scale / pairs.len() as f64;
    let mut total = 0.0;
    for pair in pairs {
        let teacher = teacher_distributions(params, &pair.high)?;
        total += student_distill_backward(params, &pair.low, &teacher, per_pair, grads)?;
    }
    Ok(total / pairs.len() as f64)
}

/// One optimizer step on L_total = L_x + beta * L_d.
pub fn combined_step(
    params: &mut ModelParams,
    opt: &mut Adam,
    lr: f64,
    plain: &[TrainingExample],
    pairs: &[ParallelPair],
    beta: f64,
) -> Result<(f64, f64), TrainError> {
    let rows: Vec<_> = plain.iter().map(|e| e.batch_row()).collect();
    let (lx, mut grads) = loss_and_grads(params, &rows)?;
    let ld = if beta != 0.0 && !pairs.is_empty() {
        distill_loss_and_grads(params, pairs, beta, &mut grads)?
    } else {
        0.0
    };
    opt.step(params, &grads, lr);
    Ok((lx, ld))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_hot(v: usize, at: usize) -> Vec<f64> {
        let mut row = vec![0.0; v];
        row[at] = 1.0;
        row
    }

    fn random_dist(v: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut row: Vec<f64> = (0..v).map(|_| rng.gen_range(0.01..1.0)).collect();
        let s: f64 = row.iter().sum();
        for x in &mut row {
            *x /= s;
        }
        row
    }

    #[test]
    fn matching_one_hots_give_zero() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| one_hot(7, i)).collect();
        let mask = vec![true; 5];
        let ld = distill_loss(&rows, &rows, &mask).unwrap();
        assert!(ld.abs() < 1e-12);
    }

    #[test]
    fn uniform_pair_gives_ln_vocab() {
        let v = 13;
        let uni = vec![vec![1.0 / v as f64; v]; 4];
        let mask = vec![true; 4];
        let ld = distill_loss(&uni, &uni, &mask).unwrap();
        assert!((ld - (v as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn gibbs_inequality_holds_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let h = vec![random_dist(9, &mut rng)];
            let l = vec![random_dist(9, &mut rng)];
            let ld = distill_loss(&h, &l, &[true]).unwrap();
            let entropy: f64 = h[0].iter().map(|p| -p * p.ln()).sum();
            assert!(ld + 1e-9 >= entropy);
        }
    }

    #[test]
    fn interpolating_student_toward_teacher_decreases_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_dist(8, &mut rng);
        let l = random_dist(8, &mut rng);
        let mut prev = f64::INFINITY;
        for step in 0..=4 {
            let w = step as f64 / 4.0;
            let mix: Vec<f64> = l
                .iter()
                .zip(h.iter())
                .map(|(a, b)| (1.0 - w) * a + w * b)
                .collect();
            let ld = distill_loss(&[h.clone()], &[mix], &[true]).unwrap();
            assert!(ld <= prev + 1e-9);
            prev = ld;
        }
    }

    #[test]
    fn length_mismatch_is_a_pairing_error() {
        let a = vec![one_hot(4, 0)];
        let b = vec![one_hot(4, 0), one_hot(4, 1)];
        assert!(distill_loss(&a, &b, &[true]).is_err());
    }
}
