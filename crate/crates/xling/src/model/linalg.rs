//! Dense f64 kernels for the micro transformer.
//!
//! Loops are written so LLVM can vectorize them on a single core: axpy-style
//! inner loops over contiguous rows, and multi-accumulator dot products.

/// out += s * w, elementwise.
#[inline]
pub fn axpy(out: &mut [f64], w: &[f64], s: f64) {
    debug_assert_eq!(out.len(), w.len());
    for (o, x) in out.iter_mut().zip(w.iter()) {
        *o += s * x;
    }
}

/// Dot product with four independent accumulators.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// out[l x n] = x[l x m] . w[m x n]; w is row-major with input dimension as
/// rows, so y = x W.
pub fn matmul(x: &[f64], rows: usize, m: usize, w: &[f64], n: usize, out: &mut [f64]) {
    debug_assert_eq!(x.len(), rows * m);
    debug_assert_eq!(w.len(), m * n);
    debug_assert_eq!(out.len(), rows * n);
    out.fill(0.0);
    for i in 0..rows {
        let xrow = &x[i * m..(i + 1) * m];
        let orow = &mut out[i * n..(i + 1) * n];
        for (k, &s) in xrow.iter().enumerate() {
            axpy(orow, &w[k * n..(k + 1) * n], s);
        }
    }
}

/// dx[l x m] += dy[l x n] . w^T  (w stored m x n).
pub fn matmul_dx(dy: &[f64], rows: usize, n: usize, w: &[f64], m: usize, dx: &mut [f64]) {
    debug_assert_eq!(dy.len(), rows * n);
    debug_assert_eq!(w.len(), m * n);
    debug_assert_eq!(dx.len(), rows * m);
    for i in 0..rows {
        let dyrow = &dy[i * n..(i + 1) * n];
        let dxrow = &mut dx[i * m..(i + 1) * m];
        for k in 0..m {
            dxrow[k] += dot(dyrow, &w[k * n..(k + 1) * n]);
        }
    }
}

/// dw[m x n] += x^T[l x m] . dy[l x n].
pub fn matmul_dw(x: &[f64], rows: usize, m: usize, dy: &[f64], n: usize, dw: &mut [f64]) {
    debug_assert_eq!(x.len(), rows * m);
    debug_assert_eq!(dy.len(), rows * n);
    debug_assert_eq!(dw.len(), m * n);
    for i in 0..rows {
        let xrow = &x[i * m..(i + 1) * m];
        let dyrow = &dy[i * n..(i + 1) * n];
        for (k, &s) in xrow.iter().enumerate() {
            if s != 0.0 {
                axpy(&mut dw[k * n..(k + 1) * n], dyrow, s);
            }
        }
    }
}

/// Numerically stable in-place softmax over one row.
pub fn softmax_inplace(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_naive() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let w = [1.0, 0.0, -1.0, 2.0, 0.5, 1.0]; // 3x2
        let mut out = vec![0.0; 4];
        matmul(&x, 2, 3, &w, 2, &mut out);
        // Row 0: [1*1+2*(-1)+3*0.5, 1*0+2*2+3*1] = [0.5, 7]
        assert!((out[0] - 0.5).abs() < 1e-12);
        assert!((out[1] - 7.0).abs() < 1e-12);
        let naive0 = 4.0 * 1.0 + 5.0 * -1.0 + 6.0 * 0.5;
        let naive1 = 4.0 * 0.0 + 5.0 * 2.0 + 6.0 * 1.0;
        assert!((out[2] - naive0).abs() < 1e-12);
        assert!((out[3] - naive1).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut row = vec![0.3, -2.0, 5.0, 0.0];
        softmax_inplace(&mut row);
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}
