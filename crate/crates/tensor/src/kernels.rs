//! Row-wise numeric kernels shared by the tape and by tape-free inference.

use crate::scalar::Scalar;

pub const LAYERNORM_EPS: f64 = 1e-5;

/// In-place softmax over each row of width `width`, with max subtraction.
/// Entries equal to negative infinity get probability exactly 0.
pub fn softmax_rows<T: Scalar>(x: &mut [T], width: usize) {
    for row in x.chunks_mut(width) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// `log_softmax(row)[target]` computed stably.
pub fn log_prob<T: Scalar>(row: &[T], target: usize) -> T {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
    row[target] - max - sum.ln()
}

/// Layer normalization of each row followed by the affine map `gamma, beta`.
/// Fills `mean` and `rstd` (one entry per row) when given.
pub fn layernorm_rows<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    out: &mut [T],
    mut stats: Option<(&mut [T], &mut [T])>,
) {
    let width = gamma.len();
    let n = T::of(width as f64);
    let eps = T::of(LAYERNORM_EPS);
    for (r, (row, orow)) in x.chunks(width).zip(out.chunks_mut(width)).enumerate() {
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rstd = T::one() / (var + eps).sqrt();
        for i in 0..width {
            orow[i] = (row[i] - mean) * rstd * gamma[i] + beta[i];
        }
        if let Some((m, s)) = stats.as_mut() {
            m[r] = mean;
            s[r] = rstd;
        }
    }
}

/// `y = x W + b` for `x` of shape rows x `w_rows`.
pub fn linear<T: Scalar>(x: &[T], w: &[T], b: Option<&[T]>, w_rows: usize, w_cols: usize) -> Vec<T> {
    let rows = x.len() / w_rows;
    let mut y = match b {
        Some(b) => b.iter().copied().cycle().take(rows * w_cols).collect(),
        None => vec![T::zero(); rows * w_cols],
    };
    let beta = if b.is_some() { T::one() } else { T::zero() };
    T::gemm(rows, w_rows, w_cols, x, false, w, false, &mut y, beta);
    y
}
