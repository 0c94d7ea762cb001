//! Dense kernels on row-major slices, generic over the float type.

use num_traits::{Float, FromPrimitive};

pub trait Scalar: Float + FromPrimitive + std::iter::Sum + Default + Send + Sync + std::fmt::Debug + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub fn c<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("representable constant")
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
}

/// `out[m×k] += d[m×n] · b[k×n]ᵀ`
pub fn matmul_bt_acc<T: Scalar>(d: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let drow = &d[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] = out[i * k + p] + dot(drow, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · d[m×n]`
pub fn matmul_at_acc<T: Scalar>(a: &[T], d: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let drow = &d[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &dv) in orow.iter_mut().zip(drow) {
                *o = *o + aip * dv;
            }
        }
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    // Four accumulators let the compiler vectorize without reassociating.
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for (j, slot) in acc.iter_mut().enumerate() {
            *slot = *slot + a[4 * i + j] * b[4 * i + j];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s = s + a[i] * b[i];
    }
    s
}

/// Add `bias[n]` to every row of `x[m×n]`.
pub fn add_bias<T: Scalar>(x: &mut [T], bias: &[T]) {
    for row in x.chunks_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v = *v + b;
        }
    }
}

/// Column sums of `d[m×n]` accumulated into `out[n]`.
pub fn sum_rows_acc<T: Scalar>(d: &[T], out: &mut [T]) {
    for row in d.chunks(out.len()) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Row-wise layer normalization. Returns (output, normalized input, reciprocal std per row).
pub fn layer_norm<T: Scalar>(x: &[T], gamma: &[T], beta: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let d = gamma.len();
    let rows = x.len() / d;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let inv_d = c::<T>(1.0 / d as f64);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + c(LN_EPS)).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            y[r * d + j] = h * gamma[j] + beta[j];
        }
    }
    (y, xhat, rstd)
}

/// Backward of [`layer_norm`]; accumulates parameter grads and returns dx.
pub fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    rstd: &[T],
    gamma: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Vec<T> {
    let d = gamma.len();
    let rows = dy.len() / d;
    let mut dx = vec![T::zero(); dy.len()];
    let inv_d = c::<T>(1.0 / d as f64);
    let mut dxhat = vec![T::zero(); d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for j in 0..d {
            dgamma[j] = dgamma[j] + dyr[j] * xh[j];
            dbeta[j] = dbeta[j] + dyr[j];
            dxhat[j] = dyr[j] * gamma[j];
            mean_dxhat = mean_dxhat + dxhat[j];
            mean_dxhat_xhat = mean_dxhat_xhat + dxhat[j] * xh[j];
        }
        mean_dxhat = mean_dxhat * inv_d;
        mean_dxhat_xhat = mean_dxhat_xhat * inv_d;
        for j in 0..d {
            dx[r * d + j] = rstd[r] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu<T: Scalar>(u: T) -> T {
    let t = (c::<T>(GELU_C) * (u + c::<T>(GELU_A) * u * u * u)).tanh();
    c::<T>(0.5) * u * (T::one() + t)
}

#[inline]
pub fn gelu_grad<T: Scalar>(u: T) -> T {
    let inner = c::<T>(GELU_C) * (u + c::<T>(GELU_A) * u * u * u);
    let t = inner.tanh();
    let dinner = c::<T>(GELU_C) * (T::one() + c::<T>(3.0 * GELU_A) * u * u);
    c::<T>(0.5) * (T::one() + t) + c::<T>(0.5) * u * (T::one() - t * t) * dinner
}

/// In-place softmax of one row.
pub fn softmax_inplace<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z = z + *v;
    }
    for v in row.iter_mut() {
        *v = *v / z;
    }
}

/// log Σ exp(row), stable.
pub fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree_with_naive() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut out = vec![0.0; m * n];
        matmul_acc(&a, &b, &mut out, m, k, n);
        for i in 0..m {
            for j in 0..n {
                let naive: f64 = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
                assert!((out[i * n + j] - naive).abs() < 1e-12);
            }
        }
        // d·bᵀ and aᵀ·d against naive sums.
        let d: Vec<f64> = (0..m * n).map(|i| i as f64 * 0.1 - 0.5).collect();
        let mut da = vec![0.0; m * k];
        matmul_bt_acc(&d, &b, &mut da, m, k, n);
        let mut db = vec![0.0; k * n];
        matmul_at_acc(&a, &d, &mut db, m, k, n);
        for i in 0..m {
            for p in 0..k {
                let naive: f64 = (0..n).map(|j| d[i * n + j] * b[p * n + j]).sum();
                assert!((da[i * k + p] - naive).abs() < 1e-12);
            }
        }
        for p in 0..k {
            for j in 0..n {
                let naive: f64 = (0..m).map(|i| a[i * k + p] * d[i * n + j]).sum();
                assert!((db[p * n + j] - naive).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gelu_derivative_matches_differences() {
        for &u in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(u + h) - gelu(u - h)) / (2.0 * h);
            assert!((fd - gelu_grad(u)).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = vec![1.0f64, 2.0, 3.0, 4.0, -1.0, 0.0, 5.0, 2.0];
        let (y, _, _) = layer_norm(&x, &[1.0; 4], &[0.0; 4]);
        for row in y.chunks(4) {
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
