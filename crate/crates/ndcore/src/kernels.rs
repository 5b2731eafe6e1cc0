//! Slice-level numeric kernels shared by the tape operations.

use crate::scalar::{lit, Scalar};

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let inner = lit::<T>(GELU_C) * (x + lit::<T>(GELU_A) * x * x * x);
    lit::<T>(0.5) * x * (T::one() + inner.tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let inner = lit::<T>(GELU_C) * (x + lit::<T>(GELU_A) * x * x * x);
    let t = inner.tanh();
    let dinner = lit::<T>(GELU_C) * (T::one() + lit::<T>(3.0 * GELU_A) * x * x);
    lit::<T>(0.5) * (T::one() + t) + lit::<T>(0.5) * x * (T::one() - t * t) * dinner
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// `out += a [m,k] * b [k,n]`
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            axpy(av, &b[p * n..(p + 1) * n], orow);
        }
    }
}

/// `da += g [m,n] * b^T`
pub fn matmul_grad_a<T: Scalar>(g: &[T], b: &[T], m: usize, k: usize, n: usize, da: &mut [T]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            da[i * k + p] += dot(grow, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `db += a^T * g [m,n]`
pub fn matmul_grad_b<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize, db: &mut [T]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            axpy(av, grow, &mut db[p * n..(p + 1) * n]);
        }
    }
}

/// Softmax of one row restricted to `mask`; masked entries are written as 0.
/// The caller guarantees at least one valid entry when a mask is given.
pub fn softmax_row<T: Scalar>(x: &[T], mask: Option<&[bool]>, out: &mut [T]) {
    let valid = |i: usize| mask.map_or(true, |m| m[i]);
    let mut max = T::neg_infinity();
    for (i, &v) in x.iter().enumerate() {
        if valid(i) && v > max {
            max = v;
        }
    }
    let mut total = T::zero();
    for (i, (o, &v)) in out.iter_mut().zip(x).enumerate() {
        if valid(i) {
            *o = (v - max).exp();
            total += *o;
        } else {
            *o = T::zero();
        }
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

#[allow(clippy::too_many_arguments)]
pub fn layer_norm<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    rows: usize,
    cols: usize,
    eps: T,
    out: &mut [T],
    xhat: &mut [T],
    inv_std: &mut [T],
) {
    let n = lit::<T>(cols as f64);
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        let mean = xr.iter().copied().sum::<T>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv = T::one() / (var + eps).sqrt();
        inv_std[r] = inv;
        for c in 0..cols {
            let h = (xr[c] - mean) * inv;
            xhat[r * cols + c] = h;
            out[r * cols + c] = gamma[c] * h + beta[c];
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<T: Scalar>(
    g: &[T],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    rows: usize,
    cols: usize,
    dx: &mut [T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) {
    let n = lit::<T>(cols as f64);
    let mut dxhat = vec![T::zero(); cols];
    for r in 0..rows {
        let gr = &g[r * cols..(r + 1) * cols];
        let hr = &xhat[r * cols..(r + 1) * cols];
        for c in 0..cols {
            dgamma[c] += gr[c] * hr[c];
            dbeta[c] += gr[c];
            dxhat[c] = gr[c] * gamma[c];
        }
        let sum_d: T = dxhat.iter().copied().sum();
        let sum_dh: T = dxhat.iter().zip(hr).map(|(&a, &b)| a * b).sum();
        for c in 0..cols {
            dx[r * cols + c] += inv_std[r] / n * (n * dxhat[c] - sum_d - hr[c] * sum_dh);
        }
    }
}
