//! Dense row-major kernels. Loop orders keep the innermost loop contiguous so
//! the compiler can vectorize it.

/// `a[m×k] · b[k×n]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    gemm(a, (k, 1), b, (n, 1), m, k, n)
}

/// `aᵀ · g` where `a` is `[k×m]` and `g` is `[k×n]`; result `[m×n]`.
pub fn matmul_tn(a: &[f64], g: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    gemm(a, (1, m), g, (n, 1), m, k, n)
}

/// `a · bᵀ` where `a` is `[m×k]` and `b` is `[n×k]`; result `[m×n]`.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    gemm(a, (k, 1), b, (1, k), m, k, n)
}

/// Strided `[m×k] · [k×n]` into a fresh row-major buffer.
fn gemm(a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    assert!(a.len() >= (m - 1) * sa.0 + (k - 1) * sa.1 + 1);
    assert!(b.len() >= (k - 1) * sb.0 + (n - 1) * sb.1 + 1);
    // SAFETY: the asserts above keep every strided access of `a` and `b` in
    // bounds, and `out` is exactly `m·n` row-major.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

/// Transpose of a `[rows×cols]` matrix.
#[cfg(test)]
fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

pub fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
