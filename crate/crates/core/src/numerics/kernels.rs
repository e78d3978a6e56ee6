//! Forward kernels and their paired backward passes.
//!
//! Every product accumulates each output entry sequentially over the inner
//! index in ascending order, so results are bit-reproducible within a build.

use super::{Matrix, Vector};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Register-blocked `out += A · b`, where `A[i][kk] = a[i*rs + kk*cs]`.
///
/// Each output entry still accumulates sequentially over `kk` ascending, so
/// the blocking changes speed, not bits.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn gemm_strided(
    a: &[f64],
    rs: usize,
    cs: usize,
    m: usize,
    k: usize,
    b: &[f64],
    n: usize,
    out: &mut [f64],
) {
    const MR: usize = 4;
    const NR: usize = 32;
    let mut i = 0;
    while i + MR <= m {
        let mut j = 0;
        while j + NR <= n {
            let mut acc = [[0.0f64; NR]; MR];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&out[(i + r) * n + j..(i + r) * n + j + NR]);
            }
            for kk in 0..k {
                let brow: &[f64; NR] = b[kk * n + j..kk * n + j + NR].try_into().expect("NR");
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = a[(i + r) * rs + kk * cs];
                    for c in 0..NR {
                        row[c] += av * brow[c];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                out[(i + r) * n + j..(i + r) * n + j + NR].copy_from_slice(row);
            }
            j += NR;
        }
        if j < n {
            for r in i..i + MR {
                gemm_row_tail(a, rs, cs, r, k, b, n, j, out);
            }
        }
        i += MR;
    }
    for r in i..m {
        gemm_row_tail(a, rs, cs, r, k, b, n, 0, out);
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn gemm_row_tail(
    a: &[f64],
    rs: usize,
    cs: usize,
    r: usize,
    k: usize,
    b: &[f64],
    n: usize,
    j0: usize,
    out: &mut [f64],
) {
    let out_row = &mut out[r * n + j0..(r + 1) * n];
    for kk in 0..k {
        let av = a[r * rs + kk * cs];
        let b_row = &b[kk * n + j0..(kk + 1) * n];
        for (o, &bv) in out_row.iter_mut().zip(b_row) {
            *o += av * bv;
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_strided_avx2(
    a: &[f64],
    rs: usize,
    cs: usize,
    m: usize,
    k: usize,
    b: &[f64],
    n: usize,
    out: &mut [f64],
) {
    // Same code, compiled with wider vectors. No FMA: products and sums
    // round separately exactly as in the portable path.
    gemm_strided(a, rs, cs, m, k, b, n, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_strided_avx512(
    a: &[f64],
    rs: usize,
    cs: usize,
    m: usize,
    k: usize,
    b: &[f64],
    n: usize,
    out: &mut [f64],
) {
    gemm_strided(a, rs, cs, m, k, b, n, out)
}

#[allow(clippy::too_many_arguments)]
fn gemm_dispatch(
    a: &[f64],
    rs: usize,
    cs: usize,
    m: usize,
    k: usize,
    b: &[f64],
    n: usize,
    out: &mut [f64],
) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the CPU supports AVX-512F, checked just above.
            unsafe { gemm_strided_avx512(a, rs, cs, m, k, b, n, out) };
            return;
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            unsafe { gemm_strided_avx2(a, rs, cs, m, k, b, n, out) };
            return;
        }
    }
    gemm_strided(a, rs, cs, m, k, b, n, out)
}

/// `out += a · b` on raw row-major buffers (`a` is m×k, `b` is k×n).
pub(crate) fn gemm_acc(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    gemm_dispatch(a, k, 1, m, k, b, n, out);
}

/// `out += aᵀ · b` where `a` is k×m and `b` is k×n.
pub(crate) fn gemm_tn_acc(a: &[f64], k: usize, m: usize, b: &[f64], n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    gemm_dispatch(a, 1, m, m, k, b, n, out);
}

fn check_finite(m: &Matrix, op: &'static str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(Error::Dimension {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows(), b.cols());
    gemm_acc(a.data(), a.rows(), a.cols(), b.data(), b.cols(), out.data_mut());
    check_finite(&out, "matmul")?;
    Ok(out)
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::Dimension {
            op: "matmul_tn",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.cols(), b.cols());
    gemm_tn_acc(a.data(), a.rows(), a.cols(), b.data(), b.cols(), out.data_mut());
    check_finite(&out, "matmul_tn")?;
    Ok(out)
}

/// `a · bᵀ`.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::Dimension {
            op: "matmul_nt",
            left: a.shape(),
            right: b.shape(),
        });
    }
    matmul(a, &b.transpose())
}

/// Gradients of `a · b` given the upstream gradient: `(d_out·bᵀ, aᵀ·d_out)`.
pub fn matmul_backward(a: &Matrix, b: &Matrix, d_out: &Matrix) -> Result<(Matrix, Matrix)> {
    if a.cols() != b.rows() {
        return Err(Error::Dimension {
            op: "matmul_backward",
            left: a.shape(),
            right: b.shape(),
        });
    }
    if d_out.shape() != (a.rows(), b.cols()) {
        return Err(Error::Dimension {
            op: "matmul_backward",
            left: (a.rows(), b.cols()),
            right: d_out.shape(),
        });
    }
    Ok((matmul_nt(d_out, b)?, matmul_tn(a, d_out)?))
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
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

/// `dx = y ⊙ (dy − ⟨dy, y⟩)` for one softmax row.
pub(crate) fn softmax_backward_row(y: &[f64], dy: &[f64], dx: &mut [f64]) {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    for ((d, &yv), &g) in dx.iter_mut().zip(y).zip(dy) {
        *d = yv * (g - dot);
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

/// Backward of [`softmax_rows`] given its output `y`.
pub fn softmax_rows_backward(y: &Matrix, dy: &Matrix) -> Result<Matrix> {
    y.ensure_same_shape(dy, "softmax_rows_backward")?;
    let mut dx = Matrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        softmax_backward_row(y.row(r), dy.row(r), dx.row_mut(r));
    }
    Ok(dx)
}

/// Saved normalization state for one row-wise layer norm.
#[derive(Debug, Clone)]
pub(crate) struct LayerNormCache {
    pub xhat: Matrix,
    pub rstd: Vec<f64>,
}

pub(crate) fn layer_norm_rows(
    x: &Matrix,
    gain: &[f64],
    shift: &[f64],
    eps: f64,
) -> (Matrix, LayerNormCache) {
    let d = x.cols();
    debug_assert_eq!(gain.len(), d);
    debug_assert_eq!(shift.len(), d);
    let mut out = Matrix::zeros(x.rows(), d);
    let mut xhat = Matrix::zeros(x.rows(), d);
    let mut rstd = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + eps).sqrt();
        rstd.push(rs);
        let xh = xhat.row_mut(r);
        for (h, &v) in xh.iter_mut().zip(row) {
            *h = (v - mean) * rs;
        }
        let o = out.row_mut(r);
        for j in 0..d {
            o[j] = xh[j] * gain[j] + shift[j];
        }
    }
    (out, LayerNormCache { xhat, rstd })
}

/// Returns `dx` and accumulates into `d_gain`/`d_shift`.
pub(crate) fn layer_norm_rows_backward(
    cache: &LayerNormCache,
    gain: &[f64],
    dy: &Matrix,
    d_gain: &mut [f64],
    d_shift: &mut [f64],
) -> Matrix {
    let d = dy.cols();
    let mut dx = Matrix::zeros(dy.rows(), d);
    let mut dxhat = vec![0.0; d];
    for r in 0..dy.rows() {
        let g = dy.row(r);
        let xh = cache.xhat.row(r);
        for j in 0..d {
            d_gain[j] += g[j] * xh[j];
            d_shift[j] += g[j];
            dxhat[j] = g[j] * gain[j];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let rs = cache.rstd[r];
        let out = dx.row_mut(r);
        for j in 0..d {
            out[j] = rs * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

fn ensure_len(a: usize, b: usize, op: &'static str) -> Result<()> {
    if a != b {
        return Err(Error::Dimension {
            op,
            left: (1, a),
            right: (1, b),
        });
    }
    Ok(())
}

/// Normalize to zero mean / unit variance, then apply `⊙gain + shift`.
pub fn layer_norm(x: &Vector, gain: &Vector, shift: &Vector, eps: f64) -> Result<Vector> {
    ensure_len(x.len(), gain.len(), "layer_norm")?;
    ensure_len(x.len(), shift.len(), "layer_norm")?;
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("layer_norm eps must be > 0, got {eps}")));
    }
    let xm = Matrix::from_vec(1, x.len(), x.as_slice().to_vec())?;
    let (out, _) = layer_norm_rows(&xm, gain.as_slice(), shift.as_slice(), eps);
    Ok(Vector::from(out.into_data()))
}

/// Gradients `(dx, d_gain, d_shift)` of [`layer_norm`].
pub fn layer_norm_backward(
    x: &Vector,
    gain: &Vector,
    eps: f64,
    dy: &Vector,
) -> Result<(Vector, Vector, Vector)> {
    ensure_len(x.len(), gain.len(), "layer_norm_backward")?;
    ensure_len(x.len(), dy.len(), "layer_norm_backward")?;
    let n = x.len();
    let xm = Matrix::from_vec(1, n, x.as_slice().to_vec())?;
    let zero = vec![0.0; n];
    let (_, cache) = layer_norm_rows(&xm, gain.as_slice(), &zero, eps);
    let dym = Matrix::from_vec(1, n, dy.as_slice().to_vec())?;
    let mut dg = vec![0.0; n];
    let mut ds = vec![0.0; n];
    let dx = layer_norm_rows_backward(&cache, gain.as_slice(), &dym, &mut dg, &mut ds);
    Ok((Vector::from(dx.into_data()), dg.into(), ds.into()))
}

pub(crate) const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
pub(crate) const GELU_A: f64 = 0.044_715;

#[inline]
pub(crate) fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = inner.tanh();
    let d_inner = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
}

/// Tanh-approximated GELU, elementwise.
pub fn gelu(x: &Vector) -> Vector {
    x.as_slice().iter().map(|&v| gelu_scalar(v)).collect::<Vec<_>>().into()
}

pub fn gelu_backward(x: &Vector, dy: &Vector) -> Result<Vector> {
    ensure_len(x.len(), dy.len(), "gelu_backward")?;
    Ok(x
        .as_slice()
        .iter()
        .zip(dy.as_slice())
        .map(|(&v, &g)| g * gelu_grad_scalar(v))
        .collect::<Vec<_>>()
        .into())
}

fn check_targets(logits: &Matrix, targets: &[usize]) -> Result<()> {
    if targets.len() != logits.rows() {
        return Err(Error::Invalid(format!(
            "{} targets for {} logit rows",
            targets.len(),
            logits.rows()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= logits.cols()) {
        return Err(Error::Invalid(format!(
            "target index {t} out of range for {} classes",
            logits.cols()
        )));
    }
    Ok(())
}

/// Negative log-likelihood of each row's target, natural log.
pub(crate) fn row_nll(row: &[f64], target: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln() - row[target]
}

/// Sum (not mean) of per-row negative log-likelihoods.
pub fn nll_sum(logits: &Matrix, targets: &[usize]) -> Result<f64> {
    check_targets(logits, targets)?;
    Ok(targets
        .iter()
        .enumerate()
        .map(|(r, &t)| row_nll(logits.row(r), t))
        .sum())
}

/// Mean cross entropy over rows and its gradient `(softmax − onehot) / n`.
pub fn cross_entropy_logits(logits: &Matrix, targets: &[usize]) -> Result<(f64, Matrix)> {
    check_targets(logits, targets)?;
    let n = logits.rows();
    if n == 0 {
        return Err(Error::Invalid("cross entropy over zero rows".into()));
    }
    let mut loss = 0.0;
    let mut d = logits.clone();
    let inv_n = 1.0 / n as f64;
    for (r, &t) in targets.iter().enumerate() {
        loss += row_nll(logits.row(r), t);
        let row = d.row_mut(r);
        softmax_in_place(row);
        row[t] -= 1.0;
        for v in row.iter_mut() {
            *v *= inv_n;
        }
    }
    let loss = loss * inv_n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross_entropy_logits"));
    }
    Ok((loss, d))
}
