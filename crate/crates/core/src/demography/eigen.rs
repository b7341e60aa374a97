//! Dominant eigen-triple of a nonnegative kernel and the deflated
//! pseudoinverse `(lambda I - K)^+`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{IpmError, Result};

const TOL: f64 = 1e-12;
const MAX_ITER: usize = 100_000;
/// Plain iterations before switching to powers `K^(2^s)` for slowly mixing kernels.
const PLAIN_ITER: usize = 2_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSystem {
    pub lambda: f64,
    /// Right eigenvector, `sum(u) = 1`.
    pub u: DVector<f64>,
    /// Left eigenvector, `<v, u> = 1`.
    pub v: DVector<f64>,
    pub residual_right: f64,
    pub residual_left: f64,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

fn l1_normalize(x: &mut DVector<f64>) -> Result<()> {
    let s: f64 = x.iter().map(|v| v.abs()).sum();
    if !(s > 0.0) || !s.is_finite() {
        return Err(IpmError::NoRealDominantEigenvalue);
    }
    *x /= s;
    Ok(())
}

fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Power iteration from the uniform vector, L1-normalized.
fn power_vector(k: &DMatrix<f64>) -> Result<(DVector<f64>, usize)> {
    let n = k.nrows();
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut iterations = 0;
    while iterations < PLAIN_ITER.min(MAX_ITER) {
        let mut y = k * &x;
        l1_normalize(&mut y)?;
        iterations += 1;
        let diff = max_abs_diff(&y, &x);
        x = y;
        if diff < TOL {
            return Ok((x, iterations));
        }
    }
    // Slow mixing: iterate with K^(2^s), which has the same dominant vector.
    let mut p = k.clone();
    while iterations < MAX_ITER {
        let norm = p.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(IpmError::NoRealDominantEigenvalue);
        }
        p /= norm;
        p = &p * &p;
        let mut y = &p * &x;
        l1_normalize(&mut y)?;
        iterations += n;
        let diff = max_abs_diff(&y, &x);
        x = y;
        if diff < TOL {
            return Ok((x, iterations));
        }
    }
    Err(IpmError::NoRealDominantEigenvalue)
}

/// True when some power `K^m`, `m <= 2N`, is strictly positive.
pub fn is_primitive(k: &DMatrix<f64>) -> bool {
    let n = k.nrows();
    let mut pattern: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| k[(i, j)] > 0.0).collect()).collect();
    let mut power = 1usize;
    loop {
        if pattern.iter().all(|r| r.iter().all(|&b| b)) {
            return true;
        }
        if power * 2 > 2 * n.max(1) {
            return false;
        }
        let next: Vec<Vec<bool>> = (0..n)
            .map(|i| (0..n).map(|j| (0..n).any(|m| pattern[i][m] && pattern[m][j])).collect())
            .collect();
        pattern = next;
        power *= 2;
    }
}

/// Dominant eigenvalue and eigenvectors by power iteration on `K` and `K'`.
pub fn dominant_eigs(k: &DMatrix<f64>) -> Result<EigenSystem> {
    assert!(k.is_square(), "kernel must be square");
    let mut warnings = Vec::new();
    if k.iter().any(|&v| v < 0.0) {
        warnings.push("kernel has negative entries".to_string());
    } else if !is_primitive(k) {
        warnings.push("kernel is not primitive".to_string());
    }
    let (u, it_u) = power_vector(k)?;
    let kt = k.transpose();
    let (mut v, it_v) = power_vector(&kt)?;
    let ku = k * &u;
    let vk = &kt * &v;
    let vu = v.dot(&u);
    if !(vu.abs() > 0.0) {
        return Err(IpmError::NoRealDominantEigenvalue);
    }
    let lambda = v.dot(&ku) / vu;
    v /= vu;
    let residual_right = (&ku - &u * lambda).amax();
    let residual_left = ((&vk / vu) - &v * lambda).amax();
    let knorm = k.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    if knorm == 0.0 || lambda <= 0.0 {
        return Err(IpmError::NoRealDominantEigenvalue);
    }
    let scale_u = u.amax().max(f64::MIN_POSITIVE);
    let scale_v = v.amax().max(f64::MIN_POSITIVE);
    if residual_right > 1e-8 * knorm * scale_u || residual_left > 1e-8 * knorm * scale_v {
        return Err(IpmError::NoRealDominantEigenvalue);
    }
    Ok(EigenSystem { lambda, u, v, residual_right, residual_left, iterations: it_u + it_v, warnings })
}

/// Moore-Penrose inverse of `lambda I - K` by SVD; singular values below
/// `N lambda 1e-12` are treated as zero.
///
/// nalgebra's bidiagonal SVD occasionally returns a factorization that does not
/// reproduce its input. Each candidate is checked against `A` and the next one
/// (SVD of `A'`, then a looser convergence threshold) is tried on failure.
pub fn deflated_pinv(lambda: f64, k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let a = DMatrix::<f64>::identity(n, n) * lambda - k;
    let threshold = n as f64 * lambda.abs() * 1e-12;
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    for attempt in 0..3 {
        let (m, transposed) = if attempt == 1 { (a.transpose(), true) } else { (a.clone(), false) };
        let svd = match attempt {
            2 => match m.clone().try_svd(true, true, scale * 1e-13, 0) {
                Some(s) => s,
                None => continue,
            },
            _ => m.clone().svd(true, true),
        };
        let (Some(u), Some(vt)) = (svd.u.as_ref(), svd.v_t.as_ref()) else { continue };
        let err = (u * DMatrix::from_diagonal(&svd.singular_values) * vt - &m).amax() / scale;
        let mut p = DMatrix::<f64>::zeros(n, n);
        for (s_idx, &s) in svd.singular_values.iter().enumerate() {
            if s > threshold {
                p += (vt.row(s_idx).transpose() * u.column(s_idx).transpose()) / s;
            }
        }
        if transposed {
            p.transpose_mut();
        }
        if err < 1e-12 {
            return p;
        }
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, p));
        }
    }
    best.map(|(_, p)| p).unwrap_or_else(|| DMatrix::zeros(n, n))
}
