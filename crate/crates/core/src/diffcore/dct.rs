//! Orthonormal DCT-II and its inverse.
//!
//! `X[k] = s_k Σ_n x[n] cos(π (n + ½) k / N)` with `s_0 = √(1/N)` and
//! `s_k = √(2/N)`. The transform matrix is orthogonal, so the inverse is the
//! transpose (a scaled DCT-III) and both directions are self-adjoint pairs for
//! the backward pass.

use std::f64::consts::PI;

use super::DiffError;

fn scale(k: usize, n: usize) -> f64 {
    if k == 0 {
        (1.0 / n as f64).sqrt()
    } else {
        (2.0 / n as f64).sqrt()
    }
}

pub fn dct_orthonormal(x: &[f64]) -> Result<Vec<f64>, DiffError> {
    let n = x.len();
    if n == 0 {
        return Err(DiffError::EmptyInput("dct"));
    }
    Ok((0..n)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, &v)| v * (PI * (i as f64 + 0.5) * k as f64 / n as f64).cos())
                .sum();
            scale(k, n) * s
        })
        .collect())
}

pub fn idct_orthonormal(coeffs: &[f64]) -> Result<Vec<f64>, DiffError> {
    let n = coeffs.len();
    if n == 0 {
        return Err(DiffError::EmptyInput("idct"));
    }
    Ok((0..n)
        .map(|i| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, &c)| scale(k, n) * c * (PI * (i as f64 + 0.5) * k as f64 / n as f64).cos())
                .sum()
        })
        .collect())
}
