//! Dense real polynomials stored in ascending degree order.

use num_complex::Complex64;

/// Drops exactly-zero leading (highest-degree) coefficients. The zero
/// polynomial is represented as `[0.0]`.
pub fn trim(mut p: Vec<f64>) -> Vec<f64> {
    while p.len() > 1 && *p.last().unwrap() == 0.0 {
        p.pop();
    }
    if p.is_empty() {
        p.push(0.0);
    }
    p
}

pub fn degree(p: &[f64]) -> usize {
    p.len().saturating_sub(1)
}

pub fn is_zero(p: &[f64]) -> bool {
    p.iter().all(|&c| c == 0.0)
}

pub fn eval(p: &[f64], s: Complex64) -> Complex64 {
    p.iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * s + c)
}

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    trim(out)
}

/// Sum with leading-term cancellation: a top coefficient whose magnitude is
/// within a few rounding errors of the inputs' scale is treated as zero.
pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    let mut out = Vec::with_capacity(n);
    let mut scale = Vec::with_capacity(n);
    for k in 0..n {
        let x = a.get(k).copied().unwrap_or(0.0);
        let y = b.get(k).copied().unwrap_or(0.0);
        out.push(x + y);
        scale.push(x.abs() + y.abs());
    }
    while out.len() > 1 {
        let k = out.len() - 1;
        if out[k].abs() <= 8.0 * f64::EPSILON * scale[k] {
            out.pop();
        } else {
            break;
        }
    }
    trim(out)
}

pub fn scale(p: &[f64], k: f64) -> Vec<f64> {
    trim(p.iter().map(|c| c * k).collect())
}

pub fn neg(p: &[f64]) -> Vec<f64> {
    p.iter().map(|c| -c).collect()
}

/// Number of exactly-zero low-order coefficients, i.e. the multiplicity of
/// the root at the origin.
pub fn origin_multiplicity(p: &[f64]) -> usize {
    if is_zero(p) {
        return 0;
    }
    p.iter().take_while(|&&c| c == 0.0).count()
}

/// Monic real polynomial with the given roots. Complex roots must come in
/// conjugate pairs; imaginary parts of the product are discarded.
pub fn from_roots(roots: &[Complex64]) -> Vec<f64> {
    let mut out = vec![1.0];
    let mut i = 0;
    while i < roots.len() {
        let r = roots[i];
        if r.im != 0.0 && i + 1 < roots.len() && (roots[i + 1] - r.conj()).norm() <= 1e-12 * r.norm()
        {
            // quadratic s^2 - 2 Re(r) s + |r|^2
            out = mul(&out, &[r.norm_sqr(), -2.0 * r.re, 1.0]);
            i += 2;
        } else {
            out = mul(&out, &[-r.re, 1.0]);
            i += 1;
        }
    }
    out
}
