//! Polynomial root finding: closed form up to degree two, balanced companion
//! matrix eigenvalues above that, followed by Newton polishing and explicit
//! conjugate pairing.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::poly;

const REAL_TOL: f64 = 1e-12;

/// All roots of `p` (ascending coefficients). Exact zeros at the origin are
/// returned exactly. The result is sorted and closed under conjugation.
pub fn roots(p: &[f64]) -> Vec<Complex64> {
    let p = poly::trim(p.to_vec());
    if poly::is_zero(&p) {
        return Vec::new();
    }
    let k0 = poly::origin_multiplicity(&p);
    let mut out = vec![Complex64::new(0.0, 0.0); k0];
    let rest = &p[k0..];
    let mut found = match poly::degree(rest) {
        0 => Vec::new(),
        1 => vec![Complex64::new(-rest[0] / rest[1], 0.0)],
        2 => quadratic(rest[2], rest[1], rest[0]),
        _ => companion(rest),
    };
    out.append(&mut found);
    let mut out = pair_conjugates(out);
    sort_roots(&mut out);
    out
}

fn quadratic(a: f64, b: f64, c: f64) -> Vec<Complex64> {
    let disc = b * b - 4.0 * a * c;
    if disc >= 0.0 {
        let q = -0.5 * (b + b.signum() * disc.sqrt());
        if q == 0.0 {
            return vec![Complex64::new(0.0, 0.0); 2];
        }
        vec![Complex64::new(q / a, 0.0), Complex64::new(c / q, 0.0)]
    } else {
        let re = -b / (2.0 * a);
        let im = (-disc).sqrt() / (2.0 * a).abs();
        vec![Complex64::new(re, im), Complex64::new(re, -im)]
    }
}

fn companion(p: &[f64]) -> Vec<Complex64> {
    let n = poly::degree(p);
    let lead = p[n];
    // Substitute s = sigma x so the monic polynomial in x has unit-scale roots.
    let sigma = (p[0] / lead).abs().powf(1.0 / n as f64);
    let sigma = if sigma.is_finite() && sigma > 0.0 { sigma } else { 1.0 };
    let q: Vec<f64> = (0..n)
        .map(|k| p[k] / lead / sigma.powi((n - k) as i32))
        .collect();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        m[(i, i - 1)] = 1.0;
    }
    for i in 0..n {
        m[(i, n - 1)] = -q[i];
    }
    let eig = m.complex_eigenvalues();
    eig.iter().map(|&x| polish(p, x * sigma)).collect()
}

/// A few Newton steps on the original polynomial; a step is kept only when it
/// reduces the residual.
fn polish(p: &[f64], mut r: Complex64) -> Complex64 {
    let dp: Vec<f64> = p.iter().enumerate().skip(1).map(|(k, c)| c * k as f64).collect();
    let mut res = poly::eval(p, r).norm();
    for _ in 0..4 {
        let d = poly::eval(&dp, r);
        if d.norm() == 0.0 {
            break;
        }
        let cand = r - poly::eval(p, r) / d;
        let cres = poly::eval(p, cand).norm();
        if cres.is_finite() && cres < res {
            r = cand;
            res = cres;
        } else {
            break;
        }
    }
    r
}

fn pair_conjugates(roots: Vec<Complex64>) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(roots.len());
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    for r in roots {
        if r.im.abs() <= REAL_TOL * r.norm() {
            out.push(Complex64::new(r.re, 0.0));
        } else if r.im > 0.0 {
            upper.push(r);
        } else {
            lower.push(r);
        }
    }
    for u in upper {
        if lower.is_empty() {
            out.push(Complex64::new(u.re, 0.0));
            continue;
        }
        let (j, _) = lower
            .iter()
            .enumerate()
            .map(|(j, l)| (j, (l - u.conj()).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let l = lower.swap_remove(j);
        let re = 0.5 * (u.re + l.re);
        let im = 0.5 * (u.im - l.im);
        out.push(Complex64::new(re, im));
        out.push(Complex64::new(re, -im));
    }
    for l in lower {
        out.push(Complex64::new(l.re, 0.0));
    }
    out
}

/// Ascending real part, conjugate pairs adjacent with the positive imaginary
/// part first.
pub fn sort_roots(roots: &mut [Complex64]) {
    roots.sort_by(|a, b| {
        a.re.total_cmp(&b.re)
            .then_with(|| b.im.abs().total_cmp(&a.im.abs()))
            .then_with(|| b.im.total_cmp(&a.im))
    });
}
