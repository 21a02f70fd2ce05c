use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tf::{FrequencyResponse, RationalTf};

pub const MAX_CONDITION: f64 = 1e12;
const MAX_ITERS: usize = 10;
const STEP_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub tf: RationalTf,
    /// `||H_fit - H|| / ||H||` over the fitted points.
    pub relative_residual: f64,
    pub iterations: usize,
    pub condition: f64,
}

pub fn fit_rational(response: &FrequencyResponse, n_zeros: usize, n_poles: usize) -> Result<RationalTf> {
    fit_rational_with_diagnostics(response, n_zeros, n_poles).map(|r| r.tf)
}

/// Rational fit `N(s)/D(s)` by the linearized (Levy) least-squares problem,
/// reweighted by the previous denominator (Sanathanan-Koerner) until the
/// coefficients settle. Frequencies are scaled by their geometric mean and
/// each sample is weighted by `1/|H|`, so the fit is relative.
pub fn fit_rational_with_diagnostics(
    response: &FrequencyResponse,
    n_zeros: usize,
    n_poles: usize,
) -> Result<FitReport> {
    let pts = response.points();
    let m = pts.len();
    if n_zeros > n_poles {
        return Err(Error::InvalidArgument("fit needs n_poles >= n_zeros".into()));
    }
    if m < 2 * (n_zeros + n_poles + 1) {
        return Err(Error::InvalidArgument(format!(
            "{m} points cannot support a ({n_zeros}, {n_poles}) fit"
        )));
    }
    let positive: Vec<f64> = pts.iter().map(|p| p.omega).filter(|w| *w > 0.0).collect();
    let w0 = if positive.is_empty() {
        1.0
    } else {
        (positive.iter().map(|w| w.ln()).sum::<f64>() / positive.len() as f64).exp()
    };
    let sig: Vec<Complex64> = pts.iter().map(|p| Complex64::new(0.0, p.omega / w0)).collect();
    let h: Vec<Complex64> = pts.iter().map(|p| p.value).collect();
    if h.iter().any(|v| v.norm() == 0.0) {
        return Err(Error::InvalidArgument("response contains exact zeros".into()));
    }

    let nu = n_zeros + 1 + n_poles;
    let mut prev_den = vec![Complex64::new(1.0, 0.0); m];
    let mut coef = DVector::<f64>::zeros(nu);
    let mut condition = 1.0;
    let mut iterations = 0;
    for it in 0..MAX_ITERS {
        iterations = it + 1;
        let mut a = DMatrix::<f64>::zeros(2 * m, nu);
        let mut b = DVector::<f64>::zeros(2 * m);
        for i in 0..m {
            let wgt = 1.0 / (h[i].norm() * prev_den[i].norm());
            let mut pw = Complex64::new(1.0, 0.0);
            for k in 0..=n_zeros.max(n_poles) {
                if k <= n_zeros {
                    let v = pw * wgt;
                    a[(2 * i, k)] = v.re;
                    a[(2 * i + 1, k)] = v.im;
                }
                if k < n_poles {
                    let v = -h[i] * pw * wgt;
                    a[(2 * i, n_zeros + 1 + k)] = v.re;
                    a[(2 * i + 1, n_zeros + 1 + k)] = v.im;
                }
                pw *= sig[i];
            }
            let rhs = h[i] * sig[i].powu(n_poles as u32) * wgt;
            b[2 * i] = rhs.re;
            b[2 * i + 1] = rhs.im;
        }
        let scale: Vec<f64> = (0..nu)
            .map(|j| {
                let n = a.column(j).norm();
                if n > 0.0 { n } else { 1.0 }
            })
            .collect();
        for j in 0..nu {
            a.column_mut(j).unscale_mut(scale[j]);
        }
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if condition > MAX_CONDITION {
            return Err(Error::IllConditioned { condition });
        }
        let mut x = svd
            .solve(&b, 0.0)
            .map_err(|e| Error::InvalidArgument(format!("least-squares solve failed: {e}")))?;
        for j in 0..nu {
            x[j] /= scale[j];
        }
        let change = (&x - &coef).norm() / x.norm().max(f64::MIN_POSITIVE);
        coef = x;
        for i in 0..m {
            prev_den[i] = den_eval(&coef, n_zeros, n_poles, sig[i]);
        }
        if change < STEP_TOL {
            break;
        }
    }

    // back to the unscaled variable s = w0 * sigma
    let num: Vec<f64> = (0..=n_zeros).map(|k| coef[k] / w0.powi(k as i32)).collect();
    let mut den: Vec<f64> = (0..n_poles)
        .map(|k| coef[n_zeros + 1 + k] / w0.powi(k as i32))
        .collect();
    den.push(1.0 / w0.powi(n_poles as i32));
    let tf = RationalTf::new(num, den)?;

    let mut err = 0.0;
    let mut norm = 0.0;
    for (p, hv) in pts.iter().zip(&h) {
        let fit = tf.eval(p.omega)?;
        err += (fit - hv).norm_sqr();
        norm += hv.norm_sqr();
    }
    Ok(FitReport { tf, relative_residual: (err / norm).sqrt(), iterations, condition })
}

fn den_eval(coef: &DVector<f64>, n_zeros: usize, n_poles: usize, s: Complex64) -> Complex64 {
    let mut acc = Complex64::new(1.0, 0.0);
    for k in (0..n_poles).rev() {
        acc = acc * s + coef[n_zeros + 1 + k];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tf::bode;

    #[test]
    fn pure_gain() {
        let t = RationalTf::constant(3.2).unwrap();
        let r = bode(&t, &[1.0, 10.0, 100.0]).unwrap();
        let f = fit_rational(&r, 0, 0).unwrap();
        assert!((f.num()[0] - 3.2).abs() < 1e-12);
    }

    #[test]
    fn first_order_lag() {
        let t = RationalTf::new(vec![5.0], vec![2.0, 1.0]).unwrap();
        let r = bode(&t, &crate::tf::logspace(0.1, 100.0, 20)).unwrap();
        let f = fit_rational_with_diagnostics(&r, 0, 1).unwrap();
        assert!((f.tf.num()[0] - 5.0).abs() < 1e-9);
        assert!((f.tf.den()[0] - 2.0).abs() < 1e-9);
        assert!(f.relative_residual < 1e-10);
    }

    #[test]
    fn too_few_points() {
        let r = bode(&RationalTf::one(), &[1.0, 2.0]).unwrap();
        assert!(fit_rational(&r, 1, 2).is_err());
        assert!(fit_rational(&r, 1, 0).is_err());
    }
}
