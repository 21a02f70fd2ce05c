use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tf::{self, RationalTf};

/// Direct-form coefficients of one second-order section,
/// `(b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    pub const IDENTITY: Biquad = Biquad { b0: 1.0, b1: 0.0, b2: 0.0, a1: 0.0, a2: 0.0 };

    pub fn response(&self, zi: Complex64) -> Complex64 {
        (self.b0 + zi * (self.b1 + zi * self.b2)) / (1.0 + zi * (self.a1 + zi * self.a2))
    }

    /// Largest pole modulus.
    pub fn pole_radius(&self) -> f64 {
        tf::roots::roots(&[self.a2, self.a1, 1.0])
            .iter()
            .map(|p| p.norm())
            .fold(0.0, f64::max)
    }
}

/// Cascade of second-order sections run in transposed direct form II.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteFilter {
    pub sections: Vec<Biquad>,
    pub sample_rate_hz: f64,
    #[serde(skip)]
    state: Vec<[f64; 2]>,
}

impl DiscreteFilter {
    pub fn new(sections: Vec<Biquad>, sample_rate_hz: f64) -> Self {
        let state = vec![[0.0; 2]; sections.len()];
        DiscreteFilter { sections, sample_rate_hz, state }
    }

    pub fn reset(&mut self) {
        self.state = vec![[0.0; 2]; self.sections.len()];
    }

    pub fn step(&mut self, x: f64) -> f64 {
        if self.state.len() != self.sections.len() {
            self.reset();
        }
        let mut v = x;
        for (s, st) in self.sections.iter().zip(self.state.iter_mut()) {
            let y = s.b0 * v + st[0];
            st[0] = s.b1 * v - s.a1 * y + st[1];
            st[1] = s.b2 * v - s.a2 * y;
            v = y;
        }
        v
    }

    /// `H(e^{j omega / fs})`.
    pub fn response(&self, omega: f64) -> Complex64 {
        let zi = Complex64::from_polar(1.0, -omega / self.sample_rate_hz);
        self.sections.iter().map(|s| s.response(zi)).product()
    }

    pub fn frequency_response(&self, grid: &[f64]) -> Result<tf::FrequencyResponse> {
        let v: Vec<Complex64> = grid.iter().map(|&w| self.response(w)).collect();
        tf::FrequencyResponse::new(grid, &v, None)
    }

    pub fn pole_radius(&self) -> f64 {
        self.sections.iter().map(|s| s.pole_radius()).fold(0.0, f64::max)
    }
}

/// Worst-case relative magnitude error and absolute phase error (degrees) of
/// `filter` against `c` on `grid`.
pub fn fidelity(c: &RationalTf, filter: &DiscreteFilter, grid: &[f64]) -> Result<(f64, f64)> {
    let mut mag: f64 = 0.0;
    let mut ph: f64 = 0.0;
    for &w in grid {
        let r = filter.response(w) / c.eval(w)?;
        mag = mag.max((r.norm() - 1.0).abs());
        ph = ph.max(r.arg().to_degrees().abs());
    }
    Ok((mag, ph))
}

/// Bilinear map `s = k (z - 1)/(z + 1)` with `k = 2 fs`, or
/// `k = w_p / tan(w_p / (2 fs))` when prewarping at `w_p`.
pub fn discretize_bilinear(
    c: &RationalTf,
    sample_rate_hz: f64,
    prewarp_at: Option<f64>,
) -> Result<DiscreteFilter> {
    if !c.is_proper() {
        return Err(Error::InvalidTf("controller must be proper".into()));
    }
    if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
        return Err(Error::InvalidArgument("sample rate must be positive".into()));
    }
    let k = match prewarp_at {
        None => 2.0 * sample_rate_hz,
        Some(wp) => {
            if !(wp > 0.0 && wp < PI * sample_rate_hz) {
                return Err(Error::InvalidArgument(format!(
                    "prewarp frequency {wp} rad/s must lie below pi * fs"
                )));
            }
            wp / (wp / (2.0 * sample_rate_hz)).tan()
        }
    };
    if c.is_zero() {
        return Ok(DiscreteFilter::new(
            vec![Biquad { b0: 0.0, ..Biquad::IDENTITY }],
            sample_rate_hz,
        ));
    }
    let zeros = c.zeros();
    let poles = c.poles();
    let mut gain = Complex64::new(*c.num().last().unwrap(), 0.0);
    let map = |r: &Complex64, gain: &mut Complex64, mul: bool| {
        let f = k - r;
        if mul {
            *gain *= f;
        } else {
            *gain /= f;
        }
        (k + r) / f
    };
    let mut dz: Vec<Complex64> = zeros.iter().map(|r| map(r, &mut gain, true)).collect();
    let dp: Vec<Complex64> = poles.iter().map(|r| map(r, &mut gain, false)).collect();
    dz.resize(dp.len(), Complex64::new(-1.0, 0.0));

    let zq = quadratics(&dz);
    let pq = quadratics(&dp);
    let n = zq.len().max(pq.len()).max(1);
    let mut sections = Vec::with_capacity(n);
    for i in 0..n {
        let b = zq.get(i).copied().unwrap_or([1.0, 0.0, 0.0]);
        let a = pq.get(i).copied().unwrap_or([1.0, 0.0, 0.0]);
        sections.push(Biquad { b0: b[0], b1: b[1], b2: b[2], a1: a[1], a2: a[2] });
    }
    let g = gain.re;
    sections[0].b0 *= g;
    sections[0].b1 *= g;
    sections[0].b2 *= g;

    let f = DiscreteFilter::new(sections, sample_rate_hz);
    // Left-half-plane poles always land inside the unit circle; this guards
    // against an unstable source or a numerical accident.
    let stable_src = poles.iter().all(|p| p.re <= 1e-9 * p.norm().max(1.0));
    let radius = f.pole_radius();
    if stable_src && radius > 1.0 + 1e-9 {
        return Err(Error::UnstableDiscretization { radius });
    }
    Ok(f)
}

/// Groups roots into `1 - (r1 + r2) z^-1 + r1 r2 z^-2` factors: conjugate
/// pairs together, remaining real roots two at a time.
fn quadratics(roots: &[Complex64]) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    let mut reals = Vec::new();
    let mut i = 0;
    while i < roots.len() {
        let r = roots[i];
        if r.im != 0.0 && i + 1 < roots.len() && roots[i + 1] == r.conj() {
            out.push([1.0, -2.0 * r.re, r.norm_sqr()]);
            i += 2;
        } else {
            reals.push(r.re);
            i += 1;
        }
    }
    for pair in reals.chunks(2) {
        match pair {
            [a, b] => out.push([1.0, -(a + b), a * b]),
            [a] => out.push([1.0, -a, 0.0]),
            _ => unreachable!(),
        }
    }
    out
}

/// Controller realization used by the loop runner: the bilinear image of `c`
/// followed by a first-order equalizer fitted so the cascade tracks `c` on
/// `[omega_lo, 2 pi fs / 10]`. The equalizer absorbs the bilinear frequency
/// warping near the top of the band.
pub fn realize_controller(c: &RationalTf, sample_rate_hz: f64) -> Result<DiscreteFilter> {
    let mut filt = discretize_bilinear(c, sample_rate_hz, None)?;
    if c.num_degree() == 0 && c.den_degree() == 0 {
        return Ok(filt);
    }
    let hi = 2.0 * PI * sample_rate_hz / 10.0;
    let lo = (hi * 1e-6).max(1e-3);
    let grid = tf::logspace(lo, hi, EQ_POINTS);
    let target = grid
        .iter()
        .map(|&w| Ok((c.eval(w)? / filt.response(w)).ln()))
        .collect::<Result<Vec<_>>>()?;
    let eq = fit_equalizer(&grid, &target, sample_rate_hz);
    if eq.pole_radius() >= 1.0 {
        return Ok(filt);
    }
    let before = fidelity(c, &filt, &grid)?;
    let mut trial = filt.clone();
    trial.sections.push(eq);
    trial.reset();
    let after = fidelity(c, &trial, &grid)?;
    let score = |(m, p): (f64, f64)| (m / 0.01).max(p);
    if score(after) < score(before) {
        filt = trial;
    }
    Ok(filt)
}

const EQ_POINTS: usize = 200;
const MAG_SCALE: f64 = 0.01;
const PHASE_SCALE: f64 = PI / 180.0;

/// First-order section `e^g (1 - q z^-1)/(1 - p z^-1)` minimizing the worst
/// normalized log error against `target`, by Levenberg-Marquardt inside
/// Lawson reweighting. `q` and `p` are parametrized through `tanh` so both
/// stay inside the unit circle.
fn fit_equalizer(grid: &[f64], target: &[Complex64], fs: f64) -> Biquad {
    let zi: Vec<Complex64> = grid.iter().map(|&w| Complex64::from_polar(1.0, -w / fs)).collect();
    let model = |x: &Vector3<f64>, i: usize| -> Complex64 {
        let (q, p) = (x[1].tanh(), x[2].tanh());
        x[0] + ((1.0 - q * zi[i]) / (1.0 - p * zi[i])).ln()
    };
    let residual = |x: &Vector3<f64>, wt: &[f64]| -> Vec<f64> {
        let mut r = Vec::with_capacity(2 * grid.len());
        for i in 0..grid.len() {
            let e = model(x, i) - target[i];
            r.push(e.re / MAG_SCALE * wt[i]);
            r.push(e.im / PHASE_SCALE * wt[i]);
        }
        r
    };
    let mut x = Vector3::new(0.0, 0.5, 0.6);
    let mut wt = vec![1.0; grid.len()];
    for _ in 0..30 {
        x = levenberg_marquardt(x, |x| residual(x, &wt), 50);
        let m: Vec<f64> = (0..grid.len())
            .map(|i| {
                let e = model(&x, i) - target[i];
                (e.re.abs() / MAG_SCALE).max(e.im.abs() / PHASE_SCALE)
            })
            .collect();
        let peak = m.iter().cloned().fold(0.0, f64::max);
        if peak == 0.0 {
            break;
        }
        for (w, mi) in wt.iter_mut().zip(&m) {
            *w = (*w * *w * mi / peak).sqrt();
        }
        let top = wt.iter().cloned().fold(0.0, f64::max);
        for w in wt.iter_mut() {
            *w = *w / top + 1e-3;
        }
    }
    let g = x[0].exp();
    let (q, p) = (x[1].tanh(), x[2].tanh());
    Biquad { b0: g, b1: -g * q, b2: 0.0, a1: -p, a2: 0.0 }
}

fn levenberg_marquardt<F>(mut x: Vector3<f64>, f: F, iters: usize) -> Vector3<f64>
where
    F: Fn(&Vector3<f64>) -> Vec<f64>,
{
    let cost = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let mut r = f(&x);
    let mut c = cost(&r);
    let mut lambda = 1e-3;
    for _ in 0..iters {
        let mut jac = vec![[0.0; 3]; r.len()];
        for j in 0..3 {
            let h = 1e-7 * x[j].abs().max(1.0);
            let mut xp = x;
            xp[j] += h;
            let rp = f(&xp);
            for (row, (a, b)) in jac.iter_mut().zip(rp.iter().zip(&r)) {
                row[j] = (a - b) / h;
            }
        }
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (row, ri) in jac.iter().zip(&r) {
            for a in 0..3 {
                jtr[a] += row[a] * ri;
                for b in 0..3 {
                    jtj[(a, b)] += row[a] * row[b];
                }
            }
        }
        loop {
            let mut damped = jtj;
            for d in 0..3 {
                damped[(d, d)] += lambda * (jtj[(d, d)] + 1e-12);
            }
            let step = damped.lu().solve(&(-jtr));
            let Some(step) = step else {
                return x;
            };
            let xn = x + step;
            let rn = f(&xn);
            let cn = cost(&rn);
            if cn.is_finite() && cn < c {
                x = xn;
                r = rn;
                c = cn;
                lambda = (lambda / 3.0).max(1e-12);
                break;
            }
            lambda *= 4.0;
            if lambda > 1e12 {
                return x;
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_gain_is_single_section() {
        let f = discretize_bilinear(&RationalTf::one(), 1e6, None).unwrap();
        assert_eq!(f.sections, vec![Biquad::IDENTITY]);
    }

    #[test]
    fn integrator_is_trapezoidal() {
        let c = RationalTf::new(vec![1.0], vec![0.0, 1.0]).unwrap();
        let fs = 1000.0;
        let mut f = discretize_bilinear(&c, fs, None).unwrap();
        let ys: Vec<f64> = (0..100).map(|_| f.step(1.0)).collect();
        // trapezoid rule on a unit step started at sample 0
        for (k, y) in ys.iter().enumerate() {
            assert!((y - (k as f64 + 0.5) / fs).abs() < 1e-12, "{k}: {y}");
        }
    }

    #[test]
    fn zero_input_zero_output() {
        let c = RationalTf::new(vec![3.0, 1.0], vec![2.0, 3.0, 1.0]).unwrap();
        let mut f = discretize_bilinear(&c, 1e4, None).unwrap();
        assert!((0..50).all(|_| f.step(0.0) == 0.0));
    }

    #[test]
    fn prewarp_matches_exactly_at_the_warp_frequency() {
        let c = RationalTf::new(vec![1.0], vec![1.0, 1.0]).unwrap();
        let f = discretize_bilinear(&c, 10.0, Some(5.0)).unwrap();
        let r = f.response(5.0) / c.eval(5.0).unwrap();
        assert!((r - 1.0).norm() < 1e-12);
    }

    #[test]
    fn complex_poles_pair_into_one_section() {
        let c = RationalTf::new(vec![5.0], vec![5.0, 2.0, 1.0]).unwrap();
        let f = discretize_bilinear(&c, 100.0, None).unwrap();
        assert_eq!(f.sections.len(), 1);
        assert!(f.pole_radius() < 1.0);
    }
}
