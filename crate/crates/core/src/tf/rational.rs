use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{poly, roots};
use crate::error::{Error, Result};

/// Maximum numerator and denominator degree.
pub const MAX_DEGREE: usize = 10;

/// Relative distance under which a numerator root and a denominator root are
/// treated as the same root and cancelled.
pub const CANCEL_TOL: f64 = 1e-7;

/// Real-coefficient rational function of the Laplace variable `s`.
///
/// Coefficients are stored in ascending degree order and the leading
/// denominator coefficient is always 1. The zero function is `0/1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TfRepr", into = "TfRepr")]
pub struct RationalTf {
    num: Vec<f64>,
    den: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TfRepr {
    num: Vec<f64>,
    den: Vec<f64>,
}

impl TryFrom<TfRepr> for RationalTf {
    type Error = Error;
    fn try_from(r: TfRepr) -> Result<Self> {
        RationalTf::new(r.num, r.den)
    }
}

impl From<RationalTf> for TfRepr {
    fn from(t: RationalTf) -> Self {
        TfRepr { num: t.num, den: t.den }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Marginal,
    Unstable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CombineOp {
    Multiply,
    Add,
    /// `a*b / (1 + a*b)`
    UnityFeedback,
}

/// Factored form of a [`RationalTf`]: `gain * prod(s - z) / prod(s - p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoleZeroGain {
    pub zeros: Vec<Complex64>,
    pub poles: Vec<Complex64>,
    pub gain: f64,
}

impl PoleZeroGain {
    pub fn to_tf(&self) -> Result<RationalTf> {
        let mut z = self.zeros.clone();
        let mut p = self.poles.clone();
        roots::sort_roots(&mut z);
        roots::sort_roots(&mut p);
        RationalTf::new(poly::scale(&poly::from_roots(&z), self.gain), poly::from_roots(&p))
    }
}

impl RationalTf {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self> {
        if num.is_empty() || den.is_empty() {
            return Err(Error::InvalidTf("empty coefficient list".into()));
        }
        if num.iter().chain(den.iter()).any(|c| !c.is_finite()) {
            return Err(Error::InvalidTf("non-finite coefficient".into()));
        }
        let num = poly::trim(num);
        let den = poly::trim(den);
        if poly::is_zero(&den) {
            return Err(Error::InvalidTf("zero denominator".into()));
        }
        for p in [&num, &den] {
            let d = poly::degree(p);
            if d > MAX_DEGREE {
                return Err(Error::DegreeOverflow { degree: d, bound: MAX_DEGREE });
            }
        }
        if poly::is_zero(&num) {
            return Ok(RationalTf { num: vec![0.0], den: vec![1.0] });
        }
        let lead = *den.last().unwrap();
        let clean = |c: f64| if c == 0.0 { 0.0 } else { c / lead };
        Ok(RationalTf {
            num: num.into_iter().map(clean).collect(),
            den: den.into_iter().map(clean).collect(),
        })
    }

    pub fn constant(k: f64) -> Result<Self> {
        Self::new(vec![k], vec![1.0])
    }

    pub fn one() -> Self {
        RationalTf { num: vec![1.0], den: vec![1.0] }
    }

    pub fn zero() -> Self {
        RationalTf { num: vec![0.0], den: vec![1.0] }
    }

    pub fn num(&self) -> &[f64] {
        &self.num
    }

    pub fn den(&self) -> &[f64] {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        poly::is_zero(&self.num)
    }

    pub fn num_degree(&self) -> usize {
        poly::degree(&self.num)
    }

    pub fn den_degree(&self) -> usize {
        poly::degree(&self.den)
    }

    /// `deg(den) - deg(num)`; the zero function counts as infinitely proper.
    pub fn relative_degree(&self) -> i32 {
        if self.is_zero() {
            return i32::MAX;
        }
        self.den_degree() as i32 - self.num_degree() as i32
    }

    pub fn is_proper(&self) -> bool {
        self.relative_degree() >= 0
    }

    pub fn is_strictly_proper(&self) -> bool {
        self.relative_degree() >= 1
    }

    /// Value at an arbitrary complex `s`.
    pub fn eval_s(&self, s: Complex64) -> Result<Complex64> {
        let d = poly::eval(&self.den, s);
        if d.norm() < 1e-300 {
            return Err(Error::EvaluationAtPole { omega: s.im });
        }
        Ok(poly::eval(&self.num, s) / d)
    }

    /// Frequency response at `s = j*omega`.
    pub fn eval(&self, omega: f64) -> Result<Complex64> {
        if !omega.is_finite() || omega < 0.0 {
            return Err(Error::InvalidArgument(format!("omega must be finite and >= 0, got {omega}")));
        }
        self.eval_s(Complex64::new(0.0, omega))
    }

    pub fn dc_gain(&self) -> Result<f64> {
        self.eval(0.0).map(|v| v.re)
    }

    pub fn poles(&self) -> Vec<Complex64> {
        roots::roots(&self.den)
    }

    pub fn zeros(&self) -> Vec<Complex64> {
        roots::roots(&self.num)
    }

    pub fn pole_zero_gain(&self) -> PoleZeroGain {
        PoleZeroGain {
            zeros: self.zeros(),
            poles: self.poles(),
            gain: *self.num.last().unwrap(),
        }
    }

    pub fn stability(&self) -> Stability {
        classify_poles(&self.poles())
    }

    pub fn scale(&self, k: f64) -> Result<Self> {
        Self::new(poly::scale(&self.num, k), self.den.clone())
    }

    pub fn neg(&self) -> Self {
        RationalTf { num: poly::neg(&self.num), den: self.den.clone() }
    }

    pub fn recip(&self) -> Result<Self> {
        if self.is_zero() {
            return Err(Error::InvalidTf("reciprocal of the zero function".into()));
        }
        Self::new(self.den.clone(), self.num.clone())
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        reduce(poly::mul(&self.num, &other.num), poly::mul(&self.den, &other.den))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.den == other.den {
            return reduce(poly::add(&self.num, &other.num), self.den.clone());
        }
        let num = poly::add(
            &poly::mul(&self.num, &other.den),
            &poly::mul(&other.num, &self.den),
        );
        reduce(num, poly::mul(&self.den, &other.den))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.neg())
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        if other.is_zero() {
            return Err(Error::InvalidTf("division by the zero function".into()));
        }
        reduce(poly::mul(&self.num, &other.den), poly::mul(&self.den, &other.num))
    }

    /// `L / (1 + L)` for the open loop `L = self * other`.
    pub fn unity_feedback(&self, other: &Self) -> Result<Self> {
        let l = self.mul(other)?;
        if l.is_zero() {
            return Ok(Self::zero());
        }
        reduce(l.num.clone(), poly::add(&l.num, &l.den))
    }

    pub fn combine(&self, other: &Self, op: CombineOp) -> Result<Self> {
        match op {
            CombineOp::Multiply => self.mul(other),
            CombineOp::Add => self.add(other),
            CombineOp::UnityFeedback => self.unity_feedback(other),
        }
    }
}

impl fmt::Display for RationalTf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} / {:?}", self.num, self.den)
    }
}

pub fn classify_poles(poles: &[Complex64]) -> Stability {
    let mut marginal = false;
    for p in poles {
        let tol = 1e-9 * p.norm().max(1.0);
        if p.re > tol {
            return Stability::Unstable;
        }
        if p.re.abs() <= tol {
            marginal = true;
        }
    }
    if marginal {
        Stability::Marginal
    } else {
        Stability::Stable
    }
}

/// Normalizes `num/den`, cancelling numerator and denominator roots that
/// coincide to within [`CANCEL_TOL`]. Coefficients are left untouched when
/// nothing cancels.
fn reduce(num: Vec<f64>, den: Vec<f64>) -> Result<RationalTf> {
    let num = poly::trim(num);
    let den = poly::trim(den);
    if poly::is_zero(&num) {
        return RationalTf::new(num, den);
    }
    if poly::is_zero(&den) {
        return Err(Error::InvalidTf("zero denominator".into()));
    }
    let k = poly::origin_multiplicity(&num).min(poly::origin_multiplicity(&den));
    let num = num[k..].to_vec();
    let den = den[k..].to_vec();
    if k > 0 {
        log::debug!("cancelled {k} common root(s) at the origin");
    }
    if poly::degree(&num) == 0 || poly::degree(&den) == 0 {
        return RationalTf::new(num, den);
    }

    let zn = roots::roots(&num);
    let zd = roots::roots(&den);
    let mut used = vec![false; zd.len()];
    let mut kept_num = Vec::with_capacity(zn.len());
    let mut cancelled = 0usize;
    for z in &zn {
        let hit = zd.iter().enumerate().find(|(j, d)| {
            !used[*j]
                && (z.im == 0.0) == (d.im == 0.0)
                && z.im.signum() == d.im.signum()
                && (*z - **d).norm() <= CANCEL_TOL * z.norm().max(d.norm())
        });
        match hit {
            Some((j, d)) => {
                used[j] = true;
                cancelled += 1;
                log::debug!("cancelled common root: numerator {z}, denominator {d}");
            }
            None => kept_num.push(*z),
        }
    }
    if cancelled == 0 {
        return RationalTf::new(num, den);
    }
    let kept_den: Vec<Complex64> = zd
        .iter()
        .zip(&used)
        .filter(|(_, &u)| !u)
        .map(|(d, _)| *d)
        .collect();
    let lead_n = *num.last().unwrap();
    let lead_d = *den.last().unwrap();
    RationalTf::new(
        poly::scale(&poly::from_roots(&kept_num), lead_n),
        poly::scale(&poly::from_roots(&kept_den), lead_d),
    )
}
