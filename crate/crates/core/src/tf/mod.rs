//! Rational transfer functions of the Laplace variable: exact polynomial
//! algebra, roots, stability classification and frequency response.

pub mod poly;
mod rational;
mod response;
pub mod roots;

pub use rational::{
    classify_poles, CombineOp, PoleZeroGain, RationalTf, Stability, CANCEL_TOL, MAX_DEGREE,
};
pub use response::{
    bode, check_grid, dc_phase_limit_deg, fmt_f64, hz_to_rad, logspace, FrequencyResponse,
    ResponsePoint,
};

use num_complex::Complex64;

use crate::error::Result;

pub fn tf_evaluate(tf: &RationalTf, omega: f64) -> Result<Complex64> {
    tf.eval(omega)
}

pub fn tf_combine(a: &RationalTf, b: &RationalTf, op: CombineOp) -> Result<RationalTf> {
    a.combine(b, op)
}

pub fn poles_zeros(tf: &RationalTf) -> PoleZeroGain {
    tf.pole_zero_gain()
}

pub fn is_stable(tf: &RationalTf) -> Stability {
    tf.stability()
}
