use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{poly, RationalTf};
use crate::error::{Error, Result};

/// One sample of a frequency response. `phase_deg` is the continuously
/// unwrapped phase, not the principal value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponsePoint {
    pub omega: f64,
    pub value: Complex64,
    pub phase_deg: f64,
}

impl ResponsePoint {
    pub fn mag(&self) -> f64 {
        self.value.norm()
    }

    pub fn mag_db(&self) -> f64 {
        20.0 * self.value.norm().log10()
    }
}

/// Complex response sampled on a strictly increasing, non-negative grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyResponse {
    points: Vec<ResponsePoint>,
}

impl FrequencyResponse {
    /// Builds a response from raw samples. The first phase is the principal
    /// value of the first sample unless `anchor_deg` is given, in which case
    /// it is shifted by whole turns to lie closest to the anchor.
    pub fn new(omega: &[f64], values: &[Complex64], anchor_deg: Option<f64>) -> Result<Self> {
        if omega.len() != values.len() {
            return Err(Error::InvalidArgument("omega and value lengths differ".into()));
        }
        check_grid(omega)?;
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidArgument("non-finite response value".into()));
        }
        let mut points = Vec::with_capacity(omega.len());
        let mut prev: Option<f64> = None;
        for (&w, &v) in omega.iter().zip(values) {
            let raw = v.arg().to_degrees();
            let phase = match prev {
                Some(p) => raw + 360.0 * ((p - raw) / 360.0).round(),
                None => match anchor_deg {
                    Some(a) => raw + 360.0 * ((a - raw) / 360.0).round(),
                    None => raw,
                },
            };
            prev = Some(phase);
            points.push(ResponsePoint { omega: w, value: v, phase_deg: phase });
        }
        Ok(FrequencyResponse { points })
    }

    pub fn points(&self) -> &[ResponsePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.omega).collect()
    }

    pub fn values(&self) -> Vec<Complex64> {
        self.points.iter().map(|p| p.value).collect()
    }

    /// CSV with header `omega_rad_s,re,im,mag_db,phase_deg`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["omega_rad_s", "re", "im", "mag_db", "phase_deg"])?;
        for p in &self.points {
            wtr.write_record([
                fmt_f64(p.omega),
                fmt_f64(p.value.re),
                fmt_f64(p.value.im),
                fmt_f64(p.mag_db()),
                fmt_f64(p.phase_deg),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Shortest round-trip representation, so CSV output is reproducible.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}

pub fn check_grid(omega: &[f64]) -> Result<()> {
    if omega.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidArgument("frequency grid must be finite and non-negative".into()));
    }
    if omega.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("frequency grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Phase of `tf(j*omega)` in the limit omega -> 0+, in degrees: 90 degrees per
/// net zero at the origin plus -180 for a negative low-frequency gain.
pub fn dc_phase_limit_deg(tf: &RationalTf) -> f64 {
    if tf.is_zero() {
        return 0.0;
    }
    let m = poly::origin_multiplicity(tf.num());
    let l = poly::origin_multiplicity(tf.den());
    let ratio = tf.num()[m] / tf.den()[l];
    // (j w)^k contributes 90 k degrees
    let k = m as f64 - l as f64;
    90.0 * k + if ratio < 0.0 { -180.0 } else { 0.0 }
}

/// Pointwise evaluation on `grid` with the phase unwrapped from its DC limit.
pub fn bode(tf: &RationalTf, grid: &[f64]) -> Result<FrequencyResponse> {
    check_grid(grid)?;
    let values = grid.iter().map(|&w| tf.eval(w)).collect::<Result<Vec<_>>>()?;
    FrequencyResponse::new(grid, &values, Some(dc_phase_limit_deg(tf)))
}

/// `n` logarithmically spaced points from `lo` to `hi` inclusive.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

pub fn hz_to_rad(f: f64) -> f64 {
    2.0 * PI * f
}
