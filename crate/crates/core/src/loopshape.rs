//! Loop-shaping controller synthesis around a stable, possibly non-minimum
//! phase plant.
//!
//! The plant is split as `P = P_mp * P_ap`; the Youla-style parameter
//! `Q = W / P_mp` is then wrapped into a feedback controller. With the
//! tracking convention `C = Q / (1 - P Q)` the closed loop is exactly
//! `T = P Q = W * P_ap`, so tracking quality is set by the weight bandwidth
//! and the all-pass phase alone. The `1 + P Q` variant is kept for comparison:
//! it gives `T = PQ / (1 + 2 PQ)` and a DC gain of 1/3.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tf::{self, poly, roots, RationalTf, Stability};

/// Zeros with `|Re z| <= AXIS_TOL * |z|` are considered on the imaginary axis.
pub const AXIS_TOL: f64 = 1e-9;

const MARGIN_LO: f64 = 1.0;
const MARGIN_HI: f64 = 1.0e8;
const MARGIN_POINTS: usize = 2000;
const BISECT_REL: f64 = 1e-6;
const TRACKING_POINTS: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factorization {
    pub p_mp: RationalTf,
    pub p_ap: RationalTf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// `C = Q / (1 + P Q)`
    PaperPlus,
    /// `C = Q / (1 - P Q)`, giving `T = W * P_ap`.
    #[default]
    TrackingMinus,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityMargins {
    /// `+inf` when the phase never reaches -180 degrees on the scan.
    #[serde(with = "inf_as_null")]
    pub gain_margin_db: f64,
    pub phase_margin_deg: f64,
    pub crossover_rad_s: f64,
    pub phase_crossover_rad_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerDesign {
    pub w: RationalTf,
    pub q: RationalTf,
    pub c: RationalTf,
    pub t: RationalTf,
    pub sign_convention: SignConvention,
    pub closed_loop_stable: bool,
    pub margins: Option<StabilityMargins>,
    /// Largest pole magnitude of `w`, in Hz.
    pub weight_corner_hz: f64,
}

/// Splits a stable plant into minimum-phase and all-pass parts.
pub fn factor_minphase_allpass(p: &RationalTf) -> Result<Factorization> {
    for pole in p.poles() {
        if pole.re >= -1e-9 * pole.norm().max(1.0) {
            return Err(Error::UnstablePlant { re: pole.re, im: pole.im });
        }
    }
    if p.is_zero() {
        return Err(Error::InvalidTf("cannot factor the zero function".into()));
    }
    let zeros = p.zeros();
    if let Some(z) = zeros.iter().find(|z| z.re.abs() <= AXIS_TOL * z.norm()) {
        return Err(Error::ZeroOnImaginaryAxis { re: z.re, im: z.im });
    }
    if zeros.iter().all(|z| z.re < 0.0) {
        return Ok(Factorization { p_mp: p.clone(), p_ap: RationalTf::one() });
    }

    let mut mp_zeros = Vec::with_capacity(zeros.len());
    let mut rhp = Vec::new();
    let mut sign = 1.0;
    for z in &zeros {
        if z.re > 0.0 {
            rhp.push(*z);
            mp_zeros.push(-z.conj());
            if z.im == 0.0 {
                // (s - z) = -(z - s): one sign flip per real reflected zero
                sign = -sign;
            }
        } else {
            mp_zeros.push(*z);
        }
    }
    roots::sort_roots(&mut mp_zeros);
    roots::sort_roots(&mut rhp);
    let lead = *p.num().last().unwrap();
    let p_mp = RationalTf::new(
        poly::scale(&poly::from_roots(&mp_zeros), lead * sign),
        p.den().to_vec(),
    )?;

    // prod (z - s)/(conj(z) + s) in real sections
    let reflected: Vec<Complex64> = rhp.iter().map(|z| -z.conj()).collect();
    let mut ap_num = poly::from_roots(&rhp);
    let ap_den = poly::from_roots(&reflected);
    let real_count = rhp.iter().filter(|z| z.im == 0.0).count();
    if real_count % 2 == 1 {
        ap_num = poly::neg(&ap_num);
    }
    let p_ap = RationalTf::new(ap_num, ap_den)?;
    Ok(Factorization { p_mp, p_ap })
}

/// Single-pole low-pass weight `wc / (s + wc)`, `wc = 2 pi fc`.
pub fn butterworth1(fc_hz: f64) -> Result<RationalTf> {
    if !(fc_hz.is_finite() && fc_hz > 0.0) {
        return Err(Error::InvalidArgument(format!("corner frequency must be > 0, got {fc_hz}")));
    }
    let wc = 2.0 * PI * fc_hz;
    RationalTf::new(vec![wc], vec![wc, 1.0])
}

/// Unit-DC Butterworth low-pass of the given order; poles evenly spaced on the
/// left half of the circle of radius `wc`. Needed when the plant's
/// minimum-phase part rolls off faster than one pole.
pub fn butterworth(order: usize, fc_hz: f64) -> Result<RationalTf> {
    if order == 0 {
        return Err(Error::InvalidArgument("Butterworth order must be >= 1".into()));
    }
    if order == 1 {
        return butterworth1(fc_hz);
    }
    butterworth1(fc_hz)?;
    let wc = 2.0 * PI * fc_hz;
    let n = order as f64;
    let mut poles = Vec::with_capacity(order);
    for k in 0..order / 2 {
        let z = Complex64::from_polar(wc, PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n));
        poles.push(z);
        poles.push(z.conj());
    }
    if order % 2 == 1 {
        poles.push(Complex64::new(-wc, 0.0));
    }
    let den = poly::from_roots(&poles);
    RationalTf::new(vec![den[0]], den)
}

pub fn synthesize_controller(
    p: &RationalTf,
    w: &RationalTf,
    convention: SignConvention,
) -> Result<ControllerDesign> {
    let fac = factor_minphase_allpass(p)?;
    let rd_w = w.relative_degree();
    let rd_mp = fac.p_mp.relative_degree();
    if rd_w < rd_mp {
        return Err(Error::ImproperQ { weight: rd_w, plant: rd_mp });
    }
    let q = w.mul(&fac.p_mp.recip()?)?;
    // P Q = P_mp P_ap W / P_mp, formed directly so no cancellation is needed
    let pq = w.mul(&fac.p_ap)?;
    let one = RationalTf::one();
    let c = match convention {
        SignConvention::TrackingMinus => q.div(&one.sub(&pq)?)?,
        SignConvention::PaperPlus => q.div(&one.add(&pq)?)?,
    };
    let t = closed_loop_t(&c, p)?;
    let poles = t.poles();
    let stable = tf::classify_poles(&poles) == Stability::Stable;
    if !stable && convention == SignConvention::TrackingMinus {
        let worst = poles.iter().max_by(|a, b| a.re.total_cmp(&b.re)).unwrap();
        return Err(Error::UnstableClosedLoop { re: worst.re, im: worst.im });
    }
    if !stable {
        log::warn!("closed loop under the {convention:?} convention is not stable");
    }
    let margins = stability_margins(&c.mul(p)?).ok();
    let weight_corner_hz = w
        .poles()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
        / (2.0 * PI);
    Ok(ControllerDesign {
        w: w.clone(),
        q,
        c,
        t,
        sign_convention: convention,
        closed_loop_stable: stable,
        margins,
        weight_corner_hz,
    })
}

/// `T = C P / (1 + C P)`.
pub fn closed_loop_t(c: &RationalTf, p: &RationalTf) -> Result<RationalTf> {
    c.unity_feedback(p)
}

/// Sup of `|1 - T(j w)|` over a 500-point log grid spanning `band`.
pub fn tracking_error_norm(t: &RationalTf, band: (f64, f64)) -> Result<f64> {
    let (lo, hi) = band;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid band [{lo}, {hi}]")));
    }
    let mut sup: f64 = 0.0;
    for w in tf::logspace(lo, hi, TRACKING_POINTS) {
        let v = t.eval(w)?;
        sup = sup.max((Complex64::new(1.0, 0.0) - v).norm());
    }
    Ok(sup)
}

/// Lowest frequency, rad/s, at which the tracking error `|1 - T|` first
/// reaches `max_error`, searched on the margin scan range and refined by
/// bisection. `None` if it never does.
pub fn tracking_bandwidth(t: &RationalTf, max_error: f64) -> Result<Option<f64>> {
    if !(max_error.is_finite() && max_error > 0.0) {
        return Err(Error::InvalidArgument(format!("max_error must be positive, got {max_error}")));
    }
    let err = |w: f64| -> Result<f64> { Ok((Complex64::new(1.0, 0.0) - t.eval(w)?).norm()) };
    let grid = tf::logspace(MARGIN_LO, MARGIN_HI, MARGIN_POINTS);
    if err(grid[0])? >= max_error {
        return Ok(Some(grid[0]));
    }
    for pair in grid.windows(2) {
        if err(pair[1])? < max_error {
            continue;
        }
        let (mut lo, mut hi) = (pair[0], pair[1]);
        while hi / lo - 1.0 > BISECT_REL {
            let mid = (lo * hi).sqrt();
            if err(mid)? < max_error {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return Ok(Some((lo * hi).sqrt()));
    }
    Ok(None)
}

/// Gain and phase margins of the loop transfer function `l`, scanned over
/// [1, 1e8] rad/s with bisection refinement of each crossing.
pub fn stability_margins(l: &RationalTf) -> Result<StabilityMargins> {
    let grid = tf::logspace(MARGIN_LO, MARGIN_HI, MARGIN_POINTS);
    let resp = tf::bode(l, &grid)?;
    let pts = resp.points();

    let log_mag = |w: f64| -> Result<f64> { Ok(l.eval(w)?.norm().ln()) };
    // unwrapped phase at w, continued from a neighbouring grid phase
    let phase_near = |w: f64, reference: f64| -> Result<f64> {
        let raw = l.eval(w)?.arg().to_degrees();
        Ok(raw + 360.0 * ((reference - raw) / 360.0).round())
    };

    let mut best_pm: Option<(f64, f64)> = None;
    for i in 0..pts.len() {
        let fa = pts[i].mag().ln();
        let hit = if fa == 0.0 {
            Some(pts[i].omega)
        } else if i + 1 < pts.len() {
            let fb = pts[i + 1].mag().ln();
            if fb != 0.0 && fa.signum() != fb.signum() {
                Some(bisect(pts[i].omega, pts[i + 1].omega, fa, &log_mag)?)
            } else {
                None
            }
        } else {
            None
        };
        if let Some(wc) = hit {
            let pm = 180.0 + phase_near(wc, pts[i].phase_deg)?;
            if best_pm.is_none_or(|(_, b)| pm < b) {
                best_pm = Some((wc, pm));
            }
        }
    }
    let (crossover, phase_margin) =
        best_pm.ok_or(Error::NoCrossover { lo: MARGIN_LO, hi: MARGIN_HI })?;

    let mut best_gm: Option<(f64, f64)> = None;
    for i in 0..pts.len().saturating_sub(1) {
        let (pa, pb) = (pts[i].phase_deg, pts[i + 1].phase_deg);
        // crossings of -180 + 360 k
        let ka = ((pa + 180.0) / 360.0).floor();
        let kb = ((pb + 180.0) / 360.0).floor();
        if ka == kb {
            continue;
        }
        let target = -180.0 + 360.0 * ka.max(kb);
        let g = |w: f64| -> Result<f64> { Ok(phase_near(w, pa)? - target) };
        let wp = bisect(pts[i].omega, pts[i + 1].omega, pa - target, &g)?;
        let gm = -20.0 * l.eval(wp)?.norm().log10();
        if best_gm.is_none_or(|(_, b)| gm < b) {
            best_gm = Some((wp, gm));
        }
    }
    Ok(StabilityMargins {
        gain_margin_db: best_gm.map_or(f64::INFINITY, |(_, g)| g),
        phase_margin_deg: phase_margin,
        crossover_rad_s: crossover,
        phase_crossover_rad_s: best_gm.map(|(w, _)| w),
    })
}

/// Root of `f` between `lo` and `hi` (sign change assumed), bisected in
/// log-frequency to `BISECT_REL` relative width.
fn bisect<F>(mut lo: f64, mut hi: f64, mut flo: f64, f: &F) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    while hi / lo - 1.0 > BISECT_REL {
        let mid = (lo * hi).sqrt();
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
