//! Frequency-domain identification of the simulated plant and the
//! atom-number robustness experiment.

mod fit;
mod robust;

pub use fit::{fit_rational, fit_rational_with_diagnostics, FitReport};
pub use robust::{robustness_sweep, RobustnessPlan, SweepRow, SweepTable};

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::looprun::Scenario;
use crate::physim;
use crate::tf::{self, FrequencyResponse};

/// Fraction of the spin length `|fz|` may reach before the sweep is declared
/// nonlinear.
pub const LINEAR_GUARD: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepPlan {
    pub frequencies_hz: Vec<f64>,
    pub drive_amplitude_v: f64,
    pub settle_cycles: f64,
    pub measure_cycles: f64,
    pub reset_between_points: bool,
    /// Lower bounds on the settle and measure spans, so high-frequency
    /// points still average over many samples.
    pub min_settle_s: f64,
    pub min_measure_s: f64,
}

impl Default for SweepPlan {
    fn default() -> Self {
        SweepPlan {
            frequencies_hz: tf::logspace(100.0, 300e3, 40),
            drive_amplitude_v: 1e-3,
            settle_cycles: 10.0,
            measure_cycles: 20.0,
            reset_between_points: true,
            min_settle_s: 1e-3,
            min_measure_s: 2e-3,
        }
    }
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("sweep plan: {m}")));
        if self.frequencies_hz.is_empty() {
            return bad("no frequencies");
        }
        if self.frequencies_hz.iter().any(|f| !(f.is_finite() && *f > 0.0))
            || self.frequencies_hz.windows(2).any(|w| w[1] <= w[0])
        {
            return bad("frequencies must be positive and increasing");
        }
        if !self.drive_amplitude_v.is_finite() || self.drive_amplitude_v == 0.0 {
            return bad("drive amplitude must be finite and nonzero");
        }
        if !(self.measure_cycles >= 4.0) || !(self.settle_cycles >= 0.0) {
            return bad("measure_cycles must be >= 4 and settle_cycles >= 0");
        }
        if !(self.min_settle_s >= 0.0 && self.min_measure_s >= 0.0) {
            return bad("minimum spans must be >= 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub response: FrequencyResponse,
    pub coherence: Vec<f64>,
}

/// Swept-sine measurement of the open-loop plant from programming voltage
/// to photocurrent. Each point starts from a freshly prepared spin state
/// (when `reset_between_points`) with its own noise stream, seed
/// `scenario.seed + index`. The applied field is zero.
pub fn swept_sine(scenario: &Scenario, plan: &SweepPlan, exec: Execution) -> Result<SweepResult> {
    plan.validate()?;
    let mut sc = scenario.clone();
    sc.controller = None;
    sc.validate()?;
    let idx: Vec<usize> = (0..plan.frequencies_hz.len()).collect();
    let points: Vec<Result<(Complex64, f64)>> = if plan.reset_between_points {
        exec::map(exec, &idx, |&i| sweep_point(&sc, plan, i, None).map(|(h, c, _)| (h, c)))
    } else {
        let mut carry = None;
        idx.iter()
            .map(|&i| {
                let (h, c, st) = sweep_point(&sc, plan, i, carry)?;
                carry = Some(st);
                Ok((h, c))
            })
            .collect()
    };
    let mut values = Vec::with_capacity(points.len());
    let mut coherence = Vec::with_capacity(points.len());
    for p in points {
        let (h, c) = p?;
        values.push(h);
        coherence.push(c);
    }
    let omega: Vec<f64> = plan.frequencies_hz.iter().map(|f| 2.0 * PI * f).collect();
    let response = FrequencyResponse::new(&omega, &values, Some(0.0))?;
    Ok(SweepResult { response, coherence })
}

fn sweep_point(
    sc: &Scenario,
    plan: &SweepPlan,
    index: usize,
    start: Option<physim::BlochState>,
) -> Result<(Complex64, f64, physim::BlochState)> {
    let f = plan.frequencies_hz[index];
    let w = 2.0 * PI * f;
    let dt = sc.dt();
    let p = &sc.params;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.replicate_seed(index));
    let mut act = p.actuator().discretize(dt)?;
    let mut state = start.unwrap_or_else(|| p.initial_state(sc.n_atoms));
    let settle = (plan.settle_cycles / f).max(plan.min_settle_s);
    let measure = (plan.measure_cycles / f).max(plan.min_measure_s);
    let n_settle = (settle / dt).ceil() as usize;
    let n_meas = ((measure / dt).ceil() as usize).max(3);
    let a = plan.drive_amplitude_v;

    let mut ys = Vec::with_capacity(n_meas);
    let mut us = Vec::with_capacity(n_meas);
    let mut ts = Vec::with_capacity(n_meas);
    for k in 0..n_settle + n_meas {
        let t = k as f64 * dt;
        let y = physim::measure_sample(&state, dt, p, &mut rng);
        let u = a * (w * t).sin();
        let b_c = act.step(u);
        state = physim::bloch_step(&state, b_c, dt, p);
        let ratio = state.fz.abs() / state.norm();
        if ratio > LINEAR_GUARD {
            return Err(Error::NonlinearRegime { frequency_hz: f, ratio });
        }
        if k >= n_settle {
            ts.push(t);
            ys.push(y);
            us.push(u);
        }
    }
    let (yp, coh) = project(&ts, &ys, w)?;
    let (up, _) = project(&ts, &us, w)?;
    if up.norm() == 0.0 {
        return Err(Error::InvalidArgument("drive phasor vanished".into()));
    }
    // undo the half-sample delay and sinc droop of the held drive
    let x = 0.5 * w * dt;
    let hold = if x == 0.0 { 1.0 } else { x.sin() / x };
    let h = yp / up * Complex64::from_polar(1.0, x) / hold;
    Ok((h, coh, state))
}

/// Least-squares fit of `a cos(wt) + b sin(wt) + c`; returns the phasor
/// `a - j b` and the fraction of the (mean-removed) energy it explains.
fn project(t: &[f64], x: &[f64], w: f64) -> Result<(Complex64, f64)> {
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut atb = nalgebra::Vector3::<f64>::zeros();
    for (&ti, &xi) in t.iter().zip(x) {
        let (s, c) = (w * ti).sin_cos();
        let row = nalgebra::Vector3::new(c, s, 1.0);
        ata += row * row.transpose();
        atb += row * xi;
    }
    let sol = ata
        .lu()
        .solve(&atb)
        .ok_or_else(|| Error::InvalidArgument("degenerate projection".into()))?;
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let mut total = 0.0;
    let mut resid = 0.0;
    for (&ti, &xi) in t.iter().zip(x) {
        let (s, c) = (w * ti).sin_cos();
        let fit = sol[0] * c + sol[1] * s + sol[2];
        total += (xi - mean).powi(2);
        resid += (xi - fit).powi(2);
    }
    let coh = if total > 0.0 { (1.0 - resid / total).clamp(0.0, 1.0) } else { 0.0 };
    Ok((Complex64::new(sol[0], -sol[1]), coh))
}
