//! Semiclassical spin-ensemble physics: precession with relaxation and
//! optical re-pumping, polarimeter readout with Gaussian noise, coil-supply
//! dynamics, and the linearized plant seen by the controller.

mod actuator;
mod waveform;

pub use actuator::{actuator_step, ActuatorModel, DiscreteActuator};
pub use waveform::{CompiledWaveform, FieldWaveform};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tf::RationalTf;

/// Physical constants of the ensemble and the readout chain.
///
/// `relax_rate_per_s` is the total transverse relaxation rate `R`; the part in
/// excess of `1/t2_s` is optical pumping that drives the spin back toward
/// `+x` at rate `R - 1/T2`. Setting `R = 1/T2` switches pumping off.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysParams {
    pub gamma_rad_per_s_g: f64,
    pub t2_s: f64,
    pub relax_rate_per_s: f64,
    pub meas_gain_v_per_hbar: f64,
    pub noise_psd_v2_per_hz: f64,
    pub beta_g_per_v: f64,
    pub n_nominal: f64,
    pub actuator_zero_rad_s: f64,
    pub actuator_pole_rad_s: f64,
}

pub const GAMMA_CS: f64 = 2.2e6;
pub const T2_S: f64 = 11.2e-3;
pub const N_NOMINAL: f64 = 1.0e9;
/// Numerator gain of the identified plant, V/V.
pub const PLANT_GAIN: f64 = 1.6e4;

impl Default for PhysParams {
    fn default() -> Self {
        let mut p = PhysParams {
            gamma_rad_per_s_g: GAMMA_CS,
            t2_s: T2_S,
            relax_rate_per_s: 1.0e4,
            meas_gain_v_per_hbar: 1.0,
            noise_psd_v2_per_hz: 1.0e-16,
            beta_g_per_v: 0.1,
            n_nominal: N_NOMINAL,
            actuator_zero_rad_s: 8.0e5,
            actuator_pole_rad_s: 4.0e5,
        };
        p.meas_gain_v_per_hbar = p.calibrated_meas_gain(PLANT_GAIN);
        p
    }
}

impl PhysParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("gamma_rad_per_s_g", self.gamma_rad_per_s_g),
            ("t2_s", self.t2_s),
            ("relax_rate_per_s", self.relax_rate_per_s),
            ("meas_gain_v_per_hbar", self.meas_gain_v_per_hbar),
            ("beta_g_per_v", self.beta_g_per_v),
            ("n_nominal", self.n_nominal),
            ("actuator_zero_rad_s", self.actuator_zero_rad_s),
            ("actuator_pole_rad_s", self.actuator_pole_rad_s),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.noise_psd_v2_per_hz.is_finite() && self.noise_psd_v2_per_hz >= 0.0) {
            return Err(Error::InvalidArgument("noise_psd_v2_per_hz must be >= 0".into()));
        }
        if self.relax_rate_per_s * self.t2_s < 1.0 - 1e-12 {
            return Err(Error::InvalidArgument(
                "relax_rate_per_s must be at least 1/t2_s".into(),
            ));
        }
        Ok(())
    }

    /// Same constants with optical pumping switched off: pure `1/T2` decay.
    pub fn without_pumping(&self) -> Self {
        PhysParams { relax_rate_per_s: 1.0 / self.t2_s, ..self.clone() }
    }

    pub fn pump_rate(&self) -> f64 {
        (self.relax_rate_per_s - 1.0 / self.t2_s).max(0.0)
    }

    /// Steady-state polarization as a fraction of the full `4N`.
    pub fn polarization(&self) -> f64 {
        let g = self.pump_rate();
        if g > 0.0 {
            g / self.relax_rate_per_s
        } else {
            1.0
        }
    }

    /// Photocurrent gain that makes the composite plant numerator gain equal
    /// `plant_gain` at `n_nominal`.
    pub fn calibrated_meas_gain(&self, plant_gain: f64) -> f64 {
        let act = self.beta_g_per_v * self.actuator_pole_rad_s / self.actuator_zero_rad_s;
        plant_gain / (act * self.gamma_rad_per_s_g * 4.0 * self.n_nominal * self.polarization())
    }

    pub fn actuator(&self) -> ActuatorModel {
        let k = self.beta_g_per_v * self.actuator_pole_rad_s / self.actuator_zero_rad_s;
        let tf = RationalTf::new(
            vec![k * self.actuator_zero_rad_s, -k],
            vec![self.actuator_pole_rad_s, 1.0],
        )
        .expect("actuator constants validated");
        ActuatorModel::new(tf).expect("first-order actuator is stable")
    }

    pub fn initial_state(&self, n_atoms: f64) -> BlochState {
        BlochState { fx: 4.0 * n_atoms * self.polarization(), fy: 0.0, fz: 0.0, n_atoms }
    }
}

/// Collective spin vector in units of hbar.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlochState {
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
    pub n_atoms: f64,
}

impl BlochState {
    /// Fully polarized along `+x`, magnitude `4N`.
    pub fn coherent(n_atoms: f64) -> Self {
        BlochState { fx: 4.0 * n_atoms, fy: 0.0, fz: 0.0, n_atoms }
    }

    pub fn norm(&self) -> f64 {
        (self.fx * self.fx + self.fy * self.fy + self.fz * self.fz).sqrt()
    }

    pub fn max_norm(&self) -> f64 {
        4.0 * self.n_atoms
    }
}

/// Rotation about `y` by `gamma * b * dt`, then exact relaxation toward the
/// pumped steady state over `dt`. Without pumping this is a uniform
/// `exp(-dt/T2)` decay of all three components.
pub fn bloch_step(state: &BlochState, b_total: f64, dt: f64, params: &PhysParams) -> BlochState {
    let theta = params.gamma_rad_per_s_g * b_total * dt;
    let (sin, cos) = theta.sin_cos();
    let fz = state.fz * cos + state.fx * sin;
    let fx = state.fx * cos - state.fz * sin;
    let r = params.relax_rate_per_s;
    let decay = (-r * dt).exp();
    let g = params.pump_rate();
    let source = if g > 0.0 { g / r * -(-r * dt).exp_m1() * state.max_norm() } else { 0.0 };
    BlochState {
        fx: fx * decay + source,
        fy: state.fy * decay,
        fz: fz * decay,
        n_atoms: state.n_atoms,
    }
}

/// Polarimeter output `meas_gain * fz` plus white noise of one-sided PSD
/// `noise_psd`, i.e. variance `psd / (2 dt)`.
pub fn measure_sample<R: Rng + ?Sized>(
    state: &BlochState,
    dt: f64,
    params: &PhysParams,
    rng: &mut R,
) -> f64 {
    let clean = params.meas_gain_v_per_hbar * state.fz;
    if params.noise_psd_v2_per_hz == 0.0 {
        return clean;
    }
    let sigma = (params.noise_psd_v2_per_hz / (2.0 * dt)).sqrt();
    let z: f64 = rng.sample(StandardNormal);
    clean + sigma * z
}

/// Small-signal response from transverse field (G) to photocurrent (V):
/// `meas_gain * gamma * |F| / (s + R)`.
pub fn atomic_tf(params: &PhysParams, n_atoms: f64) -> Result<RationalTf> {
    if !(n_atoms.is_finite() && n_atoms > 0.0) {
        return Err(Error::InvalidArgument(format!("n_atoms must be positive, got {n_atoms}")));
    }
    let k = params.meas_gain_v_per_hbar
        * params.gamma_rad_per_s_g
        * 4.0
        * n_atoms
        * params.polarization();
    RationalTf::new(vec![k], vec![params.relax_rate_per_s, 1.0])
}

/// Linearized plant from coil programming voltage to photocurrent: the coil
/// supply in series with the atomic response.
pub fn effective_plant(params: &PhysParams, n_atoms: f64) -> Result<RationalTf> {
    let at = atomic_tf(params, n_atoms)?;
    let (za, pa) = (params.actuator_zero_rad_s, params.actuator_pole_rad_s);
    let g = params.beta_g_per_v * pa / za * at.num()[0];
    let r = params.relax_rate_per_s;
    RationalTf::new(vec![g * za, -g], vec![r * pa, r + pa, 1.0])
}
