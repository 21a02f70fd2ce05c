//! Sampled-data loop execution: controller realization, closed- and
//! open-loop runs of the simulated magnetometer, and estimation metrics.

mod filter;

pub use filter::{discretize_bilinear, fidelity, realize_controller, Biquad, DiscreteFilter};

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::loopshape::{ControllerDesign, SignConvention};
use crate::physim::{self, BlochState, FieldWaveform, PhysParams};
use crate::tf::fmt_f64;

pub const MAX_SAMPLES: f64 = 1e8;
pub const MAX_DT: f64 = 1e-6;
/// Minimum ratio of sample rate to the weight corner frequency.
pub const MIN_RATE_RATIO: f64 = 5.0;
/// Controller output beyond this is treated as a runaway loop.
pub const MAX_DRIVE_V: f64 = 1e9;

/// Everything needed to reproduce one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub params: PhysParams,
    pub waveform: FieldWaveform,
    pub controller: Option<ControllerDesign>,
    /// True atom number; the controller may have been designed for another.
    pub n_atoms: f64,
    pub reference_v: f64,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub feedback_on_at_s: f64,
    pub seed: u64,
    pub replicates: usize,
}

impl Scenario {
    pub fn new(params: PhysParams, waveform: FieldWaveform, controller: Option<ControllerDesign>) -> Self {
        let n_atoms = params.n_nominal;
        Scenario {
            params,
            waveform,
            controller,
            n_atoms,
            reference_v: 0.0,
            duration_s: 5e-3,
            sample_rate_hz: 5e6,
            feedback_on_at_s: 1e-3,
            seed: 0,
            replicates: 1,
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        self.params.validate()?;
        self.waveform.validate()?;
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!("duration must be positive, got {}", self.duration_s));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return bad(format!("sample rate must be positive, got {}", self.sample_rate_hz));
        }
        if self.dt() > MAX_DT * (1.0 + 1e-12) {
            return bad(format!("sample period {} s exceeds {MAX_DT} s", self.dt()));
        }
        if self.duration_s * self.sample_rate_hz > MAX_SAMPLES {
            return bad("run exceeds 1e8 samples".into());
        }
        if self.n_samples() == 0 {
            return bad("run is shorter than one sample".into());
        }
        if !(self.n_atoms.is_finite() && self.n_atoms > 0.0) {
            return bad(format!("n_atoms must be positive, got {}", self.n_atoms));
        }
        if !self.reference_v.is_finite() || !self.feedback_on_at_s.is_finite() {
            return bad("reference and feedback start must be finite".into());
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if let Some(c) = &self.controller {
            if self.sample_rate_hz < MIN_RATE_RATIO * c.weight_corner_hz {
                return bad(format!(
                    "sample rate {} Hz is below {MIN_RATE_RATIO} x the weight corner {} Hz",
                    self.sample_rate_hz, c.weight_corner_hz
                ));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn replicate_seed(&self, replicate: usize) -> u64 {
        self.seed.wrapping_add(replicate as u64)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub seed: u64,
    pub scenario_hash: String,
    pub convention: Option<SignConvention>,
    pub n_atoms: f64,
    pub sample_rate_hz: f64,
    /// Content hash of the originating configuration file, when there is one.
    pub config_hash: Option<String>,
}

/// Sampled time series of one run. Field columns (`b_true`, `b_c`, `b_est`)
/// are the values applied over the step starting at `t`; `y` and `u` are
/// sampled at `t`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoopRecord {
    pub t: Vec<f64>,
    pub b_true: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub b_c: Vec<f64>,
    pub b_est: Vec<f64>,
    pub meta: RecordMeta,
}

impl LoopRecord {
    fn with_capacity(n: usize, meta: RecordMeta) -> Self {
        LoopRecord {
            t: Vec::with_capacity(n),
            b_true: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            u: Vec::with_capacity(n),
            b_c: Vec::with_capacity(n),
            b_est: Vec::with_capacity(n),
            meta,
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// CSV with header `t,b_true_G,y_V,u_V,b_c_G,b_est_G`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "b_true_G", "y_V", "u_V", "b_c_G", "b_est_G"])?;
        for i in 0..self.len() {
            wtr.write_record([
                fmt_f64(self.t[i]),
                fmt_f64(self.b_true[i]),
                fmt_f64(self.y[i]),
                fmt_f64(self.u[i]),
                fmt_f64(self.b_c[i]),
                fmt_f64(self.b_est[i]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_meta_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, &self.meta)?;
        writeln!(w)?;
        Ok(())
    }

    /// Mean of `b_est` over the final `fraction` of the record.
    pub fn tail_mean_estimate(&self, fraction: f64) -> f64 {
        let n = self.len();
        let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1));
        self.b_est[n - k..].iter().sum::<f64>() / k as f64
    }

    /// Earliest `t` after which `|b_true - b_est|` stays within `tol_g` to
    /// the end of the record. `None` if the final sample is still outside.
    pub fn settle_time(&self, tol_g: f64) -> Option<f64> {
        let n = self.len();
        let mut k = n;
        while k > 0 && (self.b_true[k - 1] - self.b_est[k - 1]).abs() <= tol_g {
            k -= 1;
        }
        (k < n).then(|| self.t[k])
    }

    /// Prefix of the record up to and including sample `k`.
    pub fn truncated(&self, len: usize) -> LoopRecord {
        let cut = |v: &Vec<f64>| v[..len.min(v.len())].to_vec();
        LoopRecord {
            t: cut(&self.t),
            b_true: cut(&self.b_true),
            y: cut(&self.y),
            u: cut(&self.u),
            b_c: cut(&self.b_c),
            b_est: cut(&self.b_est),
            meta: self.meta.clone(),
        }
    }
}

pub fn run_closed_loop(scenario: &Scenario) -> Result<LoopRecord> {
    run_closed_loop_replicate(scenario, 0)
}

/// Closed-loop run using the seed of replicate `replicate`.
///
/// Per sample: measure `y` at `t_k`; form `u = C[r - y]` once feedback is on
/// (0 before, controller idle); hold `u` over the step through the coil
/// supply; precess under `b_true + b_c` evaluated at the step midpoint.
pub fn run_closed_loop_replicate(scenario: &Scenario, replicate: usize) -> Result<LoopRecord> {
    scenario.validate()?;
    let design = scenario
        .controller
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("closed-loop run needs a controller".into()))?;
    let filt = realize_controller(&design.c, scenario.sample_rate_hz)?;
    simulate(scenario, replicate, Some(filt), Some(design.sign_convention))
}

/// Runs the physics with the loop open (`u = 0`) and records everything.
pub fn run_free(scenario: &Scenario, replicate: usize) -> Result<LoopRecord> {
    scenario.validate()?;
    simulate(scenario, replicate, None, None)
}

fn simulate(
    sc: &Scenario,
    replicate: usize,
    mut filt: Option<DiscreteFilter>,
    convention: Option<SignConvention>,
) -> Result<LoopRecord> {
    let seed = sc.replicate_seed(replicate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = sc.dt();
    let n = sc.n_samples();
    let wave = sc.waveform.compile();
    let p = &sc.params;
    let mut act = p.actuator().discretize(dt)?;
    let mut state = p.initial_state(sc.n_atoms);
    let bound = state.max_norm() * (1.0 + 1e-9);
    let meta = RecordMeta {
        seed,
        scenario_hash: sc.hash(),
        convention,
        n_atoms: sc.n_atoms,
        sample_rate_hz: sc.sample_rate_hz,
        config_hash: None,
    };
    let mut rec = LoopRecord::with_capacity(n, meta);

    for k in 0..n {
        let t = k as f64 * dt;
        let y = physim::measure_sample(&state, dt, p, &mut rng);
        let u = match filt.as_mut() {
            Some(f) if t >= sc.feedback_on_at_s => f.step(sc.reference_v - y),
            _ => 0.0,
        };
        let b_c = act.step(u);
        let b_true = wave.eval(t + 0.5 * dt);
        state = physim::bloch_step(&state, b_true + b_c, dt, p);

        rec.t.push(t);
        rec.b_true.push(b_true);
        rec.y.push(y);
        rec.u.push(u);
        rec.b_c.push(b_c);
        rec.b_est.push(-b_c);

        if let Some(reason) = diverged(&state, bound, y, u) {
            return Err(Error::NumericalDivergence { t, reason, partial: Some(Box::new(rec)) });
        }
    }
    Ok(rec)
}

fn diverged(s: &BlochState, bound: f64, y: f64, u: f64) -> Option<String> {
    if !(s.fx.is_finite() && s.fy.is_finite() && s.fz.is_finite() && y.is_finite() && u.is_finite()) {
        return Some("non-finite state".into());
    }
    if s.fz.abs() > bound {
        return Some(format!("|fz| = {} exceeds 4N", s.fz.abs()));
    }
    if u.abs() > MAX_DRIVE_V {
        return Some(format!("controller output {u} V is running away"));
    }
    None
}

/// Small-angle open-loop estimate: regress `y / meas_gain` on `t` over
/// `fit_window_s` seconds from the field onset and divide the slope by
/// `gamma * |F|` computed for `assumed_n` atoms.
pub fn run_open_loop(scenario: &Scenario, assumed_n: f64, fit_window_s: f64) -> Result<f64> {
    run_open_loop_replicate(scenario, assumed_n, fit_window_s, 0)
}

pub fn run_open_loop_replicate(
    scenario: &Scenario,
    assumed_n: f64,
    fit_window_s: f64,
    replicate: usize,
) -> Result<f64> {
    if !(assumed_n.is_finite() && assumed_n > 0.0) {
        return Err(Error::InvalidArgument(format!("assumed_n must be positive, got {assumed_n}")));
    }
    if !(fit_window_s.is_finite() && fit_window_s > 0.0) {
        return Err(Error::InvalidArgument("fit window must be positive".into()));
    }
    let start = scenario.waveform.onset_s();
    let mut sc = scenario.clone();
    sc.controller = None;
    sc.duration_s = (start + fit_window_s + 2.0 * sc.dt()).max(sc.dt());
    let rec = run_free(&sc, replicate)?;
    let p = &sc.params;
    let (mut n, mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (t, y) in rec.t.iter().zip(&rec.y) {
        if *t < start - 1e-15 || *t > start + fit_window_s + 1e-15 {
            continue;
        }
        let tt = t - start;
        let f = y / p.meas_gain_v_per_hbar;
        n += 1.0;
        st += tt;
        sy += f;
        stt += tt * tt;
        sty += tt * f;
    }
    if n < 2.0 {
        return Err(Error::InvalidArgument("fit window holds fewer than two samples".into()));
    }
    let slope = (n * sty - st * sy) / (n * stt - st * st);
    let b_est = slope / (p.gamma_rad_per_s_g * 4.0 * assumed_n * p.polarization());
    let angle = (p.gamma_rad_per_s_g * b_est * fit_window_s).abs();
    if angle > 0.3 {
        return Err(Error::WindowTooLong { angle });
    }
    Ok(b_est)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    /// Per-record root of the time-averaged squared error, G.
    pub rms_g: Vec<f64>,
    /// Per-record time-averaged squared error, G^2.
    pub mean_square_g2: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `rms_g`.
    pub std: f64,
}

/// Time-averaged squared mismatch between each record's `b_true` and
/// `b_est` over `window` (whole record if `None`), by trapezoidal quadrature.
pub fn estimation_error(records: &[LoopRecord], window: Option<(f64, f64)>) -> Result<ErrorStats> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidArgument("no records".into()))?;
    for r in records {
        if r.t != first.t {
            return Err(Error::GridMismatch("records do not share a time grid".into()));
        }
        if [r.b_true.len(), r.b_est.len()].iter().any(|&l| l != r.t.len()) {
            return Err(Error::GridMismatch("column lengths differ".into()));
        }
    }
    let mut ms = Vec::with_capacity(records.len());
    for r in records {
        let err: Vec<f64> = r.b_true.iter().zip(&r.b_est).map(|(a, b)| a - b).collect();
        ms.push(mean_square(&r.t, &err, window)?);
    }
    let rms: Vec<f64> = ms.iter().map(|m| m.sqrt()).collect();
    let (mean, std) = mean_std(&rms);
    Ok(ErrorStats { rms_g: rms, mean_square_g2: ms, mean, std })
}

/// `(1/T) * integral of e^2 dt` over the window by the trapezoidal rule.
pub fn mean_square(t: &[f64], e: &[f64], window: Option<(f64, f64)>) -> Result<f64> {
    let (lo, hi) = window.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let idx: Vec<usize> = (0..t.len()).filter(|&i| t[i] >= lo && t[i] <= hi).collect();
    if idx.len() < 2 {
        return Err(Error::InvalidArgument("window holds fewer than two samples".into()));
    }
    let mut acc = 0.0;
    for w in idx.windows(2) {
        let (i, j) = (w[0], w[1]);
        acc += 0.5 * (e[i] * e[i] + e[j] * e[j]) * (t[j] - t[i]);
    }
    let span = t[*idx.last().unwrap()] - t[idx[0]];
    Ok(acc / span)
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
