use std::f64::consts::PI;

use approx::assert_relative_eq;
use magloop::physim::{
    actuator_step, bloch_step, effective_plant, measure_sample, ActuatorModel, BlochState,
    PhysParams,
};
use magloop::tf::RationalTf;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn unpumped() -> PhysParams {
    PhysParams::default().without_pumping()
}

/// Least-squares amplitude and phase of a tone at `w` in `(t, y)`.
fn tone(t: &[f64], y: &[f64], w: f64) -> Complex64 {
    let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&tk, &yk) in t.iter().zip(y) {
        let (s, c) = (w * tk).sin_cos();
        ss += s * s;
        sc += s * c;
        cc += c * c;
        ys += yk * s;
        yc += yk * c;
    }
    let det = ss * cc - sc * sc;
    let a = (ys * cc - yc * sc) / det;
    let b = (yc * ss - ys * sc) / det;
    // y = a sin + b cos = Im[(a + j b) e^{j w t}]
    Complex64::new(a, b)
}

#[test]
fn norm_contracts_by_the_decay_factor() {
    let p = unpumped();
    let dt = 2e-7;
    let mut s = BlochState { fx: 3.0e9, fy: 1.0e9, fz: -2.0e9, n_atoms: 1e9 };
    for b in [0.0, 1e-3, 0.05, -0.7, 3.0] {
        let next = bloch_step(&s, b, dt, &p);
        assert_relative_eq!(next.norm(), s.norm() * (-dt / p.t2_s).exp(), max_relative = 1e-12);
        s = next;
    }
}

#[test]
fn two_half_steps_equal_one_step() {
    let p = unpumped();
    let s = BlochState { fx: 4e9, fy: 0.3e9, fz: 0.1e9, n_atoms: 1e9 };
    for b in [0.0, 0.05, -2.0] {
        let one = bloch_step(&s, b, 1e-6, &p);
        let two = bloch_step(&bloch_step(&s, b, 5e-7, &p), b, 5e-7, &p);
        for (x, y) in [(one.fx, two.fx), (one.fy, two.fy), (one.fz, two.fz)] {
            assert!((x - y).abs() <= 1e-12 * one.norm(), "{x} vs {y}");
        }
    }
}

#[test]
fn precession_law() {
    let p = unpumped();
    let n = 1e9;
    let b = 1e-3;
    let dt = 1e-7;
    let mut s = BlochState::coherent(n);
    for k in 1..=20_000 {
        s = bloch_step(&s, b, dt, &p);
        if k % 2_000 == 0 {
            let t = k as f64 * dt;
            let want = 4.0 * n * (-t / p.t2_s).exp() * (p.gamma_rad_per_s_g * b * t).sin();
            assert!((s.fz - want).abs() <= 1e-9 * 4.0 * n, "t={t}: {} vs {want}", s.fz);
        }
    }
}

/// Classical RK4 on dF/dt = gamma b (y x F) with no decay.
fn rk4_reference(n: f64, gb: f64, t_end: f64, h: f64) -> (f64, f64) {
    let f = |x: f64, z: f64| (-gb * z, gb * x);
    let (mut x, mut z) = (4.0 * n, 0.0);
    let steps = (t_end / h).round() as usize;
    for _ in 0..steps {
        let k1 = f(x, z);
        let k2 = f(x + 0.5 * h * k1.0, z + 0.5 * h * k1.1);
        let k3 = f(x + 0.5 * h * k2.0, z + 0.5 * h * k2.1);
        let k4 = f(x + h * k3.0, z + h * k3.1);
        x += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        z += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    (x, z)
}

#[test]
fn small_angle_limit() {
    let p = PhysParams { t2_s: f64::INFINITY, ..PhysParams::default() }.without_pumping();
    let n = 1e9;
    let b = 1e-4;
    let t = 1e-5;
    let mut s = BlochState::coherent(n);
    for _ in 0..100 {
        s = bloch_step(&s, b, t / 100.0, &p);
    }
    let gb = p.gamma_rad_per_s_g * b;
    let (_, z_ref) = rk4_reference(n, gb, t, 1e-9);
    assert_relative_eq!(s.fz, z_ref, max_relative = 1e-9);
    // first-order series, good to (gamma b t)^2 / 6
    let theta: f64 = gb * t;
    assert_relative_eq!(s.fz, 4.0 * n * theta, max_relative = theta * theta / 6.0 * 1.01);
}

#[test]
fn pumping_restores_the_steady_polarization() {
    let p = PhysParams::default();
    let n = 1e9;
    let mut s = BlochState { fx: 0.0, fy: 0.0, fz: 0.0, n_atoms: n };
    for _ in 0..50_000 {
        s = bloch_step(&s, 0.0, 2e-7, &p);
    }
    // 10 ms at R = 1e4 is 100 time constants
    assert_relative_eq!(s.fx, p.initial_state(n).fx, max_relative = 1e-9);
    assert!(s.norm() <= s.max_norm() * (1.0 + 1e-9));
}

#[test]
fn noise_variance_matches_the_one_sided_psd() {
    let p = PhysParams::default();
    let s = BlochState { fx: 4e9, fy: 0.0, fz: 0.0, n_atoms: 1e9 };
    let dt = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 1_000_000;
    let xs: Vec<f64> = (0..n).map(|_| measure_sample(&s, dt, &p, &mut rng)).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert_relative_eq!(var, p.noise_psd_v2_per_hz / (2.0 * dt), max_relative = 0.01);
}

#[test]
fn noise_std_scales_as_inverse_sqrt_dt() {
    let p = PhysParams::default();
    let s = BlochState { fx: 4e9, fy: 0.0, fz: 0.0, n_atoms: 1e9 };
    let std_at = |dt: f64| {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 400_000;
        let xs: Vec<f64> = (0..n).map(|_| measure_sample(&s, dt, &p, &mut rng)).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    let sd: Vec<f64> = [1e-6, 4e-6, 1.6e-5].iter().map(|&dt| std_at(dt)).collect();
    assert_relative_eq!(sd[0] / sd[1], 2.0, max_relative = 0.01);
    assert_relative_eq!(sd[1] / sd[2], 2.0, max_relative = 0.01);
}

#[test]
fn measurement_is_deterministic_for_a_seed() {
    let p = PhysParams::default();
    let s = BlochState { fx: 4e9, fy: 0.0, fz: 1e6, n_atoms: 1e9 };
    let draw = || {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        (0..1000).map(|_| measure_sample(&s, 2e-7, &p, &mut rng).to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(draw(), draw());
}

#[test]
fn constant_actuator_is_immediate() {
    let m = ActuatorModel::new(RationalTf::constant(0.1).unwrap()).unwrap();
    let mut d = m.discretize(2e-7).unwrap();
    assert_eq!(actuator_step(&mut d, 2.0), 0.2);
}

#[test]
fn nominal_actuator_phase_at_100_khz() {
    let p = PhysParams::default();
    let act = p.actuator();
    assert_eq!(act.state_dim(), 1);
    let w = 2.0 * PI * 1e5;
    let dt = 2e-8;
    let mut d = act.discretize(dt).unwrap();
    let (mut t, mut y) = (Vec::new(), Vec::new());
    let period = (1.0 / 1e5 / dt).round() as usize;
    for k in 0..period * 40 {
        // hold the input sampled at mid-step; the mid-step output is then
        // aligned with the continuous sinusoid
        let tm = (k as f64 + 0.5) * dt;
        let out = actuator_step(&mut d, (w * tm).sin());
        if k >= period * 20 {
            t.push(tm);
            y.push(out);
        }
    }
    let h = tone(&t, &y, w);
    let want = act.tf().eval(w).unwrap();
    // analytic lag of k (z - s)/(s + p) at 100 kHz is 95.66 degrees
    assert_relative_eq!(want.arg().to_degrees(), -95.66, epsilon = 0.01);
    assert!((h.arg() - want.arg()).to_degrees().abs() < 1.0);
    assert_relative_eq!(h.norm(), want.norm(), max_relative = 0.01);
}

#[test]
fn unforced_actuator_decays() {
    let mut d = PhysParams::default().actuator().discretize(2e-7).unwrap();
    for _ in 0..100 {
        actuator_step(&mut d, 1.0);
    }
    let mut out = 1.0;
    for _ in 0..1000 {
        out = actuator_step(&mut d, 0.0);
    }
    assert!(out.abs() < 1e-30, "{out}");
}

#[test]
fn effective_plant_at_nominal_atoms() {
    let p = PhysParams::default();
    let g = effective_plant(&p, 1e9).unwrap();
    let want = [[1.28e10, -1.6e4].as_slice(), [4e9, 4.1e5, 1.0].as_slice()];
    for (got, want) in [g.num(), g.den()].iter().zip(want) {
        assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(want) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }
    assert_relative_eq!(g.dc_gain().unwrap(), 3.2, max_relative = 1e-12);
}

#[test]
fn effective_plant_scales_with_atoms() {
    let p = PhysParams::default();
    let a = effective_plant(&p, 1e9).unwrap();
    let b = effective_plant(&p, 1e8).unwrap();
    assert_eq!(a.den(), b.den());
    assert_relative_eq!(a.num()[0] / b.num()[0], 10.0, max_relative = 1e-12);
    assert_relative_eq!(a.num()[1] / b.num()[1], 10.0, max_relative = 1e-12);
}

/// Noise-free drive of the full nonlinear chain (actuator, pumped Bloch
/// vector, polarimeter) at one frequency; returns the measured y/u ratio.
fn simulated_plant_response(p: &PhysParams, n: f64, f_hz: f64) -> Complex64 {
    let dt = 2e-7;
    let w = 2.0 * PI * f_hz;
    let plant = effective_plant(p, n).unwrap();
    let full = 4.0 * n * p.polarization();
    // keep |fz| well under 1% of |F|
    let amp = 0.003 * full * p.meas_gain_v_per_hbar / plant.eval(w).unwrap().norm();
    let mut act = p.actuator().discretize(dt).unwrap();
    let mut s = p.initial_state(n);
    let params = PhysParams { noise_psd_v2_per_hz: 0.0, ..p.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let per = 1.0 / f_hz;
    let settle = (5e-4 + 2.0 * per).max(1e-3);
    let measure = (4.0 * per).max(1e-4);
    let n_settle = (settle / dt).round() as usize;
    let n_meas = ((measure / per).round() * per / dt).round() as usize;
    let (mut t, mut y) = (Vec::new(), Vec::new());
    for k in 0..n_settle + n_meas {
        let tm = (k as f64 + 0.5) * dt;
        let b = act.step(amp * (w * tm).sin());
        s = bloch_step(&s, b, dt, &params);
        assert!(s.fz.abs() <= 0.01 * s.norm(), "{f_hz} Hz, t={}: {}", k as f64 * dt, s.fz / s.norm());
        if k >= n_settle {
            // the reading at the end of the step
            t.push((k + 1) as f64 * dt);
            y.push(measure_sample(&s, dt, &params, &mut rng));
        }
    }
    tone(&t, &y, w) / amp
}

#[test]
fn linearized_consistency() {
    let p = PhysParams::default();
    for f in [100.0, 1e3, 1e4, 3e4, 1e5] {
        let got = simulated_plant_response(&p, 1e9, f);
        let want = effective_plant(&p, 1e9).unwrap().eval(2.0 * PI * f).unwrap();
        let mag = (got.norm() / want.norm() - 1.0).abs();
        let ph = (got / want).arg().to_degrees().abs();
        assert!(mag < 0.03 && ph < 3.0, "{f} Hz: mag err {mag}, phase err {ph}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn norm_never_exceeds_the_polarized_value(
        b in prop::collection::vec(-1.0..1.0f64, 1..200),
        dt in 1e-9..1e-6f64,
        pumped in any::<bool>(),
    ) {
        let p = if pumped { PhysParams::default() } else { unpumped() };
        let mut s = p.initial_state(1e9);
        for bk in b {
            s = bloch_step(&s, bk, dt, &p);
            prop_assert!(s.norm() <= s.max_norm() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn contraction_is_exact_without_pumping(
        fx in -4e9..4e9f64, fz in -1e9..1e9f64, b in -5.0..5.0f64, dt in 1e-9..1e-6f64,
    ) {
        let p = unpumped();
        let s = BlochState { fx, fy: 0.0, fz, n_atoms: 1e9 };
        let next = bloch_step(&s, b, dt, &p);
        let want = s.norm() * (-dt / p.t2_s).exp();
        prop_assert!((next.norm() - want).abs() <= 1e-12 * want);
    }
}
