use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of equal-amplitude tones in a band-limited noise field.
pub const NOISE_TONES: usize = 64;

/// Applied transverse field b_true(t), in gauss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldWaveform {
    Constant {
        amplitude_g: f64,
    },
    Step {
        amplitude_g: f64,
        start_s: f64,
    },
    Sinusoid {
        amplitude_g: f64,
        frequency_hz: f64,
        #[serde(default)]
        phase_deg: f64,
        #[serde(default)]
        start_s: f64,
    },
    /// Sum of tones at `k * bandwidth / K`, k = 1..K, with seeded random
    /// phases, scaled to the requested RMS.
    BandlimitedNoise {
        rms_g: f64,
        bandwidth_hz: f64,
        seed: u64,
        #[serde(default)]
        start_s: f64,
    },
    /// Piecewise-linear through `values_g` at spacing `dt_s`, held after the end.
    Samples {
        dt_s: f64,
        values_g: Vec<f64>,
    },
}

impl Default for FieldWaveform {
    fn default() -> Self {
        FieldWaveform::Step { amplitude_g: 0.05, start_s: 0.5e-3 }
    }
}

impl FieldWaveform {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("waveform: {m}")));
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match self {
            FieldWaveform::Constant { amplitude_g } if !amplitude_g.is_finite() => {
                bad("non-finite amplitude")
            }
            FieldWaveform::Step { amplitude_g, start_s } if !finite(&[*amplitude_g, *start_s]) => {
                bad("non-finite parameter")
            }
            FieldWaveform::Sinusoid { amplitude_g, frequency_hz, phase_deg, start_s } => {
                if !finite(&[*amplitude_g, *frequency_hz, *phase_deg, *start_s]) || *frequency_hz < 0.0 {
                    bad("sinusoid needs finite parameters and frequency >= 0")
                } else {
                    Ok(())
                }
            }
            FieldWaveform::BandlimitedNoise { rms_g, bandwidth_hz, start_s, .. } => {
                if !finite(&[*rms_g, *bandwidth_hz, *start_s]) || *bandwidth_hz <= 0.0 || *rms_g < 0.0 {
                    bad("band-limited noise needs rms >= 0 and bandwidth > 0")
                } else {
                    Ok(())
                }
            }
            FieldWaveform::Samples { dt_s, values_g } => {
                if !(dt_s.is_finite() && *dt_s > 0.0) || values_g.is_empty() || !finite(values_g) {
                    bad("samples need dt > 0 and a non-empty finite list")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Time at which the field switches on.
    pub fn onset_s(&self) -> f64 {
        match self {
            FieldWaveform::Step { start_s, .. }
            | FieldWaveform::Sinusoid { start_s, .. }
            | FieldWaveform::BandlimitedNoise { start_s, .. } => start_s.max(0.0),
            _ => 0.0,
        }
    }

    /// Precomputes tone tables so evaluation is cheap and pure.
    pub fn compile(&self) -> CompiledWaveform {
        let tones = match self {
            FieldWaveform::BandlimitedNoise { rms_g, bandwidth_hz, seed, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let amp = rms_g * (2.0 / NOISE_TONES as f64).sqrt();
                (1..=NOISE_TONES)
                    .map(|k| {
                        let w = 2.0 * PI * bandwidth_hz * k as f64 / NOISE_TONES as f64;
                        let ph = rng.random_range(0.0..2.0 * PI);
                        (amp, w, ph)
                    })
                    .collect()
            }
            _ => Vec::new(),
        };
        CompiledWaveform { kind: self.clone(), tones }
    }
}

#[derive(Clone, Debug)]
pub struct CompiledWaveform {
    kind: FieldWaveform,
    tones: Vec<(f64, f64, f64)>,
}

impl CompiledWaveform {
    pub fn eval(&self, t: f64) -> f64 {
        match &self.kind {
            FieldWaveform::Constant { amplitude_g } => *amplitude_g,
            FieldWaveform::Step { amplitude_g, start_s } => {
                if t >= *start_s {
                    *amplitude_g
                } else {
                    0.0
                }
            }
            FieldWaveform::Sinusoid { amplitude_g, frequency_hz, phase_deg, start_s } => {
                if t < *start_s {
                    0.0
                } else {
                    amplitude_g * (2.0 * PI * frequency_hz * t + phase_deg.to_radians()).sin()
                }
            }
            FieldWaveform::BandlimitedNoise { start_s, .. } => {
                if t < *start_s {
                    0.0
                } else {
                    self.tones.iter().map(|(a, w, ph)| a * (w * t + ph).cos()).sum()
                }
            }
            FieldWaveform::Samples { dt_s, values_g } => {
                let x = (t / dt_s).max(0.0);
                let i = x.floor() as usize;
                if i + 1 >= values_g.len() {
                    return *values_g.last().unwrap();
                }
                let f = x - i as f64;
                values_g[i] * (1.0 - f) + values_g[i + 1] * f
            }
        }
    }
}
