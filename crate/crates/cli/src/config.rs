//! Scenario configuration: one strict JSON document, unit-suffixed keys.

use std::path::PathBuf;

use magloop::physim::PLANT_GAIN;
use magloop::sysid::SweepPlan;
use magloop::{FieldWaveform, PhysParams, RationalTf, SignConvention};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub physics: PhysicsSection,
    pub plant: PlantSpec,
    pub controller: ControllerSection,
    pub waveform: FieldWaveform,
    pub run: RunSection,
    pub sweep: SweepSection,
    pub identify: IdentifySection,
    pub output: OutputSection,
}

/// Overrides of the physical constants. When `meas_gain_v_per_hbar` is left
/// out it is recalibrated so the composite plant keeps its nominal gain.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_rad_per_s_g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t2_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relax_rate_per_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meas_gain_v_per_hbar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_psd_v2_per_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_g_per_v: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_nominal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub actuator_zero_rad_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub actuator_pole_rad_s: Option<f64>,
}

impl PhysicsSection {
    pub fn params(&self) -> PhysParams {
        let d = PhysParams::default();
        let mut p = PhysParams {
            gamma_rad_per_s_g: self.gamma_rad_per_s_g.unwrap_or(d.gamma_rad_per_s_g),
            t2_s: self.t2_s.unwrap_or(d.t2_s),
            relax_rate_per_s: self.relax_rate_per_s.unwrap_or(d.relax_rate_per_s),
            meas_gain_v_per_hbar: d.meas_gain_v_per_hbar,
            noise_psd_v2_per_hz: self.noise_psd_v2_per_hz.unwrap_or(d.noise_psd_v2_per_hz),
            beta_g_per_v: self.beta_g_per_v.unwrap_or(d.beta_g_per_v),
            n_nominal: self.n_nominal.unwrap_or(d.n_nominal),
            actuator_zero_rad_s: self.actuator_zero_rad_s.unwrap_or(d.actuator_zero_rad_s),
            actuator_pole_rad_s: self.actuator_pole_rad_s.unwrap_or(d.actuator_pole_rad_s),
        };
        p.meas_gain_v_per_hbar = self
            .meas_gain_v_per_hbar
            .unwrap_or_else(|| p.calibrated_meas_gain(PLANT_GAIN));
        p
    }
}

/// Plant handed to the synthesis step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantSpec {
    /// The identified constants `1.6e4 (8e5 - s) / (s^2 + 4.1e5 s + 4e9)`.
    #[default]
    Canonical,
    /// Linearized physics at `physics.n_nominal`.
    DeriveFromPhysics,
    /// `{"num": [...], "den": [...]}`, ascending powers of s.
    Explicit(RationalTf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub fc_hz: f64,
    /// Order of the Butterworth weight.
    pub weight_order: usize,
    pub convention: SignConvention,
    /// `|1 - T|` level that bounds the reported tracking band.
    pub tracking_error_max: f64,
}

impl Default for ControllerSection {
    fn default() -> Self {
        ControllerSection {
            fc_hz: 1e6,
            weight_order: 1,
            convention: SignConvention::TrackingMinus,
            tracking_error_max: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    ClosedLoop,
    OpenLoop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub mode: RunMode,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub feedback_on_at_s: f64,
    pub seed: u64,
    pub replicates: usize,
    /// True atom number; `physics.n_nominal` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_atoms: Option<f64>,
    pub reference_v: f64,
    /// Averaging window for the RMS error; `[feedback_on_at_s, duration_s]`
    /// when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_window_s: Option<(f64, f64)>,
    pub settle_tol_g: f64,
    /// Atom number the open-loop estimator assumes; `physics.n_nominal`
    /// when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assumed_n_atoms: Option<f64>,
    pub open_fit_window_s: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            mode: RunMode::ClosedLoop,
            duration_s: 5e-3,
            sample_rate_hz: 5e6,
            feedback_on_at_s: 1e-3,
            seed: 0,
            replicates: 1,
            n_atoms: None,
            reference_v: 0.0,
            error_window_s: None,
            settle_tol_g: 1e-3,
            assumed_n_atoms: None,
            open_fit_window_s: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub atom_numbers: Vec<f64>,
    pub replicates: usize,
    pub window_s: (f64, f64),
    pub open_fit_window_s: f64,
    pub n_jitter_log_sigma: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        let d = magloop::sysid::RobustnessPlan::default();
        SweepSection {
            atom_numbers: d.atom_numbers,
            replicates: d.replicates,
            window_s: d.window_s,
            open_fit_window_s: d.open_fit_window_s,
            n_jitter_log_sigma: d.n_jitter_log_sigma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentifySection {
    pub plan: SweepPlan,
    pub n_zeros: usize,
    pub n_poles: usize,
}

impl Default for IdentifySection {
    fn default() -> Self {
        IdentifySection { plan: SweepPlan::default(), n_zeros: 1, n_poles: 2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
    pub bode_lo_hz: f64,
    pub bode_hi_hz: f64,
    pub bode_points: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: PathBuf::from("out"),
            formats: vec![Format::Csv, Format::Json],
            bode_lo_hz: 10.0,
            bode_hi_hz: 1e7,
            bode_points: 400,
        }
    }
}

impl OutputSection {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Hex SHA-256 of the resolved configuration (defaults filled in, command
    /// line overrides applied), so equal hashes mean equal runs. The output
    /// directory does not take part.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.directory = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
