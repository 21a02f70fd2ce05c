//! Closed-loop spin-ensemble magnetometry at desk scale.
//!
//! * [`tf`]: rational transfer-function algebra and frequency response.
//! * [`loopshape`]: minimum-phase/all-pass factorization and weighted-Q
//!   controller synthesis.
//! * [`physim`]: Bloch-vector precession, polarimeter readout, coil supply
//!   and the linearized plant.
//! * [`looprun`]: discrete controller realization and loop execution.
//! * [`sysid`]: swept-sine identification, rational fitting and the
//!   atom-number robustness sweep.
//!
//! Independent cells (replicates, sweep points) fan out through [`exec`],
//! which uses rayon unless the `parallel` feature is disabled.

pub mod error;
pub mod exec;
pub mod looprun;
pub mod loopshape;
pub mod physim;
pub mod sysid;
pub mod tf;

pub use error::{Error, Result};
pub use exec::Execution;
pub use looprun::{LoopRecord, Scenario};
pub use loopshape::{ControllerDesign, SignConvention};
pub use physim::{BlochState, FieldWaveform, PhysParams};
pub use tf::{FrequencyResponse, RationalTf};

use tf::logspace;

/// The identified plant at the nominal atom number:
/// `1.6e4 (8e5 - s) / (s^2 + 4.1e5 s + 4e9)`.
pub fn canonical_plant() -> RationalTf {
    RationalTf::new(vec![1.6e4 * 8.0e5, -1.6e4], vec![4.0e9, 4.1e5, 1.0])
        .expect("constant plant is valid")
}

/// Nominal design: single-pole weight at 1 MHz, tracking convention.
pub fn nominal_design() -> Result<ControllerDesign> {
    let w = loopshape::butterworth1(1e6)?;
    loopshape::synthesize_controller(&canonical_plant(), &w, SignConvention::TrackingMinus)
}

/// `n` log-spaced frequencies in Hz, converted to rad/s.
pub fn log_grid_hz(lo_hz: f64, hi_hz: f64, n: usize) -> Vec<f64> {
    logspace(lo_hz, hi_hz, n).into_iter().map(tf::hz_to_rad).collect()
}
