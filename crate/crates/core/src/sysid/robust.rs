use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::looprun::{self, mean_square, mean_std, Scenario};
use crate::tf::fmt_f64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessPlan {
    pub atom_numbers: Vec<f64>,
    pub replicates: usize,
    /// Interval over which tracking error is averaged, s.
    pub window_s: (f64, f64),
    /// Regression window of the open-loop estimator, s.
    pub open_fit_window_s: f64,
    /// Log-normal spread of the true atom number about each nominal entry
    /// (0 disables it).
    pub n_jitter_log_sigma: f64,
    pub exec: Execution,
}

impl Default for RobustnessPlan {
    fn default() -> Self {
        RobustnessPlan {
            atom_numbers: vec![1e6, 1e7, 1e8, 1e9],
            replicates: 100,
            window_s: (1e-3, 5e-3),
            open_fit_window_s: 1e-6,
            n_jitter_log_sigma: 0.0,
            exec: Execution::Parallel,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_atoms: f64,
    pub closed_rms_mean_g: f64,
    pub closed_rms_std_g: f64,
    pub open_rms_mean_g: f64,
    pub open_rms_std_g: f64,
    pub closed_failures: usize,
    pub open_failures: usize,
    /// Mean open-loop estimate, G.
    pub open_estimate_mean_g: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn all_failed(&self) -> bool {
        self.rows.iter().all(|r| {
            r.closed_rms_mean_g.is_nan() && r.open_rms_mean_g.is_nan()
        })
    }

    /// CSV `n_atoms,closed_rms_mean_G,closed_rms_std_G,open_rms_mean_G,open_rms_std_G`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "n_atoms",
            "closed_rms_mean_G",
            "closed_rms_std_G",
            "open_rms_mean_G",
            "open_rms_std_G",
        ])?;
        for r in &self.rows {
            wtr.write_record([
                fmt_f64(r.n_atoms),
                fmt_f64(r.closed_rms_mean_g),
                fmt_f64(r.closed_rms_std_g),
                fmt_f64(r.open_rms_mean_g),
                fmt_f64(r.open_rms_std_g),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

struct Cell {
    closed: f64,
    open: f64,
    open_est: f64,
}

/// Runs every (atom number, replicate) cell with the single controller held
/// in `base`, plus the open-loop estimator calibrated for `n_nominal`.
/// Replicate `r` uses seed `base.seed + r` for every atom number, so rows
/// differ only through `n`. Failed cells count as NaN and are excluded from
/// the row statistics.
pub fn robustness_sweep(base: &Scenario, plan: &RobustnessPlan) -> Result<SweepTable> {
    if plan.atom_numbers.is_empty() {
        return Err(Error::InvalidArgument("atom_numbers is empty".into()));
    }
    if plan.atom_numbers.iter().any(|n| !(n.is_finite() && *n > 0.0)) {
        return Err(Error::InvalidArgument("atom numbers must be positive".into()));
    }
    if plan.replicates == 0 {
        return Err(Error::InvalidArgument("replicates must be at least 1".into()));
    }
    let (lo, hi) = plan.window_s;
    if !(lo < hi && hi <= base.duration_s + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "error window [{lo}, {hi}] must lie inside the run of {} s",
            base.duration_s
        )));
    }
    if base.controller.is_none() {
        return Err(Error::InvalidArgument("robustness sweep needs a controller".into()));
    }
    base.validate()?;

    let cells: Vec<(usize, usize)> = (0..plan.atom_numbers.len())
        .flat_map(|i| (0..plan.replicates).map(move |r| (i, r)))
        .collect();
    let total = cells.len();
    let results = exec::map(plan.exec, &cells, |&(i, rep)| {
        let cell = run_cell(base, plan, plan.atom_numbers[i], rep);
        log::info!(
            "cell n={:e} replicate={rep}: closed {:e} G, open {:e} G ({} cells total)",
            plan.atom_numbers[i],
            cell.closed,
            cell.open,
            total
        );
        cell
    });

    let mut rows = Vec::with_capacity(plan.atom_numbers.len());
    for (i, &n) in plan.atom_numbers.iter().enumerate() {
        let row: Vec<&Cell> = results[i * plan.replicates..(i + 1) * plan.replicates].iter().collect();
        let closed: Vec<f64> = row.iter().map(|c| c.closed).filter(|x| x.is_finite()).collect();
        let open: Vec<f64> = row.iter().map(|c| c.open).filter(|x| x.is_finite()).collect();
        let est: Vec<f64> = row.iter().map(|c| c.open_est).filter(|x| x.is_finite()).collect();
        let (cm, cs) = mean_std(&closed);
        let (om, os) = mean_std(&open);
        rows.push(SweepRow {
            n_atoms: n,
            closed_rms_mean_g: cm,
            closed_rms_std_g: cs,
            open_rms_mean_g: om,
            open_rms_std_g: os,
            closed_failures: row.len() - closed.len(),
            open_failures: row.len() - open.len(),
            open_estimate_mean_g: mean_std(&est).0,
        });
    }
    Ok(SweepTable { rows })
}

fn run_cell(base: &Scenario, plan: &RobustnessPlan, n: f64, rep: usize) -> Cell {
    let mut sc = base.clone();
    sc.n_atoms = n;
    if plan.n_jitter_log_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(base.replicate_seed(rep) ^ 0x9e37_79b9_7f4a_7c15);
        let z: f64 = rng.sample(StandardNormal);
        sc.n_atoms = n * (plan.n_jitter_log_sigma * z).exp();
    }
    let window = Some(plan.window_s);

    let closed = looprun::run_closed_loop_replicate(&sc, rep).and_then(|rec| {
        let e: Vec<f64> = rec.b_true.iter().zip(&rec.b_est).map(|(a, b)| a - b).collect();
        mean_square(&rec.t, &e, window).map(f64::sqrt)
    });
    let closed = closed.unwrap_or_else(|e| {
        log::warn!("closed-loop cell n={n:e} replicate={rep} failed: {e}");
        f64::NAN
    });

    let est = looprun::run_open_loop_replicate(&sc, base.params.n_nominal, plan.open_fit_window_s, rep);
    let (open, open_est) = match est {
        Ok(b_hat) => {
            let wave = sc.waveform.compile();
            let dt = sc.dt();
            let t: Vec<f64> = (0..sc.n_samples()).map(|k| k as f64 * dt).collect();
            let e: Vec<f64> = t.iter().map(|&tk| wave.eval(tk + 0.5 * dt) - b_hat).collect();
            match mean_square(&t, &e, window) {
                Ok(ms) => (ms.sqrt(), b_hat),
                Err(_) => (f64::NAN, b_hat),
            }
        }
        Err(e) => {
            log::warn!("open-loop cell n={n:e} replicate={rep} failed: {e}");
            (f64::NAN, f64::NAN)
        }
    };
    Cell { closed, open, open_est }
}
