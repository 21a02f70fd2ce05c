//! Command-line front end: reads a scenario configuration, calls into the
//! `magloop` library and writes artifacts. No numerics live here.

pub mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use magloop::looprun::{self, estimation_error};
use magloop::physim::effective_plant;
use magloop::sysid::{self, RobustnessPlan, SweepPlan};
use magloop::tf::{self, FrequencyResponse};
use magloop::{canonical_plant, loopshape, Execution, LoopRecord, RationalTf, Scenario};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

pub use config::Config;
use config::{Format, PlantSpec, RunMode};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Lib(#[from] magloop::Error),
    #[error("every cell failed")]
    AllCellsFailed,
}

impl CliError {
    /// 1: bad input or I/O; 2: synthesis/design error; 3: run failed.
    pub fn exit_code(&self) -> u8 {
        use magloop::Error as E;
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::AllCellsFailed => 3,
            CliError::Lib(e) => match e {
                E::InvalidArgument(_) | E::Io(_) | E::Serialization(_) | E::GridMismatch(_) => 1,
                E::InvalidTf(_)
                | E::EvaluationAtPole { .. }
                | E::DegreeOverflow { .. }
                | E::UnstablePlant { .. }
                | E::ZeroOnImaginaryAxis { .. }
                | E::ImproperQ { .. }
                | E::UnstableClosedLoop { .. }
                | E::NoCrossover { .. }
                | E::UnstableDiscretization { .. } => 2,
                E::NumericalDivergence { .. }
                | E::WindowTooLong { .. }
                | E::NonlinearRegime { .. }
                | E::IllConditioned { .. } => 3,
            },
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::AllCellsFailed => "all-cells-failed",
            CliError::Lib(e) => e.code(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Synthesize,
    Simulate,
    Identify,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synthesize => "synthesize",
            Command::Simulate => "simulate",
            Command::Identify => "identify",
            Command::Sweep => "sweep",
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

pub fn load_config(path: Option<&Path>, ov: &Overrides) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            Config::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => Config::default(),
    };
    if let Some(out) = &ov.out {
        cfg.output.directory = out.clone();
    }
    if let Some(seed) = ov.seed {
        cfg.run.seed = seed;
    }
    check(&cfg)?;
    Ok(cfg)
}

fn check(cfg: &Config) -> Result<()> {
    let bad = |m: &str| Err(CliError::Config(m.into()));
    if cfg.output.formats.is_empty() {
        return bad("output.formats is empty");
    }
    let o = &cfg.output;
    if !(o.bode_lo_hz > 0.0 && o.bode_hi_hz > o.bode_lo_hz && o.bode_points >= 2) {
        return bad("output bode range must satisfy 0 < bode_lo_hz < bode_hi_hz, bode_points >= 2");
    }
    if cfg.controller.weight_order == 0 {
        return bad("controller.weight_order must be at least 1");
    }
    Ok(())
}

/// Runs one command and returns its JSON summary.
pub fn run(cmd: Command, cfg: &Config, jobs: Option<usize>) -> Result<Value> {
    let exec = match jobs {
        Some(1) => Execution::Sequential,
        _ => Execution::Parallel,
    };
    let hash = cfg.hash();
    let out = Artifacts::new(&cfg.output.directory, hash.clone())?;
    log::info!("{}: config sha256 {hash}", cmd.name());
    let mut summary = magloop::exec::with_jobs(jobs, || match cmd {
        Command::Synthesize => synthesize(cfg, &out),
        Command::Simulate => simulate(cfg, &out),
        Command::Identify => identify(cfg, &out, exec),
        Command::Sweep => sweep(cfg, &out, exec),
    })?;
    let obj = summary.as_object_mut().expect("summaries are objects");
    obj.insert("command".into(), cmd.name().into());
    obj.insert("status".into(), "ok".into());
    obj.insert("config_sha256".into(), hash.into());
    obj.insert("files".into(), json!(out.written()));
    Ok(summary)
}

/// JSON line reported for a failed command.
pub fn error_summary(cmd: Command, err: &CliError) -> Value {
    json!({
        "command": cmd.name(),
        "status": "error",
        "code": err.code(),
        "exit_code": err.exit_code(),
        "message": err.to_string(),
    })
}

struct Artifacts {
    dir: PathBuf,
    hash: String,
    written: std::sync::Mutex<Vec<String>>,
}

impl Artifacts {
    fn new(dir: &Path, hash: String) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Artifacts { dir: dir.to_path_buf(), hash, written: Default::default() })
    }

    fn written(&self) -> Vec<String> {
        self.written.lock().expect("artifact list").clone()
    }

    fn create(&self, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| io_err(&path, e))?;
        self.written.lock().expect("artifact list").push(name.to_string());
        Ok((path, BufWriter::new(f)))
    }

    /// CSV preceded by a `# config_sha256=` comment line.
    fn csv<F>(&self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> magloop::Result<()>,
    {
        let (path, mut w) = self.create(name)?;
        writeln!(w, "# config_sha256={}", self.hash).map_err(|e| io_err(&path, e))?;
        body(&mut w)?;
        w.flush().map_err(|e| io_err(&path, e))
    }

    /// Pretty JSON with `config_sha256` added at the top level.
    fn json<T: Serialize>(&self, name: &str, doc: &T) -> Result<()> {
        let mut v = serde_json::to_value(doc).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(obj) = v.as_object_mut() {
            obj.insert("config_sha256".into(), self.hash.clone().into());
        }
        let (path, mut w) = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, &v).map_err(|e| io_err(&path, e.into()))?;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| io_err(&path, e))
    }

    fn record(&self, stem: &str, rec: &LoopRecord, formats: &config::OutputSection) -> Result<()> {
        if formats.wants(Format::Csv) {
            self.csv(&format!("{stem}.csv"), |w| rec.write_csv(w))?;
        }
        if formats.wants(Format::Json) {
            self.json(&format!("{stem}.meta.json"), &rec.meta)?;
        }
        Ok(())
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io { path: path.to_path_buf(), source }
}

fn plant(cfg: &Config) -> Result<RationalTf> {
    Ok(match &cfg.plant {
        PlantSpec::Canonical => canonical_plant(),
        PlantSpec::DeriveFromPhysics => {
            let p = cfg.physics.params();
            effective_plant(&p, p.n_nominal)?
        }
        PlantSpec::Explicit(tf) => tf.clone(),
    })
}

fn design(cfg: &Config) -> Result<magloop::ControllerDesign> {
    let c = &cfg.controller;
    let w = loopshape::butterworth(c.weight_order, c.fc_hz)?;
    let d = loopshape::synthesize_controller(&plant(cfg)?, &w, c.convention)?;
    if !d.closed_loop_stable {
        log::warn!("designed closed loop is unstable under the {:?} convention", c.convention);
    }
    Ok(d)
}

fn scenario(cfg: &Config, controller: Option<magloop::ControllerDesign>) -> Scenario {
    let params = cfg.physics.params();
    let r = &cfg.run;
    let mut sc = Scenario::new(params, cfg.waveform.clone(), controller);
    sc.n_atoms = r.n_atoms.unwrap_or(sc.params.n_nominal);
    sc.reference_v = r.reference_v;
    sc.duration_s = r.duration_s;
    sc.sample_rate_hz = r.sample_rate_hz;
    sc.feedback_on_at_s = r.feedback_on_at_s;
    sc.seed = r.seed;
    sc.replicates = r.replicates;
    sc
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn synthesize(cfg: &Config, out: &Artifacts) -> Result<Value> {
    let p = plant(cfg)?;
    let d = design(cfg)?;
    let t_dc = d.t.dc_gain()?;
    let band = loopshape::tracking_bandwidth(&d.t, cfg.controller.tracking_error_max)?
        .map(|w| w / (2.0 * std::f64::consts::PI));

    let o = &cfg.output;
    if o.wants(Format::Json) {
        out.json("design.json", &json!({ "plant": p, "design": d }))?;
    }
    if o.wants(Format::Csv) {
        let grid = magloop::log_grid_hz(o.bode_lo_hz, o.bode_hi_hz, o.bode_points);
        for (name, h) in [("P", &p), ("C", &d.c), ("T", &d.t)] {
            let resp = tf::bode(h, &grid)?;
            out.csv(&format!("bode_{name}.csv"), |w| resp.write_csv(w))?;
        }
    }

    eprintln!("plant      P(s) = {p}");
    eprintln!("controller C(s) = {}", d.c);
    eprintln!("closed     T(s) = {}", d.t);
    eprintln!("T(0) = {t_dc:.6}   stable = {}", d.closed_loop_stable);
    if let Some(m) = &d.margins {
        eprintln!(
            "phase margin {:.2} deg at {:.4e} Hz, gain margin {} dB",
            m.phase_margin_deg,
            m.crossover_rad_s / (2.0 * std::f64::consts::PI),
            if m.gain_margin_db.is_finite() { format!("{:.2}", m.gain_margin_db) } else { "inf".into() }
        );
    }
    match band {
        Some(f) => eprintln!(
            "|1 - T| stays below {} up to {f:.4e} Hz",
            cfg.controller.tracking_error_max
        ),
        None => eprintln!("|1 - T| never reaches {}", cfg.controller.tracking_error_max),
    }

    Ok(json!({
        "convention": d.sign_convention,
        "t_dc": t_dc,
        "closed_loop_stable": d.closed_loop_stable,
        "tracking_error_max": cfg.controller.tracking_error_max,
        "tracking_band_hz": band,
        "phase_margin_deg": d.margins.map(|m| m.phase_margin_deg),
        "gain_margin_db": d.margins.map(|m| finite_or_null(m.gain_margin_db)),
    }))
}

fn simulate(cfg: &Config, out: &Artifacts) -> Result<Value> {
    match cfg.run.mode {
        RunMode::ClosedLoop => simulate_closed(cfg, out),
        RunMode::OpenLoop => simulate_open(cfg, out),
    }
}

fn record_stem(rep: usize) -> String {
    if rep == 0 {
        "record".into()
    } else {
        format!("record_r{rep}")
    }
}

fn simulate_closed(cfg: &Config, out: &Artifacts) -> Result<Value> {
    let sc = scenario(cfg, Some(design(cfg)?));
    sc.validate()?;
    let mut records = Vec::with_capacity(sc.replicates);
    for rep in 0..sc.replicates {
        match looprun::run_closed_loop_replicate(&sc, rep) {
            Ok(mut rec) => {
                rec.meta.config_hash = Some(out.hash.clone());
                out.record(&record_stem(rep), &rec, &cfg.output)?;
                records.push(rec);
            }
            Err(magloop::Error::NumericalDivergence { t, reason, partial }) => {
                if let Some(mut rec) = partial.map(|b| *b) {
                    rec.meta.config_hash = Some(out.hash.clone());
                    out.record(&record_stem(rep), &rec, &cfg.output)?;
                    log::error!("replicate {rep} diverged; partial record of {} samples written", rec.len());
                }
                return Err(magloop::Error::NumericalDivergence { t, reason, partial: None }.into());
            }
            Err(e) => return Err(e.into()),
        }
    }
    let window = cfg.run.error_window_s.unwrap_or((sc.feedback_on_at_s, sc.duration_s));
    let stats = estimation_error(&records, Some(window))?;
    let first = &records[0];
    let settle = first.settle_time(cfg.run.settle_tol_g);
    let final_est = first.tail_mean_estimate(0.1);
    let final_true = *first.b_true.last().expect("non-empty record");

    eprintln!("replicate  rms_error_G");
    for (i, r) in stats.rms_g.iter().enumerate() {
        eprintln!("{i:>9}  {r:.4e}");
    }
    eprintln!(
        "settle time (|b_true - b_est| <= {} G): {}",
        cfg.run.settle_tol_g,
        settle.map_or("not settled".into(), |t| format!("{t:.4e} s"))
    );
    eprintln!("final estimate {final_est:.6e} G (true {final_true:.6e} G)");

    Ok(json!({
        "mode": "closed_loop",
        "seed": sc.seed,
        "replicates": sc.replicates,
        "error_window_s": window,
        "rms_error_g": stats.mean,
        "rms_error_std_g": stats.std,
        "settle_time_s": settle,
        "final_estimate_g": final_est,
        "final_true_g": final_true,
    }))
}

fn simulate_open(cfg: &Config, out: &Artifacts) -> Result<Value> {
    let sc = scenario(cfg, None);
    sc.validate()?;
    let assumed = cfg.run.assumed_n_atoms.unwrap_or(sc.params.n_nominal);
    let mut estimates = Vec::with_capacity(sc.replicates);
    for rep in 0..sc.replicates {
        let mut rec = looprun::run_free(&sc, rep)?;
        rec.meta.config_hash = Some(out.hash.clone());
        out.record(&record_stem(rep), &rec, &cfg.output)?;
        estimates.push(looprun::run_open_loop_replicate(
            &sc,
            assumed,
            cfg.run.open_fit_window_s,
            rep,
        )?);
    }
    let (mean, std) = looprun::mean_std(&estimates);
    eprintln!("replicate  estimate_G");
    for (i, b) in estimates.iter().enumerate() {
        eprintln!("{i:>9}  {b:.6e}");
    }
    Ok(json!({
        "mode": "open_loop",
        "seed": sc.seed,
        "replicates": sc.replicates,
        "assumed_n_atoms": assumed,
        "estimates_g": estimates,
        "estimate_mean_g": mean,
        "estimate_std_g": std,
    }))
}

#[derive(Serialize)]
struct PointFailure {
    frequency_hz: f64,
    code: &'static str,
    message: String,
}

fn identify(cfg: &Config, out: &Artifacts, exec: Execution) -> Result<Value> {
    let id = &cfg.identify;
    id.plan.validate()?;
    let sc = scenario(cfg, None);
    sc.validate()?;

    // one cell per frequency so a failed point does not sink the sweep;
    // point i keeps the seed it would get in a single call
    let (omega, values, coherence, failures) = if id.plan.reset_between_points {
        let idx: Vec<usize> = (0..id.plan.frequencies_hz.len()).collect();
        let cells = magloop::exec::map(exec, &idx, |&i| {
            let f = id.plan.frequencies_hz[i];
            let mut one = sc.clone();
            one.seed = sc.seed.wrapping_add(i as u64);
            let plan = SweepPlan { frequencies_hz: vec![f], ..id.plan.clone() };
            let r = sysid::swept_sine(&one, &plan, Execution::Sequential);
            match &r {
                Ok(res) => log::info!("point {f:.4e} Hz: coherence {:.4}", res.coherence[0]),
                Err(e) => log::warn!("point {f:.4e} Hz failed: {e}"),
            }
            r
        });
        let (mut om, mut va, mut co, mut fail) = (vec![], vec![], vec![], vec![]);
        for (res, &f) in cells.into_iter().zip(&id.plan.frequencies_hz) {
            match res {
                Ok(r) => {
                    om.push(r.response.points()[0].omega);
                    va.push(r.response.points()[0].value);
                    co.push(r.coherence[0]);
                }
                Err(e) => fail.push(PointFailure { frequency_hz: f, code: e.code(), message: e.to_string() }),
            }
        }
        (om, va, co, fail)
    } else {
        let r = sysid::swept_sine(&sc, &id.plan, exec)?;
        (r.response.omegas(), r.response.values(), r.coherence, vec![])
    };
    if omega.is_empty() {
        return Err(CliError::AllCellsFailed);
    }
    let response = FrequencyResponse::new(&omega, &values, None)?;
    let fit = sysid::fit_rational_with_diagnostics(&response, id.n_zeros, id.n_poles);

    let o = &cfg.output;
    if o.wants(Format::Csv) {
        out.csv("response.csv", |w| response.write_csv(w))?;
    }
    if o.wants(Format::Json) {
        let fit_doc = match &fit {
            Ok(rep) => json!({ "status": "ok", "report": rep, "poles": rep.tf.poles(), "zeros": rep.tf.zeros() }),
            Err(e) => json!({ "status": "error", "code": e.code(), "message": e.to_string() }),
        };
        out.json(
            "identify.json",
            &json!({
                "seed": sc.seed,
                "coherence": coherence,
                "failures": failures,
                "fit": fit_doc,
            }),
        )?;
    }

    eprintln!("{:>12}  {:>10}  {:>10}  {:>9}", "f_Hz", "mag_dB", "phase_deg", "coherence");
    for (p, c) in response.points().iter().zip(&coherence) {
        eprintln!(
            "{:>12.4e}  {:>10.3}  {:>10.3}  {:>9.5}",
            p.omega / (2.0 * std::f64::consts::PI),
            p.mag_db(),
            p.phase_deg,
            c
        );
    }
    let fit = fit?;
    eprintln!("fit: {}  (relative residual {:.3e})", fit.tf, fit.relative_residual);
    Ok(json!({
        "points": omega.len(),
        "failed_points": failures.len(),
        "fit": fit.tf,
        "fit_relative_residual": fit.relative_residual,
        "fit_dc_gain": fit.tf.dc_gain().ok(),
    }))
}

fn sweep(cfg: &Config, out: &Artifacts, exec: Execution) -> Result<Value> {
    let s = &cfg.sweep;
    if s.atom_numbers.is_empty() {
        return Err(CliError::Config("sweep.atom_numbers is empty".into()));
    }
    let base = scenario(cfg, Some(design(cfg)?));
    let plan = RobustnessPlan {
        atom_numbers: s.atom_numbers.clone(),
        replicates: s.replicates,
        window_s: s.window_s,
        open_fit_window_s: s.open_fit_window_s,
        n_jitter_log_sigma: s.n_jitter_log_sigma,
        exec,
    };
    let table = sysid::robustness_sweep(&base, &plan)?;
    let o = &cfg.output;
    if o.wants(Format::Csv) {
        out.csv("sweep.csv", |w| table.write_csv(w))?;
    }
    if o.wants(Format::Json) {
        // execution mode is left out: results do not depend on it
        let mut plan_doc = serde_json::to_value(&plan).expect("plan serializes");
        plan_doc.as_object_mut().expect("plan is an object").remove("exec");
        out.json("sweep.json", &json!({ "seed": base.seed, "plan": plan_doc, "table": table }))?;
    }

    eprintln!(
        "{:>10}  {:>12}  {:>12}  {:>12}  {:>12}  {:>8}",
        "n_atoms", "closed_G", "closed_sd", "open_G", "open_sd", "failures"
    );
    for r in &table.rows {
        eprintln!(
            "{:>10.1e}  {:>12.4e}  {:>12.4e}  {:>12.4e}  {:>12.4e}  {:>4}/{:<4}",
            r.n_atoms,
            r.closed_rms_mean_g,
            r.closed_rms_std_g,
            r.open_rms_mean_g,
            r.open_rms_std_g,
            r.closed_failures,
            r.open_failures
        );
    }
    if table.all_failed() {
        return Err(CliError::AllCellsFailed);
    }
    let col = |f: fn(&sysid::SweepRow) -> f64| -> Vec<Value> {
        table.rows.iter().map(|r| finite_or_null(f(r))).collect()
    };
    Ok(json!({
        "seed": base.seed,
        "replicates": s.replicates,
        "atom_numbers": s.atom_numbers,
        "closed_rms_mean_g": col(|r| r.closed_rms_mean_g),
        "open_rms_mean_g": col(|r| r.open_rms_mean_g),
        "failures": table.rows.iter().map(|r| r.closed_failures + r.open_failures).sum::<usize>(),
    }))
}
