//! Config-driven validation, runs, sweeps and their on-disk artifacts.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{GProfile, RunConfig};
use crate::delay::{adjust_dt, DelayCoefficient};
use crate::diagnostics::{
    data_norms, estimate_semigroup_constants, fit_decay_window, lemma_bound_check, smallness_report,
    ConstantsSettings, DataNorms, DecayFit, LemmaBound, SemigroupConstants, SmallnessInputs, TheoryReport,
};
use crate::error::{Error, Result};
use crate::integrator::{initial_state, run, Couplings, InitialData, Model, RunSettings, SimState, Trajectory};
use crate::kernels::{validate_kernel, KernelReport};
use crate::memory::HistoryMode;
use crate::spectral::Field;

/// Header of `trace.csv`.
pub const TRACE_COLUMNS: &str = "t,E_total,E_kinetic,E_elastic,E_source,E_delay,E_memory,norm_U,cbar_t,lb_holds";

/// Parameters accepted by [`with_parameter`].
pub const SWEEP_PARAMETERS: [&str; 6] = ["k0", "sigma", "tau", "amplitude", "K", "dt"];

/// A config turned into a model and concrete initial data.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// The config with `dt` adjusted and paths resolved.
    pub config: RunConfig,
    pub model: Model,
    pub dt: f64,
    pub dt_note: Option<String>,
    pub history_mode: HistoryMode,
    pub u0: Field,
    pub u1: Field,
    /// `u_t` on `(−τ, 0)`; constant in time.
    pub g: Field,
}

pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    config.check()?;
    let mut config = config.clone();
    let problem = config.problem.build()?;
    let kernel = config.kernel.build()?;
    let tau = config.delay.tau;
    let requested = config.integrator.dt;
    let dt = adjust_dt(tau, requested);
    let dt_note = if (dt - requested).abs() > 1e-12 * requested {
        let note = format!("dt adjusted from {requested} to {dt} so that tau = {tau} is a whole number of steps");
        log::warn!("{note}");
        config.integrator.dt = dt;
        Some(note)
    } else {
        None
    };
    let it = &config.integrator;
    let couplings = Couplings {
        memory: !it.memory_off,
        delay: !it.delay_off,
        source: !it.source_off,
    };
    let history_mode = it.history_mode.resolve(&kernel);
    let scale = config.initial.scale;
    let u0 = config.initial.u0.field(&problem)?.scaled(scale);
    let u1 = config.initial.u1.field(&problem)?.scaled(scale);
    let g = match &config.delay.g {
        GProfile::U1 => u1.clone(),
        GProfile::History => config.initial.history.velocity(&u0),
        GProfile::Field { profile } => profile.field(&problem)?.scaled(scale),
    };
    let model = Model {
        problem,
        kernel,
        coeff: config.delay.coefficient.clone(),
        tau,
        couplings,
    };
    Ok(Prepared {
        config,
        model,
        dt,
        dt_note,
        history_mode,
        u0,
        u1,
        g,
    })
}

impl Prepared {
    pub fn initial_state(&self) -> Result<SimState> {
        let history = self.config.initial.history.clone();
        let u0 = self.u0.clone();
        let sampler = move |s: f64| Ok(history.sample(&u0, s));
        let g = self.g.clone();
        let g_sampler = move |_t: f64| g.clone();
        initial_state(
            &self.model,
            &InitialData {
                u0_history: &sampler,
                u1: self.u1.clone(),
                g: &g_sampler,
            },
            self.dt,
            self.history_mode,
            &self.config.integrator.history,
        )
    }

    pub fn run_settings(&self) -> RunSettings {
        let it = &self.config.integrator;
        RunSettings {
            dt: self.dt,
            t_end: it.t_end,
            sample_stride: it.sample_stride,
            stop_on_lower_bound_loss: it.stop_on_lower_bound_loss,
            keep_snapshots: false,
        }
    }

    pub fn constants_settings(&self) -> ConstantsSettings {
        let d = &self.config.diagnostics;
        ConstantsSettings {
            ensemble: d.ensemble,
            horizon_factor: d.horizon_factor,
            dt: d.constants_dt,
            m_safety: d.m_safety,
            seed: self.config.seed,
            history_mode: self.history_mode,
        }
    }

    fn kernel_gate(&self, report: &KernelReport) -> Result<()> {
        if report.usable {
            return Ok(());
        }
        let failures = report.failures();
        Err(Error::KernelRejected {
            hypothesis: failures.first().copied().unwrap_or("?"),
            detail: format!(
                "failing hypotheses {} (mu0 = {}, mu_tilde = {}, delta = {})",
                failures.join(" "),
                report.mu0,
                report.mu_tilde,
                report.delta
            ),
        })
    }

    pub fn constants(&self) -> Result<SemigroupConstants> {
        self.kernel_gate(&validate_kernel(&self.model.kernel))?;
        estimate_semigroup_constants(&self.model, &self.constants_settings())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub kernel: KernelReport,
    pub dt: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_note: Option<String>,
    pub c_h: f64,
    pub data: DataNorms,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constants: Option<SemigroupConstants>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theory: Option<TheoryReport>,
    pub hard_failures: Vec<String>,
    pub warnings: Vec<String>,
}

impl Validation {
    pub fn passed(&self) -> bool {
        self.hard_failures.is_empty()
    }
}

/// Kernel hypotheses (hard), then semigroup constants, admissibility and smallness (advisory).
pub fn validate(prep: &Prepared) -> Result<Validation> {
    let kernel = validate_kernel(&prep.model.kernel);
    let c_h = prep.model.problem.estimate_h_constant();
    let mut hard_failures = Vec::new();
    let mut warnings: Vec<String> = prep.dt_note.iter().cloned().collect();
    let mut constants = None;
    let mut theory = None;
    let mut data = DataNorms::default();
    if let Err(e) = prep.kernel_gate(&kernel) {
        hard_failures.push(e.to_string());
    } else {
        match estimate_semigroup_constants(&prep.model, &prep.constants_settings()) {
            Ok(c) => {
                let state = prep.initial_state()?;
                data = data_norms(&prep.model, &state, c.omega)?;
                let report = smallness_report(&SmallnessInputs {
                    m: c.m,
                    omega: c.omega,
                    omega_prime: prep.config.diagnostics.omega_prime,
                    tau: prep.model.tau,
                    b: prep.model.b(),
                    mu_tilde: prep.model.kernel.mu_tilde(),
                    sigma: prep.model.problem.sigma(),
                    c_h,
                    coeff: prep.model.active_coeff(),
                    data,
                })?;
                if !report.admissible {
                    warnings.push(format!(
                        "delay coefficient not admissible: {}",
                        report.admissibility_note.clone().unwrap_or_default()
                    ));
                }
                if !report.applicable {
                    warnings.push(report.verdict.clone());
                }
                constants = Some(c);
                theory = Some(report);
            }
            Err(e) => warnings.push(format!("semigroup constants unavailable: {e}")),
        }
    }
    Ok(Validation {
        kernel,
        dt: prep.dt,
        dt_note: prep.dt_note.clone(),
        c_h,
        data,
        constants,
        theory,
        hard_failures,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terminated_at: Option<f64>,
    pub dt: f64,
    pub samples: usize,
    pub history_mode: HistoryMode,
    pub lb_all_hold: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<DecayFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lemma: Option<LemmaBound>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lemma_error: Option<String>,
    pub validation: Validation,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub trajectory: Trajectory,
    pub report: RunReport,
}

impl Outcome {
    pub fn diverged(&self) -> bool {
        matches!(self.trajectory.termination, crate::integrator::Termination::Diverged { .. })
    }
}

/// Runs a prepared config. Kernel rejection is never overridden.
pub fn execute(prep: &Prepared, validation: Validation) -> Result<Outcome> {
    prep.kernel_gate(&validation.kernel)?;
    let trajectory = run(&prep.model, prep.initial_state()?, &prep.run_settings())?;
    let trace = trajectory.energy_trace();
    let (fit, fit_error) = match fit_decay_window(&trace, prep.config.diagnostics.fit_window) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let coeff = prep.model.active_coeff();
    let (lemma, lemma_error) = match lemma_bound_check(&trace, &coeff, prep.model.b(), prep.model.tau, prep.dt) {
        Ok(l) => (Some(l), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let terminated_at = match trajectory.termination {
        crate::integrator::Termination::Completed => None,
        crate::integrator::Termination::Diverged { t }
        | crate::integrator::Termination::EnergyPositivityLost { t } => Some(t),
    };
    let report = RunReport {
        status: trajectory.termination.label().into(),
        terminated_at,
        dt: prep.dt,
        samples: trajectory.rows.len(),
        history_mode: prep.history_mode,
        lb_all_hold: trajectory.rows.iter().all(|r| r.lb_holds),
        fit,
        fit_error,
        lemma,
        lemma_error,
        validation,
    };
    Ok(Outcome { trajectory, report })
}

/// `prepare`, `validate` and `execute` in one go; `force` runs despite hard failures
/// other than kernel rejection.
pub fn run_config(config: &RunConfig, force: bool) -> Result<(Prepared, Outcome)> {
    let prep = prepare(config)?;
    let validation = validate(&prep)?;
    if !validation.passed() && !force {
        return Err(Error::Config(validation.hard_failures.join("; ")));
    }
    let outcome = execute(&prep, validation)?;
    Ok((prep, outcome))
}

/// Shortest round-trip spelling, switching to exponent form for very small or large values.
fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn trace_csv(trajectory: &Trajectory) -> String {
    let mut out = String::from(TRACE_COLUMNS);
    out.push('\n');
    for r in &trajectory.rows {
        let e = &r.energy;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            num(r.t),
            num(e.total),
            num(e.kinetic),
            num(e.elastic),
            num(e.source),
            num(e.delay_window),
            num(e.memory),
            num(r.norm_u),
            num(r.cbar),
            u8::from(r.lb_holds)
        );
    }
    out
}

/// `(t, E_total)` columns of a trace file.
pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<Vec<(f64, f64)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').map(str::trim).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::MalformedInput(format!("{}: missing column {name}", path.display())))
    };
    let (it, ie) = (col("t")?, col("E_total")?);
    lines
        .enumerate()
        .map(|(i, line)| {
            let cells: Vec<&str> = line.split(',').collect();
            let get = |j: usize| {
                cells
                    .get(j)
                    .and_then(|c| c.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::MalformedInput(format!("{}: bad row {}", path.display(), i + 2)))
            };
            Ok((get(it)?, get(ie)?))
        })
        .collect()
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string_pretty(value).map_err(|e| Error::Config(format!("cannot serialize report: {e}")))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `config.toml`, `trace.csv` and `report.toml` into `dir`.
pub fn write_outputs(dir: &Path, prep: &Prepared, outcome: &Outcome) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("config.toml"), &prep.config.to_toml_string()?)?;
    write(&dir.join("trace.csv"), &trace_csv(&outcome.trajectory))?;
    write(&dir.join("report.toml"), &to_toml(&outcome.report)?)
}

/// Copy of `config` with one whitelisted parameter replaced.
pub fn with_parameter(config: &RunConfig, parameter: &str, value: f64) -> Result<RunConfig> {
    let mut c = config.clone();
    match parameter {
        "k0" => match &mut c.delay.coefficient {
            DelayCoefficient::Constant { k0 } | DelayCoefficient::ExponentialDecay { k0, .. } => *k0 = value,
            DelayCoefficient::OnOff { amplitude, .. } => *amplitude = value,
            DelayCoefficient::PiecewiseConstant { .. } => {
                return Err(Error::Config("k0 sweeps need a const, expdecay or onoff coefficient".into()))
            }
        },
        "sigma" => c.problem.sigma = value,
        "tau" => c.delay.tau = value,
        "amplitude" => c.initial.scale = value,
        "K" => {
            if !(value >= 1.0 && value.fract() == 0.0) {
                return Err(Error::Config(format!("K must be a positive integer, got {value}")));
            }
            c.problem.modes = value as usize;
            c.problem.grid = None;
        }
        "dt" => c.integrator.dt = value,
        other => {
            return Err(Error::Config(format!(
                "unknown sweep parameter {other:?}; expected one of {}",
                SWEEP_PARAMETERS.join(", ")
            )))
        }
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub beta: Option<f64>,
    pub predicted_rate: Option<f64>,
    pub lemma_bound_ok: Option<bool>,
    pub applicable: Option<bool>,
    pub terminated: String,
    pub error: Option<String>,
}

pub const SWEEP_COLUMNS: &str = "value,beta,predicted_rate,lemma_bound_ok,applicable,terminated,error";

fn opt<T: ToString>(x: &Option<T>) -> String {
    x.as_ref().map(T::to_string).unwrap_or_default()
}

pub fn summary_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_COLUMNS);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.value,
            opt(&r.beta),
            opt(&r.predicted_rate),
            opt(&r.lemma_bound_ok.map(u8::from)),
            opt(&r.applicable.map(u8::from)),
            r.terminated,
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
        );
    }
    out
}

/// One isolated run per value, in parallel. Failures are recorded per row.
/// With `out`, each run writes its artifacts to `out/<parameter>_<index>`.
pub fn sweep(config: &RunConfig, parameter: &str, values: &[f64], force: bool, out: Option<&Path>) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    if !SWEEP_PARAMETERS.contains(&parameter) {
        with_parameter(config, parameter, values[0])?;
    }
    let rows = values
        .par_iter()
        .enumerate()
        .map(|(i, &value)| {
            let result = with_parameter(config, parameter, value).and_then(|c| run_config(&c, force));
            match result {
                Ok((prep, outcome)) => {
                    let r = &outcome.report;
                    let mut row = SweepRow {
                        value,
                        beta: r.fit.map(|f| f.beta),
                        predicted_rate: r.validation.theory.as_ref().map(|t| t.predicted_rate),
                        lemma_bound_ok: r.lemma.map(|l| l.pass),
                        applicable: r.validation.theory.as_ref().map(|t| t.applicable),
                        terminated: r.status.clone(),
                        error: None,
                    };
                    if let Some(dir) = out {
                        if let Err(e) = write_outputs(&dir.join(format!("{parameter}_{i:03}")), &prep, &outcome) {
                            row.error = Some(e.to_string());
                        }
                    }
                    row
                }
                Err(e) => SweepRow {
                    value,
                    beta: None,
                    predicted_rate: None,
                    lemma_bound_ok: None,
                    applicable: None,
                    terminated: "failed".into(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(rows)
}
