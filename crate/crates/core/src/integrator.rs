//! Time stepping of the coupled modal system `(u, u_t, η)` with the delay line.
//!
//! Each step is a kick–rotate–kick splitting:
//!
//! 1. half kick `v += dt/2 · F(t_n)`,
//! 2. exact rotation of every mode under `u'' = −(1−μ̃)λ_k u`,
//! 3. history advance with the step-averaged velocity `(u_{n+1} − u_n)/dt`,
//! 4. half kick `v += dt/2 · F(t_{n+1})`, then `B* v_{n+1}` enters the delay line,
//!
//! where `F = −memory − k(t) B B* u_t(t−τ) + |u|^σ u`. The stiff elastic block
//! is never stepped explicitly, so the scheme has no CFL restriction from it.

use serde::{Deserialize, Serialize};

use crate::delay::{make_delay_line, DelayCoefficient, DelayLine, GSampler};
use crate::diagnostics::{cbar, energy, energy_lower_bound_check, state_norm, EnergyBreakdown};
use crate::error::{Error, Result};
use crate::kernels::MemoryKernel;
use crate::memory::{init_history, memory_convolution, HistoryField, HistoryMode, HistorySampler, HistorySettings};
use crate::spectral::{Field, SpectralProblem};

/// Which coupling terms are active. Turning all three off leaves the
/// undamped wave `u'' + A u = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Couplings {
    pub memory: bool,
    pub delay: bool,
    pub source: bool,
}

impl Default for Couplings {
    fn default() -> Self {
        Self {
            memory: true,
            delay: true,
            source: true,
        }
    }
}

impl Couplings {
    pub fn linear() -> Self {
        Self {
            memory: true,
            delay: false,
            source: false,
        }
    }

    pub fn none() -> Self {
        Self {
            memory: false,
            delay: false,
            source: false,
        }
    }
}

/// Everything that stays fixed during a run.
#[derive(Clone, Debug)]
pub struct Model {
    pub problem: SpectralProblem,
    pub kernel: MemoryKernel,
    pub coeff: DelayCoefficient,
    pub tau: f64,
    pub couplings: Couplings,
}

impl Model {
    /// `μ̃` as seen by the dynamics (zero with the memory switched off).
    pub fn mu_tilde(&self) -> f64 {
        if self.couplings.memory {
            self.kernel.mu_tilde()
        } else {
            0.0
        }
    }

    /// `k` as seen by the dynamics (zero with the delay switched off).
    pub fn active_coeff(&self) -> DelayCoefficient {
        if self.couplings.delay {
            self.coeff.clone()
        } else {
            DelayCoefficient::zero()
        }
    }

    pub fn b(&self) -> f64 {
        self.problem.b_norm()
    }

    fn psi_active(&self) -> bool {
        self.couplings.source
    }

    pub fn psi(&self, u: &Field) -> f64 {
        if self.psi_active() {
            self.problem.psi_value(u)
        } else {
            0.0
        }
    }
}

/// `U(t) = (u, u_t, η^t)` plus the delay line.
#[derive(Clone, Debug)]
pub struct SimState {
    pub step: usize,
    pub t: f64,
    pub u: Field,
    pub v: Field,
    pub hist: HistoryField,
    pub line: DelayLine,
    force: Option<Field>,
}

/// Initial data: `u₀` on `(−∞, 0]`, `u₁`, and `g` on `(−τ, 0)`.
pub struct InitialData<'a> {
    pub u0_history: &'a HistorySampler<'a>,
    pub u1: Field,
    pub g: &'a GSampler<'a>,
}

pub fn initial_state(
    model: &Model,
    data: &InitialData,
    dt: f64,
    mode: HistoryMode,
    settings: &HistorySettings,
) -> Result<SimState> {
    let p = &model.problem;
    let u = (data.u0_history)(0.0)?;
    if u.len() != p.n_modes() || data.u1.len() != p.n_modes() {
        return Err(Error::Config("initial data do not match the number of modes".into()));
    }
    let hist = init_history(p, &model.kernel, data.u0_history, mode, dt, settings)?;
    let mut line = make_delay_line(p, data.g, model.tau, dt)?;
    line.push(0, p.apply_b(&data.u1))?;
    Ok(SimState {
        step: 0,
        t: 0.0,
        u,
        v: data.u1.clone(),
        hist,
        line,
        force: None,
    })
}

/// Precomputed per-mode rotation for the elastic block.
#[derive(Clone, Debug)]
pub struct Stepper {
    dt: f64,
    freq: Vec<f64>,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Stepper {
    pub fn new(model: &Model, dt: f64) -> Self {
        let stiffness = 1.0 - model.mu_tilde();
        let freq: Vec<f64> = model
            .problem
            .eigenvalues()
            .iter()
            .map(|l| (stiffness * l).sqrt())
            .collect();
        let cos = freq.iter().map(|w| (w * dt).cos()).collect();
        let sin = freq.iter().map(|w| (w * dt).sin()).collect();
        Self { dt, freq, cos, sin }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn rotate(&self, u: &mut Field, v: &mut Field) {
        for k in 0..u.len() {
            let (c, s, w) = (self.cos[k], self.sin[k], self.freq[k]);
            let (uk, vk) = (u[k], v[k]);
            u[k] = c * uk + s / w * vk;
            v[k] = -w * s * uk + c * vk;
        }
    }
}

/// Right-hand side of the velocity equation beyond the elastic term.
pub fn coupling_force(model: &Model, state: &SimState) -> Result<Field> {
    let p = &model.problem;
    let mut f = p.zeros();
    if model.couplings.memory {
        f.axpy(-1.0, &memory_convolution(p, &state.hist));
    }
    if model.couplings.delay {
        let k = model.coeff.eval(state.t);
        if k != 0.0 {
            f.axpy(-k, &p.apply_b(state.line.delayed(state.step)?));
        }
    }
    if model.couplings.source {
        f.axpy(1.0, &p.eval_source(&state.u).map_err(|e| e.at(state.t))?);
    }
    Ok(f)
}

/// Advances `state` by one step of size `stepper.dt()`.
pub fn step(model: &Model, stepper: &Stepper, state: &mut SimState) -> Result<()> {
    let dt = stepper.dt;
    let half = 0.5 * dt;
    let f_n = match state.force.take() {
        Some(f) => f,
        None => coupling_force(model, state)?,
    };
    let u_old = state.u.clone();
    state.v.axpy(half, &f_n);
    stepper.rotate(&mut state.u, &mut state.v);
    if model.couplings.memory {
        let v_bar = (&state.u - &u_old).scaled(1.0 / dt);
        state.hist.advance(&v_bar, dt);
    }
    state.step += 1;
    state.t = state.step as f64 * dt;
    let f_next = coupling_force(model, state)?;
    state.v.axpy(half, &f_next);
    if !(state.u.is_finite() && state.v.is_finite()) {
        return Err(Error::Divergence { t: state.t });
    }
    state.line.push(state.step, model.problem.apply_b(&state.v))?;
    state.force = Some(f_next);
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    Diverged { t: f64 },
    EnergyPositivityLost { t: f64 },
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::Diverged { .. } => "diverged",
            Termination::EnergyPositivityLost { .. } => "energy_positivity_lost",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub energy: EnergyBreakdown,
    pub norm_u: f64,
    pub cbar: f64,
    pub lb_holds: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub u: Field,
    pub v: Field,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub dt: f64,
    pub sample_stride: usize,
    pub rows: Vec<TraceRow>,
    pub snapshots: Vec<Snapshot>,
    pub termination: Termination,
}

impl Trajectory {
    pub fn energy_trace(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.t, r.energy.total)).collect()
    }

    pub fn norm_trace(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.t, r.norm_u)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub dt: f64,
    pub t_end: f64,
    pub sample_stride: usize,
    pub stop_on_lower_bound_loss: bool,
    pub keep_snapshots: bool,
}

/// Blow-up threshold relative to the initial state norm.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Runs `state` to `settings.t_end`, sampling diagnostics every `sample_stride` steps.
pub fn run(model: &Model, mut state: SimState, settings: &RunSettings) -> Result<Trajectory> {
    let dt = settings.dt;
    if (state.line.dt() - dt).abs() > 1e-12 * dt {
        return Err(Error::Config(format!(
            "step {dt} does not match the delay line step {}",
            state.line.dt()
        )));
    }
    let stride = settings.sample_stride.max(1);
    let stepper = Stepper::new(model, dt);
    let n_steps = (settings.t_end / dt * (1.0 - 1e-12)).ceil() as usize;
    let coeff = model.active_coeff();
    let b = model.b();
    let limit = DIVERGENCE_FACTOR * state_norm(model, &state).max(1.0);

    let mut rows = Vec::new();
    let mut snapshots = Vec::new();
    let mut termination = Termination::Completed;

    let record = |state: &SimState, rows: &mut Vec<TraceRow>, snaps: &mut Vec<Snapshot>| -> Result<bool> {
        let e = energy(model, state)?;
        let lb = energy_lower_bound_check(&e, model, state);
        let norm_u = state_norm(model, state);
        rows.push(TraceRow {
            t: state.t,
            energy: e,
            norm_u,
            cbar: cbar(&coeff, b, model.tau, state.t),
            lb_holds: lb.holds,
        });
        if settings.keep_snapshots {
            snaps.push(Snapshot {
                t: state.t,
                u: state.u.clone(),
                v: state.v.clone(),
            });
        }
        Ok(lb.holds)
    };

    let holds = record(&state, &mut rows, &mut snapshots)?;
    if settings.stop_on_lower_bound_loss && !holds {
        termination = Termination::EnergyPositivityLost { t: 0.0 };
    }
    if termination == Termination::Completed {
        for n in 1..=n_steps {
            match step(model, &stepper, &mut state) {
                Ok(()) => {}
                Err(Error::Divergence { t }) => {
                    termination = Termination::Diverged { t };
                    break;
                }
                Err(e) => return Err(e),
            }
            let norm = state_norm(model, &state);
            if !norm.is_finite() || norm > limit {
                termination = Termination::Diverged { t: state.t };
                break;
            }
            if n % stride == 0 || n == n_steps {
                let holds = record(&state, &mut rows, &mut snapshots)?;
                let finite = rows.last().is_some_and(|r| r.energy.total.is_finite());
                if !finite {
                    rows.pop();
                    termination = Termination::Diverged { t: state.t };
                    break;
                }
                if settings.stop_on_lower_bound_loss && !holds {
                    termination = Termination::EnergyPositivityLost { t: state.t };
                    break;
                }
            }
        }
    }
    Ok(Trajectory {
        dt,
        sample_stride: stride,
        rows,
        snapshots,
        termination,
    })
}
