//! Energy bookkeeping, growth envelopes, semigroup constants, the smallness
//! report and decay fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::delay::{check_admissibility, minimal_omega_prime, Admissibility, DelayCoefficient};
use crate::error::{Error, Result};
use crate::integrator::{initial_state, run, Couplings, InitialData, Model, RunSettings, SimState};
use crate::memory::{HistoryMode, HistorySettings};
use crate::spectral::Field;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub kinetic: f64,
    pub elastic: f64,
    pub source: f64,
    pub delay_window: f64,
    pub memory: f64,
    pub total: f64,
}

/// `½∫_{t−τ}^t |k(s+τ)| ‖B* u_t(s)‖² ds` by the trapezoid rule on the line samples.
fn delay_window_term(model: &Model, state: &SimState) -> Result<f64> {
    if !model.couplings.delay {
        return Ok(0.0);
    }
    let window = state.line.window(state.step)?;
    let dt = state.line.dt();
    let last = window.len() - 1;
    let mut acc = 0.0;
    for (i, (s, f)) in window.iter().enumerate() {
        let w = if i == 0 || i == last { 0.5 } else { 1.0 };
        acc += w * model.coeff.eval(s + model.tau).abs() * model.problem.h_norm_sq(f);
    }
    Ok(0.5 * dt * acc)
}

fn memory_norm_sq(model: &Model, state: &SimState) -> f64 {
    if model.couplings.memory {
        state.hist.memory_norm_sq(&model.problem)
    } else {
        0.0
    }
}

pub fn energy(model: &Model, state: &SimState) -> Result<EnergyBreakdown> {
    let p = &model.problem;
    let kinetic = 0.5 * p.h_norm_sq(&state.v);
    let elastic = 0.5 * (1.0 - model.mu_tilde()) * p.a_half_norm_sq(&state.u);
    let source = -model.psi(&state.u);
    let delay_window = delay_window_term(model, state)?;
    let memory = 0.5 * memory_norm_sq(model, state);
    Ok(EnergyBreakdown {
        kinetic,
        elastic,
        source,
        delay_window,
        memory,
        total: kinetic + elastic + source + delay_window + memory,
    })
}

/// `‖U‖_ℋ` with `‖U‖² = (1−μ̃)‖A^{1/2}u‖² + ‖u_t‖² + ∫μ‖A^{1/2}η‖²`.
pub fn state_norm(model: &Model, state: &SimState) -> f64 {
    let p = &model.problem;
    ((1.0 - model.mu_tilde()) * p.a_half_norm_sq(&state.u)
        + p.h_norm_sq(&state.v)
        + memory_norm_sq(model, state))
    .sqrt()
}

/// `C̄(t) = exp(2b² ∫₀^t (|k(s)| + |k(s+τ)|) ds)`.
pub fn cbar(coeff: &DelayCoefficient, b: f64, tau: f64, t: f64) -> f64 {
    let t = t.max(0.0);
    (2.0 * b * b * (coeff.abs_integral(0.0, t) + coeff.abs_integral(tau, t + tau))).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundCheck {
    /// `E − ¼(‖u_t‖² + (1−μ̃)‖A^{1/2}u‖² + window + memory)`.
    pub margin: f64,
    /// `E − ¼‖U‖²`.
    pub margin_norm: f64,
    pub holds: bool,
}

/// Strict lower bounds `E > ¼(...)` and `E > ¼‖U‖²`; the zero state holds vacuously.
pub fn energy_lower_bound_check(e: &EnergyBreakdown, _model: &Model, _state: &SimState) -> LowerBoundCheck {
    let positive = e.kinetic + e.elastic + e.delay_window + e.memory;
    let margin = e.total - 0.5 * positive;
    let margin_norm = e.total - 0.5 * (e.kinetic + e.elastic + e.memory);
    let vacuous = positive == 0.0 && e.total == 0.0;
    LowerBoundCheck {
        margin,
        margin_norm,
        holds: vacuous || (margin > 0.0 && margin_norm > 0.0),
    }
}

/// Hypotheses that keep the energy coercive along the iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaGating {
    pub threshold: f64,
    /// `h(‖A^{1/2}u₀(0)‖)`.
    pub h_initial: f64,
    pub initial_ok: bool,
    /// `h(2 (1−μ̃)^{-1/2} C̄^{1/2} E(0)^{1/2})`.
    pub h_energy: f64,
    pub energy_ok: bool,
}

pub fn lemma_gating(c_h: f64, sigma: f64, mu_tilde: f64, a_half_u0: f64, e0: f64, cbar_value: f64) -> LemmaGating {
    let h = |r: f64| c_h * r.powf(sigma);
    let threshold = 0.5 * (1.0 - mu_tilde);
    let h_initial = h(a_half_u0);
    let h_energy = h(2.0 / (1.0 - mu_tilde).sqrt() * cbar_value.sqrt() * e0.max(0.0).sqrt());
    LemmaGating {
        threshold,
        h_initial,
        initial_ok: h_initial < threshold,
        h_energy,
        energy_ok: h_energy < threshold,
    }
}

/// Least squares line `y ≈ slope·x + intercept`, with residual RMS.
pub(crate) fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, intercept, rms)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsSettings {
    pub ensemble: usize,
    /// Horizon in units of `1/δ`.
    pub horizon_factor: f64,
    pub dt: f64,
    pub m_safety: f64,
    pub seed: u64,
    pub history_mode: HistoryMode,
}

impl Default for ConstantsSettings {
    fn default() -> Self {
        Self {
            ensemble: 20,
            horizon_factor: 20.0,
            dt: 1e-2,
            m_safety: 1.1,
            seed: 0,
            history_mode: HistoryMode::PronyOde,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemigroupConstants {
    pub m: f64,
    pub omega: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    pub omega_mean: f64,
    pub horizon: f64,
    pub ensemble: usize,
    pub provenance: String,
}

/// One member's unit data: `u₀(−s) = u − α(1 − e^{−s})`, so `η₀(s) = α(1 − e^{−s})`.
struct MemberData {
    u: Field,
    v: Field,
    alpha: Field,
}

fn member_state(model: &Model, d: &MemberData, scale: f64, dt: f64, mode: HistoryMode) -> Result<SimState> {
    let u = d.u.scaled(scale);
    let alpha = d.alpha.scaled(scale);
    let hist = move |s: f64| {
        let mut f = u.clone();
        f.axpy(-(-(-s).exp_m1()), &alpha);
        Ok(f)
    };
    let n = model.problem.n_modes();
    let g = |_t: f64| Field::zeros(n);
    initial_state(
        model,
        &InitialData {
            u0_history: &hist,
            u1: d.v.scaled(scale),
            g: &g,
        },
        dt,
        mode,
        &HistorySettings::default(),
    )
}

/// `(M, ω)` of the undelayed linear dynamics from an ensemble of unit-norm runs.
pub fn estimate_semigroup_constants(model: &Model, settings: &ConstantsSettings) -> Result<SemigroupConstants> {
    if settings.ensemble == 0 {
        return Err(Error::Config("ensemble size must be positive".into()));
    }
    let linear = Model {
        coeff: DelayCoefficient::zero(),
        couplings: Couplings::linear(),
        ..model.clone()
    };
    let delta = linear.kernel.delta();
    if !(delta > 0.0) {
        return Err(Error::Estimation(format!("kernel decay rate {delta} is not positive")));
    }
    let horizon = settings.horizon_factor / delta;
    let dt = settings.dt;
    // the delay line only has to exist; keep τ a multiple of dt
    let linear = Model { tau: dt, ..linear };
    let n = linear.problem.n_modes();
    let n_steps = (horizon / dt).ceil() as usize;
    let stride = (n_steps / 2000).max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let members: Vec<MemberData> = (0..settings.ensemble)
        .map(|_| {
            let mut draw = || Field::from_modal((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
            MemberData {
                u: draw(),
                v: draw(),
                alpha: draw(),
            }
        })
        .collect();

    let results: Vec<Result<(f64, Vec<(f64, f64)>)>> = members
        .par_iter()
        .map(|d| {
            let trial = member_state(&linear, d, 1.0, dt, settings.history_mode)?;
            let norm0 = state_norm(&linear, &trial);
            if !(norm0 > 0.0) {
                return Err(Error::Estimation("degenerate ensemble member".into()));
            }
            let state = member_state(&linear, d, 1.0 / norm0, dt, settings.history_mode)?;
            let tr = run(
                &linear,
                state,
                &RunSettings {
                    dt,
                    t_end: horizon,
                    sample_stride: stride,
                    stop_on_lower_bound_loss: false,
                    keep_snapshots: false,
                },
            )?;
            let trace = tr.norm_trace();
            let tail: Vec<&(f64, f64)> = trace.iter().filter(|(t, _)| *t >= 0.5 * horizon).collect();
            if tail.len() < 2 || tail.iter().any(|(_, x)| !(*x > 0.0)) {
                return Err(Error::Estimation("norm trace unusable for a decay fit".into()));
            }
            let xs: Vec<f64> = tail.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = tail.iter().map(|p| p.1.ln()).collect();
            let (slope, _, _) = linear_fit(&xs, &ys);
            Ok((-slope, trace))
        })
        .collect();
    let mut rates = Vec::with_capacity(results.len());
    let mut traces = Vec::with_capacity(results.len());
    for r in results {
        let (rate, trace) = r?;
        if !(rate > 0.0) {
            return Err(Error::Estimation(format!(
                "ensemble member does not decay (fitted rate {rate})"
            )));
        }
        rates.push(rate);
        traces.push(trace);
    }
    let omega = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let omega_max = rates.iter().copied().fold(0.0, f64::max);
    let omega_mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let sup = traces
        .iter()
        .flatten()
        .map(|(t, x)| x * (omega * t).exp())
        .fold(0.0, f64::max);
    Ok(SemigroupConstants {
        m: settings.m_safety * sup.max(1.0),
        omega,
        omega_min: omega,
        omega_max,
        omega_mean,
        horizon,
        ensemble: settings.ensemble,
        provenance: "empirical-constants".into(),
    })
}

/// Norms of the initial data entering the smallness and decay statements.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DataNorms {
    /// `‖A^{1/2}u₀(0)‖`.
    pub a_half_u0: f64,
    /// `‖U₀‖_ℋ`.
    pub u0_norm: f64,
    /// `∫_{−τ}^0 |k(s+τ)| ‖B* u_t(s)‖² ds`.
    pub delay_sq: f64,
    /// `∫₀^τ e^{ωs} |k(s)| ‖B g(s−τ)‖ ds`.
    pub g_prefactor: f64,
    pub e0: f64,
}

pub fn data_norms(model: &Model, state: &SimState, omega: f64) -> Result<DataNorms> {
    if state.step != 0 {
        return Err(Error::Config("data norms need the initial state".into()));
    }
    let e = energy(model, state)?;
    let dt = state.line.dt();
    let m = state.line.slots() as isize;
    let coeff = model.active_coeff();
    let mut acc = 0.0;
    for i in 0..=m {
        let s = i as f64 * dt;
        let w = if i == 0 || i == m { 0.5 } else { 1.0 };
        let k = coeff.eval(s).abs();
        if k != 0.0 {
            let g = state.line.sample(i - m)?;
            acc += w * (omega * s).exp() * k * model.problem.h_norm(&model.problem.apply_b(g));
        }
    }
    Ok(DataNorms {
        a_half_u0: model.problem.a_half_norm(&state.u),
        u0_norm: state_norm(model, state),
        delay_sq: 2.0 * e.delay_window,
        g_prefactor: dt * acc,
        e0: e.total,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallnessInputs {
    pub m: f64,
    pub omega: f64,
    pub omega_prime: Option<f64>,
    pub tau: f64,
    pub b: f64,
    pub mu_tilde: f64,
    pub sigma: f64,
    pub c_h: f64,
    pub coeff: DelayCoefficient,
    pub data: DataNorms,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub m: f64,
    pub omega: f64,
    pub omega_prime: f64,
    pub gamma: f64,
    pub c_star: f64,
    pub b: f64,
    pub tau: f64,
    pub mu_tilde: f64,
    pub sigma: f64,
    pub c_h: f64,
    pub admissible: bool,
    pub admissibility_note: Option<String>,
    pub n: Option<u64>,
    pub cbar_n_tau: f64,
    pub rho: f64,
    pub rho_lemma: f64,
    pub rho_lipschitz: f64,
    pub c_rho: f64,
    pub l_of_c_rho: f64,
    pub lipschitz_ok: bool,
    /// Certified rate `(ω − ω′)/2`.
    pub predicted_rate: f64,
    /// `ω − ω′ − M L(C_ρ)`.
    pub perturbed_rate: f64,
    pub m_tilde: f64,
    pub data_prefactor: f64,
    pub smallness_lhs: f64,
    pub data_small: bool,
    /// `sqrt(lhs)/ρ`: factor by which the data exceed the smallness ball.
    pub deficit: f64,
    pub gating: LemmaGating,
    pub applicable: bool,
    pub verdict: String,
    pub provenance: String,
    pub coeff: DelayCoefficient,
}

impl TheoryReport {
    pub fn cbar_of(&self, t: f64) -> f64 {
        cbar(&self.coeff, self.b, self.tau, t)
    }

    /// `M̃ (‖U₀‖ + ∫₀^τ e^{ωs}|k(s)|‖g̃(s)‖ ds) e^{−(ω−ω′)t/2}`.
    pub fn decay_envelope(&self, t: f64) -> f64 {
        self.m_tilde * self.data_prefactor * (-self.predicted_rate * t).exp()
    }
}

/// Smallest `N ≥ 1` with `2M²(1+e^{2ωτ}C*)e^{2γ}e^{−(ω−ω′)(N−1)τ} < 1/(1+e^{ωτ}b²C*)`.
pub fn iteration_count(m: f64, omega: f64, omega_prime: f64, tau: f64, gamma: f64, c_star: f64, b: f64) -> Option<u64> {
    let gap = omega - omega_prime;
    if !(gap > 0.0 && gamma.is_finite()) {
        return None;
    }
    let lhs = 2.0 * m * m * (1.0 + (2.0 * omega * tau).exp() * c_star) * (2.0 * gamma).exp();
    let rhs = 1.0 / (1.0 + (omega * tau).exp() * b * b * c_star);
    let x = (lhs / rhs).ln() / (gap * tau);
    if !x.is_finite() {
        return None;
    }
    if x < 0.0 {
        return Some(1);
    }
    Some(2 + x.floor() as u64)
}

pub fn smallness_report(inputs: &SmallnessInputs) -> Result<TheoryReport> {
    let SmallnessInputs {
        m,
        omega,
        tau,
        b,
        mu_tilde,
        sigma,
        c_h,
        ..
    } = *inputs;
    let coeff = &inputs.coeff;
    if !(m >= 1.0 && omega > 0.0) {
        return Err(Error::Parameter(format!("need M >= 1 and omega > 0, got ({m}, {omega})")));
    }
    let floor = minimal_omega_prime(coeff, tau, b, m, omega);
    let omega_prime = inputs.omega_prime.unwrap_or(floor);
    let adm: Admissibility = if omega_prime < omega {
        check_admissibility(coeff, tau, b, m, omega, omega_prime)?
    } else {
        Admissibility {
            admissible: false,
            gamma: f64::INFINITY,
            omega_prime,
            c_star: coeff.c_star(tau),
            reason: Some(format!("omega' = {omega_prime} is not below omega = {omega}")),
        }
    };
    let gamma = adm.gamma;
    let c_star = adm.c_star;
    let n = if adm.admissible {
        iteration_count(m, omega, omega_prime, tau, gamma, c_star, b)
    } else {
        None
    };
    let cbar_n_tau = n.map_or(f64::INFINITY, |n| cbar(coeff, b, tau, n as f64 * tau));
    let threshold = 0.5 * (1.0 - mu_tilde);
    let gap = omega - omega_prime;
    let lip_target = gap / (2.0 * m);
    let (rho_lemma, rho_lipschitz) = if sigma > 0.0 {
        let h_inv = (threshold / c_h).powf(1.0 / sigma);
        let rl = (1.0 - mu_tilde).sqrt() / (2.0 * cbar_n_tau.sqrt()) * h_inv;
        let c_rho_max = (lip_target.max(0.0) / ((sigma + 1.0) * c_h)).powf(1.0 / sigma);
        (rl, c_rho_max / (2.0 * cbar_n_tau.sqrt()))
    } else {
        let ok_h = c_h < threshold;
        let ok_l = c_h < lip_target;
        (
            if ok_h { f64::INFINITY } else { 0.0 },
            if ok_l { f64::INFINITY } else { 0.0 },
        )
    };
    let rho = if n.is_some() {
        rho_lemma.min(0.99 * rho_lipschitz)
    } else {
        0.0
    };
    let c_rho = 2.0 * cbar_n_tau.sqrt() * rho;
    let l_of_c_rho = if rho.is_finite() {
        (sigma + 1.0) * c_h * c_rho.powf(sigma)
    } else {
        (sigma + 1.0) * c_h
    };
    let lipschitz_ok = l_of_c_rho < lip_target;
    let d = &inputs.data;
    let smallness_lhs = d.u0_norm * d.u0_norm + d.delay_sq;
    let data_small = smallness_lhs < rho * rho;
    let deficit = if rho > 0.0 {
        smallness_lhs.sqrt() / rho
    } else {
        f64::INFINITY
    };
    let gating = lemma_gating(c_h, sigma, mu_tilde, d.a_half_u0, d.e0, cbar_n_tau.min(f64::MAX));
    let predicted_rate = 0.5 * gap;
    let perturbed_rate = gap - m * l_of_c_rho;

    let mut problems = Vec::new();
    if !adm.admissible {
        problems.push(adm.reason.clone().unwrap_or_else(|| "coefficient not admissible".into()));
    }
    if n.is_none() {
        problems.push("no finite iteration count".into());
    }
    if !lipschitz_ok {
        problems.push("Lipschitz constant on the C_rho ball too large".into());
    }
    if !data_small {
        problems.push(format!("initial data exceed the smallness ball by a factor {deficit:.4}"));
    }
    if !(predicted_rate > 0.0) {
        problems.push("non-positive predicted rate".into());
    }
    let applicable = problems.is_empty();
    let verdict = if applicable {
        "theory-applicable (empirical-constants)".to_string()
    } else {
        format!("not applicable: {}", problems.join("; "))
    };
    Ok(TheoryReport {
        m,
        omega,
        omega_prime,
        gamma,
        c_star,
        b,
        tau,
        mu_tilde,
        sigma,
        c_h,
        admissible: adm.admissible,
        admissibility_note: adm.reason,
        n,
        cbar_n_tau,
        rho,
        rho_lemma,
        rho_lipschitz,
        c_rho,
        l_of_c_rho,
        lipschitz_ok,
        predicted_rate,
        perturbed_rate,
        m_tilde: m * gamma.exp(),
        data_prefactor: d.u0_norm + d.g_prefactor,
        smallness_lhs,
        data_small,
        deficit,
        gating,
        applicable,
        verdict,
        provenance: "empirical-constants".into(),
        coeff: coeff.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub c: f64,
    pub beta: f64,
    pub residual_rms: f64,
    pub samples: usize,
}

/// `E(t) ≈ C e^{−βt}` by least squares on `ln E` over the second half of the trace.
pub fn fit_decay(trace: &[(f64, f64)]) -> Result<DecayFit> {
    fit_decay_window(trace, 0.5)
}

/// As [`fit_decay`], fitting only samples after `start` (a fraction of the time span).
pub fn fit_decay_window(trace: &[(f64, f64)], start: f64) -> Result<DecayFit> {
    if trace.len() < 10 {
        return Err(Error::FitRefused(format!("need at least 10 samples, got {}", trace.len())));
    }
    let (t0, t1) = (trace[0].0, trace[trace.len() - 1].0);
    let mid = t0 + start * (t1 - t0);
    let window: Vec<&(f64, f64)> = trace.iter().filter(|(t, _)| *t >= mid).collect();
    if window.len() < 2 {
        return Err(Error::FitRefused("fit window holds fewer than 2 samples".into()));
    }
    if let Some((t, e)) = window.iter().find(|(_, e)| !(*e > 0.0)) {
        return Err(Error::FitRefused(format!("energy {e} <= 0 at t = {t}")));
    }
    let xs: Vec<f64> = window.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = window.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept, rms) = linear_fit(&xs, &ys);
    Ok(DecayFit {
        c: intercept.exp(),
        beta: -slope,
        residual_rms: rms,
        samples: window.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaBound {
    pub max_violation: f64,
    pub allowance: f64,
    pub pass: bool,
}

/// `max E(t)/(C̄(t)E(0)) − 1` against `1e-6 + 10 dt²`.
pub fn lemma_bound_check(
    trace: &[(f64, f64)],
    coeff: &DelayCoefficient,
    b: f64,
    tau: f64,
    dt: f64,
) -> Result<LemmaBound> {
    let allowance = 1e-6 + 10.0 * dt * dt;
    let Some(&(_, e0)) = trace.first() else {
        return Err(Error::CheckUnavailable("empty trace".into()));
    };
    if e0 < 0.0 || !e0.is_finite() {
        return Err(Error::CheckUnavailable(format!("E(0) = {e0}")));
    }
    if e0 == 0.0 {
        let zero = trace.iter().all(|(_, e)| *e == 0.0);
        if zero {
            return Ok(LemmaBound {
                max_violation: -1.0,
                allowance,
                pass: true,
            });
        }
        return Err(Error::CheckUnavailable("E(0) = 0 with a nonzero trajectory".into()));
    }
    let max_violation = trace
        .iter()
        .map(|&(t, e)| e / (cbar(coeff, b, tau, t) * e0) - 1.0)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(LemmaBound {
        max_violation,
        allowance,
        pass: max_violation <= allowance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::MemoryKernel;
    use crate::spectral::{ProblemKind, SpectralProblem};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn model(k: usize, couplings: Couplings) -> Model {
        Model {
            problem: SpectralProblem::new(ProblemKind::Wave, PI, k, (0.0, PI), 2.0).unwrap(),
            kernel: MemoryKernel::exponential(0.5, 1.0).unwrap(),
            coeff: DelayCoefficient::zero(),
            tau: 0.1,
            couplings,
        }
    }

    fn state(m: &Model, u: Field, v: Field) -> SimState {
        let hist = move |_s: f64| Ok(u.clone());
        let n = m.problem.n_modes();
        let g = |_t: f64| Field::zeros(n);
        initial_state(
            m,
            &InitialData {
                u0_history: &hist,
                u1: v,
                g: &g,
            },
            0.01,
            HistoryMode::PronyOde,
            &Default::default(),
        )
        .unwrap()
    }

    #[test]
    fn energy_of_sine_profile() {
        let m = model(4, Couplings::default());
        let a = 0.7;
        let s = state(&m, Field::mode(4, 1, a), Field::zeros(4));
        let e = energy(&m, &s).unwrap();
        assert_relative_eq!(e.elastic, 0.25 * a * a * PI / 2.0, max_relative = 1e-12);
        assert_relative_eq!(e.source, -a.powi(4) * 3.0 * PI / 32.0, max_relative = 1e-12);
        assert_eq!(e.kinetic, 0.0);
        assert_eq!(e.memory, 0.0);
        assert_eq!(e.delay_window, 0.0);
        let sum = e.kinetic + e.elastic + e.source + e.delay_window + e.memory;
        assert!((e.total - sum).abs() <= 1e-12 * sum.abs());
    }

    #[test]
    fn kinetic_only() {
        let m = model(4, Couplings::default());
        let s = state(&m, Field::zeros(4), Field::mode(4, 1, 1.0));
        let e = energy(&m, &s).unwrap();
        assert_relative_eq!(e.kinetic, PI / 4.0, max_relative = 1e-12);
        assert_eq!(e.total, e.kinetic);
    }

    #[test]
    fn zero_state_is_vacuous() {
        let m = model(2, Couplings::default());
        let s = state(&m, Field::zeros(2), Field::zeros(2));
        let e = energy(&m, &s).unwrap();
        assert_eq!(e, EnergyBreakdown::default());
        let lb = energy_lower_bound_check(&e, &m, &s);
        assert!(lb.holds);
        assert_eq!(lb.margin, 0.0);
    }

    #[test]
    fn linear_margin_is_half() {
        let m = model(4, Couplings::linear());
        let s = state(&m, Field::mode(4, 2, 0.3), Field::mode(4, 1, -0.2));
        let e = energy(&m, &s).unwrap();
        let lb = energy_lower_bound_check(&e, &m, &s);
        assert!(lb.holds);
        assert_relative_eq!(lb.margin, 0.5 * e.total, max_relative = 1e-12);
    }

    #[test]
    fn cbar_closed_forms() {
        assert_eq!(cbar(&DelayCoefficient::zero(), 1.0, 0.1, 3.0), 1.0);
        let c = DelayCoefficient::Constant { k0: 0.3 };
        assert_relative_eq!(cbar(&c, 1.0, 0.1, 2.0), (4.0f64 * 0.3 * 2.0).exp(), max_relative = 1e-12);
        let e = DelayCoefficient::ExponentialDecay { k0: 1.0, rate: 1.0 };
        let one = 1.0 - (-1.0f64).exp();
        let expect = (2.0 * (one + (-0.1f64).exp() * one)).exp();
        assert_relative_eq!(cbar(&e, 1.0, 0.1, 1.0), expect, max_relative = 1e-12);
    }

    #[test]
    fn fit_exact_exponentials() {
        let tr: Vec<(f64, f64)> = (0..=50).map(|i| i as f64 * 0.1).map(|t| (t, (-2.0 * t).exp())).collect();
        let f = fit_decay(&tr).unwrap();
        assert!((f.beta - 2.0).abs() < 1e-10 && (f.c - 1.0).abs() < 1e-10 && f.residual_rms < 1e-10);
        let tr: Vec<(f64, f64)> = (0..=50).map(|i| i as f64 * 0.1).map(|t| (t, 3.0 * (-0.5 * t).exp())).collect();
        let f = fit_decay(&tr).unwrap();
        assert!((f.beta - 0.5).abs() < 1e-10 && (f.c - 3.0).abs() < 1e-10);
    }

    #[test]
    fn fit_oscillatory_envelope() {
        let tr: Vec<(f64, f64)> = (0..=500)
            .map(|i| i as f64 * 0.01)
            .map(|t| (t, (-t).exp() * (2.0 + (10.0 * t).cos()) / 2.0))
            .collect();
        let f = fit_decay(&tr).unwrap();
        assert!((f.beta - 1.0).abs() < 0.05);
        assert!(f.residual_rms > 0.0);
    }

    #[test]
    fn fit_refusals() {
        let short: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 1.0)).collect();
        assert!(matches!(fit_decay(&short), Err(Error::FitRefused(_))));
        let mut tr: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 1.0)).collect();
        tr[15].1 = -1.0;
        assert!(matches!(fit_decay(&tr), Err(Error::FitRefused(_))));
    }

    #[test]
    fn iteration_count_without_delay() {
        let (m, w, tau) = (1.3, 0.4, 0.1);
        let n = iteration_count(m, w, 0.0, tau, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(n, 1 + ((2.0 * m * m).ln() / (w * tau)).ceil() as u64);
        assert_eq!(iteration_count(m, w, w, tau, 0.0, 0.0, 1.0), None);
    }

    #[test]
    fn zero_data_is_small() {
        let r = smallness_report(&SmallnessInputs {
            m: 1.5,
            omega: 0.2,
            omega_prime: None,
            tau: 0.1,
            b: 1.0,
            mu_tilde: 0.5,
            sigma: 2.0,
            c_h: 1.0,
            coeff: DelayCoefficient::zero(),
            data: DataNorms::default(),
        })
        .unwrap();
        assert!(r.data_small && r.rho > 0.0 && r.applicable);
        assert_eq!(r.gamma, 0.0);
        assert_relative_eq!(r.predicted_rate, 0.1);
    }

    #[test]
    fn lemma_check_cases() {
        let zero: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 0.0)).collect();
        assert!(lemma_bound_check(&zero, &DelayCoefficient::zero(), 1.0, 0.1, 0.01).unwrap().pass);
        let dec: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, (-(i as f64)).exp())).collect();
        let r = lemma_bound_check(&dec, &DelayCoefficient::zero(), 1.0, 0.1, 0.01).unwrap();
        assert!(r.pass && r.max_violation <= 0.0);
        let neg = vec![(0.0, -1.0), (1.0, 0.0)];
        assert!(matches!(
            lemma_bound_check(&neg, &DelayCoefficient::zero(), 1.0, 0.1, 0.01),
            Err(Error::CheckUnavailable(_))
        ));
    }

    #[test]
    fn single_mode_abscissa() {
        // s³ + s² + s + 0.5 for a = 0.5, d = 1, λ = 1
        let mut lo = -1.0;
        let mut hi = 0.0;
        let p = |s: f64| s * s * s + s * s + s + 0.5;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if p(mid) > 0.0 {
                hi = mid
            } else {
                lo = mid
            }
        }
        let real_root = 0.5 * (lo + hi);
        // complex pair: sum of roots is −1
        let abscissa = (-1.0 - real_root) / 2.0;
        let m = Model {
            problem: SpectralProblem::new(ProblemKind::Wave, PI, 1, (0.0, PI), 2.0).unwrap(),
            ..model(1, Couplings::linear())
        };
        let c = estimate_semigroup_constants(&m, &ConstantsSettings { ensemble: 20, ..Default::default() }).unwrap();
        let expect = -real_root.max(abscissa);
        assert!(c.m >= 1.0);
        assert!((c.omega - expect).abs() <= 0.05 * expect, "omega {} vs {}", c.omega, expect);
    }
}
