//! Discretized relative history `η^t(s) = u(t) − u(t−s)`.
//!
//! Two evolution schemes are provided:
//!
//! * [`HistoryMode::PronyOde`] keeps, per mode `k` and exponential term
//!   `a_j e^{-d_j s}`, the first moment `y_kj = ∫ a_j e^{-d_j s} η_k(s) ds` and the
//!   second moment `q_kj = ∫ a_j e^{-d_j s} η_k(s)² ds`. They obey
//!   `y' = -d y + (a/d) u_t` and `q' = -d q + 2 u_t y`, which are integrated
//!   exactly for a velocity held constant over the step.
//! * [`HistoryMode::Transport`] solves the transport equation by
//!   characteristics: a ring of past `u` samples at step resolution makes the
//!   shift `η^{t+dt}(s) = η^t(s−dt) + u(t+dt) − u(t)` exact, and `η` is read off
//!   on a graded `s`-grid whose nodes are multiples of `dt`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::MemoryKernel;
use crate::quad;
use crate::spectral::{Field, SpectralProblem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistoryMode {
    Transport,
    #[serde(rename = "prony")]
    PronyOde,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistorySettings {
    /// Truncate the history where `∫_S^∞ μ ≤ tail_rel · μ̃`.
    pub tail_rel: f64,
    /// Explicit history length; overrides `tail_rel`.
    pub s_max: Option<f64>,
    /// Geometric growth of the `s`-grid spacing.
    pub growth: f64,
    /// Upper bound on the `s`-grid spacing.
    pub max_spacing: f64,
}

impl Default for HistorySettings {
    fn default() -> Self {
        Self {
            tail_rel: 1e-10,
            s_max: None,
            growth: 1.2,
            max_spacing: 0.004,
        }
    }
}

#[derive(Clone, Debug)]
struct PronyState {
    terms: Vec<(f64, f64)>,
    /// `[k][j]` first moments.
    y: Vec<f64>,
    /// `[k][j]` second moments.
    q: Vec<f64>,
}

#[derive(Clone, Debug)]
struct TransportState {
    dt: f64,
    node_steps: Vec<usize>,
    /// `u` at `t − n dt, …, t`; oldest first.
    ring: VecDeque<Vec<f64>>,
    /// Steps since the start. `η^t` has a kink at that age whenever `u₁ ≠ u₀'(0⁻)`.
    elapsed: usize,
    panels: Vec<Panel>,
    /// `μ(j dt)`, `j = 0..=n_max`.
    mu_steps: Vec<f64>,
    /// Per-mode corrections for the panel holding the kink (first and second moments).
    kink: Vec<f64>,
    kink_sq: Vec<f64>,
}

/// One interpolation panel of the node grid and its share of the product weights.
#[derive(Clone, Debug)]
struct Panel {
    first: usize,
    len: usize,
    w: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct HistoryField {
    mode: HistoryMode,
    n_modes: usize,
    s_grid: Vec<f64>,
    weights: Vec<f64>,
    /// `[k][j]`, Transport mode only.
    values: Vec<f64>,
    tail_mass: f64,
    prony: Option<PronyState>,
    transport: Option<TransportState>,
}

/// Initial history: `u₀(−s)` for `s ≥ 0`.
pub type HistorySampler<'a> = dyn Fn(f64) -> Result<Field> + 'a;

fn phi1(x: f64) -> f64 {
    // (1 − e^{−x})/x − e^{−x}
    if x < 1e-3 {
        x * (0.5 - x * (1.0 / 3.0 - x / 8.0))
    } else {
        -(-x).exp_m1() / x - (-x).exp()
    }
}

impl HistoryField {
    pub fn mode(&self) -> HistoryMode {
        self.mode
    }

    pub fn s_grid(&self) -> &[f64] {
        &self.s_grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `η_k(s_j)` (Transport mode); `None` in PronyODE mode.
    pub fn value(&self, k: usize, j: usize) -> Option<f64> {
        (self.mode == HistoryMode::Transport).then(|| self.values[k * self.s_grid.len() + j])
    }

    /// Auxiliary first moments `y_kj` (PronyODE mode).
    pub fn prony_aux(&self, k: usize, j: usize) -> Option<f64> {
        self.prony.as_ref().map(|p| p.y[k * p.terms.len() + j])
    }

    pub fn n_terms(&self) -> usize {
        self.prony.as_ref().map_or(0, |p| p.terms.len())
    }

    /// Largest history age kept explicitly.
    pub fn s_max(&self) -> f64 {
        self.s_grid.last().copied().unwrap_or(0.0)
    }

    /// `∫₀^∞ μ(s) η_k(s)² ds` per mode.
    fn second_moments(&self) -> Vec<f64> {
        match self.mode {
            HistoryMode::PronyOde => {
                let p = self.prony.as_ref().unwrap();
                p.q.chunks_exact(p.terms.len()).map(|row| row.iter().sum()).collect()
            }
            HistoryMode::Transport => {
                let ns = self.s_grid.len();
                self.values
                    .chunks_exact(ns)
                    .map(|row| {
                        row.iter().zip(&self.weights).map(|(v, w)| w * v * v).sum::<f64>()
                            + self.tail_mass * row[ns - 1] * row[ns - 1]
                    })
                    .zip(&self.transport.as_ref().unwrap().kink_sq)
                    .map(|(m, c)| m + c)
                    .collect()
            }
        }
    }

    /// `∫₀^∞ μ(s) ‖A^{1/2} η(s)‖² ds`.
    pub fn memory_norm_sq(&self, problem: &SpectralProblem) -> f64 {
        0.5 * problem.length()
            * self
                .second_moments()
                .iter()
                .zip(problem.eigenvalues())
                .map(|(m, l)| l * m)
                .sum::<f64>()
    }

    /// Advances by one step with the step-averaged velocity `v̄ = (u(t+dt) − u(t))/dt`.
    pub fn advance(&mut self, v_bar: &Field, dt: f64) {
        match self.mode {
            HistoryMode::PronyOde => {
                let p = self.prony.as_mut().unwrap();
                let nj = p.terms.len();
                for (j, &(a, d)) in p.terms.iter().enumerate() {
                    let x = d * dt;
                    let e = (-x).exp();
                    let one_minus_e = -(-x).exp_m1();
                    let c = a / (d * d);
                    for k in 0..self.n_modes {
                        let vk = v_bar[k];
                        let i = k * nj + j;
                        let y0 = p.y[i];
                        p.q[i] = e * p.q[i] + 2.0 * vk * (dt * e * y0 + c * vk * dt * phi1(x));
                        p.y[i] = e * y0 + c * one_minus_e * vk;
                    }
                }
            }
            HistoryMode::Transport => {
                let tr = self.transport.as_mut().unwrap();
                debug_assert!((tr.dt - dt).abs() <= 1e-12 * dt);
                let mut next = tr.ring.pop_front().unwrap();
                let last = tr.ring.back().unwrap();
                for k in 0..self.n_modes {
                    next[k] = last[k] + dt * v_bar[k];
                }
                tr.ring.push_back(next);
                tr.elapsed += 1;
                self.refresh_values();
            }
        }
    }

    fn refresh_values(&mut self) {
        let tr = self.transport.as_ref().unwrap();
        let ns = self.s_grid.len();
        let newest = tr.ring.len() - 1;
        let now = &tr.ring[newest];
        for (j, &steps) in tr.node_steps.iter().enumerate() {
            let past = &tr.ring[newest - steps];
            for k in 0..self.n_modes {
                self.values[k * ns + j] = now[k] - past[k];
            }
        }
        self.refresh_kink();
    }

    /// Quadratic interpolation across the kink loses accuracy, so the panel
    /// containing it is re-integrated at step resolution (the trapezoid rule
    /// keeps second order because the kink sits on a step) and the difference is kept as a correction.
    fn refresh_kink(&mut self) {
        let ns = self.s_grid.len();
        let n_modes = self.n_modes;
        let tr = self.transport.as_mut().unwrap();
        tr.kink.iter_mut().for_each(|x| *x = 0.0);
        tr.kink_sq.iter_mut().for_each(|x| *x = 0.0);
        let e = tr.elapsed;
        let Some(panel) = tr.panels.iter().find(|p| {
            let lo = tr.node_steps[p.first];
            let hi = tr.node_steps[p.first + p.len - 1];
            lo < e && e < hi && (p.len == 3 || hi - lo > 1)
        }) else {
            return;
        };
        let lo = tr.node_steps[panel.first];
        let hi = tr.node_steps[panel.first + panel.len - 1];
        let newest = tr.ring.len() - 1;
        let now = &tr.ring[newest];
        for j in lo..=hi {
            let c = if j == lo || j == hi { 0.5 } else { 1.0 };
            let g = c * tr.dt * tr.mu_steps[j];
            let past = &tr.ring[newest - j];
            for k in 0..n_modes {
                let eta = now[k] - past[k];
                tr.kink[k] += g * eta;
                tr.kink_sq[k] += g * eta * eta;
            }
        }
        for (i, w) in panel.w[..panel.len].iter().enumerate() {
            for k in 0..n_modes {
                let eta = self.values[k * ns + panel.first + i];
                tr.kink[k] -= w * eta;
                tr.kink_sq[k] -= w * eta * eta;
            }
        }
    }
}

/// Builds the history field of `η₀(s) = u₀(0) − u₀(−s)`.
///
/// `dt` fixes the Transport grid (node ages are multiples of `dt`).
pub fn init_history(
    problem: &SpectralProblem,
    kernel: &MemoryKernel,
    u0_history: &HistorySampler,
    mode: HistoryMode,
    dt: f64,
    settings: &HistorySettings,
) -> Result<HistoryField> {
    let n_modes = problem.n_modes();
    let u_now = u0_history(0.0)?;
    if u_now.len() != n_modes {
        return Err(Error::Config(format!(
            "history sampler returned {} modes, expected {n_modes}",
            u_now.len()
        )));
    }
    match mode {
        HistoryMode::PronyOde => {
            let terms = kernel.prony_terms().ok_or_else(|| {
                Error::Config("PronyODE history requires an exponential or Prony kernel".into())
            })?;
            let nj = terms.len();
            let mut y = vec![0.0; n_modes * nj];
            let mut q = vec![0.0; n_modes * nj];
            let d_min = terms.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
            let end = 45.0 / d_min;
            let edges = quad::graded_panels(end, (0.05 / d_min).min(0.05), 1.1, 0.5 / d_min);
            let mut failure = None;
            for w in edges.windows(2) {
                quad::gauss_legendre_8(w[0], w[1], |s, wt| {
                    if failure.is_some() {
                        return;
                    }
                    match u0_history(s) {
                        Ok(past) => {
                            for (j, &(a, d)) in terms.iter().enumerate() {
                                let g = wt * a * (-d * s).exp();
                                for k in 0..n_modes {
                                    let eta = u_now[k] - past[k];
                                    y[k * nj + j] += g * eta;
                                    q[k * nj + j] += g * eta * eta;
                                }
                            }
                        }
                        Err(e) => failure = Some(e),
                    }
                });
            }
            if let Some(e) = failure {
                return Err(e);
            }
            Ok(HistoryField {
                mode,
                n_modes,
                s_grid: Vec::new(),
                weights: Vec::new(),
                values: Vec::new(),
                tail_mass: 0.0,
                prony: Some(PronyState { terms, y, q }),
                transport: None,
            })
        }
        HistoryMode::Transport => {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::Config(format!("dt must be positive, got {dt}")));
            }
            let s_target = settings
                .s_max
                .unwrap_or_else(|| kernel.truncation_length(settings.tail_rel));
            let n_max = ((s_target / dt).ceil() as usize).max(1);
            let node_steps = graded_steps(n_max, dt, settings.growth, settings.max_spacing);
            let s_grid: Vec<f64> = node_steps.iter().map(|&n| n as f64 * dt).collect();
            let panels = product_panels(kernel, &s_grid);
            let mut weights = vec![0.0; s_grid.len()];
            for p in &panels {
                for i in 0..p.len {
                    weights[p.first + i] += p.w[i];
                }
            }
            let mu_steps = (0..=n_max).map(|j| kernel.eval(j as f64 * dt)).collect();
            let s_end = *s_grid.last().unwrap();
            let tail_mass = kernel.tail_mass(s_end)?;
            let mut ring = VecDeque::with_capacity(n_max + 1);
            for i in (0..=n_max).rev() {
                let f = if i == 0 { u_now.clone() } else { u0_history(i as f64 * dt)? };
                ring.push_back(f.into_modal());
            }
            let mut field = HistoryField {
                mode,
                n_modes,
                values: vec![0.0; n_modes * s_grid.len()],
                s_grid,
                weights,
                tail_mass,
                prony: None,
                transport: Some(TransportState {
                    dt,
                    node_steps,
                    ring,
                    elapsed: 0,
                    panels,
                    mu_steps,
                    kink: vec![0.0; n_modes],
                    kink_sq: vec![0.0; n_modes],
                }),
            };
            field.refresh_values();
            Ok(field)
        }
    }
}

/// Node ages (in steps) `0 = n_0 < n_1 < … = n_max`, first spacing one step,
/// then growing geometrically up to `max_spacing`.
fn graded_steps(n_max: usize, dt: f64, growth: f64, max_spacing: f64) -> Vec<usize> {
    let mut steps = vec![0usize];
    let mut pos = 0.0f64;
    let mut h = 1.0f64;
    let cap = (max_spacing / dt).max(1.0);
    loop {
        pos += h;
        h = (h * growth).min(cap);
        let n = (pos.round() as usize).min(n_max);
        if n > *steps.last().unwrap() {
            steps.push(n);
        }
        if n >= n_max {
            break;
        }
    }
    steps
}

/// Product weights `w_j = ∫ μ(s) ℓ_j(s) ds`, where `ℓ_j` is the piecewise-quadratic
/// Lagrange basis on consecutive node pairs (linear on a leftover last interval),
/// kept per panel.
fn product_panels(kernel: &MemoryKernel, s: &[f64]) -> Vec<Panel> {
    let n = s.len();
    let mut panels = Vec::with_capacity(n / 2 + 1);
    let mut i = 0;
    while i + 2 < n {
        let (a, b, c) = (s[i], s[i + 1], s[i + 2]);
        let mut w = [0.0; 3];
        for (lo, hi) in [(a, b), (b, c)] {
            quad::gauss_legendre_8(lo, hi, |x, wt| {
                let m = wt * kernel.eval(x);
                w[0] += m * (x - b) * (x - c) / ((a - b) * (a - c));
                w[1] += m * (x - a) * (x - c) / ((b - a) * (b - c));
                w[2] += m * (x - a) * (x - b) / ((c - a) * (c - b));
            });
        }
        panels.push(Panel { first: i, len: 3, w });
        i += 2;
    }
    if i + 1 < n {
        let (a, b) = (s[i], s[i + 1]);
        let mut w = [0.0; 3];
        quad::gauss_legendre_8(a, b, |x, wt| {
            let m = wt * kernel.eval(x);
            w[0] += m * (b - x) / (b - a);
            w[1] += m * (x - a) / (b - a);
        });
        panels.push(Panel { first: i, len: 2, w });
    }
    panels
}

/// `m_k = λ_k ∫₀^∞ μ(s) η_k(s) ds`.
pub fn memory_convolution(problem: &SpectralProblem, hist: &HistoryField) -> Field {
    let lambdas = problem.eigenvalues();
    let out = match hist.mode {
        HistoryMode::PronyOde => {
            let p = hist.prony.as_ref().unwrap();
            p.y.chunks_exact(p.terms.len())
                .zip(lambdas)
                .map(|(row, l)| l * row.iter().sum::<f64>())
                .collect()
        }
        HistoryMode::Transport => {
            let ns = hist.s_grid.len();
            hist.values
                .chunks_exact(ns)
                .zip(lambdas)
                .map(|(row, l)| {
                    l * (row.iter().zip(&hist.weights).map(|(v, w)| w * v).sum::<f64>()
                        + hist.tail_mass * row[ns - 1])
                })
                .zip(&hist.transport.as_ref().unwrap().kink)
                .zip(lambdas)
                .map(|((m, c), l)| m + l * c)
                .collect()
        }
    };
    Field::from_modal(out)
}

/// Advances `hist` by `dt` given the step-averaged velocity.
pub fn advance_history(hist: &mut HistoryField, v_bar: &Field, dt: f64) {
    hist.advance(v_bar, dt)
}

/// Brute-force reference for [`memory_convolution`]: trapezoid in `s` at the
/// step resolution over the stored trajectory `u(0), u(dt), …`, continued
/// into the initial history, plus a constant-extrapolation tail.
pub fn oracle_convolution(
    problem: &SpectralProblem,
    kernel: &MemoryKernel,
    trajectory: &[Field],
    dt: f64,
    u0_history: &HistorySampler,
    step: usize,
) -> Result<Field> {
    if trajectory.len() <= step {
        return Err(Error::OracleUnavailable(format!(
            "trajectory holds {} states, step {step} requested",
            trajectory.len()
        )));
    }
    let t = step as f64 * dt;
    let k = problem.n_modes();
    let now = &trajectory[step];
    let s_end = t + kernel.truncation_length(1e-14);
    let n_end = (s_end / dt).ceil() as usize;
    let mut acc = vec![0.0; k];
    let mut last_eta = vec![0.0; k];
    for i in 0..=n_end {
        let s = i as f64 * dt;
        let w = if i == 0 || i == n_end { 0.5 * dt } else { dt } * kernel.eval(s);
        let past = if i <= step {
            trajectory[step - i].clone()
        } else {
            u0_history(s - t)?
        };
        for m in 0..k {
            last_eta[m] = now[m] - past[m];
            acc[m] += w * last_eta[m];
        }
    }
    let tail = kernel.tail_mass(n_end as f64 * dt).unwrap_or(0.0);
    Ok(Field::from_modal(
        acc.iter()
            .zip(&last_eta)
            .zip(problem.eigenvalues())
            .map(|((a, e), l)| l * (a + tail * e))
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::ProblemKind;
    use std::f64::consts::PI;

    fn problem(k: usize) -> SpectralProblem {
        SpectralProblem::new(ProblemKind::Wave, PI, k, (0.0, PI), 2.0).unwrap()
    }

    fn kernel() -> MemoryKernel {
        MemoryKernel::exponential(0.5, 1.0).unwrap()
    }

    #[test]
    fn constant_history_gives_zero_eta() {
        let p = problem(3);
        let w = Field::from_modal(vec![0.3, -0.1, 0.2]);
        let sampler = |_s: f64| Ok(w.clone());
        for mode in [HistoryMode::PronyOde, HistoryMode::Transport] {
            let h = init_history(&p, &kernel(), &sampler, mode, 0.01, &Default::default()).unwrap();
            assert!(memory_convolution(&p, &h).max_abs() < 1e-15);
            assert!(h.memory_norm_sq(&p) < 1e-28);
        }
    }

    #[test]
    fn ramp_history_values_and_moments() {
        let p = problem(2);
        // u₀(t) = (1 + t) sin x  ⇒  η₀(s) = s sin x
        let sampler = |s: f64| Ok(Field::mode(2, 1, 1.0 - s));
        let dt = 0.01;
        let h = init_history(&p, &kernel(), &sampler, HistoryMode::Transport, dt, &Default::default())
            .unwrap();
        for (j, &s) in h.s_grid().iter().enumerate().take(50) {
            assert!((h.value(0, j).unwrap() - s).abs() < 1e-12);
            assert_eq!(h.value(1, j).unwrap(), 0.0);
        }
        let h = init_history(&p, &kernel(), &sampler, HistoryMode::PronyOde, dt, &Default::default())
            .unwrap();
        assert!((h.prony_aux(0, 0).unwrap() - 0.5).abs() < 1e-12);
        // m_1 = λ_1 ∫ 0.5 e^{-s} s ds = 0.5
        assert!((memory_convolution(&p, &h)[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn graded_steps_shape() {
        let s = graded_steps(23_000, 1e-3, 1.2, 0.004);
        assert_eq!(&s[..3], &[0, 1, 2]);
        assert_eq!(*s.last().unwrap(), 23_000);
        assert!(s.windows(2).all(|w| w[1] > w[0] && w[1] - w[0] <= 4));
    }

    #[test]
    fn prony_single_term_closed_form() {
        let p = problem(1);
        let sampler = |_s: f64| Ok(Field::zeros(1));
        let mut h =
            init_history(&p, &kernel(), &sampler, HistoryMode::PronyOde, 0.01, &Default::default())
                .unwrap();
        let v = Field::from_modal(vec![1.0]);
        for _ in 0..100 {
            h.advance(&v, 0.01);
        }
        let expect = 0.5 * (1.0 - (-1.0f64).exp());
        assert!((h.prony_aux(0, 0).unwrap() - expect).abs() < 1e-13);
    }

    #[test]
    fn zero_velocity_keeps_zero_history() {
        let p = problem(2);
        let sampler = |_s: f64| Ok(Field::zeros(2));
        for mode in [HistoryMode::PronyOde, HistoryMode::Transport] {
            let mut h = init_history(&p, &kernel(), &sampler, mode, 0.05, &Default::default()).unwrap();
            for _ in 0..40 {
                h.advance(&Field::zeros(2), 0.05);
            }
            assert_eq!(memory_convolution(&p, &h).max_abs(), 0.0);
        }
    }

    #[test]
    fn transport_tracks_u_history() {
        let p = problem(1);
        let sampler = |s: f64| Ok(Field::mode(1, 1, (-s).cos()));
        let dt = 0.01;
        let mut h = init_history(&p, &kernel(), &sampler, HistoryMode::Transport, dt, &Default::default())
            .unwrap();
        let u = |t: f64| t.cos();
        let n = 250;
        for i in 0..n {
            let vb = (u((i + 1) as f64 * dt) - u(i as f64 * dt)) / dt;
            h.advance(&Field::from_modal(vec![vb]), dt);
        }
        let t = n as f64 * dt;
        for (j, &s) in h.s_grid().iter().enumerate() {
            assert!((h.value(0, j).unwrap() - (u(t) - u(t - s))).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_needs_trajectory() {
        let p = problem(1);
        let sampler = |_s: f64| Ok(Field::zeros(1));
        let r = oracle_convolution(&p, &kernel(), &[Field::zeros(1)], 0.1, &sampler, 3);
        assert!(matches!(r, Err(Error::OracleUnavailable(_))));
    }

    #[test]
    fn oracle_at_zero_matches_initial_history() {
        let p = problem(2);
        let sampler = |s: f64| Ok(Field::from_modal(vec![1.0 - s, 0.2 * (-s).exp()]));
        let h = init_history(&p, &kernel(), &sampler, HistoryMode::PronyOde, 1e-3, &Default::default())
            .unwrap();
        let m = memory_convolution(&p, &h);
        let o = oracle_convolution(&p, &kernel(), &[sampler(0.0).unwrap()], 1e-3, &sampler, 0).unwrap();
        for k in 0..2 {
            assert!((m[k] - o[k]).abs() < 1e-6 * m.max_abs(), "{m:?} {o:?}");
        }
    }
}
