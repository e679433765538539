//! Delayed feedback `k(t) B B* u_t(t − τ)` and admissibility of `k`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{Field, SpectralProblem};

/// Time-varying delay coefficient `k(t)`, `t ≥ 0`. Signed values are allowed;
/// every estimate uses `|k|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", deny_unknown_fields)]
pub enum DelayCoefficient {
    #[serde(rename = "const")]
    Constant { k0: f64 },
    #[serde(rename = "expdecay")]
    ExponentialDecay { k0: f64, rate: f64 },
    /// `values[0]` on `[0, b_0)`, `values[i]` on `[b_{i-1}, b_i)`, last value after.
    #[serde(rename = "pwc")]
    PiecewiseConstant { breakpoints: Vec<f64>, values: Vec<f64> },
    /// `amplitude` on the first `duty · period` of every period, zero otherwise.
    #[serde(rename = "onoff")]
    OnOff { amplitude: f64, period: f64, duty: f64 },
}

impl DelayCoefficient {
    pub fn zero() -> Self {
        DelayCoefficient::Constant { k0: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match self {
            DelayCoefficient::Constant { k0 } if !k0.is_finite() => bad(format!("k0 = {k0}")),
            DelayCoefficient::ExponentialDecay { k0, rate } => {
                if !k0.is_finite() || !(rate.is_finite() && *rate > 0.0) {
                    return bad(format!("expdecay needs finite k0 and rate > 0, got ({k0}, {rate})"));
                }
                Ok(())
            }
            DelayCoefficient::PiecewiseConstant { breakpoints, values } => {
                if values.len() != breakpoints.len() + 1 {
                    return bad(format!(
                        "pwc needs one more value than breakpoints ({} vs {})",
                        values.len(),
                        breakpoints.len()
                    ));
                }
                if breakpoints.iter().chain(values).any(|x| !x.is_finite())
                    || breakpoints.first().is_some_and(|b| *b <= 0.0)
                    || breakpoints.windows(2).any(|w| w[1] <= w[0])
                {
                    return bad("pwc breakpoints must be positive and strictly increasing".into());
                }
                Ok(())
            }
            DelayCoefficient::OnOff {
                amplitude,
                period,
                duty,
            } => {
                if !amplitude.is_finite()
                    || !(period.is_finite() && *period > 0.0)
                    || !(0.0..=1.0).contains(duty)
                {
                    return bad(format!(
                        "onoff needs period > 0 and duty in [0, 1], got ({amplitude}, {period}, {duty})"
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self {
            DelayCoefficient::Constant { k0 } => *k0,
            DelayCoefficient::ExponentialDecay { k0, rate } => k0 * (-rate * t).exp(),
            DelayCoefficient::PiecewiseConstant { breakpoints, values } => {
                values[breakpoints.partition_point(|b| *b <= t)]
            }
            DelayCoefficient::OnOff {
                amplitude,
                period,
                duty,
            } => {
                if t.rem_euclid(*period) < duty * period {
                    *amplitude
                } else {
                    0.0
                }
            }
        }
    }

    /// `∫_0^t |k(s)| ds`, closed form.
    fn abs_primitive(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            DelayCoefficient::Constant { k0 } => k0.abs() * t,
            DelayCoefficient::ExponentialDecay { k0, rate } => {
                k0.abs() * -(-rate * t).exp_m1() / rate
            }
            DelayCoefficient::PiecewiseConstant { breakpoints, values } => {
                let mut acc = 0.0;
                let mut start = 0.0;
                for (i, &b) in breakpoints.iter().enumerate() {
                    if t <= b {
                        return acc + values[i].abs() * (t - start);
                    }
                    acc += values[i].abs() * (b - start);
                    start = b;
                }
                acc + values.last().unwrap().abs() * (t - start)
            }
            DelayCoefficient::OnOff {
                amplitude,
                period,
                duty,
            } => {
                let on = duty * period;
                let cycles = (t / period).floor();
                let rem = t - cycles * period;
                amplitude.abs() * (cycles * on + rem.min(on))
            }
        }
    }

    /// `∫_a^b |k(s)| ds` with `k = 0` on negative times.
    pub fn abs_integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        self.abs_primitive(b) - self.abs_primitive(a.max(0.0))
    }

    /// Points where `t ↦ ∫_{t−τ}^t |k|` or `t ↦ ∫_0^t |k(s+τ)|` can change slope,
    /// restricted to `[0, horizon]`.
    fn kinks(&self, tau: f64, horizon: f64) -> Vec<f64> {
        let mut pts = vec![0.0, tau];
        let mut switches = Vec::new();
        match self {
            DelayCoefficient::PiecewiseConstant { breakpoints, .. } => {
                switches.extend(breakpoints.iter().copied())
            }
            DelayCoefficient::OnOff { period, duty, .. } => {
                let mut c = 0.0;
                while c <= horizon + 2.0 * tau + period {
                    switches.push(c);
                    switches.push(c + duty * period);
                    c += period;
                }
            }
            _ => {}
        }
        for s in switches {
            for p in [s - tau, s, s + tau] {
                if (0.0..=horizon).contains(&p) {
                    pts.push(p);
                }
            }
        }
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup();
        pts
    }

    /// Asymptotic average of `|k|`.
    fn asymptotic_abs_mean(&self) -> f64 {
        match self {
            DelayCoefficient::Constant { k0 } => k0.abs(),
            DelayCoefficient::ExponentialDecay { .. } => 0.0,
            DelayCoefficient::PiecewiseConstant { values, .. } => values.last().unwrap().abs(),
            DelayCoefficient::OnOff {
                amplitude, duty, ..
            } => amplitude.abs() * duty,
        }
    }

    /// `C* = sup_t ∫_{t−τ}^t |k(s)| ds`.
    pub fn c_star(&self, tau: f64) -> f64 {
        let window = |t: f64| self.abs_integral(t - tau, t);
        match self {
            DelayCoefficient::Constant { k0 } => k0.abs() * tau,
            DelayCoefficient::ExponentialDecay { .. } => window(tau),
            DelayCoefficient::PiecewiseConstant { breakpoints, .. } => {
                let horizon = breakpoints.last().copied().unwrap_or(0.0) + 2.0 * tau;
                let tail = self.asymptotic_abs_mean() * tau;
                self.kinks(tau, horizon)
                    .into_iter()
                    .map(window)
                    .fold(tail, f64::max)
            }
            DelayCoefficient::OnOff { period, .. } => {
                // The window integral is periodic for t ≥ τ.
                let horizon = tau + 2.0 * period;
                self.kinks(tau, horizon).into_iter().map(window).fold(0.0, f64::max)
            }
        }
    }
}

/// Verdict of the growth-budget condition
/// `b² M e^{ωτ} ∫₀^t |k(s+τ)| ds ≤ γ + ω′ t` for all `t ≥ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    pub admissible: bool,
    pub gamma: f64,
    pub omega_prime: f64,
    pub c_star: f64,
    pub reason: Option<String>,
}

/// Smallest `ω′` for which some finite `γ` exists.
pub fn minimal_omega_prime(coeff: &DelayCoefficient, tau: f64, b: f64, m: f64, omega: f64) -> f64 {
    b * b * m * (omega * tau).exp() * coeff.asymptotic_abs_mean()
}

pub fn check_admissibility(
    coeff: &DelayCoefficient,
    tau: f64,
    b: f64,
    m: f64,
    omega: f64,
    omega_prime: f64,
) -> Result<Admissibility> {
    if !(omega_prime >= 0.0 && omega_prime < omega) {
        return Err(Error::Parameter(format!(
            "need 0 <= omega' < omega, got omega' = {omega_prime}, omega = {omega}"
        )));
    }
    if !(b >= 0.0 && m > 0.0 && tau > 0.0) {
        return Err(Error::Parameter(format!(
            "need b >= 0, M > 0, tau > 0, got ({b}, {m}, {tau})"
        )));
    }
    let c_star = coeff.c_star(tau);
    let scale = b * b * m * (omega * tau).exp();
    let budget = |t: f64| scale * coeff.abs_integral(tau, t + tau) - omega_prime * t;
    let slope = scale * coeff.asymptotic_abs_mean();
    // relative slack for the slope comparison
    if slope > omega_prime * (1.0 + 1e-12) + 1e-300 {
        return Ok(Admissibility {
            admissible: false,
            gamma: f64::INFINITY,
            omega_prime,
            c_star,
            reason: Some(format!(
                "asymptotic growth rate {slope} of the delay budget exceeds omega' = {omega_prime}"
            )),
        });
    }
    let gamma = match coeff {
        DelayCoefficient::Constant { .. } => 0.0,
        DelayCoefficient::ExponentialDecay { k0, rate } => {
            let amp = scale * k0.abs() * (-rate * tau).exp();
            if omega_prime == 0.0 {
                amp / rate
            } else {
                // budget'(t) = amp e^{-rate t} − ω′ vanishes at t*
                let t_star = ((amp / omega_prime).ln() / rate).max(0.0);
                budget(t_star).max(0.0)
            }
        }
        DelayCoefficient::PiecewiseConstant { breakpoints, .. } => {
            let horizon = breakpoints.last().copied().unwrap_or(0.0) + tau;
            coeff.kinks(tau, horizon).into_iter().map(budget).fold(0.0, f64::max)
        }
        DelayCoefficient::OnOff { period, .. } => {
            // budget(t + P) − budget(t) = (slope − ω′)P ≤ 0: the first period suffices
            let horizon = 2.0 * period;
            coeff.kinks(tau, horizon).into_iter().map(budget).fold(0.0, f64::max)
        }
    };
    Ok(Admissibility {
        admissible: true,
        gamma,
        omega_prime,
        c_star,
        reason: None,
    })
}

/// Ring of past `B* u_t` samples covering `[t − τ, t]`, with the initial
/// phase `g` on `(−τ, 0)` kept separately.
#[derive(Clone, Debug)]
pub struct DelayLine {
    tau: f64,
    dt: f64,
    m: usize,
    /// `B* g` at times `(i − m) dt`, `i = 0..m`.
    g_phase: Vec<Field>,
    /// `B* u_t` at steps `first_step ..= latest`.
    ring: VecDeque<Field>,
    first_step: usize,
}

impl DelayLine {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of steps per delay.
    pub fn slots(&self) -> usize {
        self.m
    }

    /// Latest pushed step, if any.
    pub fn latest(&self) -> Option<usize> {
        (!self.ring.is_empty()).then(|| self.first_step + self.ring.len() - 1)
    }

    /// Records `B* u_t` at step `n`; steps must arrive in order starting from 0.
    pub fn push(&mut self, step: usize, b_star_v: Field) -> Result<()> {
        let expected = self.latest().map_or(0, |l| l + 1);
        if step != expected {
            return Err(Error::Sequencing(format!("pushed step {step}, expected {expected}")));
        }
        self.ring.push_back(b_star_v);
        if self.ring.len() > self.m + 1 {
            self.ring.pop_front();
            self.first_step += 1;
        }
        Ok(())
    }

    /// `B* u_t` at time `n dt` for any `n ≥ −m` still in memory.
    pub fn sample(&self, step: isize) -> Result<&Field> {
        if step < 0 {
            let i = step + self.m as isize;
            if i < 0 {
                return Err(Error::Sequencing(format!("step {step} precedes the g phase")));
            }
            return Ok(&self.g_phase[i as usize]);
        }
        let step = step as usize;
        match self.latest() {
            Some(latest) if step <= latest && step >= self.first_step => {
                Ok(&self.ring[step - self.first_step])
            }
            Some(latest) if step > latest => Err(Error::Sequencing(format!(
                "read of step {step} ahead of latest push {latest}"
            ))),
            None => Err(Error::Sequencing(format!("read of step {step} before any push"))),
            _ => Err(Error::Sequencing(format!("step {step} already evicted"))),
        }
    }

    /// `B* u_t((n − m) dt)`: the delayed sample needed at step `n`.
    pub fn delayed(&self, step: usize) -> Result<&Field> {
        self.sample(step as isize - self.m as isize)
    }

    /// `(time, B* u_t)` over the window `[t − τ, t]` ending at step `n`.
    pub fn window(&self, step: usize) -> Result<Vec<(f64, &Field)>> {
        let lo = step as isize - self.m as isize;
        (lo..=step as isize)
            .map(|i| Ok((i as f64 * self.dt, self.sample(i)?)))
            .collect()
    }
}

/// Sampler of `g` on `(−τ, 0]`, already a `B*u_t`-type field.
pub type GSampler<'a> = dyn Fn(f64) -> Field + 'a;

/// Steps per delay, or an error when `τ` is not an integer multiple of `dt`.
pub fn delay_steps(tau: f64, dt: f64) -> Result<usize> {
    if !(tau > 0.0 && dt > 0.0) {
        return Err(Error::Config(format!("tau and dt must be positive, got ({tau}, {dt})")));
    }
    let ratio = tau / dt;
    let m = ratio.round();
    if m < 1.0 || (ratio - m).abs() > 1e-12 * m.max(1.0) {
        return Err(Error::Config(format!(
            "tau = {tau} is not an integer multiple of dt = {dt} (ratio {ratio})"
        )));
    }
    Ok(m as usize)
}

/// Largest `dt' ≤ dt` with `τ / dt'` integral.
pub fn adjust_dt(tau: f64, dt: f64) -> f64 {
    let m = (tau / dt * (1.0 - 1e-12)).ceil().max(1.0);
    tau / m
}

pub fn make_delay_line(
    problem: &SpectralProblem,
    g: &GSampler,
    tau: f64,
    dt: f64,
) -> Result<DelayLine> {
    let m = delay_steps(tau, dt)?;
    let g_phase = (0..m)
        .map(|i| problem.apply_b(&g((i as f64 - m as f64) * dt)))
        .collect();
    Ok(DelayLine {
        tau,
        dt,
        m,
        g_phase,
        ring: VecDeque::with_capacity(m + 2),
        first_step: 0,
    })
}

/// `k(t) B (B* u_t(t − τ))` at step `n`.
pub fn delayed_feedback(
    problem: &SpectralProblem,
    line: &DelayLine,
    coeff: &DelayCoefficient,
    step: usize,
) -> Result<Field> {
    let k = coeff.eval(step as f64 * line.dt);
    let stored = line.delayed(step)?;
    if k == 0.0 {
        return Ok(problem.zeros());
    }
    Ok(problem.apply_b(stored).scaled(k))
}
