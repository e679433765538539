//! Memory kernels `μ(s)`, their derived constants and hypothesis checks.
//!
//! A kernel is usable for simulation when it is regular and integrable,
//! positive at the origin, has total mass `μ̃ < 1`, and decays at least
//! exponentially: `μ'(s) ≤ -δ μ(s)` for some `δ > 0`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampled kernel `(s, μ(s), μ'(s))` on a strictly increasing grid starting at `s = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelTable {
    s: Vec<f64>,
    mu: Vec<f64>,
    dmu: Vec<f64>,
}

impl KernelTable {
    pub fn new(s: Vec<f64>, mu: Vec<f64>, dmu: Vec<f64>) -> Result<Self> {
        if s.len() < 2 || s.len() != mu.len() || s.len() != dmu.len() {
            return Err(Error::MalformedInput(format!(
                "kernel table needs at least two rows of equal length (s: {}, mu: {}, dmu: {})",
                s.len(),
                mu.len(),
                dmu.len()
            )));
        }
        if s.iter().chain(&mu).chain(&dmu).any(|x| !x.is_finite()) {
            return Err(Error::MalformedInput("kernel table contains non-finite values".into()));
        }
        if s[0] != 0.0 {
            return Err(Error::MalformedInput(format!(
                "kernel table must start at s = 0, found s = {}",
                s[0]
            )));
        }
        if let Some(i) = s.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::MalformedInput(format!(
                "kernel table s-grid is not strictly increasing at row {}",
                i + 1
            )));
        }
        if let Some(i) = mu.iter().position(|&m| m < 0.0) {
            return Err(Error::MalformedInput(format!("negative kernel value at row {i}")));
        }
        Ok(Self { s, mu, dmu })
    }

    /// Reads a CSV with header `s,mu,dmu`.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().unwrap_or_default();
        let cols: Vec<_> = header.split(',').map(str::trim).collect();
        if cols != ["s", "mu", "dmu"] {
            return Err(Error::MalformedInput(format!(
                "{}: expected header \"s,mu,dmu\", found {header:?}",
                path.display()
            )));
        }
        let (mut s, mut mu, mut dmu) = (Vec::new(), Vec::new(), Vec::new());
        for (lineno, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| {
                    Error::MalformedInput(format!("{}: line {}: {e}", path.display(), lineno + 2))
                })?;
            if vals.len() != 3 {
                return Err(Error::MalformedInput(format!(
                    "{}: line {}: expected 3 columns",
                    path.display(),
                    lineno + 2
                )));
            }
            s.push(vals[0]);
            mu.push(vals[1]);
            dmu.push(vals[2]);
        }
        Self::new(s, mu, dmu)
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn last_s(&self) -> f64 {
        *self.s.last().unwrap()
    }

    /// Exponential rate fitted through the last two samples; `None` when the
    /// table does not decay there (the tail is then not integrable).
    fn tail_rate(&self) -> Option<f64> {
        let n = self.s.len();
        let (m1, m2) = (self.mu[n - 2], self.mu[n - 1]);
        if m2 == 0.0 {
            return Some(f64::INFINITY);
        }
        let r = (m1 / m2).ln() / (self.s[n - 1] - self.s[n - 2]);
        (r.is_finite() && r > 0.0).then_some(r)
    }

    fn extrapolated_tail(&self) -> f64 {
        let last = *self.mu.last().unwrap();
        match self.tail_rate() {
            Some(r) if r.is_infinite() => 0.0,
            Some(r) => last / r,
            None => f64::INFINITY,
        }
    }

    fn segment(&self, s: f64) -> usize {
        match self.s.binary_search_by(|x| x.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.s.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.s.len() - 2),
        }
    }

    fn interp(&self, values: &[f64], s: f64) -> f64 {
        let i = self.segment(s);
        let (s0, s1) = (self.s[i], self.s[i + 1]);
        let w = (s - s0) / (s1 - s0);
        values[i] * (1.0 - w) + values[i + 1] * w
    }

    fn eval(&self, s: f64) -> f64 {
        let last = self.last_s();
        if s <= last {
            return self.interp(&self.mu, s.max(0.0));
        }
        let m = *self.mu.last().unwrap();
        match self.tail_rate() {
            Some(r) if r.is_infinite() => 0.0,
            Some(r) => m * (-r * (s - last)).exp(),
            None => m,
        }
    }

    fn derivative(&self, s: f64) -> f64 {
        let last = self.last_s();
        if s <= last {
            return self.interp(&self.dmu, s.max(0.0));
        }
        match self.tail_rate() {
            Some(r) if r.is_infinite() => 0.0,
            Some(r) => -r * self.eval(s),
            None => 0.0,
        }
    }

    /// Trapezoid integral of the piecewise-linear interpolant on `[from, last]`.
    fn trapezoid_from(&self, from: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.s.len() - 1 {
            let (a, b) = (self.s[i], self.s[i + 1]);
            if b <= from {
                continue;
            }
            let lo = a.max(from);
            let (ma, mb) = (self.eval(lo), self.mu[i + 1]);
            acc += 0.5 * (b - lo) * (ma + mb);
        }
        acc
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum KernelForm {
    SingleExponential { a: f64, d: f64 },
    PronySum { terms: Vec<(f64, f64)> },
    Tabulated(KernelTable),
}

/// A memory kernel together with its derived constants `μ₀`, `μ̃` and `δ`.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryKernel {
    form: KernelForm,
    mu0: f64,
    mu_tilde: f64,
    delta: f64,
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::MalformedInput(format!("{name} must be finite and positive, got {x}")))
    }
}

impl MemoryKernel {
    /// `μ(s) = a e^{-d s}`.
    pub fn exponential(a: f64, d: f64) -> Result<Self> {
        check_positive("a", a)?;
        check_positive("d", d)?;
        Ok(Self {
            form: KernelForm::SingleExponential { a, d },
            mu0: a,
            mu_tilde: a / d,
            delta: d,
        })
    }

    /// `μ(s) = Σ_j a_j e^{-d_j s}`.
    pub fn prony(terms: Vec<(f64, f64)>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::MalformedInput("Prony kernel needs at least one term".into()));
        }
        for &(a, d) in &terms {
            check_positive("a_j", a)?;
            check_positive("d_j", d)?;
        }
        let mu0 = terms.iter().map(|t| t.0).sum();
        let mu_tilde = terms.iter().map(|t| t.0 / t.1).sum();
        let delta = terms.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
        Ok(Self {
            form: KernelForm::PronySum { terms },
            mu0,
            mu_tilde,
            delta,
        })
    }

    pub fn tabulated(table: KernelTable) -> Self {
        let mu0 = table.mu[0];
        let mu_tilde = table.trapezoid_from(0.0) + table.extrapolated_tail();
        let delta = table
            .mu
            .iter()
            .zip(&table.dmu)
            .filter(|(m, _)| **m > 0.0)
            .map(|(m, dm)| -dm / m)
            .fold(f64::INFINITY, f64::min)
            .max(0.0);
        let delta = if delta.is_finite() { delta } else { 0.0 };
        Self {
            form: KernelForm::Tabulated(table),
            mu0,
            mu_tilde,
            delta,
        }
    }

    pub fn form(&self) -> &KernelForm {
        &self.form
    }

    pub fn mu0(&self) -> f64 {
        self.mu0
    }

    pub fn mu_tilde(&self) -> f64 {
        self.mu_tilde
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Exponential terms `(a_j, d_j)` when the kernel is a finite sum of exponentials.
    pub fn prony_terms(&self) -> Option<Vec<(f64, f64)>> {
        match &self.form {
            KernelForm::SingleExponential { a, d } => Some(vec![(*a, *d)]),
            KernelForm::PronySum { terms } => Some(terms.clone()),
            KernelForm::Tabulated(_) => None,
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        match &self.form {
            KernelForm::SingleExponential { a, d } => a * (-d * s).exp(),
            KernelForm::PronySum { terms } => terms.iter().map(|(a, d)| a * (-d * s).exp()).sum(),
            KernelForm::Tabulated(t) => t.eval(s),
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        match &self.form {
            KernelForm::SingleExponential { a, d } => -a * d * (-d * s).exp(),
            KernelForm::PronySum { terms } => {
                terms.iter().map(|(a, d)| -a * d * (-d * s).exp()).sum()
            }
            KernelForm::Tabulated(t) => t.derivative(s),
        }
    }

    /// `∫_S^∞ μ(s) ds`.
    pub fn tail_mass(&self, from: f64) -> Result<f64> {
        let from = from.max(0.0);
        match &self.form {
            KernelForm::SingleExponential { a, d } => Ok(a / d * (-d * from).exp()),
            KernelForm::PronySum { terms } => {
                Ok(terms.iter().map(|(a, d)| a / d * (-d * from).exp()).sum())
            }
            KernelForm::Tabulated(t) => {
                if from > t.last_s() {
                    return Err(Error::Extrapolation {
                        s: from,
                        last: t.last_s(),
                    });
                }
                Ok(t.trapezoid_from(from) + t.extrapolated_tail())
            }
        }
    }

    /// Smallest history length `S` (up to a bisection tolerance) with
    /// `∫_S^∞ μ ≤ rel · μ̃`. Tabulated kernels are capped at their last sample.
    pub fn truncation_length(&self, rel: f64) -> f64 {
        let target = rel * self.mu_tilde;
        let cap = match &self.form {
            KernelForm::Tabulated(t) => t.last_s(),
            _ => f64::INFINITY,
        };
        let mass = |s: f64| self.tail_mass(s.min(cap)).unwrap_or(0.0);
        if mass(cap.min(1e6)) > target {
            return cap;
        }
        let mut hi = 1.0f64;
        while hi < cap && mass(hi) > target {
            hi *= 2.0;
        }
        let hi = hi.min(cap);
        let mut lo = 0.0;
        let mut hi = hi;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mass(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

/// Outcome of checking hypotheses (i)–(iv) on a kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub mu0: f64,
    pub mu_tilde: f64,
    pub delta: f64,
    /// (i) `μ ∈ C¹ ∩ L¹`.
    pub regular_integrable: bool,
    /// (ii) `μ(0) > 0`.
    pub positive_at_origin: bool,
    /// (iii) `∫μ < 1`.
    pub mass_below_one: bool,
    /// (iv) `μ' ≤ -δ μ` with `δ > 0`.
    pub exponential_decay: bool,
    pub usable: bool,
}

impl KernelReport {
    /// Labels of the failing hypotheses, e.g. `["(iii)"]`.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.regular_integrable {
            out.push("(i)");
        }
        if !self.positive_at_origin {
            out.push("(ii)");
        }
        if !self.mass_below_one {
            out.push("(iii)");
        }
        if !self.exponential_decay {
            out.push("(iv)");
        }
        out
    }
}

pub fn validate_kernel(kernel: &MemoryKernel) -> KernelReport {
    let regular_integrable = kernel.mu_tilde.is_finite()
        && match &kernel.form {
            KernelForm::Tabulated(t) => t.tail_rate().is_some(),
            _ => true,
        };
    let positive_at_origin = kernel.mu0 > 0.0;
    let mass_below_one = kernel.mu_tilde.is_finite() && kernel.mu_tilde > 0.0 && kernel.mu_tilde < 1.0;
    let exponential_decay = kernel.delta > 0.0;
    KernelReport {
        mu0: kernel.mu0,
        mu_tilde: kernel.mu_tilde,
        delta: kernel.delta,
        regular_integrable,
        positive_at_origin,
        mass_below_one,
        exponential_decay,
        usable: regular_integrable && positive_at_origin && mass_below_one && exponential_decay,
    }
}

/// Free function form of [`MemoryKernel::tail_mass`].
pub fn kernel_tail_mass(kernel: &MemoryKernel, from: f64) -> Result<f64> {
    kernel.tail_mass(from)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_of(f: impl Fn(f64) -> (f64, f64), end: f64, n: usize) -> KernelTable {
        let s: Vec<f64> = (0..=n).map(|i| end * i as f64 / n as f64).collect();
        let (mu, dmu) = s.iter().map(|&x| f(x)).unzip();
        KernelTable::new(s, mu, dmu).unwrap()
    }

    #[test]
    fn single_exponential_constants() {
        let k = MemoryKernel::exponential(0.5, 1.0).unwrap();
        let r = validate_kernel(&k);
        assert_eq!((r.mu0, r.mu_tilde, r.delta), (0.5, 0.5, 1.0));
        assert!(r.usable);
    }

    #[test]
    fn heavy_exponential_fails_mass() {
        let r = validate_kernel(&MemoryKernel::exponential(2.0, 1.0).unwrap());
        assert_eq!(r.mu_tilde, 2.0);
        assert!(!r.mass_below_one);
        assert!(!r.usable);
        assert_eq!(r.failures(), vec!["(iii)"]);
    }

    #[test]
    fn flat_start_fails_decay() {
        let t = table_of(|s| ((1.0 + s) * (-s).exp() * 0.3, -s * (-s).exp() * 0.3), 40.0, 4000);
        let r = validate_kernel(&MemoryKernel::tabulated(t));
        assert!(!r.exponential_decay);
        assert_eq!(r.delta, 0.0);
        assert!(r.mass_below_one);
        assert!(!r.usable);
    }

    #[test]
    fn prony_constants() {
        let k = MemoryKernel::prony(vec![(0.2, 1.0), (0.3, 3.0)]).unwrap();
        assert!((k.mu_tilde() - 0.3).abs() < 1e-15);
        assert_eq!(k.delta(), 1.0);
        assert_eq!(k.mu0(), 0.5);
    }

    #[test]
    fn tail_mass_closed_forms() {
        let k = MemoryKernel::exponential(0.5, 1.0).unwrap();
        assert!((k.tail_mass(0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((k.tail_mass(2f64.ln()).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn tabulated_tail_beyond_range_is_an_error() {
        let t = table_of(|s| (0.5 * (-s).exp(), -0.5 * (-s).exp()), 10.0, 100);
        let k = MemoryKernel::tabulated(t);
        assert!(matches!(k.tail_mass(11.0), Err(Error::Extrapolation { .. })));
        assert!(k.tail_mass(10.0).is_ok());
    }

    #[test]
    fn tabulated_exponential_matches_analytic() {
        let t = table_of(|s| (0.5 * (-s).exp(), -0.5 * (-s).exp()), 30.0, 30_000);
        let k = MemoryKernel::tabulated(t);
        let r = validate_kernel(&k);
        assert!(r.usable);
        assert!((r.mu_tilde - 0.5).abs() < 1e-6);
        assert!((r.delta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_monotone_grid_is_malformed() {
        let e = KernelTable::new(vec![0.0, 2.0, 1.0], vec![1.0; 3], vec![-1.0; 3]);
        assert!(matches!(e, Err(Error::MalformedInput(_))));
    }

    #[test]
    fn non_decaying_table_fails_integrability() {
        let t = table_of(|_| (0.1, 0.0), 5.0, 10);
        let r = validate_kernel(&MemoryKernel::tabulated(t));
        assert!(!r.regular_integrable);
        assert!(!r.mass_below_one);
    }

    #[test]
    fn truncation_length_meets_target() {
        let k = MemoryKernel::prony(vec![(1.0, 1.0), (1.0, 2.0)]).unwrap();
        let s = k.truncation_length(1e-10);
        assert!(k.tail_mass(s).unwrap() <= 1e-10 * k.mu_tilde() * (1.0 + 1e-9));
        assert!(k.tail_mass(0.99 * s).unwrap() > 1e-10 * k.mu_tilde());
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(MemoryKernel::exponential(-1.0, 1.0).is_err());
        assert!(MemoryKernel::exponential(1.0, f64::NAN).is_err());
        assert!(MemoryKernel::prony(vec![]).is_err());
    }
}
