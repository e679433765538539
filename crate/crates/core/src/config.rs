//! Run configuration (TOML) and named initial-data profiles.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::delay::DelayCoefficient;
use crate::error::{Error, Result};
use crate::kernels::{KernelTable, MemoryKernel};
use crate::memory::{HistoryMode, HistorySettings};
use crate::spectral::{bump, Field, ProblemKind, SpectralProblem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemConfig,
    pub kernel: KernelConfig,
    #[serde(default)]
    pub delay: DelayConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

fn default_length() -> f64 {
    PI
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    #[serde(default = "default_length")]
    pub length: f64,
    pub modes: usize,
    /// Collocation points; defaults to `4 · modes`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    /// Feedback region `[o1, o2]`; defaults to the whole interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<[f64; 2]>,
    pub sigma: f64,
}

impl ProblemConfig {
    pub fn build(&self) -> Result<SpectralProblem> {
        let [o1, o2] = self.feedback.unwrap_or([0.0, self.length]);
        SpectralProblem::with_grid(
            self.kind,
            self.length,
            self.modes,
            self.grid.unwrap_or(4 * self.modes),
            (o1, o2),
            self.sigma,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelConfig {
    /// `μ(s) = a e^{−ds}`.
    Exp { a: f64, d: f64 },
    /// `μ(s) = Σ a_j e^{−d_j s}` with `terms = [[a, d], ...]`.
    Prony { terms: Vec<[f64; 2]> },
    /// CSV with header `s,mu,dmu`; relative paths resolve against the config file.
    Table { path: PathBuf },
}

impl KernelConfig {
    pub fn build(&self) -> Result<MemoryKernel> {
        match self {
            KernelConfig::Exp { a, d } => MemoryKernel::exponential(*a, *d),
            KernelConfig::Prony { terms } => MemoryKernel::prony(terms.iter().map(|t| (t[0], t[1])).collect()),
            KernelConfig::Table { path } => Ok(MemoryKernel::tabulated(KernelTable::from_csv(path)?)),
        }
    }
}

/// A spatial field.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Profile {
    #[default]
    Zero,
    /// `amplitude · sin(kπx/L)`.
    Mode { k: usize, amplitude: f64 },
    /// `amplitude · cos²(π(x − center)/(2 width))` on `|x − center| < width`.
    Bump { center: f64, width: f64, amplitude: f64 },
    /// Sine coefficients, mode 1 first; missing modes are zero.
    Modal { coefficients: Vec<f64> },
    /// CSV with header `x,value`, linearly interpolated and projected.
    Csv { path: PathBuf },
}

fn read_xy_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<_> = lines.next().unwrap_or_default().split(',').map(str::trim).collect();
    if header != ["x", "value"] {
        return Err(Error::MalformedInput(format!(
            "{}: expected header \"x,value\"",
            path.display()
        )));
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (i, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::MalformedInput(format!("{}: line {}: {e}", path.display(), i + 2)))
        };
        if parts.len() != 2 {
            return Err(Error::MalformedInput(format!(
                "{}: line {}: expected 2 columns",
                path.display(),
                i + 2
            )));
        }
        xs.push(parse(parts[0])?);
        ys.push(parse(parts[1])?);
    }
    if xs.len() < 2 || xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::MalformedInput(format!(
            "{}: need at least 2 rows with increasing x",
            path.display()
        )));
    }
    Ok((xs, ys))
}

impl Profile {
    pub fn field(&self, problem: &SpectralProblem) -> Result<Field> {
        let n = problem.n_modes();
        match self {
            Profile::Zero => Ok(Field::zeros(n)),
            Profile::Mode { k, amplitude } => {
                if *k == 0 || *k > n {
                    return Err(Error::Config(format!("mode index {k} outside 1..={n}")));
                }
                Ok(Field::mode(n, *k, *amplitude))
            }
            Profile::Bump {
                center,
                width,
                amplitude,
            } => {
                if !(*width > 0.0) {
                    return Err(Error::Config(format!("bump width must be positive, got {width}")));
                }
                Ok(problem.project(|x| bump(x, *center, *width, *amplitude)))
            }
            Profile::Modal { coefficients } => {
                if coefficients.len() > n {
                    return Err(Error::Config(format!(
                        "{} modal coefficients for {n} modes",
                        coefficients.len()
                    )));
                }
                let mut c = coefficients.clone();
                c.resize(n, 0.0);
                Ok(Field::from_modal(c))
            }
            Profile::Csv { path } => {
                let (xs, ys) = read_xy_csv(path)?;
                Ok(problem.project(|x| {
                    if x < xs[0] || x > xs[xs.len() - 1] {
                        return 0.0;
                    }
                    let i = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
                    let w = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
                    ys[i - 1] + w * (ys[i] - ys[i - 1])
                }))
            }
        }
    }

    fn resolve(&mut self, base: &Path) {
        if let Profile::Csv { path } = self {
            *path = absolute(base, path);
        }
    }
}

/// Past of `u₀` behind `u₀(0)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HistoryProfile {
    /// `u₀(−s) = u₀(0)`, so `η₀ ≡ 0`.
    #[default]
    Constant,
    /// `u₀(−s) = (1 − rate·s) u₀(0)`, so `η₀(s) = rate · s · u₀(0)`.
    RampHistory { rate: f64 },
}

impl HistoryProfile {
    pub fn sample(&self, u0: &Field, s: f64) -> Field {
        match self {
            HistoryProfile::Constant => u0.clone(),
            HistoryProfile::RampHistory { rate } => u0.scaled(1.0 - rate * s),
        }
    }

    /// `d/dt u₀(t)` at `t = 0⁻`.
    pub fn velocity(&self, u0: &Field) -> Field {
        match self {
            HistoryProfile::Constant => Field::zeros(u0.len()),
            HistoryProfile::RampHistory { rate } => u0.scaled(*rate),
        }
    }
}

/// `u_t` on `(−τ, 0)`, whose `B*` image is the delayed datum `g`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GProfile {
    /// `u_t(s) = u₁`: continuous with the initial velocity.
    #[default]
    U1,
    /// The velocity of the history profile at `0⁻`.
    History,
    /// A fixed spatial field, constant in time.
    Field { profile: Profile },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayConfig {
    pub tau: f64,
    #[serde(default = "DelayCoefficient::zero")]
    pub coefficient: DelayCoefficient,
    #[serde(default)]
    pub g: GProfile,
}

impl Default for DelayConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            coefficient: DelayCoefficient::zero(),
            g: GProfile::U1,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// Multiplies every initial datum.
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub u0: Profile,
    #[serde(default)]
    pub history: HistoryProfile,
    #[serde(default)]
    pub u1: Profile,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            scale: 1.0,
            u0: Profile::Zero,
            history: HistoryProfile::Constant,
            u1: Profile::Zero,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistoryChoice {
    /// PronyODE for exponential and Prony kernels, Transport otherwise.
    #[default]
    Auto,
    Prony,
    Transport,
}

impl HistoryChoice {
    pub fn resolve(self, kernel: &MemoryKernel) -> HistoryMode {
        match self {
            HistoryChoice::Auto if kernel.prony_terms().is_some() => HistoryMode::PronyOde,
            HistoryChoice::Auto => HistoryMode::Transport,
            HistoryChoice::Prony => HistoryMode::PronyOde,
            HistoryChoice::Transport => HistoryMode::Transport,
        }
    }
}

fn default_stride() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_stride")]
    pub sample_stride: usize,
    #[serde(default)]
    pub memory_off: bool,
    #[serde(default)]
    pub delay_off: bool,
    #[serde(default)]
    pub source_off: bool,
    #[serde(default)]
    pub history_mode: HistoryChoice,
    #[serde(default)]
    pub stop_on_lower_bound_loss: bool,
    #[serde(default)]
    pub history: HistorySettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub ensemble: usize,
    pub m_safety: f64,
    /// Ensemble horizon in units of `1/δ`.
    pub horizon_factor: f64,
    /// Step of the ensemble runs.
    pub constants_dt: f64,
    /// Start of the decay-fit window as a fraction of the run.
    pub fit_window: f64,
    /// Defaults to the smallest admissible value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_prime: Option<f64>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            ensemble: 20,
            m_safety: 1.1,
            horizon_factor: 20.0,
            constants_dt: 1e-2,
            fit_window: 0.5,
            omega_prime: None,
        }
    }
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::MalformedInput(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Parses a file; relative data paths are made absolute against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)
            .map_err(|e| Error::MalformedInput(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = if base.as_os_str().is_empty() { Path::new(".") } else { base };
        let base = base.canonicalize().map_err(|e| Error::io(base, e))?;
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let KernelConfig::Table { path } = &mut self.kernel {
            *path = absolute(base, path);
        }
        self.initial.u0.resolve(base);
        self.initial.u1.resolve(base);
        if let GProfile::Field { profile } = &mut self.delay.g {
            profile.resolve(base);
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Range checks that do not need any construction.
    pub fn check(&self) -> Result<()> {
        let it = &self.integrator;
        if !(it.dt.is_finite() && it.dt > 0.0) {
            return Err(Error::Config(format!("integrator.dt must be positive, got {}", it.dt)));
        }
        if !(it.t_end.is_finite() && it.t_end >= 0.0) {
            return Err(Error::Config(format!("integrator.t_end must be nonnegative, got {}", it.t_end)));
        }
        if it.sample_stride == 0 {
            return Err(Error::Config("integrator.sample_stride must be at least 1".into()));
        }
        if !(self.delay.tau.is_finite() && self.delay.tau > 0.0) {
            return Err(Error::Config(format!("delay.tau must be positive, got {}", self.delay.tau)));
        }
        self.delay.coefficient.validate()?;
        if !self.initial.scale.is_finite() {
            return Err(Error::Config("initial.scale must be finite".into()));
        }
        let d = &self.diagnostics;
        if d.ensemble == 0 || !(d.m_safety >= 1.0) || !(d.horizon_factor > 0.0) || !(d.constants_dt > 0.0) {
            return Err(Error::Config(
                "diagnostics needs ensemble >= 1, m_safety >= 1, horizon_factor > 0, constants_dt > 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&d.fit_window) {
            return Err(Error::Config(format!("diagnostics.fit_window must lie in [0, 1), got {}", d.fit_window)));
        }
        Ok(())
    }
}
