//! Sine-basis Galerkin realization of the operator `A` on `(0, L)`.
//!
//! Fields are stored as coefficients of `φ_k(x) = sin(kπx/L)`, `k = 1..K`.
//! Pointwise operations (the power source, the feedback mask) go through a
//! DST-I collocation grid of `N_x ≥ 2K` interior points `x_j = jL/(N_x+1)`.
//! On that grid the transform is exactly orthogonal, so the roundtrip is the
//! identity and cubic products are alias-free for `σ = 2`.

use std::f64::consts::PI;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seed of the sample used by [`SpectralProblem::estimate_h_constant`].
pub const H_SAMPLE_SEED: u64 = 0x5eed_0f_c0ffee;
/// Number of sampled fields behind `C_h`.
pub const H_SAMPLE_SIZE: usize = 256;
/// Multiplier applied to the sampled maximum ratio.
pub const H_SAFETY: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    /// `A = -Δ` with Dirichlet conditions.
    Wave,
    /// `A = Δ²` with hinged conditions `u = u'' = 0`.
    Plate,
}

/// Modal coefficients of a function on `(0, L)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field(Vec<f64>);

impl Field {
    pub fn zeros(n: usize) -> Self {
        Field(vec![0.0; n])
    }

    pub fn from_modal(coefficients: Vec<f64>) -> Self {
        Field(coefficients)
    }

    /// Single mode `amplitude · sin(kπx/L)` (1-based `k`).
    pub fn mode(n: usize, k: usize, amplitude: f64) -> Self {
        let mut f = Self::zeros(n);
        if (1..=n).contains(&k) {
            f.0[k - 1] = amplitude;
        }
        f
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn modal(&self) -> &[f64] {
        &self.0
    }

    pub fn modal_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_modal(self) -> Vec<f64> {
        self.0
    }

    pub fn scaled(&self, c: f64) -> Field {
        Field(self.0.iter().map(|x| c * x).collect())
    }

    /// `self += c · other`
    pub fn axpy(&mut self, c: f64, other: &Field) {
        for (x, y) in self.0.iter_mut().zip(&other.0) {
            *x += c * y;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

impl Index<usize> for Field {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Field {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        Field(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        Field(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl Mul<&Field> for f64 {
    type Output = Field;
    fn mul(self, rhs: &Field) -> Field {
        rhs.scaled(self)
    }
}

#[derive(Clone, Debug)]
pub struct SpectralProblem {
    kind: ProblemKind,
    length: f64,
    n_modes: usize,
    eigenvalues: Vec<f64>,
    grid: Vec<f64>,
    feedback_support: (f64, f64),
    sigma: f64,
    /// `sin(kπ x_j / L)`, row-major `[j][k]`.
    sines: Vec<f64>,
    /// Fraction of each grid cell covered by the feedback support.
    mask: Vec<f64>,
}

impl SpectralProblem {
    /// Builds the problem with the default grid `N_x = 4K`.
    pub fn new(
        kind: ProblemKind,
        length: f64,
        n_modes: usize,
        feedback_support: (f64, f64),
        sigma: f64,
    ) -> Result<Self> {
        Self::with_grid(kind, length, n_modes, 4 * n_modes, feedback_support, sigma)
    }

    pub fn with_grid(
        kind: ProblemKind,
        length: f64,
        n_modes: usize,
        n_grid: usize,
        feedback_support: (f64, f64),
        sigma: f64,
    ) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::Config("n_modes must be at least 1".into()));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::Config(format!("length must be positive, got {length}")));
        }
        if n_grid < 2 * n_modes {
            return Err(Error::Config(format!(
                "grid of {n_grid} points is too coarse for {n_modes} modes (need at least {})",
                2 * n_modes
            )));
        }
        let (o1, o2) = feedback_support;
        if !(o1.is_finite() && o2.is_finite() && 0.0 <= o1 && o1 <= o2 && o2 <= length) {
            return Err(Error::Config(format!(
                "feedback support ({o1}, {o2}) must satisfy 0 <= o1 <= o2 <= L = {length}"
            )));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Config(format!("sigma must be nonnegative, got {sigma}")));
        }
        if kind == ProblemKind::Wave && sigma <= 0.0 {
            return Err(Error::Config("wave problems require sigma > 0".into()));
        }

        let eigenvalues = (1..=n_modes)
            .map(|k| {
                let base = (k as f64 * PI / length).powi(2);
                match kind {
                    ProblemKind::Wave => base,
                    ProblemKind::Plate => base * base,
                }
            })
            .collect();
        let h = length / (n_grid + 1) as f64;
        let grid: Vec<f64> = (1..=n_grid).map(|j| j as f64 * h).collect();
        let mut sines = Vec::with_capacity(n_grid * n_modes);
        for j in 1..=n_grid {
            for k in 1..=n_modes {
                sines.push((PI * (j * k) as f64 / (n_grid + 1) as f64).sin());
            }
        }
        let mask = grid
            .iter()
            .map(|&x| {
                let lo = (x - 0.5 * h).max(o1);
                let hi = (x + 0.5 * h).min(o2);
                ((hi - lo) / h).clamp(0.0, 1.0)
            })
            .collect();
        Ok(Self {
            kind,
            length,
            n_modes,
            eigenvalues,
            grid,
            feedback_support,
            sigma,
            sines,
            mask,
        })
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_grid(&self) -> usize {
        self.grid.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn grid_spacing(&self) -> f64 {
        self.length / (self.grid.len() + 1) as f64
    }

    pub fn feedback_support(&self) -> (f64, f64) {
        self.feedback_support
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `‖B‖ = ‖B*‖`: one for a nonempty support, zero otherwise.
    pub fn b_norm(&self) -> f64 {
        let (o1, o2) = self.feedback_support;
        if o2 > o1 {
            1.0
        } else {
            0.0
        }
    }

    pub fn zeros(&self) -> Field {
        Field::zeros(self.n_modes)
    }

    pub fn to_physical(&self, u: &Field) -> Vec<f64> {
        let k = self.n_modes;
        self.sines
            .chunks_exact(k)
            .map(|row| row.iter().zip(u.modal()).map(|(s, c)| s * c).sum())
            .collect()
    }

    pub fn to_modal(&self, values: &[f64]) -> Field {
        let scale = 2.0 / (self.grid.len() + 1) as f64;
        let mut out = vec![0.0; self.n_modes];
        for (row, &f) in self.sines.chunks_exact(self.n_modes).zip(values) {
            for (o, s) in out.iter_mut().zip(row) {
                *o += s * f;
            }
        }
        out.iter_mut().for_each(|o| *o *= scale);
        Field(out)
    }

    /// Projects a function sampled at arbitrary `x` onto the modes.
    pub fn project(&self, f: impl Fn(f64) -> f64) -> Field {
        let values: Vec<f64> = self.grid.iter().map(|&x| f(x)).collect();
        self.to_modal(&values)
    }

    /// `∫₀^L f² dx` of a grid function (trapezoid with zero boundary values).
    pub fn grid_l2_sq(&self, values: &[f64]) -> f64 {
        self.grid_spacing() * values.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn h_norm_sq(&self, u: &Field) -> f64 {
        0.5 * self.length * u.modal().iter().map(|c| c * c).sum::<f64>()
    }

    /// `‖u‖_H`.
    pub fn h_norm(&self, u: &Field) -> f64 {
        self.h_norm_sq(u).sqrt()
    }

    pub fn h_inner(&self, u: &Field, v: &Field) -> f64 {
        0.5 * self.length * u.modal().iter().zip(v.modal()).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn a_half_norm_sq(&self, u: &Field) -> f64 {
        0.5 * self.length
            * u.modal()
                .iter()
                .zip(&self.eigenvalues)
                .map(|(c, l)| l * c * c)
                .sum::<f64>()
    }

    /// `‖A^{1/2} u‖_H`.
    pub fn a_half_norm(&self, u: &Field) -> f64 {
        self.a_half_norm_sq(u).sqrt()
    }

    /// Modal coefficients of `∇ψ(u) = |u|^σ u`, computed pseudo-spectrally.
    ///
    /// For non-integer `σ` the pointwise power is not a polynomial and the
    /// projection carries grid-level aliasing.
    pub fn eval_source(&self, u: &Field) -> std::result::Result<Field, SourceOverflow> {
        let sigma = self.sigma;
        let phys: Vec<f64> = self
            .to_physical(u)
            .into_iter()
            .map(|x| x.abs().powf(sigma) * x)
            .collect();
        if phys.iter().any(|x| !x.is_finite()) {
            return Err(SourceOverflow);
        }
        let out = self.to_modal(&phys);
        if out.is_finite() {
            Ok(out)
        } else {
            Err(SourceOverflow)
        }
    }

    /// `ψ(u) = (σ+2)⁻¹ ∫ |u|^{σ+2}` by grid quadrature.
    pub fn psi_value(&self, u: &Field) -> f64 {
        let p = self.sigma + 2.0;
        self.grid_spacing()
            * self
                .to_physical(u)
                .iter()
                .map(|x| x.abs().powf(p))
                .sum::<f64>()
            / p
    }

    /// Multiplication by the (cell-averaged) indicator of the feedback support.
    pub fn apply_b(&self, v: &Field) -> Field {
        let phys: Vec<f64> = self
            .to_physical(v)
            .iter()
            .zip(&self.mask)
            .map(|(x, m)| x * m)
            .collect();
        self.to_modal(&phys)
    }

    /// `B B* v`. `B` is self-adjoint, so this is `B` applied twice.
    pub fn apply_bbstar(&self, v: &Field) -> Field {
        self.apply_b(&self.apply_b(v))
    }

    /// Grid values of `χ_𝒪 v` (before projection).
    pub fn masked_physical(&self, v: &Field) -> Vec<f64> {
        self.to_physical(v)
            .iter()
            .zip(&self.mask)
            .map(|(x, m)| x * m)
            .collect()
    }

    /// Ratio `‖∇ψ(u)‖ / ‖A^{1/2}u‖^{σ+1}`; `None` for `u = 0`.
    pub fn h_ratio(&self, u: &Field) -> Option<f64> {
        let den = self.a_half_norm(u);
        if den == 0.0 {
            return None;
        }
        let num = self.h_norm(&self.eval_source(u).ok()?);
        Some(num / den.powf(self.sigma + 1.0))
    }

    /// `C_h` such that `h(r) = C_h r^σ` bounds `‖∇ψ(u)‖ ≤ h(‖A^{1/2}u‖)‖A^{1/2}u‖`
    /// on a fixed sample of smooth, rough, single-mode and localized fields.
    pub fn estimate_h_constant(&self) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(H_SAMPLE_SEED);
        let k = self.n_modes;
        let l = self.length;
        let mut best = 0.0f64;
        for i in 0..H_SAMPLE_SIZE {
            let u = match i % 4 {
                0 => Field(
                    (1..=k)
                        .map(|m| rng.sample::<f64, _>(StandardNormal) / (m * m) as f64)
                        .collect(),
                ),
                1 => Field((0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()),
                2 => Field::mode(k, 1 + (i / 4) % k, 1.0),
                _ => {
                    let center = rng.random_range(0.1 * l..0.9 * l);
                    let width = rng.random_range(0.05 * l..0.5 * l);
                    self.project(|x| bump(x, center, width, 1.0))
                }
            };
            if let Some(r) = self.h_ratio(&u) {
                best = best.max(r);
            }
        }
        H_SAFETY * best
    }

    /// Local Lipschitz constant of `∇ψ` on the ball of radius `r`,
    /// `L(r) = (σ+1) C_h r^σ`.
    pub fn lipschitz_bound(&self, c_h: f64, r: f64) -> f64 {
        (self.sigma + 1.0) * c_h * r.powf(self.sigma)
    }
}

/// `|u|^σ u` overflowed on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SourceOverflow;

impl SourceOverflow {
    pub fn at(self, t: f64) -> Error {
        Error::Divergence { t }
    }
}

/// Raised-cosine bump `a cos²(π(x-c)/(2w))` on `|x-c| < w`.
pub fn bump(x: f64, center: f64, width: f64, amplitude: f64) -> f64 {
    let z = (x - center) / width;
    if z.abs() < 1.0 {
        amplitude * (0.5 * PI * z).cos().powi(2)
    } else {
        0.0
    }
}

/// Free-function spelling of [`SpectralProblem::new`].
pub fn build_problem(
    kind: ProblemKind,
    length: f64,
    n_modes: usize,
    feedback_support: (f64, f64),
    sigma: f64,
) -> Result<SpectralProblem> {
    SpectralProblem::new(kind, length, n_modes, feedback_support, sigma)
}
