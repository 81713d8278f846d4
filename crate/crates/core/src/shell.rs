//! Shell-space functional setting: dyadic wavenumbers, the energy and
//! enstrophy norms, the diagonal dissipation operator, and the GOY/Sabra
//! bilinear interaction operators with their algebraic identities.
//!
//! States live in the Galerkin truncation to modes `1..=N`: one complex
//! amplitude per shell, with the boundary convention that modes `-1, 0` and
//! `N+1, N+2` are identically zero (never stored). All identities that hold
//! in the full space — energy orthogonality `(B(v,u),u) = 0`, antisymmetry
//! `(B(u,v),w) = -(B(u,w),v)` — survive the truncation exactly because every
//! boundary term carries a zero ghost factor.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::rng::{streams, RngKey};
use crate::Error;

/// Minimum truncation: both bilinear forms reach neighbours n±2.
pub const MIN_MODES: usize = 4;

/// Dyadic wavenumber k_n = k0 · 2^n. Exact in floating point for n ≤ 1023.
#[inline(always)]
pub fn wavenumber(n: usize, k0: f64) -> f64 {
    k0 * f64::powi(2.0, n as i32)
}

/// Which quadratic interaction to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Goy,
    Sabra,
}

/// Model parameters shared by every operator in the crate.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Viscosity, strictly positive.
    pub nu: f64,
    /// Wavenumber base, must exceed 1.
    pub k0: f64,
    /// Interaction coefficients.
    pub a: f64,
    pub b: f64,
    pub variant: Variant,
    /// Galerkin truncation (number of stored modes).
    pub n_modes: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(Error::InvalidConfig(format!("nu must be positive, got {}", self.nu)));
        }
        if !(self.k0 > 1.0) || !self.k0.is_finite() {
            return Err(Error::InvalidConfig(format!("k0 must exceed 1, got {}", self.k0)));
        }
        if !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::InvalidConfig("interaction coefficients must be finite".into()));
        }
        if self.n_modes < MIN_MODES {
            return Err(Error::InvalidConfig(format!(
                "n_modes must be at least {MIN_MODES}, got {}",
                self.n_modes
            )));
        }
        Ok(())
    }

    pub fn wavenumber(&self, n: usize) -> f64 {
        wavenumber(n, self.k0)
    }
}

/// Finite truncation of a shell-space state: complex amplitudes u_1..u_N.
#[derive(Clone, Debug, PartialEq)]
pub struct ShellState {
    amps: Vec<Complex64>,
}

impl ShellState {
    pub fn new(amps: Vec<Complex64>) -> Result<Self, Error> {
        if amps.len() < MIN_MODES {
            return Err(Error::InvalidConfig(format!(
                "shell state needs at least {MIN_MODES} modes, got {}",
                amps.len()
            )));
        }
        for (i, a) in amps.iter().enumerate() {
            if !a.re.is_finite() || !a.im.is_finite() {
                return Err(Error::NonFinite { mode: i + 1, t: 0.0 });
            }
        }
        Ok(ShellState { amps })
    }

    pub fn zeros(n_modes: usize) -> Self {
        ShellState { amps: vec![Complex64::new(0.0, 0.0); n_modes] }
    }

    /// Coordinate state e_mode (1-based) with unit real amplitude.
    pub fn unit(n_modes: usize, mode: usize) -> Self {
        let mut s = Self::zeros(n_modes);
        s.amps[mode - 1] = Complex64::new(1.0, 0.0);
        s
    }

    /// Random complex-Gaussian state with per-mode spectral tilt
    /// `slope^n`, normalised to |u| = radius. Deterministic in the key.
    pub fn random(n_modes: usize, radius: f64, slope: f64, key: RngKey, step: u64) -> Self {
        let mut amps = Vec::with_capacity(n_modes);
        let mut scale = 1.0;
        for i in 0..n_modes {
            scale *= slope;
            amps.push(key.standard_complex(step, i as u64) * scale);
        }
        let mut s = ShellState { amps };
        let h = s.h_norm();
        if h > 0.0 {
            s.scale_mut(radius / h);
        }
        s
    }

    pub fn n_modes(&self) -> usize {
        self.amps.len()
    }

    /// Amplitude of mode n, 1-based.
    pub fn amp(&self, n: usize) -> Complex64 {
        self.amps[n - 1]
    }

    pub fn amps(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amps_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn into_amps(self) -> Vec<Complex64> {
        self.amps
    }

    pub fn is_finite(&self) -> bool {
        self.amps.iter().all(|a| a.re.is_finite() && a.im.is_finite())
    }

    /// Energy norm |u| (little-l2 of the amplitudes).
    pub fn h_norm(&self) -> f64 {
        self.h_norm_sq().sqrt()
    }

    pub fn h_norm_sq(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Enstrophy-type norm ‖u‖ with weights k_n^2.
    pub fn v_norm(&self, k0: f64) -> f64 {
        self.v_norm_sq(k0).sqrt()
    }

    pub fn v_norm_sq(&self, k0: f64) -> f64 {
        self.amps
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let k = wavenumber(i + 1, k0);
                k * k * a.norm_sqr()
            })
            .sum()
    }

    /// Interpolation norm ‖u‖_α with weights k_n^{4α}.
    pub fn alpha_norm(&self, k0: f64, alpha: f64) -> f64 {
        self.amps
            .iter()
            .enumerate()
            .map(|(i, a)| wavenumber(i + 1, k0).powf(4.0 * alpha) * a.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// ‖u‖_{1/4}, the norm of the intermediate space between H and V.
    pub fn calh_norm(&self, k0: f64) -> f64 {
        self.alpha_norm(k0, 0.25)
    }

    pub fn norm_report(&self, cfg: &ModelConfig) -> NormReport {
        NormReport {
            h_norm: self.h_norm(),
            v_norm: self.v_norm(cfg.k0),
            calh_norm: self.calh_norm(cfg.k0),
        }
    }

    pub fn scale_mut(&mut self, c: f64) {
        for a in &mut self.amps {
            *a *= c;
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut s = self.clone();
        s.scale_mut(c);
        s
    }

    pub fn add(&self, other: &Self) -> Result<Self, Error> {
        check_dims(self, other)?;
        let amps = self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a + b)
            .collect();
        Ok(ShellState { amps })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, Error> {
        check_dims(self, other)?;
        let amps = self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a - b)
            .collect();
        Ok(ShellState { amps })
    }
}

fn check_dims(u: &ShellState, v: &ShellState) -> Result<(), Error> {
    if u.n_modes() != v.n_modes() {
        return Err(Error::Dimension(u.n_modes(), v.n_modes()));
    }
    Ok(())
}

/// The three norms evaluated together.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct NormReport {
    pub h_norm: f64,
    pub v_norm: f64,
    pub calh_norm: f64,
}

/// Real inner product (u,v) = Re Σ u_n v_n^*.
pub fn inner_h(u: &ShellState, v: &ShellState) -> Result<f64, Error> {
    check_dims(u, v)?;
    Ok(inner_h_slices(&u.amps, &v.amps))
}

#[inline]
pub(crate) fn inner_h_slices(u: &[Complex64], v: &[Complex64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| a.re * b.re + a.im * b.im)
        .sum()
}

/// Diagonal dissipation operator: (Au)_n = k_n^2 u_n.
pub fn apply_a(u: &ShellState, cfg: &ModelConfig) -> ShellState {
    let amps = u
        .amps
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let k = wavenumber(i + 1, cfg.k0);
            a * (k * k)
        })
        .collect();
    ShellState { amps }
}

/// Precomputed tables for repeated bilinear evaluations on one truncation.
///
/// `k[n]` holds k_n for n = 0..=N+1 so the four interaction terms can index
/// neighbours directly.
#[derive(Clone, Debug)]
pub struct BilinearKernel {
    k: Vec<f64>,
    a: f64,
    b: f64,
    variant: Variant,
    n: usize,
}

impl BilinearKernel {
    pub fn new(cfg: &ModelConfig) -> Self {
        let n = cfg.n_modes;
        let k = (0..=n + 1).map(|j| wavenumber(j, cfg.k0)).collect();
        BilinearKernel { k, a: cfg.a, b: cfg.b, variant: cfg.variant, n }
    }

    pub fn n_modes(&self) -> usize {
        self.n
    }

    /// out = B(u, v). Slices must all have length N; ghosts beyond the
    /// truncation are implicit zeros.
    pub fn apply_into(&self, u: &[Complex64], v: &[Complex64], out: &mut [Complex64]) {
        assert_eq!(u.len(), self.n);
        assert_eq!(v.len(), self.n);
        assert_eq!(out.len(), self.n);
        let n = self.n;
        // boundary modes go through the ghost-checked path
        for m in [1, 2, n - 1, n] {
            out[m - 1] = self.term_checked(u, v, m as isize);
        }
        // interior modes: every neighbour index is in range
        let k = &self.k;
        match self.variant {
            Variant::Goy => {
                for i in 2..n.saturating_sub(2) {
                    let m = i + 1; // 1-based mode
                    let s = self.a * k[m + 1] * (u[i + 1] * v[i + 2]).conj()
                        + self.b * k[m] * (u[i - 1] * v[i + 1]).conj()
                        - self.a * k[m - 1] * (u[i - 1] * v[i - 2]).conj()
                        - self.b * k[m - 1] * (u[i - 2] * v[i - 1]).conj();
                    out[i] = Complex64::new(-s.im, s.re);
                }
            }
            Variant::Sabra => {
                for i in 2..n.saturating_sub(2) {
                    let m = i + 1;
                    let s = self.a * k[m + 1] * u[i + 1].conj() * v[i + 2]
                        + self.b * k[m] * u[i - 1].conj() * v[i + 1]
                        + self.a * k[m - 1] * u[i - 1] * v[i - 2]
                        + self.b * k[m - 1] * u[i - 2] * v[i - 1];
                    out[i] = Complex64::new(-s.im, s.re);
                }
            }
        }
    }

    fn term_checked(&self, u: &[Complex64], v: &[Complex64], m: isize) -> Complex64 {
        let zero = Complex64::new(0.0, 0.0);
        let at = |w: &[Complex64], j: isize| -> Complex64 {
            if j >= 1 && j <= self.n as isize {
                w[(j - 1) as usize]
            } else {
                zero
            }
        };
        let kp = self.k[(m + 1) as usize];
        let kn = self.k[m as usize];
        let km = self.k[(m - 1) as usize];
        let s = match self.variant {
            Variant::Goy => {
                self.a * kp * (at(u, m + 1).conj() * at(v, m + 2).conj())
                    + self.b * kn * (at(u, m - 1).conj() * at(v, m + 1).conj())
                    - self.a * km * (at(u, m - 1).conj() * at(v, m - 2).conj())
                    - self.b * km * (at(u, m - 2).conj() * at(v, m - 1).conj())
            }
            Variant::Sabra => {
                self.a * kp * (at(u, m + 1).conj() * at(v, m + 2))
                    + self.b * kn * (at(u, m - 1).conj() * at(v, m + 1))
                    + self.a * km * (at(u, m - 1) * at(v, m - 2))
                    + self.b * km * (at(u, m - 2) * at(v, m - 1))
            }
        };
        Complex64::new(-s.im, s.re)
    }

    /// out = B(u, v) + B(v, u), the symmetrised form driving tangent flows.
    pub fn apply_sym_into(
        &self,
        u: &[Complex64],
        v: &[Complex64],
        scratch: &mut [Complex64],
        out: &mut [Complex64],
    ) {
        self.apply_into(u, v, out);
        self.apply_into(v, u, scratch);
        for (o, s) in out.iter_mut().zip(scratch.iter()) {
            *o += s;
        }
    }
}

/// Bilinear interaction [B(u,v)]_n for the configured variant, Galerkin
/// projected onto modes 1..=N.
pub fn bilinear(u: &ShellState, v: &ShellState, cfg: &ModelConfig) -> Result<ShellState, Error> {
    check_dims(u, v)?;
    if u.n_modes() != cfg.n_modes {
        return Err(Error::Dimension(u.n_modes(), cfg.n_modes));
    }
    let kernel = BilinearKernel::new(cfg);
    let mut out = vec![Complex64::new(0.0, 0.0); cfg.n_modes];
    kernel.apply_into(&u.amps, &v.amps, &mut out);
    Ok(ShellState { amps: out })
}

/// Empirical lower-bound estimate of the best constant C in
/// |B(u,v)| ≤ C ‖u‖ |v|, by randomized maximization of the ratio over
/// unit pairs plus a sweep of coordinate pairs. Deterministic in the seed.
pub fn operator_norm_constant(cfg: &ModelConfig, trials: usize, seed: u64) -> f64 {
    if cfg.a == 0.0 && cfg.b == 0.0 {
        return 0.0;
    }
    let kernel = BilinearKernel::new(cfg);
    let n = cfg.n_modes;
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    let mut best = 0.0f64;

    let mut consider = |u: &ShellState, v: &ShellState, out: &mut Vec<Complex64>| {
        let vn = u.v_norm(cfg.k0);
        let hn = v.h_norm();
        if vn <= 0.0 || hn <= 0.0 {
            return;
        }
        kernel.apply_into(&u.amps, &v.amps, out);
        let num: f64 = out.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        let ratio = num / (vn * hn);
        if ratio > best {
            best = ratio;
        }
    };

    // Coordinate pairs: every interaction term is attained on some (e_i, e_j)
    // with |i - j| ≤ 2, which seeds the search near the extremal triads.
    for i in 1..=n {
        for dj in -2i64..=2 {
            let j = i as i64 + dj;
            if j < 1 || j > n as i64 {
                continue;
            }
            let u = ShellState::unit(n, i);
            let v = ShellState::unit(n, j as usize);
            consider(&u, &v, &mut out);
        }
    }

    let key = RngKey::new(seed, streams::SEARCH);
    for t in 0..trials {
        let slope = 0.5 + 1.2 * key.uniform(t as u64, 1 << 20);
        let u = ShellState::random(n, 1.0, slope, key.substream(1), t as u64);
        let v = ShellState::random(n, 1.0, 2.0 - slope, key.substream(2), t as u64);
        consider(&u, &v, &mut out);
    }
    best
}
