//! Degenerate diagonal forcing: the noise matrix, Wiener increment
//! generation, the exact Ornstein–Uhlenbeck one-step map, and the
//! noise-rank condition.
//!
//! Convention: each w_n is a complex Brownian motion normalised so that
//! E|w_n(t)|^2 = t (real and imaginary components are independent Brownian
//! motions of variance t/2). Under this normalisation the energy balance
//! E|u(t)|^2 + 2ν∫E‖u‖^2 = E|u(0)|^2 + (Σ q_nn^2)·t holds with the plain
//! squared trace, which is what the energy probe asserts.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::rng::{streams, RngKey};
use crate::shell::{ModelConfig, ShellState};
use crate::Error;

/// Diagonal, real, finitely supported noise amplitudes q_{1,1}..q_{N,N}.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoiseConfig {
    q_diag: Vec<f64>,
}

impl NoiseConfig {
    pub fn new(q_diag: Vec<f64>) -> Result<Self, Error> {
        if q_diag.iter().any(|q| !q.is_finite()) {
            return Err(Error::InvalidConfig("noise amplitudes must be finite".into()));
        }
        Ok(NoiseConfig { q_diag })
    }

    /// All-zero noise on `n_modes` shells.
    pub fn zero(n_modes: usize) -> Self {
        NoiseConfig { q_diag: vec![0.0; n_modes] }
    }

    /// q_{n,n} = amplitude for n ≤ active, zero above.
    pub fn uniform(n_modes: usize, active: usize, amplitude: f64) -> Self {
        let mut q = vec![0.0; n_modes];
        for qn in q.iter_mut().take(active.min(n_modes)) {
            *qn = amplitude;
        }
        NoiseConfig { q_diag: q }
    }

    pub fn n_modes(&self) -> usize {
        self.q_diag.len()
    }

    pub fn q(&self, n: usize) -> f64 {
        self.q_diag[n - 1]
    }

    pub fn q_diag(&self) -> &[f64] {
        &self.q_diag
    }

    /// Smallest n0 with q_{n,n} = 0 for every n ≥ n0.
    pub fn n0(&self) -> usize {
        let last_nonzero = self.q_diag.iter().rposition(|&q| q != 0.0);
        match last_nonzero {
            Some(i) => i + 2, // 1-based index of the last active mode, plus one
            None => 1,
        }
    }

    /// Σ q_nn^2 = Tr(QQ*).
    pub fn trace_q2(&self) -> f64 {
        self.q_diag.iter().map(|q| q * q).sum()
    }

    pub fn max_q2(&self) -> f64 {
        self.q_diag.iter().map(|q| q * q).fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.q_diag.iter().all(|&q| q == 0.0)
    }

    /// 0-based indices of modes with nonzero amplitude.
    pub fn active_indices(&self) -> Vec<usize> {
        self.q_diag
            .iter()
            .enumerate()
            .filter(|(_, &q)| q != 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// A reproducible Wiener path on a fixed step grid.
///
/// Increment n at step s is √dt times a standard complex Gaussian drawn by
/// the counter RNG at (seed, PATH_NOISE stream, s, n); E|Δw_n|^2 = dt.
#[derive(Clone, Copy, Debug)]
pub struct WienerPath {
    key: RngKey,
    dt: f64,
}

impl WienerPath {
    pub fn new(seed: u64, dt: f64) -> Self {
        WienerPath { key: RngKey::new(seed, streams::PATH_NOISE), dt }
    }

    pub fn from_key(key: RngKey, dt: f64) -> Self {
        WienerPath { key, dt }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// The standard complex Gaussian backing the increment of mode
    /// (0-based index) at `step`, before any scaling.
    #[inline(always)]
    pub fn standard_gaussian(&self, step: u64, mode_idx: usize) -> Complex64 {
        self.key.standard_complex(step, mode_idx as u64)
    }

    /// Brownian increment Δw_n over one step: √dt · standard complex Gaussian.
    #[inline(always)]
    pub fn increment(&self, step: u64, mode_idx: usize) -> Complex64 {
        self.standard_gaussian(step, mode_idx) * self.dt.sqrt()
    }

    /// All per-mode increments for one step.
    pub fn sample_increments(&self, step: u64, n_modes: usize) -> Vec<Complex64> {
        (0..n_modes).map(|i| self.increment(step, i)).collect()
    }
}

/// Per-mode tables for the exact one-step Ornstein–Uhlenbeck transition of
/// dz + νAz dt = Q dW over a step of length dt:
///     z_n ← e^{-νk_n²dt} z_n + q_nn √((1-e^{-2νk_n²dt})/(2νk_n²)) g_n
/// with g_n standard complex. This is the exact conditional distribution.
#[derive(Clone, Debug)]
pub struct OuTables {
    pub decay: Vec<f64>,
    pub amp: Vec<f64>,
}

impl OuTables {
    pub fn new(cfg: &ModelConfig, noise: &NoiseConfig, dt: f64) -> Self {
        let n = cfg.n_modes;
        let mut decay = Vec::with_capacity(n);
        let mut amp = Vec::with_capacity(n);
        for i in 0..n {
            let k = cfg.wavenumber(i + 1);
            let lambda = cfg.nu * k * k;
            let d = (-lambda * dt).exp();
            decay.push(d);
            let q = if i < noise.n_modes() { noise.q_diag[i] } else { 0.0 };
            amp.push(q * ((1.0 - d * d) / (2.0 * lambda)).sqrt());
        }
        OuTables { decay, amp }
    }
}

/// One exact Ornstein–Uhlenbeck step from `z`, consuming one standard
/// complex Gaussian per mode.
pub fn ou_exact_step(
    z: &ShellState,
    dt: f64,
    noise: &NoiseConfig,
    cfg: &ModelConfig,
    gauss: &[Complex64],
) -> ShellState {
    let tables = OuTables::new(cfg, noise, dt);
    let mut out = z.clone();
    for (i, a) in out.amps_mut().iter_mut().enumerate() {
        *a = *a * tables.decay[i] + gauss[i] * tables.amp[i];
    }
    out
}

/// Outcome of the noise-rank check: the smallest admissible number of
/// forced modes and whether the configured noise provides them.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct NoiseCondition {
    pub threshold: f64,
    pub n_star_min: usize,
    pub satisfied: bool,
}

/// Checks the low-mode forcing condition: all of q_{1,1}..q_{N*,N*} must be
/// nonzero for some N* strictly above
///     log2(2 C² max q² / ν³ + Tr Q² / (2 max q²)) / 2,
/// with C the bilinear operator constant. Returns the smallest such N*.
pub fn check_noise_condition(
    noise: &NoiseConfig,
    cfg: &ModelConfig,
    c_const: f64,
) -> Result<NoiseCondition, Error> {
    let max_q2 = noise.max_q2();
    if max_q2 == 0.0 {
        return Err(Error::Degenerate("no active noise modes".into()));
    }
    if !(c_const > 0.0) {
        return Err(Error::Precondition(format!(
            "operator constant must be positive, got {c_const}"
        )));
    }
    let nu3 = cfg.nu * cfg.nu * cfg.nu;
    let arg = 2.0 * c_const * c_const * max_q2 / nu3 + noise.trace_q2() / (2.0 * max_q2);
    let threshold = arg.log2() / 2.0;
    let n_star_min = if threshold < 1.0 {
        1
    } else {
        threshold.floor() as usize + 1
    };
    let satisfied = n_star_min <= noise.n_modes()
        && (1..=n_star_min).all(|n| noise.q(n) != 0.0);
    Ok(NoiseCondition { threshold, n_star_min, satisfied })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shell::Variant;

    fn cfg(n: usize) -> ModelConfig {
        ModelConfig { nu: 1.0, k0: 2.0, a: 1.0, b: -0.5, variant: Variant::Goy, n_modes: n }
    }

    #[test]
    fn n0_is_past_the_last_active_mode() {
        let q = NoiseConfig::new(vec![0.3, 0.0, 0.2, 0.0]).unwrap();
        assert_eq!(q.n0(), 4);
        assert_eq!(NoiseConfig::zero(4).n0(), 1);
        let full = NoiseConfig::uniform(4, 4, 0.1);
        assert_eq!(full.n0(), 5);
        assert!((full.trace_q2() - 0.04).abs() < 1e-15);
        assert!((full.max_q2() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn increments_are_deterministic_and_degenerate() {
        let w = WienerPath::new(7, 1e-3);
        let a = w.sample_increments(5, 8);
        let b = w.sample_increments(5, 8);
        assert_eq!(a, b);

        let noise = NoiseConfig::uniform(8, 4, 0.3);
        for i in 4..8 {
            let forced = a[i] * noise.q_diag()[i];
            assert_eq!(forced, Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn increment_variance_matches_dt() {
        let dt = 2e-3;
        let w = WienerPath::new(11, dt);
        let n = 100_000u64;
        let mut sum = 0.0;
        for s in 0..n {
            sum += w.increment(s, 0).norm_sqr();
        }
        let var = sum / n as f64;
        assert!((var / dt - 1.0).abs() < 0.05, "E|Δw|^2/dt = {}", var / dt);
    }

    #[test]
    fn ou_pure_decay() {
        let m = cfg(4);
        let noise = NoiseConfig::zero(4);
        let z = ShellState::unit(4, 1);
        let dt = 0.01;
        let gauss = vec![Complex64::new(1.0, 1.0); 4]; // ignored: q = 0
        let out = ou_exact_step(&z, dt, &noise, &m, &gauss);
        let k1 = m.wavenumber(1);
        let want = (-m.nu * k1 * k1 * dt).exp();
        assert!((out.amp(1).re - want).abs() < 1e-15);
        assert_eq!(out.amp(1).im, 0.0);
    }

    #[test]
    fn ou_one_step_component_variance() {
        // From z = 0, each real component of mode n has variance
        // q² (1 - e^{-2νk_n²dt}) / (4νk_n²).
        let m = cfg(4);
        let noise = NoiseConfig::uniform(4, 4, 0.3);
        let dt = 0.05;
        let z = ShellState::zeros(4);
        let w = WienerPath::new(3, dt);
        let samples = 100_000u64;
        let mut sum_re2 = 0.0;
        let mut sum_im2 = 0.0;
        for s in 0..samples {
            let gauss: Vec<Complex64> = (0..4).map(|i| w.standard_gaussian(s, i)).collect();
            let out = ou_exact_step(&z, dt, &noise, &m, &gauss);
            sum_re2 += out.amp(1).re * out.amp(1).re;
            sum_im2 += out.amp(1).im * out.amp(1).im;
        }
        let k1 = m.wavenumber(1);
        let lambda = m.nu * k1 * k1;
        let want = 0.09 * (1.0 - (-2.0 * lambda * dt).exp()) / (4.0 * lambda);
        for got in [sum_re2 / samples as f64, sum_im2 / samples as f64] {
            assert!((got / want - 1.0).abs() < 0.05, "component variance {got} vs {want}");
        }
    }

    #[test]
    fn ou_reaches_stationary_variance() {
        // Var per complex mode tends to q²/(2νk_n²).
        let m = cfg(4);
        let noise = NoiseConfig::uniform(4, 4, 0.3);
        let dt = 0.02;
        let paths = 4000u64;
        let steps = 400u64; // νk_1² dt = 0.32 per step: far past relaxation
        let mut sum = 0.0;
        for p in 0..paths {
            let w = WienerPath::from_key(RngKey::new(17, 0).substream(p), dt);
            let mut z = ShellState::zeros(4);
            for s in 0..steps {
                let gauss: Vec<Complex64> = (0..4).map(|i| w.standard_gaussian(s, i)).collect();
                z = ou_exact_step(&z, dt, &noise, &m, &gauss);
            }
            sum += z.amp(2).norm_sqr();
        }
        let k2 = m.wavenumber(2);
        let want = 0.09 / (2.0 * m.nu * k2 * k2);
        let got = sum / paths as f64;
        assert!((got / want - 1.0).abs() < 0.05, "stationary variance {got} vs {want}");
    }

    #[test]
    fn ou_step_distribution_kolmogorov_smirnov() {
        // One-step law of Re z_1 from z = e_1 against the closed-form normal,
        // at the 1% level over 10^4 samples.
        use statrs::distribution::{ContinuousCDF, Normal};

        let m = cfg(4);
        let noise = NoiseConfig::uniform(4, 4, 0.3);
        let dt = 0.03;
        let k1 = m.wavenumber(1);
        let lambda = m.nu * k1 * k1;
        let mean = (-lambda * dt).exp();
        let sd = (0.09 * (1.0 - (-2.0 * lambda * dt).exp()) / (4.0 * lambda)).sqrt();
        let normal = Normal::new(mean, sd).unwrap();

        let z = ShellState::unit(4, 1);
        let w = WienerPath::new(29, dt);
        let n = 10_000usize;
        let mut xs: Vec<f64> = (0..n)
            .map(|s| {
                let gauss: Vec<Complex64> = (0..4).map(|i| w.standard_gaussian(s as u64, i)).collect();
                ou_exact_step(&z, dt, &noise, &m, &gauss).amp(1).re
            })
            .collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut d = 0.0f64;
        for (i, x) in xs.iter().enumerate() {
            let f = normal.cdf(*x);
            d = d.max((f - i as f64 / n as f64).abs());
            d = d.max(((i + 1) as f64 / n as f64 - f).abs());
        }
        // critical value at alpha = 0.01
        let crit = 1.628 / (n as f64).sqrt();
        assert!(d < crit, "KS statistic {d} ≥ {crit}");
    }

    #[test]
    fn noise_condition_arithmetic() {
        // C = 1, max q² = 1, Tr Q² = 1, ν = 1:
        // threshold = log2(2 + 0.5)/2 = log2(2.5)/2 ≈ 0.6610, so N* = 1.
        let m = cfg(4);
        let noise = NoiseConfig::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let rep = check_noise_condition(&noise, &m, 1.0).unwrap();
        assert!((rep.threshold - 2.5f64.log2() / 2.0).abs() < 1e-15);
        assert_eq!(rep.n_star_min, 1);
        assert!(rep.satisfied);
        assert!(rep.n_star_min as f64 > rep.threshold);
    }

    #[test]
    fn noise_condition_monotone_in_viscosity() {
        let noise = NoiseConfig::uniform(16, 4, 0.3);
        let mut prev = usize::MAX;
        for nu in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let m = ModelConfig { nu, ..cfg(16) };
            let rep = check_noise_condition(&noise, &m, 3.0).unwrap();
            assert!(rep.n_star_min <= prev, "n_star_min grew as ν grew");
            assert!(rep.n_star_min as f64 > rep.threshold);
            prev = rep.n_star_min;
        }
        // decreasing C never increases n_star_min
        let m = cfg(16);
        let hi = check_noise_condition(&noise, &m, 3.0).unwrap();
        let lo = check_noise_condition(&noise, &m, 1.0).unwrap();
        assert!(lo.n_star_min <= hi.n_star_min);
    }

    #[test]
    fn noise_condition_rejects_dead_noise() {
        let m = cfg(8);
        let err = check_noise_condition(&NoiseConfig::zero(8), &m, 1.0);
        assert!(matches!(err, Err(Error::Degenerate(_))));
    }
}
