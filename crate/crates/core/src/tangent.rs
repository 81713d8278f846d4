//! Tangent dynamics along a stochastic shell path: the variational flow U,
//! the Malliavin flow D driven by a control g, the explicit low-mode-killing
//! control (ξ, g), and Monte Carlo verification of the Malliavin
//! integration-by-parts identity.
//!
//! The control construction steers the first n* modes of the tangent flow to
//! zero by shrinking their joint radius at the constant rate 1/2:
//!     dξ_i/dt = -ξ_i/(2r),   r(t) = √(Σ_{i≤n*}|ξ_i|²) = max(r(0) - t/2, 0),
//! while the remaining modes obey the freely-decaying linearised dynamics.
//! The control signal g is whatever the noise must inject for the Malliavin
//! flow to absorb exactly the difference U - ξ, i.e. per low mode
//!     q_ii g_i = -νk_i²ξ_i + [B(u,ξ)+B(ξ,u)]_i + ξ_i/(2r),
//! and g_i = 0 above n*. With that choice U(t) - D(t) = ξ(t) identically;
//! the discrete flows reproduce it to O(dt).
//!
//! Stochastic integrals of g against the driving noise use the
//! real-component Cameron–Martin pairing. With the complex normalisation
//! E|w_n(t)|² = t used throughout, the pairing increment is
//! 2·Re(g_n · conj(Δw_n)) per mode.

use num_complex::Complex64;
use serde::Serialize;

use crate::functional::StateFunctional;
use crate::integrate::{steps_for, PathDriver, Stepper, TrajectoryRecord};
use crate::noise::{NoiseConfig, WienerPath};
use crate::report::{mean_stderr, ProbeReport, Verdict};
use crate::shell::{ModelConfig, ShellState};
use crate::Error;

/// Tangent-space states have the same shape as base states.
pub type TangentState = ShellState;

/// Increment of the Cameron–Martin pairing ∫(g,dW) over one step.
#[inline]
pub fn pairing_increment(g: &[Complex64], dw: &[Complex64]) -> f64 {
    g.iter()
        .zip(dw)
        .map(|(gi, di)| 2.0 * (gi.re * di.re + gi.im * di.im))
        .sum()
}

/// One exponential-Euler step of the variational flow
/// dU/dt = -νAU + B(u,U) + B(U,u) along the frozen base state `u`.
/// This is the exact Jacobian action of the base one-step map.
pub fn step_variational(
    tang: &TangentState,
    u: &ShellState,
    dt: f64,
    cfg: &ModelConfig,
) -> Result<TangentState, Error> {
    let stepper = Stepper::new(cfg, &NoiseConfig::zero(cfg.n_modes), dt)?;
    let n = cfg.n_modes;
    let mut scratch = vec![Complex64::new(0.0, 0.0); n];
    let mut sym = vec![Complex64::new(0.0, 0.0); n];
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    stepper
        .kernel()
        .apply_sym_into(u.amps(), tang.amps(), &mut scratch, &mut sym);
    for i in 0..n {
        out[i] = tang.amps()[i] * stepper.decay()[i] + sym[i] * stepper.phi1dt()[i];
    }
    TangentState::new(out).map_err(|_| Error::BlowUp { t: dt, norm: f64::NAN })
}

/// One step of the controlled Malliavin flow
/// dD/dt = -νAD + B(u,D) + B(D,u) + Qg.
pub fn step_malliavin(
    d: &TangentState,
    u: &ShellState,
    g_slice: &[Complex64],
    dt: f64,
    cfg: &ModelConfig,
    noise: &NoiseConfig,
) -> Result<TangentState, Error> {
    let stepper = Stepper::new(cfg, noise, dt)?;
    let n = cfg.n_modes;
    let mut scratch = vec![Complex64::new(0.0, 0.0); n];
    let mut sym = vec![Complex64::new(0.0, 0.0); n];
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    stepper
        .kernel()
        .apply_sym_into(u.amps(), d.amps(), &mut scratch, &mut sym);
    for i in 0..n {
        let q = if i < noise.n_modes() { noise.q_diag()[i] } else { 0.0 };
        let forcing = if i < g_slice.len() { g_slice[i] * q } else { Complex64::new(0.0, 0.0) };
        out[i] = d.amps()[i] * stepper.decay()[i] + (sym[i] + forcing) * stepper.phi1dt()[i];
    }
    TangentState::new(out).map_err(|_| Error::BlowUp { t: dt, norm: f64::NAN })
}

/// The base path together with its variational, Malliavin and control flows
/// on a common grid, plus the running diagnostics of the construction.
#[derive(Clone, Debug)]
pub struct ControlledFlows {
    pub times: Vec<f64>,
    pub base_states: Vec<ShellState>,
    pub variational: Vec<TangentState>,
    pub malliavin: Vec<TangentState>,
    pub xi: Vec<TangentState>,
    /// Control signal at the snapshot times (length n_star per snapshot).
    pub g_signal: Vec<Vec<Complex64>>,
    /// Low-mode radius r(t) at the snapshot times.
    pub radius: Vec<f64>,
    /// |ζ(t)|², the squared norm of the high-mode part of ξ.
    pub zeta_sq: Vec<f64>,
    pub n_star: usize,
    pub dt: f64,
    /// max over *all* steps of |U - D - ξ|.
    pub rho_max_err: f64,
    /// ∫₀ᵀ |g(s)|² ds (left rectangles).
    pub g_sq_integral: f64,
    /// ∫₀ᵀ (g, dW) Cameron–Martin pairing.
    pub pairing: f64,
}

impl ControlledFlows {
    /// CSV of (t, |xi|, r, |zeta|^2, |g|^2) for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,xi_norm,radius,zeta_sq,g_sq\n");
        for (i, t) in self.times.iter().enumerate() {
            let gsq: f64 = self.g_signal[i].iter().map(|g| g.norm_sqr()).sum();
            out.push_str(&format!(
                "{t},{},{},{},{gsq}\n",
                self.xi[i].h_norm(),
                self.radius[i],
                self.zeta_sq[i]
            ));
        }
        out
    }
}

/// Joint streaming integrator for (u, ξ, U, D). All flows share the base
/// path's grid and noise draws.
pub struct ControlledRun {
    driver: PathDriver,
    noise: NoiseConfig,
    n_star: usize,
    xi: Vec<Complex64>,
    var: Vec<Complex64>,
    mal: Vec<Complex64>,
    xi_low_init: Vec<Complex64>,
    r0: f64,
    g: Vec<Complex64>,
    // scratch
    sym: Vec<Complex64>,
    scratch: Vec<Complex64>,
    out: Vec<Complex64>,
    // accumulators
    rho_max_err: f64,
    g_sq_integral: f64,
    pairing: f64,
}

impl ControlledRun {
    pub fn new(
        x: &ShellState,
        v: &TangentState,
        n_star: usize,
        dt: f64,
        cfg: &ModelConfig,
        noise: &NoiseConfig,
        seed: u64,
    ) -> Result<Self, Error> {
        if v.n_modes() != cfg.n_modes || x.n_modes() != cfg.n_modes {
            return Err(Error::Dimension(v.n_modes(), cfg.n_modes));
        }
        if n_star < 1 || n_star > cfg.n_modes {
            return Err(Error::Precondition(format!(
                "n_star must lie in 1..={}, got {n_star}",
                cfg.n_modes
            )));
        }
        for i in 1..=n_star {
            if i > noise.n_modes() || noise.q(i) == 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "control needs nonzero noise on modes 1..={n_star}, but q_{i},{i} = 0"
                )));
            }
        }
        if v.h_norm() > 1.0 + 1e-12 {
            return Err(Error::Precondition(format!(
                "control construction expects |v| ≤ 1, got {}",
                v.h_norm()
            )));
        }
        let stepper = Stepper::new(cfg, noise, dt)?;
        let driver = PathDriver::new(stepper, x, WienerPath::new(seed, dt))?;
        let n = cfg.n_modes;
        let xi_low_init: Vec<Complex64> = v.amps()[..n_star].to_vec();
        let r0 = xi_low_init.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        Ok(ControlledRun {
            driver,
            noise: noise.clone(),
            n_star,
            xi: v.amps().to_vec(),
            var: v.amps().to_vec(),
            mal: vec![Complex64::new(0.0, 0.0); n],
            xi_low_init,
            r0,
            g: vec![Complex64::new(0.0, 0.0); n],
            sym: vec![Complex64::new(0.0, 0.0); n],
            scratch: vec![Complex64::new(0.0, 0.0); n],
            out: vec![Complex64::new(0.0, 0.0); n],
            rho_max_err: 0.0,
            g_sq_integral: 0.0,
            pairing: 0.0,
        })
    }

    pub fn t(&self) -> f64 {
        self.driver.t()
    }

    pub fn base(&self) -> &[Complex64] {
        self.driver.state()
    }

    pub fn base_state(&self) -> ShellState {
        self.driver.to_shell_state()
    }

    pub fn xi(&self) -> &[Complex64] {
        &self.xi
    }

    pub fn variational(&self) -> &[Complex64] {
        &self.var
    }

    pub fn malliavin(&self) -> &[Complex64] {
        &self.mal
    }

    pub fn xi_state(&self) -> TangentState {
        ShellState::new(self.xi.clone()).expect("xi stays finite")
    }

    pub fn variational_state(&self) -> TangentState {
        ShellState::new(self.var.clone()).expect("U stays finite")
    }

    pub fn malliavin_state(&self) -> TangentState {
        ShellState::new(self.mal.clone()).expect("D stays finite")
    }

    pub fn g_slice(&self) -> &[Complex64] {
        &self.g[..self.n_star]
    }

    pub fn radius(&self) -> f64 {
        (self.r0 - 0.5 * self.t()).max(0.0)
    }

    pub fn zeta_sq(&self) -> f64 {
        self.xi[self.n_star..].iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn rho_max_err(&self) -> f64 {
        self.rho_max_err
    }

    pub fn g_sq_integral(&self) -> f64 {
        self.g_sq_integral
    }

    pub fn pairing(&self) -> f64 {
        self.pairing
    }

    pub fn n_star(&self) -> usize {
        self.n_star
    }

    /// The right-hand side that defines g at the current instant; exposed so
    /// the construction's algebra can be checked pointwise.
    pub fn current_g(&mut self) -> Vec<Complex64> {
        self.compute_g();
        self.g[..self.n_star].to_vec()
    }

    fn compute_g(&mut self) {
        let stepper = self.driver.stepper();
        let n = stepper.n_modes();
        let kernel = stepper.kernel();
        kernel.apply_sym_into(self.driver.state(), &self.xi, &mut self.scratch, &mut self.sym);
        let r = (self.r0 - 0.5 * self.driver.t()).max(0.0);
        let lambda = stepper.lambda();
        for i in 0..n {
            self.g[i] = Complex64::new(0.0, 0.0);
        }
        for i in 0..self.n_star {
            let shrink = if r > 0.0 {
                self.xi_low_init[i] * (0.5 / self.r0)
            } else {
                Complex64::new(0.0, 0.0)
            };
            let q = self.noise.q(i + 1);
            self.g[i] = (self.xi[i] * (-lambda[i]) + self.sym[i] + shrink) / q;
        }
    }

    /// Advance every flow by one step.
    pub fn advance(&mut self) -> Result<(), Error> {
        let dt = self.driver.stepper().dt();
        let step_idx = self.driver.step_index();
        let n = self.driver.stepper().n_modes();

        // control signal from the current (u, ξ); also fills self.sym with
        // B(u,ξ)+B(ξ,u)
        self.compute_g();

        // accumulators (left endpoint; the stochastic integral must be Itô)
        let g_sq: f64 = self.g[..self.n_star].iter().map(|g| g.norm_sqr()).sum();
        self.g_sq_integral += dt * g_sq;
        let path = *self.driver.path();
        for i in 0..self.n_star {
            let dw = path.increment(step_idx, i);
            self.pairing += 2.0 * (self.g[i].re * dw.re + self.g[i].im * dw.im);
        }

        // ξ update: exact low-mode shrink, exponential-Euler high modes
        {
            let stepper = self.driver.stepper();
            let decay = stepper.decay();
            let phi1dt = stepper.phi1dt();
            let t_next = (step_idx + 1) as f64 * dt;
            let r_next = (self.r0 - 0.5 * t_next).max(0.0);
            for i in 0..self.n_star {
                self.out[i] = if self.r0 > 0.0 {
                    self.xi_low_init[i] * (r_next / self.r0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            for i in self.n_star..n {
                self.out[i] = self.xi[i] * decay[i] + self.sym[i] * phi1dt[i];
            }
            std::mem::swap(&mut self.xi, &mut self.out);
        }

        // U update (uses the pre-step base state)
        {
            let stepper = self.driver.stepper();
            stepper
                .kernel()
                .apply_sym_into(self.driver.state(), &self.var, &mut self.scratch, &mut self.sym);
            for i in 0..n {
                self.out[i] = self.var[i] * stepper.decay()[i] + self.sym[i] * stepper.phi1dt()[i];
            }
            std::mem::swap(&mut self.var, &mut self.out);
        }

        // D update with the Qg forcing
        {
            let stepper = self.driver.stepper();
            stepper
                .kernel()
                .apply_sym_into(self.driver.state(), &self.mal, &mut self.scratch, &mut self.sym);
            for i in 0..n {
                let q = if i < self.noise.n_modes() { self.noise.q_diag()[i] } else { 0.0 };
                self.out[i] = self.mal[i] * stepper.decay()[i]
                    + (self.sym[i] + self.g[i] * q) * stepper.phi1dt()[i];
            }
            std::mem::swap(&mut self.mal, &mut self.out);
        }

        self.driver.advance()?;

        let err: f64 = (0..n)
            .map(|i| (self.var[i] - self.mal[i] - self.xi[i]).norm_sqr())
            .sum::<f64>()
            .sqrt();
        if !err.is_finite() {
            return Err(Error::BlowUp { t: self.t(), norm: f64::NAN });
        }
        self.rho_max_err = self.rho_max_err.max(err);
        Ok(())
    }
}

/// Integrate the coupled flows to time T, snapshotting every
/// `record_every`-th step (plus the first and last).
pub fn run_controlled_flows(
    x: &ShellState,
    v: &TangentState,
    n_star: usize,
    t_final: f64,
    dt: f64,
    cfg: &ModelConfig,
    noise: &NoiseConfig,
    seed: u64,
    record_every: u64,
) -> Result<ControlledFlows, Error> {
    let record_every = record_every.max(1);
    let mut run = ControlledRun::new(x, v, n_star, dt, cfg, noise, seed)?;
    let n_steps = steps_for(t_final, dt);
    let mut flows = ControlledFlows {
        times: Vec::new(),
        base_states: Vec::new(),
        variational: Vec::new(),
        malliavin: Vec::new(),
        xi: Vec::new(),
        g_signal: Vec::new(),
        radius: Vec::new(),
        zeta_sq: Vec::new(),
        n_star,
        dt,
        rho_max_err: 0.0,
        g_sq_integral: 0.0,
        pairing: 0.0,
    };
    let mut snapshot = |run: &mut ControlledRun| {
        flows.times.push(run.t());
        flows.base_states.push(run.base_state());
        flows.variational.push(run.variational_state());
        flows.malliavin.push(run.malliavin_state());
        flows.xi.push(run.xi_state());
        flows.g_signal.push(run.current_g());
        flows.radius.push(run.radius());
        flows.zeta_sq.push(run.zeta_sq());
    };
    snapshot(&mut run);
    for s in 1..=n_steps {
        run.advance()?;
        if s % record_every == 0 || s == n_steps {
            snapshot(&mut run);
        }
    }
    flows.rho_max_err = run.rho_max_err;
    flows.g_sq_integral = run.g_sq_integral;
    flows.pairing = run.pairing;
    Ok(flows)
}

/// Build the controlled flows on top of an existing full-resolution base
/// record (the record carries its own seed and step size).
pub fn build_control(
    u_traj: &TrajectoryRecord,
    v: &TangentState,
    n_star: usize,
    cfg: &ModelConfig,
    noise: &NoiseConfig,
) -> Result<ControlledFlows, Error> {
    if u_traj.record_every != 1 {
        return Err(Error::Precondition(
            "control construction needs the base record at full resolution".into(),
        ));
    }
    let t_final = *u_traj.times.last().ok_or_else(|| {
        Error::Precondition("empty base record".into())
    })?;
    let x = &u_traj.states[0];
    let flows = run_controlled_flows(
        x, v, n_star, t_final, u_traj.dt, cfg, noise, u_traj.seed, 1,
    )?;
    // the rebuilt base path must be the recorded one
    let rebuilt = flows.base_states.last().expect("snapshots nonempty");
    let drift = rebuilt
        .sub(u_traj.final_state())
        .map(|d| d.h_norm())
        .unwrap_or(f64::INFINITY);
    if drift > 1e-12 * (1.0 + u_traj.final_state().h_norm()) {
        return Err(Error::Precondition(format!(
            "base record does not match its seed/dt (drift {drift:.3e})"
        )));
    }
    Ok(flows)
}

/// max_t |U(t) - D(t) - ξ(t)| over every step of the construction.
pub fn verify_rho_identity(flows: &ControlledFlows) -> f64 {
    flows.rho_max_err
}

/// How the Malliavin direction is chosen in the integration-by-parts probe.
#[derive(Clone, Debug)]
pub enum ControlChoice {
    /// Constant-in-time deterministic g (per-mode complex amplitudes).
    Deterministic(Vec<Complex64>),
    /// The low-mode-killing construction for a tangent direction v.
    LowModeKilling { v: TangentState, n_star: usize },
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct IbpEstimate {
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_stderr: f64,
    pub rhs_stderr: f64,
    /// standard error of the per-sample difference lhs - rhs
    pub stderr: f64,
    pub samples: usize,
}

/// Monte Carlo check of E[DΦ(u(T))[D(T)]] = E[Φ(u(T)) ∫₀ᵀ(g,dW)].
pub fn integration_by_parts_mc(
    phi: &StateFunctional,
    x: &ShellState,
    t_final: f64,
    dt: f64,
    control: &ControlChoice,
    cfg: &ModelConfig,
    noise: &NoiseConfig,
    m_samples: usize,
    seed: u64,
) -> Result<IbpEstimate, Error> {
    if m_samples < 100 {
        return Err(Error::Precondition(format!(
            "integration-by-parts needs at least 100 samples for a meaningful stderr, got {m_samples}"
        )));
    }
    use rayon::prelude::*;
    let pairs: Result<Vec<(f64, f64)>, Error> = (0..m_samples)
        .into_par_iter()
        .map(|m| -> Result<(f64, f64), Error> {
            let sample_seed = crate::rng::mix64(seed ^ (m as u64).wrapping_mul(0x9e3779b97f4a7c15));
            match control {
                ControlChoice::Deterministic(g) => {
                    let stepper = Stepper::new(cfg, noise, dt)?;
                    let path = WienerPath::new(sample_seed, dt);
                    let mut driver = PathDriver::new(stepper, x, path)?;
                    let n = cfg.n_modes;
                    let mut d = vec![Complex64::new(0.0, 0.0); n];
                    let mut scratch = vec![Complex64::new(0.0, 0.0); n];
                    let mut sym = vec![Complex64::new(0.0, 0.0); n];
                    let mut out = vec![Complex64::new(0.0, 0.0); n];
                    let mut pairing = 0.0f64;
                    let n_steps = steps_for(t_final, dt);
                    for s in 0..n_steps {
                        for (i, gi) in g.iter().enumerate() {
                            if gi.norm_sqr() > 0.0 {
                                let dw = path.increment(s, i);
                                pairing += 2.0 * (gi.re * dw.re + gi.im * dw.im);
                            }
                        }
                        let stepper = driver.stepper();
                        stepper.kernel().apply_sym_into(driver.state(), &d, &mut scratch, &mut sym);
                        for i in 0..n {
                            let q = if i < noise.n_modes() { noise.q_diag()[i] } else { 0.0 };
                            let force = if i < g.len() { g[i] * q } else { Complex64::new(0.0, 0.0) };
                            out[i] = d[i] * stepper.decay()[i] + (sym[i] + force) * stepper.phi1dt()[i];
                        }
                        std::mem::swap(&mut d, &mut out);
                        driver.advance()?;
                    }
                    let u_t = driver.to_shell_state();
                    let d_t = ShellState::new(d).expect("finite");
                    Ok((phi.derivative(&u_t, &d_t), phi.value(&u_t) * pairing))
                }
                ControlChoice::LowModeKilling { v, n_star } => {
                    let mut run =
                        ControlledRun::new(x, v, *n_star, dt, cfg, noise, sample_seed)?;
                    let n_steps = steps_for(t_final, dt);
                    for _ in 0..n_steps {
                        run.advance()?;
                    }
                    let u_t = run.base_state();
                    let d_t = run.malliavin_state();
                    Ok((phi.derivative(&u_t, &d_t), phi.value(&u_t) * run.pairing()))
                }
            }
        })
        .collect();
    let pairs = pairs?;
    let lhs_samples: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let rhs_samples: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let diff_samples: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    let (lhs, lhs_se) = mean_stderr(&lhs_samples);
    let (rhs, rhs_se) = mean_stderr(&rhs_samples);
    let (_, diff_se) = mean_stderr(&diff_samples);
    Ok(IbpEstimate {
        lhs,
        rhs,
        lhs_stderr: lhs_se,
        rhs_stderr: rhs_se,
        stderr: diff_se,
        samples: m_samples,
    })
}

/// Terminal state of the path whose drift is shifted by η·Qg, with g frozen
/// per step; the finite-difference side of the Malliavin chain rule.
pub fn integrate_with_drift_shift(
    x: &ShellState,
    t_final: f64,
    dt: f64,
    cfg: &ModelConfig,
    noise: &NoiseConfig,
    seed: u64,
    g_per_step: &[Vec<Complex64>],
    eta: f64,
) -> Result<ShellState, Error> {
    let stepper = Stepper::new(cfg, noise, dt)?;
    let path = WienerPath::new(seed, dt);
    let n = cfg.n_modes;
    let mut u = x.amps().to_vec();
    let mut b = vec![Complex64::new(0.0, 0.0); n];
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    let n_steps = steps_for(t_final, dt);
    for s in 0..n_steps {
        stepper.kernel().apply_into(&u, &u, &mut b);
        let g = &g_per_step[s as usize];
        for i in 0..n {
            let q = if i < noise.n_modes() { noise.q_diag()[i] } else { 0.0 };
            let shift = if i < g.len() { g[i] * (q * eta) } else { Complex64::new(0.0, 0.0) };
            out[i] = u[i] * stepper.decay()[i] + (b[i] + shift) * stepper.phi1dt()[i];
        }
        for &i in stepper.active() {
            out[i] += path.standard_gaussian(s, i) * stepper.ou_amp()[i];
        }
        std::mem::swap(&mut u, &mut out);
    }
    ShellState::new(u).map_err(|_| Error::BlowUp { t: t_final, norm: f64::NAN })
}

/// Estimate of sup_{t,|x|≤R,|v|≤1} |DP_t f(x)[v]| via the control
/// decomposition DP_t f(x)[v] = E{f(u(t)) ∫(g,dW)} + E{Df(u(t))[ξ(t)]},
/// on grids of initial states, directions and horizons; verifies the sup
/// stops growing in the horizon.
#[allow(clippy::too_many_arguments)]
pub fn gradient_bound_probe(
    f: &StateFunctional,
    radius: f64,
    t_grid: &[f64],
    x_grid: &[ShellState],
    v_grid: &[TangentState],
    n_star: usize,
    dt: f64,
    cfg: &ModelConfig,
    noise: &NoiseConfig,
    m_samples: usize,
    seed: u64,
    condition_satisfied: bool,
) -> Result<ProbeReport, Error> {
    use rayon::prelude::*;
    let mut t_sorted: Vec<f64> = t_grid.to_vec();
    t_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let t_max = *t_sorted.last().ok_or_else(|| Error::Precondition("empty horizon grid".into()))?;
    let snap_steps: Vec<u64> = t_sorted.iter().map(|t| steps_for(*t, dt)).collect();

    // estimates[xi][vi][ti]
    let mut estimates = vec![vec![vec![0.0f64; t_sorted.len()]; v_grid.len()]; x_grid.len()];
    let mut stderrs = estimates.clone();
    for (xi, x) in x_grid.iter().enumerate() {
        if x.h_norm() > radius + 1e-12 {
            return Err(Error::Precondition(format!(
                "grid point {xi} lies outside |x| ≤ {radius}"
            )));
        }
        for (vi, v) in v_grid.iter().enumerate() {
            let per_sample: Result<Vec<Vec<f64>>, Error> = (0..m_samples)
                .into_par_iter()
                .map(|m| -> Result<Vec<f64>, Error> {
                    let sample_seed = crate::rng::mix64(
                        seed ^ ((xi * 1009 + vi * 9176 + m) as u64)
                            .wrapping_mul(0x9e3779b97f4a7c15),
                    );
                    let mut run = ControlledRun::new(x, v, n_star, dt, cfg, noise, sample_seed)?;
                    let mut vals = Vec::with_capacity(snap_steps.len());
                    let mut next = 0usize;
                    let total = steps_for(t_max, dt);
                    for s in 0..=total {
                        while next < snap_steps.len() && snap_steps[next] == s {
                            let u_t = run.base_state();
                            let xi_t = run.xi_state();
                            vals.push(
                                f.value(&u_t) * run.pairing() + f.derivative(&u_t, &xi_t),
                            );
                            next += 1;
                        }
                        if s < total {
                            run.advance()?;
                        }
                    }
                    Ok(vals)
                })
                .collect();
            let per_sample = per_sample?;
            for (ti, _) in t_sorted.iter().enumerate() {
                let col: Vec<f64> = per_sample.iter().map(|v| v[ti]).collect();
                let (m, se) = mean_stderr(&col);
                estimates[xi][vi][ti] = m;
                stderrs[xi][vi][ti] = se;
            }
        }
    }

    // running sup over horizons
    let mut sup_by_horizon = vec![0.0f64; t_sorted.len()];
    let mut running = 0.0f64;
    for ti in 0..t_sorted.len() {
        for row in &estimates {
            for col in row {
                running = running.max(col[ti].abs());
            }
        }
        sup_by_horizon[ti] = running;
    }
    let sup = running;

    // plateau check between the last horizon and the horizon nearest T/4
    let quarter_idx = t_sorted
        .iter()
        .position(|t| *t >= t_max / 4.0)
        .unwrap_or(0);
    let base = sup_by_horizon[quarter_idx].max(1e-12);
    let ratio = sup / base;
    let plateaued = ratio <= 1.2;

    let mut report = ProbeReport::new("gradient_bound_probe")
        .input("seed", seed)
        .input("samples", m_samples)
        .input("dt", dt)
        .input("radius", radius)
        .input("n_star", n_star)
        .input("t_grid", &t_sorted)
        .input("x_grid_norms", x_grid.iter().map(|x| x.h_norm()).collect::<Vec<_>>())
        .input("v_grid_norms", v_grid.iter().map(|v| v.h_norm()).collect::<Vec<_>>())
        .input("functional", f.name())
        .input("c1_norm", f.c1_norm())
        .number("sup_estimate", sup)
        .number("sup_by_horizon", &sup_by_horizon)
        .number("plateau_ratio", ratio)
        .number(
            "max_stderr",
            stderrs
                .iter()
                .flatten()
                .flatten()
                .fold(0.0f64, |a, b| a.max(*b)),
        )
        .verdict(if plateaued { Verdict::Pass } else { Verdict::Fail });
    if !condition_satisfied {
        report = report.note("noise-rank condition not satisfied; probe ran anyway");
        report.verdict = Verdict::Inconclusive;
    }
    Ok(report)
}
