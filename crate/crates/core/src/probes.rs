//! Monte Carlo probes over ensembles of shell paths: energy balance,
//! exponential moments, time-averaged occupation bounds, concentration near
//! the origin, equicontinuity of the transition semigroup, and convergence
//! of Cesàro occupation measures from different starting points.
//!
//! Every probe fans samples out with rayon, collects per-sample results in
//! index order, and reduces sequentially, so reports are byte-identical for
//! any worker count. One-sided bounds are compared one-sidedly; identities
//! get two-sided tolerances of 3 standard errors plus an O(dt) allowance.

use rayon::prelude::*;

use crate::functional::StateFunctional;
use crate::integrate::{steps_for, PathDriver, Stepper};
use crate::measure::{dual_lipschitz_distance, EmpiricalMeasure, TestDictionary};
use crate::noise::{NoiseConfig, WienerPath};
use crate::report::{mean_stderr, ProbeReport, Verdict};
use crate::rng::{mix64, streams, RngKey};
use crate::shell::{ModelConfig, ShellState};
use crate::Error;

/// Fixed seed for the distance dictionary so distances are comparable
/// across experiments.
pub const DISTANCE_DICTIONARY_SEED: u64 = 0xd1c7;

fn sample_seed(seed: u64, idx: u64) -> u64 {
    mix64(seed ^ idx.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Deterministic grid of `count` states on the sphere |x| = radius: the
/// first coordinate state plus seeded random directions.
pub fn sphere_grid(n_modes: usize, radius: f64, count: usize, seed: u64) -> Vec<ShellState> {
    let mut grid = Vec::with_capacity(count);
    if count == 0 {
        return grid;
    }
    grid.push(ShellState::unit(n_modes, 1).scaled(radius));
    let key = RngKey::new(seed, streams::DIRECTIONS);
    for i in 1..count {
        grid.push(ShellState::random(n_modes, radius, 1.0, key, i as u64));
    }
    grid
}

/// E|u(T)|² + 2ν E∫₀ᵀ‖u‖²ds against |x|² + TrQ²·T.
pub fn energy_balance_mc(
    x: &ShellState,
    t_final: f64,
    dt: f64,
    cfg: &ModelConfig,
    noise: &NoiseConfig,
    m_samples: usize,
    seed: u64,
) -> Result<ProbeReport, Error> {
    if m_samples < 100 {
        return Err(Error::Precondition(format!(
            "energy balance needs at least 100 samples, got {m_samples}"
        )));
    }
    let results: Vec<Result<f64, Error>> = (0..m_samples)
        .into_par_iter()
        .map(|m| {
            let stepper = Stepper::new(cfg, noise, dt)?;
            let path = WienerPath::new(sample_seed(seed, m as u64), dt);
            let mut driver = PathDriver::new(stepper, x, path)?;
            let n_steps = steps_for(t_final, dt);
            for _ in 0..n_steps {
                driver.advance()?;
            }
            Ok(driver.h_norm_sq() + 2.0 * cfg.nu * driver.dissipation_integral())
        })
        .collect();

    let rhs = x.h_norm_sq() + noise.trace_q2() * t_final;
    let mut report = ProbeReport::new("energy_balance")
        .input("seed", seed)
        .input("samples", m_samples)
        .input("t_final", t_final)
        .input("dt", dt)
        .input("x_norm", x.h_norm());

    let mut samples = Vec::with_capacity(m_samples);
    for r in results {
        match r {
            Ok(v) => samples.push(v),
            Err(Error::BlowUp { t, norm }) => {
                return Ok(report
                    .note(format!("path blow-up at t = {t}, |u| = {norm}"))
                    .verdict(Verdict::Fail));
            }
            Err(e) => return Err(e),
        }
    }
    let (mean, se) = mean_stderr(&samples);
    let residual = mean - rhs;
    let tol = 3.0 * se + 10.0 * dt * rhs.abs().max(noise.trace_q2() * t_final);
    let verdict = if residual.abs() <= tol { Verdict::Pass } else { Verdict::Fail };
    report = report
        .number("estimate", mean)
        .number("stderr", se)
        .number("expected", rhs)
        .number("residual", residual)
        .number("tolerance", tol)
        .verdict(verdict);
    Ok(report)
}

/// One-sided check of E exp(η|u(t)|² + ην∫₀ᵗ‖u‖²) ≤ 2 exp(ηTrQ²t + η|x|²).
pub fn exp_moment_mc(
    x: &ShellState,
    t_final: f64,
    eta: f64,
    dt: f64,
    cfg: &ModelConfig,
    noise: &NoiseConfig,
    m_samples: usize,
    seed: u64,
) -> Result<ProbeReport, Error> {
    let eta_max = cfg.nu / (2.0 * noise.max_q2());
    if !(eta > 0.0) || eta > eta_max * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!(
            "eta must lie in (0, {eta_max}], got {eta}"
        )));
    }
    let samples: Result<Vec<f64>, Error> = (0..m_samples)
        .into_par_iter()
        .map(|m| {
            let stepper = Stepper::new(cfg, noise, dt)?;
            let path = WienerPath::new(sample_seed(seed, m as u64), dt);
            let mut driver = PathDriver::new(stepper, x, path)?;
            let n_steps = steps_for(t_final, dt);
            for _ in 0..n_steps {
                driver.advance()?;
            }
            Ok((eta * driver.h_norm_sq() + eta * cfg.nu * driver.dissipation_integral()).exp())
        })
        .collect();
    let samples = samples?;
    let (mean, se) = mean_stderr(&samples);
    let bound = 2.0 * (eta * noise.trace_q2() * t_final + eta * x.h_norm_sq()).exp();
    let rel_se = if mean > 0.0 { se / mean } else { 0.0 };
    let verdict = if mean <= bound * (1.0 + 3.0 * rel_se) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(ProbeReport::new("exp_moment")
        .input("seed", seed)
        .input("samples", m_samples)
        .input("t_final", t_final)
        .input("dt", dt)
        .input("eta", eta)
        .input("x_norm", x.h_norm())
        .number("estimate", mean)
        .number("stderr", se)
        .number("bound", bound)
        .verdict(verdict))
}

/// Time-averaged exceedance probabilities (1/T)∫₀ᵀ P(|u^x(s)| > R) ds for
/// every grid start and horizon, against (TrQ² + r²/T)/(νR²).
#[allow(clippy::too_many_arguments)]
pub fn average_boundedness_probe(
    r: f64,
    big_r: f64,
    t_grid: &[f64],
    x_grid: &[ShellState],
    dt: f64,
    cfg: &ModelConfig,
    noise: &NoiseConfig,
    m_samples: usize,
    seed: u64,
) -> Result<ProbeReport, Error> {
    if !(big_r > 0.0) {
        return Err(Error::Precondition("R must be positive".into()));
    }
    let mut t_sorted = t_grid.to_vec();
    t_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let t_max = *t_sorted
        .last()
        .ok_or_else(|| Error::Precondition("empty horizon grid".into()))?;
    let grid_steps: Vec<u64> = t_sorted.iter().map(|t| steps_for(*t, dt)).collect();
    let threshold_sq = big_r * big_r;

    let mut estimates = Vec::new();
    let mut stderrs = Vec::new();
    let mut bounds = Vec::new();
    let mut worst_excess = f64::NEG_INFINITY;

    for x in x_grid {
        let per_sample: Result<Vec<Vec<f64>>, Error> = (0..m_samples)
            .into_par_iter()
            .map(|m| {
                let stepper = Stepper::new(cfg, noise, dt)?;
                let path = WienerPath::new(sample_seed(seed, m as u64), dt);
                let mut driver = PathDriver::new(stepper, x, path)?;
                let total = steps_for(t_max, dt);
                let mut exceed = 0u64;
                let mut fractions = Vec::with_capacity(grid_steps.len());
                let mut gi = 0usize;
                for s in 0..total {
                    if driver.h_norm_sq() > threshold_sq {
                        exceed += 1;
                    }
                    driver.advance()?;
                    while gi < grid_steps.len() && grid_steps[gi] == s + 1 {
                        fractions.push(exceed as f64 / (s + 1) as f64);
                        gi += 1;
                    }
                }
                Ok(fractions)
            })
            .collect();
        let per_sample = per_sample?;
        let mut est_row = Vec::new();
        let mut se_row = Vec::new();
        let mut bound_row = Vec::new();
        for (ti, t) in t_sorted.iter().enumerate() {
            let col: Vec<f64> = per_sample.iter().map(|v| v[ti]).collect();
            let (mean, se) = mean_stderr(&col);
            let bound = (noise.trace_q2() + r * r / t) / (cfg.nu * big_r * big_r);
            worst_excess = worst_excess.max(mean - (bound + 3.0 * se));
            est_row.push(mean);
            se_row.push(se);
            bound_row.push(bound);
        }
        estimates.push(est_row);
        stderrs.push(se_row);
        bounds.push(bound_row);
    }

    let verdict = if worst_excess <= 0.0 { Verdict::Pass } else { Verdict::Fail };
    Ok(ProbeReport::new("average_boundedness")
        .input("seed", seed)
        .input("samples", m_samples)
        .input("dt", dt)
        .input("r", r)
        .input("R", big_r)
        .input("t_grid", &t_sorted)
        .input("x_grid_norms", x_grid.iter().map(|x| x.h_norm()).collect::<Vec<_>>())
        .number("estimates", &estimates)
        .number("stderrs", &stderrs)
        .number("bounds", &bounds)
        .number("worst_excess", worst_excess)
        .verdict(verdict))
}

/// Finds t₀ from the dissipative decay bound, checks the deterministic flow
/// reaches B(0, ε/2) by then, and estimates
/// α̂ = min over grid starts of P(u^x(t₀) ∈ B(0, ε)).
#[allow(clippy::too_many_arguments)]
pub fn concentration_probe(
    eps: f64,
    r: f64,
    x_grid: &[ShellState],
    dt: f64,
    cfg: &ModelConfig,
    noise: &NoiseConfig,
    seed: u64,
    m_samples: usize,
) -> Result<ProbeReport, Error> {
    if !(eps > 0.0) || !(r > 0.0) {
        return Err(Error::Precondition("need eps > 0 and r > 0".into()));
    }
    let k1 = cfg.wavenumber(1);
    let t0 = (2.0 * r / eps).ln().max(0.0) / (cfg.nu * k1 * k1);
    let n_steps = steps_for(t0.max(dt), dt);
    let t0 = n_steps as f64 * dt;

    // deterministic decay to ε/2 for every grid start
    let zero_noise = NoiseConfig::zero(cfg.n_modes);
    let mut det_norms = Vec::new();
    for x in x_grid {
        if x.h_norm() > r * (1.0 + 1e-9) {
            return Err(Error::Precondition(format!(
                "grid start norm {} exceeds r = {r}",
                x.h_norm()
            )));
        }
        let stepper = Stepper::new(cfg, &zero_noise, dt)?;
        let mut driver = PathDriver::new(stepper, x, WienerPath::new(0, dt))?;
        for _ in 0..n_steps {
            driver.advance()?;
        }
        det_norms.push(driver.h_norm_sq().sqrt());
    }

    let deterministic = noise.is_zero();
    let effective_m = if deterministic { 1 } else { m_samples };
    let mut alphas = Vec::new();
    let mut ses = Vec::new();
    for x in x_grid {
        let hits: Result<Vec<f64>, Error> = (0..effective_m)
            .into_par_iter()
            .map(|m| {
                let stepper = Stepper::new(cfg, noise, dt)?;
                let path = WienerPath::new(sample_seed(seed, m as u64), dt);
                let mut driver = PathDriver::new(stepper, x, path)?;
                for _ in 0..n_steps {
                    driver.advance()?;
                }
                Ok(if driver.h_norm_sq() < eps * eps { 1.0 } else { 0.0 })
            })
            .collect();
        let hits = hits?;
        let (alpha, se) = mean_stderr(&hits);
        alphas.push(alpha);
        ses.push(se);
    }
    let (argmin, _) = alphas
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .expect("grid nonempty");
    let alpha_hat = alphas[argmin];
    let se_hat = ses[argmin];
    let det_ok = det_norms.iter().all(|n| *n <= eps / 2.0 * (1.0 + 1e-9));
    let verdict = if det_ok && alpha_hat - 3.0 * se_hat > 0.0 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(ProbeReport::new("concentration")
        .input("seed", seed)
        .input("samples", effective_m)
        .input("dt", dt)
        .input("eps", eps)
        .input("r", r)
        .input("x_grid_norms", x_grid.iter().map(|x| x.h_norm()).collect::<Vec<_>>())
        .number("t0", t0)
        .number("deterministic_norms_at_t0", &det_norms)
        .number("alpha_hat", alpha_hat)
        .number("stderr", se_hat)
        .number("alphas", &alphas)
        .verdict(verdict))
}

/// Worst-case-over-grid estimate of (1/T)∫₀ᵀ P(u^x(s) ∈ B(0,ε)) ds.
#[allow(clippy::too_many_arguments)]
pub fn occupation_lower_bound(
    eps: f64,
    x_grid: &[ShellState],
    t_final: f64,
    dt: f64,
    cfg: &ModelConfig,
    noise: &NoiseConfig,
    m_samples: usize,
    seed: u64,
) -> Result<ProbeReport, Error> {
    let mut estimates = Vec::new();
    let mut ses = Vec::new();
    for x in x_grid {
        let fractions: Result<Vec<f64>, Error> = (0..m_samples)
            .into_par_iter()
            .map(|m| {
                let stepper = Stepper::new(cfg, noise, dt)?;
                let path = WienerPath::new(sample_seed(seed, m as u64), dt);
                let mut driver = PathDriver::new(stepper, x, path)?;
                let total = steps_for(t_final, dt);
                let mut inside = 0u64;
                for _ in 0..total {
                    if driver.h_norm_sq() < eps * eps {
                        inside += 1;
                    }
                    driver.advance()?;
                }
                Ok(inside as f64 / total as f64)
            })
            .collect();
        let (mean, se) = mean_stderr(&fractions?);
        estimates.push(mean);
        ses.push(se);
    }
    let (argmin, _) = estimates
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .ok_or_else(|| Error::Precondition("empty grid".into()))?;
    let worst = estimates[argmin];
    let worst_se = ses[argmin];
    let verdict = if worst - 3.0 * worst_se > 0.0 { Verdict::Pass } else { Verdict::Fail };
    Ok(ProbeReport::new("occupation_lower_bound")
        .input("seed", seed)
        .input("samples", m_samples)
        .input("dt", dt)
        .input("eps", eps)
        .input("t_final", t_final)
        .input("x_grid_norms", x_grid.iter().map(|x| x.h_norm()).collect::<Vec<_>>())
        .number("estimates", &estimates)
        .number("stderrs", &ses)
        .number("worst", worst)
        .number("worst_stderr", worst_se)
        .verdict(verdict))
}

/// Coupled common-noise estimates of |P_tψ(x) - P_tψ(x')| for |x-x'| = δ
/// over a δ-grid; the sup over horizons must shrink when δ halves.
#[allow(clippy::too_many_arguments)]
pub fn e_property_probe(
    psi: &StateFunctional,
    x: &ShellState,
    delta_grid: &[f64],
    t_grid: &[f64],
    dt: f64,
    cfg: &ModelConfig,
    noise: &NoiseConfig,
    m_samples: usize,
    seed: u64,
) -> Result<ProbeReport, Error> {
    let mut t_sorted = t_grid.to_vec();
    t_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let t_max = *t_sorted
        .last()
        .ok_or_else(|| Error::Precondition("empty horizon grid".into()))?;
    let snap_steps: Vec<u64> = t_sorted.iter().map(|t| steps_for(*t, dt)).collect();

    let dir_key = RngKey::new(seed, streams::DIRECTIONS);
    let directions = [
        ShellState::unit(cfg.n_modes, 1),
        ShellState::random(cfg.n_modes, 1.0, 1.0, dir_key, 1),
    ];

    let mut sups = Vec::new();
    let mut sup_ses = Vec::new();
    for &delta in delta_grid {
        let mut sup = 0.0f64;
        let mut sup_se = 0.0f64;
        for dir in &directions {
            let x2 = x.add(&dir.scaled(delta))?;
            let per_sample: Result<Vec<Vec<f64>>, Error> = (0..m_samples)
                .into_par_iter()
                .map(|m| {
                    let s = sample_seed(seed, m as u64);
                    let stepper = Stepper::new(cfg, noise, dt)?;
                    let mut d1 = PathDriver::new(stepper.clone(), x, WienerPath::new(s, dt))?;
                    let mut d2 = PathDriver::new(stepper, &x2, WienerPath::new(s, dt))?;
                    let total = steps_for(t_max, dt);
                    let mut vals = Vec::with_capacity(snap_steps.len());
                    let mut gi = 0usize;
                    for s_idx in 0..=total {
                        while gi < snap_steps.len() && snap_steps[gi] == s_idx {
                            vals.push(
                                psi.value(&d1.to_shell_state()) - psi.value(&d2.to_shell_state()),
                            );
                            gi += 1;
                        }
                        if s_idx < total {
                            d1.advance()?;
                            d2.advance()?;
                        }
                    }
                    Ok(vals)
                })
                .collect();
            let per_sample = per_sample?;
            for ti in 0..t_sorted.len() {
                let col: Vec<f64> = per_sample.iter().map(|v| v[ti]).collect();
                let (mean, se) = mean_stderr(&col);
                if mean.abs() > sup {
                    sup = mean.abs();
                    sup_se = se;
                }
            }
        }
        sups.push(sup);
        sup_ses.push(sup_se);
    }

    // ratio test on consecutive halvings of δ
    let mut ratios = Vec::new();
    let mut pass = true;
    for i in 1..delta_grid.len() {
        if (delta_grid[i] / delta_grid[i - 1] - 0.5).abs() < 1e-9 {
            let hi = sups[i - 1] + 3.0 * sup_ses[i - 1];
            let lo = (sups[i] - 3.0 * sup_ses[i]).max(0.0);
            ratios.push(sups[i] / sups[i - 1].max(1e-300));
            if lo > 0.75 * hi {
                pass = false;
            }
        }
    }
    Ok(ProbeReport::new("e_property")
        .input("seed", seed)
        .input("samples", m_samples)
        .input("dt", dt)
        .input("delta_grid", delta_grid)
        .input("t_grid", &t_sorted)
        .input("psi", psi.name())
        .input("psi_lipschitz", psi.lipschitz())
        .number("sup_estimates", &sups)
        .number("sup_stderrs", &sup_ses)
        .number("halving_ratios", &ratios)
        .verdict(if pass { Verdict::Pass } else { Verdict::Fail }))
}

/// Time-sampled empirical Cesàro measure of the projected trajectory.
#[allow(clippy::too_many_arguments)]
pub fn cesaro_measure(
    x: &ShellState,
    t_final: f64,
    burn_in: f64,
    thin: u64,
    m_projection: usize,
    dt: f64,
    cfg: &ModelConfig,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<EmpiricalMeasure, Error> {
    if burn_in >= t_final {
        return Err(Error::Precondition(format!(
            "burn-in {burn_in} must be below the horizon {t_final}"
        )));
    }
    let thin = thin.max(1);
    let stepper = Stepper::new(cfg, noise, dt)?;
    let mut driver = PathDriver::new(stepper, x, WienerPath::new(seed, dt))?;
    let total = steps_for(t_final, dt);
    let start = steps_for(burn_in, dt);
    let mut measure = EmpiricalMeasure::new(2 * m_projection);
    let mut point = vec![0.0f64; 2 * m_projection];
    for s in 0..=total {
        if s >= start && (s - start) % thin == 0 {
            for (j, a) in driver.state()[..m_projection].iter().enumerate() {
                point[2 * j] = a.re;
                point[2 * j + 1] = a.im;
            }
            measure.push_point(&point);
        }
        if s < total {
            driver.advance()?;
        }
    }
    Ok(measure)
}

struct EnsembleAccumulator {
    cesaro: Vec<EmpiricalMeasure>,
    terminal: Vec<EmpiricalMeasure>,
}

/// Cesàro and terminal-law distances between ensembles started from two
/// points, with a same-start different-seed ensemble as the Monte Carlo
/// floor. Pass: the main distances decrease (within the floor) and the
/// final distance is within twice the floor.
#[allow(clippy::too_many_arguments)]
pub fn stability_experiment(
    x1: &ShellState,
    x2: &ShellState,
    t_grid: &[f64],
    dt: f64,
    cfg: &ModelConfig,
    noise: &NoiseConfig,
    m_samples: usize,
    m_projection: usize,
    seed: u64,
) -> Result<ProbeReport, Error> {
    let mut t_sorted = t_grid.to_vec();
    t_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if t_sorted.is_empty() {
        return Err(Error::Precondition("empty horizon grid".into()));
    }
    let horizons: Vec<u64> = t_sorted.iter().map(|t| steps_for(*t, dt)).collect();
    // per-horizon Cesàro sampling windows: [T/5, T] thinned to ~64 samples
    const SAMPLES_PER_PATH: u64 = 64;
    let windows: Vec<(u64, u64, u64)> = horizons
        .iter()
        .map(|&h| {
            let start = h / 5;
            let stride = ((h - start) / SAMPLES_PER_PATH).max(1);
            (start, stride, h)
        })
        .collect();

    let dim = 2 * m_projection;
    let run_ensemble = |x: &ShellState, ens_seed: u64| -> Result<EnsembleAccumulator, Error> {
        let per_path: Result<Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)>, Error> = (0..m_samples)
            .into_par_iter()
            .map(|m| {
                let stepper = Stepper::new(cfg, noise, dt)?;
                let path = WienerPath::new(sample_seed(ens_seed, m as u64), dt);
                let mut driver = PathDriver::new(stepper, x, path)?;
                let mut ces: Vec<Vec<f64>> = vec![Vec::new(); horizons.len()];
                let mut term: Vec<Vec<f64>> = vec![Vec::new(); horizons.len()];
                let total = *horizons.last().unwrap();
                for s in 0..=total {
                    for (hi, &(start, stride, end)) in windows.iter().enumerate() {
                        if s >= start && s <= end && (s - start) % stride == 0 {
                            for a in driver.state()[..m_projection].iter() {
                                ces[hi].push(a.re);
                                ces[hi].push(a.im);
                            }
                        }
                        if s == end {
                            for a in driver.state()[..m_projection].iter() {
                                term[hi].push(a.re);
                                term[hi].push(a.im);
                            }
                        }
                    }
                    if s < total {
                        driver.advance()?;
                    }
                }
                Ok((ces, term))
            })
            .collect();
        let per_path = per_path?;
        let mut acc = EnsembleAccumulator {
            cesaro: (0..horizons.len()).map(|_| EmpiricalMeasure::new(dim)).collect(),
            terminal: (0..horizons.len()).map(|_| EmpiricalMeasure::new(dim)).collect(),
        };
        for (ces, term) in &per_path {
            for hi in 0..horizons.len() {
                for chunk in ces[hi].chunks_exact(dim) {
                    acc.cesaro[hi].push_point(chunk);
                }
                for chunk in term[hi].chunks_exact(dim) {
                    acc.terminal[hi].push_point(chunk);
                }
            }
        }
        Ok(acc)
    };

    let ens_a = run_ensemble(x1, sample_seed(seed, 1))?; // x1, seed A
    let ens_b = run_ensemble(x1, sample_seed(seed, 2))?; // x1, seed B (floor)
    let ens_c = run_ensemble(x2, sample_seed(seed, 3))?; // x2, seed C

    let dict = TestDictionary::standard(dim, DISTANCE_DICTIONARY_SEED);
    let mut ces_main = Vec::new();
    let mut ces_base = Vec::new();
    let mut term_main = Vec::new();
    let mut term_base = Vec::new();
    for hi in 0..horizons.len() {
        ces_main.push(dual_lipschitz_distance(&ens_a.cesaro[hi], &ens_c.cesaro[hi], &dict)?);
        ces_base.push(dual_lipschitz_distance(&ens_a.cesaro[hi], &ens_b.cesaro[hi], &dict)?);
        term_main.push(dual_lipschitz_distance(&ens_a.terminal[hi], &ens_c.terminal[hi], &dict)?);
        term_base.push(dual_lipschitz_distance(&ens_a.terminal[hi], &ens_b.terminal[hi], &dict)?);
    }

    let floor = ces_base.iter().cloned().fold(0.0f64, f64::max);
    let mut decreasing = true;
    for i in 1..ces_main.len() {
        if ces_main[i] > ces_main[i - 1] + floor {
            decreasing = false;
        }
    }
    let final_ok = *ces_main.last().unwrap() <= 2.0 * ces_base.last().unwrap().max(1e-300);
    let verdict = if decreasing && final_ok { Verdict::Pass } else { Verdict::Fail };

    Ok(ProbeReport::new("stability")
        .input("seed", seed)
        .input("samples", m_samples)
        .input("dt", dt)
        .input("t_grid", &t_sorted)
        .input("m_projection", m_projection)
        .input("x1_norm", x1.h_norm())
        .input("x2_norm", x2.h_norm())
        .input("dictionary_version", dict.version)
        .number("cesaro_main", &ces_main)
        .number("cesaro_baseline", &ces_base)
        .number("terminal_main", &term_main)
        .number("terminal_baseline", &term_base)
        .verdict(verdict))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shell::Variant;

    fn cfg(n: usize) -> ModelConfig {
        ModelConfig { nu: 1.0, k0: 2.0, a: 1.0, b: -0.5, variant: Variant::Goy, n_modes: n }
    }

    fn desk_noise(n: usize) -> NoiseConfig {
        NoiseConfig::uniform(n, 4, 0.3)
    }

    #[test]
    fn energy_balance_deterministic_linear_case() {
        let mut m = cfg(8);
        m.a = 0.0;
        m.b = 0.0;
        let noise = NoiseConfig::zero(8);
        let x = ShellState::unit(8, 1);
        let rep = energy_balance_mc(&x, 1.0, 1e-3, &m, &noise, 100, 1).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass);
        // pathwise identity: residual is pure quadrature error
        assert!(rep.get_number("residual").unwrap().abs() < 1e-3);
    }

    #[test]
    fn energy_balance_stderr_shrinks_with_samples() {
        let m = cfg(8);
        let noise = desk_noise(8);
        let x = ShellState::zeros(8);
        let r1 = energy_balance_mc(&x, 0.5, 1e-3, &m, &noise, 200, 3).unwrap();
        let r2 = energy_balance_mc(&x, 0.5, 1e-3, &m, &noise, 800, 3).unwrap();
        let se1 = r1.get_number("stderr").unwrap();
        let se2 = r2.get_number("stderr").unwrap();
        let ratio = se1 / se2;
        assert!((1.3..=3.2).contains(&ratio), "stderr ratio {ratio} (expected ≈ 2)");
    }

    #[test]
    fn exp_moment_trivial_and_monotone() {
        let m = cfg(8);
        let noise = desk_noise(8);
        let x = ShellState::zeros(8);
        let eta_max = m.nu / (2.0 * noise.max_q2());
        let mut prev = 0.0;
        for frac in [0.25, 0.5, 1.0] {
            let rep = exp_moment_mc(&x, 1.0, eta_max * frac, 1e-3, &m, &noise, 400, 9).unwrap();
            assert_eq!(rep.verdict, Verdict::Pass);
            let est = rep.get_number("estimate").unwrap();
            assert!(est >= 1.0);
            assert!(est >= prev, "monotone in eta");
            prev = est;
        }
        // q ≡ 0, x = 0: integrand is exactly 1 ≤ 2
        let mz = cfg(8);
        let rep = exp_moment_mc(
            &ShellState::zeros(8),
            1.0,
            1.0,
            1e-3,
            &mz,
            &NoiseConfig::zero(8),
            100,
            2,
        )
        .unwrap();
        assert_eq!(rep.get_number("estimate").unwrap(), 1.0);
        assert_eq!(rep.get_number("bound").unwrap(), 2.0);

        assert!(matches!(
            exp_moment_mc(&x, 1.0, eta_max * 2.0, 1e-3, &m, &noise, 100, 1),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn average_boundedness_large_radius_is_empty() {
        let m = cfg(8);
        let noise = desk_noise(8);
        let grid = sphere_grid(8, 1.0, 2, 5);
        let rep = average_boundedness_probe(
            1.0, 1000.0, &[2.0], &grid, 1e-3, &m, &noise, 100, 7,
        )
        .unwrap();
        assert_eq!(rep.verdict, Verdict::Pass);
        let est: Vec<Vec<f64>> =
            serde_json::from_value(rep.numbers["estimates"].clone()).unwrap();
        for row in est {
            for v in row {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn average_boundedness_bound_value_example() {
        // (ν=1, TrQ²=1, r=1, T=10, R=2) ⇒ (1 + 0.1)/4 = 0.275
        let m = cfg(8);
        let noise = NoiseConfig::new(vec![0.5, 0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((noise.trace_q2() - 1.0).abs() < 1e-15);
        let grid = sphere_grid(8, 1.0, 1, 5);
        let rep = average_boundedness_probe(
            1.0, 2.0, &[10.0], &grid, 1e-3, &m, &noise, 100, 7,
        )
        .unwrap();
        let bounds: Vec<Vec<f64>> =
            serde_json::from_value(rep.numbers["bounds"].clone()).unwrap();
        assert!((bounds[0][0] - 0.275).abs() < 1e-12);
    }

    #[test]
    fn exceedance_is_monotone_in_radius() {
        let m = cfg(8);
        let noise = desk_noise(8);
        let grid = sphere_grid(8, 1.0, 1, 5);
        let mut prev = f64::INFINITY;
        for big_r in [0.05, 0.2, 0.8] {
            let rep = average_boundedness_probe(
                1.0, big_r, &[1.0], &grid, 1e-3, &m, &noise, 150, 4,
            )
            .unwrap();
            let est: Vec<Vec<f64>> =
                serde_json::from_value(rep.numbers["estimates"].clone()).unwrap();
            assert!(est[0][0] <= prev + 1e-12, "exceedance must shrink as R grows");
            prev = est[0][0];
        }
    }

    #[test]
    fn concentration_with_zero_noise_is_certain() {
        let m = cfg(8);
        let noise = NoiseConfig::zero(8);
        let grid = sphere_grid(8, 2.0, 3, 11);
        let rep = concentration_probe(0.5, 2.0, &grid, 1e-3, &m, &noise, 1, 500).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass);
        assert_eq!(rep.get_number("alpha_hat").unwrap(), 1.0);
        assert_eq!(rep.get_number("stderr").unwrap(), 0.0);
        // t0 from the linear decay bound
        let k1 = m.wavenumber(1);
        let want_t0 = (2.0 * 2.0 / 0.5f64).ln() / (m.nu * k1 * k1);
        let got_t0 = rep.get_number("t0").unwrap();
        assert!((got_t0 - want_t0).abs() <= 1e-3 + 1e-12);
    }

    #[test]
    fn concentration_is_monotone_in_ball_size() {
        let m = cfg(8);
        let noise = desk_noise(8);
        let grid = sphere_grid(8, 1.0, 2, 3);
        let mut prev = -1.0;
        for eps in [0.2, 0.4, 0.8] {
            let rep = concentration_probe(eps, 1.0, &grid, 1e-3, &m, &noise, 5, 300).unwrap();
            let a = rep.get_number("alpha_hat").unwrap();
            assert!(a + 1e-9 >= prev, "alpha must not shrink as the ball grows");
            prev = a;
        }
    }

    #[test]
    fn occupation_from_origin_with_zero_noise_is_full() {
        let m = cfg(8);
        let noise = NoiseConfig::zero(8);
        let grid = vec![ShellState::zeros(8)];
        let rep =
            occupation_lower_bound(0.5, &grid, 1.0, 1e-3, &m, &noise, 10, 3).unwrap();
        assert_eq!(rep.get_number("worst").unwrap(), 1.0);
    }

    #[test]
    fn cesaro_measure_concentrates_without_noise() {
        let m = cfg(8);
        let noise = NoiseConfig::zero(8);
        let x = ShellState::unit(8, 1).scaled(2.0);
        let mu = cesaro_measure(&x, 2.0, 0.4, 10, 4, 1e-3, &m, &noise, 5).unwrap();
        assert!(!mu.is_empty());
        for i in 0..mu.len() {
            let p = mu.point(i);
            let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm < 0.01, "mass should sit at the origin, |p| = {norm}");
        }
    }

    #[test]
    fn cesaro_thinning_and_seed_stability() {
        let m = cfg(8);
        let noise = desk_noise(8);
        let x = ShellState::zeros(8);
        let dict = TestDictionary::standard(8, DISTANCE_DICTIONARY_SEED);
        let mu_a = cesaro_measure(&x, 40.0, 8.0, 20, 4, 1e-3, &m, &noise, 1).unwrap();
        let mu_b = cesaro_measure(&x, 40.0, 8.0, 20, 4, 1e-3, &m, &noise, 2).unwrap();
        let d_seeds = dual_lipschitz_distance(&mu_a, &mu_b, &dict).unwrap();
        assert!(d_seeds < 0.02, "two seeds, same start: distance {d_seeds}");

        let mu_thin = cesaro_measure(&x, 40.0, 8.0, 200, 4, 1e-3, &m, &noise, 1).unwrap();
        let d_thin = dual_lipschitz_distance(&mu_a, &mu_thin, &dict).unwrap();
        assert!(d_thin < 0.02, "thinning invariance: distance {d_thin}");
    }
}
