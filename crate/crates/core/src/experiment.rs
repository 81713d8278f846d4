//! Experiment orchestration: dispatches a validated configuration to the
//! right probe, fans Monte Carlo work across a scoped thread pool, and
//! writes deterministic artifacts (JSON reports with sorted keys, CSV
//! tables) that embed the resolved configuration and library version.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde_json::Value;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::functional::StateFunctional;
use crate::integrate::{integrate_path, integrate_path_thinned, steps_for};
use crate::markov::{stability_pipeline, FiniteSemigroup};
use crate::noise::{check_noise_condition, NoiseConfig};
use crate::probes;
use crate::report::{ProbeReport, Verdict};
use crate::rng::RngKey;
use crate::shell::{operator_norm_constant, ModelConfig, ShellState};
use crate::tangent::{
    integration_by_parts_mc, run_controlled_flows, ControlChoice,
};
use crate::Error;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug)]
pub struct RunSummary {
    pub reports: Vec<ProbeReport>,
    pub verdict: Verdict,
    pub artifacts: Vec<PathBuf>,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        self.verdict.exit_code()
    }
}

/// Run the configured experiment on `threads` workers (None: all cores),
/// writing artifacts under the configured output directory.
pub fn run(config: &ExperimentConfig, threads: Option<usize>) -> Result<RunSummary, Error> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| run_inner(config))
}

fn run_inner(config: &ExperimentConfig) -> Result<RunSummary, Error> {
    let model = config.model_config();
    let noise = config.noise_config()?;
    let dt = config.numerics.dt;
    let t_final = config.numerics.t_final;
    let samples = config.numerics.samples;
    let seed = config.numerics.seed;
    let out_dir = PathBuf::from(&config.output.dir);
    std::fs::create_dir_all(&out_dir)?;

    let mut reports = Vec::new();
    let mut extra_csv: Vec<(String, String)> = Vec::new();

    match config.experiment {
        ExperimentKind::Simulate => {
            let x = config.initial_state()?;
            let auto = (steps_for(t_final, dt) / 5000).max(1);
            let every = config.params.thin.unwrap_or(auto);
            let rec = integrate_path_thinned(&x, t_final, dt, &model, &noise, seed, every)?;
            extra_csv.push(("trajectory.csv".into(), rec.to_csv()));
            reports.push(
                ProbeReport::new("simulate")
                    .input("seed", seed)
                    .input("dt", dt)
                    .input("t_final", t_final)
                    .input("record_every", every)
                    .number("final_h_norm", rec.h_norms.last().copied().unwrap_or(0.0))
                    .number(
                        "final_dissipation",
                        rec.dissipation_integral.last().copied().unwrap_or(0.0),
                    )
                    .verdict(Verdict::Pass),
            );
        }
        ExperimentKind::Energy => {
            let x = config.initial_state()?;
            reports.push(probes::energy_balance_mc(
                &x, t_final, dt, &model, &noise, samples, seed,
            )?);
        }
        ExperimentKind::ExpMoment => {
            let x = config.initial_state()?;
            let eta = config
                .params
                .eta
                .unwrap_or(model.nu / (2.0 * noise.max_q2()));
            reports.push(probes::exp_moment_mc(
                &x, t_final, eta, dt, &model, &noise, samples, seed,
            )?);
        }
        ExperimentKind::Tangent => {
            reports.push(tangent_consistency_probe(
                &model, &noise, dt, t_final.min(1.0), seed,
            )?);
        }
        ExperimentKind::MalliavinIbp => {
            let x = config.initial_state()?;
            let phi = StateFunctional::TanhRe1;
            let mut g = vec![Complex64::new(0.0, 0.0); model.n_modes];
            g[0] = Complex64::new(1.0, 0.5);
            let est = integration_by_parts_mc(
                &phi,
                &x,
                t_final.min(1.0),
                dt,
                &ControlChoice::Deterministic(g),
                &model,
                &noise,
                samples,
                seed,
            )?;
            let gap = (est.lhs - est.rhs).abs();
            let verdict = if gap <= 3.0 * est.stderr + 10.0 * dt {
                Verdict::Pass
            } else {
                Verdict::Fail
            };
            reports.push(
                ProbeReport::new("integration_by_parts")
                    .input("seed", seed)
                    .input("samples", samples)
                    .input("dt", dt)
                    .input("t_final", t_final.min(1.0))
                    .input("functional", phi.name())
                    .number("lhs", est.lhs)
                    .number("rhs", est.rhs)
                    .number("lhs_stderr", est.lhs_stderr)
                    .number("rhs_stderr", est.rhs_stderr)
                    .number("stderr", est.stderr)
                    .number("gap", gap)
                    .verdict(verdict),
            );
        }
        ExperimentKind::Control => {
            let (report, csv) = control_probe(config, &model, &noise)?;
            extra_csv.push(("flows.csv".into(), csv));
            reports.push(report);
        }
        ExperimentKind::EProperty => {
            let x = config.initial_state()?;
            let psi = StateFunctional::TanhRe1;
            let deltas = if config.params.delta_grid.is_empty() {
                vec![0.4, 0.2, 0.1]
            } else {
                config.params.delta_grid.clone()
            };
            let t_grid = if config.params.t_grid.is_empty() {
                vec![0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0]
            } else {
                config.params.t_grid.clone()
            };
            reports.push(probes::e_property_probe(
                &psi, &x, &deltas, &t_grid, dt, &model, &noise, samples, seed,
            )?);
        }
        ExperimentKind::AvgBounded => {
            let r = config.params.r.unwrap_or(1.0);
            let big_r = config.params.big_r.unwrap_or(2.0);
            let grid = probes::sphere_grid(
                model.n_modes,
                r,
                config.params.grid_points.unwrap_or(3),
                seed,
            );
            let t_grid = if config.params.t_grid.is_empty() {
                vec![t_final]
            } else {
                config.params.t_grid.clone()
            };
            reports.push(probes::average_boundedness_probe(
                r, big_r, &t_grid, &grid, dt, &model, &noise, samples, seed,
            )?);
        }
        ExperimentKind::Concentrate => {
            let eps = config.params.eps.unwrap_or(0.5);
            let r = config.params.r.unwrap_or(2.0);
            let grid = probes::sphere_grid(
                model.n_modes,
                r,
                config.params.grid_points.unwrap_or(3),
                seed,
            );
            reports.push(probes::concentration_probe(
                eps, r, &grid, dt, &model, &noise, seed, samples,
            )?);
        }
        ExperimentKind::Occupation => {
            let eps = config.params.eps.unwrap_or(0.5);
            let r = config.params.r.unwrap_or(5.0);
            let mut grid = vec![ShellState::zeros(model.n_modes)];
            grid.extend(probes::sphere_grid(
                model.n_modes,
                r,
                config.params.grid_points.unwrap_or(2).max(1),
                seed,
            ));
            reports.push(probes::occupation_lower_bound(
                eps, &grid, t_final, dt, &model, &noise, samples, seed,
            )?);
        }
        ExperimentKind::Stability => {
            let x1 = config.initial_state()?;
            let x2 = config.second_state()?;
            let t_grid = if config.params.t_grid.is_empty() {
                vec![t_final / 4.0, t_final / 2.0, t_final]
            } else {
                config.params.t_grid.clone()
            };
            let m_proj = config.params.m_projection.unwrap_or(4);
            reports.push(probes::stability_experiment(
                &x1, &x2, &t_grid, dt, &model, &noise, samples, m_proj, seed,
            )?);
        }
        ExperimentKind::FiniteMarkov => {
            let path = config.params.chain.as_ref().ok_or_else(|| {
                Error::InvalidConfig("params.chain: the finite-state experiment needs a chain file".into())
            })?;
            let text = std::fs::read_to_string(path)?;
            let sg = FiniteSemigroup::from_text(&text)?;
            let eps = config.params.eps.unwrap_or(0.1);
            let n = sg.n_states();
            let phi: Vec<f64> = (0..n)
                .map(|i| sg.point(i).iter().sum::<f64>().tanh())
                .collect();
            let mu1 = sg.dirac(0);
            let mu2 = sg.dirac(n - 1);
            let outcome = stability_pipeline(&sg, &mu1, &mu2, &phi, eps)?;
            let verdict = if outcome.decomposition.eq4_residual <= 1e-12 {
                outcome.brute_force.verdict
            } else {
                Verdict::Fail
            };
            let dec_json = serde_json::to_value(&outcome.decomposition)?;
            reports.push(
                ProbeReport::new("finite_markov")
                    .input("chain", path.clone())
                    .input("eps", eps)
                    .input("n_states", n)
                    .input("z", outcome.z)
                    .input("delta", outcome.delta)
                    .number("decomposition", dec_json)
                    .number("eq4_residual", outcome.decomposition.eq4_residual)
                    .number(
                        "bruteforce_final_diff",
                        outcome.brute_force.get_number("final_diff").unwrap_or(f64::NAN),
                    )
                    .verdict(verdict),
            );
            reports.push(outcome.brute_force);
        }
    }

    let verdict = reports
        .iter()
        .map(|r| r.verdict)
        .fold(Verdict::Pass, Verdict::combine);

    let mut artifacts = Vec::new();
    let report_path = out_dir.join("report.json");
    write_report_bundle(&report_path, config, &reports)?;
    artifacts.push(report_path);

    let summary_path = out_dir.join("summary.csv");
    let mut summary = String::from("probe,verdict\n");
    for r in &reports {
        summary.push_str(&format!("{},{}\n", r.name, r.verdict));
    }
    std::fs::write(&summary_path, summary)?;
    artifacts.push(summary_path);

    for (name, csv) in extra_csv {
        let p = out_dir.join(name);
        std::fs::write(&p, csv)?;
        artifacts.push(p);
    }

    Ok(RunSummary { reports, verdict, artifacts })
}

fn write_report_bundle(
    path: &Path,
    config: &ExperimentConfig,
    reports: &[ProbeReport],
) -> Result<(), Error> {
    let mut bundle: BTreeMap<String, Value> = BTreeMap::new();
    bundle.insert("version".into(), Value::String(VERSION.into()));
    bundle.insert(
        "config".into(),
        serde_json::to_value(config).expect("config serializes"),
    );
    bundle.insert("reports".into(), serde_json::to_value(reports)?);
    let text = serde_json::to_string_pretty(&bundle)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Finite differences of the solution map against the variational flow on
/// common noise: the error ratio between η and η/2 sits near 2.
fn tangent_consistency_probe(
    model: &ModelConfig,
    noise: &NoiseConfig,
    dt: f64,
    t_final: f64,
    seed: u64,
) -> Result<ProbeReport, Error> {
    use rayon::prelude::*;
    let pairs = 10usize;
    let ratios: Result<Vec<f64>, Error> = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let key = RngKey::new(seed, 0xfd).substream(i as u64);
            let x = ShellState::random(model.n_modes, 1.0, 1.0, key.substream(1), 0);
            let v = ShellState::random(model.n_modes, 1.0, 1.0, key.substream(2), 0);
            let path_seed = crate::rng::mix64(seed ^ (i as u64) << 3);
            let base = integrate_path(&x, t_final, dt, model, noise, path_seed)?;
            let mut tang = v.clone();
            for s in &base.states[..base.len() - 1] {
                tang = crate::tangent::step_variational(&tang, s, dt, model)?;
            }
            let err_at = |eta: f64| -> Result<f64, Error> {
                let shifted = integrate_path(
                    &x.add(&v.scaled(eta))?,
                    t_final,
                    dt,
                    model,
                    noise,
                    path_seed,
                )?;
                let fd = shifted
                    .final_state()
                    .sub(base.final_state())?
                    .scaled(1.0 / eta);
                Ok(fd.sub(&tang)?.h_norm())
            };
            Ok(err_at(1e-3)? / err_at(5e-4)?)
        })
        .collect();
    let ratios = ratios?;
    let ok = ratios.iter().all(|r| (1.5..=2.5).contains(r));
    Ok(ProbeReport::new("tangent_consistency")
        .input("seed", seed)
        .input("pairs", pairs)
        .input("dt", dt)
        .input("t_final", t_final)
        .number("ratios", &ratios)
        .verdict(if ok { Verdict::Pass } else { Verdict::Fail }))
}

fn control_probe(
    config: &ExperimentConfig,
    model: &ModelConfig,
    noise: &NoiseConfig,
) -> Result<(ProbeReport, String), Error> {
    let seed = config.numerics.seed;
    let dt = config.numerics.dt;
    let n_star = match config.params.n_star {
        Some(n) => n,
        None => {
            let c_hat = operator_norm_constant(model, 400, seed);
            check_noise_condition(noise, model, c_hat)?.n_star_min
        }
    };
    let key = RngKey::new(seed, 0xc0);
    let x = config.initial_state()?;
    let mut v = ShellState::random(model.n_modes, 1.0, 1.0, key, 0);
    v.scale_mut(0.999);
    let t_final = config.numerics.t_final.max(2.5);
    let flows = run_controlled_flows(
        &x,
        &v,
        n_star,
        t_final,
        dt,
        model,
        noise,
        seed,
        (steps_for(t_final, dt) / 2000).max(1),
    )?;
    let mut low_mode_max_after_two: f64 = 0.0;
    for (i, t) in flows.times.iter().enumerate() {
        if *t >= 2.0 {
            for j in 1..=n_star {
                low_mode_max_after_two = low_mode_max_after_two.max(flows.xi[i].amp(j).norm());
            }
        }
    }
    let rho = flows.rho_max_err;
    let verdict = if low_mode_max_after_two <= 1e-6 && rho <= 1e-3 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let report = ProbeReport::new("control_construction")
        .input("seed", seed)
        .input("dt", dt)
        .input("t_final", t_final)
        .input("n_star", n_star)
        .number("low_mode_max_after_t2", low_mode_max_after_two)
        .number("rho_max_err", rho)
        .number("g_sq_integral", flows.g_sq_integral)
        .verdict(verdict);
    Ok((report, flows.to_csv()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn quick_config(experiment: &str) -> ExperimentConfig {
        let mut doc: toml::Table = crate::config::DEFAULT_CONFIG_TOML.parse().unwrap();
        ExperimentConfig::apply_override(&mut doc, &format!("experiment=\"{experiment}\"")).unwrap();
        ExperimentConfig::apply_override(&mut doc, "model.n_modes=8").unwrap();
        ExperimentConfig::apply_override(&mut doc, "numerics.dt=1e-3").unwrap();
        ExperimentConfig::apply_override(&mut doc, "numerics.t_final=0.5").unwrap();
        ExperimentConfig::apply_override(&mut doc, "numerics.samples=150").unwrap();
        ExperimentConfig::from_toml_str(&toml::to_string(&doc).unwrap()).unwrap()
    }

    #[test]
    fn energy_run_is_byte_identical_across_thread_counts() {
        let tmp = std::env::temp_dir().join(format!("shellflow-test-{}", std::process::id()));
        let mut cfg = quick_config("energy");
        cfg.output.dir = tmp.join("a").to_string_lossy().into_owned();
        let s1 = run(&cfg, Some(1)).unwrap();
        let bytes1 = std::fs::read(&s1.artifacts[0]).unwrap();
        cfg.output.dir = tmp.join("b").to_string_lossy().into_owned();
        let s2 = run(&cfg, Some(2)).unwrap();
        let bytes2 = std::fs::read(&s2.artifacts[0]).unwrap();
        // the embedded config differs only in the output dir; strip it
        let t1 = String::from_utf8(bytes1).unwrap().replace("/a\"", "\"");
        let t2 = String::from_utf8(bytes2).unwrap().replace("/b\"", "\"");
        assert_eq!(t1, t2);
        std::fs::remove_dir_all(&tmp).ok();
    }

    #[test]
    fn simulate_writes_trajectory_csv() {
        let tmp = std::env::temp_dir().join(format!("shellflow-sim-{}", std::process::id()));
        let mut cfg = quick_config("simulate");
        cfg.output.dir = tmp.to_string_lossy().into_owned();
        cfg.params.x = vec![[1.0, 0.0]];
        let s = run(&cfg, Some(1)).unwrap();
        assert_eq!(s.verdict, Verdict::Pass);
        assert!(s.artifacts.iter().any(|p| p.ends_with("trajectory.csv")));
        std::fs::remove_dir_all(&tmp).ok();
    }
}
