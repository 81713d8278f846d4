// scratch: timing and value preflight for the desk-scale criteria
use std::time::Instant;

use shellflow::noise::NoiseConfig;
use shellflow::probes;
use shellflow::shell::{ModelConfig, ShellState, Variant};

fn desk() -> (ModelConfig, NoiseConfig) {
    let m = ModelConfig { nu: 1.0, k0: 2.0, a: 1.0, b: -0.5, variant: Variant::Goy, n_modes: 16 };
    let q = NoiseConfig::uniform(16, 4, 0.3);
    (m, q)
}

fn main() {
    let (m, q) = desk();
    let which = std::env::args().nth(1).unwrap_or_default();

    if which == "energy" || which.is_empty() {
        let t = Instant::now();
        let rep = probes::energy_balance_mc(&ShellState::zeros(16), 5.0, 1e-4, &m, &q, 2000, 7).unwrap();
        println!("ENERGY [{:?}] {}", t.elapsed(), rep.to_json());
    }
    if which == "expmom" || which.is_empty() {
        let t = Instant::now();
        let eta = m.nu / (2.0 * q.max_q2());
        for x in [ShellState::zeros(16), ShellState::unit(16, 1)] {
            let rep = probes::exp_moment_mc(&x, 5.0, eta, 1e-4, &m, &q, 10_000, 7).unwrap();
            println!(
                "EXPMOM |x|={} [{:?}] est={} se={} bound={} verdict={}",
                x.h_norm(),
                t.elapsed(),
                rep.get_number("estimate").unwrap(),
                rep.get_number("stderr").unwrap(),
                rep.get_number("bound").unwrap(),
                rep.verdict
            );
        }
    }
    if which == "cheby" || which.is_empty() {
        let t = Instant::now();
        let grid = probes::sphere_grid(16, 1.0, 3, 7);
        let rep = probes::average_boundedness_probe(1.0, 2.0, &[10.0], &grid, 1e-4, &m, &q, 2000, 7).unwrap();
        println!("CHEBY [{:?}] verdict={} worst_excess={}", t.elapsed(), rep.verdict, rep.get_number("worst_excess").unwrap());
    }
    if which == "conc" || which.is_empty() {
        let t = Instant::now();
        let grid = probes::sphere_grid(16, 2.0, 3, 7);
        let rep = probes::concentration_probe(0.5, 2.0, &grid, 1e-4, &m, &q, 7, 2000).unwrap();
        println!(
            "CONC [{:?}] verdict={} alpha={} se={} t0={}",
            t.elapsed(),
            rep.verdict,
            rep.get_number("alpha_hat").unwrap(),
            rep.get_number("stderr").unwrap(),
            rep.get_number("t0").unwrap()
        );
    }
    if which == "eprop" || which.is_empty() {
        let t = Instant::now();
        let psi = shellflow::functional::StateFunctional::TanhRe1;
        let rep = probes::e_property_probe(
            &psi,
            &ShellState::zeros(16),
            &[0.4, 0.2, 0.1],
            &[0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0],
            1e-4,
            &m,
            &q,
            300,
            7,
        )
        .unwrap();
        println!("EPROP [{:?}] {}", t.elapsed(), rep.to_json());
    }
    if which == "stable-small" {
        let t = Instant::now();
        let x2 = ShellState::unit(16, 1).scaled(5.0);
        let rep = probes::stability_experiment(
            &ShellState::zeros(16), &x2, &[12.5, 25.0, 50.0], 1e-4, &m, &q, 50, 4, 7,
        )
        .unwrap();
        println!("STABLE-SMALL [{:?}] {}", t.elapsed(), rep.to_json());
    }
    if which == "stable" {
        let t = Instant::now();
        let x2 = ShellState::unit(16, 1).scaled(5.0);
        let rep = probes::stability_experiment(
            &ShellState::zeros(16), &x2, &[125.0, 250.0, 500.0], 1e-4, &m, &q, 500, 4, 7,
        )
        .unwrap();
        println!("STABLE [{:?}] {}", t.elapsed(), rep.to_json());
    }
}
