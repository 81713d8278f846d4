//! Exact finite-state verification of the stability criterion: the
//! e-property, average boundedness and concentration as decidable
//! predicates on a row-stochastic kernel over metric-embedded points,
//! the constructive geometric decomposition of evolved measures, and
//! brute-force asymptotic stability as the oracle.
//!
//! Time is discrete (P_t = P^t); the criterion's logic never uses
//! continuity in t. Worst cases over measures supported in a set reduce to
//! worst cases over Dirac points, because P^t μ(B) is linear in μ.

use serde::Serialize;

use crate::report::{ProbeReport, Verdict};
use crate::rng::{streams, RngKey};
use crate::Error;

const ROW_SUM_TOL: f64 = 1e-12;

/// A Markov kernel on n states embedded in Euclidean space.
#[derive(Clone, Debug)]
pub struct FiniteSemigroup {
    n: usize,
    dim: usize,
    points: Vec<f64>, // n×dim, row-major
    kernel: Vec<f64>, // n×n, row-major, row-stochastic
}

impl FiniteSemigroup {
    pub fn new(points: Vec<Vec<f64>>, kernel: Vec<Vec<f64>>) -> Result<Self, Error> {
        let n = points.len();
        if n == 0 {
            return Err(Error::InvalidConfig("empty state set".into()));
        }
        let dim = points[0].len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidConfig("inconsistent embedding dimension".into()));
        }
        if kernel.len() != n || kernel.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidConfig("kernel must be n×n".into()));
        }
        let mut flat_p = Vec::with_capacity(n * dim);
        for p in &points {
            flat_p.extend_from_slice(p);
        }
        let mut flat_k = Vec::with_capacity(n * n);
        for row in &kernel {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidConfig(format!(
                    "kernel row sums to {sum}, not 1"
                )));
            }
            if row.iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidConfig("negative kernel entry".into()));
            }
            flat_k.extend_from_slice(row);
        }
        let sg = FiniteSemigroup { n, dim, points: flat_p, kernel: flat_k };
        for i in 0..n {
            for j in i + 1..n {
                if sg.dist(i, j) == 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "embedded points {i} and {j} coincide"
                    )));
                }
            }
        }
        Ok(sg)
    }

    /// Plain-text format: `n d` then n rows of d coordinates, then n rows of
    /// n kernel entries; whitespace separated.
    pub fn from_text(text: &str) -> Result<Self, Error> {
        let mut toks = text.split_whitespace().map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad token {t:?}: {e}")))
        });
        let mut next = |what: &str| -> Result<f64, Error> {
            toks.next()
                .ok_or_else(|| Error::Parse(format!("missing {what}")))?
        };
        let n = next("state count")? as usize;
        let d = next("dimension")? as usize;
        let mut points = Vec::with_capacity(n);
        for i in 0..n {
            let mut p = Vec::with_capacity(d);
            for j in 0..d {
                p.push(next(&format!("coordinate ({i},{j})"))?);
            }
            points.push(p);
        }
        let mut kernel = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = Vec::with_capacity(n);
            for j in 0..n {
                row.push(next(&format!("kernel entry ({i},{j})"))?);
            }
            kernel.push(row);
        }
        FiniteSemigroup::new(points, kernel)
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn kernel_row(&self, i: usize) -> &[f64] {
        &self.kernel[i * self.n..(i + 1) * self.n]
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.point(i)
            .iter()
            .zip(self.point(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Indices strictly within `radius` of point `z` (open ball).
    pub fn ball(&self, z: usize, radius: f64) -> Vec<usize> {
        (0..self.n).filter(|&j| self.dist(z, j) < radius).collect()
    }

    /// Measure evolution: out = μP.
    pub fn push_measure(&self, mu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, &m) in mu.iter().enumerate() {
            if m != 0.0 {
                let row = self.kernel_row(i);
                for j in 0..self.n {
                    out[j] += m * row[j];
                }
            }
        }
        out
    }

    /// Function evolution: out = Pψ.
    pub fn push_function(&self, psi: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                self.kernel_row(i)
                    .iter()
                    .zip(psi)
                    .map(|(p, v)| p * v)
                    .sum()
            })
            .collect()
    }

    pub fn dirac(&self, i: usize) -> Vec<f64> {
        let mut mu = vec![0.0; self.n];
        mu[i] = 1.0;
        mu
    }

    /// Default exhaustive-search horizon.
    pub fn t_max(&self) -> usize {
        50 * self.n
    }

    /// Cesàro-averaged long-run distribution from the uniform start; exists
    /// for every finite stochastic matrix.
    pub fn cesaro_stationary(&self, t_max: usize) -> Vec<f64> {
        let mut mu = vec![1.0 / self.n as f64; self.n];
        let mut acc = vec![0.0; self.n];
        for _ in 0..t_max {
            mu = self.push_measure(&mu);
            for j in 0..self.n {
                acc[j] += mu[j];
            }
        }
        for a in &mut acc {
            *a /= t_max as f64;
        }
        acc
    }
}

fn tv_distance(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Per-pair equicontinuity moduli of {P^tψ}: the exact finite-horizon sup,
/// a tail bound valid for every later time (pairwise TV at the horizon is
/// non-increasing in t), and their maximum, certifying sup over all t ≥ 0.
#[derive(Clone, Debug, Serialize)]
pub struct EPropertyTable {
    pub horizon: usize,
    pub n: usize,
    pub finite_sup: Vec<f64>,
    pub tail_bound: Vec<f64>,
    pub certified_sup: Vec<f64>,
}

impl EPropertyTable {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.certified_sup[i * self.n + j]
    }
}

pub fn check_e_property(sg: &FiniteSemigroup, psi: &[f64], horizon: usize) -> EPropertyTable {
    let n = sg.n_states();
    let psi_sup = psi.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let mut finite_sup = vec![0.0f64; n * n];
    let mut psi_t = psi.to_vec();
    // rows of P^t, evolved together
    let mut rows: Vec<Vec<f64>> = (0..n).map(|i| sg.dirac(i)).collect();
    for t in 0..=horizon {
        for i in 0..n {
            for j in 0..n {
                let d = (psi_t[i] - psi_t[j]).abs();
                if d > finite_sup[i * n + j] {
                    finite_sup[i * n + j] = d;
                }
            }
        }
        if t < horizon {
            psi_t = sg.push_function(&psi_t);
            for row in &mut rows {
                *row = sg.push_measure(row);
            }
        }
    }
    let mut tail_bound = vec![0.0f64; n * n];
    let mut certified = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let tb = psi_sup * tv_distance(&rows[i], &rows[j]);
            tail_bound[i * n + j] = tb;
            certified[i * n + j] = finite_sup[i * n + j].max(tb);
        }
    }
    EPropertyTable { horizon, n, finite_sup, tail_bound, certified_sup: certified }
}

/// Finds the smallest ball whose Cesàro occupation exceeds 1-ε for every
/// Dirac start in `a_set`, with the witness horizon; the whole space always
/// works on a finite chain.
pub fn check_avg_bounded(
    sg: &FiniteSemigroup,
    a_set: &[usize],
    eps: f64,
) -> (Vec<usize>, usize) {
    let n = sg.n_states();
    let t_max = sg.t_max();
    // cesaro[x][j] running sums, refreshed per horizon
    let mut mus: Vec<Vec<f64>> = a_set.iter().map(|&x| sg.dirac(x)).collect();
    let mut sums: Vec<Vec<f64>> = vec![vec![0.0; n]; a_set.len()];
    // candidate radii: unique pairwise distances (plus a tiny one for
    // singleton balls), ascending
    let mut radii: Vec<f64> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                radii.push(sg.dist(i, j) * (1.0 + 1e-12));
            }
        }
    }
    radii.push(f64::MIN_POSITIVE);
    radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
    radii.dedup();

    let mut best: Option<(Vec<usize>, usize, f64)> = None;
    for t in 1..=t_max {
        for (xi, mu) in mus.iter_mut().enumerate() {
            *mu = sg.push_measure(mu);
            for j in 0..n {
                sums[xi][j] += mu[j];
            }
        }
        for &radius in &radii {
            if let Some((_, _, r_best)) = &best {
                if radius >= *r_best {
                    break;
                }
            }
            for c in 0..n {
                let ball = sg.ball(c, radius);
                if ball.is_empty() {
                    continue;
                }
                let ok = (0..a_set.len()).all(|xi| {
                    let occ: f64 = ball.iter().map(|&j| sums[xi][j]).sum::<f64>() / t as f64;
                    occ > 1.0 - eps
                });
                if ok {
                    best = Some((ball, t, radius));
                    break;
                }
            }
        }
    }
    match best {
        Some((ball, t, _)) => (ball, t),
        // eps ≥ 1 or pathological: the full space at horizon 1
        None => ((0..n).collect(), 1),
    }
}

/// Exact concentration certificate: α = max over t ≤ t_max of the minimum
/// over starts in `a_set` of P^t δ_x(B(z,ε)), with the attaining time.
pub fn check_concentrating(
    sg: &FiniteSemigroup,
    z: usize,
    eps: f64,
    a_set: &[usize],
) -> (f64, usize) {
    let ball = sg.ball(z, eps);
    if ball.is_empty() {
        return (0.0, 0);
    }
    let t_max = sg.t_max();
    let mut mus: Vec<Vec<f64>> = a_set.iter().map(|&x| sg.dirac(x)).collect();
    let mut alpha = 0.0f64;
    let mut t_star = 0usize;
    for t in 1..=t_max {
        let mut worst = f64::INFINITY;
        for mu in mus.iter_mut() {
            *mu = sg.push_measure(mu);
            let mass: f64 = ball.iter().map(|&j| mu[j]).sum();
            worst = worst.min(mass);
        }
        if worst > alpha {
            alpha = worst;
            t_star = t;
        }
    }
    (alpha, t_star)
}

/// The constructive decomposition of two evolved measures into a shared
/// geometric mixture supported in a small ball plus vanishing tails:
///     P^{t_1+..+t_l} μ_i = Σ_j γ(1-γ)^{j-1} P^{t_{j+1}+..+t_l} ν_j^i
///                          + (1-γ)^l μ_l^i.
#[derive(Clone, Debug, Serialize)]
pub struct Decomposition {
    pub gamma: f64,
    pub alpha: f64,
    pub times: Vec<usize>,
    pub k: usize,
    pub ball: Vec<usize>,
    /// ν_j^1, ν_j^2 per stage
    pub nu_pairs: Vec<[Vec<f64>; 2]>,
    /// final tails μ_k^1, μ_k^2
    pub mu_tails: [Vec<f64>; 2],
    /// max-entry residual of the identity, both measures
    pub eq4_residual: f64,
    pub phi_sup: f64,
}

pub fn build_decomposition(
    sg: &FiniteSemigroup,
    mu1: &[f64],
    mu2: &[f64],
    z: usize,
    delta: f64,
    eps: f64,
    phi: &[f64],
) -> Result<Decomposition, Error> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Precondition(format!("eps must lie in (0,1), got {eps}")));
    }
    let n = sg.n_states();
    let ball = sg.ball(z, delta);
    if ball.is_empty() {
        return Err(Error::Degenerate("empty target ball".into()));
    }
    let all: Vec<usize> = (0..n).collect();
    let (alpha, t_star) = check_concentrating(sg, z, delta, &all);
    if alpha <= 0.0 {
        return Err(Error::Degenerate(
            "concentration failed at the certificate stage: no common time puts mass in the ball"
                .into(),
        ));
    }
    let gamma = alpha * eps / 2.0;
    let phi_sup = phi.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let mut k = 0usize;
    while 4.0 * (1.0 - gamma).powi(k as i32) * phi_sup > eps {
        k += 1;
        if k > 10_000 {
            return Err(Error::Degenerate("decomposition depth exploded".into()));
        }
    }

    let in_ball = {
        let mut mask = vec![false; n];
        for &j in &ball {
            mask[j] = true;
        }
        mask
    };

    let mut tails = [mu1.to_vec(), mu2.to_vec()];
    let mut nu_pairs: Vec<[Vec<f64>; 2]> = Vec::with_capacity(k);
    let mut times = Vec::with_capacity(k);
    for stage in 0..k {
        let mut nus: [Vec<f64>; 2] = [vec![0.0; n], vec![0.0; n]];
        for i in 0..2 {
            let mut p = tails[i].clone();
            for _ in 0..t_star {
                p = sg.push_measure(&p);
            }
            let mass: f64 = ball.iter().map(|&j| p[j]).sum();
            if mass < gamma {
                return Err(Error::Degenerate(format!(
                    "concentration failed at stage {stage} for measure {i}: ball mass {mass} < γ = {gamma}"
                )));
            }
            for j in 0..n {
                nus[i][j] = if in_ball[j] { p[j] / mass } else { 0.0 };
            }
            let inv = 1.0 / (1.0 - gamma);
            for j in 0..n {
                tails[i][j] = (p[j] - gamma * nus[i][j]) * inv;
            }
        }
        nu_pairs.push(nus);
        times.push(t_star);
    }

    // exact verification of the mixture identity at depth k
    let total_t: usize = times.iter().sum();
    let mut residual = 0.0f64;
    for i in 0..2 {
        let mut lhs = if i == 0 { mu1.to_vec() } else { mu2.to_vec() };
        for _ in 0..total_t {
            lhs = sg.push_measure(&lhs);
        }
        let mut rhs = vec![0.0f64; n];
        for (j, nus) in nu_pairs.iter().enumerate() {
            let remaining: usize = times[j + 1..].iter().sum();
            let mut evolved = nus[i].clone();
            for _ in 0..remaining {
                evolved = sg.push_measure(&evolved);
            }
            let w = gamma * (1.0 - gamma).powi(j as i32);
            for jj in 0..n {
                rhs[jj] += w * evolved[jj];
            }
        }
        let wk = (1.0 - gamma).powi(k as i32);
        for jj in 0..n {
            rhs[jj] += wk * tails[i][jj];
        }
        for jj in 0..n {
            residual = residual.max((lhs[jj] - rhs[jj]).abs());
        }
    }

    Ok(Decomposition {
        gamma,
        alpha,
        times,
        k,
        ball,
        nu_pairs,
        mu_tails: tails,
        eq4_residual: residual,
        phi_sup,
    })
}

/// Exact |⟨φ, P^t μ1⟩ - ⟨φ, P^t μ2⟩| sequences for a dictionary of test
/// functions; with a `(t_after, eps)` threshold the verdict demands the
/// difference stays within eps from t_after on.
pub fn verify_stability_bruteforce(
    sg: &FiniteSemigroup,
    mu1: &[f64],
    mu2: &[f64],
    dictionary: &[Vec<f64>],
    t_max: usize,
    threshold: Option<(usize, f64)>,
) -> ProbeReport {
    let mut a = mu1.to_vec();
    let mut b = mu2.to_vec();
    let mut diffs = Vec::with_capacity(t_max + 1);
    for _ in 0..=t_max {
        let mut worst = 0.0f64;
        for phi in dictionary {
            let da: f64 = a.iter().zip(phi).map(|(m, f)| m * f).sum();
            let db: f64 = b.iter().zip(phi).map(|(m, f)| m * f).sum();
            worst = worst.max((da - db).abs());
        }
        diffs.push(worst);
        a = sg.push_measure(&a);
        b = sg.push_measure(&b);
    }
    let verdict = match threshold {
        Some((t_after, eps)) => {
            let ok = diffs
                .iter()
                .enumerate()
                .filter(|(t, _)| *t >= t_after)
                .all(|(_, d)| *d <= eps + 1e-12);
            if ok {
                Verdict::Pass
            } else {
                Verdict::Fail
            }
        }
        None => {
            let head = diffs
                .iter()
                .take((t_max / 10).max(1))
                .cloned()
                .fold(0.0f64, f64::max);
            let tail = diffs
                .iter()
                .skip(t_max - (t_max / 10).max(1))
                .cloned()
                .fold(0.0f64, f64::max);
            if tail <= (0.5 * head).max(1e-10) {
                Verdict::Pass
            } else {
                Verdict::Fail
            }
        }
    };
    let final_diff = *diffs.last().unwrap();
    ProbeReport::new("finite_stability_bruteforce")
        .input("t_max", t_max)
        .input("threshold", threshold.map(|(t, e)| (t, e)))
        .number("final_diff", final_diff)
        .number("max_diff", diffs.iter().cloned().fold(0.0f64, f64::max))
        .number("diffs_tail", &diffs[diffs.len().saturating_sub(10)..])
        .verdict(verdict)
}

/// Full desk pipeline on one chain: certify the three hypotheses, build the
/// decomposition, and check the brute-force conclusion it predicts.
#[derive(Debug)]
pub struct PipelineOutcome {
    pub delta: f64,
    pub z: usize,
    pub decomposition: Decomposition,
    pub brute_force: ProbeReport,
    pub avg_ball: Vec<usize>,
    pub avg_witness: usize,
}

pub fn stability_pipeline(
    sg: &FiniteSemigroup,
    mu1: &[f64],
    mu2: &[f64],
    phi: &[f64],
    eps: f64,
) -> Result<PipelineOutcome, Error> {
    let n = sg.n_states();
    // z: the most visited point in the long run
    let pi = sg.cesaro_stationary(sg.t_max());
    let z = (0..n)
        .max_by(|&i, &j| pi[i].partial_cmp(&pi[j]).unwrap())
        .expect("nonempty");

    // δ: the largest ball around z on which the certified equicontinuity
    // modulus of φ stays below ε/2 (singleton fallback always exists)
    let table = check_e_property(sg, phi, sg.t_max());
    let mut delta = f64::INFINITY;
    for j in 0..n {
        if j != z {
            delta = delta.min(sg.dist(z, j));
        }
    }
    let mut best_delta = delta * 0.5; // singleton ball
    let mut radii: Vec<f64> = (0..n).filter(|&j| j != z).map(|j| sg.dist(z, j) * (1.0 + 1e-12)).collect();
    radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for r in radii {
        let ball = sg.ball(z, r);
        let ok = ball
            .iter()
            .all(|&i| ball.iter().all(|&j| table.at(i, j) <= eps / 2.0));
        if ok {
            best_delta = r;
        } else {
            break;
        }
    }

    let all: Vec<usize> = (0..n).collect();
    let (avg_ball, avg_witness) = check_avg_bounded(sg, &all, eps.min(0.5));
    let decomposition = build_decomposition(sg, mu1, mu2, z, best_delta, eps, phi)?;
    let total_t: usize = decomposition.times.iter().sum();
    let brute_force = verify_stability_bruteforce(
        sg,
        mu1,
        mu2,
        std::slice::from_ref(&phi.to_vec()),
        total_t + 200,
        Some((total_t, eps)),
    );
    Ok(PipelineOutcome {
        delta: best_delta,
        z,
        decomposition,
        brute_force,
        avg_ball,
        avg_witness,
    })
}

/// Random strictly-positive chain (irreducible and aperiodic) on points
/// scattered in the unit square.
pub fn random_chain(n_states: usize, dim: usize, seed: u64) -> FiniteSemigroup {
    let key = RngKey::new(seed, streams::CHAIN);
    let points: Vec<Vec<f64>> = (0..n_states)
        .map(|i| (0..dim).map(|j| key.uniform(i as u64, j as u64)).collect())
        .collect();
    let kernel: Vec<Vec<f64>> = (0..n_states)
        .map(|i| {
            let mut row: Vec<f64> = (0..n_states)
                .map(|j| 0.05 + key.uniform(1000 + i as u64, j as u64))
                .collect();
            let s: f64 = row.iter().sum();
            for v in &mut row {
                *v /= s;
            }
            row
        })
        .collect();
    FiniteSemigroup::new(points, kernel).expect("generated chain is valid")
}

/// Two closed communicating classes: violates concentration for any ball
/// inside one class, so the criterion's hypotheses fail by construction.
pub fn reducible_chain(seed: u64) -> FiniteSemigroup {
    let a = random_chain(3, 2, seed);
    let b = random_chain(3, 2, seed ^ 0xabcdef);
    let n = 6;
    let mut points = Vec::new();
    for i in 0..3 {
        points.push(a.point(i).to_vec());
    }
    for i in 0..3 {
        // shift the second class away from the first
        points.push(b.point(i).iter().map(|v| v + 10.0).collect());
    }
    let mut kernel = vec![vec![0.0; n]; n];
    for i in 0..3 {
        for j in 0..3 {
            kernel[i][j] = a.kernel_row(i)[j];
            kernel[i + 3][j + 3] = b.kernel_row(i)[j];
        }
    }
    FiniteSemigroup::new(points, kernel).expect("block chain is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_symmetric() -> FiniteSemigroup {
        FiniteSemigroup::new(
            vec![vec![0.0], vec![1.0]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_kernels() {
        let bad_rows = FiniteSemigroup::new(
            vec![vec![0.0], vec![1.0]],
            vec![vec![0.6, 0.5], vec![0.5, 0.5]],
        );
        assert!(bad_rows.is_err());
        let negative = FiniteSemigroup::new(
            vec![vec![0.0], vec![1.0]],
            vec![vec![1.5, -0.5], vec![0.5, 0.5]],
        );
        assert!(negative.is_err());
        let coincident = FiniteSemigroup::new(
            vec![vec![0.0], vec![0.0]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        );
        assert!(coincident.is_err());
    }

    #[test]
    fn text_roundtrip() {
        let text = "2 1\n0.0\n1.0\n0.5 0.5\n0.5 0.5\n";
        let sg = FiniteSemigroup::from_text(text).unwrap();
        assert_eq!(sg.n_states(), 2);
        assert_eq!(sg.dim(), 1);
        assert_eq!(sg.kernel_row(0), &[0.5, 0.5]);
        assert!(FiniteSemigroup::from_text("2 1 0.0 1.0 0.5").is_err());
        assert!(FiniteSemigroup::from_text("nope").is_err());
    }

    #[test]
    fn e_property_identity_kernel() {
        let sg = FiniteSemigroup::new(
            vec![vec![0.0], vec![1.0], vec![3.0]],
            vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
        )
        .unwrap();
        let psi: Vec<f64> = (0..3).map(|i| (sg.point(i)[0]).tanh()).collect();
        let table = check_e_property(&sg, &psi, 100);
        for i in 0..3 {
            for j in 0..3 {
                let want = (psi[i] - psi[j]).abs();
                assert!((table.finite_sup[i * 3 + j] - want).abs() < 1e-15);
                // identity never mixes: tail bound is ‖ψ‖·TV of distinct Diracs
                if i != j {
                    assert!(table.tail_bound[i * 3 + j] > 0.0);
                }
                // Lipschitz comparison: |ψ(x)-ψ(z)| ≤ 1 · ρ(x,z)
                assert!(want <= sg.dist(i, j) + 1e-15);
            }
        }
    }

    #[test]
    fn e_property_collapses_after_one_step_on_the_flat_chain() {
        let sg = two_state_symmetric();
        let psi = vec![0.0, 1.0];
        let table = check_e_property(&sg, &psi, 50);
        // P^tψ is constant for t ≥ 1, so the sup is attained at t = 0
        assert!((table.finite_sup[1] - 1.0).abs() < 1e-15);
        assert_eq!(table.tail_bound[1], 0.0);
        let constant = check_e_property(&sg, &[0.7, 0.7], 50);
        assert!(constant.certified_sup.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn avg_bounded_whole_space_and_absorbing() {
        let sg = two_state_symmetric();
        let (ball, _t) = check_avg_bounded(&sg, &[0, 1], 0.9999);
        assert!(!ball.is_empty());

        // absorbing into state 1
        let sg = FiniteSemigroup::new(
            vec![vec![0.0], vec![1.0]],
            vec![vec![0.2, 0.8], vec![0.0, 1.0]],
        )
        .unwrap();
        let (ball, t) = check_avg_bounded(&sg, &[0, 1], 0.2);
        assert_eq!(ball, vec![1], "the absorbing point suffices");
        assert!(t >= 1);
    }

    #[test]
    fn concentrating_examples() {
        // whole-space ball: α = 1 at t = 1
        let sg = two_state_symmetric();
        let (alpha, t) = check_concentrating(&sg, 0, 10.0, &[0, 1]);
        assert_eq!(alpha, 1.0);
        assert_eq!(t, 1);

        // reducible chain: a ball inside one class gets nothing from the other
        let sg = reducible_chain(5);
        let all: Vec<usize> = (0..6).collect();
        let (alpha, _) = check_concentrating(&sg, 0, 0.5, &all);
        assert_eq!(alpha, 0.0);

        // single absorbing state z: α → 1
        let sg = FiniteSemigroup::new(
            vec![vec![0.0], vec![1.0]],
            vec![vec![1.0, 0.0], vec![0.9, 0.1]],
        )
        .unwrap();
        let (alpha, _) = check_concentrating(&sg, 0, 0.5, &[0, 1]);
        assert!(alpha > 0.99, "absorbing state gathers the mass: α = {alpha}");
    }

    #[test]
    fn decomposition_two_state_exact() {
        let sg = two_state_symmetric();
        let mu1 = sg.dirac(0);
        let mu2 = sg.dirac(1);
        let phi = vec![0.3, -0.8];
        let eps = 0.1;
        let dec = build_decomposition(&sg, &mu1, &mu2, 0, 0.5, eps, &phi).unwrap();
        assert!(dec.eq4_residual <= 1e-12, "residual {}", dec.eq4_residual);
        assert!((dec.gamma - dec.alpha * eps / 2.0).abs() < 1e-15);
        assert!(4.0 * (1.0 - dec.gamma).powi(dec.k as i32) * dec.phi_sup <= eps);
        // ν supports live in the ball
        for nus in &dec.nu_pairs {
            for nu in nus {
                let total: f64 = nu.iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
                assert_eq!(nu[1], 0.0, "support must stay in B(z,δ)");
            }
        }
        // identical measures: trivial decomposition, zero difference forever
        let dec_same = build_decomposition(&sg, &mu1, &mu1, 0, 0.5, eps, &phi).unwrap();
        assert!(dec_same.eq4_residual <= 1e-12);
        let rep = verify_stability_bruteforce(
            &sg,
            &mu1,
            &mu1,
            &[phi.clone()],
            100,
            Some((0, 1e-15)),
        );
        assert_eq!(rep.verdict, Verdict::Pass);
    }

    #[test]
    fn bruteforce_converges_on_doubly_stochastic_chains() {
        let sg = FiniteSemigroup::new(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![
                vec![0.4, 0.3, 0.3],
                vec![0.3, 0.4, 0.3],
                vec![0.3, 0.3, 0.4],
            ],
        )
        .unwrap();
        let rep = verify_stability_bruteforce(
            &sg,
            &sg.dirac(0),
            &sg.dirac(2),
            &[vec![1.0, -0.5, 0.25]],
            200,
            None,
        );
        assert_eq!(rep.verdict, Verdict::Pass);
        assert!(rep.get_number("final_diff").unwrap() < 1e-12);
    }

    #[test]
    fn bruteforce_reports_failure_on_reducible_chains() {
        let sg = reducible_chain(9);
        // φ separates the two classes
        let phi: Vec<f64> = (0..6).map(|i| if i < 3 { 1.0 } else { -1.0 }).collect();
        let rep = verify_stability_bruteforce(
            &sg,
            &sg.dirac(0),
            &sg.dirac(3),
            &[phi],
            300,
            None,
        );
        assert_eq!(rep.verdict, Verdict::Fail);
        assert!(rep.get_number("final_diff").unwrap() > 1.0);
    }

    #[test]
    fn pipeline_certifies_and_predicts_on_random_chains() {
        for seed in 0..10u64 {
            let n = 5 + (seed as usize % 6);
            let sg = random_chain(n, 2, seed);
            let phi: Vec<f64> = (0..n).map(|i| (sg.point(i)[0] - sg.point(i)[1]).tanh()).collect();
            let mu1 = sg.dirac(0);
            let mu2 = sg.dirac(n - 1);
            let out = stability_pipeline(&sg, &mu1, &mu2, &phi, 0.05).unwrap();
            assert!(out.decomposition.eq4_residual <= 1e-12);
            assert_eq!(out.brute_force.verdict, Verdict::Pass, "chain seed {seed}");
        }
    }

    #[test]
    fn pipeline_reports_hypothesis_violation() {
        let sg = reducible_chain(3);
        let phi: Vec<f64> = (0..6).map(|i| if i < 3 { 0.9 } else { -0.9 }).collect();
        let err = stability_pipeline(&sg, &sg.dirac(0), &sg.dirac(3), &phi, 0.05);
        match err {
            Err(Error::Degenerate(msg)) => {
                assert!(msg.contains("concentration"), "stage named: {msg}")
            }
            other => panic!("expected a concentration failure, got {other:?}"),
        }
    }
}
