//! Empirical measures on low-mode projections and the dual-Lipschitz
//! (bounded-Lipschitz) distance between them.
//!
//! Shell states are projected onto their first m modes, flattened to 2m
//! reals. Distances are taken as the maximum over a fixed dictionary of
//! bounded 1-Lipschitz test functions, which metrizes weak convergence on
//! bounded sets without the cost of a transport solve.

use serde::Serialize;

use crate::rng::{streams, RngKey};
use crate::shell::ShellState;
use crate::Error;

/// Uniform-weight empirical measure on ℝ^dim.
#[derive(Clone, Debug)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>, // flat, row-major
}

impl EmpiricalMeasure {
    pub fn new(dim: usize) -> Self {
        EmpiricalMeasure { dim, points: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 { 0 } else { self.points.len() / self.dim }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push_point(&mut self, p: &[f64]) {
        debug_assert_eq!(p.len(), self.dim);
        debug_assert!(p.iter().all(|x| x.is_finite()));
        self.points.extend_from_slice(p);
    }

    /// Project the first m modes of a state to (re, im) pairs and add it.
    pub fn push_state(&mut self, u: &ShellState, m_projection: usize) {
        debug_assert_eq!(self.dim, 2 * m_projection);
        for n in 1..=m_projection {
            let a = u.amp(n);
            self.points.push(a.re);
            self.points.push(a.im);
        }
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Mean of a test function under the measure.
    pub fn mean(&self, f: &TestFunction) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let mut sum = 0.0;
        for i in 0..self.len() {
            sum += f.eval(self.point(i));
        }
        sum / self.len() as f64
    }

    /// Merge another measure's support (uniform pooling).
    pub fn absorb(&mut self, other: &EmpiricalMeasure) {
        debug_assert_eq!(self.dim, other.dim);
        self.points.extend_from_slice(&other.points);
    }
}

/// Bounded 1-Lipschitz test functions on ℝ^dim.
#[derive(Clone, Debug, Serialize)]
pub enum TestFunction {
    /// tanh(x_i)
    CoordTanh(usize),
    /// exp(-|x|²)
    RadialExp,
    /// tanh(⟨w,x⟩ + c) with |w| = 1
    HalfSpace { w: Vec<f64>, c: f64 },
}

impl TestFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::CoordTanh(i) => x[*i].tanh(),
            TestFunction::RadialExp => (-x.iter().map(|v| v * v).sum::<f64>()).exp(),
            TestFunction::HalfSpace { w, c } => {
                (w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + c).tanh()
            }
        }
    }
}

/// A fixed dictionary of test functions, reproducible from its seed.
#[derive(Clone, Debug)]
pub struct TestDictionary {
    pub dim: usize,
    pub funcs: Vec<TestFunction>,
    pub version: &'static str,
}

pub const TEST_DICTIONARY_VERSION: &str = "1";

impl TestDictionary {
    /// Coordinate tanh functions only.
    pub fn coordinate(dim: usize) -> Self {
        TestDictionary {
            dim,
            funcs: (0..dim).map(TestFunction::CoordTanh).collect(),
            version: TEST_DICTIONARY_VERSION,
        }
    }

    /// The standard 64-function dictionary: coordinate tanh, the radial
    /// Gaussian, and seeded half-space tanh functions.
    pub fn standard(dim: usize, seed: u64) -> Self {
        let mut funcs: Vec<TestFunction> = (0..dim).map(TestFunction::CoordTanh).collect();
        funcs.push(TestFunction::RadialExp);
        let key = RngKey::new(seed, streams::DICTIONARY);
        let mut idx = 0u64;
        while funcs.len() < 64 {
            let mut w: Vec<f64> = (0..dim)
                .map(|j| key.normal(idx, j as u64))
                .collect();
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for v in &mut w {
                    *v /= norm;
                }
                let c = 2.0 * key.uniform(idx, 1 << 20) - 1.0;
                funcs.push(TestFunction::HalfSpace { w, c });
            }
            idx += 1;
        }
        TestDictionary { dim, funcs, version: TEST_DICTIONARY_VERSION }
    }
}

/// max over the dictionary of |⟨φ,μ1⟩ - ⟨φ,μ2⟩|.
pub fn dual_lipschitz_distance(
    mu1: &EmpiricalMeasure,
    mu2: &EmpiricalMeasure,
    dict: &TestDictionary,
) -> Result<f64, Error> {
    if mu1.dim() != mu2.dim() {
        return Err(Error::Dimension(mu1.dim(), mu2.dim()));
    }
    if mu1.dim() != dict.dim {
        return Err(Error::Dimension(mu1.dim(), dict.dim));
    }
    let mut best = 0.0f64;
    for f in &dict.funcs {
        let d = (mu1.mean(f) - mu2.mean(f)).abs();
        if d > best {
            best = d;
        }
    }
    Ok(best)
}
