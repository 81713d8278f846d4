//! Versioned dictionary of smooth bounded functionals on shell states.
//!
//! Probes that estimate derivatives of the semigroup need test functions
//! with known value, gradient, Lipschitz and sup bounds. Keeping them in a
//! fixed, seeded dictionary makes every sup-estimate reproducible.

use num_complex::Complex64;

use crate::rng::{streams, RngKey};
use crate::shell::{inner_h, ShellState};

pub const DICTIONARY_VERSION: &str = "1";

/// A bounded C¹ functional on shell states.
#[derive(Clone, Debug)]
pub enum StateFunctional {
    Constant(f64),
    /// tanh(Re u_1)
    TanhRe1,
    /// exp(-|u|²)
    ExpNegNormSq,
    /// tanh((w,u) + c) for a fixed unit direction w
    HalfSpaceTanh { dir: ShellState, offset: f64 },
}

impl StateFunctional {
    pub fn name(&self) -> String {
        match self {
            StateFunctional::Constant(c) => format!("const({c})"),
            StateFunctional::TanhRe1 => "tanh_re_u1".into(),
            StateFunctional::ExpNegNormSq => "exp_neg_norm_sq".into(),
            StateFunctional::HalfSpaceTanh { offset, .. } => {
                format!("halfspace_tanh(c={offset})")
            }
        }
    }

    pub fn value(&self, u: &ShellState) -> f64 {
        match self {
            StateFunctional::Constant(c) => *c,
            StateFunctional::TanhRe1 => u.amp(1).re.tanh(),
            StateFunctional::ExpNegNormSq => (-u.h_norm_sq()).exp(),
            StateFunctional::HalfSpaceTanh { dir, offset } => {
                (inner_h(dir, u).expect("dictionary dimension fixed") + offset).tanh()
            }
        }
    }

    /// Directional derivative Df(u)[h].
    pub fn derivative(&self, u: &ShellState, h: &ShellState) -> f64 {
        match self {
            StateFunctional::Constant(_) => 0.0,
            StateFunctional::TanhRe1 => {
                let s = u.amp(1).re.tanh();
                (1.0 - s * s) * h.amp(1).re
            }
            StateFunctional::ExpNegNormSq => {
                -2.0 * (-u.h_norm_sq()).exp() * inner_h(u, h).expect("same truncation")
            }
            StateFunctional::HalfSpaceTanh { dir, offset } => {
                let s = (inner_h(dir, u).expect("same truncation") + offset).tanh();
                (1.0 - s * s) * inner_h(dir, h).expect("same truncation")
            }
        }
    }

    /// Riesz representative of the derivative: Df(u)[h] = (gradient, h).
    pub fn gradient(&self, u: &ShellState) -> ShellState {
        let n = u.n_modes();
        match self {
            StateFunctional::Constant(_) => ShellState::zeros(n),
            StateFunctional::TanhRe1 => {
                let s = u.amp(1).re.tanh();
                let mut g = ShellState::zeros(n);
                g.amps_mut()[0] = Complex64::new(1.0 - s * s, 0.0);
                g
            }
            StateFunctional::ExpNegNormSq => u.scaled(-2.0 * (-u.h_norm_sq()).exp()),
            StateFunctional::HalfSpaceTanh { dir, offset } => {
                let s = (inner_h(dir, u).expect("same truncation") + offset).tanh();
                dir.scaled(1.0 - s * s)
            }
        }
    }

    pub fn sup_bound(&self) -> f64 {
        match self {
            StateFunctional::Constant(c) => c.abs(),
            _ => 1.0,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            StateFunctional::Constant(_) => 0.0,
            StateFunctional::TanhRe1 | StateFunctional::HalfSpaceTanh { .. } => 1.0,
            // sup of 2r e^{-r²} over r ≥ 0
            StateFunctional::ExpNegNormSq => (2.0f64 / std::f64::consts::E).sqrt(),
        }
    }

    /// sup|f| + sup|Df|, the norm the gradient probe compares against.
    pub fn c1_norm(&self) -> f64 {
        self.sup_bound() + self.lipschitz()
    }
}

/// The fixed probe dictionary: the two closed-form functionals plus seeded
/// half-space directions.
pub fn probe_dictionary(n_modes: usize, seed: u64) -> Vec<StateFunctional> {
    let key = RngKey::new(seed, streams::DICTIONARY);
    let mut dict = vec![StateFunctional::TanhRe1, StateFunctional::ExpNegNormSq];
    for i in 0..2u64 {
        let dir = ShellState::random(n_modes, 1.0, 1.0, key.substream(i), 0);
        let offset = key.uniform(i, 999) - 0.5;
        dict.push(StateFunctional::HalfSpaceTanh { dir, offset });
    }
    dict
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngKey;

    #[test]
    fn derivatives_match_finite_differences() {
        let key = RngKey::new(3, 0);
        let u = ShellState::random(8, 0.8, 1.0, key.substream(1), 0);
        let h = ShellState::random(8, 1.0, 1.1, key.substream(2), 0);
        let eta = 1e-6;
        for f in probe_dictionary(8, 5) {
            let fd = (f.value(&u.add(&h.scaled(eta)).unwrap()) - f.value(&u)) / eta;
            let d = f.derivative(&u, &h);
            assert!((fd - d).abs() < 1e-4, "{}: fd {fd} vs {d}", f.name());
            let g = f.gradient(&u);
            let via_grad = inner_h(&g, &h).unwrap();
            assert!((via_grad - d).abs() < 1e-12, "{}: gradient mismatch", f.name());
        }
    }

    #[test]
    fn bounds_hold_on_samples() {
        let key = RngKey::new(9, 0);
        for f in probe_dictionary(8, 5) {
            for t in 0..50u64 {
                let u = ShellState::random(8, 3.0 * key.uniform(t, 0), 1.0, key, t);
                let v = ShellState::random(8, 3.0 * key.uniform(t, 1), 0.9, key.substream(7), t);
                assert!(f.value(&u).abs() <= f.sup_bound() + 1e-12);
                let d = u.sub(&v).unwrap().h_norm();
                assert!(
                    (f.value(&u) - f.value(&v)).abs() <= f.lipschitz() * d + 1e-12,
                    "{} not Lipschitz",
                    f.name()
                );
            }
        }
    }
}
