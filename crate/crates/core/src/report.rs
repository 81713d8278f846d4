//! Probe reports: every Monte Carlo probe returns its inputs, estimates,
//! error bars and the bounds it compared against, so the verdict can be
//! recomputed from the recorded numbers alone.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn exit_code(&self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail => 1,
            Verdict::Inconclusive => 2,
        }
    }

    pub fn combine(self, other: Verdict) -> Verdict {
        use Verdict::*;
        match (self, other) {
            (Fail, _) | (_, Fail) => Fail,
            (Inconclusive, _) | (_, Inconclusive) => Inconclusive,
            _ => Pass,
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Pass => write!(f, "pass"),
            Verdict::Fail => write!(f, "fail"),
            Verdict::Inconclusive => write!(f, "inconclusive"),
        }
    }
}

/// A self-contained probe result. `inputs` holds seeds, grids and horizons;
/// `numbers` holds estimates, standard errors and bounds keyed by name.
#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub name: String,
    pub inputs: BTreeMap<String, Value>,
    pub numbers: BTreeMap<String, Value>,
    pub verdict: Verdict,
    pub notes: Vec<String>,
}

impl ProbeReport {
    pub fn new(name: impl Into<String>) -> Self {
        ProbeReport {
            name: name.into(),
            inputs: BTreeMap::new(),
            numbers: BTreeMap::new(),
            verdict: Verdict::Inconclusive,
            notes: Vec::new(),
        }
    }

    pub fn input(mut self, key: &str, v: impl Serialize) -> Self {
        self.inputs
            .insert(key.to_string(), serde_json::to_value(v).expect("serializable input"));
        self
    }

    pub fn number(mut self, key: &str, v: impl Serialize) -> Self {
        self.numbers
            .insert(key.to_string(), serde_json::to_value(v).expect("serializable number"));
        self
    }

    pub fn note(mut self, s: impl Into<String>) -> Self {
        self.notes.push(s.into());
        self
    }

    pub fn verdict(mut self, v: Verdict) -> Self {
        self.verdict = v;
        self
    }

    pub fn get_number(&self, key: &str) -> Option<f64> {
        self.numbers.get(key).and_then(Value::as_f64)
    }

    /// JSON with sorted keys (serde_json maps are BTree-backed).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::to_value(self).expect("report serializes"))
            .expect("report serializes")
    }

    pub fn one_line(&self) -> String {
        format!("{}: {}", self.name, self.verdict)
    }
}

/// Mean and standard error of a sample, reduced in index order so the
/// result is independent of how the samples were produced.
pub fn mean_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}
