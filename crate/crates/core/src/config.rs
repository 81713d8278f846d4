//! Experiment configuration: a TOML file with nested tables, dotted-path
//! overrides from the command line, and validation that runs before any
//! computation. Seeds are mandatory; nothing ever reads the wall clock.

use serde::{Deserialize, Serialize};

use crate::noise::{check_noise_condition, NoiseConfig};
use crate::shell::{operator_norm_constant, ModelConfig, ShellState, Variant};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Energy,
    ExpMoment,
    Tangent,
    MalliavinIbp,
    Control,
    EProperty,
    AvgBounded,
    Concentrate,
    Occupation,
    Stability,
    FiniteMarkov,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self, Error> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidConfig(format!("unknown experiment {s:?}")))
    }

    pub fn name(&self) -> String {
        serde_json::to_value(self)
            .expect("kind serializes")
            .as_str()
            .expect("kind is a string")
            .to_string()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub nu: f64,
    pub k0: f64,
    pub a: f64,
    pub b: f64,
    pub variant: Variant,
    pub n_modes: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// q_{n,n} for n = 1.., zero-padded to the truncation.
    pub q: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    pub dt: f64,
    pub t_final: f64,
    pub burn_in: Option<f64>,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    pub formats: Vec<String>,
}

/// Optional knobs used by individual experiments.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    /// Initial state as [re, im] pairs for modes 1.. (rest zero).
    #[serde(default)]
    pub x: Vec<[f64; 2]>,
    /// Second initial state for the stability experiment.
    #[serde(default)]
    pub x2: Vec<[f64; 2]>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default)]
    pub big_r: Option<f64>,
    #[serde(default)]
    pub m_projection: Option<usize>,
    #[serde(default)]
    pub n_star: Option<usize>,
    #[serde(default)]
    pub thin: Option<u64>,
    #[serde(default)]
    pub t_grid: Vec<f64>,
    #[serde(default)]
    pub delta_grid: Vec<f64>,
    /// Chain file for the finite-state experiment.
    #[serde(default)]
    pub chain: Option<String>,
    #[serde(default)]
    pub grid_points: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model: ModelSection,
    pub noise: NoiseSection,
    pub numerics: NumericsSection,
    pub output: OutputSection,
    #[serde(default)]
    pub params: ParamsSection,
}

/// The desk-scale defaults used when no config file is given.
pub const DEFAULT_CONFIG_TOML: &str = r#"
experiment = "simulate"

[model]
nu = 1.0
k0 = 2.0
a = 1.0
b = -0.5
variant = "goy"
n_modes = 16

[noise]
q = [0.3, 0.3, 0.3, 0.3]

[numerics]
dt = 1e-4
t_final = 5.0
samples = 2000
seed = 7

[output]
dir = "out"
formats = ["json", "csv"]
"#;

impl ExperimentConfig {
    pub fn default_desk() -> Self {
        toml::from_str(DEFAULT_CONFIG_TOML).expect("builtin config parses")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, Error> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn to_toml_value(&self) -> toml::Value {
        toml::Value::try_from(self).expect("config serializes")
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            nu: self.model.nu,
            k0: self.model.k0,
            a: self.model.a,
            b: self.model.b,
            variant: self.model.variant,
            n_modes: self.model.n_modes,
        }
    }

    pub fn noise_config(&self) -> Result<NoiseConfig, Error> {
        let mut q = self.noise.q.clone();
        if q.len() > self.model.n_modes {
            return Err(Error::InvalidConfig(format!(
                "noise vector has {} entries but the truncation is {}",
                q.len(),
                self.model.n_modes
            )));
        }
        q.resize(self.model.n_modes, 0.0);
        NoiseConfig::new(q)
    }

    pub fn initial_state(&self) -> Result<ShellState, Error> {
        state_from_pairs(&self.params.x, self.model.n_modes)
    }

    pub fn second_state(&self) -> Result<ShellState, Error> {
        state_from_pairs(&self.params.x2, self.model.n_modes)
    }

    pub fn burn_in(&self) -> f64 {
        self.numerics.burn_in.unwrap_or(self.numerics.t_final / 5.0)
    }

    /// Field-path diagnostics; warnings do not fail validation.
    pub fn validate(&self) -> Result<Vec<String>, Error> {
        let mut warnings = Vec::new();
        let model = self.model_config();
        if !(model.k0 > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "model.k0: k0 must exceed 1, got {}",
                model.k0
            )));
        }
        model
            .validate()
            .map_err(|e| Error::InvalidConfig(format!("model: {e}")))?;
        let noise = self
            .noise_config()
            .map_err(|e| Error::InvalidConfig(format!("noise.q: {e}")))?;
        if !(self.numerics.dt > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "numerics.dt: must be positive, got {}",
                self.numerics.dt
            )));
        }
        if !(self.numerics.t_final > 0.0) || self.numerics.dt > self.numerics.t_final {
            return Err(Error::InvalidConfig(format!(
                "numerics.t_final: need dt ≤ t_final, got dt = {}, t_final = {}",
                self.numerics.dt, self.numerics.t_final
            )));
        }
        if let Some(b) = self.numerics.burn_in {
            if b >= self.numerics.t_final {
                return Err(Error::InvalidConfig(format!(
                    "numerics.burn_in: must be below t_final, got {b}"
                )));
            }
        }
        self.initial_state()
            .map_err(|e| Error::InvalidConfig(format!("params.x: {e}")))?;
        self.second_state()
            .map_err(|e| Error::InvalidConfig(format!("params.x2: {e}")))?;

        // noise-rank condition: reported, never enforced
        if noise.max_q2() > 0.0 {
            let c_hat = operator_norm_constant(&model, 200, self.numerics.seed);
            if c_hat > 0.0 {
                let cond = check_noise_condition(&noise, &model, c_hat)?;
                if !cond.satisfied {
                    warnings.push(format!(
                        "noise.q: the low-mode forcing condition wants nonzero q on modes 1..={} \
                         (threshold {:.4}); gradient-flow probes may not plateau",
                        cond.n_star_min, cond.threshold
                    ));
                }
            }
        } else if self.experiment != ExperimentKind::FiniteMarkov
            && self.experiment != ExperimentKind::Simulate
        {
            warnings.push("noise.q: all noise amplitudes are zero".into());
        }

        let hint = crate::integrate::default_dt(&model);
        if self.numerics.dt > hint * 1e3 {
            warnings.push(format!(
                "numerics.dt: {} is far above the conservative hint {hint:.3e}",
                self.numerics.dt
            ));
        }
        Ok(warnings)
    }

    /// Apply a `key=value` override on a dotted path, e.g.
    /// `numerics.dt=1e-3` or `model.variant="sabra"`.
    pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), Error> {
        let (path, raw) = spec
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("override {spec:?} is not key=value")))?;
        let parsed = parse_toml_value(raw);
        let parts: Vec<&str> = path.trim().split('.').collect();
        let mut table = doc;
        for (i, part) in parts.iter().enumerate() {
            if i + 1 == parts.len() {
                table.insert(part.to_string(), parsed);
                return Ok(());
            }
            let entry = table
                .entry(part.to_string())
                .or_insert(toml::Value::Table(Default::default()));
            table = entry.as_table_mut().ok_or_else(|| {
                Error::InvalidConfig(format!("override path {path:?} crosses a non-table"))
            })?;
        }
        unreachable!("split always yields at least one part")
    }
}

/// Parse an override value as TOML; anything unparseable becomes a string.
fn parse_toml_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {}", raw.trim());
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("wrapped key present"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    }
}

fn state_from_pairs(pairs: &[[f64; 2]], n_modes: usize) -> Result<ShellState, Error> {
    if pairs.len() > n_modes {
        return Err(Error::InvalidConfig(format!(
            "{} amplitudes given but the truncation is {n_modes}",
            pairs.len()
        )));
    }
    let mut s = ShellState::zeros(n_modes);
    for (i, [re, im]) in pairs.iter().enumerate() {
        s.amps_mut()[i] = num_complex::Complex64::new(*re, *im);
    }
    if !s.is_finite() {
        return Err(Error::InvalidConfig("non-finite amplitude".into()));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_config_is_valid() {
        let cfg = ExperimentConfig::default_desk();
        let warnings = cfg.validate().unwrap();
        assert!(warnings.is_empty(), "{warnings:?}");
        assert_eq!(cfg.model.n_modes, 16);
        let noise = cfg.noise_config().unwrap();
        assert_eq!(noise.n_modes(), 16);
        assert!((noise.trace_q2() - 0.36).abs() < 1e-15);
    }

    #[test]
    fn k0_at_most_one_is_rejected_with_a_field_path() {
        let mut doc: toml::Table = DEFAULT_CONFIG_TOML.parse().unwrap();
        ExperimentConfig::apply_override(&mut doc, "model.k0=0.9").unwrap();
        let cfg = ExperimentConfig::from_toml_str(&toml::to_string(&doc).unwrap()).unwrap();
        match cfg.validate() {
            Err(Error::InvalidConfig(msg)) => {
                assert!(msg.contains("model.k0"), "{msg}");
                assert!(msg.contains("exceed 1"), "{msg}");
            }
            other => panic!("expected invalid config, got {other:?}"),
        }
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let mut doc: toml::Table = DEFAULT_CONFIG_TOML.parse().unwrap();
        ExperimentConfig::apply_override(&mut doc, "numerics.seed=99").unwrap();
        ExperimentConfig::apply_override(&mut doc, "experiment=\"energy\"").unwrap();
        ExperimentConfig::apply_override(&mut doc, "model.variant=\"sabra\"").unwrap();
        let cfg = ExperimentConfig::from_toml_str(&toml::to_string(&doc).unwrap()).unwrap();
        assert_eq!(cfg.numerics.seed, 99);
        assert_eq!(cfg.experiment, ExperimentKind::Energy);
        assert_eq!(cfg.model.variant, Variant::Sabra);
    }

    #[test]
    fn failing_noise_condition_is_a_warning_not_an_error() {
        let mut doc: toml::Table = DEFAULT_CONFIG_TOML.parse().unwrap();
        ExperimentConfig::apply_override(&mut doc, "experiment=\"energy\"").unwrap();
        ExperimentConfig::apply_override(&mut doc, "noise.q=[0.3]").unwrap();
        ExperimentConfig::apply_override(&mut doc, "model.nu=0.05").unwrap();
        let cfg = ExperimentConfig::from_toml_str(&toml::to_string(&doc).unwrap()).unwrap();
        let warnings = cfg.validate().unwrap();
        assert!(
            warnings.iter().any(|w| w.contains("forcing condition")),
            "{warnings:?}"
        );
    }

    #[test]
    fn unparseable_overrides_fail() {
        let mut doc: toml::Table = DEFAULT_CONFIG_TOML.parse().unwrap();
        assert!(ExperimentConfig::apply_override(&mut doc, "no-equals").is_err());
    }

    #[test]
    fn initial_state_round_trip() {
        let mut cfg = ExperimentConfig::default_desk();
        cfg.params.x = vec![[5.0, 0.0]];
        let x = cfg.initial_state().unwrap();
        assert_eq!(x.amp(1), num_complex::Complex64::new(5.0, 0.0));
        assert_eq!(x.h_norm(), 5.0);
    }
}
