//! Replication-study configuration, read from TOML.

use std::collections::BTreeMap;
use std::path::Path;

use hypodiff_core::smc::ProposalKind;
use hypodiff_core::{Fhn, ModelSpec, ParamSet, Sie, StateVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// How each replication's data are generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Protocol {
    /// Exact transition sampling (oscillator only).
    Exact,
    /// Euler-Maruyama at `delta_fine`, keeping every `subsample`-th state.
    FineEuler { delta_fine: f64, subsample: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Split contrasts on the complete path.
    NewContrastComplete,
    /// Explicit Euler least squares on the complete path.
    EulerContrast,
    /// SAEM driven by the particle filter, `V` only.
    Saem,
    /// The increment-proxy procedure used to start SAEM, `V` only.
    NewContrastPartial,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::NewContrastComplete => "new_contrast_complete",
            EstimatorKind::EulerContrast => "euler_contrast",
            EstimatorKind::Saem => "saem",
            EstimatorKind::NewContrastPartial => "new_contrast_partial",
        }
    }

    /// Whether the estimator sees the hidden coordinates.
    pub fn complete(self) -> bool {
        matches!(self, EstimatorKind::NewContrastComplete | EstimatorKind::EulerContrast)
    }
}

/// Start of the complete-observation contrasts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastStart {
    /// Data-independent values per model.
    Fixed,
    /// The true parameters of the study.
    Truth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalChoice {
    Conditional,
    Transition,
}

impl From<ProposalChoice> for ProposalKind {
    fn from(p: ProposalChoice) -> Self {
        match p {
            ProposalChoice::Conditional => ProposalKind::Conditional,
            ProposalChoice::Transition => ProposalKind::Transition,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaemConfig {
    pub iters: usize,
    pub burn_in: usize,
    pub exponent: f64,
    pub particles: usize,
    pub growing_particles: bool,
    pub proposal: ProposalChoice,
}

impl Default for SaemConfig {
    fn default() -> Self {
        SaemConfig {
            iters: 80,
            burn_in: 30,
            exponent: 0.9,
            particles: 100,
            growing_particles: false,
            proposal: ProposalChoice::Conditional,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorOptions {
    pub contrast_start: ContrastStart,
    pub max_outer_iters: usize,
    pub simplex_tol: f64,
    /// Fit the smooth-drift parameters in the complete contrasts.
    pub estimate_psi: bool,
    /// Starting `epsilon` of the FitzHugh-Nagumo init.
    pub eps0: f64,
    pub saem: SaemConfig,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            contrast_start: ContrastStart::Fixed,
            max_outer_iters: 5,
            simplex_tol: 1e-6,
            estimate_psi: true,
            eps0: 0.12,
            saem: SaemConfig::default(),
        }
    }
}

/// Known model constants; unset entries keep the model defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConstants {
    pub fhn_s: Option<f64>,
    pub sie_capacitance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    /// Parameter name to value, names as in the model layout.
    pub true_params: BTreeMap<String, f64>,
    pub protocol: Protocol,
    /// Transitions per replication.
    pub n: usize,
    pub delta: f64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    pub estimators: Vec<EstimatorKind>,
    #[serde(default)]
    pub options: EstimatorOptions,
    /// Replication `r` (from 1) simulates with seed `seed_base + r`.
    #[serde(default)]
    pub seed_base: u64,
    /// Initial state; the model default when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub constants: ModelConstants,
}

fn default_replications() -> usize {
    20
}

/// Builds a model with `constants` applied.
pub fn build_model(id: &str, constants: &ModelConstants) -> Result<ModelSpec, ConfigError> {
    let spec = ModelSpec::from_id(id).map_err(|e| invalid(e.to_string()))?;
    Ok(match spec {
        ModelSpec::Fhn(mut m) => {
            if let Some(s) = constants.fhn_s {
                m.s = s;
            }
            ModelSpec::Fhn(m)
        }
        ModelSpec::Sie(mut m) => {
            if let Some(c) = constants.sie_capacitance {
                if !(c > 0.0) {
                    return Err(invalid("capacitance must be positive"));
                }
                m.c = c;
            }
            ModelSpec::Sie(m)
        }
        other => other,
    })
}

/// Converts a name-value map into a parameter set for `model`.
pub fn params_from_map(model: &ModelSpec, map: &BTreeMap<String, f64>) -> Result<ParamSet, ConfigError> {
    let layout = model.as_model().layout();
    if let Some(extra) = map.keys().find(|k| layout.index_of(k).is_none()) {
        return Err(invalid(format!("unknown parameter {extra:?} for model {}", model.as_model().id())));
    }
    let flat = layout
        .names()
        .map(|name| map.get(name).copied().ok_or_else(|| invalid(format!("missing parameter {name:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let p = ParamSet::from_flat(&layout, &flat).map_err(|e| invalid(e.to_string()))?;
    model.validate(&p).map_err(|e| invalid(e.to_string()))?;
    Ok(p)
}

pub fn params_to_map(model: &ModelSpec, p: &ParamSet) -> BTreeMap<String, f64> {
    let layout = model.as_model().layout();
    layout.names().map(String::from).zip(p.to_flat()).collect()
}

/// Parses `name=value,name=value`.
pub fn parse_param_list(s: &str) -> Result<BTreeMap<String, f64>, ConfigError> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|item| {
            let (k, v) = item.split_once('=').ok_or_else(|| invalid(format!("expected name=value, got {item:?}")))?;
            let v: f64 = v.trim().parse().map_err(|_| invalid(format!("bad number in {item:?}")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

pub fn default_x0(model: &ModelSpec) -> StateVector {
    match model {
        ModelSpec::Ho(_) | ModelSpec::Fhn(_) => StateVector::new(0.0, &[0.0]),
        ModelSpec::Sie(_) => StateVector::new(-60.0, &[10.0, 1.0]),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable in TOML")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn model_spec(&self) -> Result<ModelSpec, ConfigError> {
        build_model(&self.model, &self.constants)
    }

    pub fn truth(&self) -> Result<ParamSet, ConfigError> {
        params_from_map(&self.model_spec()?, &self.true_params)
    }

    pub fn initial_state(&self) -> Result<StateVector, ConfigError> {
        let model = self.model_spec()?;
        match &self.x0 {
            None => Ok(default_x0(&model)),
            Some(x) => {
                if x.len() != model.as_model().hidden_dim() + 1 {
                    return Err(invalid("x0 has the wrong dimension"));
                }
                model.as_model().in_domain(x).map_err(|e| invalid(e.to_string()))?;
                Ok(StateVector::from_slice(x))
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let model = self.model_spec()?;
        self.truth()?;
        self.initial_state()?;
        if self.replications == 0 {
            return Err(invalid("replications must be at least 1"));
        }
        if self.n < 2 {
            return Err(invalid("n must be at least 2"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(invalid("delta must be positive"));
        }
        if self.estimators.is_empty() {
            return Err(invalid("no estimators listed"));
        }
        match (&self.protocol, &model) {
            (Protocol::Exact, ModelSpec::Ho(_)) => {}
            (Protocol::Exact, _) => return Err(invalid("exact sampling is only available for the oscillator")),
            (Protocol::FineEuler { delta_fine, subsample }, _) => {
                if *subsample == 0 || !(*delta_fine > 0.0) {
                    return Err(invalid("fine-euler needs delta_fine > 0 and subsample >= 1"));
                }
                if ((delta_fine * *subsample as f64) - self.delta).abs() > 1e-9 * self.delta {
                    return Err(invalid("delta_fine * subsample must equal delta"));
                }
            }
        }
        for kind in &self.estimators {
            let ok = match (kind, &model) {
                (EstimatorKind::EulerContrast, ModelSpec::Sie(_)) => false,
                (EstimatorKind::NewContrastPartial, ModelSpec::Sie(_)) => false,
                _ => true,
            };
            if !ok {
                return Err(invalid(format!("{} does not apply to {}", kind.name(), self.model)));
            }
        }
        let s = &self.options.saem;
        if self.estimators.contains(&EstimatorKind::Saem) {
            if s.iters == 0 || s.particles == 0 || !(s.exponent > 0.5 && s.exponent <= 1.0) {
                return Err(invalid("saem needs iters >= 1, particles >= 1, exponent in (0.5, 1]"));
            }
        }
        if self.options.max_outer_iters == 0 || !(self.options.simplex_tol > 0.0) {
            return Err(invalid("max_outer_iters >= 1 and simplex_tol > 0 required"));
        }
        if !(self.options.eps0 > 0.0) {
            return Err(invalid("eps0 must be positive"));
        }
        Ok(())
    }

    /// Oscillator study at `delta = 0.02`, `n = 1000`.
    pub fn ho_preset() -> Self {
        ExperimentConfig {
            model: "ho".into(),
            true_params: [("D", 4.0), ("gamma", 0.5), ("sigma", 0.5)].map(|(k, v)| (k.to_string(), v)).into(),
            protocol: Protocol::Exact,
            n: 1000,
            delta: 0.02,
            replications: 20,
            estimators: vec![EstimatorKind::NewContrastComplete, EstimatorKind::EulerContrast, EstimatorKind::Saem],
            options: EstimatorOptions::default(),
            seed_base: 1000,
            x0: None,
            constants: ModelConstants::default(),
        }
    }

    /// FitzHugh-Nagumo study; data from a fine Euler grid.
    pub fn fhn_preset() -> Self {
        let mut options = EstimatorOptions::default();
        options.saem.iters = 350;
        options.saem.burn_in = 250;
        ExperimentConfig {
            model: "fhn".into(),
            true_params: [("epsilon", 0.1), ("gamma", 1.5), ("alpha", 0.8), ("sigma", 0.3)]
                .map(|(k, v)| (k.to_string(), v))
                .into(),
            protocol: Protocol::FineEuler {
                delta_fine: 0.002,
                subsample: 10,
            },
            n: 1000,
            delta: 0.02,
            replications: 10,
            estimators: vec![EstimatorKind::NewContrastComplete, EstimatorKind::Saem],
            options,
            seed_base: 2000,
            x0: None,
            constants: ModelConstants::default(),
        }
    }

    /// Conductance study; data from a fine Euler grid.
    pub fn sie_preset() -> Self {
        ExperimentConfig {
            model: "sie".into(),
            true_params: [
                ("tau_E", 0.5),
                ("tau_I", 1.0),
                ("gbar_E", 17.8),
                ("gbar_I", 9.4),
                ("sigma_E", 0.1),
                ("sigma_I", 0.1),
            ]
            .map(|(k, v)| (k.to_string(), v))
            .into(),
            protocol: Protocol::FineEuler {
                delta_fine: 0.002,
                subsample: 10,
            },
            n: 1000,
            delta: 0.02,
            replications: 5,
            estimators: vec![EstimatorKind::Saem],
            options: EstimatorOptions::default(),
            seed_base: 3000,
            x0: None,
            constants: ModelConstants::default(),
        }
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "ho" => Ok(Self::ho_preset()),
            "fhn" => Ok(Self::fhn_preset()),
            "sie" => Ok(Self::sie_preset()),
            other => Err(invalid(format!("unknown preset {other:?} (ho, fhn, sie)"))),
        }
    }
}

/// Shorthand used by tests and presets.
pub fn fhn_model(s: f64) -> ModelSpec {
    ModelSpec::Fhn(Fhn { s })
}

pub fn sie_model(capacitance: f64) -> ModelSpec {
    ModelSpec::Sie(Sie {
        c: capacitance,
        ..Sie::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in ["ho", "fhn", "sie"] {
            let cfg = ExperimentConfig::preset(name).unwrap();
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
model = "ho"
n = 100
delta = 0.02
estimators = ["new_contrast_complete"]
protocol = { kind = "exact" }
[true_params]
D = 4.0
gamma = 0.5
sigma = 0.5
"#,
        )
        .unwrap();
        assert_eq!(cfg.replications, 20);
        assert_eq!(cfg.options.saem.burn_in, 30);
        assert_eq!(cfg.initial_state().unwrap().v(), 0.0);
    }

    #[test]
    fn rejects_inconsistent_protocols() {
        let mut cfg = ExperimentConfig::sie_preset();
        cfg.protocol = Protocol::Exact;
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
        let mut cfg = ExperimentConfig::fhn_preset();
        cfg.protocol = Protocol::FineEuler {
            delta_fine: 0.002,
            subsample: 5,
        };
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::ho_preset();
        cfg.replications = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::sie_preset();
        cfg.estimators.push(EstimatorKind::EulerContrast);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn parameter_maps() {
        let m = ModelSpec::from_id("ho").unwrap();
        let map = parse_param_list("D=4, gamma=0.5,sigma=0.5").unwrap();
        let p = params_from_map(&m, &map).unwrap();
        assert_eq!(p.to_flat(), vec![4.0, 0.5, 0.5]);
        assert_eq!(params_to_map(&m, &p), map);
        assert!(params_from_map(&m, &parse_param_list("D=4,gamma=0.5").unwrap()).is_err());
        assert!(params_from_map(&m, &parse_param_list("D=4,gamma=0.5,sigma=0.5,tau=1").unwrap()).is_err());
        assert!(params_from_map(&m, &parse_param_list("D=4,gamma=0.5,sigma=-1").unwrap()).is_err());
        assert!(parse_param_list("D:4").is_err());
    }

    #[test]
    fn constants_are_applied() {
        let c = ModelConstants {
            fhn_s: Some(0.3),
            sie_capacitance: Some(2.0),
        };
        assert_eq!(build_model("fhn", &c).unwrap(), fhn_model(0.3));
        assert_eq!(build_model("sie", &c).unwrap(), sie_model(2.0));
    }
}
