//! Experiment configuration (TOML).
//!
//! ```toml
//! spec_version = 1
//! runs = 20
//! seed = 7
//!
//! [dataset]
//! kind = "semi_synthetic"
//! shared_fraction = 0.5
//!
//! [network.train]
//! epochs = 200
//! learning_rate = 1e-3
//!
//! [[learners]]
//! kind = "tarnet"
//!
//! [[learners]]
//! kind = "h_learner"
//! pseudo = "x"
//! ```
//!
//! Unknown keys are rejected.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{CsvSchema, DEFAULT_SPLIT};
use crate::dgp::{SemiSyntheticConfig, ToyDgpConfig};
use crate::error::{Error, Result};
use crate::eval::{default_lambda_grid, validate_grid};
use crate::metalearners::{BaseLearner, NetConfig};
use crate::optim::{LogisticConfig, RidgeConfig};
use crate::pseudo::{NuisanceConfig, OutcomeModel, PseudoKind, DEFAULT_CLIP};

/// Version of the configuration format understood by this build.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Toy(ToyDgpConfig),
    /// The `seed` field is replaced by each run's seed.
    SemiSynthetic(SemiSyntheticConfig),
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: CsvSchema,
    },
}

/// A scalar generator parameter varied across settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: String,
    pub values: Vec<f64>,
}

impl DatasetSpec {
    /// Copy of this spec with `parameter` set to `value`.
    pub fn with_parameter(&self, parameter: &str, value: f64) -> Result<Self> {
        let mut out = self.clone();
        let slot: &mut f64 = match (&mut out, parameter) {
            (DatasetSpec::Toy(c), "omega") => &mut c.omega,
            (DatasetSpec::Toy(c), "delta") => &mut c.delta,
            (DatasetSpec::Toy(c), "beta") => &mut c.beta,
            (DatasetSpec::Toy(c), "noise_sd") => &mut c.noise_sd,
            (DatasetSpec::Toy(c), "treated_prob") => &mut c.treated_prob,
            (DatasetSpec::SemiSynthetic(c), "shared_fraction") => &mut c.shared_fraction,
            (DatasetSpec::SemiSynthetic(c), "treated_fraction") => &mut c.treated_fraction,
            (DatasetSpec::SemiSynthetic(c), "alpha") => &mut c.alpha,
            (DatasetSpec::SemiSynthetic(c), "noise_sd") => &mut c.noise_sd,
            _ => return Err(Error::Config(format!("parameter `{parameter}` cannot be swept for this dataset kind"))),
        };
        *slot = value;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    #[default]
    Mlp,
    Ridge,
}

fn default_pseudo() -> PseudoKind {
    PseudoKind::X
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerSpec {
    TLearner {
        #[serde(default)]
        base: BaseKind,
    },
    SLearner {
        #[serde(default)]
        base: BaseKind,
    },
    Tarnet,
    TarnetWr {
        rho: f64,
    },
    Offsetnet,
    Direct {
        pseudo: PseudoKind,
        #[serde(default)]
        base: BaseKind,
    },
    HLearner {
        #[serde(default = "default_pseudo")]
        pseudo: PseudoKind,
        /// Fixed lambda; when absent it is selected on the grid.
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default)]
        zero_pseudo: bool,
        #[serde(default)]
        base: BaseKind,
    },
}

impl LearnerSpec {
    /// Identifier used in results and summaries.
    pub fn id(&self) -> String {
        let suffix = |b: &BaseKind| match b {
            BaseKind::Mlp => "",
            BaseKind::Ridge => "_ridge",
        };
        match self {
            LearnerSpec::TLearner { base } => format!("t_learner{}", suffix(base)),
            LearnerSpec::SLearner { base } => format!("s_learner{}", suffix(base)),
            LearnerSpec::Tarnet => "tarnet".into(),
            LearnerSpec::TarnetWr { rho } => format!("tarnet_wr_rho{rho}"),
            LearnerSpec::Offsetnet => "offsetnet".into(),
            LearnerSpec::Direct { pseudo, base } => format!("direct_{pseudo}{}", suffix(base)),
            LearnerSpec::HLearner { pseudo, lambda, zero_pseudo, base } => {
                let mut id = if *zero_pseudo { "h_zero".to_string() } else { format!("h_{pseudo}") };
                id.push_str(suffix(base));
                if let Some(l) = lambda {
                    id.push_str(&format!("_lambda{l}"));
                }
                id
            }
        }
    }

    pub fn needs_propensity(&self) -> bool {
        match self {
            LearnerSpec::Direct { pseudo, .. } => pseudo.needs_propensity(),
            LearnerSpec::HLearner { pseudo, zero_pseudo, .. } => !zero_pseudo && pseudo.needs_propensity(),
            _ => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerSpec::TarnetWr { rho } if !(*rho >= 0.0) || !rho.is_finite() => {
                Err(Error::Config(format!("tarnet_wr rho must be finite and >= 0, got {rho}")))
            }
            LearnerSpec::HLearner { lambda: Some(l), .. } if !(0.0..=1.0).contains(l) => {
                Err(Error::Config(format!("h_learner lambda must lie in [0, 1], got {l}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage1Model {
    #[default]
    Tarnet,
    TLearner,
    TLearnerRidge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Spec {
    pub model: Stage1Model,
    pub clip: f64,
    pub propensity: LogisticConfig,
}

impl Default for Stage1Spec {
    fn default() -> Self {
        Self { model: Stage1Model::Tarnet, clip: DEFAULT_CLIP, propensity: LogisticConfig::default() }
    }
}

fn default_runs() -> usize {
    20
}

fn default_split() -> [f64; 3] {
    DEFAULT_SPLIT
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spec_version: u32,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Master seed; per-run seeds derive from it by run index.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default = "yes")]
    pub standardize_features: bool,
    #[serde(default)]
    pub standardize_outcome: bool,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    /// Adds per-learner wall time to each result record (breaks byte-level
    /// reproducibility of `results.jsonl`).
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub network: NetConfig,
    #[serde(default)]
    pub ridge: RidgeConfig,
    #[serde(default)]
    pub stage1: Stage1Spec,
    pub learners: Vec<LearnerSpec>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.spec_version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "spec_version {} is not supported (expected {CONFIG_VERSION})",
                self.spec_version
            )));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be >= 1".into()));
        }
        if self.learners.is_empty() {
            return Err(Error::Config("at least one learner is required".into()));
        }
        let mut seen = BTreeSet::new();
        for l in &self.learners {
            l.validate()?;
            if !seen.insert(l.id()) {
                return Err(Error::Config(format!("learner `{}` listed twice", l.id())));
            }
        }
        self.model_settings().validate()?;
        crate::data::split_sizes(100, self.split)?;
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::Config("sweep needs at least one value".into()));
            }
            for &v in &s.values {
                self.dataset.with_parameter(&s.parameter, v)?;
            }
        }
        Ok(())
    }

    /// First 16 hex digits of SHA-256 over the canonical (sorted-key) JSON
    /// form, so key order in the file does not matter.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn model_settings(&self) -> ModelSettings {
        ModelSettings {
            standardize_features: self.standardize_features,
            standardize_outcome: self.standardize_outcome,
            lambda_grid: self.lambda_grid.clone(),
            network: self.network.clone(),
            ridge: self.ridge,
            stage1: self.stage1.clone(),
        }
    }

    /// Settings to iterate over: the sweep values, or one unnamed setting.
    pub fn settings(&self) -> Vec<Option<f64>> {
        match &self.sweep {
            Some(s) => s.values.iter().copied().map(Some).collect(),
            None => vec![None],
        }
    }

    pub fn dataset_for(&self, setting: Option<f64>) -> Result<DatasetSpec> {
        match (setting, &self.sweep) {
            (Some(v), Some(s)) => self.dataset.with_parameter(&s.parameter, v),
            _ => Ok(self.dataset.clone()),
        }
    }
}

/// Everything needed to fit learners on given data: preprocessing, base
/// learner settings, Stage-1 models and the lambda grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSettings {
    #[serde(default = "yes")]
    pub standardize_features: bool,
    #[serde(default)]
    pub standardize_outcome: bool,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default)]
    pub network: NetConfig,
    #[serde(default)]
    pub ridge: RidgeConfig,
    #[serde(default)]
    pub stage1: Stage1Spec,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            standardize_features: true,
            standardize_outcome: false,
            lambda_grid: default_lambda_grid(),
            network: NetConfig::default(),
            ridge: RidgeConfig::default(),
            stage1: Stage1Spec::default(),
        }
    }
}

impl ModelSettings {
    pub fn validate(&self) -> Result<()> {
        validate_grid(&self.lambda_grid)?;
        self.network.train.validate()?;
        self.ridge.validate()
    }

    pub fn base_learner(&self, base: BaseKind, net: &NetConfig) -> BaseLearner {
        match base {
            BaseKind::Mlp => BaseLearner::Mlp(net.clone()),
            BaseKind::Ridge => BaseLearner::Ridge(self.ridge),
        }
    }

    pub fn outcome_model(&self, net: &NetConfig) -> OutcomeModel {
        match self.stage1.model {
            Stage1Model::Tarnet => OutcomeModel::Tarnet(net.clone()),
            Stage1Model::TLearner => OutcomeModel::TLearner { base: BaseLearner::Mlp(net.clone()) },
            Stage1Model::TLearnerRidge => OutcomeModel::TLearner { base: BaseLearner::Ridge(self.ridge) },
        }
    }

    pub fn nuisance_config(&self, net: &NetConfig) -> NuisanceConfig {
        NuisanceConfig { outcome: self.outcome_model(net), propensity: self.stage1.propensity, clip: self.stage1.clip }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
spec_version = 1
runs = 3
seed = 11

[dataset]
kind = "toy"
delta = 0.0
n = 100

[[learners]]
kind = "tarnet"

[[learners]]
kind = "h_learner"
pseudo = "dr"
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml_str(BASIC).unwrap();
        assert_eq!(cfg.runs, 3);
        assert_eq!(cfg.split, DEFAULT_SPLIT);
        assert_eq!(cfg.lambda_grid.len(), 11);
        assert_eq!(cfg.learners[1].id(), "h_dr");
        assert!(cfg.learners[1].needs_propensity());
        assert!(matches!(cfg.dataset, DatasetSpec::Toy(ToyDgpConfig { n: 100, .. })));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = BASIC.replace("seed = 11", "seed = 11\nsurprise = true");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Config(_))));
        let text = BASIC.replace("n = 100", "n = 100\nwobble = 2");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Config(_))));
        let text = BASIC.replace("pseudo = \"dr\"", "pseudo = \"dr\"\nextra = 1");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Config(_))));
    }

    #[test]
    fn version_and_learners_are_checked() {
        let text = BASIC.replace("spec_version = 1", "spec_version = 9");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
        let text = BASIC.replace("kind = \"tarnet\"", "kind = \"h_learner\"\npseudo = \"dr\"");
        assert!(ExperimentConfig::from_toml_str(&text).is_err(), "duplicate learner");
    }

    #[test]
    fn hash_ignores_key_order() {
        let a = ExperimentConfig::from_toml_str(BASIC).unwrap();
        let reordered = r#"
seed = 11
spec_version = 1
runs = 3

[[learners]]
kind = "tarnet"

[[learners]]
pseudo = "dr"
kind = "h_learner"

[dataset]
n = 100
delta = 0.0
kind = "toy"
"#;
        let b = ExperimentConfig::from_toml_str(reordered).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        let c = ExperimentConfig::from_toml_str(&BASIC.replace("seed = 11", "seed = 12")).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn sweep_parameters_are_checked() {
        let text = format!("{BASIC}\n[sweep]\nparameter = \"delta\"\nvalues = [0.0, 1.5]\n");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.settings(), vec![Some(0.0), Some(1.5)]);
        match cfg.dataset_for(Some(1.5)).unwrap() {
            DatasetSpec::Toy(t) => assert_eq!(t.delta, 1.5),
            _ => unreachable!(),
        }
        let text = format!("{BASIC}\n[sweep]\nparameter = \"alpha\"\nvalues = [0.1]\n");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }
}
