use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::federation::{StrategyKind, Weighting};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    IidComplete,
    IidPartial,
    NonIidComplete,
    NonIidPartial,
}

impl Scenario {
    pub fn is_iid(self) -> bool {
        matches!(self, Self::IidComplete | Self::IidPartial)
    }

    pub fn is_partial(self) -> bool {
        matches!(self, Self::IidPartial | Self::NonIidPartial)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_patients_per_node: usize,
    pub n_external_patients: usize,
    pub n_labels: usize,
    pub latent_dim: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
    pub uncertain_rate: f64,
    pub shift_magnitude: f64,
    /// train / validation / test fractions of each node's patients
    pub split: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_patients_per_node: 2000,
            n_external_patients: 1000,
            n_labels: 14,
            latent_dim: 16,
            feature_dim: 32,
            noise_std: 0.5,
            uncertain_rate: 0.05,
            shift_magnitude: 1.0,
            split: [0.7, 0.1, 0.2],
        }
    }
}

/// Label-pruning plan. Partial scenarios give node 0 `node0` labels and node 1
/// `node1` labels with `shared` in common; NonIidComplete trains both nodes on
/// the same `complete_view` labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelPlan {
    pub node0: usize,
    pub node1: usize,
    pub shared: usize,
    pub complete_view: usize,
}

impl Default for LabelPlan {
    fn default() -> Self {
        Self {
            node0: 11,
            node1: 7,
            shared: 4,
            complete_view: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_widths: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_widths: vec![64, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub n_patients: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            n_patients: 4000,
            epochs: 10,
            lr: 0.05,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    /// learning rate of every block on iid scenarios
    pub lr: f64,
    /// per-node learning rates on non-iid scenarios
    pub node_lr: [f64; 2],
    pub warmup_lr: f64,
    pub warmup_epochs: usize,
    pub warmup_batch_size: usize,
    pub weighting: Weighting,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            rounds: 100,
            local_epochs: 1,
            batch_size: 64,
            lr: 1e-5,
            node_lr: [1e-5, 5e-5],
            warmup_lr: crate::neural::WARMUP_LR,
            warmup_epochs: 150,
            warmup_batch_size: 1,
            weighting: Weighting::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub n_bootstrap: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { n_bootstrap: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_arms")]
    pub arms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub labels: LabelPlan,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

fn default_arms() -> Vec<String> {
    ["fedfbn", "fedavg", "fedbn", "local", "centralized"]
        .map(String::from)
        .to_vec()
}

impl ExperimentConfig {
    /// Defaults for `scenario`.
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            master_seed: 0,
            arms: default_arms(),
            out_dir: None,
            data: DataConfig::default(),
            labels: LabelPlan::default(),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            training: TrainingConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn strategies(&self) -> Result<Vec<StrategyKind>> {
        let mut out: Vec<StrategyKind> = Vec::new();
        for a in &self.arms {
            let s: StrategyKind = a.parse()?;
            if out.contains(&s) {
                return Err(Error::Config(format!("arm `{a}` listed twice")));
            }
            out.push(s);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.n_patients_per_node < 10 || d.n_external_patients < 1 {
            return Err(Error::Config("too few patients".into()));
        }
        if d.n_labels == 0 || d.latent_dim == 0 || d.feature_dim == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if d.noise_std.is_nan() || d.noise_std < 0.0 || !(0.0..1.0).contains(&d.uncertain_rate) {
            return Err(Error::Config(
                "noise_std or uncertain_rate out of range".into(),
            ));
        }
        if d.split.iter().any(|&f| f.is_nan() || f <= 0.0)
            || (d.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "split {:?} must be positive and sum to 1",
                d.split
            )));
        }
        if !self.scenario.is_iid() && (d.shift_magnitude.is_nan() || d.shift_magnitude <= 0.0) {
            return Err(Error::Config(
                "non-iid scenarios need a nonzero shift_magnitude".into(),
            ));
        }
        let p = &self.labels;
        let l = d.n_labels;
        if self.scenario.is_partial()
            && (p.shared == 0
                || p.shared > p.node0.min(p.node1)
                || p.node0 + p.node1 - p.shared != l)
        {
            return Err(Error::Config(format!(
                "infeasible pruning plan: {} + {} labels with {} shared must cover {l}",
                p.node0, p.node1, p.shared
            )));
        }
        if self.scenario == Scenario::NonIidComplete && !(1..=l).contains(&p.complete_view) {
            return Err(Error::Config(format!(
                "complete_view {} outside 1..={l}",
                p.complete_view
            )));
        }
        if self.model.hidden_widths.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        let t = &self.training;
        if t.rounds == 0
            || t.local_epochs == 0
            || t.batch_size < 2
            || t.warmup_batch_size == 0
            || self.pretrain.batch_size < 2
        {
            return Err(Error::Config(
                "rounds and local_epochs must be ≥ 1 and batch sizes ≥ 2".into(),
            ));
        }
        let lrs = [
            t.lr,
            t.node_lr[0],
            t.node_lr[1],
            t.warmup_lr,
            self.pretrain.lr,
        ];
        if lrs.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(
                "learning rates must be finite and ≥ 0".into(),
            ));
        }
        if self.evaluation.n_bootstrap < crate::metrics::MIN_BOOTSTRAP {
            return Err(Error::Config(format!(
                "n_bootstrap must be at least {}",
                crate::metrics::MIN_BOOTSTRAP
            )));
        }
        if self.strategies()?.is_empty() {
            return Err(Error::Config("no arms selected".into()));
        }
        Ok(())
    }

    /// sha256 of the canonical (resolved) configuration, output directory
    /// excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
