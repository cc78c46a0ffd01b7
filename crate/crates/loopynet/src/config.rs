//! The JSON run configuration consumed by every CLI command.
//!
//! Precedence is flag > config field > built-in default. Unknown fields are
//! rejected so typos surface as parse errors before any work starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::graph::{Graph, IndexingMode, SynthSpec};
use crate::model::{Dims, InitScheme, LossKind};
use crate::train::{Algorithm, Convergence};
use crate::Result;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub edges: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub params_in: Option<PathBuf>,
    pub params_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCfg {
    #[serde(default = "default_k")]
    pub k: usize,
    /// One entry per hidden layer; a single entry is shared across all k.
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_g")]
    pub g_hops: usize,
}

fn default_k() -> usize {
    1
}
fn default_hidden() -> Vec<usize> {
    vec![8]
}
fn default_g() -> usize {
    2
}

impl Default for ModelCfg {
    fn default() -> Self {
        ModelCfg {
            k: default_k(),
            hidden_dims: default_hidden(),
            g_hops: default_g(),
        }
    }
}

impl ModelCfg {
    /// Hidden widths expanded to length k.
    pub fn widths(&self) -> Result<Vec<usize>> {
        if self.k == 0 {
            return Err(Error::Config("model.k must be >= 1".to_string()));
        }
        if self.g_hops == 0 {
            return Err(Error::Config("model.g_hops must be >= 1".to_string()));
        }
        let widths = if self.hidden_dims.len() == 1 && self.k > 1 {
            vec![self.hidden_dims[0]; self.k]
        } else {
            self.hidden_dims.clone()
        };
        if widths.len() != self.k {
            return Err(Error::Config(format!(
                "model.hidden_dims has {} entries, expected {} (or a single shared width)",
                self.hidden_dims.len(),
                self.k
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden widths must be >= 1".to_string()));
        }
        Ok(widths)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerCfg {
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    /// Defaults to 0.1 for SGD and 0.01 for Adam.
    pub eta_w: Option<f64>,
    pub eta_b: Option<f64>,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_algorithm() -> Algorithm {
    Algorithm::Sgd
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl Default for OptimizerCfg {
    fn default() -> Self {
        OptimizerCfg {
            algorithm: default_algorithm(),
            eta_w: None,
            eta_b: None,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }
}

impl OptimizerCfg {
    pub fn rates(&self) -> (f64, f64) {
        let default = match self.algorithm {
            Algorithm::Sgd => 0.1,
            Algorithm::Adam => 0.01,
        };
        (self.eta_w.unwrap_or(default), self.eta_b.unwrap_or(default))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSchemeCfg {
    Zeros,
    Uniform,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingCfg {
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default)]
    pub batch: bool,
    #[serde(default)]
    pub convergence: Convergence,
    #[serde(default = "default_init_scheme")]
    pub init_scheme: InitSchemeCfg,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Defaults to `seed` when unset.
    pub init_seed: Option<u64>,
}

fn default_epochs() -> usize {
    100
}
fn default_seed() -> u64 {
    1
}
fn default_loss() -> LossKind {
    LossKind::Mse
}
fn default_init_scheme() -> InitSchemeCfg {
    InitSchemeCfg::Uniform
}
fn default_init_scale() -> f64 {
    0.1
}

impl Default for TrainingCfg {
    fn default() -> Self {
        TrainingCfg {
            max_epochs: default_epochs(),
            seed: default_seed(),
            loss: default_loss(),
            batch: false,
            convergence: Convergence::default(),
            init_scheme: default_init_scheme(),
            init_scale: default_init_scale(),
            init_seed: None,
        }
    }
}

impl TrainingCfg {
    pub fn init_scheme(&self) -> Result<InitScheme> {
        match self.init_scheme {
            InitSchemeCfg::Zeros => Ok(InitScheme::Zeros),
            InitSchemeCfg::Uniform => {
                if self.init_scale <= 0.0 {
                    return Err(Error::Config("training.init_scale must be > 0".to_string()));
                }
                Ok(InitScheme::Uniform(self.init_scale))
            }
        }
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed.unwrap_or(self.seed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCfg {
    #[serde(default = "default_k_folds")]
    pub k_folds: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Without `--cv`: evaluate this fold as the test set; all nodes if unset.
    pub test_fold: Option<usize>,
}

fn default_k_folds() -> usize {
    5
}

impl Default for EvalCfg {
    fn default() -> Self {
        EvalCfg {
            k_folds: default_k_folds(),
            seed: default_seed(),
            test_fold: None,
        }
    }
}

/// Root of the JSON config document.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub model: ModelCfg,
    #[serde(default)]
    pub optimizer: OptimizerCfg,
    #[serde(default)]
    pub training: TrainingCfg,
    #[serde(default)]
    pub eval: EvalCfg,
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    #[serde(default)]
    pub indexing: IndexingMode,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io_open(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("config {}: {e}", path.display())))
    }

    fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
        path.as_ref()
            .ok_or_else(|| Error::Config(format!("paths.{what} is required")))
    }

    fn require_file<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
        let p = Self::require(path, what)?;
        if !p.exists() {
            return Err(Error::Io {
                msg: format!("file not found: {}", p.display()),
                source: None,
            });
        }
        Ok(p)
    }

    /// Validate everything training needs; returns nothing but fails before
    /// any side effect.
    pub fn validate_for_train(&self) -> Result<()> {
        self.model.widths()?;
        self.training.init_scheme()?;
        Self::require_file(&self.paths.edges, "edges")?;
        Self::require_file(&self.paths.features, "features")?;
        Self::require_file(&self.paths.labels, "labels")?;
        Self::require(&self.paths.params_out, "params_out")?;
        if self.training.max_epochs == 0 {
            return Err(Error::Config("training.max_epochs must be >= 1".to_string()));
        }
        Ok(())
    }

    pub fn validate_for_eval(&self, cv: bool) -> Result<()> {
        self.model.widths()?;
        Self::require_file(&self.paths.edges, "edges")?;
        Self::require_file(&self.paths.features, "features")?;
        Self::require_file(&self.paths.labels, "labels")?;
        if cv {
            self.training.init_scheme()?;
        } else {
            Self::require_file(&self.paths.params_in, "params_in")?;
        }
        Ok(())
    }

    pub fn validate_for_tree(&self) -> Result<()> {
        self.model.widths()?;
        Self::require_file(&self.paths.edges, "edges")?;
        Self::require_file(&self.paths.features, "features")?;
        Self::require_file(&self.paths.labels, "labels")?;
        Ok(())
    }

    /// Load the graph named by `paths` under the configured indexing mode.
    pub fn load_graph(&self) -> Result<Graph> {
        let edges = Self::require_file(&self.paths.edges, "edges")?;
        let features = Self::require_file(&self.paths.features, "features")?;
        let labels = Self::require_file(&self.paths.labels, "labels")?;
        let skeleton = crate::graph::load_edge_list(edges)?.apply_indexing(self.indexing);
        let f = crate::graph::load_node_table(features, &skeleton, crate::graph::TableKind::Features)?;
        let l = crate::graph::load_node_table(labels, &skeleton, crate::graph::TableKind::Labels)?;
        Graph::assemble(skeleton, f, l)
    }

    pub fn dims_for(&self, graph: &Graph) -> Result<Dims> {
        Ok(Dims {
            feature: graph.feature_dim(),
            hidden: self.model.widths()?,
            label: graph.label_dim(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg.model.k, 1);
        assert_eq!(cfg.model.g_hops, 2);
        assert_eq!(cfg.eval.k_folds, 5);
        assert_eq!(cfg.optimizer.rates(), (0.1, 0.1));
    }

    #[test]
    fn adam_default_rates() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"optimizer": {"algorithm": "adam"}}"#).unwrap();
        assert_eq!(cfg.optimizer.rates(), (0.01, 0.01));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"modle": {}}"#);
        assert!(err.is_err());
    }

    #[test]
    fn shared_width_expands_to_k() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"model": {"k": 3, "hidden_dims": [5]}}"#).unwrap();
        assert_eq!(cfg.model.widths().unwrap(), vec![5, 5, 5]);
    }

    #[test]
    fn zero_k_is_a_config_error() {
        let cfg: RunConfig = serde_json::from_str(r#"{"model": {"k": 0}}"#).unwrap();
        assert!(matches!(cfg.model.widths(), Err(Error::Config(_))));
    }
}
