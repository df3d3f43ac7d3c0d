//! Run configuration: flat JSON objects whose dotted keys spell out nesting
//! (`"omis.beta": 0.7` is the same as `{"omis": {"beta": 0.7}}`).
//!
//! Unknown keys are rejected, and parse errors name the offending key path.
//! Anything left unset is filled from per-task defaults by [`RunConfig::resolve`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::estimator::EstimatorKind;
use crate::importance::EpsilonPolicy;
use crate::metric::{ScalarMetric, VectorMetric};
use crate::net::ActivationKind;
use crate::train::{equal_counts, ImportanceInit, OptimizerKind, TrainConfig, UniformSampling};

/// Built-in experiment families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Polynomial regression of the given order.
    Polynomial(usize),
    Toy2d,
    Image,
    Idx,
}

impl TaskKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "toy2d" => Some(TaskKind::Toy2d),
            "image" => Some(TaskKind::Image),
            "idx" | "digits" => Some(TaskKind::Idx),
            _ => s
                .strip_prefix("poly")
                .and_then(|k| k.parse::<usize>().ok())
                .map(TaskKind::Polynomial),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset generator seed; the run seed when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Training points (polynomial, toy) or subset size (idx).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_points: Option<usize>,
    /// Evaluation points (toy) or evaluation subset size (idx).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<[f64; 2]>,
    /// PPM file for the image task; a synthetic image is used when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<[usize; 2]>,
    /// IDX image/label files; synthetic digits are written when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_labels: Option<PathBuf>,
}

fn default_momentum() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportanceConfig {
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Scalar metric; the closed-form cross-entropy metric for
    /// classification and the output-gradient norm otherwise when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<ScalarMetric>,
    /// Vector metric for MIS; per-node unless the output is too narrow.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector_metric: Option<VectorMetric>,
    #[serde(default = "default_init")]
    pub init: ImportanceInit,
    #[serde(default)]
    pub epsilon: EpsilonPolicy,
}

fn default_init() -> ImportanceInit {
    ImportanceInit::SgdEpoch
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        ImportanceConfig {
            momentum: default_momentum(),
            metric: None,
            vector_metric: None,
            init: default_init(),
            epsilon: EpsilonPolicy::default(),
        }
    }
}

fn default_beta() -> f64 {
    0.7
}
fn default_ridge() -> f64 {
    1e-8
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmisConfig {
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "yes")]
    pub bias_correction: bool,
}

impl Default for OmisConfig {
    fn default() -> Self {
        OmisConfig {
            beta: default_beta(),
            ridge: default_ridge(),
            bias_correction: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<OptimizerKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<ActivationKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pe_freqs: Option<usize>,
}

fn default_sampling() -> UniformSampling {
    UniformSampling::WithoutReplacement
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: String,
    pub estimator: EstimatorKind,
    #[serde(alias = "B")]
    pub batch_size: usize,
    /// `J`; one technique per unit of `technique_counts` when that is set.
    #[serde(default, alias = "J", skip_serializing_if = "Option::is_none")]
    pub techniques: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub technique_counts: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sampling")]
    pub sampling: UniformSampling,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub importance: ImportanceConfig,
    #[serde(default)]
    pub omis: OmisConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub net: NetConfig,
}

/// Nest dotted keys: `{"a.b": 1}` → `{"a": {"b": 1}}`. Already-nested
/// objects merge with dotted siblings.
pub fn unflatten(flat: &Map<String, Value>) -> Result<Value> {
    let mut root = Map::new();
    for (key, value) in flat {
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::ConfigParse {
                path: key.clone(),
                message: "empty key segment".into(),
            });
        }
        insert(&mut root, &parts, value.clone(), key)?;
    }
    Ok(Value::Object(root))
}

fn insert(map: &mut Map<String, Value>, parts: &[&str], value: Value, full: &str) -> Result<()> {
    let clash = || Error::ConfigParse {
        path: full.to_string(),
        message: "key is both a value and a section".into(),
    };
    let (head, rest) = (parts[0], &parts[1..]);
    if rest.is_empty() {
        match (map.get_mut(head), value) {
            (Some(Value::Object(existing)), Value::Object(incoming)) => {
                for (k, v) in incoming {
                    insert(existing, &[k.as_str()], v, full)?;
                }
            }
            (Some(_), _) => return Err(clash()),
            (None, v) => {
                let v = match v {
                    Value::Object(inner) => unflatten(&inner)?,
                    v => v,
                };
                map.insert(head.to_string(), v);
            }
        }
        return Ok(());
    }
    let entry = map.entry(head.to_string()).or_insert_with(|| Value::Object(Map::new()));
    match entry {
        Value::Object(inner) => insert(inner, rest, value, full),
        _ => Err(clash()),
    }
}

/// Inverse of [`unflatten`]: nested objects become dotted keys; arrays and
/// scalars stay leaves.
pub fn flatten(value: &Value) -> Map<String, Value> {
    fn walk(prefix: &str, v: &Value, out: &mut Map<String, Value>) {
        match v {
            Value::Object(m) if !m.is_empty() => {
                for (k, child) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            Value::Object(_) => {}
            leaf => {
                out.insert(prefix.to_string(), leaf.clone());
            }
        }
    }
    let mut out = Map::new();
    walk("", value, &mut out);
    out
}

/// Parse a flat-JSON config string and validate it.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let raw: Value = serde_json::from_str(text).map_err(|e| Error::ConfigParse {
        path: String::new(),
        message: e.to_string(),
    })?;
    let Value::Object(flat) = raw else {
        return Err(Error::ConfigParse {
            path: String::new(),
            message: "config must be a JSON object".into(),
        });
    };
    let nested = unflatten(&flat)?;
    let cfg: RunConfig = serde_path_to_error::deserialize(nested).map_err(|e| Error::ConfigParse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    parse_config_str(&std::fs::read_to_string(path)?)
}

impl RunConfig {
    /// Flat dotted-key JSON.
    pub fn to_flat_json(&self) -> String {
        let v = serde_json::to_value(self).expect("config is always serializable");
        serde_json::to_string_pretty(&Value::Object(flatten(&v))).expect("JSON value serializes")
    }

    pub fn task_kind(&self) -> Result<TaskKind> {
        TaskKind::parse(&self.task)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown task {:?}", self.task)))
    }

    /// Per-technique counts: explicit, else `B` split over `J` (default 1).
    pub fn counts(&self) -> Vec<usize> {
        match &self.technique_counts {
            Some(c) => c.clone(),
            None => equal_counts(self.batch_size, self.techniques.unwrap_or(1)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.task_kind()?;
        if self.batch_size < 1 {
            return Err(Error::ConfigInvalid("B ≥ 1".into()));
        }
        if let (Some(j), Some(c)) = (self.techniques, &self.technique_counts) {
            if j != c.len() {
                return Err(Error::ConfigInvalid(format!(
                    "J = {j} but technique_counts has {} entries",
                    c.len()
                )));
            }
        }
        if self.techniques == Some(0) {
            return Err(Error::ConfigInvalid("J ≥ 1".into()));
        }
        if let TaskKind::Polynomial(order) = kind {
            if order == 0 {
                return Err(Error::ConfigInvalid("polynomial order must be ≥ 1".into()));
            }
        }
        if self.data.images.is_some() != self.data.labels.is_some() {
            return Err(Error::ConfigInvalid("data.images and data.labels go together".into()));
        }
        if self.data.eval_images.is_some() != self.data.eval_labels.is_some() {
            return Err(Error::ConfigInvalid("data.eval_images and data.eval_labels go together".into()));
        }
        self.train_config(&TaskDefaults::for_task(kind)).validate()
    }

    /// Fill every unset knob from the task's defaults.
    pub fn train_config(&self, d: &TaskDefaults) -> TrainConfig {
        let mut t = TrainConfig::new(self.estimator, self.batch_size, d.loss);
        t.technique_counts = self.counts();
        t.momentum = self.importance.momentum;
        t.beta = self.omis.beta;
        t.ridge = self.omis.ridge;
        t.bias_correction = self.omis.bias_correction;
        t.epsilon = self.importance.epsilon;
        t.scalar_metric = self.importance.metric.unwrap_or(d.scalar_metric);
        t.vector_metric = self.importance.vector_metric.unwrap_or(d.vector_metric);
        t.init = self.importance.init;
        t.uniform_sampling = self.sampling;
        t.optimizer = self.optim.kind.unwrap_or(d.optimizer);
        t.lr = self.optim.lr.unwrap_or(d.lr);
        t.epochs = self.epochs.unwrap_or(d.epochs);
        t.seed = self.seed;
        t
    }
}

/// Defaults per task family.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDefaults {
    pub loss: crate::net::LossKind,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub epochs: usize,
    pub scalar_metric: ScalarMetric,
    pub vector_metric: VectorMetric,
    pub hidden: Vec<usize>,
    pub activation: ActivationKind,
    pub pe_freqs: usize,
    pub n_points: usize,
    pub eval_points: usize,
    pub noise_sd: f64,
}

impl TaskDefaults {
    pub fn for_task(kind: TaskKind) -> Self {
        use crate::net::LossKind::*;
        match kind {
            TaskKind::Polynomial(_) => TaskDefaults {
                loss: Mse,
                optimizer: OptimizerKind::Adam,
                lr: 0.01,
                epochs: 100,
                scalar_metric: ScalarMetric::OutputGradNorm,
                vector_metric: VectorMetric::ParamGroups,
                hidden: vec![],
                activation: ActivationKind::Identity,
                pe_freqs: 0,
                n_points: 320,
                eval_points: 0,
                noise_sd: 0.0,
            },
            TaskKind::Toy2d => TaskDefaults {
                loss: CrossEntropy,
                optimizer: OptimizerKind::Adam,
                lr: 1e-2,
                epochs: 50,
                scalar_metric: ScalarMetric::CrossEntropyClosedForm,
                vector_metric: VectorMetric::PerNodeGrads,
                hidden: vec![32, 32],
                activation: ActivationKind::Relu,
                pe_freqs: 0,
                n_points: 600,
                eval_points: 600,
                noise_sd: 0.0,
            },
            TaskKind::Image => TaskDefaults {
                loss: Mse,
                optimizer: OptimizerKind::Adam,
                lr: 1e-3,
                epochs: 500,
                scalar_metric: ScalarMetric::OutputGradNorm,
                vector_metric: VectorMetric::PerNodeGrads,
                hidden: vec![32, 32, 32, 32],
                activation: ActivationKind::Sine,
                pe_freqs: 4,
                n_points: 64,
                eval_points: 0,
                noise_sd: 0.0,
            },
            TaskKind::Idx => TaskDefaults {
                loss: CrossEntropy,
                optimizer: OptimizerKind::Adam,
                lr: 1e-3,
                epochs: 20,
                scalar_metric: ScalarMetric::CrossEntropyClosedForm,
                vector_metric: VectorMetric::PerNodeGrads,
                hidden: vec![64, 32],
                activation: ActivationKind::Relu,
                pe_freqs: 0,
                n_points: 1024,
                eval_points: 1000,
                noise_sd: 0.0,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config_str(r#"{"task":"poly6","estimator":"omis","B":32,"J":4}"#).unwrap();
        assert_eq!(cfg.omis.beta, 0.7);
        assert_eq!(cfg.importance.momentum, 0.3);
        assert_eq!(cfg.counts(), vec![8; 4]);
        let t = cfg.train_config(&TaskDefaults::for_task(cfg.task_kind().unwrap()));
        assert_eq!(t.beta, 0.7);
        assert_eq!(t.technique_counts, vec![8; 4]);
    }

    #[test]
    fn invalid_configs() {
        let e = parse_config_str(r#"{"task":"poly6","estimator":"is","B":0}"#).unwrap_err();
        assert!(matches!(e, Error::ConfigInvalid(ref m) if m == "B ≥ 1"), "{e}");
        let e = parse_config_str(r#"{"task":"poly6","estimator":"omis","B":32,"technique_counts":[8,8]}"#).unwrap_err();
        assert!(matches!(e, Error::ConfigInvalid(_)), "{e}");
        let e = parse_config_str(r#"{"task":"nope","estimator":"is","B":4}"#).unwrap_err();
        assert!(matches!(e, Error::ConfigInvalid(_)));
    }

    #[test]
    fn unknown_and_mistyped_keys_report_path() {
        let e = parse_config_str(r#"{"task":"poly6","estimator":"is","B":4,"omis.gamma":1}"#).unwrap_err();
        assert!(matches!(e, Error::ConfigParse { ref message, .. } if message.contains("gamma")), "{e}");
        let e = parse_config_str(r#"{"task":"poly6","estimator":"is","B":4,"omis.beta":"high"}"#).unwrap_err();
        assert!(matches!(e, Error::ConfigParse { ref path, .. } if path == "omis.beta"), "{e}");
    }

    #[test]
    fn round_trip() {
        let text = r#"{"task":"image","estimator":"omis","B":256,"J":3,"seed":4,
            "importance.epsilon.kind":"fixed","importance.epsilon.value":0.5,
            "net.hidden":[16,16],"optim.lr":0.002,"data.resolution":[32,32]}"#;
        let a = parse_config_str(text).unwrap();
        let b = parse_config_str(&a.to_flat_json()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.to_flat_json(), a.to_flat_json());
        assert!(a.to_flat_json().contains("\"omis.beta\""));
    }

    #[test]
    fn nested_and_dotted_merge() {
        let a = parse_config_str(r#"{"task":"toy2d","estimator":"is","B":8,"omis":{"beta":0.5},"omis.ridge":0.0}"#).unwrap();
        assert_eq!((a.omis.beta, a.omis.ridge), (0.5, 0.0));
        let e = parse_config_str(r#"{"task":"toy2d","estimator":"is","B":8,"omis":1,"omis.ridge":0.0}"#).unwrap_err();
        assert!(matches!(e, Error::ConfigParse { .. }));
    }

    #[test]
    fn task_names() {
        assert_eq!(TaskKind::parse("poly6"), Some(TaskKind::Polynomial(6)));
        assert_eq!(TaskKind::parse("digits"), Some(TaskKind::Idx));
        assert_eq!(TaskKind::parse("polyx"), None);
    }
}
