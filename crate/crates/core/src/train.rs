//! Training loops: uniform SGD, importance-sampled SGD with a persistent
//! importance table, balance-heuristic and optimal MIS SGD, and full-batch
//! gradient descent.
//!
//! Every estimator produces an estimate of the gradient *sum* over the
//! dataset; the trainer divides by `N` and hands the mean gradient to the
//! optimizer. One epoch is `⌊N/B⌋` optimizer steps for every estimator, so
//! epoch counts are also iteration counts. For importance-based estimators
//! the first epoch is the initialization epoch: plain SGD over a seeded
//! shuffle that also records every datum's importance.

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{as_estimate, balance_mis_estimate, is_estimate, EstimatorKind, GradEstimate, MisSystem};
use crate::importance::{DiscretePdf, EpsilonPolicy, ImportanceTable};
use crate::linalg::Rng;
use crate::metric::{
    param_group_importances, param_group_ranges, select_top_nodes, ScalarMetric, VectorMetric,
};
use crate::net::{LossKind, Network, Optimizer, SampleGrad, Target, Workspace};
use crate::tasks::{Dataset, TargetKind};

/// Seed offset separating the sampling stream from weight initialization.
const SAMPLING_STREAM: u64 = 0x5eed_0f_5a_3b1e;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// How the importance table starts out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceInit {
    /// One uniform SGD epoch that records every datum's importance.
    SgdEpoch,
    /// Constant importance, never updated: sampling stays uniform.
    FrozenUniform,
}

/// Mini-batch drawing for the uniform estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UniformSampling {
    /// Shuffle once per epoch and walk consecutive batches.
    WithoutReplacement,
    /// i.i.d. uniform draws.
    WithReplacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub estimator: EstimatorKind,
    pub batch_size: usize,
    /// Per-technique sample counts `n_j` for the MIS estimators; `J` is the
    /// length.
    pub technique_counts: Vec<usize>,
    pub momentum: f64,
    pub beta: f64,
    /// Relative ridge; the absolute ridge is `ridge · trace(⟨A⟩)/J`.
    pub ridge: f64,
    pub bias_correction: bool,
    pub epsilon: EpsilonPolicy,
    pub scalar_metric: ScalarMetric,
    pub vector_metric: VectorMetric,
    pub init: ImportanceInit,
    pub uniform_sampling: UniformSampling,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossKind,
}

impl TrainConfig {
    pub fn new(estimator: EstimatorKind, batch_size: usize, loss: LossKind) -> Self {
        TrainConfig {
            estimator,
            batch_size,
            technique_counts: vec![batch_size],
            momentum: 0.3,
            beta: 0.7,
            ridge: 1e-8,
            bias_correction: true,
            epsilon: EpsilonPolicy::default(),
            scalar_metric: ScalarMetric::OutputGradNorm,
            vector_metric: VectorMetric::PerNodeGrads,
            init: ImportanceInit::SgdEpoch,
            uniform_sampling: UniformSampling::WithoutReplacement,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            epochs: 10,
            seed: 0,
            loss,
        }
    }

    /// `J` techniques with the batch split as evenly as possible.
    pub fn with_techniques(mut self, j: usize) -> Self {
        self.technique_counts = equal_counts(self.batch_size, j);
        self
    }

    pub fn techniques(&self) -> usize {
        self.technique_counts.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.batch_size < 1 {
            return bad("B ≥ 1".into());
        }
        if self.epochs < 1 {
            return bad("epochs ≥ 1".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("importance momentum m ∈ [0,1), got {}", self.momentum));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad(format!("β ∈ [0,1), got {}", self.beta));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return bad(format!("ridge ≥ 0, got {}", self.ridge));
        }
        match self.epsilon {
            EpsilonPolicy::Fixed(e) | EpsilonPolicy::Relative(e) if !(e >= 0.0) || !e.is_finite() => {
                return bad(format!("epsilon ≥ 0, got {e}"));
            }
            _ => {}
        }
        if self.estimator.is_multi() {
            if self.technique_counts.is_empty() {
                return bad("J ≥ 1".into());
            }
            if self.technique_counts.iter().any(|&n| n == 0) {
                return bad("every n_j ≥ 1".into());
            }
            let total: usize = self.technique_counts.iter().sum();
            if total != self.batch_size {
                return bad(format!("Σn_j = {total} must equal B = {}", self.batch_size));
            }
        }
        Ok(())
    }
}

/// `B` split into `J` counts differing by at most one, larger counts first.
pub fn equal_counts(b: usize, j: usize) -> Vec<usize> {
    let j = j.max(1);
    (0..j).map(|k| b / j + usize::from(k < b % j)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Cumulative training wall time in milliseconds (evaluation excluded).
    pub wall_ms: f64,
    /// Mean loss over the full training set after the epoch.
    pub train_loss: f64,
    pub eval_loss: f64,
    /// Classification error rate on the evaluation set; NaN for regression.
    pub eval_error: f64,
    pub steps: usize,
    pub min_weight: f64,
    pub max_weight: f64,
    pub ridge: f64,
    pub condition: f64,
    pub biased: bool,
}

/// Per-sample workers available for backward passes. `MISGRAD_THREADS`
/// caps the count; 1 (or a single core) means everything runs inline.
fn pool() -> Option<&'static rayon::ThreadPool> {
    static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();
    POOL.get_or_init(|| {
        let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
        let threads = std::env::var("MISGRAD_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or(cores);
        if threads <= 1 {
            return None;
        }
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().ok()
    })
    .as_ref()
}

/// Below this many gradient entries per batch the thread hand-off costs more
/// than it saves.
const PARALLEL_WORK: usize = 1 << 15;

/// Per-sample backward for every index, results in the given order.
pub fn backward_batch(net: &Network, data: &Dataset, loss: LossKind, indices: &[usize]) -> Result<Vec<SampleGrad>> {
    let p = net.param_count();
    let one = |ws: &mut Workspace, i: usize| -> Result<SampleGrad> {
        let mut g = vec![0.0; p];
        let (l, og) = net.backward_into(&data.inputs[i], &data.targets[i], loss, ws, &mut g)?;
        Ok(SampleGrad {
            index: i,
            loss: l,
            param_grad: g,
            output: net.last_output(ws).to_vec(),
            output_grad: og,
        })
    };
    match pool() {
        Some(pool) if indices.len() * p >= PARALLEL_WORK => pool.install(|| {
            indices
                .par_iter()
                .map_init(Workspace::default, |ws, &i| one(ws, i))
                .collect()
        }),
        _ => {
            let mut ws = Workspace::default();
            indices.iter().map(|&i| one(&mut ws, i)).collect()
        }
    }
}

/// Mean loss and (for classification) error rate over a dataset.
pub fn evaluate(net: &Network, data: &Dataset, loss: LossKind) -> Result<(f64, f64)> {
    let eval_one = |ws: &mut Workspace, i: usize| -> Result<(f64, bool)> {
        let l = net.sample_loss(&data.inputs[i], &data.targets[i], loss, ws)?;
        let wrong = match &data.targets[i] {
            Target::Class(c) => {
                let out = net.last_output(ws);
                let arg = out
                    .iter()
                    .enumerate()
                    .fold(0, |best, (k, v)| if *v > out[best] { k } else { best });
                arg != *c
            }
            Target::Values(_) => false,
        };
        Ok((l, wrong))
    };
    let idx: Vec<usize> = (0..data.len()).collect();
    let results: Vec<(f64, bool)> = match pool() {
        Some(pool) if data.len() * net.param_count() >= 8 * PARALLEL_WORK => pool.install(|| {
            idx.par_iter()
                .map_init(Workspace::default, |ws, &i| eval_one(ws, i))
                .collect::<Result<_>>()
        })?,
        _ => {
            let mut ws = Workspace::default();
            idx.iter().map(|&i| eval_one(&mut ws, i)).collect::<Result<_>>()?
        }
    };
    let n = data.len() as f64;
    let mean = results.iter().map(|r| r.0).sum::<f64>() / n;
    let err = match data.target_kind {
        TargetKind::Classification { .. } => results.iter().filter(|r| r.1).count() as f64 / n,
        TargetKind::Regression { .. } => f64::NAN,
    };
    Ok((mean, err))
}

/// Which importance columns drive which technique.
#[derive(Debug, Clone, PartialEq)]
enum Techniques {
    /// Column `subset[j]` of a per-output-node table.
    Nodes(Vec<usize>),
    /// Column `j` of a parameter-group table with these ranges.
    Groups(Vec<std::ops::Range<usize>>),
}

#[derive(Debug, Clone, Copy)]
struct EpochStats {
    min_weight: f64,
    max_weight: f64,
    ridge: f64,
    condition: f64,
    biased: bool,
}

impl EpochStats {
    fn new() -> Self {
        EpochStats {
            min_weight: f64::NAN,
            max_weight: f64::NAN,
            ridge: 0.0,
            condition: f64::NAN,
            biased: false,
        }
    }

    fn absorb(&mut self, est: &GradEstimate) {
        let d = est.diagnostics;
        self.min_weight = self.min_weight.min(d.min_weight);
        self.max_weight = self.max_weight.max(d.max_weight);
        self.ridge = self.ridge.max(d.ridge);
        self.condition = self.condition.max(d.condition);
        self.biased |= d.biased;
    }
}

/// One training run: owns its network, data, importance state and RNG.
pub struct Trainer {
    cfg: TrainConfig,
    net: Network,
    optimizer: Optimizer,
    train: Arc<Dataset>,
    eval: Arc<Dataset>,
    rng: Rng,
    table: Option<ImportanceTable>,
    techniques: Option<Techniques>,
    system: Option<MisSystem>,
    epoch: usize,
    steps: usize,
    wall_ms: f64,
    /// Running mean |∂L/∂m_k| over the initialization epoch.
    node_magnitude: Vec<f64>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, net: Network, train: Arc<Dataset>, eval: Arc<Dataset>) -> Result<Self> {
        cfg.validate()?;
        if train.input_dim() != net.input_dim() || eval.input_dim() != net.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "dataset input width vs network",
                expected: net.input_dim(),
                actual: train.input_dim(),
            });
        }
        if train.target_kind.output_dim() != net.output_dim() {
            return Err(Error::ShapeMismatch {
                context: "dataset target width vs network output",
                expected: net.output_dim(),
                actual: train.target_kind.output_dim(),
            });
        }
        if train.len() < cfg.batch_size && cfg.estimator != EstimatorKind::Exact {
            return Err(Error::ConfigInvalid(format!(
                "batch size {} exceeds dataset size {}",
                cfg.batch_size,
                train.len()
            )));
        }
        let p = net.param_count();
        let optimizer = match cfg.optimizer {
            OptimizerKind::Sgd => Optimizer::sgd(cfg.lr),
            OptimizerKind::Adam => Optimizer::adam(cfg.lr, p),
        };
        let n = train.len();
        let j = cfg.techniques();
        let (table, techniques, system) = match cfg.estimator {
            EstimatorKind::Is | EstimatorKind::As => (
                Some(ImportanceTable::scalar(n, cfg.momentum).with_epsilon(cfg.epsilon)),
                None,
                None,
            ),
            EstimatorKind::BalanceMis | EstimatorKind::Omis => {
                let out = net.output_dim();
                let (width, tech) = match cfg.vector_metric {
                    VectorMetric::PerNodeGrads => {
                        if j > out {
                            return Err(Error::ConfigInvalid(format!(
                                "J = {j} per-node techniques but the output layer has {out} nodes; use the param_groups metric"
                            )));
                        }
                        (out, Techniques::Nodes((0..j).collect()))
                    }
                    VectorMetric::ParamGroups => {
                        if j > p {
                            return Err(Error::ConfigInvalid(format!("J = {j} exceeds parameter count {p}")));
                        }
                        (j, Techniques::Groups(param_group_ranges(p, j)))
                    }
                };
                let system = if cfg.estimator == EstimatorKind::Omis {
                    Some(
                        MisSystem::new(cfg.technique_counts.clone(), p, cfg.beta)?
                            .with_bias_correction(cfg.bias_correction),
                    )
                } else {
                    None
                };
                (
                    Some(ImportanceTable::vector(n, width, cfg.momentum).with_epsilon(cfg.epsilon)),
                    Some(tech),
                    system,
                )
            }
            EstimatorKind::Uniform | EstimatorKind::Exact => (None, None, None),
        };
        let mut t = Trainer {
            rng: Rng::new(cfg.seed ^ SAMPLING_STREAM),
            node_magnitude: vec![0.0; net.output_dim()],
            cfg,
            net,
            optimizer,
            train,
            eval,
            table,
            techniques,
            system,
            epoch: 0,
            steps: 0,
            wall_ms: 0.0,
        };
        if t.cfg.init == ImportanceInit::FrozenUniform {
            if let Some(table) = t.table.as_mut() {
                table.fill(1.0);
            }
        }
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn into_network(self) -> Network {
        self.net
    }

    pub fn importance(&self) -> Option<&ImportanceTable> {
        self.table.as_ref()
    }

    pub fn system(&self) -> Option<&MisSystem> {
        self.system.as_ref()
    }

    /// Output nodes driving each technique, when techniques are per-node.
    pub fn node_subset(&self) -> Option<&[usize]> {
        match &self.techniques {
            Some(Techniques::Nodes(s)) => Some(s),
            _ => None,
        }
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn steps_done(&self) -> usize {
        self.steps
    }

    pub fn steps_per_epoch(&self) -> usize {
        (self.train.len() / self.cfg.batch_size).max(1)
    }

    fn frozen(&self) -> bool {
        self.cfg.init == ImportanceInit::FrozenUniform
    }

    fn needs_init_epoch(&self) -> bool {
        self.table.is_some() && !self.frozen() && self.epoch == 0
    }

    /// Every datum's current sampling probability for each technique (one
    /// pdf for scalar tables, none for uniform and exact).
    pub fn sampling_pdfs(&self) -> Result<Vec<DiscretePdf>> {
        let Some(table) = &self.table else {
            return Ok(Vec::new());
        };
        match &self.techniques {
            None => Ok(vec![table.normalize(0)?]),
            Some(Techniques::Nodes(s)) => s.iter().map(|&c| table.normalize(c)).collect(),
            Some(Techniques::Groups(g)) => (0..g.len()).map(|c| table.normalize(c)).collect(),
        }
    }

    fn importance_value(&self, sg: &SampleGrad) -> Result<Vec<f64>> {
        match &self.techniques {
            None => Ok(vec![self
                .cfg
                .scalar_metric
                .evaluate(sg, &self.train.targets[sg.index])?]),
            Some(Techniques::Nodes(_)) => Ok(sg.output_grad.clone()),
            Some(Techniques::Groups(r)) => Ok(param_group_importances(sg, r)),
        }
    }

    fn apply(&mut self, est: &GradEstimate) -> Result<()> {
        let n = self.train.len() as f64;
        let mean: Vec<f64> = est.grad.iter().map(|g| g / n).collect();
        self.optimizer.step(&mut self.net, &mean)
    }

    /// Run one epoch and log it. The wall clock covers sampling, backward
    /// passes, estimation, importance bookkeeping, and the optimizer.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let epoch = self.epoch + 1;
        let start = Instant::now();
        let mut stats = EpochStats::new();
        let steps_before = self.steps;
        if self.needs_init_epoch() {
            self.init_epoch(&mut stats)?;
        } else {
            self.regular_epoch(&mut stats)?;
        }
        self.wall_ms += start.elapsed().as_secs_f64() * 1e3;
        self.epoch = epoch;
        if !self.net.params().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteGradient(0).at(epoch, self.steps));
        }
        let (train_loss, train_error) =
            evaluate(&self.net, &self.train, self.cfg.loss).map_err(|e| e.at(epoch, self.steps))?;
        let (eval_loss, eval_error) = if Arc::ptr_eq(&self.train, &self.eval) {
            (train_loss, train_error)
        } else {
            evaluate(&self.net, &self.eval, self.cfg.loss).map_err(|e| e.at(epoch, self.steps))?
        };
        Ok(EpochLog {
            epoch,
            wall_ms: self.wall_ms,
            train_loss,
            eval_loss,
            eval_error,
            steps: self.steps - steps_before,
            min_weight: stats.min_weight,
            max_weight: stats.max_weight,
            ridge: stats.ridge,
            condition: stats.condition,
            biased: stats.biased || self.cfg.estimator.is_biased(),
        })
    }

    /// Run the configured number of epochs, calling `sink` after each.
    pub fn run<F: FnMut(&EpochLog) -> Result<()>>(&mut self, mut sink: F) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::with_capacity(self.cfg.epochs);
        while self.epoch < self.cfg.epochs {
            let log = self.run_epoch()?;
            sink(&log)?;
            logs.push(log);
        }
        Ok(logs)
    }

    /// Initialization epoch: uniform SGD over a seeded shuffle; every
    /// datum's importance is set (no blend) from its pre-step backward pass.
    /// Data left over after the last full batch get a backward pass for
    /// their importance only.
    fn init_epoch(&mut self, stats: &mut EpochStats) -> Result<()> {
        let n = self.train.len();
        let b = self.cfg.batch_size;
        let mut order: Vec<usize> = (0..n).collect();
        self.rng.shuffle(&mut order);
        let uniform = DiscretePdf::uniform(n);
        let full = n / b;
        let epoch = self.epoch + 1;
        for k in 0..=full {
            let chunk = &order[k * b..((k + 1) * b).min(n)];
            if chunk.is_empty() {
                break;
            }
            let sgs = backward_batch(&self.net, &self.train, self.cfg.loss, chunk).map_err(|e| e.at(epoch, self.steps))?;
            for sg in &sgs {
                let v = self.importance_value(sg).map_err(|e| e.at(epoch, self.steps))?;
                for (acc, g) in self.node_magnitude.iter_mut().zip(&sg.output_grad) {
                    *acc += g.abs() / n as f64;
                }
                self.table
                    .as_mut()
                    .expect("init epoch requires a table")
                    .set(sg.index, &v)
                    .map_err(|e| e.at(epoch, self.steps))?;
            }
            if k < full {
                // Without replacement each datum appears once: the uniform IS
                // estimate is the batch mean scaled to a sum.
                let est = is_estimate(&sgs, &uniform).map_err(|e| e.at(epoch, self.steps))?;
                stats.absorb(&est);
                self.apply(&est).map_err(|e| e.at(epoch, self.steps))?;
                self.steps += 1;
            }
        }
        if let Some(Techniques::Nodes(subset)) = &mut self.techniques {
            *subset = select_top_nodes(&self.node_magnitude, subset.len());
        }
        if let Some(t) = self.table.as_mut() {
            t.end_epoch_accumulate();
        }
        Ok(())
    }

    fn regular_epoch(&mut self, stats: &mut EpochStats) -> Result<()> {
        let epoch = self.epoch + 1;
        let spe = self.steps_per_epoch();
        match self.cfg.estimator {
            EstimatorKind::Exact => {
                let all: Vec<usize> = (0..self.train.len()).collect();
                for _ in 0..spe {
                    self.exact_step(&all, stats).map_err(|e| e.at(epoch, self.steps))?;
                }
            }
            EstimatorKind::Uniform => match self.cfg.uniform_sampling {
                UniformSampling::WithoutReplacement => {
                    let mut order: Vec<usize> = (0..self.train.len()).collect();
                    self.rng.shuffle(&mut order);
                    let b = self.cfg.batch_size;
                    for k in 0..spe {
                        let batch = order[k * b..(k + 1) * b].to_vec();
                        self.exact_step(&batch, stats).map_err(|e| e.at(epoch, self.steps))?;
                    }
                }
                UniformSampling::WithReplacement => {
                    for _ in 0..spe {
                        self.step_inner(stats).map_err(|e| e.at(epoch, self.steps))?;
                    }
                }
            },
            _ => {
                for _ in 0..spe {
                    self.step_inner(stats).map_err(|e| e.at(epoch, self.steps))?;
                }
                if !self.frozen() {
                    if let Some(t) = self.table.as_mut() {
                        t.end_epoch_accumulate();
                    }
                }
            }
        }
        Ok(())
    }

    /// Uniform IS estimate over a fixed index set (full batch or one
    /// without-replacement mini-batch).
    fn exact_step(&mut self, batch: &[usize], stats: &mut EpochStats) -> Result<()> {
        let sgs = backward_batch(&self.net, &self.train, self.cfg.loss, batch)?;
        let est = is_estimate(&sgs, &DiscretePdf::uniform(self.train.len()))?;
        // With distinct indices the estimate is (N/|batch|)·Σ∇L.
        stats.absorb(&est);
        self.apply(&est)?;
        self.steps += 1;
        Ok(())
    }

    /// One sampled optimizer step outside the initialization epoch. Used by
    /// uniform-with-replacement, IS/AS and both MIS estimators.
    pub fn step(&mut self) -> Result<GradEstimate> {
        if self.needs_init_epoch() {
            return Err(Error::ConfigInvalid(
                "run the initialization epoch before single steps".into(),
            ));
        }
        let mut stats = EpochStats::new();
        let epoch = self.epoch + 1;
        self.step_inner(&mut stats).map_err(|e| e.at(epoch, self.steps))
    }

    fn step_inner(&mut self, stats: &mut EpochStats) -> Result<GradEstimate> {
        let n = self.train.len();
        let b = self.cfg.batch_size;
        let est = match self.cfg.estimator {
            EstimatorKind::Uniform | EstimatorKind::Exact => {
                let pdf = DiscretePdf::uniform(n);
                let idx = pdf.sample_with_replacement(b, &mut self.rng);
                let sgs = backward_batch(&self.net, &self.train, self.cfg.loss, &idx)?;
                is_estimate(&sgs, &pdf)?
            }
            EstimatorKind::Is | EstimatorKind::As => {
                let pdf = self.sampling_pdfs()?.remove(0);
                let idx = pdf.sample_with_replacement(b, &mut self.rng);
                let sgs = backward_batch(&self.net, &self.train, self.cfg.loss, &idx)?;
                let est = if self.cfg.estimator == EstimatorKind::Is {
                    is_estimate(&sgs, &pdf)?
                } else {
                    as_estimate(&sgs, n)
                };
                self.record_importance(&sgs)?;
                est
            }
            EstimatorKind::BalanceMis | EstimatorKind::Omis => {
                let pdfs = self.sampling_pdfs()?;
                let counts = self.cfg.technique_counts.clone();
                let mut idx = Vec::with_capacity(b);
                for (pdf, &nj) in pdfs.iter().zip(&counts) {
                    idx.extend(pdf.sample_with_replacement(nj, &mut self.rng));
                }
                let mut sgs = backward_batch(&self.net, &self.train, self.cfg.loss, &idx)?.into_iter();
                let batch: Vec<Vec<SampleGrad>> = counts.iter().map(|&nj| sgs.by_ref().take(nj).collect()).collect();
                let est = match self.system.as_mut() {
                    Some(sys) => {
                        sys.accumulate(&batch, &pdfs)?;
                        sys.estimate(self.cfg.ridge)?
                    }
                    None => balance_mis_estimate(&batch, &pdfs, &counts)?,
                };
                let flat: Vec<SampleGrad> = batch.into_iter().flatten().collect();
                self.record_importance(&flat)?;
                est
            }
        };
        stats.absorb(&est);
        self.apply(&est)?;
        self.steps += 1;
        Ok(est)
    }

    /// Blend new importance into the table for every drawn sample, once per
    /// occurrence in draw order.
    fn record_importance(&mut self, sgs: &[SampleGrad]) -> Result<()> {
        if self.frozen() {
            return Ok(());
        }
        for sg in sgs {
            let v = self.importance_value(sg)?;
            self.table.as_mut().expect("importance estimator has a table").update(sg.index, &v)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{ActivationKind, Architecture};
    use crate::tasks::{gen_polynomial, gen_toy_classification};

    fn poly_setup(est: EstimatorKind, j: usize) -> Trainer {
        let ds = Arc::new(gen_polynomial(6, 96, (-2.0, 2.0), 0.0, 1).unwrap());
        let net = Network::new(&Architecture::linear(6, 1), &mut Rng::new(5));
        let mut cfg = TrainConfig::new(est, 32, LossKind::Mse).with_techniques(j);
        cfg.vector_metric = VectorMetric::ParamGroups;
        cfg.lr = 0.01;
        cfg.epochs = 3;
        Trainer::new(cfg, net, ds.clone(), ds).unwrap()
    }

    #[test]
    fn equal_counts_split() {
        assert_eq!(equal_counts(32, 4), vec![8; 4]);
        assert_eq!(equal_counts(10, 3), vec![4, 3, 3]);
    }

    #[test]
    fn validation_messages() {
        let mut cfg = TrainConfig::new(EstimatorKind::Omis, 0, LossKind::Mse);
        assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid(m)) if m == "B ≥ 1"));
        cfg.batch_size = 32;
        cfg.technique_counts = vec![8, 8, 8];
        assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid(m)) if m.contains("Σn_j")));
        cfg.technique_counts = vec![16, 16];
        cfg.validate().unwrap();
        cfg.momentum = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn init_epoch_covers_every_datum_with_floor_steps() {
        for est in [EstimatorKind::Is, EstimatorKind::Omis] {
            let mut t = poly_setup(est, 4);
            let log = t.run_epoch().unwrap();
            assert_eq!(log.steps, 3);
            let table = t.importance().unwrap();
            let eps = table.last_epsilon().to_vec();
            for i in 0..table.len() {
                for (v, e) in table.get(i).iter().zip(&eps) {
                    // Set values are nonnegative norms here; each got +eps.
                    assert!(*v >= *e && *v > 0.0);
                }
            }
        }
    }

    #[test]
    fn init_leftovers_also_get_importance() {
        let ds = Arc::new(gen_polynomial(3, 70, (-2.0, 2.0), 0.0, 2).unwrap());
        let net = Network::new(&Architecture::linear(3, 1), &mut Rng::new(1));
        let mut cfg = TrainConfig::new(EstimatorKind::Is, 32, LossKind::Mse);
        cfg.epsilon = EpsilonPolicy::Fixed(0.0);
        let mut t = Trainer::new(cfg, net, ds.clone(), ds).unwrap();
        let log = t.run_epoch().unwrap();
        assert_eq!(log.steps, 2);
        let table = t.importance().unwrap();
        assert!((0..70).all(|i| table.get(i)[0] > 0.0));
    }

    #[test]
    fn vector_norms_match_scalar_table() {
        let ds = Arc::new(gen_toy_classification(90, 3).unwrap());
        let arch = Architecture::mlp(2, &[8], ActivationKind::Relu, 3);
        let mk = |est, j| {
            let net = Network::new(&arch, &mut Rng::new(7));
            let mut cfg = TrainConfig::new(est, 16, LossKind::CrossEntropy).with_techniques(j);
            cfg.epsilon = EpsilonPolicy::Fixed(0.0);
            let mut t = Trainer::new(cfg, net, ds.clone(), ds.clone()).unwrap();
            t.run_epoch().unwrap();
            t
        };
        let s = mk(EstimatorKind::Is, 1);
        let v = mk(EstimatorKind::Omis, 2);
        let (ts, tv) = (s.importance().unwrap(), v.importance().unwrap());
        assert_eq!(tv.width(), 3);
        for i in 0..90 {
            assert!((crate::linalg::norm(tv.get(i)) - ts.get(i)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn importance_update_touches_only_batch() {
        let mut t = poly_setup(EstimatorKind::Is, 1);
        t.run_epoch().unwrap();
        let before = t.importance().unwrap().clone();
        let mut probe = t.rng.clone();
        let pdf = t.sampling_pdfs().unwrap().remove(0);
        let drawn = pdf.sample_with_replacement(32, &mut probe);
        t.step().unwrap();
        let after = t.importance().unwrap();
        for i in 0..before.len() {
            if !drawn.contains(&i) {
                assert_eq!(before.get(i), after.get(i));
            }
        }
        assert!(drawn.iter().any(|&i| before.get(i) != after.get(i)));
    }

    #[test]
    fn exact_is_deterministic_and_monotone() {
        let run = || {
            let mut t = poly_setup(EstimatorKind::Exact, 1);
            let mut cfg = t.cfg.clone();
            cfg.optimizer = OptimizerKind::Sgd;
            cfg.lr = 0.05;
            cfg.epochs = 20;
            t = Trainer::new(cfg, t.net.clone(), t.train.clone(), t.eval.clone()).unwrap();
            t.run(|_| Ok(())).unwrap()
        };
        let a = run();
        let b = run();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.train_loss, y.train_loss);
        }
        for w in a.windows(2) {
            assert!(w[1].train_loss <= w[0].train_loss);
        }
    }

    #[test]
    fn per_node_needs_enough_outputs() {
        let ds = Arc::new(gen_polynomial(6, 64, (-2.0, 2.0), 0.0, 1).unwrap());
        let net = Network::new(&Architecture::linear(6, 1), &mut Rng::new(5));
        let cfg = TrainConfig::new(EstimatorKind::Omis, 32, LossKind::Mse).with_techniques(4);
        assert!(matches!(Trainer::new(cfg, net, ds.clone(), ds), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn all_sampled_trainers_stay_finite() {
        for est in [
            EstimatorKind::Uniform,
            EstimatorKind::Is,
            EstimatorKind::As,
            EstimatorKind::BalanceMis,
            EstimatorKind::Omis,
            EstimatorKind::Exact,
        ] {
            let mut t = poly_setup(est, 4);
            let logs = t.run(|_| Ok(())).unwrap();
            assert_eq!(logs.len(), 3);
            assert!(logs.iter().all(|l| l.train_loss.is_finite()));
            assert_eq!(logs.last().unwrap().biased, est == EstimatorKind::As);
        }
    }
}
