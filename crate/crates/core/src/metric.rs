//! Per-datum importance values derived from a sample's backward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::net::{softmax, SampleGrad, Target};

/// Scalar importance used by single-distribution sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarMetric {
    /// ‖∂L/∂m‖
    OutputGradNorm,
    /// ‖softmax(z) − onehot(y)‖ evaluated from the logits.
    CrossEntropyClosedForm,
    /// The loss value itself.
    LossValue,
}

/// Vector importance used by multi-distribution sampling; one component per
/// technique.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorMetric {
    /// Signed ∂L/∂m_j for a subset of output nodes.
    PerNodeGrads,
    /// ‖∇_θ L‖ restricted to each of J contiguous parameter groups. Used when
    /// the output layer has fewer nodes than techniques (e.g. scalar regression).
    ParamGroups,
}

pub fn output_grad_norm(sg: &SampleGrad) -> f64 {
    norm(&sg.output_grad)
}

/// Signed output-layer derivatives for the chosen nodes.
pub fn per_node_importances(sg: &SampleGrad, subset: &[usize]) -> Result<Vec<f64>> {
    subset
        .iter()
        .map(|&j| {
            sg.output_grad.get(j).copied().ok_or(Error::IndexOutOfRange {
                index: j,
                len: sg.output_grad.len(),
            })
        })
        .collect()
}

/// Closed-form importance for softmax cross-entropy: the L2 norm of `s − t`.
pub fn cross_entropy_importance(logits: &[f64], class: usize) -> Result<f64> {
    if class >= logits.len() {
        return Err(Error::InvalidTarget {
            target: class,
            classes: logits.len(),
        });
    }
    let s = softmax(logits);
    Ok(s
        .iter()
        .enumerate()
        .map(|(j, sj)| {
            let d = if j == class { sj - 1.0 } else { *sj };
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

pub fn loss_importance(sg: &SampleGrad) -> f64 {
    sg.loss.max(0.0)
}

/// Boundaries of `groups` near-equal contiguous parameter ranges.
pub fn param_group_ranges(p: usize, groups: usize) -> Vec<std::ops::Range<usize>> {
    let groups = groups.max(1);
    (0..groups)
        .map(|g| (g * p / groups)..((g + 1) * p / groups))
        .collect()
}

/// ‖∇_θ L‖ over each parameter group.
pub fn param_group_importances(sg: &SampleGrad, ranges: &[std::ops::Range<usize>]) -> Vec<f64> {
    ranges.iter().map(|r| norm(&sg.param_grad[r.clone()])).collect()
}

/// Indices of the `j` nodes with the largest mean |∂L/∂m_k|, in ascending
/// node order. Ties go to the lower index.
pub fn select_top_nodes(mean_abs: &[f64], j: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..mean_abs.len()).collect();
    order.sort_by(|&a, &b| mean_abs[b].total_cmp(&mean_abs[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = order.into_iter().take(j).collect();
    chosen.sort_unstable();
    chosen
}

impl ScalarMetric {
    pub fn evaluate(self, sg: &SampleGrad, target: &Target) -> Result<f64> {
        match self {
            ScalarMetric::OutputGradNorm => Ok(output_grad_norm(sg)),
            ScalarMetric::LossValue => Ok(loss_importance(sg)),
            ScalarMetric::CrossEntropyClosedForm => match target {
                Target::Class(c) => cross_entropy_importance(&sg.output, *c),
                Target::Values(_) => Err(Error::ConfigInvalid(
                    "cross_entropy_closed_form importance needs a classification task".into(),
                )),
            },
        }
    }
}
