//! Unbiased mini-batch gradient estimators.
//!
//! All estimators target the dataset *sum* `Σ_x ∇L(x)` (the integral over the
//! dataset with counting measure), so a pmf `p` enters as `∇L(x)/p(x)`.
//! Trainers divide by `N` to step on the mean gradient.
//!
//! The optimal-MIS path keeps running estimates of
//!
//! ```text
//! A_jk = Σ_x p_j(x) p_k(x) / S(x)      b_j = Σ_x p_j(x) ∇L(x) / S(x)
//! S(x) = Σ_k n_k p_k(x)
//! ```
//!
//! and returns `Σ_j α_j` with `A α = b`, solved once per parameter column
//! against a single shared factorization of `A`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::importance::DiscretePdf;
use crate::linalg::{axpy, factor_regularized, Mat};
use crate::net::SampleGrad;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Uniform,
    Is,
    /// Adaptive sampling: importance-sampled draws without the 1/p
    /// correction. Biased.
    As,
    BalanceMis,
    Omis,
    Exact,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Uniform => "uniform",
            EstimatorKind::Is => "is",
            EstimatorKind::As => "as",
            EstimatorKind::BalanceMis => "balance_mis",
            EstimatorKind::Omis => "omis",
            EstimatorKind::Exact => "exact",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "uniform" => EstimatorKind::Uniform,
            "is" => EstimatorKind::Is,
            "as" => EstimatorKind::As,
            "balance_mis" => EstimatorKind::BalanceMis,
            "omis" => EstimatorKind::Omis,
            "exact" => EstimatorKind::Exact,
            _ => return None,
        })
    }

    /// Whether the estimator draws from several per-technique distributions.
    pub fn is_multi(self) -> bool {
        matches!(self, EstimatorKind::BalanceMis | EstimatorKind::Omis)
    }

    pub fn is_biased(self) -> bool {
        matches!(self, EstimatorKind::As)
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-step scalar statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub biased: bool,
    pub min_weight: f64,
    pub max_weight: f64,
    pub ridge: f64,
    /// Largest/smallest squared Cholesky pivot of ⟨A⟩ (1 when unused).
    pub condition: f64,
    pub beta: f64,
    pub techniques: usize,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Diagnostics {
            biased: false,
            min_weight: f64::NAN,
            max_weight: f64::NAN,
            ridge: 0.0,
            condition: 1.0,
            beta: 0.0,
            techniques: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    pub grad: Vec<f64>,
    pub kind: EstimatorKind,
    pub diagnostics: Diagnostics,
}

fn param_len(samples: &[SampleGrad]) -> usize {
    samples.first().map_or(0, |s| s.param_grad.len())
}

fn check_len(sg: &SampleGrad, p: usize) -> Result<()> {
    if sg.param_grad.len() != p {
        return Err(Error::ShapeMismatch {
            context: "sample gradient length",
            expected: p,
            actual: sg.param_grad.len(),
        });
    }
    Ok(())
}

/// `(1/B) Σ ∇L(x_i) / p(x_i)`.
pub fn is_estimate(samples: &[SampleGrad], pdf: &DiscretePdf) -> Result<GradEstimate> {
    let p = param_len(samples);
    let b = samples.len() as f64;
    let mut grad = vec![0.0; p];
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for s in samples {
        check_len(s, p)?;
        let prob = pdf.prob(s.index);
        if !(prob > 0.0) {
            return Err(Error::ZeroProbabilitySample(s.index));
        }
        let w = 1.0 / (b * prob);
        lo = lo.min(w);
        hi = hi.max(w);
        axpy(w, &s.param_grad, &mut grad);
    }
    Ok(GradEstimate {
        grad,
        kind: EstimatorKind::Is,
        diagnostics: Diagnostics {
            min_weight: lo,
            max_weight: hi,
            ..Diagnostics::default()
        },
    })
}

/// Adaptive-sampling estimate: draws come from a non-uniform pdf but every
/// contribution is weighted as if it were uniform, `(N/B) Σ ∇L(x_i)`. This
/// keeps it on the same scale as [`is_estimate`] (identical when the pdf is
/// uniform) while dropping the per-sample `1/p` correction. Biased.
pub fn as_estimate(samples: &[SampleGrad], dataset_len: usize) -> GradEstimate {
    let p = param_len(samples);
    let w = dataset_len as f64 / samples.len() as f64;
    let mut grad = vec![0.0; p];
    for s in samples {
        axpy(w, &s.param_grad, &mut grad);
    }
    GradEstimate {
        grad,
        kind: EstimatorKind::As,
        diagnostics: Diagnostics {
            biased: true,
            min_weight: w,
            max_weight: w,
            ..Diagnostics::default()
        },
    }
}

/// `S(x) = Σ_k n_k p_k(x)`.
pub fn mixture_density(index: usize, pdfs: &[DiscretePdf], counts: &[usize]) -> f64 {
    pdfs.iter().zip(counts).map(|(p, &n)| n as f64 * p.prob(index)).sum()
}

/// Balance-heuristic weights `w_j = n_j p_j(x) / S(x)`.
pub fn balance_weights(index: usize, pdfs: &[DiscretePdf], counts: &[usize]) -> Result<Vec<f64>> {
    let s = mixture_density(index, pdfs, counts);
    if !(s > 0.0) {
        return Err(Error::AllTechniquesZero(index));
    }
    Ok(pdfs
        .iter()
        .zip(counts)
        .map(|(p, &n)| n as f64 * p.prob(index) / s)
        .collect())
}

fn check_stratified(batch: &[Vec<SampleGrad>], pdfs: &[DiscretePdf], counts: &[usize]) -> Result<()> {
    if batch.len() != counts.len() || pdfs.len() != counts.len() {
        return Err(Error::ShapeMismatch {
            context: "technique count",
            expected: counts.len(),
            actual: batch.len().min(pdfs.len()),
        });
    }
    for (samples, &n) in batch.iter().zip(counts) {
        if samples.len() != n {
            return Err(Error::ShapeMismatch {
                context: "samples per technique",
                expected: n,
                actual: samples.len(),
            });
        }
    }
    Ok(())
}

/// One sample's term `w_j(x) ∇L(x) / (n_j p_j(x))` of the MIS estimator,
/// with balance-heuristic weights.
pub fn balance_mis_contribution(
    sample: &SampleGrad,
    technique: usize,
    pdfs: &[DiscretePdf],
    counts: &[usize],
) -> Result<Vec<f64>> {
    let w = balance_weights(sample.index, pdfs, counts)?;
    let pj = pdfs[technique].prob(sample.index);
    if !(pj > 0.0) {
        return Err(Error::ZeroProbabilitySample(sample.index));
    }
    let scale = w[technique] / (counts[technique] as f64 * pj);
    Ok(sample.param_grad.iter().map(|g| scale * g).collect())
}

/// Balance-heuristic MIS over stratified samples: `batch[j]` holds exactly
/// `counts[j]` draws from `pdfs[j]`.
pub fn balance_mis_estimate(
    batch: &[Vec<SampleGrad>],
    pdfs: &[DiscretePdf],
    counts: &[usize],
) -> Result<GradEstimate> {
    check_stratified(batch, pdfs, counts)?;
    let p = batch.iter().flatten().next().map_or(0, |s| s.param_grad.len());
    let mut grad = vec![0.0; p];
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for (j, samples) in batch.iter().enumerate() {
        for s in samples {
            check_len(s, p)?;
            let w = balance_weights(s.index, pdfs, counts)?;
            let pj = pdfs[j].prob(s.index);
            if !(pj > 0.0) {
                return Err(Error::ZeroProbabilitySample(s.index));
            }
            lo = lo.min(w[j]);
            hi = hi.max(w[j]);
            axpy(w[j] / (counts[j] as f64 * pj), &s.param_grad, &mut grad);
        }
    }
    Ok(GradEstimate {
        grad,
        kind: EstimatorKind::BalanceMis,
        diagnostics: Diagnostics {
            min_weight: lo,
            max_weight: hi,
            techniques: counts.len(),
            ..Diagnostics::default()
        },
    })
}

/// Explicit optimal MIS weights for a scalar integrand value `f` at one point,
/// given the solved `α`. Only meaningful for scalar integrands; the training
/// path uses the `Σ α` shortcut instead.
pub fn optimal_weights(alpha: &[f64], pdf_values: &[f64], counts: &[usize], f: f64) -> Vec<f64> {
    let s: f64 = pdf_values.iter().zip(counts).map(|(p, &n)| n as f64 * p).sum();
    let ap: f64 = alpha.iter().zip(pdf_values).map(|(a, p)| a * p).sum();
    alpha
        .iter()
        .zip(pdf_values)
        .zip(counts)
        .map(|((a, p), &n)| a * p / f + (n as f64 * p / s) * (1.0 - ap / f))
        .collect()
}

/// Momentum-accumulated OMIS linear system.
#[derive(Debug, Clone, PartialEq)]
pub struct MisSystem {
    counts: Vec<usize>,
    beta: f64,
    bias_correction: bool,
    a: Mat,
    /// J x P, one column per parameter.
    b: Mat,
    steps: u32,
    min_weight: f64,
    max_weight: f64,
}

impl MisSystem {
    pub fn new(counts: Vec<usize>, params: usize, beta: f64) -> Result<Self> {
        if counts.is_empty() || counts.iter().any(|&n| n == 0) {
            return Err(Error::ConfigInvalid("every technique needs n_j >= 1".into()));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::ConfigInvalid(format!("beta {beta} outside [0,1)")));
        }
        let j = counts.len();
        Ok(MisSystem {
            counts,
            beta,
            bias_correction: true,
            a: Mat::zeros(j, j),
            b: Mat::zeros(j, params),
            steps: 0,
            min_weight: f64::NAN,
            max_weight: f64::NAN,
        })
    }

    /// A system with given `A` and `b`, treated as already accumulated.
    pub fn from_parts(counts: Vec<usize>, a: Mat, b: Mat) -> Result<Self> {
        let j = counts.len();
        if a.rows() != j || a.cols() != j || b.rows() != j {
            return Err(Error::ShapeMismatch {
                context: "MisSystem::from_parts",
                expected: j,
                actual: a.rows(),
            });
        }
        let mut sys = MisSystem::new(counts, b.cols(), 0.0)?;
        sys.a = a;
        sys.b = b;
        sys.steps = 1;
        Ok(sys)
    }

    /// Disable the `1/(1−β^t)` rescaling of the running sums.
    pub fn with_bias_correction(mut self, on: bool) -> Self {
        self.bias_correction = on;
        self
    }

    pub fn techniques(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    /// `⟨A⟩ ← β⟨A⟩, ⟨b⟩ ← β⟨b⟩`
    pub fn decay(&mut self) {
        self.a.scale(self.beta);
        self.b.scale(self.beta);
        self.steps += 1;
        self.min_weight = f64::INFINITY;
        self.max_weight = 0.0;
    }

    /// Add one sample's `(1−β)`-scaled contribution. `v_j = p_j(x)/S(x)`, so
    /// `Σ v vᵀ` and `Σ ∇L v / S` are unbiased for the exact sums over the
    /// stratified draws.
    pub fn add_sample(&mut self, sample: &SampleGrad, pdfs: &[DiscretePdf]) -> Result<()> {
        if sample.param_grad.len() != self.b.cols() {
            return Err(Error::ShapeMismatch {
                context: "MisSystem sample gradient",
                expected: self.b.cols(),
                actual: sample.param_grad.len(),
            });
        }
        let s = mixture_density(sample.index, pdfs, &self.counts);
        if !(s > 0.0) {
            return Err(Error::ZeroProbabilitySample(sample.index));
        }
        let j = self.counts.len();
        let k = 1.0 - self.beta;
        let v: Vec<f64> = pdfs.iter().map(|p| p.prob(sample.index) / s).collect();
        for (r, (vr, &n)) in v.iter().zip(&self.counts).enumerate() {
            let w = vr * n as f64;
            self.min_weight = self.min_weight.min(w);
            self.max_weight = self.max_weight.max(w);
            for c in 0..j {
                self.a[(r, c)] += k * vr * v[c];
            }
            axpy(k * vr / s, &sample.param_grad, self.b.row_mut(r));
        }
        Ok(())
    }

    /// Decay, then add every stratified sample: `batch[j]` holds `n_j` draws
    /// from `pdfs[j]`.
    pub fn accumulate(&mut self, batch: &[Vec<SampleGrad>], pdfs: &[DiscretePdf]) -> Result<()> {
        check_stratified(batch, pdfs, &self.counts)?;
        self.decay();
        for s in batch.iter().flatten() {
            self.add_sample(s, pdfs)?;
        }
        Ok(())
    }

    /// Solve `⟨A⟩ α_p = ⟨b⟩_p` for every parameter column and return
    /// `Σ_j α_{j,p}`. The ridge is `ridge_rel · trace(⟨A⟩) / J`.
    pub fn estimate(&self, ridge_rel: f64) -> Result<GradEstimate> {
        if self.steps == 0 {
            return Err(Error::SingularSystem { ridge: 0.0 });
        }
        let j = self.counts.len();
        let correction = if self.bias_correction && self.beta > 0.0 {
            1.0 / (1.0 - self.beta.powi(self.steps as i32))
        } else {
            1.0
        };
        let mut a = self.a.clone();
        a.scale(correction);
        debug_assert!(a.asymmetry() <= 1e-9 * (1.0 + a.trace().abs()));
        let ridge = ridge_rel * a.trace() / j as f64;
        let chol = factor_regularized(&a, ridge)?;
        let p = self.b.cols();
        let mut grad = vec![0.0; p];
        let mut col = vec![0.0; j];
        for (c, g) in grad.iter_mut().enumerate() {
            for (r, v) in col.iter_mut().enumerate() {
                *v = correction * self.b[(r, c)];
            }
            chol.solve_in_place(&mut col);
            *g = col.iter().sum();
        }
        if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(bad));
        }
        Ok(GradEstimate {
            grad,
            kind: EstimatorKind::Omis,
            diagnostics: Diagnostics {
                biased: false,
                min_weight: self.min_weight,
                max_weight: self.max_weight,
                ridge: chol.ridge(),
                condition: chol.condition_proxy(),
                beta: self.beta,
                techniques: j,
            },
        })
    }

    /// Solved `α` for every parameter column (J x P), for inspection.
    pub fn alpha(&self, ridge_rel: f64) -> Result<Mat> {
        let j = self.counts.len();
        let ridge = ridge_rel * self.a.trace() / j as f64;
        let chol = factor_regularized(&self.a, ridge)?;
        let mut out = Mat::zeros(j, self.b.cols());
        let mut col = vec![0.0; j];
        for c in 0..self.b.cols() {
            for (r, v) in col.iter_mut().enumerate() {
                *v = self.b[(r, c)];
            }
            chol.solve_in_place(&mut col);
            for (r, v) in col.iter().enumerate() {
                out[(r, c)] = *v;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;

    fn sg(index: usize, g: Vec<f64>) -> SampleGrad {
        SampleGrad {
            index,
            loss: 0.0,
            param_grad: g,
            output: vec![],
            output_grad: vec![],
        }
    }

    #[test]
    fn uniform_full_batch_is_exact() {
        let grads = [vec![1.0, -2.0], vec![0.5, 4.0], vec![-3.0, 1.0]];
        let samples: Vec<_> = grads.iter().enumerate().map(|(i, g)| sg(i, g.clone())).collect();
        let est = is_estimate(&samples, &DiscretePdf::uniform(3)).unwrap();
        assert!((est.grad[0] - (-1.5)).abs() < 1e-14);
        assert!((est.grad[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn single_datum_any_batch() {
        let samples = vec![sg(0, vec![2.5]); 7];
        let est = is_estimate(&samples, &DiscretePdf::uniform(1)).unwrap();
        assert!((est.grad[0] - 2.5).abs() < 1e-14);
    }

    #[test]
    fn zero_probability_sample_rejected() {
        let pdf = DiscretePdf::from_weights(&[1.0, 0.0]).unwrap();
        assert!(matches!(
            is_estimate(&[sg(1, vec![1.0])], &pdf),
            Err(Error::ZeroProbabilitySample(1))
        ));
    }

    #[test]
    fn as_matches_is_under_uniform_and_differs_otherwise() {
        let samples = vec![sg(0, vec![1.0, 2.0]), sg(1, vec![3.0, -1.0])];
        let u = DiscretePdf::uniform(2);
        let is = is_estimate(&samples, &u).unwrap();
        let as_ = as_estimate(&samples, 2);
        assert_eq!(is.grad, as_.grad);
        assert!(as_.diagnostics.biased && !is.diagnostics.biased);
        let skew = DiscretePdf::from_weights(&[1.0, 3.0]).unwrap();
        let is2 = is_estimate(&samples, &skew).unwrap();
        assert!(is2.grad.iter().zip(&as_.grad).any(|(a, b)| (a - b).abs() > 1e-6));
    }

    #[test]
    fn balance_weight_examples() {
        let p = DiscretePdf::from_weights(&[1.0, 1.0]).unwrap();
        assert_eq!(balance_weights(0, &[p.clone(), p.clone()], &[1, 1]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(balance_weights(0, &[p.clone(), p.clone()], &[3, 1]).unwrap(), vec![0.75, 0.25]);
        let z = DiscretePdf::from_weights(&[0.0, 1.0]).unwrap();
        assert_eq!(balance_weights(0, &[p.clone(), z.clone()], &[1, 1]).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(
            balance_weights(0, &[z.clone(), z], &[1, 1]),
            Err(Error::AllTechniquesZero(0))
        ));
    }

    #[test]
    fn balance_weights_partition_unity() {
        let mut rng = Rng::new(2);
        for _ in 0..200 {
            let n = 1 + rng.below(20);
            let j = 1 + rng.below(5);
            let pdfs: Vec<_> = (0..j)
                .map(|_| DiscretePdf::from_weights(&(0..n).map(|_| rng.uniform()).collect::<Vec<_>>()).unwrap())
                .collect();
            let counts: Vec<usize> = (0..j).map(|_| 1 + rng.below(4)).collect();
            for x in 0..n {
                let w = balance_weights(x, &pdfs, &counts).unwrap();
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_technique_balance_equals_is() {
        let pdf = DiscretePdf::from_weights(&[1.0, 2.0, 5.0]).unwrap();
        let samples = vec![sg(2, vec![1.0, 1.0]), sg(0, vec![-2.0, 0.5]), sg(2, vec![0.3, 0.0])];
        let bal = balance_mis_estimate(&[samples.clone()], &[pdf.clone()], &[3]).unwrap();
        let is = is_estimate(&samples, &pdf).unwrap();
        for (a, b) in bal.grad.iter().zip(&is.grad) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn stratified_counts_enforced() {
        let pdf = DiscretePdf::uniform(2);
        let r = balance_mis_estimate(&[vec![sg(0, vec![1.0])]], &[pdf], &[2]);
        assert!(matches!(r, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn optimal_weights_sum_to_one() {
        let w = optimal_weights(&[2.0, 3.0], &[0.1, 0.4], &[2, 2], 1.7);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_technique_system_gives_is_estimate() {
        let pdf = DiscretePdf::from_weights(&[1.0, 2.0, 5.0, 2.0]).unwrap();
        let samples = vec![sg(2, vec![1.0, -1.0]), sg(1, vec![0.5, 2.0]), sg(3, vec![-0.25, 0.0])];
        let mut sys = MisSystem::new(vec![3], 2, 0.0).unwrap();
        sys.accumulate(&[samples.clone()], &[pdf.clone()]).unwrap();
        let omis = sys.estimate(0.0).unwrap();
        let is = is_estimate(&samples, &pdf).unwrap();
        for (a, b) in omis.grad.iter().zip(&is.grad) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn single_technique_momentum_is_ema_of_is() {
        let pdf = DiscretePdf::from_weights(&[1.0, 3.0]).unwrap();
        let beta = 0.7;
        let mut sys = MisSystem::new(vec![2], 1, beta).unwrap();
        let batches = [
            vec![sg(0, vec![1.0]), sg(1, vec![2.0])],
            vec![sg(1, vec![-1.0]), sg(1, vec![0.5])],
            vec![sg(0, vec![4.0]), sg(0, vec![0.0])],
        ];
        let mut ema = 0.0;
        for (t, b) in batches.iter().enumerate() {
            sys.accumulate(&[b.clone()], &[pdf.clone()]).unwrap();
            ema = beta * ema + (1.0 - beta) * is_estimate(b, &pdf).unwrap().grad[0];
            let got = sys.estimate(0.0).unwrap().grad[0];
            // A is constant per batch for J=1, so α is the bias-corrected EMA.
            let expected = ema / (1.0 - beta.powi(t as i32 + 1));
            assert!((got - expected).abs() < 1e-12, "step {t}: {got} vs {expected}");
        }
    }

    #[test]
    fn bias_correction_cancels_in_alpha() {
        let pdfs = [
            DiscretePdf::from_weights(&[1.0, 2.0, 3.0]).unwrap(),
            DiscretePdf::from_weights(&[3.0, 1.0, 1.0]).unwrap(),
        ];
        let batch = vec![vec![sg(2, vec![1.0]), sg(1, vec![2.0])], vec![sg(0, vec![-1.0]), sg(0, vec![0.5])]];
        let mut on = MisSystem::new(vec![2, 2], 1, 0.7).unwrap();
        let mut off = on.clone().with_bias_correction(false);
        on.accumulate(&batch, &pdfs).unwrap();
        off.accumulate(&batch, &pdfs).unwrap();
        let a = on.estimate(0.0).unwrap().grad[0];
        let b = off.estimate(0.0).unwrap().grad[0];
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn identical_techniques_take_ridge_path() {
        let pdf = DiscretePdf::from_weights(&[1.0, 2.0, 5.0, 2.0]).unwrap();
        let s1 = vec![sg(2, vec![1.0, -1.0]), sg(1, vec![0.5, 2.0])];
        let s2 = vec![sg(3, vec![-0.25, 0.0]), sg(2, vec![1.0, -1.0])];
        let mut two = MisSystem::new(vec![2, 2], 2, 0.0).unwrap();
        two.accumulate(&[s1.clone(), s2.clone()], &[pdf.clone(), pdf.clone()]).unwrap();
        let est = two.estimate(1e-8).unwrap();
        assert!(est.diagnostics.ridge > 0.0);
        let all: Vec<_> = s1.into_iter().chain(s2).collect();
        let mut one = MisSystem::new(vec![4], 2, 0.0).unwrap();
        one.accumulate(&[all], &[pdf]).unwrap();
        let reference = one.estimate(0.0).unwrap();
        for (a, b) in est.grad.iter().zip(&reference.grad) {
            assert!(a.is_finite() && (a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn unaccumulated_system_refuses() {
        let sys = MisSystem::new(vec![1, 1], 3, 0.7).unwrap();
        assert!(matches!(sys.estimate(1e-8), Err(Error::SingularSystem { .. })));
    }
}
