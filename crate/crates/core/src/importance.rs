//! Persistent per-datum importance and the categorical distributions built
//! from it.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Rng;

/// Normalized categorical distribution over dataset indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePdf {
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl DiscretePdf {
    /// Normalize `|w_i|` into a pdf.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFiniteImportance(i));
        }
        let total: f64 = weights.iter().map(|w| w.abs()).sum();
        if !(total > 0.0) {
            return Err(Error::AllZeroImportance);
        }
        let probs: Vec<f64> = weights.iter().map(|w| w.abs() / total).collect();
        Ok(Self::from_normalized(probs))
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform pdf over an empty set");
        Self::from_normalized(vec![1.0 / n as f64; n])
    }

    fn from_normalized(probs: Vec<f64>) -> Self {
        let mut cumulative = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for p in &probs {
            acc += p;
            cumulative.push(acc);
        }
        // Pin the tail to exactly 1 from the last nonzero entry so a draw can
        // never land on a trailing zero-probability index.
        if let Some(last) = probs.iter().rposition(|&p| p > 0.0) {
            cumulative[last..].iter_mut().for_each(|c| *c = 1.0);
        }
        DiscretePdf { probs, cumulative }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.probs[i]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn min_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// One draw by binary search on the cumulative table.
    pub fn sample(&self, rng: &mut Rng) -> usize {
        let u = rng.uniform();
        self.cumulative.partition_point(|&c| c <= u).min(self.probs.len() - 1)
    }

    /// `count` i.i.d. draws with replacement.
    pub fn sample_with_replacement(&self, count: usize, rng: &mut Rng) -> Vec<usize> {
        (0..count).map(|_| self.sample(rng)).collect()
    }
}

/// How much is added to every stored magnitude at the end of an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum EpsilonPolicy {
    /// `scale × mean |stored|`, per column, recomputed each epoch.
    Relative(f64),
    /// A fixed additive constant.
    Fixed(f64),
}

impl Default for EpsilonPolicy {
    fn default() -> Self {
        EpsilonPolicy::Relative(0.01)
    }
}

/// Un-normalized importance per datum: one scalar (`width == 1`, values ≥ 0)
/// or a signed `J`-vector per datum.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceTable {
    n: usize,
    width: usize,
    vector: bool,
    values: Vec<f64>,
    momentum: f64,
    epsilon: EpsilonPolicy,
    last_epsilon: Vec<f64>,
}

impl ImportanceTable {
    pub fn scalar(n: usize, momentum: f64) -> Self {
        Self::build(n, 1, false, momentum)
    }

    pub fn vector(n: usize, j: usize, momentum: f64) -> Self {
        Self::build(n, j, true, momentum)
    }

    fn build(n: usize, width: usize, vector: bool, momentum: f64) -> Self {
        assert!((0.0..1.0).contains(&momentum), "importance momentum must be in [0,1)");
        if momentum > 0.3 {
            log::warn!("importance momentum {momentum} is above the usual 0.0..=0.3 range");
        }
        ImportanceTable {
            n,
            width,
            vector,
            values: vec![0.0; n * width],
            momentum,
            epsilon: EpsilonPolicy::default(),
            last_epsilon: vec![0.0; width],
        }
    }

    pub fn with_epsilon(mut self, policy: EpsilonPolicy) -> Self {
        self.epsilon = policy;
        self
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Columns per datum (1 in scalar mode).
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_vector(&self) -> bool {
        self.vector
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    /// Epsilon added per column at the most recent epoch boundary.
    pub fn last_epsilon(&self) -> &[f64] {
        &self.last_epsilon
    }

    pub fn get(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.width..(idx + 1) * self.width]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.values[i * self.width + j]).collect()
    }

    fn check(&self, idx: usize, value: &[f64]) -> Result<()> {
        if idx >= self.n {
            return Err(Error::IndexOutOfRange { index: idx, len: self.n });
        }
        if value.len() != self.width {
            return Err(Error::ShapeMismatch {
                context: "importance value width",
                expected: self.width,
                actual: value.len(),
            });
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteImportance(idx));
        }
        if !self.vector && value[0] < 0.0 {
            return Err(Error::NegativeImportance(idx));
        }
        Ok(())
    }

    /// Overwrite without blending (initialization epoch).
    pub fn set(&mut self, idx: usize, value: &[f64]) -> Result<()> {
        self.check(idx, value)?;
        self.values[idx * self.width..(idx + 1) * self.width].copy_from_slice(value);
        Ok(())
    }

    /// `stored ← m·stored + (1−m)·new`, per component.
    pub fn update(&mut self, idx: usize, value: &[f64]) -> Result<()> {
        self.check(idx, value)?;
        let m = self.momentum;
        for (s, v) in self.values[idx * self.width..(idx + 1) * self.width].iter_mut().zip(value) {
            *s = m * *s + (1.0 - m) * v;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.values.iter_mut().for_each(|v| *v = value);
    }

    /// Increase every stored magnitude by this epoch's epsilon. Signed entries
    /// move away from zero; exact zeros become `+epsilon`.
    pub fn end_epoch_accumulate(&mut self) {
        for j in 0..self.width {
            let eps = match self.epsilon {
                EpsilonPolicy::Fixed(e) => e,
                EpsilonPolicy::Relative(scale) => {
                    let mean = (0..self.n).map(|i| self.values[i * self.width + j].abs()).sum::<f64>()
                        / self.n.max(1) as f64;
                    if mean > 0.0 {
                        scale * mean
                    } else {
                        // Nothing to be proportional to: fall back to uniform.
                        1.0
                    }
                }
            };
            self.last_epsilon[j] = eps;
            for i in 0..self.n {
                let v = &mut self.values[i * self.width + j];
                *v += if *v < 0.0 { -eps } else { eps };
            }
        }
    }

    /// Normalize column `j` (0 in scalar mode) using absolute values.
    pub fn normalize(&self, j: usize) -> Result<DiscretePdf> {
        if j >= self.width {
            return Err(Error::IndexOutOfRange { index: j, len: self.width });
        }
        DiscretePdf::from_weights(&self.column(j))
    }

    /// One line per datum: `idx,importance` in scalar mode, or
    /// `idx,‖q‖,q_1,..,q_J` in vector mode.
    pub fn dump<W: Write>(&self, mut w: W) -> Result<()> {
        for i in 0..self.n {
            let row = self.get(i);
            if self.vector {
                write!(w, "{i},{}", crate::linalg::norm(row))?;
                for v in row {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            } else {
                writeln!(w, "{i},{}", row[0])?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::linalg::Rng;

    #[test]
    fn momentum_blend() {
        let mut t = ImportanceTable::scalar(1, 0.3);
        t.set(0, &[1.0]).unwrap();
        t.update(0, &[2.0]).unwrap();
        assert!((t.get(0)[0] - 1.7).abs() < 1e-15);

        let mut t = ImportanceTable::scalar(1, 0.0);
        t.set(0, &[1.0]).unwrap();
        t.update(0, &[0.123]).unwrap();
        assert_eq!(t.get(0)[0], 0.123);
    }

    #[test]
    fn momentum_values_accepted() {
        for m in [0.0, 0.1, 0.2, 0.3, 0.5] {
            let mut t = ImportanceTable::scalar(2, m);
            t.update(1, &[1.0]).unwrap();
        }
    }

    #[test]
    fn update_errors() {
        let mut t = ImportanceTable::scalar(2, 0.1);
        assert!(matches!(t.update(2, &[1.0]), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(t.update(0, &[f64::NAN]), Err(Error::NonFiniteImportance(0))));
        assert!(matches!(t.update(0, &[-1.0]), Err(Error::NegativeImportance(0))));
        let mut v = ImportanceTable::vector(2, 2, 0.1);
        v.update(0, &[-1.0, 1.0]).unwrap();
    }

    #[test]
    fn epsilon_accumulation() {
        let mut t = ImportanceTable::scalar(2, 0.0).with_epsilon(EpsilonPolicy::Fixed(0.0));
        t.set(1, &[1.0]).unwrap();
        t.end_epoch_accumulate();
        assert_eq!(t.column(0), vec![0.0, 1.0]);

        let mut t = ImportanceTable::scalar(2, 0.0).with_epsilon(EpsilonPolicy::Fixed(0.01));
        t.set(1, &[1.0]).unwrap();
        t.end_epoch_accumulate();
        assert_eq!(t.column(0), vec![0.01, 1.01]);
        assert!(t.normalize(0).unwrap().min_prob() > 0.0);
    }

    #[test]
    fn default_epsilon_is_relative_to_mean() {
        let mut t = ImportanceTable::scalar(4, 0.0);
        for (i, v) in [0.0, 2.0, 4.0, 2.0].iter().enumerate() {
            t.set(i, &[*v]).unwrap();
        }
        t.end_epoch_accumulate();
        assert!((t.last_epsilon()[0] - 0.02).abs() < 1e-15);
        assert!((t.get(0)[0] - 0.02).abs() < 1e-15);

        let mut z = ImportanceTable::scalar(3, 0.0);
        z.end_epoch_accumulate();
        let pdf = z.normalize(0).unwrap();
        assert!(pdf.probs().iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn signed_magnitudes_grow() {
        let mut t = ImportanceTable::vector(2, 2, 0.0).with_epsilon(EpsilonPolicy::Fixed(0.5));
        t.set(0, &[-1.0, 0.0]).unwrap();
        t.set(1, &[2.0, 3.0]).unwrap();
        t.end_epoch_accumulate();
        assert_eq!(t.get(0), &[-1.5, 0.5]);
        assert_eq!(t.get(1), &[2.5, 3.5]);
    }

    #[test]
    fn normalize_examples() {
        let pdf = DiscretePdf::from_weights(&[1.0, 3.0]).unwrap();
        assert_eq!(pdf.probs(), &[0.25, 0.75]);
        let mut t = ImportanceTable::vector(2, 2, 0.0);
        t.set(0, &[5.0, -1.0]).unwrap();
        t.set(1, &[5.0, 1.0]).unwrap();
        assert_eq!(t.normalize(1).unwrap().probs(), &[0.5, 0.5]);
        assert_eq!(DiscretePdf::from_weights(&[5.0]).unwrap().probs(), &[1.0]);
        assert!(matches!(DiscretePdf::from_weights(&[0.0, 0.0]), Err(Error::AllZeroImportance)));
    }

    #[test]
    fn degenerate_sampling() {
        let pdf = DiscretePdf::from_weights(&[1.0, 0.0, 0.0]).unwrap();
        let mut rng = Rng::new(3);
        assert!(pdf.sample_with_replacement(1000, &mut rng).iter().all(|&i| i == 0));
        let pdf = DiscretePdf::from_weights(&[0.0, 0.0, 2.0, 0.0]).unwrap();
        assert!(pdf.sample_with_replacement(1000, &mut rng).iter().all(|&i| i == 2));
    }

    #[test]
    fn sampling_frequency() {
        let pdf = DiscretePdf::from_weights(&[0.25, 0.75]).unwrap();
        let mut rng = Rng::new(17);
        let draws = pdf.sample_with_replacement(100_000, &mut rng);
        let freq = draws.iter().filter(|&&i| i == 1).count() as f64 / 1e5;
        assert!((0.74..=0.76).contains(&freq), "{freq}");
        let again = pdf.sample_with_replacement(100_000, &mut Rng::new(17));
        assert_eq!(draws, again);
    }

    #[test]
    fn dump_format() {
        let mut t = ImportanceTable::vector(1, 2, 0.0);
        t.set(0, &[3.0, -4.0]).unwrap();
        let mut out = Vec::new();
        t.dump(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "0,5,3,-4\n");
    }

    proptest! {
        #[test]
        fn normalize_is_scale_invariant(
            v in prop::collection::vec(0.0f64..10.0, 1..32),
            c in 1e-3f64..1e3,
        ) {
            prop_assume!(v.iter().any(|x| *x > 0.0));
            let a = DiscretePdf::from_weights(&v).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
            let b = DiscretePdf::from_weights(&scaled).unwrap();
            for (p, q) in a.probs().iter().zip(b.probs()) {
                prop_assert!((p - q).abs() <= 1e-15);
            }
            let s: f64 = a.probs().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(a.cumulative().windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(*a.cumulative().last().unwrap(), 1.0);
        }

        #[test]
        fn epsilon_gives_positive_floor(
            v in prop::collection::vec(0.0f64..10.0, 1..64),
            eps in 1e-6f64..1.0,
        ) {
            let mut t = ImportanceTable::scalar(v.len(), 0.0).with_epsilon(EpsilonPolicy::Fixed(eps));
            for (i, x) in v.iter().enumerate() {
                t.set(i, &[*x]).unwrap();
            }
            t.end_epoch_accumulate();
            let pdf = t.normalize(0).unwrap();
            let total: f64 = v.iter().sum::<f64>() + v.len() as f64 * eps;
            prop_assert!(pdf.min_prob() >= eps / total * (1.0 - 1e-12));
            prop_assert!(pdf.min_prob() > 0.0);
        }
    }
}
