//! Dense vector/matrix helpers, a ridge-regularized SPD solver, and the seeded
//! random source shared by the samplers and initializers.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                context: "Mat::from_vec",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::ShapeMismatch {
                    context: "Mat::from_rows",
                    expected: c,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Mat { rows: r, cols: c, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "Mat::mul_vec shape");
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// Largest |a_ij - a_ji|.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += s * x
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

/// Lower-triangular Cholesky factor of `A + ridge * I`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
    ridge: f64,
}

impl Cholesky {
    /// Factor using only the lower triangle of `a`. Fails if a pivot is not
    /// safely positive.
    pub fn factor(a: &Mat, ridge: f64) -> Option<Cholesky> {
        let n = a.rows();
        let mut l = vec![0.0; n * n];
        let max_diag = (0..n).map(|i| (a[(i, i)] + ridge).abs()).fold(0.0, f64::max);
        let tol = f64::EPSILON * max_diag * n as f64;
        for j in 0..n {
            let mut d = a[(j, j)] + ridge;
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > tol) || !d.is_finite() {
                return None;
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Some(Cholesky { n, l, ridge })
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve (A + ridge I) x = b in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n, "Cholesky::solve shape");
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Ratio of the largest to smallest squared pivot, a cheap lower bound on
    /// the condition number.
    pub fn condition_proxy(&self) -> f64 {
        let n = self.n;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            let d = self.l[i * n + i] * self.l[i * n + i];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if n == 0 {
            1.0
        } else {
            hi / lo
        }
    }
}

/// Factor `A + ridge I`, escalating the ridge once if the first attempt fails.
///
/// The escalated ridge is `10 * ridge`, or `10 * 1e-10 * trace(A) / n` when
/// `ridge == 0`.
pub fn factor_regularized(a: &Mat, ridge: f64) -> Result<Cholesky> {
    if a.rows() != a.cols() {
        return Err(Error::ShapeMismatch {
            context: "factor_regularized (square)",
            expected: a.rows(),
            actual: a.cols(),
        });
    }
    if !a.is_finite() || !ridge.is_finite() {
        return Err(Error::NonFiniteInput("factor_regularized"));
    }
    debug_assert!(ridge >= 0.0, "ridge must be nonnegative");
    if let Some(c) = Cholesky::factor(a, ridge) {
        return Ok(c);
    }
    let n = a.rows().max(1) as f64;
    let base = if ridge > 0.0 { ridge } else { 1e-10 * a.trace() / n };
    let escalated = 10.0 * base;
    if escalated > 0.0 {
        if let Some(c) = Cholesky::factor(a, escalated) {
            log::debug!("ridge escalated from {ridge:e} to {escalated:e}");
            return Ok(c);
        }
    }
    Err(Error::SingularSystem { ridge: escalated })
}

/// Solve `(A + ridge I) x = b` for symmetric positive (semi)definite `A`.
pub fn solve_regularized(a: &Mat, b: &[f64], ridge: f64) -> Result<Vec<f64>> {
    if b.len() != a.rows() {
        return Err(Error::ShapeMismatch {
            context: "solve_regularized",
            expected: a.rows(),
            actual: b.len(),
        });
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("solve_regularized"));
    }
    Ok(factor_regularized(a, ridge)?.solve(b))
}

/// Seeded pseudorandom source. Identical seeds give identical streams.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }

    /// Independent child stream, e.g. one per experiment component.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.inner.random::<u64>())
    }
}
