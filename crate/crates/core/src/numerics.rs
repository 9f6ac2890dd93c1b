//! Dense linear algebra, seeded randomness, power iteration and
//! finite-difference probes.
//!
//! Vectors are plain `[f64]` slices; [`Mat`] is a row-major matrix whose
//! flattened storage doubles as the concatenated parameter vector
//! `w = [w_1; ...; w_m]` used throughout the crate.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

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

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                what: "matrix storage",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    what: "matrix row",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Mat {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on zero-width rows
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Frobenius norm, i.e. the L2 norm of the flattened parameter vector.
    pub fn frobenius(&self) -> f64 {
        norm(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self + alpha * dir` with `dir` flattened in the same layout.
    pub fn offset(&self, alpha: f64, dir: &[f64]) -> Mat {
        let mut out = self.clone();
        axpy(alpha, dir, &mut out.data);
        out
    }

    /// Matrix-vector product.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.iter_rows().map(|r| dot(r, x)).collect()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    for v in x {
        *v *= alpha;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Compensated (Neumaier) summation.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// `log(sum_i exp(x_i))`, returning `-inf` for empty input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + neumaier_sum(xs.iter().map(|x| (x - max).exp())).ln()
}

/// Numerically stable `log(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable logistic function `1 / (1 + exp(-x))`.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Ordinary least-squares line through `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len().min(y.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r_squared = if sxx > 0.0 && syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        // a perfectly flat series is fit exactly
        1.0
    };
    LineFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    }
}

/// Deterministic random stream keyed by `(seed, stream)`.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// An independent stream derived from the same seed.
    pub fn fork(&self, stream: u64) -> Rng {
        Rng::new(self.seed, stream)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.normal()).collect()
    }

    /// Uniform point on the unit sphere in `R^dim`.
    pub fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let mut v = self.normal_vec(dim);
            let n = norm(&v);
            if n > 1e-12 {
                scale(1.0 / n, &mut v);
                return v;
            }
        }
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn sign(&mut self) -> f64 {
        if self.inner.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }

    /// `k` distinct indices from `0..n`, returned in ascending order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        // partial Fisher-Yates
        for i in 0..k.min(n) {
            let j = i + self.below(n - i);
            idx.swap(i, j);
        }
        idx.truncate(k.min(n));
        idx.sort_unstable();
        idx
    }
}

/// Outcome of a converged power iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerEstimate {
    pub value: f64,
    pub iterations: usize,
}

/// Estimates the operator norm `max |lambda|` of a symmetric linear map.
///
/// Tracks `||A v||` for unit `v`, which is the Rayleigh quotient of `A^2`
/// and so converges even when `lambda` and `-lambda` are both dominant.
/// Stops once the relative change drops below `tol / 100`.
pub fn power_iteration<F>(
    mut apply: F,
    dim: usize,
    tol: f64,
    max_iter: usize,
    rng: &mut Rng,
) -> Result<PowerEstimate>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", "must be positive"));
    }
    if dim == 0 {
        return Ok(PowerEstimate {
            value: 0.0,
            iterations: 0,
        });
    }
    let mut v = rng.unit_vector(dim);
    let mut estimate = 0.0;
    for it in 1..=max_iter {
        let mut av = apply(&v);
        let n = norm(&av);
        if !n.is_finite() {
            return Err(Error::NonFinite("power iteration".into()));
        }
        if n == 0.0 {
            // v lies in the null space; A may still be nonzero elsewhere
            if it == 1 {
                v = rng.unit_vector(dim);
                continue;
            }
            return Ok(PowerEstimate {
                value: 0.0,
                iterations: it,
            });
        }
        let change = (n - estimate).abs();
        estimate = n;
        scale(1.0 / n, &mut av);
        v = av;
        if it > 1 && change <= 1e-2 * tol * n {
            return Ok(PowerEstimate {
                value: estimate,
                iterations: it,
            });
        }
    }
    Err(Error::NotConverged {
        estimate,
        iterations: max_iter,
    })
}

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Central-difference gradient `(f(w + h e_i) - f(w - h e_i)) / 2h`.
pub fn fd_gradient<F>(mut f: F, w: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::invalid("step", "must be positive"));
    }
    let mut probe = w.to_vec();
    let mut grad = Vec::with_capacity(w.len());
    for i in 0..w.len() {
        probe[i] = w[i] + step;
        let plus = f(&probe);
        probe[i] = w[i] - step;
        let minus = f(&probe);
        probe[i] = w[i];
        let g = (plus - minus) / (2.0 * step);
        if g.is_nan() {
            return Err(Error::FdNan(i));
        }
        grad.push(g);
    }
    Ok(grad)
}

/// Central difference of a vector-valued map along `dir`.
pub fn fd_directional<F>(mut f: F, w: &[f64], dir: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let mut plus = w.to_vec();
    axpy(step, dir, &mut plus);
    let mut minus = w.to_vec();
    axpy(-step, dir, &mut minus);
    let gp = f(&plus);
    let gm = f(&minus);
    gp.iter()
        .zip(&gm)
        .map(|(a, b)| (a - b) / (2.0 * step))
        .collect()
}

/// `||a - b|| / max(||b||, floor)`
pub fn rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    norm(&sub(a, b)) / norm(b).max(floor)
}
