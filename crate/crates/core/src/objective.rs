//! Empirical risk `F(w) = (1/n) sum_i f(y_i Phi(w, x_i))` for the
//! exponential and logistic losses.
//!
//! Everything is computed in log space: per-sample log-losses are combined
//! with a compensated log-sum-exp, and the gradient and Hessian are first
//! formed relative to `F` (`grad F / F`, `hess F / F`) using normalized
//! sample weights. These ratios stay well conditioned when margins reach
//! several hundred and `F` itself under- or overflows.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{dot, log_sum_exp, logistic, softplus, Mat};

/// Largest log-value that still converts to a finite `f64`.
const MAX_LOG: f64 = 709.782_712_893_384;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `f(t) = exp(-t)`
    Exponential,
    /// `f(t) = log(1 + exp(-t))`
    Logistic,
}

impl LossKind {
    pub fn value(self, t: f64) -> f64 {
        match self {
            LossKind::Exponential => (-t).exp(),
            LossKind::Logistic => softplus(-t),
        }
    }

    pub fn log_value(self, t: f64) -> f64 {
        match self {
            LossKind::Exponential => -t,
            LossKind::Logistic => {
                if t > 30.0 {
                    // log(log1p(u)) with u = e^-t, to first order in u
                    -t - 0.5 * (-t).exp()
                } else {
                    softplus(-t).ln()
                }
            }
        }
    }

    pub fn d1(self, t: f64) -> f64 {
        match self {
            LossKind::Exponential => -(-t).exp(),
            LossKind::Logistic => -logistic(-t),
        }
    }

    pub fn d2(self, t: f64) -> f64 {
        match self {
            LossKind::Exponential => (-t).exp(),
            LossKind::Logistic => logistic(t) * logistic(-t),
        }
    }

    /// `f'(t) / f(t)`
    pub fn d1_ratio(self, t: f64) -> f64 {
        match self {
            LossKind::Exponential => -1.0,
            LossKind::Logistic => {
                if t > 30.0 {
                    -(1.0 - 0.5 * (-t).exp())
                } else {
                    -logistic(-t) / softplus(-t)
                }
            }
        }
    }

    /// `f''(t) / f(t)`
    pub fn d2_ratio(self, t: f64) -> f64 {
        match self {
            LossKind::Exponential => 1.0,
            LossKind::Logistic => {
                if t > 30.0 {
                    1.0 - 1.5 * (-t).exp()
                } else {
                    logistic(t) * logistic(-t) / softplus(-t)
                }
            }
        }
    }

    /// Lipschitz constant of `f`; unbounded for the exponential loss.
    pub fn lipschitz(self) -> Option<f64> {
        match self {
            LossKind::Exponential => None,
            LossKind::Logistic => Some(1.0),
        }
    }

    /// Bound on `f''`; unbounded for the exponential loss.
    pub fn smoothness(self) -> Option<f64> {
        match self {
            LossKind::Exponential => None,
            LossKind::Logistic => Some(0.25),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Exponential => "exponential",
            LossKind::Logistic => "logistic",
        }
    }
}

/// Loss, gradient ratio and log-loss at one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub log_loss: f64,
    /// `exp(log_loss)`; may underflow to zero.
    pub loss: f64,
    /// `grad F(w) / F(w)`
    pub grad_over_loss: Vec<f64>,
}

impl Evaluation {
    pub fn gradient(&self) -> Vec<f64> {
        self.grad_over_loss.iter().map(|g| g * self.loss).collect()
    }

    pub fn grad_norm(&self) -> f64 {
        crate::numerics::norm(&self.grad_over_loss) * self.loss
    }

    /// `||grad F|| / F`
    pub fn ratio(&self) -> f64 {
        crate::numerics::norm(&self.grad_over_loss)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub loss: LossKind,
    pub model: Model,
    data: Dataset,
}

impl Objective {
    pub fn new(loss: LossKind, model: Model, data: Dataset) -> Result<Self> {
        if model.input_dim() != data.d() {
            return Err(Error::Dimension {
                what: "dataset features",
                expected: model.input_dim(),
                got: data.d(),
            });
        }
        Ok(Objective { loss, model, data })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// Same loss and model on a different dataset.
    pub fn rebind(&self, data: Dataset) -> Result<Objective> {
        Objective::new(self.loss, self.model.clone(), data)
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn param_shape(&self) -> (usize, usize) {
        self.model.param_shape()
    }

    /// Self-bound constant `h` with `||grad F|| <= h F` (both losses have `|f'| <= f`).
    pub fn grad_bound(&self) -> f64 {
        self.model.grad_bound(self.data.radius())
    }

    /// Self-bound constant with `||hess F|| <= H F`, from direct differentiation.
    pub fn hessian_bound(&self) -> f64 {
        let h = self.grad_bound();
        self.model.hessian_bound(self.data.radius()) + h * h
    }

    fn check(&self, w: &Mat) -> Result<()> {
        if w.shape() != self.model.param_shape() {
            return Err(Error::Dimension {
                what: "parameters",
                expected: self.model.param_len(),
                got: w.rows() * w.cols(),
            });
        }
        if !w.is_finite() {
            return Err(Error::NonFinite("parameters".into()));
        }
        Ok(())
    }

    fn all(&self) -> Vec<usize> {
        (0..self.n()).collect()
    }

    /// Margins `y_i Phi(w, x_i)` for every sample.
    pub fn margins(&self, w: &Mat) -> Result<Vec<f64>> {
        self.check(w)?;
        let mut scratch = vec![0.0; self.model.scratch_len()];
        let margins: Vec<f64> = (0..self.n())
            .map(|i| {
                let (x, y) = self.data.point(i);
                y * self.model.forward_into(w, x, &mut scratch)
            })
            .collect();
        if margins.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("margins".into()));
        }
        Ok(margins)
    }

    /// `log F(w)` over a subset with normaliser `denom`.
    pub fn log_value_on(&self, w: &Mat, idx: &[usize], denom: usize) -> Result<f64> {
        self.check(w)?;
        let mut scratch = vec![0.0; self.model.scratch_len()];
        let mut logs = Vec::with_capacity(idx.len());
        for &i in idx {
            let (x, y) = self.data.point(i);
            let t = y * self.model.forward_into(w, x, &mut scratch);
            if !t.is_finite() {
                return Err(Error::NonFinite("margins".into()));
            }
            logs.push(self.loss.log_value(t));
        }
        Ok(log_sum_exp(&logs) - (denom as f64).ln())
    }

    pub fn log_value(&self, w: &Mat) -> Result<f64> {
        self.log_value_on(w, &self.all(), self.n())
    }

    /// `F(w)`; errors only if the mean itself overflows.
    pub fn value(&self, w: &Mat) -> Result<f64> {
        let lv = self.log_value(w)?;
        if lv > MAX_LOG {
            return Err(Error::Overflow(lv));
        }
        Ok(lv.exp())
    }

    /// Loss and gradient ratio over the samples `idx`, normalised by `denom`.
    ///
    /// The full objective is `idx = 0..n, denom = n`; a minibatch uses its
    /// own size and the leave-one-out objective keeps `denom = n`.
    pub fn evaluate_on(&self, w: &Mat, idx: &[usize], denom: usize) -> Result<Evaluation> {
        self.check(w)?;
        let k = self.model.scratch_len();
        let mut scratch = vec![0.0; k * idx.len()];
        let mut margins = Vec::with_capacity(idx.len());
        let mut logs = Vec::with_capacity(idx.len());
        for (s, &i) in idx.iter().enumerate() {
            let (x, y) = self.data.point(i);
            let t = y * self.model.forward_into(w, x, &mut scratch[s * k..(s + 1) * k]);
            if !t.is_finite() {
                return Err(Error::NonFinite("margins".into()));
            }
            margins.push(t);
            logs.push(self.loss.log_value(t));
        }
        let lse = log_sum_exp(&logs);
        let log_loss = lse - (denom as f64).ln();
        if log_loss > MAX_LOG {
            return Err(Error::Overflow(log_loss));
        }
        let mut grad = vec![0.0; self.model.param_len()];
        for (s, &i) in idx.iter().enumerate() {
            let (x, y) = self.data.point(i);
            let q = (logs[s] - lse).exp();
            if q == 0.0 {
                continue;
            }
            let coeff = q * self.loss.d1_ratio(margins[s]) * y;
            self.model
                .add_grad(x, &scratch[s * k..(s + 1) * k], coeff, &mut grad);
        }
        Ok(Evaluation {
            log_loss,
            loss: log_loss.exp(),
            grad_over_loss: grad,
        })
    }

    pub fn evaluate(&self, w: &Mat) -> Result<Evaluation> {
        self.evaluate_on(w, &self.all(), self.n())
    }

    /// `grad F(w)`
    pub fn gradient(&self, w: &Mat) -> Result<Vec<f64>> {
        Ok(self.evaluate(w)?.gradient())
    }

    /// `hess F(w) / F(w)` as a reusable operator.
    pub fn hessian_operator(&self, w: &Mat) -> Result<HessianOperator> {
        self.check(w)?;
        if !self.model.is_smooth() {
            return Err(Error::NonSmoothModel);
        }
        let p = self.model.param_len();
        let k = self.model.scratch_len();
        let n = self.n();
        let mut scratch = vec![0.0; k];
        let mut margins = Vec::with_capacity(n);
        let mut logs = Vec::with_capacity(n);
        let mut grads = vec![0.0; n * p];
        let mut curv = Vec::new();
        for i in 0..n {
            let (x, y) = self.data.point(i);
            let t = y * self.model.forward_into(w, x, &mut scratch);
            if !t.is_finite() {
                return Err(Error::NonFinite("margins".into()));
            }
            margins.push(t);
            logs.push(self.loss.log_value(t));
            self.model
                .add_grad(x, &scratch, 1.0, &mut grads[i * p..(i + 1) * p]);
            curv.extend(self.model.curvature_coeffs(&scratch)?);
        }
        let lse = log_sum_exp(&logs);
        let log_loss = lse - (n as f64).ln();
        let mut outer = Vec::with_capacity(n);
        let mut inner = Vec::with_capacity(n);
        for i in 0..n {
            let q = (logs[i] - lse).exp();
            let y = self.data.point(i).1;
            outer.push(q * self.loss.d2_ratio(margins[i]));
            inner.push(q * self.loss.d1_ratio(margins[i]) * y);
        }
        Ok(HessianOperator {
            log_loss,
            dim: p,
            grads,
            outer,
            inner,
            curv,
            data: self.data.clone(),
            neurons: if matches!(self.model, Model::TwoLayer(_)) { k } else { 0 },
        })
    }

    /// `hess F(w) v`
    pub fn hvp(&self, w: &Mat, v: &[f64]) -> Result<Vec<f64>> {
        let op = self.hessian_operator(w)?;
        if v.len() != op.dim() {
            return Err(Error::Dimension {
                what: "direction",
                expected: op.dim(),
                got: v.len(),
            });
        }
        let scale = op.loss();
        Ok(op.apply(v).into_iter().map(|x| x * scale).collect())
    }

    /// Fraction of samples with `sign(Phi) != y`; `Phi = 0` counts as an error.
    pub fn train_error(&self, w: &Mat) -> Result<f64> {
        let margins = self.margins(w)?;
        if margins.is_empty() {
            return Ok(0.0);
        }
        Ok(margins.iter().filter(|&&t| t <= 0.0).count() as f64 / margins.len() as f64)
    }

    /// `min_i y_i Phi(w, x_i) / ||w||`
    pub fn network_margin(&self, w: &Mat) -> Result<f64> {
        let norm = w.frobenius();
        if norm == 0.0 {
            return Err(Error::ZeroWeights);
        }
        let margins = self.margins(w)?;
        Ok(margins.iter().copied().fold(f64::INFINITY, f64::min) / norm)
    }
}

/// `min_i y_i <x_i, w*> / ||w*||`
pub fn linear_margin(data: &Dataset, separator: &[f64]) -> Result<f64> {
    if separator.len() != data.d() {
        return Err(Error::Dimension {
            what: "separator",
            expected: data.d(),
            got: separator.len(),
        });
    }
    let norm = crate::numerics::norm(separator);
    if norm == 0.0 {
        return Err(Error::ZeroWeights);
    }
    Ok((0..data.n())
        .map(|i| {
            let (x, y) = data.point(i);
            y * dot(x, separator)
        })
        .fold(f64::INFINITY, f64::min)
        / norm)
}

/// `hess F(w) / F(w)` assembled from per-sample rank-one terms and the
/// block-diagonal network curvature.
#[derive(Debug, Clone)]
pub struct HessianOperator {
    log_loss: f64,
    dim: usize,
    grads: Vec<f64>,
    outer: Vec<f64>,
    inner: Vec<f64>,
    curv: Vec<f64>,
    data: Dataset,
    neurons: usize,
}

impl HessianOperator {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_loss(&self) -> f64 {
        self.log_loss
    }

    pub fn loss(&self) -> f64 {
        self.log_loss.exp()
    }

    /// `(hess F / F) v`
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let p = self.dim;
        let mut out = vec![0.0; p];
        let d = self.data.d();
        let m = self.neurons;
        for i in 0..self.outer.len() {
            let g = &self.grads[i * p..(i + 1) * p];
            let c = self.outer[i] * dot(g, v);
            if c != 0.0 {
                for (o, gi) in out.iter_mut().zip(g) {
                    *o += c * gi;
                }
            }
            if m > 0 && self.inner[i] != 0.0 {
                let x = self.data.point(i).0;
                let kappa = &self.curv[i * m..(i + 1) * m];
                for j in 0..m {
                    let block = j * d..(j + 1) * d;
                    let c = self.inner[i] * kappa[j] * dot(x, &v[block.clone()]);
                    for (o, xk) in out[block].iter_mut().zip(x) {
                        *o += c * xk;
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, LinearModel, SecondLayer, TwoLayerNet};
    use crate::numerics::{fd_directional, fd_gradient, norm, rel_error};
    use proptest::prelude::*;
    use crate::numerics::Rng;

    fn dataset(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed, 1);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| rng.unit_vector(d)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.sign()).collect();
        Dataset::new(Mat::from_rows(&rows).unwrap(), y).unwrap()
    }

    fn net_objective(loss: LossKind, act: Activation, n: usize, d: usize, m: usize, seed: u64) -> Objective {
        let net = TwoLayerNet::new(act, m, d, SecondLayer::Random { seed }).unwrap();
        Objective::new(loss, Model::TwoLayer(net), dataset(n, d, seed)).unwrap()
    }

    fn random_w(obj: &Objective, scale: f64, rng: &mut Rng) -> Mat {
        let (r, c) = obj.param_shape();
        let mut v = rng.normal_vec(r * c);
        crate::numerics::scale(scale, &mut v);
        Mat::from_vec(r, c, v).unwrap()
    }

    fn smooth() -> Activation {
        Activation::smoothed(0.2, 1.0, 4.0).unwrap()
    }

    #[test]
    fn zero_weights_exponential_is_one() {
        let act = Activation::leaky_relu(0.2, 1.0).unwrap();
        let obj = net_objective(LossKind::Exponential, act, 7, 3, 4, 1);
        assert_eq!(obj.value(&Mat::zeros(4, 3)).unwrap(), 1.0);
    }

    #[test]
    fn zero_weights_logistic_is_log2() {
        let act = Activation::leaky_relu(0.2, 1.0).unwrap();
        let obj = net_objective(LossKind::Logistic, act, 7, 3, 4, 1);
        assert!((obj.value(&Mat::zeros(4, 3)).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn value_matches_naive_summation() {
        for loss in [LossKind::Exponential, LossKind::Logistic] {
            let obj = net_objective(loss, smooth(), 30, 4, 6, 3);
            let mut rng = Rng::new(3, 2);
            for _ in 0..5 {
                let w = random_w(&obj, 1.0, &mut rng);
                let Model::TwoLayer(net) = &obj.model else { unreachable!() };
                let mut naive = 0.0;
                for i in 0..obj.n() {
                    let (x, y) = obj.data().point(i);
                    let t = y * net.forward(&w, x).unwrap();
                    naive += match loss {
                        LossKind::Exponential => (-t).exp(),
                        LossKind::Logistic => (1.0 + (-t).exp()).ln(),
                    };
                }
                naive /= obj.n() as f64;
                let got = obj.value(&w).unwrap();
                assert!((got - naive).abs() <= 1e-12 * naive, "{got} vs {naive}");
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for loss in [LossKind::Exponential, LossKind::Logistic] {
            let obj = net_objective(loss, smooth(), 12, 3, 4, 4);
            let mut rng = Rng::new(4, 3);
            for _ in 0..20 {
                let w = random_w(&obj, 1.0, &mut rng);
                let g = obj.gradient(&w).unwrap();
                let fd = fd_gradient(
                    |p| obj.value(&Mat::from_vec(4, 3, p.to_vec()).unwrap()).unwrap(),
                    w.as_slice(),
                    1e-5,
                )
                .unwrap();
                assert!(rel_error(&g, &fd, 1e-12) <= 1e-5);
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_large_margins() {
        let net = TwoLayerNet::with_second_layer(Activation::linear(), vec![1.0], 1).unwrap();
        let data = Dataset::new(Mat::from_rows(&[vec![1.0], vec![-1.0]]).unwrap(), vec![1.0, -1.0]).unwrap();
        let obj = Objective::new(LossKind::Exponential, Model::TwoLayer(net), data).unwrap();
        let g1 = norm(&obj.gradient(&Mat::from_vec(1, 1, vec![10.0]).unwrap()).unwrap());
        let g2 = norm(&obj.gradient(&Mat::from_vec(1, 1, vec![800.0]).unwrap()).unwrap());
        assert!(g1 < 1e-4);
        assert_eq!(g2, 0.0);
    }

    #[test]
    fn large_negative_margins_do_not_overflow_prematurely() {
        // exp(710) alone overflows but the mean over 4 samples does not
        let net = TwoLayerNet::with_second_layer(Activation::linear(), vec![1.0], 1).unwrap();
        let data = Dataset::new(
            Mat::from_rows(&[vec![1.0], vec![-1.0], vec![1.0], vec![-1.0]]).unwrap(),
            vec![-1.0, 1.0, -1.0, 1.0],
        )
        .unwrap();
        let obj = Objective::new(LossKind::Exponential, Model::TwoLayer(net), data).unwrap();
        let v = obj.log_value(&Mat::from_vec(1, 1, vec![709.9]).unwrap()).unwrap();
        assert!((v - 709.9).abs() < 1e-12);
        assert!(obj.value(&Mat::from_vec(1, 1, vec![709.5]).unwrap()).unwrap().is_finite());
        assert!(matches!(
            obj.value(&Mat::from_vec(1, 1, vec![720.0]).unwrap()),
            Err(Error::Overflow(_))
        ));
    }

    #[test]
    fn hvp_matches_finite_differences() {
        for loss in [LossKind::Exponential, LossKind::Logistic] {
            let obj = net_objective(loss, smooth(), 10, 3, 4, 5);
            let mut rng = Rng::new(5, 4);
            for _ in 0..20 {
                let w = random_w(&obj, 1.0, &mut rng);
                let v = rng.normal_vec(12);
                let h = obj.hvp(&w, &v).unwrap();
                let fd = fd_directional(
                    |p| obj.gradient(&Mat::from_vec(4, 3, p.to_vec()).unwrap()).unwrap(),
                    w.as_slice(),
                    &v,
                    1e-5,
                );
                assert!(rel_error(&h, &fd, 1e-10) <= 1e-4);
            }
        }
    }

    #[test]
    fn hvp_of_zero_is_zero() {
        let obj = net_objective(LossKind::Exponential, smooth(), 5, 2, 3, 6);
        let out = obj.hvp(&Mat::zeros(3, 2), &[0.0; 6]).unwrap();
        assert_eq!(out, vec![0.0; 6]);
    }

    #[test]
    fn hvp_rejects_kinked_activation() {
        let obj = net_objective(
            LossKind::Exponential,
            Activation::leaky_relu(0.2, 1.0).unwrap(),
            5,
            2,
            3,
            6,
        );
        assert_eq!(obj.hvp(&Mat::zeros(3, 2), &[0.0; 6]), Err(Error::NonSmoothModel));
    }

    #[test]
    fn train_error_cases() {
        let act = Activation::leaky_relu(0.2, 1.0).unwrap();
        let obj = net_objective(LossKind::Exponential, act, 9, 2, 2, 7);
        assert_eq!(obj.train_error(&Mat::zeros(2, 2)).unwrap(), 1.0);

        let lin = Objective::new(
            LossKind::Exponential,
            Model::Linear(LinearModel { d: 1 }),
            Dataset::new(Mat::from_rows(&[vec![1.0], vec![-2.0], vec![0.5]]).unwrap(), vec![1.0, -1.0, -1.0])
                .unwrap(),
        )
        .unwrap();
        let w = Mat::from_vec(1, 1, vec![1.0]).unwrap();
        let margins = lin.margins(&w).unwrap();
        let oracle = margins.iter().filter(|&&t| t <= 0.0).count() as f64 / 3.0;
        assert_eq!(lin.train_error(&w).unwrap(), oracle);
        assert!((oracle - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn network_margin_scale_invariant() {
        let net = TwoLayerNet::with_second_layer(Activation::linear(), vec![1.0], 1).unwrap();
        let data = Dataset::new(Mat::from_rows(&[vec![1.0], vec![-1.0]]).unwrap(), vec![1.0, -1.0]).unwrap();
        let obj = Objective::new(LossKind::Exponential, Model::TwoLayer(net), data).unwrap();
        assert_eq!(obj.network_margin(&Mat::from_vec(1, 1, vec![2.0]).unwrap()).unwrap(), 1.0);
        assert_eq!(obj.network_margin(&Mat::from_vec(1, 1, vec![-2.0]).unwrap()).unwrap(), -1.0);
        assert_eq!(obj.network_margin(&Mat::zeros(1, 1)), Err(Error::ZeroWeights));
    }

    #[test]
    fn network_margin_matches_scan() {
        let obj = net_objective(LossKind::Exponential, smooth(), 15, 3, 4, 8);
        let mut rng = Rng::new(8, 5);
        let w = random_w(&obj, 1.0, &mut rng);
        let Model::TwoLayer(net) = &obj.model else { unreachable!() };
        let mut best = f64::INFINITY;
        for i in 0..obj.n() {
            let (x, y) = obj.data().point(i);
            best = best.min(y * net.forward(&w, x).unwrap());
        }
        assert!((obj.network_margin(&w).unwrap() - best / w.frobenius()).abs() < 1e-15);
    }

    #[test]
    fn linear_margin_basic() {
        let data = Dataset::new(Mat::from_rows(&[vec![1.0, 0.5], vec![-0.5, 3.0]]).unwrap(), vec![1.0, -1.0]).unwrap();
        assert_eq!(linear_margin(&data, &[2.0, 0.0]).unwrap(), 0.5);
        assert_eq!(linear_margin(&data, &[0.0, 0.0]), Err(Error::ZeroWeights));
    }

    #[test]
    fn self_bounded_gradient_exponential() {
        let obj = net_objective(LossKind::Exponential, smooth(), 20, 5, 8, 9);
        let h = obj.grad_bound();
        let mut rng = Rng::new(9, 6);
        for scale in [0.1, 1.0, 10.0, 100.0] {
            for _ in 0..10 {
                let w = random_w(&obj, scale, &mut rng);
                assert!(obj.evaluate(&w).unwrap().ratio() <= h + 1e-9);
            }
        }
    }

    #[test]
    fn logistic_loss_is_lipschitz_in_w() {
        let obj = net_objective(LossKind::Logistic, smooth(), 20, 5, 8, 10);
        let g = obj.grad_bound();
        let mut rng = Rng::new(10, 7);
        for _ in 0..200 {
            let w = random_w(&obj, 2.0, &mut rng);
            let v = random_w(&obj, 2.0, &mut rng);
            let diff = (obj.value(&w).unwrap() - obj.value(&v).unwrap()).abs();
            let dist = norm(&crate::numerics::sub(w.as_slice(), v.as_slice()));
            assert!(diff <= g * dist + 1e-12);
        }
    }

    #[test]
    fn subset_evaluation_with_all_indices_is_bitwise_full() {
        let obj = net_objective(LossKind::Exponential, smooth(), 11, 3, 4, 12);
        let mut rng = Rng::new(12, 8);
        let w = random_w(&obj, 1.0, &mut rng);
        let idx: Vec<usize> = (0..11).collect();
        assert_eq!(obj.evaluate(&w).unwrap(), obj.evaluate_on(&w, &idx, 11).unwrap());
    }

    #[test]
    fn loss_ratio_helpers_are_consistent() {
        for loss in [LossKind::Exponential, LossKind::Logistic] {
            for t in [-20.0, -1.0, 0.0, 0.7, 5.0, 29.0, 31.0, 60.0] {
                let f = loss.value(t);
                assert!((loss.log_value(t) - f.ln()).abs() < 1e-12 * f.ln().abs().max(1.0));
                assert!((loss.d1_ratio(t) - loss.d1(t) / f).abs() < 1e-12);
                assert!((loss.d2_ratio(t) - loss.d2(t) / f).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn hessian_is_symmetric(seed in 0u64..200) {
            let obj = net_objective(LossKind::Exponential, smooth(), 6, 3, 3, seed);
            let mut rng = Rng::new(seed, 9);
            let w = random_w(&obj, 1.0, &mut rng);
            let u = rng.normal_vec(9);
            let v = rng.normal_vec(9);
            let op = obj.hessian_operator(&w).unwrap();
            let lhs = dot(&u, &op.apply(&v));
            let rhs = dot(&v, &op.apply(&u));
            prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
        }
    }
}
