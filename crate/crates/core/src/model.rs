//! Predictors `Phi(w, x)` and their derivatives with respect to `w`.
//!
//! The main model is the two-layer network
//! `Phi(w, x) = sum_j a_j sigma(<w_j, x>)` with a frozen second layer
//! `a_j = +-1/m`. Two models that are linear in their parameters (a plain
//! linear predictor and random features) back the convex stability
//! experiments.

use crate::error::{Error, Result};
use crate::numerics::{dot, logistic, softplus, Mat, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    /// `alpha t + ((ell - alpha)/s) log(1 + exp(s t))`
    SmoothedLeakyRelu,
    /// `ell t` for `t >= 0`, `alpha t` otherwise.
    LeakyRelu,
}

/// Activation with slopes in `[alpha, ell]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Activation {
    pub kind: ActivationKind,
    pub alpha: f64,
    pub ell: f64,
    pub sharpness: f64,
}

/// Value and first two derivatives of an activation at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActEval {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Activation {
    pub fn smoothed(alpha: f64, ell: f64, sharpness: f64) -> Result<Self> {
        check_slopes(alpha, ell)?;
        if !(sharpness > 0.0 && sharpness.is_finite()) {
            return Err(Error::invalid("s", "sharpness must be positive"));
        }
        Ok(Activation {
            kind: ActivationKind::SmoothedLeakyRelu,
            alpha,
            ell,
            sharpness,
        })
    }

    pub fn leaky_relu(alpha: f64, ell: f64) -> Result<Self> {
        check_slopes(alpha, ell)?;
        Ok(Activation {
            kind: ActivationKind::LeakyRelu,
            alpha,
            ell,
            sharpness: 0.0,
        })
    }

    /// The identity map, `sigma(t) = t`.
    pub fn linear() -> Self {
        Activation {
            kind: ActivationKind::LeakyRelu,
            alpha: 1.0,
            ell: 1.0,
            sharpness: 0.0,
        }
    }

    /// Twice differentiable everywhere. A leaky ReLU with equal slopes is linear.
    pub fn is_smooth(&self) -> bool {
        match self.kind {
            ActivationKind::SmoothedLeakyRelu => true,
            ActivationKind::LeakyRelu => self.alpha == self.ell,
        }
    }

    /// Curvature bound `L >= sup |sigma''|`; infinite for a kinked leaky ReLU.
    pub fn curvature_bound(&self) -> f64 {
        match self.kind {
            ActivationKind::SmoothedLeakyRelu => (self.ell - self.alpha) * self.sharpness / 4.0,
            ActivationKind::LeakyRelu if self.alpha == self.ell => 0.0,
            ActivationKind::LeakyRelu => f64::INFINITY,
        }
    }

    /// `|sigma(0)|`
    pub fn offset(&self) -> f64 {
        self.value(0.0).abs()
    }

    pub fn value(&self, t: f64) -> f64 {
        self.first_order(t).0
    }

    /// `(sigma(t), sigma'(t))`; the leaky ReLU uses the `ell` branch at zero.
    pub fn first_order(&self, t: f64) -> (f64, f64) {
        match self.kind {
            ActivationKind::SmoothedLeakyRelu => {
                let s = self.sharpness;
                let gap = self.ell - self.alpha;
                (
                    self.alpha * t + gap / s * softplus(s * t),
                    self.alpha + gap * logistic(s * t),
                )
            }
            ActivationKind::LeakyRelu => {
                if t >= 0.0 {
                    (self.ell * t, self.ell)
                } else {
                    (self.alpha * t, self.alpha)
                }
            }
        }
    }

    pub fn d2(&self, t: f64) -> Result<f64> {
        match self.kind {
            ActivationKind::SmoothedLeakyRelu => {
                let s = self.sharpness;
                let p = logistic(s * t);
                Ok((self.ell - self.alpha) * s * p * (1.0 - p))
            }
            ActivationKind::LeakyRelu => {
                if t == 0.0 && self.alpha != self.ell {
                    Err(Error::NonSmooth(t))
                } else {
                    Ok(0.0)
                }
            }
        }
    }

    pub fn eval(&self, t: f64) -> Result<ActEval> {
        let (value, d1) = self.first_order(t);
        Ok(ActEval {
            value,
            d1,
            d2: self.d2(t)?,
        })
    }
}

fn check_slopes(alpha: f64, ell: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("alpha", "must be finite and non-negative"));
    }
    if !(ell >= alpha && ell.is_finite()) {
        return Err(Error::invalid("ell", "must be finite and at least alpha"));
    }
    Ok(())
}

/// How the frozen second-layer signs are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecondLayer {
    /// i.i.d. `+-1/m` from the given seed.
    Random { seed: u64 },
    /// `+1/m, -1/m, +1/m, ...`
    Alternating,
}

/// Two-layer network structure; the first-layer weights `W` (m x d) are
/// passed to every operation.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerNet {
    pub act: Activation,
    a: Vec<f64>,
    d: usize,
}

impl TwoLayerNet {
    pub fn new(act: Activation, m: usize, d: usize, signs: SecondLayer) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("m", "must be at least 1"));
        }
        if d == 0 {
            return Err(Error::invalid("d", "must be at least 1"));
        }
        let inv = 1.0 / m as f64;
        let a = match signs {
            SecondLayer::Random { seed } => {
                let mut rng = Rng::new(seed, 0x5ec0_d1a7);
                (0..m).map(|_| rng.sign() * inv).collect()
            }
            SecondLayer::Alternating => (0..m)
                .map(|j| if j % 2 == 0 { inv } else { -inv })
                .collect(),
        };
        Ok(TwoLayerNet { act, a, d })
    }

    /// Explicit second layer; every entry must have magnitude `1/m`.
    pub fn with_second_layer(act: Activation, a: Vec<f64>, d: usize) -> Result<Self> {
        let m = a.len();
        if m == 0 || d == 0 {
            return Err(Error::invalid("m", "network must have at least one neuron and input"));
        }
        let inv = 1.0 / m as f64;
        if a.iter().any(|v| (v.abs() - inv).abs() > 1e-15 * inv.max(1.0)) {
            return Err(Error::invalid("a", "second-layer weights must be +-1/m"));
        }
        Ok(TwoLayerNet { act, a, d })
    }

    pub fn m(&self) -> usize {
        self.a.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn second_layer(&self) -> &[f64] {
        &self.a
    }

    fn check(&self, w: &Mat, x: &[f64]) -> Result<()> {
        if w.shape() != (self.m(), self.d) {
            return Err(Error::Dimension {
                what: "first-layer weights",
                expected: self.m() * self.d,
                got: w.rows() * w.cols(),
            });
        }
        if x.len() != self.d {
            return Err(Error::Dimension {
                what: "input",
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, w: &Mat, x: &[f64]) -> Result<f64> {
        self.check(w, x)?;
        Ok(w.iter_rows()
            .zip(&self.a)
            .map(|(wj, aj)| aj * self.act.value(dot(wj, x)))
            .sum())
    }

    /// `grad_w Phi(w, x)`; block `j` is `a_j sigma'(<w_j, x>) x`.
    pub fn grad_phi(&self, w: &Mat, x: &[f64]) -> Result<Vec<f64>> {
        self.check(w, x)?;
        let mut out = Vec::with_capacity(self.m() * self.d);
        for (wj, aj) in w.iter_rows().zip(&self.a) {
            let c = aj * self.act.first_order(dot(wj, x)).1;
            out.extend(x.iter().map(|xi| c * xi));
        }
        Ok(out)
    }

    /// Block-diagonal Hessian of `Phi` applied to `v`:
    /// block `j` is `a_j sigma''(<w_j, x>) <x, v_j> x`.
    pub fn hvp_phi(&self, w: &Mat, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check(w, x)?;
        if !self.act.is_smooth() {
            return Err(Error::NonSmoothModel);
        }
        if v.len() != self.m() * self.d {
            return Err(Error::Dimension {
                what: "direction",
                expected: self.m() * self.d,
                got: v.len(),
            });
        }
        let mut out = vec![0.0; v.len()];
        for (j, (wj, aj)) in w.iter_rows().zip(&self.a).enumerate() {
            let block = j * self.d..(j + 1) * self.d;
            let c = aj * self.act.d2(dot(wj, x))? * dot(x, &v[block.clone()]);
            for (o, xi) in out[block].iter_mut().zip(x) {
                *o = c * xi;
            }
        }
        Ok(out)
    }
}

/// `Phi(w, x) = <w, x>`, parameters stored as a 1 x d matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearModel {
    pub d: usize,
}

/// `Phi(w, x) = (1/m) sum_j w_j sigma(<a_j, x>)` with a frozen unit-row
/// feature matrix `A` (m x d); parameters stored as a 1 x m matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomFeatures {
    pub act: Activation,
    features: Mat,
}

impl RandomFeatures {
    pub fn new(act: Activation, m: usize, d: usize, seed: u64) -> Result<Self> {
        if m == 0 || d == 0 {
            return Err(Error::invalid("m", "random features need m >= 1 and d >= 1"));
        }
        let mut rng = Rng::new(seed, 0xfea7);
        let rows: Vec<Vec<f64>> = (0..m).map(|_| rng.unit_vector(d)).collect();
        Ok(RandomFeatures {
            act,
            features: Mat::from_rows(&rows)?,
        })
    }

    pub fn m(&self) -> usize {
        self.features.rows()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    /// `(1/m) sigma(A x)`
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        let inv = 1.0 / self.m() as f64;
        self.features
            .iter_rows()
            .map(|aj| inv * self.act.value(dot(aj, x)))
            .collect()
    }
}

/// Any predictor the objective can be built on.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    TwoLayer(TwoLayerNet),
    Linear(LinearModel),
    RandomFeatures(RandomFeatures),
}

impl Model {
    pub fn input_dim(&self) -> usize {
        match self {
            Model::TwoLayer(net) => net.d(),
            Model::Linear(l) => l.d,
            Model::RandomFeatures(rf) => rf.d(),
        }
    }

    /// Shape of the parameter matrix.
    pub fn param_shape(&self) -> (usize, usize) {
        match self {
            Model::TwoLayer(net) => (net.m(), net.d()),
            Model::Linear(l) => (1, l.d),
            Model::RandomFeatures(rf) => (1, rf.m()),
        }
    }

    pub fn param_len(&self) -> usize {
        let (r, c) = self.param_shape();
        r * c
    }

    /// Width used in the `1/sqrt(m)` constants; 1 for the linear model.
    pub fn width(&self) -> usize {
        match self {
            Model::TwoLayer(net) => net.m(),
            Model::Linear(_) => 1,
            Model::RandomFeatures(rf) => rf.m(),
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            Model::TwoLayer(net) => net.act,
            Model::Linear(_) => Activation::linear(),
            Model::RandomFeatures(rf) => rf.act,
        }
    }

    /// `f(y Phi(., x))` is convex in `w` for convex `f`.
    pub fn is_convex(&self) -> bool {
        !matches!(self, Model::TwoLayer(_))
    }

    pub fn is_smooth(&self) -> bool {
        match self {
            Model::TwoLayer(net) => net.act.is_smooth(),
            _ => true,
        }
    }

    /// Upper bound on `||grad_w Phi(w, x)||` over `||x|| <= radius`.
    pub fn grad_bound(&self, radius: f64) -> f64 {
        let act = self.activation();
        match self {
            Model::TwoLayer(net) => act.ell * radius / (net.m() as f64).sqrt(),
            Model::Linear(_) => radius,
            Model::RandomFeatures(rf) => (act.ell * radius + act.offset()) / (rf.m() as f64).sqrt(),
        }
    }

    /// Upper bound on `||hess_w Phi(w, x)||_op` over `||x|| <= radius`.
    pub fn hessian_bound(&self, radius: f64) -> f64 {
        match self {
            Model::TwoLayer(net) => {
                net.act.curvature_bound() * radius * radius / net.m() as f64
            }
            _ => 0.0,
        }
    }

    pub(crate) fn scratch_len(&self) -> usize {
        match self {
            Model::TwoLayer(net) => net.m(),
            Model::Linear(_) => 0,
            Model::RandomFeatures(rf) => rf.m(),
        }
    }

    /// Evaluates `Phi(w, x)`, leaving per-neuron pre-activations (two-layer)
    /// or feature values (random features) in `scratch`. No shape checks.
    pub(crate) fn forward_into(&self, w: &Mat, x: &[f64], scratch: &mut [f64]) -> f64 {
        match self {
            Model::TwoLayer(net) => {
                let mut phi = 0.0;
                for ((wj, aj), z) in w.iter_rows().zip(&net.a).zip(scratch.iter_mut()) {
                    *z = dot(wj, x);
                    phi += aj * net.act.value(*z);
                }
                phi
            }
            Model::Linear(_) => dot(w.as_slice(), x),
            Model::RandomFeatures(rf) => {
                let inv = 1.0 / rf.m() as f64;
                for (aj, f) in rf.features.iter_rows().zip(scratch.iter_mut()) {
                    *f = inv * rf.act.value(dot(aj, x));
                }
                dot(w.as_slice(), scratch)
            }
        }
    }

    /// `out += coeff * grad_w Phi(w, x)` using the scratch from `forward_into`.
    pub(crate) fn add_grad(&self, x: &[f64], scratch: &[f64], coeff: f64, out: &mut [f64]) {
        match self {
            Model::TwoLayer(net) => {
                let d = net.d();
                for (j, (aj, z)) in net.a.iter().zip(scratch).enumerate() {
                    let c = coeff * aj * net.act.first_order(*z).1;
                    for (o, xi) in out[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *o += c * xi;
                    }
                }
            }
            Model::Linear(_) => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o += coeff * xi;
                }
            }
            Model::RandomFeatures(_) => {
                for (o, f) in out.iter_mut().zip(scratch) {
                    *o += coeff * f;
                }
            }
        }
    }

    /// Per-neuron `a_j sigma''(z_j)` for the two-layer net; empty otherwise.
    pub(crate) fn curvature_coeffs(&self, scratch: &[f64]) -> Result<Vec<f64>> {
        match self {
            Model::TwoLayer(net) => {
                if !net.act.is_smooth() {
                    return Err(Error::NonSmoothModel);
                }
                net.a
                    .iter()
                    .zip(scratch)
                    .map(|(aj, z)| Ok(aj * net.act.d2(*z)?))
                    .collect()
            }
            _ => Ok(Vec::new()),
        }
    }

    pub fn forward(&self, w: &Mat, x: &[f64]) -> Result<f64> {
        if w.shape() != self.param_shape() {
            return Err(Error::Dimension {
                what: "parameters",
                expected: self.param_len(),
                got: w.rows() * w.cols(),
            });
        }
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                what: "input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut scratch = vec![0.0; self.scratch_len()];
        Ok(self.forward_into(w, x, &mut scratch))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{fd_directional, fd_gradient, norm, rel_error};
    use proptest::prelude::*;
    use crate::numerics::Rng;

    fn seeded_net(m: usize, d: usize, seed: u64) -> (TwoLayerNet, Mat) {
        let act = Activation::smoothed(0.2, 1.0, 4.0).unwrap();
        let net = TwoLayerNet::new(act, m, d, SecondLayer::Random { seed }).unwrap();
        let mut rng = Rng::new(seed, 11);
        let w = Mat::from_vec(m, d, rng.normal_vec(m * d)).unwrap();
        (net, w)
    }

    #[test]
    fn leaky_relu_negative_branch() {
        let act = Activation::leaky_relu(0.2, 1.0).unwrap();
        let e = act.eval(-2.0).unwrap();
        assert!((e.value + 0.4).abs() < 1e-15);
        assert_eq!(e.d1, 0.2);
        assert_eq!(e.d2, 0.0);
    }

    #[test]
    fn leaky_relu_kink_rejects_second_derivative() {
        let act = Activation::leaky_relu(0.2, 1.0).unwrap();
        assert_eq!(act.eval(0.0), Err(Error::NonSmooth(0.0)));
        assert_eq!(act.first_order(0.0), (0.0, 1.0));
    }

    #[test]
    fn softplus_at_zero() {
        let act = Activation::smoothed(0.0, 1.0, 1.0).unwrap();
        let e = act.eval(0.0).unwrap();
        assert!((e.value - 2f64.ln()).abs() < 1e-15);
        assert!((e.d1 - 0.5).abs() < 1e-15);
        assert!((e.d2 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn smoothed_curvature_grid_scan() {
        let act = Activation::smoothed(0.2, 1.0, 4.0).unwrap();
        let bound = act.curvature_bound();
        assert!((bound - 0.8).abs() < 1e-15);
        let mut sup: f64 = 0.0;
        let mut k = -50_000i64;
        while k <= 50_000 {
            let t = k as f64 * 1e-3;
            sup = sup.max(act.d2(t).unwrap().abs());
            k += 1;
        }
        assert!(sup <= bound + 1e-15, "sup {sup}");
        assert!(sup > 0.999 * bound);
    }

    #[test]
    fn smoothed_large_argument_is_finite() {
        let act = Activation::smoothed(0.2, 1.0, 4.0).unwrap();
        for t in [-1e6, -300.0, 300.0, 1e6] {
            let e = act.eval(t).unwrap();
            assert!(e.value.is_finite() && e.d1.is_finite() && e.d2.is_finite());
        }
        // linear asymptote branch stays close to the exact expression
        let t: f64 = 7.6;
        let exact = 0.2 * t + 0.8 / 4.0 * (4.0 * t).exp().ln_1p();
        assert!((act.value(t) - exact).abs() < 1e-13);
    }

    #[test]
    fn invalid_activation_parameters() {
        assert!(Activation::smoothed(0.5, 0.2, 1.0).is_err());
        assert!(Activation::smoothed(0.1, 1.0, 0.0).is_err());
        assert!(Activation::leaky_relu(-0.1, 1.0).is_err());
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let act = Activation::leaky_relu(0.2, 1.0).unwrap();
        let net = TwoLayerNet::new(act, 5, 3, SecondLayer::Random { seed: 1 }).unwrap();
        assert_eq!(net.forward(&Mat::zeros(5, 3), &[0.3, -2.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn balanced_signs_cancel_smoothed_offset() {
        let act = Activation::smoothed(0.2, 1.0, 4.0).unwrap();
        let net = TwoLayerNet::new(act, 6, 2, SecondLayer::Alternating).unwrap();
        assert_eq!(net.forward(&Mat::zeros(6, 2), &[1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn single_linear_neuron() {
        for a in [1.0, -1.0] {
            let net = TwoLayerNet::with_second_layer(Activation::linear(), vec![a], 1).unwrap();
            let w = Mat::from_vec(1, 1, vec![3.0]).unwrap();
            assert_eq!(net.forward(&w, &[2.0]).unwrap(), 6.0 * a);
            assert_eq!(net.grad_phi(&w, &[2.0]).unwrap(), vec![2.0 * a]);
        }
    }

    #[test]
    fn second_layer_magnitude_enforced() {
        assert!(TwoLayerNet::with_second_layer(Activation::linear(), vec![0.5, 0.4], 1).is_err());
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        let (net, w) = seeded_net(4, 3, 21);
        let mut rng = Rng::new(21, 12);
        let act = net.act;
        for _ in 0..10 {
            let x = rng.normal_vec(3);
            let mut oracle = 0.0;
            for j in 0..4 {
                let mut z = 0.0;
                for k in 0..3 {
                    z += w.get(j, k) * x[k];
                }
                let s = act.sharpness;
                let sigma = act.alpha * z + (act.ell - act.alpha) / s * (1.0 + (s * z).exp()).ln();
                oracle += net.second_layer()[j] * sigma;
            }
            let got = net.forward(&w, &x).unwrap();
            assert!((got - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
        }
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let (net, w) = seeded_net(4, 3, 1);
        assert!(matches!(net.forward(&w, &[1.0, 2.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn grad_phi_matches_finite_differences() {
        let (net, _) = seeded_net(4, 3, 5);
        let mut rng = Rng::new(5, 13);
        for _ in 0..20 {
            let w = Mat::from_vec(4, 3, rng.normal_vec(12)).unwrap();
            let x = rng.normal_vec(3);
            let analytic = net.grad_phi(&w, &x).unwrap();
            let fd = fd_gradient(
                |p| net.forward(&Mat::from_vec(4, 3, p.to_vec()).unwrap(), &x).unwrap(),
                w.as_slice(),
                1e-5,
            )
            .unwrap();
            assert!(rel_error(&analytic, &fd, 1e-12) <= 1e-6);
        }
    }

    #[test]
    fn hvp_phi_matches_finite_differences() {
        let (net, _) = seeded_net(3, 4, 6);
        let mut rng = Rng::new(6, 14);
        for _ in 0..20 {
            let w = Mat::from_vec(3, 4, rng.normal_vec(12)).unwrap();
            let x = rng.normal_vec(4);
            let v = rng.normal_vec(12);
            let analytic = net.hvp_phi(&w, &x, &v).unwrap();
            let fd = fd_directional(
                |p| net.grad_phi(&Mat::from_vec(3, 4, p.to_vec()).unwrap(), &x).unwrap(),
                w.as_slice(),
                &v,
                1e-5,
            );
            assert!(rel_error(&analytic, &fd, 1e-8) <= 1e-5);
        }
    }

    #[test]
    fn hvp_phi_linear_activation_vanishes() {
        let net = TwoLayerNet::new(Activation::linear(), 3, 2, SecondLayer::Alternating).unwrap();
        let w = Mat::from_vec(3, 2, vec![1.0, -1.0, 0.5, 2.0, 0.0, 1.0]).unwrap();
        let out = net.hvp_phi(&w, &[1.0, 2.0], &[1.0; 6]).unwrap();
        assert_eq!(out, vec![0.0; 6]);
    }

    #[test]
    fn hvp_phi_is_block_diagonal() {
        let (net, w) = seeded_net(3, 2, 8);
        let mut v = vec![0.0; 6];
        v[2] = 1.0;
        v[3] = -0.5;
        let out = net.hvp_phi(&w, &[0.4, -0.3], &v).unwrap();
        assert_eq!(&out[0..2], &[0.0, 0.0]);
        assert_eq!(&out[4..6], &[0.0, 0.0]);
        assert!(out[2] != 0.0);
    }

    #[test]
    fn hvp_phi_rejects_kinked_activation() {
        let act = Activation::leaky_relu(0.2, 1.0).unwrap();
        let net = TwoLayerNet::new(act, 2, 2, SecondLayer::Alternating).unwrap();
        let r = net.hvp_phi(&Mat::zeros(2, 2), &[1.0, 0.0], &[0.0; 4]);
        assert_eq!(r, Err(Error::NonSmoothModel));
    }

    #[test]
    fn phi_hessian_norm_bound() {
        // power iteration on the block-diagonal Phi Hessian
        for seed in 0..10 {
            let (net, w) = seeded_net(5, 3, 100 + seed);
            let mut rng = Rng::new(seed, 15);
            let x = rng.unit_vector(3);
            let est = crate::numerics::power_iteration(
                |v| net.hvp_phi(&w, &x, v).unwrap(),
                15,
                1e-9,
                100_000,
                &mut rng,
            )
            .unwrap();
            let bound = net.act.curvature_bound() * dot(&x, &x) / 5.0;
            assert!(est.value <= bound * (1.0 + 1e-9), "{} > {bound}", est.value);
        }
    }

    proptest! {
        #[test]
        fn smoothed_slope_within_bounds(t in -1e4f64..1e4, s in 0.1f64..20.0) {
            let act = Activation::smoothed(0.2, 1.0, s).unwrap();
            let (_, d1) = act.first_order(t);
            prop_assert!((0.2..=1.0).contains(&d1));
            prop_assert!(act.d2(t).unwrap().abs() <= act.curvature_bound() * (1.0 + 1e-12));
        }

        #[test]
        fn grad_phi_norm_bound(seed in 0u64..500, m in 1usize..12, d in 1usize..6) {
            let (net, w) = seeded_net(m, d, seed);
            let mut rng = Rng::new(seed, 16);
            let x = rng.normal_vec(d);
            let g = net.grad_phi(&w, &x).unwrap();
            prop_assert!(norm(&g) <= net.act.ell * norm(&x) / (m as f64).sqrt() * (1.0 + 1e-12));
        }

        #[test]
        fn hvp_phi_linear_and_symmetric(seed in 0u64..500) {
            let (net, w) = seeded_net(4, 3, seed);
            let mut rng = Rng::new(seed, 17);
            let x = rng.normal_vec(3);
            let u = rng.normal_vec(12);
            let v = rng.normal_vec(12);
            let hu = net.hvp_phi(&w, &x, &u).unwrap();
            let hv = net.hvp_phi(&w, &x, &v).unwrap();
            prop_assert!((dot(&u, &hv) - dot(&v, &hu)).abs() <= 1e-10);
            let sum: Vec<f64> = u.iter().zip(&v).map(|(a, b)| 2.0 * a + b).collect();
            let hs = net.hvp_phi(&w, &x, &sum).unwrap();
            for k in 0..12 {
                prop_assert!((hs[k] - (2.0 * hu[k] + hv[k])).abs() <= 1e-12);
            }
        }
    }
}
