//! Leave-one-out stability of normalized GD on objectives that are convex
//! in their parameters, and Monte-Carlo generalization-gap estimates.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::{generate, Dataset, GenSpec};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{axpy, fit_line, norm, sub, Mat, Rng};
use crate::objective::{LossKind, Objective};
use crate::optim::{run, weight_growth, OptimizerConfig, OptimizerKind};

/// Outcome of sampling pairs through the gradient map `G(w) = w - eta grad F(w)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expansiveness {
    pub pairs: usize,
    pub violations: usize,
    /// Largest `||G(w) - G(v)|| / ||w - v||`.
    pub max_ratio: f64,
}

/// Additive and relative slack for one non-expansiveness comparison.
pub const EXPANSION_SLACK: f64 = 1e-12;

/// `w - eta grad F(w)`
pub fn gradient_map(obj: &Objective, w: &Mat, eta: f64) -> Result<Mat> {
    let e = obj.evaluate(w)?;
    let mut out = w.clone();
    axpy(-eta * e.loss, &e.grad_over_loss, out.as_mut_slice());
    Ok(out)
}

/// Samples `pairs` random `(w, v)` at scales drawn from `{0.1, 1, 10}` and
/// checks `||G(w) - G(v)|| <= ||w - v||` at `eta = 0.99 / (h max(F(w), F(v)))`.
pub fn check_nonexpansive(obj: &Objective, pairs: usize, rng: &mut Rng) -> Result<Expansiveness> {
    if !obj.model.is_convex() {
        return Err(Error::NonConvexModel);
    }
    let h = obj.grad_bound();
    if h > 1.0 {
        return Err(Error::invalid("data", format!("h = {h} exceeds 1; rescale the data")));
    }
    let (r, c) = obj.param_shape();
    let scales = [0.1, 1.0, 10.0];
    let mut out = Expansiveness {
        pairs,
        violations: 0,
        max_ratio: 0.0,
    };
    for _ in 0..pairs {
        let draw = |rng: &mut Rng| {
            let s = scales[rng.below(scales.len())];
            let v: Vec<f64> = rng.normal_vec(r * c).into_iter().map(|x| s * x).collect();
            Mat::from_vec(r, c, v).expect("shape")
        };
        let w = draw(rng);
        let v = draw(rng);
        let fmax = obj.value(&w)?.max(obj.value(&v)?);
        let eta = 0.99 / (h * fmax);
        let before = norm(&sub(w.as_slice(), v.as_slice()));
        let gw = gradient_map(obj, &w, eta)?;
        let gv = gradient_map(obj, &v, eta)?;
        let after = norm(&sub(gw.as_slice(), gv.as_slice()));
        if after > before + EXPANSION_SLACK * (1.0 + before) {
            out.violations += 1;
        }
        if before > 0.0 {
            out.max_ratio = out.max_ratio.max(after / before);
        }
    }
    Ok(out)
}

/// A leave-one-out trajectory paired with the full-data run.
#[derive(Debug, Clone, PartialEq)]
pub struct LooRun {
    pub i: usize,
    /// `w_t^{-i}` for `t = 0..=T`.
    pub trajectory: Vec<Mat>,
    /// Step sizes `eta_t` copied from the full run.
    pub step_sizes: Vec<f64>,
    /// `||w_t - w_t^{-i}||`
    pub distances: Vec<f64>,
    /// `F^{-i}(w_t^{-i}) / F^{-i}(w_t)`
    pub delta_hat: Vec<f64>,
    /// `(h/n) sum_{s<t} eta_s f_i(w_s)`
    pub bound_sample: Vec<f64>,
    /// `(h/n) sum_{s<t} eta_s F(w_s)`, which bounds the distance averaged over `i`.
    pub bound_mean: Vec<f64>,
}

impl LooRun {
    pub fn max_delta(&self) -> f64 {
        self.delta_hat.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest `distance - bound_sample`; non-positive when the bound holds.
    pub fn worst_excess(&self) -> f64 {
        self.distances
            .iter()
            .zip(&self.bound_sample)
            .map(|(d, b)| d - b)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// The full-data run shared by every leave-one-out trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct FullRun {
    pub iterates: Vec<Mat>,
    pub step_sizes: Vec<f64>,
    pub log_losses: Vec<f64>,
}

pub fn full_run(obj: &Objective, cfg: &OptimizerConfig) -> Result<FullRun> {
    if !obj.model.is_convex() {
        return Err(Error::NonConvexModel);
    }
    if cfg.kind != OptimizerKind::Ngd {
        return Err(Error::invalid("kind", "leave-one-out runs use ngd"));
    }
    let mut cfg = cfg.clone();
    cfg.keep_iterates = true;
    let res = run(obj, &cfg, None)?;
    let log_losses = res
        .iterates
        .iter()
        .map(|w| obj.log_value(w))
        .collect::<Result<Vec<_>>>()?;
    let len = res.step_sizes.len();
    Ok(FullRun {
        iterates: res.iterates[..=len].to_vec(),
        step_sizes: res.step_sizes,
        log_losses: log_losses[..=len].to_vec(),
    })
}

/// Leave-one-out trajectory for sample `i` against a prepared full run.
pub fn loo_against(obj: &Objective, full: &FullRun, i: usize) -> Result<LooRun> {
    let n = obj.n();
    if n < 2 {
        return Err(Error::DegenerateLeaveOneOut);
    }
    if i >= n {
        return Err(Error::invalid("i", format!("index {i} out of range for n = {n}")));
    }
    let rest: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    let h = obj.grad_bound();
    let inv_n = 1.0 / n as f64;
    let mut w = full.iterates[0].clone();
    let t_max = full.step_sizes.len();
    let mut out = LooRun {
        i,
        trajectory: Vec::with_capacity(t_max + 1),
        step_sizes: full.step_sizes.clone(),
        distances: Vec::with_capacity(t_max + 1),
        delta_hat: Vec::with_capacity(t_max + 1),
        bound_sample: Vec::with_capacity(t_max + 1),
        bound_mean: Vec::with_capacity(t_max + 1),
    };
    let (mut acc_sample, mut acc_mean) = (0.0, 0.0);
    for t in 0..=t_max {
        let wt = &full.iterates[t];
        let loo_self = obj.evaluate_on(&w, &rest, n)?;
        let loo_full = obj.log_value_on(wt, &rest, n)?;
        out.distances.push(norm(&sub(wt.as_slice(), w.as_slice())));
        out.delta_hat.push((loo_self.log_loss - loo_full).exp());
        out.bound_sample.push(acc_sample);
        out.bound_mean.push(acc_mean);
        out.trajectory.push(w.clone());
        if t == t_max {
            break;
        }
        let eta_t = full.step_sizes[t];
        let log_fi = obj.log_value_on(wt, &[i], 1)?;
        acc_sample += h * inv_n * eta_t * log_fi.exp();
        acc_mean += h * inv_n * eta_t * full.log_losses[t].exp();
        // eta_t grad F^{-i}(w) with eta_t = eta / F(w_t), formed in log space
        let factor = (eta_t.ln() + loo_self.log_loss).exp();
        axpy(-factor, &loo_self.grad_over_loss, w.as_mut_slice());
    }
    Ok(out)
}

pub fn run_loo(obj: &Objective, cfg: &OptimizerConfig, i: usize) -> Result<LooRun> {
    if obj.n() < 2 {
        return Err(Error::DegenerateLeaveOneOut);
    }
    let full = full_run(obj, cfg)?;
    loo_against(obj, &full, i)
}

/// Leave-one-out runs for every index, in parallel, returned in index order.
pub fn run_loo_all(obj: &Objective, cfg: &OptimizerConfig) -> Result<Vec<LooRun>> {
    if obj.n() < 2 {
        return Err(Error::DegenerateLeaveOneOut);
    }
    let full = full_run(obj, cfg)?;
    (0..obj.n())
        .into_par_iter()
        .map(|i| loo_against(obj, &full, i))
        .collect()
}

/// Mean over `i` of `||w_t - w_t^{-i}||`, per `t`.
pub fn mean_distances(runs: &[LooRun]) -> Vec<f64> {
    let len = runs.iter().map(|r| r.distances.len()).min().unwrap_or(0);
    (0..len)
        .map(|t| runs.iter().map(|r| r.distances[t]).sum::<f64>() / runs.len() as f64)
        .collect()
}

/// Train/test split generated for one trial.
fn trial_data(dist: &GenSpec, test_size: usize, seed: u64, trial: usize) -> Result<(Dataset, Dataset)> {
    let k = trial as u64;
    let train_seed = Rng::new(seed, 0x7a1_0000 + 2 * k).next_u64();
    let test_seed = Rng::new(seed, 0x7a1_0001 + 2 * k).next_u64();
    let train = generate(&dist.with_seed(train_seed))?;
    let test = generate(&dist.with_seed(test_seed).with_n(test_size))?;
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapTrial {
    pub trial: usize,
    pub n: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_err: f64,
    pub gap: f64,
    pub w_slope: f64,
    pub w_r_squared: f64,
    /// `min |Phi(w_T, x)| / ||w_T||` over the test sample.
    pub margin_proxy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapEstimate {
    pub trials: usize,
    pub n: usize,
    pub steps: usize,
    pub mean_gap: f64,
    /// Standard error of the mean gap; `NaN` for a single trial.
    pub gap_std_err: f64,
    pub mean_train_loss: f64,
    pub mean_test_loss: f64,
    pub mean_test_err: f64,
    /// `2 G T / n`
    pub bound_lipschitz: f64,
    /// `4 E[F] + 3 L^2 T / n` with `L = s_f G^2`, the smoothness of a loss
    /// with curvature `s_f` composed with a model linear in its parameters.
    pub bound_smooth: f64,
    pub mean_w_slope: f64,
    pub per_trial: Vec<GapTrial>,
}

impl GapEstimate {
    pub fn trials_csv(&self) -> String {
        let mut out = String::from("trial,n,T,train_loss,test_loss,test_err,gap\n");
        for t in &self.per_trial {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                t.trial, t.n, t.steps, t.train_loss, t.test_loss, t.test_err, t.gap
            );
        }
        out
    }

    pub fn summary(&self) -> crate::report::KeyValues {
        let mut kv = crate::report::KeyValues::new();
        kv.push("trials", self.trials)
            .push("n", self.n)
            .push("T", self.steps)
            .push("mean_gap", self.mean_gap)
            .push("gap_std_err", self.gap_std_err)
            .push("mean_train_loss", self.mean_train_loss)
            .push("mean_test_loss", self.mean_test_loss)
            .push("mean_test_err", self.mean_test_err)
            .push("bound_lipschitz", self.bound_lipschitz)
            .push("bound_smooth", self.bound_smooth)
            .push("mean_w_slope", self.mean_w_slope)
            .push("pass_lipschitz", self.mean_gap <= self.bound_lipschitz)
            .push("status", if self.trials < 2 { "warning_single_trial" } else { "ok" });
        kv
    }
}

/// Trains on `trials` fresh samples of `dist` and measures test minus train
/// loss on a fresh test sample of size `test_size`.
///
/// Trial `k` draws its training and test sets from seeds derived from
/// `(seed, k)` alone, so estimates at different `n` share test sets and,
/// for sequential generators, nested training sets.
pub fn estimate_gap(
    dist: &GenSpec,
    model: &Model,
    loss: LossKind,
    cfg: &OptimizerConfig,
    trials: usize,
    test_size: usize,
    seed: u64,
) -> Result<GapEstimate> {
    if trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    let per_trial: Vec<GapTrial> = (0..trials)
        .into_par_iter()
        .map(|k| -> Result<GapTrial> {
            let (train, test) = trial_data(dist, test_size, seed, k)?;
            let obj = Objective::new(loss, model.clone(), train)?;
            let test_obj = obj.rebind(test)?;
            let res = run(&obj, cfg, None)?;
            let train_loss = obj.value(&res.w)?;
            let test_loss = test_obj.value(&res.w)?;
            let fit = if res.trace.len() >= 4 {
                weight_growth(&res.trace)
            } else {
                fit_line(&[0.0, 1.0], &[0.0, 0.0])
            };
            let w_norm = res.w.frobenius();
            let margin_proxy = if w_norm > 0.0 {
                test_obj
                    .margins(&res.w)?
                    .iter()
                    .map(|m| m.abs())
                    .fold(f64::INFINITY, f64::min)
                    / w_norm
            } else {
                0.0
            };
            Ok(GapTrial {
                trial: k,
                n: obj.n(),
                steps: cfg.steps,
                train_loss,
                test_loss,
                test_err: test_obj.train_error(&res.w)?,
                gap: test_loss - train_loss,
                w_slope: fit.slope,
                w_r_squared: fit.r_squared,
                margin_proxy,
            })
        })
        .collect::<Result<_>>()?;
    let k = trials as f64;
    let mean = |f: fn(&GapTrial) -> f64| per_trial.iter().map(f).sum::<f64>() / k;
    let mean_gap = mean(|t| t.gap);
    let gap_std_err = if trials > 1 {
        let var = per_trial.iter().map(|t| (t.gap - mean_gap).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    } else {
        f64::NAN
    };
    let n = dist.n;
    // the radius of a sample can differ between trials; use the generator bound
    let g_model = model.grad_bound(dist.r_max);
    let g = loss.lipschitz().unwrap_or(f64::INFINITY) * g_model;
    let smooth = loss.smoothness().unwrap_or(f64::INFINITY) * g_model * g_model;
    let mean_train_loss = mean(|t| t.train_loss);
    Ok(GapEstimate {
        trials,
        n,
        steps: cfg.steps,
        mean_gap,
        gap_std_err,
        mean_train_loss,
        mean_test_loss: mean(|t| t.test_loss),
        mean_test_err: mean(|t| t.test_err),
        bound_lipschitz: 2.0 * g * cfg.steps as f64 / n as f64,
        bound_smooth: 4.0 * mean_train_loss + 3.0 * smooth * smooth * cfg.steps as f64 / n as f64,
        mean_w_slope: mean(|t| t.w_slope),
        per_trial,
    })
}

/// Least-squares fit `err ~ c1 F(w_T) / T + c2 / n` across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorScaling {
    pub mean_test_err: f64,
    pub c1: f64,
    pub c2: f64,
    pub mean_w_slope: f64,
    pub min_w_r_squared: f64,
    pub min_margin_proxy: f64,
    pub estimates: Vec<GapEstimate>,
}

pub fn test_error_scaling(
    dist: &GenSpec,
    model: &Model,
    loss: LossKind,
    cfg: &OptimizerConfig,
    ns: &[usize],
    trials: usize,
    test_size: usize,
    seed: u64,
) -> Result<ErrorScaling> {
    if ns.is_empty() {
        return Err(Error::invalid("n", "need at least one sample size"));
    }
    let estimates = ns
        .iter()
        .map(|&n| estimate_gap(&dist.with_n(n), model, loss, cfg, trials, test_size, seed))
        .collect::<Result<Vec<_>>>()?;
    let steps = cfg.steps.max(1) as f64;
    // normal equations of the two-feature regression without intercept
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut all = Vec::new();
    for e in &estimates {
        for t in &e.per_trial {
            let x1 = t.train_loss / steps;
            let x2 = 1.0 / t.n as f64;
            a11 += x1 * x1;
            a12 += x1 * x2;
            a22 += x2 * x2;
            b1 += x1 * t.test_err;
            b2 += x2 * t.test_err;
            all.push(t);
        }
    }
    let det = a11 * a22 - a12 * a12;
    let (c1, c2) = if det.abs() > 1e-300 {
        ((a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det)
    } else if a22 > 0.0 {
        (0.0, b2 / a22)
    } else {
        (0.0, 0.0)
    };
    let count = all.len() as f64;
    Ok(ErrorScaling {
        mean_test_err: all.iter().map(|t| t.test_err).sum::<f64>() / count,
        c1,
        c2,
        mean_w_slope: all.iter().map(|t| t.w_slope).sum::<f64>() / count,
        min_w_r_squared: all.iter().map(|t| t.w_r_squared).fold(f64::INFINITY, f64::min),
        min_margin_proxy: all.iter().map(|t| t.margin_proxy).fold(f64::INFINITY, f64::min),
        estimates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, LinearModel, RandomFeatures, SecondLayer, TwoLayerNet};
    use crate::optim::Init;

    fn linear(n: usize, d: usize, seed: u64, loss: LossKind) -> Objective {
        let data = generate(&GenSpec::planted(n, d, 0.1, seed)).unwrap();
        Objective::new(loss, Model::Linear(LinearModel { d }), data).unwrap()
    }

    #[test]
    fn equal_points_and_zero_step() {
        let obj = linear(30, 5, 0, LossKind::Logistic);
        let w = Mat::from_vec(1, 5, vec![0.3, -1.0, 2.0, 0.0, 0.5]).unwrap();
        assert_eq!(gradient_map(&obj, &w, 0.0).unwrap(), w);
        let g = gradient_map(&obj, &w, 0.7).unwrap();
        assert_eq!(gradient_map(&obj, &w, 0.7).unwrap(), g);
    }

    #[test]
    fn linear_logistic_is_nonexpansive() {
        let obj = linear(50, 10, 1, LossKind::Logistic);
        let r = check_nonexpansive(&obj, 300, &mut Rng::new(1, 0)).unwrap();
        assert_eq!(r.violations, 0);
        assert!(r.max_ratio <= 1.0 + 1e-12);
    }

    #[test]
    fn nonconvex_and_large_h_rejected() {
        let data = generate(&GenSpec::planted(10, 3, 0.1, 0)).unwrap();
        let net = TwoLayerNet::new(Activation::linear(), 2, 3, SecondLayer::Alternating).unwrap();
        let obj = Objective::new(LossKind::Logistic, Model::TwoLayer(net), data.clone()).unwrap();
        assert_eq!(check_nonexpansive(&obj, 1, &mut Rng::new(0, 0)), Err(Error::NonConvexModel));
        let big = Objective::new(LossKind::Logistic, Model::Linear(LinearModel { d: 3 }), data.scaled(3.0).unwrap()).unwrap();
        assert!(check_nonexpansive(&big, 1, &mut Rng::new(0, 0)).is_err());
    }

    #[test]
    fn single_sample_leave_one_out_is_degenerate() {
        let data = Dataset::new(Mat::from_vec(1, 2, vec![0.5, 0.5]).unwrap(), vec![1.0]).unwrap();
        let obj = Objective::new(LossKind::Logistic, Model::Linear(LinearModel { d: 2 }), data).unwrap();
        let cfg = OptimizerConfig::new(OptimizerKind::Ngd, 0.5, 3);
        assert_eq!(run_loo(&obj, &cfg, 0), Err(Error::DegenerateLeaveOneOut));
    }

    #[test]
    fn duplicated_sample_distance_bound() {
        let base = generate(&GenSpec::planted(12, 4, 0.1, 2)).unwrap();
        let mut idx: Vec<usize> = (0..12).collect();
        idx.push(3);
        let data = base.subset(&idx).unwrap();
        let obj = Objective::new(LossKind::Logistic, Model::Linear(LinearModel { d: 4 }), data).unwrap();
        let cfg = OptimizerConfig::new(OptimizerKind::Ngd, 0.5, 60).with_init(Init::Zero);
        let runs = run_loo_all(&obj, &cfg).unwrap();
        for r in &runs {
            assert!(r.worst_excess() <= 1e-9, "i = {} excess {}", r.i, r.worst_excess());
            assert_eq!(r.step_sizes.len(), 60);
        }
        let mean = mean_distances(&runs);
        for (d, b) in mean.iter().zip(&runs[0].bound_mean) {
            assert!(*d <= b + 1e-9);
        }
    }

    #[test]
    fn random_features_delta_is_bounded() {
        let steps = 8;
        let act = Activation::smoothed(0.0, 1.0, 1.0).unwrap();
        let data = generate(&GenSpec::planted(15, 4, 0.1, 3)).unwrap();
        let rf = RandomFeatures::new(act, steps * steps, 4, 3).unwrap();
        let obj = Objective::new(LossKind::Logistic, Model::RandomFeatures(rf), data).unwrap();
        let cfg = OptimizerConfig::new(OptimizerKind::Ngd, 1.0 / obj.grad_bound(), steps).with_init(Init::Zero);
        let runs = run_loo_all(&obj, &cfg).unwrap();
        let delta = runs.iter().map(|r| r.max_delta()).fold(0.0, f64::max);
        assert!(delta <= 3.0f64.exp());
    }

    #[test]
    fn gap_is_reproducible_and_zero_at_init() {
        let model = Model::Linear(LinearModel { d: 5 });
        let dist = GenSpec::planted(30, 5, 0.1, 0);
        let cfg = OptimizerConfig::new(OptimizerKind::Ngd, 0.5, 20).with_init(Init::Zero);
        let a = estimate_gap(&dist, &model, LossKind::Logistic, &cfg, 4, 200, 3).unwrap();
        let b = estimate_gap(&dist, &model, LossKind::Logistic, &cfg, 4, 200, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.mean_gap <= a.bound_lipschitz);
        assert!(a.trials_csv().starts_with("trial,n,T,train_loss,test_loss,test_err,gap\n"));

        let idle = OptimizerConfig::new(OptimizerKind::Ngd, 0.5, 0).with_init(Init::Zero);
        let z = estimate_gap(&dist, &model, LossKind::Logistic, &idle, 3, 50, 3).unwrap();
        assert_eq!(z.mean_gap, 0.0);
        assert_eq!(z.bound_lipschitz, 0.0);
    }

    #[test]
    fn single_trial_is_flagged() {
        let model = Model::Linear(LinearModel { d: 3 });
        let cfg = OptimizerConfig::new(OptimizerKind::Ngd, 0.5, 5).with_init(Init::Zero);
        let g = estimate_gap(&GenSpec::planted(10, 3, 0.1, 0), &model, LossKind::Logistic, &cfg, 1, 20, 0).unwrap();
        assert!(g.gap_std_err.is_nan());
        assert_eq!(g.summary().get("status"), Some("warning_single_trial"));
    }

    #[test]
    fn separable_test_error_and_growth() {
        let model = Model::Linear(LinearModel { d: 5 });
        let cfg = OptimizerConfig::new(OptimizerKind::Ngd, 1.0, 300).with_init(Init::Zero);
        let s = test_error_scaling(&GenSpec::planted(200, 5, 0.2, 0), &model, LossKind::Logistic, &cfg, &[100, 200], 3, 500, 1).unwrap();
        assert!(s.mean_test_err < 0.02, "{}", s.mean_test_err);
        assert!(s.mean_w_slope > 0.0);
        assert!(s.min_w_r_squared >= 0.99);
    }
}
