//! Landscape certificates: the theoretical constants behind geometric
//! convergence of normalized GD and empirical checks of each of them.
//!
//! * `h`: `||grad F|| <= h F`
//! * `H`: `||hess F||_op <= H F`
//! * `mu`: `||grad F|| >= mu F`
//! * `C`: `F` along an update segment is at most `C` times its start value
//! * `rho`: strong growth `E ||grad F_z||^2 <= rho ||grad F||^2`

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{norm, power_iteration, Mat, Rng};
use crate::objective::Objective;
use crate::optim::{RunResult, TraceRecord};
use crate::report::KeyValues;

/// Additive slack on gradient-ratio and path bounds.
pub const RATIO_SLACK: f64 = 1e-9;
/// Relative slack on operator-norm bounds.
pub const OPNORM_SLACK: f64 = 1e-6;

const POWER_TOL: f64 = 1e-7;
const POWER_MAX_ITER: usize = 20_000;

/// Theoretical constants for an objective at step-size constant `eta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    pub h: f64,
    /// `L R^2 / m^2 + l^2 R^2 / m`, as printed.
    pub hessian_printed: f64,
    /// `L R^2 / m + l^2 R^2 / m`, from differentiating `F` directly.
    pub hessian_impl: f64,
    /// `alpha gamma / sqrt(m)`
    pub mu: f64,
    pub c: f64,
    pub rho: f64,
    pub rate_bound: f64,
    pub eta: f64,
}

/// Constants for margin `gamma` and rate `eta`.
pub fn constants(obj: &Objective, gamma: f64, eta: f64) -> Result<Constants> {
    if !(gamma > 0.0) {
        return Err(Error::invalid("gamma", "margin must be positive"));
    }
    let act = obj.model.activation();
    let m = obj.model.width() as f64;
    let r = obj.data().radius();
    let curv = act.curvature_bound();
    let h = obj.grad_bound();
    let mu = act.alpha * gamma / m.sqrt();
    Ok(Constants {
        h,
        hessian_printed: curv * r * r / (m * m) + act.ell * act.ell * r * r / m,
        hessian_impl: obj.hessian_bound(),
        mu,
        c: path_constant(obj, eta),
        rho: h * h * obj.n() as f64 / (mu * mu),
        rate_bound: 1.0 - eta * mu * mu / 2.0,
        eta,
    })
}

/// `exp(R l h eta / sqrt(m) + L R^2 h^2 eta^2 / m)`
pub fn path_constant(obj: &Objective, eta: f64) -> f64 {
    let act = obj.model.activation();
    let m = obj.model.width() as f64;
    let r = obj.data().radius();
    let h = obj.grad_bound();
    let curv = act.curvature_bound();
    (r * act.ell * h * eta / m.sqrt() + curv * r * r * h * h * eta * eta / m).exp()
}

/// Step-size constant `mu^2 / (H C h^2)`, with `C` evaluated at the
/// returned rate.
///
/// Starts from `C = e` and re-evaluates `C` at the candidate rate until the
/// constant used is at least the constant it implies.
pub fn auto_safe_eta(obj: &Objective, gamma: f64) -> Result<f64> {
    let base = constants(obj, gamma, 0.0)?;
    if !obj.model.is_smooth() {
        return Err(Error::NonSmoothModel);
    }
    let h2 = base.h * base.h;
    let mut c = std::f64::consts::E;
    for _ in 0..100 {
        let eta = base.mu * base.mu / (base.hessian_impl * c * h2);
        let implied = path_constant(obj, eta);
        if implied <= c {
            return Ok(eta);
        }
        c = implied;
    }
    Err(Error::invalid("eta", "automatic step size did not settle"))
}

/// Extremes of `||grad F|| / F` over a set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientRatios {
    pub max: f64,
    pub min: f64,
    pub argmax: usize,
    pub argmin: usize,
    pub ratios: Vec<f64>,
}

pub fn check_gradient_ratio(obj: &Objective, points: &[Mat]) -> Result<GradientRatios> {
    if points.is_empty() {
        return Err(Error::invalid("points", "need at least one point"));
    }
    let mut ratios = Vec::with_capacity(points.len());
    for (i, w) in points.iter().enumerate() {
        let e = obj.evaluate(w).map_err(Error::at_point(i))?;
        if e.loss == 0.0 {
            return Err(Error::ZeroLoss(i));
        }
        ratios.push(e.ratio());
    }
    let (mut argmax, mut argmin) = (0, 0);
    for (i, r) in ratios.iter().enumerate() {
        if *r > ratios[argmax] {
            argmax = i;
        }
        if *r < ratios[argmin] {
            argmin = i;
        }
    }
    Ok(GradientRatios {
        max: ratios[argmax],
        min: ratios[argmin],
        argmax,
        argmin,
        ratios,
    })
}

/// `max ||hess F||_op / F` over a set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianRatios {
    pub max: f64,
    pub argmax: usize,
    pub ratios: Vec<f64>,
}

/// `||hess F(w)||_op / F(w)` by power iteration.
pub fn hessian_ratio(obj: &Objective, w: &Mat, rng: &mut Rng) -> Result<f64> {
    let op = obj.hessian_operator(w)?;
    Ok(power_iteration(|v| op.apply(v), op.dim(), POWER_TOL, POWER_MAX_ITER, rng)?.value)
}

pub fn check_hessian_ratio(obj: &Objective, points: &[Mat], rng: &mut Rng) -> Result<HessianRatios> {
    if points.is_empty() {
        return Err(Error::invalid("points", "need at least one point"));
    }
    // one independent stream per point keeps the result independent of scheduling
    let base = rng.next_u64();
    let ratios: Vec<f64> = points
        .par_iter()
        .enumerate()
        .map(|(i, w)| hessian_ratio(obj, w, &mut Rng::new(base, i as u64)).map_err(Error::at_point(i)))
        .collect::<Result<_>>()?;
    let argmax = (0..ratios.len())
        .fold(0, |best, i| if ratios[i] > ratios[best] { i } else { best });
    Ok(HessianRatios {
        max: ratios[argmax],
        argmax,
        ratios,
    })
}

/// Default grid `0, 0.05, ..., 1`.
pub fn default_lambdas() -> Vec<f64> {
    (0..=20).map(|k| k as f64 / 20.0).collect()
}

/// Largest `F(w_t + lambda (w_{t+1} - w_t)) / F(w_t)` along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathRatio {
    pub max: f64,
    pub step: usize,
    pub lambda: f64,
}

/// Scans every consecutive pair of `iterates`.
pub fn check_path_loglipschitz(obj: &Objective, iterates: &[Mat], lambdas: &[f64]) -> Result<PathRatio> {
    if iterates.len() < 2 {
        return Err(Error::invalid("run", "path check needs stored iterates (keep_iterates)"));
    }
    let mut best = PathRatio {
        max: f64::NEG_INFINITY,
        step: 0,
        lambda: 0.0,
    };
    for (t, pair) in iterates.windows(2).enumerate() {
        let base = obj.log_value(&pair[0])?;
        let delta: Vec<f64> = pair[1]
            .as_slice()
            .iter()
            .zip(pair[0].as_slice())
            .map(|(b, a)| b - a)
            .collect();
        for &lambda in lambdas {
            let ratio = if lambda == 0.0 {
                1.0
            } else {
                (obj.log_value(&pair[0].offset(lambda, &delta))? - base).exp()
            };
            if ratio > best.max {
                best = PathRatio {
                    max: ratio,
                    step: t,
                    lambda,
                };
            }
        }
    }
    Ok(best)
}

/// Monte-Carlo estimate of `E ||grad F_z||^2 / ||grad F||^2` over uniform
/// batches of size `batch`.
pub fn check_strong_growth(obj: &Objective, w: &Mat, batch: usize, trials: usize, rng: &mut Rng) -> Result<f64> {
    let n = obj.n();
    if !(1..=n).contains(&batch) {
        return Err(Error::invalid("batch", format!("must lie in [1, {n}]")));
    }
    if trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    let full = obj.evaluate(w)?;
    let full_norm = norm(&full.grad_over_loss);
    if full_norm == 0.0 || full.loss == 0.0 {
        return Err(Error::ZeroGradient);
    }
    let mut total = 0.0;
    for _ in 0..trials {
        let idx = rng.sample_indices(n, batch);
        let e = obj.evaluate_on(w, &idx, batch)?;
        // ||grad F_z|| / ||grad F|| = (F_z / F) ||g_z|| / ||g||
        let r = (e.log_loss - full.log_loss).exp() * norm(&e.grad_over_loss) / full_norm;
        total += r * r;
    }
    Ok(total / trials as f64)
}

/// Outcome of `F_t <= rate^t F_0` over a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateCheck {
    pub pass: bool,
    pub first_violation: Option<f64>,
    /// Largest `log(F_t / F_0) - t log(rate)`; at most `log(1 + slack)` on a pass.
    pub worst_log_excess: f64,
}

/// Checks `(t, log F_t)` pairs against `rate^t F_0` with relative slack.
pub fn check_rate_log(points: &[(f64, f64)], rate_bound: f64, slack: f64) -> RateCheck {
    let Some(&(t0, l0)) = points.first() else {
        return RateCheck {
            pass: true,
            first_violation: None,
            worst_log_excess: 0.0,
        };
    };
    let log_rate = if rate_bound > 0.0 { rate_bound.ln() } else { f64::NEG_INFINITY };
    let allowed = slack.ln_1p();
    let mut worst = f64::NEG_INFINITY;
    let mut first = None;
    for &(t, l) in points {
        let excess = (l - l0) - (t - t0) * log_rate;
        let excess = if excess.is_nan() { f64::INFINITY } else { excess };
        worst = worst.max(excess);
        if excess > allowed && first.is_none() {
            first = Some(t);
        }
    }
    RateCheck {
        pass: first.is_none(),
        first_violation: first,
        worst_log_excess: worst,
    }
}

pub fn check_rate(trace: &[TraceRecord], rate_bound: f64, slack: f64) -> RateCheck {
    let pts: Vec<(f64, f64)> = trace.iter().map(|r| (r.t, r.log_loss)).collect();
    check_rate_log(&pts, rate_bound, slack)
}

/// `per_radius` Gaussian parameter matrices rescaled to each Frobenius radius.
pub fn sample_points(obj: &Objective, radii: &[f64], per_radius: usize, rng: &mut Rng) -> Vec<Mat> {
    let (r, c) = obj.param_shape();
    let mut out = Vec::with_capacity(radii.len() * per_radius);
    for &radius in radii {
        for _ in 0..per_radius {
            let mut v = rng.unit_vector(r * c);
            v.iter_mut().for_each(|x| *x *= radius);
            out.push(Mat::from_vec(r, c, v).expect("shape"));
        }
    }
    out
}

/// Radii of the off-trajectory probe points.
pub const PROBE_RADII: [f64; 3] = [0.1, 1.0, 10.0];

/// Full certificate of a normalized-GD run.
#[derive(Debug, Clone, PartialEq)]
pub struct CertReport {
    pub constants: Constants,
    pub mu_network: f64,
    pub rho_hat: f64,
    pub grad_max: f64,
    pub grad_min: f64,
    /// `NaN` when the model is not smooth.
    pub hessian_max: f64,
    pub path_max: f64,
    pub rate_worst_log_excess: f64,
    pub points: usize,
    pub trajectory_points: usize,
    pub growth_trials: usize,
}

impl CertReport {
    pub fn grad_lower_ok(&self) -> bool {
        self.grad_min >= self.constants.mu - RATIO_SLACK
    }

    pub fn grad_upper_ok(&self) -> bool {
        self.grad_max <= self.constants.h + RATIO_SLACK
    }

    pub fn hessian_ok(&self) -> bool {
        self.hessian_max <= self.constants.hessian_impl * (1.0 + OPNORM_SLACK)
    }

    /// Against the printed `H`; reported, not required.
    pub fn hessian_printed_ok(&self) -> bool {
        self.hessian_max <= self.constants.hessian_printed * (1.0 + OPNORM_SLACK)
    }

    pub fn path_ok(&self) -> bool {
        self.path_max <= self.constants.c + RATIO_SLACK
    }

    pub fn growth_ok(&self) -> bool {
        self.rho_hat <= self.constants.rho
    }

    pub fn rate_ok(&self) -> bool {
        self.rate_worst_log_excess <= 1e-12f64.ln_1p()
    }

    pub fn all_ok(&self) -> bool {
        self.grad_lower_ok()
            && self.grad_upper_ok()
            && self.hessian_ok()
            && self.path_ok()
            && self.growth_ok()
            && self.rate_ok()
    }

    pub fn to_kv(&self) -> KeyValues {
        let c = &self.constants;
        let mut kv = KeyValues::new();
        kv.push("eta", c.eta)
            .push("h_theory", c.h)
            .push("H_theory_paper", c.hessian_printed)
            .push("H_theory_impl", c.hessian_impl)
            .push("mu_linear", c.mu)
            .push("mu_network", self.mu_network)
            .push("C_theory", c.c)
            .push("rho_theory", c.rho)
            .push("rho_hat", self.rho_hat)
            .push("rate_bound", c.rate_bound)
            .push("ratio_grad_max", self.grad_max)
            .push("ratio_grad_min", self.grad_min)
            .push("ratio_hessian_max", self.hessian_max)
            .push("ratio_path_max", self.path_max)
            .push("rate_worst_log_excess", self.rate_worst_log_excess)
            .push("points", self.points)
            .push("trajectory_points", self.trajectory_points)
            .push("growth_trials", self.growth_trials)
            .push("pass_grad_lower", self.grad_lower_ok())
            .push("pass_grad_upper", self.grad_upper_ok())
            .push("pass_hessian", self.hessian_ok())
            .push("pass_hessian_printed", self.hessian_printed_ok())
            .push("pass_path", self.path_ok())
            .push("pass_growth", self.growth_ok())
            .push("pass_rate", self.rate_ok())
            .push("pass", self.all_ok());
        kv
    }

    /// Reads the numeric fields back; pass flags are recomputed and must
    /// agree with the stored ones.
    pub fn from_kv(kv: &KeyValues) -> Result<CertReport> {
        let report = CertReport {
            constants: Constants {
                h: kv.f64("h_theory")?,
                hessian_printed: kv.f64("H_theory_paper")?,
                hessian_impl: kv.f64("H_theory_impl")?,
                mu: kv.f64("mu_linear")?,
                c: kv.f64("C_theory")?,
                rho: kv.f64("rho_theory")?,
                rate_bound: kv.f64("rate_bound")?,
                eta: kv.f64("eta")?,
            },
            mu_network: kv.f64("mu_network")?,
            rho_hat: kv.f64("rho_hat")?,
            grad_max: kv.f64("ratio_grad_max")?,
            grad_min: kv.f64("ratio_grad_min")?,
            hessian_max: kv.f64("ratio_hessian_max")?,
            path_max: kv.f64("ratio_path_max")?,
            rate_worst_log_excess: kv.f64("rate_worst_log_excess")?,
            points: kv.usize("points")?,
            trajectory_points: kv.usize("trajectory_points")?,
            growth_trials: kv.usize("growth_trials")?,
        };
        let recomputed = report.to_kv();
        for (k, v) in recomputed.entries().iter().filter(|(k, _)| k.starts_with("pass")) {
            if kv.get(k) != Some(v.as_str()) {
                return Err(Error::invalid(k.as_str(), "stored flag disagrees with stored numbers"));
            }
        }
        Ok(report)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_kv().write(path)
    }
}

/// Per-point ratios, one CSV row per probe point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointRatio {
    pub index: usize,
    pub origin: &'static str,
    pub w_norm: f64,
    pub grad_ratio: f64,
    pub hessian_ratio: f64,
}

pub fn point_ratios_csv(rows: &[PointRatio]) -> String {
    let mut out = String::from("index,origin,w_norm,grad_ratio,hessian_ratio\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.index, r.origin, r.w_norm, r.grad_ratio, r.hessian_ratio
        );
    }
    out
}

/// Settings for [`certify_run`].
#[derive(Debug, Clone, PartialEq)]
pub struct CertifyOptions {
    pub gamma: f64,
    pub per_radius: usize,
    pub growth_batch: usize,
    pub growth_trials: usize,
    pub lambdas: Vec<f64>,
    pub seed: u64,
}

impl CertifyOptions {
    pub fn new(gamma: f64) -> Self {
        CertifyOptions {
            gamma,
            per_radius: 50,
            growth_batch: 1,
            growth_trials: 2000,
            lambdas: default_lambdas(),
            seed: 0,
        }
    }
}

/// Runs every check on a normalized-GD run with stored iterates and on
/// `per_radius` random points at each of [`PROBE_RADII`].
pub fn certify_run(obj: &Objective, run: &RunResult, opts: &CertifyOptions) -> Result<(CertReport, Vec<PointRatio>)> {
    let constants = constants(obj, opts.gamma, run.config.eta)?;
    let mut rng = Rng::new(opts.seed, 0xce57);
    let probes = sample_points(obj, &PROBE_RADII, opts.per_radius, &mut rng);
    let mut points: Vec<(&'static str, Mat)> = probes.into_iter().map(|w| ("random", w)).collect();
    let trajectory: Vec<Mat> = if run.iterates.is_empty() {
        vec![run.w.clone()]
    } else {
        run.iterates.clone()
    };
    let trajectory_points = trajectory.len();
    points.extend(trajectory.into_iter().map(|w| ("trajectory", w)));
    let mats: Vec<Mat> = points.iter().map(|(_, w)| w.clone()).collect();

    let grads = check_gradient_ratio(obj, &mats)?;
    let hess = if obj.model.is_smooth() {
        Some(check_hessian_ratio(obj, &mats, &mut rng)?)
    } else {
        None
    };
    let path_max = if run.iterates.len() >= 2 {
        check_path_loglipschitz(obj, &run.iterates, &opts.lambdas)?.max
    } else {
        1.0
    };
    let rho_hat = check_strong_growth(obj, &run.w, opts.growth_batch, opts.growth_trials, &mut rng)?;
    let rate = check_rate(&run.trace, constants.rate_bound, 0.0);
    let mu_network = obj.network_margin(&run.w).unwrap_or(f64::NAN);

    let rows = points
        .iter()
        .enumerate()
        .map(|(i, (origin, w))| PointRatio {
            index: i,
            origin,
            w_norm: w.frobenius(),
            grad_ratio: grads.ratios[i],
            hessian_ratio: hess.as_ref().map_or(f64::NAN, |h| h.ratios[i]),
        })
        .collect();
    let report = CertReport {
        constants,
        mu_network,
        rho_hat,
        grad_max: grads.max,
        grad_min: grads.min,
        hessian_max: hess.map_or(f64::NAN, |h| h.max),
        path_max,
        rate_worst_log_excess: rate.worst_log_excess,
        points: mats.len(),
        trajectory_points,
        growth_trials: opts.growth_trials,
    };
    Ok((report, rows))
}
