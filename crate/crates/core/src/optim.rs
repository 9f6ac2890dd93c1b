//! Training loops: fixed-step gradient descent, normalized gradient descent
//! `w <- w - (eta / F(w)) grad F(w)`, its minibatch variant, and the
//! normalized gradient flow `dw/dt = -grad F / F` integrated with RK4.
//!
//! Every run emits one [`TraceRecord`] per logged step.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{axpy, Mat, Rng};
use crate::objective::Objective;

/// Loss above which a run is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Maximum number of dt halvings per flow step.
pub const MAX_HALVINGS: usize = 20;

/// Wall clock for the trace; reads zero where the platform has none.
#[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
struct Clock(std::time::Instant);

#[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
impl Clock {
    fn start() -> Self {
        Clock(std::time::Instant::now())
    }

    fn elapsed_ns(&self) -> u64 {
        self.0.elapsed().as_nanos() as u64
    }
}

#[cfg(all(target_arch = "wasm32", target_os = "unknown"))]
struct Clock;

#[cfg(all(target_arch = "wasm32", target_os = "unknown"))]
impl Clock {
    fn start() -> Self {
        Clock
    }

    fn elapsed_ns(&self) -> u64 {
        0
    }
}

pub const TRACE_HEADER: &str = "t,F,grad_norm,w_norm,train_err,test_err,eta_t,wall_ns";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Gd,
    Ngd,
    Sngd,
    Flow,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Gd => "gd",
            OptimizerKind::Ngd => "ngd",
            OptimizerKind::Sngd => "sngd",
            OptimizerKind::Flow => "flow",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gd" => Ok(OptimizerKind::Gd),
            "ngd" => Ok(OptimizerKind::Ngd),
            "sngd" => Ok(OptimizerKind::Sngd),
            "flow" => Ok(OptimizerKind::Flow),
            _ => Err(Error::invalid("kind", format!("unknown optimizer `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Zero,
    /// Standard Gaussian rows, each scaled to unit norm.
    GaussianRowNormalized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaPolicy {
    Fixed,
    /// Largest rate allowed by the geometric-decay certificate for a data
    /// margin `gamma`; replaces `eta` before the run.
    AutoSafe { gamma: f64 },
}

/// Loss used in the SNGD step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaEstimate {
    FullBatch,
    /// Exponential moving average of minibatch losses with the given decay.
    /// Not part of the analysed algorithm.
    Running { decay: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// Literal step for gd, rate constant in `eta / F` for ngd and sngd.
    pub eta: f64,
    /// Number of updates (flow: number of `dt` steps).
    pub steps: usize,
    pub batch: usize,
    pub dt: f64,
    pub seed: u64,
    pub init: Init,
    pub eta_policy: EtaPolicy,
    pub eta_estimate: EtaEstimate,
    pub log_every: usize,
    pub keep_iterates: bool,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, eta: f64, steps: usize) -> Self {
        OptimizerConfig {
            kind,
            eta,
            steps,
            batch: 1,
            dt: 1e-3,
            seed: 0,
            init: Init::GaussianRowNormalized,
            eta_policy: EtaPolicy::Fixed,
            eta_estimate: EtaEstimate::FullBatch,
            log_every: 1,
            keep_iterates: false,
        }
    }

    /// Flow configuration covering the time horizon `horizon` in steps of `dt`.
    pub fn flow(horizon: f64, dt: f64) -> Self {
        OptimizerConfig {
            dt,
            ..OptimizerConfig::new(OptimizerKind::Flow, 1.0, (horizon / dt).round() as usize)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch;
        self
    }

    pub fn auto_safe(mut self, gamma: f64) -> Self {
        self.eta_policy = EtaPolicy::AutoSafe { gamma };
        self
    }

    pub fn keeping_iterates(mut self) -> Self {
        self.keep_iterates = true;
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let eta_ok = match self.kind {
            // a zero step is a valid (if idle) gradient descent run
            OptimizerKind::Gd => self.eta >= 0.0 && self.eta.is_finite(),
            _ => self.eta > 0.0 && self.eta.is_finite(),
        };
        if !eta_ok && matches!(self.eta_policy, EtaPolicy::Fixed) {
            return Err(Error::invalid("eta", "must be positive and finite"));
        }
        if let EtaPolicy::AutoSafe { gamma } = self.eta_policy {
            if self.kind == OptimizerKind::Gd || self.kind == OptimizerKind::Flow {
                return Err(Error::invalid("eta", "auto step size applies to ngd and sngd only"));
            }
            if !(gamma > 0.0) {
                return Err(Error::invalid("gamma", "auto step size needs a positive margin"));
            }
        }
        if self.kind == OptimizerKind::Sngd && !(1..=n).contains(&self.batch) {
            return Err(Error::invalid("batch", format!("must lie in [1, {n}]")));
        }
        if self.kind == OptimizerKind::Flow && !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt", "must be positive"));
        }
        if let EtaEstimate::Running { decay } = self.eta_estimate {
            if !(0.0..1.0).contains(&decay) {
                return Err(Error::invalid("eta-est", "decay must lie in [0, 1)"));
            }
        }
        if self.log_every == 0 {
            return Err(Error::invalid("log-every", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// Iteration index, or elapsed time for the flow.
    pub t: f64,
    pub loss: f64,
    pub log_loss: f64,
    pub grad_norm: f64,
    pub w_norm: f64,
    pub train_err: f64,
    pub test_err: Option<f64>,
    pub eta_t: f64,
    pub wall_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunStatus {
    Completed,
    /// The loss reached exactly zero.
    Converged { step: usize },
    /// The loss exceeded [`DIVERGENCE_THRESHOLD`] or overflowed.
    Diverged { step: usize },
}

impl RunStatus {
    pub fn name(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Converged { .. } => "converged",
            RunStatus::Diverged { .. } => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub w: Mat,
    pub trace: Vec<TraceRecord>,
    /// The configuration as run, with any automatic step size filled in.
    pub config: OptimizerConfig,
    pub fingerprint: String,
    pub status: RunStatus,
    /// Step size applied at every update (`eta_t` for each `t < steps`).
    pub step_sizes: Vec<f64>,
    /// `w_0, ..., w_T` when `keep_iterates` is set.
    pub iterates: Vec<Mat>,
}

impl RunResult {
    pub fn losses(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.loss).collect()
    }

    pub fn trace_csv(&self) -> String {
        trace_csv(&self.trace)
    }

    pub fn write_trace(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.trace_csv()).map_err(|e| Error::io(path, e))
    }
}

pub fn trace_csv(trace: &[TraceRecord]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in trace {
        let test = r.test_err.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.t, r.loss, r.grad_norm, r.w_norm, r.train_err, test, r.eta_t, r.wall_ns
        );
    }
    out
}

/// Parses a trace written by [`trace_csv`]. `log_loss` is recomputed from `F`.
pub fn parse_trace(text: &str, origin: &str) -> Result<Vec<TraceRecord>> {
    let perr = |line: usize, reason: String| Error::Parse {
        path: origin.to_string(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRACE_HEADER => {}
        _ => return Err(perr(1, format!("header must be `{TRACE_HEADER}`"))),
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(perr(lineno, format!("expected 8 fields, found {}", f.len())));
        }
        let num = |k: usize| -> Result<f64> {
            f[k].trim()
                .parse()
                .map_err(|_| perr(lineno, format!("`{}` is not a number", f[k])))
        };
        let loss = num(1)?;
        out.push(TraceRecord {
            t: num(0)?,
            loss,
            log_loss: loss.ln(),
            grad_norm: num(2)?,
            w_norm: num(3)?,
            train_err: num(4)?,
            test_err: if f[5].trim().is_empty() { None } else { Some(num(5)?) },
            eta_t: num(6)?,
            wall_ns: f[7]
                .trim()
                .parse()
                .map_err(|_| perr(lineno, format!("`{}` is not an integer", f[7])))?,
        });
    }
    Ok(out)
}

/// Starting point drawn from `Rng(seed, 0)`.
pub fn initial_weights(obj: &Objective, init: Init, seed: u64) -> Mat {
    let (rows, cols) = obj.param_shape();
    match init {
        Init::Zero => Mat::zeros(rows, cols),
        Init::GaussianRowNormalized => {
            let mut rng = Rng::new(seed, 0);
            let mut w = Mat::zeros(rows, cols);
            for j in 0..rows {
                w.row_mut(j).copy_from_slice(&rng.unit_vector(cols));
            }
            w
        }
    }
}

/// Runs `cfg` from its configured initialisation.
pub fn run(obj: &Objective, cfg: &OptimizerConfig, heldout: Option<&Dataset>) -> Result<RunResult> {
    let w0 = initial_weights(obj, cfg.init, cfg.seed);
    run_from(obj, cfg, w0, heldout)
}

pub fn run_gd(obj: &Objective, cfg: &OptimizerConfig) -> Result<RunResult> {
    expect_kind(cfg, OptimizerKind::Gd)?;
    run(obj, cfg, None)
}

pub fn run_ngd(obj: &Objective, cfg: &OptimizerConfig) -> Result<RunResult> {
    expect_kind(cfg, OptimizerKind::Ngd)?;
    run(obj, cfg, None)
}

pub fn run_sngd(obj: &Objective, cfg: &OptimizerConfig) -> Result<RunResult> {
    expect_kind(cfg, OptimizerKind::Sngd)?;
    run(obj, cfg, None)
}

pub fn run_flow(obj: &Objective, cfg: &OptimizerConfig) -> Result<RunResult> {
    expect_kind(cfg, OptimizerKind::Flow)?;
    run(obj, cfg, None)
}

fn expect_kind(cfg: &OptimizerConfig, kind: OptimizerKind) -> Result<()> {
    if cfg.kind != kind {
        return Err(Error::invalid(
            "kind",
            format!("expected {}, got {}", kind.name(), cfg.kind.name()),
        ));
    }
    Ok(())
}

struct Recorder<'a> {
    obj: &'a Objective,
    test: Option<Objective>,
    start: Clock,
    log_every: usize,
    trace: Vec<TraceRecord>,
    iterates: Option<Vec<Mat>>,
}

impl Recorder<'_> {
    fn record(&mut self, step: usize, t: f64, w: &Mat, log_loss: f64, grad_norm: f64, eta_t: f64, force: bool) -> Result<()> {
        if let Some(its) = self.iterates.as_mut() {
            its.push(w.clone());
        }
        if !step.is_multiple_of(self.log_every) && !force {
            return Ok(());
        }
        let test_err = match &self.test {
            Some(t) => Some(t.train_error(w)?),
            None => None,
        };
        self.trace.push(TraceRecord {
            t,
            loss: log_loss.exp(),
            log_loss,
            grad_norm,
            w_norm: w.frobenius(),
            train_err: self.obj.train_error(w)?,
            test_err,
            eta_t,
            wall_ns: self.start.elapsed_ns(),
        });
        Ok(())
    }
}

/// Runs `cfg` from an explicit starting point.
pub fn run_from(obj: &Objective, cfg: &OptimizerConfig, w0: Mat, heldout: Option<&Dataset>) -> Result<RunResult> {
    cfg.validate(obj.n())?;
    if w0.shape() != obj.param_shape() {
        return Err(Error::Dimension {
            what: "initial weights",
            expected: obj.model.param_len(),
            got: w0.rows() * w0.cols(),
        });
    }
    let mut config = cfg.clone();
    if let EtaPolicy::AutoSafe { gamma } = cfg.eta_policy {
        config.eta = crate::certify::auto_safe_eta(obj, gamma)?;
    }
    if cfg.kind == OptimizerKind::Flow && !obj.model.is_smooth() {
        return Err(Error::NonSmoothModel);
    }
    let test = match heldout {
        Some(d) => Some(obj.rebind(d.clone())?),
        None => None,
    };
    let mut rec = Recorder {
        obj,
        test,
        start: Clock::start(),
        log_every: cfg.log_every,
        trace: Vec::with_capacity(cfg.steps / cfg.log_every + 2),
        iterates: cfg.keep_iterates.then(Vec::new),
    };
    let (w, status, step_sizes) = match cfg.kind {
        OptimizerKind::Flow => integrate_flow(obj, &config, w0, &mut rec)?,
        _ => descend(obj, &config, w0, &mut rec)?,
    };
    Ok(RunResult {
        w,
        trace: rec.trace,
        config,
        fingerprint: obj.data().fingerprint(),
        status,
        step_sizes,
        iterates: rec.iterates.unwrap_or_default(),
    })
}

type Outcome = (Mat, RunStatus, Vec<f64>);

fn descend(obj: &Objective, cfg: &OptimizerConfig, mut w: Mat, rec: &mut Recorder) -> Result<Outcome> {
    let n = obj.n();
    let all: Vec<usize> = (0..n).collect();
    let mut batches = Rng::new(cfg.seed, 1);
    let mut running: Option<f64> = None;
    let mut steps = Vec::with_capacity(cfg.steps);
    let mut t = 0;
    loop {
        let eval = match obj.evaluate(&w) {
            Ok(e) => e,
            Err(Error::Overflow(_)) => return Ok((w, RunStatus::Diverged { step: t }, steps)),
            Err(e) => return Err(e),
        };
        let loss = eval.loss;
        let eta_t = match cfg.kind {
            OptimizerKind::Gd => cfg.eta,
            _ => cfg.eta / loss,
        };
        let last = t == cfg.steps;
        let stop = if loss > DIVERGENCE_THRESHOLD {
            Some(RunStatus::Diverged { step: t })
        } else if loss == 0.0 && cfg.kind != OptimizerKind::Gd {
            Some(RunStatus::Converged { step: t })
        } else {
            None
        };
        rec.record(t, t as f64, &w, eval.log_loss, eval.grad_norm(), eta_t, last || stop.is_some())?;
        if let Some(status) = stop {
            return Ok((w, status, steps));
        }
        if last {
            return Ok((w, RunStatus::Completed, steps));
        }
        match cfg.kind {
            OptimizerKind::Gd => axpy(-cfg.eta * loss, &eval.grad_over_loss, w.as_mut_slice()),
            OptimizerKind::Ngd => axpy(-cfg.eta, &eval.grad_over_loss, w.as_mut_slice()),
            OptimizerKind::Sngd => {
                let idx = batches.sample_indices(n, cfg.batch);
                let batch = if idx == all { eval.clone() } else { obj.evaluate_on(&w, &idx, cfg.batch)? };
                let denom_log = match cfg.eta_estimate {
                    EtaEstimate::FullBatch => eval.log_loss,
                    EtaEstimate::Running { decay } => {
                        let avg = match running {
                            None => batch.loss,
                            Some(prev) => decay * prev + (1.0 - decay) * batch.loss,
                        };
                        running = Some(avg);
                        avg.ln()
                    }
                };
                // eta_t grad F_z = eta (F_z / F) (grad F_z / F_z)
                let factor = (batch.log_loss - denom_log).exp();
                axpy(-cfg.eta * factor, &batch.grad_over_loss, w.as_mut_slice());
            }
            OptimizerKind::Flow => unreachable!("flow is integrated separately"),
        }
        steps.push(eta_t);
        t += 1;
    }
}

/// `-grad F / F` at `w`.
fn flow_field(obj: &Objective, w: &Mat) -> Result<Vec<f64>> {
    let e = obj.evaluate(w)?;
    Ok(e.grad_over_loss.into_iter().map(|g| -g).collect())
}

fn rk4_step(obj: &Objective, w: &Mat, dt: f64) -> Result<Mat> {
    let k1 = flow_field(obj, w)?;
    let k2 = flow_field(obj, &w.offset(dt / 2.0, &k1))?;
    let k3 = flow_field(obj, &w.offset(dt / 2.0, &k2))?;
    let k4 = flow_field(obj, &w.offset(dt, &k3))?;
    let mut incr = k1;
    for (((a, b), c), d) in incr.iter_mut().zip(&k2).zip(&k3).zip(&k4) {
        *a = (*a + 2.0 * b + 2.0 * c + d) / 6.0;
    }
    Ok(w.offset(dt, &incr))
}

/// Advances by `dt`, splitting the step in halves whenever the loss would
/// rise by more than 1%.
fn flow_advance(obj: &Objective, w: &Mat, dt: f64, depth: usize) -> Result<Mat> {
    let next = rk4_step(obj, w, dt)?;
    let before = obj.log_value(w)?;
    let after = obj.log_value(&next)?;
    if after - before <= 1.01f64.ln() {
        return Ok(next);
    }
    if depth >= MAX_HALVINGS {
        return Err(Error::StepRejected(depth));
    }
    let mid = flow_advance(obj, w, dt / 2.0, depth + 1)?;
    flow_advance(obj, &mid, dt / 2.0, depth + 1)
}

fn integrate_flow(obj: &Objective, cfg: &OptimizerConfig, mut w: Mat, rec: &mut Recorder) -> Result<Outcome> {
    let mut steps = Vec::with_capacity(cfg.steps);
    for t in 0..=cfg.steps {
        let eval = obj.evaluate(&w)?;
        let eta_t = cfg.dt / eval.loss;
        let last = t == cfg.steps;
        let converged = eval.loss == 0.0;
        rec.record(t, t as f64 * cfg.dt, &w, eval.log_loss, eval.grad_norm(), eta_t, last || converged)?;
        if converged {
            return Ok((w, RunStatus::Converged { step: t }, steps));
        }
        if last {
            break;
        }
        w = flow_advance(obj, &w, cfg.dt, 0)?;
        steps.push(eta_t);
    }
    Ok((w, RunStatus::Completed, steps))
}

/// `||w_T||` growth: least-squares slope and `R^2` over the second half
/// of the trace.
pub fn weight_growth(trace: &[TraceRecord]) -> crate::numerics::LineFit {
    let half = &trace[trace.len() / 2..];
    let t: Vec<f64> = half.iter().map(|r| r.t).collect();
    let w: Vec<f64> = half.iter().map(|r| r.w_norm).collect();
    crate::numerics::fit_line(&t, &w)
}

/// First logged `t` with `F <= target`.
pub fn first_below(trace: &[TraceRecord], target: f64) -> Option<f64> {
    trace.iter().find(|r| r.loss <= target).map(|r| r.t)
}

/// Median of `F` across runs, record by record.
pub fn median_losses(runs: &[RunResult]) -> Vec<f64> {
    let len = runs.iter().map(|r| r.trace.len()).min().unwrap_or(0);
    (0..len)
        .map(|k| {
            let mut v: Vec<f64> = runs.iter().map(|r| r.trace[k].loss).collect();
            v.sort_by(f64::total_cmp);
            let mid = v.len() / 2;
            if v.len() % 2 == 1 {
                v[mid]
            } else {
                0.5 * (v[mid - 1] + v[mid])
            }
        })
        .collect()
}

/// Runs `cfg` from `w0` for each of several seeds in parallel; results in
/// seed order.
pub fn run_seeds(obj: &Objective, cfg: &OptimizerConfig, w0: &Mat, seeds: &[u64]) -> Result<Vec<RunResult>> {
    seeds
        .par_iter()
        .map(|&s| {
            let mut c = cfg.clone();
            c.seed = s;
            run_from(obj, &c, w0.clone(), None)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, GenSpec};
    use crate::model::{Activation, LinearModel, Model, SecondLayer, TwoLayerNet};
    use crate::objective::LossKind;

    fn scalar(xs: &[f64], ys: &[f64]) -> Objective {
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let data = Dataset::new(Mat::from_rows(&rows).unwrap(), ys.to_vec()).unwrap();
        Objective::new(LossKind::Exponential, Model::Linear(LinearModel { d: 1 }), data).unwrap()
    }

    fn planted(n: usize, seed: u64) -> Objective {
        let data = generate(&GenSpec::planted(n, 5, 0.1, seed)).unwrap();
        let act = Activation::smoothed(0.2, 1.0, 4.0).unwrap();
        let net = TwoLayerNet::new(act, 8, 5, SecondLayer::Random { seed }).unwrap();
        Objective::new(LossKind::Exponential, Model::TwoLayer(net), data).unwrap()
    }

    #[test]
    fn gd_zero_step_is_idle() {
        let obj = planted(20, 1);
        let res = run(&obj, &OptimizerConfig::new(OptimizerKind::Gd, 0.0, 5), None).unwrap();
        assert_eq!(res.trace.len(), 6);
        assert_eq!(res.w, initial_weights(&obj, Init::GaussianRowNormalized, 0));
        assert!(res.trace.iter().all(|r| r.loss == res.trace[0].loss));
    }

    #[test]
    fn gd_scalar_recursion() {
        let obj = scalar(&[1.0], &[1.0]);
        let cfg = OptimizerConfig::new(OptimizerKind::Gd, 1.0, 2)
            .with_init(Init::Zero)
            .keeping_iterates();
        let res = run(&obj, &cfg, None).unwrap();
        assert_eq!(res.iterates[1].as_slice(), &[1.0]);
        assert!((res.iterates[2].get(0, 0) - (1.0 + (-1.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn ngd_scalar_recursion_is_linear() {
        let obj = scalar(&[1.0], &[1.0]);
        let cfg = OptimizerConfig::new(OptimizerKind::Ngd, 0.5, 40).with_init(Init::Zero);
        let res = run(&obj, &cfg, None).unwrap();
        assert_eq!(res.w.get(0, 0), 20.0);
        let last = res.trace.last().unwrap();
        assert_eq!(last.log_loss, -20.0);
        for r in &res.trace {
            assert_eq!(r.w_norm, 0.5 * r.t);
        }
    }

    #[test]
    fn ngd_step_column_is_eta_over_loss() {
        let obj = planted(30, 2);
        let res = run(&obj, &OptimizerConfig::new(OptimizerKind::Ngd, 0.7, 50), None).unwrap();
        for r in &res.trace {
            assert!(((r.eta_t - 0.7 / r.loss) / r.eta_t).abs() <= 1e-15);
        }
        assert_eq!(res.step_sizes.len(), 50);
    }

    #[test]
    fn auto_safe_ngd_descends_strictly() {
        for seed in 0..4 {
            let obj = planted(30, seed);
            let cfg = OptimizerConfig::new(OptimizerKind::Ngd, 1.0, 100).auto_safe(0.1);
            let res = run(&obj, &cfg, None).unwrap();
            assert!(res.config.eta > 0.0 && res.config.eta != 1.0);
            for w in res.trace.windows(2) {
                assert!(w[1].loss < w[0].loss, "seed {seed} t {}", w[1].t);
            }
        }
    }

    #[test]
    fn ngd_weight_norm_grows_linearly() {
        let obj = planted(30, 3);
        let res = run(&obj, &OptimizerConfig::new(OptimizerKind::Ngd, 5.0, 400), None).unwrap();
        let fit = weight_growth(&res.trace);
        assert!(fit.slope > 0.0);
        assert!(fit.r_squared >= 0.99, "{fit:?}");
    }

    #[test]
    fn sngd_full_batch_matches_ngd_bitwise() {
        let obj = planted(25, 4);
        let ngd = run(&obj, &OptimizerConfig::new(OptimizerKind::Ngd, 2.0, 60), None).unwrap();
        let sngd = run(
            &obj,
            &OptimizerConfig::new(OptimizerKind::Sngd, 2.0, 60).with_batch(25),
            None,
        )
        .unwrap();
        assert_eq!(ngd.w, sngd.w);
        assert_eq!(ngd.losses(), sngd.losses());
    }

    #[test]
    fn sngd_single_sample_matches_ngd() {
        let obj = scalar(&[0.8], &[-1.0]);
        let ngd = run(&obj, &OptimizerConfig::new(OptimizerKind::Ngd, 0.3, 10), None).unwrap();
        let sngd = run(&obj, &OptimizerConfig::new(OptimizerKind::Sngd, 0.3, 10), None).unwrap();
        assert_eq!(ngd.w, sngd.w);
    }

    #[test]
    fn sngd_is_reproducible_and_seed_dependent() {
        let obj = planted(40, 5);
        let cfg = OptimizerConfig::new(OptimizerKind::Sngd, 1.0, 30).with_batch(4);
        let a = run(&obj, &cfg, None).unwrap();
        let b = run(&obj, &cfg, None).unwrap();
        assert_eq!(a.w, b.w);
        let w0 = initial_weights(&obj, cfg.init, cfg.seed);
        let c = run_from(&obj, &cfg.clone().with_seed(9), w0, None).unwrap();
        assert_ne!(a.w, c.w);
    }

    #[test]
    fn flow_matches_scalar_solution() {
        let obj = scalar(&[1.0], &[1.0]);
        let cfg = OptimizerConfig::flow(5.0, 1e-3).with_init(Init::Zero);
        let res = run(&obj, &cfg, None).unwrap();
        assert_eq!(res.trace.len(), 5001);
        assert!((res.w.get(0, 0) - 5.0).abs() < 1e-8);
        assert!((res.trace.last().unwrap().loss - (-5.0f64).exp()).abs() < 1e-8);
        assert!((res.trace.last().unwrap().t - 5.0).abs() < 1e-9);
    }

    #[test]
    fn flow_rejects_kinked_activation() {
        let data = generate(&GenSpec::planted(10, 3, 0.1, 0)).unwrap();
        let net = TwoLayerNet::new(Activation::leaky_relu(0.1, 1.0).unwrap(), 4, 3, SecondLayer::Alternating).unwrap();
        let obj = Objective::new(LossKind::Exponential, Model::TwoLayer(net), data).unwrap();
        assert_eq!(run(&obj, &OptimizerConfig::flow(1.0, 0.1), None), Err(Error::NonSmoothModel));
    }

    #[test]
    fn gd_divergence_is_recorded() {
        let obj = scalar(&[1.0, 1.0], &[1.0, -1.0]);
        let cfg = OptimizerConfig::new(OptimizerKind::Gd, 50.0, 100).with_init(Init::Zero);
        let w0 = Mat::from_vec(1, 1, vec![0.5]).unwrap();
        let res = run_from(&obj, &cfg, w0, None).unwrap();
        assert!(matches!(res.status, RunStatus::Diverged { .. }), "{:?}", res.status);
        assert!(res.trace.len() < 101);
    }

    #[test]
    fn ngd_stops_when_loss_underflows() {
        let obj = scalar(&[1.0], &[1.0]);
        let cfg = OptimizerConfig::new(OptimizerKind::Ngd, 100.0, 50).with_init(Init::Zero);
        let res = run(&obj, &cfg, None).unwrap();
        assert!(matches!(res.status, RunStatus::Converged { .. }));
        assert_eq!(res.trace.last().unwrap().loss, 0.0);
    }

    #[test]
    fn trace_csv_round_trips() {
        let obj = planted(20, 6);
        let heldout = generate(&GenSpec::planted(15, 5, 0.1, 99)).unwrap();
        let cfg = OptimizerConfig::new(OptimizerKind::Ngd, 1.0, 12);
        let res = run(&obj, &cfg, Some(&heldout)).unwrap();
        let text = res.trace_csv();
        assert!(text.starts_with(TRACE_HEADER));
        let back = parse_trace(&text, "mem").unwrap();
        assert_eq!(back.len(), 13);
        for (a, b) in back.iter().zip(&res.trace) {
            assert_eq!((a.t, a.loss, a.grad_norm, a.w_norm), (b.t, b.loss, b.grad_norm, b.w_norm));
            assert_eq!(a.test_err, b.test_err);
            assert!(a.test_err.is_some());
        }
    }

    #[test]
    fn log_every_thins_trace_but_keeps_last() {
        let obj = planted(20, 7);
        let mut cfg = OptimizerConfig::new(OptimizerKind::Ngd, 1.0, 10);
        cfg.log_every = 4;
        let res = run(&obj, &cfg, None).unwrap();
        let ts: Vec<f64> = res.trace.iter().map(|r| r.t).collect();
        assert_eq!(ts, vec![0.0, 4.0, 8.0, 10.0]);
    }

    #[test]
    fn config_validation() {
        let obj = planted(10, 8);
        let bad = [
            OptimizerConfig::new(OptimizerKind::Ngd, 0.0, 5),
            OptimizerConfig::new(OptimizerKind::Sngd, 1.0, 5).with_batch(11),
            OptimizerConfig::new(OptimizerKind::Sngd, 1.0, 5).with_batch(0),
            OptimizerConfig::flow(1.0, 0.0),
            OptimizerConfig::new(OptimizerKind::Gd, 1.0, 5).auto_safe(0.1),
        ];
        for cfg in bad {
            assert!(matches!(run(&obj, &cfg, None), Err(Error::Invalid { .. })), "{cfg:?}");
        }
        assert!(run_ngd(&obj, &OptimizerConfig::new(OptimizerKind::Gd, 1.0, 1)).is_err());
    }

    #[test]
    fn inputs_are_left_untouched() {
        let obj = planted(20, 9);
        let before = obj.clone();
        let cfg = OptimizerConfig::new(OptimizerKind::Sngd, 1.0, 10).with_batch(3);
        let copy = cfg.clone();
        run(&obj, &cfg, None).unwrap();
        assert_eq!(obj, before);
        assert_eq!(cfg, copy);
    }
}
