//! The `ngdlab` command line.
//!
//! Every flag `--name value` mirrors a config-file key `name=value`. A
//! `--config` file is read first and explicit flags override it; the
//! merged configuration is validated before any work starts and echoed next
//! to the main output as `<out>.cfg`.
//!
//! Exit codes: 0 success, 1 invalid input, 2 runtime failure (divergence,
//! non-convergence, failed certificate).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::certify::{certify_run, point_ratios_csv, CertifyOptions};
use crate::data::{estimate_separator, generate, Dataset, GenKind, GenSpec};
use crate::error::{Error, Result};
use crate::model::{Activation, LinearModel, Model, RandomFeatures, SecondLayer, TwoLayerNet};
use crate::numerics::Rng;
use crate::objective::{LossKind, Objective};
use crate::optim::{parse_trace, run, EtaEstimate, EtaPolicy, Init, OptimizerConfig, OptimizerKind, RunStatus};
use crate::report::KeyValues;
use crate::stability::{check_nonexpansive, estimate_gap, run_loo_all};

#[derive(Debug, Parser)]
#[command(name = "ngdlab", version, about = "Normalized gradient descent lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset as CSV.
    Datagen(DatagenArgs),
    /// Train with gd, ngd or sngd and write the trace.
    Train(TrainArgs),
    /// Integrate the normalized gradient flow.
    Flow(TrainArgs),
    /// Re-run a training configuration and certify its constants.
    Certify(CertifyArgs),
    /// Generalization-gap or non-expansiveness experiments on convex models.
    Stability(StabilityArgs),
    /// Leave-one-out trajectories for every training sample.
    Loo(TrainArgs),
    /// Print the version.
    Version,
}

#[derive(Debug, Args, Default)]
struct Common {
    /// Key-value file with defaults for any flag.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel experiments (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
struct DatagenArgs {
    #[command(flatten)]
    common: Common,
    /// planted | mixture
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "r-max")]
    r_max: Option<f64>,
    /// Class variances of the mixture.
    #[arg(long = "scale-pos")]
    scale_pos: Option<f64>,
    #[arg(long = "scale-neg")]
    scale_neg: Option<f64>,
    /// Comma-separated class means of the mixture.
    #[arg(long = "mean-pos")]
    mean_pos: Option<String>,
    #[arg(long = "mean-neg")]
    mean_neg: Option<String>,
}

#[derive(Debug, Args, Default)]
struct ModelArgs {
    /// net | linear | rf
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    m: Option<usize>,
    /// smoothed | leaky | linear
    #[arg(long)]
    act: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    ell: Option<f64>,
    #[arg(long)]
    s: Option<f64>,
    /// Seed of the frozen layer (second-layer signs or random features).
    #[arg(long = "layer-seed")]
    layer_seed: Option<u64>,
    /// exp | logistic
    #[arg(long)]
    loss: Option<String>,
}

#[derive(Debug, Args, Default)]
struct OptArgs {
    /// gd | ngd | sngd (flow for the flow command)
    #[arg(long)]
    kind: Option<String>,
    /// Numeric step constant or `auto`.
    #[arg(long)]
    eta: Option<String>,
    #[arg(long = "T")]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    /// Flow time horizon; the number of steps is horizon / dt.
    #[arg(long)]
    horizon: Option<f64>,
    /// gaussian | zero
    #[arg(long)]
    init: Option<String>,
    /// Linear margin used by `--eta auto`; estimated from the data if absent.
    #[arg(long)]
    gamma: Option<f64>,
    /// full | running:<decay>
    #[arg(long = "eta-est")]
    eta_est: Option<String>,
    #[arg(long = "log-every")]
    log_every: Option<usize>,
}

#[derive(Debug, Args, Default)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    opt: OptArgs,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Held-out dataset for the test_err column.
    #[arg(long)]
    test: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
struct CertifyArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Trace produced by `train` with the same configuration.
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long = "per-radius")]
    per_radius: Option<usize>,
    #[arg(long = "growth-batch")]
    growth_batch: Option<usize>,
    #[arg(long = "growth-trials")]
    growth_trials: Option<usize>,
}

#[derive(Debug, Args, Default)]
struct StabilityArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    opt: OptArgs,
    /// gap | nonexpansive
    #[arg(long)]
    mode: Option<String>,
    /// planted | mixture
    #[arg(long)]
    dist: Option<String>,
    /// Comma-separated training-set sizes.
    #[arg(long)]
    ns: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long = "test-size")]
    test_size: Option<usize>,
    #[arg(long)]
    pairs: Option<usize>,
}

fn put<T: ToString>(flags: &mut Vec<(&'static str, String)>, key: &'static str, v: &Option<T>) {
    if let Some(v) = v {
        flags.push((key, v.to_string()));
    }
}

impl Common {
    fn flags(&self, f: &mut Vec<(&'static str, String)>) {
        put(f, "seed", &self.seed);
        put(f, "workers", &self.workers);
        put(f, "out", &self.out.as_ref().map(|p| p.display().to_string()));
    }
}

impl ModelArgs {
    fn flags(&self, f: &mut Vec<(&'static str, String)>) {
        put(f, "model", &self.model);
        put(f, "m", &self.m);
        put(f, "act", &self.act);
        put(f, "alpha", &self.alpha);
        put(f, "ell", &self.ell);
        put(f, "s", &self.s);
        put(f, "layer-seed", &self.layer_seed);
        put(f, "loss", &self.loss);
    }
}

impl OptArgs {
    fn flags(&self, f: &mut Vec<(&'static str, String)>) {
        put(f, "kind", &self.kind);
        put(f, "eta", &self.eta);
        put(f, "T", &self.steps);
        put(f, "batch", &self.batch);
        put(f, "dt", &self.dt);
        put(f, "horizon", &self.horizon);
        put(f, "init", &self.init);
        put(f, "gamma", &self.gamma);
        put(f, "eta-est", &self.eta_est);
        put(f, "log-every", &self.log_every);
    }
}

impl TrainArgs {
    fn flags(&self, f: &mut Vec<(&'static str, String)>) {
        self.common.flags(f);
        self.model.flags(f);
        self.opt.flags(f);
        put(f, "data", &self.data.as_ref().map(|p| p.display().to_string()));
        put(f, "test", &self.test.as_ref().map(|p| p.display().to_string()));
    }
}

const COMMON_KEYS: &[&str] = &["seed", "workers", "out"];
const MODEL_KEYS: &[&str] = &["model", "m", "act", "alpha", "ell", "s", "layer-seed", "loss"];
const OPT_KEYS: &[&str] = &[
    "kind", "eta", "T", "batch", "dt", "horizon", "init", "gamma", "eta-est", "log-every",
];
const DATAGEN_KEYS: &[&str] = &[
    "kind", "n", "d", "gamma", "r-max", "scale-pos", "scale-neg", "mean-pos", "mean-neg",
];
const CERTIFY_KEYS: &[&str] = &["run", "per-radius", "growth-batch", "growth-trials"];
const STABILITY_KEYS: &[&str] = &["mode", "dist", "ns", "d", "trials", "test-size", "pairs"];

/// Merges the config file and explicit flags, rejecting unknown keys.
fn merge(config: &Option<PathBuf>, flags: Vec<(&'static str, String)>, allowed: &[&[&str]]) -> Result<KeyValues> {
    let mut kv = match config {
        Some(p) => KeyValues::read(p)?,
        None => KeyValues::new(),
    };
    for k in kv.keys() {
        if !allowed.iter().any(|set| set.contains(&k)) {
            let origin = config.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
            return Err(Error::invalid(k, format!("unknown key in {origin}")));
        }
    }
    for (k, v) in flags {
        kv.set(k, v);
    }
    Ok(kv)
}

/// Typed access to a merged configuration.
struct Conf<'a>(&'a KeyValues);

impl Conf<'_> {
    fn str_or<'b>(&'b self, key: &str, default: &'b str) -> &'b str {
        self.0.get(key).unwrap_or(default)
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.0.get(key) {
            Some(_) => self.0.f64(key),
            None => Ok(default),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.0.get(key) {
            Some(_) => self.0.usize(key),
            None => Ok(default),
        }
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.0.get(key) {
            Some(v) => v
                .parse()
                .map_err(|_| Error::invalid(key, format!("`{v}` is not a non-negative integer"))),
            None => Ok(default),
        }
    }

    fn path(&self, key: &str) -> Result<PathBuf> {
        self.0
            .get(key)
            .map(PathBuf::from)
            .ok_or_else(|| Error::invalid(key, "required"))
    }

    fn list_f64(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.0
            .get(key)
            .map(|v| {
                v.split(',')
                    .map(|x| {
                        x.trim()
                            .parse()
                            .map_err(|_| Error::invalid(key, format!("`{x}` is not a number")))
                    })
                    .collect()
            })
            .transpose()
    }
}

fn parse_loss(c: &Conf) -> Result<LossKind> {
    match c.str_or("loss", "exp") {
        "exp" | "exponential" => Ok(LossKind::Exponential),
        "logistic" => Ok(LossKind::Logistic),
        other => Err(Error::invalid("loss", format!("unknown loss `{other}`"))),
    }
}

fn parse_activation(c: &Conf) -> Result<Activation> {
    let alpha = c.f64_or("alpha", 0.2)?;
    let ell = c.f64_or("ell", 1.0)?;
    match c.str_or("act", "smoothed") {
        "smoothed" => Activation::smoothed(alpha, ell, c.f64_or("s", 4.0)?),
        "leaky" => Activation::leaky_relu(alpha, ell),
        "linear" => Ok(Activation::linear()),
        other => Err(Error::invalid("act", format!("unknown activation `{other}`"))),
    }
}

fn parse_model(c: &Conf, d: usize, default: &str) -> Result<Model> {
    let seed = c.u64_or("layer-seed", c.u64_or("seed", 0)?)?;
    match c.str_or("model", default) {
        "net" => {
            let m = c.usize_or("m", 50)?;
            Ok(Model::TwoLayer(TwoLayerNet::new(parse_activation(c)?, m, d, SecondLayer::Random { seed })?))
        }
        "linear" => Ok(Model::Linear(LinearModel { d })),
        "rf" => {
            let m = c.usize_or("m", 50)?;
            Ok(Model::RandomFeatures(RandomFeatures::new(parse_activation(c)?, m, d, seed)?))
        }
        other => Err(Error::invalid("model", format!("unknown model `{other}`"))),
    }
}

fn parse_optimizer(c: &Conf, data: &Dataset, default_kind: &str) -> Result<OptimizerConfig> {
    let kind = OptimizerKind::parse(c.str_or("kind", default_kind))?;
    let mut cfg = if kind == OptimizerKind::Flow {
        let dt = c.f64_or("dt", 1e-3)?;
        if !(dt > 0.0) {
            return Err(Error::invalid("dt", "must be positive"));
        }
        let horizon = c.f64_or("horizon", 1.0)?;
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::invalid("horizon", "must be finite and non-negative"));
        }
        OptimizerConfig::flow(horizon, dt)
    } else {
        OptimizerConfig::new(kind, 1.0, c.usize_or("T", 100)?)
    };
    match c.str_or("eta", "1") {
        "auto" => {
            let gamma = match c.0.get("gamma") {
                Some(_) => c.0.f64("gamma")?,
                None => {
                    let (_, margin) = estimate_separator(data, 5000);
                    if !(margin > 0.0) {
                        return Err(Error::invalid("gamma", "data are not linearly separable; `--eta auto` needs a margin"));
                    }
                    margin
                }
            };
            cfg.eta_policy = EtaPolicy::AutoSafe { gamma };
        }
        v => {
            cfg.eta = v
                .parse()
                .map_err(|_| Error::invalid("eta", format!("`{v}` is neither a number nor `auto`")))?;
        }
    }
    cfg.batch = c.usize_or("batch", 1)?;
    cfg.seed = c.u64_or("seed", 0)?;
    cfg.init = match c.str_or("init", "gaussian") {
        "gaussian" => Init::GaussianRowNormalized,
        "zero" => Init::Zero,
        other => return Err(Error::invalid("init", format!("unknown init `{other}`"))),
    };
    cfg.eta_estimate = match c.str_or("eta-est", "full") {
        "full" => EtaEstimate::FullBatch,
        v => match v.strip_prefix("running:").map(str::parse::<f64>) {
            Some(Ok(decay)) => EtaEstimate::Running { decay },
            _ => return Err(Error::invalid("eta-est", format!("expected `full` or `running:<decay>`, found `{v}`"))),
        },
    };
    cfg.log_every = c.usize_or("log-every", 1)?;
    cfg.validate(data.n())?;
    Ok(cfg)
}

fn setup_workers(c: &Conf) -> Result<()> {
    let workers = c.usize_or("workers", 0)?;
    if workers > 0 {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
    Ok(())
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn echo_config(out: &Path, kv: &KeyValues) -> Result<()> {
    kv.write(&sibling(out, ".cfg"))
}

/// Outcome of a subcommand that ran to completion.
enum Outcome {
    Ok,
    /// Outputs were written but the run failed at runtime.
    Failed(String),
}

fn datagen(args: DatagenArgs) -> Result<Outcome> {
    let mut flags = Vec::new();
    args.common.flags(&mut flags);
    put(&mut flags, "kind", &args.kind);
    put(&mut flags, "n", &args.n);
    put(&mut flags, "d", &args.d);
    put(&mut flags, "gamma", &args.gamma);
    put(&mut flags, "r-max", &args.r_max);
    put(&mut flags, "scale-pos", &args.scale_pos);
    put(&mut flags, "scale-neg", &args.scale_neg);
    put(&mut flags, "mean-pos", &args.mean_pos);
    put(&mut flags, "mean-neg", &args.mean_neg);
    let kv = merge(&args.common.config, flags, &[COMMON_KEYS, DATAGEN_KEYS])?;
    let c = Conf(&kv);
    let n = c.usize_or("n", 100)?;
    let d = c.usize_or("d", 20)?;
    let seed = c.u64_or("seed", 0)?;
    let mut spec = match c.str_or("kind", "planted") {
        "planted" => GenSpec::planted(n, d, c.f64_or("gamma", 0.1)?, seed),
        "mixture" => {
            let mut spec = GenSpec::mixture(n, d, seed);
            if let GenKind::GaussianMixture { mean_pos, mean_neg, scale_pos, scale_neg } = &mut spec.kind {
                if let Some(m) = c.list_f64("mean-pos")? {
                    *mean_pos = m;
                }
                if let Some(m) = c.list_f64("mean-neg")? {
                    *mean_neg = m;
                }
                *scale_pos = c.f64_or("scale-pos", *scale_pos)?;
                *scale_neg = c.f64_or("scale-neg", *scale_neg)?;
            }
            spec
        }
        other => return Err(Error::invalid("kind", format!("unknown generator `{other}`"))),
    };
    spec.r_max = c.f64_or("r-max", 1.0)?;
    let out = c.path("out")?;
    let data = generate(&spec)?;
    data.write_csv(&out)?;
    echo_config(&out, &kv)?;
    eprintln!("wrote {} points in R^{} to {}", data.n(), data.d(), out.display());
    Ok(Outcome::Ok)
}

struct Training {
    kv: KeyValues,
    obj: Objective,
    test: Option<Dataset>,
    cfg: OptimizerConfig,
    out: PathBuf,
}

fn prepare_training(args: &TrainArgs, extra: Vec<(&'static str, String)>, extra_keys: &[&str], default_kind: &str) -> Result<Training> {
    let mut flags = Vec::new();
    args.flags(&mut flags);
    flags.extend(extra);
    let kv = merge(
        &args.common.config,
        flags,
        &[COMMON_KEYS, MODEL_KEYS, OPT_KEYS, &["data", "test"], extra_keys],
    )?;
    let c = Conf(&kv);
    setup_workers(&c)?;
    let data = Dataset::read_csv(&c.path("data")?)?;
    let test = match kv.get("test") {
        Some(p) => Some(Dataset::read_csv(Path::new(p))?),
        None => None,
    };
    let model = parse_model(&c, data.d(), "net")?;
    let obj = Objective::new(parse_loss(&c)?, model, data)?;
    let cfg = parse_optimizer(&c, obj.data(), default_kind)?;
    let out = c.path("out")?;
    Ok(Training { kv, obj, test, cfg, out })
}

fn status_outcome(status: RunStatus) -> Outcome {
    match status {
        RunStatus::Diverged { step } => Outcome::Failed(format!("run diverged at step {step}")),
        _ => Outcome::Ok,
    }
}

fn train(args: TrainArgs, default_kind: &str) -> Result<Outcome> {
    let mut tr = prepare_training(&args, Vec::new(), &[], default_kind)?;
    if default_kind == "flow" && tr.cfg.kind != OptimizerKind::Flow {
        return Err(Error::invalid("kind", "the flow command only integrates the flow"));
    }
    if default_kind != "flow" && tr.cfg.kind == OptimizerKind::Flow {
        return Err(Error::invalid("kind", "use the flow command for the gradient flow"));
    }
    eprintln!(
        "{} on {} points, {} parameters, {} steps",
        tr.cfg.kind.name(),
        tr.obj.n(),
        tr.obj.model.param_len(),
        tr.cfg.steps
    );
    let res = run(&tr.obj, &tr.cfg, tr.test.as_ref())?;
    res.write_trace(&tr.out)?;
    tr.kv.set("eta", res.config.eta);
    if let EtaPolicy::AutoSafe { gamma } = res.config.eta_policy {
        tr.kv.set("gamma", gamma);
    }
    tr.kv.set("fingerprint", &res.fingerprint);
    tr.kv.set("status", res.status.name());
    echo_config(&tr.out, &tr.kv)?;
    if let Some(last) = res.trace.last() {
        eprintln!("final F = {:e}, train error = {}", last.loss, last.train_err);
    }
    Ok(status_outcome(res.status))
}

fn certify(args: CertifyArgs) -> Result<Outcome> {
    let mut extra = Vec::new();
    put(&mut extra, "run", &args.run.as_ref().map(|p| p.display().to_string()));
    put(&mut extra, "per-radius", &args.per_radius);
    put(&mut extra, "growth-batch", &args.growth_batch);
    put(&mut extra, "growth-trials", &args.growth_trials);
    let mut tr = prepare_training(&args.train, extra, CERTIFY_KEYS, "ngd")?;
    let c = Conf(&tr.kv);
    let trace_path = c.path("run")?;
    let text = std::fs::read_to_string(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
    let recorded = parse_trace(&text, &trace_path.display().to_string())?;
    let gamma = match tr.cfg.eta_policy {
        EtaPolicy::AutoSafe { gamma } => gamma,
        EtaPolicy::Fixed => match tr.kv.get("gamma") {
            Some(_) => tr.kv.f64("gamma")?,
            None => estimate_separator(tr.obj.data(), 5000).1,
        },
    };
    if !(gamma > 0.0) {
        return Err(Error::invalid("gamma", "certificates need a positive data margin"));
    }
    let mut opts = CertifyOptions::new(gamma);
    opts.per_radius = c.usize_or("per-radius", opts.per_radius)?;
    opts.growth_batch = c.usize_or("growth-batch", opts.growth_batch)?;
    opts.growth_trials = c.usize_or("growth-trials", opts.growth_trials)?;
    opts.seed = c.u64_or("seed", 0)?;
    let mut cfg = tr.cfg.clone();
    cfg.keep_iterates = true;
    let res = run(&tr.obj, &cfg, None)?;
    if recorded.len() != res.trace.len() {
        return Err(Error::invalid(
            "run",
            format!("trace has {} rows but the configuration produces {}", recorded.len(), res.trace.len()),
        ));
    }
    for (k, (a, b)) in recorded.iter().zip(&res.trace).enumerate() {
        if a.t != b.t || a.loss != b.loss {
            return Err(Error::Parse {
                path: trace_path.display().to_string(),
                line: k + 2,
                reason: "trace does not match the configuration".into(),
            });
        }
    }
    eprintln!("certifying {} trajectory points and {} probes", res.iterates.len(), 3 * opts.per_radius);
    let (report, rows) = certify_run(&tr.obj, &res, &opts)?;
    report.write(&tr.out)?;
    write(&sibling(&tr.out, ".points.csv"), &point_ratios_csv(&rows))?;
    tr.kv.set("eta", res.config.eta);
    tr.kv.set("gamma", gamma);
    echo_config(&tr.out, &tr.kv)?;
    if report.all_ok() {
        Ok(Outcome::Ok)
    } else {
        Ok(Outcome::Failed("certificate failed; see the pass_* keys in the report".into()))
    }
}

fn stability(args: StabilityArgs) -> Result<Outcome> {
    let mut flags = Vec::new();
    args.common.flags(&mut flags);
    args.model.flags(&mut flags);
    args.opt.flags(&mut flags);
    put(&mut flags, "mode", &args.mode);
    put(&mut flags, "dist", &args.dist);
    put(&mut flags, "ns", &args.ns);
    put(&mut flags, "d", &args.d);
    put(&mut flags, "trials", &args.trials);
    put(&mut flags, "test-size", &args.test_size);
    put(&mut flags, "pairs", &args.pairs);
    let kv = merge(&args.common.config, flags, &[COMMON_KEYS, MODEL_KEYS, OPT_KEYS, STABILITY_KEYS])?;
    let c = Conf(&kv);
    setup_workers(&c)?;
    let d = c.usize_or("d", 10)?;
    let seed = c.u64_or("seed", 0)?;
    let ns: Vec<usize> = c
        .str_or("ns", "100")
        .split(',')
        .map(|x| x.trim().parse().map_err(|_| Error::invalid("ns", format!("`{x}` is not a count"))))
        .collect::<Result<_>>()?;
    let gamma = c.f64_or("gamma", 0.1)?;
    let dist = match c.str_or("dist", "planted") {
        "planted" => GenSpec::planted(ns[0], d, gamma, 0),
        "mixture" => GenSpec::mixture(ns[0], d, 0),
        other => return Err(Error::invalid("dist", format!("unknown distribution `{other}`"))),
    };
    let model = parse_model(&c, d, "linear")?;
    if !model.is_convex() {
        return Err(Error::NonConvexModel);
    }
    let loss = match kv.get("loss") {
        None => LossKind::Logistic,
        Some(_) => parse_loss(&c)?,
    };
    let out = c.path("out")?;
    match c.str_or("mode", "gap") {
        "gap" => {
            if c.str_or("eta", "") == "auto" {
                return Err(Error::invalid("eta", "stability runs take a numeric eta"));
            }
            let probe = generate(&dist)?;
            let cfg = parse_optimizer(&c, &probe, "ngd")?;
            if cfg.kind != OptimizerKind::Ngd {
                return Err(Error::invalid("kind", "stability experiments use ngd"));
            }
            let trials = c.usize_or("trials", 20)?;
            let test_size = c.usize_or("test-size", 1000)?;
            let mut csv = String::from("trial,n,T,train_loss,test_loss,test_err,gap\n");
            let mut summary = KeyValues::new();
            for &n in &ns {
                eprintln!("n = {n}: {trials} trials");
                let g = estimate_gap(&dist.with_n(n), &model, loss, &cfg, trials, test_size, seed)?;
                csv.push_str(g.trials_csv().split_once('\n').map_or("", |x| x.1));
                for (k, v) in g.summary().entries() {
                    summary.push(&format!("n{n}.{k}"), v);
                }
            }
            write(&sibling(&out, ".trials.csv"), &csv)?;
            summary.write(&out)?;
        }
        "nonexpansive" => {
            let data = generate(&dist)?;
            let obj = Objective::new(loss, model, data)?;
            let pairs = c.usize_or("pairs", 2000)?;
            let r = check_nonexpansive(&obj, pairs, &mut Rng::new(seed, 0x6e78))?;
            let mut summary = KeyValues::new();
            summary
                .push("pairs", r.pairs)
                .push("violations", r.violations)
                .push("max_ratio", r.max_ratio)
                .push("h", obj.grad_bound())
                .push("pass", r.violations == 0);
            summary.write(&out)?;
        }
        other => return Err(Error::invalid("mode", format!("unknown mode `{other}`"))),
    }
    echo_config(&out, &kv)?;
    Ok(Outcome::Ok)
}

fn loo(args: TrainArgs) -> Result<Outcome> {
    let mut args = args;
    if args.model.model.is_none() {
        args.model.model = Some("linear".into());
    }
    if args.model.loss.is_none() {
        args.model.loss = Some("logistic".into());
    }
    let tr = prepare_training(&args, Vec::new(), &[], "ngd")?;
    if tr.cfg.kind != OptimizerKind::Ngd {
        return Err(Error::invalid("kind", "leave-one-out runs use ngd"));
    }
    if !tr.obj.model.is_convex() {
        return Err(Error::NonConvexModel);
    }
    let runs = run_loo_all(&tr.obj, &tr.cfg)?;
    let mut csv = String::from("i,t,distance,delta_hat,bound_sample,bound_mean\n");
    for r in &runs {
        for t in 0..r.distances.len() {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                r.i, t, r.distances[t], r.delta_hat[t], r.bound_sample[t], r.bound_mean[t]
            );
        }
    }
    write(&sibling(&tr.out, ".csv"), &csv)?;
    let max_delta = runs.iter().map(|r| r.max_delta()).fold(f64::NEG_INFINITY, f64::max);
    let worst = runs.iter().map(|r| r.worst_excess()).fold(f64::NEG_INFINITY, f64::max);
    let mut summary = KeyValues::new();
    summary
        .push("n", tr.obj.n())
        .push("T", tr.cfg.steps)
        .push("h", tr.obj.grad_bound())
        .push("delta_hat_max", max_delta)
        .push("distance_excess_max", worst)
        .push("pass_distance", worst <= 1e-9);
    summary.write(&tr.out)?;
    echo_config(&tr.out, &tr.kv)?;
    Ok(Outcome::Ok)
}

/// Exit code for an error: 1 for bad input, 2 for runtime failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NotConverged { .. }
        | Error::Overflow(_)
        | Error::StepRejected(_)
        | Error::NonFinite(_)
        | Error::FdNan(_)
        | Error::ZeroLoss(_)
        | Error::ZeroGradient => 2,
        Error::AtPoint { source, .. } => exit_code(source),
        _ => 1,
    }
}

/// Runs the command line and returns the process exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Datagen(a) => datagen(a),
        Command::Train(a) => train(a, "ngd"),
        Command::Flow(a) => train(a, "flow"),
        Command::Certify(a) => certify(a),
        Command::Stability(a) => stability(a),
        Command::Loo(a) => loo(a),
        Command::Version => {
            println!("ngdlab {}", env!("CARGO_PKG_VERSION"));
            Ok(Outcome::Ok)
        }
    };
    match result {
        Ok(Outcome::Ok) => 0,
        Ok(Outcome::Failed(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
