//! Browser bindings: each export builds a planted-margin instance, runs one
//! experiment and returns its result as a JSON string.

use ngd_core::certify::{certify_run, CertifyOptions};
use ngd_core::optim::{initial_weights, run_from};
use ngd_core::{
    generate, Activation, GenSpec, Init, LossKind, Model, Objective, OptimizerConfig, OptimizerKind, Result,
    SecondLayer, TwoLayerNet,
};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Instance shared by every export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Instance {
    pub n: usize,
    pub d: usize,
    pub gamma: f64,
    pub m: usize,
    pub seed: u64,
}

impl Instance {
    fn objective(&self) -> Result<Objective> {
        let data = generate(&GenSpec::planted(self.n, self.d, self.gamma, self.seed))?;
        let act = Activation::smoothed(0.2, 1.0, 4.0)?;
        let net = TwoLayerNet::new(act, self.m, self.d, SecondLayer::Random { seed: self.seed })?;
        Objective::new(LossKind::Exponential, Model::TwoLayer(net), data)
    }
}

fn column(trace: &[ngd_core::TraceRecord], f: fn(&ngd_core::TraceRecord) -> f64) -> Value {
    trace.iter().map(f).collect()
}

/// GD and NGD from the same initialization.
pub fn compare(inst: Instance, steps: usize, eta_gd: f64, eta_ngd: f64) -> Result<Value> {
    let obj = inst.objective()?;
    let w0 = initial_weights(&obj, Init::GaussianRowNormalized, inst.seed);
    let gd = run_from(&obj, &OptimizerConfig::new(OptimizerKind::Gd, eta_gd, steps), w0.clone(), None)?;
    let ngd = run_from(&obj, &OptimizerConfig::new(OptimizerKind::Ngd, eta_ngd, steps), w0, None)?;
    Ok(json!({
        "t": column(&ngd.trace, |r| r.t),
        "gd": { "loss": column(&gd.trace, |r| r.loss), "w_norm": column(&gd.trace, |r| r.w_norm), "status": gd.status.name() },
        "ngd": { "loss": column(&ngd.trace, |r| r.loss), "w_norm": column(&ngd.trace, |r| r.w_norm), "status": ngd.status.name() },
    }))
}

/// Normalized flow with the envelope `exp(-h^2 t) <= F(t)/F(0) <= exp(-mu^2 t)`
/// from the extreme gradient ratios met along the way.
pub fn flow(inst: Instance, horizon: f64, dt: f64) -> Result<Value> {
    let obj = inst.objective()?;
    let w0 = initial_weights(&obj, Init::GaussianRowNormalized, inst.seed);
    let res = run_from(&obj, &OptimizerConfig::flow(horizon, dt), w0, None)?;
    let ratios: Vec<f64> = res.trace.iter().map(|r| r.grad_norm / r.loss).collect();
    let h = ratios.iter().copied().fold(0.0, f64::max);
    let mu = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let l0 = res.trace[0].log_loss;
    Ok(json!({
        "t": column(&res.trace, |r| r.t),
        "log_ratio": res.trace.iter().map(|r| r.log_loss - l0).collect::<Vec<_>>(),
        "lower": res.trace.iter().map(|r| -h * h * r.t).collect::<Vec<_>>(),
        "upper": res.trace.iter().map(|r| -mu * mu * r.t).collect::<Vec<_>>(),
        "h_hat": h,
        "mu_hat": mu,
    }))
}

/// Certificate of an auto-safe NGD run with a few random probes.
pub fn certificate(inst: Instance, steps: usize, per_radius: usize) -> Result<Value> {
    let obj = inst.objective()?;
    let cfg = OptimizerConfig::new(OptimizerKind::Ngd, 0.0, steps)
        .with_seed(inst.seed)
        .auto_safe(inst.gamma)
        .keeping_iterates();
    let res = run_from(&obj, &cfg, initial_weights(&obj, Init::GaussianRowNormalized, inst.seed), None)?;
    let mut opts = CertifyOptions::new(inst.gamma);
    opts.per_radius = per_radius;
    opts.growth_trials = 200;
    opts.seed = inst.seed;
    let (report, rows) = certify_run(&obj, &res, &opts)?;
    let c = report.constants;
    Ok(json!({
        "eta": c.eta,
        "h": c.h,
        "mu": c.mu,
        "hessian_bound": c.hessian_impl,
        "hessian_printed": c.hessian_printed,
        "path_constant": c.c,
        "rate": c.rate_bound,
        "grad": [report.grad_min, report.grad_max],
        "hessian_max": report.hessian_max,
        "path_max": report.path_max,
        "rho_hat": report.rho_hat,
        "pass": report.all_ok(),
        "points": rows.iter().map(|p| json!({
            "origin": p.origin,
            "w_norm": p.w_norm,
            "grad": p.grad_ratio,
            "hessian": p.hessian_ratio,
        })).collect::<Vec<_>>(),
    }))
}

fn to_js(v: Result<Value>) -> std::result::Result<String, JsValue> {
    v.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = compareOptimizers)]
#[allow(clippy::too_many_arguments)]
pub fn compare_optimizers(
    n: usize,
    d: usize,
    gamma: f64,
    m: usize,
    seed: u32,
    steps: usize,
    eta_gd: f64,
    eta_ngd: f64,
) -> std::result::Result<String, JsValue> {
    to_js(compare(Instance { n, d, gamma, m, seed: seed.into() }, steps, eta_gd, eta_ngd))
}

#[wasm_bindgen(js_name = flowBounds)]
pub fn flow_bounds(
    n: usize,
    d: usize,
    gamma: f64,
    m: usize,
    seed: u32,
    horizon: f64,
    dt: f64,
) -> std::result::Result<String, JsValue> {
    to_js(flow(Instance { n, d, gamma, m, seed: seed.into() }, horizon, dt))
}

#[wasm_bindgen(js_name = certifyRun)]
pub fn certify_ngd(
    n: usize,
    d: usize,
    gamma: f64,
    m: usize,
    seed: u32,
    steps: usize,
    per_radius: usize,
) -> std::result::Result<String, JsValue> {
    to_js(certificate(Instance { n, d, gamma, m, seed: seed.into() }, steps, per_radius))
}
