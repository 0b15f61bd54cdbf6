//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every entry point takes plain numbers or a JSON model description and
//! returns JSON, so the page needs no generated glue beyond the exports.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use jumpflow::criteria::{check_nonexplosion, check_nonextinction, ScanGrid};
use jumpflow::harness::ModelConfig;
use jumpflow::meanfield::{simulate_closed_form, MeanFieldParams};
use jumpflow::simulate::simulate_path;
use jumpflow::{ModelSpec, SimConfig};

/// Largest number of points returned per curve.
const MAX_POINTS: usize = 2000;

fn model_from_json(model_json: &str) -> Result<ModelSpec, String> {
    let cfg: ModelConfig = serde_json::from_str(model_json).map_err(|e| format!("model: {e}"))?;
    cfg.build().map_err(|e| e.to_string())
}

fn sim_config(dt: f64, t_end: f64, seed: u64) -> Result<SimConfig, String> {
    let cfg = SimConfig {
        dt,
        t_end,
        master_seed: seed,
        ..SimConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// Keeps every `k`-th index so that at most `MAX_POINTS` remain, always keeping the last.
fn thin<T: Copy>(v: &[T]) -> Vec<T> {
    let step = v.len().div_ceil(MAX_POINTS).max(1);
    let mut out: Vec<T> = v.iter().step_by(step).copied().collect();
    if !(v.len() - 1).is_multiple_of(step) {
        out.push(v[v.len() - 1]);
    }
    out
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct PathView {
    times: Vec<f64>,
    states: Vec<f64>,
    status: &'static str,
    end_time: f64,
}

/// One sample path of the model described by `model_json`, e.g.
/// `{"builtin": "logistic(1, 1, 0)", "mu": {"kind": "power", "alpha": 1.5, "zmax": 1}}`.
#[wasm_bindgen]
pub fn sample_path(
    model_json: &str,
    x0: f64,
    dt: f64,
    t_end: f64,
    seed: u64,
) -> Result<String, String> {
    let model = model_from_json(model_json)?;
    let cfg = sim_config(dt, t_end, seed)?;
    let p = simulate_path(&model, x0, &cfg, 0).map_err(|e| e.to_string())?;
    let status = match p.status.code() {
        0 => "alive",
        1 => "extinct",
        _ => "exploded",
    };
    let end_time = *p.times.last().unwrap_or(&0.0);
    to_json(&PathView {
        times: thin(&p.times),
        states: thin(&p.states),
        status,
        end_time,
    })
}

#[derive(Serialize)]
struct CurveView {
    times: Vec<f64>,
    mean: Vec<f64>,
    stderr: Vec<f64>,
    h: Vec<f64>,
    censored: usize,
}

/// Empirical mean of the mean-field equation driven by its closed-form clock.
#[wasm_bindgen]
pub fn meanfield_curve(
    z0: f64,
    a: f64,
    b: f64,
    a_tilde: f64,
    dt: f64,
    t_end: f64,
    n_paths: usize,
    seed: u64,
) -> Result<String, String> {
    let p = MeanFieldParams { z0, a, b, a_tilde };
    let cfg = sim_config(dt, t_end, seed)?;
    let c = simulate_closed_form(&p, &cfg, n_paths).map_err(|e| e.to_string())?;
    to_json(&CurveView {
        times: thin(&c.times),
        mean: thin(&c.mean),
        stderr: thin(&c.stderr),
        h: thin(&c.h_closed_form),
        censored: c.censored,
    })
}

fn label<T: Serialize>(v: &T) -> Result<String, String> {
    let v = serde_json::to_value(v).map_err(|e| e.to_string())?;
    Ok(v.as_str().map_or_else(|| v.to_string(), str::to_string))
}

#[derive(Serialize)]
struct ScanView {
    criterion: String,
    verdict: String,
    extremal_value: f64,
    extremal_location: (f64, f64),
}

/// Non-extinction scan below `c0` and non-explosion scan above `c1` up to time `t`.
#[wasm_bindgen]
pub fn criteria_scan(model_json: &str, t: f64, c0: f64, c1: f64) -> Result<String, String> {
    let model = model_from_json(model_json)?;
    let grid = ScanGrid::default();
    let reports = [
        check_nonextinction(&model, t, c0, &grid),
        check_nonexplosion(&model, t, c1, &grid),
    ];
    let mut out = Vec::new();
    for r in reports {
        let r = r.map_err(|e| e.to_string())?;
        out.push(ScanView {
            criterion: label(&r.criterion)?,
            verdict: label(&r.verdict)?,
            extremal_value: r.extremal_value,
            extremal_location: r.extremal_location,
        });
    }
    to_json(&out)
}
