//! The killed logistic mean-field equation
//! `dZ = a E[Z_s](1 - b Z_s) ds + sqrt(2 ã E[Z_s] Z_s) dW`, `Z_0 = z0`.
//!
//! Its mean solves the logistic equation `h' = a h (1 - b h)`, so the
//! equation reduces to an ordinary time-inhomogeneous model with clock `h`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{ModelSpec, RegularityFlags, SmoothProbe};
use crate::par;
use crate::simulate::{PathStatus, SimConfig, Simulator};

const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeanFieldParams {
    pub z0: f64,
    pub a: f64,
    pub b: f64,
    pub a_tilde: f64,
}

impl Default for MeanFieldParams {
    fn default() -> Self {
        Self {
            z0: 1.0,
            a: 1.0,
            b: 2.0,
            a_tilde: 0.5,
        }
    }
}

impl MeanFieldParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("z0", self.z0),
            ("a", self.a),
            ("b", self.b),
            ("a_tilde", self.a_tilde),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("{name} = {v} must be positive"));
            }
        }
        if self.a_tilde > self.a {
            return invalid(format!(
                "a_tilde = {} must not exceed a = {}",
                self.a_tilde, self.a
            ));
        }
        Ok(())
    }
}

/// `h(t) = [(z0^{-1} - b) e^{-a t} + b]^{-1}`
pub fn h_closed_form(p: &MeanFieldParams, t: f64) -> f64 {
    1.0 / ((1.0 / p.z0 - p.b) * (-p.a * t).exp() + p.b)
}

fn model_with_clock(
    p: &MeanFieldParams,
    h: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    noise: bool,
) -> Result<ModelSpec> {
    let (a, b, at) = (p.a, p.b, p.a_tilde);
    let (h0, h1) = (Arc::clone(&h), Arc::clone(&h));
    let mut bld = ModelSpec::builder()
        .name(format!(
            "meanfield({}, {}, {}, {})",
            p.z0, p.a, p.b, p.a_tilde
        ))
        .gamma0(move |s, x| a * (1.0 - b * x) * h0(s))
        .b0(move |s| h1(s))
        .weight(SmoothProbe::identity())
        .flags(RegularityFlags {
            gamma2_vanishes_at_zero: true,
            b_bounded_on_compacts: true,
        });
    if noise {
        bld = bld.gamma1(|x| x).b1(move |s| at * h(s));
    }
    bld.build()
}

/// `γ0 = a (1 - b x) h(s)`, `γ1 = x`, `γ2 = 0`, `b1 = ã h`, clock `b0 = h`, weight `V(x) = x`.
pub fn reduce_to_model(p: &MeanFieldParams) -> Result<ModelSpec> {
    p.validate()?;
    let q = *p;
    model_with_clock(p, Arc::new(move |s| h_closed_form(&q, s)), true)
}

/// Empirical mean of the surviving paths on the simulation grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanCurve {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_paths: usize,
    /// Paths dropped because they went extinct or exploded before the horizon.
    pub censored: usize,
    pub h_closed_form: Vec<f64>,
}

impl MeanCurve {
    pub fn censored_fraction(&self) -> f64 {
        self.censored as f64 / self.n_paths as f64
    }

    /// Linear interpolation, constant beyond the end nodes.
    pub fn eval(&self, t: f64) -> f64 {
        interpolate(&self.times, &self.mean, t)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,mean,stderr,h_closed_form\n");
        for k in 0..self.times.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.times[k], self.mean[k], self.stderr[k], self.h_closed_form[k]
            ));
        }
        out
    }
}

fn interpolate(xs: &[f64], ys: &[f64], t: f64) -> f64 {
    let k = xs.partition_point(|&x| x <= t);
    if k == 0 {
        return ys[0];
    }
    if k == xs.len() {
        return ys[k - 1];
    }
    let w = (t - xs[k - 1]) / (xs[k] - xs[k - 1]);
    ys[k - 1] + w * (ys[k] - ys[k - 1])
}

/// Mean curve of `n_paths` paths of `model` from `z0`, censoring paths that
/// leave `(0, ∞)` before `cfg.t_end`.
fn mean_curve(
    model: &ModelSpec,
    p: &MeanFieldParams,
    cfg: &SimConfig,
    n_paths: usize,
) -> Result<MeanCurve> {
    let sim = Simulator::new(model, cfg)?;
    let times = cfg.grid(cfg.t_start, cfg.t_end);
    let n = times.len();
    let chunks = par::fold_chunks(
        n_paths,
        CHUNK,
        |range| -> Result<(Vec<f64>, Vec<f64>, usize, usize)> {
            let (mut s1, mut s2) = (vec![0.0; n], vec![0.0; n]);
            let (mut kept, mut dropped) = (0, 0);
            for i in range {
                let path = sim.path(p.z0, i as u64)?;
                if path.status != PathStatus::AliveAtHorizon {
                    dropped += 1;
                    continue;
                }
                kept += 1;
                for (k, &x) in path.states.iter().enumerate() {
                    s1[k] += x;
                    s2[k] += x * x;
                }
            }
            Ok((s1, s2, kept, dropped))
        },
    );
    let (mut s1, mut s2) = (vec![0.0; n], vec![0.0; n]);
    let (mut kept, mut censored) = (0usize, 0usize);
    for c in chunks {
        let (a, b, k, d) = c?;
        for j in 0..n {
            s1[j] += a[j];
            s2[j] += b[j];
        }
        kept += k;
        censored += d;
    }
    if kept == 0 {
        return Err(Error::Domain(
            "every mean-field path left (0, ∞) before the horizon".into(),
        ));
    }
    let kf = kept as f64;
    let mean: Vec<f64> = s1.iter().map(|s| s / kf).collect();
    let stderr = s2
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            if kept > 1 {
                ((q - kf * m * m).max(0.0) / (kf - 1.0) / kf).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let h_closed_form = times.iter().map(|&t| h_closed_form(p, t)).collect();
    Ok(MeanCurve {
        times,
        mean,
        stderr,
        n_paths,
        censored,
        h_closed_form,
    })
}

fn check_run(p: &MeanFieldParams, cfg: &SimConfig, n_paths: usize) -> Result<()> {
    p.validate()?;
    cfg.validate()?;
    if cfg.t_start != 0.0 {
        return invalid("mean-field runs start at t = 0");
    }
    if n_paths < 2 {
        return invalid("at least two paths are needed");
    }
    Ok(())
}

/// Fast path: simulates the reduced model driven by the closed-form mean.
pub fn simulate_closed_form(
    p: &MeanFieldParams,
    cfg: &SimConfig,
    n_paths: usize,
) -> Result<MeanCurve> {
    check_run(p, cfg, n_paths)?;
    mean_curve(&reduce_to_model(p)?, p, cfg, n_paths)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfConsistentRun {
    pub curve: MeanCurve,
    /// The curve that drove the last iteration and its standard errors.
    pub previous: Vec<f64>,
    pub previous_stderr: Vec<f64>,
    /// `sup_t |h^{(k+1)} - h^{(k)}|` for each iteration `k`.
    pub gaps: Vec<f64>,
    pub fixed_point_gap: f64,
}

impl SelfConsistentRun {
    /// `sqrt(se_k² + se_{k-1}²)` at each node; the previous iterate enters only through the drift.
    pub fn pooled_stderr(&self) -> Vec<f64> {
        self.curve
            .stderr
            .iter()
            .zip(&self.previous_stderr)
            .map(|(a, b)| a.hypot(*b))
            .collect()
    }
}

/// Picard iteration on the mean: `h^{(0)} ≡ z0`, and `h^{(k+1)}` is the
/// empirical mean of paths driven by `h^{(k)}`, interpolated linearly
/// between grid nodes. Every iteration reuses the same path streams.
pub fn simulate_self_consistent(
    p: &MeanFieldParams,
    cfg: &SimConfig,
    n_paths: usize,
    picard_iters: usize,
) -> Result<SelfConsistentRun> {
    picard(p, cfg, n_paths, picard_iters, true)
}

/// The same iteration without noise: the iterates converge to the solution of the logistic equation.
pub fn simulate_noise_free(
    p: &MeanFieldParams,
    cfg: &SimConfig,
    picard_iters: usize,
) -> Result<SelfConsistentRun> {
    picard(p, cfg, 2, picard_iters, false)
}

fn picard(
    p: &MeanFieldParams,
    cfg: &SimConfig,
    n_paths: usize,
    iters: usize,
    noise: bool,
) -> Result<SelfConsistentRun> {
    check_run(p, cfg, n_paths)?;
    if iters < 1 {
        return invalid("picard_iters must be at least 1");
    }
    let times = cfg.grid(cfg.t_start, cfg.t_end);
    let mut driver = vec![p.z0; times.len()];
    let mut driver_stderr = vec![0.0; times.len()];
    let mut gaps = Vec::with_capacity(iters);
    for k in 0..iters {
        let (ts, hs) = (Arc::new(times.clone()), Arc::new(driver.clone()));
        let clock: Arc<dyn Fn(f64) -> f64 + Send + Sync> =
            Arc::new(move |s| interpolate(&ts, &hs, s));
        let model = model_with_clock(p, clock, noise)?;
        let curve = mean_curve(&model, p, cfg, n_paths)?;
        if curve.mean.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Domain("empirical mean curve reached 0".into()));
        }
        gaps.push(
            curve
                .mean
                .iter()
                .zip(&driver)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
        if k + 1 == iters {
            return Ok(SelfConsistentRun {
                fixed_point_gap: *gaps.last().expect("non-empty"),
                previous: driver,
                previous_stderr: driver_stderr,
                gaps,
                curve,
            });
        }
        driver = curve.mean;
        driver_stderr = curve.stderr;
    }
    unreachable!("the loop returns on its last iteration")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        let p = MeanFieldParams::default();
        assert_eq!(h_closed_form(&p, 0.0), 1.0);
        assert!((h_closed_form(&p, 1.0) - 1.0 / (2.0 - (-1f64).exp())).abs() < 1e-15);
        assert!((h_closed_form(&p, 60.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn reduced_model_coefficients() {
        let p = MeanFieldParams {
            z0: 0.3,
            a: 2.0,
            b: 1.5,
            a_tilde: 0.7,
        };
        let m = reduce_to_model(&p).unwrap();
        for &s in &[0.0, 0.5, 3.0] {
            assert_eq!(m.gamma0(s, 1.0 / p.b), 0.0);
            assert!((m.b1(s) / m.b0(s) - p.a_tilde).abs() < 1e-15);
        }
        assert!(reduce_to_model(&MeanFieldParams { a_tilde: 3.0, ..p }).is_err());
    }

    #[test]
    fn interpolation_is_linear_and_clamped() {
        let (xs, ys) = ([0.0, 1.0, 3.0], [1.0, 3.0, -1.0]);
        assert_eq!(interpolate(&xs, &ys, -1.0), 1.0);
        assert_eq!(interpolate(&xs, &ys, 0.5), 2.0);
        assert_eq!(interpolate(&xs, &ys, 2.0), 1.0);
        assert_eq!(interpolate(&xs, &ys, 9.0), -1.0);
    }
}
