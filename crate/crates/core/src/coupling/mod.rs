//! Reflection and basic coupling of two copies of the state equation.
//!
//! Before the coupling time the second copy is driven by the negated white
//! noise, and jumps are shared through the overlap measure
//! `μ_d = μ ∧ (δ_d ∗ μ)` so that both copies can jump to the same point.
//! After the coupling time the copies are identical.

mod certificate;
mod generator;
mod metric;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::levy::overlap_ratio;
use crate::model::ModelSpec;
use crate::rng::{poisson, std_normal, sub_rng, uniform, PathRng};
use crate::simulate::{JumpPart, PathStatus, SimConfig, SmallJumpMode};

pub use certificate::{
    build_certificate_b1, build_certificate_b2, check_lyapunov, estimate_b1_constants,
    estimate_b2_constants, verify_certificate, B1Constants, B2Constants, Certificate,
    CertificateCase, CertificateGrid, CertificateReport, CertifiedVerdict, GridPoint, LyapunovGrid,
    LyapunovPair, LyapunovReport,
};
pub use generator::{
    coupling_generator_apply, coupling_generator_parts, CouplingProbe, DistanceProbe, GapMaxProbe,
    GeneratorParts, Separable, WeightedIndicator,
};
pub use metric::{
    estimate_wv_bound, fit_contraction_rate, ContractionFit, WeightedMetric, WvBound,
};

/// Sub-stream tag for coupled paths.
const COUPLED_STREAM: u64 = 0xC0_0B1E;

/// A coupled pair of discretised paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledPath {
    pub times: Vec<f64>,
    pub x_states: Vec<f64>,
    pub y_states: Vec<f64>,
    /// First grid time at which the copies were merged.
    pub coupling_time: Option<f64>,
    pub merged: bool,
    pub x_status: PathStatus,
    pub y_status: PathStatus,
}

impl CoupledPath {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,y,merged\n");
        for ((t, x), y) in self.times.iter().zip(&self.x_states).zip(&self.y_states) {
            let m = u8::from(self.coupling_time.is_some_and(|tc| *t >= tc));
            out.push_str(&format!("{t},{x},{y},{m}\n"));
        }
        out
    }

    /// Index of the first sample at or after `t`.
    pub fn index_at(&self, t: f64) -> usize {
        let tol = 1e-9 * (1.0 + t.abs());
        self.times
            .partition_point(|&g| g < t - tol)
            .min(self.times.len() - 1)
    }
}

/// One copy inside a coupled run.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Leg {
    Alive(f64),
    Extinct(f64),
    Exploded { at: f64, last: f64, value: f64 },
}

impl Leg {
    fn value(self) -> f64 {
        match self {
            Leg::Alive(x) => x,
            Leg::Extinct(_) => 0.0,
            Leg::Exploded { value, .. } => value,
        }
    }

    fn alive(self) -> bool {
        matches!(self, Leg::Alive(_))
    }

    fn status(self) -> PathStatus {
        match self {
            Leg::Alive(_) => PathStatus::AliveAtHorizon,
            Leg::Extinct(tau0) => PathStatus::Extinct { tau0 },
            Leg::Exploded { at, last, .. } => PathStatus::Exploded {
                tau_inf: at,
                last_state: last,
            },
        }
    }
}

/// Runs coupled pairs of one model under one configuration.
#[derive(Debug, Clone)]
pub struct CoupledSimulator<'a> {
    model: &'a ModelSpec,
    cfg: SimConfig,
    jumps: Option<JumpPart>,
}

impl<'a> CoupledSimulator<'a> {
    pub fn new(model: &'a ModelSpec, cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        if model.has_jumps() && !model.mu().is_density() {
            return Err(Error::UnsupportedMeasure(format!(
                "basic coupling needs an absolutely continuous jump measure, got {}",
                model.mu().label()
            )));
        }
        Ok(Self {
            model,
            cfg: cfg.clone(),
            jumps: JumpPart::new(model, cfg)?,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    fn merge_tol(&self, x0: f64, y0: f64) -> f64 {
        self.cfg.merge_tol.unwrap_or(1e-6 * (1.0 + x0 + y0))
    }

    /// Continuous part of one step: drift, compensator and the shared
    /// Gaussian increment (negated for `y` unless `merged`).
    fn continuous(&self, s: f64, x: f64, dt: f64, sign: f64, xi: f64, eta: f64) -> f64 {
        let m = self.model;
        let mut next = x + m.gamma0(s, x) * dt;
        let g1 = m.gamma1(x);
        if g1 > 0.0 {
            next += sign * (2.0 * g1 * m.b1(s) * dt).sqrt() * xi;
        }
        if let Some(j) = &self.jumps {
            let intensity = m.b2(s) * m.gamma2(x);
            if intensity > 0.0 {
                next -= intensity * j.moments.mean_large * dt;
                if self.cfg.small_jump_mode == SmallJumpMode::Gaussian {
                    next += (intensity * j.moments.sigma2_small * dt).sqrt() * eta;
                }
            }
        }
        next
    }

    /// One step from `(x, y)`. Returns the unclamped pair and whether the
    /// copies met during the step.
    fn step(
        &self,
        s: f64,
        x: Leg,
        y: Leg,
        merged: bool,
        tol: f64,
        dt: f64,
        rng: &mut PathRng,
    ) -> (f64, f64, bool) {
        let m = self.model;
        let xi = std_normal(rng);
        let eta = if self.cfg.small_jump_mode == SmallJumpMode::Gaussian {
            std_normal(rng)
        } else {
            0.0
        };
        let (x0, y0) = (x.value(), y.value());
        let mut xn = if x.alive() {
            self.continuous(s, x0, dt, 1.0, xi, eta)
        } else {
            x0
        };
        let mut yn = if merged {
            xn
        } else if y.alive() {
            self.continuous(s, y0, dt, -1.0, xi, eta)
        } else {
            y0
        };
        let mut met = merged || (xn - yn).abs() <= tol || (x0 - y0) * (xn - yn) < 0.0;
        if met {
            yn = xn;
        }
        let Some(j) = &self.jumps else {
            return (xn, yn, met);
        };
        let Some(sampler) = &j.sampler else {
            return (xn, yn, met);
        };
        let b2 = m.b2(s);
        let gx = if x.alive() { b2 * m.gamma2(x0) } else { 0.0 };
        let gy = if y.alive() && !met {
            b2 * m.gamma2(y0)
        } else {
            0.0
        };
        let env = gx.max(gy);
        if !(env > 0.0) {
            return (xn, yn, met);
        }
        let dens = m.mu().density().expect("coupling requires a density");
        let count = poisson(rng, env * j.moments.mass_large * dt);
        for _ in 0..count {
            let z = sampler.sample(rng);
            let u = env * uniform(rng);
            if met {
                if u < gx {
                    xn += z;
                }
                yn = xn;
                continue;
            }
            let g = gx.min(gy);
            if u < g {
                let d = yn - xn;
                let p1 = 0.5 * g * overlap_ratio(dens, d, z);
                let p2 = 0.5 * g * overlap_ratio(dens, -d, z);
                xn += z;
                if u < p1 {
                    yn = xn;
                    met = true;
                } else if u < p1 + p2 {
                    yn += z + d;
                } else {
                    yn += z;
                }
            } else if gx > gy {
                xn += z;
            } else {
                yn += z;
            }
        }
        if !met && (xn - yn).abs() <= tol {
            met = true;
        }
        if met {
            yn = xn;
        }
        (xn, yn, met)
    }

    fn land(&self, next: f64, prev: f64, t: f64) -> Leg {
        if next.is_nan() {
            return Leg::Exploded {
                at: t,
                last: prev,
                value: f64::INFINITY,
            };
        }
        if next >= self.cfg.x_explode || (next - prev).abs() > self.cfg.x_explode {
            return Leg::Exploded {
                at: t,
                last: prev,
                value: next.max(0.0),
            };
        }
        if next <= self.cfg.x_absorb {
            Leg::Extinct(t)
        } else {
            Leg::Alive(next)
        }
    }

    /// Coupled pair started at `(x0, y0)` at time `s_start`, run to `cfg.t_end`.
    pub fn path(&self, x0: f64, y0: f64, s_start: f64, stream: u64) -> Result<CoupledPath> {
        for v in [x0, y0] {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("initial state {v} must be positive"));
            }
        }
        if !(s_start < self.cfg.t_end) || !(s_start >= 0.0) {
            return invalid(format!("start time {s_start} must lie in [0, t_end)"));
        }
        let grid = self.cfg.grid(s_start, self.cfg.t_end);
        let tol = self.merge_tol(x0, y0);
        let mut rng = sub_rng(self.cfg.master_seed, stream, COUPLED_STREAM);
        let (mut x, mut y) = (Leg::Alive(x0), Leg::Alive(y0));
        let mut coupling_time = (x0 == y0).then_some(s_start);
        let mut xs = vec![x0];
        let mut ys = vec![y0];
        let mut times = vec![s_start];
        for k in 1..grid.len() {
            let (s, t) = (grid[k - 1], grid[k]);
            let merged = coupling_time.is_some();
            let (xn, yn, met) = self.step(s, x, y, merged, tol, t - s, &mut rng);
            if x.alive() {
                x = self.land(xn, x.value(), t);
            }
            if merged || met {
                y = x;
                coupling_time.get_or_insert(t);
            } else if y.alive() {
                y = self.land(yn, y.value(), t);
            }
            if coupling_time.is_none() && matches!((x, y), (Leg::Extinct(_), Leg::Extinct(_))) {
                coupling_time = Some(t);
            }
            times.push(t);
            xs.push(x.value());
            ys.push(y.value());
            if matches!(x, Leg::Exploded { .. }) || matches!(y, Leg::Exploded { .. }) {
                break;
            }
            if !x.alive() && !y.alive() {
                for &t in &grid[k + 1..] {
                    times.push(t);
                    xs.push(0.0);
                    ys.push(0.0);
                }
                break;
            }
        }
        Ok(CoupledPath {
            times,
            x_states: xs,
            y_states: ys,
            merged: coupling_time.is_some(),
            coupling_time,
            x_status: x.status(),
            y_status: y.status(),
        })
    }
}

/// Coupled pair from `(x0, y0)` at `s_start` up to `cfg.t_end`.
pub fn simulate_coupled(
    model: &ModelSpec,
    x0: f64,
    y0: f64,
    s_start: f64,
    cfg: &SimConfig,
    stream_index: u64,
) -> Result<CoupledPath> {
    CoupledSimulator::new(model, cfg)?.path(x0, y0, s_start, stream_index)
}
