//! Euler simulation with absorbing boundaries at `0` and `∞`.
//!
//! Coefficients are frozen at the left end of each step. Jumps above
//! `eps_jump` are simulated exactly as a compound Poisson sum; the
//! compensator of these jumps enters the drift. Jumps below the cutoff are
//! dropped or replaced by a matching Gaussian term.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Result};
use crate::levy::{TailSampler, TruncatedMoments};
use crate::model::ModelSpec;
use crate::par;
use crate::rng::{path_rng, poisson, std_normal, sub_rng, uniform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SmallJumpMode {
    #[default]
    Drop,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub eps_jump: f64,
    pub small_jump_mode: SmallJumpMode,
    pub x_absorb: f64,
    pub x_explode: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub master_seed: u64,
    /// Levels whose first passages are recorded on paths.
    pub passage_levels: Vec<f64>,
    /// Distance below which coupled paths are merged.
    pub merge_tol: Option<f64>,
    pub conf_level: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            eps_jump: 1e-3,
            small_jump_mode: SmallJumpMode::Drop,
            x_absorb: 1e-8,
            x_explode: 1e8,
            t_start: 0.0,
            t_end: 1.0,
            master_seed: 0,
            passage_levels: Vec::new(),
            merge_tol: None,
            conf_level: 0.95,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid(format!("dt = {} must be positive", self.dt));
        }
        if !(self.eps_jump > 0.0) {
            return invalid(format!("eps_jump = {} must be positive", self.eps_jump));
        }
        if !(self.x_absorb > 0.0 && self.x_absorb < self.x_explode) {
            return invalid("thresholds must satisfy 0 < x_absorb < x_explode");
        }
        if !(self.t_end > self.t_start) || !self.t_end.is_finite() || !(self.t_start >= 0.0) {
            return invalid("horizon must satisfy 0 <= t_start < t_end < inf");
        }
        if !(self.conf_level > 0.0 && self.conf_level < 1.0) {
            return invalid("conf_level must lie in (0, 1)");
        }
        Ok(())
    }

    /// Step count and times of the grid on `[from, to]`; the last step may be shorter.
    pub fn grid(&self, from: f64, to: f64) -> Vec<f64> {
        let span = to - from;
        let n = ((span / self.dt) - 1e-9).ceil().max(1.0) as usize;
        let mut t: Vec<f64> = (0..n).map(|k| from + k as f64 * self.dt).collect();
        t.push(to);
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathStatus {
    AliveAtHorizon,
    Extinct {
        tau0: f64,
    },
    /// `last_state` is the state before the step that crossed the threshold.
    Exploded {
        tau_inf: f64,
        last_state: f64,
    },
}

impl PathStatus {
    pub fn code(&self) -> u8 {
        match self {
            PathStatus::AliveAtHorizon => 0,
            PathStatus::Extinct { .. } => 1,
            PathStatus::Exploded { .. } => 2,
        }
    }
}

/// First passage times at one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Passage {
    pub level: f64,
    /// First time with `X ≤ level`.
    pub below: Option<f64>,
    /// First time with `X ≥ level`.
    pub above: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Path {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub status: PathStatus,
    pub passages: Vec<Passage>,
    /// Set when a negative excursion was clamped where the model does not keep `0` invariant.
    pub clamp_warning: bool,
}

impl Path {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,status_code\n");
        let last = self.states.len().saturating_sub(1);
        for (k, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            let code = match self.status {
                PathStatus::Extinct { tau0 } if *t >= tau0 => 1,
                PathStatus::Exploded { .. } if k == last => 2,
                _ => 0,
            };
            out.push_str(&format!("{t},{x},{code}\n"));
        }
        out
    }
}

/// Mean of a Monte Carlo sample with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub conf_level: f64,
}

impl MCEstimate {
    pub fn from_samples(xs: &[f64], conf_level: f64) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            stderr: (var / n as f64).sqrt(),
            n,
            conf_level,
        }
    }

    pub fn from_bernoulli(hits: usize, n: usize, conf_level: f64) -> Self {
        let p = hits as f64 / n as f64;
        Self {
            mean: p,
            stderr: (p * (1.0 - p) / n as f64).sqrt(),
            n,
            conf_level,
        }
    }

    pub fn z(&self) -> f64 {
        Normal::new(0.0, 1.0)
            .expect("standard normal")
            .inverse_cdf(0.5 + 0.5 * self.conf_level)
    }

    pub fn half_width(&self) -> f64 {
        self.z() * self.stderr
    }

    pub fn ci(&self) -> (f64, f64) {
        let h = self.half_width();
        (self.mean - h, self.mean + h)
    }
}

/// Random inputs consumed by one Euler step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepNoise {
    pub xi: f64,
    /// Poisson mean of the large-jump count.
    pub jump_rate: f64,
    pub jump_count: u64,
    pub jump_sum: f64,
    pub small_jump: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct JumpPart {
    pub moments: TruncatedMoments,
    pub sampler: Option<Arc<TailSampler>>,
}

impl JumpPart {
    pub fn new(model: &ModelSpec, cfg: &SimConfig) -> Result<Option<Self>> {
        let Some(moments) = model.moments(cfg.eps_jump)? else {
            return Ok(None);
        };
        let sampler = if moments.mass_large > 0.0 {
            Some(model.mu().tail_sampler(cfg.eps_jump)?)
        } else {
            None
        };
        Ok(Some(Self { moments, sampler }))
    }
}

/// A single Euler step of the state equation.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    model: &'a ModelSpec,
    mode: SmallJumpMode,
    jumps: Option<JumpPart>,
}

impl<'a> Stepper<'a> {
    pub fn new(model: &'a ModelSpec, cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            model,
            mode: cfg.small_jump_mode,
            jumps: JumpPart::new(model, cfg)?,
        })
    }

    pub fn moments(&self) -> Option<TruncatedMoments> {
        self.jumps.as_ref().map(|j| j.moments)
    }

    /// Unclamped state after one step of length `dt` from `(s, x)`.
    pub fn step<R: Rng + ?Sized>(&self, s: f64, x: f64, dt: f64, rng: &mut R) -> (f64, StepNoise) {
        let m = self.model;
        let mut noise = StepNoise {
            xi: std_normal(rng),
            ..StepNoise::default()
        };
        let mut next = x + m.gamma0(s, x) * dt;
        let g1 = m.gamma1(x);
        if g1 > 0.0 {
            next += (2.0 * g1 * m.b1(s) * dt).sqrt() * noise.xi;
        }
        if let Some(j) = &self.jumps {
            let intensity = m.b2(s) * m.gamma2(x);
            if intensity > 0.0 {
                next -= intensity * j.moments.mean_large * dt;
                if let Some(sampler) = &j.sampler {
                    noise.jump_rate = intensity * j.moments.mass_large * dt;
                    noise.jump_count = poisson(rng, noise.jump_rate);
                    for _ in 0..noise.jump_count {
                        noise.jump_sum += sampler.sample(rng);
                    }
                    next += noise.jump_sum;
                }
                if self.mode == SmallJumpMode::Gaussian && j.moments.sigma2_small > 0.0 {
                    noise.small_jump =
                        (intensity * j.moments.sigma2_small * dt).sqrt() * std_normal(rng);
                    next += noise.small_jump;
                }
            }
        }
        (next, noise)
    }

    /// True when a negative excursion cannot be explained by Euler error alone.
    fn clamp_suspicious(&self, s: f64) -> bool {
        let m = self.model;
        !(m.gamma1(0.0) == 0.0 && m.gamma2(0.0) == 0.0 && m.gamma0(s, 0.0) >= 0.0)
    }
}

/// Outcome of a step after boundary handling.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Landing {
    Alive(f64),
    Extinct,
    Exploded(f64),
}

/// Runs paths of one model under one configuration.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    cfg: SimConfig,
    stepper: Stepper<'a>,
}

impl<'a> Simulator<'a> {
    pub fn new(model: &'a ModelSpec, cfg: &SimConfig) -> Result<Self> {
        Ok(Self {
            cfg: cfg.clone(),
            stepper: Stepper::new(model, cfg)?,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn stepper(&self) -> &Stepper<'a> {
        &self.stepper
    }

    fn land<R: Rng + ?Sized>(
        &self,
        s: f64,
        x: f64,
        dt: f64,
        rng: &mut R,
        warn: &mut bool,
    ) -> Landing {
        let (mut next, _) = self.stepper.step(s, x, dt, rng);
        if next.is_nan() {
            return Landing::Exploded(f64::INFINITY);
        }
        if next >= self.cfg.x_explode || (next - x).abs() > self.cfg.x_explode {
            return Landing::Exploded(next.max(0.0));
        }
        if next < 0.0 {
            if self.stepper.clamp_suspicious(s) {
                *warn = true;
            }
            next = 0.0;
        }
        if next <= self.cfg.x_absorb {
            Landing::Extinct
        } else {
            Landing::Alive(next)
        }
    }

    /// Steps over `grid` from `x0`; `visit(k, x)` is called for each grid
    /// index reached and may stop the run by returning `false`.
    fn drive<R: Rng + ?Sized>(
        &self,
        x0: f64,
        grid: &[f64],
        rng: &mut R,
        warn: &mut bool,
        mut visit: impl FnMut(usize, f64) -> bool,
    ) -> PathStatus {
        let mut x = x0;
        if !visit(0, x) {
            return PathStatus::AliveAtHorizon;
        }
        for k in 1..grid.len() {
            let (s, dt) = (grid[k - 1], grid[k] - grid[k - 1]);
            match self.land(s, x, dt, rng, warn) {
                Landing::Alive(v) => x = v,
                Landing::Extinct => {
                    visit(k, 0.0);
                    return PathStatus::Extinct { tau0: grid[k] };
                }
                Landing::Exploded(v) => {
                    visit(k, v);
                    return PathStatus::Exploded {
                        tau_inf: grid[k],
                        last_state: x,
                    };
                }
            }
            if !visit(k, x) {
                break;
            }
        }
        PathStatus::AliveAtHorizon
    }

    pub fn path(&self, x0: f64, stream: u64) -> Result<Path> {
        check_start(x0)?;
        let grid = self.cfg.grid(self.cfg.t_start, self.cfg.t_end);
        let mut rng = path_rng(self.cfg.master_seed, stream);
        let mut warn = false;
        let mut states = Vec::with_capacity(grid.len());
        let mut passages: Vec<Passage> = self
            .cfg
            .passage_levels
            .iter()
            .map(|&level| Passage {
                level,
                below: None,
                above: None,
            })
            .collect();
        let status = self.drive(x0, &grid, &mut rng, &mut warn, |k, x| {
            states.push(x);
            for p in passages.iter_mut() {
                if p.below.is_none() && x <= p.level {
                    p.below = Some(grid[k]);
                }
                if p.above.is_none() && x >= p.level {
                    p.above = Some(grid[k]);
                }
            }
            true
        });
        let mut times = grid;
        match status {
            PathStatus::Extinct { .. } => states.resize(times.len(), 0.0),
            PathStatus::Exploded { .. } => times.truncate(states.len()),
            PathStatus::AliveAtHorizon => {}
        }
        Ok(Path {
            times,
            states,
            status,
            passages,
            clamp_warning: warn,
        })
    }

    /// Whether `event` occurs on path `stream`; stops as soon as it is decided.
    pub fn event_occurs(&self, x0: f64, event: Event, stream: u64) -> bool {
        let horizon = event.horizon();
        if !(horizon > self.cfg.t_start) {
            return match event {
                Event::PassageBelow { level, .. } => x0 <= level,
                Event::PassageAbove { level, .. } => x0 >= level,
                _ => false,
            };
        }
        let grid = self.cfg.grid(self.cfg.t_start, horizon);
        let mut rng = path_rng(self.cfg.master_seed, stream);
        let mut warn = false;
        let mut hit = false;
        let status = self.drive(x0, &grid, &mut rng, &mut warn, |_, x| {
            hit = match event {
                Event::PassageBelow { level, .. } => x <= level,
                Event::PassageAbove { level, .. } => x >= level,
                _ => false,
            };
            !hit
        });
        hit || matches!(
            (event, status),
            (Event::ExtinctBy(_), PathStatus::Extinct { .. })
                | (Event::ExplodedBy(_), PathStatus::Exploded { .. })
                | (Event::PassageAbove { .. }, PathStatus::Exploded { .. })
        )
    }

    /// States at the requested times (`0` after extinction, the crossing value after explosion).
    pub fn observe(&self, x0: f64, stream: u64, times: &[f64]) -> Result<(Vec<f64>, PathStatus)> {
        check_start(x0)?;
        let horizon = times.iter().copied().fold(self.cfg.t_start, f64::max);
        let grid = self.cfg.grid(
            self.cfg.t_start,
            horizon.max(self.cfg.t_start + self.cfg.dt),
        );
        let slots: Vec<usize> = times
            .iter()
            .map(|&t| {
                grid.partition_point(|&g| g < t - 1e-9 * self.cfg.dt)
                    .min(grid.len() - 1)
            })
            .collect();
        let mut values = vec![f64::NAN; times.len()];
        let mut last = x0;
        let mut rng = path_rng(self.cfg.master_seed, stream);
        let mut warn = false;
        let status = self.drive(x0, &grid, &mut rng, &mut warn, |k, x| {
            last = x;
            for (slot, v) in slots.iter().zip(values.iter_mut()) {
                if *slot == k {
                    *v = x;
                }
            }
            true
        });
        for v in values.iter_mut().filter(|v| v.is_nan()) {
            *v = match status {
                PathStatus::Extinct { .. } => 0.0,
                _ => last,
            };
        }
        Ok((values, status))
    }
}

fn check_start(x0: f64) -> Result<()> {
    if !(x0 > 0.0 && x0.is_finite()) {
        return invalid(format!("initial state x0 = {x0} must be positive"));
    }
    Ok(())
}

pub fn simulate_path(
    model: &ModelSpec,
    x0: f64,
    cfg: &SimConfig,
    stream_index: u64,
) -> Result<Path> {
    Simulator::new(model, cfg)?.path(x0, stream_index)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    ExtinctBy(f64),
    ExplodedBy(f64),
    PassageBelow { level: f64, t: f64 },
    PassageAbove { level: f64, t: f64 },
}

impl Event {
    pub fn horizon(&self) -> f64 {
        match *self {
            Event::ExtinctBy(t) | Event::ExplodedBy(t) => t,
            Event::PassageBelow { t, .. } | Event::PassageAbove { t, .. } => t,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Event::ExtinctBy(t) => format!("extinct_by({t})"),
            Event::ExplodedBy(t) => format!("exploded_by({t})"),
            Event::PassageBelow { level, t } => format!("passage_below({level}, {t})"),
            Event::PassageAbove { level, t } => format!("passage_above({level}, {t})"),
        }
    }
}

pub fn estimate_event_prob(
    model: &ModelSpec,
    x0: f64,
    cfg: &SimConfig,
    event: Event,
    n_paths: usize,
) -> Result<MCEstimate> {
    if n_paths < 100 {
        return invalid(format!("n_paths = {n_paths} must be at least 100"));
    }
    check_start(x0)?;
    let sim = Simulator::new(model, cfg)?;
    let hits = par::map_indexed(n_paths, |i| sim.event_occurs(x0, event, i as u64));
    Ok(MCEstimate::from_bernoulli(
        hits.iter().filter(|&&h| h).count(),
        n_paths,
        cfg.conf_level,
    ))
}

/// `X_t` for paths `0..n_paths`, in path order.
pub fn sample_states(
    model: &ModelSpec,
    x0: f64,
    cfg: &SimConfig,
    t: f64,
    n_paths: usize,
) -> Result<Vec<f64>> {
    let sim = Simulator::new(model, cfg)?;
    check_start(x0)?;
    let out = par::map_indexed(n_paths, |i| {
        sim.observe(x0, i as u64, &[t]).map(|(v, _)| v[0])
    });
    out.into_iter().collect()
}

/// Monte Carlo estimate of `E f(X_t)`.
pub fn estimate_mean(
    model: &ModelSpec,
    x0: f64,
    cfg: &SimConfig,
    t: f64,
    n_paths: usize,
    f: impl Fn(f64) -> f64,
) -> Result<MCEstimate> {
    let xs: Vec<f64> = sample_states(model, x0, cfg, t, n_paths)?
        .into_iter()
        .map(f)
        .collect();
    Ok(MCEstimate::from_samples(&xs, cfg.conf_level))
}

/// Mean absolute terminal gaps between successive step-size halvings.
///
/// All resolutions share one set of Brownian increments on the finest grid
/// and one Poisson random measure on `time × jump size × [0, ∞)`; a point
/// `(t, z, v)` is a jump when `v < b2(s) γ2(X_s)` at the left end `s` of
/// the step containing `t`. Returns `levels` gaps from `levels + 1` step sizes.
pub fn strong_refinement_gap(
    model: &ModelSpec,
    x0: f64,
    cfg: &SimConfig,
    levels: usize,
    n_paths: usize,
) -> Result<Vec<f64>> {
    if levels < 2 {
        return invalid("refinement needs at least 2 levels");
    }
    if levels > 20 {
        return invalid("refinement levels above 20 are not supported");
    }
    check_start(x0)?;
    cfg.validate()?;
    let jumps = JumpPart::new(model, cfg)?;
    let span = cfg.t_end - cfg.t_start;
    let coarse_steps = (span / cfg.dt).round().max(1.0) as usize;
    let fine_per_coarse = 1usize << levels;
    let fine_steps = coarse_steps * fine_per_coarse;
    let dt_fine = span / fine_steps as f64;

    let per_path = par::map_indexed(n_paths, |i| {
        let stream = i as u64;
        let mut bm = sub_rng(cfg.master_seed, stream, 0);
        let xi: Vec<f64> = (0..fine_steps).map(|_| std_normal(&mut bm)).collect();
        let eta: Vec<f64> = if cfg.small_jump_mode == SmallJumpMode::Gaussian {
            let mut r = sub_rng(cfg.master_seed, stream, 1);
            (0..fine_steps).map(|_| std_normal(&mut r)).collect()
        } else {
            Vec::new()
        };
        let mut prm =
            PoissonLayers::new(cfg.master_seed, stream, cfg.t_start, span, jumps.as_ref());
        let terminal: Vec<f64> = (0..=levels)
            .map(|r| {
                let block = fine_per_coarse >> r;
                let steps = fine_steps / block;
                let dt = dt_fine * block as f64;
                let mut x = x0;
                let mut dead = false;
                for k in 0..steps {
                    if dead {
                        break;
                    }
                    let s = cfg.t_start + k as f64 * dt;
                    let t_next = cfg.t_start + (k + 1) as f64 * dt;
                    let dw: f64 =
                        xi[k * block..(k + 1) * block].iter().sum::<f64>() * dt_fine.sqrt();
                    let mut next = x + model.gamma0(s, x) * dt;
                    let g1 = model.gamma1(x);
                    if g1 > 0.0 {
                        next += (2.0 * g1 * model.b1(s)).sqrt() * dw;
                    }
                    if let Some(j) = &jumps {
                        let intensity = model.b2(s) * model.gamma2(x);
                        if intensity > 0.0 {
                            next -= intensity * j.moments.mean_large * dt;
                            next += prm.jump_sum(s, t_next, intensity);
                            if !eta.is_empty() {
                                let de: f64 = eta[k * block..(k + 1) * block].iter().sum::<f64>()
                                    * dt_fine.sqrt();
                                next += (intensity * j.moments.sigma2_small).sqrt() * de;
                            }
                        }
                    }
                    if next >= cfg.x_explode || next.is_nan() {
                        x = cfg.x_explode;
                        dead = true;
                    } else if next <= cfg.x_absorb {
                        x = 0.0;
                        dead = true;
                    } else {
                        x = next;
                    }
                }
                x
            })
            .collect();
        terminal
            .windows(2)
            .map(|w| (w[0] - w[1]).abs())
            .collect::<Vec<f64>>()
    });
    let mut gaps = vec![0.0; levels];
    for g in &per_path {
        for (acc, v) in gaps.iter_mut().zip(g) {
            *acc += v;
        }
    }
    Ok(gaps.into_iter().map(|g| g / n_paths as f64).collect())
}

/// Points of a Poisson random measure with intensity `dt μ|_(eps,∞)(dz) dv`,
/// generated in unit layers of `v` on demand.
struct PoissonLayers<'j> {
    seed: u64,
    stream: u64,
    t0: f64,
    span: f64,
    jumps: Option<&'j JumpPart>,
    covered: f64,
    points: Vec<(f64, f64, f64)>,
}

impl<'j> PoissonLayers<'j> {
    fn new(seed: u64, stream: u64, t0: f64, span: f64, jumps: Option<&'j JumpPart>) -> Self {
        Self {
            seed,
            stream,
            t0,
            span,
            jumps,
            covered: 0.0,
            points: Vec::new(),
        }
    }

    fn cover(&mut self, height: f64) {
        let Some(j) = self.jumps else { return };
        let Some(sampler) = &j.sampler else { return };
        let mut added = false;
        while self.covered < height {
            let layer = self.covered as u64;
            let mut rng = sub_rng(self.seed, self.stream, 2 + layer);
            let n = poisson(&mut rng, self.span * j.moments.mass_large);
            for _ in 0..n {
                let t = self.t0 + self.span * uniform(&mut rng);
                let z = sampler.sample(&mut rng);
                let v = layer as f64 + uniform(&mut rng);
                self.points.push((t, z, v));
            }
            self.covered += 1.0;
            added = true;
        }
        if added {
            self.points.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
    }

    /// Sum of jump sizes with times in `(s, t]` and marks below `height`.
    fn jump_sum(&mut self, s: f64, t: f64, height: f64) -> f64 {
        self.cover(height);
        let lo = self.points.partition_point(|p| p.0 <= s);
        let hi = self.points.partition_point(|p| p.0 <= t);
        self.points[lo..hi]
            .iter()
            .filter(|p| p.2 < height)
            .map(|p| p.1)
            .sum()
    }
}
