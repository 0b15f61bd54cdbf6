//! Experiment configs, task dispatch and run manifests.
//!
//! A config is a sectioned `key = value` text with the sections `[model]`,
//! `[sim]`, `[task]` and `[output]`. Results are computed in memory first
//! and written only when the whole task succeeded.

use std::fmt;
use std::fs;
use std::path::{Path as FsPath, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coupling::{
    build_certificate_b1, build_certificate_b2, check_lyapunov, estimate_b1_constants,
    estimate_b2_constants, estimate_wv_bound, fit_contraction_rate, simulate_coupled, B1Constants,
    B2Constants, CertificateGrid, ContractionFit, LyapunovPair, WeightedMetric, WvBound,
};
use crate::criteria::{
    check_as_extinction, check_explosion_possible, check_extinction_possible, check_nonexplosion,
    check_nonextinction, check_passage_conditions, check_t33_side_conditions, Branch,
    CriterionReport, DSpec, ScanGrid,
};
use crate::error::Error;
use crate::expr::Expr;
use crate::levy::{Atom, Density, LevyMeasure};
use crate::meanfield::{
    reduce_to_model, simulate_closed_form, simulate_self_consistent, MeanFieldParams,
};
use crate::model::{ModelSpec, SmoothProbe};
use crate::simulate::{
    estimate_event_prob, simulate_path, strong_refinement_gap, Event, MCEstimate, SimConfig,
};

pub const MANIFEST_FILE: &str = "manifest.json";

/// One problem found in a config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    /// Dotted path of the offending key, e.g. `sim.dt`.
    pub key: String,
    pub message: String,
}

impl Diagnostic {
    fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

/// Jump measure declared in `[model.mu]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MuConfig {
    None,
    Exponential {
        intensity: f64,
        rate: f64,
    },
    Power {
        alpha: f64,
        zmax: f64,
    },
    Tempered {
        alpha: f64,
        lambda: f64,
    },
    Atoms {
        locations: Vec<f64>,
        masses: Vec<f64>,
    },
    /// A density `m(z)` written in the variable `x`, supported on `(lo, hi)`.
    Density {
        density: String,
        #[serde(default)]
        lo: f64,
        #[serde(default = "infinity")]
        hi: f64,
        #[serde(default)]
        power_hint: Option<f64>,
    },
}

fn infinity() -> f64 {
    f64::INFINITY
}

impl MuConfig {
    pub fn build(&self) -> crate::Result<LevyMeasure> {
        match self {
            MuConfig::None => Ok(LevyMeasure::none()),
            MuConfig::Exponential { intensity, rate } => {
                LevyMeasure::exponential(*intensity, *rate)
            }
            MuConfig::Power { alpha, zmax } => LevyMeasure::power(*alpha, *zmax),
            MuConfig::Tempered { alpha, lambda } => LevyMeasure::tempered(*alpha, *lambda),
            MuConfig::Atoms { locations, masses } => {
                if locations.len() != masses.len() {
                    return Err(Error::InvalidParameter(
                        "atom locations and masses differ in length".into(),
                    ));
                }
                let atoms = locations
                    .iter()
                    .zip(masses)
                    .map(|(&location, &mass)| Atom { location, mass })
                    .collect();
                LevyMeasure::atomic(atoms)
            }
            MuConfig::Density {
                density,
                lo,
                hi,
                power_hint,
            } => {
                let e = Expr::parse(density)?;
                let mut d = Density::new(move |z| e.eval(0.0, z), *lo, *hi)?;
                if let Some(a) = power_hint {
                    d = d.with_power_hint(*a)?;
                }
                LevyMeasure::from_density(d).map(|m| m.labelled(format!("density({density})")))
            }
        }
    }

    fn is_atomic(&self) -> bool {
        matches!(self, MuConfig::Atoms { .. })
    }
}

/// `[model]`: a builtin such as `logistic(1, 1, 0)` or expression coefficients.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub builtin: Option<String>,
    pub gamma0: Option<String>,
    pub gamma1: Option<String>,
    pub gamma2: Option<String>,
    pub b0: Option<String>,
    pub b1: Option<String>,
    pub b2: Option<String>,
    /// Weight `V(x)`; derivatives by central differences.
    pub weight: Option<String>,
    pub mu: Option<MuConfig>,
}

const BUILTINS: [&str; 3] = ["cb", "logistic", "meanfield_reduced"];

/// Splits `name(a, b, ...)` into the name and its numeric arguments.
fn parse_call(src: &str) -> Result<(String, Vec<f64>), String> {
    let src = src.trim();
    let (name, rest) = match src.find('(') {
        Some(i) => (&src[..i], &src[i + 1..]),
        None => return Ok((src.to_string(), Vec::new())),
    };
    let inner = rest
        .strip_suffix(')')
        .ok_or_else(|| format!("missing `)` in `{src}`"))?;
    let args = if inner.trim().is_empty() {
        Vec::new()
    } else {
        inner
            .split(',')
            .map(|a| {
                a.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("argument `{}` is not a number", a.trim()))
            })
            .collect::<Result<_, _>>()?
    };
    Ok((name.trim().to_string(), args))
}

impl ModelConfig {
    fn coefficients(&self) -> [(&'static str, &Option<String>); 6] {
        [
            ("gamma0", &self.gamma0),
            ("gamma1", &self.gamma1),
            ("gamma2", &self.gamma2),
            ("b0", &self.b0),
            ("b1", &self.b1),
            ("b2", &self.b2),
        ]
    }

    fn diagnostics(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        if let Some(b) = &self.builtin {
            match parse_call(b) {
                Err(e) => out.push(Diagnostic::new("model.builtin", e)),
                Ok((name, args)) => {
                    let arity = match name.as_str() {
                        "cb" => Some(1),
                        "logistic" => Some(3),
                        "meanfield_reduced" => Some(4),
                        _ => None,
                    };
                    match arity {
                        None => out.push(Diagnostic::new(
                            "model.builtin",
                            format!(
                                "unknown model `{name}`; expected one of {}",
                                BUILTINS.join(", ")
                            ),
                        )),
                        Some(n) if n != args.len() => out.push(Diagnostic::new(
                            "model.builtin",
                            format!("`{name}` takes {n} arguments, got {}", args.len()),
                        )),
                        _ => {}
                    }
                    if name == "meanfield_reduced" && self.mu.is_some() {
                        out.push(Diagnostic::new(
                            "model.mu",
                            "meanfield_reduced has no jump part",
                        ));
                    }
                }
            }
            for (key, v) in self.coefficients() {
                if v.is_some() {
                    out.push(Diagnostic::new(
                        format!("model.{key}"),
                        "coefficients cannot be combined with a builtin",
                    ));
                }
            }
        }
        for (key, v) in self
            .coefficients()
            .into_iter()
            .chain([("weight", &self.weight)])
        {
            let Some(src) = v else { continue };
            match Expr::parse(src) {
                Err(e) => out.push(Diagnostic::new(format!("model.{key}"), e.to_string())),
                Ok(e) => {
                    let time_only = key.starts_with('b');
                    if time_only && e.uses_x() {
                        out.push(Diagnostic::new(
                            format!("model.{key}"),
                            "time modulation may only use `s`",
                        ));
                    }
                    if !time_only && key != "gamma0" && e.uses_s() {
                        out.push(Diagnostic::new(
                            format!("model.{key}"),
                            "state coefficient may only use `x`",
                        ));
                    }
                }
            }
        }
        if self.gamma2.is_some() != self.mu.as_ref().is_some_and(|m| *m != MuConfig::None)
            && self.builtin.is_none()
        {
            out.push(Diagnostic::new(
                "model.mu",
                "gamma2 and a jump measure must be given together",
            ));
        }
        if let Some(mu) = &self.mu {
            if let Err(e) = mu.build() {
                out.push(Diagnostic::new("model.mu", e.to_string()));
            }
        }
        out
    }

    pub fn build(&self) -> crate::Result<ModelSpec> {
        let mu = self
            .mu
            .as_ref()
            .map(MuConfig::build)
            .transpose()?
            .unwrap_or_else(LevyMeasure::none);
        let mut model = if let Some(b) = &self.builtin {
            let (name, a) = parse_call(b).map_err(Error::InvalidParameter)?;
            match (name.as_str(), a.as_slice()) {
                ("cb", [b]) => ModelSpec::cb(*b, mu)?,
                ("logistic", [a1, a0, theta]) => ModelSpec::logistic(*a1, *a0, *theta, mu)?,
                ("meanfield_reduced", [a, b, at, z0]) => reduce_to_model(&MeanFieldParams {
                    z0: *z0,
                    a: *a,
                    b: *b,
                    a_tilde: *at,
                })?,
                _ => return Err(Error::InvalidParameter(format!("unknown builtin `{b}`"))),
            }
        } else {
            let parse = |v: &Option<String>| v.as_deref().map(Expr::parse).transpose();
            let mut bld = ModelSpec::builder().name("custom");
            if let Some(e) = parse(&self.gamma0)? {
                bld = bld.gamma0(move |s, x| e.eval(s, x));
            }
            if let Some(e) = parse(&self.gamma1)? {
                bld = bld.gamma1(move |x| e.eval(0.0, x));
            }
            if let Some(e) = parse(&self.gamma2)? {
                bld = bld.gamma2(move |x| e.eval(0.0, x)).mu(mu);
            }
            if let Some(e) = parse(&self.b0)? {
                bld = bld.b0(move |s| e.eval(s, 0.0));
            }
            if let Some(e) = parse(&self.b1)? {
                bld = bld.b1(move |s| e.eval(s, 0.0));
            }
            if let Some(e) = parse(&self.b2)? {
                bld = bld.b2(move |s| e.eval(s, 0.0));
            }
            bld.build()?
        };
        if let Some(w) = &self.weight {
            let e = Expr::parse(w)?;
            model = model
                .to_builder()
                .weight(SmoothProbe::numeric(move |x| e.eval(0.0, x)))
                .build()?;
        }
        Ok(model)
    }

    fn is_atomic(&self) -> bool {
        self.mu.as_ref().is_some_and(MuConfig::is_atomic)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ExtinctBy,
    ExplodedBy,
    PassageBelow,
    PassageAbove,
}

/// One criterion scan in `[[task.checks]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckConfig {
    Nonextinction {
        t: f64,
        c0: f64,
    },
    Nonexplosion {
        t: f64,
        c1: f64,
    },
    ExtinctionPossible {
        t0: f64,
        delta: f64,
        delta0: f64,
        c0: f64,
        d: DSpec,
    },
    ExplosionPossible {
        t0: f64,
        delta: f64,
        delta0: f64,
        c0: f64,
        d: DSpec,
    },
    AsExtinction {
        rho: f64,
        d: DSpec,
        b_caps: Vec<f64>,
    },
    Passage {
        a: f64,
        b: f64,
        t0: f64,
    },
    PassageSide {
        x0: f64,
        a: f64,
        b: f64,
        t0: f64,
        branch: Branch,
    },
}

fn default_one() -> usize {
    1
}

fn default_true() -> bool {
    true
}

/// `[task]`, selected by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    Simulate {
        x0: f64,
        #[serde(default = "default_one")]
        n_paths: usize,
    },
    EventProb {
        x0: f64,
        event: EventKind,
        t: f64,
        #[serde(default)]
        level: Option<f64>,
        n_paths: usize,
    },
    Criteria {
        #[serde(default)]
        grid: ScanGrid,
        checks: Vec<CheckConfig>,
    },
    Coupling {
        x0: f64,
        y0: f64,
        #[serde(default)]
        s_start: f64,
        t_grid: Vec<f64>,
        n_paths: usize,
        /// Use the model weight in `d_V`; otherwise `V ≡ 0`.
        #[serde(default = "default_true")]
        weighted: bool,
    },
    Certificate {
        case: CertCase,
        l: f64,
        #[serde(default)]
        b1: Option<B1Constants>,
        #[serde(default)]
        b2: Option<B2Constants>,
        #[serde(default)]
        x0_jump: Option<f64>,
        #[serde(default)]
        theta: Option<f64>,
        /// Overlap radius used when the jump constants are estimated.
        #[serde(default)]
        c0_jump: Option<f64>,
        lambda1: f64,
        /// Taken from the grid check of the Lyapunov condition when absent.
        #[serde(default)]
        lambda2: Option<f64>,
        #[serde(default)]
        grid: CertificateGrid,
    },
    Meanfield {
        #[serde(default)]
        params: MeanFieldParams,
        n_paths: usize,
        /// Picard iterations on the empirical mean; the closed-form clock is used when absent.
        #[serde(default)]
        picard_iters: Option<usize>,
    },
    Refinement {
        x0: f64,
        levels: usize,
        n_paths: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertCase {
    B1,
    B2,
}

impl TaskConfig {
    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::Simulate { .. } => "simulate",
            TaskConfig::EventProb { .. } => "event_prob",
            TaskConfig::Criteria { .. } => "criteria",
            TaskConfig::Coupling { .. } => "coupling",
            TaskConfig::Certificate { .. } => "certificate",
            TaskConfig::Meanfield { .. } => "meanfield",
            TaskConfig::Refinement { .. } => "refinement",
        }
    }

    fn n_paths_mut(&mut self) -> Option<&mut usize> {
        match self {
            TaskConfig::Simulate { n_paths, .. }
            | TaskConfig::EventProb { n_paths, .. }
            | TaskConfig::Coupling { n_paths, .. }
            | TaskConfig::Meanfield { n_paths, .. }
            | TaskConfig::Refinement { n_paths, .. } => Some(n_paths),
            TaskConfig::Criteria { .. } | TaskConfig::Certificate { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    sim: toml::Table,
    task: TaskConfig,
    #[serde(default)]
    output: OutputConfig,
}

/// A parsed experiment. `master_seed` is kept optional so that its absence
/// can be reported rather than defaulted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub sim: SimConfig,
    pub master_seed: Option<u64>,
    pub task: TaskConfig,
    pub output: OutputConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Overrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses a config text. Syntax and type errors come back as diagnostics.
    pub fn parse(text: &str) -> Result<Self, Vec<Diagnostic>> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            vec![Diagnostic::new("config", msg)]
        })?;
        let mut sim_table = raw.sim;
        let master_seed = match sim_table.remove("master_seed") {
            None => None,
            Some(toml::Value::Integer(v)) if v >= 0 => Some(v as u64),
            Some(v) => {
                return Err(vec![Diagnostic::new(
                    "sim.master_seed",
                    format!("`{v}` is not a non-negative integer"),
                )])
            }
        };
        let sim: SimConfig = toml::Value::Table(sim_table)
            .try_into()
            .map_err(|e: toml::de::Error| vec![Diagnostic::new("sim", e.message().to_string())])?;
        Ok(Self {
            model: raw.model,
            sim: SimConfig {
                master_seed: master_seed.unwrap_or(0),
                ..sim
            },
            master_seed,
            task: raw.task,
            output: raw.output,
        })
    }

    pub fn from_file(path: &FsPath) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(HarnessError::Config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.master_seed = Some(seed);
            self.sim.master_seed = seed;
        }
        if let Some(dt) = o.dt {
            self.sim.dt = dt;
        }
        if let (Some(p), Some(n)) = (o.paths, self.task.n_paths_mut()) {
            *n = p;
        }
        if let Some(out) = &o.out {
            self.output.dir = out.clone();
        }
    }

    /// SHA-256 of the effective config serialised as JSON, output location excluded.
    pub fn hash(&self) -> String {
        let key = (&self.model, &self.sim, self.master_seed, &self.task);
        let json = serde_json::to_string(&key).expect("config serialises");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Every violation found in a parsed config; empty when it can run.
pub fn validate(cfg: &ExperimentConfig) -> Vec<Diagnostic> {
    let mut out = cfg.model.diagnostics();
    let meanfield = matches!(cfg.task, TaskConfig::Meanfield { .. });
    if !meanfield
        && cfg.model.builtin.is_none()
        && cfg.model.coefficients().iter().all(|(_, v)| v.is_none())
    {
        out.push(Diagnostic::new(
            "model",
            "no builtin and no coefficients given",
        ));
    }
    if cfg.master_seed.is_none() {
        out.push(Diagnostic::new(
            "sim.master_seed",
            "master_seed is required",
        ));
    }
    let s = &cfg.sim;
    if !(s.dt > 0.0 && s.dt.is_finite()) {
        out.push(Diagnostic::new(
            "sim.dt",
            format!("dt = {} must be positive", s.dt),
        ));
    }
    if !(s.eps_jump > 0.0 && s.eps_jump.is_finite()) {
        out.push(Diagnostic::new(
            "sim.eps_jump",
            format!("eps_jump = {} must be positive", s.eps_jump),
        ));
    }
    if !(s.x_absorb > 0.0 && s.x_absorb < s.x_explode) {
        out.push(Diagnostic::new(
            "sim.x_absorb",
            "thresholds must satisfy 0 < x_absorb < x_explode",
        ));
    }
    if !(s.t_end > s.t_start && s.t_start >= 0.0 && s.t_end.is_finite()) {
        out.push(Diagnostic::new(
            "sim.t_end",
            "horizon must satisfy 0 <= t_start < t_end < inf",
        ));
    }
    if !(s.conf_level > 0.0 && s.conf_level < 1.0) {
        out.push(Diagnostic::new(
            "sim.conf_level",
            "conf_level must lie in (0, 1)",
        ));
    }
    let positive = |out: &mut Vec<Diagnostic>, key: &str, v: f64| {
        if !(v > 0.0 && v.is_finite()) {
            out.push(Diagnostic::new(
                format!("task.{key}"),
                format!("{key} = {v} must be positive"),
            ));
        }
    };
    match &cfg.task {
        TaskConfig::Simulate { x0, n_paths } => {
            positive(&mut out, "x0", *x0);
            if *n_paths == 0 {
                out.push(Diagnostic::new(
                    "task.n_paths",
                    "at least one path is needed",
                ));
            }
        }
        TaskConfig::EventProb {
            x0,
            event,
            level,
            n_paths,
            ..
        } => {
            positive(&mut out, "x0", *x0);
            let needs_level = matches!(event, EventKind::PassageBelow | EventKind::PassageAbove);
            if needs_level != level.is_some() {
                out.push(Diagnostic::new(
                    "task.level",
                    "level is required exactly for passage events",
                ));
            }
            if *n_paths < 100 {
                out.push(Diagnostic::new(
                    "task.n_paths",
                    "at least 100 paths are needed",
                ));
            }
        }
        TaskConfig::Criteria { checks, .. } => {
            if checks.is_empty() {
                out.push(Diagnostic::new("task.checks", "no checks listed"));
            }
            for (i, c) in checks.iter().enumerate() {
                let d = match c {
                    CheckConfig::AsExtinction { d, .. } => Some(d),
                    _ => None,
                };
                if let Some(d) = d {
                    if d.integral_diverges().is_none() {
                        out.push(Diagnostic::new(
                            format!("task.checks[{i}].d"),
                            "d needs a declaration of whether its integral diverges",
                        ));
                    }
                }
            }
        }
        TaskConfig::Coupling {
            x0,
            y0,
            s_start,
            t_grid,
            n_paths,
            weighted,
        } => {
            positive(&mut out, "x0", *x0);
            positive(&mut out, "y0", *y0);
            if cfg.model.is_atomic() {
                out.push(Diagnostic::new(
                    "model.mu",
                    "the coupling task needs an absolutely continuous jump measure (density kind)",
                ));
            }
            if t_grid.is_empty()
                || !(t_grid[0] > *s_start)
                || t_grid.windows(2).any(|w| !(w[1] > w[0]))
            {
                out.push(Diagnostic::new(
                    "task.t_grid",
                    "t_grid must be increasing and start after s_start",
                ));
            }
            if *n_paths < 2 {
                out.push(Diagnostic::new(
                    "task.n_paths",
                    "at least two coupled paths are needed",
                ));
            }
            if *weighted && cfg.model.weight.is_none() && cfg.model.builtin.is_none() {
                out.push(Diagnostic::new(
                    "model.weight",
                    "a weighted distance needs model.weight",
                ));
            }
        }
        TaskConfig::Certificate {
            case,
            l,
            x0_jump,
            c0_jump,
            b2,
            lambda1,
            ..
        } => {
            if !(*l > 1.0) {
                out.push(Diagnostic::new("task.l", "l must exceed 1"));
            }
            positive(&mut out, "lambda1", *lambda1);
            if cfg.model.weight.is_none() && cfg.model.builtin.is_none() {
                out.push(Diagnostic::new(
                    "model.weight",
                    "certificate checks need model.weight",
                ));
            }
            if *case == CertCase::B2 {
                if x0_jump.is_none() {
                    out.push(Diagnostic::new(
                        "task.x0_jump",
                        "x0_jump is required for the jump case",
                    ));
                }
                if b2.is_none() && c0_jump.is_none() {
                    out.push(Diagnostic::new(
                        "task.c0_jump",
                        "c0_jump is required to estimate the jump constants",
                    ));
                }
                if cfg.model.is_atomic() {
                    out.push(Diagnostic::new(
                        "model.mu",
                        "the jump certificate needs a density-kind measure",
                    ));
                }
            }
        }
        TaskConfig::Meanfield {
            params,
            n_paths,
            picard_iters,
        } => {
            if let Err(e) = params.validate() {
                out.push(Diagnostic::new("task.params", e.to_string()));
            }
            if *n_paths < 2 {
                out.push(Diagnostic::new(
                    "task.n_paths",
                    "at least two paths are needed",
                ));
            }
            if *picard_iters == Some(0) {
                out.push(Diagnostic::new(
                    "task.picard_iters",
                    "picard_iters must be at least 1",
                ));
            }
            if s.t_start != 0.0 {
                out.push(Diagnostic::new(
                    "sim.t_start",
                    "mean-field runs start at t = 0",
                ));
            }
        }
        TaskConfig::Refinement {
            x0,
            levels,
            n_paths,
        } => {
            positive(&mut out, "x0", *x0);
            if !(2..=20).contains(levels) {
                out.push(Diagnostic::new("task.levels", "levels must lie in 2..=20"));
            }
            if *n_paths == 0 {
                out.push(Diagnostic::new(
                    "task.n_paths",
                    "at least one path is needed",
                ));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum HarnessError {
    Config(Vec<Diagnostic>),
    Numerical(Error),
    Io(String),
}

impl HarnessError {
    /// `2` for config errors, `3` for numerical failures, `1` for I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Numerical(_) => 3,
            HarnessError::Io(_) => 1,
        }
    }
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Config(ds) => {
                writeln!(f, "invalid config:")?;
                for d in ds {
                    writeln!(f, "  {d}")?;
                }
                Ok(())
            }
            HarnessError::Numerical(e) => write!(f, "numerical failure: {e}"),
            HarnessError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<Error> for HarnessError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::Expr(_) | Error::UnsupportedMeasure(_) => {
                HarnessError::Config(vec![Diagnostic::new("config", e.to_string())])
            }
            other => HarnessError::Numerical(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub task: String,
    pub config_hash: String,
    pub overrides: Overrides,
    pub wall_time_s: f64,
    /// Files in the output directory, including the manifest itself.
    pub files: Vec<String>,
}

/// Named file contents produced by a task.
pub type Outputs = Vec<(String, String)>;

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serialises");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct EventReport {
    x0: f64,
    event: EventKind,
    t: f64,
    level: Option<f64>,
    estimate: MCEstimate,
    ci: (f64, f64),
}

#[derive(Serialize)]
struct CouplingReport<'a> {
    x0: f64,
    y0: f64,
    s_start: f64,
    weighted: bool,
    bound: &'a WvBound,
    fit: Option<ContractionFit>,
    fit_error: Option<String>,
}

#[derive(Serialize)]
struct MeanfieldReport {
    params: MeanFieldParams,
    mode: &'static str,
    n_paths: usize,
    censored: usize,
    censored_fraction: f64,
    gaps: Vec<f64>,
    fixed_point_gap: Option<f64>,
}

#[derive(Serialize)]
struct RefinementReport {
    x0: f64,
    dt: Vec<f64>,
    gaps: Vec<f64>,
}

fn wv_csv(w: &WvBound) -> String {
    let mut out = String::from("t,mean,stderr,uncoupled\n");
    for ((t, e), u) in w.times.iter().zip(&w.estimates).zip(&w.uncoupled) {
        out.push_str(&format!("{t},{},{},{u}\n", e.mean, e.stderr));
    }
    out
}

fn run_check(
    model: &ModelSpec,
    c: &CheckConfig,
    grid: &ScanGrid,
) -> crate::Result<CriterionReport> {
    match c {
        CheckConfig::Nonextinction { t, c0 } => check_nonextinction(model, *t, *c0, grid),
        CheckConfig::Nonexplosion { t, c1 } => check_nonexplosion(model, *t, *c1, grid),
        CheckConfig::ExtinctionPossible {
            t0,
            delta,
            delta0,
            c0,
            d,
        } => check_extinction_possible(model, *t0, *delta, *delta0, *c0, d, grid),
        CheckConfig::ExplosionPossible {
            t0,
            delta,
            delta0,
            c0,
            d,
        } => check_explosion_possible(model, *t0, *delta, *delta0, *c0, d, grid),
        CheckConfig::AsExtinction { rho, d, b_caps } => {
            check_as_extinction(model, *rho, d, b_caps, grid)
        }
        CheckConfig::Passage { a, b, t0 } => check_passage_conditions(model, *a, *b, *t0, grid),
        CheckConfig::PassageSide {
            x0,
            a,
            b,
            t0,
            branch,
        } => check_t33_side_conditions(model, *x0, *a, *b, *t0, *branch, grid),
    }
}

/// Runs the task and returns its files without touching the disk.
pub fn compute(cfg: &ExperimentConfig) -> Result<Outputs, HarnessError> {
    let diags = validate(cfg);
    if !diags.is_empty() {
        return Err(HarnessError::Config(diags));
    }
    let sim = &cfg.sim;
    let mut files = Outputs::new();
    if let TaskConfig::Meanfield {
        params,
        n_paths,
        picard_iters,
    } = &cfg.task
    {
        let (curve, report) = match picard_iters {
            None => {
                let c = simulate_closed_form(params, sim, *n_paths)?;
                let r = MeanfieldReport {
                    params: *params,
                    mode: "closed_form",
                    n_paths: *n_paths,
                    censored: c.censored,
                    censored_fraction: c.censored_fraction(),
                    gaps: Vec::new(),
                    fixed_point_gap: None,
                };
                (c, r)
            }
            Some(k) => {
                let run = simulate_self_consistent(params, sim, *n_paths, *k)?;
                let r = MeanfieldReport {
                    params: *params,
                    mode: "picard",
                    n_paths: *n_paths,
                    censored: run.curve.censored,
                    censored_fraction: run.curve.censored_fraction(),
                    gaps: run.gaps.clone(),
                    fixed_point_gap: Some(run.fixed_point_gap),
                };
                (run.curve, r)
            }
        };
        files.push(("mean_curve.csv".into(), curve.to_csv()));
        files.push(("meanfield.json".into(), json(&report)));
        return Ok(files);
    }
    let model = cfg.model.build()?;
    match &cfg.task {
        TaskConfig::Simulate { x0, n_paths } => {
            for i in 0..*n_paths {
                let p = simulate_path(&model, *x0, sim, i as u64)?;
                let name = if *n_paths == 1 {
                    "path.csv".to_string()
                } else {
                    format!("path_{i}.csv")
                };
                files.push((name, p.to_csv()));
            }
        }
        TaskConfig::EventProb {
            x0,
            event,
            t,
            level,
            n_paths,
        } => {
            let ev = match (event, level) {
                (EventKind::ExtinctBy, _) => Event::ExtinctBy(*t),
                (EventKind::ExplodedBy, _) => Event::ExplodedBy(*t),
                (EventKind::PassageBelow, Some(l)) => Event::PassageBelow { level: *l, t: *t },
                (EventKind::PassageAbove, Some(l)) => Event::PassageAbove { level: *l, t: *t },
                _ => unreachable!("validated"),
            };
            let sim = SimConfig {
                t_end: sim.t_end.max(*t),
                ..sim.clone()
            };
            let estimate = estimate_event_prob(&model, *x0, &sim, ev, *n_paths)?;
            let r = EventReport {
                x0: *x0,
                event: *event,
                t: *t,
                level: *level,
                ci: estimate.ci(),
                estimate,
            };
            files.push(("event_prob.json".into(), json(&r)));
        }
        TaskConfig::Criteria { grid, checks } => {
            let reports = checks
                .iter()
                .map(|c| run_check(&model, c, grid))
                .collect::<crate::Result<Vec<_>>>()?;
            files.push(("criteria.json".into(), json(&reports)));
        }
        TaskConfig::Coupling {
            x0,
            y0,
            s_start,
            t_grid,
            n_paths,
            weighted,
        } => {
            let metric = if *weighted {
                WeightedMetric::from_model(&model)
            } else {
                WeightedMetric::zero()
            };
            let w = estimate_wv_bound(&model, *x0, *y0, *s_start, t_grid, *n_paths, &metric, sim)?;
            let means: Vec<f64> = w.estimates.iter().map(|e| e.mean).collect();
            let (fit, fit_error) =
                match fit_contraction_rate(t_grid, &means, &|s| model.b0(s), *s_start) {
                    Ok(f) => (Some(f), None),
                    Err(e) => (None, Some(e.to_string())),
                };
            let horizon = *t_grid.last().expect("validated");
            let path = simulate_coupled(
                &model,
                *x0,
                *y0,
                *s_start,
                &SimConfig {
                    t_end: horizon,
                    ..sim.clone()
                },
                0,
            )?;
            files.push(("wv_bound.csv".into(), wv_csv(&w)));
            files.push(("coupled_path.csv".into(), path.to_csv()));
            let r = CouplingReport {
                x0: *x0,
                y0: *y0,
                s_start: *s_start,
                weighted: *weighted,
                bound: &w,
                fit,
                fit_error,
            };
            files.push(("coupling.json".into(), json(&r)));
        }
        TaskConfig::Certificate {
            case,
            l,
            b1,
            b2,
            x0_jump,
            theta,
            c0_jump,
            lambda1,
            lambda2,
            grid,
        } => {
            let cert = match case {
                CertCase::B1 => {
                    let k = match b1 {
                        Some(k) => *k,
                        None => estimate_b1_constants(&model, *l, grid)?,
                    };
                    build_certificate_b1(&model, *l, &k)?
                }
                CertCase::B2 => {
                    let k = match b2 {
                        Some(k) => *k,
                        None => {
                            estimate_b2_constants(&model, *l, c0_jump.expect("validated"), grid)?
                        }
                    };
                    build_certificate_b2(&model, *l, x0_jump.expect("validated"), *theta, &k)?
                }
            };
            let lambda2 = match lambda2 {
                Some(v) => *v,
                None => {
                    let v = model.weight().cloned().ok_or_else(|| {
                        Error::InvalidParameter("certificate checks need a weight".into())
                    })?;
                    check_lyapunov(&model, &v, *lambda1, &grid.lyapunov)?
                        .lambda2
                        .max(0.0)
                }
            };
            let report = crate::coupling::verify_certificate(
                &model,
                &cert,
                LyapunovPair {
                    lambda1: *lambda1,
                    lambda2,
                },
                grid,
            )?;
            files.push(("certificate.json".into(), json(&report)));
        }
        TaskConfig::Refinement {
            x0,
            levels,
            n_paths,
        } => {
            let gaps = strong_refinement_gap(&model, *x0, sim, *levels, *n_paths)?;
            let dt = (0..=*levels).map(|k| sim.dt / (1u64 << k) as f64).collect();
            files.push((
                "refinement.json".into(),
                json(&RefinementReport { x0: *x0, dt, gaps }),
            ));
        }
        TaskConfig::Meanfield { .. } => unreachable!("handled above"),
    }
    Ok(files)
}

/// Validates, runs the task, writes its files and the manifest into the
/// output directory, which must be empty or absent.
pub fn run(cfg: &ExperimentConfig, overrides: &Overrides) -> Result<RunManifest, HarnessError> {
    let start = Instant::now();
    let dir = &cfg.output.dir;
    let occupied = dir.is_dir() && fs::read_dir(dir).map_err(io_err(dir))?.next().is_some();
    if occupied {
        return Err(HarnessError::Config(vec![Diagnostic::new(
            "output.dir",
            format!("{} is not empty", dir.display()),
        )]));
    }
    if dir.exists() && !dir.is_dir() {
        return Err(HarnessError::Config(vec![Diagnostic::new(
            "output.dir",
            format!("{} is not a directory", dir.display()),
        )]));
    }
    let files = compute(cfg)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut names = Vec::with_capacity(files.len() + 1);
    for (name, body) in &files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
        names.push(name.clone());
    }
    names.push(MANIFEST_FILE.to_string());
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        task: cfg.task.name().to_string(),
        config_hash: cfg.hash(),
        overrides: overrides.clone(),
        wall_time_s: start.elapsed().as_secs_f64(),
        files: names,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, json(&manifest)).map_err(io_err(&path))?;
    Ok(manifest)
}

fn io_err(path: &FsPath) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io(format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_calls_parse() {
        assert_eq!(
            parse_call("logistic(1, 2.5, 0)").unwrap(),
            ("logistic".into(), vec![1.0, 2.5, 0.0])
        );
        assert_eq!(parse_call("cb").unwrap(), ("cb".into(), vec![]));
        assert!(parse_call("cb(1").is_err());
        assert!(parse_call("cb(a)").is_err());
    }

    #[test]
    fn missing_seed_is_reported() {
        let text = "[model]\nbuiltin = \"cb(1)\"\n[sim]\ndt = 0.01\n[task]\nkind = \"simulate\"\nx0 = 1.0\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        let d = validate(&cfg);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].key, "sim.master_seed");
    }

    #[test]
    fn overrides_win() {
        let text = "[model]\nbuiltin = \"cb(1)\"\n[sim]\nmaster_seed = 3\n[task]\nkind = \"refinement\"\nx0 = 1.0\nlevels = 3\nn_paths = 10\n";
        let mut cfg = ExperimentConfig::parse(text).unwrap();
        let h = cfg.hash();
        cfg.apply(&Overrides {
            seed: Some(9),
            paths: Some(20),
            dt: Some(0.5),
            out: None,
        });
        assert_eq!(cfg.sim.master_seed, 9);
        assert_eq!(cfg.sim.dt, 0.5);
        assert!(matches!(
            cfg.task,
            TaskConfig::Refinement { n_paths: 20, .. }
        ));
        assert_ne!(cfg.hash(), h);
    }
}
