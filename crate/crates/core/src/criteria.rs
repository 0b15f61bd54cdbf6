//! Grid scans for the extinction and explosion conditions.
//!
//! A scan cannot prove that a supremum is finite or that an infimum is
//! positive on an open region. Each check therefore compares the extremum on
//! the base grid with the extremum after extending the open boundary by a
//! growth factor, and reports `Inconclusive` when the two disagree.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::expr::Expr;
use crate::model::ModelSpec;
use crate::par;

const STABLE_REL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CriterionId {
    #[serde(rename = "T31_nonextinction")]
    T31Nonextinction,
    #[serde(rename = "T31_nonexplosion")]
    T31Nonexplosion,
    #[serde(rename = "T32_extinction")]
    T32Extinction,
    #[serde(rename = "T32_explosion")]
    T32Explosion,
    #[serde(rename = "T33_side_ia")]
    T33SideIa,
    #[serde(rename = "T33_side_ib")]
    T33SideIb,
    #[serde(rename = "T34_as_extinction")]
    T34AsExtinction,
    #[serde(rename = "P35_passage_i")]
    P35PassageI,
    #[serde(rename = "P35_passage_ii")]
    P35PassageIi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Satisfied,
    Violated,
    Inconclusive,
}

/// Which branch of the side conditions to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Diffusion,
    Jump,
}

/// Resolution and extent of a scan. Unset bounds default to
/// `x_lo = 1e-6 c0`, `x_hi = 1e6 c1` and `s_lo = 1e-6 t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanGrid {
    pub n_s: usize,
    pub n_x: usize,
    pub x_lo: Option<f64>,
    pub x_hi: Option<f64>,
    pub s_lo: Option<f64>,
    /// Upper end of the time range for scans over all `s > 0`.
    pub s_hi: Option<f64>,
    pub growth: f64,
}

impl Default for ScanGrid {
    fn default() -> Self {
        Self {
            n_s: 256,
            n_x: 256,
            x_lo: None,
            x_hi: None,
            s_lo: None,
            s_hi: None,
            growth: 4.0,
        }
    }
}

impl ScanGrid {
    pub fn with_resolution(mut self, n_s: usize, n_x: usize) -> Self {
        self.n_s = n_s;
        self.n_x = n_x;
        self
    }

    pub fn refined(&self) -> Self {
        let mut g = self.clone();
        g.n_s *= 2;
        g.n_x *= 2;
        g
    }

    fn validate(&self) -> Result<()> {
        if self.n_s < 16 || self.n_x < 16 {
            return invalid("scan grids need at least 16 nodes per axis");
        }
        if !(self.growth > 1.0) {
            return invalid("boundary growth factor must exceed 1");
        }
        Ok(())
    }
}

/// Log-spaced nodes `lo (hi/lo)^(k/n)` for integer `k`.
#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    n: usize,
}

impl Axis {
    fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return invalid(format!("scan range ({lo}, {hi}) is empty or not positive"));
        }
        Ok(Self { lo, hi, n })
    }

    fn at(&self, k: i64) -> f64 {
        if k == 0 {
            return self.lo;
        }
        if k == self.n as i64 {
            return self.hi;
        }
        self.lo * (self.hi / self.lo).powf(k as f64 / self.n as f64)
    }

    fn nodes(&self, ks: impl Iterator<Item = i64>) -> Vec<f64> {
        ks.map(|k| self.at(k)).collect()
    }

    /// Number of extra nodes covering one growth factor beyond an end.
    fn extra(&self, growth: f64) -> i64 {
        (self.n as f64 * growth.ln() / (self.hi / self.lo).ln()).ceil() as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Extremum {
    pub value: f64,
    pub s: f64,
    pub x: f64,
    pub non_finite: bool,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Sup,
    Inf,
}

impl Mode {
    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Mode::Sup => a > b,
            Mode::Inf => a < b,
        }
    }
    fn worst(self) -> f64 {
        match self {
            Mode::Sup => f64::NEG_INFINITY,
            Mode::Inf => f64::INFINITY,
        }
    }
}

fn scan(
    s_nodes: &[f64],
    x_nodes: &[f64],
    f: &(dyn Fn(f64, usize) -> f64 + Sync),
    mode: Mode,
) -> Extremum {
    let cols = par::map_indexed(x_nodes.len(), |j| {
        let mut best = Extremum {
            value: mode.worst(),
            s: f64::NAN,
            x: x_nodes[j],
            non_finite: false,
        };
        for &s in s_nodes {
            let v = f(s, j);
            if v.is_nan() {
                best.non_finite = true;
                continue;
            }
            if v.is_infinite() {
                best.non_finite = true;
            }
            if best.s.is_nan() || mode.better(v, best.value) {
                best.value = v;
                best.s = s;
            }
        }
        best
    });
    let mut out = Extremum {
        value: mode.worst(),
        s: f64::NAN,
        x: f64::NAN,
        non_finite: false,
    };
    for c in cols {
        out.non_finite |= c.non_finite;
        if !c.s.is_nan() && (out.s.is_nan() || mode.better(c.value, out.value)) {
            out = Extremum {
                non_finite: out.non_finite,
                ..c
            };
        }
    }
    out
}

/// Time weight `d(s)` from a family with known integrability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DSpec {
    Constant {
        value: f64,
    },
    /// `coef · s^theta`
    Power {
        coef: f64,
        theta: f64,
    },
    /// `coef · e^(rate s)`
    Exponential {
        coef: f64,
        rate: f64,
    },
    /// An expression in `s`; `diverges` declares whether `∫_0^∞ d = ∞`.
    Expression {
        expr: String,
        diverges: Option<bool>,
    },
}

impl DSpec {
    pub fn constant(value: f64) -> Self {
        DSpec::Constant { value }
    }

    pub fn compile(&self) -> Result<CompiledD> {
        let kind = match self {
            DSpec::Constant { value } if *value > 0.0 => DKind::Constant(*value),
            DSpec::Power { coef, theta } if *coef > 0.0 && theta.is_finite() => {
                DKind::Power(*coef, *theta)
            }
            DSpec::Exponential { coef, rate } if *coef > 0.0 && rate.is_finite() => {
                DKind::Exp(*coef, *rate)
            }
            DSpec::Expression { expr, .. } => {
                let e = Expr::parse(expr)?;
                if e.uses_x() {
                    return invalid("d(s) may not depend on x");
                }
                DKind::Expr(e)
            }
            other => return invalid(format!("d(s) = {other:?} is not positive")),
        };
        Ok(CompiledD { kind })
    }

    /// Whether `∫_0^∞ d(s) ds = ∞`, when decidable from the declared form.
    pub fn integral_diverges(&self) -> Option<bool> {
        match self {
            DSpec::Constant { .. } | DSpec::Power { .. } => Some(true),
            DSpec::Exponential { rate, .. } => Some(*rate >= 0.0),
            DSpec::Expression { diverges, .. } => *diverges,
        }
    }
}

#[derive(Debug, Clone)]
enum DKind {
    Constant(f64),
    Power(f64, f64),
    Exp(f64, f64),
    Expr(Expr),
}

#[derive(Debug, Clone)]
pub struct CompiledD {
    kind: DKind,
}

impl CompiledD {
    pub fn eval(&self, s: f64) -> f64 {
        match &self.kind {
            DKind::Constant(c) => *c,
            DKind::Power(c, th) => c * s.powf(*th),
            DKind::Exp(c, r) => c * (r * s).exp(),
            DKind::Expr(e) => e.eval(s, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionReport {
    pub criterion: CriterionId,
    pub extremal_value: f64,
    pub extremal_location: (f64, f64),
    pub verdict: Verdict,
    /// Set when extending the open boundary moved the extremum.
    pub growth_trend: bool,
    pub parameters: BTreeMap<String, f64>,
    pub d_spec: Option<DSpec>,
    pub grid: ScanGrid,
    /// Resolved scan ranges `[s_lo, s_hi]` and `[x_lo, x_hi]`.
    pub s_range: (f64, f64),
    pub x_range: (f64, f64),
    pub conclusion: Option<String>,
    pub notes: Vec<String>,
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Time-free kernel parts on a set of x nodes.
fn h_parts(model: &ModelSpec, xs: &[f64]) -> Result<Vec<(f64, f64)>> {
    par::map_indexed(xs.len(), |i| model.h_parts(xs[i]))
        .into_iter()
        .collect()
}

fn h_rho_parts(model: &ModelSpec, xs: &[f64], rho: f64) -> Result<Vec<(f64, f64)>> {
    par::map_indexed(xs.len(), |i| model.h_rho_parts(xs[i], rho))
        .into_iter()
        .collect()
}

#[inline]
fn h_from(model: &ModelSpec, s: f64, (a, b): (f64, f64)) -> f64 {
    let mut h = 0.0;
    if a != 0.0 {
        h += model.b1(s) * a;
    }
    if b != 0.0 {
        h += model.b2(s) * b;
    }
    h
}

/// Where the open boundary of the x range lies.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Zero,
    Infinity,
}

struct Layout {
    s_axis: Axis,
    x_axis: Axis,
    s_main: Vec<f64>,
    x_main: Vec<f64>,
    s_ext: Vec<f64>,
    x_ext: Vec<f64>,
}

fn layout(grid: &ScanGrid, t: f64, x_lo: f64, x_hi: f64, side: Side, s_up: bool) -> Result<Layout> {
    grid.validate()?;
    let s_lo = grid.s_lo.unwrap_or(1e-6 * t);
    let s_axis = Axis::new(s_lo, t, grid.n_s)?;
    let x_axis = Axis::new(x_lo, x_hi, grid.n_x)?;
    let (ns, nx) = (grid.n_s as i64, grid.n_x as i64);
    let s_main = s_axis.nodes(1..=ns);
    let ms = s_axis.extra(grid.growth);
    let mut s_ext = s_axis.nodes(1 - ms..=0);
    if s_up {
        s_ext.extend(s_axis.nodes(ns + 1..=ns + ms));
    }
    let mx = x_axis.extra(grid.growth);
    let (x_main, x_ext) = match side {
        Side::Zero => (x_axis.nodes(0..nx), x_axis.nodes(-mx..0)),
        Side::Infinity => (x_axis.nodes(1..=nx), x_axis.nodes(nx + 1..=nx + mx)),
    };
    Ok(Layout {
        s_axis,
        x_axis,
        s_main,
        x_main,
        s_ext,
        x_ext,
    })
}

/// Extremum over the base grid and over the grid with extended boundaries.
fn scan_with_extension(
    lay: &Layout,
    f_main: &(dyn Fn(f64, usize) -> f64 + Sync),
    f_ext: &(dyn Fn(f64, usize) -> f64 + Sync),
    mode: Mode,
) -> (Extremum, Extremum) {
    let main = scan(&lay.s_main, &lay.x_main, f_main, mode);
    let s_all: Vec<f64> = lay.s_ext.iter().chain(&lay.s_main).copied().collect();
    let a = scan(&lay.s_ext, &lay.x_main, f_main, mode);
    let b = scan(&s_all, &lay.x_ext, f_ext, mode);
    let mut ext = main;
    for e in [a, b] {
        ext.non_finite |= e.non_finite;
        if !e.s.is_nan() && mode.better(e.value, ext.value) {
            ext = Extremum {
                non_finite: ext.non_finite,
                ..e
            };
        }
    }
    (main, ext)
}

fn sup_verdict(main: &Extremum, ext: &Extremum) -> (Verdict, bool) {
    if main.non_finite || ext.non_finite || !main.value.is_finite() {
        return (Verdict::Inconclusive, true);
    }
    let rel = (ext.value - main.value) / main.value.abs().max(1e-12);
    if rel < STABLE_REL || ext.value <= 0.0 {
        (Verdict::Satisfied, false)
    } else {
        (Verdict::Inconclusive, true)
    }
}

fn inf_verdict(main: &Extremum, ext: &Extremum) -> (Verdict, bool) {
    if main.value.is_nan() || main.s.is_nan() {
        return (Verdict::Inconclusive, false);
    }
    if main.value <= 0.0 {
        return (Verdict::Violated, false);
    }
    if main.non_finite || ext.non_finite {
        return (Verdict::Inconclusive, true);
    }
    let rel = (main.value - ext.value) / main.value;
    if rel < STABLE_REL {
        (Verdict::Satisfied, false)
    } else {
        (Verdict::Inconclusive, true)
    }
}

fn check_range(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if !(v > lo && v < hi) {
        return invalid(format!("{name} = {v} must lie in ({lo}, {hi})"));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn report(
    criterion: CriterionId,
    ex: &Extremum,
    (verdict, growth_trend): (Verdict, bool),
    parameters: BTreeMap<String, f64>,
    d_spec: Option<DSpec>,
    grid: &ScanGrid,
    lay: Option<&Layout>,
    conclusion: Option<&str>,
) -> CriterionReport {
    let (s_range, x_range) = lay.map_or(((f64::NAN, f64::NAN), (f64::NAN, f64::NAN)), |l| {
        ((l.s_axis.lo, l.s_axis.hi), (l.x_axis.lo, l.x_axis.hi))
    });
    CriterionReport {
        criterion,
        extremal_value: ex.value,
        extremal_location: (ex.s, ex.x),
        verdict,
        growth_trend,
        parameters,
        d_spec,
        grid: grid.clone(),
        s_range,
        x_range,
        conclusion: (verdict == Verdict::Satisfied)
            .then(|| conclusion.map(str::to_string))
            .flatten(),
        notes: Vec::new(),
    }
}

/// `sup_{s ∈ (0,t], 0<x<c0} [ln x⁻¹]⁻¹ [-x⁻¹ γ0(s,x) + H(s,x)] < ∞`
pub fn check_nonextinction(
    model: &ModelSpec,
    t: f64,
    c0: f64,
    grid: &ScanGrid,
) -> Result<CriterionReport> {
    check_range("c0", c0, 0.0, 1.0)?;
    let lay = layout(
        grid,
        t,
        grid.x_lo.unwrap_or(1e-6 * c0),
        c0,
        Side::Zero,
        false,
    )?;
    let pm = h_parts(model, &lay.x_main)?;
    let pe = h_parts(model, &lay.x_ext)?;
    let bracket = |s: f64, x: f64, p: (f64, f64)| {
        (-model.gamma0(s, x) / x + h_from(model, s, p)) / (1.0 / x).ln()
    };
    let fm = |s: f64, j: usize| bracket(s, lay.x_main[j], pm[j]);
    let fe = |s: f64, j: usize| bracket(s, lay.x_ext[j], pe[j]);
    let (main, ext) = scan_with_extension(&lay, &fm, &fe, Mode::Sup);
    Ok(report(
        CriterionId::T31Nonextinction,
        &main,
        sup_verdict(&main, &ext),
        params(&[("t", t), ("c0", c0)]),
        None,
        grid,
        Some(&lay),
        Some("P{tau_0 <= t} = 0: no extinction by time t"),
    ))
}

/// `sup_{s ∈ (0,t], x>c1} [ln x]⁻¹ [x⁻¹ γ0(s,x) - H(s,x)] < ∞`
pub fn check_nonexplosion(
    model: &ModelSpec,
    t: f64,
    c1: f64,
    grid: &ScanGrid,
) -> Result<CriterionReport> {
    if !(c1 > 1.0) {
        return invalid(format!("c1 = {c1} must exceed 1"));
    }
    let lay = layout(
        grid,
        t,
        c1,
        grid.x_hi.unwrap_or(1e6 * c1),
        Side::Infinity,
        false,
    )?;
    let pm = h_parts(model, &lay.x_main)?;
    let pe = h_parts(model, &lay.x_ext)?;
    let bracket =
        |s: f64, x: f64, p: (f64, f64)| (model.gamma0(s, x) / x - h_from(model, s, p)) / x.ln();
    let fm = |s: f64, j: usize| bracket(s, lay.x_main[j], pm[j]);
    let fe = |s: f64, j: usize| bracket(s, lay.x_ext[j], pe[j]);
    let (main, ext) = scan_with_extension(&lay, &fm, &fe, Mode::Sup);
    Ok(report(
        CriterionId::T31Nonexplosion,
        &main,
        sup_verdict(&main, &ext),
        params(&[("t", t), ("c1", c1)]),
        None,
        grid,
        Some(&lay),
        Some("P{tau_inf <= t} = 0: no explosion by time t"),
    ))
}

fn check_d_positive(d: &CompiledD, s_nodes: &[f64]) -> Result<()> {
    if let Some(&s) = s_nodes.iter().find(|&&s| !(d.eval(s) > 0.0)) {
        return invalid(format!("d({s}) = {} is not positive", d.eval(s)));
    }
    Ok(())
}

/// `inf_{s ∈ (0,t0], 0<x<c0} [ln x⁻¹]^{-δ} d(s)⁻¹ [-x⁻¹ γ0(s,x) + δ0 H(s,x)] > 0`
pub fn check_extinction_possible(
    model: &ModelSpec,
    t0: f64,
    delta: f64,
    delta0: f64,
    c0: f64,
    d_spec: &DSpec,
    grid: &ScanGrid,
) -> Result<CriterionReport> {
    if !(delta > 1.0) {
        return invalid(format!("delta = {delta} must exceed 1"));
    }
    check_range("delta0", delta0, 0.0, 1.0)?;
    check_range("c0", c0, 0.0, 1.0)?;
    let d = d_spec.compile()?;
    let lay = layout(
        grid,
        t0,
        grid.x_lo.unwrap_or(1e-6 * c0),
        c0,
        Side::Zero,
        false,
    )?;
    check_d_positive(&d, &lay.s_main)?;
    let pm = h_parts(model, &lay.x_main)?;
    let pe = h_parts(model, &lay.x_ext)?;
    let bracket = |s: f64, x: f64, p: (f64, f64)| {
        (1.0 / x).ln().powf(-delta) / d.eval(s)
            * (-model.gamma0(s, x) / x + delta0 * h_from(model, s, p))
    };
    let fm = |s: f64, j: usize| bracket(s, lay.x_main[j], pm[j]);
    let fe = |s: f64, j: usize| bracket(s, lay.x_ext[j], pe[j]);
    let (main, ext) = scan_with_extension(&lay, &fm, &fe, Mode::Inf);
    Ok(report(
        CriterionId::T32Extinction,
        &main,
        inf_verdict(&main, &ext),
        params(&[("t0", t0), ("delta", delta), ("delta0", delta0), ("c0", c0)]),
        Some(d_spec.clone()),
        grid,
        Some(&lay),
        Some("P{tau_0 < inf} > 0 for small X0"),
    ))
}

/// `inf_{s ∈ (0,t̃0], x>c̃0} [ln x]^{-δ̃} d̃(s)⁻¹ [x⁻¹ γ0(s,x) - δ̃0 H(s,x)] > 0`
pub fn check_explosion_possible(
    model: &ModelSpec,
    t0: f64,
    delta_t: f64,
    delta0_t: f64,
    c0_t: f64,
    d_spec: &DSpec,
    grid: &ScanGrid,
) -> Result<CriterionReport> {
    if !(delta_t > 1.0 && delta0_t > 1.0 && c0_t > 1.0) {
        return invalid("explosion constants delta, delta0 and c0 must all exceed 1");
    }
    let d = d_spec.compile()?;
    let lay = layout(
        grid,
        t0,
        c0_t,
        grid.x_hi.unwrap_or(1e6 * c0_t),
        Side::Infinity,
        false,
    )?;
    check_d_positive(&d, &lay.s_main)?;
    let pm = h_parts(model, &lay.x_main)?;
    let pe = h_parts(model, &lay.x_ext)?;
    let bracket = |s: f64, x: f64, p: (f64, f64)| {
        x.ln().powf(-delta_t) / d.eval(s)
            * (model.gamma0(s, x) / x - delta0_t * h_from(model, s, p))
    };
    let fm = |s: f64, j: usize| bracket(s, lay.x_main[j], pm[j]);
    let fe = |s: f64, j: usize| bracket(s, lay.x_ext[j], pe[j]);
    let (main, ext) = scan_with_extension(&lay, &fm, &fe, Mode::Inf);
    Ok(report(
        CriterionId::T32Explosion,
        &main,
        inf_verdict(&main, &ext),
        params(&[
            ("t0", t0),
            ("delta", delta_t),
            ("delta0", delta0_t),
            ("c0", c0_t),
        ]),
        Some(d_spec.clone()),
        grid,
        Some(&lay),
        Some("P{tau_inf < inf} > 0 for large X0"),
    ))
}

/// `inf_{s>0, 0<x<b} H_ρ(s,x) / d(s) > 0` for every `b` in `b_caps`, with `∫ d = ∞`.
pub fn check_as_extinction(
    model: &ModelSpec,
    rho: f64,
    d_spec: &DSpec,
    b_caps: &[f64],
    grid: &ScanGrid,
) -> Result<CriterionReport> {
    check_range("rho", rho, 0.0, 1.0)?;
    match d_spec.integral_diverges() {
        None => return invalid("d(s) needs a declaration of whether its integral diverges"),
        Some(false) => return invalid("almost sure extinction needs d with divergent integral"),
        Some(true) => {}
    }
    if b_caps.is_empty() || b_caps.iter().any(|&b| !(b > 0.0)) {
        return invalid("b_caps must be a non-empty list of positive levels");
    }
    let d = d_spec.compile()?;
    let s_hi = grid.s_hi.unwrap_or(100.0);
    let mut worst: Option<(Extremum, (Verdict, bool), Layout)> = None;
    let mut per_cap = Vec::new();
    for &b in b_caps {
        let lay = layout(
            grid,
            s_hi,
            grid.x_lo.map_or(1e-6 * b, |v| v.min(0.5 * b)),
            b,
            Side::Zero,
            true,
        )?;
        check_d_positive(&d, &lay.s_main)?;
        let pm = h_rho_parts(model, &lay.x_main, rho)?;
        let pe = h_rho_parts(model, &lay.x_ext, rho)?;
        let kernel = |s: f64, x: f64, p: (f64, f64)| {
            (-x.powf(rho - 1.0) * model.gamma0(s, x) + h_from(model, s, p)) / d.eval(s)
        };
        let fm = |s: f64, j: usize| kernel(s, lay.x_main[j], pm[j]);
        let fe = |s: f64, j: usize| kernel(s, lay.x_ext[j], pe[j]);
        let (main, ext) = scan_with_extension(&lay, &fm, &fe, Mode::Inf);
        let v = inf_verdict(&main, &ext);
        per_cap.push((b, main.value, v.0));
        let rank = |v: Verdict| match v {
            Verdict::Violated => 0,
            Verdict::Inconclusive => 1,
            Verdict::Satisfied => 2,
        };
        let replace = match &worst {
            None => true,
            Some((w, wv, _)) => {
                rank(v.0) < rank(wv.0) || (rank(v.0) == rank(wv.0) && main.value < w.value)
            }
        };
        if replace {
            worst = Some((main, v, lay));
        }
    }
    let (ex, v, lay) = worst.expect("at least one cap");
    let mut p = params(&[("rho", rho), ("s_hi", s_hi)]);
    for (i, (b, val, _)) in per_cap.iter().enumerate() {
        p.insert(format!("b_cap_{i}"), *b);
        p.insert(format!("inf_at_cap_{i}"), *val);
    }
    let mut r = report(
        CriterionId::T34AsExtinction,
        &ex,
        v,
        p,
        Some(d_spec.clone()),
        grid,
        Some(&lay),
        Some("P{tau_0 < inf} = 1 for every X0 > 0"),
    );
    r.notes.push("d((0, inf)) = inf by declared form".into());
    Ok(r)
}

struct BranchOutcome {
    verdict: Verdict,
    growth: bool,
    inf_gamma: f64,
    sup: Extremum,
}

/// Checks `inf γ_i > 0`, `b_i > 0` and `sup γ0 / b_i < ∞` (or `|γ0| / b_i`).
fn branch_check(
    model: &ModelSpec,
    lo: f64,
    hi: f64,
    t0: f64,
    branch: Branch,
    absolute: bool,
    grid: &ScanGrid,
) -> Result<BranchOutcome> {
    grid.validate()?;
    let xs: Vec<f64> = (0..grid.n_x)
        .map(|k| lo + (hi - lo) * k as f64 / (grid.n_x - 1) as f64)
        .collect();
    let s_axis = Axis::new(grid.s_lo.unwrap_or(1e-6 * t0), t0, grid.n_s)?;
    let s_main = s_axis.nodes(1..=grid.n_s as i64);
    let m = s_axis.extra(grid.growth);
    let s_ext = s_axis.nodes(1 - m..=0);
    let gamma = |x: f64| match branch {
        Branch::Diffusion => model.gamma1(x),
        Branch::Jump => model.gamma2(x),
    };
    let clock = |s: f64| match branch {
        Branch::Diffusion => model.b1(s),
        Branch::Jump => model.b2(s),
    };
    let inf_gamma = xs.iter().map(|&x| gamma(x)).fold(f64::INFINITY, f64::min);
    let clock_ok = s_main.iter().chain(&s_ext).all(|&s| clock(s) > 0.0);
    let ratio = |s: f64, j: usize| {
        let g0 = model.gamma0(s, xs[j]);
        (if absolute { g0.abs() } else { g0 }) / clock(s)
    };
    let sup = scan(&s_main, &xs, &ratio, Mode::Sup);
    let sup_ext = scan(&s_ext, &xs, &ratio, Mode::Sup);
    let ext = if sup_ext.value > sup.value {
        sup_ext
    } else {
        sup
    };
    let (verdict, growth) = if !(inf_gamma > 0.0) || !clock_ok {
        (Verdict::Violated, false)
    } else {
        sup_verdict(
            &sup,
            &Extremum {
                non_finite: sup.non_finite || sup_ext.non_finite,
                ..ext
            },
        )
    };
    Ok(BranchOutcome {
        verdict,
        growth,
        inf_gamma,
        sup,
    })
}

/// Either branch of the first-passage conditions on `[a, b] × (0, t0]`.
pub fn check_passage_conditions(
    model: &ModelSpec,
    a: f64,
    b: f64,
    t0: f64,
    grid: &ScanGrid,
) -> Result<CriterionReport> {
    if !(a > 0.0 && b > a) || !(t0 > 0.0) {
        return invalid("passage conditions need 0 < a < b and t0 > 0");
    }
    let i = branch_check(model, a, b, t0, Branch::Diffusion, true, grid)?;
    let ii = branch_check(model, a, b, t0, Branch::Jump, true, grid)?;
    let (id, chosen) = match (i.verdict, ii.verdict) {
        (Verdict::Satisfied, _) => (CriterionId::P35PassageI, &i),
        (_, Verdict::Satisfied) => (CriterionId::P35PassageIi, &ii),
        (Verdict::Inconclusive, _) => (CriterionId::P35PassageI, &i),
        (_, Verdict::Inconclusive) => (CriterionId::P35PassageIi, &ii),
        _ => (CriterionId::P35PassageI, &i),
    };
    let mut r = report(
        id,
        &chosen.sup,
        (chosen.verdict, chosen.growth),
        params(&[
            ("a", a),
            ("b", b),
            ("t0", t0),
            ("inf_gamma1", i.inf_gamma),
            ("inf_gamma2", ii.inf_gamma),
        ]),
        None,
        grid,
        None,
        Some("P{tau_a^- < inf} > 0 and P{tau_b^+ < inf} > 0"),
    );
    r.x_range = (a, b);
    r.s_range = (grid.s_lo.unwrap_or(1e-6 * t0), t0);
    r.notes.push(format!(
        "branch (i): {:?}; branch (ii): {:?}",
        i.verdict, ii.verdict
    ));
    Ok(r)
}

/// One branch of the side conditions on `[a, x0 + b] × (0, t0]`.
pub fn check_t33_side_conditions(
    model: &ModelSpec,
    x0: f64,
    a: f64,
    b: f64,
    t0: f64,
    branch: Branch,
    grid: &ScanGrid,
) -> Result<CriterionReport> {
    if !(a > 0.0 && a < x0) || !(b > 0.0) || !(t0 > 0.0) {
        return invalid("side conditions need 0 < a < X0, b > 0 and t0 > 0");
    }
    let o = branch_check(model, a, x0 + b, t0, branch, false, grid)?;
    let id = match branch {
        Branch::Diffusion => CriterionId::T33SideIa,
        Branch::Jump => CriterionId::T33SideIb,
    };
    let mut r = report(
        id,
        &o.sup,
        (o.verdict, o.growth),
        params(&[
            ("x0", x0),
            ("a", a),
            ("b", b),
            ("t0", t0),
            ("inf_gamma", o.inf_gamma),
        ]),
        None,
        grid,
        None,
        None,
    );
    r.x_range = (a, x0 + b);
    r.s_range = (grid.s_lo.unwrap_or(1e-6 * t0), t0);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feller() -> ModelSpec {
        ModelSpec::builder().gamma1(|x| x).build().unwrap()
    }

    #[test]
    fn axis_doubling_is_superset() {
        let a = Axis::new(1e-3, 1.0, 16).unwrap();
        let b = Axis::new(1e-3, 1.0, 32).unwrap();
        for k in 0..=16 {
            assert_eq!(a.at(k), b.at(2 * k));
        }
    }

    #[test]
    fn linear_drift_never_goes_extinct() {
        let m = ModelSpec::builder().gamma0(|_, x| x).build().unwrap();
        let r = check_nonextinction(&m, 1.0, 0.5, &ScanGrid::default().with_resolution(32, 32))
            .unwrap();
        assert_eq!(r.verdict, Verdict::Satisfied, "{r:?}");
        assert!(r.extremal_value <= 0.0);
    }

    #[test]
    fn feller_nonextinction_inconclusive() {
        let r = check_nonextinction(
            &feller(),
            1.0,
            0.5,
            &ScanGrid::default().with_resolution(32, 32),
        )
        .unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
        assert!(r.growth_trend);
    }

    #[test]
    fn d_spec_families() {
        assert_eq!(
            DSpec::Exponential {
                coef: 1.0,
                rate: -1.0
            }
            .integral_diverges(),
            Some(false)
        );
        assert_eq!(
            DSpec::Power {
                coef: 1.0,
                theta: -3.0
            }
            .integral_diverges(),
            Some(true)
        );
        let e = DSpec::Expression {
            expr: "1 + s".into(),
            diverges: None,
        };
        assert_eq!(e.integral_diverges(), None);
        assert!(check_as_extinction(&feller(), 0.5, &e, &[1.0], &ScanGrid::default()).is_err());
        assert!(DSpec::Constant { value: -1.0 }.compile().is_err());
    }
}
