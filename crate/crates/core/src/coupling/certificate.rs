//! Contraction certificates: the test functions for the diffusive and the
//! pure-jump case, the Lyapunov check and a grid verification of the
//! coupling operator inequalities.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::generator::{
    coupling_generator_apply, CouplingProbe, DistanceProbe, GapMaxProbe, WeightedIndicator,
};
use crate::error::{invalid, Error, Result};
use crate::model::{ModelSpec, SmoothProbe};
use crate::par;
use crate::quad::Integrator;

const TABLE_NODES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CertificateCase {
    #[serde(rename = "B1_diffusion")]
    B1Diffusion,
    #[serde(rename = "B2_jump")]
    B2Jump,
}

/// Constants of the drift and diffusion conditions: `k0(l)`, `k1(l)` and `σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct B1Constants {
    pub k0: f64,
    pub k1: f64,
    pub sigma: f64,
    /// Set when the constants come from [`estimate_b1_constants`].
    #[serde(default)]
    pub estimated: bool,
}

/// Constants of the drift and pure-jump conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct B2Constants {
    pub k0: f64,
    pub k2: f64,
    /// `σ̄` with `b2 ≤ σ̄ b0`
    pub sigma_upper: f64,
    /// `σ` with `b2 ≥ σ b0`
    pub sigma_lower: f64,
    /// Lower bound of the overlap mass `μ_d(R_+)` for `|d| ≤ c0_jump`.
    pub kappa0: f64,
    pub c0_jump: f64,
    /// `γ0(s, 0) ≥ gamma0_floor · b0(s)`
    pub gamma0_floor: f64,
    #[serde(default)]
    pub estimated: bool,
}

/// `L_s V ≤ (-λ1 V + λ2) b0(s)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovPair {
    pub lambda1: f64,
    pub lambda2: f64,
}

/// A test function `F_l` together with the constants used to build it.
#[derive(Clone, Serialize)]
pub struct Certificate {
    pub case: CertificateCase,
    pub l: f64,
    pub c_l: f64,
    /// `θ`; the fixed value `1/2` in the diffusive case makes `2(θ + 1)` the bound `3` of `F_l`.
    pub theta: f64,
    pub theta_supplied: Option<f64>,
    pub theta_raised: bool,
    pub x0_jump: Option<f64>,
    pub r: Option<f64>,
    /// `Φ_l(c(l))`
    pub phi_at_c: Option<f64>,
    pub h0: Option<f64>,
    pub h: Option<f64>,
    pub b1: Option<B1Constants>,
    pub b2: Option<B2Constants>,
    /// Lower bound for `λ(l)` from the construction.
    pub lambda_bound: f64,
    pub f_min: f64,
    pub f_max: f64,
    #[serde(skip)]
    probe: Arc<dyn CouplingProbe>,
    #[serde(skip)]
    f_l: Option<SmoothProbe>,
    #[serde(skip)]
    phi: Option<SmoothProbe>,
    #[serde(skip)]
    psi: Option<SmoothProbe>,
}

impl fmt::Debug for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Certificate")
            .field("case", &self.case)
            .field("l", &self.l)
            .field("c_l", &self.c_l)
            .field("theta", &self.theta)
            .finish_non_exhaustive()
    }
}

impl Certificate {
    /// `F_l` as a two-argument probe.
    pub fn probe(&self) -> Arc<dyn CouplingProbe> {
        Arc::clone(&self.probe)
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.probe.value(x, y)
    }

    /// `f_l` in the diffusive case.
    pub fn f_l(&self) -> Option<&SmoothProbe> {
        self.f_l.as_ref()
    }

    /// `φ` in the pure-jump case.
    pub fn phi(&self) -> Option<&SmoothProbe> {
        self.phi.as_ref()
    }

    /// `ψ_l` in the pure-jump case.
    pub fn psi(&self) -> Option<&SmoothProbe> {
        self.psi.as_ref()
    }
}

/// `f_l(x) = 2 + ∫_c^∞ (1 - e^{-zx}) / Ψ(z) dz` with `Ψ(z) = -k0 z + a z²`,
/// tabulated on log-spaced nodes.
struct FlTable {
    c: f64,
    k0: f64,
    a: f64,
    ln_lo: f64,
    step: f64,
    f: Vec<f64>,
    ln_f1: Vec<f64>,
    ln_mf2: Vec<f64>,
}

impl FlTable {
    fn psi(&self, z: f64) -> f64 {
        z * (self.a * z - self.k0)
    }

    fn integrate(&self, g: &dyn Fn(f64) -> f64, x: f64) -> f64 {
        let breaks = if x > 0.0 {
            [self.c + 1.0 / x, self.c + 10.0 / x, self.c + 50.0 / x]
        } else {
            [f64::NAN; 3]
        };
        let brk: Vec<f64> = breaks.into_iter().filter(|b| b.is_finite()).collect();
        Integrator::new(1e-12)
            .with_max_intervals(4000)
            .integrate_breaks(g, self.c, f64::INFINITY, &brk)
            .map(|e| e.value)
            .unwrap_or(f64::NAN)
    }

    /// `(f, f', f'')` by direct quadrature.
    fn direct(&self, x: f64) -> (f64, f64, f64) {
        if x == 0.0 {
            return (2.0, f64::INFINITY, f64::NEG_INFINITY);
        }
        let f = 2.0 + self.integrate(&|z| -(-z * x).exp_m1() / self.psi(z), x);
        // z = c + w / x keeps the relative accuracy once e^{-c x} is tiny.
        let scaled = |p: i32| {
            let g = |w: f64| {
                let z = self.c + w / x;
                z.powi(p) * (-w).exp() / self.psi(z)
            };
            Integrator::new(1e-12)
                .with_max_intervals(4000)
                .integrate_breaks(&g, 0.0, f64::INFINITY, &[1.0, 10.0, 50.0])
                .map_or(f64::NAN, |e| e.value * (-self.c * x).exp() / x)
        };
        (f, scaled(1), -scaled(2))
    }

    fn new(c: f64, k0: f64, a: f64) -> Self {
        let lo = 1e-8 / c;
        let hi = 50.0 / c;
        let ln_lo = lo.ln();
        let step = (hi / lo).ln() / (TABLE_NODES - 1) as f64;
        let mut t = Self {
            c,
            k0,
            a,
            ln_lo,
            step,
            f: Vec::new(),
            ln_f1: Vec::new(),
            ln_mf2: Vec::new(),
        };
        let vals = par::map_indexed(TABLE_NODES, |k| t.direct((ln_lo + k as f64 * step).exp()));
        t.f = vals.iter().map(|v| v.0).collect();
        let node = |k: usize| (ln_lo + k as f64 * step).exp();
        // The factor e^{-c x} is taken out before interpolating in ln x.
        t.ln_f1 = vals
            .iter()
            .enumerate()
            .map(|(k, v)| v.1.ln() + c * node(k))
            .collect();
        t.ln_mf2 = vals
            .iter()
            .enumerate()
            .map(|(k, v)| (-v.2).ln() + c * node(k))
            .collect();
        t
    }

    fn eval(&self, x: f64) -> (f64, f64, f64) {
        let u = (x.ln() - self.ln_lo) / self.step;
        if !(u >= 0.0 && u < (TABLE_NODES - 1) as f64) {
            return self.direct(x);
        }
        let k = u.floor() as usize;
        let w = u - k as f64;
        let lerp = |v: &[f64]| v[k] + w * (v[k + 1] - v[k]);
        let (xa, xb) = (
            (self.ln_lo + k as f64 * self.step).exp(),
            (self.ln_lo + (k + 1) as f64 * self.step).exp(),
        );
        let h = xb - xa;
        let t = (x - xa) / h;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * t) * (1.0 - t).powi(2),
            t * (1.0 - t).powi(2),
            t * t * (3.0 - 2.0 * t),
            t * t * (t - 1.0),
        );
        let d1 = |k: usize, x: f64| (self.ln_f1[k] - self.c * x).exp();
        let f =
            h00 * self.f[k] + h10 * h * d1(k, xa) + h01 * self.f[k + 1] + h11 * h * d1(k + 1, xb);
        let damp = self.c * x;
        (
            f,
            (lerp(&self.ln_f1) - damp).exp(),
            -(lerp(&self.ln_mf2) - damp).exp(),
        )
    }

    fn tail_integral(c: f64, k0: f64, a: f64) -> f64 {
        Integrator::new(1e-12)
            .integrate(&|z: f64| 1.0 / (z * (a * z - k0)), c, f64::INFINITY)
            .map(|e| e.value)
            .unwrap_or(f64::INFINITY)
    }
}

/// `c(l)`: the smallest `c` with `Ψ ≥ 1` on `[c, ∞)` and `∫_c^∞ Ψ^{-1} ≤ 1`.
fn b1_cutoff(k0: f64, a: f64) -> f64 {
    let root = (k0 + (k0 * k0 + 4.0 * a).sqrt()) / (2.0 * a);
    if FlTable::tail_integral(root, k0, a) <= 1.0 {
        return root;
    }
    let (mut lo, mut hi) = (root, 2.0 * root);
    while FlTable::tail_integral(hi, k0, a) > 1.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if FlTable::tail_integral(mid, k0, a) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    hi
}

/// Test function for the diffusive case,
/// `F_l(x, y) = f_l(|x - y|) 1{x ≠ y}`.
pub fn build_certificate_b1(
    model: &ModelSpec,
    l: f64,
    consts: &B1Constants,
) -> Result<Certificate> {
    if !(l > 1.0) || !l.is_finite() {
        return invalid(format!("l = {l} must exceed 1"));
    }
    if !model.has_diffusion() {
        return invalid("the diffusive certificate needs a non-zero γ1");
    }
    if !(consts.k0 >= 0.0 && consts.k0.is_finite()) {
        return invalid(format!("k0 = {} must be non-negative", consts.k0));
    }
    let a = consts.sigma * consts.k1;
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Infeasible(format!(
            "Ψ(z) = -k0 z + σ k1 z² never exceeds 1 with σ k1 = {a}"
        )));
    }
    let c = b1_cutoff(consts.k0, a);
    let table = Arc::new(FlTable::new(c, consts.k0, a));
    let (t0, t1, t2) = (Arc::clone(&table), Arc::clone(&table), Arc::clone(&table));
    let f_l = SmoothProbe::new(
        move |x| if x == 0.0 { 2.0 } else { t0.eval(x).0 },
        move |x| t1.eval(x).1,
        move |x| t2.eval(x).2,
    );
    let probe: Arc<dyn CouplingProbe> = Arc::new(DistanceProbe { f: f_l.clone() });
    Ok(Certificate {
        case: CertificateCase::B1Diffusion,
        l,
        c_l: c,
        theta: 0.5,
        theta_supplied: None,
        theta_raised: false,
        x0_jump: None,
        r: None,
        phi_at_c: None,
        h0: None,
        h: None,
        b1: Some(*consts),
        b2: None,
        lambda_bound: (-c * l).exp() / 3.0,
        f_min: 2.0,
        f_max: 3.0,
        probe,
        f_l: Some(f_l),
        phi: None,
        psi: None,
    })
}

/// `e^{-w} - 1 + w` without cancellation.
fn exp_gap(w: f64) -> f64 {
    if w < 1e-3 {
        w * w * (0.5 - w * (1.0 / 6.0 - w / 24.0))
    } else {
        w + (-w).exp_m1()
    }
}

/// `φ(x) = θ + (1 - x/x0)³` below `x0`, `θ` above.
fn phi_probe(theta: f64, x0: f64) -> SmoothProbe {
    SmoothProbe::new(
        move |x| {
            if x < x0 {
                theta + (1.0 - x / x0).powi(3)
            } else {
                theta
            }
        },
        move |x| {
            if x < x0 {
                -3.0 / x0 * (1.0 - x / x0).powi(2)
            } else {
                0.0
            }
        },
        move |x| {
            if x < x0 {
                6.0 / (x0 * x0) * (1.0 - x / x0)
            } else {
                0.0
            }
        },
    )
}

/// `ψ_l(x) = 2 - e^{-c x}`
fn psi_probe(c: f64) -> SmoothProbe {
    SmoothProbe::new(
        move |x| 2.0 - (-c * x).exp(),
        move |x| c * (-c * x).exp(),
        move |x| -c * c * (-c * x).exp(),
    )
}

/// Test function for the pure-jump case,
/// `F_l(x, y) = φ(x ∨ y) ψ_l(|x - y|) 1{x ≠ y}`.
///
/// `c(l)` is the first `u = 2^k` with `Φ_l(u) > 1`; `r` is the first
/// `2^{-k}`, `k ≥ 2`, with `3 k0 r + σ̄ H0 γ2(r x0) ≤ 3 γ0 / (8 x0)`. A
/// supplied `θ` below the required value is raised.
pub fn build_certificate_b2(
    model: &ModelSpec,
    l: f64,
    x0_jump: f64,
    theta: Option<f64>,
    consts: &B2Constants,
) -> Result<Certificate> {
    if !(l > 1.0) || !l.is_finite() {
        return invalid(format!("l = {l} must exceed 1"));
    }
    let mu = model.mu();
    if !mu.is_density() || !model.has_jumps() {
        return Err(Error::UnsupportedMeasure(format!(
            "the jump certificate needs an absolutely continuous jump measure, got {}",
            mu.label()
        )));
    }
    if !(x0_jump > 0.0 && x0_jump < consts.c0_jump.min(1.0)) {
        return invalid(format!("x0_jump = {x0_jump} must lie in (0, min(1, c0))"));
    }
    let positive = [
        consts.k2,
        consts.sigma_upper,
        consts.sigma_lower,
        consts.kappa0,
        consts.gamma0_floor,
    ];
    if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || !(consts.k0 >= 0.0) {
        return invalid("k2, σ̄, σ, κ0 and the drift floor must be positive and k0 non-negative");
    }
    if consts.sigma_upper < consts.sigma_lower {
        return invalid("σ̄ must be at least σ");
    }
    if !mu.small_jump_first_moment_infinite() {
        return Err(Error::Infeasible(
            "∫_0^1 z μ(dz) is finite; the jump certificate needs it infinite".into(),
        ));
    }
    let (k0, k2, su, sl) = (consts.k0, consts.k2, consts.sigma_upper, consts.sigma_lower);
    let big_phi = |u: f64| -> Result<f64> {
        let i = mu.integrate_with_breaks(&|z| exp_gap(z * u), 0.0, f64::INFINITY, &[1.0 / u])?;
        Ok(-u * k0 + k2 * sl * i)
    };
    let mut found = None;
    for k in -20..=60 {
        let u = 2f64.powi(k);
        let v = big_phi(u)?;
        if v > 1.0 {
            found = Some((u, v));
            break;
        }
    }
    let Some((c, phi_c)) = found else {
        return Err(Error::Infeasible(
            "Φ_l(u) stays below 1 for u up to 2^60".into(),
        ));
    };
    let m2 = mu.integrate(&|z| z * z, 0.0, 1.0)?;
    let m1 = mu.integrate(&|z| z, 1.0, f64::INFINITY)?;
    let h0 = 3.0 / (x0_jump * x0_jump) * (m2 + m1);
    let h = 6.0 * k0 + 2.0 * su * h0 * model.gamma2(x0_jump);
    let target = 3.0 * consts.gamma0_floor / (8.0 * x0_jump);
    let r = (2..=60)
        .map(|k| 2f64.powi(-k))
        .find(|&r| 3.0 * k0 * r + su * h0 * model.gamma2(r * x0_jump) <= target)
        .ok_or_else(|| {
            Error::Infeasible("no r = 2^-k satisfies the small-state drift condition".into())
        })?;
    let g_half = model.gamma2(r * x0_jump / 2.0);
    if !(g_half > 0.0) {
        return Err(Error::Infeasible(format!(
            "γ2 vanishes at r x0 / 2 = {}",
            r * x0_jump / 2.0
        )));
    }
    let required = (2.0 * (h + 1.0) / (sl * consts.kappa0 * g_half) + su / sl)
        .max(2.0 * (h + 1.0) / (r * x0_jump) * (c * l).exp())
        .max(1.0 + 1e-12);
    if !required.is_finite() {
        return Err(Error::Infeasible(format!(
            "θ overflows for c(l) l = {}",
            c * l
        )));
    }
    let theta_final = theta.map_or(required, |t| t.max(required));
    let theta_raised = theta.is_some_and(|t| t < required);
    let phi = phi_probe(theta_final, x0_jump);
    let psi = psi_probe(c);
    let psi_l = 2.0 - (-c * l).exp();
    let psi_half = 2.0 - (-c * x0_jump / 2.0).exp();
    let lambda_bound = [
        x0_jump * (-c * l).exp() / (2.0 * psi_l),
        sl * consts.kappa0 * model.gamma2(x0_jump / 2.0) / (2.0 * psi_half),
        3.0 * consts.gamma0_floor / (8.0 * (theta_final + 1.0) * x0_jump),
        1.0 / (2.0 * (theta_final + 1.0)),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    let probe: Arc<dyn CouplingProbe> = Arc::new(GapMaxProbe {
        phi: phi.clone(),
        psi: psi.clone(),
    });
    Ok(Certificate {
        case: CertificateCase::B2Jump,
        l,
        c_l: c,
        theta: theta_final,
        theta_supplied: theta,
        theta_raised,
        x0_jump: Some(x0_jump),
        r: Some(r),
        phi_at_c: Some(phi_c),
        h0: Some(h0),
        h: Some(h),
        b1: None,
        b2: Some(*consts),
        lambda_bound,
        f_min: theta_final,
        f_max: 2.0 * (theta_final + 1.0),
        probe,
        f_l: None,
        phi: Some(phi),
        psi: Some(psi),
    })
}

/// Log-spaced grid in `x` and a list of times for the Lyapunov check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LyapunovGrid {
    pub s_nodes: Vec<f64>,
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_x: usize,
}

impl Default for LyapunovGrid {
    fn default() -> Self {
        Self {
            s_nodes: vec![0.25, 1.0, 4.0],
            x_lo: 1e-6,
            x_hi: 1e4,
            n_x: 256,
        }
    }
}

/// Tightest `λ2` for a given `λ1` on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub lambda1: f64,
    /// `sup (L_s V / b0(s) + λ1 V)` over the grid
    pub lambda2: f64,
    pub arg_s: f64,
    pub arg_x: f64,
}

pub fn check_lyapunov(
    model: &ModelSpec,
    v: &SmoothProbe,
    lambda1: f64,
    grid: &LyapunovGrid,
) -> Result<LyapunovReport> {
    if !(grid.x_hi > grid.x_lo && grid.x_lo > 0.0 && grid.n_x >= 2) {
        return invalid("Lyapunov grid needs 0 < x_lo < x_hi and at least two nodes");
    }
    let ratio = grid.x_hi / grid.x_lo;
    let xs: Vec<f64> = std::iter::once(0.0)
        .chain((0..grid.n_x).map(|k| grid.x_lo * ratio.powf(k as f64 / (grid.n_x - 1) as f64)))
        .collect();
    let rows = par::map_indexed(xs.len(), |j| -> Result<(f64, f64, f64)> {
        let x = xs[j];
        let mut best = (f64::NEG_INFINITY, f64::NAN, x);
        for &s in &grid.s_nodes {
            let b0 = model.b0(s);
            if !(b0 > 0.0) {
                continue;
            }
            let val = model.generator_apply(s, x, v)? / b0 + lambda1 * v.f(x);
            if val > best.0 || best.1.is_nan() {
                best = (val, s, x);
            }
        }
        Ok(best)
    });
    let mut out = LyapunovReport {
        lambda1,
        lambda2: f64::NEG_INFINITY,
        arg_s: f64::NAN,
        arg_x: f64::NAN,
    };
    for r in rows {
        let (val, s, x) = r?;
        if val > out.lambda2 || (val.is_nan() && !out.lambda2.is_nan()) {
            out.lambda2 = val;
            out.arg_s = s;
            out.arg_x = x;
        }
    }
    Ok(out)
}

/// Points `(y + d, y)` and `(y, y + d)` for levels `y` and gaps `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CertificateGrid {
    pub s_nodes: Vec<f64>,
    pub n_level: usize,
    pub n_gap: usize,
    /// Smallest non-zero level; `0` is always included.
    pub level_lo: f64,
    /// Largest level; defaults to `2 l`.
    pub level_hi: Option<f64>,
    /// Smallest gap relative to `l`.
    pub gap_lo: f64,
    pub lyapunov: LyapunovGrid,
}

impl Default for CertificateGrid {
    fn default() -> Self {
        Self {
            s_nodes: vec![0.25, 1.0, 4.0],
            n_level: 24,
            n_gap: 24,
            level_lo: 1e-3,
            level_hi: None,
            gap_lo: 1e-3,
            lyapunov: LyapunovGrid::default(),
        }
    }
}

impl CertificateGrid {
    fn levels(&self, l: f64) -> Vec<f64> {
        let hi = self.level_hi.unwrap_or(2.0 * l);
        let n = self.n_level.max(2);
        std::iter::once(0.0)
            .chain(
                (0..n)
                    .map(|k| self.level_lo * (hi / self.level_lo).powf(k as f64 / (n - 1) as f64)),
            )
            .collect()
    }

    fn gaps(&self, lo: f64, hi: f64) -> Vec<f64> {
        let n = self.n_gap.max(2);
        (0..n)
            .map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64))
            .collect()
    }

    fn pairs(&self, l: f64, gap_hi: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for &y in &self.levels(l) {
            for &d in &self.gaps(self.gap_lo * l, gap_hi) {
                out.push((y + d, y));
                out.push((y, y + d));
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if !(self.level_lo > 0.0 && self.gap_lo > 0.0 && self.gap_lo < 1.0) {
            return invalid("certificate grid needs level_lo > 0 and gap_lo in (0, 1)");
        }
        if self.level_hi.is_some_and(|h| !(h > self.level_lo)) {
            return invalid("certificate grid needs level_hi > level_lo");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertifiedVerdict {
    Certified,
    NotCertified,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub case: CertificateCase,
    pub l: f64,
    pub c_l: f64,
    pub theta: f64,
    /// `inf -L̃F_l / (b0 F_l)` over the grid points with `0 < |x - y| ≤ l`
    pub lambda_l: f64,
    pub lambda_l_arg: GridPoint,
    pub lambda_l_bound: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// `4 λ2 / λ(l)`
    pub epsilon: f64,
    /// `inf -L̃G / (b0 G)` over all off-diagonal grid points
    pub lambda_bar: f64,
    pub lambda_bar_arg: GridPoint,
    /// `½ min{λ1, ε λ(l), 1 / (ε (θ + 1))}`
    pub lambda_bar_formula: f64,
    /// `C0` with `W_V ≤ C0 e^{-λ̄ ∫ b0} d_V(x, y)`
    pub c0: f64,
    pub lyapunov: LyapunovReport,
    pub verdict: CertifiedVerdict,
    pub certificate: Certificate,
    pub notes: Vec<String>,
}

/// `inf -L̃F / (b0 F)` over `pairs × s_nodes`.
fn scan_rate(
    model: &ModelSpec,
    probe: &dyn CouplingProbe,
    pairs: &[(f64, f64)],
    s_nodes: &[f64],
) -> Result<GridPoint> {
    let rows = par::map_indexed(pairs.len(), |i| -> Result<GridPoint> {
        let (x, y) = pairs[i];
        let f = probe.value(x, y);
        let mut best = GridPoint {
            s: f64::NAN,
            x,
            y,
            value: f64::INFINITY,
        };
        for &s in s_nodes {
            let lf = coupling_generator_apply(model, s, x, y, probe)?;
            let rate = -lf / (model.b0(s) * f);
            if rate < best.value || rate.is_nan() {
                best = GridPoint {
                    s,
                    x,
                    y,
                    value: rate,
                };
                if rate.is_nan() {
                    break;
                }
            }
        }
        Ok(best)
    });
    let mut out = GridPoint {
        s: f64::NAN,
        x: f64::NAN,
        y: f64::NAN,
        value: f64::INFINITY,
    };
    for r in rows {
        let p = r?;
        if p.value.is_nan() {
            return Ok(p);
        }
        if p.value < out.value {
            out = p;
        }
    }
    Ok(out)
}

/// Checks `L̃_s F_l ≤ -λ(l) b0 F_l` on `0 < |x - y| ≤ l` and
/// `L̃_s G ≤ -λ̄ b0 G` off the diagonal, with
/// `G = [V(x) + V(y) + ε F_l] 1{x ≠ y}` and `ε = 4 λ2 / λ(l)`.
/// `V` is the weight declared on the model.
pub fn verify_certificate(
    model: &ModelSpec,
    cert: &Certificate,
    lyapunov: LyapunovPair,
    grid: &CertificateGrid,
) -> Result<CertificateReport> {
    grid.validate()?;
    let Some(v) = model.weight().cloned() else {
        return invalid("verification needs a weight V declared on the model");
    };
    if !(lyapunov.lambda1 > 0.0 && lyapunov.lambda2 >= 0.0) {
        return invalid("Lyapunov constants need λ1 > 0 and λ2 ≥ 0");
    }
    let s_nodes: Vec<f64> = grid
        .s_nodes
        .iter()
        .copied()
        .filter(|&s| model.b0(s) > 0.0)
        .collect();
    if s_nodes.is_empty() {
        return invalid("no time node with b0(s) > 0");
    }
    let l = cert.l;
    let f = cert.probe();
    let lam = scan_rate(model, f.as_ref(), &grid.pairs(l, l), &s_nodes)?;
    let lambda_l = lam.value;
    let epsilon = if lambda_l > 0.0 {
        4.0 * lyapunov.lambda2 / lambda_l
    } else {
        f64::NAN
    };
    let mut notes = Vec::new();
    let (lambda_bar_arg, lambda_bar_formula, c0) = if epsilon.is_finite() {
        let g = WeightedIndicator {
            v: v.clone(),
            eps: epsilon,
            f: Arc::clone(&f),
        };
        let hi = grid.level_hi.unwrap_or(2.0 * l).max(l);
        let arg = scan_rate(model, &g, &grid.pairs(l, hi), &s_nodes)?;
        let formula = 0.5
            * lyapunov
                .lambda1
                .min(epsilon * lambda_l)
                .min(1.0 / (epsilon * (cert.theta + 1.0)));
        let c_hi = 1f64.max(epsilon * cert.f_max / 2.0);
        let c_lo = 1f64.min(epsilon * cert.f_min / 2.0);
        (arg, formula, c_hi / c_lo)
    } else {
        notes.push("λ(l) is not positive on the grid; the G scan was skipped".into());
        (
            GridPoint {
                s: f64::NAN,
                x: f64::NAN,
                y: f64::NAN,
                value: f64::NAN,
            },
            f64::NAN,
            f64::NAN,
        )
    };
    let lyap_grid = LyapunovGrid {
        x_hi: grid.lyapunov.x_hi.max(4.0 * l),
        ..grid.lyapunov.clone()
    };
    let lyap = check_lyapunov(model, &v, lyapunov.lambda1, &lyap_grid)?;
    if lyap.lambda2 > lyapunov.lambda2 * (1.0 + 1e-9) + 1e-12 {
        notes.push(format!(
            "supplied λ2 = {} is below the grid requirement {} at x = {}",
            lyapunov.lambda2, lyap.lambda2, lyap.arg_x
        ));
    }
    let level = (2.0 * lyapunov.lambda2 + 1.0) / lyapunov.lambda1;
    if v.f(l) < level {
        notes.push(format!(
            "V(l) = {} is below (2 λ2 + 1) / λ1 = {level}",
            v.f(l)
        ));
    }
    if cert.b1.is_some_and(|c| c.estimated) || cert.b2.is_some_and(|c| c.estimated) {
        notes.push("condition constants were estimated on a grid".into());
    }
    let certified = lambda_l > 0.0 && lambda_bar_arg.value > 0.0;
    if !certified {
        notes.push(format!(
            "offending point: λ(l) scan at ({}, {}, s = {}), G scan at ({}, {}, s = {})",
            lam.x, lam.y, lam.s, lambda_bar_arg.x, lambda_bar_arg.y, lambda_bar_arg.s
        ));
    }
    Ok(CertificateReport {
        case: cert.case,
        l,
        c_l: cert.c_l,
        theta: cert.theta,
        lambda_l,
        lambda_l_arg: lam,
        lambda_l_bound: cert.lambda_bound,
        lambda1: lyapunov.lambda1,
        lambda2: lyapunov.lambda2,
        epsilon,
        lambda_bar: lambda_bar_arg.value,
        lambda_bar_arg,
        lambda_bar_formula,
        c0,
        lyapunov: lyap,
        verdict: if certified {
            CertifiedVerdict::Certified
        } else {
            CertifiedVerdict::NotCertified
        },
        certificate: cert.clone(),
        notes,
    })
}

/// Supremum of the one-sided drift modulus
/// `(γ0(s,x) - γ0(s,y)) sgn(x - y) / (|x - y| b0(s))` over the grid, floored at 0.
fn drift_modulus(model: &ModelSpec, pairs: &[(f64, f64)], s_nodes: &[f64]) -> f64 {
    let mut k0 = 0f64;
    for &(x, y) in pairs {
        for &s in s_nodes {
            let v = (model.gamma0(s, x) - model.gamma0(s, y)) * (x - y).signum()
                / ((x - y).abs() * model.b0(s));
            if v.is_finite() {
                k0 = k0.max(v);
            }
        }
    }
    k0
}

fn ratio_range(s_nodes: &[f64], f: impl Fn(f64) -> f64) -> (f64, f64) {
    s_nodes
        .iter()
        .map(|&s| f(s))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
}

/// Grid estimates of `k0(l)`, `k1(l)` and `σ`.
pub fn estimate_b1_constants(
    model: &ModelSpec,
    l: f64,
    grid: &CertificateGrid,
) -> Result<B1Constants> {
    grid.validate()?;
    let s_nodes: Vec<f64> = grid
        .s_nodes
        .iter()
        .copied()
        .filter(|&s| model.b0(s) > 0.0)
        .collect();
    let pairs = grid.pairs(l, l);
    let k0 = drift_modulus(model, &pairs, &s_nodes);
    let k1 = pairs
        .iter()
        .map(|&(x, y)| (model.gamma1(x) + model.gamma1(y)) / (x - y).abs())
        .fold(f64::INFINITY, f64::min);
    let (sigma, _) = ratio_range(&s_nodes, |s| model.b1(s) / model.b0(s));
    Ok(B1Constants {
        k0,
        k1,
        sigma,
        estimated: true,
    })
}

/// Grid estimates of the pure-jump constants; `κ0` is the smallest overlap
/// mass over `d ∈ (0, c0_jump]`.
pub fn estimate_b2_constants(
    model: &ModelSpec,
    l: f64,
    c0_jump: f64,
    grid: &CertificateGrid,
) -> Result<B2Constants> {
    grid.validate()?;
    if !(c0_jump > 0.0) {
        return invalid("c0_jump must be positive");
    }
    let s_nodes: Vec<f64> = grid
        .s_nodes
        .iter()
        .copied()
        .filter(|&s| model.b0(s) > 0.0)
        .collect();
    let pairs = grid.pairs(l, l);
    let k0 = drift_modulus(model, &pairs, &s_nodes);
    let k2 = pairs
        .iter()
        .map(|&(x, y)| (model.gamma2(x) - model.gamma2(y)).abs() / (x - y).abs())
        .fold(f64::INFINITY, f64::min);
    let (sigma_lower, sigma_upper) = ratio_range(&s_nodes, |s| model.b2(s) / model.b0(s));
    let mut kappa0 = f64::INFINITY;
    for k in 1..=32 {
        let d = c0_jump * k as f64 / 32.0;
        kappa0 = kappa0.min(model.mu().overlap_mass(d)?.value());
    }
    let (gamma0_floor, _) = ratio_range(&s_nodes, |s| model.gamma0(s, 0.0) / model.b0(s));
    Ok(B2Constants {
        k0,
        k2,
        sigma_upper,
        sigma_lower,
        kappa0,
        c0_jump,
        gamma0_floor,
        estimated: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoff_matches_closed_form() {
        // Ψ = z² - z: root of Ψ = 1 is the golden ratio, the tail condition gives e / (e - 1).
        let c = b1_cutoff(1.0, 1.0);
        assert!((c - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-12);
        // k0 = 0, a = 0.1: tail 1 / (a c) ≤ 1 forces c = 10 above the root √10.
        let c = b1_cutoff(0.0, 0.1);
        assert!((c - 10.0).abs() < 1e-9, "{c}");
    }

    #[test]
    fn table_matches_direct_quadrature() {
        let t = FlTable::new(1.7, 1.0, 1.0);
        for &x in &[1e-6, 3.3e-3, 0.5, 2.0, 20.0] {
            let (a, b) = (t.eval(x), t.direct(x));
            assert!((a.0 - b.0).abs() < 1e-9);
            assert!(
                (a.1 / b.1 - 1.0).abs() < 1e-5 && (a.2 / b.2 - 1.0).abs() < 1e-5,
                "{x}: {a:?} {b:?}"
            );
        }
    }

    #[test]
    fn exp_gap_is_continuous() {
        let w = 1e-3;
        assert!((exp_gap(w * (1.0 - 1e-12)) - exp_gap(w)).abs() < 1e-15);
        assert!((exp_gap(2.0) - ((-2f64).exp() + 1.0)).abs() < 1e-15);
    }
}
