//! Lévy measures on `(0, ∞)`: densities, finite atom sets and mixtures.
//!
//! A measure must satisfy `∫ (z ∧ z²) μ(dz) < ∞`. Jumps above a cutoff `eps`
//! are simulated through a [`TailSampler`]; the mass below `eps` is summarised
//! by its second moment.

use std::fmt;
use std::sync::{Arc, RwLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quad::{gk21, Integrator};
use crate::rng::uniform;

/// Smallest jump size seen by any quadrature.
pub const Z_FLOOR: f64 = 1e-14;
const INTEGRABILITY_CAP: f64 = 1e12;
const SAMPLER_NODES: usize = 4096;

pub type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A Lebesgue density supported on `[lo, hi]`.
#[derive(Clone)]
pub struct Density {
    f: DensityFn,
    lo: f64,
    hi: f64,
    power_hint: Option<f64>,
}

impl Density {
    /// `hi` may be `f64::INFINITY`.
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static, lo: f64, hi: f64) -> Result<Self> {
        if !(lo >= 0.0) || !(hi > lo) {
            return invalid(format!("density support [{lo}, {hi}] is empty or negative"));
        }
        Ok(Self {
            f: Arc::new(f),
            lo,
            hi,
            power_hint: None,
        })
    }

    /// Declares `m(z) ~ c z^(-1-alpha)` as `z → 0`, which enables a
    /// change of variables for the small-jump second moment.
    pub fn with_power_hint(mut self, alpha: f64) -> Result<Self> {
        if !(alpha < 2.0) {
            return invalid(format!("power hint alpha = {alpha} must be below 2"));
        }
        self.power_hint = Some(alpha);
        Ok(self)
    }

    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        if z <= 0.0 || z < self.lo || z > self.hi {
            0.0
        } else {
            (self.f)(z)
        }
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn power_hint(&self) -> Option<f64> {
        self.power_hint
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub mass: f64,
}

/// Moments of a measure split at a cutoff `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncatedMoments {
    pub eps: f64,
    /// `∫_{(0, eps]} z² μ(dz)`
    pub sigma2_small: f64,
    /// `∫_{(eps, ∞)} z μ(dz)`
    pub mean_large: f64,
    /// `μ((eps, ∞))`
    pub mass_large: f64,
    /// `∫_{(1, ∞)} z μ(dz)`
    pub mean_unit_tail: f64,
}

/// Total mass of a measure, which may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mass {
    Finite(f64),
    Infinite,
}

impl Mass {
    pub fn value(self) -> f64 {
        match self {
            Mass::Finite(v) => v,
            Mass::Infinite => f64::INFINITY,
        }
    }
}

pub struct LevyMeasure {
    density: Option<Density>,
    atoms: Vec<Atom>,
    tol: f64,
    label: String,
    samplers: RwLock<Vec<(u64, Arc<TailSampler>)>>,
}

impl Clone for LevyMeasure {
    fn clone(&self) -> Self {
        Self {
            density: self.density.clone(),
            atoms: self.atoms.clone(),
            tol: self.tol,
            label: self.label.clone(),
            samplers: RwLock::new(Vec::new()),
        }
    }
}

impl fmt::Debug for LevyMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LevyMeasure")
            .field("label", &self.label)
            .field(
                "density",
                &self.density.as_ref().map(|d| (d.lo, d.hi, d.power_hint)),
            )
            .field("atoms", &self.atoms)
            .finish()
    }
}

impl LevyMeasure {
    /// The zero measure.
    pub fn none() -> Self {
        Self::raw(None, Vec::new(), "none")
    }

    pub fn atomic(atoms: Vec<Atom>) -> Result<Self> {
        Self::mixture_inner(None, atoms, "atomic".into())
    }

    pub fn from_density(density: Density) -> Result<Self> {
        Self::mixture_inner(Some(density), Vec::new(), "density".into())
    }

    pub fn mixture(density: Density, atoms: Vec<Atom>) -> Result<Self> {
        Self::mixture_inner(Some(density), atoms, "mixture".into())
    }

    /// `m(z) = intensity · e^{-rate z}`
    pub fn exponential(intensity: f64, rate: f64) -> Result<Self> {
        if !(intensity > 0.0 && rate > 0.0) {
            return invalid("exponential measure needs positive intensity and rate");
        }
        let d = Density::new(move |z| intensity * (-rate * z).exp(), 0.0, f64::INFINITY)?;
        Self::from_density(d).map(|m| m.labelled(format!("exponential({intensity}, {rate})")))
    }

    /// `m(z) = z^{-1-alpha}` on `(0, zmax]`.
    pub fn power(alpha: f64, zmax: f64) -> Result<Self> {
        if !(alpha < 2.0) || !(zmax > 0.0 && zmax.is_finite()) {
            return invalid("power measure needs alpha < 2 and finite zmax > 0");
        }
        let d = Density::new(move |z| z.powf(-1.0 - alpha), 0.0, zmax)?.with_power_hint(alpha)?;
        Self::from_density(d).map(|m| m.labelled(format!("power({alpha}, {zmax})")))
    }

    /// `m(z) = z^{-1-alpha} e^{-lambda z}` on `(0, ∞)`.
    pub fn tempered(alpha: f64, lambda: f64) -> Result<Self> {
        if !(alpha < 2.0) || !(lambda > 0.0) {
            return invalid("tempered measure needs alpha < 2 and lambda > 0");
        }
        let d = Density::new(
            move |z| z.powf(-1.0 - alpha) * (-lambda * z).exp(),
            0.0,
            f64::INFINITY,
        )?
        .with_power_hint(alpha)?;
        Self::from_density(d).map(|m| m.labelled(format!("tempered({alpha}, {lambda})")))
    }

    pub fn labelled(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Nominal accuracy of derived integrals.
    pub fn with_quadrature_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    fn raw(density: Option<Density>, atoms: Vec<Atom>, label: &str) -> Self {
        Self {
            density,
            atoms,
            tol: 1e-8,
            label: label.into(),
            samplers: RwLock::new(Vec::new()),
        }
    }

    fn mixture_inner(density: Option<Density>, atoms: Vec<Atom>, label: String) -> Result<Self> {
        for a in &atoms {
            if !(a.location > 0.0 && a.location.is_finite())
                || !(a.mass > 0.0 && a.mass.is_finite())
            {
                return invalid(format!(
                    "atom {a:?} needs positive finite location and mass"
                ));
            }
        }
        if let Some(d) = &density {
            let lo = d.lo.max(1e-12);
            let hi = d.hi.min(1e6).max(lo * 2.0);
            for k in 0..1024 {
                let z = lo * (hi / lo).powf(k as f64 / 1023.0);
                let v = d.eval(z);
                if !(v >= 0.0) || v.is_infinite() {
                    return invalid(format!("density is negative or undefined at z = {z}: {v}"));
                }
            }
        }
        let m = Self::raw(density, atoms, &label);
        if let Some(d) = &m.density {
            if d.lo == 0.0 && d.power_hint.is_none() && m.growth_diverges(&|z| z * z) {
                return invalid("measure does not satisfy ∫ (z ∧ z²) μ(dz) < ∞ near zero");
            }
        }
        let small = m.integrate(&|z| z * z, 0.0, 1.0);
        let large = m.integrate(&|z| z, 1.0, f64::INFINITY);
        match (small, large) {
            (Ok(a), Ok(b)) if a + b < INTEGRABILITY_CAP => Ok(m),
            _ => invalid("measure does not satisfy ∫ (z ∧ z²) μ(dz) < ∞"),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn quadrature_tol(&self) -> f64 {
        self.tol
    }

    pub fn density(&self) -> Option<&Density> {
        self.density.as_ref()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn is_zero(&self) -> bool {
        self.density.is_none() && self.atoms.is_empty()
    }

    /// True when the measure is absolutely continuous and non-zero.
    pub fn is_density(&self) -> bool {
        self.density.is_some() && self.atoms.is_empty()
    }

    pub fn density_at(&self, z: f64) -> f64 {
        self.density.as_ref().map_or(0.0, |d| d.eval(z))
    }

    /// Breakpoints where integrands against the measure may have kinks.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = vec![1.0];
        if let Some(d) = &self.density {
            if d.lo > 0.0 {
                b.push(d.lo);
            }
            if d.hi.is_finite() {
                b.push(d.hi);
            }
        }
        b
    }

    fn integrator(&self) -> Integrator {
        Integrator::new((self.tol * 1e-2).clamp(1e-13, 1e-6)).with_max_intervals(6000)
    }

    /// `∫_{(a, b]} g(z) m(z) dz` over the density part only.
    pub fn integrate_density(
        &self,
        g: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        breaks: &[f64],
    ) -> Result<f64> {
        let Some(d) = &self.density else {
            return Ok(0.0);
        };
        let lo = a.max(d.lo).max(Z_FLOOR);
        let hi = b.min(d.hi);
        if !(hi > lo) {
            return Ok(0.0);
        }
        let mut pts = self.breakpoints();
        pts.extend_from_slice(breaks);
        let f = |z: f64| {
            let m = d.eval(z);
            if m == 0.0 {
                0.0
            } else {
                g(z) * m
            }
        };
        Ok(self.integrator().integrate_breaks(&f, lo, hi, &pts)?.value)
    }

    /// `∫_{(a, b]} g dμ` including atoms.
    pub fn integrate(&self, g: &dyn Fn(f64) -> f64, a: f64, b: f64) -> Result<f64> {
        self.integrate_with_breaks(g, a, b, &[])
    }

    pub fn integrate_with_breaks(
        &self,
        g: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        breaks: &[f64],
    ) -> Result<f64> {
        let mut total = self.integrate_density(g, a, b, breaks)?;
        for at in &self.atoms {
            if at.location > a && at.location <= b {
                total += at.mass * g(at.location);
            }
        }
        if !total.is_finite() {
            return Err(Error::DivergentIntegral(format!(
                "integral over ({a}, {b}] is not finite"
            )));
        }
        Ok(total)
    }

    fn divergent(what: &str, e: Error) -> Error {
        Error::DivergentIntegral(format!("{what}: {e}"))
    }

    fn sigma2_density(&self, eps: f64) -> Result<f64> {
        let Some(d) = &self.density else {
            return Ok(0.0);
        };
        let top = eps.min(d.hi);
        if !(top > d.lo.max(0.0)) {
            return Ok(0.0);
        }
        if let (Some(alpha), true) = (d.power_hint, d.lo == 0.0) {
            let p = 1.0 / (2.0 - alpha);
            let f = |u: f64| {
                if u <= 0.0 {
                    return 0.0;
                }
                let z = top * u.powf(p);
                let dz = top * p * u.powf(p - 1.0);
                z * z * d.eval(z) * dz
            };
            return Ok(self.integrator().integrate_breaks(&f, 0.0, 1.0, &[])?.value);
        }
        self.integrate_density(&|z| z * z, 0.0, top, &[])
    }

    pub fn truncated_moments(&self, eps: f64) -> Result<TruncatedMoments> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::Domain(format!(
                "cutoff eps = {eps} must be positive and finite"
            )));
        }
        let mut sigma2_small = self
            .sigma2_density(eps)
            .map_err(|e| Self::divergent("small-jump variance", e))?;
        for a in &self.atoms {
            if a.location <= eps {
                sigma2_small += a.mass * a.location * a.location;
            }
        }
        let mean_large = self
            .integrate(&|z| z, eps, f64::INFINITY)
            .map_err(|e| Self::divergent("large-jump mean", e))?;
        let mass_large = self
            .integrate(&|_| 1.0, eps, f64::INFINITY)
            .map_err(|e| Self::divergent("large-jump mass", e))?;
        let mean_unit_tail = self
            .integrate(&|z| z, 1.0, f64::INFINITY)
            .map_err(|e| Self::divergent("unit tail mean", e))?;
        Ok(TruncatedMoments {
            eps,
            sigma2_small,
            mean_large,
            mass_large,
            mean_unit_tail,
        })
    }

    /// Sampler for `μ` restricted to `(eps, ∞)` and normalised; cached per cutoff.
    pub fn tail_sampler(&self, eps: f64) -> Result<Arc<TailSampler>> {
        let key = eps.to_bits();
        if let Some((_, s)) = self
            .samplers
            .read()
            .expect("sampler cache")
            .iter()
            .find(|(k, _)| *k == key)
        {
            return Ok(Arc::clone(s));
        }
        let s = Arc::new(TailSampler::new(self, eps)?);
        self.samplers
            .write()
            .expect("sampler cache")
            .push((key, Arc::clone(&s)));
        Ok(s)
    }

    /// Draws one jump size from `μ` restricted to `(eps, ∞)`.
    pub fn sample_large_jump<R: Rng + ?Sized>(&self, eps: f64, rng: &mut R) -> Result<f64> {
        Ok(self.tail_sampler(eps)?.sample(rng))
    }

    fn growth_diverges(&self, g: &dyn Fn(f64) -> f64) -> bool {
        let lvl = [1e-4, 1e-8, 1e-12];
        let vals: Vec<f64> = lvl
            .iter()
            .map(|&dl| {
                self.integrate_density(g, dl, 1.0, &[])
                    .unwrap_or(f64::INFINITY)
            })
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return true;
        }
        let d1 = vals[1] - vals[0];
        let d2 = vals[2] - vals[1];
        d2 > 1e-6 * vals[2].abs().max(1e-300) && d2 > 0.5 * d1
    }

    /// True when `∫_0^1 z μ(dz) = ∞`.
    pub fn small_jump_first_moment_infinite(&self) -> bool {
        match &self.density {
            None => false,
            Some(d) if d.lo > 0.0 => false,
            Some(d) => match d.power_hint {
                Some(alpha) => alpha >= 1.0,
                None => self.growth_diverges(&|z| z),
            },
        }
    }

    /// Total mass `μ((0, ∞))`.
    pub fn total_mass(&self) -> Result<Mass> {
        let infinite = match &self.density {
            None => false,
            Some(d) if d.lo > 0.0 => false,
            Some(d) => match d.power_hint {
                Some(alpha) => alpha >= 0.0,
                None => self.growth_diverges(&|_| 1.0),
            },
        };
        if infinite {
            return Ok(Mass::Infinite);
        }
        Ok(Mass::Finite(self.integrate(
            &|_| 1.0,
            0.0,
            f64::INFINITY,
        )?))
    }

    fn require_density(&self) -> Result<&Density> {
        match (&self.density, self.atoms.is_empty()) {
            (Some(d), true) => Ok(d),
            _ => Err(Error::UnsupportedMeasure(format!(
                "overlap control needs an absolutely continuous measure, got {}",
                self.label
            ))),
        }
    }

    /// `ρ(d, z) = min(m(z), m(z - d)) / m(z)`, with `m = 0` on `(-∞, 0]`.
    pub fn overlap_control(&self, d: f64, z: f64) -> Result<f64> {
        let dens = self.require_density()?;
        Ok(overlap_ratio(dens, d, z))
    }

    /// `∫ min(m(z), m(z - d)) dz`.
    pub fn overlap_mass(&self, d: f64) -> Result<Mass> {
        let dens = self.require_density()?;
        if d == 0.0 {
            return self.total_mass();
        }
        let a = d.abs();
        let f = |z: f64| {
            let m1 = dens.eval(z);
            if m1 == 0.0 {
                return 0.0;
            }
            m1.min(dens.eval(z - d))
        };
        let lo = if d > 0.0 { d + dens.lo } else { dens.lo };
        let lo = lo.max(Z_FLOOR);
        let hi = if d > 0.0 { dens.hi } else { dens.hi - a };
        if !(hi > lo) {
            return Ok(Mass::Finite(0.0));
        }
        let mut pts = vec![1.0, a, 1.0 + a];
        if dens.hi.is_finite() {
            pts.push(dens.hi);
            pts.push(dens.hi - a);
        }
        let v = self.integrator().integrate_breaks(&f, lo, hi, &pts)?.value;
        Ok(Mass::Finite(v))
    }
}

#[inline]
pub(crate) fn overlap_ratio(dens: &Density, d: f64, z: f64) -> f64 {
    if d == 0.0 {
        return 1.0;
    }
    let m = dens.eval(z);
    if !(m > 0.0) {
        return 0.0;
    }
    let shifted = if z - d > 0.0 { dens.eval(z - d) } else { 0.0 };
    (shifted / m).min(1.0)
}

/// Inverse-CDF sampler for `μ` restricted to `(eps, ∞)`.
#[derive(Debug, Clone)]
pub struct TailSampler {
    eps: f64,
    nodes: Vec<f64>,
    cum: Vec<f64>,
    density_mass: f64,
    atoms: Vec<(f64, f64)>,
    total: f64,
}

impl TailSampler {
    pub fn new(measure: &LevyMeasure, eps: f64) -> Result<Self> {
        if !(eps >= 0.0) {
            return Err(Error::Domain(format!(
                "cutoff eps = {eps} must be non-negative"
            )));
        }
        let mut nodes = Vec::new();
        let mut cum = Vec::new();
        let mut density_mass = 0.0;
        if let Some(d) = &measure.density {
            let lower = eps.max(d.lo).max(Z_FLOOR);
            if eps == 0.0 && matches!(measure.total_mass()?, Mass::Infinite) {
                return Err(Error::Domain("eps = 0 needs a finite measure".into()));
            }
            let tail = measure.integrate_density(&|_| 1.0, lower, f64::INFINITY, &[])?;
            if tail > 0.0 && d.hi > lower {
                let cap = if d.hi.is_finite() {
                    d.hi
                } else {
                    let mut r = (2.0 * lower).max(1.0);
                    loop {
                        let rest = measure.integrate_density(&|_| 1.0, r, f64::INFINITY, &[])?;
                        if rest <= 1e-12 * tail || r > 1e15 {
                            break r;
                        }
                        r *= 2.0;
                    }
                };
                let ratio = cap / lower;
                nodes = (0..SAMPLER_NODES)
                    .map(|k| lower * ratio.powf(k as f64 / (SAMPLER_NODES - 1) as f64))
                    .collect();
                *nodes.last_mut().unwrap() = cap;
                cum.push(0.0);
                let f = |z: f64| d.eval(z);
                let mut acc = 0.0;
                for w in nodes.windows(2) {
                    acc += gk21(&f, w[0], w[1]).value.max(0.0);
                    cum.push(acc);
                }
                density_mass = acc;
            }
        }
        let mut atoms = Vec::new();
        let mut acc = density_mass;
        for a in &measure.atoms {
            if a.location > eps {
                acc += a.mass;
                atoms.push((a.location, acc));
            }
        }
        if !(acc > 0.0) {
            return Err(Error::ZeroTail { eps });
        }
        Ok(Self {
            eps,
            nodes,
            cum,
            density_mass,
            atoms,
            total: acc,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Mass of the restricted measure as tabulated.
    pub fn mass(&self) -> f64 {
        self.total
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = uniform(rng) * self.total;
        if u < self.density_mass {
            let i = self
                .cum
                .partition_point(|&c| c <= u)
                .clamp(1, self.cum.len() - 1)
                - 1;
            let (c0, c1) = (self.cum[i], self.cum[i + 1]);
            let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
            self.nodes[i] + frac * (self.nodes[i + 1] - self.nodes[i])
        } else {
            let j = self
                .atoms
                .partition_point(|&(_, c)| c <= u)
                .min(self.atoms.len() - 1);
            self.atoms[j].0
        }
    }
}
