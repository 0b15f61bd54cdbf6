//! The coupling operator and two-argument test functions.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::levy::overlap_ratio;
use crate::model::{ModelSpec, SmoothProbe};

/// A function `F(x, y)` on `[0, ∞)²`, C² off the diagonal.
pub trait CouplingProbe: Send + Sync {
    fn value(&self, x: f64, y: f64) -> f64;
    /// `(F_x, F_y)`
    fn grad(&self, x: f64, y: f64) -> (f64, f64);
    /// `(F_xx, F_xy, F_yy)`
    fn hess(&self, x: f64, y: f64) -> (f64, f64, f64);
}

/// `f1(x) + f2(y)`
#[derive(Debug, Clone)]
pub struct Separable {
    pub f1: SmoothProbe,
    pub f2: SmoothProbe,
}

impl CouplingProbe for Separable {
    fn value(&self, x: f64, y: f64) -> f64 {
        self.f1.f(x) + self.f2.f(y)
    }
    fn grad(&self, x: f64, y: f64) -> (f64, f64) {
        (self.f1.d1(x), self.f2.d1(y))
    }
    fn hess(&self, x: f64, y: f64) -> (f64, f64, f64) {
        (self.f1.d2(x), 0.0, self.f2.d2(y))
    }
}

/// `f(|x - y|) 1{x ≠ y}`
#[derive(Debug, Clone)]
pub struct DistanceProbe {
    pub f: SmoothProbe,
}

impl CouplingProbe for DistanceProbe {
    fn value(&self, x: f64, y: f64) -> f64 {
        if x == y {
            0.0
        } else {
            self.f.f((x - y).abs())
        }
    }
    fn grad(&self, x: f64, y: f64) -> (f64, f64) {
        if x == y {
            return (0.0, 0.0);
        }
        let d1 = self.f.d1((x - y).abs());
        if x > y {
            (d1, -d1)
        } else {
            (-d1, d1)
        }
    }
    fn hess(&self, x: f64, y: f64) -> (f64, f64, f64) {
        if x == y {
            return (0.0, 0.0, 0.0);
        }
        let d2 = self.f.d2((x - y).abs());
        (d2, -d2, d2)
    }
}

/// `φ(x ∨ y) ψ(|x - y|) 1{x ≠ y}`
#[derive(Debug, Clone)]
pub struct GapMaxProbe {
    pub phi: SmoothProbe,
    pub psi: SmoothProbe,
}

impl GapMaxProbe {
    /// Derivatives in `(hi, lo)` coordinates for `hi > lo`.
    fn ordered(&self, hi: f64, lo: f64) -> ((f64, f64), (f64, f64, f64)) {
        let r = hi - lo;
        let (p, p1, p2) = (self.phi.f(hi), self.phi.d1(hi), self.phi.d2(hi));
        let (q, q1, q2) = (self.psi.f(r), self.psi.d1(r), self.psi.d2(r));
        let grad = (p1 * q + p * q1, -p * q1);
        let hess = (p2 * q + 2.0 * p1 * q1 + p * q2, -p1 * q1 - p * q2, p * q2);
        (grad, hess)
    }
}

impl CouplingProbe for GapMaxProbe {
    fn value(&self, x: f64, y: f64) -> f64 {
        if x == y {
            0.0
        } else {
            self.phi.f(x.max(y)) * self.psi.f((x - y).abs())
        }
    }
    fn grad(&self, x: f64, y: f64) -> (f64, f64) {
        if x == y {
            (0.0, 0.0)
        } else if x > y {
            self.ordered(x, y).0
        } else {
            let (gh, gl) = self.ordered(y, x).0;
            (gl, gh)
        }
    }
    fn hess(&self, x: f64, y: f64) -> (f64, f64, f64) {
        if x == y {
            (0.0, 0.0, 0.0)
        } else if x > y {
            self.ordered(x, y).1
        } else {
            let (hh, hm, ll) = self.ordered(y, x).1;
            (ll, hm, hh)
        }
    }
}

/// `[V(x) + V(y) + ε F(x, y)] 1{x ≠ y}`
#[derive(Clone)]
pub struct WeightedIndicator {
    pub v: SmoothProbe,
    pub eps: f64,
    pub f: Arc<dyn CouplingProbe>,
}

impl CouplingProbe for WeightedIndicator {
    fn value(&self, x: f64, y: f64) -> f64 {
        if x == y {
            0.0
        } else {
            self.v.f(x) + self.v.f(y) + self.eps * self.f.value(x, y)
        }
    }
    fn grad(&self, x: f64, y: f64) -> (f64, f64) {
        if x == y {
            return (0.0, 0.0);
        }
        let (fx, fy) = self.f.grad(x, y);
        (self.v.d1(x) + self.eps * fx, self.v.d1(y) + self.eps * fy)
    }
    fn hess(&self, x: f64, y: f64) -> (f64, f64, f64) {
        if x == y {
            return (0.0, 0.0, 0.0);
        }
        let (fxx, fxy, fyy) = self.f.hess(x, y);
        (
            self.v.d2(x) + self.eps * fxx,
            self.eps * fxy,
            self.v.d2(y) + self.eps * fyy,
        )
    }
}

/// Drift, diffusion and jump contributions to `L̃_s F(x, y)`, each
/// including its time factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratorParts {
    pub drift: f64,
    pub diffusion: f64,
    pub jump: f64,
}

impl GeneratorParts {
    pub fn total(&self) -> f64 {
        self.drift + self.diffusion + self.jump
    }
}

/// `L̃_s F(x, y)`: drift `γ0(s,x) F_x + γ0(s,y) F_y`, diffusion
/// `b1(s) [γ1(x) F_xx + γ1(y) F_yy - 2 γ1(y) F_xy]` and the five jump
/// channels of the basic coupling weighted by `b2(s)`.
pub fn coupling_generator_apply(
    model: &ModelSpec,
    s: f64,
    x: f64,
    y: f64,
    probe: &dyn CouplingProbe,
) -> Result<f64> {
    Ok(coupling_generator_parts(model, s, x, y, probe)?.total())
}

pub fn coupling_generator_parts(
    model: &ModelSpec,
    s: f64,
    x: f64,
    y: f64,
    probe: &dyn CouplingProbe,
) -> Result<GeneratorParts> {
    if !(x >= 0.0 && y >= 0.0) || !x.is_finite() || !y.is_finite() {
        return Err(Error::Domain(format!(
            "coupling operator evaluated at ({x}, {y})"
        )));
    }
    let (fx, fy) = probe.grad(x, y);
    let mut drift = 0.0;
    for (g, f) in [(model.gamma0(s, x), fx), (model.gamma0(s, y), fy)] {
        if g != 0.0 {
            drift += g * f;
        }
    }
    let mut diffusion = 0.0;
    let (g1x, g1y) = (model.gamma1(x), model.gamma1(y));
    if g1x != 0.0 || g1y != 0.0 {
        let (fxx, fxy, fyy) = probe.hess(x, y);
        let mut c = 0.0;
        if g1x != 0.0 {
            c += g1x * fxx;
        }
        if g1y != 0.0 {
            c += g1y * (fyy - 2.0 * fxy);
        }
        diffusion = model.b1(s) * c;
    }
    let mut jump = 0.0;
    if model.has_jumps() {
        let part = jump_part(model, x, y, probe)?;
        if part != 0.0 {
            jump = model.b2(s) * part;
        }
    }
    Ok(GeneratorParts {
        drift,
        diffusion,
        jump,
    })
}

/// `L̃^j F(x, y)` by one quadrature over the summed channel integrands.
fn jump_part(model: &ModelSpec, x: f64, y: f64, probe: &dyn CouplingProbe) -> Result<f64> {
    let mu = model.mu();
    let dens = match (mu.density(), mu.is_density()) {
        (Some(d), true) => d,
        _ => {
            return Err(Error::UnsupportedMeasure(format!(
                "the coupling operator needs an absolutely continuous jump measure, got {}",
                mu.label()
            )))
        }
    };
    let (gx, gy) = (model.gamma2(x), model.gamma2(y));
    let g = gx.min(gy);
    let d = y - x;
    let f0 = probe.value(x, y);
    let (fx, fy) = probe.grad(x, y);
    let (fxx, fxy, fyy) = probe.hess(x, y);
    let gap = if d == 0.0 { f64::INFINITY } else { d.abs() };
    let tau = 1e-4 * gap.min(x.max(y));
    let direct = |tx: f64, ty: f64, z1: f64, z2: f64| probe.value(tx, ty) - f0 - z1 * fx - z2 * fy;
    let local = |z1: f64, z2: f64| {
        if z1.abs().max(z2.abs()) < tau {
            0.5 * (z1 * z1 * fxx + 2.0 * z1 * z2 * fxy + z2 * z2 * fyy)
        } else {
            direct(x + z1, y + z2, z1, z2)
        }
    };
    let integrand = |z: f64| {
        let mut acc = 0.0;
        if g > 0.0 {
            let r1 = overlap_ratio(dens, d, z);
            let r2 = overlap_ratio(dens, -d, z);
            if r1 > 0.0 {
                acc += 0.5 * g * r1 * direct(x + z, x + z, z, z - d);
            }
            if r2 > 0.0 {
                acc += 0.5 * g * r2 * direct(x + z, y + z + d, z, z + d);
            }
            let w3 = g * (1.0 - 0.5 * r1 - 0.5 * r2);
            if w3 > 0.0 {
                acc += w3 * local(z, z);
            }
        }
        if gx > gy {
            acc += (gx - gy) * local(z, 0.0);
        } else if gy > gx {
            acc += (gy - gx) * local(0.0, z);
        }
        acc
    };
    let (lo, hi) = dens.support();
    let mut breaks = vec![x, y, tau];
    if d != 0.0 {
        breaks.extend([d.abs(), lo + d.abs(), 2.0 * d.abs()]);
        if hi.is_finite() {
            breaks.push(hi - d.abs());
        }
    }
    breaks.retain(|b| *b > 0.0 && b.is_finite());
    mu.integrate_density(&integrand, 0.0, f64::INFINITY, &breaks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::LevyMeasure;

    #[test]
    fn linear_probe_sees_drift_difference() {
        let m = ModelSpec::builder()
            .gamma0(|s, x| s - x * x)
            .build()
            .unwrap();
        let f = Separable {
            f1: SmoothProbe::identity(),
            f2: SmoothProbe::combine(
                -1.0,
                &SmoothProbe::identity(),
                0.0,
                &SmoothProbe::identity(),
            ),
        };
        let v = coupling_generator_apply(&m, 0.5, 2.0, 1.0, &f).unwrap();
        assert!((v - ((0.5 - 4.0) - (0.5 - 1.0))).abs() < 1e-14);
    }

    #[test]
    fn diagonal_is_absorbing_for_indicator_probes() {
        let mu = LevyMeasure::exponential(1.0, 1.0).unwrap();
        let m = ModelSpec::builder()
            .gamma0(|_, x| -x)
            .gamma1(|x| x)
            .gamma2(|x| x)
            .mu(mu)
            .build()
            .unwrap();
        let f = DistanceProbe {
            f: SmoothProbe::new(
                |r| 2.0 + r / (1.0 + r),
                |r| 1.0 / (1.0 + r).powi(2),
                |r| -2.0 / (1.0 + r).powi(3),
            ),
        };
        assert_eq!(
            coupling_generator_apply(&m, 0.0, 1.5, 1.5, &f).unwrap(),
            0.0
        );
    }

    #[test]
    fn gap_max_probe_derivatives() {
        let phi = SmoothProbe::new(|x| 2.0 + (-x).exp(), |x| -(-x).exp(), |x| (-x).exp());
        let psi = SmoothProbe::new(|r| 2.0 - (-r).exp(), |r| (-r).exp(), |r| -(-r).exp());
        let p = GapMaxProbe { phi, psi };
        let h = 1e-5;
        for &(x, y) in &[(2.0, 0.5), (0.3, 1.7)] {
            let (gx, gy) = p.grad(x, y);
            let nx = (p.value(x + h, y) - p.value(x - h, y)) / (2.0 * h);
            let ny = (p.value(x, y + h) - p.value(x, y - h)) / (2.0 * h);
            assert!((gx - nx).abs() < 1e-8 && (gy - ny).abs() < 1e-8);
            let (hxx, hxy, hyy) = p.hess(x, y);
            let nxx = (p.grad(x + h, y).0 - p.grad(x - h, y).0) / (2.0 * h);
            let nxy = (p.grad(x, y + h).0 - p.grad(x, y - h).0) / (2.0 * h);
            let nyy = (p.grad(x, y + h).1 - p.grad(x, y - h).1) / (2.0 * h);
            assert!(
                (hxx - nxx).abs() < 1e-7 && (hxy - nxy).abs() < 1e-7 && (hyy - nyy).abs() < 1e-7
            );
        }
    }
}
