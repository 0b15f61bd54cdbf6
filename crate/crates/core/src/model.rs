//! Model coefficients, the time-inhomogeneous generator and the drift
//! kernels used by the extinction and explosion criteria.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::levy::{LevyMeasure, TruncatedMoments};
use crate::quad::graded_unit;

pub type TimeStateFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A C² test function together with its first two derivatives.
#[derive(Clone)]
pub struct SmoothProbe {
    f: ScalarFn,
    f1: ScalarFn,
    f2: ScalarFn,
}

impl fmt::Debug for SmoothProbe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SmoothProbe")
    }
}

impl SmoothProbe {
    pub fn new(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f2: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            f: Arc::new(f),
            f1: Arc::new(f1),
            f2: Arc::new(f2),
        }
    }

    /// Derivatives by central differences.
    pub fn numeric(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        let f: ScalarFn = Arc::new(f);
        let (g1, g2) = (Arc::clone(&f), Arc::clone(&f));
        Self {
            f,
            f1: Arc::new(move |x| {
                let h = 1e-5 * (1.0 + x.abs());
                if x - h >= 0.0 {
                    (g1(x + h) - g1(x - h)) / (2.0 * h)
                } else {
                    (-3.0 * g1(x) + 4.0 * g1(x + h) - g1(x + 2.0 * h)) / (2.0 * h)
                }
            }),
            f2: Arc::new(move |x| {
                let h = 1e-4 * (1.0 + x.abs());
                if x - h >= 0.0 {
                    (g2(x + h) - 2.0 * g2(x) + g2(x - h)) / (h * h)
                } else {
                    (2.0 * g2(x) - 5.0 * g2(x + h) + 4.0 * g2(x + 2.0 * h) - g2(x + 3.0 * h))
                        / (h * h)
                }
            }),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c, |_| 0.0, |_| 0.0)
    }

    pub fn identity() -> Self {
        Self::new(|x| x, |_| 1.0, |_| 0.0)
    }

    /// `x^p`
    pub fn power(p: f64) -> Self {
        Self::new(
            move |x| x.powf(p),
            move |x| p * x.powf(p - 1.0),
            move |x| p * (p - 1.0) * x.powf(p - 2.0),
        )
    }

    /// `a f + b g`
    pub fn combine(a: f64, f: &SmoothProbe, b: f64, g: &SmoothProbe) -> Self {
        let (f0, g0) = (Arc::clone(&f.f), Arc::clone(&g.f));
        let (f1, g1) = (Arc::clone(&f.f1), Arc::clone(&g.f1));
        let (f2, g2) = (Arc::clone(&f.f2), Arc::clone(&g.f2));
        Self::new(
            move |x| a * f0(x) + b * g0(x),
            move |x| a * f1(x) + b * g1(x),
            move |x| a * f2(x) + b * g2(x),
        )
    }

    #[inline]
    pub fn f(&self, x: f64) -> f64 {
        (self.f)(x)
    }
    #[inline]
    pub fn d1(&self, x: f64) -> f64 {
        (self.f1)(x)
    }
    #[inline]
    pub fn d2(&self, x: f64) -> f64 {
        (self.f2)(x)
    }

    /// Compares the supplied derivatives with symmetric differences at `points`.
    pub fn check_consistency(&self, points: &[f64], rel_tol: f64) -> Result<()> {
        for &x in points {
            let h = 1e-4 * (1.0 + x.abs());
            if x - h < 0.0 {
                continue;
            }
            let d1 = (self.f(x + h) - self.f(x - h)) / (2.0 * h);
            let d2 = (self.d1(x + h) - self.d1(x - h)) / (2.0 * h);
            let scale1 = self.d1(x).abs().max(1.0);
            let scale2 = self.d2(x).abs().max(1.0);
            if (d1 - self.d1(x)).abs() > rel_tol * scale1
                || (d2 - self.d2(x)).abs() > rel_tol * scale2
            {
                return invalid(format!("probe derivatives inconsistent at x = {x}"));
            }
        }
        Ok(())
    }
}

/// Piecewise-constant function of time: `values[k]` on `[breaks[k-1], breaks[k])`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseConstant {
    breaks: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseConstant {
    /// `breaks` increasing, `values.len() == breaks.len() + 1`.
    pub fn new(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != breaks.len() + 1 {
            return invalid("piecewise function needs one more value than breakpoints");
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("piecewise breakpoints must increase");
        }
        Ok(Self { breaks, values })
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.values[self.breaks.partition_point(|&b| b <= s)]
    }
}

/// Declared properties that are not checked beyond spot grids.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RegularityFlags {
    pub gamma2_vanishes_at_zero: bool,
    pub b_bounded_on_compacts: bool,
}

/// Coefficients of the state equation.
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    gamma0: TimeStateFn,
    gamma1: Option<ScalarFn>,
    gamma2: Option<ScalarFn>,
    b0: ScalarFn,
    b1: ScalarFn,
    b2: ScalarFn,
    mu: Arc<LevyMeasure>,
    weight: Option<SmoothProbe>,
    flags: RegularityFlags,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("diffusion", &self.gamma1.is_some())
            .field("jumps", &self.has_jumps())
            .field("mu", &self.mu)
            .finish()
    }
}

pub struct ModelBuilder {
    spec: ModelSpec,
}

impl ModelBuilder {
    pub fn name(mut self, name: impl Into<String>) -> Self {
        self.spec.name = name.into();
        self
    }
    pub fn gamma0(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.spec.gamma0 = Arc::new(f);
        self
    }
    pub fn gamma1(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.spec.gamma1 = Some(Arc::new(f));
        self
    }
    pub fn gamma2(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.spec.gamma2 = Some(Arc::new(f));
        self
    }
    pub fn b0(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.spec.b0 = Arc::new(f);
        self
    }
    pub fn b1(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.spec.b1 = Arc::new(f);
        self
    }
    pub fn b2(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.spec.b2 = Arc::new(f);
        self
    }
    pub fn mu(mut self, mu: LevyMeasure) -> Self {
        self.spec.mu = Arc::new(mu);
        self
    }
    pub fn mu_shared(mut self, mu: Arc<LevyMeasure>) -> Self {
        self.spec.mu = mu;
        self
    }
    pub fn weight(mut self, v: SmoothProbe) -> Self {
        self.spec.weight = Some(v);
        self
    }
    pub fn flags(mut self, flags: RegularityFlags) -> Self {
        self.spec.flags = flags;
        self
    }

    /// Validates the coefficients on spot grids.
    pub fn build(self) -> Result<ModelSpec> {
        let m = self.spec;
        let xs: Vec<f64> = std::iter::once(0.0)
            .chain((0..1024).map(|k| 1e-6 * 1e12f64.powf(k as f64 / 1023.0)))
            .collect();
        if let Some(g1) = &m.gamma1 {
            if let Some(&x) = xs.iter().find(|&&x| !(g1(x) >= 0.0)) {
                return invalid(format!("gamma1({x}) = {} is negative or undefined", g1(x)));
            }
        }
        if let Some(g2) = &m.gamma2 {
            let vals: Vec<f64> = xs.iter().map(|&x| g2(x)).collect();
            if let Some(k) = vals.iter().position(|v| !(*v >= 0.0)) {
                return invalid(format!(
                    "gamma2({}) = {} is negative or undefined",
                    xs[k], vals[k]
                ));
            }
            if let Some(k) =
                (1..vals.len()).find(|&k| vals[k] < vals[k - 1] - 1e-12 * vals[k - 1].abs())
            {
                return invalid(format!("gamma2 decreases near x = {}", xs[k]));
            }
        }
        for (label, b) in [("b0", &m.b0), ("b1", &m.b1), ("b2", &m.b2)] {
            for k in 0..256 {
                let s = 1e-6 * 1e9f64.powf(k as f64 / 255.0);
                let v = b(s);
                if !(v > 0.0) || !v.is_finite() {
                    return invalid(format!("{label}({s}) = {v} is not strictly positive"));
                }
            }
        }
        Ok(m)
    }
}

impl ModelSpec {
    /// Starts from `γ0 = γ1 = γ2 = 0`, `b0 = b1 = b2 = 1` and no jumps.
    pub fn builder() -> ModelBuilder {
        ModelBuilder {
            spec: ModelSpec {
                name: "custom".into(),
                gamma0: Arc::new(|_, _| 0.0),
                gamma1: None,
                gamma2: None,
                b0: Arc::new(|_| 1.0),
                b1: Arc::new(|_| 1.0),
                b2: Arc::new(|_| 1.0),
                mu: Arc::new(LevyMeasure::none()),
                weight: None,
                flags: RegularityFlags::default(),
            },
        }
    }

    /// Reopens the model for modification.
    pub fn to_builder(&self) -> ModelBuilder {
        ModelBuilder { spec: self.clone() }
    }

    /// Branching process: `γ0 = -b x`, `γ1 = γ2 = x`.
    pub fn cb(b: f64, mu: LevyMeasure) -> Result<Self> {
        if !b.is_finite() {
            return invalid("cb parameter must be finite");
        }
        let mut bld = Self::builder()
            .name(format!("cb({b})"))
            .gamma0(move |_, x| -b * x)
            .gamma1(|x| x)
            .weight(SmoothProbe::identity())
            .flags(RegularityFlags {
                gamma2_vanishes_at_zero: true,
                b_bounded_on_compacts: true,
            });
        if !mu.is_zero() {
            bld = bld.gamma2(|x| x).mu(mu);
        }
        bld.build()
    }

    /// Logistic drift `γ0 = a1 (1 - a0 x) s^θ`, `γ1 = x`, clock `b0 = s^θ`.
    pub fn logistic(a1: f64, a0: f64, theta: f64, mu: LevyMeasure) -> Result<Self> {
        if !(a1 > 0.0) || !(a0 >= 0.0) || !(theta >= 0.0) {
            return invalid("logistic model needs a1 > 0 and a0, theta >= 0");
        }
        let clock = move |s: f64| if theta == 0.0 { 1.0 } else { s.powf(theta) };
        let mut bld = Self::builder()
            .name(format!("logistic({a1}, {a0}, {theta})"))
            .gamma0(move |s, x| a1 * (1.0 - a0 * x) * clock(s))
            .gamma1(|x| x)
            .b0(clock)
            .weight(SmoothProbe::identity())
            .flags(RegularityFlags {
                gamma2_vanishes_at_zero: true,
                b_bounded_on_compacts: true,
            });
        if !mu.is_zero() {
            bld = bld.gamma2(|x| x).mu(mu);
        }
        bld.build()
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    #[inline]
    pub fn gamma0(&self, s: f64, x: f64) -> f64 {
        (self.gamma0)(s, x)
    }
    #[inline]
    pub fn gamma1(&self, x: f64) -> f64 {
        self.gamma1.as_ref().map_or(0.0, |g| g(x))
    }
    #[inline]
    pub fn gamma2(&self, x: f64) -> f64 {
        self.gamma2.as_ref().map_or(0.0, |g| g(x))
    }
    #[inline]
    pub fn b0(&self, s: f64) -> f64 {
        (self.b0)(s)
    }
    #[inline]
    pub fn b1(&self, s: f64) -> f64 {
        (self.b1)(s)
    }
    #[inline]
    pub fn b2(&self, s: f64) -> f64 {
        (self.b2)(s)
    }
    pub fn mu(&self) -> &LevyMeasure {
        &self.mu
    }
    pub fn mu_shared(&self) -> Arc<LevyMeasure> {
        Arc::clone(&self.mu)
    }
    pub fn weight(&self) -> Option<&SmoothProbe> {
        self.weight.as_ref()
    }
    pub fn flags(&self) -> RegularityFlags {
        self.flags
    }
    pub fn has_diffusion(&self) -> bool {
        self.gamma1.is_some()
    }
    pub fn has_jumps(&self) -> bool {
        self.gamma2.is_some() && !self.mu.is_zero()
    }

    pub fn moments(&self, eps: f64) -> Result<Option<TruncatedMoments>> {
        if self.has_jumps() {
            self.mu.truncated_moments(eps).map(Some)
        } else {
            Ok(None)
        }
    }

    /// `∫ z² μ(dz) ∫_0^1 f2(x + z u) (1 - u) du`
    pub fn jump_f2_integral(&self, x: f64, f2: &(dyn Fn(f64) -> f64 + Sync)) -> Result<f64> {
        if self.mu.is_zero() {
            return Ok(0.0);
        }
        let inner = |z: f64| {
            let width = if z > 0.0 { (x / z).max(1e-300) } else { 1.0 };
            z * z * graded_unit(|u| f2(x + z * u) * (1.0 - u), width)
        };
        let mut breaks = vec![x.max(1e-300)];
        if x > 0.0 {
            breaks.push(0.1 * x);
            breaks.push(10.0 * x);
        }
        self.mu
            .integrate_with_breaks(&inner, 0.0, f64::INFINITY, &breaks)
    }

    /// The generator applied to `probe` at time `s` and state `x`.
    pub fn generator_apply(&self, s: f64, x: f64, probe: &SmoothProbe) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::Domain(format!("generator evaluated at x = {x}")));
        }
        let mut total = self.gamma0(s, x) * probe.d1(x);
        let g1 = self.gamma1(x);
        if g1 != 0.0 {
            total += g1 * self.b1(s) * probe.d2(x);
        }
        let g2 = self.gamma2(x);
        if g2 != 0.0 && !self.mu.is_zero() {
            let f2 = |y: f64| probe.d2(y);
            total += g2 * self.b2(s) * self.jump_f2_integral(x, &f2)?;
        }
        Ok(total)
    }

    /// Time-free parts `(A, B)` of `H(s, x) = b1(s) A(x) + b2(s) B(x)`.
    pub fn h_parts(&self, x: f64) -> Result<(f64, f64)> {
        if !(x > 0.0) {
            return Err(Error::Domain(format!("kernel needs x > 0, got {x}")));
        }
        let a = self.gamma1(x) / (x * x);
        let g2 = self.gamma2(x);
        let b = if g2 != 0.0 && !self.mu.is_zero() {
            g2 * self.jump_f2_integral(x, &|y: f64| 1.0 / (y * y))?
        } else {
            0.0
        };
        Ok((a, b))
    }

    pub fn h_kernel(&self, s: f64, x: f64) -> Result<f64> {
        let (a, b) = self.h_parts(x)?;
        Ok(combine(self.b1(s), a, self.b2(s), b))
    }

    /// Time-free parts `(A, B)` of
    /// `H_ρ(s, x) = -x^(ρ-1) γ0(s, x) + b1(s) A(x) + b2(s) B(x)`.
    pub fn h_rho_parts(&self, x: f64, rho: f64) -> Result<(f64, f64)> {
        if !(x > 0.0) {
            return Err(Error::Domain(format!("kernel needs x > 0, got {x}")));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Domain(format!("rho = {rho} must lie in (0, 1)")));
        }
        let a = (1.0 - rho) * x.powf(rho - 2.0) * self.gamma1(x);
        let g2 = self.gamma2(x);
        let b = if g2 != 0.0 && !self.mu.is_zero() {
            (1.0 - rho) * g2 * self.jump_f2_integral(x, &|y: f64| y.powf(rho - 2.0))?
        } else {
            0.0
        };
        Ok((a, b))
    }

    pub fn h_rho_kernel(&self, s: f64, x: f64, rho: f64) -> Result<f64> {
        let (a, b) = self.h_rho_parts(x, rho)?;
        Ok(-x.powf(rho - 1.0) * self.gamma0(s, x) + combine(self.b1(s), a, self.b2(s), b))
    }
}

#[inline]
fn combine(b1: f64, a: f64, b2: f64, b: f64) -> f64 {
    let mut h = 0.0;
    if a != 0.0 {
        h += b1 * a;
    }
    if b != 0.0 {
        h += b2 * b;
    }
    h
}

/// `G(x, z) = z/x - ln(1 + z/x)`, evaluated without cancellation.
pub fn log_gap(x: f64, z: f64) -> f64 {
    let r = z / x;
    if r.abs() < 1e-3 {
        r * r * (0.5 - r * (1.0 / 3.0 - r * (0.25 - r / 5.0)))
    } else {
        r - r.ln_1p()
    }
}
