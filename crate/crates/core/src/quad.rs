//! Adaptive Gauss–Kronrod quadrature and fixed Gauss–Legendre rules.
//!
//! [`Integrator`] bisects the interval with the largest error estimate until
//! the summed error meets the tolerance. Semi-infinite ranges are mapped onto
//! `[0, 1)` with `z = a + t / (1 - t)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077208980115840,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];

const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

/// Result of a 21-point Kronrod rule on one interval.
#[derive(Debug, Clone, Copy)]
pub struct RuleValue {
    pub value: f64,
    pub error: f64,
}

/// Applies the 21-point Gauss–Kronrod rule to `f` on `[a, b]`.
pub fn gk21<F: Fn(f64) -> f64 + ?Sized>(f: &F, a: f64, b: f64) -> RuleValue {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut resk = WGK[10] * fc;
    let mut resg = 0.0;
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        resk += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = resk * 0.5;
    let mut resasc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        resasc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = resk * half;
    resasc *= half.abs();
    let mut error = ((resk - resg) * half).abs();
    if resasc != 0.0 && error != 0.0 {
        error = resasc * (200.0 * error / resasc).powf(1.5).min(1.0);
    }
    RuleValue { value, error }
}

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

/// Globally adaptive integrator.
#[derive(Debug, Clone, Copy)]
pub struct Integrator {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for Integrator {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-300,
            max_intervals: 4000,
        }
    }
}

impl Integrator {
    pub fn new(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            ..Self::default()
        }
    }

    pub fn with_abs_tol(mut self, abs_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self
    }

    pub fn with_max_intervals(mut self, n: usize) -> Self {
        self.max_intervals = n;
        self
    }

    /// Integrates `f` over `[a, b]`; `b` may be `+inf`.
    pub fn integrate<F: Fn(f64) -> f64 + ?Sized>(&self, f: &F, a: f64, b: f64) -> Result<Estimate> {
        self.integrate_breaks(f, a, b, &[])
    }

    /// Integrates over `[a, b]` with extra subdivision points.
    pub fn integrate_breaks<F: Fn(f64) -> f64 + ?Sized>(
        &self,
        f: &F,
        a: f64,
        b: f64,
        breaks: &[f64],
    ) -> Result<Estimate> {
        if a.is_nan() || b.is_nan() || a == f64::INFINITY {
            return Err(Error::Domain(format!("bad integration range [{a}, {b}]")));
        }
        if b <= a {
            return Ok(Estimate {
                value: 0.0,
                error: 0.0,
                intervals: 0,
            });
        }
        let mut pts: Vec<f64> = breaks
            .iter()
            .copied()
            .filter(|&p| p > a && p < b && p.is_finite())
            .collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let mut edges = Vec::with_capacity(pts.len() + 2);
        edges.push(a);
        edges.extend(pts);
        edges.push(b);

        let mapped_f = |t: f64, lo: f64| {
            let s = 1.0 - t;
            let z = lo + t / s;
            f(z) / (s * s)
        };
        let mut heap = BinaryHeap::new();
        let mut frozen_value = 0.0;
        let mut frozen_error = 0.0;
        let mut count = 0usize;
        for w in edges.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if hi.is_infinite() {
                let g = |t: f64| mapped_f(t, lo);
                let r = gk21(&g, 0.0, 1.0);
                heap.push(MappedOrPlain::Mapped {
                    lo,
                    ta: 0.0,
                    tb: 1.0,
                    value: r.value,
                    error: r.error,
                });
            } else {
                let r = gk21(f, lo, hi);
                heap.push(MappedOrPlain::Plain {
                    a: lo,
                    b: hi,
                    value: r.value,
                    error: r.error,
                });
            }
            count += 1;
        }

        loop {
            let (value, error) = heap.iter().fold((frozen_value, frozen_error), |(v, e), p| {
                (v + p.value(), e + p.error())
            });
            if !value.is_finite() || !error.is_finite() {
                return Err(Error::Quadrature(format!(
                    "non-finite integrand value on [{a}, {b}]"
                )));
            }
            let tol = self.abs_tol.max(self.rel_tol * value.abs());
            if error <= tol {
                return Ok(Estimate {
                    value,
                    error,
                    intervals: count,
                });
            }
            if heap.is_empty() {
                if error <= 1e3 * tol {
                    return Ok(Estimate {
                        value,
                        error,
                        intervals: count,
                    });
                }
                return Err(Error::Quadrature(format!(
                    "error {error:.3e} above tolerance {tol:.3e} on [{a}, {b}]"
                )));
            }
            if count >= self.max_intervals {
                return Err(Error::Quadrature(format!(
                    "interval budget exhausted on [{a}, {b}]: value {value:.6e}, error {error:.3e}"
                )));
            }
            let worst = heap.pop().expect("non-empty heap");
            match worst {
                MappedOrPlain::Plain {
                    a: lo,
                    b: hi,
                    value,
                    error,
                } => {
                    let mid = 0.5 * (lo + hi);
                    if !(mid > lo && mid < hi) || (hi - lo) <= 1e-15 * lo.abs().max(hi.abs()) {
                        frozen_value += value;
                        frozen_error += error;
                        continue;
                    }
                    let l = gk21(f, lo, mid);
                    let r = gk21(f, mid, hi);
                    heap.push(MappedOrPlain::Plain {
                        a: lo,
                        b: mid,
                        value: l.value,
                        error: l.error,
                    });
                    heap.push(MappedOrPlain::Plain {
                        a: mid,
                        b: hi,
                        value: r.value,
                        error: r.error,
                    });
                }
                MappedOrPlain::Mapped {
                    lo,
                    ta,
                    tb,
                    value,
                    error,
                } => {
                    let mid = 0.5 * (ta + tb);
                    if !(mid > ta && mid < tb) || (tb - ta) <= 1e-15 {
                        frozen_value += value;
                        frozen_error += error;
                        continue;
                    }
                    let g = |t: f64| mapped_f(t, lo);
                    let l = gk21(&g, ta, mid);
                    let r = gk21(&g, mid, tb);
                    heap.push(MappedOrPlain::Mapped {
                        lo,
                        ta,
                        tb: mid,
                        value: l.value,
                        error: l.error,
                    });
                    heap.push(MappedOrPlain::Mapped {
                        lo,
                        ta: mid,
                        tb,
                        value: r.value,
                        error: r.error,
                    });
                }
            }
            count += 1;
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum MappedOrPlain {
    Plain {
        a: f64,
        b: f64,
        value: f64,
        error: f64,
    },
    Mapped {
        lo: f64,
        ta: f64,
        tb: f64,
        value: f64,
        error: f64,
    },
}

impl MappedOrPlain {
    fn value(&self) -> f64 {
        match *self {
            MappedOrPlain::Plain { value, .. } | MappedOrPlain::Mapped { value, .. } => value,
        }
    }
    fn error(&self) -> f64 {
        match *self {
            MappedOrPlain::Plain { error, .. } | MappedOrPlain::Mapped { error, .. } => error,
        }
    }
}

impl PartialEq for MappedOrPlain {
    fn eq(&self, other: &Self) -> bool {
        self.error() == other.error()
    }
}
impl Eq for MappedOrPlain {}
impl PartialOrd for MappedOrPlain {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for MappedOrPlain {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error().total_cmp(&other.error())
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let (p, pm1) = if n == 1 { (x, 1.0) } else { (p1, p0) };
            dp = nf * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// The 32-point Gauss–Legendre rule on `[0, 1]`.
pub fn gl32() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(32))
}

/// Integrates `g` over `[0, 1]` with panels refined geometrically towards
/// `u = 0` at scale `width`, which resolves peaks of width `width` at the origin.
pub fn graded_unit<F: Fn(f64) -> f64>(g: F, width: f64) -> f64 {
    let (nodes, weights) = gl32();
    let panel = |lo: f64, hi: f64| -> f64 {
        let h = hi - lo;
        nodes
            .iter()
            .zip(weights)
            .map(|(&t, &w)| w * g(lo + h * t))
            .sum::<f64>()
            * h
    };
    if !(width < 0.25) {
        return panel(0.0, 1.0);
    }
    let mut total = panel(0.0, width);
    let mut lo = width;
    while lo < 1.0 {
        let hi = (lo * 4.0).min(1.0);
        total += panel(lo, hi);
        lo = hi;
    }
    total
}
