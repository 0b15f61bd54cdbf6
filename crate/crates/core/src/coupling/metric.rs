//! Weighted total variation distances and their decay along the coupling.

use std::fmt;

use serde::Serialize;

use super::CoupledSimulator;
use crate::error::{invalid, Error, Result};
use crate::model::{ModelSpec, SmoothProbe};
use crate::par;
use crate::quad::Integrator;
use crate::simulate::{MCEstimate, SimConfig};

/// `d_V(x, y) = [2 + V(x) + V(y)] 1{x ≠ y}`; `V ≡ 0` when no weight is set.
#[derive(Clone, Default)]
pub struct WeightedMetric {
    v: Option<SmoothProbe>,
}

impl fmt::Debug for WeightedMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightedMetric")
            .field("weighted", &self.v.is_some())
            .finish()
    }
}

impl WeightedMetric {
    pub fn new(v: SmoothProbe) -> Self {
        Self { v: Some(v) }
    }

    pub fn zero() -> Self {
        Self { v: None }
    }

    /// Uses the weight declared on the model.
    pub fn from_model(model: &ModelSpec) -> Self {
        Self {
            v: model.weight().cloned(),
        }
    }

    pub fn weight(&self, x: f64) -> f64 {
        self.v.as_ref().map_or(0.0, |v| v.f(x))
    }

    pub fn dist(&self, x: f64, y: f64) -> f64 {
        if x == y {
            0.0
        } else {
            2.0 + (self.weight(x) + self.weight(y))
        }
    }
}

/// Monte Carlo means of `d_V(X_t, Y_t)` along one coupling.
///
/// Each mean bounds `W_V(P_{s,t}(x0, ·), P_{s,t}(y0, ·))` from above; it is
/// not the Wasserstein distance itself.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WvBound {
    pub times: Vec<f64>,
    pub estimates: Vec<MCEstimate>,
    /// Fraction of pairs not yet merged at each time.
    pub uncoupled: Vec<f64>,
    /// `d_V(x0, y0)`
    pub initial: f64,
    pub note: String,
}

pub fn estimate_wv_bound(
    model: &ModelSpec,
    x0: f64,
    y0: f64,
    s_start: f64,
    t_grid: &[f64],
    n_paths: usize,
    metric: &WeightedMetric,
    cfg: &SimConfig,
) -> Result<WvBound> {
    if t_grid.is_empty() || !(t_grid[0] > s_start) || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return invalid("time grid must be increasing and start after s_start");
    }
    if n_paths < 2 {
        return invalid("at least two coupled paths are needed");
    }
    let horizon = *t_grid.last().expect("non-empty grid");
    let run_cfg = SimConfig {
        t_end: horizon,
        ..cfg.clone()
    };
    let sim = CoupledSimulator::new(model, &run_cfg)?;
    let rows = par::map_indexed(n_paths, |i| -> Result<Vec<(f64, bool)>> {
        let p = sim.path(x0, y0, s_start, i as u64)?;
        Ok(t_grid
            .iter()
            .map(|&t| {
                let k = p.index_at(t);
                let (x, y) = (p.x_states[k], p.y_states[k]);
                (metric.dist(x, y), x != y)
            })
            .collect())
    });
    let rows: Vec<Vec<(f64, bool)>> = rows.into_iter().collect::<Result<_>>()?;
    let mut estimates = Vec::with_capacity(t_grid.len());
    let mut uncoupled = Vec::with_capacity(t_grid.len());
    for j in 0..t_grid.len() {
        let d: Vec<f64> = rows.iter().map(|r| r[j].0).collect();
        estimates.push(MCEstimate::from_samples(&d, cfg.conf_level));
        uncoupled.push(rows.iter().filter(|r| r[j].1).count() as f64 / n_paths as f64);
    }
    Ok(WvBound {
        times: t_grid.to_vec(),
        estimates,
        uncoupled,
        initial: metric.dist(x0, y0),
        note: "upper bound on W_V through the reflection and basic coupling".into(),
    })
}

/// Least-squares fit of `ln d_k = ln C0 - C1 ∫_s^{t_k} b0(r) dr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionFit {
    pub c0: f64,
    pub c1: f64,
    /// Root mean square residual in log space.
    pub residual: f64,
    pub points: usize,
}

impl ContractionFit {
    /// `C0` relative to the starting distance.
    pub fn normalized_c0(&self, d0: f64) -> f64 {
        self.c0 / d0
    }
}

/// Fits the decay rate against the clock `∫ b0`; non-positive estimates are skipped.
pub fn fit_contraction_rate(
    t_grid: &[f64],
    estimates: &[f64],
    b0: &dyn Fn(f64) -> f64,
    s_start: f64,
) -> Result<ContractionFit> {
    if t_grid.len() != estimates.len() {
        return invalid("time grid and estimates differ in length");
    }
    let quad = Integrator::new(1e-12);
    let mut pts = Vec::new();
    for (&t, &e) in t_grid.iter().zip(estimates) {
        if e > 0.0 && e.is_finite() {
            let clock = quad.integrate(b0, s_start, t)?.value;
            pts.push((clock, e.ln()));
        }
    }
    let n = pts.len();
    if n < 3 {
        return Err(Error::DegenerateFit(format!(
            "{n} positive estimates, at least 3 needed"
        )));
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateFit(
            "all points share one clock value".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    Ok(ContractionFit {
        c0: intercept.exp(),
        c1: -slope,
        residual: (rss / nf).sqrt(),
        points: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_axioms() {
        let m = WeightedMetric::new(SmoothProbe::identity());
        assert_eq!(m.dist(1.0, 1.0), 0.0);
        assert_eq!(m.dist(1.0, 2.0), m.dist(2.0, 1.0));
        assert_eq!(m.dist(0.0, 2.0), 4.0);
        assert_eq!(WeightedMetric::zero().dist(3.0, 4.0), 2.0);
    }

    #[test]
    fn exact_exponential_fit() {
        let t: Vec<f64> = (1..=8).map(|k| 0.5 * k as f64).collect();
        let d: Vec<f64> = t.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let fit = fit_contraction_rate(&t, &d, &|_| 1.0, 0.0).unwrap();
        assert!(
            (fit.c1 - 0.7).abs() < 1e-10 && (fit.c0 - 3.0).abs() < 1e-9 && fit.residual < 1e-10
        );
        assert!(fit_contraction_rate(&t[..2], &d[..2], &|_| 1.0, 0.0).is_err());
    }
}
