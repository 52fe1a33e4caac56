//! Per-frame compression quality for one local buffer.
//!
//! The size ratio of a frame compressed at quality `d` follows the curve
//! `phi(d) = -a1 * log2(1 - a2 * d) + a3`. A buffer's decision vector trades
//! weighted storage cost against weighted value, optionally with a penalty on
//! quality jumps between neighbors.

use std::f64::consts::LN_2;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityRatioCurve {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

/// Fitted to the bundled procedural corpus with
/// [`crate::compressor::default_qualities`].
impl Default for QualityRatioCurve {
    fn default() -> Self {
        Self {
            a1: 0.03367,
            a2: 0.99808,
            a3: 0.01591,
        }
    }
}

impl QualityRatioCurve {
    /// Curve published for video JPEG compression.
    pub const REFERENCE: QualityRatioCurve = QualityRatioCurve {
        a1: 0.08,
        a2: 0.98,
        a3: 0.02,
    };

    pub fn new(a1: f64, a2: f64, a3: f64) -> Result<Self> {
        let c = Self { a1, a2, a3 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a1 > 0.0 && self.a1.is_finite()) {
            return Err(Error::Config(format!(
                "curve a1 must be positive, got {}",
                self.a1
            )));
        }
        if !(self.a2 > 0.0 && self.a2 < 1.0) {
            return Err(Error::Config(format!(
                "curve a2 must lie in (0, 1), got {}",
                self.a2
            )));
        }
        if !(self.a3 >= 0.0 && self.a3.is_finite()) {
            return Err(Error::Config(format!(
                "curve a3 must be non-negative, got {}",
                self.a3
            )));
        }
        let top = self.phi(1.0);
        if top > 1.0 {
            return Err(Error::Config(format!("curve ratio at full quality is {top} > 1")));
        }
        Ok(())
    }

    pub fn phi(&self, d: f64) -> f64 {
        -self.a1 * (-self.a2 * d).ln_1p() / LN_2 + self.a3
    }

    pub fn dphi(&self, d: f64) -> f64 {
        self.a1 * self.a2 / (LN_2 * (1.0 - self.a2 * d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LboWeights {
    /// Cost weight.
    pub eta: f64,
    /// Value weight.
    pub zeta: f64,
}

impl Default for LboWeights {
    fn default() -> Self {
        Self { eta: 0.9, zeta: 1.7 }
    }
}

impl LboWeights {
    pub fn new(eta: f64, zeta: f64) -> Result<Self> {
        let w = Self { eta, zeta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.zeta >= 0.0 && self.eta.is_finite() && self.zeta.is_finite()) {
            return Err(Error::Config(
                "LBO weights must be finite and non-negative".into(),
            ));
        }
        if self.eta == 0.0 && self.zeta == 0.0 {
            return Err(Error::Config("LBO weights cannot both be zero".into()));
        }
        Ok(())
    }
}

/// Frame costs relative to the buffer mean.
pub fn relative_costs(sizes: &[u64]) -> Vec<f64> {
    if sizes.is_empty() {
        return Vec::new();
    }
    let mean = sizes.iter().map(|s| *s as f64).sum::<f64>() / sizes.len() as f64;
    if mean == 0.0 {
        return vec![0.0; sizes.len()];
    }
    sizes.iter().map(|s| *s as f64 / mean).collect()
}

pub fn objective(d: &[f64], values: &[f64], costs: &[f64], curve: &QualityRatioCurve, w: &LboWeights) -> f64 {
    let mut cost = 0.0;
    let mut value = 0.0;
    for ((di, vi), ci) in d.iter().zip(values).zip(costs) {
        cost += ci * curve.phi(*di);
        value += vi * di;
    }
    let jumps: f64 = d.windows(2).map(|p| (p[1] - p[0]).powi(2)).sum();
    w.eta * cost - w.zeta * value + jumps
}

pub fn gradient(
    d: &[f64],
    values: &[f64],
    costs: &[f64],
    curve: &QualityRatioCurve,
    w: &LboWeights,
) -> Vec<f64> {
    let n = d.len();
    (0..n)
        .map(|i| {
            let mut g = w.eta * costs[i] * curve.dphi(d[i]) - w.zeta * values[i];
            if i > 0 {
                g += 2.0 * (d[i] - d[i - 1]);
            }
            if i + 1 < n {
                g -= 2.0 * (d[i + 1] - d[i]);
            }
            g
        })
        .collect()
}

/// Largest violation of the box optimality conditions.
pub fn kkt_residual(d: &[f64], grad: &[f64]) -> f64 {
    d.iter()
        .zip(grad)
        .map(|(x, g)| {
            if *x <= 0.0 {
                (-g).max(0.0)
            } else if *x >= 1.0 {
                g.max(0.0)
            } else {
                g.abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Weight ratio at or below which a frame of value `value` and relative cost
/// `cost` is stored at quality 0.
pub fn boundary_ratio_with_cost(value: f64, cost: f64, curve: &QualityRatioCurve) -> f64 {
    if value <= 0.0 {
        return f64::INFINITY;
    }
    cost * curve.a1 * curve.a2 / (LN_2 * value)
}

/// [`boundary_ratio_with_cost`] at unit cost.
pub fn boundary_ratio(value: f64, curve: &QualityRatioCurve) -> f64 {
    boundary_ratio_with_cost(value, 1.0, curve)
}

/// Closed-form minimizer of `cost * phi(d) - (zeta / eta) * value * d` on `[0, 1]`.
pub fn solve_decoupled(value: f64, cost: f64, curve: &QualityRatioCurve, w: &LboWeights) -> f64 {
    if value <= 0.0 || w.zeta == 0.0 {
        return 0.0;
    }
    if w.eta == 0.0 || cost <= 0.0 {
        return 1.0;
    }
    let ratio = w.zeta / w.eta;
    if ratio <= boundary_ratio_with_cost(value, cost, curve) {
        return 0.0;
    }
    (1.0 / curve.a2 - cost * curve.a1 / (LN_2 * ratio * value)).clamp(0.0, 1.0)
}

pub fn solve_decoupled_buffer(
    values: &[f64],
    costs: &[f64],
    curve: &QualityRatioCurve,
    w: &LboWeights,
) -> Vec<f64> {
    values
        .iter()
        .zip(costs)
        .map(|(v, c)| solve_decoupled(*v, *c, curve, w))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSolution {
    pub d: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Projected gradient with Barzilai-Borwein trial steps and Armijo
/// backtracking, started from the decoupled solution. The objective is
/// nonincreasing across iterations.
pub fn solve_coupled(
    values: &[f64],
    costs: &[f64],
    curve: &QualityRatioCurve,
    w: &LboWeights,
    opts: &SolverOptions,
) -> Result<CoupledSolution> {
    let n = values.len();
    if n == 0 {
        return Err(Error::Contract("cannot optimize an empty buffer".into()));
    }
    if costs.len() != n {
        return Err(Error::Contract(format!("{} values but {} costs", n, costs.len())));
    }
    let f = |d: &[f64]| objective(d, values, costs, curve, w);
    let grad = |d: &[f64]| gradient(d, values, costs, curve, w);
    let project = |x: f64| x.clamp(0.0, 1.0);

    let mut d = solve_decoupled_buffer(values, costs, curve, w);
    let mut fd = f(&d);
    let mut g = grad(&d);
    let mut step = 1.0 / (4.0 + w.eta * costs.iter().fold(0.0f64, |m, c| m.max(*c)) * curve.dphi(1.0));
    let mut iterations = 0;
    let mut residual = kkt_residual(&d, &g);
    while residual > opts.tol && iterations < opts.max_iter {
        iterations += 1;
        let mut t = step;
        let (next, f_next) = loop {
            let cand: Vec<f64> = d.iter().zip(&g).map(|(x, gi)| project(x - t * gi)).collect();
            let decrease: f64 = d.iter().zip(&cand).zip(&g).map(|((x, c), gi)| gi * (x - c)).sum();
            let fc = f(&cand);
            if fc <= fd - 1e-4 * decrease || t < 1e-16 {
                break (cand, fc);
            }
            t *= 0.5;
        };
        if f_next > fd {
            break;
        }
        let g_next = grad(&next);
        let (mut ss, mut sy) = (0.0, 0.0);
        for i in 0..n {
            let s = next[i] - d[i];
            let y = g_next[i] - g[i];
            ss += s * s;
            sy += s * y;
        }
        step = if sy > 0.0 {
            (ss / sy).clamp(1e-10, 1e10)
        } else {
            t * 2.0
        };
        d = next;
        fd = f_next;
        g = g_next;
        residual = kkt_residual(&d, &g);
    }
    let converged = residual <= opts.tol;
    if converged {
        debug!("coupled LBO: n={n} iterations={iterations} objective={fd}");
    } else {
        warn!("coupled LBO did not converge: n={n} residual={residual:e} after {iterations} iterations");
    }
    Ok(CoupledSolution {
        d,
        objective: fd,
        kkt_residual: residual,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveFit {
    pub curve: QualityRatioCurve,
    pub rms: f64,
    pub n: usize,
}

/// Least-squares `(a1, a2, a3)` from `(quality, size ratio)` samples.
///
/// For fixed `a2` the model is linear in `(a1, a3)`, so `a2` is searched on a
/// grid refined by golden section while the linear pair is solved exactly
/// under `a1 > 0, a3 >= 0`.
pub fn fit_quality_ratio(samples: &[(f64, f64)]) -> Result<CurveFit> {
    if samples.len() < 5 {
        return Err(Error::Input(format!(
            "need at least 5 quality samples, got {}",
            samples.len()
        )));
    }
    if samples
        .iter()
        .any(|(q, r)| !(q.is_finite() && r.is_finite() && (0.0..=1.0).contains(q) && *r > 0.0))
    {
        return Err(Error::Input(
            "quality samples must have d in [0, 1] and ratio > 0".into(),
        ));
    }
    let mut qs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    qs.sort_by(f64::total_cmp);
    qs.dedup();
    if qs.len() < 3 {
        return Err(Error::Fit(format!(
            "rank-deficient: only {} distinct qualities",
            qs.len()
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    if sorted.windows(2).any(|p| p[1].0 > p[0].0 && p[1].1 < p[0].1) {
        warn!("quality samples are not monotone in quality; fitting anyway");
    }

    // a2 = 1 - exp(-s), s in [S_LO, S_HI] spans a2 in (0.01, 0.9999).
    const S_LO: f64 = 0.01;
    const S_HI: f64 = 9.21;
    let sse = |s: f64| linear_part(samples, 1.0 - (-s).exp()).map(|(_, _, e)| e);
    let grid = 400;
    let mut best: Option<(usize, f64)> = None;
    for i in 0..=grid {
        let s = S_LO + (S_HI - S_LO) * i as f64 / grid as f64;
        if let Some(e) = sse(s) {
            if best.is_none_or(|(_, b)| e < b) {
                best = Some((i, e));
            }
        }
    }
    let (i, _) = best.ok_or_else(|| Error::Fit("no curve with positive slope fits the samples".into()))?;
    let h = (S_HI - S_LO) / grid as f64;
    let (mut lo, mut hi) = (
        (S_LO + h * (i as f64 - 1.0)).max(S_LO),
        (S_LO + h * (i as f64 + 1.0)).min(S_HI),
    );
    let gr = (5f64.sqrt() - 1.0) / 2.0;
    let eval = |s: f64| sse(s).unwrap_or(f64::INFINITY);
    let (mut x1, mut x2) = (hi - gr * (hi - lo), lo + gr * (hi - lo));
    let (mut f1, mut f2) = (eval(x1), eval(x2));
    for _ in 0..100 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - gr * (hi - lo);
            f1 = eval(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + gr * (hi - lo);
            f2 = eval(x2);
        }
    }
    let s = if f1 < f2 { x1 } else { x2 };
    let a2 = 1.0 - (-s).exp();
    let (a1, a3, e) = linear_part(samples, a2)
        .ok_or_else(|| Error::Fit("no curve with positive slope fits the samples".into()))?;
    let curve = QualityRatioCurve { a1, a2, a3 };
    curve
        .validate()
        .map_err(|e| Error::Fit(format!("fitted curve infeasible: {e}")))?;
    Ok(CurveFit {
        curve,
        rms: (e / samples.len() as f64).sqrt(),
        n: samples.len(),
    })
}

/// Best `(a1, a3, sse)` for fixed `a2` with `a3 >= 0`; `None` when the best
/// slope is not positive.
fn linear_part(samples: &[(f64, f64)], a2: f64) -> Option<(f64, f64, f64)> {
    let basis = |q: f64| -(-a2 * q).ln_1p() / LN_2;
    let n = samples.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (q, r) in samples {
        let x = basis(*q);
        sx += x;
        sy += r;
        sxx += x * x;
        sxy += x * r;
    }
    let det = n * sxx - sx * sx;
    if det <= 1e-12 * n * sxx.max(1e-300) {
        return None;
    }
    let mut a1 = (n * sxy - sx * sy) / det;
    let mut a3 = (sy - a1 * sx) / n;
    if a3 < 0.0 {
        a3 = 0.0;
        a1 = sxy / sxx;
    }
    if !(a1 > 0.0) {
        return None;
    }
    let sse = samples
        .iter()
        .map(|(q, r)| (a1 * basis(*q) + a3 - r).powi(2))
        .sum();
    Some((a1, a3, sse))
}
