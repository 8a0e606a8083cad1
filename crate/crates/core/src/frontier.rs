//! Optimal long-only portfolios, the efficient frontier, and risk-aversion
//! inference from observed portfolio risk.
//!
//! The per-gamma problem
//!
//! ```text
//! maximize  mu' w - gamma * w' Sigma w   s.t.  w >= 0, sum(w) = 1
//! ```
//!
//! is solved with a primal active-set method. Each iteration solves the
//! equality-constrained problem on the current support in closed form
//! (Cholesky of the support block of Sigma), steps back to feasibility when
//! a weight would turn negative, and otherwise adds the asset with the most
//! negative bound multiplier. The method terminates at the exact KKT point
//! up to round-off, so frontier monotonicity holds to machine precision.

use std::collections::HashMap;

use chrono::NaiveDate;
use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::market::{MomentEstimates, Portfolio};

/// Active-set iteration cap before reporting divergence.
pub const MAX_ITERATIONS: usize = 10_000;

/// Risk aversion substituted for users without any valid day.
pub const DEFAULT_GAMMA: f64 = 20.9;

/// Width, in log-gamma, at which bisection stops.
const BISECTION_LOG_TOL: f64 = 1e-10;

/// Search interval for risk aversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for GammaBounds {
    fn default() -> Self {
        Self { min: 1e-3, max: 1e4 }
    }
}

impl GammaBounds {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        let b = Self { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min > 0.0 && self.max > self.min && self.max.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "gamma bounds must satisfy 0 < min < max < inf, got [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn clamp(&self, gamma: f64) -> f64 {
        gamma.clamp(self.min, self.max)
    }
}

/// One optimal portfolio on the frontier.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierPoint {
    pub gamma: f64,
    pub weights: Portfolio,
    pub risk: f64,
    pub expected_return: f64,
    pub utility_value: f64,
}

impl FrontierPoint {
    fn new(m: &MomentEstimates, gamma: f64, w: Array1<f64>) -> Result<Self> {
        let (ret, var) = m.stats(w.view())?;
        Ok(Self {
            gamma,
            weights: Portfolio::new(w)?,
            risk: var.max(0.0).sqrt(),
            expected_return: ret,
            utility_value: ret - gamma * var,
        })
    }
}

/// Optimal portfolios over an increasing gamma grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficientFrontier {
    pub points: Vec<FrontierPoint>,
}

/// Maximizes `mu' w - gamma * w' Sigma w` over the simplex.
pub fn optimal_portfolio(m: &MomentEstimates, gamma: f64) -> Result<FrontierPoint> {
    let w = solve(m, gamma, None)?;
    FrontierPoint::new(m, gamma, w)
}

/// Solves at each grid value independently; grid points run in parallel.
pub fn compute_frontier(m: &MomentEstimates, gamma_grid: &[f64]) -> Result<EfficientFrontier> {
    if gamma_grid.is_empty() {
        return Err(Error::InvalidInput("empty gamma grid".into()));
    }
    if gamma_grid.windows(2).any(|g| g[0] >= g[1]) {
        return Err(Error::InvalidInput("gamma grid must be strictly increasing".into()));
    }
    let points = gamma_grid
        .par_iter()
        .map(|&g| optimal_portfolio(m, g))
        .collect::<Result<Vec<_>>>()?;
    Ok(EfficientFrontier { points })
}

/// `points` values spaced evenly in log between `min` and `max` inclusive.
pub fn log_grid(min: f64, max: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![min],
        _ => {
            let (a, b) = (min.ln(), max.ln());
            let step = (b - a) / (points - 1) as f64;
            (0..points)
                .map(|i| if i + 1 == points { max } else { (a + step * i as f64).exp() })
                .collect()
        }
    }
}

/// Largest violation of the KKT conditions at `w`: stationarity on the
/// support and sign of the bound multipliers off it.
pub fn kkt_residual(m: &MomentEstimates, gamma: f64, w: ArrayView1<f64>) -> f64 {
    let n = m.n();
    let grad: Vec<f64> = (0..n)
        .map(|j| {
            let s: f64 = (0..n).map(|k| m.sigma[[j, k]] * w[k]).sum();
            2.0 * gamma * s - m.mu[j]
        })
        .collect();
    let support: Vec<usize> = (0..n).filter(|&j| w[j] > 0.0).collect();
    if support.is_empty() {
        return f64::INFINITY;
    }
    // nu chosen so that the support multipliers are closest to zero
    let (lo, hi) = support
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &j| {
            (lo.min(grad[j]), hi.max(grad[j]))
        });
    let nu = -(lo + hi) / 2.0;
    let mut res = (hi - lo) / 2.0;
    for j in 0..n {
        if w[j] <= 0.0 {
            res = res.max(-(grad[j] + nu));
        }
        res = res.max(-w[j]);
    }
    res.max((w.sum() - 1.0).abs())
}

fn argmax_lowest(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for (j, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = j;
        }
    }
    best
}

fn usable_warm_start(w: ArrayView1<f64>, n: usize) -> bool {
    w.len() == n && w.iter().all(|&x| x >= 0.0 && x.is_finite()) && (w.sum() - 1.0).abs() < 1e-9
}

/// Active-set solve, optionally starting from a feasible `warm` point.
pub(crate) fn solve(m: &MomentEstimates, gamma: f64, warm: Option<ArrayView1<f64>>) -> Result<Array1<f64>> {
    Solver::new(m).solve(gamma, warm)
}

/// Factorization of the support block together with the quantities needed
/// to evaluate the equality-constrained solution and its gradient at any
/// gamma in `O(n)`.
struct SupportFactor {
    support: Vec<usize>,
    /// `S_FF^-1 mu_F` and `S_FF^-1 1`.
    x: Vec<f64>,
    y: Vec<f64>,
    sx: f64,
    sy: f64,
    /// `S_{:,F} x` and `S_{:,F} y` over all assets.
    sigma_x: Vec<f64>,
    sigma_y: Vec<f64>,
}

impl SupportFactor {
    fn new(m: &MomentEstimates, support: &[usize]) -> Result<Self> {
        let k = support.len();
        let mut block = vec![0.0; k * k];
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                block[a * k + b] = m.sigma[[i, j]];
            }
        }
        let chol = factor_with_jitter(&mut block, k)?;
        let mu: Vec<f64> = support.iter().map(|&j| m.mu[j]).collect();
        let x = chol.solve(&mu);
        let y = chol.solve(&vec![1.0; k]);
        let n = m.n();
        let mut sigma_x = vec![0.0; n];
        let mut sigma_y = vec![0.0; n];
        for (r, (sx, sy)) in sigma_x.iter_mut().zip(sigma_y.iter_mut()).enumerate() {
            let row = m.sigma.row(r);
            for (a, &j) in support.iter().enumerate() {
                *sx += row[j] * x[a];
                *sy += row[j] * y[a];
            }
        }
        Ok(Self {
            support: support.to_vec(),
            sx: x.iter().sum(),
            sy: y.iter().sum(),
            x,
            y,
            sigma_x,
            sigma_y,
        })
    }

    /// Minimizer of `gamma w'Sw - mu'w` subject to `sum(w) = 1` on the
    /// support: min-variance part plus a zero-sum tilt scaled by `1 / (2 gamma)`.
    fn target(&self, gamma: f64) -> Vec<f64> {
        if self.support.len() == 1 {
            return vec![1.0];
        }
        let ratio = self.sx / self.sy;
        (0..self.support.len())
            .map(|a| self.y[a] / self.sy + (self.x[a] - ratio * self.y[a]) / (2.0 * gamma))
            .collect()
    }

    /// `S w` for `w` equal to [`Self::target`] at `gamma`.
    fn sigma_times_target(&self, gamma: f64, r: usize) -> f64 {
        if self.support.len() == 1 {
            return self.sigma_y[r] / self.sy;
        }
        let ratio = self.sx / self.sy;
        self.sigma_y[r] / self.sy + (self.sigma_x[r] - ratio * self.sigma_y[r]) / (2.0 * gamma)
    }
}

/// Support factorizations kept by a [`Solver`].
const FACTOR_CACHE: usize = 8;

/// Active-set solver that keeps recent support factorizations, so repeated
/// solves at nearby gammas cost `O(n)` whenever the support was seen before.
/// Factorizations depend only on the support, so results do not depend on
/// cache contents.
pub(crate) struct Solver<'a> {
    m: &'a MomentEstimates,
    /// Most recently used last.
    factors: Vec<SupportFactor>,
}

impl<'a> Solver<'a> {
    pub(crate) fn new(m: &'a MomentEstimates) -> Self {
        Self { m, factors: Vec::new() }
    }

    fn factor_for(&mut self, support: &[usize]) -> Result<&SupportFactor> {
        match self.factors.iter().position(|f| f.support == support) {
            Some(i) => {
                let f = self.factors.remove(i);
                self.factors.push(f);
            }
            None => {
                if self.factors.len() == FACTOR_CACHE {
                    self.factors.remove(0);
                }
                self.factors.push(SupportFactor::new(self.m, support)?);
            }
        }
        Ok(self.factors.last().expect("factor pushed above"))
    }

    pub(crate) fn solve(&mut self, gamma: f64, warm: Option<ArrayView1<f64>>) -> Result<Array1<f64>> {
        self.solve_with_variance(gamma, warm).map(|(w, _)| w)
    }

    /// Optimal weights and their variance, the latter read off the cached
    /// `S w` in `O(|support|)`.
    pub(crate) fn solve_with_variance(
        &mut self,
        gamma: f64,
        warm: Option<ArrayView1<f64>>,
    ) -> Result<(Array1<f64>, f64)> {
        let m = self.m;
        let n = m.n();
        if n == 0 {
            return Err(Error::InvalidInput("empty asset universe".into()));
        }
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidInput(format!("risk aversion must be finite and >= 0, got {gamma}")));
        }
        let max_var = m.sigma.diag().iter().fold(0.0f64, |a, &b| a.max(b));
        if gamma == 0.0 || max_var == 0.0 {
            // linear objective: the best vertex
            let j = argmax_lowest(&m.mu);
            let mut w = Array1::zeros(n);
            w[j] = 1.0;
            return Ok((w, m.sigma[[j, j]]));
        }

        let mut w: Array1<f64>;
        let mut support: Vec<usize>;
        match warm {
            Some(x) if usable_warm_start(x, n) => {
                w = x.to_owned();
                support = (0..n).filter(|&j| w[j] > 0.0).collect();
            }
            _ => {
                let j = argmax_lowest(&m.mu);
                w = Array1::zeros(n);
                w[j] = 1.0;
                support = vec![j];
            }
        }

        let mu_scale = m.mu.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let dual_tol = 1e-11 * (mu_scale + 2.0 * gamma * max_var);
        let mut in_support = vec![false; n];

        for _ in 0..MAX_ITERATIONS {
            let factor = self.factor_for(&support)?;
            let target = factor.target(gamma);

            if target.iter().any(|&p| p < 0.0) {
                // step from w toward the target until the first weight hits zero
                let mut alpha = 1.0;
                let mut blocking = 0;
                for (k, &j) in support.iter().enumerate() {
                    if target[k] < 0.0 {
                        let a = w[j] / (w[j] - target[k]);
                        if a < alpha {
                            alpha = a;
                            blocking = k;
                        }
                    }
                }
                for (k, &j) in support.iter().enumerate() {
                    w[j] += alpha * (target[k] - w[j]);
                }
                w[support[blocking]] = 0.0;
                support.retain(|&j| {
                    if w[j] <= 0.0 {
                        w[j] = 0.0;
                        false
                    } else {
                        true
                    }
                });
                continue;
            }

            for (k, &j) in support.iter().enumerate() {
                w[j] = target[k];
            }

            // gradient of the minimized objective gamma w'Sw - mu'w
            let grad = |r: usize| 2.0 * gamma * factor.sigma_times_target(gamma, r) - m.mu[r];
            let nu = -support.iter().map(|&j| grad(j)).sum::<f64>() / support.len() as f64;

            in_support.iter_mut().for_each(|s| *s = false);
            support.iter().for_each(|&j| in_support[j] = true);
            let mut entering = None;
            let mut most_negative = -dual_tol;
            for j in 0..n {
                if !in_support[j] {
                    let lambda = grad(j) + nu;
                    if lambda < most_negative {
                        most_negative = lambda;
                        entering = Some(j);
                    }
                }
            }
            match entering {
                Some(j) => {
                    let pos = support.partition_point(|&s| s < j);
                    support.insert(pos, j);
                }
                None => {
                    let var: f64 = support.iter().map(|&j| w[j] * factor.sigma_times_target(gamma, j)).sum();
                    return Ok((w, var.max(0.0)));
                }
            }
        }
        Err(Error::SolverDivergence {
            gamma,
            iterations: MAX_ITERATIONS,
        })
    }
}

fn factor_with_jitter(block: &mut [f64], k: usize) -> Result<Cholesky> {
    if let Some(c) = Cholesky::factor(block, k) {
        return Ok(c);
    }
    let mean_diag = (0..k).map(|i| block[i * k + i]).sum::<f64>() / k as f64;
    let base = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut added = 0.0;
    for exp in [-14, -12, -10, -8] {
        let jitter = base * 10f64.powi(exp);
        for i in 0..k {
            block[i * k + i] += jitter - added;
        }
        added = jitter;
        if let Some(c) = Cholesky::factor(block, k) {
            log::debug!("covariance block regularized with jitter {jitter:e}");
            return Ok(c);
        }
    }
    Err(Error::InvalidInput("covariance is not positive semi-definite".into()))
}

/// Which bound, if any, a risk-matched gamma was clamped to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Clamp {
    None,
    /// Target risk at or above the frontier risk at `gamma_min`.
    Low,
    /// Target risk at or below the frontier risk at `gamma_max`.
    High,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskMatch {
    pub gamma: f64,
    pub clamp: Clamp,
}

/// Anchor count used by [`GammaEstimator::new`].
pub const DEFAULT_ANCHORS: usize = 1025;

struct Anchor {
    log_gamma: f64,
    risk: f64,
    weights: Array1<f64>,
}

/// Risk-to-gamma inversion against fixed moments.
///
/// Optimal portfolios are precomputed at log-spaced anchor gammas spanning
/// the bounds. Each query locates the anchors bracketing the target risk and
/// bisects on `ln gamma` between them, warm-starting every solve from the
/// previous one. With two anchors this is plain bisection over the bounds.
pub struct GammaEstimator<'a> {
    m: &'a MomentEstimates,
    bounds: GammaBounds,
    anchors: Vec<Anchor>,
}

impl<'a> GammaEstimator<'a> {
    pub fn new(m: &'a MomentEstimates, bounds: GammaBounds) -> Result<Self> {
        Self::with_anchors(m, bounds, DEFAULT_ANCHORS)
    }

    pub fn with_anchors(m: &'a MomentEstimates, bounds: GammaBounds, points: usize) -> Result<Self> {
        bounds.validate()?;
        let points = points.max(2);
        // swept upward with warm starts; neighbouring anchors share most of
        // their support
        let mut solver = Solver::new(m);
        let mut anchors: Vec<Anchor> = Vec::with_capacity(points);
        for g in log_grid(bounds.min, bounds.max, points) {
            let (weights, var) = solver.solve_with_variance(g, anchors.last().map(|a| a.weights.view()))?;
            anchors.push(Anchor {
                log_gamma: g.ln(),
                risk: var.sqrt(),
                weights,
            });
        }
        Ok(Self { m, bounds, anchors })
    }

    pub fn bounds(&self) -> &GammaBounds {
        &self.bounds
    }

    /// Gamma whose optimal portfolio has risk `target_risk`.
    ///
    /// Relies on frontier risk being non-increasing in gamma. If the frontier
    /// is flat at exactly the target risk over an interval, the log-midpoint
    /// of that interval is returned.
    pub fn gamma_for_risk(&self, target_risk: f64) -> Result<RiskMatch> {
        let first = &self.anchors[0];
        let last = &self.anchors[self.anchors.len() - 1];
        if target_risk >= first.risk {
            return Ok(RiskMatch {
                gamma: self.bounds.min,
                clamp: Clamp::Low,
            });
        }
        if target_risk <= last.risk {
            return Ok(RiskMatch {
                gamma: self.bounds.max,
                clamp: Clamp::High,
            });
        }
        let lo = self.anchors.iter().rposition(|a| a.risk > target_risk).expect("first anchor qualifies");
        let hi = lo + self.anchors[lo..].iter().position(|a| a.risk < target_risk).expect("last anchor qualifies");

        let mut solver = Solver::new(self.m);
        let mut warm = self.anchors[lo].weights.clone();
        let log_gamma = bisect_level(self.anchors[lo].log_gamma, self.anchors[hi].log_gamma, target_risk, |x| {
            let (w, var) = solver.solve_with_variance(x.exp(), Some(warm.view()))?;
            warm = w;
            Ok(var.sqrt())
        })?;
        Ok(RiskMatch {
            gamma: self.bounds.clamp(log_gamma.exp()),
            clamp: Clamp::None,
        })
    }

    /// Geometric mean of per-day risk-matched gammas.
    ///
    /// `days` holds the user's non-empty daily portfolios. Days with
    /// identical risk share one bisection.
    pub fn estimate(&self, days: &[(NaiveDate, Portfolio)]) -> Result<GammaEstimate> {
        if days.is_empty() {
            return Err(Error::NoValidDays);
        }
        let mut cache: HashMap<u64, RiskMatch> = HashMap::new();
        let mut daily_gammas = Vec::with_capacity(days.len());
        let mut clamped_days = 0;
        for (date, w) in days {
            let risk = self.m.risk(w.view())?;
            let hit = match cache.get(&risk.to_bits()) {
                Some(hit) => *hit,
                None => {
                    let hit = self.gamma_for_risk(risk)?;
                    cache.insert(risk.to_bits(), hit);
                    hit
                }
            };
            if hit.clamp != Clamp::None {
                clamped_days += 1;
            }
            daily_gammas.push((*date, hit.gamma));
        }
        Ok(GammaEstimate {
            gamma: self.bounds.clamp(geometric_mean(daily_gammas.iter().map(|d| d.1))),
            daily_gammas,
            clamped_days,
        })
    }
}

/// Gamma whose optimal portfolio has risk `target_risk`, by bisection on
/// `ln gamma` over the bounds. See [`GammaEstimator`] for repeated queries.
pub fn gamma_for_risk(m: &MomentEstimates, target_risk: f64, bounds: &GammaBounds) -> Result<RiskMatch> {
    GammaEstimator::with_anchors(m, *bounds, 2)?.gamma_for_risk(target_risk)
}

/// Bisection for `f(x) = target` on a non-increasing `f` with
/// `f(lo) > target > f(hi)`. Two brackets are tracked: the first `x` with
/// `f <= target` and the last with `f >= target`. They only separate on an
/// exactly flat stretch, whose midpoint is then returned.
fn bisect_level(lo: f64, hi: f64, target: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let (mut a_lo, mut a_hi) = (lo, hi);
    let (mut b_lo, mut b_hi) = (lo, hi);
    while a_hi - a_lo > BISECTION_LOG_TOL {
        let mid = 0.5 * (a_lo + a_hi);
        let v = f(mid)?;
        if v > target {
            a_lo = mid;
        } else {
            a_hi = mid;
        }
        if b_lo < mid && mid < b_hi {
            if v >= target {
                b_lo = mid;
            } else {
                b_hi = mid;
            }
        }
    }
    while b_hi - b_lo > BISECTION_LOG_TOL {
        let mid = 0.5 * (b_lo + b_hi);
        if f(mid)? >= target {
            b_lo = mid;
        } else {
            b_hi = mid;
        }
    }
    Ok(0.25 * (a_lo + a_hi + b_lo + b_hi))
}

/// Risk aversion of one user over an estimation window.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaEstimate {
    pub gamma: f64,
    pub daily_gammas: Vec<(NaiveDate, f64)>,
    pub clamped_days: usize,
}

/// One-off form of [`GammaEstimator::estimate`].
pub fn estimate_user_gamma(
    days: &[(NaiveDate, Portfolio)],
    m: &MomentEstimates,
    bounds: &GammaBounds,
) -> Result<GammaEstimate> {
    if days.is_empty() {
        return Err(Error::NoValidDays);
    }
    GammaEstimator::with_anchors(m, *bounds, 2)?.estimate(days)
}

/// Geometric mean with logs summed in sorted order, so the result does not
/// depend on input order.
pub fn geometric_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut logs: Vec<f64> = values.into_iter().map(f64::ln).collect();
    logs.sort_by(f64::total_cmp);
    let n = logs.len() as f64;
    (logs.iter().sum::<f64>() / n).exp()
}
