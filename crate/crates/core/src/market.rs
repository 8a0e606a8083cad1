//! Return histories, exponentially weighted moments and the mean-variance
//! utility.

use chrono::NaiveDate;
use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-period simple returns for `n` assets over `T` dates.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnHistory {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    returns: Array2<f64>,
}

impl ReturnHistory {
    pub fn new(dates: Vec<NaiveDate>, assets: Vec<String>, returns: Array2<f64>) -> Result<Self> {
        if returns.nrows() != dates.len() {
            return Err(Error::dims("return rows vs dates", dates.len(), returns.nrows()));
        }
        if returns.ncols() != assets.len() {
            return Err(Error::dims("return columns vs assets", assets.len(), returns.ncols()));
        }
        if dates.windows(2).any(|d| d[0] >= d[1]) {
            return Err(Error::InvalidInput("dates must be strictly increasing".into()));
        }
        if returns.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFiniteInput("returns"));
        }
        if let Some(r) = returns.iter().find(|&&r| r <= -1.0) {
            return Err(Error::InvalidInput(format!("return {r} is not above -1")));
        }
        Ok(Self {
            dates,
            assets,
            returns,
        })
    }

    /// Builds simple returns `close_t / close_{t-1} - 1` from a `(T+1) x n`
    /// close price panel. Return row `t` is stamped with `dates[t + 1]`.
    pub fn from_closes(dates: Vec<NaiveDate>, assets: Vec<String>, closes: &Array2<f64>) -> Result<Self> {
        if closes.nrows() != dates.len() {
            return Err(Error::dims("close rows vs dates", dates.len(), closes.nrows()));
        }
        if closes.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFiniteInput("close prices"));
        }
        if let Some(c) = closes.iter().find(|&&c| c <= 0.0) {
            return Err(Error::InvalidInput(format!("close price {c} is not positive")));
        }
        let t = closes.nrows().saturating_sub(1);
        let mut returns = Array2::zeros((t, closes.ncols()));
        for i in 0..t {
            for j in 0..closes.ncols() {
                returns[[i, j]] = closes[[i + 1, j]] / closes[[i, j]] - 1.0;
            }
        }
        let dates = dates.into_iter().skip(1).collect();
        Self::new(dates, assets, returns)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn returns(&self) -> &Array2<f64> {
        &self.returns
    }

    pub fn n_periods(&self) -> usize {
        self.returns.nrows()
    }
}

/// Exponential decay of sample weights and the covariance ridge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecayConfig {
    /// Age, in periods, at which a sample's weight halves.
    pub half_life: f64,
    /// Ridge added to the diagonal, relative to the mean variance.
    pub ridge_epsilon: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            half_life: 63.0,
            ridge_epsilon: 1e-8,
        }
    }
}

impl DecayConfig {
    pub fn new(half_life: f64, ridge_epsilon: f64) -> Result<Self> {
        let cfg = Self {
            half_life,
            ridge_epsilon,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_life > 0.0) {
            return Err(Error::InvalidInput(format!(
                "half_life must be positive, got {}",
                self.half_life
            )));
        }
        if !(self.ridge_epsilon >= 0.0) || !self.ridge_epsilon.is_finite() {
            return Err(Error::InvalidInput(format!(
                "ridge_epsilon must be finite and non-negative, got {}",
                self.ridge_epsilon
            )));
        }
        Ok(())
    }

    /// Per-period decay factor `2^(-1 / half_life)`.
    pub fn decay_factor(&self) -> f64 {
        (-std::f64::consts::LN_2 / self.half_life).exp()
    }
}

/// Expected returns and covariance of per-period returns.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimates {
    pub mu: Array1<f64>,
    pub sigma: Array2<f64>,
    pub assets: Vec<String>,
}

impl MomentEstimates {
    pub fn new(mu: Array1<f64>, sigma: Array2<f64>, assets: Vec<String>) -> Result<Self> {
        let n = mu.len();
        if sigma.dim() != (n, n) {
            return Err(Error::dims("covariance rows", n, sigma.nrows().max(sigma.ncols())));
        }
        if assets.len() != n {
            return Err(Error::dims("asset list", n, assets.len()));
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("moments"));
        }
        for i in 0..n {
            for j in 0..i {
                if (sigma[[i, j]] - sigma[[j, i]]).abs() > 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "covariance not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { mu, sigma, assets })
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }

    /// Restriction to the given asset indices, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let mu = idx.iter().map(|&i| self.mu[i]).collect();
        let sigma = Array2::from_shape_fn((idx.len(), idx.len()), |(a, b)| self.sigma[[idx[a], idx[b]]]);
        let assets = idx.iter().map(|&i| self.assets[i].clone()).collect();
        Self { mu, sigma, assets }
    }

    /// `(mu' w, w' Sigma w)` for raw weights.
    pub fn stats(&self, w: ArrayView1<f64>) -> Result<(f64, f64)> {
        let n = self.n();
        if w.len() != n {
            return Err(Error::dims("portfolio weights", n, w.len()));
        }
        let mut ret = 0.0;
        let mut var = 0.0;
        for i in 0..n {
            ret += self.mu[i] * w[i];
            let mut row = 0.0;
            for j in 0..n {
                row += self.sigma[[i, j]] * w[j];
            }
            var += w[i] * row;
        }
        Ok((ret, var))
    }

    /// `sqrt(w' Sigma w)`, clamping tiny negative round-off to zero.
    pub fn risk(&self, w: ArrayView1<f64>) -> Result<f64> {
        Ok(self.stats(w)?.1.max(0.0).sqrt())
    }
}

/// Long-only, fully invested weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio(Array1<f64>);

impl Portfolio {
    pub fn new(weights: Array1<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFiniteInput("portfolio weights"));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidInput("portfolio weights must be non-negative".into()));
        }
        let total: f64 = weights.sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "portfolio weights sum to {total}, not 1"
            )));
        }
        Ok(Self(weights))
    }

    /// Normalizes non-negative position values into weights. `None` when
    /// every value is zero.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        let total: f64 = values.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        Some(Self(values.iter().map(|v| v / total).collect()))
    }

    /// All weight on asset `j` of an `n`-asset universe.
    pub fn unit(n: usize, j: usize) -> Self {
        let mut w = Array1::zeros(n);
        w[j] = 1.0;
        Self(w)
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Exponentially weighted mean and covariance of the history.
///
/// The sample of age `a` (0 for the newest) gets weight proportional to
/// `2^(-a / half_life)`, normalized to sum 1. The covariance uses the
/// reliability-weights correction `1 / (1 - sum w^2)`, which reduces to the
/// usual `1 / (T - 1)` sample covariance for equal weights, and gets
/// `ridge_epsilon * trace / n` added on its diagonal.
pub fn compute_moments(history: &ReturnHistory, cfg: &DecayConfig) -> Result<MomentEstimates> {
    cfg.validate()?;
    let t = history.n_periods();
    if t < 2 {
        return Err(Error::EmptyHistory(t));
    }
    let r = history.returns();
    let n = r.ncols();

    let lambda = cfg.decay_factor();
    let mut weights: Vec<f64> = (0..t).map(|i| lambda.powi((t - 1 - i) as i32)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    let correction = 1.0 / (1.0 - sum_sq);

    let mut mu = Array1::<f64>::zeros(n);
    for (i, w) in weights.iter().enumerate() {
        for j in 0..n {
            mu[j] += w * r[[i, j]];
        }
    }

    let mut centered = r.to_owned();
    for mut row in centered.rows_mut() {
        row -= &mu;
    }
    let mut sigma = Array2::<f64>::zeros((n, n));
    for a in 0..n {
        for b in a..n {
            let mut s = 0.0;
            for (i, w) in weights.iter().enumerate() {
                s += w * centered[[i, a]] * centered[[i, b]];
            }
            s *= correction;
            sigma[[a, b]] = s;
            sigma[[b, a]] = s;
        }
    }
    let ridge = cfg.ridge_epsilon * sigma.diag().sum() / n as f64;
    for j in 0..n {
        sigma[[j, j]] += ridge;
    }
    MomentEstimates::new(mu, sigma, history.assets().to_vec())
}

/// Mean-variance utility `mu' w - gamma * w' Sigma w`.
pub fn utility(w: ArrayView1<f64>, gamma: f64, m: &MomentEstimates) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(Error::InvalidInput(format!("risk aversion must be >= 0, got {gamma}")));
    }
    let (ret, var) = m.stats(w)?;
    Ok(ret - gamma * var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn dates(n: usize) -> Vec<NaiveDate> {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        (0..n).map(|i| start + chrono::Days::new(i as u64)).collect()
    }

    fn history(returns: Array2<f64>) -> ReturnHistory {
        let n = returns.ncols();
        ReturnHistory::new(
            dates(returns.nrows()),
            (0..n).map(|j| format!("A{j}")).collect(),
            returns,
        )
        .unwrap()
    }

    #[test]
    fn constant_returns_give_zero_covariance() {
        let h = history(Array2::from_elem((10, 3), 0.02));
        for hl in [1.0, 5.0, 1e3] {
            let m = compute_moments(&h, &DecayConfig::new(hl, 1e-8).unwrap()).unwrap();
            for &v in &m.mu {
                assert!((v - 0.02).abs() < 1e-15);
            }
            assert!(m.sigma.iter().all(|&v| v.abs() < 1e-18));
        }
    }

    #[test]
    fn identical_series_are_perfectly_correlated() {
        let col = array![0.01, -0.02, 0.03, 0.005, -0.01];
        let mut r = Array2::zeros((5, 2));
        r.column_mut(0).assign(&col);
        r.column_mut(1).assign(&col);
        let m = compute_moments(&history(r), &DecayConfig::new(3.0, 0.0).unwrap()).unwrap();
        assert_eq!(m.sigma[[0, 1]], m.sigma[[0, 0]]);
        assert_eq!(m.sigma[[1, 1]], m.sigma[[0, 0]]);
    }

    #[test]
    fn half_life_one_weighted_mean() {
        // Scalar brute force: weights 0.5^age normalized, oldest first.
        let returns = [0.1, -0.1];
        let raw: Vec<f64> = (0..2).map(|i| 0.5f64.powi(1 - i)).collect();
        let total: f64 = raw.iter().sum();
        let expected: f64 = raw.iter().zip(returns).map(|(w, r)| w / total * r).sum();
        assert!((expected + 0.1 / 3.0).abs() < 1e-15);

        let h = history(array![[0.1], [-0.1]]);
        let m = compute_moments(&h, &DecayConfig::new(1.0, 0.0).unwrap()).unwrap();
        assert!((m.mu[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn short_history_rejected() {
        let h = history(array![[0.1, 0.2]]);
        assert!(matches!(
            compute_moments(&h, &DecayConfig::default()),
            Err(Error::EmptyHistory(1))
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let err = ReturnHistory::new(dates(2), vec!["A".into()], array![[0.1], [f64::NAN]]);
        assert!(matches!(err, Err(Error::NonFiniteInput(_))));
    }

    #[test]
    fn total_loss_rejected() {
        let err = ReturnHistory::new(dates(2), vec!["A".into()], array![[0.1], [-1.0]]);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn ridge_scales_with_mean_variance() {
        let h = history(array![[0.1, 0.0], [-0.1, 0.0], [0.1, 0.0]]);
        let bare = compute_moments(&h, &DecayConfig::new(1e9, 0.0).unwrap()).unwrap();
        let ridged = compute_moments(&h, &DecayConfig::new(1e9, 0.5).unwrap()).unwrap();
        let expected = 0.5 * bare.sigma[[0, 0]] / 2.0;
        assert!((ridged.sigma[[1, 1]] - expected).abs() < 1e-15);
    }

    #[test]
    fn utility_examples() {
        let m = MomentEstimates::new(
            array![0.1, 0.2],
            array![[0.04, 0.0], [0.0, 0.04]],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let u = utility(array![0.5, 0.5].view(), 1.0, &m).unwrap();
        assert!((u - 0.13).abs() < 1e-15);
        assert_eq!(utility(Portfolio::unit(2, 1).view(), 0.0, &m).unwrap(), 0.2);
        assert!(utility(array![0.5, 0.5].view(), 2.0, &m).unwrap() < u);
        assert!(matches!(
            utility(array![1.0].view(), 1.0, &m),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn portfolio_invariants() {
        assert!(Portfolio::new(array![0.5, 0.5]).is_ok());
        assert!(Portfolio::new(array![0.6, 0.5]).is_err());
        assert!(Portfolio::new(array![1.5, -0.5]).is_err());
        assert_eq!(Portfolio::from_values(&[100.0, 300.0]).unwrap().weights(), &array![0.25, 0.75]);
        assert!(Portfolio::from_values(&[0.0, 0.0]).is_none());
    }

    #[test]
    fn closes_to_returns() {
        let closes = array![[100.0], [110.0], [99.0]];
        let h = ReturnHistory::from_closes(dates(3), vec!["A".into()], &closes).unwrap();
        assert_eq!(h.n_periods(), 2);
        assert!((h.returns()[[0, 0]] - 0.1).abs() < 1e-15);
        assert!((h.returns()[[1, 0]] + 0.1).abs() < 1e-15);
        assert_eq!(h.dates()[0], dates(3)[1]);
    }
}
