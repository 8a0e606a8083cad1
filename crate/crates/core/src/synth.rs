//! Seeded synthetic markets and user populations with known risk aversion.
//!
//! Returns follow a Gaussian factor model; each user draws a risk aversion,
//! samples a set of assets by popularity, holds the optimal portfolio over
//! that set at their risk aversion, and perturbs it with noise. Every random
//! stream is derived from the configured seed, one ChaCha stream per entity,
//! so output does not depend on generation order.

use std::collections::HashMap;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use ndarray::{Array1, Array2};
use rand::seq::index::sample_weighted;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cf::{Snapshot, SnapshotStore};
use crate::error::{Error, Result};
use crate::frontier::{optimal_portfolio, GammaBounds};
use crate::market::{MomentEstimates, ReturnHistory};
use crate::scoring::GammaVector;

/// Distribution of users' true risk aversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaLaw {
    LogNormal { median: f64, log_std: f64 },
    LogUniform { min: f64, max: f64 },
    /// Uniform draw from a fixed set of values.
    Choice { values: Vec<f64> },
}

impl Default for GammaLaw {
    fn default() -> Self {
        GammaLaw::LogNormal {
            median: 20.9,
            log_std: 1.0,
        }
    }
}

impl GammaLaw {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            GammaLaw::LogNormal { median, log_std } => {
                let z: f64 = StandardNormal.sample(rng);
                median * (log_std * z).exp()
            }
            GammaLaw::LogUniform { min, max } => (rng.random_range(min.ln()..=max.ln())).exp(),
            GammaLaw::Choice { values } => values[rng.random_range(0..values.len())],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            GammaLaw::LogNormal { median, log_std } => *median > 0.0 && *log_std >= 0.0,
            GammaLaw::LogUniform { min, max } => *min > 0.0 && max >= min,
            GammaLaw::Choice { values } => !values.is_empty() && values.iter().all(|&v| v > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid gamma law {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_assets: usize,
    pub n_users: usize,
    /// Return periods in the market history.
    pub n_days: usize,
    /// Trailing market days on which user snapshots are emitted.
    pub snapshot_days: usize,
    pub seed: u64,
    pub gamma_law: GammaLaw,
    /// Asset `j` is picked with weight `(j + 1)^-exponent`.
    pub popularity_exponent: f64,
    /// Scale of the additive perturbation of optimal weights.
    pub noise_scale: f64,
    /// Assets per user; 0 means the whole universe.
    pub assets_per_user: usize,
    pub n_factors: usize,
    pub start_date: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_assets: 50,
            n_users: 200,
            n_days: 500,
            snapshot_days: 20,
            seed: 42,
            gamma_law: GammaLaw::default(),
            popularity_exponent: 1.0,
            noise_scale: 0.1,
            assets_per_user: 8,
            n_factors: 3,
            start_date: NaiveDate::from_ymd_opt(2015, 4, 1).expect("valid date"),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_assets == 0 || self.n_users == 0 || self.n_days == 0 || self.snapshot_days == 0 {
            return Err(Error::InvalidInput("synthetic counts must be positive".into()));
        }
        if self.snapshot_days > self.n_days + 1 {
            return Err(Error::InvalidInput(format!(
                "snapshot_days {} exceeds the {} market dates",
                self.snapshot_days,
                self.n_days + 1
            )));
        }
        if !(self.noise_scale >= 0.0) || !(self.popularity_exponent >= 0.0) {
            return Err(Error::InvalidInput("noise_scale and popularity_exponent must be >= 0".into()));
        }
        self.gamma_law.validate()
    }

    /// `n_days + 1` weekdays from `start_date`: one close date per return
    /// plus the base date.
    pub fn trading_dates(&self) -> Vec<NaiveDate> {
        let mut out = Vec::with_capacity(self.n_days + 1);
        let mut d = self.start_date;
        while out.len() <= self.n_days {
            if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
                out.push(d);
            }
            d = d + Days::new(1);
        }
        out
    }

    pub fn asset_ids(&self) -> Vec<String> {
        (0..self.n_assets).map(|j| format!("A{j:05}")).collect()
    }

    pub fn user_ids(&self) -> Vec<String> {
        (0..self.n_users).map(|i| format!("U{i:06}")).collect()
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

const MARKET_STREAM: u64 = 0;
const USER_STREAM_BASE: u64 = 1 << 32;

/// Daily returns from `alpha_j + sum_f B_jf F_tf + s_j e_tj`.
///
/// Idiosyncratic volatilities span 1% to 3% and factors have 1% volatility.
/// Drifts are `3e-4 + 6e-4 z`, so estimation noise in the mean rivals the
/// drift dispersion over short windows, as in real daily returns.
pub fn generate_market(cfg: &SynthConfig) -> Result<ReturnHistory> {
    cfg.validate()?;
    let mut rng = cfg.rng(MARKET_STREAM);
    let (n, t, k) = (cfg.n_assets, cfg.n_days, cfg.n_factors);
    let idio: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.03)).collect();
    let alpha: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            3e-4 + 6e-4 * z
        })
        .collect();
    let loadings = Array2::from_shape_fn((n, k), |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        0.3 + 0.5 * z
    });
    let mut returns = Array2::zeros((t, n));
    let mut factors = vec![0.0; k];
    for i in 0..t {
        for f in factors.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *f = 0.01 * z;
        }
        for j in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let common: f64 = (0..k).map(|f| loadings[[j, f]] * factors[f]).sum();
            returns[[i, j]] = (alpha[j] + common + idio[j] * z).max(-0.95);
        }
    }
    let dates = cfg.trading_dates().into_iter().skip(1).collect();
    ReturnHistory::new(dates, cfg.asset_ids(), returns)
}

/// Close prices reproducing `history`, starting from 100 on `base_date`.
pub fn price_panel(history: &ReturnHistory, base_date: NaiveDate) -> (Vec<NaiveDate>, Array2<f64>) {
    let r = history.returns();
    let mut closes = Array2::zeros((r.nrows() + 1, r.ncols()));
    closes.row_mut(0).fill(100.0);
    for i in 0..r.nrows() {
        for j in 0..r.ncols() {
            closes[[i + 1, j]] = closes[[i, j]] * (1.0 + r[[i, j]]);
        }
    }
    let mut dates = Vec::with_capacity(closes.nrows());
    dates.push(base_date);
    dates.extend_from_slice(history.dates());
    (dates, closes)
}

/// Generated users and the risk aversion each was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUsers {
    pub store: SnapshotStore,
    pub users: Vec<String>,
    pub true_gammas: GammaVector,
    /// Each user's weights, rows aligned with `users`.
    pub portfolios: Array2<f64>,
}

pub fn generate_users(cfg: &SynthConfig, m: &MomentEstimates) -> Result<SyntheticUsers> {
    cfg.validate()?;
    let n = m.n();
    let bounds = GammaBounds::default();
    let dates = cfg.trading_dates();
    let snap_dates = &dates[dates.len() - cfg.snapshot_days..];
    let users = cfg.user_ids();
    let popularity: Vec<f64> = (0..n).map(|j| ((j + 1) as f64).powf(-cfg.popularity_exponent)).collect();

    // users sharing a subset and gamma share the optimum
    let mut optima: HashMap<(Vec<usize>, u64), Array1<f64>> = HashMap::new();
    let mut store = SnapshotStore::new();
    let mut gammas = Vec::with_capacity(users.len());
    let mut portfolios = Array2::zeros((users.len(), n));
    for (i, user) in users.iter().enumerate() {
        let mut rng = cfg.rng(USER_STREAM_BASE + i as u64);
        let gamma = bounds.clamp(cfg.gamma_law.sample(&mut rng));

        let subset: Vec<usize> = if cfg.assets_per_user == 0 || cfg.assets_per_user >= n {
            (0..n).collect()
        } else {
            let mut idx = sample_weighted(&mut rng, n, |j| popularity[j], cfg.assets_per_user)
                .map_err(|e| Error::InvalidInput(format!("asset sampling: {e}")))?
                .into_vec();
            idx.sort_unstable();
            idx
        };
        let key = (subset, gamma.to_bits());
        let mut w = match optima.get(&key) {
            Some(w) => w.clone(),
            None => {
                let w = optimal_portfolio(&m.subset(&key.0), gamma)?.weights.into_inner();
                optima.insert(key.clone(), w.clone());
                w
            }
        };
        let subset = key.0;
        if cfg.noise_scale > 0.0 {
            let k = subset.len() as f64;
            for x in w.iter_mut() {
                let e: f64 = Exp1.sample(&mut rng);
                *x += cfg.noise_scale * e / k;
            }
            let total = w.sum();
            w.mapv_inplace(|x| x / total);
        }
        let z: f64 = StandardNormal.sample(&mut rng);
        let wealth = 1e6 * z.exp();

        for (&j, &x) in subset.iter().zip(w.iter()) {
            portfolios[[i, j]] = x;
            if x > 0.0 {
                for &date in snap_dates {
                    store.insert(Snapshot {
                        date,
                        user_id: user.clone(),
                        asset_id: m.assets[j].clone(),
                        market_value: wealth * x,
                    })?;
                }
            }
        }
        gammas.push(gamma);
    }
    Ok(SyntheticUsers {
        store,
        users,
        true_gammas: GammaVector::new(gammas.into(), &bounds)?,
        portfolios,
    })
}
