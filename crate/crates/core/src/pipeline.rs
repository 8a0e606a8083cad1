//! End-to-end run over price and snapshot files.
//!
//! Stages run in order: moments, frontier, per-user risk aversion, utility
//! scores, CF scores, hybrid shortlist, and top-N lists for each requested
//! method. Every intermediate is written under `out_dir` together with
//! `manifest.json`, which records the configuration and a SHA-256 digest of
//! each artifact. Stage timings are logged and, if `timings_file` is set,
//! written there; they are kept out of the output tree so that identical
//! inputs give byte-identical trees.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cf::{build_r, build_w, cf_scores, cocount, transition, DateRange, PortfolioMatrix, SnapshotStore};
use crate::error::{Error, Result};
use crate::frontier::{
    compute_frontier, log_grid, EfficientFrontier, GammaBounds, GammaEstimator, DEFAULT_GAMMA,
};
use crate::hybrid::{masked_hybrid_scores, recommend, Method, RecommendOptions, RecommendationList};
use crate::io::{self, GammaRow, GammaSource};
use crate::market::{compute_moments, DecayConfig, MomentEstimates, Portfolio, ReturnHistory};
use crate::plot;
use crate::scoring::{replacement_weights, score, GammaVector, ScoreMatrix, ScoringPath};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// `date,asset_id,close` file.
    pub prices: PathBuf,
    /// `date,user_id,asset_id,market_value` file.
    pub snapshots: PathBuf,
    pub out_dir: PathBuf,
    pub decay: DecayConfig,
    /// Last date used from either input; defaults to the latest snapshot.
    pub as_of: Option<NaiveDate>,
    /// Calendar days of the held-at-least-once window for `R`.
    pub r_window_days: u64,
    /// Calendar days of the holdings window for `W`.
    pub w_window_days: u64,
    /// Calendar days of daily portfolios used to estimate risk aversion.
    pub gamma_window_days: u64,
    /// CF shortlist size of the hybrid method.
    pub k: usize,
    pub top_n: usize,
    pub gamma_bounds: GammaBounds,
    /// Risk aversion of users without any valid day.
    pub default_gamma: f64,
    pub frontier_points: usize,
    pub mask_held: bool,
    pub methods: Vec<Method>,
    pub scoring: ScoringPath,
    /// When set, every user's risk aversion is drawn uniformly from these
    /// values instead of being estimated.
    pub forced_gammas: Option<Vec<f64>>,
    /// Users whose lists and plots are emitted; all users when unset.
    pub report_users: Option<Vec<String>>,
    /// Risk-return plots for this many of the reported users.
    pub plot_users: usize,
    pub histogram_bins: usize,
    pub seed: u64,
    pub timings_file: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            prices: PathBuf::from("prices.csv"),
            snapshots: PathBuf::from("snapshots.csv"),
            out_dir: PathBuf::from("out"),
            decay: DecayConfig::default(),
            as_of: None,
            r_window_days: 183,
            w_window_days: 1,
            gamma_window_days: 30,
            k: 20,
            top_n: 5,
            gamma_bounds: GammaBounds::default(),
            default_gamma: DEFAULT_GAMMA,
            frontier_points: 50,
            mask_held: true,
            methods: Method::ALL.to_vec(),
            scoring: ScoringPath::Vectorized,
            forced_gammas: None,
            report_users: None,
            plot_users: 3,
            histogram_bins: 28,
            seed: 0,
            timings_file: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.decay.validate()?;
        self.gamma_bounds.validate()?;
        if self.r_window_days == 0 || self.w_window_days == 0 || self.gamma_window_days == 0 {
            return Err(Error::InvalidInput("date windows must span at least one day".into()));
        }
        if self.k == 0 || self.top_n == 0 {
            return Err(Error::InvalidInput("k and top_n must be positive".into()));
        }
        let in_bounds = |g: f64| g >= self.gamma_bounds.min && g <= self.gamma_bounds.max;
        if !in_bounds(self.default_gamma) {
            return Err(Error::InvalidInput(format!(
                "default_gamma {} outside the gamma bounds",
                self.default_gamma
            )));
        }
        if let Some(values) = &self.forced_gammas {
            if values.is_empty() || !values.iter().all(|&g| in_bounds(g)) {
                return Err(Error::InvalidInput(
                    "forced_gammas must be non-empty and inside the gamma bounds".into(),
                ));
            }
        }
        if self.frontier_points < 2 {
            return Err(Error::InvalidInput("frontier_points must be at least 2".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidInput("no recommendation method selected".into()));
        }
        if self.histogram_bins == 0 {
            return Err(Error::InvalidInput("histogram_bins must be positive".into()));
        }
        Ok(())
    }
}

/// The three holdings windows, all ending at `as_of`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Windows {
    pub r: DateRange,
    pub w: DateRange,
    pub gamma: DateRange,
}

impl Windows {
    pub fn new(cfg: &PipelineConfig, as_of: NaiveDate) -> Result<Self> {
        Ok(Self {
            r: DateRange::trailing(as_of, cfg.r_window_days)?,
            w: DateRange::trailing(as_of, cfg.w_window_days)?,
            gamma: DateRange::trailing(as_of, cfg.gamma_window_days)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// The run configuration with `out_dir` replaced by `.`, the manifest's
    /// own directory, and without `timings_file`.
    pub config: PipelineConfig,
    pub seed: u64,
    pub as_of: NaiveDate,
    pub windows: Windows,
    pub n_users: usize,
    pub n_assets: usize,
    pub artifacts: Vec<ArtifactEntry>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub manifest: Manifest,
    /// Lists for the reported users, per method in configuration order.
    pub lists: Vec<(Method, Vec<RecommendationList>)>,
    /// Wall-clock seconds per stage.
    pub timings: Vec<(String, f64)>,
}

/// Price history restricted to dates on or before `as_of`.
pub fn load_history(prices: &Path, as_of: Option<NaiveDate>) -> Result<ReturnHistory> {
    let (dates, assets, closes) = io::read_prices(prices)?;
    let keep = match as_of {
        Some(d) => dates.partition_point(|&x| x <= d),
        None => dates.len(),
    };
    let closes = closes.slice(ndarray::s![..keep, ..]).to_owned();
    ReturnHistory::from_closes(dates[..keep].to_vec(), assets, &closes)
}

/// Fails with [`Error::UniverseMismatch`] when no snapshot asset is priced.
pub fn check_universe(store: &SnapshotStore, universe: &[String]) -> Result<()> {
    let priced: BTreeSet<&str> = universe.iter().map(String::as_str).collect();
    if store.assets().iter().any(|a| priced.contains(a.as_str())) {
        Ok(())
    } else {
        Err(Error::UniverseMismatch)
    }
}

/// Per-user daily portfolios over `window`, empty days skipped.
pub fn daily_portfolios(
    store: &SnapshotStore,
    window: DateRange,
    users: &[String],
    universe: &[String],
) -> Vec<Vec<(NaiveDate, Portfolio)>> {
    store
        .daily_values(window, users, universe)
        .into_iter()
        .map(|days| {
            days.into_iter()
                .filter_map(|(d, v)| Portfolio::from_values(&v).map(|p| (d, p)))
                .collect()
        })
        .collect()
}

/// Risk aversion per user: estimated from the daily portfolios, or the
/// default when a user has none.
pub fn estimate_gammas(
    days: &[Vec<(NaiveDate, Portfolio)>],
    users: &[String],
    m: &MomentEstimates,
    bounds: GammaBounds,
    default_gamma: f64,
) -> Result<Vec<GammaRow>> {
    let estimator = GammaEstimator::new(m, bounds)?;
    users
        .par_iter()
        .zip(days.par_iter())
        .map(|(user, days)| match estimator.estimate(days) {
            Ok(est) => Ok(GammaRow::from_estimate(user, &est)),
            Err(Error::NoValidDays) => Ok(GammaRow::fixed(user, default_gamma, GammaSource::Default)),
            Err(e) => Err(e),
        })
        .collect()
}

const FORCED_GAMMA_STREAM: u64 = 1 << 40;

/// One seeded uniform draw from `values` per user, independent of the
/// other users.
pub fn forced_gammas(users: &[String], values: &[f64], seed: u64) -> Vec<GammaRow> {
    users
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(FORCED_GAMMA_STREAM + i as u64);
            GammaRow::fixed(u, values[rng.random_range(0..values.len())], GammaSource::Forced)
        })
        .collect()
}

struct Stages {
    timings: Vec<(String, f64)>,
    last: Instant,
}

impl Stages {
    fn new() -> Self {
        Self {
            timings: Vec::new(),
            last: Instant::now(),
        }
    }

    fn done(&mut self, name: &str) {
        let secs = self.last.elapsed().as_secs_f64();
        log::info!("stage {name}: {secs:.3}s");
        self.timings.push((name.to_string(), secs));
        self.last = Instant::now();
    }
}

struct Artifacts<'a> {
    root: &'a Path,
    written: Vec<String>,
}

impl Artifacts<'_> {
    fn path(&mut self, rel: &str) -> PathBuf {
        self.written.push(rel.to_string());
        self.root.join(rel)
    }

    fn entries(mut self) -> Result<Vec<ArtifactEntry>> {
        self.written.sort();
        self.written.dedup();
        self.written
            .iter()
            .map(|rel| {
                let p = self.root.join(rel);
                let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
                Ok(ArtifactEntry {
                    path: rel.clone(),
                    bytes: bytes.len() as u64,
                    sha256: hex::encode(Sha256::digest(&bytes)),
                })
            })
            .collect()
    }
}

fn file_stem_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn report_rows(users: &[String], report: Option<&[String]>) -> Result<Vec<usize>> {
    let Some(report) = report else {
        return Ok((0..users.len()).collect());
    };
    let index: HashMap<&str, usize> = users.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let mut rows = report
        .iter()
        .map(|u| {
            index
                .get(u.as_str())
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("report user {u:?} has no snapshots")))
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_unstable();
    rows.dedup();
    Ok(rows)
}

/// Runs every stage and writes the output tree.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let mut stages = Stages::new();

    let store = io::read_snapshots(&cfg.snapshots)?;
    let as_of = match cfg.as_of {
        Some(d) => d,
        None => store
            .latest_date()
            .ok_or_else(|| Error::InvalidInput("snapshot file has no records".into()))?,
    };
    let history = load_history(&cfg.prices, Some(as_of))?;
    let universe = history.assets().to_vec();
    check_universe(&store, &universe)?;
    let windows = Windows::new(cfg, as_of)?;
    stages.done("ingest");

    let m = compute_moments(&history, &cfg.decay)?;
    stages.done("moments");

    let grid = log_grid(cfg.gamma_bounds.min, cfg.gamma_bounds.max, cfg.frontier_points);
    let frontier = compute_frontier(&m, &grid)?;
    stages.done("frontier");

    let users = store.users();
    let gamma_rows = match &cfg.forced_gammas {
        Some(values) => forced_gammas(&users, values, cfg.seed),
        None => {
            let days = daily_portfolios(&store, windows.gamma, &users, &universe);
            estimate_gammas(&days, &users, &m, cfg.gamma_bounds, cfg.default_gamma)?
        }
    };
    let gammas = GammaVector::new(gamma_rows.iter().map(|r| r.gamma).collect(), &cfg.gamma_bounds)?;
    stages.done("gamma");

    let w = build_w(&store, windows.w, &universe);
    let w_r = replacement_weights(w.weights.view());
    let y_mpt = score(cfg.scoring, w.weights.view(), &w_r, &gammas, &m)?;
    stages.done("mpt_scores");

    let r = build_r(&store, windows.r, &universe);
    let counts = cocount(&r);
    let c = transition(&counts)?;
    let y_cf = cf_scores(&w, &c)?;
    stages.done("cf_scores");

    let held = w.held_sets();
    let mask = cfg.mask_held.then_some(held.as_slice());
    let y_hybrid = masked_hybrid_scores(&y_cf, &y_mpt, cfg.k, mask)?;
    let opts = RecommendOptions {
        k: cfg.k,
        top_n: cfg.top_n,
        mask_held: cfg.mask_held,
        seed: cfg.seed,
    };
    let rows = report_rows(&users, cfg.report_users.as_deref())?;
    let mut lists = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let all = recommend(method, &y_cf, &y_mpt, &users, &universe, &held, &opts)?;
        lists.push((method, rows.iter().map(|&i| all[i].clone()).collect::<Vec<_>>()));
    }
    stages.done("recommend");

    let mut out = Artifacts {
        root: &cfg.out_dir,
        written: Vec::new(),
    };
    write_outputs(
        &mut out,
        cfg,
        &Outputs {
            m: &m,
            frontier: &frontier,
            users: &users,
            gamma_rows: &gamma_rows,
            r: &r.matrix,
            counts: &counts,
            c: &c.0,
            w: &w,
            w_r: &w_r.0,
            y_cf: &y_cf,
            y_mpt: &y_mpt,
            y_hybrid: &y_hybrid,
            lists: &lists,
            rows: &rows,
        },
    )?;
    stages.done("write");

    let mut config = cfg.clone();
    config.out_dir = PathBuf::from(".");
    config.timings_file = None;
    let manifest = Manifest {
        config,
        seed: cfg.seed,
        as_of,
        windows,
        n_users: users.len(),
        n_assets: universe.len(),
        artifacts: out.entries()?,
    };
    let manifest_path = cfg.out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::InvalidInput(format!("manifest serialization: {e}")))?;
    std::fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    stages.done("manifest");

    if let Some(path) = &cfg.timings_file {
        let map: serde_json::Map<String, serde_json::Value> = stages
            .timings
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::Value::from(*v)))
            .collect();
        let text = serde_json::to_string_pretty(&map).expect("finite timings serialize");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    }

    Ok(PipelineOutput {
        manifest,
        lists,
        timings: stages.timings,
    })
}

struct Outputs<'a> {
    m: &'a MomentEstimates,
    frontier: &'a EfficientFrontier,
    users: &'a [String],
    gamma_rows: &'a [GammaRow],
    r: &'a Array2<u8>,
    counts: &'a Array2<u64>,
    c: &'a Array2<f64>,
    w: &'a PortfolioMatrix,
    w_r: &'a Array1<f64>,
    y_cf: &'a ScoreMatrix,
    y_mpt: &'a ScoreMatrix,
    y_hybrid: &'a ScoreMatrix,
    lists: &'a [(Method, Vec<RecommendationList>)],
    rows: &'a [usize],
}

fn write_outputs(out: &mut Artifacts, cfg: &PipelineConfig, o: &Outputs) -> Result<()> {
    for name in ["assets.txt", "mu.mat", "sigma.mat"] {
        out.path(&format!("moments/{name}"));
    }
    io::write_moments(&out.root.join("moments"), o.m)?;
    io::write_frontier(&out.path("frontier.csv"), o.frontier)?;
    io::write_frontier_weights(&out.path("frontier_weights.mat"), o.frontier)?;
    io::write_ids(&out.path("users.txt"), o.users)?;
    io::write_gamma_estimates(&out.path("gammas.csv"), o.gamma_rows)?;
    io::write_count_matrix(&out.path("R.mat"), &o.r.mapv(u64::from))?;
    io::write_matrix(&out.path("W.mat"), &o.w.weights)?;
    io::write_count_matrix(&out.path("cocount.mat"), o.counts)?;
    io::write_matrix(&out.path("C.mat"), o.c)?;
    io::write_matrix(&out.path("Y_cf.mat"), &o.y_cf.values)?;
    io::write_matrix(&out.path("Y_mpt.mat"), &o.y_mpt.values)?;
    io::write_matrix(&out.path("Y_hybrid.mat"), &o.y_hybrid.values)?;
    for (method, lists) in o.lists {
        io::write_recommendations(&out.path(&format!("recommendations_{}.csv", method.name())), lists)?;
    }

    let gammas: Vec<f64> = o.gamma_rows.iter().map(|r| r.gamma).collect();
    let hist = plot::log_histogram(&gammas, &cfg.gamma_bounds, cfg.histogram_bins)?;
    out.path("plots/gamma_hist.csv");
    out.path("plots/gamma_hist.svg");
    plot::emit_histogram(&out.root.join("plots"), "gamma_hist", &hist)?;

    // plot the utility-aware lists when available
    let plotted = [Method::Hybrid, Method::Mpt, Method::Cf, Method::Random]
        .into_iter()
        .find_map(|m| o.lists.iter().find(|(x, _)| *x == m));
    let asset_index: HashMap<&str, usize> = o.m.assets.iter().enumerate().map(|(j, a)| (a.as_str(), j)).collect();
    for (pos, &i) in o.rows.iter().take(cfg.plot_users).enumerate() {
        let recommended: Vec<(usize, String)> = plotted
            .map(|(_, lists)| {
                lists[pos]
                    .items
                    .iter()
                    .map(|it| (asset_index[it.asset_id.as_str()], it.asset_id.clone()))
                    .collect()
            })
            .unwrap_or_default();
        let user = &o.users[i];
        let p = plot::risk_return_plot(
            user,
            o.m,
            o.frontier,
            o.w.weights.row(i),
            o.gamma_rows[i].gamma,
            o.w_r[i],
            &recommended,
        )?;
        let stem = format!("risk_return_{}", file_stem_safe(user));
        out.path(&format!("plots/{stem}.csv"));
        out.path(&format!("plots/{stem}.svg"));
        plot::emit_risk_return(&out.root.join("plots"), &stem, &p)?;
    }
    Ok(())
}
