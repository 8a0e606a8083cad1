//! `mptcf` command line: synthetic data, individual pipeline stages, the
//! full pipeline, plots, and scoring benchmarks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use mptcf::bench::run_bench;
use mptcf::cf::{build_r, build_w, cf_scores, cocount, held_sets, transition, DateRange};
use mptcf::frontier::{compute_frontier, log_grid, GammaBounds};
use mptcf::hybrid::{recommend, Method, RecommendOptions};
use mptcf::io;
use mptcf::market::compute_moments;
use mptcf::pipeline::{
    check_universe, daily_portfolios, estimate_gammas, load_history, run_pipeline, Manifest, PipelineConfig,
};
use mptcf::plot;
use mptcf::scoring::{replacement_weights, score, GammaVector, ScoreKind, ScoreMatrix, ScoringPath};
use mptcf::synth::{generate_market, generate_users, price_panel, SynthConfig};
use mptcf::{Error, Result};

#[derive(Parser)]
#[command(name = "mptcf", version, about = "Portfolio-aware stock recommendation")]
struct Cli {
    /// TOML file with `[pipeline]` and `[synth]` tables, or a run manifest.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic price file, snapshot file and true gammas.
    Simulate(SimulateArgs),
    /// Estimate expected returns and covariance from prices.
    Moments(MomentsArgs),
    /// Optimal portfolios over a log-spaced gamma grid.
    Frontier(FrontierArgs),
    /// Per-user risk aversion from snapshot portfolios.
    Gamma(GammaArgs),
    /// One-stock-addition utility scores.
    Score(ScoreArgs),
    /// Collaborative filtering scores from co-holdings.
    Cf(CfArgs),
    /// Top-N lists from score matrices.
    Recommend(RecommendArgs),
    /// Time the naive and vectorized scoring paths.
    Bench(BenchArgs),
    /// Gamma histogram and a user's risk-return plot.
    Plot(PlotArgs),
    /// Run every stage end to end.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    n_assets: Option<usize>,
    #[arg(long)]
    n_users: Option<usize>,
    #[arg(long)]
    n_days: Option<usize>,
    #[arg(long)]
    noise_scale: Option<f64>,
    /// Half-life of the moment estimates users optimize against.
    #[arg(long, default_value_t = 63.0)]
    half_life: f64,
}

#[derive(Args)]
struct MomentsArgs {
    #[arg(long)]
    prices: PathBuf,
    #[arg(long)]
    as_of: Option<NaiveDate>,
    #[arg(long)]
    half_life: Option<f64>,
    #[arg(long)]
    ridge_epsilon: Option<f64>,
}

#[derive(Args)]
struct FrontierArgs {
    /// Directory holding assets.txt, mu.mat and sigma.mat.
    #[arg(long)]
    moments: PathBuf,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    gamma_min: Option<f64>,
    #[arg(long)]
    gamma_max: Option<f64>,
}

#[derive(Args)]
struct GammaArgs {
    #[arg(long)]
    moments: PathBuf,
    #[arg(long)]
    snapshots: PathBuf,
    #[arg(long)]
    as_of: Option<NaiveDate>,
    #[arg(long)]
    window_days: Option<u64>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    moments: PathBuf,
    #[arg(long)]
    snapshots: PathBuf,
    /// `user_id,gamma` file; users missing from it get the default gamma.
    #[arg(long)]
    gammas: PathBuf,
    #[arg(long)]
    as_of: Option<NaiveDate>,
    #[arg(long, value_parser = parse_scoring_path)]
    method: Option<ScoringPath>,
}

#[derive(Args)]
struct CfArgs {
    #[arg(long)]
    snapshots: PathBuf,
    /// Asset universe, one id per line.
    #[arg(long)]
    assets: PathBuf,
    #[arg(long)]
    as_of: Option<NaiveDate>,
}

#[derive(Args)]
struct RecommendArgs {
    #[arg(long)]
    y_cf: PathBuf,
    #[arg(long)]
    y_mpt: PathBuf,
    /// Portfolio matrix whose non-zero entries are the held assets.
    #[arg(long)]
    w: PathBuf,
    #[arg(long)]
    users: PathBuf,
    #[arg(long)]
    assets: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long, overrides_with = "no_mask_held")]
    mask_held: bool,
    #[arg(long, overrides_with = "mask_held")]
    no_mask_held: bool,
    /// One of random, mpt, cf, hybrid; every configured method if omitted.
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated `m:n` sizes.
    #[arg(long, default_value = "200:250,200:500,400:500")]
    sizes: String,
    /// naive, vectorized, or both.
    #[arg(long, default_value = "vectorized")]
    method: String,
    #[arg(long, default_value_t = 3)]
    reps: usize,
}

#[derive(Args)]
struct PlotArgs {
    /// `user_id,gamma,...` file.
    #[arg(long)]
    gammas: PathBuf,
    #[arg(long)]
    bins: Option<usize>,
    /// Also plot this user in the risk-return plane; needs the options below.
    #[arg(long)]
    user: Option<String>,
    #[arg(long)]
    moments: Option<PathBuf>,
    #[arg(long)]
    w: Option<PathBuf>,
    #[arg(long)]
    users: Option<PathBuf>,
    #[arg(long)]
    recommendations: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    prices: Option<PathBuf>,
    #[arg(long)]
    snapshots: Option<PathBuf>,
    /// Also write stage timings as JSON to this path.
    #[arg(long)]
    timings: Option<PathBuf>,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_scoring_path(s: &str) -> std::result::Result<ScoringPath, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    pipeline: PipelineConfig,
    synth: SynthConfig,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    if path.extension().is_some_and(|e| e == "json") {
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        return Ok(FileConfig {
            pipeline: manifest.config,
            synth: SynthConfig::default(),
        });
    }
    toml::from_str(&text).map_err(|e| {
        let line = e
            .span()
            .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.message().to_string(),
        }
    })
}

struct Ctx {
    cfg: FileConfig,
    out_dir: PathBuf,
}

impl Ctx {
    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn bounds(&self) -> GammaBounds {
        self.cfg.pipeline.gamma_bounds
    }
}

fn as_of_or_latest(as_of: Option<NaiveDate>, store: &mptcf::cf::SnapshotStore) -> Result<NaiveDate> {
    as_of
        .or(store.latest_date())
        .ok_or_else(|| Error::InvalidInput("snapshot file has no records".into()))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.pipeline.seed = seed;
        cfg.synth.seed = seed;
    }
    let out_dir = cli.out_dir.clone().unwrap_or_else(|| cfg.pipeline.out_dir.clone());
    cfg.pipeline.out_dir = out_dir.clone();
    let ctx = Ctx { cfg, out_dir };
    let p = &ctx.cfg.pipeline;

    match cli.command {
        Command::Simulate(a) => {
            let mut s = ctx.cfg.synth.clone();
            s.n_assets = a.n_assets.unwrap_or(s.n_assets);
            s.n_users = a.n_users.unwrap_or(s.n_users);
            s.n_days = a.n_days.unwrap_or(s.n_days);
            s.noise_scale = a.noise_scale.unwrap_or(s.noise_scale);
            let history = generate_market(&s)?;
            let decay = mptcf::market::DecayConfig::new(a.half_life, p.decay.ridge_epsilon)?;
            let m = compute_moments(&history, &decay)?;
            let users = generate_users(&s, &m)?;
            let (dates, closes) = price_panel(&history, s.trading_dates()[0]);
            io::write_prices(&ctx.out("prices.csv"), &dates, history.assets(), &closes)?;
            io::write_snapshots(&ctx.out("snapshots.csv"), &users.store)?;
            io::write_gammas(&ctx.out("true_gammas.csv"), &users.users, &users.true_gammas.values().to_vec())?;
        }
        Command::Moments(a) => {
            let mut decay = p.decay;
            decay.half_life = a.half_life.unwrap_or(decay.half_life);
            decay.ridge_epsilon = a.ridge_epsilon.unwrap_or(decay.ridge_epsilon);
            decay.validate()?;
            let history = load_history(&a.prices, a.as_of.or(p.as_of))?;
            io::write_moments(&ctx.out("moments"), &compute_moments(&history, &decay)?)?;
        }
        Command::Frontier(a) => {
            let m = io::read_moments(&a.moments)?;
            let bounds = GammaBounds::new(
                a.gamma_min.unwrap_or(p.gamma_bounds.min),
                a.gamma_max.unwrap_or(p.gamma_bounds.max),
            )?;
            let grid = log_grid(bounds.min, bounds.max, a.points.unwrap_or(p.frontier_points));
            let f = compute_frontier(&m, &grid)?;
            io::write_frontier(&ctx.out("frontier.csv"), &f)?;
            io::write_frontier_weights(&ctx.out("frontier_weights.mat"), &f)?;
        }
        Command::Gamma(a) => {
            let m = io::read_moments(&a.moments)?;
            let store = io::read_snapshots(&a.snapshots)?;
            check_universe(&store, &m.assets)?;
            let as_of = as_of_or_latest(a.as_of.or(p.as_of), &store)?;
            let window = DateRange::trailing(as_of, a.window_days.unwrap_or(p.gamma_window_days))?;
            let users = store.users();
            let days = daily_portfolios(&store, window, &users, &m.assets);
            let rows = estimate_gammas(&days, &users, &m, ctx.bounds(), p.default_gamma)?;
            io::write_ids(&ctx.out("users.txt"), &users)?;
            io::write_gamma_estimates(&ctx.out("gammas.csv"), &rows)?;
        }
        Command::Score(a) => {
            let m = io::read_moments(&a.moments)?;
            let store = io::read_snapshots(&a.snapshots)?;
            check_universe(&store, &m.assets)?;
            let as_of = as_of_or_latest(a.as_of.or(p.as_of), &store)?;
            let w = build_w(&store, DateRange::trailing(as_of, p.w_window_days)?, &m.assets);
            let known: std::collections::HashMap<String, f64> = io::read_gammas(&a.gammas)?.into_iter().collect();
            let gammas: Vec<f64> = w.users.iter().map(|u| *known.get(u).unwrap_or(&p.default_gamma)).collect();
            let gammas = GammaVector::new(gammas.into(), &ctx.bounds())?;
            let w_r = replacement_weights(w.weights.view());
            let y = score(a.method.unwrap_or(p.scoring), w.weights.view(), &w_r, &gammas, &m)?;
            io::write_ids(&ctx.out("users.txt"), &w.users)?;
            io::write_matrix(&ctx.out("W.mat"), &w.weights)?;
            io::write_matrix(&ctx.out("Y_mpt.mat"), &y.values)?;
        }
        Command::Cf(a) => {
            let store = io::read_snapshots(&a.snapshots)?;
            let assets = io::read_ids(&a.assets)?;
            check_universe(&store, &assets)?;
            let as_of = as_of_or_latest(a.as_of.or(p.as_of), &store)?;
            let r = build_r(&store, DateRange::trailing(as_of, p.r_window_days)?, &assets);
            let w = build_w(&store, DateRange::trailing(as_of, p.w_window_days)?, &assets);
            let counts = cocount(&r);
            let c = transition(&counts)?;
            let y = cf_scores(&w, &c)?;
            io::write_ids(&ctx.out("users.txt"), &w.users)?;
            io::write_count_matrix(&ctx.out("R.mat"), &r.matrix.mapv(u64::from))?;
            io::write_matrix(&ctx.out("W.mat"), &w.weights)?;
            io::write_count_matrix(&ctx.out("cocount.mat"), &counts)?;
            io::write_matrix(&ctx.out("C.mat"), &c.0)?;
            io::write_matrix(&ctx.out("Y_cf.mat"), &y.values)?;
        }
        Command::Recommend(a) => {
            let y_cf = ScoreMatrix::new(ScoreKind::Cf, io::read_matrix(&a.y_cf)?);
            let y_mpt = ScoreMatrix::new(ScoreKind::Mpt, io::read_matrix(&a.y_mpt)?);
            y_cf.check()?;
            y_mpt.check()?;
            let users = io::read_ids(&a.users)?;
            let assets = io::read_ids(&a.assets)?;
            let held = held_sets(io::read_matrix(&a.w)?.view());
            let mask_held = if a.no_mask_held {
                false
            } else {
                a.mask_held || p.mask_held
            };
            let opts = RecommendOptions {
                k: a.k.unwrap_or(p.k),
                top_n: a.top_n.unwrap_or(p.top_n),
                mask_held,
                seed: p.seed,
            };
            let methods = a.method.map_or_else(|| p.methods.clone(), |m| vec![m]);
            for method in methods {
                let lists = recommend(method, &y_cf, &y_mpt, &users, &assets, &held, &opts)?;
                io::write_recommendations(&ctx.out(&format!("recommendations_{}.csv", method.name())), &lists)?;
            }
        }
        Command::Bench(a) => {
            let sizes = parse_sizes(&a.sizes)?;
            let paths = match a.method.as_str() {
                "both" => vec![ScoringPath::Naive, ScoringPath::Vectorized],
                other => vec![other.parse()?],
            };
            let rows = run_bench(&sizes, &paths, a.reps, p.seed)?;
            let mut text = String::from("m,n,method,seconds\n");
            for r in rows {
                text.push_str(&format!("{},{},{},{}\n", r.m, r.n, r.path.name(), io::fmt_f64(r.seconds)));
            }
            write_file(&ctx.out("bench.csv"), &text)?;
        }
        Command::Plot(a) => {
            let gammas = io::read_gammas(&a.gammas)?;
            let values: Vec<f64> = gammas.iter().map(|g| g.1).collect();
            let hist = plot::log_histogram(&values, &ctx.bounds(), a.bins.unwrap_or(p.histogram_bins))?;
            plot::emit_histogram(&ctx.out("plots"), "gamma_hist", &hist)?;
            if let Some(user) = &a.user {
                plot_user(&ctx, user, &a, &gammas)?;
            }
        }
        Command::Pipeline(a) => {
            let mut cfg = p.clone();
            cfg.prices = a.prices.unwrap_or(cfg.prices);
            cfg.snapshots = a.snapshots.unwrap_or(cfg.snapshots);
            cfg.timings_file = a.timings.or(cfg.timings_file);
            let out = run_pipeline(&cfg)?;
            for (name, secs) in &out.timings {
                eprintln!("{name:>12} {secs:>9.3}s");
            }
        }
    }
    Ok(())
}

fn plot_user(ctx: &Ctx, user: &str, a: &PlotArgs, gammas: &[(String, f64)]) -> Result<()> {
    let need = |p: &Option<PathBuf>, flag: &str| {
        p.clone()
            .ok_or_else(|| Error::InvalidInput(format!("--user needs --{flag}")))
    };
    let m = io::read_moments(&need(&a.moments, "moments")?)?;
    let w = io::read_matrix(&need(&a.w, "w")?)?;
    let users = io::read_ids(&need(&a.users, "users")?)?;
    let i = users
        .iter()
        .position(|u| u == user)
        .ok_or_else(|| Error::InvalidInput(format!("unknown user {user:?}")))?;
    let gamma = gammas
        .iter()
        .find(|g| g.0 == user)
        .map(|g| g.1)
        .unwrap_or(ctx.cfg.pipeline.default_gamma);
    let recommended: Vec<(usize, String)> = match &a.recommendations {
        Some(path) => io::read_recommendations(path)?
            .into_iter()
            .filter(|r| r.user_id == user)
            .filter_map(|r| m.assets.iter().position(|x| *x == r.asset_id).map(|j| (j, r.asset_id)))
            .collect(),
        None => Vec::new(),
    };
    let grid = log_grid(ctx.bounds().min, ctx.bounds().max, ctx.cfg.pipeline.frontier_points);
    let frontier = compute_frontier(&m, &grid)?;
    let w_r = replacement_weights(w.view()).0[i];
    let p = plot::risk_return_plot(user, &m, &frontier, w.row(i), gamma, w_r, &recommended)?;
    plot::emit_risk_return(&ctx.out("plots"), &format!("risk_return_{user}"), &p)
}

fn parse_sizes(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|part| {
            let (m, n) = part
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::InvalidInput(format!("size {part:?} is not m:n")))?;
            let parse = |x: &str| {
                x.parse::<usize>()
                    .map_err(|_| Error::InvalidInput(format!("size {part:?} is not m:n")))
            };
            Ok((parse(m)?, parse(n)?))
        })
        .collect()
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::SolverDivergence { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
