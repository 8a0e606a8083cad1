//! Text file formats.
//!
//! * prices: `date,asset_id,close`, one row per (date, asset);
//! * snapshots: `date,user_id,asset_id,market_value`;
//! * matrices: first line `rows cols`, then one whitespace-separated row per
//!   line, values with 17 significant digits;
//! * id lists: one identifier per line.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ndarray::{Array1, Array2};
use serde::Deserialize;

use crate::cf::{Snapshot, SnapshotStore};
use crate::error::{Error, Result};
use crate::frontier::{EfficientFrontier, GammaEstimate};
use crate::hybrid::RecommendationList;
use crate::market::{MomentEstimates, ReturnHistory};

/// 17 significant digits, enough for an exact `f64` round trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::parse(path, line, format!("{kind:?}")),
    }
}

fn check_header(path: &Path, rdr: &mut csv::Reader<BufReader<File>>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| csv_err(path, e))?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(Error::parse(
            path,
            1,
            format!("expected header {:?}, got {:?}", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn finish<W: Write>(path: &Path, mut w: W) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

// ---------------------------------------------------------------------------
// Matrices and id lists
// ---------------------------------------------------------------------------

pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut w = create(path)?;
    let err = write_err(path);
    writeln!(w, "{} {}", m.nrows(), m.ncols()).map_err(&err)?;
    let mut line = String::new();
    for row in m.rows() {
        line.clear();
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(' ');
            }
            line.push_str(&fmt_f64(*v));
        }
        writeln!(w, "{line}").map_err(&err)?;
    }
    finish(path, w)
}

pub fn write_count_matrix(path: &Path, m: &Array2<u64>) -> Result<()> {
    let mut w = create(path)?;
    let err = write_err(path);
    writeln!(w, "{} {}", m.nrows(), m.ncols()).map_err(&err)?;
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(u64::to_string).collect();
        writeln!(w, "{}", line.join(" ")).map_err(&err)?;
    }
    finish(path, w)
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut lines = open(path)?.lines().enumerate();
    let (rows, cols) = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::io(path, e))?;
            let dims: Vec<usize> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::parse(path, 1, format!("bad dimension {t:?}"))))
                .collect::<Result<_>>()?;
            match dims[..] {
                [r, c] => (r, c),
                _ => return Err(Error::parse(path, 1, "expected `rows cols`")),
            }
        }
        None => return Err(Error::parse(path, 1, "empty matrix file")),
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(
                tok.parse::<f64>()
                    .map_err(|_| Error::parse(path, i + 1, format!("bad number {tok:?}")))?,
            );
        }
        if data.len() - before != cols {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected {cols} values, got {}", data.len() - before),
            ));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(Error::parse(path, seen + 1, format!("expected {rows} rows, got {seen}")));
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("shape checked"))
}

pub fn write_ids(path: &Path, ids: &[String]) -> Result<()> {
    let mut w = create(path)?;
    for id in ids {
        writeln!(w, "{id}").map_err(write_err(path))?;
    }
    finish(path, w)
}

pub fn read_ids(path: &Path) -> Result<Vec<String>> {
    open(path)?
        .lines()
        .map(|l| l.map(|s| s.trim().to_string()).map_err(|e| Error::io(path, e)))
        .filter(|l| !matches!(l, Ok(s) if s.is_empty()))
        .collect()
}

// ---------------------------------------------------------------------------
// Prices
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct PriceRow {
    date: NaiveDate,
    asset_id: String,
    close: f64,
}

/// Reads a complete (date x asset) close panel.
pub fn read_prices(path: &Path) -> Result<(Vec<NaiveDate>, Vec<String>, Array2<f64>)> {
    let mut rdr = csv_reader(path)?;
    check_header(path, &mut rdr, &["date", "asset_id", "close"])?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let mut panel: BTreeMap<NaiveDate, (usize, HashMap<String, f64>)> = BTreeMap::new();
    let mut assets = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row: PriceRow = rec
            .deserialize(Some(&header))
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        if !(row.close.is_finite() && row.close > 0.0) {
            return Err(Error::parse(path, line, format!("close {} must be positive", row.close)));
        }
        assets.insert(row.asset_id.clone());
        let (_, day) = panel.entry(row.date).or_insert_with(|| (line, HashMap::new()));
        if day.insert(row.asset_id.clone(), row.close).is_some() {
            return Err(Error::parse(
                path,
                line,
                format!("duplicate price for {} on {}", row.asset_id, row.date),
            ));
        }
    }
    let assets: Vec<String> = assets.into_iter().collect();
    let dates: Vec<NaiveDate> = panel.keys().copied().collect();
    let mut closes = Array2::zeros((dates.len(), assets.len()));
    for (t, (date, (line, row))) in panel.iter().enumerate() {
        for (j, a) in assets.iter().enumerate() {
            closes[[t, j]] = *row
                .get(a)
                .ok_or_else(|| Error::parse(path, *line, format!("missing price for {a} on {date}")))?;
        }
    }
    Ok((dates, assets, closes))
}

/// Prices file straight to a return history.
pub fn read_return_history(path: &Path) -> Result<ReturnHistory> {
    let (dates, assets, closes) = read_prices(path)?;
    ReturnHistory::from_closes(dates, assets, &closes)
}

pub fn write_prices(path: &Path, dates: &[NaiveDate], assets: &[String], closes: &Array2<f64>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["date", "asset_id", "close"]).map_err(|e| csv_err(path, e))?;
    for (t, d) in dates.iter().enumerate() {
        let d = d.to_string();
        for (j, a) in assets.iter().enumerate() {
            w.write_record([d.as_str(), a, &fmt_f64(closes[[t, j]])])
                .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Snapshots
// ---------------------------------------------------------------------------

pub fn read_snapshots(path: &Path) -> Result<SnapshotStore> {
    let mut rdr = csv_reader(path)?;
    check_header(path, &mut rdr, &["date", "user_id", "asset_id", "market_value"])?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let mut store = SnapshotStore::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let snap: Snapshot = rec
            .deserialize(Some(&header))
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        store.insert(snap).map_err(|e| Error::parse(path, line, e.to_string()))?;
    }
    Ok(store)
}

pub fn write_snapshots(path: &Path, store: &SnapshotStore) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["date", "user_id", "asset_id", "market_value"])
        .map_err(|e| csv_err(path, e))?;
    for s in store.iter() {
        w.write_record([&s.date.to_string(), &s.user_id, &s.asset_id, &fmt_f64(s.market_value)])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Moments, gammas, frontier, recommendations
// ---------------------------------------------------------------------------

pub struct MomentFiles {
    pub assets: PathBuf,
    pub mu: PathBuf,
    pub sigma: PathBuf,
}

impl MomentFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            assets: dir.join("assets.txt"),
            mu: dir.join("mu.mat"),
            sigma: dir.join("sigma.mat"),
        }
    }
}

pub fn write_moments(dir: &Path, m: &MomentEstimates) -> Result<()> {
    let files = MomentFiles::in_dir(dir);
    write_ids(&files.assets, &m.assets)?;
    write_matrix(&files.mu, &m.mu.clone().insert_axis(ndarray::Axis(0)))?;
    write_matrix(&files.sigma, &m.sigma)
}

pub fn read_moments(dir: &Path) -> Result<MomentEstimates> {
    let files = MomentFiles::in_dir(dir);
    let assets = read_ids(&files.assets)?;
    let mu = read_matrix(&files.mu)?;
    if mu.nrows() != 1 {
        return Err(Error::parse(&files.mu, 1, "expected a single row"));
    }
    let mu: Array1<f64> = mu.row(0).to_owned();
    MomentEstimates::new(mu, read_matrix(&files.sigma)?, assets)
}

/// How a user's risk aversion was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaSource {
    Estimated,
    /// No valid day in the window; the configured default was used.
    Default,
    Forced,
}

impl GammaSource {
    pub fn name(self) -> &'static str {
        match self {
            GammaSource::Estimated => "estimated",
            GammaSource::Default => "default",
            GammaSource::Forced => "forced",
        }
    }
}

/// One line of a per-user gamma file.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaRow {
    pub user_id: String,
    pub gamma: f64,
    pub source: GammaSource,
    pub valid_days: usize,
    pub clamped_days: usize,
}

impl GammaRow {
    pub fn from_estimate(user_id: &str, est: &GammaEstimate) -> Self {
        Self {
            user_id: user_id.to_string(),
            gamma: est.gamma,
            source: GammaSource::Estimated,
            valid_days: est.daily_gammas.len(),
            clamped_days: est.clamped_days,
        }
    }

    pub fn fixed(user_id: &str, gamma: f64, source: GammaSource) -> Self {
        Self {
            user_id: user_id.to_string(),
            gamma,
            source,
            valid_days: 0,
            clamped_days: 0,
        }
    }
}

/// `user_id,gamma,source,valid_days,clamped_days`.
pub fn write_gamma_estimates(path: &Path, rows: &[GammaRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["user_id", "gamma", "source", "valid_days", "clamped_days"])
        .map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            r.user_id.as_str(),
            &fmt_f64(r.gamma),
            r.source.name(),
            &r.valid_days.to_string(),
            &r.clamped_days.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `user_id,gamma` pairs.
pub fn write_gammas(path: &Path, users: &[String], gammas: &[f64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["user_id", "gamma"]).map_err(|e| csv_err(path, e))?;
    for (u, g) in users.iter().zip(gammas) {
        w.write_record([u, &fmt_f64(*g)]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads the first two columns (`user_id`, `gamma`) of a gamma file.
pub fn read_gammas(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.get(0) != Some("user_id") || header.get(1) != Some("gamma") {
        return Err(Error::parse(path, 1, "expected header starting with user_id,gamma"));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let gamma: f64 = rec[1]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad gamma {:?}", &rec[1])))?;
        out.push((rec[0].to_string(), gamma));
    }
    Ok(out)
}

pub fn write_frontier(path: &Path, frontier: &EfficientFrontier) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["gamma", "risk", "expected_return", "utility"])
        .map_err(|e| csv_err(path, e))?;
    for p in &frontier.points {
        w.write_record([
            fmt_f64(p.gamma),
            fmt_f64(p.risk),
            fmt_f64(p.expected_return),
            fmt_f64(p.utility_value),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Frontier weights, one row per grid point.
pub fn write_frontier_weights(path: &Path, frontier: &EfficientFrontier) -> Result<()> {
    let n = frontier.points.first().map_or(0, |p| p.weights.len());
    let mut m = Array2::zeros((frontier.points.len(), n));
    for (i, p) in frontier.points.iter().enumerate() {
        m.row_mut(i).assign(p.weights.weights());
    }
    write_matrix(path, &m)
}

pub fn write_recommendations(path: &Path, lists: &[RecommendationList]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["user_id", "rank", "asset_id", "score_mpt", "score_cf"])
        .map_err(|e| csv_err(path, e))?;
    for list in lists {
        for item in &list.items {
            w.write_record([
                &list.user_id,
                &item.rank.to_string(),
                &item.asset_id,
                &fmt_f64(item.mpt_score),
                &fmt_f64(item.cf_score),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RecommendationRow {
    pub user_id: String,
    pub rank: usize,
    pub asset_id: String,
    pub score_mpt: f64,
    pub score_cf: f64,
}

pub fn read_recommendations(path: &Path) -> Result<Vec<RecommendationRow>> {
    let mut rdr = csv_reader(path)?;
    check_header(path, &mut rdr, &["user_id", "rank", "asset_id", "score_mpt", "score_cf"])?;
    rdr.deserialize().map(|r| r.map_err(|e| csv_err(path, e))).collect()
}
