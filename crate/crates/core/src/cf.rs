//! Item-item collaborative filtering over portfolio co-holdings.
//!
//! Snapshots of position market values are aggregated into a binary
//! held-at-least-once matrix `R` over a long window and a row-normalized
//! portfolio matrix `W` over a short window. Co-counts `R'R` with the
//! diagonal removed and rows normalized give a Markov transition matrix `C`
//! between assets, and `W C` scores every asset for every user.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{Days, NaiveDate};
use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{ScoreKind, ScoreMatrix};

/// Inclusive calendar date interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidInput(format!("empty date range {start}..={end}")));
        }
        Ok(Self { start, end })
    }

    /// The `days` calendar days ending at `end`, inclusive.
    pub fn trailing(end: NaiveDate, days: u64) -> Result<Self> {
        if days == 0 {
            return Err(Error::InvalidInput("window must span at least one day".into()));
        }
        let start = end
            .checked_sub_days(Days::new(days - 1))
            .ok_or_else(|| Error::InvalidInput(format!("window of {days} days before {end}")))?;
        Ok(Self { start, end })
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

/// Market value of one user position on one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub date: NaiveDate,
    pub user_id: String,
    pub asset_id: String,
    pub market_value: f64,
}

/// Daily position snapshots, at most one per (user, asset, date).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SnapshotStore {
    // keyed (date, user, asset) so iteration is chronological
    records: BTreeMap<(NaiveDate, String, String), f64>,
}

impl SnapshotStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, s: Snapshot) -> Result<()> {
        if !s.market_value.is_finite() {
            return Err(Error::NonFiniteInput("market value"));
        }
        if s.market_value < 0.0 {
            return Err(Error::InvalidInput(format!(
                "negative market value {} for {} / {} on {}",
                s.market_value, s.user_id, s.asset_id, s.date
            )));
        }
        let key = (s.date, s.user_id, s.asset_id);
        if self.records.contains_key(&key) {
            return Err(Error::InvalidInput(format!(
                "duplicate snapshot for {} / {} on {}",
                key.1, key.2, key.0
            )));
        }
        self.records.insert(key, s.market_value);
        Ok(())
    }

    pub fn from_records(records: impl IntoIterator<Item = Snapshot>) -> Result<Self> {
        let mut store = Self::new();
        for r in records {
            store.insert(r)?;
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in (date, user, asset) order.
    pub fn iter(&self) -> impl Iterator<Item = Snapshot> + '_ {
        self.records.iter().map(|((date, user, asset), &v)| Snapshot {
            date: *date,
            user_id: user.clone(),
            asset_id: asset.clone(),
            market_value: v,
        })
    }

    /// Sorted distinct user ids.
    pub fn users(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.records.keys().map(|k| &k.1).collect();
        set.into_iter().cloned().collect()
    }

    /// Sorted distinct asset ids.
    pub fn assets(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.records.keys().map(|k| &k.2).collect();
        set.into_iter().cloned().collect()
    }

    pub fn latest_date(&self) -> Option<NaiveDate> {
        self.records.keys().next_back().map(|k| k.0)
    }

    fn in_range(&self, range: DateRange) -> impl Iterator<Item = (&NaiveDate, &str, &str, f64)> + '_ {
        let lo = (range.start, String::new(), String::new());
        self.records
            .range(lo..)
            .take_while(move |(k, _)| k.0 <= range.end)
            .map(|((d, u, a), &v)| (d, u.as_str(), a.as_str(), v))
    }

    /// Per-user daily portfolio values over `range`, indexed against
    /// `universe`. Off-universe positions are skipped.
    pub fn daily_values(
        &self,
        range: DateRange,
        users: &[String],
        universe: &[String],
    ) -> Vec<BTreeMap<NaiveDate, Vec<f64>>> {
        let (uidx, aidx) = (index_of(users), index_of(universe));
        let mut out = vec![BTreeMap::new(); users.len()];
        for (date, user, asset, v) in self.in_range(range) {
            if let (Some(&i), Some(&j)) = (uidx.get(user), aidx.get(asset)) {
                let row: &mut Vec<f64> = out[i].entry(*date).or_insert_with(|| vec![0.0; universe.len()]);
                row[j] += v;
            }
        }
        out
    }
}

fn index_of(ids: &[String]) -> HashMap<&str, usize> {
    ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
}

fn warn_dropped(dropped: &BTreeSet<&str>, what: &str) {
    if !dropped.is_empty() {
        log::warn!(
            "{what}: {} asset(s) outside the pricing universe dropped (e.g. {})",
            dropped.len(),
            dropped.iter().next().unwrap()
        );
    }
}

/// Implicit-feedback matrix `R`: 1 where the user held the asset on some
/// day of the window.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryHoldings {
    pub matrix: Array2<u8>,
    pub users: Vec<String>,
    pub period: DateRange,
}

/// Row-normalized aggregate holdings `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioMatrix {
    pub weights: Array2<f64>,
    pub users: Vec<String>,
    pub period: DateRange,
}

impl PortfolioMatrix {
    /// Indices of assets with positive weight in row `i`.
    pub fn held(&self, i: usize) -> Vec<usize> {
        self.weights
            .row(i)
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn held_sets(&self) -> Vec<BTreeSet<usize>> {
        held_sets(self.weights.view())
    }
}

/// Column indices of the positive entries of each row.
pub fn held_sets(weights: ArrayView2<f64>) -> Vec<BTreeSet<usize>> {
    weights
        .rows()
        .into_iter()
        .map(|row| row.iter().enumerate().filter(|(_, &w)| w > 0.0).map(|(j, _)| j).collect())
        .collect()
}

/// Row-stochastic item-item transition matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix(pub Array2<f64>);

/// `R[i, j] = 1` iff user `i` had a non-zero position in asset `j` on some
/// day in `period`. Rows follow `store.users()`.
pub fn build_r(store: &SnapshotStore, period: DateRange, universe: &[String]) -> BinaryHoldings {
    let users = store.users();
    let (uidx, aidx) = (index_of(&users), index_of(universe));
    let mut matrix = Array2::zeros((users.len(), universe.len()));
    let mut dropped = BTreeSet::new();
    for (_, user, asset, v) in store.in_range(period) {
        match aidx.get(asset) {
            Some(&j) if v != 0.0 => matrix[[uidx[user], j]] = 1,
            Some(_) => {}
            None => {
                dropped.insert(asset);
            }
        }
    }
    warn_dropped(&dropped, "holdings matrix");
    BinaryHoldings { matrix, users, period }
}

/// `W[i, j]` = user `i`'s summed market value in asset `j` over `period`
/// divided by their summed value across all universe assets; all-zero rows
/// for users with nothing in the window.
pub fn build_w(store: &SnapshotStore, period: DateRange, universe: &[String]) -> PortfolioMatrix {
    let users = store.users();
    let (uidx, aidx) = (index_of(&users), index_of(universe));
    let mut weights = Array2::<f64>::zeros((users.len(), universe.len()));
    let mut dropped = BTreeSet::new();
    for (_, user, asset, v) in store.in_range(period) {
        match aidx.get(asset) {
            Some(&j) => weights[[uidx[user], j]] += v,
            None => {
                dropped.insert(asset);
            }
        }
    }
    warn_dropped(&dropped, "portfolio matrix");
    for mut row in weights.rows_mut() {
        let total: f64 = row.sum();
        if total > 0.0 {
            row.mapv_inplace(|v| v / total);
        }
    }
    PortfolioMatrix { weights, users, period }
}

/// Co-count matrix `R'R`: entry `(j, k)` counts users holding both.
pub fn cocount(r: &BinaryHoldings) -> Array2<u64> {
    let n = r.matrix.ncols();
    let mut c = Array2::<u64>::zeros((n, n));
    for row in r.matrix.rows() {
        let held: Vec<usize> = row.iter().enumerate().filter(|(_, &x)| x != 0).map(|(j, _)| j).collect();
        for &a in &held {
            for &b in &held {
                c[[a, b]] += 1;
            }
        }
    }
    c
}

/// Drops the diagonal of the co-counts and normalizes each row to sum 1,
/// so `C[j, k]` is the probability of moving from asset `j` to asset `k`.
/// Assets never co-held with another keep an all-zero row.
pub fn transition(cocounts: &Array2<u64>) -> Result<TransitionMatrix> {
    let (n, cols) = cocounts.dim();
    if n != cols {
        return Err(Error::dims("co-count matrix columns", n, cols));
    }
    let mut c = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let total: u64 = (0..n).filter(|&k| k != j).map(|k| cocounts[[j, k]]).sum();
        if total == 0 {
            continue;
        }
        for k in 0..n {
            if k != j {
                c[[j, k]] = cocounts[[j, k]] as f64 / total as f64;
            }
        }
    }
    Ok(TransitionMatrix(c))
}

/// `Y_CF = W C`, one Markov step from each user's portfolio.
pub fn cf_scores(w: &PortfolioMatrix, c: &TransitionMatrix) -> Result<ScoreMatrix> {
    let (m, n) = w.weights.dim();
    if c.0.nrows() != n {
        return Err(Error::dims("transition rows vs portfolio columns", n, c.0.nrows()));
    }
    let cols = c.0.ncols();
    let mut out = Array2::<f64>::zeros((m, cols));
    Zip::from(out.rows_mut())
        .and(w.weights.rows())
        .par_for_each(|mut o, wr| {
            for (k, &wk) in wr.iter().enumerate() {
                if wk != 0.0 {
                    o.scaled_add(wk, &c.0.row(k));
                }
            }
        });
    Ok(ScoreMatrix::new(ScoreKind::Cf, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2017, 3, d).unwrap()
    }

    fn snap(d: u32, u: &str, a: &str, v: f64) -> Snapshot {
        Snapshot {
            date: day(d),
            user_id: u.into(),
            asset_id: a.into(),
            market_value: v,
        }
    }

    fn universe(ids: &[&str]) -> Vec<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    fn holdings(m: Array2<u8>) -> BinaryHoldings {
        BinaryHoldings {
            users: (0..m.nrows()).map(|i| format!("u{i}")).collect(),
            matrix: m,
            period: DateRange::new(day(1), day(1)).unwrap(),
        }
    }

    #[test]
    fn r_definition() {
        let store = SnapshotStore::from_records([
            snap(5, "u", "a", 100.0),
            snap(5, "u", "b", 0.0),
            snap(1, "u", "c", 50.0),
        ])
        .unwrap();
        let r = build_r(&store, DateRange::new(day(3), day(9)).unwrap(), &universe(&["a", "b", "c"]));
        assert_eq!(r.matrix, array![[1u8, 0, 0]]);
    }

    #[test]
    fn w_normalizes_over_window() {
        let store = SnapshotStore::from_records([
            snap(5, "u", "a", 100.0),
            snap(5, "u", "b", 300.0),
            snap(5, "v", "b", 10.0),
            snap(6, "v", "b", 20.0),
            snap(1, "z", "a", 5.0),
        ])
        .unwrap();
        let w = build_w(&store, DateRange::new(day(4), day(6)).unwrap(), &universe(&["a", "b"]));
        assert_eq!(w.users, universe(&["u", "v", "z"]));
        assert_eq!(w.weights, array![[0.25, 0.75], [0.0, 1.0], [0.0, 0.0]]);
        assert_eq!(w.held(0), vec![0, 1]);
    }

    #[test]
    fn off_universe_positions_dropped() {
        let store = SnapshotStore::from_records([snap(5, "u", "a", 100.0), snap(5, "u", "x", 300.0)]).unwrap();
        let w = build_w(&store, DateRange::new(day(5), day(5)).unwrap(), &universe(&["a"]));
        assert_eq!(w.weights, array![[1.0]]);
    }

    #[test]
    fn store_rejects_bad_records() {
        let mut s = SnapshotStore::new();
        s.insert(snap(1, "u", "a", 1.0)).unwrap();
        assert!(s.insert(snap(1, "u", "a", 2.0)).is_err());
        assert!(s.insert(snap(1, "u", "b", -2.0)).is_err());
        assert!(s.insert(snap(1, "u", "c", f64::INFINITY)).is_err());
    }

    #[test]
    fn cocount_hand_example() {
        let c = cocount(&holdings(array![[1, 1, 0], [0, 1, 1]]));
        assert_eq!(c, array![[1u64, 1, 0], [1, 2, 1], [0, 1, 1]]);
        let c = cocount(&holdings(array![[0, 1, 0]]));
        assert_eq!(c, array![[0u64, 0, 0], [0, 1, 0], [0, 0, 0]]);
        assert_eq!(cocount(&holdings(Array2::zeros((2, 2)))), Array2::<u64>::zeros((2, 2)));
    }

    #[test]
    fn transition_hand_examples() {
        let c = transition(&array![[1u64, 1, 0], [1, 2, 1], [0, 1, 1]]).unwrap();
        assert_eq!(c.0, array![[0.0, 1.0, 0.0], [0.5, 0.0, 0.5], [0.0, 1.0, 0.0]]);
        let c = transition(&array![[3u64, 0], [0, 4]]).unwrap();
        assert_eq!(c.0, Array2::<f64>::zeros((2, 2)));
        let c = transition(&array![[5u64, 3], [3, 7]]).unwrap();
        assert_eq!(c.0, array![[0.0, 1.0], [1.0, 0.0]]);
        assert!(transition(&Array2::zeros((2, 3))).is_err());
    }

    #[test]
    fn cf_hand_example() {
        let c = transition(&array![[1u64, 1, 0], [1, 2, 1], [0, 1, 1]]).unwrap();
        let w = PortfolioMatrix {
            weights: array![[0.5, 0.5, 0.0], [0.0, 0.0, 0.0]],
            users: universe(&["a", "b"]),
            period: DateRange::new(day(1), day(1)).unwrap(),
        };
        let y = cf_scores(&w, &c).unwrap();
        assert_eq!(y.values, array![[0.25, 0.5, 0.25], [0.0, 0.0, 0.0]]);
    }

    #[test]
    fn isolated_item_scores_zero() {
        let c = transition(&array![[2u64, 0, 0], [0, 1, 1], [0, 1, 1]]).unwrap();
        let w = PortfolioMatrix {
            weights: array![[1.0, 0.0, 0.0]],
            users: universe(&["a"]),
            period: DateRange::new(day(1), day(1)).unwrap(),
        };
        assert_eq!(cf_scores(&w, &c).unwrap().values, array![[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn trailing_window() {
        let r = DateRange::trailing(day(10), 3).unwrap();
        assert!(r.contains(day(8)) && r.contains(day(10)) && !r.contains(day(7)));
        assert!(DateRange::trailing(day(10), 0).is_err());
        assert!(DateRange::new(day(2), day(1)).is_err());
    }
}
