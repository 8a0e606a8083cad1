//! CF shortlisting with utility re-ranking, and top-N extraction.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView1, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{ScoreKind, ScoreMatrix};

/// Which score drives a recommendation list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Random,
    Mpt,
    Cf,
    Hybrid,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Random, Method::Mpt, Method::Cf, Method::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Mpt => "mpt",
            Method::Cf => "cf",
            Method::Hybrid => "hybrid",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method {s:?}")))
    }
}

/// Descending score, ties by ascending index.
fn rank_order<'a>(row: ArrayView1<'a, f64>) -> impl Fn(&usize, &usize) -> Ordering + 'a {
    move |&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b))
}

/// Indices of the `k` largest entries, best first; ties go to the lower
/// index.
pub fn top_k_indices(row: ArrayView1<f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    let cmp = rank_order(row);
    if k < idx.len() {
        idx.select_nth_unstable_by(k, &cmp);
        idx.truncate(k);
    }
    idx.sort_by(&cmp);
    idx
}

/// Keeps each user's `k` best CF assets at their utility score and sets
/// every other entry to `-inf`.
pub fn hybrid_scores(y_cf: &ScoreMatrix, y_mpt: &ScoreMatrix, k: usize) -> Result<ScoreMatrix> {
    if y_cf.values.dim() != y_mpt.values.dim() {
        return Err(Error::dims("CF vs MPT score columns", y_mpt.ncols(), y_cf.ncols()));
    }
    let n = y_cf.ncols();
    if k == 0 || k > n {
        return Err(Error::InvalidCutoff { k, n });
    }
    let mut out = Array2::from_elem(y_cf.values.dim(), f64::NEG_INFINITY);
    Zip::from(out.rows_mut())
        .and(y_cf.values.rows())
        .and(y_mpt.values.rows())
        .par_for_each(|mut o, cf, mpt| {
            for j in top_k_indices(cf, k) {
                o[j] = mpt[j];
            }
        });
    Ok(ScoreMatrix::new(ScoreKind::Hybrid, out))
}

/// [`hybrid_scores`] after removing each user's `held` assets from the CF
/// candidates, so the shortlist holds `k` assets not yet owned (fewer if the
/// user owns more than `n - k`).
pub fn masked_hybrid_scores(
    y_cf: &ScoreMatrix,
    y_mpt: &ScoreMatrix,
    k: usize,
    held: Option<&[BTreeSet<usize>]>,
) -> Result<ScoreMatrix> {
    let Some(held) = held else {
        return hybrid_scores(y_cf, y_mpt, k);
    };
    if held.len() != y_cf.nrows() {
        return Err(Error::dims("held sets vs users", y_cf.nrows(), held.len()));
    }
    let mut cf = y_cf.clone();
    for (i, set) in held.iter().enumerate() {
        for &j in set {
            cf.values[[i, j]] = f64::NEG_INFINITY;
        }
    }
    let mut y = hybrid_scores(&cf, y_mpt, k)?;
    for (i, set) in held.iter().enumerate() {
        for &j in set {
            y.values[[i, j]] = f64::NEG_INFINITY;
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedAsset {
    pub asset: usize,
    pub score: f64,
}

/// Each user's `n` highest finite scores, descending with ties by asset
/// index. Assets in the user's `held` set are never returned.
pub fn top_n(y: &ScoreMatrix, n: usize, held: Option<&[BTreeSet<usize>]>) -> Result<Vec<Vec<RankedAsset>>> {
    if n == 0 || n > y.ncols() {
        return Err(Error::InvalidCutoff { k: n, n: y.ncols() });
    }
    if let Some(h) = held {
        if h.len() != y.nrows() {
            return Err(Error::dims("held sets vs users", y.nrows(), h.len()));
        }
    }
    Ok(y.values
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut idx: Vec<usize> = (0..row.len())
                .filter(|&j| row[j].is_finite() && !held.is_some_and(|h| h[i].contains(&j)))
                .collect();
            idx.sort_by(rank_order(row));
            idx.truncate(n);
            idx.into_iter().map(|j| RankedAsset { asset: j, score: row[j] }).collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendedItem {
    pub asset_id: String,
    /// 1-based position in the list.
    pub rank: usize,
    pub mpt_score: f64,
    pub cf_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationList {
    pub user_id: String,
    pub items: Vec<RecommendedItem>,
    /// CF cutoff, for hybrid lists.
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecommendOptions {
    pub k: usize,
    pub top_n: usize,
    pub mask_held: bool,
    /// Seed of the random baseline.
    pub seed: u64,
}

impl Default for RecommendOptions {
    fn default() -> Self {
        Self {
            k: 20,
            top_n: 5,
            mask_held: true,
            seed: 0,
        }
    }
}

/// Recommendation lists for every user under `method`.
///
/// With masking on, held assets are excluded from every list; for the hybrid
/// method they are also removed from the CF shortlist before the cutoff is
/// applied, so the shortlist holds `k` new assets.
pub fn recommend(
    method: Method,
    y_cf: &ScoreMatrix,
    y_mpt: &ScoreMatrix,
    users: &[String],
    assets: &[String],
    held: &[BTreeSet<usize>],
    opts: &RecommendOptions,
) -> Result<Vec<RecommendationList>> {
    if y_cf.values.dim() != y_mpt.values.dim() {
        return Err(Error::dims("CF vs MPT score columns", y_mpt.ncols(), y_cf.ncols()));
    }
    if users.len() != y_mpt.nrows() {
        return Err(Error::dims("user ids vs score rows", y_mpt.nrows(), users.len()));
    }
    if assets.len() != y_mpt.ncols() {
        return Err(Error::dims("asset ids vs score columns", y_mpt.ncols(), assets.len()));
    }
    if held.len() != users.len() {
        return Err(Error::dims("held sets vs users", users.len(), held.len()));
    }
    let mask = opts.mask_held.then_some(held);
    let mut k = None;
    let ranked: Vec<Vec<usize>> = match method {
        Method::Mpt | Method::Cf => {
            let y = if method == Method::Mpt { y_mpt } else { y_cf };
            top_n(y, opts.top_n, mask)?
                .into_iter()
                .map(|r| r.into_iter().map(|a| a.asset).collect())
                .collect()
        }
        Method::Hybrid => {
            k = Some(opts.k);
            let y_h = masked_hybrid_scores(y_cf, y_mpt, opts.k, mask)?;
            top_n(&y_h, opts.top_n, mask)?
                .into_iter()
                .map(|r| r.into_iter().map(|a| a.asset).collect())
                .collect()
        }
        Method::Random => {
            if opts.top_n == 0 || opts.top_n > assets.len() {
                return Err(Error::InvalidCutoff {
                    k: opts.top_n,
                    n: assets.len(),
                });
            }
            (0..users.len())
                .map(|i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                    rng.set_stream(i as u64);
                    let mut pool: Vec<usize> = (0..assets.len())
                        .filter(|j| !mask.is_some_and(|h| h[i].contains(j)))
                        .collect();
                    let take = opts.top_n.min(pool.len());
                    let (picked, _) = pool.partial_shuffle(&mut rng, take);
                    picked.to_vec()
                })
                .collect()
        }
    };
    Ok(ranked
        .into_iter()
        .enumerate()
        .map(|(i, list)| RecommendationList {
            user_id: users[i].clone(),
            items: list
                .into_iter()
                .enumerate()
                .map(|(r, j)| RecommendedItem {
                    asset_id: assets[j].clone(),
                    rank: r + 1,
                    mpt_score: y_mpt.values[[i, j]],
                    cf_score: y_cf.values[[i, j]],
                })
                .collect(),
            k,
        })
        .collect())
}
