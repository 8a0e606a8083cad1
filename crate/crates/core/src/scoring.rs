//! One-stock-addition utility scores.
//!
//! Entry `(i, j)` of the score matrix is the utility, at user `i`'s risk
//! aversion, of the portfolio obtained by scaling the user's weights by
//! `1 - w_r` and putting `w_r` on asset `j`, where `w_r` is the mean of the
//! user's non-zero weights. [`score_naive`] evaluates every pair directly in
//! `O(m n^3)`; [`score_vectorized`] uses the closed form
//!
//! ```text
//! W'   = ((1 - w_r) 1') o W
//! Y_mu = W' mu 1' + w_r mu'
//! Y_S  = (W' S o W') 1 1' + (w_r o w_r) diag(S)' + 2 W' S o (w_r 1')
//! Y    = Y_mu - diag(gamma) Y_S
//! ```
//!
//! in `O(m n^2)`. Users without holdings are scored as if the candidate
//! replaced the whole (empty) portfolio, i.e. with `w_r = 1`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontier::GammaBounds;
use crate::market::{utility, MomentEstimates};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Cf,
    Mpt,
    Hybrid,
}

/// Which implementation computes the utility scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoringPath {
    Naive,
    #[default]
    Vectorized,
}

impl ScoringPath {
    pub fn name(self) -> &'static str {
        match self {
            ScoringPath::Naive => "naive",
            ScoringPath::Vectorized => "vectorized",
        }
    }
}

impl std::str::FromStr for ScoringPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(ScoringPath::Naive),
            "vectorized" => Ok(ScoringPath::Vectorized),
            _ => Err(Error::InvalidInput(format!("unknown scoring path {s:?}"))),
        }
    }
}

/// Dense users-by-assets score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub kind: ScoreKind,
    pub values: Array2<f64>,
}

impl ScoreMatrix {
    pub fn new(kind: ScoreKind, values: Array2<f64>) -> Self {
        Self { kind, values }
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Finite everywhere, except `-inf` sentinels in hybrid matrices.
    pub fn check(&self) -> Result<()> {
        let ok = self.values.iter().all(|v| {
            v.is_finite() || (self.kind == ScoreKind::Hybrid && *v == f64::NEG_INFINITY)
        });
        if ok {
            Ok(())
        } else {
            Err(Error::NonFiniteInput("score matrix"))
        }
    }
}

/// Per-user weight given to an added asset.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplacementWeights(pub Array1<f64>);

/// Per-user risk aversion.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaVector(Array1<f64>);

impl GammaVector {
    pub fn new(values: Array1<f64>, bounds: &GammaBounds) -> Result<Self> {
        if let Some(g) = values.iter().find(|&&g| !(g >= bounds.min && g <= bounds.max)) {
            return Err(Error::InvalidInput(format!(
                "risk aversion {g} outside [{}, {}]",
                bounds.min, bounds.max
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Mean of the strictly positive entries of each row; 0 for empty rows.
pub fn replacement_weights(w: ArrayView2<f64>) -> ReplacementWeights {
    ReplacementWeights(
        w.rows()
            .into_iter()
            .map(|row| {
                let (sum, count) = row
                    .iter()
                    .filter(|&&x| x > 0.0)
                    .fold((0.0, 0usize), |(s, c), &x| (s + x, c + 1));
                if count == 0 {
                    0.0
                } else {
                    sum / count as f64
                }
            })
            .collect(),
    )
}

fn check_dims(w: ArrayView2<f64>, w_r: &ReplacementWeights, gammas: &GammaVector, m: &MomentEstimates) -> Result<()> {
    let (rows, cols) = w.dim();
    if cols != m.n() {
        return Err(Error::dims("portfolio columns vs assets", m.n(), cols));
    }
    if w_r.0.len() != rows {
        return Err(Error::dims("replacement weights vs users", rows, w_r.0.len()));
    }
    if gammas.len() != rows {
        return Err(Error::dims("risk aversions vs users", rows, gammas.len()));
    }
    Ok(())
}

fn effective_weight(row: ArrayView1<f64>, w_r: f64) -> f64 {
    if row.iter().all(|&x| x == 0.0) {
        1.0
    } else {
        w_r
    }
}

/// Direct evaluation of every post-addition portfolio.
pub fn score_naive(
    w: ArrayView2<f64>,
    w_r: &ReplacementWeights,
    gammas: &GammaVector,
    m: &MomentEstimates,
) -> Result<ScoreMatrix> {
    check_dims(w, w_r, gammas, m)?;
    let n = m.n();
    let mut out = Array2::<f64>::zeros(w.dim());
    Zip::from(out.rows_mut())
        .and(w.rows())
        .and(&w_r.0)
        .and(gammas.values())
        .par_for_each(|mut o, row, &wr, &gamma| {
            let wr = effective_weight(row, wr);
            let base: Array1<f64> = row.mapv(|x| (1.0 - wr) * x);
            let mut v = base.clone();
            for j in 0..n {
                v[j] += wr;
                o[j] = utility(v.view(), gamma, m).expect("dimensions checked");
                v[j] = base[j];
            }
        });
    Ok(ScoreMatrix::new(ScoreKind::Mpt, out))
}

/// Closed-form score matrix, row-parallel over users.
pub fn score_vectorized(
    w: ArrayView2<f64>,
    w_r: &ReplacementWeights,
    gammas: &GammaVector,
    m: &MomentEstimates,
) -> Result<ScoreMatrix> {
    check_dims(w, w_r, gammas, m)?;
    let wr: Array1<f64> = Zip::from(w.rows()).and(&w_r.0).map_collect(|row, &wr| effective_weight(row, wr));
    let mut scaled = w.to_owned();
    Zip::from(scaled.rows_mut()).and(&wr).for_each(|mut row, &wr| row *= 1.0 - wr);
    // one blocked product keeps Sigma cache-resident across users
    let cross = scaled.dot(&m.sigma);
    let diag = m.sigma.diag();
    let mut out = Array2::<f64>::zeros(w.dim());
    Zip::from(out.rows_mut())
        .and(scaled.rows())
        .and(cross.rows())
        .and(&wr)
        .and(gammas.values())
        .par_for_each(|mut o, scaled, cross, &wr, &gamma| {
            let base_return = scaled.dot(&m.mu);
            let base_var = cross.dot(&scaled);
            Zip::from(&mut o)
                .and(&m.mu)
                .and(&diag)
                .and(&cross)
                .for_each(|o, &mu, &d, &c| {
                    let ret = base_return + wr * mu;
                    let var = base_var + wr * wr * d + 2.0 * c * wr;
                    *o = ret - gamma * var;
                });
        });
    Ok(ScoreMatrix::new(ScoreKind::Mpt, out))
}

/// Dispatches to [`score_naive`] or [`score_vectorized`].
pub fn score(
    path: ScoringPath,
    w: ArrayView2<f64>,
    w_r: &ReplacementWeights,
    gammas: &GammaVector,
    m: &MomentEstimates,
) -> Result<ScoreMatrix> {
    match path {
        ScoringPath::Naive => score_naive(w, w_r, gammas, m),
        ScoringPath::Vectorized => score_vectorized(w, w_r, gammas, m),
    }
}
