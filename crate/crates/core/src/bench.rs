//! Seeded random scoring instances and wall-clock timing of the two scoring
//! paths.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::frontier::GammaBounds;
use crate::market::MomentEstimates;
use crate::scoring::{replacement_weights, score, GammaVector, ReplacementWeights, ScoringPath};

/// Inputs of one scoring run.
#[derive(Debug, Clone)]
pub struct ScoringInstance {
    pub w: Array2<f64>,
    pub w_r: ReplacementWeights,
    pub gammas: GammaVector,
    pub moments: MomentEstimates,
}

/// Dense instance: Dirichlet(1) portfolio rows, `Sigma = A A' / n` plus a
/// small diagonal, normal expected returns, and gammas log-uniform on
/// `[0.1, 1000]`.
pub fn random_instance(m: usize, n: usize, seed: u64) -> Result<ScoringInstance> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidInput(format!("instance needs m, n > 0, got {m} x {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Array2::from_shape_fn((n, n), |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        0.02 * z
    });
    let mut sigma = a.dot(&a.t()) / n as f64;
    for j in 0..n {
        sigma[[j, j]] += 1e-5;
    }
    // exact symmetry regardless of summation order in the product
    for j in 0..n {
        for k in 0..j {
            sigma[[j, k]] = sigma[[k, j]];
        }
    }
    let mu = Array1::from_shape_fn(n, |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        5e-4 + 1e-3 * z
    });
    let mut w = Array2::<f64>::zeros((m, n));
    for mut row in w.rows_mut() {
        row.mapv_inplace(|_| Exp1.sample(&mut rng));
        let total = row.sum();
        row.mapv_inplace(|x| x / total);
    }
    let gammas: Array1<f64> = (0..m).map(|_| rng.random_range(0.1f64.ln()..1000f64.ln()).exp()).collect();
    let assets = (0..n).map(|j| format!("A{j:05}")).collect();
    Ok(ScoringInstance {
        w_r: replacement_weights(w.view()),
        w,
        gammas: GammaVector::new(gammas, &GammaBounds::default())?,
        moments: MomentEstimates::new(mu, sigma, assets)?,
    })
}

/// Shortest span of one timed repetition; faster runs are repeated inside
/// it and averaged.
pub const MIN_REP_SECONDS: f64 = 0.05;

/// Median over `reps` repetitions of the wall-clock seconds per scoring run.
///
/// An untimed warm-up run sizes each repetition to at least
/// [`MIN_REP_SECONDS`].
pub fn time_scoring(inst: &ScoringInstance, path: ScoringPath, reps: usize) -> Result<f64> {
    let run = || score(path, inst.w.view(), &inst.w_r, &inst.gammas, &inst.moments);
    let start = Instant::now();
    std::hint::black_box(run()?);
    let once = start.elapsed().as_secs_f64();
    let inner = ((MIN_REP_SECONDS / once.max(1e-9)).ceil() as usize).max(1);

    let mut times = Vec::with_capacity(reps.max(1));
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        for _ in 0..inner {
            std::hint::black_box(run()?);
        }
        times.push(start.elapsed().as_secs_f64() / inner as f64);
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub m: usize,
    pub n: usize,
    pub path: ScoringPath,
    pub seconds: f64,
}

/// Times every path on a fresh instance per `(m, n)` size.
pub fn run_bench(sizes: &[(usize, usize)], paths: &[ScoringPath], reps: usize, seed: u64) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(sizes.len() * paths.len());
    for &(m, n) in sizes {
        let inst = random_instance(m, n, seed)?;
        for &path in paths {
            let seconds = time_scoring(&inst, path, reps)?;
            log::info!("bench m={m} n={n} {}: {seconds:.6}s", path.name());
            rows.push(BenchRow { m, n, path, seconds });
        }
    }
    Ok(rows)
}
