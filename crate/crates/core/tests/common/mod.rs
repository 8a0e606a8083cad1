//! Random instances and scalar reference implementations shared by the
//! integration tests.

#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use mptcf::market::MomentEstimates;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|j| format!("{prefix}{j:04}")).collect()
}

/// `A A' / n` with `A` standard normal scaled by `scale`, made exactly
/// symmetric, plus `diag` on the diagonal.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize, scale: f64, diag: f64) -> Array2<f64> {
    let a = Array2::from_shape_fn((n, rank.max(1)), |_| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    });
    let mut s = a.dot(&a.t()) / rank.max(1) as f64;
    for i in 0..n {
        s[[i, i]] += diag;
        for j in 0..i {
            s[[i, j]] = s[[j, i]];
        }
    }
    s
}

pub fn random_moments(rng: &mut ChaCha8Rng, n: usize) -> MomentEstimates {
    let sigma = random_psd(rng, n, n, 0.2, 1e-3);
    let mu = Array1::from_shape_fn(n, |_| {
        let z: f64 = StandardNormal.sample(rng);
        0.05 + 0.05 * z
    });
    MomentEstimates::new(mu, sigma, ids("A", n)).unwrap()
}

pub fn dirichlet(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    let mut w = Array1::from_shape_fn(n, |_| Exp1.sample(rng));
    let total = w.sum();
    w.mapv_inplace(|x: f64| x / total);
    w
}

/// Rows of random sparse portfolios; about `density` of entries non-zero,
/// with some rows left empty when `allow_empty`.
pub fn random_portfolios(rng: &mut ChaCha8Rng, m: usize, n: usize, density: f64, allow_empty: bool) -> Array2<f64> {
    let mut w = Array2::zeros((m, n));
    for mut row in w.rows_mut() {
        if allow_empty && rng.random_bool(0.1) {
            continue;
        }
        for x in row.iter_mut() {
            if rng.random_bool(density) {
                *x = Exp1.sample(rng);
            }
        }
        if row.sum() == 0.0 {
            row[rng.random_range(0..n)] = 1.0;
        }
        let total = row.sum();
        row.mapv_inplace(|x| x / total);
    }
    w
}

pub fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..hi.ln()).exp()
}

/// `mu'w - gamma w'Sw` by explicit loops.
pub fn utility_oracle(w: &[f64], gamma: f64, mu: &Array1<f64>, sigma: &Array2<f64>) -> f64 {
    let n = w.len();
    let mut ret = 0.0;
    let mut var = 0.0;
    for i in 0..n {
        ret += mu[i] * w[i];
        for j in 0..n {
            var += w[i] * sigma[[i, j]] * w[j];
        }
    }
    ret - gamma * var
}

/// `W C` by a triple loop.
pub fn matmul_oracle(w: &Array2<f64>, c: &Array2<f64>) -> Array2<f64> {
    let (m, n) = w.dim();
    let p = c.ncols();
    let mut out = Array2::zeros((m, p));
    for i in 0..m {
        for j in 0..p {
            let mut s = 0.0;
            for k in 0..n {
                s += w[[i, k]] * c[[k, j]];
            }
            out[[i, j]] = s;
        }
    }
    out
}

pub fn max_rel_dev(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let scale = b.iter().fold(0.0f64, |s, x| s.max(x.abs())).max(f64::MIN_POSITIVE);
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / scale)
        .fold(0.0, f64::max)
}
