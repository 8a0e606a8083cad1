//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always print and timings are not shared with other
//! tests.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use chrono::NaiveDate;
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use mptcf::bench::{random_instance, time_scoring};
use mptcf::cf::{cf_scores, cocount, transition, BinaryHoldings, DateRange, PortfolioMatrix};
use mptcf::frontier::{compute_frontier, log_grid, optimal_portfolio};
use mptcf::hybrid::hybrid_scores;
use mptcf::market::utility;
use mptcf::scoring::{score_naive, score_vectorized, ScoreKind, ScoreMatrix, ScoringPath};

type Outcome = Result<String, String>;

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 closed-form scoring matches direct evaluation", closed_form),
        ("2 scoring cost grows as m n^2", complexity),
        ("3 frontier optimality and monotone risk", frontier_optimality),
        ("4 risk aversion round trip", gamma_round_trip),
        ("5 CF structure", cf_structure),
        ("6 hybrid contract", hybrid_contract),
        ("7 end-to-end run with forced risk aversion", end_to_end),
        ("8 output trees independent of worker count", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn closed_form() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let inst = random_instance(100, 40, seed).map_err(|e| e.to_string())?;
        let a = score_vectorized(inst.w.view(), &inst.w_r, &inst.gammas, &inst.moments).map_err(|e| e.to_string())?;
        let b = score_naive(inst.w.view(), &inst.w_r, &inst.gammas, &inst.moments).map_err(|e| e.to_string())?;
        let scale = b.values.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        let dev = a.values.iter().zip(b.values.iter()).fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
        worst = worst.max(dev / scale);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst <= 1e-9 && secs < 10.0,
        format!("max relative deviation {worst:.2e} (<= 1e-9), {secs:.2}s (< 10s)"),
    )
}

fn complexity() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    pool.install(|| {
        let time = |m, n, path| -> Result<f64, String> {
            let inst = random_instance(m, n, 7).map_err(|e| e.to_string())?;
            time_scoring(&inst, path, 3).map_err(|e| e.to_string())
        };
        let v250 = time(200, 250, ScoringPath::Vectorized)?;
        let v500 = time(200, 500, ScoringPath::Vectorized)?;
        let v400 = time(400, 500, ScoringPath::Vectorized)?;
        let n250 = time(200, 250, ScoringPath::Naive)?;
        let n500 = time(200, 500, ScoringPath::Naive)?;
        let (grow_n, grow_m, grow_naive) = (v500 / v250, v400 / v500, n500 / n250);
        ensure(
            (3.0..=6.0).contains(&grow_n) && (1.5..=3.0).contains(&grow_m) && grow_naive >= 6.0,
            format!(
                "vectorized n x2: {grow_n:.2} (in [3, 6]), m x2: {grow_m:.2} (in [1.5, 3]), naive n x2: {grow_naive:.2} (>= 6)"
            ),
        )
    })
}

fn frontier_optimality() -> Outcome {
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_rise = 0.0f64;
    for inst_seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + inst_seed);
        let n = rng.random_range(2..=15);
        // ten risk aversions drawn log-uniformly on [0.1, 1000] ride along
        let inst = random_instance(10, n, inst_seed).map_err(|e| e.to_string())?;
        let m = &inst.moments;
        let samples: Vec<Array1<f64>> = (0..10_000)
            .map(|_| {
                let x: Array1<f64> = (0..n).map(|_| Exp1.sample(&mut rng)).collect();
                let total = x.sum();
                x / total
            })
            .collect();
        for &gamma in inst.gammas.values() {
            let solved = optimal_portfolio(m, gamma).map_err(|e| e.to_string())?.utility_value;
            let best = samples
                .iter()
                .map(|w| utility(w.view(), gamma, m).expect("valid sample"))
                .fold(f64::NEG_INFINITY, f64::max);
            worst_gap = worst_gap.max(best - solved);
        }
        let f = compute_frontier(m, &log_grid(0.1, 1000.0, 50)).map_err(|e| e.to_string())?;
        for pair in f.points.windows(2) {
            worst_rise = worst_rise.max(pair[1].risk - pair[0].risk);
        }
    }
    ensure(
        worst_gap <= 1e-6 && worst_rise <= 1e-7,
        format!("best sample minus solver {worst_gap:.2e} (<= 1e-6), largest risk increase {worst_rise:.2e} (<= 1e-7)"),
    )
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mptcf"))
}

fn run(cmd: &mut Command) -> Result<(), String> {
    let out = cmd.output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{:?} failed: {}", cmd, String::from_utf8_lossy(&out.stderr)))
    }
}

fn read_pairs(path: &Path) -> Result<BTreeMap<String, f64>, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    Ok(text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].parse().expect("numeric gamma"))
        })
        .collect())
}

fn gamma_round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("config.toml");
    fs::write(
        &cfg,
        "[synth]\nassets_per_user = 0\nsnapshot_days = 5\nseed = 3\n\
         gamma_law = { kind = \"log_uniform\", min = 0.5, max = 500.0 }\n\
         [pipeline]\ndecay = { half_life = 250.0 }\n",
    )
    .map_err(|e| e.to_string())?;
    let d = dir.path();
    run(bin()
        .args(["--config", cfg.to_str().unwrap(), "--out-dir", d.to_str().unwrap(), "simulate"])
        .args(["--n-assets", "50", "--n-users", "200", "--n-days", "1000"])
        .args(["--noise-scale", "0", "--half-life", "250"]))?;
    run(bin()
        .args(["--config", cfg.to_str().unwrap(), "--out-dir", d.to_str().unwrap(), "moments"])
        .args(["--prices", d.join("prices.csv").to_str().unwrap()]))?;
    run(bin()
        .args(["--config", cfg.to_str().unwrap(), "--out-dir", d.to_str().unwrap(), "gamma"])
        .args(["--moments", d.join("moments").to_str().unwrap()])
        .args(["--snapshots", d.join("snapshots.csv").to_str().unwrap()]))?;
    let truth = read_pairs(&d.join("true_gammas.csv"))?;
    let est = read_pairs(&d.join("gammas.csv"))?;
    let hits = truth
        .iter()
        .filter(|(u, g)| est.get(*u).is_some_and(|e| (e / *g - 1.0).abs() <= 0.05))
        .count();
    ensure(
        truth.len() == 200 && hits * 100 >= 95 * truth.len(),
        format!("{hits} of {} users within 5% (>= 95%)", truth.len()),
    )
}

fn cf_structure() -> Outcome {
    let day = NaiveDate::from_ymd_opt(2017, 3, 1).unwrap();
    let period = DateRange::new(day, day).map_err(|e| e.to_string())?;
    let (mut worst_row, mut worst_oracle) = (0.0f64, 0.0f64);
    let mut symmetric = true;
    let mut zero_diag = true;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n) = (rng.random_range(1..=200), rng.random_range(1..=50));
        let p = rng.random_range(0.0..0.6);
        let r = BinaryHoldings {
            matrix: Array2::from_shape_fn((m, n), |_| u8::from(rng.random_bool(p))),
            users: (0..m).map(|i| format!("U{i}")).collect(),
            period,
        };
        let counts = cocount(&r);
        symmetric &= counts == counts.t();
        let c = transition(&counts).map_err(|e| e.to_string())?;
        for j in 0..n {
            zero_diag &= c.0[[j, j]] == 0.0;
            let s = c.0.row(j).sum();
            worst_row = worst_row.max(if s == 0.0 { 0.0 } else { (s - 1.0).abs() });
        }
        let mut weights = Array2::<f64>::zeros((m, n));
        for mut row in weights.rows_mut() {
            for x in row.iter_mut() {
                if rng.random_bool(0.3) {
                    *x = Exp1.sample(&mut rng);
                }
            }
            let total = row.sum();
            if total > 0.0 {
                row /= total;
            }
        }
        let w = PortfolioMatrix { weights, users: r.users.clone(), period };
        let y = cf_scores(&w, &c).map_err(|e| e.to_string())?;
        for i in 0..m {
            for j in 0..n {
                let mut want = 0.0;
                for k in 0..n {
                    want += w.weights[[i, k]] * c.0[[k, j]];
                }
                worst_oracle = worst_oracle.max((y.values[[i, j]] - want).abs());
            }
        }
    }
    let hand = BinaryHoldings {
        matrix: array![[1, 1, 0], [0, 1, 1]],
        users: vec!["a".into(), "b".into()],
        period,
    };
    let c = transition(&cocount(&hand)).map_err(|e| e.to_string())?;
    let hand_ok = c.0 == array![[0.0, 1.0, 0.0], [0.5, 0.0, 0.5], [0.0, 1.0, 0.0]];
    ensure(
        symmetric && zero_diag && worst_row <= 1e-9 && worst_oracle <= 1e-12 && hand_ok,
        format!(
            "co-counts symmetric: {symmetric}, zero diagonal: {zero_diag}, row-sum error {worst_row:.1e} (<= 1e-9), \
             oracle error {worst_oracle:.1e} (<= 1e-12), hand example exact: {hand_ok}"
        ),
    )
}

fn hybrid_contract() -> Outcome {
    let mut violations = Vec::new();
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n) = (rng.random_range(1..=20), rng.random_range(5..=60));
        let cf = Array2::from_shape_fn((m, n), |_| rng.random_range(0..8) as f64 / 8.0);
        let mpt = Array2::from_shape_fn((m, n), |_| rng.random_range(-1.0..1.0));
        let (cf, mpt) = (ScoreMatrix::new(ScoreKind::Cf, cf), ScoreMatrix::new(ScoreKind::Mpt, mpt));
        for k in [1, 5, n] {
            let y = hybrid_scores(&cf, &mpt, k).map_err(|e| e.to_string())?;
            for i in 0..m {
                let row = cf.values.row(i);
                let mut by_cf: Vec<usize> = (0..n).collect();
                by_cf.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
                let want: BTreeSet<usize> = by_cf[..k].iter().copied().collect();
                let finite: BTreeSet<usize> = (0..n).filter(|&j| y.values[[i, j]].is_finite()).collect();
                if finite != want || finite.iter().any(|&j| y.values[[i, j]] != mpt.values[[i, j]]) {
                    violations.push(format!("seed {seed} k {k} row {i}"));
                }
                if k == n {
                    let rank = |s: &ScoreMatrix| {
                        let mut idx: Vec<usize> = (0..n).collect();
                        idx.sort_by(|&a, &b| s.values[[i, b]].total_cmp(&s.values[[i, a]]).then(a.cmp(&b)));
                        idx
                    };
                    if rank(&y) != rank(&mpt) {
                        violations.push(format!("seed {seed} k = n row {i} ranks differ from MPT"));
                    }
                }
            }
        }
    }
    ensure(
        violations.is_empty(),
        if violations.is_empty() {
            "50 pairs x k in {1, 5, n}: finite set = CF top-k, entries = MPT scores, k = n ranks = MPT".into()
        } else {
            format!("{} violations, first: {}", violations.len(), violations[0])
        },
    )
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        let Ok(entries) = fs::read_dir(dir) else { return };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    run(bin()
        .args(["--seed", "17", "--out-dir", d.join("data").to_str().unwrap(), "simulate"])
        .args(["--n-assets", "500", "--n-users", "1000"]))?;
    let users: Vec<String> = (0..20).map(|i| format!("\"U{i:06}\"")).collect();
    let cfg = d.join("config.toml");
    fs::write(
        &cfg,
        format!(
            "[pipeline]\nprices = {:?}\nsnapshots = {:?}\nk = 20\ntop_n = 20\nforced_gammas = [1.0, 20.0, 100.0]\n\
             report_users = [{}]\nseed = 17\n",
            d.join("data/prices.csv"),
            d.join("data/snapshots.csv"),
            users.join(", ")
        ),
    )
    .map_err(|e| e.to_string())?;
    let mut secs = Vec::new();
    for out in ["a", "b"] {
        let start = Instant::now();
        run(bin().args(["--config", cfg.to_str().unwrap(), "--out-dir", d.join(out).to_str().unwrap(), "pipeline"]))?;
        secs.push(start.elapsed().as_secs_f64());
    }
    let mut complete = true;
    for method in ["random", "mpt", "cf", "hybrid"] {
        let text = fs::read_to_string(d.join(format!("a/recommendations_{method}.csv"))).map_err(|e| e.to_string())?;
        let mut per_user: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            per_user.entry(f[0]).or_default().insert(f[2]);
        }
        complete &= per_user.len() == 20 && per_user.values().all(|s| s.len() == 20);
    }
    let forced = read_pairs(&d.join("a/gammas.csv"))?;
    let forced_ok = forced.values().all(|g| [1.0, 20.0, 100.0].contains(g));
    let same = tree(&d.join("a")) == tree(&d.join("b"));
    let slowest = secs.iter().copied().fold(0.0, f64::max);
    ensure(
        complete && forced_ok && same && slowest < 60.0,
        format!(
            "4 methods x 20 users x 20 distinct items: {complete}, gammas in {{1, 20, 100}}: {forced_ok}, \
             identical reruns: {same}, slowest run {slowest:.1}s (< 60s)"
        ),
    )
}

/// Every subcommand except `bench`, which records wall-clock times.
fn run_all(root: &Path, threads: &str) -> Result<(), String> {
    // relative paths, so the manifests of both trees record the same inputs
    let p = |s: &str| s.to_string();
    fs::create_dir_all(root).map_err(|e| e.to_string())?;
    let common = |sub: &str| {
        let mut c = bin();
        c.current_dir(root);
        c.args(["--threads", threads, "--seed", "5", "--out-dir", sub]);
        c
    };
    run(common("sim").args(["simulate", "--n-assets", "40", "--n-users", "150", "--n-days", "300"]))?;
    run(common("mom").args(["moments", "--prices", &p("sim/prices.csv")]))?;
    run(common("fr").args(["frontier", "--moments", &p("mom/moments")]))?;
    run(common("gam").args(["gamma", "--moments", &p("mom/moments"), "--snapshots", &p("sim/snapshots.csv")]))?;
    run(common("sc").args(["score", "--moments", &p("mom/moments"), "--snapshots", &p("sim/snapshots.csv")])
        .args(["--gammas", &p("gam/gammas.csv")]))?;
    run(common("cf").args(["cf", "--snapshots", &p("sim/snapshots.csv"), "--assets", &p("mom/moments/assets.txt")]))?;
    run(common("rec").args(["recommend", "--y-cf", &p("cf/Y_cf.mat"), "--y-mpt", &p("sc/Y_mpt.mat")])
        .args(["--w", &p("sc/W.mat"), "--users", &p("sc/users.txt"), "--assets", &p("mom/moments/assets.txt")]))?;
    run(common("plt").args(["plot", "--gammas", &p("gam/gammas.csv"), "--user", "U000003"])
        .args(["--moments", &p("mom/moments"), "--w", &p("sc/W.mat"), "--users", &p("sc/users.txt")])
        .args(["--recommendations", &p("rec/recommendations_hybrid.csv")]))?;
    run(common("pipe").args(["pipeline", "--prices", &p("sim/prices.csv"), "--snapshots", &p("sim/snapshots.csv")]))?;
    Ok(())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (one, many) = (dir.path().join("t1"), dir.path().join("t4"));
    run_all(&one, "1")?;
    run_all(&many, "4")?;
    let (a, b) = (tree(&one), tree(&many));
    let differing: Vec<String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    ensure(
        differing.is_empty() && a.len() > 30,
        if differing.is_empty() {
            format!("9 subcommands, {} files byte-identical for 1 and 4 threads", a.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}
