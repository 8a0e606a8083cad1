use mptcf::cf::{build_w, DateRange};
use mptcf::frontier::{GammaBounds, GammaEstimator};
use mptcf::market::{compute_moments, DecayConfig};
use mptcf::pipeline::daily_portfolios;
use mptcf::synth::{generate_market, generate_users, GammaLaw, SynthConfig};

#[test]
fn independent_assets_are_uncorrelated() {
    let cfg = SynthConfig {
        n_assets: 8,
        n_days: 5000,
        n_factors: 0,
        seed: 11,
        ..SynthConfig::default()
    };
    let h = generate_market(&cfg).unwrap();
    let m = compute_moments(&h, &DecayConfig::new(1e12, 0.0).unwrap()).unwrap();
    let mut worst = 0.0f64;
    for a in 0..cfg.n_assets {
        for b in 0..a {
            let rho = m.sigma[[a, b]] / (m.sigma[[a, a]] * m.sigma[[b, b]]).sqrt();
            worst = worst.max(rho.abs());
        }
    }
    assert!(worst < 0.1, "max |rho| = {worst}");
}

#[test]
fn default_gamma_median_is_near_20_9() {
    let cfg = SynthConfig {
        n_users: 1000,
        snapshot_days: 1,
        ..SynthConfig::default()
    };
    let m = compute_moments(&generate_market(&cfg).unwrap(), &DecayConfig::default()).unwrap();
    let users = generate_users(&cfg, &m).unwrap();
    let mut g = users.true_gammas.values().to_vec();
    g.sort_by(f64::total_cmp);
    let median = 0.5 * (g[499] + g[500]);
    assert!((median / 20.9 - 1.0).abs() < 0.15, "median {median}");
}

#[test]
fn ingested_rows_match_generated_portfolios() {
    let cfg = SynthConfig {
        n_assets: 30,
        n_users: 80,
        n_days: 200,
        snapshot_days: 5,
        ..SynthConfig::default()
    };
    let m = compute_moments(&generate_market(&cfg).unwrap(), &DecayConfig::default()).unwrap();
    let u = generate_users(&cfg, &m).unwrap();
    let last = *cfg.trading_dates().last().unwrap();
    let w = build_w(&u.store, DateRange::new(last, last).unwrap(), &m.assets);
    assert_eq!(w.users, u.users);
    for (row, want) in w.weights.rows().into_iter().zip(u.portfolios.rows()) {
        assert!((row.sum() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&x| x >= 0.0));
        for (a, b) in row.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn same_seed_same_population() {
    let cfg = SynthConfig {
        n_assets: 12,
        n_users: 40,
        n_days: 100,
        ..SynthConfig::default()
    };
    let m = compute_moments(&generate_market(&cfg).unwrap(), &DecayConfig::default()).unwrap();
    let a = generate_users(&cfg, &m).unwrap();
    let b = generate_users(&cfg, &m).unwrap();
    assert_eq!(a.store.iter().collect::<Vec<_>>(), b.store.iter().collect::<Vec<_>>());
    assert_eq!(a.true_gammas, b.true_gammas);
    let c = generate_users(&SynthConfig { seed: cfg.seed + 1, ..cfg.clone() }, &m).unwrap();
    assert_ne!(a.true_gammas, c.true_gammas);
}

#[test]
fn zero_noise_users_round_trip() {
    let cfg = SynthConfig {
        n_assets: 20,
        n_users: 40,
        n_days: 1000,
        snapshot_days: 3,
        noise_scale: 0.0,
        assets_per_user: 0,
        gamma_law: GammaLaw::LogUniform { min: 0.5, max: 500.0 },
        seed: 5,
        ..SynthConfig::default()
    };
    let m = compute_moments(&generate_market(&cfg).unwrap(), &DecayConfig::new(250.0, 1e-6).unwrap()).unwrap();
    let u = generate_users(&cfg, &m).unwrap();
    let dates = cfg.trading_dates();
    let window = DateRange::new(dates[dates.len() - 3], *dates.last().unwrap()).unwrap();
    let days = daily_portfolios(&u.store, window, &u.users, &m.assets);
    let est = GammaEstimator::new(&m, GammaBounds::default()).unwrap();
    let hits = days
        .iter()
        .zip(u.true_gammas.values())
        .filter(|(d, &g)| (est.estimate(d).unwrap().gamma / g - 1.0).abs() <= 0.05)
        .count();
    assert!(hits * 100 >= 95 * u.users.len(), "{hits} of {} within 5%", u.users.len());
}
