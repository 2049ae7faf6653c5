use std::collections::BTreeSet;
use std::sync::Arc;

use intervene::archive::{
    generate_synthetic_archive, load_archive, synthetic_regime_kind, Archive, ArchiveError, RegimeKind,
    RegimeQuery, RegimeSpec,
};
use intervene::env::{ArchiveEnv, Environment};
use intervene::learner::{Learner, LearnerConfig, RowSet};
use intervene::rng;
use proptest::prelude::*;

fn spec(start: &str, end: &str, label: &str) -> RegimeSpec {
    RegimeSpec {
        start: start.into(),
        end: end.into(),
        label: label.into(),
    }
}

const SMALL_CSV: &str = "timestamp,f1,f2,y_next
2000-01-01,1.0,2.0,0.5
2000-02-01,1.5,2.5,0.7
2000-03-01,2.0,3.0,0.9
2000-04-01,2.5,3.5,1.1
2000-05-01,3.0,4.0,1.3
2000-06-01,3.5,4.5,1.5
";

fn write_small(dir: &tempfile::TempDir) -> std::path::PathBuf {
    let p = dir.path().join("a.csv");
    std::fs::write(&p, SMALL_CSV).unwrap();
    p
}

fn two_regimes() -> Vec<RegimeSpec> {
    vec![
        spec("2000-01-01", "2000-03-01", "early"),
        spec("2000-04-01", "2000-06-01", "late"),
    ]
}

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

#[test]
fn four_column_csv_two_regimes() {
    let dir = tempfile::tempdir().unwrap();
    let a = load_archive(write_small(&dir), "y_next", &two_regimes()).unwrap();
    assert_eq!(a.n_rows(), 6);
    assert_eq!(a.regimes().len(), 2);
    assert_eq!(a.feature_names(), &["f1".to_string(), "f2".to_string()]);
    assert_eq!(a.target(), &[0.5, 0.7, 0.9, 1.1, 1.3, 1.5]);
}

#[test]
fn regime_outside_range_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let regimes = vec![spec("2000-01-01", "2000-03-01", "in"), spec("2010-01-01", "2010-12-01", "out")];
    assert!(matches!(
        load_archive(write_small(&dir), "y_next", &regimes),
        Err(ArchiveError::EmptyRegime(l)) if l == "out"
    ));
}

#[test]
fn missing_target_and_bad_rows_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_small(&dir);
    assert!(matches!(load_archive(&path, "inflation", &two_regimes()), Err(ArchiveError::MissingColumn(_))));
    let holes = dir.path().join("holes.csv");
    std::fs::write(&holes, SMALL_CSV.replace("2.5,3.5", "2.5,")).unwrap();
    assert!(load_archive(&holes, "y_next", &two_regimes()).is_err());
}

#[test]
fn synthetic_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate_synthetic_archive(240, 4, &mut rng::from_seed(11)).unwrap();
    let path = dir.path().join("syn.csv");
    a.save(&path).unwrap();
    let b = load_archive(&path, "y_next", &a.regime_specs()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn query_draws_with_replacement_from_regime() {
    let dir = tempfile::tempdir().unwrap();
    let a = load_archive(write_small(&dir), "y_next", &two_regimes()).unwrap();
    let ds = a.query(RegimeQuery { regime: 0, n: 5 }, &mut rng::from_seed(3)).unwrap();
    assert_eq!(ds.n_rows(), 5);
    let allowed: Vec<Vec<f64>> = (0..3).map(|r| a.row(r)).collect();
    for r in 0..5 {
        assert!(allowed.contains(&ds.row(r)));
    }
}

#[test]
fn query_is_deterministic() {
    let a = generate_synthetic_archive(120, 2, &mut rng::from_seed(1)).unwrap();
    let q = RegimeQuery { regime: 1, n: 50 };
    assert_eq!(a.query(q, &mut rng::from_seed(5)).unwrap(), a.query(q, &mut rng::from_seed(5)).unwrap());
}

#[test]
fn invalid_queries_rejected() {
    let a = generate_synthetic_archive(120, 2, &mut rng::from_seed(1)).unwrap();
    assert!(a.query(RegimeQuery { regime: 2, n: 5 }, &mut rng::from_seed(0)).is_err());
    assert!(a.query(RegimeQuery { regime: 0, n: 0 }, &mut rng::from_seed(0)).is_err());
}

#[test]
fn regime_means_differ_by_construction_gap() {
    // Two regimes whose target is a constant plus unit noise: means 0 and 3.
    let n = 200;
    let origin = chrono::NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
    let ts: Vec<_> = (0..n).map(|i| origin + chrono::Days::new(i as u64)).collect();
    let mut r = rng::from_seed(17);
    let noise: Vec<f64> = (0..n).map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut r)).collect();
    let target: Vec<f64> = (0..n).map(|i| if i < n / 2 { 0.0 } else { 3.0 } + noise[i]).collect();
    let fmt = |d: chrono::NaiveDate| d.format("%Y-%m-%d").to_string();
    let regimes = vec![
        spec(&fmt(ts[0]), &fmt(ts[n / 2 - 1]), "low"),
        spec(&fmt(ts[n / 2]), &fmt(ts[n - 1]), "high"),
    ];
    let a = Archive::new(ts, vec!["f".into()], vec![noise.clone()], "y".into(), target, &regimes).unwrap();
    let m = 400;
    let lo = a.query(RegimeQuery { regime: 0, n: m }, &mut rng::from_seed(1)).unwrap();
    let hi = a.query(RegimeQuery { regime: 1, n: m }, &mut rng::from_seed(2)).unwrap();
    let (ylo, yhi) = (lo.column(1), hi.column(1));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let se = ((variance(ylo) + variance(yhi)) / m as f64).sqrt();
    assert!(mean(yhi) - mean(ylo) >= 3.0 - 3.0 * se);
}

#[test]
fn synthetic_volatility_ordering() {
    for seed in 0..5 {
        let a = generate_synthetic_archive(720, 4, &mut rng::from_seed(seed)).unwrap();
        for (r, regime) in a.regimes().iter().enumerate() {
            let y: Vec<f64> = regime.rows.clone().map(|i| a.target()[i]).collect();
            let v = variance(&y);
            for (s, other) in a.regimes().iter().enumerate() {
                let z: Vec<f64> = other.rows.clone().map(|i| a.target()[i]).collect();
                if synthetic_regime_kind(r) == RegimeKind::Volatile && synthetic_regime_kind(s) == RegimeKind::Calm {
                    assert!(v > variance(&z), "seed {seed}: regime {r} vs {s}");
                }
            }
        }
    }
}

#[test]
fn synthetic_row_count_and_determinism() {
    let a = generate_synthetic_archive(333, 3, &mut rng::from_seed(4)).unwrap();
    assert_eq!(a.n_rows(), 333);
    assert_eq!(a, generate_synthetic_archive(333, 3, &mut rng::from_seed(4)).unwrap());
    assert!(generate_synthetic_archive(100, 1, &mut rng::from_seed(4)).is_err());
}

#[test]
fn volatile_training_beats_calm_training_on_volatile_holdout() {
    let a = generate_synthetic_archive(720, 4, &mut rng::from_seed(7)).unwrap();
    let env = ArchiveEnv::new(a).unwrap();
    let graph = Arc::clone(env.graph());
    let target = graph.n_nodes() - 1;
    let holdout = env.regime_validation(1);
    let mut wins = 0;
    for seed in 0..5u64 {
        let fit = |regime: usize| {
            let mut s = rng::stream(seed, 1);
            let rows = RowSet::from_dataset(&env.execute(regime, 0.0, 256, &mut s).unwrap());
            let mut l = Learner::new(Arc::clone(&graph), LearnerConfig::default(), &mut rng::stream(seed, 2));
            l.train_on(&rows, 300);
            l.compute_losses(&holdout)[target]
        };
        if fit(1) < fit(0) {
            wins += 1;
        }
    }
    assert!(wins >= 4, "volatile-trained learner won {wins}/5");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn query_never_fabricates_rows(seed in any::<u64>(), regime in 0usize..4, n in 1usize..100) {
        let a = generate_synthetic_archive(200, 4, &mut rng::from_seed(seed % 8)).unwrap();
        let rows: BTreeSet<Vec<u64>> = a.regimes()[regime]
            .rows
            .clone()
            .map(|r| a.row(r).iter().map(|v| v.to_bits()).collect())
            .collect();
        let ds = a.query(RegimeQuery { regime, n }, &mut rng::from_seed(seed)).unwrap();
        prop_assert_eq!(ds.n_rows(), n);
        for r in 0..n {
            let bits: Vec<u64> = ds.row(r).iter().map(|v| v.to_bits()).collect();
            prop_assert!(rows.contains(&bits));
        }
    }
}
