mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simeval_core::eval::SuiteResult;
use simeval_core::metrics::*;

#[test]
fn weak_order_counts_are_fubini_numbers() {
    let counts: Vec<usize> = (1..=5).map(|n| weak_orders(n).len()).collect();
    assert_eq!(counts, [1, 3, 13, 75, 541]);
}

#[test]
fn formula_oracles_agree_on_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let n = rng.gen_range(2..12);
        let r: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let s: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        assert!((pearson(&r, &s).unwrap() - pearson_oracle(&r, &s)).abs() <= 1e-12);
        assert!((mmrv(&r, &s).unwrap() - mmrv_oracle(&r, &s)).abs() <= 1e-12);
    }
}

#[test]
fn worked_example_matches_oracle() {
    let r = [0.2, 0.5, 0.9, 0.4];
    let s = [0.1, 0.6, 0.8, 0.5];
    assert!((pearson(&r, &s).unwrap() - pearson_oracle(&r, &s)).abs() <= 1e-12);
    let affine: Vec<f64> = r.iter().map(|v| 2.0 * v + 0.1).collect();
    assert!((pearson(&r, &affine).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn mmrv_exhaustive_small_grid() {
    // full grid, no reductions, for n ≤ 3
    for n in 2..=3usize {
        let total = 11usize.pow(2 * n as u32);
        for code in 0..total {
            let mut c = code;
            let mut v = vec![0.0; 2 * n];
            for x in v.iter_mut() {
                *x = (c % 11) as f64 * 0.1;
                c /= 11;
            }
            let (r, s) = v.split_at(n);
            assert!((mmrv(r, s).unwrap() - mmrv_oracle(r, s)).abs() <= 1e-12);
        }
    }
    for n in 4..=5 {
        let (count, worst) = exhaustive_mmrv(n, |r, s| mmrv(r, s).unwrap());
        assert!(count > 0 && worst <= 1e-12);
    }
}

fn vecs(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    n.prop_flat_map(|n| (proptest::collection::vec(0.0f64..=1.0, n), proptest::collection::vec(0.0f64..=1.0, n)))
}

proptest! {
    #[test]
    fn mmrv_is_bounded((r, s) in vecs(2..10)) {
        let v = mmrv(&r, &s).unwrap();
        let spread = r.iter().cloned().fold(f64::MIN, f64::max) - r.iter().cloned().fold(f64::MAX, f64::min);
        prop_assert!(v >= 0.0 && v <= spread + 1e-15);
    }

    #[test]
    fn mmrv_ignores_monotone_maps_of_sim((r, s) in vecs(2..10), a in 0.1f64..5.0, b in -1.0f64..1.0, p in 0.2f64..4.0) {
        let f: Vec<f64> = s.iter().map(|x| a * x.powf(p) + b).collect();
        prop_assert_eq!(mmrv(&r, &s).unwrap(), mmrv(&r, &f).unwrap());
    }

    #[test]
    fn mmrv_is_permutation_invariant((r, s) in vecs(2..9), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..r.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.gen_range(0..=i));
        }
        let rp: Vec<f64> = idx.iter().map(|&i| r[i]).collect();
        let sp: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
        prop_assert!((mmrv(&r, &s).unwrap() - mmrv(&rp, &sp).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn pearson_affine_behaviour((r, s) in vecs(3..10), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        prop_assume!(r.iter().any(|v| *v != r[0]) && s.iter().any(|v| *v != s[0]));
        let base = pearson(&r, &s).unwrap();
        prop_assert!((-1.0..=1.0).contains(&base));
        let up: Vec<f64> = s.iter().map(|x| a * x + b).collect();
        let down: Vec<f64> = s.iter().map(|x| -a * x + b).collect();
        prop_assert!((pearson(&r, &up).unwrap() - base).abs() < 1e-12);
        prop_assert!((pearson(&r, &down).unwrap() + base).abs() < 1e-12);
        let rr: Vec<f64> = r.iter().map(|x| a * x + b).collect();
        prop_assert!((pearson(&rr, &s).unwrap() - base).abs() < 1e-12);
    }
}

fn random_table(rng: &mut ChaCha8Rng, policies: usize, envs: usize) -> ScoreTable {
    let mut rows = Vec::new();
    for p in 0..policies {
        for e in 0..envs {
            for source in [Source::Real, Source::Sim] {
                rows.push(ScoreRow {
                    policy: format!("p{p}"),
                    environment: format!("e{e}"),
                    source,
                    score: (rng.gen_range(0..=20) as f64) / 20.0,
                    episodes: 20,
                });
            }
        }
    }
    ScoreTable::from_rows("random", &rows).unwrap()
}

#[test]
fn aggregate_is_pearson_of_row_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let t = random_table(&mut rng, 4, 3);
        let rep = build_report(&t, 50).unwrap();
        let means = |g: &Vec<Vec<Option<Cell>>>| -> Vec<f64> {
            g.iter().map(|row| row.iter().map(|c| c.unwrap().score).sum::<f64>() / 3.0).collect()
        };
        let (r, s) = (means(&t.real), means(&t.sim));
        match rep.aggregate.pearson {
            Some(v) => assert!((v - pearson_oracle(&r, &s)).abs() <= 1e-12),
            None => assert!(r.iter().all(|v| *v == r[0]) || s.iter().all(|v| *v == s[0])),
        }
        assert!((rep.aggregate.mmrv.unwrap() - mmrv_oracle(&r, &s)).abs() <= 1e-12);
        for (e, m) in rep.environments.iter().enumerate() {
            let r: Vec<f64> = t.real.iter().map(|row| row[e].unwrap().score).collect();
            let s: Vec<f64> = t.sim.iter().map(|row| row[e].unwrap().score).collect();
            assert!((m.mmrv.unwrap() - mmrv_oracle(&r, &s)).abs() <= 1e-12);
        }
    }
}

#[test]
fn single_environment_aggregate_equals_column() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = random_table(&mut rng, 6, 1);
    let rep = build_report(&t, 100).unwrap();
    let (a, e) = (&rep.aggregate, &rep.environments[0]);
    assert_eq!(a.pearson, e.pearson);
    assert_eq!(a.mmrv, e.mmrv);
    assert_eq!(a.pearson_ci, e.pearson_ci);
    assert_eq!(a.misranked, e.misranked);
}

#[test]
fn bootstrap_is_seeded_and_brackets_the_estimate() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rows: Vec<ScoreRow> = (0..8)
        .flat_map(|p| {
            let real: f64 = p as f64 / 8.0;
            let sim = (real + rng.gen_range(-0.1..0.1)).clamp(0.0, 1.0);
            [(Source::Real, real), (Source::Sim, sim)].map(|(source, score)| ScoreRow {
                policy: format!("p{p}"),
                environment: "e".into(),
                source,
                score,
                episodes: 10,
            })
        })
        .collect();
    let t = ScoreTable::from_rows("x", &rows).unwrap();
    let a = build_report(&t, DEFAULT_BOOTSTRAP).unwrap();
    let b = build_report(&t, DEFAULT_BOOTSTRAP).unwrap();
    assert_eq!(a, b);
    let [lo, hi] = a.aggregate.pearson_ci.unwrap();
    let r = a.aggregate.pearson.unwrap();
    assert!(lo <= r && r <= hi && hi <= 1.0 && lo >= -1.0);
}

#[test]
fn misranked_pairs_sorted_by_severity() {
    let t = read_scores(
        "t",
        "policy,environment,source,score,episodes
a,e,real,0.1,1
a,e,sim,0.9,1
b,e,real,0.5,1
b,e,sim,0.2,1
c,e,real,0.9,1
c,e,sim,0.5,1
",
    )
    .unwrap();
    let rep = build_report(&t, 0).unwrap();
    let sev: Vec<f64> = rep.aggregate.misranked.iter().map(|p| p.severity).collect();
    assert_eq!(rep.aggregate.misranked[0].better, "c");
    assert_eq!(rep.aggregate.misranked[0].worse, "a");
    assert!(sev.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(sev.len(), 2);
    assert_eq!(rep.aggregate.pearson_ci, None);
}

#[test]
fn report_files_and_ingest_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("real.csv");
    let b = dir.path().join("sim.csv");
    std::fs::write(&a, "policy,environment,source,score,episodes\nx,e,real,0.2,4\ny,e,real,0.6,4\n").unwrap();
    std::fs::write(&b, "policy,environment,source,score,episodes\nx,e,sim,0.3,4\ny,e,sim,0.7,4\ny,e,real,0.6,4\n").unwrap();
    let t = ingest_scores(&[&a, &b]).unwrap();
    assert!(t.is_complete());
    let rep = build_report(&t, 10).unwrap();
    let out = dir.path().join("report");
    write_report(&out, &rep).unwrap();
    let plot = std::fs::read_to_string(out.join("plot.csv")).unwrap();
    assert_eq!(plot.lines().count(), 1 + 2 + 2);
    let json: FaithfulnessReport = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json, rep);
    std::fs::write(&b, "policy,environment,source,score,episodes\nx,e,sim,0.3,4\ny,e,real,0.61,4\n").unwrap();
    let err = ingest_scores(&[&a, &b]).unwrap_err();
    assert!(matches!(err, MetricsError::Conflict { row: 3, .. }), "{err}");
}

#[test]
fn suites_convert_to_tables() {
    let suite = SuiteResult {
        policies: vec!["a".into(), "b".into()],
        scenes: vec!["s".into()],
        scores: vec![vec![Some(0.25)], vec![None]],
        episodes: vec![vec![4], vec![0]],
        infrastructure_failures: vec![vec![0], vec![4]],
        episode_scores: vec![vec![vec![Some(0.25); 4]], vec![vec![None; 4]]],
    };
    let rows = suite_rows(&suite, Source::Sim);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].episodes, 4);
    let t = ScoreTable::from_rows("suite", &rows).unwrap();
    assert_eq!(t.missing().len(), 1);
}
