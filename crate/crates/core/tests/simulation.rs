mod common;

use common::*;
use rand::Rng;
use winodds::sim::*;
use winodds::*;

fn composite_fraction(ds: &Dataset) -> f64 {
    ds.records().iter().filter(|r| r.outcome.has_event()).count() as f64 / ds.len() as f64
}

#[test]
fn exchangeable_arms_give_half() {
    let settings = TrialSettings {
        effect: 0.0,
        weights: vec![0.0; 10],
        ..TrialSettings::new(5000, Scenario::A)
    };
    let ds = simulate_trial(&settings, 3);
    let nu = direct_mpi(&pairwise_tally(&ds));
    assert!((nu - 0.5).abs() < 0.03, "{nu}");
}

#[test]
fn event_fraction_is_hit_up_to_discreteness() {
    for (n, q, seed) in [(500, 0.35, 1), (1000, 0.35, 2), (333, 0.2, 3), (1500, 0.6, 4)] {
        let settings = TrialSettings {
            event_fraction: q,
            ..TrialSettings::new(n, Scenario::B)
        };
        let f = composite_fraction(&simulate_trial(&settings, seed));
        assert!((f - q).abs() <= 1.0 / n as f64 + 1e-12, "n={n} q={q}: {f}");
    }
}

#[test]
fn same_seed_same_trial() {
    let settings = TrialSettings::new(300, Scenario::C);
    assert_eq!(simulate_trial(&settings, 9), simulate_trial(&settings, 9));
    assert_ne!(simulate_replicate(&settings, 9, 0), simulate_replicate(&settings, 9, 1));
    assert_ne!(simulate_trial(&settings, 9), simulate_trial(&settings, 10));
}

#[test]
fn simulated_records_are_consistent() {
    let ds = simulate_trial(&TrialSettings::new(2000, Scenario::A), 5);
    assert_eq!(ds.p(), 10);
    let t_cens = ds.records().iter().map(|r| r.outcome.u1).fold(0.0, f64::max);
    for r in ds.records() {
        let o = &r.outcome;
        assert!(o.u2 <= o.u1);
        assert!(!o.d2 || o.u2 < o.u1);
        assert!(o.d1 || o.u1 == t_cens);
    }
}

#[test]
fn null_flip_keeps_outcomes_and_covariates() {
    let base = TrialSettings::new(400, Scenario::A);
    for mode in [FlipMode::Redraw, FlipMode::Permute] {
        let flipped = TrialSettings {
            null_flip: true,
            flip_mode: mode,
            ..base.clone()
        };
        let a = simulate_trial(&base, 21);
        let b = simulate_trial(&flipped, 21);
        for (x, y) in a.records().iter().zip(b.records()) {
            assert_eq!(x.outcome, y.outcome);
            assert_eq!(x.covariates, y.covariates);
        }
        if mode == FlipMode::Permute {
            assert_eq!(a.n_treated(), b.n_treated());
        }
        assert_ne!(
            a.records().iter().map(|r| r.arm).collect::<Vec<_>>(),
            b.records().iter().map(|r| r.arm).collect::<Vec<_>>()
        );
    }
}

fn ks_distance(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

// Censored subjects form an atom at each sample's own T_cens, so times are
// compared on the T_cens scale where both atoms sit at 1.
#[test]
fn pooled_outcomes_match_across_scenarios() {
    let u1 = |s: Scenario, seed: u64| -> Vec<f64> {
        let ds = simulate_trial(&TrialSettings::new(5000, s), seed);
        let t_cens = ds.records().iter().map(|r| r.outcome.u1).fold(0.0, f64::max);
        ds.records().iter().map(|r| r.outcome.u1 / t_cens).collect()
    };
    let d = ks_distance(&mut u1(Scenario::A, 1), &mut u1(Scenario::C, 2));
    assert!(d < 0.05, "KS distance {d}");
}

#[test]
fn empirical_quantile_of_uniform_sample() {
    let mut r = rng(8);
    let xs: Vec<f64> = (0..100_000).map(|_| r.random::<f64>()).collect();
    let q = empirical_quantile(&xs, 0.35).unwrap();
    assert!((q - 0.35).abs() < 0.01);
    let mut sorted = xs.clone();
    sorted.sort_by(f64::total_cmp);
    assert_eq!(q, sorted[35_000 - 1]);
    assert_eq!(empirical_quantile(&xs, 1.0 - 1e-12).unwrap(), sorted[99_999]);
}

#[test]
fn incidence_curves() {
    let ds = simulate_trial(&TrialSettings::new(800, Scenario::A), 4);
    let grid = incidence_grid(&ds, 51);
    let curve = emit_incidence_curve(&ds, &grid);
    assert_eq!(curve.len(), 51);
    let first = curve[0];
    assert_eq!((first.composite, first.fatal, first.nonfatal), (0.0, 0.0, 0.0));
    for w in curve.windows(2) {
        assert!(w[0].composite <= w[1].composite);
        assert!(w[0].fatal <= w[1].fatal);
        assert!(w[0].nonfatal <= w[1].nonfatal);
    }
    let last = curve.last().unwrap();
    assert!((last.composite - 0.35).abs() <= 1.0 / 800.0);
    assert!(last.composite <= last.fatal + last.nonfatal);
    assert!(last.composite >= last.fatal.max(last.nonfatal));
}

#[test]
fn single_replicate_gives_zero_one_rates() {
    let mut cfg = StudyConfig::new(200, 1, Scenario::A);
    cfg.adjustment_sets = vec![1, 5, 10];
    let res = run_study(&cfg).unwrap();
    assert_eq!(res.rows.len(), 4);
    assert_eq!(res.rows[0].method, Method::Direct);
    for row in &res.rows {
        assert!(row.rate == 0.0 || row.rate == 1.0);
        assert_eq!(row.mc_halfwidth, 0.0);
    }
}

#[test]
fn studies_are_reproducible_across_workers() {
    let mut cfg = StudyConfig::new(150, 24, Scenario::B);
    cfg.null_flip = true;
    cfg.adjustment_sets = vec![0, 2, 4];
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_study(&cfg).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(8));
    for row in &one.rows {
        let r = row.rate;
        assert!((row.mc_halfwidth - 1.96 * (r * (1.0 - r) / 24.0).sqrt()).abs() < 1e-15);
    }
}

#[test]
fn failing_fits_abort_the_study() {
    // Ten covariates cannot be fitted from four subjects.
    let mut cfg = StudyConfig::new(4, 5, Scenario::A);
    cfg.adjustment_sets = vec![10];
    match run_study(&cfg) {
        Err(StudyError::TooManyFailures {
            adjustment_size,
            failures,
            reps,
        }) => assert_eq!((adjustment_size, failures, reps), (10, 5, 5)),
        other => panic!("expected an abort, got {other:?}"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = StudyConfig::new(100, 10, Scenario::A);
    cfg.alpha = 1.5;
    assert!(matches!(run_study(&cfg), Err(StudyError::InvalidConfig(_))));
}
