use gossipsim_core::analytic::success_probability;
use gossipsim_core::engine::{run_batch_map, StoppingPolicy, TrialRng};
use gossipsim_core::oracle::*;
use gossipsim_core::protocols::{step, RoundScratch};
use gossipsim_core::{ProtocolSpec, SimState};
use rand::SeedableRng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn assert_probs(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len(), "{got:?} vs {want:?}");
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= tol, "{got:?} vs {want:?}");
    }
}

#[test]
fn pull_examples() {
    assert_probs(
        &transition_pull(4, 2, 1.0).unwrap().probs,
        &[0.25, 0.5, 0.25],
        1e-15,
    );
    for n in [2, 5, 17] {
        for p in [1.0, 0.5] {
            let q = (n - 1) as f64 * p / n as f64;
            assert_probs(
                &transition_pull(n, n - 1, p).unwrap().probs,
                &[1.0 - q, q],
                1e-15,
            );
        }
    }
    assert!((transition_pull(10, 3, 1.0).unwrap().marginal() - 0.3).abs() < 1e-15);
}

#[test]
fn push_examples() {
    assert_probs(
        &transition_push(3, 1, 1.0).unwrap().probs,
        &[1.0 / 3.0, 2.0 / 3.0, 0.0],
        1e-15,
    );
    // two calls among three nodes: the uninformed node is hit unless both miss it
    let mut hit = 0;
    for a in 0..3 {
        for b in 0..3 {
            hit += (a == 2 || b == 2) as u32;
        }
    }
    let row = transition_push(3, 2, 1.0).unwrap();
    assert!((row.probs[1] - hit as f64 / 9.0).abs() < 1e-15);
    assert!((row.probs[1] - 5.0 / 9.0).abs() < 1e-15);
}

#[test]
fn push_pull_two_nodes() {
    assert_probs(
        &transition_push_pull(2, 1, 1.0).unwrap().probs,
        &[0.25, 0.75],
        1e-15,
    );
}

fn classic_specs() -> Vec<(
    ProtocolSpec,
    fn(usize, usize, f64) -> Result<TransitionDistribution, OracleError>,
)> {
    let mut out = Vec::new();
    for p in [1.0, 0.5] {
        out.push((
            ProtocolSpec::push().with_success_prob(p),
            transition_push as _,
        ));
        out.push((
            ProtocolSpec::pull().with_success_prob(p),
            transition_pull as _,
        ));
        out.push((
            ProtocolSpec::push_pull().with_success_prob(p),
            transition_push_pull as _,
        ));
    }
    out
}

#[test]
fn rows_are_distributions_with_the_right_marginal() {
    for (spec, law) in classic_specs() {
        for n in 2..=64 {
            for k in 1..n {
                let row = law(n, k, spec.success_prob).unwrap();
                let total: f64 = neumaier_sum(row.probs.iter().copied());
                assert!((total - 1.0).abs() <= 1e-12, "{} n={n} k={k}", spec.label());
                assert!(row.probs.iter().all(|p| (0.0..=1.0).contains(p)));
                let pk = success_probability(&spec, n, k).unwrap().value;
                assert!(
                    (row.marginal() - pk).abs() <= 1e-12,
                    "{} n={n} k={k}: {} vs {pk}",
                    spec.label(),
                    row.marginal()
                );
            }
        }
    }
}

#[test]
fn excluded_self_marginal() {
    for spec in [
        ProtocolSpec::push(),
        ProtocolSpec::pull(),
        ProtocolSpec::push_pull(),
    ] {
        let spec = spec.with_include_self(false).with_success_prob(0.7);
        for n in 2..=40 {
            for k in 1..n {
                let row = transition(&spec, n, k).unwrap();
                let pk = success_probability(&spec, n, k).unwrap().value;
                assert!(
                    (row.marginal() - pk).abs() <= 1e-12,
                    "{} n={n} k={k}",
                    spec.label()
                );
            }
        }
    }
}

#[test]
fn negative_covariance_bounds_variance() {
    // informing events of push and pull are non-positively correlated
    for (spec, law) in classic_specs() {
        for n in [8, 31, 64] {
            for k in 1..n {
                let row = law(n, k, spec.success_prob).unwrap();
                assert!(
                    row.variance() <= row.mean() + 1e-12,
                    "{} n={n} k={k}",
                    spec.label()
                );
            }
        }
    }
}

#[test]
fn float_and_rational_agree_where_stable() {
    for n in [4, 9, 20] {
        for k in 1..n {
            let exact = transition_push_with(n, k, 0.5, Arithmetic::Rational).unwrap();
            match transition_push_with(n, k, 0.5, Arithmetic::Float) {
                Ok(fl) => assert_probs(&fl.probs, &exact.probs, 1e-12),
                Err(OracleError::NumericInstability { .. }) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }
}

#[test]
fn cancellation_detected() {
    let err = transition_push_with(60, 30, 1.0, Arithmetic::Float).unwrap_err();
    assert!(matches!(err, OracleError::NumericInstability { .. }));
    // the automatic mode recovers
    let row = transition_push(60, 30, 1.0).unwrap();
    let exact = transition_push_with(60, 30, 1.0, Arithmetic::Rational).unwrap();
    assert_probs(&row.probs, &exact.probs, 1e-14);
    // beyond the rational range the occupancy recursion takes over
    let big = transition_push(250, 120, 1.0).unwrap();
    let pk = success_probability(&ProtocolSpec::push(), 250, 120)
        .unwrap()
        .value;
    assert!((big.marginal() - pk).abs() < 1e-12);
}

#[test]
fn oracle_limits() {
    assert!(matches!(
        transition_pull(301, 3, 1.0),
        Err(OracleError::Unsupported(_))
    ));
    assert!(transition_pull(10, 0, 1.0).is_err());
    assert!(transition(&ProtocolSpec::single_call_pull(), 10, 3).is_err());
}

#[test]
fn expected_time_small_cases() {
    let pull = exact_expected_time(|k| transition_pull(2, k, 1.0), 2).unwrap();
    assert!((pull - 2.0).abs() < 1e-15);
    let pp = exact_expected_time(|k| transition_push_pull(2, k, 1.0), 2).unwrap();
    assert!((pp - 4.0 / 3.0).abs() < 1e-15);
}

#[test]
fn stuck_chain_reported() {
    let stuck = |k: usize| {
        let mut probs = vec![0.0; 5 - k + 1];
        probs[if k == 3 { 0 } else { 1 }] = 1.0;
        Ok(TransitionDistribution { n: 5, k, probs })
    };
    assert_eq!(
        exact_expected_time(stuck, 5),
        Err(OracleError::AbsorbingTrap { k: 3 })
    );
}

#[test]
fn pull_expected_time_grows_with_n() {
    let times: Vec<f64> = (2..=64)
        .map(|n| exact_expected_time(|k| transition_pull(n, k, 1.0), n).unwrap())
        .collect();
    assert!(times.windows(2).all(|w| w[1] > w[0]), "{times:?}");
}

#[test]
fn time_law_consistent_with_mean() {
    let n = 16;
    let law = exact_time_distribution(|k| transition_push(n, k, 1.0), n, 400).unwrap();
    let total: f64 = law.iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
    let mean: f64 = law.iter().enumerate().map(|(t, p)| t as f64 * p).sum();
    let exact = exact_expected_time(|k| transition_push(n, k, 1.0), n).unwrap();
    assert!((mean - exact).abs() < 1e-9, "{mean} vs {exact}");
}

#[test]
fn push_pull_row_matches_replays() {
    let (n, k) = (4, 2);
    let row = transition_push_pull(n, k, 1.0).unwrap();
    let spec = ProtocolSpec::push_pull();
    let start = SimState::with_first_informed(n, k);
    let mut scratch = RoundScratch::new(n);
    let mut rng = TrialRng::seed_from_u64(11);
    let replays = 1_000_000u32;
    let mut counts = vec![0u64; n - k + 1];
    for _ in 0..replays {
        counts[step(&spec, &start, true, &mut scratch, &mut rng)
            .newly_informed
            .len()] += 1;
    }
    let stat: f64 = counts
        .iter()
        .zip(&row.probs)
        .map(|(&c, &p)| {
            let e = p * replays as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let p_value = ChiSquared::new((n - k) as f64).unwrap().sf(stat);
    assert!(
        p_value > 1e-3,
        "chi2 = {stat}, counts {counts:?}, law {:?}",
        row.probs
    );
}

#[test]
fn push_expected_time_matches_simulation() {
    let n = 32;
    let exact = exact_expected_time(|k| transition_push(n, k, 1.0), n).unwrap();
    let trials = 1_000_000;
    let times = run_batch_map(
        &ProtocolSpec::push(),
        n,
        trials,
        5,
        StoppingPolicy::UntilAllInformed,
        None,
        |r| r.spreading_time as f64,
    )
    .unwrap();
    let mean = times.iter().sum::<f64>() / trials as f64;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
    let se = (var / trials as f64).sqrt();
    assert!(
        (mean - exact).abs() <= 3.0 * se,
        "mean {mean} exact {exact} se {se}"
    );
}
