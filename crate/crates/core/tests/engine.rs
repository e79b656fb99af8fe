use gossipsim_core::engine::*;
use gossipsim_core::protocols::{step, RoundScratch};
use gossipsim_core::{CallDistribution, ProtocolSpec, SimState};
use proptest::prelude::*;
use rand::SeedableRng;

fn mean_time(spec: &ProtocolSpec, n: usize, trials: u64, seed: u64) -> (f64, f64) {
    let times = run_batch_map(
        spec,
        n,
        trials,
        seed,
        StoppingPolicy::UntilAllInformed,
        None,
        |r| r.spreading_time as f64,
    )
    .unwrap();
    let m = times.len() as f64;
    let mean = times.iter().sum::<f64>() / m;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

#[test]
fn two_node_geometric_means() {
    for (spec, want) in [
        (ProtocolSpec::pull(), 2.0),
        (ProtocolSpec::push(), 2.0),
        (ProtocolSpec::push_pull(), 4.0 / 3.0),
    ] {
        let (mean, se) = mean_time(&spec, 2, 100_000, 3);
        assert!(
            (mean - want).abs() <= 3.0 * se,
            "{}: {mean} vs {want}",
            spec.label()
        );
    }
}

#[test]
fn single_trial_batch_equals_trial() {
    let spec = ProtocolSpec::push_pull();
    let batch = run_batch(&spec, 500, 1, 77, StoppingPolicy::UntilAllInformed, None).unwrap();
    let seed = gossipsim_core::derive_trial_seed(77, 0);
    let single = run_trial(&spec, 500, StoppingPolicy::UntilAllInformed, seed).unwrap();
    assert_eq!(batch, vec![single]);
}

#[test]
fn batches_reproducible_and_schedule_free() {
    let calls = CallDistribution::parse("uniform:0..2").unwrap();
    for spec in [
        ProtocolSpec::push(),
        ProtocolSpec::r_push_pull(calls),
        ProtocolSpec::single_call_push_pull(),
    ] {
        let a = run_batch(&spec, 300, 40, 5, StoppingPolicy::UntilAllInformed, Some(1)).unwrap();
        let b = run_batch(&spec, 300, 40, 5, StoppingPolicy::UntilAllInformed, Some(1)).unwrap();
        let c = run_batch(&spec, 300, 40, 5, StoppingPolicy::UntilAllInformed, Some(8)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        let other =
            run_batch(&spec, 300, 40, 6, StoppingPolicy::UntilAllInformed, Some(1)).unwrap();
        assert_ne!(a, other);
    }
}

#[test]
fn first_passage_conventions() {
    let spec = ProtocolSpec::push();
    let r = run_trial(&spec, 1024, StoppingPolicy::UntilAllInformed, 9).unwrap();
    let trace = r.trace.as_ref().unwrap();
    assert_eq!(trace[0], 1);
    assert_eq!(measure_first_passage(trace, 1, 1), Some(0));
    assert_eq!(
        measure_first_passage(trace, 1, 1024),
        Some(r.spreading_time)
    );
    // independent scan
    let mut scan = None;
    for (t, &c) in trace.iter().enumerate() {
        if c >= 512 {
            scan = Some(t as u64);
            break;
        }
    }
    assert_eq!(measure_first_passage(trace, 1, 512), scan);
    assert_eq!(measure_first_passage(trace, 1, 2000), None);
}

#[test]
fn counters_add_up_over_rounds() {
    let spec = ProtocolSpec::single_call_push_pull();
    let n = 700;
    let seed = 31;
    let r = run_trial(&spec, n, StoppingPolicy::UntilAllInformed, seed).unwrap();
    let mut rng = TrialRng::seed_from_u64(seed);
    let mut state = SimState::new(n, 0);
    let mut scratch = RoundScratch::new(n);
    let (mut calls, mut tx) = (0, 0);
    let mut trace = vec![1u32];
    while !state.all_informed() {
        let out = step(&spec, &state, true, &mut scratch, &mut rng);
        calls += out.calls;
        tx += out.transmissions;
        state.apply(&out);
        trace.push(state.informed_count() as u32);
    }
    assert_eq!(r.calls_placed, calls);
    assert_eq!(r.rumor_transmissions, tx);
    assert_eq!(r.spreading_time, state.round);
    assert_eq!(r.trace.unwrap(), trace);
}

#[test]
fn policy_validation() {
    assert!(matches!(
        run_trial(&ProtocolSpec::pull(), 10, StoppingPolicy::AgeLimit(3), 0),
        Err(EngineError::InvalidPolicy(_))
    ));
    assert!(matches!(
        run_trial(&ProtocolSpec::push(), 10, StoppingPolicy::RoundCap(0), 0),
        Err(EngineError::InvalidPolicy(_))
    ));
    assert!(matches!(
        run_trial(
            &ProtocolSpec::push(),
            1,
            StoppingPolicy::UntilAllInformed,
            0
        ),
        Err(EngineError::TooFewNodes(1))
    ));
    assert!(matches!(
        run_trial(
            &ProtocolSpec::dynamic_gnp_push(50.0),
            10,
            StoppingPolicy::UntilAllInformed,
            0
        ),
        Err(EngineError::EdgeDensityTooLarge { .. })
    ));
    assert!(!policy_supported(
        gossipsim_core::ProtocolKind::SingleCallPull,
        StoppingPolicy::AgeLimit(1)
    ));
}

#[test]
fn round_cap_keeps_partial_result() {
    let err = run_trial(&ProtocolSpec::push(), 1024, StoppingPolicy::RoundCap(3), 1).unwrap_err();
    match err {
        EngineError::RoundCapExceeded {
            cap,
            informed,
            partial,
            ..
        } => {
            assert_eq!(cap, 3);
            assert_eq!(partial.spreading_time, 3);
            assert_eq!(*partial.trace.unwrap().last().unwrap() as usize, informed);
        }
        e => panic!("{e}"),
    }
}

#[test]
fn batch_errors_carry_index() {
    let silent = ProtocolSpec::r_push(CallDistribution::constant(0));
    let err = run_batch(&silent, 10, 3, 0, StoppingPolicy::RoundCap(5), Some(1)).unwrap_err();
    assert!(matches!(err, EngineError::Trial { index: 0, .. }), "{err}");
}

#[test]
fn age_limited_push_pull_finishes_in_time() {
    let n = 1 << 12;
    let limit = push_pull_age_limit(n);
    let times = run_batch_map(
        &ProtocolSpec::push_pull(),
        n,
        300,
        8,
        StoppingPolicy::AgeLimit(limit),
        None,
        |r| r.spreading_time,
    )
    .unwrap();
    let in_time = times.iter().filter(|&&t| t <= limit).count();
    assert!(in_time as f64 >= 0.99 * times.len() as f64, "{in_time}");
}

#[test]
fn age_limit_stops_pushing() {
    // push-only protocols cannot progress after the limit
    let err = run_trial(&ProtocolSpec::push(), 4096, StoppingPolicy::AgeLimit(2), 4);
    assert!(matches!(err, Err(EngineError::RoundCapExceeded { .. })));
}

#[test]
fn defaults() {
    assert_eq!(
        default_round_cap(1024),
        (64.0 * (10.0 + 1024f64.ln())).ceil() as u64
    );
    assert_eq!(push_pull_age_limit(1 << 16), 11 + 3 * 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trials_reproducible(seed: u64, n in 2usize..400) {
        let spec = ProtocolSpec::push_pull().with_success_prob(0.7);
        let a = run_trial(&spec, n, StoppingPolicy::UntilAllInformed, seed).unwrap();
        let b = run_trial(&spec, n, StoppingPolicy::UntilAllInformed, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let trace = a.trace.unwrap();
        prop_assert!(trace.windows(2).all(|w| w[1] >= w[0]));
        prop_assert_eq!(*trace.last().unwrap() as usize, n);
    }
}
