use gossipsim_core::analytic::success_probability;
use gossipsim_core::engine::TrialRng;
use gossipsim_core::model::NEVER;
use gossipsim_core::oracle::{transition_push, transition_push_pull, TransitionDistribution};
use gossipsim_core::protocols::*;
use gossipsim_core::{CallDistribution, ProtocolSpec, RoundOutcome, SimState};
use proptest::prelude::*;
use rand::SeedableRng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Per-node informing counts over `replays` rounds from nodes 0..k informed.
fn node_counts(spec: &ProtocolSpec, n: usize, k: usize, replays: u64, seed: u64) -> Vec<u64> {
    let state = SimState::with_first_informed(n, k);
    let mut scratch = RoundScratch::new(n);
    let mut rng = TrialRng::seed_from_u64(seed);
    let mut counts = vec![0u64; n];
    for _ in 0..replays {
        for v in step(spec, &state, true, &mut scratch, &mut rng).newly_informed {
            counts[v as usize] += 1;
        }
    }
    counts
}

/// Per-node frequency pooled over all uninformed nodes, with its binomial standard error.
fn pooled_frequency(
    spec: &ProtocolSpec,
    n: usize,
    k: usize,
    replays: u64,
    seed: u64,
) -> (f64, f64) {
    let counts = node_counts(spec, n, k, replays, seed);
    let trials = replays as f64 * (n - k) as f64;
    let hits: u64 = counts[k..].iter().sum();
    let f = hits as f64 / trials;
    (f, (f * (1.0 - f) / trials).sqrt())
}

fn assert_frequency(spec: &ProtocolSpec, n: usize, k: usize, want: f64, replays: u64, seed: u64) {
    let (f, _) = pooled_frequency(spec, n, k, replays, seed);
    let trials = replays as f64 * (n - k) as f64;
    let se = (want * (1.0 - want) / trials).sqrt();
    assert!(
        (f - want).abs() <= 4.0 * se,
        "{} n={n} k={k}: {f} vs {want} (se {se})",
        spec.label()
    );
}

fn count_law(spec: &ProtocolSpec, n: usize, k: usize, replays: u64, seed: u64) -> Vec<u64> {
    let state = SimState::with_first_informed(n, k);
    let mut scratch = RoundScratch::new(n);
    let mut rng = TrialRng::seed_from_u64(seed);
    let mut counts = vec![0u64; n - k + 1];
    for _ in 0..replays {
        counts[step(spec, &state, true, &mut scratch, &mut rng)
            .newly_informed
            .len()] += 1;
    }
    counts
}

fn chi_square_p(counts: &[u64], probs: &[f64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0;
    for (&c, &p) in counts.iter().zip(probs) {
        let e = p * total as f64;
        if e > 0.0 {
            stat += (c as f64 - e).powi(2) / e;
            cells += 1;
        } else {
            assert_eq!(c, 0, "count in an impossible cell");
        }
    }
    ChiSquared::new((cells - 1).max(1) as f64).unwrap().sf(stat)
}

fn matches_law(spec: &ProtocolSpec, law: &TransitionDistribution, seed: u64) {
    let counts = count_law(spec, law.n, law.k, 200_000, seed);
    let p = chi_square_p(&counts, &law.probs);
    assert!(p > 1e-3, "{}: p = {p}, counts {counts:?}", spec.label());
}

// ---------- classic protocols ----------

#[test]
fn push_examples() {
    assert_frequency(&ProtocolSpec::push(), 2, 1, 0.5, 100_000, 1);
    assert_frequency(&ProtocolSpec::push(), 10, 1, 0.1, 100_000, 2);
    let counts = count_law(&ProtocolSpec::push(), 3, 2, 200_000, 3);
    assert!(
        chi_square_p(&counts, &[4.0 / 9.0, 5.0 / 9.0]) > 1e-3,
        "{counts:?}"
    );
}

#[test]
fn pull_examples() {
    assert_frequency(&ProtocolSpec::pull(), 10, 3, 0.3, 100_000, 4);
    let counts = count_law(&ProtocolSpec::pull(), 4, 2, 200_000, 5);
    assert!(
        chi_square_p(&counts, &[0.25, 0.5, 0.25]) > 1e-3,
        "{counts:?}"
    );
    assert_frequency(
        &ProtocolSpec::pull().with_success_prob(0.5),
        10,
        4,
        0.2,
        100_000,
        6,
    );
}

#[test]
fn push_pull_examples() {
    assert_frequency(&ProtocolSpec::push_pull(), 2, 1, 0.75, 100_000, 7);
    assert_frequency(&ProtocolSpec::push_pull(), 10, 1, 0.19, 100_000, 8);
    let want = 1.0 - 0.75 * 0.95f64.powi(5);
    assert!((want - 0.4196).abs() < 1e-4);
    assert_frequency(
        &ProtocolSpec::push_pull().with_success_prob(0.5),
        10,
        5,
        want,
        100_000,
        9,
    );
}

#[test]
fn lossy_push_matches_exact_law() {
    let law = transition_push(9, 4, 0.6).unwrap();
    matches_law(&ProtocolSpec::push().with_success_prob(0.6), &law, 10);
    let law = transition_push_pull(9, 4, 0.6).unwrap();
    matches_law(&ProtocolSpec::push_pull().with_success_prob(0.6), &law, 11);
}

#[test]
fn excluded_self_frequencies() {
    for spec in [
        ProtocolSpec::push(),
        ProtocolSpec::pull(),
        ProtocolSpec::push_pull(),
    ] {
        let spec = spec.with_include_self(false);
        let want = success_probability(&spec, 12, 3).unwrap().value;
        assert_frequency(&spec, 12, 3, want, 100_000, 12);
    }
}

// ---------- dynamic graph ----------

#[test]
fn sparse_graph_informs_nobody() {
    let spec = ProtocolSpec::dynamic_gnp_push(1e-9);
    let counts = node_counts(&spec, 50, 1, 10_000, 13);
    assert!(counts.iter().all(|&c| c == 0));
}

#[test]
fn two_node_graph() {
    for a in [0.5, 1.0, 1.5] {
        assert_frequency(
            &ProtocolSpec::dynamic_gnp_push(a),
            2,
            1,
            a / 2.0,
            100_000,
            14,
        );
    }
}

#[test]
fn lone_informed_node_calls_a_neighbor() {
    // with one informed node, somebody learns the rumor iff that node has a neighbor
    let (n, a) = (1000usize, 1.0);
    let spec = ProtocolSpec::dynamic_gnp_push(a);
    let replays = 1_000_000;
    let (f, _) = pooled_frequency(&spec, n, 1, replays, 15);
    let has_neighbor = 1.0 - (1.0 - a / n as f64).powi(n as i32 - 1);
    let per_node = has_neighbor / (n - 1) as f64;
    let se = (per_node / (replays as f64 * (n - 1) as f64)).sqrt();
    assert!((f - per_node).abs() <= 4.0 * se, "{f} vs {per_node}");
    // conditioned on the edge being present the call lands with probability about (1 - e^-a)/a
    let conditional = f / (a / n as f64);
    assert!((conditional - 0.632).abs() < 0.01, "{conditional}");
}

#[test]
fn dynamic_graph_matches_asymptotic_rate() {
    let n = 4000;
    let spec = ProtocolSpec::dynamic_gnp_push(2.0);
    let want = success_probability(&spec, n, 40).unwrap();
    let (f, se) = pooled_frequency(&spec, n, 40, 20_000, 16);
    assert!(
        (f - want.value).abs() <= 4.0 * se + want.error_scale.unwrap() * 10.0,
        "{f} vs {}",
        want.value
    );
}

// ---------- R-protocols ----------

#[test]
fn r_push_one_call_is_push() {
    let spec = ProtocolSpec::r_push(CallDistribution::constant(1));
    matches_law(&spec, &transition_push(8, 3, 1.0).unwrap(), 17);
}

#[test]
fn r_push_pull_one_call_is_push_pull() {
    let spec = ProtocolSpec::r_push_pull(CallDistribution::constant(1));
    matches_law(&spec, &transition_push_pull(8, 3, 1.0).unwrap(), 18);
}

#[test]
fn silent_nodes_inform_nobody() {
    for spec in [
        ProtocolSpec::r_push(CallDistribution::constant(0)),
        ProtocolSpec::r_push_pull(CallDistribution::constant(0)),
    ] {
        assert!(node_counts(&spec, 20, 5, 1000, 19).iter().all(|&c| c == 0));
    }
}

#[test]
fn r_examples() {
    assert_frequency(
        &ProtocolSpec::r_push(CallDistribution::constant(2)),
        4,
        1,
        0.5,
        100_000,
        20,
    );
    assert_frequency(
        &ProtocolSpec::r_push_pull(CallDistribution::constant(1)),
        3,
        1,
        5.0 / 9.0,
        100_000,
        21,
    );
}

#[test]
fn r_formulas_match_frequencies() {
    let calls = CallDistribution::parse("0.2,0.3,0.1,0.4").unwrap();
    for spec in [
        ProtocolSpec::r_push(calls.clone()),
        ProtocolSpec::r_push_pull(calls),
    ] {
        for include_self in [true, false] {
            let spec = spec.clone().with_include_self(include_self);
            let want = success_probability(&spec, 30, 7).unwrap().value;
            assert_frequency(&spec, 30, 7, want, 50_000, 22);
        }
    }
}

#[test]
fn oversized_call_count_clamped() {
    // more calls than nodes: every other node is called
    let spec = ProtocolSpec::r_push(CallDistribution::constant(10));
    let counts = node_counts(&spec, 5, 1, 100, 23);
    assert!(counts[1..].iter().all(|&c| c == 100));
}

// ---------- ordered calls ----------

#[test]
fn single_call_pull_examples() {
    let spec = ProtocolSpec::single_call_pull();
    for n in [3, 7, 20] {
        assert_frequency(&spec, n, n - 1, (n - 1) as f64 / n as f64, 100_000, 24);
    }
    assert_frequency(&spec, 2, 1, 0.5, 100_000, 25);
    assert_frequency(&spec, 4, 2, 7.0 / 16.0, 100_000, 26);
}

#[test]
fn single_call_push_pull_two_nodes() {
    // enumeration: targets (t0, t1) uniform in {0,1}^2 and two equally likely orders.
    // node 1 learns via 0 -> 1 when that call is answered, or via 1 -> 0 likewise.
    let mut informed = 0.0;
    for t0 in 0..2 {
        for t1 in 0..2 {
            for zero_first in [true, false] {
                let answered = |caller: usize, target: usize| {
                    let rival = if caller == 0 { t1 } else { t0 };
                    rival != target || (caller == 0) == zero_first
                };
                let push = t0 == 1 && answered(0, 1);
                let pull = t1 == 0 && answered(1, 0);
                if push || pull {
                    informed += 1.0 / 8.0;
                }
            }
        }
    }
    assert_eq!(informed, 0.5);
    assert_frequency(
        &ProtocolSpec::single_call_push_pull(),
        2,
        1,
        informed,
        100_000,
        27,
    );
}

#[test]
fn single_call_push_pull_large_n() {
    let n = 100_000;
    let spec = ProtocolSpec::single_call_push_pull();
    let (f, _) = pooled_frequency(&spec, n, n / 2, 20, 28);
    let h = 1.0 - (-1.0f64).exp();
    assert!((f - (h - h * h / 4.0)).abs() < 0.01, "{f}");
}

#[test]
fn transition_extremes() {
    let n = 40;
    let mut state = SimState::with_first_informed(n, 7);
    state.round = 3;
    let mut scratch = RoundScratch::new(n);
    let run = |f: &dyn Fn(&mut RoundScratch, &mut TrialRng) -> RoundOutcome,
               scratch: &mut RoundScratch| {
        let mut rng = TrialRng::seed_from_u64(29);
        (0..50).map(|_| f(scratch, &mut rng)).collect::<Vec<_>>()
    };
    let never = run(
        &|s, r| round_transition_push_pull(&state, NEVER, true, s, r),
        &mut scratch,
    );
    let pp = run(
        &|s, r| round_single_call_push_pull(&state, true, s, r),
        &mut scratch,
    );
    assert_eq!(never, pp);
    let zero = run(
        &|s, r| round_transition_push_pull(&state, 0, true, s, r),
        &mut scratch,
    );
    let pull = run(
        &|s, r| round_single_call_pull(&state, true, s, r),
        &mut scratch,
    );
    assert_eq!(zero, pull);
}

#[test]
fn single_call_pull_below_pull() {
    for n in 2..=512 {
        for k in 1..n {
            let single = success_probability(&ProtocolSpec::single_call_pull(), n, k)
                .unwrap()
                .value;
            let pull = success_probability(&ProtocolSpec::pull(), n, k)
                .unwrap()
                .value;
            assert!(single <= pull * (1.0 + 1e-12), "n={n} k={k}");
        }
    }
}

#[test]
fn p_k_agreement_for_exact_formulas() {
    let calls = CallDistribution::parse("uniform:0..2").unwrap();
    let specs = [
        ProtocolSpec::push(),
        ProtocolSpec::push().with_success_prob(0.5),
        ProtocolSpec::pull(),
        ProtocolSpec::pull().with_success_prob(0.5),
        ProtocolSpec::push_pull(),
        ProtocolSpec::push_pull().with_success_prob(0.5),
        ProtocolSpec::r_push(calls),
        ProtocolSpec::single_call_pull(),
    ];
    for (i, spec) in specs.iter().enumerate() {
        for k in [1, 16, 40] {
            let want = success_probability(spec, 64, k).unwrap().value;
            assert_frequency(spec, 64, k, want, 20_000, 30 + i as u64);
        }
    }
}

fn all_specs() -> Vec<ProtocolSpec> {
    let calls = CallDistribution::parse("uniform:0..2").unwrap();
    vec![
        ProtocolSpec::push(),
        ProtocolSpec::pull().with_success_prob(0.5),
        ProtocolSpec::push_pull(),
        ProtocolSpec::dynamic_gnp_push(1.0),
        ProtocolSpec::r_push(calls.clone()),
        ProtocolSpec::r_push_pull(calls),
        ProtocolSpec::single_call_pull(),
        ProtocolSpec::single_call_push_pull(),
        ProtocolSpec::transition_time_push_pull(Some(2)),
    ]
}

#[test]
fn homogeneous_across_nodes() {
    let (n, k) = (16, 5);
    for (i, spec) in all_specs().iter().enumerate() {
        let counts = node_counts(spec, n, k, 100_000, 40 + i as u64);
        let uninformed = &counts[k..];
        let probs = vec![1.0 / (n - k) as f64; n - k];
        let p = chi_square_p(uninformed, &probs);
        assert!(p > 1e-3, "{}: p = {p} {uninformed:?}", spec.label());
        assert!(counts[..k].iter().all(|&c| c == 0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rounds_only_add_informed_nodes(idx in 0usize..9, n in 2usize..60, frac in 0.0f64..1.0, seed: u64) {
        let spec = &all_specs()[idx];
        let k = 1 + ((n - 1) as f64 * frac) as usize % (n - 1);
        let mut state = SimState::with_first_informed(n, k);
        let mut scratch = RoundScratch::new(n);
        let mut rng = TrialRng::seed_from_u64(seed);
        for _ in 0..5 {
            let before: Vec<bool> = state.flags().to_vec();
            let out = step(spec, &state, true, &mut scratch, &mut rng);
            let mut seen = std::collections::HashSet::new();
            for &v in &out.newly_informed {
                prop_assert!(!before[v as usize]);
                prop_assert!(seen.insert(v));
            }
            prop_assert!(out.transmissions <= out.calls || spec.kind == gossipsim_core::ProtocolKind::DynamicGnpPush);
            state.apply(&out);
            for v in 0..n {
                prop_assert!(!before[v] || state.is_informed(v));
            }
            if state.all_informed() {
                break;
            }
        }
    }

    #[test]
    fn ordered_calls_answer_lowest_order(n in 1usize..40, callers in 1usize..40, include_self: bool, seed: u64) {
        prop_assume!(include_self || n >= 2);
        let callers = callers.min(n);
        let mut table = OrderedCallTable::default();
        let mut rng = TrialRng::seed_from_u64(seed);
        table.draw(n, 0..callers as u32, include_self, &mut rng);
        let mut orders = table.orders.clone();
        orders.sort_unstable();
        prop_assert_eq!(orders, (0..callers as u32).collect::<Vec<_>>());
        let accepted = table.accepted(n);
        for i in 0..callers {
            let t = table.targets[i];
            let best = (0..callers)
                .filter(|&j| table.targets[j] == t)
                .min_by_key(|&j| table.orders[j])
                .unwrap();
            prop_assert_eq!(accepted[i], best == i);
            if !include_self {
                prop_assert_ne!(t as usize, table.callers[i] as usize);
            }
        }
    }
}
