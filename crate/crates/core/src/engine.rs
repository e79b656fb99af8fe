//! Full trials: repeated rounds from one informed node until everyone knows the rumor.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    derive_trial_seed, validate_spec, ProtocolKind, ProtocolSpec, SimState, SpecError, TrialResult,
};
use crate::protocols::{step, RoundScratch};

/// The generator behind every trial.
pub type TrialRng = Xoshiro256PlusPlus;

/// Environment variable that overrides the worker count of batch runs.
pub const THREADS_ENV: &str = "GOSSIPSIM_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum StoppingPolicy {
    /// Run until all nodes are informed, under the default round cap.
    UntilAllInformed,
    /// Run until all nodes are informed, failing after this many rounds.
    RoundCap(u64),
    /// Informed nodes stop sending once the rumor is this many rounds old.
    AgeLimit(u64),
}

impl Default for StoppingPolicy {
    fn default() -> Self {
        StoppingPolicy::UntilAllInformed
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid protocol: {}", join(.0))]
    InvalidSpec(Vec<SpecError>),
    #[error("invalid stopping policy: {0}")]
    InvalidPolicy(String),
    #[error("need at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("edge density {a} exceeds n = {n}")]
    EdgeDensityTooLarge { a: f64, n: usize },
    #[error("not all nodes informed after {cap} rounds ({informed} of {n})")]
    RoundCapExceeded {
        cap: u64,
        n: usize,
        informed: usize,
        partial: Box<TrialResult>,
    },
    #[error("trial {index}: {source}")]
    Trial {
        index: u64,
        #[source]
        source: Box<EngineError>,
    },
    #[error("thread pool: {0}")]
    Pool(String),
}

fn join(errs: &[SpecError]) -> String {
    errs.iter()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// ceil(64 (log2 n + ln n)).
pub fn default_round_cap(n: usize) -> u64 {
    let x = n as f64;
    (64.0 * (x.log2() + x.ln())).ceil() as u64
}

fn check_inputs(spec: &ProtocolSpec, n: usize, policy: StoppingPolicy) -> Result<(), EngineError> {
    validate_spec(spec.clone()).map_err(EngineError::InvalidSpec)?;
    if n < 2 {
        return Err(EngineError::TooFewNodes(n));
    }
    if let Some(a) = spec.edge_density {
        if a > n as f64 {
            return Err(EngineError::EdgeDensityTooLarge { a, n });
        }
    }
    match policy {
        StoppingPolicy::RoundCap(0) => Err(EngineError::InvalidPolicy(
            "round cap must be at least 1".into(),
        )),
        StoppingPolicy::AgeLimit(_) if !spec.kind.has_push_component() => {
            Err(EngineError::InvalidPolicy(format!(
                "age limit needs a protocol that pushes, {} does not",
                spec.kind
            )))
        }
        _ => Ok(()),
    }
}

/// Runs one trial from a single informed node (node 0).
pub fn run_trial(
    spec: &ProtocolSpec,
    n: usize,
    policy: StoppingPolicy,
    seed: u64,
) -> Result<TrialResult, EngineError> {
    check_inputs(spec, n, policy)?;
    let mut scratch = RoundScratch::new(n);
    run_checked(spec, n, policy, seed, &mut scratch)
}

fn run_checked(
    spec: &ProtocolSpec,
    n: usize,
    policy: StoppingPolicy,
    seed: u64,
    scratch: &mut RoundScratch,
) -> Result<TrialResult, EngineError> {
    let cap = match policy {
        StoppingPolicy::RoundCap(c) => c,
        _ => default_round_cap(n),
    };
    let age_limit = match policy {
        StoppingPolicy::AgeLimit(l) => l,
        _ => u64::MAX,
    };
    let mut rng = TrialRng::seed_from_u64(seed);
    let mut state = SimState::new(n, 0);
    let mut trace = Vec::with_capacity(64);
    trace.push(1u32);
    while !state.all_informed() {
        if state.round >= cap {
            let partial = TrialResult {
                spreading_time: state.round,
                calls_placed: state.calls_placed,
                rumor_transmissions: state.rumor_transmissions,
                trace: Some(trace),
                seed,
            };
            return Err(EngineError::RoundCapExceeded {
                cap,
                n,
                informed: state.informed_count(),
                partial: Box::new(partial),
            });
        }
        let pushing = state.round < age_limit;
        let outcome = step(spec, &state, pushing, scratch, &mut rng);
        state.apply(&outcome);
        trace.push(state.informed_count() as u32);
    }
    Ok(TrialResult {
        spreading_time: state.round,
        calls_placed: state.calls_placed,
        rumor_transmissions: state.rumor_transmissions,
        trace: Some(trace),
        seed,
    })
}

/// Worker count: the environment override, else the request, else all cores.
pub fn resolve_parallelism(requested: Option<usize>) -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .or(requested.filter(|&t| t > 0))
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|p| p.get())
                .unwrap_or(1)
        })
}

/// Runs `trials` trials; trial `i` uses `derive_trial_seed(root_seed, i)`.
/// The output is in index order whatever the scheduling.
pub fn run_batch(
    spec: &ProtocolSpec,
    n: usize,
    trials: u64,
    root_seed: u64,
    policy: StoppingPolicy,
    parallelism: Option<usize>,
) -> Result<Vec<TrialResult>, EngineError> {
    run_batch_map(spec, n, trials, root_seed, policy, parallelism, |r| r)
}

/// As [`run_batch`], keeping only `extract(result)` of every trial.
pub fn run_batch_map<T, F>(
    spec: &ProtocolSpec,
    n: usize,
    trials: u64,
    root_seed: u64,
    policy: StoppingPolicy,
    parallelism: Option<usize>,
    extract: F,
) -> Result<Vec<T>, EngineError>
where
    T: Send,
    F: Fn(TrialResult) -> T + Sync,
{
    check_inputs(spec, n, policy)?;
    let one = |i: u64, scratch: &mut RoundScratch| {
        run_checked(spec, n, policy, derive_trial_seed(root_seed, i), scratch)
            .map(&extract)
            .map_err(|e| EngineError::Trial {
                index: i,
                source: Box::new(e),
            })
    };
    let threads = resolve_parallelism(parallelism);
    let results: Vec<Result<T, EngineError>> = if threads <= 1 {
        let mut scratch = RoundScratch::new(n);
        (0..trials).map(|i| one(i, &mut scratch)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| EngineError::Pool(e.to_string()))?;
        pool.install(|| {
            (0..trials)
                .into_par_iter()
                .map_init(|| RoundScratch::new(n), |scratch, i| one(i, scratch))
                .collect()
        })
    };
    results.into_iter().collect()
}

/// Rounds from the first time at least `from` nodes are informed until the
/// first time at least `to` are, read off a trace. `None` if `to` is never reached.
pub fn measure_first_passage(trace: &[u32], from: u32, to: u32) -> Option<u64> {
    let start = trace.iter().position(|&c| c >= from)?;
    let end = trace.iter().position(|&c| c >= to)?;
    Some(end.saturating_sub(start) as u64)
}

/// Age limit ceil(log3 n) + 3 ceil(log2 ln n) used for the message-complexity experiments.
pub fn push_pull_age_limit(n: usize) -> u64 {
    let x = n as f64;
    (x.ln() / 3f64.ln()).ceil() as u64 + 3 * x.ln().log2().ceil() as u64
}

/// True when `kind` can run in the given policy at all.
pub fn policy_supported(kind: ProtocolKind, policy: StoppingPolicy) -> bool {
    !matches!(policy, StoppingPolicy::AgeLimit(_)) || kind.has_push_component()
}
