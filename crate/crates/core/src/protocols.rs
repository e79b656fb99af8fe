//! One synchronous round of each protocol.
//!
//! Every round function reads the state as it was at the start of the round and
//! returns the set of nodes that learn the rumor; the engine applies it. The
//! classic protocols draw aggregated counts (how many calls land on the
//! uninformed set) and then place those calls uniformly, which has exactly the
//! same law as drawing every call separately.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::model::{CallDistribution, ProtocolKind, ProtocolSpec, RoundOutcome, SimState};
use crate::sampling::{bernoulli_subset, binomial, distinct_indices, uniform_target};

/// Reusable per-trial buffers so rounds do not allocate O(n) memory.
#[derive(Debug, Default)]
pub struct RoundScratch {
    stamp: Vec<u32>,
    epoch: u32,
    picks: Vec<usize>,
    degree_out: Vec<u32>,
    degree_in: Vec<u32>,
    choice: Vec<u32>,
    touch_stamp: Vec<u32>,
    touched: Vec<u32>,
    edges: Vec<u64>,
    table: OrderedCallTable,
    /// Number of times an R-protocol node wanted more distinct targets than exist.
    pub clamped_draws: u64,
}

impl RoundScratch {
    pub fn new(n: usize) -> Self {
        let mut s = Self::default();
        s.ensure(n);
        s
    }

    fn ensure(&mut self, n: usize) {
        if self.stamp.len() < n {
            self.stamp.resize(n, 0);
            self.degree_out.resize(n, 0);
            self.degree_in.resize(n, 0);
            self.choice.resize(n, 0);
            self.touch_stamp.resize(n, 0);
        }
    }

    fn next_epoch(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.touch_stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
    }

    /// First edge of informed-list position `i` this round resets its counters.
    fn touch(&mut self, i: usize) {
        if self.touch_stamp[i] != self.epoch {
            self.touch_stamp[i] = self.epoch;
            self.degree_out[i] = 0;
            self.degree_in[i] = 0;
            self.touched.push(i as u32);
        }
    }

    /// True the first time `v` is marked in the current epoch.
    #[inline]
    fn mark(&mut self, v: usize) -> bool {
        if self.stamp[v] == self.epoch {
            false
        } else {
            self.stamp[v] = self.epoch;
            true
        }
    }
}

fn target_pool(n: usize, include_self: bool) -> usize {
    if include_self {
        n
    } else {
        n - 1
    }
}

/// Places `hits` calls uniformly on the uninformed set and records first hits.
fn scatter_on_uninformed<R: Rng + ?Sized>(
    state: &SimState,
    hits: u64,
    scratch: &mut RoundScratch,
    newly: &mut Vec<u32>,
    rng: &mut R,
) {
    let unin = state.uninformed_nodes();
    for _ in 0..hits {
        let v = unin[rng.random_range(0..unin.len())];
        if scratch.mark(v as usize) {
            newly.push(v);
        }
    }
}

/// Push part of a round: counts calls placed and copies delivered, marks hits.
fn push_calls<R: Rng + ?Sized>(
    state: &SimState,
    success_prob: f64,
    include_self: bool,
    scratch: &mut RoundScratch,
    newly: &mut Vec<u32>,
    rng: &mut R,
) -> (u64, u64) {
    let k = state.informed_count() as u64;
    let u = state.uninformed_count() as f64;
    let pool = target_pool(state.n(), include_self) as f64;
    // each informed caller: fail, uninformed target, other informed target, or itself
    let q_unin = success_prob * u / pool;
    let q_other = success_prob * (k as f64 - 1.0) / pool;
    let to_unin = binomial(rng, k, q_unin);
    let to_other = if q_unin < 1.0 {
        binomial(rng, k - to_unin, (q_other / (1.0 - q_unin)).min(1.0))
    } else {
        0
    };
    scatter_on_uninformed(state, to_unin, scratch, newly, rng);
    (k, to_unin + to_other)
}

/// Pull part of a round: each uninformed node reaches an informed one independently.
fn pull_calls<R: Rng + ?Sized>(
    state: &SimState,
    success_prob: f64,
    include_self: bool,
    scratch: &mut RoundScratch,
    newly: &mut Vec<u32>,
    rng: &mut R,
) -> (u64, u64) {
    let unin = state.uninformed_nodes();
    let pool = target_pool(state.n(), include_self) as f64;
    let q = success_prob * state.informed_count() as f64 / pool;
    let mut delivered = 0;
    bernoulli_subset(rng, unin.len() as u64, q, |i| {
        delivered += 1;
        let v = unin[i as usize];
        if scratch.mark(v as usize) {
            newly.push(v);
        }
    });
    (unin.len() as u64, delivered)
}

pub fn round_push<R: Rng + ?Sized>(
    state: &SimState,
    success_prob: f64,
    include_self: bool,
    scratch: &mut RoundScratch,
    rng: &mut R,
) -> RoundOutcome {
    scratch.ensure(state.n());
    scratch.next_epoch();
    let mut newly = Vec::new();
    let (calls, transmissions) =
        push_calls(state, success_prob, include_self, scratch, &mut newly, rng);
    RoundOutcome {
        newly_informed: newly,
        calls,
        transmissions,
    }
}

/// Only uninformed nodes call; informed nodes would learn nothing by pulling.
pub fn round_pull<R: Rng + ?Sized>(
    state: &SimState,
    success_prob: f64,
    include_self: bool,
    scratch: &mut RoundScratch,
    rng: &mut R,
) -> RoundOutcome {
    scratch.ensure(state.n());
    scratch.next_epoch();
    let mut newly = Vec::new();
    let (calls, transmissions) =
        pull_calls(state, success_prob, include_self, scratch, &mut newly, rng);
    RoundOutcome {
        newly_informed: newly,
        calls,
        transmissions,
    }
}

pub fn round_push_pull<R: Rng + ?Sized>(
    state: &SimState,
    success_prob: f64,
    include_self: bool,
    scratch: &mut RoundScratch,
    rng: &mut R,
) -> RoundOutcome {
    scratch.ensure(state.n());
    scratch.next_epoch();
    let mut newly = Vec::new();
    let (push_calls_n, push_tx) =
        push_calls(state, success_prob, include_self, scratch, &mut newly, rng);
    let (pull_calls_n, pull_tx) =
        pull_calls(state, success_prob, include_self, scratch, &mut newly, rng);
    RoundOutcome {
        newly_informed: newly,
        calls: push_calls_n + pull_calls_n,
        transmissions: push_tx + pull_tx,
    }
}

/// Push over a freshly drawn G(n, a/n).
///
/// Only edges with an informed endpoint are drawn: the informed-by-uninformed
/// grid and the upper triangle of informed pairs, each by geometric skipping.
/// An informed node calls a uniform neighbour; when it has uninformed
/// neighbours, reservoir sampling keeps a uniform one of them.
pub fn round_dynamic_gnp_push<R: Rng + ?Sized>(
    state: &SimState,
    edge_density: f64,
    scratch: &mut RoundScratch,
    rng: &mut R,
) -> RoundOutcome {
    let n = state.n();
    scratch.ensure(n);
    scratch.next_epoch();
    let q = (edge_density / n as f64).min(1.0);
    let unin = state.uninformed_nodes();
    let (k, u) = (state.informed_count() as u64, unin.len() as u64);

    // degrees and choices are indexed by position in the informed list
    let mut edges = std::mem::take(&mut scratch.edges);
    edges.clear();
    scratch.touched.clear();
    bernoulli_subset(rng, k * u, q, |cell| edges.push(cell));
    for &cell in &edges {
        let (i, j) = ((cell / u) as usize, (cell % u) as u32);
        scratch.touch(i);
        scratch.degree_out[i] += 1;
        let d = scratch.degree_out[i];
        if d == 1 || rng.random_range(0..d) == 0 {
            scratch.choice[i] = j;
        }
    }

    if k > 1 {
        edges.clear();
        bernoulli_subset(rng, k * (k - 1) / 2, q, |idx| edges.push(idx));
        let (mut row, mut row_start, mut row_len) = (0u64, 0u64, k - 1);
        for &idx in &edges {
            while idx >= row_start + row_len {
                row_start += row_len;
                row += 1;
                row_len -= 1;
            }
            let j = row + 1 + (idx - row_start);
            for end in [row as usize, j as usize] {
                scratch.touch(end);
                scratch.degree_in[end] += 1;
            }
        }
    }
    scratch.edges = edges;

    let mut newly = Vec::new();
    for t in 0..scratch.touched.len() {
        let i = scratch.touched[t] as usize;
        let d_out = scratch.degree_out[i];
        let d_in = scratch.degree_in[i];
        if d_out > 0 && rng.random_range(0..d_out + d_in) < d_out {
            let v = unin[scratch.choice[i] as usize];
            if scratch.mark(v as usize) {
                newly.push(v);
            }
        }
    }
    // every node with a neighbour calls, and no graph edge is a self loop
    let calls = scratch.touched.len() as u64;
    RoundOutcome {
        newly_informed: newly,
        calls,
        transmissions: calls,
    }
}

/// Each informed node calls r distinct targets, r drawn afresh per node and round.
pub fn round_r_push<R: Rng + ?Sized>(
    state: &SimState,
    calls: &CallDistribution,
    include_self: bool,
    scratch: &mut RoundScratch,
    rng: &mut R,
) -> RoundOutcome {
    r_round(state, calls, include_self, false, scratch, rng)
}

/// Every node calls r distinct targets; pushes and pulls both deliver.
pub fn round_r_push_pull<R: Rng + ?Sized>(
    state: &SimState,
    calls: &CallDistribution,
    include_self: bool,
    scratch: &mut RoundScratch,
    rng: &mut R,
) -> RoundOutcome {
    r_round(state, calls, include_self, true, scratch, rng)
}

/// Uninformed nodes pull with r distinct calls each; informed nodes stay silent.
pub fn round_r_pull<R: Rng + ?Sized>(
    state: &SimState,
    calls: &CallDistribution,
    include_self: bool,
    scratch: &mut RoundScratch,
    rng: &mut R,
) -> RoundOutcome {
    scratch.ensure(state.n());
    scratch.next_epoch();
    let mut out = RoundOutcome::default();
    r_pulls(state, calls, include_self, scratch, &mut out, rng);
    out
}

fn draw_r<R: Rng + ?Sized>(
    calls: &CallDistribution,
    pool: usize,
    scratch: &mut RoundScratch,
    rng: &mut R,
) -> usize {
    let r = calls.quantile(rng.random::<f64>());
    if r > pool {
        if scratch.clamped_draws == 0 {
            log::warn!("call count {r} exceeds the {pool} available targets, clamping");
        }
        scratch.clamped_draws += 1;
        pool
    } else {
        r
    }
}

fn distinct_targets<R: Rng + ?Sized>(
    n: usize,
    caller: usize,
    r: usize,
    include_self: bool,
    picks: &mut Vec<usize>,
    rng: &mut R,
) {
    distinct_indices(rng, target_pool(n, include_self), r, picks);
    if !include_self {
        for t in picks.iter_mut() {
            if *t >= caller {
                *t += 1;
            }
        }
    }
}

fn r_round<R: Rng + ?Sized>(
    state: &SimState,
    calls: &CallDistribution,
    include_self: bool,
    with_pull: bool,
    scratch: &mut RoundScratch,
    rng: &mut R,
) -> RoundOutcome {
    let n = state.n();
    scratch.ensure(n);
    scratch.next_epoch();
    let pool = target_pool(n, include_self);
    let mut out = RoundOutcome::default();
    let mut picks = std::mem::take(&mut scratch.picks);
    for &y in state.informed_nodes() {
        let y = y as usize;
        let r = draw_r(calls, pool, scratch, rng);
        out.calls += r as u64;
        distinct_targets(n, y, r, include_self, &mut picks, rng);
        for &t in &picks {
            if t == y {
                continue;
            }
            out.transmissions += 1;
            if !state.is_informed(t) && scratch.mark(t) {
                out.newly_informed.push(t as u32);
            }
        }
    }
    scratch.picks = picks;
    if with_pull {
        r_pulls(state, calls, include_self, scratch, &mut out, rng);
    }
    out
}

fn r_pulls<R: Rng + ?Sized>(
    state: &SimState,
    calls: &CallDistribution,
    include_self: bool,
    scratch: &mut RoundScratch,
    out: &mut RoundOutcome,
    rng: &mut R,
) {
    let n = state.n();
    let pool = target_pool(n, include_self);
    let mut picks = std::mem::take(&mut scratch.picks);
    for &x in state.uninformed_nodes() {
        let x = x as usize;
        let r = draw_r(calls, pool, scratch, rng);
        out.calls += r as u64;
        distinct_targets(n, x, r, include_self, &mut picks, rng);
        let answered = picks.iter().filter(|&&t| state.is_informed(t)).count();
        out.transmissions += answered as u64;
        if answered > 0 && scratch.mark(x) {
            out.newly_informed.push(x as u32);
        }
    }
    scratch.picks = picks;
}

/// Calls of one round in the ordered-calls model.
///
/// `orders` is a uniformly random bijection from callers onto `0..callers.len()`;
/// every target answers only its incoming call of smallest order.
#[derive(Debug, Default, Clone)]
pub struct OrderedCallTable {
    pub callers: Vec<u32>,
    pub targets: Vec<u32>,
    pub orders: Vec<u32>,
    by_order: Vec<u32>,
}

impl OrderedCallTable {
    /// Draws orders first, then one uniform target per caller.
    pub fn draw<R: Rng + ?Sized>(
        &mut self,
        n: usize,
        callers: impl IntoIterator<Item = u32>,
        include_self: bool,
        rng: &mut R,
    ) {
        self.callers.clear();
        self.callers.extend(callers);
        let c = self.callers.len();
        self.by_order.clear();
        self.by_order.extend(0..c as u32);
        self.by_order.shuffle(rng);
        self.orders.clear();
        self.orders.resize(c, 0);
        for (ord, &idx) in self.by_order.iter().enumerate() {
            self.orders[idx as usize] = ord as u32;
        }
        self.targets.clear();
        for i in 0..c {
            let caller = self.callers[i] as usize;
            self.targets
                .push(uniform_target(rng, n, caller, include_self) as u32);
        }
    }

    pub fn len(&self) -> usize {
        self.callers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.callers.is_empty()
    }

    /// Indices of accepted calls, visited in increasing order.
    fn for_each_accepted(&self, scratch_stamp: &mut StampSet<'_>, mut visit: impl FnMut(usize)) {
        for &idx in &self.by_order {
            let t = self.targets[idx as usize] as usize;
            if scratch_stamp.insert(t) {
                visit(idx as usize);
            }
        }
    }

    /// For each caller, whether its call is the one its target answers.
    pub fn accepted(&self, n: usize) -> Vec<bool> {
        let mut stamp = vec![0u32; n];
        let mut set = StampSet {
            stamp: &mut stamp,
            epoch: 1,
        };
        let mut acc = vec![false; self.len()];
        self.for_each_accepted(&mut set, |i| acc[i] = true);
        acc
    }
}

struct StampSet<'a> {
    stamp: &'a mut [u32],
    epoch: u32,
}

impl StampSet<'_> {
    fn insert(&mut self, v: usize) -> bool {
        if self.stamp[v] == self.epoch {
            false
        } else {
            self.stamp[v] = self.epoch;
            true
        }
    }
}

/// Only uninformed nodes call; a caller learns the rumor when its call is the
/// one answered at an informed target.
pub fn round_single_call_pull<R: Rng + ?Sized>(
    state: &SimState,
    include_self: bool,
    scratch: &mut RoundScratch,
    rng: &mut R,
) -> RoundOutcome {
    single_call_round(state, include_self, false, scratch, rng)
}

/// All nodes call under one global random order; each node answers one call.
pub fn round_single_call_push_pull<R: Rng + ?Sized>(
    state: &SimState,
    include_self: bool,
    scratch: &mut RoundScratch,
    rng: &mut R,
) -> RoundOutcome {
    single_call_round(state, include_self, true, scratch, rng)
}

/// Single-call push-pull while the rumor is younger than `transition_time`, then single-call pull.
pub fn round_transition_push_pull<R: Rng + ?Sized>(
    state: &SimState,
    transition_time: u64,
    include_self: bool,
    scratch: &mut RoundScratch,
    rng: &mut R,
) -> RoundOutcome {
    single_call_round(
        state,
        include_self,
        state.round < transition_time,
        scratch,
        rng,
    )
}

fn single_call_round<R: Rng + ?Sized>(
    state: &SimState,
    include_self: bool,
    informed_call: bool,
    scratch: &mut RoundScratch,
    rng: &mut R,
) -> RoundOutcome {
    let n = state.n();
    scratch.ensure(n);
    scratch.next_epoch();
    let mut table = std::mem::take(&mut scratch.table);
    if informed_call {
        table.draw(n, 0..n as u32, include_self, rng);
    } else {
        table.draw(
            n,
            state.uninformed_nodes().iter().copied(),
            include_self,
            rng,
        );
    }

    let mut newly = Vec::new();
    let mut transmissions = 0;
    let epoch = scratch.epoch;
    // answered targets use the stamp array, newly informed nodes a second epoch
    let mut answered = StampSet {
        stamp: &mut scratch.stamp,
        epoch,
    };
    let mut learned = Vec::new();
    table.for_each_accepted(&mut answered, |idx| {
        let caller = table.callers[idx] as usize;
        let target = table.targets[idx] as usize;
        if caller == target {
            return;
        }
        match (state.is_informed(caller), state.is_informed(target)) {
            (true, false) => {
                transmissions += 1;
                learned.push(target as u32);
            }
            (false, true) => {
                transmissions += 1;
                learned.push(caller as u32);
            }
            (true, true) => transmissions += 1,
            (false, false) => {}
        }
    });
    // a node can learn both by push and by pull in the same round
    scratch.next_epoch();
    for v in learned {
        if scratch.mark(v as usize) {
            newly.push(v);
        }
    }
    let calls = table.len() as u64;
    scratch.table = table;
    RoundOutcome {
        newly_informed: newly,
        calls,
        transmissions,
    }
}

/// Runs one round of `spec`. With `pushing` false, informed nodes place no calls.
pub fn step<R: Rng + ?Sized>(
    spec: &ProtocolSpec,
    state: &SimState,
    pushing: bool,
    scratch: &mut RoundScratch,
    rng: &mut R,
) -> RoundOutcome {
    use ProtocolKind::*;
    let p = spec.success_prob;
    let own = spec.include_self;
    match spec.kind {
        Push if pushing => round_push(state, p, own, scratch, rng),
        Pull => round_pull(state, p, own, scratch, rng),
        PushPull if pushing => round_push_pull(state, p, own, scratch, rng),
        PushPull => round_pull(state, p, own, scratch, rng),
        DynamicGnpPush if pushing => round_dynamic_gnp_push(
            state,
            spec.edge_density.expect("validated spec"),
            scratch,
            rng,
        ),
        RPush if pushing => round_r_push(state, spec_calls(spec), own, scratch, rng),
        RPushPull if pushing => round_r_push_pull(state, spec_calls(spec), own, scratch, rng),
        RPushPull => round_r_pull(state, spec_calls(spec), own, scratch, rng),
        SingleCallPull => round_single_call_pull(state, own, scratch, rng),
        SingleCallPushPull if pushing => round_single_call_push_pull(state, own, scratch, rng),
        SingleCallPushPull => round_single_call_pull(state, own, scratch, rng),
        TransitionTimePushPull if pushing => {
            let t = spec.resolved_transition_time(state.n());
            round_transition_push_pull(state, t, own, scratch, rng)
        }
        TransitionTimePushPull => round_single_call_pull(state, own, scratch, rng),
        Push | DynamicGnpPush | RPush => RoundOutcome::default(),
    }
}

fn spec_calls(spec: &ProtocolSpec) -> &CallDistribution {
    spec.calls().expect("validated spec carries a call law")
}
