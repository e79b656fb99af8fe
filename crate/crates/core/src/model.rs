//! Protocol descriptions, per-trial state, seeds and result records.

use std::fmt;
use std::str::FromStr;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The protocol families the toolkit knows how to run and analyse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    Push,
    Pull,
    PushPull,
    DynamicGnpPush,
    RPush,
    RPushPull,
    SingleCallPull,
    SingleCallPushPull,
    TransitionTimePushPull,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 9] = [
        ProtocolKind::Push,
        ProtocolKind::Pull,
        ProtocolKind::PushPull,
        ProtocolKind::DynamicGnpPush,
        ProtocolKind::RPush,
        ProtocolKind::RPushPull,
        ProtocolKind::SingleCallPull,
        ProtocolKind::SingleCallPushPull,
        ProtocolKind::TransitionTimePushPull,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolKind::Push => "push",
            ProtocolKind::Pull => "pull",
            ProtocolKind::PushPull => "push-pull",
            ProtocolKind::DynamicGnpPush => "dynamic-gnp-push",
            ProtocolKind::RPush => "r-push",
            ProtocolKind::RPushPull => "r-push-pull",
            ProtocolKind::SingleCallPull => "single-call-pull",
            ProtocolKind::SingleCallPushPull => "single-call-push-pull",
            ProtocolKind::TransitionTimePushPull => "transition-time-push-pull",
        }
    }

    /// Whether informed nodes actively send the rumor, so that an age limit means something.
    pub fn has_push_component(self) -> bool {
        !matches!(self, ProtocolKind::Pull | ProtocolKind::SingleCallPull)
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProtocolKind {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        ProtocolKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str().replace('-', "") == norm)
            .ok_or_else(|| SpecError::UnknownProtocol(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("unknown protocol `{0}`")]
    UnknownProtocol(String),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> SpecError {
    SpecError::InvalidParameter {
        field,
        reason: reason.into(),
    }
}

/// A finite law over the number of calls a node places in one round.
///
/// `probs[r]` is the probability of placing exactly `r` calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
#[schemars(with = "Vec<f64>")]
pub struct CallDistribution {
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl CallDistribution {
    pub const SUM_TOLERANCE: f64 = 1e-12;

    pub fn new(probs: Vec<f64>) -> Result<Self, SpecError> {
        if probs.is_empty() {
            return Err(invalid("call_distribution", "empty support"));
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(invalid(
                "call_distribution",
                format!("probability {bad} outside [0,1]"),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(invalid(
                "call_distribution",
                format!("probabilities sum to {total}, expected 1"),
            ));
        }
        let mut probs = probs;
        while probs.len() > 1 && probs.last() == Some(&0.0) {
            probs.pop();
        }
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self { probs, cumulative })
    }

    /// Point mass at `r`.
    pub fn constant(r: usize) -> Self {
        let mut probs = vec![0.0; r + 1];
        probs[r] = 1.0;
        Self::new(probs).expect("point mass is a valid law")
    }

    /// Uniform law on `lo..=hi`.
    pub fn uniform(lo: usize, hi: usize) -> Result<Self, SpecError> {
        if lo > hi {
            return Err(invalid("call_distribution", "empty uniform range"));
        }
        let w = 1.0 / (hi - lo + 1) as f64;
        let mut probs = vec![0.0; hi + 1];
        for p in &mut probs[lo..=hi] {
            *p = w;
        }
        // the tail accumulates rounding, renormalise exactly
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Self::new(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, r: usize) -> f64 {
        self.probs.get(r).copied().unwrap_or(0.0)
    }

    pub fn max_support(&self) -> usize {
        self.probs.len() - 1
    }

    /// Smallest r with positive mass.
    pub fn min_support(&self) -> usize {
        self.probs
            .iter()
            .position(|&p| p > 0.0)
            .expect("a normalised law has positive mass somewhere")
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(r, p)| r as f64 * p)
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.probs
            .iter()
            .enumerate()
            .map(|(r, p)| (r as f64 - m).powi(2) * p)
            .sum()
    }

    /// Mean of `min(R, cap)`.
    pub fn clamped_mean(&self, cap: usize) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(r, p)| r.min(cap) as f64 * p)
            .sum()
    }

    /// Inverse-CDF draw from a uniform in [0,1).
    pub fn quantile(&self, u: f64) -> usize {
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or_else(|| self.last_positive())
    }

    fn last_positive(&self) -> usize {
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    /// Parses `"0.3,0.4,0.3"` (probabilities of 0,1,2,...), `"uniform:0..2"` or `"const:3"`.
    pub fn parse(text: &str) -> Result<Self, SpecError> {
        let text = text.trim();
        if let Some(rest) = text.strip_prefix("uniform:") {
            let (lo, hi) = rest
                .split_once("..")
                .ok_or_else(|| invalid("call_distribution", "expected uniform:LO..HI"))?;
            let lo = parse_usize(lo)?;
            let hi = parse_usize(hi.trim_start_matches('='))?;
            return Self::uniform(lo, hi);
        }
        if let Some(rest) = text.strip_prefix("const:") {
            return Ok(Self::constant(parse_usize(rest)?));
        }
        let probs = text
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| invalid("call_distribution", format!("`{t}`: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(probs)
    }
}

fn parse_usize(t: &str) -> Result<usize, SpecError> {
    t.trim()
        .parse()
        .map_err(|e| invalid("call_distribution", format!("`{t}`: {e}")))
}

impl TryFrom<Vec<f64>> for CallDistribution {
    type Error = SpecError;

    fn try_from(probs: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(probs)
    }
}

impl From<CallDistribution> for Vec<f64> {
    fn from(d: CallDistribution) -> Self {
        d.probs
    }
}

/// Transition time value meaning "never stop pushing".
pub const NEVER: u64 = u64::MAX;

/// A protocol together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub kind: ProtocolKind,
    #[serde(default = "one")]
    pub success_prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_distribution: Option<CallDistribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_density: Option<f64>,
    /// `None` selects the size-dependent default, `NEVER` disables the switch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition_time: Option<u64>,
    #[serde(default = "yes")]
    pub include_self: bool,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

impl ProtocolSpec {
    fn bare(kind: ProtocolKind) -> Self {
        Self {
            kind,
            success_prob: 1.0,
            call_distribution: None,
            edge_density: None,
            transition_time: None,
            include_self: true,
        }
    }

    pub fn push() -> Self {
        Self::bare(ProtocolKind::Push)
    }

    pub fn pull() -> Self {
        Self::bare(ProtocolKind::Pull)
    }

    pub fn push_pull() -> Self {
        Self::bare(ProtocolKind::PushPull)
    }

    pub fn dynamic_gnp_push(edge_density: f64) -> Self {
        Self {
            edge_density: Some(edge_density),
            ..Self::bare(ProtocolKind::DynamicGnpPush)
        }
    }

    pub fn r_push(calls: CallDistribution) -> Self {
        Self {
            call_distribution: Some(calls),
            ..Self::bare(ProtocolKind::RPush)
        }
    }

    pub fn r_push_pull(calls: CallDistribution) -> Self {
        Self {
            call_distribution: Some(calls),
            ..Self::bare(ProtocolKind::RPushPull)
        }
    }

    pub fn single_call_pull() -> Self {
        Self::bare(ProtocolKind::SingleCallPull)
    }

    pub fn single_call_push_pull() -> Self {
        Self::bare(ProtocolKind::SingleCallPushPull)
    }

    pub fn transition_time_push_pull(transition_time: Option<u64>) -> Self {
        Self {
            transition_time,
            ..Self::bare(ProtocolKind::TransitionTimePushPull)
        }
    }

    pub fn with_success_prob(mut self, p: f64) -> Self {
        self.success_prob = p;
        self
    }

    pub fn with_include_self(mut self, include_self: bool) -> Self {
        self.include_self = include_self;
        self
    }

    /// The call law, for R-protocols.
    pub fn calls(&self) -> Option<&CallDistribution> {
        self.call_distribution.as_ref()
    }

    /// Transition time resolved for `n` nodes.
    pub fn resolved_transition_time(&self, n: usize) -> u64 {
        self.transition_time
            .unwrap_or_else(|| default_transition_time(n))
    }

    /// Short human-readable label, also used as the CSV protocol column.
    pub fn label(&self) -> String {
        let mut s = self.kind.as_str().to_string();
        if self.success_prob != 1.0 {
            s.push_str(&format!("(p={})", self.success_prob));
        }
        if let Some(a) = self.edge_density {
            s.push_str(&format!("(a={a})"));
        }
        if let Some(d) = &self.call_distribution {
            // four significant digits keep labels short; the spec itself keeps full precision
            let parts: Vec<String> = d
                .probs()
                .iter()
                .map(|p| {
                    format!("{:.4}", p)
                        .trim_end_matches('0')
                        .trim_end_matches('.')
                        .to_string()
                })
                .collect();
            s.push_str(&format!("(R=[{}])", parts.join(";")));
        }
        if let Some(t) = self.transition_time {
            if t == NEVER {
                s.push_str("(t=inf)");
            } else {
                s.push_str(&format!("(t={t})"));
            }
        }
        if !self.include_self {
            s.push_str("(no-self)");
        }
        s
    }
}

/// ceil(log_{3-2/e} n).
pub fn default_transition_time(n: usize) -> u64 {
    let base = 3.0 - 2.0 / std::f64::consts::E;
    ((n as f64).ln() / base.ln()).ceil().max(0.0) as u64
}

/// Checks every invariant and returns the spec unchanged, or all violations.
pub fn validate_spec(spec: ProtocolSpec) -> Result<ProtocolSpec, Vec<SpecError>> {
    use ProtocolKind::*;
    let mut errs = Vec::new();
    let p = spec.success_prob;
    if !(p > 0.0 && p <= 1.0) {
        errs.push(invalid("success_prob", format!("{p} not in (0,1]")));
    } else if p != 1.0 && !matches!(spec.kind, Push | Pull | PushPull) {
        errs.push(invalid(
            "success_prob",
            format!("call failures are not modelled for {}", spec.kind),
        ));
    }

    match (spec.kind, spec.edge_density) {
        (DynamicGnpPush, None) => errs.push(invalid("edge_density", "required")),
        (DynamicGnpPush, Some(a)) if !(a.is_finite() && a > 0.0) => {
            errs.push(invalid("edge_density", format!("{a} must be positive")))
        }
        (DynamicGnpPush, Some(_)) => {}
        (kind, Some(_)) => errs.push(invalid("edge_density", format!("not used by {kind}"))),
        (_, None) => {}
    }

    match (spec.kind, &spec.call_distribution) {
        (RPush | RPushPull, None) => errs.push(invalid("call_distribution", "required")),
        (RPush | RPushPull, Some(d)) => {
            // re-check in case the value was built by hand rather than through `new`
            if let Err(e) = CallDistribution::new(d.probs().to_vec()) {
                errs.push(e);
            }
        }
        (kind, Some(_)) => errs.push(invalid("call_distribution", format!("not used by {kind}"))),
        (_, None) => {}
    }

    if spec.transition_time.is_some() && spec.kind != TransitionTimePushPull {
        errs.push(invalid(
            "transition_time",
            format!("not used by {}", spec.kind),
        ));
    }

    if errs.is_empty() {
        Ok(spec)
    } else {
        Err(errs)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trial seed. For a fixed root seed the map from index to seed is a bijection.
pub fn derive_trial_seed(root_seed: u64, trial_index: u64) -> u64 {
    splitmix64(root_seed ^ splitmix64(trial_index ^ 0x6A09_E667_F3BC_C908))
}

/// Node-level round state of one trial.
///
/// Keeps an index list of informed and of uninformed nodes next to the flags,
/// so that protocols can sample among either set in O(1).
#[derive(Debug, Clone)]
pub struct SimState {
    n: usize,
    informed: Vec<bool>,
    informed_nodes: Vec<u32>,
    uninformed_nodes: Vec<u32>,
    slot: Vec<u32>,
    pub round: u64,
    pub calls_placed: u64,
    pub rumor_transmissions: u64,
}

impl SimState {
    /// A state on `n` nodes where exactly `initial` is informed.
    pub fn new(n: usize, initial: usize) -> Self {
        Self::with_informed(n, &[initial])
    }

    /// A state where the given node set is informed.
    pub fn with_informed(n: usize, informed: &[usize]) -> Self {
        assert!(n >= 2, "need at least two nodes");
        assert!(n <= u32::MAX as usize, "node ids are 32 bit");
        let mut s = Self {
            n,
            informed: vec![false; n],
            informed_nodes: Vec::with_capacity(n),
            uninformed_nodes: (0..n as u32).collect(),
            slot: (0..n as u32).collect(),
            round: 0,
            calls_placed: 0,
            rumor_transmissions: 0,
        };
        for &v in informed {
            s.inform(v);
        }
        assert!(
            s.informed_count() >= 1,
            "at least one node must be informed"
        );
        s
    }

    /// The first `k` node ids informed; any k-subset is equivalent by symmetry.
    pub fn with_first_informed(n: usize, k: usize) -> Self {
        let ids: Vec<usize> = (0..k).collect();
        Self::with_informed(n, &ids)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn informed_count(&self) -> usize {
        self.informed_nodes.len()
    }

    pub fn uninformed_count(&self) -> usize {
        self.uninformed_nodes.len()
    }

    pub fn is_informed(&self, v: usize) -> bool {
        self.informed[v]
    }

    pub fn flags(&self) -> &[bool] {
        &self.informed
    }

    pub fn informed_nodes(&self) -> &[u32] {
        &self.informed_nodes
    }

    pub fn uninformed_nodes(&self) -> &[u32] {
        &self.uninformed_nodes
    }

    pub fn all_informed(&self) -> bool {
        self.uninformed_nodes.is_empty()
    }

    /// Marks `v` informed. Returns false if it already was.
    pub fn inform(&mut self, v: usize) -> bool {
        if self.informed[v] {
            return false;
        }
        self.informed[v] = true;
        let pos = self.slot[v] as usize;
        let last = *self.uninformed_nodes.last().expect("v is uninformed");
        self.uninformed_nodes.swap_remove(pos);
        if last as usize != v {
            self.slot[last as usize] = pos as u32;
        }
        self.informed_nodes.push(v as u32);
        true
    }

    /// Applies a round outcome and advances the round counter.
    pub fn apply(&mut self, outcome: &RoundOutcome) {
        for &v in &outcome.newly_informed {
            let fresh = self.inform(v as usize);
            debug_assert!(fresh, "round outcomes list each node once");
        }
        self.round += 1;
        self.calls_placed += outcome.calls;
        self.rumor_transmissions += outcome.transmissions;
    }
}

/// What one round did, before it is applied to the state.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoundOutcome {
    /// Distinct, previously uninformed nodes that learn the rumor this round.
    pub newly_informed: Vec<u32>,
    pub calls: u64,
    pub transmissions: u64,
}

impl RoundOutcome {
    pub fn newly_informed_count(&self) -> usize {
        self.newly_informed.len()
    }

    /// Per-node event flags, indexed by node id.
    pub fn events(&self, n: usize) -> Vec<bool> {
        let mut ev = vec![false; n];
        for &v in &self.newly_informed {
            ev[v as usize] = true;
        }
        ev
    }
}

/// Outcome of one complete trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialResult {
    pub spreading_time: u64,
    pub calls_placed: u64,
    pub rumor_transmissions: u64,
    /// Informed count after each round, starting with the initial state.
    pub trace: Option<Vec<u32>>,
    pub seed: u64,
}

/// Leading terms of a spreading-time formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub growth_base: f64,
    pub shrink: ShrinkTerm,
    pub value: f64,
}

/// The second-order term: either `coefficient * ln n` or `log_base(ln n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShrinkTerm {
    Coefficient(f64),
    LogLogBase(f64),
}

impl Prediction {
    pub fn new(growth_base: f64, shrink: ShrinkTerm, n: usize) -> Self {
        let ln_n = (n as f64).ln();
        let shrink_value = match shrink {
            ShrinkTerm::Coefficient(c) => c * ln_n,
            ShrinkTerm::LogLogBase(b) => ln_n.ln() / b.ln(),
        };
        Self {
            growth_base,
            shrink,
            value: ln_n / growth_base.ln() + shrink_value,
        }
    }

    pub fn shrink_coefficient(&self) -> Option<f64> {
        match self.shrink {
            ShrinkTerm::Coefficient(c) => Some(c),
            ShrinkTerm::LogLogBase(_) => None,
        }
    }

    pub fn shrink_loglog_base(&self) -> Option<f64> {
        match self.shrink {
            ShrinkTerm::LogLogBase(b) => Some(b),
            ShrinkTerm::Coefficient(_) => None,
        }
    }
}
