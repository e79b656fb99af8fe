//! Closed-form success probabilities, leading-order spreading-time predictions,
//! regime constants and the phase-target calculus.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CallDistribution, Prediction, ProtocolKind, ProtocolSpec, ShrinkTerm};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticError {
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("degenerate target: {0}")]
    DegenerateTarget(String),
    #[error("target sequence does not decrease: g = {g} is not below {bound}")]
    NonDecreasingSequence { g: f64, bound: f64 },
    #[error("invalid regime: {0}")]
    InvalidRegime(String),
    #[error("only an asymptotic formula is known for {0}")]
    NotExact(ProtocolKind),
}

type Result<T> = std::result::Result<T, AnalyticError>;

/// A per-node informing probability, flagged when only its leading order is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessProbability {
    pub value: f64,
    /// Scale of the neglected error term, present only for asymptotic values.
    pub error_scale: Option<f64>,
}

impl SuccessProbability {
    fn exact(value: f64) -> Self {
        Self {
            value,
            error_scale: None,
        }
    }

    pub fn is_asymptotic(&self) -> bool {
        self.error_scale.is_some()
    }
}

fn pool(n: usize, include_self: bool) -> f64 {
    if include_self {
        n as f64
    } else {
        n as f64 - 1.0
    }
}

/// 1 - (1 - x)^k without cancellation for small x.
fn one_minus_pow(x: f64, k: f64) -> f64 {
    -(k * (-x).ln_1p()).exp_m1()
}

/// Probability that `r` distinct draws from `pool` items avoid a marked set of `marked` items.
fn avoid_prob(pool: f64, marked: f64, r: usize) -> f64 {
    (0..r)
        .map(|i| ((pool - marked - i as f64) / (pool - i as f64)).max(0.0))
        .product()
}

fn r_pull_miss(calls: &CallDistribution, pool_size: f64, k: f64) -> f64 {
    let cap = pool_size as usize;
    calls
        .probs()
        .iter()
        .enumerate()
        .map(|(r, p)| p * avoid_prob(pool_size, k, r.min(cap)))
        .sum()
}

/// p_k: the probability that a given uninformed node learns the rumor in a
/// round that starts with `k` informed nodes out of `n`.
pub fn success_probability(spec: &ProtocolSpec, n: usize, k: usize) -> Result<SuccessProbability> {
    use ProtocolKind::*;
    if k == 0 || k >= n {
        return Err(AnalyticError::OutOfRange(format!(
            "need 1 <= k < n, got k = {k}, n = {n}"
        )));
    }
    let p = spec.success_prob;
    let big_n = pool(n, spec.include_self);
    let (nf, kf) = (n as f64, k as f64);
    let value = match spec.kind {
        Push => one_minus_pow(p / big_n, kf),
        Pull => p * kf / big_n,
        PushPull => 1.0 - (1.0 - p * kf / big_n) * (1.0 - p / big_n).powf(kf),
        RPush => {
            let mean = calls_of(spec)?.clamped_mean(big_n as usize);
            one_minus_pow(mean / big_n, kf)
        }
        RPushPull => {
            let calls = calls_of(spec)?;
            let mean = calls.clamped_mean(big_n as usize);
            let pushed_miss = (1.0 - mean / big_n).powf(kf);
            1.0 - pushed_miss * r_pull_miss(calls, big_n, kf)
        }
        SingleCallPull => {
            let u = nf - kf;
            kf / u * one_minus_pow(1.0 / big_n, u)
        }
        SingleCallPushPull => {
            let f = kf / nf;
            let h = 1.0 - 1.0 / E;
            return Ok(SuccessProbability {
                value: 2.0 * f * h - f * f * h * h,
                error_scale: Some(f / nf),
            });
        }
        DynamicGnpPush => {
            let a = spec.edge_density.ok_or_else(|| missing("edge_density"))?;
            let gamma = -(-a).exp_m1();
            return Ok(SuccessProbability {
                value: one_minus_pow(gamma / nf, kf),
                error_scale: Some((kf + 1.0) / (nf * nf)),
            });
        }
        TransitionTimePushPull => {
            return Err(AnalyticError::Unsupported(
                "the transition-time protocol is not memoryless, p_k depends on the round".into(),
            ))
        }
    };
    Ok(SuccessProbability::exact(value))
}

fn missing(field: &str) -> AnalyticError {
    AnalyticError::InvalidRegime(format!("spec lacks {field}"))
}

fn calls_of(spec: &ProtocolSpec) -> Result<&CallDistribution> {
    spec.calls().ok_or_else(|| missing("call_distribution"))
}

/// The leading terms of the expected spreading time.
pub fn predict(spec: &ProtocolSpec, n: usize) -> Result<Prediction> {
    use ProtocolKind::*;
    use ShrinkTerm::*;
    if n < 2 {
        return Err(AnalyticError::OutOfRange(format!("n = {n}")));
    }
    let p = spec.success_prob;
    let h = 1.0 - 1.0 / E;
    let (base, shrink) = match spec.kind {
        Push => (1.0 + p, Coefficient(1.0 / p)),
        Pull if p == 1.0 => (2.0, LogLogBase(2.0)),
        Pull => (1.0 + p, Coefficient(1.0 / -(-p).ln_1p())),
        PushPull if p == 1.0 => (3.0, LogLogBase(2.0)),
        PushPull => (1.0 + 2.0 * p, Coefficient(1.0 / (p - (-p).ln_1p()))),
        DynamicGnpPush => {
            let a = spec.edge_density.ok_or_else(|| missing("edge_density"))?;
            let gamma = -(-a).exp_m1();
            (1.0 + gamma, Coefficient(1.0 / gamma))
        }
        RPush => {
            let mean = positive_mean(spec)?;
            (1.0 + mean, Coefficient(1.0 / mean))
        }
        RPushPull => {
            let calls = calls_of(spec)?;
            let mean = positive_mean(spec)?;
            let ell = calls.min_support();
            if ell == 0 {
                (
                    1.0 + 2.0 * mean,
                    Coefficient(1.0 / (mean - calls.prob(0).ln())),
                )
            } else {
                (1.0 + 2.0 * mean, LogLogBase(1.0 + ell as f64))
            }
        }
        SingleCallPull => (1.0 + h, LogLogBase(2.0)),
        SingleCallPushPull => (1.0 + 2.0 * h, Coefficient(0.5)),
        TransitionTimePushPull => (1.0 + 2.0 * h, LogLogBase(2.0)),
    };
    Ok(Prediction::new(base, shrink, n))
}

fn positive_mean(spec: &ProtocolSpec) -> Result<f64> {
    let mean = calls_of(spec)?.mean();
    if mean > 0.0 {
        Ok(mean)
    } else {
        Err(AnalyticError::Unsupported(
            "nodes never call, the rumor cannot spread".into(),
        ))
    }
}

/// Constants of the exponential growth conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthConstants {
    pub gamma: f64,
    /// Growth conditions are claimed for k < f n.
    pub f: f64,
    /// Quadratic correction of the lower bound on p_k.
    pub a: f64,
    /// Quadratic correction of the upper bound on p_k.
    pub a_lower: f64,
    pub b: f64,
    pub c: f64,
}

impl GrowthConstants {
    /// Conditions with f chosen as the midpoint of the admissible range 1/(2(a+1)).
    pub fn new(gamma: f64, a: f64, b: f64, c: f64) -> Self {
        Self {
            gamma,
            f: 1.0 / (4.0 * (a + 1.0)),
            a,
            a_lower: 0.0,
            b,
            c,
        }
    }

    /// Fraction of n the growth ledger runs to: below the range where targets increase.
    pub fn ledger_fraction(&self) -> f64 {
        self.f.min(1.0 / (4.0 * (self.a + 1.0)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ShrinkRegime {
    /// The uninformed count shrinks by about e^{-rho} per round, for u <= g n.
    Exponential { rho: f64, g: f64, a: f64, c: f64 },
    /// The uninformed fraction is raised to the power ell per round, for u <= g n.
    DoubleExponential { ell: f64, g: f64, a: f64, c: f64 },
}

impl ShrinkRegime {
    pub fn g(&self) -> f64 {
        match *self {
            ShrinkRegime::Exponential { g, .. } | ShrinkRegime::DoubleExponential { g, .. } => g,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    pub growth: GrowthConstants,
    pub shrink: ShrinkRegime,
}

impl RegimeParams {
    pub fn gamma(&self) -> f64 {
        self.growth.gamma
    }

    pub fn rho(&self) -> Option<f64> {
        match self.shrink {
            ShrinkRegime::Exponential { rho, .. } => Some(rho),
            ShrinkRegime::DoubleExponential { .. } => None,
        }
    }

    pub fn ell(&self) -> Option<f64> {
        match self.shrink {
            ShrinkRegime::DoubleExponential { ell, .. } => Some(ell),
            ShrinkRegime::Exponential { .. } => None,
        }
    }

    /// Checks the side conditions every regime definition imposes.
    pub fn check(&self) -> Result<()> {
        let gr = &self.growth;
        if !(gr.gamma > 0.0) {
            return Err(AnalyticError::InvalidRegime(format!(
                "gamma = {}",
                gr.gamma
            )));
        }
        if !(gr.f > 0.0 && gr.f < 1.0) || gr.a * gr.f >= 1.0 {
            return Err(AnalyticError::InvalidRegime(format!(
                "growth needs 0 < f < 1 and a f < 1, got f = {}, a = {}",
                gr.f, gr.a
            )));
        }
        match self.shrink {
            ShrinkRegime::Exponential { rho, g, a, .. } => {
                if !(rho > 0.0) || !(g > 0.0 && g < 1.0) || (-rho).exp() + a * g >= 1.0 {
                    return Err(AnalyticError::InvalidRegime(format!(
                        "exponential shrinking needs e^-rho + a g < 1, got rho = {rho}, a = {a}, g = {g}"
                    )));
                }
            }
            ShrinkRegime::DoubleExponential { ell, g, a, .. } => {
                if !(ell > 1.0) || !(g > 0.0 && g <= 1.0) || a * g.powf(ell - 1.0) >= 1.0 {
                    return Err(AnalyticError::InvalidRegime(format!(
                        "double exponential shrinking needs ell > 1 and a g^(ell-1) < 1, got ell = {ell}, a = {a}, g = {g}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Module default for the start fraction of double exponential shrinking.
pub const DOUBLE_EXP_G: f64 = 0.25;

/// Default covariance constant where the paper only states an O(.) bound.
pub const DEFAULT_COVARIANCE_C: f64 = 1.0;

fn exponential(rho: f64, a: f64, g: f64, c: f64) -> ShrinkRegime {
    // halve g until the side condition holds; the conditions stay valid on a smaller range
    let mut g = g;
    while (-rho).exp() + a * g >= 1.0 && g > 1e-6 {
        g /= 2.0;
    }
    ShrinkRegime::Exponential { rho, g, a, c }
}

fn double_exponential(ell: f64, a: f64, c: f64) -> ShrinkRegime {
    ShrinkRegime::DoubleExponential {
        ell,
        g: DOUBLE_EXP_G,
        a,
        c,
    }
}

/// Regime constants of `spec`, as established in the analysis of each protocol.
/// Where only an O(1) is known the module defaults are used and logged.
pub fn classify_regimes(spec: &ProtocolSpec) -> Result<RegimeParams> {
    use ProtocolKind::*;
    let p = spec.success_prob;
    let h = 1.0 - 1.0 / E;
    let growth = |gamma: f64, f: f64, a: f64, a_lower: f64, c: f64| GrowthConstants {
        gamma,
        f,
        a,
        a_lower,
        b: 0.0,
        c,
    };
    let params = match spec.kind {
        Push => RegimeParams {
            growth: growth(p, 0.5, 1.0, 0.0, 0.0),
            shrink: exponential(p, 2.0 * p * (-p).exp(), 0.5, 0.0),
        },
        Pull if p == 1.0 => RegimeParams {
            growth: growth(1.0, 0.5, 0.0, 0.0, 0.0),
            shrink: double_exponential(2.0, 1.0, 0.0),
        },
        Pull => RegimeParams {
            growth: growth(p, 0.5, 0.0, 0.0, 0.0),
            shrink: exponential(-(-p).ln_1p(), p, 0.5, 0.0),
        },
        PushPull if p == 1.0 => RegimeParams {
            growth: growth(2.0, 0.5, 0.75, 0.0, 0.0),
            shrink: double_exponential(2.0, 1.0, 0.0),
        },
        PushPull => RegimeParams {
            growth: growth(2.0 * p, 0.5, 0.75 * p, 0.0, 0.0),
            shrink: exponential(p - (-p).ln_1p(), 3.0 * p * (-p).exp(), 0.5, 0.0),
        },
        DynamicGnpPush => {
            let a = spec.edge_density.ok_or_else(|| missing("edge_density"))?;
            let gamma = -(-a).exp_m1();
            log::info!("dynamic graph: covariance constant defaults to {DEFAULT_COVARIANCE_C}");
            RegimeParams {
                growth: growth(gamma, 0.5, gamma / 2.0, 0.0, DEFAULT_COVARIANCE_C),
                shrink: exponential(
                    gamma,
                    2.0 * gamma * (-gamma).exp(),
                    0.5,
                    DEFAULT_COVARIANCE_C,
                ),
            }
        }
        RPush => {
            let calls = calls_of(spec)?;
            let mean = positive_mean(spec)?;
            let second = calls.variance() + mean * mean;
            let f = 0.5f64.min(1.0 / mean);
            RegimeParams {
                growth: growth(mean, f, mean / 2.0, 0.0, second),
                shrink: exponential(mean, 2.0 * mean * (-mean).exp(), f, second),
            }
        }
        RPushPull => {
            let calls = calls_of(spec)?;
            let mean = positive_mean(spec)?;
            let second = calls.variance() + mean * mean;
            let gamma = 2.0 * mean;
            // p_k >= 2E k/n - C k^2/n^2 with C collecting both quadratic corrections
            let a = (2.0 * second + mean * mean / 2.0) / gamma;
            let f = 0.5f64.min(1.0 / mean).min(0.5 / a);
            log::info!("r-push-pull: growth correction a = {a}, f = {f}");
            let ell = calls.min_support();
            let shrink = if ell == 0 {
                let p0 = calls.prob(0);
                let g = 0.5f64.min(1.0 / mean);
                let a = (-mean).exp() * (2.0 * mean * p0 + (1.0 - p0) * (1.0 + 2.0 * mean * g));
                exponential(mean - p0.ln(), a, g, second)
            } else {
                double_exponential(1.0 + ell as f64, 1.0, second)
            };
            RegimeParams {
                growth: growth(gamma, f, a, 0.0, second),
                shrink,
            }
        }
        SingleCallPull => RegimeParams {
            growth: growth(h, 0.125, 4.0 / h, 2.0, DEFAULT_COVARIANCE_C),
            shrink: double_exponential(2.0, 1.5, DEFAULT_COVARIANCE_C),
        },
        SingleCallPushPull => RegimeParams {
            growth: growth(2.0 * h, 0.5, h / 2.0, 0.0, DEFAULT_COVARIANCE_C),
            shrink: exponential(2.0, 2.0 * h / E + 0.5 * h * h, 0.5, DEFAULT_COVARIANCE_C),
        },
        TransitionTimePushPull => RegimeParams {
            growth: growth(2.0 * h, 0.5, h / 2.0, 0.0, DEFAULT_COVARIANCE_C),
            shrink: double_exponential(2.0, 1.5, DEFAULT_COVARIANCE_C),
        },
    };
    params.check()?;
    Ok(params)
}

/// Target sequence of one regime with the failure probabilities of its phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseLedger {
    /// k_j, u_j or eps_j for j = 0..=J.
    pub targets: Vec<f64>,
    /// Failure probability of phase j, j = 0..J.
    pub failure_probs: Vec<f64>,
    /// Number of phases J.
    pub phases: usize,
    pub sum_q: f64,
    pub a_const: f64,
    pub b_const: f64,
}

impl PhaseLedger {
    fn new(targets: Vec<f64>, failure_probs: Vec<f64>, a_const: f64, b_const: f64) -> Self {
        let sum_q = failure_probs.iter().sum();
        Self {
            phases: targets.len() - 1,
            targets,
            failure_probs,
            sum_q,
            a_const,
            b_const,
        }
    }

    /// min_j k_j / (1+gamma)^j, the constant in the geometric lower bound on growth targets.
    pub fn growth_alpha(&self, gamma: f64) -> f64 {
        self.targets
            .iter()
            .enumerate()
            .map(|(j, k)| k / (1.0 + gamma).powi(j as i32))
            .fold(f64::INFINITY, f64::min)
    }
}

pub const DEFAULT_GROWTH_B: f64 = 0.75;
pub const DEFAULT_SHRINK_B: f64 = 0.25;
const MAX_PHASES: usize = 100_000;

fn growth_parts(gr: &GrowthConstants, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let b_term = if gr.b == 0.0 { 0.0 } else { gr.b / nf.ln() };
    ((gr.a + 1.0) / nf, b_term)
}

/// E_0(k) = gamma k (1 - (a+1)k/n - b/ln n) - A k^B.
pub fn growth_target_increment(
    gr: &GrowthConstants,
    n: usize,
    a_const: f64,
    b_const: f64,
    k: f64,
) -> f64 {
    let (lin, b_term) = growth_parts(gr, n);
    gr.gamma * k * (1.0 - lin * k - b_term) - a_const * k.powf(b_const)
}

/// q(k) = (gamma + c)/A^2 k^(1-2B).
pub fn growth_failure_bound(gr: &GrowthConstants, a_const: f64, b_const: f64, k: f64) -> f64 {
    (gr.gamma + gr.c) / (a_const * a_const) * k.powf(1.0 - 2.0 * b_const)
}

/// Phase ledger of the exponential growth regime, from one informed node up to
/// `ledger_fraction() * n`.
pub fn growth_phase_ledger(
    regime: &RegimeParams,
    n: usize,
    a_const: f64,
    b_const: f64,
) -> Result<PhaseLedger> {
    growth_ledger(&regime.growth, n, a_const, b_const)
}

/// As [`growth_phase_ledger`], for growth constants alone.
pub fn growth_ledger(
    gr: &GrowthConstants,
    n: usize,
    a_const: f64,
    b_const: f64,
) -> Result<PhaseLedger> {
    if !(b_const > 0.5 && b_const < 1.0) {
        return Err(AnalyticError::OutOfRange(format!(
            "B = {b_const} not in (0.5, 1)"
        )));
    }
    if !(a_const > 0.0) {
        return Err(AnalyticError::OutOfRange(format!(
            "A = {a_const} must be positive"
        )));
    }
    if !(gr.gamma > 0.0) {
        return Err(AnalyticError::InvalidRegime(format!(
            "gamma = {}",
            gr.gamma
        )));
    }
    let e0 = |k: f64| growth_target_increment(gr, n, a_const, b_const, k);
    if e0(1.0) <= 0.0 {
        return Err(AnalyticError::DegenerateTarget(format!(
            "E_0(1) = {} <= 0 for A = {a_const}",
            e0(1.0)
        )));
    }
    let stop = gr.ledger_fraction() * n as f64;
    let mut targets = vec![1.0];
    let mut k = 1.0;
    while k < stop {
        let step = e0(k);
        if step <= 0.0 {
            break;
        }
        k += step;
        targets.push(k);
        if targets.len() > MAX_PHASES {
            return Err(AnalyticError::DegenerateTarget(
                "growth targets stall".into(),
            ));
        }
    }
    let q1 = growth_failure_bound(gr, a_const, b_const, 1.0);
    let cap = 1.0 / (1.0 + 1.0 / q1);
    let failure_probs = targets[..targets.len() - 1]
        .iter()
        .map(|&k| growth_failure_bound(gr, a_const, b_const, k).min(cap))
        .collect();
    Ok(PhaseLedger::new(targets, failure_probs, a_const, b_const))
}

/// Largest A for which E_0 is positive at 1 and increasing on [1, f n], found by
/// bisection. Returns half of it to stay clear of the degenerate boundary.
pub fn default_growth_a(gr: &GrowthConstants, n: usize, b_const: f64) -> f64 {
    let stop = gr.ledger_fraction() * n as f64;
    let (lin, b_term) = growth_parts(gr, n);
    let grid: Vec<f64> = {
        let steps = 2000;
        let top = stop.max(1.0);
        (0..=steps)
            .map(|i| top.powf(i as f64 / steps as f64))
            .collect()
    };
    let passes = |a_const: f64| {
        let start = gr.gamma * (1.0 - lin - b_term) - a_const > 0.0;
        start
            && grid.iter().all(|&k| {
                gr.gamma
                    - 2.0 * gr.gamma * lin * k
                    - gr.gamma * b_term
                    - a_const * b_const * k.powf(b_const - 1.0)
                    > 0.0
            })
    };
    let (mut lo, mut hi) = (0.0, gr.gamma * 2.0 / b_const);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if passes(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo / 2.0
}

/// Phase ledger of the exponential shrinking regime: u_0 = g n, u_{j+1} = E_0(u_j)
/// until one node is left or ln(n)/rho phases have passed.
pub fn shrink_phase_ledger_exp(
    regime: &RegimeParams,
    n: usize,
    a_const: f64,
    b_const: f64,
) -> Result<PhaseLedger> {
    let ShrinkRegime::Exponential { rho, g, a, c } = regime.shrink else {
        return Err(AnalyticError::InvalidRegime(
            "not an exponential shrinking regime".into(),
        ));
    };
    if !(b_const > 0.0 && b_const < 0.5) {
        return Err(AnalyticError::OutOfRange(format!(
            "B = {b_const} not in (0, 0.5)"
        )));
    }
    if !(a_const > 0.0) {
        return Err(AnalyticError::OutOfRange(format!(
            "A = {a_const} must be positive"
        )));
    }
    let nf = n as f64;
    let decay = (-rho).exp();
    let u0 = g * nf;
    // E_0(u)/u is convex in u, so its maximum over [1, g n] sits at an end point
    let ratio = |u: f64| decay + a * u / nf + a_const * u.powf(-b_const);
    let worst = ratio(1.0).max(ratio(u0.max(1.0)));
    if worst >= 1.0 {
        return Err(AnalyticError::DegenerateTarget(format!(
            "E_0(u) >= u somewhere in [1, g n] (ratio {worst})"
        )));
    }
    let e0 = |u: f64| u * ratio(u);
    let q = |u: f64| ((1.0 + a) * decay + c) / (a_const * a_const) * u.powf(-(1.0 - 2.0 * b_const));
    let max_phases = (nf.ln() / rho).floor() as usize;
    let mut targets = vec![u0];
    let mut u = u0;
    while u > 1.0 && targets.len() <= max_phases {
        u = e0(u);
        targets.push(u);
    }
    let failure_probs = targets[1..].iter().map(|&u| q(u)).collect();
    Ok(PhaseLedger::new(targets, failure_probs, a_const, b_const))
}

/// Half the largest A with e^{-rho} + a g + A < 1.
pub fn default_shrink_a(regime: &RegimeParams) -> Result<f64> {
    match regime.shrink {
        ShrinkRegime::Exponential { rho, g, a, .. } => {
            let room = 1.0 - (-rho).exp() - a * g;
            if room > 0.0 {
                Ok(room / 2.0)
            } else {
                Err(AnalyticError::InvalidRegime("no room for A".into()))
            }
        }
        ShrinkRegime::DoubleExponential { .. } => Err(AnalyticError::InvalidRegime(
            "double exponential regimes have no A".into(),
        )),
    }
}

/// eps_j = (2a)^((ell^j - 1)/(ell - 1)) g^(ell^j).
pub fn double_exp_closed_form(a: f64, ell: f64, g: f64, j: u32) -> f64 {
    let lj = ell.powi(j as i32);
    (((lj - 1.0) / (ell - 1.0)) * (2.0 * a).ln() + lj * g.ln()).exp()
}

/// A default alpha just below the admissible bound 1/(2 ell).
pub fn default_double_exp_alpha(ell: f64) -> f64 {
    0.9 / (2.0 * ell)
}

/// Phase ledger of the double exponential regime: eps_0 = g, eps_{j+1} = 2 a eps_j^ell
/// until eps_J <= n^-alpha. Every phase fails with the same probability q.
pub fn shrink_phase_ledger_double(
    regime: &RegimeParams,
    n: usize,
    alpha: f64,
) -> Result<PhaseLedger> {
    let ShrinkRegime::DoubleExponential { ell, g, a, c } = regime.shrink else {
        return Err(AnalyticError::InvalidRegime(
            "not a double exponential shrinking regime".into(),
        ));
    };
    double_ledger(ell, g, a, c, n, alpha)
}

pub fn double_ledger(
    ell: f64,
    g: f64,
    a: f64,
    c: f64,
    n: usize,
    alpha: f64,
) -> Result<PhaseLedger> {
    if !(ell > 1.0) {
        return Err(AnalyticError::InvalidRegime(format!(
            "ell = {ell} must exceed 1"
        )));
    }
    let bound = (2.0 * a).powf(-1.0 / (ell - 1.0));
    if !(g < bound) {
        return Err(AnalyticError::NonDecreasingSequence { g, bound });
    }
    if !(alpha > 0.0 && alpha < 1.0 / (2.0 * ell)) {
        return Err(AnalyticError::OutOfRange(format!(
            "alpha = {alpha} not in (0, 1/(2 ell))"
        )));
    }
    let nf = n as f64;
    let floor = nf.powf(-alpha);
    let q = (1.0 + c) / (a * a) * nf.powf(2.0 * alpha * ell - 1.0);
    let mut targets = vec![g];
    let mut eps = g;
    while eps > floor {
        eps = 2.0 * a * eps.powf(ell);
        targets.push(eps);
        if targets.len() > MAX_PHASES {
            return Err(AnalyticError::DegenerateTarget("eps stalls".into()));
        }
    }
    let phases = targets.len() - 1;
    Ok(PhaseLedger::new(targets, vec![q; phases], 0.0, 0.0))
}

/// Bound on the expected rounds to go from `from` to `to` informed nodes when
/// every uninformed node learns the rumor with probability at least `p_min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConnectBound {
    pub expected: f64,
    ratio: f64,
    p_min: f64,
}

impl ConnectBound {
    /// Bound on Pr[more than r rounds are needed].
    pub fn tail(&self, r: u32) -> f64 {
        self.ratio * (1.0 - self.p_min).powi(r as i32)
    }
}

pub fn connect_bound(n: usize, from: usize, to: usize, p_min: f64) -> Result<ConnectBound> {
    if !(0 < from && from < to && to < n) {
        return Err(AnalyticError::OutOfRange(format!(
            "need 0 < from < to < n, got {from}, {to}, {n}"
        )));
    }
    if !(p_min > 0.0 && p_min <= 1.0) {
        return Err(AnalyticError::OutOfRange(format!("p_min = {p_min}")));
    }
    let ratio = (n - from) as f64 / (n - to) as f64;
    Ok(ConnectBound {
        expected: ratio / p_min,
        ratio,
        p_min,
    })
}

/// Result of checking both growth inequalities for every k < f n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthCheck {
    pub checked_up_to: usize,
    /// First k where p_k falls below the lower envelope.
    pub upper_violation: Option<usize>,
    /// First k where p_k exceeds the upper envelope.
    pub lower_violation: Option<usize>,
}

impl GrowthCheck {
    pub fn passed(&self) -> bool {
        self.upper_violation.is_none() && self.lower_violation.is_none()
    }
}

/// Checks gamma k/n (1 - a k/n - b/ln n) <= p_k <= gamma k/n (1 + a' k/n + b/ln n).
pub fn verify_growth_conditions(
    spec: &ProtocolSpec,
    n: usize,
    regime: &RegimeParams,
) -> Result<GrowthCheck> {
    let gr = &regime.growth;
    let nf = n as f64;
    let b_term = if gr.b == 0.0 { 0.0 } else { gr.b / nf.ln() };
    let top = ((gr.f * nf).ceil() as usize).min(n);
    let mut report = GrowthCheck {
        checked_up_to: top.saturating_sub(1),
        upper_violation: None,
        lower_violation: None,
    };
    for k in 1..top {
        if (k as f64) >= gr.f * nf {
            break;
        }
        let pk = success_probability(spec, n, k)?;
        if pk.is_asymptotic() {
            return Err(AnalyticError::NotExact(spec.kind));
        }
        let x = k as f64 / nf;
        let lower = gr.gamma * x * (1.0 - gr.a * x - b_term);
        let upper = gr.gamma * x * (1.0 + gr.a_lower * x + b_term);
        let slack = 1e-12 * pk.value.abs().max(f64::MIN_POSITIVE);
        if report.upper_violation.is_none() && pk.value < lower - slack {
            report.upper_violation = Some(k);
        }
        if report.lower_violation.is_none() && pk.value > upper + slack {
            report.lower_violation = Some(k);
        }
        if !report.passed() {
            break;
        }
    }
    Ok(report)
}
